//! Named scalar parameters (the optimization variables) and the affine
//! expressions that bind primitive dimensions and transforms to them.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    Unknown(String),
    #[error("duplicate parameter `{0}`")]
    Duplicate(String),
    #[error("parameter `{0}` is positivity-flagged but its initial value {1} is not above the bound")]
    NonPositiveInit(String, f64),
}

/// Numerically safe softplus, `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus: the logistic sigmoid.
pub fn softplus_prime(x: f64) -> f64 {
    if x > 30.0 {
        1.0
    } else if x < -30.0 {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// Inverse of softplus, `ln(e^y - 1)`; valid for y > 0. One Newton step
/// makes `softplus(softplus_inverse(y)) == y` bit-exact in practice, which
/// keeps scene printing idempotent for `positive` parameters.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        return y;
    }
    let x = y.exp_m1().ln();
    let x = x - (softplus(x) - y) / softplus_prime(x);
    if softplus(x) == y {
        return x;
    }
    // The fixed point can sit between two floats; pick the neighbor that maps
    // onto y exactly if one does.
    for candidate in [next_f64(x, 1), next_f64(x, -1)] {
        if softplus(candidate) == y {
            return candidate;
        }
    }
    x
}

fn next_f64(x: f64, dir: i64) -> f64 {
    f64::from_bits((x.to_bits() as i64 + dir) as u64)
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    /// Raw value, the quantity the optimizer steps. When `positive` is set
    /// the exposed value read by expressions is `bound + softplus(raw)`.
    pub value: f64,
    pub lower_bound: Option<f64>,
    pub positive: bool,
}

/// Ordered table of named scalar parameters with one adjoint slot each.
#[derive(Debug, Clone, Default)]
pub struct ParamTable {
    entries: Vec<ParamEntry>,
    adjoints: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ParamTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. `init` is the exposed initial value; for
    /// positivity-flagged entries the stored raw value is the softplus
    /// preimage so that the exposed value equals `init`.
    pub fn define(
        &mut self,
        name: &str,
        init: f64,
        lower_bound: Option<f64>,
        positive: bool,
    ) -> Result<usize, ParamError> {
        if self.index.contains_key(name) {
            return Err(ParamError::Duplicate(name.to_string()));
        }
        let raw = if positive {
            let base = lower_bound.unwrap_or(0.0);
            if init <= base {
                return Err(ParamError::NonPositiveInit(name.to_string(), init));
            }
            softplus_inverse(init - base)
        } else {
            init
        };
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: raw,
            lower_bound,
            positive,
        });
        self.adjoints.push(0.0);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.entries[id].name
    }

    /// Raw value as stepped by the optimizer.
    pub fn raw(&self, id: usize) -> f64 {
        self.entries[id].value
    }

    pub fn set_raw(&mut self, id: usize, value: f64) {
        self.entries[id].value = value;
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn set_raw_values(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.entries.len());
        for (e, v) in self.entries.iter_mut().zip(values) {
            e.value = *v;
        }
    }

    /// Value seen by expressions: softplus-reparameterized when flagged.
    pub fn exposed(&self, id: usize) -> f64 {
        let e = &self.entries[id];
        if e.positive {
            e.lower_bound.unwrap_or(0.0) + softplus(e.value)
        } else {
            e.value
        }
    }

    /// d(exposed)/d(raw) for the chain rule into adjoints.
    pub fn exposed_grad(&self, id: usize) -> f64 {
        let e = &self.entries[id];
        if e.positive {
            softplus_prime(e.value)
        } else {
            1.0
        }
    }

    pub fn adjoints(&self) -> &[f64] {
        &self.adjoints
    }

    pub fn adjoint(&self, id: usize) -> f64 {
        self.adjoints[id]
    }

    /// Accumulates dL/d(raw) into the adjoint slot; never overwrites.
    pub fn accumulate(&mut self, id: usize, grad: f64) {
        self.adjoints[id] += grad;
    }

    pub fn clear_adjoints(&mut self) {
        for a in &mut self.adjoints {
            *a = 0.0;
        }
    }
}

/// Affine combination of parameters: `constant + sum coeff_i * param_i`.
///
/// Expressions store resolved table indices; evaluation reads exposed values
/// and the backward pass distributes coefficients to the referenced entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl ParamExpr {
    pub fn constant(value: f64) -> Self {
        ParamExpr {
            constant: value,
            terms: Vec::new(),
        }
    }

    pub fn param(id: usize) -> Self {
        ParamExpr {
            constant: 0.0,
            terms: vec![(id, 1.0)],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(mut self, s: f64) -> Self {
        self.constant *= s;
        for t in &mut self.terms {
            t.1 *= s;
        }
        self
    }

    pub fn add(mut self, other: &ParamExpr) -> Self {
        self.constant += other.constant;
        for (id, c) in &other.terms {
            self.add_term(*id, *c);
        }
        self
    }

    fn add_term(&mut self, id: usize, coeff: f64) {
        for t in &mut self.terms {
            if t.0 == id {
                t.1 += coeff;
                return;
            }
        }
        self.terms.push((id, coeff));
    }

    pub fn eval(&self, table: &ParamTable) -> f64 {
        let mut v = self.constant;
        for (id, c) in &self.terms {
            v += c * table.exposed(*id);
        }
        v
    }

    /// Accumulates `grad` (dL/d expr) into the adjoints of referenced params.
    pub fn backward(&self, table: &mut ParamTable, grad: f64) {
        for (id, c) in &self.terms {
            let g = c * table.exposed_grad(*id) * grad;
            table.accumulate(*id, g);
        }
    }

    /// True when any referenced parameter matches `id`.
    pub fn depends_on(&self, id: usize) -> bool {
        self.terms.iter().any(|(i, _)| *i == id)
    }
}
