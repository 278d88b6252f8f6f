//! CSG expression tree and primitive descriptions.

use glam::{DMat3, DMat4, DVec3};

use super::params::{ParamExpr, ParamTable};

/// Extrinsic placement of a primitive. Composes to `M = T * Rz * Ry * Rx * S`
/// with every matrix entry a differentiable function of the parameters.
#[derive(Debug, Clone)]
pub struct Transform {
    pub translation: [ParamExpr; 3],
    /// Euler XYZ angles in radians.
    pub rotation: [ParamExpr; 3],
    pub uniform_scale: ParamExpr,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            translation: [
                ParamExpr::constant(0.0),
                ParamExpr::constant(0.0),
                ParamExpr::constant(0.0),
            ],
            rotation: [
                ParamExpr::constant(0.0),
                ParamExpr::constant(0.0),
                ParamExpr::constant(0.0),
            ],
            uniform_scale: ParamExpr::constant(1.0),
        }
    }

    pub fn eval(&self, table: &ParamTable) -> EvaluatedTransform {
        let t = DVec3::new(
            self.translation[0].eval(table),
            self.translation[1].eval(table),
            self.translation[2].eval(table),
        );
        let angles = [
            self.rotation[0].eval(table),
            self.rotation[1].eval(table),
            self.rotation[2].eval(table),
        ];
        let s = self.uniform_scale.eval(table);
        EvaluatedTransform::new(t, angles, s)
    }

    /// World matrix `T * Rz * Ry * Rx * S` as a 4x4.
    pub fn matrix(&self, table: &ParamTable) -> DMat4 {
        let e = self.eval(table);
        let r = e.rotation;
        let s = e.scale;
        DMat4::from_cols_array_2d(&[
            [r.col(0).x * s, r.col(0).y * s, r.col(0).z * s, 0.0],
            [r.col(1).x * s, r.col(1).y * s, r.col(1).z * s, 0.0],
            [r.col(2).x * s, r.col(2).y * s, r.col(2).z * s, 0.0],
            [e.translation.x, e.translation.y, e.translation.z, 1.0],
        ])
    }
}

fn rot_x(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::new(1.0, 0.0, 0.0),
        DVec3::new(0.0, c, s),
        DVec3::new(0.0, -s, c),
    )
}

fn rot_y(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::new(c, 0.0, -s),
        DVec3::new(0.0, 1.0, 0.0),
        DVec3::new(s, 0.0, c),
    )
}

fn rot_z(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::new(c, s, 0.0),
        DVec3::new(-s, c, 0.0),
        DVec3::new(0.0, 0.0, 1.0),
    )
}

fn drot_x(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::ZERO,
        DVec3::new(0.0, -s, c),
        DVec3::new(0.0, -c, -s),
    )
}

fn drot_y(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::new(-s, 0.0, -c),
        DVec3::ZERO,
        DVec3::new(c, 0.0, -s),
    )
}

fn drot_z(a: f64) -> DMat3 {
    let (s, c) = a.sin_cos();
    DMat3::from_cols(
        DVec3::new(-s, c, 0.0),
        DVec3::new(-c, -s, 0.0),
        DVec3::ZERO,
    )
}

/// Numeric transform snapshot with the rotation Jacobians needed by the
/// backward pass.
#[derive(Debug, Clone, Copy)]
pub struct EvaluatedTransform {
    pub translation: DVec3,
    pub rotation: DMat3,
    /// dR/d(angle_i) for Euler XYZ angles, i = 0,1,2.
    pub rotation_grads: [DMat3; 3],
    pub scale: f64,
}

impl EvaluatedTransform {
    pub fn new(translation: DVec3, angles: [f64; 3], scale: f64) -> Self {
        let rx = rot_x(angles[0]);
        let ry = rot_y(angles[1]);
        let rz = rot_z(angles[2]);
        let rotation = rz * ry * rx;
        let rotation_grads = [
            rz * ry * drot_x(angles[0]),
            rz * drot_y(angles[1]) * rx,
            drot_z(angles[2]) * ry * rx,
        ];
        EvaluatedTransform {
            translation,
            rotation,
            rotation_grads,
            scale,
        }
    }

    pub fn point(&self, p: DVec3) -> DVec3 {
        self.rotation * (self.scale * p) + self.translation
    }

    pub fn normal(&self, n: DVec3) -> DVec3 {
        self.rotation * n
    }
}

/// One cubic segment of an extrusion profile. The segment starts at the
/// previous segment's endpoint (the loop start for the first one); the last
/// segment of a loop closes back to the start.
#[derive(Debug, Clone)]
pub struct BezierSegment {
    pub c1: [ParamExpr; 2],
    pub c2: [ParamExpr; 2],
    /// `None` marks the closing segment whose endpoint is the loop start.
    pub end: Option<[ParamExpr; 2]>,
}

/// Closed loop of cubic Bezier segments. Consecutive segments share endpoint
/// control points structurally, so the loop cannot come apart under any
/// parameter values.
#[derive(Debug, Clone)]
pub struct BezierLoop {
    pub start: [ParamExpr; 2],
    pub segments: Vec<BezierSegment>,
}

impl BezierLoop {
    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Control points of segment `i` as evaluated 2D points (p0, p1, p2, p3).
    pub fn control_points(&self, i: usize, table: &ParamTable) -> [[f64; 2]; 4] {
        let eval2 = |e: &[ParamExpr; 2]| [e[0].eval(table), e[1].eval(table)];
        let p0 = if i == 0 {
            eval2(&self.start)
        } else {
            match &self.segments[i - 1].end {
                Some(e) => eval2(e),
                None => eval2(&self.start),
            }
        };
        let seg = &self.segments[i];
        let p3 = match &seg.end {
            Some(e) => eval2(e),
            None => eval2(&self.start),
        };
        [p0, eval2(&seg.c1), eval2(&seg.c2), p3]
    }

    /// Expressions of segment `i`'s control points, for the backward pass.
    pub fn control_exprs(&self, i: usize) -> [&[ParamExpr; 2]; 4] {
        let p0 = if i == 0 {
            &self.start
        } else {
            match &self.segments[i - 1].end {
                Some(e) => e,
                None => &self.start,
            }
        };
        let seg = &self.segments[i];
        let p3 = match &seg.end {
            Some(e) => e,
            None => &self.start,
        };
        [p0, &seg.c1, &seg.c2, p3]
    }
}

#[derive(Debug, Clone)]
pub enum PrimitiveKind {
    Sphere {
        radius: ParamExpr,
    },
    Cylinder {
        r_top: ParamExpr,
        r_bottom: ParamExpr,
        height: ParamExpr,
    },
    Box {
        width: ParamExpr,
        height: ParamExpr,
        depth: ParamExpr,
    },
    Extrude {
        profile: BezierLoop,
        depth: ParamExpr,
        samples_per_curve: usize,
    },
}

impl PrimitiveKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            PrimitiveKind::Sphere { .. } => "sphere",
            PrimitiveKind::Cylinder { .. } => "cylinder",
            PrimitiveKind::Box { .. } => "box",
            PrimitiveKind::Extrude { .. } => "extrude",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub transform: Transform,
    pub color: [f64; 3],
    pub id: usize,
}

/// Boolean expression tree over primitive leaves (stored by id).
#[derive(Debug, Clone, PartialEq)]
pub enum CsgNode {
    Leaf(usize),
    Union(Vec<CsgNode>),
    Intersection(Vec<CsgNode>),
    Difference(Box<CsgNode>, Box<CsgNode>),
}

impl CsgNode {
    /// Membership semantics of the tree given per-primitive membership.
    pub fn contains(&self, inside: &dyn Fn(usize) -> bool) -> bool {
        match self {
            CsgNode::Leaf(id) => inside(*id),
            CsgNode::Union(cs) => cs.iter().any(|c| c.contains(inside)),
            CsgNode::Intersection(cs) => {
                !cs.is_empty() && cs.iter().all(|c| c.contains(inside))
            }
            CsgNode::Difference(a, b) => a.contains(inside) && !b.contains(inside),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<usize>) {
        match self {
            CsgNode::Leaf(id) => out.push(*id),
            CsgNode::Union(cs) | CsgNode::Intersection(cs) => {
                for c in cs {
                    c.collect_leaves(out);
                }
            }
            CsgNode::Difference(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
        }
    }
}

/// One literal of a normalized product: a primitive, possibly complemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Literal {
    pub prim: usize,
    pub complemented: bool,
}

/// Intersection of literals. A normalized scene is a union of products.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Product {
    pub literals: Vec<Literal>,
}

impl Product {
    pub fn contains_prim(&self, prim: usize) -> bool {
        self.literals.iter().any(|l| l.prim == prim)
    }
}
