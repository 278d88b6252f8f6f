//! Rewrites a CSG tree into a union of products over (possibly complemented)
//! primitive literals: `Difference(A, B) -> A and not B`, De Morgan for
//! complements, intersection distributed over union. Products containing a
//! literal and its complement are dropped, duplicate literals and duplicate
//! products are removed.

use super::types::{CsgNode, Literal, Product};

/// Total function: any tree maps to a (possibly empty) list of products.
pub fn normalize(root: &CsgNode) -> Vec<Product> {
    let mut products = norm(root, false);
    for p in &mut products {
        p.literals.sort();
    }
    // Union is idempotent; keep first occurrence order.
    let mut seen = std::collections::HashSet::new();
    products.retain(|p| seen.insert(p.clone()));
    products
}

fn norm(node: &CsgNode, complemented: bool) -> Vec<Product> {
    match (node, complemented) {
        (CsgNode::Leaf(id), c) => vec![Product {
            literals: vec![Literal {
                prim: *id,
                complemented: c,
            }],
        }],
        (CsgNode::Union(cs), false) => cs.iter().flat_map(|c| norm(c, false)).collect(),
        // not (A or B) = not A and not B
        (CsgNode::Union(cs), true) => {
            intersect_all(cs.iter().map(|c| norm(c, true)).collect())
        }
        (CsgNode::Intersection(cs), false) => {
            intersect_all(cs.iter().map(|c| norm(c, false)).collect())
        }
        // not (A and B) = not A or not B
        (CsgNode::Intersection(cs), true) => {
            cs.iter().flat_map(|c| norm(c, true)).collect()
        }
        (CsgNode::Difference(a, b), false) => {
            intersect_all(vec![norm(a, false), norm(b, true)])
        }
        // not (A - B) = not A or B
        (CsgNode::Difference(a, b), true) => {
            let mut out = norm(a, true);
            out.extend(norm(b, false));
            out
        }
    }
}

/// Distributes intersection over the unions of each child: the cross product
/// of the children's product lists, merging literals.
fn intersect_all(children: Vec<Vec<Product>>) -> Vec<Product> {
    let mut acc = vec![Product {
        literals: Vec::new(),
    }];
    for child in children {
        let mut next = Vec::new();
        for base in &acc {
            for p in &child {
                if let Some(merged) = merge(base, p) {
                    next.push(merged);
                }
            }
        }
        acc = next;
    }
    // An intersection with zero children denotes the universe; that never
    // arises from parsed trees, but guard against the empty-literal product.
    acc.retain(|p| !p.literals.is_empty());
    acc
}

/// Merges two products; `None` when the result contains `P and not P`.
fn merge(a: &Product, b: &Product) -> Option<Product> {
    let mut literals = a.literals.clone();
    for lit in &b.literals {
        if let Some(existing) = literals.iter().find(|l| l.prim == lit.prim) {
            if existing.complemented != lit.complemented {
                return None;
            }
        } else {
            literals.push(*lit);
        }
    }
    Some(Product { literals })
}
