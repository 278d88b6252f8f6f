//! Scene model: parameter table, primitive specifications, the CSG tree, and
//! its normalized sum-of-products form.

pub mod normalize;
pub mod params;
pub mod parse;
pub mod print;
pub mod types;

pub use normalize::normalize;
pub use params::{softplus, softplus_inverse, softplus_prime};
pub use params::{ParamEntry, ParamError, ParamExpr, ParamTable};
pub use parse::{palette_color, parse_scene, ParseError};
pub use print::print_scene;
pub use types::{
    BezierLoop, BezierSegment, CsgNode, EvaluatedTransform, Literal, PrimitiveKind,
    PrimitiveSpec, Product, Transform,
};

/// A parsed scene: parameters, primitives, the expression tree, and its
/// normalized form. `products` is derived from `root` at construction and the
/// tree is immutable afterwards, so the two stay consistent.
#[derive(Debug, Clone)]
pub struct Scene {
    pub params: ParamTable,
    pub primitives: Vec<PrimitiveSpec>,
    pub root: CsgNode,
    pub products: Vec<Product>,
}

impl Scene {
    pub fn new(params: ParamTable, primitives: Vec<PrimitiveSpec>, root: CsgNode) -> Self {
        debug_assert!(root.leaves().iter().all(|&id| id < primitives.len()));
        let products = normalize(&root);
        Scene {
            params,
            primitives,
            root,
            products,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse_scene(text)
    }

    pub fn to_source(&self) -> String {
        print_scene(self)
    }

    /// True when `point` lies inside the CSG solid, with per-primitive
    /// membership supplied by the caller. Used by property tests to compare
    /// the tree against its normalized products.
    pub fn products_contain(&self, inside: &dyn Fn(usize) -> bool) -> bool {
        self.products.iter().any(|p| {
            p.literals
                .iter()
                .all(|l| inside(l.prim) != l.complemented)
        })
    }
}
