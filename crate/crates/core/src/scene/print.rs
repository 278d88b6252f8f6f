//! Canonical scene printer. `print_scene` is the inverse of
//! [`parse_scene`](super::parse::parse_scene) up to canonical formatting:
//! printing a freshly parsed scene and reparsing yields the same scene, and a
//! second print yields byte-identical text.

use super::params::{ParamExpr, ParamTable};
use super::parse::palette_color;
use super::types::{CsgNode, PrimitiveKind, Transform};
use super::Scene;

fn num(v: f64) -> String {
    // f64 Display is shortest-round-trip, so parse(print(v)) == v.
    format!("{v}")
}

fn expr(e: &ParamExpr, table: &ParamTable) -> String {
    let mut terms = e.terms.clone();
    terms.sort_by_key(|t| t.0);
    let mut pieces: Vec<(f64, Option<usize>)> =
        terms.iter().map(|&(id, c)| (c, Some(id))).collect();
    if e.constant != 0.0 || pieces.is_empty() {
        pieces.push((e.constant, None));
    }
    let mut out = String::new();
    for (i, (c, id)) in pieces.iter().enumerate() {
        let neg = *c < 0.0;
        if i == 0 {
            if neg {
                out.push('-');
            }
        } else {
            out.push_str(if neg { " - " } else { " + " });
        }
        let mag = c.abs();
        match id {
            Some(id) => {
                if mag == 1.0 {
                    out.push_str(table.name(*id));
                } else {
                    out.push_str(&num(mag));
                    out.push('*');
                    out.push_str(table.name(*id));
                }
            }
            None => out.push_str(&num(mag)),
        }
    }
    out
}

fn is_const(e: &ParamExpr, v: f64) -> bool {
    e.is_constant() && e.constant == v
}

fn modifiers(t: &Transform, color: &[f64; 3], id: usize, table: &ParamTable) -> String {
    let mut out = String::new();
    if !t.translation.iter().all(|e| is_const(e, 0.0)) {
        out.push_str(&format!(
            "translate({}, {}, {}) ",
            expr(&t.translation[0], table),
            expr(&t.translation[1], table),
            expr(&t.translation[2], table),
        ));
    }
    if !t.rotation.iter().all(|e| is_const(e, 0.0)) {
        out.push_str(&format!(
            "rotate({}, {}, {}) ",
            expr(&t.rotation[0], table),
            expr(&t.rotation[1], table),
            expr(&t.rotation[2], table),
        ));
    }
    if !is_const(&t.uniform_scale, 1.0) {
        out.push_str(&format!("scale({}) ", expr(&t.uniform_scale, table)));
    }
    if *color != palette_color(id) {
        out.push_str(&format!(
            "color({}, {}, {}) ",
            num(color[0]),
            num(color[1]),
            num(color[2]),
        ));
    }
    out
}

fn primitive(scene: &Scene, id: usize, indent: usize, out: &mut String) {
    let p = &scene.primitives[id];
    let t = &scene.params;
    let pad = "  ".repeat(indent);
    out.push_str(&pad);
    out.push_str(&modifiers(&p.transform, &p.color, p.id, t));
    match &p.kind {
        PrimitiveKind::Sphere { radius } => {
            out.push_str(&format!("sphere(r = {});\n", expr(radius, t)));
        }
        PrimitiveKind::Cylinder { r_top, r_bottom, height } => {
            out.push_str(&format!(
                "cylinder(rt = {}, rb = {}, h = {});\n",
                expr(r_top, t),
                expr(r_bottom, t),
                expr(height, t),
            ));
        }
        PrimitiveKind::Box { width, height, depth } => {
            out.push_str(&format!(
                "box(w = {}, h = {}, d = {});\n",
                expr(width, t),
                expr(height, t),
                expr(depth, t),
            ));
        }
        PrimitiveKind::Extrude { profile, depth, samples_per_curve } => {
            if *samples_per_curve == 15 {
                out.push_str(&format!("extrude(depth = {}) {{\n", expr(depth, t)));
            } else {
                out.push_str(&format!(
                    "extrude(depth = {}, samples = {}) {{\n",
                    expr(depth, t),
                    samples_per_curve,
                ));
            }
            let inner = "  ".repeat(indent + 1);
            out.push_str(&format!(
                "{inner}start({}, {});\n",
                expr(&profile.start[0], t),
                expr(&profile.start[1], t),
            ));
            for seg in &profile.segments {
                match &seg.end {
                    Some(end) => out.push_str(&format!(
                        "{inner}curve({}, {}, {}, {}, {}, {});\n",
                        expr(&seg.c1[0], t),
                        expr(&seg.c1[1], t),
                        expr(&seg.c2[0], t),
                        expr(&seg.c2[1], t),
                        expr(&end[0], t),
                        expr(&end[1], t),
                    )),
                    None => out.push_str(&format!(
                        "{inner}close({}, {}, {}, {});\n",
                        expr(&seg.c1[0], t),
                        expr(&seg.c1[1], t),
                        expr(&seg.c2[0], t),
                        expr(&seg.c2[1], t),
                    )),
                }
            }
            out.push_str(&format!("{pad}}}\n"));
        }
    }
}

fn node(scene: &Scene, n: &CsgNode, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent);
    match n {
        CsgNode::Leaf(id) => primitive(scene, *id, indent, out),
        CsgNode::Union(children) => {
            out.push_str(&format!("{pad}union {{\n"));
            for c in children {
                node(scene, c, indent + 1, out);
            }
            out.push_str(&format!("{pad}}}\n"));
        }
        CsgNode::Intersection(children) => {
            out.push_str(&format!("{pad}intersection {{\n"));
            for c in children {
                node(scene, c, indent + 1, out);
            }
            out.push_str(&format!("{pad}}}\n"));
        }
        CsgNode::Difference(a, b) => {
            out.push_str(&format!("{pad}difference {{\n"));
            node(scene, a, indent + 1, out);
            match &**b {
                CsgNode::Union(children) if !children.is_empty() => {
                    for c in children {
                        node(scene, c, indent + 1, out);
                    }
                }
                other => node(scene, other, indent + 1, out),
            }
            out.push_str(&format!("{pad}}}\n"));
        }
    }
}

/// Renders a scene back to canonical source text. Parameter initial values
/// are the current exposed values, so a fitted scene prints its fit result.
pub fn print_scene(scene: &Scene) -> String {
    let mut out = String::new();
    for (id, entry) in scene.params.entries().iter().enumerate() {
        out.push_str(&format!("param {} = {}", entry.name, num(scene.params.exposed(id))));
        if let Some(lb) = entry.lower_bound {
            out.push_str(&format!(" min {}", num(lb)));
        }
        if entry.positive {
            out.push_str(" positive");
        }
        out.push_str(";\n");
    }
    if !scene.params.is_empty() && !matches!(&scene.root, CsgNode::Union(c) if c.is_empty()) {
        out.push('\n');
    }
    match &scene.root {
        CsgNode::Union(children) => {
            for c in children {
                node(scene, c, 0, &mut out);
            }
        }
        other => node(scene, other, 0, &mut out),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::parse::parse_scene;

    fn roundtrip(src: &str) {
        let s1 = parse_scene(src).unwrap();
        let p1 = print_scene(&s1);
        let s2 = parse_scene(&p1).unwrap_or_else(|e| panic!("reparse failed: {e}\n{p1}"));
        let p2 = print_scene(&s2);
        assert_eq!(p1, p2, "printing is not idempotent");
        assert_eq!(s1.products, s2.products);
        assert_eq!(s1.params.raw_values(), s2.params.raw_values());
    }

    #[test]
    fn roundtrip_simple() {
        roundtrip("param r = 1.25; sphere(r = r);");
    }

    #[test]
    fn roundtrip_difference_with_modifiers() {
        roundtrip(
            "param w = 2 min 0.1 positive;\n\
             difference {\n\
               box(w = w, h = 1, d = 1);\n\
               translate(0.5, 0, 0) rotate(0.1, 0.2, 0.3) scale(1.5) color(0.1, 0.2, 0.3) sphere(r = 0.8);\n\
             }",
        );
    }

    #[test]
    fn roundtrip_extrude() {
        roundtrip(
            "param d = 0.4 positive;\n\
             extrude(depth = d, samples = 7) {\n\
               start(0, 0);\n\
               curve(1, 0, 1, 1, 0.5, 1);\n\
               close(-1, 1, -1, 0);\n\
             }",
        );
    }

    #[test]
    fn roundtrip_nested_tree() {
        roundtrip(
            "union {\n\
               intersection { sphere(r = 1); box(w = 1.5, h = 1.5, d = 1.5); }\n\
               difference { cylinder(rt = 0.5, rb = 0.5, h = 2); sphere(r = 0.4); translate(0, 1, 0) sphere(r = 0.3); }\n\
             }",
        );
    }

    #[test]
    fn expr_formatting() {
        let s = parse_scene("param a = 1; param b = 2; sphere(r = 2*a - 0.5*b + 0.25);").unwrap();
        let printed = print_scene(&s);
        assert!(printed.contains("sphere(r = 2*a - 0.5*b + 0.25);"), "{printed}");
        roundtrip("param a = 1; param b = 2; sphere(r = 2*a - 0.5*b + 0.25);");
    }

    #[test]
    fn positive_param_roundtrips_exposed_value() {
        let src = "param r = 0.75 positive; sphere(r = r);";
        let s = parse_scene(src).unwrap();
        assert!((s.params.exposed(0) - 0.75).abs() < 1e-12);
        let printed = print_scene(&s);
        assert!(printed.contains("param r = 0.75 positive;"), "{printed}");
        roundtrip(src);
    }
}
