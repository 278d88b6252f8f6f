//! Simple-polygon utilities for extrude caps: signed area, self-intersection
//! test, and ear-clipping triangulation.

/// Twice the signed area; positive for counter-clockwise polygons in the
/// standard (u right, v up) orientation.
pub fn signed_area2(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Proper segment intersection, excluding shared endpoints.
fn segments_cross(p0: [f64; 2], p1: [f64; 2], q0: [f64; 2], q1: [f64; 2]) -> bool {
    let d1 = cross(q0, q1, p0);
    let d2 = cross(q0, q1, p1);
    let d3 = cross(p0, p1, q0);
    let d4 = cross(p0, p1, q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Collinear overlap counts as self-intersection too.
    let on = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        cross(a, b, c) == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q0, q1, p0) || on(q0, q1, p1) || on(p0, p1, q0) || on(p0, p1, q1)
}

/// True when the closed polygon has no edge pair that touches or crosses,
/// other than consecutive edges at their shared vertex.
pub fn is_simple(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (p0, p1) = (poly[i], poly[(i + 1) % n]);
        if p0 == p1 {
            return false;
        }
        for j in (i + 1)..n {
            // skip the edge itself and the two edges sharing a vertex with it
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (q0, q1) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(p0, p1, q0, q1) {
                return false;
            }
        }
    }
    true
}

// Strictly interior. Points on the boundary do not block an ear: sampled
// straight profile edges put collinear vertices exactly on ear edges, and a
// simple polygon cannot have a vertex strictly inside an ear through its
// boundary, so the strict test stays correct.
fn point_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let d1 = cross(a, b, p);
    let d2 = cross(b, c, p);
    let d3 = cross(c, a, p);
    d1 > 0.0 && d2 > 0.0 && d3 > 0.0
}

/// Ear-clips a simple counter-clockwise polygon into n-2 triangles of
/// original indices, counter-clockwise. Returns None when no ear can be found
/// (degenerate input).
///
/// Corners within a relative epsilon of flat count as ears: rings sampled
/// along straight profile segments are collinear only up to rounding, and a
/// strict sign test would leave their noise-reflex vertices unclippable.
/// Removing a flat vertex never changes the covered region, and the sliver
/// triangle it emits keeps every boundary edge paired with a wall quad.
pub fn ear_clip(poly: &[[f64; 2]]) -> Option<Vec<[u32; 3]>> {
    let n = poly.len();
    if n < 3 {
        return None;
    }
    let extent = poly
        .iter()
        .map(|p| p[0].abs().max(p[1].abs()))
        .fold(0.0, f64::max);
    let flat = 1e-9 * extent * extent;
    let mut active: Vec<u32> = (0..n as u32).collect();
    let mut tris = Vec::with_capacity(n - 2);
    while active.len() > 3 {
        let m = active.len();
        let mut clipped = false;
        for k in 0..m {
            let ia = active[(k + m - 1) % m];
            let ib = active[k];
            let ic = active[(k + 1) % m];
            let (a, b, c) = (poly[ia as usize], poly[ib as usize], poly[ic as usize]);
            if cross(a, b, c) < -flat {
                continue; // reflex corner
            }
            let blocked = active.iter().any(|&j| {
                j != ia && j != ib && j != ic && point_in_triangle(poly[j as usize], a, b, c)
            });
            if blocked {
                continue;
            }
            tris.push([ia, ib, ic]);
            active.remove(k);
            clipped = true;
            break;
        }
        if !clipped {
            return None;
        }
    }
    tris.push([active[0], active[1], active[2]]);
    Some(tris)
}
