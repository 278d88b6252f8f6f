//! Edge anti-aliasing: blends the two pixels of each visible edge crossing
//! and provides the backward path from pixel colors to the crossing
//! parameter.
//!
//! The blend weight is linear in the crossing offset: zero when the edge
//! passes the pair midpoint, one half when it passes a pixel center. This
//! blend is the sole mechanism that makes edge positions differentiable in
//! the rendered image.

use crate::edges::CrossingEvent;
use crate::image::Image;

/// One applied blend, with enough state to reverse it exactly.
#[derive(Debug, Clone, Copy)]
pub struct BlendRecord {
    pub updated: (u32, u32),
    pub other: (u32, u32),
    pub alpha: f64,
    pub c: f64,
    /// Index into the event list the blend was built from.
    pub event: usize,
    /// Color of `updated` immediately before this blend.
    pub before: [f64; 3],
    /// Color of `other` at blend time.
    pub other_color: [f64; 3],
}

/// Applies `after = alpha * other + (1 - alpha) * before` with alpha = |c|
/// to the less-covered pixel of each event's pair: the crossing point lies
/// on that pixel's side of the midpoint, so the neighboring surface covers
/// part of it. Serial in event order; later events see earlier results.
pub fn blend(image: &mut Image, events: &[CrossingEvent]) -> Vec<BlendRecord> {
    let mut records = Vec::with_capacity(events.len());
    for (ei, e) in events.iter().enumerate() {
        let c = e.c.clamp(-0.5, 0.5);
        let alpha = c.abs();
        let (first, second) = ((e.x, e.y), e.other());
        let (updated, other) = if c >= 0.0 { (second, first) } else { (first, second) };
        let before = image.get(updated.0 as usize, updated.1 as usize);
        let other_color = image.get(other.0 as usize, other.1 as usize);
        let mut after = [0.0; 3];
        for k in 0..3 {
            after[k] = alpha * other_color[k] + (1.0 - alpha) * before[k];
        }
        image.set(updated.0 as usize, updated.1 as usize, after);
        records.push(BlendRecord { updated, other, alpha, c, event: ei, before, other_color });
    }
    records
}

/// Reverse replay of `blend`: converts the adjoint of the blended image
/// into the adjoint of the unblended composite (in place) and returns
/// dL/dc per record. `dL/dalpha = <adjoint_after, other - before>` and
/// `dL/dc = sign(c) * dL/dalpha`; color adjoints split by (alpha, 1-alpha).
pub fn blend_backward(records: &[BlendRecord], d_image: &mut Image) -> Vec<f64> {
    let mut d_c = vec![0.0; records.len()];
    for (ri, r) in records.iter().enumerate().rev() {
        let adj = d_image.get(r.updated.0 as usize, r.updated.1 as usize);
        let mut d_alpha = 0.0;
        for k in 0..3 {
            d_alpha += adj[k] * (r.other_color[k] - r.before[k]);
        }
        let sign = if r.c > 0.0 {
            1.0
        } else if r.c < 0.0 {
            -1.0
        } else {
            0.0
        };
        d_c[ri] = sign * d_alpha;

        d_image.set(
            r.updated.0 as usize,
            r.updated.1 as usize,
            adj.map(|a| (1.0 - r.alpha) * a),
        );
        let mut other_adj = d_image.get(r.other.0 as usize, r.other.1 as usize);
        for k in 0..3 {
            other_adj[k] += r.alpha * adj[k];
        }
        d_image.set(r.other.0 as usize, r.other.1 as usize, other_adj);
    }
    d_c
}
