//! Visibility edges and their screen-space crossing events.
//!
//! Two edge families drive edge anti-aliasing: silhouette edges, mesh edges
//! whose adjacent triangles face opposite ways on screen, and intersection
//! edges, segments where triangles of two different primitives cross. Both
//! carry enough provenance to route pixel adjoints back to mesh vertices:
//! silhouette endpoints are mesh vertices (identity map), intersection
//! endpoints are line-plane crossings differentiated through all six
//! generating vertices.

use std::collections::HashMap;
use std::fmt::Write as _;

use glam::{DVec2, DVec3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::classify::CompositeBuffer;
use crate::mesh::TriMesh;
use crate::raster::{clip_from_world, screen_from_clip, Fragment, ProjectedMesh, RasterTri};
use crate::scene::Scene;

/// Provenance of one intersection-segment endpoint: the crossing of an edge
/// of one triangle (vertex slots `edge`) with the other triangle's plane.
/// `from_first` says which triangle supplied the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndAnchor {
    pub from_first: bool,
    pub edge: [u8; 2],
}

#[derive(Debug, Clone, Copy)]
pub enum EdgeSource {
    Silhouette {
        prim: usize,
        v0: u32,
        v1: u32,
    },
    Intersection {
        prim_a: usize,
        tri_a: u32,
        prim_b: usize,
        tri_b: u32,
        ends: [EndAnchor; 2],
    },
}

/// A world-space visibility edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgeSegment {
    pub p: DVec3,
    pub q: DVec3,
    pub source: EdgeSource,
}

impl EdgeSegment {
    pub fn is_silhouette(&self) -> bool {
        matches!(self.source, EdgeSource::Silhouette { .. })
    }

    pub fn owners(&self) -> (usize, Option<usize>) {
        match self.source {
            EdgeSource::Silhouette { prim, .. } => (prim, None),
            EdgeSource::Intersection { prim_a, prim_b, .. } => (prim_a, Some(prim_b)),
        }
    }
}

/// Screen areas below this (in px^2) leave a triangle's facing undecided.
/// Keeps cap slivers, whose signed area is pure rounding noise, from
/// minting silhouette edges inside a flat face.
const MIN_FACING_AREA: f64 = 1e-9;

/// Per source triangle: +1 front-facing, -1 back-facing, 0 undecided
/// (degenerate on screen or fully near-clipped). Sums the signed screen
/// area of the raster pieces so a near-clipped triangle is judged by its
/// visible part.
pub fn source_facing(pm: &ProjectedMesh) -> Vec<i8> {
    let mut area = vec![0.0f64; pm.facing_of_source.len()];
    for rt in &pm.tris {
        area[rt.source as usize] += rt.area2;
    }
    area.iter()
        .map(|&a| {
            if a.abs() < MIN_FACING_AREA {
                0
            } else if a < 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

/// Mesh edges whose two adjacent triangles face opposite ways on screen,
/// ordered by vertex index pair. Endpoints are the shared vertices, so the
/// endpoint adjoint is the identity onto `positions[v0]` and
/// `positions[v1]`.
pub fn silhouette_edges(mesh: &TriMesh, pm: &ProjectedMesh) -> Vec<EdgeSegment> {
    let facing = source_facing(pm);
    let mut adj: HashMap<(u32, u32), [i32; 2]> = HashMap::new();
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (i, j) = (tri[k], tri[(k + 1) % 3]);
            let slot = adj.entry((i.min(j), i.max(j))).or_insert([-1, -1]);
            if slot[0] < 0 {
                slot[0] = ti as i32;
            } else {
                slot[1] = ti as i32;
            }
        }
    }
    let mut keys: Vec<(u32, u32)> = adj
        .iter()
        .filter(|(_, tris)| {
            tris[1] >= 0 && facing[tris[0] as usize] * facing[tris[1] as usize] == -1
        })
        .map(|(&k, _)| k)
        .collect();
    keys.sort_unstable();
    keys.into_iter()
        .map(|(v0, v1)| EdgeSegment {
            p: mesh.positions[v0 as usize],
            q: mesh.positions[v1 as usize],
            source: EdgeSource::Silhouette { prim: mesh.primitive_id, v0, v1 },
        })
        .collect()
}

/// Normal directions closer than this to parallel make a triangle pair
/// coplanar-or-parallel: no segment, by policy. Flush boolean faces are the
/// classifier's job; a 2D overlap has no differentiable edge curve.
const PARALLEL_EPS: f64 = 1e-7;

pub struct TriTriSegment {
    pub p: DVec3,
    pub q: DVec3,
    /// Anchors for p and q in that order.
    pub ends: [EndAnchor; 2],
}

/// Crossings of one triangle's edges with the other's plane, tagged with the
/// position along the plane-intersection line. Exact zeros of the signed
/// distance count as positive so a vertex touching the plane still yields a
/// crossing pair on its adjacent edges.
fn plane_crossings(
    v: &[DVec3; 3],
    d: &[f64; 3],
    line: DVec3,
    from_first: bool,
) -> Option<[(f64, DVec3, EndAnchor); 2]> {
    let pos = [d[0] >= 0.0, d[1] >= 0.0, d[2] >= 0.0];
    let mut found: Vec<(f64, DVec3, EndAnchor)> = Vec::with_capacity(2);
    for i in 0..3 {
        let j = (i + 1) % 3;
        if pos[i] != pos[j] {
            let t = d[i] / (d[i] - d[j]);
            let p = v[i] + t * (v[j] - v[i]);
            found.push((
                line.dot(p),
                p,
                EndAnchor { from_first, edge: [i as u8, j as u8] },
            ));
        }
    }
    if found.len() == 2 {
        Some([found[0], found[1]])
    } else {
        None
    }
}

/// Intersection segment of two triangles, if any. Each endpoint is a
/// line-plane crossing `v_i + t (v_j - v_i)` with `t = d_i / (d_i - d_j)`,
/// clipped to the overlap of the two triangles' spans along the plane
/// intersection line.
pub fn intersect_triangles(a: &[DVec3; 3], b: &[DVec3; 3]) -> Option<TriTriSegment> {
    let n_a = (a[1] - a[0]).cross(a[2] - a[0]);
    let n_b = (b[1] - b[0]).cross(b[2] - b[0]);
    let line = n_a.cross(n_b);
    if line.length() <= PARALLEL_EPS * n_a.length() * n_b.length() {
        return None;
    }
    let d_a = [
        n_b.dot(a[0] - b[0]),
        n_b.dot(a[1] - b[0]),
        n_b.dot(a[2] - b[0]),
    ];
    let d_b = [
        n_a.dot(b[0] - a[0]),
        n_a.dot(b[1] - a[0]),
        n_a.dot(b[2] - a[0]),
    ];
    let ca = plane_crossings(a, &d_a, line, true)?;
    let cb = plane_crossings(b, &d_b, line, false)?;

    let order = |pair: [(f64, DVec3, EndAnchor); 2]| {
        if pair[0].0 <= pair[1].0 {
            (pair[0], pair[1])
        } else {
            (pair[1], pair[0])
        }
    };
    let (a_lo, a_hi) = order(ca);
    let (b_lo, b_hi) = order(cb);
    let lo = if a_lo.0 >= b_lo.0 { a_lo } else { b_lo };
    let hi = if a_hi.0 <= b_hi.0 { a_hi } else { b_hi };
    if hi.0 <= lo.0 {
        return None;
    }
    let scale = a
        .iter()
        .chain(b.iter())
        .map(|p| p.abs().max_element())
        .fold(1.0f64, f64::max);
    if (hi.1 - lo.1).length() <= 1e-9 * scale {
        return None;
    }
    Some(TriTriSegment { p: lo.1, q: hi.1, ends: [lo.2, hi.2] })
}

/// Adjoint of one `intersect_triangles` endpoint with respect to all six
/// vertices. Recomputes the crossing named by `anchor`, so it must be called
/// with the same triangles that produced the segment.
pub fn intersect_point_backward(
    a: &[DVec3; 3],
    b: &[DVec3; 3],
    anchor: EndAnchor,
    d_point: DVec3,
) -> ([DVec3; 3], [DVec3; 3]) {
    let (v, w) = if anchor.from_first { (a, b) } else { (b, a) };
    let (i, j) = (anchor.edge[0] as usize, anchor.edge[1] as usize);
    let (v0, v1) = (v[i], v[j]);
    let u = w[1] - w[0];
    let s = w[2] - w[0];
    let n = u.cross(s);
    let e = v1 - v0;
    let num = n.dot(w[0] - v0);
    let den = n.dot(e);
    let t = num / den;

    // P = v0 + t e
    let g = d_point;
    let mut d_v0 = (1.0 - t) * g;
    let mut d_v1 = t * g;
    let d_t = g.dot(e);
    // t = num / den, num = n.(w0 - v0), den = n.e
    let d_num = d_t / den;
    let d_den = -d_t * num / (den * den);
    let d_n = d_num * (w[0] - v0) + d_den * e;
    let mut d_w0 = d_num * n;
    d_v0 -= (d_num + d_den) * n;
    d_v1 += d_den * n;
    // n = u x s with u = w1 - w0, s = w2 - w0
    let d_u = s.cross(d_n);
    let d_s = d_n.cross(u);
    let d_w1 = d_u;
    let d_w2 = d_s;
    d_w0 -= d_u + d_s;

    let mut d_edge_tri = [DVec3::ZERO; 3];
    d_edge_tri[i] = d_v0;
    d_edge_tri[j] = d_v1;
    let d_plane_tri = [d_w0, d_w1, d_w2];
    if anchor.from_first {
        (d_edge_tri, d_plane_tri)
    } else {
        (d_plane_tri, d_edge_tri)
    }
}

#[derive(Clone, Copy)]
struct Aabb {
    lo: DVec3,
    hi: DVec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb { lo: DVec3::splat(f64::INFINITY), hi: DVec3::splat(f64::NEG_INFINITY) }
    }

    fn add(&mut self, p: DVec3) {
        self.lo = self.lo.min(p);
        self.hi = self.hi.max(p);
    }

    fn of_tri(mesh: &TriMesh, tri: &[u32; 3]) -> Self {
        let mut b = Aabb::empty();
        for &v in tri {
            b.add(mesh.positions[v as usize]);
        }
        b
    }

    fn of_mesh(mesh: &TriMesh) -> Self {
        let mut b = Aabb::empty();
        for &p in &mesh.positions {
            b.add(p);
        }
        b
    }

    fn overlaps(&self, o: &Aabb) -> bool {
        self.lo.cmple(o.hi).all() && o.lo.cmple(self.hi).all()
    }

    fn intersection(&self, o: &Aabb) -> Aabb {
        Aabb { lo: self.lo.max(o.lo), hi: self.hi.min(o.hi) }
    }

    fn expand(&self, m: f64) -> Aabb {
        Aabb { lo: self.lo - m, hi: self.hi + m }
    }

    fn diag(&self) -> f64 {
        (self.hi - self.lo).length()
    }
}

/// Candidate triangle pairs between two meshes: a uniform grid over the
/// AABB overlap region, cell size the median triangle-AABB diagonal. The
/// result is a superset of the actually intersecting pairs, sorted.
pub fn broadphase(a: &TriMesh, b: &TriMesh) -> Vec<(u32, u32)> {
    let box_a = Aabb::of_mesh(a);
    let box_b = Aabb::of_mesh(b);
    if !box_a.overlaps(&box_b) {
        return Vec::new();
    }
    let a_boxes: Vec<Aabb> = a.triangles.iter().map(|t| Aabb::of_tri(a, t)).collect();
    let b_boxes: Vec<Aabb> = b.triangles.iter().map(|t| Aabb::of_tri(b, t)).collect();

    let mut diags: Vec<f64> = a_boxes.iter().chain(b_boxes.iter()).map(Aabb::diag).collect();
    diags.sort_unstable_by(f64::total_cmp);
    let median = diags[diags.len() / 2];
    let region_raw = box_a.intersection(&box_b);
    // floor on the cell size bounds the grid to ~64 cells per axis even for
    // degenerate tessellations; correctness only needs a superset
    let cell = median.max(region_raw.diag() / 64.0).max(1e-9);
    let region = region_raw.expand(cell);

    let cell_range = |b: &Aabb| {
        let lo = ((b.lo - region.lo) / cell).floor();
        let hi = ((b.hi - region.lo) / cell).floor();
        (
            [lo.x as i64, lo.y as i64, lo.z as i64],
            [hi.x as i64, hi.y as i64, hi.z as i64],
        )
    };

    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    for (ti, tb) in a_boxes.iter().enumerate() {
        if !tb.overlaps(&region) {
            continue;
        }
        let (lo, hi) = cell_range(tb);
        for ix in lo[0]..=hi[0] {
            for iy in lo[1]..=hi[1] {
                for iz in lo[2]..=hi[2] {
                    grid.entry([ix, iy, iz]).or_default().push(ti as u32);
                }
            }
        }
    }

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (ti, tb) in b_boxes.iter().enumerate() {
        if !tb.overlaps(&region) {
            continue;
        }
        let (lo, hi) = cell_range(tb);
        for ix in lo[0]..=hi[0] {
            for iy in lo[1]..=hi[1] {
                for iz in lo[2]..=hi[2] {
                    if let Some(list) = grid.get(&[ix, iy, iz]) {
                        for &ai in list {
                            if a_boxes[ai as usize].overlaps(tb) {
                                pairs.push((ai, ti as u32));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn co_occur(scene: &Scene, p: usize, q: usize) -> bool {
    scene.products.iter().any(|pr| {
        pr.literals.iter().any(|l| l.prim == p) && pr.literals.iter().any(|l| l.prim == q)
    })
}

fn tri_verts(mesh: &TriMesh, ti: u32) -> [DVec3; 3] {
    let t = mesh.triangles[ti as usize];
    [
        mesh.positions[t[0] as usize],
        mesh.positions[t[1] as usize],
        mesh.positions[t[2] as usize],
    ]
}

/// Intersection segments between every pair of live primitives that
/// co-occur in some product (any polarity). Pairs whose surfaces never meet
/// in a product are skipped: their crossing curves are invisible, so they
/// carry no gradient. Deterministic order: primitive pair, then the sorted
/// triangle pairs from `broadphase`.
pub fn intersection_edges(scene: &Scene, meshes: &[Option<TriMesh>]) -> Vec<EdgeSegment> {
    let live: Vec<&TriMesh> = meshes.iter().flatten().collect();
    let mut out = Vec::new();
    for x in 0..live.len() {
        for y in x + 1..live.len() {
            let (ma, mb) = (live[x], live[y]);
            let (pa, pb) = (ma.primitive_id, mb.primitive_id);
            if !co_occur(scene, pa, pb) {
                continue;
            }
            let pairs = broadphase(ma, mb);
            let segs: Vec<Option<EdgeSegment>> = pairs
                .par_iter()
                .map(|&(ta, tb)| {
                    intersect_triangles(&tri_verts(ma, ta), &tri_verts(mb, tb)).map(|s| {
                        EdgeSegment {
                            p: s.p,
                            q: s.q,
                            source: EdgeSource::Intersection {
                                prim_a: pa,
                                tri_a: ta,
                                prim_b: pb,
                                tri_b: tb,
                                ends: s.ends,
                            },
                        }
                    })
                })
                .collect();
            out.extend(segs.into_iter().flatten());
        }
    }
    out
}

/// All visibility edges of a frame: silhouettes per projected mesh, then
/// intersection segments.
pub fn extract_edges(
    scene: &Scene,
    meshes: &[Option<TriMesh>],
    projected: &[ProjectedMesh],
) -> Vec<EdgeSegment> {
    let mut out = Vec::new();
    for pm in projected {
        let mesh = meshes[pm.primitive_id]
            .as_ref()
            .expect("projected mesh without a source mesh");
        out.extend(silhouette_edges(mesh, pm));
    }
    out.extend(intersection_edges(scene, meshes));
    out
}

/// Orientation of a blended pixel pair: the second pixel is at `x+1` for
/// `Horizontal`, at `y+1` for `Vertical`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PairAxis {
    Horizontal,
    Vertical,
}

/// A visible edge crossing the boundary between two adjacent pixels.
#[derive(Debug, Clone, Copy)]
pub struct CrossingEvent {
    pub x: u32,
    pub y: u32,
    pub axis: PairAxis,
    /// Offset of the crossing point along the center-to-center segment:
    /// 0 at the midpoint, +0.5 at the second pixel's center.
    pub c: f64,
    /// Parameter along the projected segment at the crossing, for backward.
    pub u: f64,
    /// Eye depth of the segment at the crossing.
    pub depth: f64,
    pub segment: u32,
}

impl CrossingEvent {
    /// The second pixel of the pair.
    pub fn other(&self) -> (u32, u32) {
        match self.axis {
            PairAxis::Horizontal => (self.x + 1, self.y),
            PairAxis::Vertical => (self.x, self.y + 1),
        }
    }
}

/// Perspective-correct depth of a raster triangle's plane extrapolated to an
/// arbitrary screen point. None when the triangle is degenerate on screen or
/// its plane recedes past infinity at that point.
fn tri_depth_at(rt: &RasterTri, p: DVec2) -> Option<f64> {
    let [a, b, c] = [rt.corners[0].screen, rt.corners[1].screen, rt.corners[2].screen];
    let area = (b - a).perp_dot(c - a);
    if area.abs() < 1e-12 {
        return None;
    }
    let la = (c - b).perp_dot(p - b) / area;
    let lb = (a - c).perp_dot(p - c) / area;
    let lc = 1.0 - la - lb;
    let inv = la / rt.corners[0].clip.w + lb / rt.corners[1].clip.w + lc / rt.corners[2].clip.w;
    (inv > 1e-12).then(|| 1.0 / inv)
}

/// Depth of a pixel's winning surface evaluated at `pt`, not at the pixel
/// center: an edge lying exactly on the winning triangle's plane then passes
/// the visibility test within fp noise, which is what `eps_vis` is sized
/// for. None when the winner's plane recedes past its horizon at `pt` (a
/// grazing limb triangle extrapolated outward): such a plane occludes
/// nothing there, and the center depth would wrongly substitute a nearer
/// point of the same surface.
fn winner_depth_at(
    f: &Fragment,
    projected: &[ProjectedMesh],
    lookup: &[Option<usize>],
    pt: DVec2,
) -> Option<f64> {
    lookup
        .get(f.primitive_id as usize)
        .copied()
        .flatten()
        .and_then(|mi| tri_depth_at(&projected[mi].tris[f.raster_tri as usize], pt))
}

fn event_visible(
    seg: &EdgeSegment,
    comp: &CompositeBuffer,
    projected: &[ProjectedMesh],
    lookup: &[Option<usize>],
    px0: (u32, u32),
    px1: (u32, u32),
    pt: DVec2,
    depth: f64,
    eps_vis: f64,
) -> bool {
    let f0 = comp.winner(px0.0, px0.1);
    let f1 = comp.winner(px1.0, px1.1);
    let owned = |id: u32| match seg.source {
        EdgeSource::Silhouette { prim, .. } => id as usize == prim,
        EdgeSource::Intersection { prim_a, prim_b, .. } => {
            id as usize == prim_a || id as usize == prim_b
        }
    };
    for f in [f0, f1].into_iter().flatten() {
        // an owner's own surface never counts as an occluder: near a limb it
        // legitimately advances past its silhouette depth, and a chord plane
        // extrapolated there under-predicts without bound. A self-hidden
        // edge then blends two same-colored owner pixels, which is inert.
        if owned(f.primitive_id) {
            continue;
        }
        if let Some(wd) = winner_depth_at(f, projected, lookup, pt) {
            if depth > wd + eps_vis {
                return false;
            }
        }
    }
    let id0 = f0.map(|f| f.primitive_id as usize);
    let id1 = f1.map(|f| f.primitive_id as usize);
    match seg.source {
        // a silhouette separates its owner from anything else, so the owner
        // must win one side; the far side may be background or another body
        EdgeSource::Silhouette { prim, .. } => id0 == Some(prim) || id1 == Some(prim),
        // an intersection edge is visible where nothing foreign wins either
        // side. The two rasterizations of the crease (one per owner) disagree
        // by a hair, so a side may momentarily show the wrong owner or a
        // background sliver; rejecting those drops the event exactly at its
        // pixel-center handoff, while keeping them blends near-equal colors.
        EdgeSource::Intersection { prim_a, prim_b, .. } => {
            let own = |id: Option<usize>| {
                id.is_none() || id == Some(prim_a) || id == Some(prim_b)
            };
            own(id0) && own(id1) && (id0.is_some() || id1.is_some())
        }
    }
}

#[doc(hidden)]
pub fn debug_visibility(
    seg: &EdgeSegment,
    comp: &CompositeBuffer,
    projected: &[ProjectedMesh],
    px0: (u32, u32),
    px1: (u32, u32),
    pt: DVec2,
    depth: f64,
    eps_vis: f64,
) -> String {
    let lookup = mesh_lookup(projected);
    let f0 = comp.winner(px0.0, px0.1);
    let f1 = comp.winner(px1.0, px1.1);
    let mut s = format!(
        "seg depth {depth:.6}; winners {:?} {:?}; ",
        f0.map(|f| (f.primitive_id, f.raster_tri, f.depth)),
        f1.map(|f| (f.primitive_id, f.raster_tri, f.depth))
    );
    for f in [f0, f1].into_iter().flatten() {
        s.push_str(&format!(
            "plane@pt {:?}; ",
            winner_depth_at(f, projected, &lookup, pt)
        ));
    }
    s.push_str(&format!(
        "visible={}",
        event_visible(seg, comp, projected, &lookup, px0, px1, pt, depth, eps_vis)
    ));
    s
}

/// Projects every segment and walks it across the pixel grid, emitting one
/// event per crossed pixel-pair boundary that survives the depth and owner
/// tests. A horizontal-ish segment (|dx| >= |dy|) crosses vertical pixel
/// pairs and vice versa. At most one event per pixel pair survives: nearest
/// segment depth, then lowest segment index, so the result is independent
/// of thread count.
pub fn visible_crossings(
    segments: &[EdgeSegment],
    projected: &[ProjectedMesh],
    comp: &CompositeBuffer,
    camera: &Camera,
    eps_vis: f64,
) -> Vec<CrossingEvent> {
    let vp = camera.view_proj();
    let (w, h) = (comp.width, comp.height);
    let lookup = mesh_lookup(projected);

    let per_segment: Vec<Vec<CrossingEvent>> = segments
        .par_iter()
        .enumerate()
        .map(|(si, seg)| {
            let mut out = Vec::new();
            let c0 = clip_from_world(&vp, seg.p);
            let c1 = clip_from_world(&vp, seg.q);
            // segments straddling the near plane cannot be projected; the
            // camera validity check keeps solids in front of it anyway
            if c0.w <= camera.near || c1.w <= camera.near {
                return out;
            }
            let s0 = screen_from_clip(c0, w, h);
            let s1 = screen_from_clip(c1, w, h);
            let (iw0, iw1) = (1.0 / c0.w, 1.0 / c1.w);
            let d = s1 - s0;
            if d.x == 0.0 && d.y == 0.0 {
                return out;
            }
            let horizontal_ish = d.x.abs() >= d.y.abs();
            let (main0, main1, side0, side1) = if horizontal_ish {
                (s0.x, s1.x, s0.y, s1.y)
            } else {
                (s0.y, s1.y, s0.x, s1.x)
            };
            let lo = main0.min(main1);
            let hi = main0.max(main1);
            // one candidate crossing per pixel band [k, k+1) the segment
            // touches, not just per center line it crosses: near an endpoint
            // the segment's line is extended by up to half a pixel so that a
            // polyline joint whose neighbor continues with the other dominant
            // axis still blends the pixels the boundary passes through. The
            // side-axis overshoot is bounded by the family rule (|side slope|
            // <= 1), so an extended crossing stays within the endpoint's own
            // pixel neighborhood.
            let k0 = lo.floor() as i64;
            let k1 = hi.floor() as i64;
            let (main_len, side_len) = if horizontal_ish { (w, h) } else { (h, w) };
            for k in k0..=k1 {
                if k < 0 || k >= main_len as i64 {
                    continue;
                }
                let center = k as f64 + 0.5;
                let u = (center - main0) / (main1 - main0);
                let sv = side0 + u * (side1 - side0);
                let row = (sv - 0.5).floor() as i64;
                if row < 0 || row + 1 >= side_len as i64 {
                    continue;
                }
                let c = sv - (row as f64 + 1.0);
                let depth = 1.0 / ((1.0 - u) * iw0 + u * iw1);
                let (pix, other, axis, pt) = if horizontal_ish {
                    (
                        (k as u32, row as u32),
                        (k as u32, row as u32 + 1),
                        PairAxis::Vertical,
                        DVec2::new(center, sv),
                    )
                } else {
                    (
                        (row as u32, k as u32),
                        (row as u32 + 1, k as u32),
                        PairAxis::Horizontal,
                        DVec2::new(sv, center),
                    )
                };
                if !event_visible(seg, comp, projected, &lookup, pix, other, pt, depth, eps_vis)
                {
                    continue;
                }
                out.push(CrossingEvent {
                    x: pix.0,
                    y: pix.1,
                    axis,
                    c,
                    u,
                    depth,
                    segment: si as u32,
                });
            }
            out
        })
        .collect();

    let mut all: Vec<CrossingEvent> = per_segment.into_iter().flatten().collect();
    // interior crossings outrank extended ones so a joint extension never
    // displaces the segment that genuinely owns the pair
    let extended = |e: &CrossingEvent| !(0.0..=1.0).contains(&e.u);
    all.sort_unstable_by(|a, b| {
        (a.x, a.y, a.axis, extended(a))
            .cmp(&(b.x, b.y, b.axis, extended(b)))
            .then(a.depth.total_cmp(&b.depth))
            .then(a.segment.cmp(&b.segment))
    });
    all.dedup_by(|later, kept| later.x == kept.x && later.y == kept.y && later.axis == kept.axis);
    all
}

/// Adjoint of an event's crossing parameter `c` with respect to the world
/// positions of its segment's endpoints. Reprojects the endpoints and
/// differentiates the crossing-point formula for the event's fixed pixel
/// pair; the discrete choice of pair is locally constant.
pub fn crossing_world_backward(
    seg: &EdgeSegment,
    event: &CrossingEvent,
    camera: &Camera,
    width: u32,
    height: u32,
    d_c: f64,
) -> (DVec3, DVec3) {
    let vp = camera.view_proj();
    let c0 = clip_from_world(&vp, seg.p);
    let c1 = clip_from_world(&vp, seg.q);
    let s0 = screen_from_clip(c0, width, height);
    let s1 = screen_from_clip(c1, width, height);
    let d = s1 - s0;
    let u = event.u;

    // c = side0 + u * d_side - const, u = (center - main0) / d_main
    let (d_s0, d_s1) = match event.axis {
        PairAxis::Vertical => {
            let center = event.x as f64 + 0.5;
            let g0 = DVec2::new(d.y * (center - s1.x) / (d.x * d.x), 1.0 - u);
            let g1 = DVec2::new(-d.y * (center - s0.x) / (d.x * d.x), u);
            (g0 * d_c, g1 * d_c)
        }
        PairAxis::Horizontal => {
            let center = event.y as f64 + 0.5;
            let g0 = DVec2::new(1.0 - u, d.x * (center - s1.y) / (d.y * d.y));
            let g1 = DVec2::new(u, -d.x * (center - s0.y) / (d.y * d.y));
            (g0 * d_c, g1 * d_c)
        }
    };
    let d_p = crate::raster::world_grad_from_clip(
        &vp,
        crate::raster::screen_from_clip_backward(c0, width, height, d_s0),
    );
    let d_q = crate::raster::world_grad_from_clip(
        &vp,
        crate::raster::screen_from_clip_backward(c1, width, height, d_s1),
    );
    (d_p, d_q)
}

/// Accumulates world-space endpoint adjoints into per-mesh vertex
/// gradients: identity onto the two shared vertices for silhouettes, the
/// analytic line-plane adjoint onto all six vertices for intersections.
/// `grads` and `lookup` follow the projected-mesh order.
pub fn segment_vertex_backward(
    seg: &EdgeSegment,
    d_p: DVec3,
    d_q: DVec3,
    meshes: &[Option<TriMesh>],
    lookup: &[Option<usize>],
    grads: &mut [crate::raster::MeshGrads],
) {
    match seg.source {
        EdgeSource::Silhouette { prim, v0, v1 } => {
            let mi = lookup[prim].expect("silhouette owner not projected");
            grads[mi].d_world[v0 as usize] += d_p;
            grads[mi].d_world[v1 as usize] += d_q;
        }
        EdgeSource::Intersection { prim_a, tri_a, prim_b, tri_b, ends } => {
            let ma = meshes[prim_a].as_ref().expect("intersection owner vanished");
            let mb = meshes[prim_b].as_ref().expect("intersection owner vanished");
            let va = tri_verts(ma, tri_a);
            let vb = tri_verts(mb, tri_b);
            let (ga, gb) = (
                lookup[prim_a].expect("intersection owner not projected"),
                lookup[prim_b].expect("intersection owner not projected"),
            );
            for (anchor, d_pt) in ends.iter().zip([d_p, d_q]) {
                let (da, db) = intersect_point_backward(&va, &vb, *anchor, d_pt);
                let (ta, tb) = (ma.triangles[tri_a as usize], mb.triangles[tri_b as usize]);
                for k in 0..3 {
                    grads[ga].d_world[ta[k] as usize] += da[k];
                    grads[gb].d_world[tb[k] as usize] += db[k];
                }
            }
        }
    }
}

/// Primitive-id to projected-mesh-index table, shared by the crossing walk
/// and the backward routing.
pub fn mesh_lookup(projected: &[ProjectedMesh]) -> Vec<Option<usize>> {
    let mut lookup: Vec<Option<usize>> = Vec::new();
    for (mi, pm) in projected.iter().enumerate() {
        if pm.primitive_id >= lookup.len() {
            lookup.resize(pm.primitive_id + 1, None);
        }
        lookup[pm.primitive_id] = Some(mi);
    }
    lookup
}

/// Segments as an OBJ polyline set: two `v` lines and one `l` line each.
pub fn segments_obj(segments: &[EdgeSegment]) -> String {
    let mut s = String::new();
    for (i, e) in segments.iter().enumerate() {
        let _ = writeln!(s, "v {} {} {}", e.p.x, e.p.y, e.p.z);
        let _ = writeln!(s, "v {} {} {}", e.q.x, e.q.y, e.q.z);
        let _ = writeln!(s, "l {} {}", 2 * i + 1, 2 * i + 2);
    }
    s
}

/// Events as CSV rows `x,y,axis,c,kind`.
pub fn events_csv(events: &[CrossingEvent], segments: &[EdgeSegment]) -> String {
    let mut s = String::from("x,y,axis,c,kind\n");
    for e in events {
        let axis = match e.axis {
            PairAxis::Horizontal => "horizontal",
            PairAxis::Vertical => "vertical",
        };
        let kind = if segments[e.segment as usize].is_silhouette() {
            "silhouette"
        } else {
            "intersection"
        };
        let _ = writeln!(s, "{},{},{},{},{}", e.x, e.y, axis, e.c, kind);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::classify::composite;
    use crate::mesh::Tessellation;
    use crate::oracle::raycast_reference;
    use crate::raster::{project, rasterize_layers, FragmentBuffer};
    use crate::{epsilon_z, Camera, Scene, Shading};

    fn setup(
        src: &str,
        camera: &Camera,
    ) -> (Scene, Vec<Option<TriMesh>>, Vec<ProjectedMesh>, FragmentBuffer) {
        let scene = Scene::parse(src).unwrap();
        let tess = Tessellation::new(&scene).unwrap();
        let meshes = tess.build(&scene);
        let projected: Vec<ProjectedMesh> =
            meshes.iter().flatten().map(|m| project(m, camera)).collect();
        let fragbuf = rasterize_layers(
            &projected,
            camera.resolution[0],
            camera.resolution[1],
            camera.near,
            camera.far,
        );
        (scene, meshes, projected, fragbuf)
    }

    fn frame_events(
        src: &str,
        camera: &Camera,
    ) -> (Scene, Vec<Option<TriMesh>>, Vec<ProjectedMesh>, Vec<EdgeSegment>, Vec<CrossingEvent>)
    {
        let (scene, meshes, projected, fragbuf) = setup(src, camera);
        let eps_z = epsilon_z(camera.near, camera.far);
        let (comp, _) = composite(
            &scene,
            &projected,
            &meshes,
            &fragbuf,
            eps_z,
            Shading::Albedo,
            [0.0; 3],
        );
        let segments = extract_edges(&scene, &meshes, &projected);
        let events = visible_crossings(&segments, &projected, &comp, camera, 2.0 * eps_z);
        (scene, meshes, projected, segments, events)
    }

    #[test]
    fn box_face_on_silhouette_is_the_outline() {
        let camera = Camera {
            position: [0.0, 0.0, 4.0],
            resolution: [64, 64],
            ..Camera::default()
        };
        let (_, meshes, projected, _) = setup("box(w = 1, h = 1, d = 1);", &camera);
        let mesh = meshes[0].as_ref().unwrap();
        let edges = silhouette_edges(mesh, &projected[0]);

        assert_eq!(edges.len(), 4, "face-on box outline has four edges");
        for e in &edges {
            assert!((e.p.z - 0.5).abs() < 1e-12 && (e.q.z - 0.5).abs() < 1e-12);
            let d = e.q - e.p;
            let moved = [d.x, d.y].iter().filter(|v| v.abs() > 1e-12).count();
            assert_eq!(moved, 1, "outline edges are axis aligned, diagonals excluded");
        }
    }

    #[test]
    fn sphere_silhouette_matches_brute_force_and_closes() {
        let camera = Camera {
            position: [2.5, 1.7, 3.9],
            resolution: [128, 128],
            ..Camera::default()
        };
        let (_, meshes, projected, _) = setup("sphere(r = 1);", &camera);
        let mesh = meshes[0].as_ref().unwrap();
        let pm = &projected[0];
        let edges = silhouette_edges(mesh, pm);
        assert!(!edges.is_empty());

        // brute force: full-triangle screen areas (nothing is near-clipped
        // here), edge adjacency by scanning all triangle pairs
        let screen_facing = |ti: usize| -> i8 {
            let t = mesh.triangles[ti];
            let [a, b, c] = [
                pm.vert_screen[t[0] as usize],
                pm.vert_screen[t[1] as usize],
                pm.vert_screen[t[2] as usize],
            ];
            let area = (b - a).perp_dot(c - a);
            if area < 0.0 {
                1
            } else {
                -1
            }
        };
        let mut expected: Vec<(u32, u32)> = Vec::new();
        for i in 0..mesh.triangles.len() {
            for j in i + 1..mesh.triangles.len() {
                let (ta, tb) = (mesh.triangles[i], mesh.triangles[j]);
                let shared: Vec<u32> =
                    ta.iter().filter(|v| tb.contains(v)).copied().collect();
                if shared.len() == 2 && screen_facing(i) * screen_facing(j) == -1 {
                    expected.push((shared[0].min(shared[1]), shared[0].max(shared[1])));
                }
            }
        }
        expected.sort_unstable();
        let got: Vec<(u32, u32)> = edges
            .iter()
            .map(|e| match e.source {
                EdgeSource::Silhouette { v0, v1, .. } => (v0, v1),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(got, expected);

        // a silhouette of a closed surface is a set of closed screen loops,
        // so every vertex it touches has even degree
        let mut degree: HashMap<u32, usize> = HashMap::new();
        for &(v0, v1) in &got {
            *degree.entry(v0).or_default() += 1;
            *degree.entry(v1).or_default() += 1;
        }
        assert!(degree.values().all(|&d| d % 2 == 0));
    }

    #[test]
    fn disjoint_and_coplanar_triangles_make_no_segment() {
        let ta = [
            DVec3::new(0.0, 0.0, 0.0),
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(0.0, 1.0, 0.0),
        ];
        // far away
        let shift = DVec3::new(5.0, 5.0, 5.0);
        let tb = [ta[0] + shift, ta[1] + shift, ta[2] + shift];
        assert!(intersect_triangles(&ta, &tb).is_none());

        // coplanar overlap
        let tc = [
            DVec3::new(0.2, 0.2, 0.0),
            DVec3::new(0.9, 0.1, 0.0),
            DVec3::new(0.1, 0.9, 0.0),
        ];
        assert!(intersect_triangles(&ta, &tc).is_none());

        // parallel distinct planes
        let lift = DVec3::new(0.0, 0.0, 0.3);
        let td = [tc[0] + lift, tc[1] + lift, tc[2] + lift];
        assert!(intersect_triangles(&ta, &td).is_none());

        // both triangles straddle the other plane but the spans miss
        let te = [
            DVec3::new(3.0, 0.2, -0.5),
            DVec3::new(3.5, 0.2, 0.5),
            DVec3::new(4.0, 0.2, -0.5),
        ];
        assert!(intersect_triangles(&ta, &te).is_none());
    }

    #[test]
    fn perpendicular_triangles_match_hand_and_sampled_intersection() {
        let ta = [
            DVec3::new(0.0, 0.0, 0.0),
            DVec3::new(1.0, 0.0, 0.0),
            DVec3::new(0.0, 1.0, 0.0),
        ];
        let tb = [
            DVec3::new(0.1, 0.2, -0.4),
            DVec3::new(0.9, 0.2, -0.4),
            DVec3::new(0.5, 0.2, 0.6),
        ];
        let seg = intersect_triangles(&ta, &tb).unwrap();
        // hand-computed: b's edges cross z=0 at x = 0.26 and 0.74, inside
        // a's span [0, 0.8] at y = 0.2
        assert!((seg.p - DVec3::new(0.26, 0.2, 0.0)).length() < 1e-7);
        assert!((seg.q - DVec3::new(0.74, 0.2, 0.0)).length() < 1e-7);
        assert!(seg.ends.iter().all(|e| !e.from_first));

        // sampled oracle: points of b near a's plane that fall inside a
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let n = 500;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let (u, v) = (i as f64 / n as f64, j as f64 / n as f64);
                let p = tb[0] + u * (tb[1] - tb[0]) + v * (tb[2] - tb[0]);
                let inside_a = p.x >= 0.0 && p.y >= 0.0 && p.x + p.y <= 1.0;
                if p.z.abs() < 1.5e-3 && inside_a {
                    lo = lo.min(p.x);
                    hi = hi.max(p.x);
                }
            }
        }
        assert!((lo - 0.26).abs() < 3e-3 && (hi - 0.74).abs() < 3e-3);
    }

    fn perturbed(a: &[DVec3; 3], b: &[DVec3; 3], coord: usize, dh: f64) -> ([DVec3; 3], [DVec3; 3]) {
        let (mut pa, mut pb) = (*a, *b);
        let (vert, axis) = (coord / 3, coord % 3);
        if vert < 3 {
            pa[vert][axis] += dh;
        } else {
            pb[vert - 3][axis] += dh;
        }
        (pa, pb)
    }

    #[test]
    fn endpoint_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rand_tri = |rng: &mut ChaCha8Rng, c: DVec3, r: f64| {
            [
                c + DVec3::new(
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                ),
                c + DVec3::new(
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                ),
                c + DVec3::new(
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                    rng.gen_range(-r..r),
                ),
            ]
        };
        let h = 1e-5;
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < 1000 && attempts < 100_000 {
            attempts += 1;
            let ta = rand_tri(&mut rng, DVec3::ZERO, 1.0);
            let centroid = (ta[0] + ta[1] + ta[2]) / 3.0;
            let tb = rand_tri(&mut rng, centroid, 0.9);
            let Some(seg) = intersect_triangles(&ta, &tb) else {
                continue;
            };
            // stay inside one smooth branch: well-conditioned planes, a
            // solid overlap, and the same anchors under every probe
            let n_a = (ta[1] - ta[0]).cross(ta[2] - ta[0]);
            let n_b = (tb[1] - tb[0]).cross(tb[2] - tb[0]);
            if n_a.normalize().dot(n_b.normalize()).abs() > 0.99 {
                continue;
            }
            if (seg.q - seg.p).length() < 1e-2 {
                continue;
            }
            let well_conditioned = seg.ends.iter().all(|anc| {
                let (v, w) = if anc.from_first { (&ta, &tb) } else { (&tb, &ta) };
                let n = (w[1] - w[0]).cross(w[2] - w[0]);
                let e = v[anc.edge[1] as usize] - v[anc.edge[0] as usize];
                n.dot(e).abs() >= 0.05 * n.length() * e.length()
            });
            if !well_conditioned {
                continue;
            }
            let stable = (0..18).all(|k| {
                [h, -h].iter().all(|&dh| {
                    let (pa, pb) = perturbed(&ta, &tb, k, dh);
                    match intersect_triangles(&pa, &pb) {
                        Some(s) => s.ends == seg.ends && (s.q - s.p).length() > 1e-3,
                        None => false,
                    }
                })
            });
            if !stable {
                continue;
            }
            accepted += 1;

            // endpoints lie on both planes
            let scale = ta
                .iter()
                .chain(tb.iter())
                .map(|p| p.abs().max_element())
                .fold(1.0f64, f64::max);
            for pt in [seg.p, seg.q] {
                assert!(n_a.normalize().dot(pt - ta[0]).abs() <= 1e-9 * scale);
                assert!(n_b.normalize().dot(pt - tb[0]).abs() <= 1e-9 * scale);
            }

            for (ei, _) in seg.ends.iter().enumerate() {
                let g = DVec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                let (da, db) = intersect_point_backward(&ta, &tb, seg.ends[ei], g);
                for k in 0..18 {
                    let (pa, pb) = perturbed(&ta, &tb, k, h);
                    let (ma, mb) = perturbed(&ta, &tb, k, -h);
                    let sp = intersect_triangles(&pa, &pb).unwrap();
                    let sm = intersect_triangles(&ma, &mb).unwrap();
                    let (fp, fm) = if ei == 0 { (sp.p, sm.p) } else { (sp.q, sm.q) };
                    let fd = (fp - fm).dot(g) / (2.0 * h);
                    let an = if k < 9 { da[k / 3][k % 3] } else { db[k / 3 - 3][k % 3] };
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "pair {accepted} endpoint {ei} coord {k}: analytic {an} vs fd {fd}"
                    );
                }
            }
        }
        assert!(accepted >= 1000, "only {accepted} usable pairs in {attempts} attempts");
    }

    #[test]
    fn broadphase_is_a_superset_and_culls() {
        let camera = Camera::default();
        let src = "union { sphere(r = 1); translate(0.8, 0.05, 0.03) sphere(r = 1); }";
        let (_, meshes, _, _) = setup(src, &camera);
        let (ma, mb) = (meshes[0].as_ref().unwrap(), meshes[1].as_ref().unwrap());

        let candidates = broadphase(ma, mb);
        let full = ma.triangles.len() * mb.triangles.len();
        assert!(!candidates.is_empty() && candidates.len() < full);

        let mut missing = 0usize;
        let mut actual = 0usize;
        for ta in 0..ma.triangles.len() as u32 {
            for tb in 0..mb.triangles.len() as u32 {
                if intersect_triangles(&tri_verts(ma, ta), &tri_verts(mb, tb)).is_some() {
                    actual += 1;
                    if candidates.binary_search(&(ta, tb)).is_err() {
                        missing += 1;
                    }
                }
            }
        }
        assert!(actual > 0);
        assert_eq!(missing, 0, "{missing} intersecting pairs missed of {actual}");

        let far = "union { sphere(r = 1); translate(5, 0, 0) sphere(r = 1); }";
        let (_, meshes, _, _) = setup(far, &camera);
        assert!(broadphase(meshes[0].as_ref().unwrap(), meshes[1].as_ref().unwrap())
            .is_empty());
    }

    #[test]
    fn union_branches_share_no_product_so_no_intersection_edges() {
        let camera = Camera::default();
        let overlap = "sphere(r = 1); translate(0.8, 0.05, 0.03) sphere(r = 1);";
        let (scene, meshes, _, _) = setup(&format!("union {{ {overlap} }}"), &camera);
        assert!(intersection_edges(&scene, &meshes).is_empty());

        let (scene, meshes, _, _) = setup(&format!("intersection {{ {overlap} }}"), &camera);
        assert!(!intersection_edges(&scene, &meshes).is_empty());
    }

    #[test]
    fn crossing_events_respect_axis_rule_and_geometry() {
        let camera = Camera {
            position: [0.21, 0.17, 4.0],
            resolution: [129, 129],
            ..Camera::default()
        };
        let src = "difference { box(w = 2, h = 2, d = 2); translate(0, 0, 1) sphere(r = 0.8); }";
        let (_, _, _, segments, events) = frame_events(src, &camera);
        assert!(!events.is_empty());
        assert!(events.iter().any(|e| !segments[e.segment as usize].is_silhouette()));

        let vp = camera.view_proj();
        let (w, h) = (camera.resolution[0], camera.resolution[1]);
        let mut seen: Vec<(u32, u32, PairAxis)> = Vec::new();
        for e in &events {
            assert!(e.c >= -0.5 && e.c <= 0.5);
            assert!(e.u >= 0.0 && e.u <= 1.0);
            seen.push((e.x, e.y, e.axis));

            let seg = &segments[e.segment as usize];
            let s0 = screen_from_clip(clip_from_world(&vp, seg.p), w, h);
            let s1 = screen_from_clip(clip_from_world(&vp, seg.q), w, h);
            let d = s1 - s0;
            let expect_axis = if d.x.abs() >= d.y.abs() {
                PairAxis::Vertical
            } else {
                PairAxis::Horizontal
            };
            assert_eq!(e.axis, expect_axis);

            // the stored u reproduces the crossing point: on the pixel-pair
            // boundary line, offset c from the pair midpoint
            let at = s0 + e.u * d;
            match e.axis {
                PairAxis::Vertical => {
                    assert!((at.x - (e.x as f64 + 0.5)).abs() < 1e-9);
                    assert!((at.y - (e.y as f64 + 1.0) - e.c).abs() < 1e-9);
                }
                PairAxis::Horizontal => {
                    assert!((at.y - (e.y as f64 + 0.5)).abs() < 1e-9);
                    assert!((at.x - (e.x as f64 + 1.0) - e.c).abs() < 1e-9);
                }
            }
        }
        let mut dedup = seen.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), seen.len(), "one event per pixel pair");
    }

    #[test]
    fn occluded_silhouettes_emit_no_events() {
        let camera = Camera {
            position: [0.0, 0.0, 4.0],
            resolution: [128, 128],
            ..Camera::default()
        };
        let src = "union { box(w = 2, h = 2, d = 2); translate(0, 0, -3) sphere(r = 0.5); }";
        let (_, _, _, segments, events) = frame_events(src, &camera);

        assert!(segments.iter().any(|s| s.owners().0 == 1), "hidden sphere still has edges");
        assert!(
            events.iter().all(|e| segments[e.segment as usize].owners().0 == 0),
            "every surviving event belongs to the box"
        );
        assert!(!events.is_empty());
    }

    #[test]
    fn rim_events_cover_oracle_boundary_pixels() {
        let camera = Camera {
            position: [0.3, 0.25, 4.0],
            resolution: [256, 256],
            ..Camera::default()
        };
        let src = "difference {
            box(w = 2, h = 2, d = 2);
            translate(0.0137, 0.0071, 0.0031) rotate(1.5707963267948966, 0, 0)
                cylinder(rt = 0.6, rb = 0.6, h = 3);
        }";
        let (scene, meshes, _, _, events) = frame_events(src, &camera);

        let oracle = raycast_reference(&scene, &meshes, &camera, Shading::Mask, [0.0; 3]);
        let (w, h) = (camera.resolution[0] as usize, camera.resolution[1] as usize);
        let id_at = |x: usize, y: usize| oracle.winner[y * w + x].map(|(id, _)| id as usize);

        // edge pixels: winner id changes to a 4-neighbor, both ids live in
        // the same product (boundaries against the background do not count)
        let mut edge_pixels: Vec<(usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let Some(a) = id_at(x, y) else { continue };
                let mut boundary = false;
                for (nx, ny) in [
                    (x.wrapping_sub(1), y),
                    (x + 1, y),
                    (x, y.wrapping_sub(1)),
                    (x, y + 1),
                ] {
                    if nx >= w || ny >= h {
                        continue;
                    }
                    if let Some(b) = id_at(nx, ny) {
                        if a != b && co_occur(&scene, a, b) {
                            boundary = true;
                        }
                    }
                }
                if boundary {
                    edge_pixels.push((x, y));
                }
            }
        }
        assert!(edge_pixels.len() > 100, "rim should span many pixels");

        let mut covered: Vec<(usize, usize)> = Vec::new();
        for e in &events {
            covered.push((e.x as usize, e.y as usize));
            let o = e.other();
            covered.push((o.0 as usize, o.1 as usize));
        }
        covered.sort_unstable();
        covered.dedup();
        let hit = edge_pixels
            .iter()
            .filter(|p| covered.binary_search(p).is_ok())
            .count();
        let coverage = hit as f64 / edge_pixels.len() as f64;
        assert!(coverage >= 0.95, "coverage {coverage:.3} over {} pixels", edge_pixels.len());
    }

    #[test]
    fn crossing_world_gradients_match_finite_differences() {
        let camera = Camera {
            position: [0.21, 0.17, 4.0],
            resolution: [129, 129],
            ..Camera::default()
        };
        let src = "difference { box(w = 2, h = 2, d = 2); translate(0, 0, 1) sphere(r = 0.8); }";
        let (_, _, _, segments, events) = frame_events(src, &camera);
        let (w, h) = (camera.resolution[0], camera.resolution[1]);
        let vp = camera.view_proj();

        // the walk's discrete pair choice is fixed; c is then an explicit
        // function of the two projected endpoints
        let c_of = |p: DVec3, q: DVec3, e: &CrossingEvent| -> f64 {
            let s0 = screen_from_clip(clip_from_world(&vp, p), w, h);
            let s1 = screen_from_clip(clip_from_world(&vp, q), w, h);
            match e.axis {
                PairAxis::Vertical => {
                    let u = (e.x as f64 + 0.5 - s0.x) / (s1.x - s0.x);
                    s0.y + u * (s1.y - s0.y) - (e.y as f64 + 1.0)
                }
                PairAxis::Horizontal => {
                    let u = (e.y as f64 + 0.5 - s0.y) / (s1.y - s0.y);
                    s0.x + u * (s1.x - s0.x) - (e.x as f64 + 1.0)
                }
            }
        };

        let step = (events.len() / 60).max(1);
        let hh = 1e-6;
        let mut checked = 0;
        for e in events.iter().step_by(step) {
            let seg = &segments[e.segment as usize];
            let (d_p, d_q) = crossing_world_backward(seg, e, &camera, w, h, 1.0);
            for which in 0..2 {
                for axis in 0..3 {
                    let mut delta = DVec3::ZERO;
                    delta[axis] = hh;
                    let (pu, qu) = if which == 0 { (seg.p + delta, seg.q) } else { (seg.p, seg.q + delta) };
                    let (pd, qd) = if which == 0 { (seg.p - delta, seg.q) } else { (seg.p, seg.q - delta) };
                    let fd = (c_of(pu, qu, e) - c_of(pd, qd, e)) / (2.0 * hh);
                    let an = if which == 0 { d_p[axis] } else { d_q[axis] };
                    assert!(
                        (an - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                        "event at ({},{}) endpoint {which} axis {axis}: {an} vs {fd}",
                        e.x,
                        e.y
                    );
                }
            }
            checked += 1;
        }
        assert!(checked >= 30);
    }

    #[test]
    fn segment_vertex_routing_hits_generating_vertices_only() {
        use crate::raster::MeshGrads;

        let camera = Camera {
            position: [0.21, 0.17, 4.0],
            resolution: [65, 65],
            ..Camera::default()
        };
        let src = "difference { box(w = 2, h = 2, d = 2); translate(0, 0, 1) sphere(r = 0.8); }";
        let (_, meshes, projected, segments, _) = frame_events(src, &camera);
        let lookup = mesh_lookup(&projected);
        let fresh = || -> Vec<MeshGrads> {
            meshes.iter().flatten().map(MeshGrads::new).collect()
        };

        let sil = segments.iter().find(|s| s.is_silhouette()).unwrap();
        let mut grads = fresh();
        let (d_p, d_q) = (DVec3::new(1.0, 2.0, 3.0), DVec3::new(4.0, 5.0, 6.0));
        segment_vertex_backward(sil, d_p, d_q, &meshes, &lookup, &mut grads);
        let EdgeSource::Silhouette { prim, v0, v1 } = sil.source else { unreachable!() };
        let mi = lookup[prim].unwrap();
        assert_eq!(grads[mi].d_world[v0 as usize], d_p);
        assert_eq!(grads[mi].d_world[v1 as usize], d_q);
        let nonzero: usize = grads
            .iter()
            .map(|g| g.d_world.iter().filter(|v| **v != DVec3::ZERO).count())
            .sum();
        assert_eq!(nonzero, 2);

        let ix = segments.iter().find(|s| !s.is_silhouette()).unwrap();
        let mut grads = fresh();
        segment_vertex_backward(ix, d_p, d_q, &meshes, &lookup, &mut grads);
        let EdgeSource::Intersection { prim_a, tri_a, prim_b, tri_b, ends } = ix.source else {
            unreachable!()
        };
        let (ma, mb) = (meshes[prim_a].as_ref().unwrap(), meshes[prim_b].as_ref().unwrap());
        let (va, vb) = (tri_verts(ma, tri_a), tri_verts(mb, tri_b));
        let mut expect_a = [DVec3::ZERO; 3];
        let mut expect_b = [DVec3::ZERO; 3];
        for (anchor, d) in ends.iter().zip([d_p, d_q]) {
            let (da, db) = intersect_point_backward(&va, &vb, *anchor, d);
            for k in 0..3 {
                expect_a[k] += da[k];
                expect_b[k] += db[k];
            }
        }
        let (ta, tb) = (ma.triangles[tri_a as usize], mb.triangles[tri_b as usize]);
        let (ga, gb) = (lookup[prim_a].unwrap(), lookup[prim_b].unwrap());
        for k in 0..3 {
            assert_eq!(grads[ga].d_world[ta[k] as usize], expect_a[k]);
            assert_eq!(grads[gb].d_world[tb[k] as usize], expect_b[k]);
        }
        let touched: Vec<usize> = grads
            .iter()
            .map(|g| g.d_world.iter().filter(|v| **v != DVec3::ZERO).count())
            .collect();
        assert!(touched.iter().sum::<usize>() <= 6);
    }

    #[test]
    fn blend_changes_only_event_pixels_and_stays_in_range() {
        let camera = Camera {
            position: [0.21, 0.17, 4.0],
            resolution: [129, 129],
            ..Camera::default()
        };
        let src = "difference {
            color(0.9, 0.2, 0.1) box(w = 2, h = 2, d = 2);
            color(0.1, 0.3, 0.9) translate(0, 0, 1) sphere(r = 0.8);
        }";
        let (scene, meshes, projected, fragbuf) = setup(src, &camera);
        let eps_z = epsilon_z(camera.near, camera.far);
        let (comp, image) = composite(
            &scene,
            &projected,
            &meshes,
            &fragbuf,
            eps_z,
            Shading::Albedo,
            [0.0; 3],
        );
        let segments = extract_edges(&scene, &meshes, &projected);
        let events = visible_crossings(&segments, &projected, &comp, &camera, 2.0 * eps_z);
        assert!(!events.is_empty());

        let mut blended = image.clone();
        let records = crate::aa::blend(&mut blended, &events);
        let mut updated: Vec<(u32, u32)> = records.iter().map(|r| r.updated).collect();
        updated.sort_unstable();
        updated.dedup();

        let mut changed = 0;
        for y in 0..image.height {
            for x in 0..image.width {
                let (a, b) = (image.get(x, y), blended.get(x, y));
                if updated.binary_search(&(x as u32, y as u32)).is_err() {
                    assert_eq!(a, b, "non-event pixel ({x},{y}) changed");
                } else if a != b {
                    changed += 1;
                }
                assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
        assert!(changed > 50, "only {changed} pixels blended");
    }

    #[test]
    fn debug_dumps_have_expected_shape() {
        let camera = Camera {
            position: [0.21, 0.17, 4.0],
            resolution: [65, 65],
            ..Camera::default()
        };
        let src = "difference { box(w = 2, h = 2, d = 2); translate(0, 0, 1) sphere(r = 0.8); }";
        let (_, _, _, segments, events) = frame_events(src, &camera);

        let obj = segments_obj(&segments);
        let v_lines = obj.lines().filter(|l| l.starts_with("v ")).count();
        let l_lines = obj.lines().filter(|l| l.starts_with("l ")).count();
        assert_eq!(v_lines, 2 * segments.len());
        assert_eq!(l_lines, segments.len());

        let csv = events_csv(&events, &segments);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,y,axis,c,kind"));
        assert_eq!(lines.count(), events.len());
        assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 5));
    }
}

