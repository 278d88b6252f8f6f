//! Projection and layered rasterization.
//!
//! Every triangle of every primitive is rasterized into a per-pixel fragment
//! list (a software A-buffer): boolean classification needs every layer, so
//! there is no early depth rejection. Interpolation is perspective-correct
//! and carries an analytic backward pass to vertex attributes, vertex screen
//! positions, and vertex depths, which is what makes the renderer
//! differentiable end to end.

use glam::{DMat4, DVec2, DVec3, DVec4};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::mesh::TriMesh;

/// One rasterized surface sample.
///
/// `triangle_index` refers to the source mesh triangle; `raster_tri` to the
/// projected (possibly near-clipped) triangle it was sampled from.
/// Barycentrics are affine screen-space weights over the raster triangle's
/// corners: a value at the fragment is (1-u-v, u, v) weighted, with
/// perspective correction applied during interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub primitive_id: u32,
    pub triangle_index: u32,
    pub raster_tri: u32,
    /// Eye-space depth, positive into the screen.
    pub depth: f64,
    pub u: f64,
    pub v: f64,
    pub front: bool,
}

/// Per-pixel fragment lists, row-major from the top row, each sorted by
/// (depth, primitive_id, triangle_index).
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Vec<Fragment>>,
}

impl FragmentBuffer {
    pub fn frags(&self, x: u32, y: u32) -> &[Fragment] {
        &self.pixels[(y * self.width + x) as usize]
    }
}

/// Where a raster-triangle corner came from: a source vertex, or a point at
/// parameter `t` along the source edge `a -> b` introduced by near-plane
/// clipping. Slots index into the source triangle (0..3).
#[derive(Debug, Clone, Copy)]
pub enum CornerSrc {
    Vertex(u8),
    Clipped { a: u8, b: u8, t: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Corner {
    pub clip: DVec4,
    pub screen: DVec2,
    pub src: CornerSrc,
}

#[derive(Debug, Clone)]
pub struct RasterTri {
    pub source: u32,
    pub corners: [Corner; 3],
    /// Twice the signed screen area; negative means front-facing.
    pub area2: f64,
    pub front: bool,
}

/// A mesh after projection: per-vertex clip positions plus the raster
/// triangle list (near-clipped triangles appear as one or two sub-triangles
/// referencing their source).
#[derive(Debug, Clone)]
pub struct ProjectedMesh {
    pub primitive_id: usize,
    pub vert_clip: Vec<DVec4>,
    pub vert_screen: Vec<DVec2>,
    pub tris: Vec<RasterTri>,
    /// Per source triangle: +1 front, -1 back, 0 degenerate or fully clipped.
    pub facing_of_source: Vec<i8>,
}

pub fn clip_from_world(vp: &DMat4, p: DVec3) -> DVec4 {
    *vp * p.extend(1.0)
}

/// Screen coordinates in pixels, origin at the top-left corner, pixel
/// centers at (x+0.5, y+0.5).
pub fn screen_from_clip(c: DVec4, width: u32, height: u32) -> DVec2 {
    DVec2::new(
        (c.x / c.w + 1.0) * 0.5 * width as f64,
        (1.0 - c.y / c.w) * 0.5 * height as f64,
    )
}

/// Backward through `screen_from_clip`: clip adjoint from a screen adjoint.
pub fn screen_from_clip_backward(c: DVec4, width: u32, height: u32, d_screen: DVec2) -> DVec4 {
    let (hw, hh) = (0.5 * width as f64, 0.5 * height as f64);
    DVec4::new(
        d_screen.x * hw / c.w,
        -d_screen.y * hh / c.w,
        0.0,
        -d_screen.x * hw * c.x / (c.w * c.w) + d_screen.y * hh * c.y / (c.w * c.w),
    )
}

/// World-position adjoint from a clip-position adjoint (the projection is
/// linear in homogeneous world coordinates).
pub fn world_grad_from_clip(vp: &DMat4, d_clip: DVec4) -> DVec3 {
    (vp.transpose() * d_clip).truncate()
}

/// Eye depth of a clip-space point (positive into the screen).
#[inline]
pub fn clip_depth(c: DVec4) -> f64 {
    c.w
}

pub fn pixel_center(x: u32, y: u32) -> DVec2 {
    DVec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

fn corner(clip: DVec4, src: CornerSrc, width: u32, height: u32) -> Corner {
    Corner { clip, screen: screen_from_clip(clip, width, height), src }
}

/// Projects a mesh and clips its triangles against the near plane. A
/// triangle straddling the plane becomes one or two sub-triangles whose new
/// corners remember the source edge and crossing parameter, so adjoints can
/// flow back through the clip.
pub fn project(mesh: &TriMesh, camera: &Camera) -> ProjectedMesh {
    let vp = camera.view_proj();
    let [width, height] = camera.resolution;
    let near = camera.near;

    let vert_clip: Vec<DVec4> = mesh
        .positions
        .iter()
        .map(|&p| clip_from_world(&vp, p))
        .collect();
    let vert_screen: Vec<DVec2> = vert_clip
        .iter()
        .map(|&c| {
            if c.w > near * 0.5 {
                screen_from_clip(c, width, height)
            } else {
                DVec2::splat(f64::NAN)
            }
        })
        .collect();

    let mut tris = Vec::with_capacity(mesh.triangles.len());
    let mut facing_of_source = vec![0i8; mesh.triangles.len()];
    for (ti, tri) in mesh.triangles.iter().enumerate() {
        let clip = [
            vert_clip[tri[0] as usize],
            vert_clip[tri[1] as usize],
            vert_clip[tri[2] as usize],
        ];
        // signed distance to the near plane along w
        let s = [clip[0].w - near, clip[1].w - near, clip[2].w - near];
        let inside = s.map(|si| si > 0.0);
        let n_in = inside.iter().filter(|&&b| b).count();
        if n_in == 0 {
            continue;
        }
        // clip polygon in source order; corners carry their provenance
        let mut poly: Vec<Corner> = Vec::with_capacity(4);
        if n_in == 3 {
            for k in 0..3 {
                poly.push(corner(clip[k], CornerSrc::Vertex(k as u8), width, height));
            }
        } else {
            for k in 0..3usize {
                let j = (k + 1) % 3;
                if inside[k] {
                    poly.push(corner(clip[k], CornerSrc::Vertex(k as u8), width, height));
                }
                if inside[k] != inside[j] {
                    let t = s[k] / (s[k] - s[j]);
                    let c = clip[k] + t * (clip[j] - clip[k]);
                    poly.push(corner(
                        c,
                        CornerSrc::Clipped { a: k as u8, b: j as u8, t },
                        width,
                        height,
                    ));
                }
            }
        }
        for f in 1..poly.len() - 1 {
            let corners = [poly[0], poly[f], poly[f + 1]];
            let area2 = (corners[1].screen - corners[0].screen)
                .perp_dot(corners[2].screen - corners[0].screen);
            let front = area2 < 0.0;
            if area2 != 0.0 && facing_of_source[ti] == 0 {
                facing_of_source[ti] = if front { 1 } else { -1 };
            }
            tris.push(RasterTri { source: ti as u32, corners, area2, front });
        }
    }

    ProjectedMesh {
        primitive_id: mesh.primitive_id,
        vert_clip,
        vert_screen,
        tris,
        facing_of_source,
    }
}

struct EdgeEval {
    /// Canonical endpoints (lexicographic order) shared exactly by the two
    /// triangles adjacent to this edge, so coverage decisions agree and
    /// every boundary pixel is claimed exactly once.
    origin: DVec2,
    delta: DVec2,
    /// Sign mapping the canonical evaluation back to source edge direction.
    sign: f64,
    /// Boundary pixels count as covered only on top and left edges.
    top_left: bool,
}

impl EdgeEval {
    /// Edge opposite corner slot k, traversed in source order (k+1 -> k+2);
    /// `orient` is the sign making edge values positive inside.
    fn new(c: &[DVec2; 3], k: usize, orient: f64) -> Self {
        let u = c[(k + 1) % 3];
        let v = c[(k + 2) % 3];
        let (origin, other, sign) = if (u.x, u.y) <= (v.x, v.y) {
            (u, v, 1.0)
        } else {
            (v, u, -1.0)
        };
        let traversal = orient * sign * (other - origin);
        let top_left = traversal.y < 0.0 || (traversal.y == 0.0 && traversal.x > 0.0);
        EdgeEval { origin, delta: other - origin, sign, top_left }
    }

    /// Edge value in source direction; multiply by orient for the inside test.
    #[inline]
    fn value(&self, p: DVec2) -> f64 {
        self.sign * self.delta.perp_dot(p - self.origin)
    }
}

const BAND_ROWS: u32 = 16;

/// Screen area (px^2) below which a triangle is not rasterized. Caps of
/// extrusions with straight profile runs legitimately contain near-zero-area
/// slivers (kept for edge pairing); such a triangle covers a pixel center
/// only through rounding accidents, and dividing edge values by its area
/// yields pure cancellation noise.
const MIN_RASTER_AREA: f64 = 1e-6;

/// Rasterizes every projected triangle of every mesh into per-pixel
/// fragment lists. Parallel over horizontal bands; band results are
/// concatenated in fixed order, and per-pixel lists are sorted, so the
/// output is identical across runs and worker counts.
pub fn rasterize_layers(
    meshes: &[ProjectedMesh],
    width: u32,
    height: u32,
    near: f64,
    far: f64,
) -> FragmentBuffer {
    let n_bands = height.div_ceil(BAND_ROWS);
    let bands: Vec<Vec<Vec<Fragment>>> = (0..n_bands)
        .into_par_iter()
        .map(|band| {
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height);
            let mut pixels: Vec<Vec<Fragment>> =
                vec![Vec::new(); ((y1 - y0) * width) as usize];
            for pm in meshes {
                for (rti, rt) in pm.tris.iter().enumerate() {
                    raster_one(pm, rti as u32, rt, y0, y1, width, near, far, &mut pixels);
                }
            }
            for list in &mut pixels {
                list.sort_unstable_by(|a, b| {
                    a.depth
                        .partial_cmp(&b.depth)
                        .unwrap()
                        .then(a.primitive_id.cmp(&b.primitive_id))
                        .then(a.triangle_index.cmp(&b.triangle_index))
                });
            }
            pixels
        })
        .collect();
    FragmentBuffer { width, height, pixels: bands.concat() }
}

#[allow(clippy::too_many_arguments)]
fn raster_one(
    pm: &ProjectedMesh,
    rti: u32,
    rt: &RasterTri,
    y0: u32,
    y1: u32,
    width: u32,
    near: f64,
    far: f64,
    pixels: &mut [Vec<Fragment>],
) {
    if rt.area2.abs() < MIN_RASTER_AREA {
        return;
    }
    let c = [rt.corners[0].screen, rt.corners[1].screen, rt.corners[2].screen];
    let orient = if rt.area2 > 0.0 { 1.0 } else { -1.0 };
    let edges = [
        EdgeEval::new(&c, 0, orient),
        EdgeEval::new(&c, 1, orient),
        EdgeEval::new(&c, 2, orient),
    ];
    let inv_w = [
        1.0 / rt.corners[0].clip.w,
        1.0 / rt.corners[1].clip.w,
        1.0 / rt.corners[2].clip.w,
    ];

    let (min, max) = c.iter().fold((c[0], c[0]), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let x_lo = (min.x - 0.5).ceil().max(0.0) as u32;
    let x_hi = ((max.x - 0.5).floor() as i64).min(width as i64 - 1);
    let y_lo = ((min.y - 0.5).ceil().max(0.0) as u32).max(y0);
    let y_hi = ((max.y - 0.5).floor() as i64).min(y1 as i64 - 1);
    if x_hi < x_lo as i64 || y_hi < y_lo as i64 {
        return;
    }

    for y in y_lo..=y_hi as u32 {
        for x in x_lo..=x_hi as u32 {
            let p = pixel_center(x, y);
            let mut vals = [0.0; 3];
            let mut covered = true;
            for k in 0..3 {
                let val = edges[k].value(p);
                let oriented = orient * val;
                if oriented < 0.0 || (oriented == 0.0 && !edges[k].top_left) {
                    covered = false;
                    break;
                }
                vals[k] = val;
            }
            if !covered {
                continue;
            }
            let u = vals[1] / rt.area2;
            let v = vals[2] / rt.area2;
            let depth = 1.0 / ((1.0 - u - v) * inv_w[0] + u * inv_w[1] + v * inv_w[2]);
            if depth <= near || depth >= far {
                continue;
            }
            pixels[((y - y0) * width + x) as usize].push(Fragment {
                primitive_id: pm.primitive_id as u32,
                triangle_index: rt.source,
                raster_tri: rti,
                depth,
                u,
                v,
                front: rt.front,
            });
        }
    }
}

/// Adjoint accumulators for one projected mesh. `d_clip` collects clip-space
/// vertex adjoints (screen and depth paths); `d_world` collects paths that
/// reach world space directly; `finish` merges both into world-space
/// position adjoints plus corner-normal adjoints, ready for the
/// tessellation backward.
#[derive(Debug, Clone)]
pub struct MeshGrads {
    pub d_clip: Vec<DVec4>,
    pub d_world: Vec<DVec3>,
    pub d_corner_normals: Vec<[DVec3; 3]>,
}

impl MeshGrads {
    pub fn new(mesh: &TriMesh) -> Self {
        MeshGrads {
            d_clip: vec![DVec4::ZERO; mesh.positions.len()],
            d_world: vec![DVec3::ZERO; mesh.positions.len()],
            d_corner_normals: vec![[DVec3::ZERO; 3]; mesh.triangles.len()],
        }
    }

    pub fn finish(&self, camera: &Camera) -> (Vec<DVec3>, Vec<[DVec3; 3]>) {
        let vp = camera.view_proj();
        let d_pos = self
            .d_clip
            .iter()
            .zip(&self.d_world)
            .map(|(&dc, &dw)| dw + world_grad_from_clip(&vp, dc))
            .collect();
        (d_pos, self.d_corner_normals.clone())
    }

}

/// Per-corner attribute values of a raster triangle, resolving clipped
/// corners by linear interpolation along the source edge.
fn corner_attrs(rt: &RasterTri, src: &[DVec3; 3]) -> [DVec3; 3] {
    rt.corners.map(|c| match c.src {
        CornerSrc::Vertex(s) => src[s as usize],
        CornerSrc::Clipped { a, b, t } => {
            (1.0 - t) * src[a as usize] + t * src[b as usize]
        }
    })
}

/// Perspective-correct interpolation of per-corner values at a fragment.
pub fn interpolate(pm: &ProjectedMesh, frag: &Fragment, src: &[DVec3; 3]) -> DVec3 {
    let rt = &pm.tris[frag.raster_tri as usize];
    let attr = corner_attrs(rt, src);
    let lam = [1.0 - frag.u - frag.v, frag.u, frag.v];
    let mut num = DVec3::ZERO;
    let mut den = 0.0;
    for k in 0..3 {
        let lw = lam[k] / rt.corners[k].clip.w;
        num += lw * attr[k];
        den += lw;
    }
    num / den
}

/// Interpolated world-space unit normal at a fragment.
pub fn fragment_normal(pm: &ProjectedMesh, mesh: &TriMesh, frag: &Fragment) -> DVec3 {
    let rt = &pm.tris[frag.raster_tri as usize];
    let n = interpolate(pm, frag, &mesh.normals[rt.source as usize]);
    n.try_normalize().unwrap_or(DVec3::Z)
}

/// Near-zero screen area below which position gradients are dropped and the
/// attribute adjoint goes to the nearest corner.
const DEGENERATE_AREA: f64 = 1e-12;

/// Backward of [`fragment_normal`]: accumulates corner-normal adjoints and,
/// through the barycentric and perspective terms, screen-position and depth
/// adjoints of the triangle's vertices.
#[allow(clippy::too_many_arguments)]
pub fn fragment_normal_backward(
    pm: &ProjectedMesh,
    mesh: &TriMesh,
    frag: &Fragment,
    pixel: DVec2,
    camera: &Camera,
    d_unit: DVec3,
    grads: &mut MeshGrads,
) {
    let rt = &pm.tris[frag.raster_tri as usize];
    let src = &mesh.normals[rt.source as usize];
    let attr = corner_attrs(rt, src);
    let lam = [1.0 - frag.u - frag.v, frag.u, frag.v];
    let w = [
        rt.corners[0].clip.w,
        rt.corners[1].clip.w,
        rt.corners[2].clip.w,
    ];
    let mut num = DVec3::ZERO;
    let mut den = 0.0;
    for k in 0..3 {
        let lw = lam[k] / w[k];
        num += lw * attr[k];
        den += lw;
    }
    let value = num / den;
    let d_value = match value.try_normalize() {
        Some(_) => {
            let len = value.length();
            let n = value / len;
            (d_unit - n * n.dot(d_unit)) / len
        }
        None => return,
    };

    if rt.area2.abs() < DEGENERATE_AREA {
        let nearest = (0..3).max_by(|&a, &b| lam[a].partial_cmp(&lam[b]).unwrap()).unwrap();
        corner_backward(grads, pm, mesh, rt, nearest, camera, DVec2::ZERO, 0.0, d_value);
        return;
    }

    let mut d_lam = [0.0; 3];
    let mut d_w = [0.0; 3];
    let mut d_attr = [DVec3::ZERO; 3];
    for k in 0..3 {
        d_attr[k] = d_value * (lam[k] / (w[k] * den));
        d_lam[k] = d_value.dot(attr[k] - value) / (w[k] * den);
        d_w[k] = d_value.dot(value - attr[k]) * lam[k] / (w[k] * w[k] * den);
    }
    let d_u = d_lam[1] - d_lam[0];
    let d_v = d_lam[2] - d_lam[0];

    // u = E1/T, v = E2/T with Ek the edge function opposite corner k and T
    // twice the signed area.
    let c = [rt.corners[0].screen, rt.corners[1].screen, rt.corners[2].screen];
    let t_area = rt.area2;
    let perp = |a: DVec2| DVec2::new(a.y, -a.x);
    // dT/dc_j
    let d_t_c = [perp(c[1] - c[2]), perp(c[2] - c[0]), perp(c[0] - c[1])];
    // dEk/dc_j: edge k runs from c_{k+1} to c_{k+2}
    let d_e = |k: usize, j: usize| -> DVec2 {
        let (i1, i2) = ((k + 1) % 3, (k + 2) % 3);
        if j == i2 {
            perp(pixel - c[i1])
        } else if j == i1 {
            perp(c[i2] - pixel)
        } else {
            DVec2::ZERO
        }
    };
    for j in 0..3 {
        let du_dc = (d_e(1, j) - frag.u * d_t_c[j]) / t_area;
        let dv_dc = (d_e(2, j) - frag.v * d_t_c[j]) / t_area;
        let d_screen = d_u * du_dc + d_v * dv_dc;
        corner_backward(grads, pm, mesh, rt, j, camera, d_screen, d_w[j], d_attr[j]);
    }
}

/// Routes a corner adjoint (screen position, depth, attribute) back to
/// source vertices. For clipped corners this includes the dependence of the
/// crossing parameter t on the endpoint depths.
#[allow(clippy::too_many_arguments)]
fn corner_backward(
    grads: &mut MeshGrads,
    pm: &ProjectedMesh,
    mesh: &TriMesh,
    rt: &RasterTri,
    slot: usize,
    camera: &Camera,
    d_screen: DVec2,
    d_w: f64,
    d_attr: DVec3,
) {
    let [width, height] = camera.resolution;
    let near = camera.near;
    let cn = &rt.corners[slot];
    let tri = mesh.triangles[rt.source as usize];
    let src_attr = &mesh.normals[rt.source as usize];
    let mut d_c = screen_from_clip_backward(cn.clip, width, height, d_screen);
    d_c.w += d_w;
    match cn.src {
        CornerSrc::Vertex(s) => {
            grads.d_corner_normals[rt.source as usize][s as usize] += d_attr;
            grads.d_clip[tri[s as usize] as usize] += d_c;
        }
        CornerSrc::Clipped { a, b, t } => {
            let (a, b) = (a as usize, b as usize);
            let (va, vb) = (tri[a] as usize, tri[b] as usize);
            grads.d_corner_normals[rt.source as usize][a] += (1.0 - t) * d_attr;
            grads.d_corner_normals[rt.source as usize][b] += t * d_attr;
            let ca = pm.vert_clip[va];
            let cb = pm.vert_clip[vb];
            let mut d_t = d_attr.dot(src_attr[b] - src_attr[a]);
            d_t += d_c.dot(cb - ca);
            grads.d_clip[va] += (1.0 - t) * d_c;
            grads.d_clip[vb] += t * d_c;
            // t = sa / (sa - sb), s = clip.w - near
            let (sa, sb) = (ca.w - near, cb.w - near);
            let denom = (sa - sb) * (sa - sb);
            grads.d_clip[va].w += d_t * (-sb / denom);
            grads.d_clip[vb].w += d_t * (sa / denom);
        }
    }
}
