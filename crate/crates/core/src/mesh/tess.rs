//! Tessellation of primitives into fixed-topology meshes, and the backward
//! pass from mesh adjoints to parameter adjoints.
//!
//! A [`Tessellation`] is created once per scene: it freezes everything that
//! must not change as parameters move (triangle connectivity, the extrude cap
//! triangulation, profile orientation). Rebuilding meshes at new parameter
//! values reuses the frozen topology, so `topology_hash` is invariant across
//! parameter updates by construction.

use glam::{DMat3, DVec3};
use thiserror::Error;

use super::earclip::{ear_clip, is_simple, signed_area2};
use super::{topology_hash, TriMesh};
use crate::scene::{BezierLoop, ParamTable, PrimitiveKind, PrimitiveSpec, Scene};

/// Latitude bands and longitude slices of the UV sphere.
pub const SPHERE_RES: usize = 16;
/// Rim samples per cylinder circle.
pub const CYLINDER_SEGMENTS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("primitive {primitive}: extrude profile needs at least 3 boundary samples")]
    DegenerateProfile { primitive: usize },
    #[error(
        "primitive {primitive}: extrude profile is degenerate or self-intersects at its initial parameter values"
    )]
    NonSimpleProfile { primitive: usize },
    #[error("primitive {primitive}: extrude cap triangulation failed")]
    CapTriangulation { primitive: usize },
}

#[derive(Debug, Clone)]
enum ShapeTopo {
    Sphere,
    Cylinder,
    Box,
    Extrude {
        ring: usize,
        /// Sample order was flipped so the polygon is counter-clockwise in
        /// the (x, z) plane. Fixed at construction.
        reversed: bool,
    },
}

#[derive(Debug, Clone)]
struct PrimTopo {
    shape: ShapeTopo,
    triangles: Vec<[u32; 3]>,
    hash: u64,
}

/// Frozen per-scene topology. Build meshes at the current parameter values
/// with [`Tessellation::build`]; push mesh adjoints back with
/// [`Tessellation::backward_one`].
#[derive(Debug, Clone)]
pub struct Tessellation {
    topos: Vec<PrimTopo>,
}

fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * t * s * s, 3.0 * t * t * s, t * t * t]
}

/// Profile boundary samples in authored order: segment s contributes
/// `samples` points at t = j/samples (its endpoint is the next segment's
/// t = 0 sample).
fn sample_ring(profile: &BezierLoop, samples: usize, table: &ParamTable) -> Vec<[f64; 2]> {
    let mut ring = Vec::with_capacity(profile.segment_count() * samples);
    for s in 0..profile.segment_count() {
        let ctrl = profile.control_points(s, table);
        for j in 0..samples {
            let b = bernstein(j as f64 / samples as f64);
            let mut p = [0.0; 2];
            for i in 0..4 {
                p[0] += b[i] * ctrl[i][0];
                p[1] += b[i] * ctrl[i][1];
            }
            ring.push(p);
        }
    }
    ring
}

/// Maps an oriented ring index to the authored sample index.
fn authored_index(ring: usize, reversed: bool, k: usize) -> usize {
    if reversed {
        (ring - k) % ring
    } else {
        k
    }
}

fn outer(a: DVec3, b: DVec3) -> DMat3 {
    DMat3::from_cols(a * b.x, a * b.y, a * b.z)
}

fn frobenius(a: DMat3, b: DMat3) -> f64 {
    a.col(0).dot(b.col(0)) + a.col(1).dot(b.col(1)) + a.col(2).dot(b.col(2))
}

/// Backward through v = u / |u|: returns dL/du given dL/dv.
fn normalize_backward(u: DVec3, d_unit: DVec3) -> DVec3 {
    let len = u.length();
    let n = u / len;
    (d_unit - n * n.dot(d_unit)) / len
}

// Fixed connectivity builders. Vertex layouts are documented inline; the
// corner-normal assignment in build/backward relies on the triangle order
// established here.

/// Sphere layout: vertex 0 = north pole (+y), then bands i = 1..SPHERE_RES of
/// SPHERE_RES vertices each, then the south pole. Triangles: top cap, band
/// quads (two triangles each), bottom cap.
fn sphere_triangles() -> Vec<[u32; 3]> {
    let (res, lon) = (SPHERE_RES as u32, SPHERE_RES as u32);
    let ring = |i: u32, j: u32| 1 + (i - 1) * lon + (j % lon);
    let south = 1 + (res - 1) * lon;
    let mut tris = Vec::new();
    for j in 0..lon {
        tris.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..res - 1 {
        for j in 0..lon {
            let (t0, t1) = (ring(i, j), ring(i, j + 1));
            let (b0, b1) = (ring(i + 1, j), ring(i + 1, j + 1));
            tris.push([b0, t1, b1]);
            tris.push([b0, t0, t1]);
        }
    }
    for j in 0..lon {
        tris.push([south, ring(res - 1, j), ring(res - 1, j + 1)]);
    }
    tris
}

fn sphere_directions() -> Vec<DVec3> {
    let res = SPHERE_RES;
    let mut dirs = Vec::with_capacity((res - 1) * res + 2);
    dirs.push(DVec3::Y);
    for i in 1..res {
        let theta = std::f64::consts::PI * i as f64 / res as f64;
        for j in 0..res {
            let phi = std::f64::consts::TAU * j as f64 / res as f64;
            dirs.push(DVec3::new(
                theta.sin() * phi.cos(),
                theta.cos(),
                theta.sin() * phi.sin(),
            ));
        }
    }
    dirs.push(DVec3::NEG_Y);
    dirs
}

/// Cylinder layout: vertices 0..16 bottom rim, 16..32 top rim, 32 bottom
/// center, 33 top center. Triangles: 32 side, 16 bottom cap, 16 top cap.
fn cylinder_triangles() -> Vec<[u32; 3]> {
    let n = CYLINDER_SEGMENTS as u32;
    let (bc, tc) = (2 * n, 2 * n + 1);
    let mut tris = Vec::new();
    for j in 0..n {
        let j1 = (j + 1) % n;
        let (b0, b1, t0, t1) = (j, j1, n + j, n + j1);
        tris.push([b0, t1, b1]);
        tris.push([b0, t0, t1]);
    }
    for j in 0..n {
        tris.push([bc, j, (j + 1) % n]);
    }
    for j in 0..n {
        tris.push([tc, n + (j + 1) % n, n + j]);
    }
    tris
}

fn cylinder_angle(j: usize) -> f64 {
    std::f64::consts::TAU * j as f64 / CYLINDER_SEGMENTS as f64
}

/// Box layout: corner i has x sign from bit 0, y from bit 1, z from bit 2.
/// Faces in order -z, +z, -x, +x, -y, +y; two triangles per face.
const BOX_QUADS: [[u32; 4]; 6] = [
    [0, 2, 3, 1],
    [4, 5, 7, 6],
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
];

const BOX_NORMALS: [DVec3; 6] = [
    DVec3::NEG_Z,
    DVec3::Z,
    DVec3::NEG_X,
    DVec3::X,
    DVec3::NEG_Y,
    DVec3::Y,
];

fn box_triangles() -> Vec<[u32; 3]> {
    let mut tris = Vec::with_capacity(12);
    for q in BOX_QUADS {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    tris
}

fn box_corner(i: usize, w: f64, h: f64, d: f64) -> DVec3 {
    DVec3::new(
        if i & 1 != 0 { w / 2.0 } else { -w / 2.0 },
        if i & 2 != 0 { h / 2.0 } else { -h / 2.0 },
        if i & 4 != 0 { d / 2.0 } else { -d / 2.0 },
    )
}

/// Extrude layout: vertices 0..ring bottom ring, ring..2*ring top ring.
/// Triangles: 2*ring side, then bottom cap, then the mirrored top cap.
fn extrude_triangles(ring: usize, caps: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let n = ring as u32;
    let mut tris = Vec::with_capacity(2 * ring + 2 * caps.len());
    for k in 0..n {
        let k1 = (k + 1) % n;
        tris.push([k, n + k1, k1]);
        tris.push([k, n + k, n + k1]);
    }
    for c in caps {
        tris.push(*c);
    }
    for c in caps {
        tris.push([c[0] + n, c[2] + n, c[1] + n]);
    }
    tris
}

/// Outward flat normal of extrude side quad k (between oriented ring samples
/// k and k+1), unnormalized: the polygon is counter-clockwise in (x, z).
fn extrude_side_raw(ring: &[[f64; 2]], k: usize) -> DVec3 {
    let a = ring[k];
    let b = ring[(k + 1) % ring.len()];
    DVec3::new(b[1] - a[1], 0.0, -(b[0] - a[0]))
}

impl Tessellation {
    pub fn new(scene: &Scene) -> Result<Self, MeshError> {
        let mut topos = Vec::with_capacity(scene.primitives.len());
        for spec in &scene.primitives {
            let topo = match &spec.kind {
                PrimitiveKind::Sphere { .. } => {
                    let triangles = sphere_triangles();
                    let n = (SPHERE_RES - 1) * SPHERE_RES + 2;
                    let hash = topology_hash(n, &triangles);
                    PrimTopo { shape: ShapeTopo::Sphere, triangles, hash }
                }
                PrimitiveKind::Cylinder { .. } => {
                    let triangles = cylinder_triangles();
                    let hash = topology_hash(2 * CYLINDER_SEGMENTS + 2, &triangles);
                    PrimTopo { shape: ShapeTopo::Cylinder, triangles, hash }
                }
                PrimitiveKind::Box { .. } => {
                    let triangles = box_triangles();
                    let hash = topology_hash(8, &triangles);
                    PrimTopo { shape: ShapeTopo::Box, triangles, hash }
                }
                PrimitiveKind::Extrude { profile, samples_per_curve, .. } => {
                    let raw = sample_ring(profile, *samples_per_curve, &scene.params);
                    let ring = raw.len();
                    if ring < 3 {
                        return Err(MeshError::DegenerateProfile { primitive: spec.id });
                    }
                    let reversed = signed_area2(&raw) < 0.0;
                    let oriented: Vec<[f64; 2]> = (0..ring)
                        .map(|k| raw[authored_index(ring, reversed, k)])
                        .collect();
                    if !is_simple(&oriented) {
                        return Err(MeshError::NonSimpleProfile { primitive: spec.id });
                    }
                    let caps = ear_clip(&oriented)
                        .ok_or(MeshError::CapTriangulation { primitive: spec.id })?;
                    let triangles = extrude_triangles(ring, &caps);
                    let hash = topology_hash(2 * ring, &triangles);
                    PrimTopo {
                        shape: ShapeTopo::Extrude { ring, reversed },
                        triangles,
                        hash,
                    }
                }
            };
            topos.push(topo);
        }
        Ok(Tessellation { topos })
    }

    pub fn topology_hash_of(&self, id: usize) -> u64 {
        self.topos[id].hash
    }

    /// World-space meshes at the current parameter values; `None` marks a
    /// vanished primitive (non-positive dimension or scale).
    pub fn build(&self, scene: &Scene) -> Vec<Option<TriMesh>> {
        scene
            .primitives
            .iter()
            .map(|spec| self.build_one(spec, &scene.params))
            .collect()
    }

    pub fn build_one(&self, spec: &PrimitiveSpec, params: &ParamTable) -> Option<TriMesh> {
        let topo = &self.topos[spec.id];
        let et = spec.transform.eval(params);
        if et.scale <= 0.0 {
            return None;
        }
        let (mut positions, mut normals) = self.local_geometry(spec, params)?;
        for p in &mut positions {
            *p = et.point(*p);
        }
        for tri in &mut normals {
            for n in tri {
                *n = et.normal(*n);
            }
        }
        Some(TriMesh {
            positions,
            triangles: topo.triangles.clone(),
            normals,
            primitive_id: spec.id,
            topology_hash: topo.hash,
        })
    }

    /// Local-space positions and per-corner normals, or None when vanished.
    #[allow(clippy::type_complexity)]
    fn local_geometry(
        &self,
        spec: &PrimitiveSpec,
        params: &ParamTable,
    ) -> Option<(Vec<DVec3>, Vec<[DVec3; 3]>)> {
        let topo = &self.topos[spec.id];
        match (&spec.kind, &topo.shape) {
            (PrimitiveKind::Sphere { radius }, ShapeTopo::Sphere) => {
                let r = radius.eval(params);
                if r <= 0.0 {
                    return None;
                }
                let dirs = sphere_directions();
                let positions: Vec<DVec3> = dirs.iter().map(|&d| r * d).collect();
                let normals = topo
                    .triangles
                    .iter()
                    .map(|t| [dirs[t[0] as usize], dirs[t[1] as usize], dirs[t[2] as usize]])
                    .collect();
                Some((positions, normals))
            }
            (PrimitiveKind::Cylinder { r_top, r_bottom, height }, ShapeTopo::Cylinder) => {
                let rt = r_top.eval(params);
                let rb = r_bottom.eval(params);
                let h = height.eval(params);
                if h <= 0.0 || rt < 0.0 || rb < 0.0 || rt + rb <= 0.0 {
                    return None;
                }
                let n = CYLINDER_SEGMENTS;
                let mut positions = Vec::with_capacity(2 * n + 2);
                for j in 0..n {
                    let a = cylinder_angle(j);
                    positions.push(DVec3::new(rb * a.cos(), -h / 2.0, rb * a.sin()));
                }
                for j in 0..n {
                    let a = cylinder_angle(j);
                    positions.push(DVec3::new(rt * a.cos(), h / 2.0, rt * a.sin()));
                }
                positions.push(DVec3::new(0.0, -h / 2.0, 0.0));
                positions.push(DVec3::new(0.0, h / 2.0, 0.0));

                let side_normal = |v: usize| {
                    let a = cylinder_angle(v % n);
                    DVec3::new(h * a.cos(), rb - rt, h * a.sin()).normalize()
                };
                let mut normals = Vec::with_capacity(topo.triangles.len());
                for (ti, t) in topo.triangles.iter().enumerate() {
                    if ti < 2 * n {
                        normals.push([
                            side_normal(t[0] as usize),
                            side_normal(t[1] as usize),
                            side_normal(t[2] as usize),
                        ]);
                    } else if ti < 3 * n {
                        normals.push([DVec3::NEG_Y; 3]);
                    } else {
                        normals.push([DVec3::Y; 3]);
                    }
                }
                Some((positions, normals))
            }
            (PrimitiveKind::Box { width, height, depth }, ShapeTopo::Box) => {
                let w = width.eval(params);
                let h = height.eval(params);
                let d = depth.eval(params);
                if w <= 0.0 || h <= 0.0 || d <= 0.0 {
                    return None;
                }
                let positions = (0..8).map(|i| box_corner(i, w, h, d)).collect();
                let normals = (0..12).map(|ti| [BOX_NORMALS[ti / 2]; 3]).collect();
                Some((positions, normals))
            }
            (
                PrimitiveKind::Extrude { profile, depth, samples_per_curve },
                ShapeTopo::Extrude { ring, reversed },
            ) => {
                let d = depth.eval(params);
                if d <= 0.0 {
                    return None;
                }
                let raw = sample_ring(profile, *samples_per_curve, params);
                let oriented: Vec<[f64; 2]> = (0..*ring)
                    .map(|k| raw[authored_index(*ring, *reversed, k)])
                    .collect();
                let mut positions = Vec::with_capacity(2 * ring);
                for p in &oriented {
                    positions.push(DVec3::new(p[0], -d / 2.0, p[1]));
                }
                for p in &oriented {
                    positions.push(DVec3::new(p[0], d / 2.0, p[1]));
                }
                let mut normals = Vec::with_capacity(topo.triangles.len());
                for (ti, _) in topo.triangles.iter().enumerate() {
                    if ti < 2 * ring {
                        let nq = extrude_side_raw(&oriented, ti / 2).normalize();
                        normals.push([nq; 3]);
                    } else if ti < 2 * ring + (ring - 2) {
                        normals.push([DVec3::NEG_Y; 3]);
                    } else {
                        normals.push([DVec3::Y; 3]);
                    }
                }
                Some((positions, normals))
            }
            _ => unreachable!("topology built for a different primitive kind"),
        }
    }

    /// Accumulates parameter adjoints from world-space position and
    /// per-corner normal adjoints of the mesh built by `build_one`. No-op for
    /// vanished primitives.
    pub fn backward_one(
        &self,
        spec: &PrimitiveSpec,
        params: &mut ParamTable,
        d_positions: &[DVec3],
        d_normals: &[[DVec3; 3]],
    ) {
        let et = spec.transform.eval(params);
        if et.scale <= 0.0 {
            return;
        }
        let Some((local_pos, local_norm)) = self.local_geometry(spec, params) else {
            return;
        };
        debug_assert_eq!(local_pos.len(), d_positions.len());
        debug_assert_eq!(local_norm.len(), d_normals.len());

        let rot_t = et.rotation.transpose();
        let mut d_translation = DVec3::ZERO;
        let mut g_rot = DMat3::ZERO;
        let mut d_scale = 0.0;
        let mut d_local_pos = vec![DVec3::ZERO; local_pos.len()];
        for (i, &dp) in d_positions.iter().enumerate() {
            d_translation += dp;
            g_rot += outer(dp, et.scale * local_pos[i]);
            d_scale += dp.dot(et.rotation * local_pos[i]);
            d_local_pos[i] = et.scale * (rot_t * dp);
        }
        let mut d_local_norm = vec![[DVec3::ZERO; 3]; local_norm.len()];
        for (t, dn_tri) in d_normals.iter().enumerate() {
            for k in 0..3 {
                g_rot += outer(dn_tri[k], local_norm[t][k]);
                d_local_norm[t][k] = rot_t * dn_tri[k];
            }
        }
        for a in 0..3 {
            spec.transform.rotation[a].backward(params, frobenius(g_rot, et.rotation_grads[a]));
        }
        let dt = [d_translation.x, d_translation.y, d_translation.z];
        for a in 0..3 {
            spec.transform.translation[a].backward(params, dt[a]);
        }
        spec.transform.uniform_scale.backward(params, d_scale);

        self.shape_backward(spec, params, &d_local_pos, &d_local_norm);
    }

    fn shape_backward(
        &self,
        spec: &PrimitiveSpec,
        params: &mut ParamTable,
        d_pos: &[DVec3],
        d_norm: &[[DVec3; 3]],
    ) {
        let topo = &self.topos[spec.id];
        match (&spec.kind, &topo.shape) {
            (PrimitiveKind::Sphere { radius }, ShapeTopo::Sphere) => {
                let dirs = sphere_directions();
                let dr: f64 = d_pos.iter().zip(&dirs).map(|(d, u)| d.dot(*u)).sum();
                radius.backward(params, dr);
            }
            (PrimitiveKind::Cylinder { r_top, r_bottom, height }, ShapeTopo::Cylinder) => {
                let rt = r_top.eval(params);
                let rb = r_bottom.eval(params);
                let h = height.eval(params);
                let n = CYLINDER_SEGMENTS;
                let (mut drt, mut drb, mut dh) = (0.0, 0.0, 0.0);
                for (i, d) in d_pos.iter().enumerate() {
                    if i < n {
                        let a = cylinder_angle(i);
                        drb += d.x * a.cos() + d.z * a.sin();
                        dh += -0.5 * d.y;
                    } else if i < 2 * n {
                        let a = cylinder_angle(i - n);
                        drt += d.x * a.cos() + d.z * a.sin();
                        dh += 0.5 * d.y;
                    } else if i == 2 * n {
                        dh += -0.5 * d.y;
                    } else {
                        dh += 0.5 * d.y;
                    }
                }
                // side corner normals depend on (rt, rb, h)
                for (ti, t) in topo.triangles.iter().enumerate().take(2 * n) {
                    for k in 0..3 {
                        let dn = d_norm[ti][k];
                        if dn == DVec3::ZERO {
                            continue;
                        }
                        let a = cylinder_angle(t[k] as usize % n);
                        let u = DVec3::new(h * a.cos(), rb - rt, h * a.sin());
                        let du = normalize_backward(u, dn);
                        drt += -du.y;
                        drb += du.y;
                        dh += du.x * a.cos() + du.z * a.sin();
                    }
                }
                r_top.backward(params, drt);
                r_bottom.backward(params, drb);
                height.backward(params, dh);
            }
            (PrimitiveKind::Box { width, height, depth }, ShapeTopo::Box) => {
                let (mut dw, mut dh, mut dd) = (0.0, 0.0, 0.0);
                for (i, d) in d_pos.iter().enumerate() {
                    dw += 0.5 * d.x * if i & 1 != 0 { 1.0 } else { -1.0 };
                    dh += 0.5 * d.y * if i & 2 != 0 { 1.0 } else { -1.0 };
                    dd += 0.5 * d.z * if i & 4 != 0 { 1.0 } else { -1.0 };
                }
                width.backward(params, dw);
                height.backward(params, dh);
                depth.backward(params, dd);
            }
            (
                PrimitiveKind::Extrude { profile, depth, samples_per_curve },
                ShapeTopo::Extrude { ring, reversed },
            ) => {
                let ring = *ring;
                let raw = sample_ring(profile, *samples_per_curve, params);
                let oriented: Vec<[f64; 2]> = (0..ring)
                    .map(|k| raw[authored_index(ring, *reversed, k)])
                    .collect();

                // 2D adjoint per oriented ring sample
                let mut d_ring = vec![[0.0; 2]; ring];
                let mut d_depth = 0.0;
                for (i, d) in d_pos.iter().enumerate() {
                    let k = i % ring;
                    d_ring[k][0] += d.x;
                    d_ring[k][1] += d.z;
                    d_depth += if i < ring { -0.5 * d.y } else { 0.5 * d.y };
                }
                // flat side-quad normals depend on the two ring samples
                for q in 0..ring {
                    let mut dn = DVec3::ZERO;
                    for ti in [2 * q, 2 * q + 1] {
                        for k in 0..3 {
                            dn += d_norm[ti][k];
                        }
                    }
                    if dn == DVec3::ZERO {
                        continue;
                    }
                    let du = normalize_backward(extrude_side_raw(&oriented, q), dn);
                    // raw = (v1 - v0, 0, -(u1 - u0)) over samples q, q+1
                    let q1 = (q + 1) % ring;
                    d_ring[q1][1] += du.x;
                    d_ring[q][1] -= du.x;
                    d_ring[q1][0] += -du.z;
                    d_ring[q][0] -= -du.z;
                }
                // chain oriented samples to Bezier control points
                let samples = *samples_per_curve;
                for k in 0..ring {
                    let [du, dv] = d_ring[k];
                    if du == 0.0 && dv == 0.0 {
                        continue;
                    }
                    let a = authored_index(ring, *reversed, k);
                    let seg = a / samples;
                    let t = (a % samples) as f64 / samples as f64;
                    let b = bernstein(t);
                    let ctrl = profile.control_exprs(seg);
                    for i in 0..4 {
                        ctrl[i][0].backward(params, b[i] * du);
                        ctrl[i][1].backward(params, b[i] * dv);
                    }
                }
                depth.backward(params, d_depth);
            }
            _ => unreachable!("topology built for a different primitive kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::parse_scene;

    fn tess_of(src: &str) -> (Scene, Tessellation) {
        let scene = parse_scene(src).unwrap();
        let tess = Tessellation::new(&scene).unwrap();
        (scene, tess)
    }

    fn single_mesh(src: &str) -> TriMesh {
        let (scene, tess) = tess_of(src);
        tess.build(&scene).remove(0).expect("mesh vanished")
    }

    #[test]
    fn sphere_counts_and_radius() {
        let m = single_mesh("sphere(r = 1);");
        assert_eq!(m.positions.len(), 242);
        assert_eq!(m.triangles.len(), 480);
        for p in &m.positions {
            assert!((p.length() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_scaling_law() {
        let m1 = single_mesh("sphere(r = 1);");
        let m2 = single_mesh("sphere(r = 2);");
        assert_eq!(m1.topology_hash, m2.topology_hash);
        for (a, b) in m1.positions.iter().zip(&m2.positions) {
            assert!((*b - 2.0 * *a).length() < 1e-12);
        }
    }

    #[test]
    fn cylinder_counts_and_rims() {
        let m = single_mesh("cylinder(rt = 1, rb = 1, h = 2);");
        assert_eq!(m.positions.len(), 34);
        assert_eq!(m.triangles.len(), 64);
        for j in 0..16 {
            assert!((m.positions[j].y - -1.0).abs() < 1e-12);
            assert!((m.positions[16 + j].y - 1.0).abs() < 1e-12);
            let r = (m.positions[16 + j].x.powi(2) + m.positions[16 + j].z.powi(2)).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn box_counts_and_corners() {
        let m = single_mesh("box(w = 2, h = 2, d = 2);");
        assert_eq!(m.positions.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        for p in &m.positions {
            assert_eq!(p.x.abs(), 1.0);
            assert_eq!(p.y.abs(), 1.0);
            assert_eq!(p.z.abs(), 1.0);
        }
    }

    const SQUARE_EXTRUDE: &str = "extrude(depth = 1, samples = 5) {\n\
        start(1, -1);\n\
        curve(1, -1/3, 1, 1/3, 1, 1);\n\
        curve(1/3, 1, -1/3, 1, -1, 1);\n\
        curve(-1, 1/3, -1, -1/3, -1, -1);\n\
        close(-1/3, -1, 1/3, -1);\n\
    }";

    fn all_kinds() -> Vec<TriMesh> {
        vec![
            single_mesh("sphere(r = 1.1);"),
            single_mesh("cylinder(rt = 0.5, rb = 0.9, h = 1.7);"),
            single_mesh("box(w = 1.2, h = 0.7, d = 2.1);"),
            single_mesh(SQUARE_EXTRUDE),
            single_mesh("cylinder(rt = 0, rb = 1, h = 1);"), // cone limit
        ]
    }

    #[test]
    fn all_kinds_watertight_euler_outward() {
        for m in all_kinds() {
            assert!(m.is_watertight(), "primitive {} not watertight", m.primitive_id);
            assert_eq!(m.euler_characteristic(), 2);
            assert!(m.signed_volume() > 0.0, "inward winding");
            let c = m.centroid();
            for (t, tri) in m.triangles.iter().enumerate() {
                for k in 0..3 {
                    let p = m.positions[tri[k] as usize];
                    let n = m.normals[t][k];
                    assert!((n.length() - 1.0).abs() < 1e-6);
                    // convex primitives (and the convex square extrude): outward normals
                    if (p - c).length() > 1e-9 {
                        assert!(n.dot(p - c) > 0.0, "inward corner normal");
                    }
                }
            }
        }
    }

    #[test]
    fn square_extrude_volume_matches_area_times_depth() {
        let m = single_mesh(SQUARE_EXTRUDE);
        assert_eq!(m.positions.len(), 40); // ring of 4*5, two layers
        assert!((m.signed_volume() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn vanished_primitives_build_none() {
        let (scene, tess) = tess_of("param r = 1; sphere(r = r - 2);");
        assert!(tess.build(&scene)[0].is_none());
        let (scene, tess) = tess_of("scale(0) box(w = 1, h = 1, d = 1);");
        assert!(tess.build(&scene)[0].is_none());
    }

    #[test]
    fn topology_constant_over_100_draws() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let srcs = [
            "param a = 1; sphere(r = a);",
            "param a = 1; param b = 1; cylinder(rt = a, rb = b, h = a + b);",
            "param a = 1; box(w = a, h = 2*a, d = 0.5*a + 0.1);",
            "param a = 1; extrude(depth = a, samples = 6) {\n\
               start(a, 0); curve(1, 0.8, -1, 0.8, -a, 0); close(-1, -0.8, 1, -0.8);\n\
             }",
        ];
        for src in srcs {
            let (mut scene, tess) = tess_of(src);
            let hash0 = tess.build(&scene)[0].as_ref().unwrap().topology_hash;
            for _ in 0..100 {
                let vals: Vec<f64> = (0..scene.params.len())
                    .map(|_| rng.gen_range(0.4..2.0))
                    .collect();
                scene.params.set_raw_values(&vals);
                let m = tess.build(&scene)[0].take().expect("vanished in safe range");
                assert_eq!(m.topology_hash, hash0);
                assert!(m.is_watertight());
                assert_eq!(m.euler_characteristic(), 2);
            }
        }
    }

    /// Central finite difference of (positions, normals) contracted with
    /// fixed random adjoints, against backward_one.
    fn check_jacobian(src: &str) {
        use rand::{Rng, SeedableRng};
        let (mut scene, tess) = tess_of(src);
        let spec = scene.primitives[0].clone();
        let base = tess.build_one(&spec, &scene.params).expect("vanished");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut rv = || DVec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let d_pos: Vec<DVec3> = (0..base.positions.len()).map(|_| rv()).collect();
        let d_norm: Vec<[DVec3; 3]> = (0..base.triangles.len())
            .map(|_| [rv(), rv(), rv()])
            .collect();

        scene.params.clear_adjoints();
        let mut params = scene.params.clone();
        tess.backward_one(&spec, &mut params, &d_pos, &d_norm);

        let h = 1e-5;
        for pid in 0..params.len() {
            let saved = scene.params.raw(pid);
            let mut eval_at = |v: f64| {
                scene.params.set_raw(pid, v);
                let m = tess.build_one(&spec, &scene.params).expect("vanished");
                let mut acc = 0.0;
                for (a, p) in d_pos.iter().zip(&m.positions) {
                    acc += a.dot(*p);
                }
                for (a, ntri) in d_norm.iter().zip(&m.normals) {
                    for k in 0..3 {
                        acc += a[k].dot(ntri[k]);
                    }
                }
                acc
            };
            let fd = (eval_at(saved + h) - eval_at(saved - h)) / (2.0 * h);
            scene.params.set_raw(pid, saved);
            let bp = params.adjoint(pid);
            let tol = 1e-5 * fd.abs().max(1.0);
            assert!(
                (bp - fd).abs() <= tol,
                "{src}: param {} backward {bp} vs fd {fd}",
                params.name(pid)
            );
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        check_jacobian("param r = 1.3; sphere(r = r);");
        check_jacobian(
            "param rt = 0.6; param rb = 1.1; param h = 1.4;\n\
             cylinder(rt = rt, rb = rb, h = h);",
        );
        check_jacobian("param w = 1.2; param h = 0.8; param d = 1.9; box(w = w, h = h, d = d);");
        check_jacobian(
            "param a = 1.0; param d = 0.7;\n\
             extrude(depth = d, samples = 6) {\n\
               start(a, 0); curve(1, 0.8, -1, 0.8, -a, 0); close(-1, -0.8, 1, -0.8);\n\
             }",
        );
        // extrinsic parameters, all four kinds under one transform chain
        check_jacobian(
            "param tx = 0.4; param ry = 0.5; param s = 1.2; param r = 1.0;\n\
             translate(tx, 0.2, -0.3) rotate(0.3, ry, 0.7) scale(s) sphere(r = r);",
        );
        check_jacobian(
            "param tx = 0.4; param ry = 0.5; param s = 1.2;\n\
             translate(tx, 0.2, -0.3) rotate(0.3, ry, 0.7) scale(s) cylinder(rt = 0.5, rb = 0.8, h = 1.1);",
        );
        check_jacobian(
            "param ty = -0.2; param rz = 0.9; param s = 0.8;\n\
             translate(0.1, ty, 0.3) rotate(0.2, 0.4, rz) scale(s) box(w = 1, h = 1.3, d = 0.6);",
        );
        check_jacobian(
            "param tx = 0.3; param rx = 0.6; param s = 1.1; param a = 0.9;\n\
             translate(tx, 0.1, 0.2) rotate(rx, 0.5, 0.3) scale(s) extrude(depth = 0.8, samples = 5) {\n\
               start(a, 0); curve(1, 0.7, -1, 0.7, -a, 0); close(-1, -0.7, 1, -0.7);\n\
             }",
        );
    }

    #[test]
    fn translation_adjoint_is_sum_of_position_adjoints() {
        let (mut scene, tess) = tess_of("param tx = 0; translate(tx, 0, 0) box(w = 1, h = 1, d = 1);");
        let spec = scene.primitives[0].clone();
        let m = tess.build_one(&spec, &scene.params).unwrap();
        let d_pos: Vec<DVec3> = (0..m.positions.len())
            .map(|i| DVec3::new(i as f64, 0.0, 0.0))
            .collect();
        let d_norm = vec![[DVec3::ZERO; 3]; m.triangles.len()];
        let mut params = scene.params.clone();
        tess.backward_one(&spec, &mut params, &d_pos, &d_norm);
        let expected: f64 = (0..8).map(|i| i as f64).sum();
        assert!((params.adjoint(0) - expected).abs() < 1e-12);
        scene.params.clear_adjoints();
    }

    #[test]
    fn self_intersecting_profile_rejected() {
        let scene = parse_scene(
            "extrude(depth = 1, samples = 8) {\n\
               start(0, 0); curve(2, 2, -2, 2, 1, 0); close(0.2, -1, 0.4, 1);\n\
             }",
        )
        .unwrap();
        match Tessellation::new(&scene) {
            Err(MeshError::NonSimpleProfile { primitive: 0 }) => {}
            other => panic!("expected NonSimpleProfile, got {other:?}"),
        }
    }
}
