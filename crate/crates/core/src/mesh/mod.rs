//! Triangle meshes for primitives: fixed-topology tessellation with
//! differentiable vertex positions and normals.

pub mod earclip;
pub mod tess;

use std::collections::HashMap;

use glam::DVec3;

pub use tess::{MeshError, Tessellation};

/// Watertight triangle mesh of one primitive instance, in world space.
///
/// Normals are stored per triangle corner rather than per vertex: primitives
/// mix flat faces (box sides, extrude sides, all caps) with smooth ones
/// (sphere, cylinder side) while sharing the rim vertices that keep the mesh
/// watertight, so a single vertex needs different normals in different faces.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub positions: Vec<DVec3>,
    /// Counter-clockwise outward winding.
    pub triangles: Vec<[u32; 3]>,
    /// Unit normals per triangle corner, `normals[t][k]` for `triangles[t][k]`.
    pub normals: Vec<[DVec3; 3]>,
    pub primitive_id: usize,
    /// Hash of the connectivity only; constant under parameter changes.
    pub topology_hash: u64,
}

/// FNV-1a over a u32 stream.
pub fn fnv1a(words: impl IntoIterator<Item = u32>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

pub fn topology_hash(vertex_count: usize, triangles: &[[u32; 3]]) -> u64 {
    fnv1a(
        [vertex_count as u32, triangles.len() as u32]
            .into_iter()
            .chain(triangles.iter().flatten().copied()),
    )
}

/// Map from undirected edge to the number of incident triangles.
fn edge_uses(triangles: &[[u32; 3]]) -> HashMap<(u32, u32), u32> {
    let mut map = HashMap::with_capacity(triangles.len() * 3 / 2);
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            *map.entry(key).or_insert(0) += 1;
        }
    }
    map
}

impl TriMesh {
    /// Every undirected edge shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        edge_uses(&self.triangles).values().all(|&n| n == 2)
    }

    /// V - E + F; 2 for genus-0 closed surfaces.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.positions.len() as i64;
        let e = edge_uses(&self.triangles).len() as i64;
        let f = self.triangles.len() as i64;
        v - e + f
    }

    pub fn centroid(&self) -> DVec3 {
        self.positions.iter().sum::<DVec3>() / self.positions.len() as f64
    }

    /// Signed volume via the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let a = self.positions[t[0] as usize];
                let b = self.positions[t[1] as usize];
                let c = self.positions[t[2] as usize];
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Wavefront OBJ text with per-corner normals, for debugging.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            s.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        for tri in &self.normals {
            for n in tri {
                s.push_str(&format!("vn {} {} {}\n", n.x, n.y, n.z));
            }
        }
        for (ti, t) in self.triangles.iter().enumerate() {
            s.push_str(&format!(
                "f {}//{} {}//{} {}//{}\n",
                t[0] + 1,
                ti * 3 + 1,
                t[1] + 1,
                ti * 3 + 2,
                t[2] + 1,
                ti * 3 + 3,
            ));
        }
        s
    }
}
