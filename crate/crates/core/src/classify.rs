//! Boolean classification of the fragment buffer.
//!
//! Per pixel, membership of a depth in a primitive is the parity of that
//! primitive's fragments strictly in front of it, which is the point-in-solid
//! test along the view ray and works for any watertight mesh, convex or not.
//! A product keeps the front-facing fragments of its plain literals and the
//! back-facing fragments of its complemented ones, each checked for
//! membership against every other literal; the composite winner is the
//! nearest kept fragment across all products.

use glam::DVec2;
use rayon::prelude::*;

use crate::camera::Camera;
use crate::image::Image;
use crate::mesh::TriMesh;
use crate::raster::{
    fragment_normal, fragment_normal_backward, pixel_center, Fragment, FragmentBuffer, MeshGrads,
    ProjectedMesh,
};
use crate::scene::{Product, Scene};
use crate::Shading;

/// Per-pixel result of classification: the visible fragment of the boolean
/// expression, or background.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeBuffer {
    pub width: u32,
    pub height: u32,
    pub shading: Shading,
    /// Row-major winning fragments; `None` is background.
    pub winners: Vec<Option<Fragment>>,
}

impl CompositeBuffer {
    pub fn winner(&self, x: u32, y: u32) -> Option<&Fragment> {
        self.winners[(y * self.width + x) as usize].as_ref()
    }

    /// Depth of the visible surface; background pixels are infinitely far.
    pub fn depth(&self, x: u32, y: u32) -> f64 {
        self.winner(x, y).map_or(f64::INFINITY, |f| f.depth)
    }
}

/// True when the count of `prim`'s fragments strictly in front of `z` is odd.
/// "In front" excludes an `eps_z` band so a fragment never occludes a depth
/// it coincides with; flush faces therefore classify deterministically.
pub fn inside(frags: &[Fragment], prim: usize, z: f64, eps_z: f64) -> bool {
    let mut crossings = 0u32;
    for f in frags {
        // Sorted by depth: nothing further can be in front.
        if f.depth >= z - eps_z {
            break;
        }
        if f.primitive_id as usize == prim {
            crossings += 1;
        }
    }
    crossings % 2 == 1
}

/// True when `frag` is a surviving candidate of `product`: its facing matches
/// its own literal's complement state and the depth lies inside every plain
/// literal and outside every complemented one.
fn kept(frags: &[Fragment], frag: &Fragment, product: &Product, eps_z: f64) -> bool {
    let prim = frag.primitive_id as usize;
    let Some(own) = product.literals.iter().find(|l| l.prim == prim) else {
        return false;
    };
    // Boundary of a plain literal faces the camera; boundary of a subtracted
    // one is seen from inside, so its visible faces are back faces.
    if frag.front == own.complemented {
        return false;
    }
    product
        .literals
        .iter()
        .filter(|l| l.prim != prim)
        .all(|l| inside(frags, l.prim, frag.depth, eps_z) != l.complemented)
}

/// Fragments of `product` visible at this pixel, in buffer (depth) order.
pub fn classify_product(frags: &[Fragment], product: &Product, eps_z: f64) -> Vec<Fragment> {
    frags
        .iter()
        .filter(|f| kept(frags, f, product, eps_z))
        .copied()
        .collect()
}

/// Selects, per pixel, the nearest fragment kept by any product. Fragment
/// lists are depth-sorted with ties broken by primitive id, so scanning in
/// order makes flush surfaces resolve to the lower id.
///
/// Where two surfaces cross transversally, the epsilon band can discard the
/// fragments on both sides of the crossing at once, punching a background
/// hole along the crease; such pixels are re-resolved with a zero band,
/// whose strict comparisons keep exactly one side.
pub fn classify(
    products: &[Product],
    fragbuf: &FragmentBuffer,
    eps_z: f64,
    shading: Shading,
) -> CompositeBuffer {
    let winners = fragbuf
        .pixels
        .par_iter()
        .map(|frags| {
            frags
                .iter()
                .find(|f| products.iter().any(|p| kept(frags, f, p, eps_z)))
                .or_else(|| {
                    frags
                        .iter()
                        .find(|f| products.iter().any(|p| kept(frags, f, p, 0.0)))
                })
                .copied()
        })
        .collect();
    CompositeBuffer {
        width: fragbuf.width,
        height: fragbuf.height,
        shading,
        winners,
    }
}

/// Index of each primitive's projected mesh, by primitive id.
fn mesh_lookup(projected: &[ProjectedMesh], n_prims: usize) -> Vec<Option<usize>> {
    let mut lookup = vec![None; n_prims];
    for (i, pm) in projected.iter().enumerate() {
        lookup[pm.primitive_id] = Some(i);
    }
    lookup
}

fn winner_color(
    frag: &Fragment,
    scene: &Scene,
    projected: &[ProjectedMesh],
    meshes: &[Option<TriMesh>],
    lookup: &[Option<usize>],
    shading: Shading,
) -> [f64; 3] {
    let prim = frag.primitive_id as usize;
    match shading {
        Shading::Mask => [1.0, 1.0, 1.0],
        Shading::Albedo => scene.primitives[prim].color,
        Shading::Normal => {
            let idx = lookup[prim].expect("winner belongs to a live mesh");
            let mesh = meshes[prim].as_ref().expect("winner belongs to a live mesh");
            let mut n = fragment_normal(&projected[idx], mesh, frag);
            // Back faces are carved interiors seen from the camera.
            if !frag.front {
                n = -n;
            }
            [0.5 * (n.x + 1.0), 0.5 * (n.y + 1.0), 0.5 * (n.z + 1.0)]
        }
    }
}

/// Shades the composite: primitive solid color, encoded world normal, or
/// foreground mask, with `background` everywhere the boolean result is empty.
pub fn shade(
    comp: &CompositeBuffer,
    scene: &Scene,
    projected: &[ProjectedMesh],
    meshes: &[Option<TriMesh>],
    background: [f64; 3],
) -> Image {
    let lookup = mesh_lookup(projected, scene.primitives.len());
    let data: Vec<[f64; 3]> = comp
        .winners
        .par_iter()
        .map(|w| match w {
            Some(f) => winner_color(f, scene, projected, meshes, &lookup, comp.shading),
            None => background,
        })
        .collect();
    Image {
        width: comp.width as usize,
        height: comp.height as usize,
        data,
    }
}

/// Classification followed by shading.
pub fn composite(
    scene: &Scene,
    projected: &[ProjectedMesh],
    meshes: &[Option<TriMesh>],
    fragbuf: &FragmentBuffer,
    eps_z: f64,
    shading: Shading,
    background: [f64; 3],
) -> (CompositeBuffer, Image) {
    let comp = classify(&scene.products, fragbuf, eps_z, shading);
    let image = shade(&comp, scene, projected, meshes, background);
    (comp, image)
}

/// Routes per-pixel color adjoints back to mesh quantities. Only normal
/// shading carries gradients: solid colors and the mask are constant in the
/// mesh, so interior pixels of those modes contribute nothing.
pub fn shade_backward(
    comp: &CompositeBuffer,
    scene: &Scene,
    projected: &[ProjectedMesh],
    meshes: &[Option<TriMesh>],
    camera: &Camera,
    d_image: &Image,
    grads: &mut [MeshGrads],
) {
    if comp.shading != Shading::Normal {
        return;
    }
    let lookup = mesh_lookup(projected, scene.primitives.len());
    for y in 0..comp.height {
        for x in 0..comp.width {
            let Some(frag) = comp.winner(x, y) else {
                continue;
            };
            let d = d_image.get(x as usize, y as usize);
            let mut d_unit = 0.5 * glam::DVec3::new(d[0], d[1], d[2]);
            if !frag.front {
                d_unit = -d_unit;
            }
            if d_unit == glam::DVec3::ZERO {
                continue;
            }
            let prim = frag.primitive_id as usize;
            let idx = lookup[prim].expect("winner belongs to a live mesh");
            let mesh = meshes[prim].as_ref().expect("winner belongs to a live mesh");
            let pixel: DVec2 = pixel_center(x, y);
            fragment_normal_backward(
                &projected[idx],
                mesh,
                frag,
                pixel,
                camera,
                d_unit,
                &mut grads[idx],
            );
        }
    }
}
