//! Differentiable renderer for constructive solid geometry.
//!
//! Scenes are boolean combinations (union, intersection, difference) of
//! parametric primitives. Rendering works directly on the primitive
//! tessellations: every triangle of every primitive is rasterized into a
//! layered depth buffer, and a per-pixel parity test classifies which
//! fragment lies on the surface of the combined solid. No boolean mesh is
//! ever built. Silhouette and intersection edges are then anti-aliased by
//! blending neighboring pixels where a visible edge crosses between their
//! centers. Because the blend weights are differentiable in the projected
//! edge endpoints, image-space losses propagate back to the primitive
//! parameters, which makes the renderer usable for fitting scene parameters
//! to target images.

pub mod aa;
pub mod camera;
pub mod classify;
pub mod edges;
pub mod image;
pub mod mesh;
pub mod oracle;
pub mod pfm;
pub mod pipeline;
pub mod raster;
pub mod scene;

pub use camera::Camera;
pub use image::Image;
pub use mesh::{Tessellation, TriMesh};
pub use pipeline::{backward, render, AaConfig, RenderError, RenderTape};
pub use scene::Scene;

/// Depth-coincidence width: fragments closer than this along a ray are
/// treated as the same surface and ordered by primitive id, which pins down
/// the result for flush boolean faces.
pub fn epsilon_z(near: f64, far: f64) -> f64 {
    1e-6 * (far - near)
}

/// What color the composite surface gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shading {
    /// Each primitive's solid color.
    Albedo,
    /// World-space unit normal encoded as (n+1)/2; surfaces exposed by a
    /// subtraction show the flipped (camera-facing) normal.
    Normal,
    /// White foreground on the background color.
    Mask,
}

impl std::str::FromStr for Shading {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "albedo" => Ok(Shading::Albedo),
            "normal" => Ok(Shading::Normal),
            "mask" => Ok(Shading::Mask),
            other => Err(format!("unknown shading mode `{other}` (expected albedo, normal, or mask)")),
        }
    }
}
