//! One-frame forward render and the reverse pass that carries image adjoints
//! back to primitive parameters.
//!
//! [`render`] composes projection, layered rasterization, boolean
//! classification, shading, edge extraction, and edge blending, and returns
//! the finished frame together with a [`RenderTape`] recording everything the
//! backward pass needs. [`backward`] replays the tape in reverse: blend
//! adjoints split into a per-event crossing-parameter channel (the edge
//! anti-aliasing path) and a per-pixel color channel (the interior shading
//! path, live only under normal shading), both of which land in mesh vertex
//! adjoints and finally in the scene's parameter table.
//!
//! Winner selection and event placement are treated as locally constant:
//! the backward pass differentiates colors and crossing offsets at the
//! recorded discrete structure. Camera parameters receive no gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::aa::{self, BlendRecord};
use crate::camera::Camera;
use crate::classify::{self, CompositeBuffer};
use crate::edges::{self, CrossingEvent, EdgeSegment};
use crate::epsilon_z;
use crate::image::Image;
use crate::mesh::Tessellation;
use crate::oracle;
use crate::raster::{project, rasterize_layers, FragmentBuffer, MeshGrads, ProjectedMesh};
use crate::scene::Scene;
use crate::{Shading, TriMesh};

/// Which edge families receive anti-aliasing. Both default to on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AaConfig {
    pub silhouettes: bool,
    pub intersections: bool,
}

impl Default for AaConfig {
    fn default() -> Self {
        AaConfig {
            silhouettes: true,
            intersections: true,
        }
    }
}

impl AaConfig {
    pub const OFF: AaConfig = AaConfig {
        silhouettes: false,
        intersections: false,
    };

    pub fn any(self) -> bool {
        self.silhouettes || self.intersections
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    /// The eye point classifies as inside the boolean solid, where depth
    /// parity (and hence the whole classification) is undefined.
    #[error("camera at {position:?} is inside the composite solid")]
    CameraInsideSolid { position: [f64; 3] },
    /// The tape was already consumed by a backward pass.
    #[error("render tape for frame {frame} was already consumed by backward")]
    TapeConsumed { frame: u64 },
    /// The adjoint image does not match the rendered resolution.
    #[error("adjoint image is {got:?} but frame {frame} was rendered at {expected:?}")]
    AdjointResolution {
        frame: u64,
        expected: [u32; 2],
        got: [u32; 2],
    },
    /// Parameters changed between render and backward; the recorded frame no
    /// longer describes the scene and its gradients would be inconsistent.
    #[error("scene parameters changed since frame {frame} was rendered")]
    StaleTape { frame: u64 },
}

static FRAME_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Recorded state of one rendered frame. Every member describes the same
/// frame (tagged by `frame`); [`backward`] consumes the tape exactly once.
#[derive(Debug)]
pub struct RenderTape {
    pub frame: u64,
    pub camera: Camera,
    pub shading: Shading,
    pub aa: AaConfig,
    /// Raw parameter values at render time, to reject stale backward calls.
    raws: Vec<f64>,
    pub meshes: Vec<Option<TriMesh>>,
    pub projected: Vec<ProjectedMesh>,
    pub fragments: FragmentBuffer,
    pub composite: CompositeBuffer,
    pub segments: Vec<EdgeSegment>,
    pub events: Vec<CrossingEvent>,
    pub records: Vec<BlendRecord>,
    consumed: bool,
}

impl RenderTape {
    pub fn consumed(&self) -> bool {
        self.consumed
    }
}

/// Renders one frame and records the tape for [`backward`].
///
/// `tess` must come from [`Tessellation::new`] on the same scene; topology is
/// frozen there while parameter values are read at call time. A scene whose
/// boolean result is empty renders as `background` everywhere. With both AA
/// families disabled the result is the raw classified image.
pub fn render(
    scene: &Scene,
    tess: &Tessellation,
    camera: &Camera,
    shading: Shading,
    aa: AaConfig,
    background: [f64; 3],
) -> Result<(Image, RenderTape), RenderError> {
    let meshes = tess.build(scene);
    if oracle::eye_inside_composite(scene, &meshes, camera) {
        return Err(RenderError::CameraInsideSolid {
            position: camera.position,
        });
    }
    let [width, height] = camera.resolution;
    let projected: Vec<ProjectedMesh> = meshes
        .iter()
        .flatten()
        .map(|m| project(m, camera))
        .collect();
    let fragments = rasterize_layers(&projected, width, height, camera.near, camera.far);
    let eps_z = epsilon_z(camera.near, camera.far);
    let (composite, mut image) = classify::composite(
        scene, &projected, &meshes, &fragments, eps_z, shading, background,
    );

    let mut segments = Vec::new();
    if aa.silhouettes {
        for pm in &projected {
            let mesh = meshes[pm.primitive_id]
                .as_ref()
                .expect("projected meshes are live");
            segments.extend(edges::silhouette_edges(mesh, pm));
        }
    }
    if aa.intersections {
        segments.extend(edges::intersection_edges(scene, &meshes));
    }
    let events = if segments.is_empty() {
        Vec::new()
    } else {
        edges::visible_crossings(&segments, &projected, &composite, camera, 2.0 * eps_z)
    };
    let records = aa::blend(&mut image, &events);

    let tape = RenderTape {
        frame: FRAME_COUNTER.fetch_add(1, Ordering::Relaxed),
        camera: camera.clone(),
        shading,
        aa,
        raws: scene.params.raw_values(),
        meshes,
        projected,
        fragments,
        composite,
        segments,
        events,
        records,
        consumed: false,
    };
    Ok((image, tape))
}

/// Propagates an image adjoint (dL/d pixel color) through the recorded frame
/// into `scene.params` adjoints. Adjoints accumulate across calls; clear them
/// between unrelated losses with `scene.params.clear_adjoints()`.
///
/// Consumes the tape: a second call on the same tape is an error, as is
/// calling with parameter values that differ from render time.
pub fn backward(
    tape: &mut RenderTape,
    scene: &mut Scene,
    tess: &Tessellation,
    d_image: &Image,
) -> Result<(), RenderError> {
    if tape.consumed {
        return Err(RenderError::TapeConsumed { frame: tape.frame });
    }
    if [d_image.width as u32, d_image.height as u32] != tape.camera.resolution {
        return Err(RenderError::AdjointResolution {
            frame: tape.frame,
            expected: tape.camera.resolution,
            got: [d_image.width as u32, d_image.height as u32],
        });
    }
    if scene.params.raw_values() != tape.raws {
        return Err(RenderError::StaleTape { frame: tape.frame });
    }
    tape.consumed = true;

    // Undo the blends: d_pixels becomes the adjoint of the pre-blend image
    // and each record yields the adjoint of its crossing offset.
    let mut d_pixels = d_image.clone();
    let d_c = aa::blend_backward(&tape.records, &mut d_pixels);

    let lookup = edges::mesh_lookup(&tape.projected);
    let mut grads: Vec<MeshGrads> = tape
        .projected
        .iter()
        .map(|pm| {
            MeshGrads::new(
                tape.meshes[pm.primitive_id]
                    .as_ref()
                    .expect("projected meshes are live"),
            )
        })
        .collect();

    let [width, height] = tape.camera.resolution;
    for (rec, dc) in tape.records.iter().zip(&d_c) {
        if *dc == 0.0 {
            continue;
        }
        let event = &tape.events[rec.event];
        let seg = &tape.segments[event.segment as usize];
        let (d_p, d_q) =
            edges::crossing_world_backward(seg, event, &tape.camera, width, height, *dc);
        edges::segment_vertex_backward(seg, d_p, d_q, &tape.meshes, &lookup, &mut grads);
    }

    // Interior path: a no-op except under normal shading, where winner colors
    // depend on mesh geometry through the interpolated normal.
    classify::shade_backward(
        &tape.composite,
        scene,
        &tape.projected,
        &tape.meshes,
        &tape.camera,
        &d_pixels,
        &mut grads,
    );

    for (mi, g) in grads.iter().enumerate() {
        let prim = tape.projected[mi].primitive_id;
        let (d_pos, d_norm) = g.finish(&tape.camera);
        tess.backward_one(&scene.primitives[prim], &mut scene.params, &d_pos, &d_norm);
    }
    Ok(())
}
