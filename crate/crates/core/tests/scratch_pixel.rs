//! Temporary diagnostic: microscope on one flickering pixel.

use csgrast::camera::Camera;
use csgrast::pipeline::{render, AaConfig};
use csgrast::raster::{clip_from_world, screen_from_clip};
use csgrast::{Scene, Shading, Tessellation};

const BG: [f64; 3] = [0.0; 3];

#[test]
fn pixel_microscope() {
    let camera = Camera {
        resolution: [96, 96],
        ..Camera::default()
    };
    let src = "param tx = 0.15;
         difference { box(w = 2, h = 2, d = 2); translate(tx, 0.1, 0.95) sphere(r = 0.7); }";

    let mut scene = Scene::parse(src).unwrap();
    let tess = Tessellation::new(&scene).unwrap();
    let id = scene.params.lookup("tx").unwrap();
    let r0 = scene.params.raw(id) + 0.04;

    let (px, py) = (25u32, 65u32);
    let vp = camera.view_proj();
    for k in 0..=10 {
        let t = -6.0e-4 + k as f64 * 0.25e-4;
        scene.params.set_raw(id, r0 + t);
        let (_, tape) =
            render(&scene, &tess, &camera, Shading::Normal, AaConfig::default(), BG).unwrap();
        let mut evs = String::new();
        for e in &tape.events {
            let near = (e.x as i64 - px as i64).abs() <= 1 && (e.y as i64 - py as i64).abs() <= 1;
            if near {
                evs.push_str(&format!(
                    " [({},{}) {:?} c={:+.3} seg={}]",
                    e.x, e.y, e.axis, e.c, e.segment
                ));
            }
        }
        let winners: Vec<_> = (24..28)
            .map(|x| {
                tape.composite
                    .winner(x, py)
                    .map(|f| format!("{}:{}", f.primitive_id, f.raster_tri))
            })
            .collect();
        // replicate seg 64's crossing of row line y=65.5
        let seg = &tape.segments[64];
        let s0 = screen_from_clip(clip_from_world(&vp, seg.p), 96, 96);
        let s1 = screen_from_clip(clip_from_world(&vp, seg.q), 96, 96);
        let u = (py as f64 + 0.5 - s0.y) / (s1.y - s0.y);
        let sv = s0.x + u * (s1.x - s0.x);
        let row = (sv - 0.5).floor() as u32;
        let iw0 = 1.0 / clip_from_world(&vp, seg.p).w;
        let iw1 = 1.0 / clip_from_world(&vp, seg.q).w;
        let depth = 1.0 / ((1.0 - u) * iw0 + u * iw1);
        println!(
            "t {:+.6e}: winners(24..28,65) {:?}{}",
            t, winners, evs
        );
        println!(
            "    seg64 {:?} span y [{:.3},{:.3}] row-65.5 crossing: sv={sv:.4} u={u:+.3} pair=(({row},{py}),({},{py}))  {}",
            seg.source,
            s0.y.min(s1.y),
            s0.y.max(s1.y),
            row + 1,
            csgrast::edges::debug_visibility(
                seg,
                &tape.composite,
                &tape.projected,
                (row, py),
                (row + 1, py),
                glam::DVec2::new(sv, py as f64 + 0.5),
                depth,
                2.0 * csgrast::epsilon_z(camera.near, camera.far),
            )
        );
    }
}
