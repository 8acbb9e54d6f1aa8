//! Renders a synthetic ground-truth scene from its first test camera: color
//! to PNG and the three depth flavors to PFM.
//!
//! cargo run --release --example render -- [out_dir]

use std::path::PathBuf;

use gsdepth::harness::{synth_scene, write_pfm, write_png, SceneSpec};
use gsdepth::raster::{Frame, DEFAULT_TAU};
use gsdepth::{ColorModel, RenderKind};
use nalgebra::Vector3;

fn main() -> gsdepth::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "render_out".into()));
    let spec = SceneSpec {
        width: 160,
        height: 120,
        focal: 150.0,
        primitives: 3000,
        ..Default::default()
    };
    let scene = synth_scene(&spec, 0)?;
    let cam = &scene.dataset.test[0].camera;

    let frame = Frame::prepare(&scene.ground_truth, cam)?;
    println!("{} of {} primitives visible", frame.visible_count(), scene.ground_truth.len());

    let colors = ColorModel::Sh.colors(&scene.ground_truth, cam)?;
    write_png(&frame.render_color(&colors, Vector3::zeros())?, &out.join("color.png"))?;
    for (name, kind) in [("depth", RenderKind::Depth), ("hard", RenderKind::HardDepth(DEFAULT_TAU)), ("soft", RenderKind::SoftDepth)] {
        let d = frame.render_depth(kind)?;
        let n = d.len() as f64;
        let (depth, weight) = (d.depth.iter().sum::<f64>() / n, d.accum_alpha.iter().sum::<f64>() / n);
        println!("{name:>5}: mean value {depth:.3}, mean accumulated weight {weight:.3}");
        write_pfm(&d, &out.join(format!("{name}.pfm")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
