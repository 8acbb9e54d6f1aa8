//! Fits the hash-grid color renderer on a small scene and shows that its
//! colors depend on the viewing direction.
//!
//! cargo run --release --example neural_color -- [iters]

use gsdepth::harness::ablation::{desk_config, desk_dataset};
use gsdepth::harness::Corruption;
use gsdepth::train::fit;
use gsdepth::ColorMode;
use nalgebra::Vector3;

fn main() -> gsdepth::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let dataset = desk_dataset(1, Corruption::default())?;

    let mut config = desk_config(iters, 1);
    config.color_mode = ColorMode::Neural;
    config.hash_grid.log2_table_size = 14;
    config.eval_interval = (iters / 3).max(1);
    let result = fit(&config, &dataset)?;
    for r in &result.log {
        println!("iter {:4}  psnr {:6.3}  ssim {:.4}", r.iter, r.psnr, r.ssim);
    }

    let state = &result.state;
    let renderer = state.model.neural().expect("neural mode");
    println!("{} hash-table entries, {} MLP weights", renderer.encoder.tables.len(), renderer.mlp.params.len());
    for dir in [Vector3::z(), Vector3::new(0.4, 0.0, 1.0).normalize(), Vector3::new(-0.4, 0.2, 1.0).normalize()] {
        let c = state.model.colors_along(&state.field, &dir)?;
        let mean = c.iter().sum::<Vector3<f64>>() / c.len() as f64;
        println!("view dir {:?}: mean color {:.4?}", dir.as_slice(), mean.as_slice());
    }
    Ok(())
}
