//! Finite-difference check of every render kind and of the full training
//! objective on a small random scene.
//!
//! cargo run --release --example gradcheck -- [seed]

use gsdepth::autodiff::gradcheck::{check_all_kinds, objective_check, random_scene, random_view};
use gsdepth::train::{Regularization, TrainConfig, TrainState};
use gsdepth::{ColorMode, ColorModel};

fn main() -> gsdepth::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (field, cam) = random_scene(seed, 24, 12, ColorMode::Sh(2))?;

    for (kind, report) in check_all_kinds(&field, &cam, &ColorModel::Sh, 1e-5, seed)? {
        println!("{kind:?}: {}", if report.passes(1e-4) { "ok" } else { "MISMATCH" });
        print!("{report}");
    }

    let config = TrainConfig {
        color_mode: ColorMode::Sh(2),
        soft_start_iter: 0,
        regularization: Regularization {
            shape_freeze: false,
            center_freeze: false,
            ..Default::default()
        },
        ..Default::default()
    };
    let state = TrainState::from_parts(config, field, ColorModel::Sh, 1.0)?;
    let view = random_view(seed, &cam);
    let report = objective_check(&state, &view, 7, 1e-5)?;
    println!("full objective: {}", if report.passes(1e-4) { "ok" } else { "MISMATCH" });
    print!("{report}");
    Ok(())
}
