//! Local and global depth normalization make the depth loss blind to the
//! unknown scale and shift of a monocular estimate.
//!
//! cargo run --release --example depth_normalization

use gsdepth::losses::{depth_regularization, normalize, partition, Epsilon, LossWeights, NormMode};
use gsdepth::DepthMap;

fn main() -> gsdepth::Result<()> {
    let (w, h) = (32, 24);
    // Two slanted planes with a step between them.
    let truth: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            if x < 14.0 { 2.0 + 0.02 * y } else { 3.5 - 0.01 * x }
        })
        .collect();
    let gt = DepthMap::from_depth(w, h, truth.clone())?;
    let mono = DepthMap::from_depth(w, h, truth.iter().map(|d| 0.5 * d + 3.0).collect())?;
    let wrong = DepthMap::from_depth(w, h, truth.iter().rev().copied().collect())?;

    let grid = partition(w, h, 8)?;
    for mode in [NormMode::Local, NormMode::Global] {
        let a = normalize(&gt, &grid, mode, Epsilon::ImageStd)?;
        let b = normalize(&mono, &grid, mode, Epsilon::ImageStd)?;
        let drift = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("{mode:?}: max difference after 0.5·d + 3 is {drift:.2e}");
    }

    let weights = LossWeights::default();
    println!("raw L1 between gt and corrupted: {:.3}", truth.iter().zip(&mono.depth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64);
    println!("regularizer, gt vs corrupted:   {:.3e}", depth_regularization(&gt, &mono, &grid, &weights)?);
    println!("regularizer, gt vs wrong shape: {:.3e}", depth_regularization(&gt, &wrong, &grid, &weights)?);
    Ok(())
}
