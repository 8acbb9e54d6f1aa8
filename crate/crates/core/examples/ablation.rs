//! Trains every regularization variant on a few seeded synthetic scenes and
//! prints held-out PSNR and depth error.
//!
//! cargo run --release --example ablation -- [seeds] [iterations]

use gsdepth::harness::ablation::{desk_dataset, run_variant, Variant, DESK_CORRUPTION};

fn main() -> gsdepth::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);

    println!("{:>4}  {:<18} {:>8} {:>8} {:>10}", "seed", "variant", "psnr", "ssim", "depth_mae");
    for seed in 0..seeds {
        let ds = desk_dataset(seed, DESK_CORRUPTION)?;
        for v in Variant::ALL {
            let m = run_variant(&ds, v, iters, seed)?;
            println!(
                "{seed:>4}  {:<18} {:>8.3} {:>8.4} {:>10.4}",
                format!("{v:?}"),
                m.psnr,
                m.ssim,
                m.depth_mae.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
