use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use gsdepth::autodiff::gradcheck::{check_all_kinds, random_scene};
use gsdepth::harness::io::{read_camera, write_json};
use gsdepth::harness::{evaluate, load_dataset, save_dataset, synth_scene, write_pfm, write_png, write_ply, SceneSpec};
use gsdepth::raster::{Frame, RenderKind};
use gsdepth::train::{load_checkpoint, resume, save_checkpoint, TrainConfig, TrainState};
use gsdepth::{ColorMode, ColorModel, Error};

#[derive(Parser)]
#[command(name = "gsdepth", version, about = "Depth-regularized sparse-view Gaussian splatting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Render a checkpoint from a camera.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the rendered depth as PFM.
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset's held-out views.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Finite-difference check of every render kind on a random scene.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        size: usize,
        #[arg(long, default_value_t = 20)]
        prims: usize,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "print_config")]
    data: Option<PathBuf>,
    /// TOML config; defaults are used for missing keys and when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    #[arg(long)]
    no_hard: bool,
    #[arg(long)]
    no_soft: bool,
    #[arg(long)]
    no_local_norm: bool,
    #[arg(long)]
    no_global_norm: bool,
    #[arg(long)]
    no_shape_freeze: bool,
    #[arg(long)]
    no_center_freeze: bool,
    /// `sh:<degree>` or `neural`.
    #[arg(long)]
    color_mode: Option<String>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

enum Failure {
    Validation(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(Error::NonFiniteLoss { .. }) => Failure::Numerical(e),
            _ => Failure::Validation(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { spec, seed, out } => synth(&spec, seed, &out),
        Command::Train(args) => train(args),
        Command::Render { ckpt, camera, out, depth } => render(&ckpt, &camera, &out, depth.as_deref()),
        Command::Eval { ckpt, data, report } => eval(&ckpt, &data, &report),
        Command::Gradcheck { seed, size, prims } => gradcheck(seed, size, prims),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {}", describe(&e));
            ExitCode::from(3)
        }
    }
}

/// Error chain without repeating sources already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for part in e.chain().map(|c| c.to_string()) {
        if !out.contains(&part) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&part);
        }
    }
    out
}

fn synth(spec: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SceneSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let scene = synth_scene(&spec, seed)?;
    save_dataset(&scene.dataset, out)?;
    println!(
        "wrote {} train and {} test views to {}",
        scene.dataset.train.len(),
        scene.dataset.test.len(),
        out.display()
    );
    Ok(())
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    let reg = &mut cfg.regularization;
    reg.hard &= !args.no_hard;
    reg.soft &= !args.no_soft;
    reg.local_norm &= !args.no_local_norm;
    reg.global_norm &= !args.no_global_norm;
    reg.shape_freeze &= !args.no_shape_freeze;
    reg.center_freeze &= !args.no_center_freeze;
    if let Some(m) = args.color_mode {
        cfg.color_mode = ColorMode::try_from(m)?;
    }
    cfg.validate()?;
    if args.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let (data, out) = (args.data.expect("required by clap"), args.out.expect("required by clap"));
    let ds = load_dataset(&data)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let total = cfg.total_iters;
    let report_every = (total / 20).max(1);
    let state = TrainState::new(cfg.clone(), &ds)?;
    let result = resume(state, &ds, |s| {
        if (s.iter + 1) % report_every == 0 {
            eprintln!(
                "iter {:>6}/{total}  loss {:.5}  color {:.5}  hard {:.5}  soft {:.5}  primitives {}",
                s.iter + 1,
                s.total,
                s.color,
                s.hard,
                s.soft,
                s.primitives
            );
        }
    })?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).with_context(|| format!("writing config to {}", out.display()))?;
    save_checkpoint(&result.state, &out.join("final.ckpt"))?;
    write_json(&result.log, &out.join("metrics.json"))?;
    write_ply(&result.state.field, &result.state.model, &out.join("point_cloud.ply"))?;
    if let Some(last) = result.log.last() {
        println!(
            "iter {}  psnr {:.3}  ssim {:.4}  depth_mae {}  primitives {}",
            last.iter,
            last.psnr,
            last.ssim,
            last.depth_mae.map_or("n/a".into(), |d| format!("{d:.4}")),
            last.primitives
        );
    }
    Ok(())
}

fn render(ckpt: &Path, camera: &Path, out: &Path, depth: Option<&Path>) -> Result<(), Failure> {
    let state = load_checkpoint(ckpt)?;
    let cam = read_camera(camera)?;
    let frame = Frame::prepare(&state.field, &cam)?;
    let colors = state.model.colors(&state.field, &cam)?;
    let img = frame.render_color(&colors, Vector3::from(state.config.background))?;
    write_png(&img, out)?;
    if let Some(p) = depth {
        write_pfm(&frame.render_depth(RenderKind::Depth)?, p)?;
    }
    Ok(())
}

fn eval(ckpt: &Path, data: &Path, report: &Path) -> Result<(), Failure> {
    let state = load_checkpoint(ckpt)?;
    let ds = load_dataset(data)?;
    let r = evaluate(&state.field, &state.model, &ds, Vector3::from(state.config.background))?;
    write_json(&r, report)?;
    let a = r.aggregate;
    println!(
        "psnr {:.3}  ssim {:.4}  depth_mae {}  depth_rmse {}",
        a.psnr,
        a.ssim,
        a.depth_mae.map_or("n/a".into(), |d| format!("{d:.4}")),
        a.depth_rmse.map_or("n/a".into(), |d| format!("{d:.4}"))
    );
    Ok(())
}

fn gradcheck(seed: u64, size: usize, prims: usize) -> Result<(), Failure> {
    if size == 0 || prims == 0 {
        return Err(Error::InvalidConfig("size and prims must be positive".into()).into());
    }
    let (field, cam) = random_scene(seed, size, prims, ColorMode::Sh(2))?;
    let mut ok = true;
    for (kind, report) in check_all_kinds(&field, &cam, &ColorModel::Sh, 1e-5, seed)? {
        let pass = report.passes(1e-4);
        ok &= pass;
        println!("{kind:?}: {}", if pass { "pass" } else { "FAIL" });
        print!("{report}");
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Numerical(anyhow::anyhow!("analytic gradients disagree with finite differences")))
    }
}
