use gsdepth::autodiff::gradcheck::{random_scene, random_view};
use gsdepth::autodiff::GradGroup;
use gsdepth::field::logit;
use gsdepth::harness::{synth_scene, Dataset, SceneSpec};
use gsdepth::train::checkpoint::{decode, encode};
use gsdepth::train::{fit, resume, train_until, Regularization, TrainConfig, TrainState};
use gsdepth::{ColorMode, ColorModel, Error};
use nalgebra::Vector3;

fn tiny_dataset(seed: u64) -> Dataset {
    let spec = SceneSpec {
        primitives: 200,
        width: 20,
        height: 20,
        focal: 20.0,
        ..Default::default()
    };
    synth_scene(&spec, seed).unwrap().dataset
}

fn tiny_config(iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_iters: iters,
        soft_start_iter: iters / 3,
        color_mode: ColorMode::Sh(1),
        init_primitives: 120,
        eval_interval: iters / 2,
        seed: 3,
        ..Default::default()
    };
    cfg.densify.start = iters / 4;
    cfg.densify.stop = iters;
    cfg.densify.interval = iters / 4;
    cfg
}

fn state_on_random_scene(reg: Regularization, soft_start: usize) -> (TrainState, gsdepth::harness::View) {
    let (field, cam) = random_scene(12, 24, 15, ColorMode::Sh(1)).unwrap();
    let cfg = TrainConfig {
        color_mode: ColorMode::Sh(1),
        soft_start_iter: soft_start,
        regularization: reg,
        ..Default::default()
    };
    let state = TrainState::from_parts(cfg, field, ColorModel::Sh, 1.0).unwrap();
    (state, random_view(12, &cam))
}

#[test]
fn hard_term_leaves_shape_opacity_and_color_untouched() {
    let hard_only = Regularization {
        soft: false,
        ..Default::default()
    };
    let (with, view) = state_on_random_scene(hard_only, 0);
    let (without, _) = state_on_random_scene(Regularization::NONE, 0);
    let a = with.objective(&view, &[], 6).unwrap();
    let b = without.objective(&view, &[], 6).unwrap();
    assert!(a.hard > 0.0);
    for g in [GradGroup::Scale, GradGroup::Rotation, GradGroup::Opacity, GradGroup::Color] {
        assert_eq!(a.grads.group(g), b.grads.group(g), "{g:?}");
    }
    assert_ne!(a.grads.group(GradGroup::Center), b.grads.group(GradGroup::Center));
}

#[test]
fn soft_term_reaches_only_opacity() {
    let soft_only = Regularization {
        hard: false,
        ..Default::default()
    };
    let (with, view) = state_on_random_scene(soft_only, 0);
    let (without, _) = state_on_random_scene(Regularization::NONE, 0);
    let a = with.objective(&view, &[], 6).unwrap();
    let b = without.objective(&view, &[], 6).unwrap();
    assert!(a.soft > 0.0);
    for g in [GradGroup::Center, GradGroup::Scale, GradGroup::Rotation, GradGroup::Color] {
        assert_eq!(a.grads.group(g), b.grads.group(g), "{g:?}");
    }
    assert_ne!(a.grads.opacity, b.grads.opacity);
}

#[test]
fn soft_term_starts_exactly_at_schedule() {
    let soft_only = Regularization {
        hard: false,
        ..Default::default()
    };
    let (mut s, view) = state_on_random_scene(soft_only, 1000);
    let (mut base, _) = state_on_random_scene(Regularization::NONE, 1000);
    for iter in [999, 1000] {
        s.iter = iter;
        base.iter = iter;
        let a = s.objective(&view, &[], 6).unwrap();
        let b = base.objective(&view, &[], 6).unwrap();
        if iter < 1000 {
            assert_eq!(a.soft, 0.0);
            assert_eq!(a.grads.opacity, b.grads.opacity);
        } else {
            assert!(a.soft > 0.0);
            assert_ne!(a.grads.opacity, b.grads.opacity);
        }
    }
}

#[test]
fn fit_is_reproducible() {
    let ds = tiny_dataset(1);
    let cfg = tiny_config(40);
    let a = fit(&cfg, &ds).unwrap();
    let b = fit(&cfg, &ds).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.state.field, b.state.field);
    assert_eq!(a.log.len(), 2);
}

#[test]
fn fit_is_independent_of_thread_count() {
    let ds = tiny_dataset(2);
    let mut cfg = tiny_config(24);
    cfg.color_mode = ColorMode::Neural;
    cfg.hash_grid.log2_table_size = 10;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&cfg, &ds).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.log, b.log);
    assert_eq!(a.state.field, b.state.field);
}

#[test]
fn checkpoint_resume_matches_uninterrupted_run() {
    let ds = tiny_dataset(3);
    let cfg = tiny_config(40);
    let full = fit(&cfg, &ds).unwrap();

    let first = train_until(TrainState::new(cfg.clone(), &ds).unwrap(), &ds, 20, |_| {}).unwrap();
    let bytes = encode(&first.state);
    let restored = decode(&bytes).unwrap();
    assert_eq!(encode(&restored), bytes);
    assert_eq!(restored.field, first.state.field);
    assert_eq!(restored.optimizer, first.state.optimizer);
    assert_eq!(restored.densify, first.state.densify);

    let second = resume(restored, &ds, |_| {}).unwrap();
    assert_eq!(second.state.field, full.state.field);
    assert_eq!(second.log, full.log[1..]);
    assert_eq!(first.log, full.log[..1]);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let ds = tiny_dataset(3);
    let state = fit(&tiny_config(8), &ds).unwrap().state;
    let mut bytes = encode(&state);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
    assert!(matches!(decode(&bytes[..10]), Err(Error::Checkpoint(_))));
}

#[test]
fn config_toml_round_trip() {
    let mut cfg = TrainConfig::default();
    cfg.regularization.shape_freeze = false;
    cfg.color_mode = ColorMode::Sh(2);
    cfg.weights.gamma = 0.25;
    let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    assert_ne!(TrainConfig::default().hash(), cfg.hash());
    assert_eq!(TrainConfig::from_toml("").unwrap(), TrainConfig::default());
    assert!(TrainConfig::from_toml("patch_range = [1, 4]").is_err());
    assert!(TrainConfig::from_toml("color_mode = \"sh:7\"").is_err());
}

#[test]
fn densify_clones_small_splits_large_and_prunes_transparent() {
    let (mut field, _) = random_scene(2, 16, 4, ColorMode::Sh(0)).unwrap();
    {
        let p = field.primitives_mut();
        p[0].log_scale = Vector3::repeat((0.001f64).ln());
        p[1].log_scale = Vector3::repeat((0.5f64).ln());
        p[3].opacity_logit = logit(1e-3);
    }
    let cfg = TrainConfig {
        color_mode: ColorMode::Sh(0),
        ..Default::default()
    };
    let mut s = TrainState::from_parts(cfg, field.clone(), ColorModel::Sh, 1.0).unwrap();
    s.densify.accum = vec![1.0, 1.0, 0.0, 0.0];
    s.densify.count = vec![1, 1, 1, 1];
    s.optimizer.opacity.m = vec![10.0, 11.0, 12.0, 13.0];
    let r = s.densify_and_prune();
    assert_eq!((r.cloned, r.split, r.pruned), (1, 1, 1));
    // Kept: 0 and 2 (3 pruned, 1 replaced); added: clone of 0, two halves of 1.
    assert_eq!(s.field.len(), 5);
    assert_eq!(s.field.primitives()[0], field.primitives()[0]);
    assert_eq!(s.field.primitives()[1], field.primitives()[2]);
    assert_eq!(s.optimizer.opacity.m, vec![10.0, 12.0, 0.0, 0.0, 0.0]);
    assert_eq!(s.optimizer.center.len(), 15);
    let shrink = field.primitives()[1].log_scale.x - 1.6f64.ln();
    assert!((s.field.primitives()[3].log_scale.x - shrink).abs() < 1e-12);
    assert_eq!(s.densify.count, vec![0; 5]);
}

#[test]
fn non_finite_parameters_surface_as_numerical_failure() {
    let ds = tiny_dataset(4);
    let mut state = TrainState::new(tiny_config(10), &ds).unwrap();
    state.field.primitives_mut()[0].opacity_logit = f64::NAN;
    let err = state.train_step(&ds.train[0], &[]).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { iter: 0, .. }), "{err}");
}

#[test]
fn depth_terms_require_mono_depth() {
    let mut ds = tiny_dataset(5);
    ds.train[1].mono_depth = None;
    assert!(matches!(fit(&tiny_config(4), &ds), Err(Error::InvalidConfig(_))));
    let mut cfg = tiny_config(4);
    cfg.regularization = Regularization::NONE;
    fit(&cfg, &ds).unwrap();
}
