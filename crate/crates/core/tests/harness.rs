use gsdepth::autodiff::gradcheck::random_scene;
use gsdepth::harness::io::{quantize_depth, quantize_image, read_camera, write_camera, CameraRecord};
use gsdepth::harness::synth::corrupt_depth;
use gsdepth::harness::{
    depth_errors, evaluate, load_dataset, psnr, read_pfm, read_ply, save_dataset, synth_scene, write_pfm, write_png, write_ply,
    read_png, Corruption, SceneKind, SceneSpec, PSNR_CAP,
};
use gsdepth::raster::{render_color, render_depth};
use gsdepth::{Camera, ColorMode, ColorModel, DepthMap, Error, GaussianField, ImageBuffer};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SceneSpec {
    SceneSpec {
        primitives: 300,
        width: 24,
        height: 20,
        focal: 24.0,
        ..Default::default()
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let a = synth_scene(&small_spec(), 5).unwrap();
    let b = synth_scene(&small_spec(), 5).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.ground_truth, b.ground_truth);
    let c = synth_scene(&small_spec(), 6).unwrap();
    assert_ne!(a.ground_truth, c.ground_truth);
}

#[test]
fn identity_corruption_copies_gt_depth() {
    let s = synth_scene(&small_spec(), 1).unwrap();
    for v in s.dataset.train.iter().chain(&s.dataset.test) {
        assert_eq!(v.mono_depth.as_ref().unwrap().depth, v.gt_depth.as_ref().unwrap().depth);
    }
}

#[test]
fn affine_corruption_without_noise_is_exact_map() {
    let gt = DepthMap::from_depth(3, 1, vec![2.0, 2.5, 4.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = Corruption { a: 0.5, b: 3.0, sigma: 0.0 };
    let m = corrupt_depth(&gt, &c, &mut rng).unwrap();
    assert_eq!(m.depth, vec![4.0, 4.25, 5.0]);
}

#[test]
fn every_scene_kind_generates() {
    for kind in [SceneKind::TexturedPlanes, SceneKind::GaussianClusters, SceneKind::SphereShell] {
        let s = synth_scene(&SceneSpec { kind, ..small_spec() }, 2).unwrap();
        s.dataset.validate().unwrap();
        assert_eq!(s.dataset.train.len(), 3);
        assert_eq!(s.dataset.test.len(), 6);
    }
}

#[test]
fn coincident_ring_is_rejected() {
    let mut spec = small_spec();
    spec.ring.radius = 0.0;
    assert!(matches!(synth_scene(&spec, 0), Err(Error::DegenerateCameraRing)));
}

#[test]
fn two_planes_give_bimodal_depth() {
    // One head-on camera so distance tracks plane depth closely.
    let spec = SceneSpec {
        ring: gsdepth::harness::CameraRing {
            count: 1,
            arc_degrees: 0.0,
            ..Default::default()
        },
        train_views: vec![0],
        ..small_spec()
    };
    let s = synth_scene(&spec, 3).unwrap();
    let d = s.dataset.train[0].gt_depth.as_ref().unwrap();
    let mut hist = [0usize; 6];
    for &v in &d.depth {
        let bin = (v.round() as usize).min(5);
        hist[bin] += 1;
    }
    let (near, mid, far) = (hist[2], hist[3], hist[4]);
    assert!(near > mid && far > mid, "histogram {hist:?}");
    assert!(near + far > d.len() / 2, "histogram {hist:?}");
}

#[test]
fn dataset_round_trip_is_exact_after_quantization() {
    let s = synth_scene(&small_spec(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&s.dataset, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.train.len(), s.dataset.train.len());
    for (a, b) in back.train.iter().chain(&back.test).zip(s.dataset.train.iter().chain(&s.dataset.test)) {
        assert_eq!(a.camera.world_to_camera_row_major(), b.camera.world_to_camera_row_major());
        assert_eq!((a.camera.fx, a.camera.fy, a.camera.cx, a.camera.cy), (b.camera.fx, b.camera.fy, b.camera.cx, b.camera.cy));
        assert_eq!(a.image, b.image);
        assert_eq!(a.mono_depth, b.mono_depth);
        assert_eq!(a.gt_depth, b.gt_depth);
    }
    assert_eq!(back.bounds, s.dataset.bounds);
}

#[test]
fn missing_depth_file_is_reported() {
    let s = synth_scene(&small_spec(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&s.dataset, dir.path()).unwrap();
    let victim = dir.path().join("depth").join(format!("{}.mono.pfm", s.dataset.train[0].name));
    std::fs::remove_file(&victim).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::MissingFile(p)) => assert_eq!(p, victim),
        other => panic!("expected missing file, got {other:?}"),
    }
}

#[test]
fn malformed_camera_json_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path()).unwrap();
    std::fs::write(dir.path().join("cameras.json"), "{ not json").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Json { .. })));
}

#[test]
fn camera_record_round_trip_is_bit_exact() {
    let cam = Camera::look_at(
        Vector3::new(0.3, -0.71, -2.9),
        Vector3::new(0.1, 0.0, 3.0),
        -Vector3::y(),
        37.3,
        31,
        17,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cam.json");
    write_camera(&cam, &p).unwrap();
    let back = read_camera(&p).unwrap();
    assert_eq!(back.world_to_camera_row_major(), cam.world_to_camera_row_major());
    let mut rec = CameraRecord::from_camera(&cam);
    rec.world_to_camera[12] = 1.0;
    assert!(rec.to_camera().is_err());
}

#[test]
fn pfm_round_trip_and_big_endian_rejection() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = quantize_depth(&DepthMap::from_depth(5, 3, (0..15).map(|_| rng.random_range(0.0..10.0)).collect()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.pfm");
    write_pfm(&d, &p).unwrap();
    assert_eq!(read_pfm(&p).unwrap().depth, d.depth);

    let mut bytes = std::fs::read(&p).unwrap();
    let text = String::from_utf8_lossy(&bytes[..16]).to_string();
    let at = text.find("-1").unwrap();
    bytes[at] = b' ';
    std::fs::write(&p, &bytes).unwrap();
    match read_pfm(&p) {
        Err(Error::Pfm { msg, .. }) => assert!(msg.contains("endian"), "{msg}"),
        other => panic!("expected PFM error, got {other:?}"),
    }
}

#[test]
fn png_round_trip_within_quantization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = ImageBuffer::from_fn(7, 5, |_, _| Vector3::from_fn(|_, _| rng.random::<f64>()));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("i.png");
    write_png(&img, &p).unwrap();
    let back = read_png(&p).unwrap();
    for (a, b) in img.rgb.iter().zip(&back.rgb) {
        assert!((a - b).amax() <= 0.5 / 255.0 + 1e-12);
    }
    assert_eq!(back, quantize_image(&img));
}

#[test]
fn ply_round_trip_within_f32() {
    let (field, _) = random_scene(3, 16, 25, ColorMode::Sh(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.ply");
    write_ply(&field, &ColorModel::Sh, &p).unwrap();
    let verts = read_ply(&p).unwrap();
    assert_eq!(verts.len(), field.len());
    for (v, prim) in verts.iter().zip(field.primitives()) {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + b.abs());
        assert!((0..3).all(|i| close(v.center[i], prim.center[i])));
        assert!((0..3).all(|i| close(v.log_scale[i], prim.log_scale[i])));
        assert!((0..4).all(|i| close(v.rotation[i], prim.rotation[i])));
        assert!(close(v.opacity, prim.opacity()));
        assert!(v.rgb.is_some());
    }
}

#[test]
fn empty_field_writes_valid_ply() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.ply");
    write_ply(&GaussianField::new(ColorMode::Sh(0)), &ColorModel::Sh, &p).unwrap();
    assert!(read_ply(&p).unwrap().is_empty());
}

#[test]
fn psnr_closed_forms() {
    let black = ImageBuffer::filled(4, 4, Vector3::zeros());
    let gray = ImageBuffer::filled(4, 4, Vector3::repeat(0.5));
    let expected = -10.0 * 0.25f64.log10();
    assert!((psnr(&black, &gray).unwrap() - expected).abs() < 1e-12);
    assert_eq!(psnr(&gray, &gray).unwrap(), PSNR_CAP);
}

#[test]
fn depth_mae_matches_brute_force() {
    let (field, cam) = random_scene(8, 24, 20, ColorMode::Sh(0)).unwrap();
    let rendered = render_depth(&field, &cam).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = DepthMap::from_depth(24, 24, (0..576).map(|_| rng.random_range(1.0..5.0)).collect()).unwrap();
    let (mae, rmse) = depth_errors(&rendered, &gt).unwrap().unwrap();

    let mut errs = Vec::new();
    for y in 0..24 {
        for x in 0..24 {
            let i = y * 24 + x;
            if rendered.accum_alpha[i] > 0.5 {
                errs.push(rendered.depth[i] - gt.depth[i]);
            }
        }
    }
    assert!(!errs.is_empty());
    let n = errs.len() as f64;
    assert!((mae - errs.iter().map(|e| e.abs()).sum::<f64>() / n).abs() < 1e-12);
    assert!((rmse - (errs.iter().map(|e| e * e).sum::<f64>() / n).sqrt()).abs() < 1e-12);
}

#[test]
fn evaluating_ground_truth_is_perfect_and_pure() {
    let s = synth_scene(&small_spec(), 4).unwrap();
    let bg = Vector3::zeros();
    let r = evaluate(&s.ground_truth, &ColorModel::Sh, &s.dataset, bg).unwrap();
    // Images are stored at 8 bits, so the rerender is close but not exact.
    assert!(r.aggregate.psnr > 45.0, "{}", r.aggregate.psnr);
    assert!(r.aggregate.ssim > 0.999);
    assert!(r.aggregate.depth_mae.unwrap() < 1e-5);
    assert_eq!(r, evaluate(&s.ground_truth, &ColorModel::Sh, &s.dataset, bg).unwrap());

    let v = &s.dataset.test[0];
    let colors = ColorModel::Sh.colors(&s.ground_truth, &v.camera).unwrap();
    let img = render_color(&s.ground_truth, &v.camera, &colors, bg).unwrap();
    assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP);
}
