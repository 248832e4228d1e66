use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{AnalyticField, Field, ScaledField};
use crate::geocheck::MaskState;
use crate::render::{forward_with_samples, sample_rays, SamplingConfig};
use crate::scene::normalize_scene;
use crate::scene::synthetic::{make_synthetic_scene, Primitive, SyntheticSpec};

fn small_scene() -> Scene {
    let mut spec = SyntheticSpec::new(Primitive::BoxRoom);
    spec.width = 24;
    spec.height = 18;
    spec.views = 6;
    spec.supersample = 1;
    normalize_scene(&make_synthetic_scene(&spec).unwrap()).unwrap().0
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Tiny);
    c.field.geo_width = 16;
    c.field.geo_layers = 2;
    c.field.feature_dim = 8;
    c.field.color_width = 16;
    c.field.color_layers = 1;
    c.field.pos_octaves = 2;
    c.field.dir_octaves = 1;
    c.sampling = SamplingConfig {
        n_coarse: 12,
        n_upsample_rounds: 1,
        n_importance: 4,
        upsample_base_sharpness: 64,
    };
    c.rays_per_batch = 16;
    c.phase_one_iters = 20;
    c.total_iters = 40;
    c.lr_warmup = 5;
    c.check.patch_half = 2;
    c.checkpoint_every = 0;
    c
}

fn run(scene: &Scene, cfg: TrainConfig, steps: usize) -> TrainState<f64> {
    let mut t = Trainer::<f64>::new(scene, cfg).unwrap();
    t.run_until(steps, |_| Ok(())).unwrap();
    t.state
}

#[test]
fn color_loss_examples() {
    let img = vec![[0.2, 0.5, 0.9], [0.0, 1.0, 0.3]];
    assert_eq!(loss_color(&img, &img).value, 0.0);
    let shifted: Vec<[f64; 3]> = img.iter().map(|c| c.map(|v| v + 0.1)).collect();
    assert!((loss_color(&shifted, &img).value - 0.3).abs() < 1e-12);
}

#[test]
fn prior_loss_examples() {
    let n: Vec<[f64; 3]> = vec![[0.0, 0.0, -1.0]; 4];
    let off = vec![[0.1, 0.0, -1.0]; 4];
    assert_eq!(loss_prior(&off, &n, &[0.0; 4]).value, 0.0);
    assert_eq!(loss_prior(&n, &n, &[1.0; 4]).value, 0.0);
    // Half the batch rejected, constant error 0.1 on the rest.
    let l = loss_prior(&off, &n, &[1.0, 0.0, 1.0, 0.0]).value;
    assert!((l - 0.05).abs() < 1e-12);
    assert_eq!(loss_prior(&off, &n, &[1.0, 0.0, 1.0, 0.0]).grad[1], [0.0; 3]);
}

#[test]
fn eikonal_examples() {
    let sphere = AnalyticField::sphere([0.1, 0.0, -0.2], 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts: Vec<[f64; 3]> = (0..200).map(|_| [0; 3].map(|_: i32| rng.random_range(-0.9..0.9))).collect();
    let grads: Vec<[f64; 3]> = pts.iter().map(|p| sphere.sdf_gradient(*p)).collect();
    assert!(loss_eikonal(&grads).value < 1e-10);
    let scaled = ScaledField { inner: sphere, factor: 2.0 };
    let grads: Vec<[f64; 3]> = pts.iter().map(|p| scaled.sdf_gradient(*p)).collect();
    assert!((loss_eikonal(&grads).value - 1.0).abs() < 1e-10);
}

#[test]
fn eikonal_on_tiny_field_matches_loop_oracle() {
    let field = NeuralField::<f64>::new(small_config().field, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<[f64; 3]> = (0..64).map(|_| [0; 3].map(|_: i32| rng.random_range(-0.9..0.9))).collect();
    let (geo, _) = field.geometry_forward(&pts, true, false);
    let fast = loss_eikonal(&geo.grad).value;
    let mut oracle = 0.0;
    for p in &pts {
        let g = field.sdf_gradient(*p);
        let len = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        oracle += (len - 1.0).powi(2);
    }
    oracle /= pts.len() as f64;
    assert!((fast - oracle).abs() < 1e-6, "{fast} vs {oracle}");
}

fn triples(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    proptest::collection::vec(proptest::array::uniform3(-1.0f64..1.0), n)
}

proptest! {
    #[test]
    fn color_loss_matches_loop_oracle(a in triples(17), b in triples(17)) {
        let mut oracle = 0.0;
        for k in 0..a.len() {
            for c in 0..3 {
                oracle += (a[k][c] - b[k][c]).abs();
            }
        }
        oracle /= a.len() as f64;
        prop_assert!((loss_color(&a, &b).value - oracle).abs() < 1e-6);
    }

    #[test]
    fn prior_loss_matches_loop_oracle(
        a in triples(13), b in triples(13),
        w in proptest::collection::vec(prop_oneof![Just(0.0f64), Just(1.0)], 13),
    ) {
        let mut oracle = 0.0;
        for k in 0..a.len() {
            let mut e = 0.0;
            for c in 0..3 {
                e += (a[k][c] - b[k][c]).abs();
            }
            oracle += w[k] * e;
        }
        oracle /= a.len() as f64;
        prop_assert!((loss_prior(&a, &b, &w).value - oracle).abs() < 1e-6);
    }

    #[test]
    fn learning_rate_positive_and_bounded(step in 0usize..200_000) {
        let c = TrainConfig::preset(Preset::Full);
        let lr = c.learning_rate(step);
        prop_assert!(lr > 0.0 && lr <= c.lr * (1.0 + 1e-12));
    }
}

#[test]
fn learning_rate_schedule_shape() {
    let c = TrainConfig::preset(Preset::Tiny);
    assert!(c.learning_rate(0) < c.learning_rate(c.lr_warmup - 1));
    assert!((c.learning_rate(c.lr_warmup) - c.lr).abs() < 1e-12);
    assert!((c.learning_rate(c.total_iters) - c.lr * c.lr_min_factor).abs() < 1e-12);
    let mid = c.learning_rate((c.lr_warmup + c.total_iters) / 2);
    assert!((mid - c.lr * (1.0 + c.lr_min_factor) / 2.0).abs() < 1e-9);
}

#[test]
fn config_round_trips_and_validates() {
    let mut c = small_config();
    c.exclude_views = vec![1, 3];
    c.geocheck = false;
    c.sphere_side = crate::field::SphereSide::SolidInside;
    let back = TrainConfig::from_kv(&c.to_kv()).unwrap();
    assert_eq!(back, c);
    let full = TrainConfig::from_kv(&KeyValues::default()).unwrap();
    assert_eq!(full, TrainConfig::preset(Preset::Full));
    assert_eq!((full.phase_one_iters, full.total_iters, full.rays_per_batch), (60_000, 160_000, 512));

    let bad = |text: &str| TrainConfig::from_kv(&KeyValues::parse(text).unwrap()).is_err();
    assert!(bad("phase_one_iters = 10\ntotal_iters = 10"));
    assert!(bad("lambda_prior = -1"));
    assert!(bad("rays_per_batch = 0"));
    assert!(bad("not_a_key = 1"));
    assert!(bad("preset = huge"));
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let scene = small_scene();
    let mut cfg = small_config();
    cfg.lambda_eik = 0.3;
    let mut field = NeuralField::<f64>::new(cfg.field.clone(), 11).unwrap();
    field.initialize_sphere(0.9, cfg.sphere_side, 12);
    let pixels: Vec<(usize, usize)> = (0..6).map(|k| (k % scene.views.len(), 37 + 29 * k)).collect();
    let rays: Vec<_> = pixels
        .iter()
        .map(|&(v, p)| {
            let view = &scene.views[v];
            view.pixel_ray((p % view.width) as f64, (p / view.width) as f64).unwrap()
        })
        .collect();
    let samples = sample_rays::<f64, _, ChaCha8Rng>(&field, &rays, &cfg.sampling, None);
    let omega = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let fwd = forward_with_samples(&field, &rays, &samples);
    let mut grads = vec![0.0; field.param_count()];
    let base = objective(&scene, &cfg, &field, &pixels, &fwd, &omega, Some(&mut grads));
    assert_eq!(
        base.total,
        cfg.lambda_color * base.color + cfg.lambda_prior * base.prior + cfg.lambda_eik * base.eik
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut indices: Vec<usize> = (0..25).map(|_| rng.random_range(0..field.param_count())).collect();
    indices.push(field.sharpness_index());
    let h = 1e-6;
    let mut checked = 0;
    for i in indices {
        let eval = |delta: f64| {
            let mut f = field.clone();
            f.params_mut()[i] += delta;
            let fwd = forward_with_samples(&f, &rays, &samples);
            objective(&scene, &cfg, &f, &pixels, &fwd, &omega, None).total
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let g = grads[i];
        if fd.abs().max(g.abs()) < 1e-7 {
            continue;
        }
        checked += 1;
        assert!((fd - g).abs() <= 1e-2 * fd.abs().max(g.abs()), "param {i}: fd {fd} vs analytic {g}");
    }
    assert!(checked >= 10);
}

#[test]
fn logged_loss_is_weighted_sum() {
    let scene = small_scene();
    let state = run(&scene, small_config(), 5);
    let c = &state.config;
    for r in &state.log {
        let expect = total_loss([c.lambda_color, c.lambda_prior, c.lambda_eik], r.loss_color, r.loss_prior, r.loss_eik);
        assert_eq!(r.loss, expect);
        assert!(r.loss.is_finite() && r.sharpness > 0.0);
    }
}

#[test]
fn mask_untouched_in_phase_one_then_checked() {
    let scene = small_scene();
    let mut cfg = small_config();
    cfg.sampling = SamplingConfig::uniform(16);
    let mut t = Trainer::<f64>::new(&scene, cfg.clone()).unwrap();
    t.run_until(cfg.phase_one_iters, |s| {
        assert_eq!(s.mask.counts(), (s.mask.counts().0, 0, 0));
        Ok(())
    })
    .unwrap();
    assert!(!t.state.log.is_empty() && t.in_phase_two());
    t.run_until(cfg.total_iters, |_| Ok(())).unwrap();
    let (untested, accepted, rejected) = t.state.mask.counts();
    assert!(accepted + rejected > 0, "no pixel tested in phase two ({untested} untested)");
    let mut prev = 0;
    for r in &t.state.log {
        assert!(r.rejected >= prev);
        prev = r.rejected;
    }
}

#[test]
fn zero_prior_weight_makes_mask_irrelevant() {
    let scene = small_scene();
    let mut cfg = small_config();
    cfg.lambda_prior = 0.0;
    let with_check = run(&scene, cfg.clone(), cfg.total_iters);
    cfg.geocheck = false;
    let without = run(&scene, cfg.clone(), cfg.total_iters);
    assert!(with_check.mask.counts().1 + with_check.mask.counts().2 > 0);
    assert_eq!(without.mask.counts().1 + without.mask.counts().2, 0);
    assert_eq!(with_check.field.params(), without.field.params());
}

#[test]
fn same_seed_same_trajectory_other_seed_differs() {
    let scene = small_scene();
    let cfg = small_config();
    let a = run(&scene, cfg.clone(), 10);
    let b = run(&scene, cfg.clone(), 10);
    assert_eq!(a.log, b.log);
    let mut other = cfg;
    other.seed = 99;
    let c = run(&scene, other, 10);
    assert_ne!(a.log, c.log);
}

#[test]
fn resume_from_checkpoint_is_bit_exact() {
    let scene = small_scene();
    let cfg = small_config();
    let straight = run(&scene, cfg.clone(), cfg.total_iters);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    // Stop inside phase two so the mask is part of the saved state.
    run(&scene, cfg.clone(), 27).save(&path).unwrap();
    let loaded = TrainState::<f64>::load(&path).unwrap();
    assert_eq!(loaded.step, 27);
    let mut t = Trainer::resume(&scene, loaded).unwrap();
    t.run_until(cfg.total_iters, |_| Ok(())).unwrap();
    assert_eq!(t.state.log, straight.log);
    assert_eq!(t.state.field.params(), straight.field.params());
    assert_eq!(t.state.optimizer, straight.optimizer);
    assert_eq!(t.state.mask, straight.mask);
    // The field alone loads from a training checkpoint.
    assert!(NeuralField::<f64>::load(&path).is_ok());
    assert!(TrainState::<f32>::load(&path).is_err());
}

#[test]
fn train_writes_log_and_checkpoints() {
    let scene = small_scene();
    let mut cfg = small_config();
    cfg.total_iters = 6;
    cfg.phase_one_iters = 3;
    cfg.checkpoint_every = 2;
    let dir = tempfile::tempdir().unwrap();
    let state = train::<f32>(&scene, None, cfg, dir.path()).unwrap();
    assert_eq!(state.step, 6);
    let log = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
    assert!(log.starts_with("step,L,L_c,L_p,L_eik,rejected,s\n"));
    assert_eq!(log.lines().count(), 7);
    assert!(dir.path().join("final.ckpt").exists());
    assert!(dir.path().join("checkpoints/step_0000002.ckpt").exists());
    assert!(dir.path().join("checkpoints/step_0000004.ckpt").exists());
}

#[test]
fn non_finite_parameters_abort_with_dump() {
    let scene = small_scene();
    let mut t = Trainer::<f64>::new(&scene, small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.dump_dir = Some(dir.path().to_path_buf());
    let i = t.state.field.sharpness_index();
    t.state.field.params_mut()[i] = f64::NAN;
    match t.step() {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("dumped"), "{msg}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
    assert!(dir.path().join("nonfinite_step0.json").exists());
}

#[test]
fn held_out_views_are_never_sampled_or_checked() {
    let scene = small_scene();
    let mut cfg = small_config();
    cfg.exclude_views = vec![0, 2];
    let t = Trainer::<f64>::new(&scene, cfg.clone()).unwrap();
    assert_eq!(t.train_views(), &[1, 3, 4, 5]);
    assert!(t.neighbors(0).is_empty());
    assert!(t.neighbors(1).iter().all(|v| ![0, 2].contains(v)));
    let state = run(&scene, cfg.clone(), cfg.total_iters);
    assert!(state.mask.view_states(0).iter().all(|s| *s == MaskState::Untested));
    cfg.exclude_views = vec![9];
    assert!(Trainer::<f64>::new(&scene, cfg).is_err());
}
