use approx::assert_relative_eq;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::{AnalyticField, FieldConfig, NeuralField, SphereSide};

type NoRng = rand::rngs::ThreadRng;

fn unit_ray(origin: [f64; 3], dir: [f64; 3]) -> Ray<f64> {
    Ray::in_unit_sphere(Vector3::from(origin), Vector3::from(dir)).unwrap()
}

#[test]
fn zero_rounds_gives_stratified_midpoints() {
    let f = AnalyticField::sphere([0.0; 3], 0.3);
    let ray = unit_ray([0.0, 0.0, -0.9], [0.0, 0.0, 1.0]);
    let s = sample_ray::<f64, _, NoRng>(&f, &ray, &SamplingConfig::uniform(10), None);
    let step = (ray.far - ray.near) / 10.0;
    for (i, d) in s.depths.iter().enumerate() {
        assert_relative_eq!(*d, ray.near + step * (i as f64 + 0.5), epsilon = 1e-12);
    }
}

#[test]
fn upsampling_concentrates_near_surface() {
    let f = AnalyticField::sphere([0.0; 3], 0.5);
    let ray = unit_ray([0.0, 0.0, -0.95], [0.0, 0.0, 1.0]);
    let cfg = SamplingConfig::full();
    let s = sample_ray::<f64, _, NoRng>(&f, &ray, &cfg, None);
    assert_eq!(s.depths.len(), cfg.samples_per_ray());
    assert!(s.depths.windows(2).all(|w| w[0] < w[1]));
    let hit = 0.45;
    let near = s.depths.iter().filter(|d| (**d - hit).abs() < 0.1).count();
    assert!(
        near * 2 >= s.depths.len(),
        "{near} of {} samples near the surface",
        s.depths.len()
    );
}

#[test]
fn jittered_samples_stay_sorted_and_bounded() {
    let f = AnalyticField::sphere([0.1, 0.0, 0.0], 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let o = [rng.random_range(-0.3..0.3), 0.2, -0.7];
        let ray = unit_ray(o, [0.1, -0.1, 1.0]);
        let s = sample_ray(&f, &ray, &SamplingConfig::tiny(), Some(&mut rng));
        assert!(s.depths.windows(2).all(|w| w[0] < w[1]));
        assert!(s.depths[0] > ray.near && *s.depths.last().unwrap() < ray.far);
    }
}

#[test]
fn constant_outside_sdf_is_transparent() {
    assert!(alphas_from_sdf(&[0.5, 0.5, 0.5, 0.5], 50.0)
        .iter()
        .all(|a| *a == 0.0));
}

#[test]
fn sharp_crossing_is_opaque() {
    let a = alphas_from_sdf(&[0.05, -0.05], 1e4);
    assert!(a[0] > 1.0 - 1e-9);
}

#[test]
fn increasing_sdf_gives_zero_alpha() {
    let a = alphas_from_sdf(&[-0.2, -0.1, 0.05, 0.3], 30.0);
    assert!(a.iter().all(|v| *v == 0.0));
}

/// Continuous opacity `1 − exp(−∫ρ)` with `ρ = max(−(dΦ/dt)/Φ, 0)`, integrated
/// by the midpoint rule along a linear sdf segment.
fn quadrature_alpha(fa: f64, fb: f64, s: f64) -> f64 {
    let steps = 200_000;
    let phi = |x: f64| 1.0 / (1.0 + (-s * x).exp());
    let slope = fb - fa;
    let mut integral = 0.0;
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        let f = fa + slope * t;
        let p = phi(f);
        let dphi_dt = s * p * (1.0 - p) * slope;
        integral += (-dphi_dt / p).max(0.0) / steps as f64;
    }
    1.0 - (-integral).exp()
}

#[test]
fn alpha_matches_dense_quadrature() {
    let cases = [
        (0.1, -0.05, 20.0),
        (0.3, 0.2, 20.0),
        (0.02, -0.02, 64.0),
        (-0.1, -0.3, 10.0),
        (0.05, 0.08, 30.0),
        (0.4, -0.4, 5.0),
    ];
    for (fa, fb, s) in cases {
        let closed = alphas_from_sdf(&[fa, fb], s)[0];
        let quad = quadrature_alpha(fa, fb, s);
        assert!(
            (closed - quad).abs() < 1e-3,
            "fa={fa} fb={fb} s={s}: {closed} vs {quad}"
        );
    }
}

#[test]
fn alpha_partials_match_finite_differences() {
    let h = 1e-7;
    for (fa, fb, s) in [(0.1, -0.05, 20.0), (0.01, -0.2, 35.0), (-0.05, -0.1, 12.0)] {
        let (_, pa, pb, ps) = section_alpha(fa, fb, s);
        let a = |fa: f64, fb: f64, s: f64| section_alpha(fa, fb, s).0;
        assert_relative_eq!(pa, (a(fa + h, fb, s) - a(fa - h, fb, s)) / (2.0 * h), max_relative = 1e-5);
        assert_relative_eq!(pb, (a(fa, fb + h, s) - a(fa, fb - h, s)) / (2.0 * h), max_relative = 1e-5);
        assert_relative_eq!(ps, (a(fa, fb, s + h) - a(fa, fb, s - h)) / (2.0 * h), max_relative = 1e-5);
    }
}

#[test]
fn composite_first_weight_only() {
    let v = [[0.1, 0.2, 0.3], [9.0, 9.0, 9.0], [5.0, 5.0, 5.0]];
    assert_eq!(composite(&[1.0, 0.0, 0.0], &v), [0.1, 0.2, 0.3]);
}

#[test]
fn composite_is_linear_in_constant_values() {
    let w = [0.2, 0.3, 0.1];
    let c = [0.4, 0.5, 0.6];
    let out = composite(&w, &[c, c, c]);
    for k in 0..3 {
        assert_relative_eq!(out[k], 0.6 * c[k], epsilon = 1e-15);
    }
}

#[test]
fn transmittance_recursion_by_hand() {
    let (t, w) = transmittance_weights(&[0.5, 0.5]);
    assert_eq!(t, vec![1.0, 0.5]);
    assert_eq!(w, vec![0.5, 0.25]);
}

fn plane_field() -> AnalyticField<f64> {
    AnalyticField::plane([0.0, 0.0, 1.0], 0.0)
}

#[test]
fn plane_depth_and_normal_from_above() {
    let f = plane_field();
    let ray = unit_ray([0.05, -0.1, 0.6], [0.0, 0.0, -1.0]);
    let out = &render_rays(&f, &[ray], &SamplingConfig::full(), 200.0)[0];
    assert!((out.depth - 0.6).abs() < 1e-2, "depth {}", out.depth);
    let cos = out.normal[2];
    assert!(cos.acos().to_degrees() < 1.0);
    assert!(out.weight_sum > 0.99 && out.weight_sum <= 1.0 + 1e-5);
}

#[test]
fn oblique_wall_depth_within_two_sample_spacings() {
    let f = plane_field();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let o = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.2..0.7)];
        let dir = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -1.0).normalize();
        let ray = unit_ray(o, dir.into());
        let truth = -o[2] / dir.z;
        let cfg = SamplingConfig::tiny();
        let samples = sample_ray::<f64, _, NoRng>(&f, &ray, &cfg, None);
        let out = &render_rays(&f, &[ray], &cfg, 400.0)[0];
        // Mean spacing of samples within 0.1 of the surface.
        let near: Vec<f64> = samples
            .depths
            .iter()
            .copied()
            .filter(|d| (d - truth).abs() < 0.1)
            .collect();
        let spacing = (near.last().unwrap() - near[0]) / (near.len() - 1) as f64;
        assert!((out.depth - truth).abs() < 2.0 * spacing, "{} vs {truth}", out.depth);
        let angle = out.normal[2].clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 1.0);
    }
}

#[test]
fn ray_missing_geometry_has_little_weight() {
    let f = AnalyticField::sphere([0.0; 3], 0.2);
    let ray = unit_ray([0.5, 0.5, -0.6], [0.0, 0.0, 1.0]);
    let out = &render_rays(&f, &[ray], &SamplingConfig::tiny(), 64.0)[0];
    assert!(out.weight_sum < 0.05);
    assert!(out.is_degenerate());
}

proptest! {
    #[test]
    fn transmittance_monotone_and_weights_bounded(
        sdf in proptest::collection::vec(-1.0f64..1.0, 2..40),
        s in 1.0f64..500.0,
    ) {
        let alphas = alphas_from_sdf(&sdf, s);
        prop_assert!(alphas.iter().all(|a| (0.0..=1.0).contains(a)));
        let (t, w) = transmittance_weights(&alphas);
        prop_assert_eq!(t[0], 1.0);
        prop_assert!(t.windows(2).all(|p| p[1] <= p[0]));
        prop_assert!(t.iter().all(|v| *v >= 0.0));
        let sum: f64 = w.iter().sum();
        prop_assert!(sum <= 1.0 + 1e-5);
    }

    #[test]
    fn f32_weights_bounded(
        sdf in proptest::collection::vec(-1.0f32..1.0, 2..64),
        s in 1.0f32..2000.0,
    ) {
        let (_, w) = transmittance_weights(&alphas_from_sdf(&sdf, s));
        let sum: f32 = w.iter().sum();
        prop_assert!(sum <= 1.0 + 1e-5);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }
}

// ---- parameter gradients ------------------------------------------------

fn tiny_field(seed: u64) -> NeuralField<f64> {
    let mut f = NeuralField::<f64>::new(FieldConfig::tiny(), seed).unwrap();
    f.initialize_sphere(0.4, SphereSide::SolidInside, seed);
    // Perturb so encoded inputs and every layer carry gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in f.params_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    f
}

fn test_rays(n: usize, seed: u64) -> Vec<Ray<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let o = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), -0.85];
            let d = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0);
            unit_ray(o, d.into())
        })
        .collect()
}

/// L1 color loss, raw-normal L1 and an Eikonal term on fixed samples.
fn probe_loss(field: &NeuralField<f64>, rays: &[Ray<f64>], samples: &[RaySamples<f64>]) -> f64 {
    let fwd = forward_with_samples(field, rays, samples);
    let target = [0.3, 0.6, 0.2];
    let prior = [0.2, -0.5, 0.8];
    let mut loss = 0.0;
    for o in &fwd.outputs {
        for c in 0..3 {
            loss += (o.color[c] - target[c]).abs() + 0.5 * (o.normal_raw[c] - prior[c]).abs();
        }
        loss += 0.1 * o.depth;
    }
    for g in &fwd.grad {
        let len = crate::scalar::norm3(*g);
        loss += 0.1 * (len - 1.0).powi(2) / fwd.grad.len() as f64;
    }
    loss
}

fn probe_grads(field: &NeuralField<f64>, rays: &[Ray<f64>], samples: &[RaySamples<f64>]) -> Vec<f64> {
    let fwd = forward_with_samples(field, rays, samples);
    let target = [0.3, 0.6, 0.2];
    let prior = [0.2, -0.5, 0.8];
    let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
    let d_color: Vec<_> = fwd
        .outputs
        .iter()
        .map(|o| [0, 1, 2].map(|c| sign(o.color[c] - target[c])))
        .collect();
    let d_normal: Vec<_> = fwd
        .outputs
        .iter()
        .map(|o| [0, 1, 2].map(|c| 0.5 * sign(o.normal_raw[c] - prior[c])))
        .collect();
    let d_depth = vec![0.1; rays.len()];
    let m = fwd.grad.len() as f64;
    let d_eik: Vec<_> = fwd
        .grad
        .iter()
        .map(|g| {
            let len = crate::scalar::norm3(*g);
            g.map(|v| 0.1 * 2.0 * (len - 1.0) * v / len / m)
        })
        .collect();
    let mut grads = vec![0.0; field.param_count()];
    backward_batch(
        field,
        &fwd,
        &RenderAdjoints {
            color: &d_color,
            normal: &d_normal,
            depth: &d_depth,
            sample_grad: &d_eik,
        },
        &mut grads,
    );
    grads
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let field = tiny_field(3);
    let rays = test_rays(6, 4);
    let samples = sample_rays::<f64, _, NoRng>(&field, &rays, &SamplingConfig::tiny(), None);
    let analytic = probe_grads(&field, &rays, &samples);

    // Largest-magnitude entries from every layer plus the sharpness.
    let layout = field.layout().clone();
    let mut picks = vec![field.sharpness_index()];
    for slot in layout.geo.iter().chain(&layout.color) {
        let mut idx: Vec<usize> = (slot.w..slot.b + slot.out).collect();
        idx.sort_by(|a, b| analytic[*b].abs().total_cmp(&analytic[*a].abs()));
        picks.extend(idx.into_iter().take(3));
    }
    let h = 1e-6;
    let mut checked = 0;
    for &i in &picks {
        let mut plus = field.clone();
        plus.params_mut()[i] += h;
        let mut minus = field.clone();
        minus.params_mut()[i] -= h;
        let fd = (probe_loss(&plus, &rays, &samples) - probe_loss(&minus, &rays, &samples)) / (2.0 * h);
        let a = analytic[i];
        if a.abs() < 1e-6 && fd.abs() < 1e-6 {
            continue;
        }
        let rel = (a - fd).abs() / a.abs().max(fd.abs());
        assert!(rel < 1e-2, "param {i}: analytic {a} vs fd {fd} (rel {rel})");
        checked += 1;
    }
    assert!(checked > 20, "only {checked} parameters carried gradient");
}
