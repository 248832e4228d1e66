use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::look_at;
use crate::scene::{make_synthetic_scene, Primitive, SyntheticSpec};

fn plain_view(eye: Vector3<f64>, target: Vector3<f64>) -> CameraView {
    let (r, t) = look_at(eye, target, Vector3::z());
    let (w, h) = (40, 30);
    let k = Matrix3::new(30.0, 0.0, 19.5, 0.0, 31.0, 14.5, 0.0, 0.0, 1.0);
    let mut n = vec![0.0f32; w * h * 3];
    n.chunks_exact_mut(3).for_each(|p| p[2] = -1.0);
    let img: Vec<f32> = (0..w * h * 3).map(|i| ((i * 7919) % 101) as f32 / 100.0).collect();
    CameraView::new("v", w, h, k, r, t, img, n).unwrap()
}

fn assert_scaled_identity(h: &Matrix3<f64>, tol: f64) {
    let m = h / h[(2, 2)];
    assert!((m - Matrix3::identity()).abs().max() < tol, "{m}");
}

#[test]
fn self_homography_is_identity() {
    let v = plain_view(Vector3::new(0.3, -1.0, 0.2), Vector3::zeros());
    for n in [Vector3::new(0.0, 0.0, -1.0), Vector3::new(0.3, -0.2, -0.9)] {
        let hyp = PlaneHypothesis::new(n, 1.7, Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_scaled_identity(&homography(&v, &v, &hyp).unwrap(), 1e-12);
    }
}

fn plane_scene() -> crate::scene::Scene {
    let mut spec = SyntheticSpec::new(Primitive::Plane);
    spec.width = 96;
    spec.height = 72;
    // Texture detail at the patch scale.
    spec.texture_frequency = 15.0;
    make_synthetic_scene(&spec).unwrap()
}

/// Exact hypothesis for the plane z = 0 at pixel (x, y) of `v`.
fn true_hypothesis(v: &CameraView, x: usize, y: usize) -> PlaneHypothesis {
    let dir_cam = v.camera_direction(x as f64, y as f64);
    let dir = v.rotation.transpose() * dir_cam;
    let d = -v.center().z / dir.z;
    PlaneHypothesis::new(v.rotation * Vector3::z(), d, dir_cam).unwrap()
}

#[test]
fn homography_matches_reprojection_through_3d() {
    let scene = plane_scene();
    let views = &scene.views;
    for j in 1..views.len() {
        let (vi, vj) = (&views[0], &views[j]);
        for (x, y) in [(20usize, 15usize), (48, 36), (70, 60), (5, 66)] {
            let hyp = true_hypothesis(vi, x, y);
            let h = homography(vi, vj, &hyp).unwrap();
            // Surface point from the analytic intersection in world space.
            let dir = vi.rotation.transpose() * vi.camera_direction(x as f64, y as f64);
            let c = vi.center();
            let t = -c.z / dir.z;
            let p = c + dir * t;
            let (px, py, z) = vj.project(&Point3::from(p));
            assert!(z > 0.0);
            let (u, v) = warp(&h, x as f64, y as f64).unwrap();
            assert!((u - px).abs() < 1e-6 && (v - py).abs() < 1e-6, "view {j}: ({u},{v}) vs ({px},{py})");
        }
    }
}

#[test]
fn pure_rotation_homography_ignores_plane() {
    let eye = Vector3::new(0.2, -0.4, 0.1);
    let vi = plain_view(eye, Vector3::new(1.0, 0.0, 0.0));
    let vj = plain_view(eye, Vector3::new(1.0, 0.5, 0.2));
    let v = Vector3::new(0.0, 0.0, 1.0);
    let a = homography(&vi, &vj, &PlaneHypothesis::new(Vector3::new(0.0, 0.0, -1.0), 1.0, v).unwrap()).unwrap();
    let b = homography(&vi, &vj, &PlaneHypothesis::new(Vector3::new(0.5, 0.3, -0.8), 7.0, v).unwrap()).unwrap();
    assert!((a - b).abs().max() < 1e-12);
}

#[test]
fn forward_and_backward_homographies_compose_to_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let vi = plain_view(
            Vector3::new(rng.random_range(-1.0..1.0), -2.0, rng.random_range(-0.5..0.5)),
            Vector3::zeros(),
        );
        let vj = plain_view(
            Vector3::new(rng.random_range(-1.0..1.0), -2.5, rng.random_range(-0.5..0.5)),
            Vector3::new(0.1, 0.0, 0.0),
        );
        // World plane nᵀX = ρ expressed in each camera frame.
        let nw = Vector3::new(rng.random_range(-0.3..0.3), 1.0, rng.random_range(-0.3..0.3)).normalize();
        let rho_w = 0.2;
        let in_frame = |v: &CameraView| {
            let n = v.rotation * nw;
            // nᵀ(RX + t) = ρ + nᵀ... with X world: n_cᵀ X_c = ρ_w + n_cᵀ t.
            let rho = rho_w + n.dot(&v.translation);
            PlaneHypothesis::new(n, rho.abs(), n * rho.signum()).unwrap()
        };
        let hij = homography(&vi, &vj, &in_frame(&vi)).unwrap();
        let hji = homography(&vj, &vi, &in_frame(&vj)).unwrap();
        assert_scaled_identity(&(hji * hij), 1e-6);
    }
}

#[test]
fn grazing_plane_is_degenerate() {
    assert!(PlaneHypothesis::new(Vector3::x(), 1.0, Vector3::z()).is_err());
}

#[test]
fn zncc_self_and_negated() {
    let a: Vec<f64> = (0..121).map(|i| ((i * 37) % 17) as f64 / 17.0).collect();
    assert!((zncc(&a, &a, 1e-3).unwrap() - 1.0).abs() < 1e-12);
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let neg: Vec<f64> = a.iter().map(|v| 2.0 * mean - v).collect();
    assert!((zncc(&a, &neg, 1e-3).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(zncc(&a, &vec![0.4; 121], 1e-3), None);
}

#[test]
fn ncc_with_identity_warp_is_one() {
    let v = plain_view(Vector3::new(0.0, -1.0, 0.0), Vector3::zeros());
    let s = ncc(&v, &v, 20, 15, 5, &Matrix3::identity(), 1e-3).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    assert_eq!(ncc(&v, &v, 2, 15, 5, &Matrix3::identity(), 1e-3), Err(Invalid::ReferenceOutOfBounds));
    let shift = Matrix3::new(1.0, 0.0, 30.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert_eq!(ncc(&v, &v, 20, 15, 5, &shift, 1e-3), Err(Invalid::OutOfBounds));
}

proptest! {
    #[test]
    fn zncc_invariant_to_affine_intensity(
        a in proptest::collection::vec(0.0f64..1.0, 25),
        b in proptest::collection::vec(0.0f64..1.0, 25),
        scale in 0.05f64..20.0, shift in -5.0f64..5.0,
    ) {
        let base = zncc(&a, &b, 1e-3);
        let moved: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
        let other = zncc(&a, &moved, 1e-3 * scale);
        match (base, other) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-6),
            (None, None) => {}
            _ => prop_assert!(false, "validity changed"),
        }
        prop_assert!(base.is_none_or(|s| (-1.0..=1.0).contains(&s)));
    }

    #[test]
    fn indicator_monotone_in_threshold(
        scores in proptest::collection::vec(proptest::option::of(-1.0f64..1.0), 1..5),
        lo in -1.0f64..1.0, delta in 0.0f64..1.0,
    ) {
        let a = indicator_from_scores(&scores, lo);
        let b = indicator_from_scores(&scores, lo + delta);
        prop_assert!(!(a == Indicator::Fail && b == Indicator::Pass));
    }
}

/// Rotates `n` by `deg` about an axis perpendicular to both `n` and `v`.
fn perturb(n: Vector3<f64>, v: Vector3<f64>, deg: f64) -> Vector3<f64> {
    let axis = n.cross(&v);
    let axis = if axis.norm() < 1e-6 { n.cross(&Vector3::x()) } else { axis };
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), deg.to_radians()) * n
}

#[test]
fn textured_plane_true_plane_scores_high_perturbed_low() {
    let scene = plane_scene();
    let views = &scene.views;
    let (mut good, mut bad, mut count) = (0.0, 0.0, 0);
    for j in 1..views.len() {
        for &(x, y) in &[(30usize, 30usize), (48, 36), (60, 40), (40, 45)] {
            let hyp = true_hypothesis(&views[0], x, y);
            let h = homography(&views[0], &views[j], &hyp).unwrap();
            let Ok(s) = ncc(&views[0], &views[j], x, y, 5, &h, 1e-3) else {
                continue;
            };
            assert!(s > 0.95, "view {j} pixel ({x},{y}) true-plane score {s}");
            let tilted = PlaneHypothesis::new(perturb(hyp.normal, hyp.view_dir, 45.0), hyp.depth, hyp.view_dir).unwrap();
            let h2 = homography(&views[0], &views[j], &tilted).unwrap();
            if let Ok(s2) = ncc(&views[0], &views[j], x, y, 5, &h2, 1e-3) {
                good += s;
                bad += s2;
                count += 1;
            }
        }
    }
    assert!(count >= 10);
    let (good, bad) = (good / count as f64, bad / count as f64);
    assert!(good > 0.98 && bad < 0.8, "mean true {good}, perturbed {bad}");
}

#[test]
fn indicator_examples() {
    assert_eq!(indicator_from_scores(&[Some(1.0), Some(1.0)], 0.6), Indicator::Pass);
    assert_eq!(indicator_from_scores(&[Some(0.0), Some(0.0)], 0.6), Indicator::Fail);
    assert_eq!(indicator_from_scores(&[None, None], 0.6), Indicator::Untestable);
    // One invalid neighbor: threshold rescaled to a single share.
    assert_eq!(indicator_from_scores(&[Some(0.7), None], 0.6), Indicator::Pass);
    assert_eq!(indicator_from_scores(&[Some(0.5), None], 0.6), Indicator::Fail);
}

#[test]
fn evaluate_indicator_on_plane_scene() {
    let scene = plane_scene();
    let cfg = CheckConfig::default();
    let v = &scene.views[0];
    let neighbors = crate::scene::select_neighbor_views(&scene, 0, 2).unwrap();
    let (x, y) = (48, 36);
    let hyp = true_hypothesis(v, x, y);
    let world_n = v.rotation.transpose() * hyp.normal;
    let ind = evaluate_indicator(&scene.views, 0, x, y, world_n, hyp.depth, &neighbors, &cfg);
    assert_eq!(ind, Indicator::Pass);
    let wrong = v.rotation.transpose() * perturb(hyp.normal, hyp.view_dir, 60.0);
    let ind = evaluate_indicator(&scene.views, 0, x, y, wrong, hyp.depth, &neighbors, &cfg);
    assert_eq!(ind, Indicator::Fail);
    // Grazing plane counts as a failed check; border pixels are untestable.
    let grazing = v.rotation.transpose() * hyp.view_dir.cross(&Vector3::x()).normalize();
    assert_eq!(evaluate_indicator(&scene.views, 0, x, y, grazing, hyp.depth, &neighbors, &cfg), Indicator::Fail);
    assert_eq!(evaluate_indicator(&scene.views, 0, 1, 1, world_n, hyp.depth, &neighbors, &cfg), Indicator::Untestable);
}

#[test]
fn mask_transitions() {
    let mut m = PriorMask::new(&[(2, 2)]);
    assert_eq!(m.update(0, 0, Indicator::Fail), MaskState::Rejected);
    assert_eq!(m.update(0, 1, Indicator::Pass), MaskState::Accepted);
    assert_eq!(m.update(0, 1, Indicator::Fail), MaskState::Rejected);
    assert_eq!(m.update(0, 0, Indicator::Pass), MaskState::Rejected);
    assert_eq!(m.update(0, 2, Indicator::Untestable), MaskState::Untested);
    assert_eq!(m.rejected_count(), 2);
    assert_eq!(m.omega(0, 0), 0.0);
    assert_eq!(m.omega(0, 2), 1.0);
    assert!(matches!(m.set(0, 0, MaskState::Accepted), Err(Error::Contract(_))));
    assert_eq!(m.counts(), (2, 0, 2));
}

#[test]
fn mask_round_trips_through_container() {
    let mut m = PriorMask::new(&[(3, 2), (1, 4)]);
    m.update(0, 4, Indicator::Fail);
    m.update(1, 2, Indicator::Pass);
    let mut c = crate::checkpoint::Container::new("test");
    m.store(&mut c);
    assert_eq!(PriorMask::load(&c).unwrap(), m);
}

proptest! {
    #[test]
    fn rejected_set_never_shrinks(ops in proptest::collection::vec((0usize..6, 0u8..3), 1..60)) {
        let mut m = PriorMask::new(&[(3, 2)]);
        let mut last = 0;
        for (p, k) in ops {
            let ind = [Indicator::Pass, Indicator::Fail, Indicator::Untestable][k as usize];
            let before = m.get(0, p);
            let after = m.update(0, p, ind);
            prop_assert!(before != MaskState::Rejected || after == MaskState::Rejected);
            prop_assert!(m.rejected_count() >= last);
            last = m.rejected_count();
        }
    }
}
