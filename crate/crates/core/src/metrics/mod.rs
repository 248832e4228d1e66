//! Reconstruction metrics: surface accuracy/completeness with precision,
//! recall and F-score; angular normal errors; PSNR.

mod bvh;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

pub use bvh::{closest_point_on_triangle, TriangleBvh};

/// Default F-score threshold in scene units (meters).
pub const DEFAULT_TAU: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Mean distance from predicted samples to the reference surface.
    pub accuracy: f64,
    /// Mean distance from reference samples to the predicted surface.
    pub completeness: f64,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub tau: f64,
    pub pred_samples: usize,
    pub gt_samples: usize,
}

impl GeometryReport {
    /// Report for an empty mesh: infinite distances, zero scores.
    pub fn degenerate(tau: f64) -> Self {
        GeometryReport {
            accuracy: f64::INFINITY,
            completeness: f64::INFINITY,
            precision: 0.0,
            recall: 0.0,
            fscore: 0.0,
            tau,
            pred_samples: 0,
            gt_samples: 0,
        }
    }

    pub const CSV_HEADER: &'static str = "Accu.,Comp.,Prec.,Recall,F-score,tau,pred_samples,gt_samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.accuracy,
            self.completeness,
            self.precision,
            self.recall,
            self.fscore,
            self.tau,
            self.pred_samples,
            self.gt_samples
        )
    }

    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}\n{:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
            "Accu.", "Comp.", "Prec.", "Recall", "F-score", self.accuracy, self.completeness, self.precision,
            self.recall, self.fscore
        )
    }
}

pub fn fscore(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `n` points drawn uniformly by area from the mesh surface.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &TriMesh, n: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let f = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            [0, 1, 2].map(|k| a[k] + r1 * (b[k] - a[k]) + r2 * (c[k] - a[k]))
        })
        .collect()
}

/// Exact distance from every point to the nearest triangle of the tree.
pub fn distances(points: &[[f64; 3]], tree: &TriangleBvh) -> Vec<f64> {
    points.par_iter().map(|p| tree.distance(*p)).collect()
}

/// Accuracy, completeness, precision, recall and F-score of `pred` against
/// `gt`, from `n_samples` area-uniform samples on each mesh.
pub fn eval_mesh(pred: &TriMesh, gt: &TriMesh, tau: f64, n_samples: usize, seed: u64) -> Result<GeometryReport> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Validation(format!("threshold tau must be positive, got {tau}")));
    }
    if n_samples == 0 {
        return Err(Error::Validation("n_samples must be at least 1".into()));
    }
    if pred.area() <= 0.0 || gt.area() <= 0.0 {
        return Ok(GeometryReport::degenerate(tau));
    }
    // Both meshes draw from the same stream, so swapping the arguments
    // swaps accuracy and completeness exactly.
    let rng = || ChaCha8Rng::seed_from_u64(crate::seed::stream_seed(seed, "metrics", 0));
    let pred_pts = sample_surface(pred, n_samples, &mut rng());
    let gt_pts = sample_surface(gt, n_samples, &mut rng());
    let d_pred = distances(&pred_pts, &TriangleBvh::new(gt));
    let d_gt = distances(&gt_pts, &TriangleBvh::new(pred));
    Ok(report_from_distances(&d_pred, &d_gt, tau))
}

/// Metrics from precomputed one-sided distances.
pub fn report_from_distances(d_pred: &[f64], d_gt: &[f64], tau: f64) -> GeometryReport {
    if d_pred.is_empty() || d_gt.is_empty() {
        return GeometryReport::degenerate(tau);
    }
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let frac = |d: &[f64]| d.iter().filter(|&&x| x < tau).count() as f64 / d.len() as f64;
    let (precision, recall) = (frac(d_pred), frac(d_gt));
    GeometryReport {
        accuracy: mean(d_pred),
        completeness: mean(d_gt),
        precision,
        recall,
        fscore: fscore(precision, recall),
        tau,
        pred_samples: d_pred.len(),
        gt_samples: d_gt.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalReport {
    /// Degrees.
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    /// Percent of pixels under each angle.
    pub within_11_25: f64,
    pub within_22_5: f64,
    pub within_30: f64,
    pub count: usize,
}

impl NormalReport {
    pub const CSV_HEADER: &'static str = "Mean,Median,RMSE,11.25°,22.5°,30°,pixels";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mean, self.median, self.rmse, self.within_11_25, self.within_22_5, self.within_30, self.count
        )
    }

    pub fn table(&self) -> String {
        format!(
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n{:>8.3} {:>8.3} {:>8.3} {:>8.2} {:>8.2} {:>8.2}\n",
            "Mean", "Median", "RMSE", "11.25°", "22.5°", "30°", self.mean, self.median, self.rmse,
            self.within_11_25, self.within_22_5, self.within_30
        )
    }

    /// Aggregates per-pixel angular errors in degrees.
    pub fn from_angles(angles: &[f64]) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Validation("no valid pixels to evaluate normals on".into()));
        }
        let n = angles.len() as f64;
        let mut sorted = angles.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let pct = |t: f64| 100.0 * angles.iter().filter(|&&a| a < t).count() as f64 / n;
        Ok(NormalReport {
            mean: angles.iter().sum::<f64>() / n,
            median,
            rmse: (angles.iter().map(|a| a * a).sum::<f64>() / n).sqrt(),
            within_11_25: pct(11.25),
            within_22_5: pct(22.5),
            within_30: pct(30.0),
            count: angles.len(),
        })
    }
}

/// Angle in degrees between two vectors (normalized here), from the clamped
/// cosine.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let cos = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Per-pixel angular error between two normal maps on the valid pixels.
/// Pixels with a zero-length vector in either map are skipped.
pub fn normal_angles(pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || pred.len() != valid.len() {
        return Err(Error::Validation(format!(
            "normal maps differ in size ({}, {}, mask {})",
            pred.len(),
            gt.len(),
            valid.len()
        )));
    }
    let nonzero = |v: &[f64; 3]| v.iter().any(|c| *c != 0.0);
    Ok(pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|((p, g), &ok)| ok && nonzero(p) && nonzero(g))
        .map(|((p, g), _)| angle_deg(*p, *g))
        .collect())
}

pub fn eval_normals(pred: &[[f64; 3]], gt: &[[f64; 3]], valid: &[bool]) -> Result<NormalReport> {
    NormalReport::from_angles(&normal_angles(pred, gt, valid)?)
}

/// `10·log10(1/MSE)` for images in `[0, 1]`; `+∞` when the images match.
pub fn psnr(rendered: &[f32], reference: &[f32]) -> Result<f64> {
    if rendered.len() != reference.len() || rendered.is_empty() {
        return Err(Error::Validation(format!(
            "image sizes differ or are empty ({} vs {})",
            rendered.len(),
            reference.len()
        )));
    }
    let outside = |v: &f32| !(0.0..=1.0).contains(v);
    if rendered.iter().chain(reference).any(outside) {
        return Err(Error::Validation("image values must lie in [0, 1]".into()));
    }
    let mse = rendered
        .iter()
        .zip(reference)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / rendered.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}
