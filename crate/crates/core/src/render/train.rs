//! Differentiable batch rendering used by the optimizer.

use rand::Rng;

use super::{integrate, sample_rays, section_alpha, RaySamples, RenderOutput, SamplingConfig};
use crate::camera::Ray;
use crate::field::{ColorTape, GeometryTape, NeuralField};
use crate::scalar::{Real, V3};

/// Everything the backward pass needs from one batch.
pub struct BatchForward<T> {
    pub samples_per_ray: usize,
    /// Row-major `rays × samples_per_ray`.
    pub depths: Vec<T>,
    pub points: Vec<V3<T>>,
    pub sdf: Vec<T>,
    /// Spatial SDF gradients at every sample.
    pub grad: Vec<V3<T>>,
    pub rgb: Vec<V3<T>>,
    pub outputs: Vec<RenderOutput<T>>,
    pub sharpness: T,
    alpha: Vec<T>,
    trans: Vec<T>,
    /// `(∂α/∂f_a, ∂α/∂f_b, ∂α/∂s)` per section.
    alpha_partials: Vec<[T; 3]>,
    geo_tape: GeometryTape<T>,
    color_tape: ColorTape<T>,
}

/// Loss adjoints handed to [`backward_batch`]. Empty slices mean zero.
pub struct RenderAdjoints<'a, T> {
    pub color: &'a [V3<T>],
    /// Adjoint of the raw (unnormalized) accumulated normal.
    pub normal: &'a [V3<T>],
    pub depth: &'a [T],
    /// Extra per-sample adjoint of the SDF gradient (e.g. an Eikonal term).
    pub sample_grad: &'a [V3<T>],
}

impl<T: Real> BatchForward<T> {
    pub fn ray_count(&self) -> usize {
        self.outputs.len()
    }
}

/// Samples every ray, then evaluates the field with a tape.
pub fn forward_batch<T: Real, R: Rng + ?Sized>(
    field: &NeuralField<T>,
    rays: &[Ray<T>],
    cfg: &SamplingConfig,
    rng: Option<&mut R>,
) -> BatchForward<T> {
    let samples = sample_rays(field, rays, cfg, rng);
    forward_with_samples(field, rays, &samples)
}

/// Forward pass on fixed sample depths (all rays must share a sample count).
pub fn forward_with_samples<T: Real>(
    field: &NeuralField<T>,
    rays: &[Ray<T>],
    samples: &[RaySamples<T>],
) -> BatchForward<T> {
    let n = samples.first().map_or(0, |s| s.depths.len());
    assert!(samples.iter().all(|s| s.depths.len() == n), "ragged samples");
    let mut depths = Vec::with_capacity(rays.len() * n);
    let mut points = Vec::with_capacity(rays.len() * n);
    let mut dirs = Vec::with_capacity(rays.len() * n);
    for (r, s) in rays.iter().zip(samples) {
        for &d in &s.depths {
            depths.push(d);
            points.push(r.at(d));
            dirs.push(r.dir);
        }
    }
    let (geo, geo_tape) = field.geometry_forward(&points, true, true);
    let (rgb, color_tape) = field.color_forward(&points, &dirs, &geo.grad, &geo.feature);
    let s = field.sharpness();
    let sections = n.saturating_sub(1);
    let mut alpha = Vec::with_capacity(rays.len() * sections);
    let mut trans = Vec::with_capacity(rays.len() * sections);
    let mut alpha_partials = Vec::with_capacity(rays.len() * sections);
    let mut outputs = Vec::with_capacity(rays.len());
    for r in 0..rays.len() {
        let range = r * n..(r + 1) * n;
        let f = &geo.sdf[range.clone()];
        let mut t = T::one();
        for i in 0..sections {
            let (a, pa, pb, ps) = section_alpha(f[i], f[i + 1], s);
            alpha.push(a);
            trans.push(t);
            alpha_partials.push([pa, pb, ps]);
            t *= T::one() - a;
        }
        outputs.push(integrate(
            &depths[range.clone()],
            f,
            &geo.grad[range.clone()],
            &rgb[range],
            s,
        ));
    }
    BatchForward {
        samples_per_ray: n,
        depths,
        points,
        sdf: geo.sdf,
        grad: geo.grad,
        rgb,
        outputs,
        sharpness: s,
        alpha,
        trans,
        alpha_partials,
        geo_tape: geo_tape.expect("tape requested"),
        color_tape,
    }
}

/// Accumulates parameter gradients of a loss whose adjoints are given with
/// respect to the rendered quantities.
pub fn backward_batch<T: Real>(
    field: &NeuralField<T>,
    fwd: &BatchForward<T>,
    adj: &RenderAdjoints<'_, T>,
    grads: &mut [T],
) {
    let n = fwd.samples_per_ray;
    let sections = n.saturating_sub(1);
    let total = fwd.points.len();
    let half = T::lit(0.5);
    let mut d_sdf = vec![T::zero(); total];
    let mut d_grad = vec![[T::zero(); 3]; total];
    let mut d_rgb = vec![[T::zero(); 3]; total];
    let mut d_s = T::zero();
    let zero3 = [T::zero(); 3];

    for (r, out) in fwd.outputs.iter().enumerate() {
        let gc = adj.color.get(r).copied().unwrap_or(zero3);
        let gn = adj.normal.get(r).copied().unwrap_or(zero3);
        let gd = adj.depth.get(r).copied().unwrap_or(T::zero());
        let base = r * n;
        let sbase = r * sections;
        // Adjoint of each section weight.
        let mut dw = vec![T::zero(); sections];
        for i in 0..sections {
            let (a, b) = (base + i, base + i + 1);
            let mut g = T::zero();
            for c in 0..3 {
                let cbar = (fwd.rgb[a][c] + fwd.rgb[b][c]) * half;
                let nbar = (fwd.grad[a][c] + fwd.grad[b][c]) * half;
                g += gc[c] * cbar + gn[c] * nbar;
            }
            g += gd * out.section_depths[i];
            dw[i] = g;
            let w = out.weights[i] * half;
            for c in 0..3 {
                d_rgb[a][c] += w * gc[c];
                d_rgb[b][c] += w * gc[c];
                d_grad[a][c] += w * gn[c];
                d_grad[b][c] += w * gn[c];
            }
        }
        // dL/dα_i = T_i (dw_i − R_i), R_i = Σ_{k>i} dw_k α_k Π_{i<j<k}(1 − α_j).
        let mut tail = T::zero();
        for i in (0..sections).rev() {
            let a = fwd.alpha[sbase + i];
            let d_alpha = fwd.trans[sbase + i] * (dw[i] - tail);
            tail = dw[i] * a + (T::one() - a) * tail;
            let [pa, pb, ps] = fwd.alpha_partials[sbase + i];
            d_sdf[base + i] += d_alpha * pa;
            d_sdf[base + i + 1] += d_alpha * pb;
            d_s += d_alpha * ps;
        }
    }
    let (d_normal_in, d_feature) = field.color_backward(&fwd.color_tape, &d_rgb, grads);
    for i in 0..total {
        for c in 0..3 {
            d_grad[i][c] += d_normal_in[i][c];
            if let Some(g) = adj.sample_grad.get(i) {
                d_grad[i][c] += g[c];
            }
        }
    }
    field.geometry_backward(&fwd.geo_tape, &d_sdf, &d_grad, Some(&d_feature), grads);
    let scale = T::lit(field.config().sharpness_scale);
    grads[field.sharpness_index()] += d_s * fwd.sharpness * scale;
}
