//! Volume rendering of color, normal and depth from a signed distance field.
//!
//! Opacity of the section between consecutive samples follows the logistic
//! density form `α = max((Φ(s f_i) − Φ(s f_{i+1})) / Φ(s f_i), 0)`. Section
//! values (color, gradient, depth) are the mean of the two endpoint samples.

mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::field::Field;
use crate::scalar::{logistic, norm3, Real, V3};

pub use train::{backward_batch, forward_batch, forward_with_samples, BatchForward, RenderAdjoints};

/// Below this `Φ(s f_i)` the section is treated as fully inside solid material.
const PHI_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_upsample_rounds: usize,
    /// Samples added per upsampling round.
    pub n_importance: usize,
    /// Sharpness used by round 0 of upsampling; doubles each round.
    pub upsample_base_sharpness: u32,
}

impl SamplingConfig {
    pub fn full() -> Self {
        SamplingConfig {
            n_coarse: 64,
            n_upsample_rounds: 4,
            n_importance: 16,
            upsample_base_sharpness: 64,
        }
    }

    pub fn tiny() -> Self {
        SamplingConfig {
            n_coarse: 32,
            n_upsample_rounds: 2,
            n_importance: 8,
            upsample_base_sharpness: 64,
        }
    }

    pub fn uniform(n: usize) -> Self {
        SamplingConfig {
            n_coarse: n,
            n_upsample_rounds: 0,
            n_importance: 0,
            upsample_base_sharpness: 64,
        }
    }

    pub fn samples_per_ray(&self) -> usize {
        self.n_coarse + self.n_upsample_rounds * self.n_importance
    }
}

/// Strictly increasing sample depths along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples<T> {
    pub depths: Vec<T>,
}

impl<T: Real> RaySamples<T> {
    pub fn points(&self, ray: &Ray<T>) -> Vec<V3<T>> {
        self.depths.iter().map(|&d| ray.at(d)).collect()
    }

    /// Width of each section between consecutive samples.
    pub fn widths(&self) -> Vec<T> {
        self.depths.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Per-pixel result of volume rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: V3<T>,
    /// Accumulated world-frame normal before normalization.
    pub normal_raw: V3<T>,
    /// Unit-length version of `normal_raw` (zero if degenerate).
    pub normal: V3<T>,
    /// Distance along the ray.
    pub depth: T,
    pub weight_sum: T,
    /// `T_i α_i` per section.
    pub weights: Vec<T>,
    /// Section midpoint depths matching `weights`.
    pub section_depths: Vec<T>,
}

impl<T: Real> RenderOutput<T> {
    /// True when almost nothing along the ray is opaque.
    pub fn is_degenerate(&self) -> bool {
        self.weight_sum < T::lit(1e-4)
    }

    /// Camera z-depth given the cosine between ray and optical axis.
    pub fn z_depth(&self, cos_to_axis: T) -> T {
        self.depth * cos_to_axis
    }
}

/// Stratified depths in `(near, far)`: bin midpoints, or jittered inside each bin.
pub fn stratified<T: Real, R: Rng + ?Sized>(
    near: T,
    far: T,
    n: usize,
    rng: Option<&mut R>,
) -> Vec<T> {
    let step = (far - near) / T::lit(n as f64);
    match rng {
        Some(rng) => (0..n)
            .map(|i| {
                let u: f64 = rng.random_range(0.02..0.98);
                near + step * (T::lit(i as f64) + T::lit(u))
            })
            .collect(),
        None => (0..n)
            .map(|i| near + step * (T::lit(i as f64) + T::lit(0.5)))
            .collect(),
    }
}

/// Opacity of a section and its partials with respect to `f_a`, `f_b`, `s`.
#[inline]
pub fn section_alpha<T: Real>(fa: T, fb: T, s: T) -> (T, T, T, T) {
    let pa = logistic(s * fa);
    let pb = logistic(s * fb);
    let zero = T::zero();
    if pa <= T::lit(PHI_FLOOR) {
        return (zero, zero, zero, zero);
    }
    let alpha = T::one() - pb / pa;
    if alpha <= zero {
        return (zero, zero, zero, zero);
    }
    // α = 1 − Φ(b)/Φ(a), Φ' = Φ(1 − Φ)
    let da = pb * (T::one() - pa) / pa;
    let db = -pb * (T::one() - pb) / pa;
    let alpha = alpha.min(T::one());
    (alpha, s * da, s * db, fa * da + fb * db)
}

/// Discrete opacities for consecutive sdf samples.
pub fn alphas_from_sdf<T: Real>(sdf: &[T], s: T) -> Vec<T> {
    sdf.windows(2).map(|w| section_alpha(w[0], w[1], s).0).collect()
}

/// Transmittance `T_i = Π_{j<i}(1 − α_j)` and weights `T_i α_i`.
pub fn transmittance_weights<T: Real>(alphas: &[T]) -> (Vec<T>, Vec<T>) {
    let mut trans = Vec::with_capacity(alphas.len());
    let mut weights = Vec::with_capacity(alphas.len());
    let mut t = T::one();
    for &a in alphas {
        trans.push(t);
        weights.push(t * a);
        t *= T::one() - a;
    }
    (trans, weights)
}

/// `Σ w_i v_i` for vector-valued samples.
pub fn composite<T: Real>(weights: &[T], values: &[V3<T>]) -> V3<T> {
    assert_eq!(weights.len(), values.len(), "weights and values must align");
    let mut acc = [T::zero(); 3];
    for (w, v) in weights.iter().zip(values) {
        for c in 0..3 {
            acc[c] += *w * v[c];
        }
    }
    acc
}

/// `Σ w_i v_i` for scalar samples.
pub fn composite_scalar<T: Real>(weights: &[T], values: &[T]) -> T {
    assert_eq!(weights.len(), values.len(), "weights and values must align");
    weights
        .iter()
        .zip(values)
        .fold(T::zero(), |acc, (w, v)| acc + *w * *v)
}

/// Inverse-CDF samples from piecewise-constant section weights.
fn importance_depths<T: Real>(depths: &[T], weights: &[T], n: usize) -> Vec<T> {
    let eps = T::lit(1e-5);
    let pdf: Vec<T> = weights.iter().map(|w| *w + eps).collect();
    let total = pdf.iter().fold(T::zero(), |a, b| a + *b);
    let mut cdf = Vec::with_capacity(pdf.len() + 1);
    let mut acc = T::zero();
    cdf.push(acc);
    for p in &pdf {
        acc += *p / total;
        cdf.push(acc);
    }
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    for j in 0..n {
        let u = T::lit((j as f64 + 0.5) / n as f64);
        while k + 1 < pdf.len() && cdf[k + 1] < u {
            k += 1;
        }
        let span = cdf[k + 1] - cdf[k];
        let frac = if span > T::zero() {
            ((u - cdf[k]) / span).min(T::one())
        } else {
            T::lit(0.5)
        };
        out.push(depths[k] + frac * (depths[k + 1] - depths[k]));
    }
    out
}

/// Merges sorted `extra` samples into `(depths, sdf)` keeping strict order.
fn merge_sorted<T: Real>(depths: &[T], sdf: &[T], extra: &[T], extra_sdf: &[T]) -> (Vec<T>, Vec<T>) {
    let mut d = Vec::with_capacity(depths.len() + extra.len());
    let mut f = Vec::with_capacity(depths.len() + extra.len());
    let (mut i, mut j) = (0, 0);
    while i < depths.len() || j < extra.len() {
        let take_extra = j < extra.len() && (i >= depths.len() || extra[j] < depths[i]);
        let (mut v, fv) = if take_extra {
            j += 1;
            (extra[j - 1], extra_sdf[j - 1])
        } else {
            i += 1;
            (depths[i - 1], sdf[i - 1])
        };
        if let Some(&prev) = d.last() {
            if v <= prev {
                v = prev + (prev.abs() + T::one()) * T::epsilon() * T::lit(4.0);
            }
        }
        d.push(v);
        f.push(fv);
    }
    (d, f)
}

/// Sample depths for a batch of rays: stratified coarse samples followed by
/// rounds of importance sampling concentrated around zero crossings.
pub fn sample_rays<T: Real, F: Field<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    rays: &[Ray<T>],
    cfg: &SamplingConfig,
    mut rng: Option<&mut R>,
) -> Vec<RaySamples<T>> {
    let mut depths: Vec<Vec<T>> = rays
        .iter()
        .map(|r| stratified(r.near, r.far, cfg.n_coarse, rng.as_deref_mut()))
        .collect();
    if cfg.n_upsample_rounds == 0 || cfg.n_importance == 0 {
        return depths.into_iter().map(|d| RaySamples { depths: d }).collect();
    }
    let pts: Vec<V3<T>> = rays
        .iter()
        .zip(&depths)
        .flat_map(|(r, ds)| ds.iter().map(move |&d| r.at(d)))
        .collect();
    let flat = field.sdf_batch(&pts);
    let mut sdf: Vec<Vec<T>> = flat.chunks(cfg.n_coarse).map(|c| c.to_vec()).collect();
    for round in 0..cfg.n_upsample_rounds {
        let s = T::lit(cfg.upsample_base_sharpness as f64 * 2f64.powi(round as i32));
        let new: Vec<Vec<T>> = depths
            .iter()
            .zip(&sdf)
            .map(|(d, f)| {
                let (_, w) = transmittance_weights(&alphas_from_sdf(f, s));
                importance_depths(d, &w, cfg.n_importance)
            })
            .collect();
        let pts: Vec<V3<T>> = rays
            .iter()
            .zip(&new)
            .flat_map(|(r, ds)| ds.iter().map(move |&d| r.at(d)))
            .collect();
        let new_sdf = field.sdf_batch(&pts);
        for (k, chunk) in new_sdf.chunks(cfg.n_importance).enumerate() {
            let (d, f) = merge_sorted(&depths[k], &sdf[k], &new[k], chunk);
            depths[k] = d;
            sdf[k] = f;
        }
    }
    depths.into_iter().map(|d| RaySamples { depths: d }).collect()
}

/// Single-ray convenience wrapper around [`sample_rays`].
pub fn sample_ray<T: Real, F: Field<T> + ?Sized, R: Rng + ?Sized>(
    field: &F,
    ray: &Ray<T>,
    cfg: &SamplingConfig,
    rng: Option<&mut R>,
) -> RaySamples<T> {
    sample_rays(field, std::slice::from_ref(ray), cfg, rng).remove(0)
}

/// Composites one ray from per-sample field values.
pub fn integrate<T: Real>(
    depths: &[T],
    sdf: &[T],
    grad: &[V3<T>],
    color: &[V3<T>],
    s: T,
) -> RenderOutput<T> {
    let half = T::lit(0.5);
    let alphas = alphas_from_sdf(sdf, s);
    let (_, weights) = transmittance_weights(&alphas);
    let mid = |v: &[V3<T>], i: usize| -> V3<T> {
        [
            (v[i][0] + v[i + 1][0]) * half,
            (v[i][1] + v[i + 1][1]) * half,
            (v[i][2] + v[i + 1][2]) * half,
        ]
    };
    let sections = weights.len();
    let colors: Vec<V3<T>> = (0..sections).map(|i| mid(color, i)).collect();
    let normals: Vec<V3<T>> = (0..sections).map(|i| mid(grad, i)).collect();
    let section_depths: Vec<T> = depths.windows(2).map(|w| (w[0] + w[1]) * half).collect();
    let normal_raw = composite(&weights, &normals);
    let len = norm3(normal_raw);
    let normal = if len > T::zero() {
        normal_raw.map(|v| v / len)
    } else {
        [T::zero(); 3]
    };
    RenderOutput {
        color: composite(&weights, &colors),
        normal_raw,
        normal,
        depth: composite_scalar(&weights, &section_depths),
        weight_sum: weights.iter().fold(T::zero(), |a, b| a + *b),
        weights,
        section_depths,
    }
}

/// Batch rendering entry point for evaluation (no gradients). `s` is the
/// logistic sharpness; rays are processed in chunks to bound memory.
pub fn render_rays<T: Real, F: Field<T> + ?Sized>(
    field: &F,
    rays: &[Ray<T>],
    cfg: &SamplingConfig,
    s: T,
) -> Vec<RenderOutput<T>> {
    const CHUNK: usize = 512;
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(CHUNK) {
        let samples = sample_rays::<T, F, rand::rngs::ThreadRng>(field, chunk, cfg, None);
        let mut pts = Vec::new();
        let mut dirs = Vec::new();
        for (r, s) in chunk.iter().zip(&samples) {
            for &d in &s.depths {
                pts.push(r.at(d));
                dirs.push(r.dir);
            }
        }
        let vals = field.eval_batch(&pts, &dirs);
        let mut offset = 0;
        for smp in &samples {
            let n = smp.depths.len();
            let range = offset..offset + n;
            out.push(integrate(
                &smp.depths,
                &vals.sdf[range.clone()],
                &vals.grad[range.clone()],
                &vals.color[range],
                s,
            ));
            offset += n;
        }
    }
    out
}

/// Every pixel of one view rendered through the field.
#[derive(Clone, Debug)]
pub struct ViewRender {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB, clamped to `[0, 1]`.
    pub color: Vec<f32>,
    /// Unit normals in the camera frame; zero where the pixel is degenerate
    /// or its ray misses the unit sphere.
    pub normal_cam: Vec<[f64; 3]>,
    /// Distance along the ray divided by the weight sum.
    pub depth: Vec<f64>,
    pub weight_sum: Vec<f64>,
}

/// Renders all pixels of `view` (scene assumed normalized).
pub fn render_view<T: Real, F: Field<T> + ?Sized>(
    field: &F,
    view: &crate::camera::CameraView,
    cfg: &SamplingConfig,
    s: T,
) -> ViewRender {
    let n = view.pixel_count();
    let mut index = Vec::with_capacity(n);
    let mut rays = Vec::with_capacity(n);
    for p in 0..n {
        if let Ok(r) = view.pixel_ray((p % view.width) as f64, (p / view.width) as f64) {
            index.push(p);
            rays.push(r.cast::<T>());
        }
    }
    let outs = render_rays(field, &rays, cfg, s);
    let mut out = ViewRender {
        width: view.width,
        height: view.height,
        color: vec![0.0; 3 * n],
        normal_cam: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        weight_sum: vec![0.0; n],
    };
    for (&p, o) in index.iter().zip(&outs) {
        for k in 0..3 {
            out.color[3 * p + k] = (o.color[k].as_f64() as f32).clamp(0.0, 1.0);
        }
        let w = o.weight_sum.as_f64();
        out.weight_sum[p] = w;
        if !o.is_degenerate() {
            let nw = nalgebra::Vector3::from(o.normal.map(|c| c.as_f64()));
            out.normal_cam[p] = view.world_to_camera_dir(&nw).into();
            out.depth[p] = o.depth.as_f64() / w;
        }
    }
    out
}

/// Per-ray weight profiles as CSV: `ray,section,depth,weight`.
pub fn weight_profile_csv<T: Real>(outputs: &[RenderOutput<T>]) -> String {
    let mut s = String::from("ray,section,depth,weight\n");
    for (r, o) in outputs.iter().enumerate() {
        for (i, (d, w)) in o.section_depths.iter().zip(&o.weights).enumerate() {
            s.push_str(&format!("{r},{i},{d},{w}\n"));
        }
    }
    s
}

#[cfg(test)]
mod tests;
