//! Scene representation: a signed distance network plus a view-dependent
//! color network, both evaluated with exact spatial gradients.

pub mod analytic;
pub mod encoding;
mod network;

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Container};
use crate::error::{Error, Result};
use crate::scalar::{Real, V3};

pub use analytic::{Albedo, AnalyticField, ScaledField, Shape};
pub use encoding::Encoding;
pub use network::{ColorTape, GeometryOutput, GeometryTape};

/// Values produced when a field is queried with gradients and colors.
#[derive(Clone, Debug, Default)]
pub struct FieldSamples<T> {
    pub sdf: Vec<T>,
    pub grad: Vec<V3<T>>,
    pub color: Vec<V3<T>>,
}

/// Anything that can stand in for the scene: neural or closed form.
///
/// Convention: negative inside solid material, positive in free space.
pub trait Field<T: Real>: Sync {
    fn sdf(&self, x: V3<T>) -> T;
    fn sdf_gradient(&self, x: V3<T>) -> V3<T>;
    fn color(&self, x: V3<T>, v: V3<T>) -> V3<T>;

    fn sdf_batch(&self, points: &[V3<T>]) -> Vec<T> {
        points.iter().map(|p| self.sdf(*p)).collect()
    }

    /// Distances, gradients and colors for `points` seen along `dirs`.
    fn eval_batch(&self, points: &[V3<T>], dirs: &[V3<T>]) -> FieldSamples<T> {
        FieldSamples {
            sdf: self.sdf_batch(points),
            grad: points.iter().map(|p| self.sdf_gradient(*p)).collect(),
            color: points
                .iter()
                .zip(dirs)
                .map(|(p, v)| self.color(*p, *v))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub pos_octaves: usize,
    pub dir_octaves: usize,
    pub geo_width: usize,
    /// Hidden layers of the geometry network.
    pub geo_layers: usize,
    /// Linear layers whose input is `[h, γ(x)] / √2`.
    pub geo_skips: Vec<usize>,
    pub feature_dim: usize,
    pub color_width: usize,
    pub color_layers: usize,
    pub softplus_beta: f64,
    /// `s = exp(sharpness_scale * v)` with `v` the stored parameter.
    pub sharpness_scale: f64,
    pub init_sharpness_param: f64,
}

impl FieldConfig {
    pub fn full() -> Self {
        FieldConfig {
            pos_octaves: 6,
            dir_octaves: 4,
            geo_width: 256,
            geo_layers: 8,
            geo_skips: vec![4],
            feature_dim: 256,
            color_width: 256,
            color_layers: 6,
            softplus_beta: 100.0,
            sharpness_scale: 10.0,
            init_sharpness_param: 0.3,
        }
    }

    pub fn tiny() -> Self {
        FieldConfig {
            geo_width: 64,
            geo_layers: 4,
            geo_skips: vec![],
            feature_dim: 64,
            color_width: 64,
            color_layers: 3,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.geo_layers == 0 || self.color_layers == 0 {
            return Err(Error::Config("networks need at least one hidden layer".into()));
        }
        let in_dim = Encoding::new(self.pos_octaves).dim();
        for &s in &self.geo_skips {
            if s == 0 || s > self.geo_layers {
                return Err(Error::Config(format!("skip layer {s} out of range")));
            }
            if self.geo_width <= in_dim {
                return Err(Error::Config("skip connections need geo_width > encoding dim".into()));
            }
        }
        if !(self.softplus_beta > 0.0 && self.sharpness_scale > 0.0) {
            return Err(Error::Config("softplus_beta and sharpness_scale must be positive".into()));
        }
        Ok(())
    }
}

/// One linear layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Slot {
    pub w: usize,
    pub b: usize,
    pub out: usize,
    pub inp: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub geo: Vec<Slot>,
    pub color: Vec<Slot>,
    pub sharpness: usize,
    pub total: usize,
    pub geo_in: usize,
    pub dir_dim: usize,
    pub color_in: usize,
}

impl Layout {
    fn new(cfg: &FieldConfig) -> Self {
        let mut cursor = 0;
        let mut slot = |inp: usize, out: usize| {
            let s = Slot {
                w: cursor,
                b: cursor + out * inp,
                out,
                inp,
            };
            cursor += out * inp + out;
            s
        };
        let geo_in = Encoding::new(cfg.pos_octaves).dim();
        let mut geo = Vec::new();
        let mut width_in = geo_in;
        for l in 0..=cfg.geo_layers {
            let mut out = if l == cfg.geo_layers {
                1 + cfg.feature_dim
            } else {
                cfg.geo_width
            };
            if cfg.geo_skips.contains(&(l + 1)) {
                out -= geo_in;
            }
            geo.push(slot(width_in, out));
            width_in = if cfg.geo_skips.contains(&(l + 1)) {
                out + geo_in
            } else {
                out
            };
        }
        let dir_dim = Encoding::new(cfg.dir_octaves).dim();
        let color_in = 6 + dir_dim + cfg.feature_dim;
        let mut color = Vec::new();
        let mut width_in = color_in;
        for l in 0..=cfg.color_layers {
            let out = if l == cfg.color_layers { 3 } else { cfg.color_width };
            color.push(slot(width_in, out));
            width_in = out;
        }
        let sharpness = cursor;
        Layout {
            geo,
            color,
            sharpness,
            total: sharpness + 1,
            geo_in,
            dir_dim,
            color_in,
        }
    }
}

/// Which side of the initial sphere is solid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SphereSide {
    /// `f ≈ ‖x‖ − r`: a solid ball, for object-centric scenes.
    SolidInside,
    /// `f ≈ r − ‖x‖`: free space inside, for rooms observed from within.
    SolidOutside,
}

/// Learnable SDF + color field with every parameter in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralField<T> {
    config: FieldConfig,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Real> NeuralField<T> {
    /// Default (uniform fan-in) initialization for every layer.
    pub fn new(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in layout.geo.iter().chain(&layout.color) {
            let bound = 1.0 / (slot.inp as f64).sqrt();
            let dist = Uniform::new(-bound, bound).expect("bound > 0");
            for p in &mut params[slot.w..slot.b + slot.out] {
                *p = T::lit(dist.sample(&mut rng));
            }
        }
        params[layout.sharpness] = T::lit(config.init_sharpness_param);
        Ok(NeuralField {
            config,
            layout,
            params,
        })
    }

    /// Geometric initialization so the network starts close to a sphere SDF.
    ///
    /// Encoded (non-raw) input columns start at zero so that the initial
    /// function only sees the coordinates themselves.
    pub fn initialize_sphere(&mut self, radius: f64, side: SphereSide, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d5a1);
        let geo_in = self.layout.geo_in;
        let last = self.layout.geo.len() - 1;
        let skips = self.config.geo_skips.clone();
        for (l, slot) in self.layout.geo.clone().into_iter().enumerate() {
            let (w, b) = (slot.w, slot.b);
            if l == last {
                let mean = (std::f64::consts::PI).sqrt() / (slot.inp as f64).sqrt();
                let sign = match side {
                    SphereSide::SolidInside => 1.0,
                    SphereSide::SolidOutside => -1.0,
                };
                let sdf_row = Normal::new(sign * mean, 1e-4).expect("valid normal");
                let feat = Normal::new(0.0, 1.0 / (slot.inp as f64).sqrt()).expect("valid normal");
                for r in 0..slot.out {
                    for c in 0..slot.inp {
                        let v = if r == 0 {
                            sdf_row.sample(&mut rng)
                        } else {
                            feat.sample(&mut rng)
                        };
                        self.params[w + r * slot.inp + c] = T::lit(v);
                    }
                    self.params[b + r] = T::zero();
                }
                self.params[b] = T::lit(-sign * radius);
                self.fit_sphere_row(radius, sign, &mut rng);
            } else {
                let std = 2f64.sqrt() / (slot.out as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("valid normal");
                for r in 0..slot.out {
                    for c in 0..slot.inp {
                        let mut v = dist.sample(&mut rng);
                        // Zero the encoded columns of the raw input.
                        if l == 0 && c >= 3 {
                            v = 0.0;
                        }
                        if skips.contains(&l) && c >= slot.inp - geo_in + 3 {
                            v = 0.0;
                        }
                        self.params[w + r * slot.inp + c] = T::lit(v);
                    }
                    self.params[b + r] = T::zero();
                }
            }
        }
    }

    /// Refits the distance row of the output layer by ridge least squares so
    /// the initial field matches the signed sphere distance and its gradient.
    fn fit_sphere_row(&mut self, radius: f64, sign: f64, rng: &mut ChaCha8Rng) {
        const POINTS: usize = 2048;
        const CHUNK: usize = 256;
        let slot = *self.layout.geo.last().expect("geometry layers");
        let k = slot.inp + 1;
        let work: NeuralField<f64> = self.cast();
        let mut ata = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut atb = nalgebra::DVector::<f64>::zeros(k);
        let coord = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let mut pts = Vec::with_capacity(POINTS);
        while pts.len() < POINTS {
            let p: V3<f64> = std::array::from_fn(|_| coord.sample(rng));
            let r = crate::scalar::norm3(p);
            if r <= 1.0 && r > 0.05 {
                pts.push(p);
            }
        }
        let mut row = vec![0.0; k];
        for chunk in pts.chunks(CHUNK) {
            let (_, tape) = work.geometry_forward(chunk, true, true);
            let inputs = tape.expect("tape requested");
            let h = inputs.last_input();
            let n = chunk.len();
            for (i, p) in chunk.iter().enumerate() {
                let r = crate::scalar::norm3(*p);
                for block in 0..4 {
                    let src = h.row(block * n + i);
                    row[..slot.inp].iter_mut().zip(src).for_each(|(d, s)| *d = *s);
                    row[slot.inp] = if block == 0 { 1.0 } else { 0.0 };
                    let target = if block == 0 {
                        sign * (r - radius)
                    } else {
                        sign * p[block - 1] / r
                    };
                    for a in 0..k {
                        if row[a] == 0.0 {
                            continue;
                        }
                        atb[a] += row[a] * target;
                        for b in 0..k {
                            ata[(a, b)] += row[a] * row[b];
                        }
                    }
                }
            }
        }
        let ridge = 1e-6 * ata.trace() / k as f64;
        for d in 0..k {
            ata[(d, d)] += ridge;
        }
        let Some(chol) = ata.cholesky() else {
            return;
        };
        let sol = chol.solve(&atb);
        for c in 0..slot.inp {
            self.params[slot.w + c] = T::lit(sol[c]);
        }
        self.params[slot.b] = T::lit(sol[slot.inp]);
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    #[cfg(test)]
    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Index of the stored sharpness parameter `v`.
    pub fn sharpness_index(&self) -> usize {
        self.layout.sharpness
    }

    /// Logistic density sharpness `s = exp(scale · v)`, always positive.
    pub fn sharpness(&self) -> T {
        (T::lit(self.config.sharpness_scale) * self.params[self.layout.sharpness]).exp()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().position(|p| !p.is_finite()) {
            Some(i) => Err(Error::NonFinite(format!("field parameter {i} is {}", self.params[i]))),
            None => Ok(()),
        }
    }

    /// Checked single-point distance query.
    pub fn try_sdf(&self, x: V3<T>) -> Result<T> {
        self.check_finite()?;
        Ok(self.sdf(x))
    }

    /// Checked single-point gradient query.
    pub fn try_sdf_gradient(&self, x: V3<T>) -> Result<V3<T>> {
        self.check_finite()?;
        Ok(self.sdf_gradient(x))
    }

    /// Checked single-point color query.
    pub fn try_color(&self, x: V3<T>, v: V3<T>) -> Result<V3<T>> {
        self.check_finite()?;
        Ok(self.color(x, v))
    }

    /// Same architecture and parameters in another scalar type.
    pub fn cast<U: Real>(&self) -> NeuralField<U> {
        NeuralField {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
        }
    }

    pub fn from_params(config: FieldConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(NeuralField {
            config,
            layout,
            params,
        })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("field");
        c.set_meta("field_config", &self.config);
        c.set_meta("dtype", &T::DTYPE);
        c.put_floats("params", &self.params);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: FieldConfig = c.meta("field_config")?;
        let params = c.floats::<T>("params")?;
        Self::from_params(config, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.to_container())
    }

    /// Loads the field from a field or training checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&checkpoint::read(path)?)
    }

    /// Distance, gradient and geometry features, with a tape for
    /// [`NeuralField::geometry_backward`] when `keep_tape` is set.
    pub fn geometry_forward(
        &self,
        points: &[V3<T>],
        tangents: bool,
        keep_tape: bool,
    ) -> (GeometryOutput<T>, Option<GeometryTape<T>>) {
        network::geometry_forward(self, points, tangents, keep_tape)
    }

    /// Accumulates parameter gradients into `grads` given adjoints of the
    /// distance, its spatial gradient and the feature vector.
    pub fn geometry_backward(
        &self,
        tape: &GeometryTape<T>,
        d_sdf: &[T],
        d_grad: &[V3<T>],
        d_feature: Option<&Array2<T>>,
        grads: &mut [T],
    ) {
        network::geometry_backward(self, tape, d_sdf, d_grad, d_feature, grads)
    }

    pub fn color_forward(
        &self,
        points: &[V3<T>],
        dirs: &[V3<T>],
        normals: &[V3<T>],
        features: &Array2<T>,
    ) -> (Vec<V3<T>>, ColorTape<T>) {
        network::color_forward(self, points, dirs, normals, features)
    }

    /// Returns adjoints of the normal inputs and features.
    pub fn color_backward(
        &self,
        tape: &ColorTape<T>,
        d_rgb: &[V3<T>],
        grads: &mut [T],
    ) -> (Vec<V3<T>>, Array2<T>) {
        network::color_backward(self, tape, d_rgb, grads)
    }
}

impl<T: Real> Field<T> for NeuralField<T> {
    fn sdf(&self, x: V3<T>) -> T {
        self.geometry_forward(&[x], false, false).0.sdf[0]
    }

    fn sdf_gradient(&self, x: V3<T>) -> V3<T> {
        self.geometry_forward(&[x], true, false).0.grad[0]
    }

    fn color(&self, x: V3<T>, v: V3<T>) -> V3<T> {
        self.eval_batch(&[x], &[v]).color[0]
    }

    fn sdf_batch(&self, points: &[V3<T>]) -> Vec<T> {
        self.geometry_forward(points, false, false).0.sdf
    }

    fn eval_batch(&self, points: &[V3<T>], dirs: &[V3<T>]) -> FieldSamples<T> {
        let (geo, _) = self.geometry_forward(points, true, false);
        let (color, _) = self.color_forward(points, dirs, &geo.grad, &geo.feature);
        FieldSamples {
            sdf: geo.sdf,
            grad: geo.grad,
            color,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_unit_ball(rng: &mut ChaCha8Rng, n: usize) -> Vec<V3<f64>> {
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let p: V3<f64> = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                pts.push(p);
            }
        }
        pts
    }

    fn norm(p: V3<f64>) -> f64 {
        p.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn parameter_layout_is_contiguous() {
        let f = NeuralField::<f32>::new(FieldConfig::tiny(), 0).unwrap();
        let l = f.layout();
        assert_eq!(l.geo[0].inp, 39);
        assert_eq!(l.geo.last().unwrap().out, 65);
        assert_eq!(l.color[0].inp, 3 + 27 + 3 + 64);
        assert_eq!(l.total, f.param_count());
        let full = Layout::new(&FieldConfig::full());
        // Skip input layer receives [h, γ(x)].
        assert_eq!(full.geo[4].inp, 256);
        assert_eq!(full.geo[3].out, 256 - 39);
        assert_eq!(full.geo.len(), 9);
        assert_eq!(full.color.len(), 7);
    }

    #[test]
    fn sphere_init_approximates_sphere_sdf() {
        for cfg in [FieldConfig::tiny(), FieldConfig::full()] {
            let mut f = NeuralField::<f64>::new(cfg, 1).unwrap();
            f.initialize_sphere(0.5, SphereSide::SolidInside, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let pts = random_unit_ball(&mut rng, 10_000);
            let vals = f.sdf_batch(&pts);
            let mean: f64 = pts
                .iter()
                .zip(&vals)
                .map(|(p, v)| (v - (norm(*p) - 0.5)).abs())
                .sum::<f64>()
                / pts.len() as f64;
            assert!(mean < 0.1, "mean deviation {mean}");
            assert!(f.sdf([0.0; 3]) < 0.0);
            assert!(f.sdf([0.9, 0.0, 0.0]) > 0.0);
            assert!(f.sdf([0.0, -0.5, 0.0]).abs() < 0.1);
        }
    }

    #[test]
    fn inverted_sphere_init_flips_sign() {
        let mut f = NeuralField::<f64>::new(FieldConfig::tiny(), 1).unwrap();
        f.initialize_sphere(0.5, SphereSide::SolidOutside, 1);
        assert!(f.sdf([0.0; 3]) > 0.0);
        assert!(f.sdf([0.0, 0.9, 0.0]) < 0.0);
    }

    #[test]
    fn sphere_init_gradient_near_unit_norm() {
        let mut f = NeuralField::<f64>::new(FieldConfig::tiny(), 4).unwrap();
        f.initialize_sphere(0.5, SphereSide::SolidInside, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<V3<f64>> = random_unit_ball(&mut rng, 1000)
            .into_iter()
            .map(|p| {
                let r = 0.5 + rng.random_range(-0.05..0.05);
                let n = norm(p).max(1e-9);
                p.map(|v| v / n * r)
            })
            .collect();
        let (out, _) = f.geometry_forward(&pts, true, false);
        let mean_dev = out
            .grad
            .iter()
            .map(|g| (norm(*g) - 1.0).abs())
            .sum::<f64>()
            / pts.len() as f64;
        assert!(mean_dev < 0.1, "mean |‖∇f‖-1| = {mean_dev}");
    }

    #[test]
    fn colors_in_unit_range_and_pure() {
        let f = NeuralField::<f32>::new(FieldConfig::tiny(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: V3<f32> = [rng.random(), rng.random(), rng.random()];
            let v = [0.0f32, 0.6, 0.8];
            let c = f.color(x, v);
            assert!(c.iter().all(|c| (0.0..=1.0).contains(c)));
            assert_eq!(c, f.color(x, v));
        }
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let mut f = NeuralField::<f64>::new(FieldConfig::tiny(), 0).unwrap();
        assert!(f.try_sdf([0.1, 0.2, 0.3]).is_ok());
        f.params_mut()[10] = f64::NAN;
        assert!(matches!(f.try_sdf([0.1, 0.2, 0.3]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn sharpness_positive() {
        let mut f = NeuralField::<f64>::new(FieldConfig::tiny(), 0).unwrap();
        assert!((f.sharpness() - 20.085).abs() < 1e-2);
        let i = f.sharpness_index();
        f.params_mut()[i] = -50.0;
        assert!(f.sharpness() > 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.ckpt");
        let mut f = NeuralField::<f32>::new(FieldConfig::tiny(), 3).unwrap();
        f.initialize_sphere(0.4, SphereSide::SolidOutside, 3);
        f.save(&path).unwrap();
        let g = NeuralField::<f32>::load(&path).unwrap();
        assert_eq!(f, g);
    }
}
