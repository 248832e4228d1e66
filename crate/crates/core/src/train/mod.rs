//! Two-phase optimization of the neural field.
//!
//! Phase one supervises every prior pixel (Ω ≡ 1). Phase two renders each
//! batch, runs the multi-view check on the detached normal and depth of
//! every sampled pixel, folds the verdicts into the persistent
//! [`PriorMask`], and gates the prior loss with the result.

mod adam;
mod config;
pub mod loss;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Container};
use crate::error::{Error, Result};
use crate::field::NeuralField;
use crate::geocheck::{evaluate_indicator, PriorMask};
use crate::kv::KeyValues;
use crate::render::{backward_batch, forward_batch, BatchForward, RenderAdjoints};
use crate::scalar::Real;
use crate::scene::{select_neighbors_among, Scene};
use crate::seed::stream_seed;
use crate::transform::{Aabb, Similarity};

pub use adam::Adam;
pub use config::{Preset, TrainConfig};
pub use loss::{loss_color, loss_eikonal, loss_prior, total_loss, LossTerm};

/// One row of the scalar training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub loss_color: f64,
    pub loss_prior: f64,
    pub loss_eik: f64,
    /// Pixels in the REJECTED state after this step's check.
    pub rejected: usize,
    /// Sharpness used to render this step.
    pub sharpness: f64,
}

const LOG_COLUMNS: usize = 7;

impl LogRow {
    fn to_array(self) -> [f64; LOG_COLUMNS] {
        [
            self.step as f64,
            self.loss,
            self.loss_color,
            self.loss_prior,
            self.loss_eik,
            self.rejected as f64,
            self.sharpness,
        ]
    }

    fn from_slice(v: &[f64]) -> Self {
        LogRow {
            step: v[0] as usize,
            loss: v[1],
            loss_color: v[2],
            loss_prior: v[3],
            loss_eik: v[4],
            rejected: v[5] as usize,
            sharpness: v[6],
        }
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,L,L_c,L_p,L_eik,rejected,s\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, r.loss, r.loss_color, r.loss_prior, r.loss_eik, r.rejected, r.sharpness
        ));
    }
    s
}

/// Where the trained field sits relative to the scene it was fit to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub scene: String,
    /// Region of interest in field coordinates.
    pub region: Option<Aabb>,
    /// Field coordinates to original scene units.
    pub to_original: Similarity,
}

impl SceneFrame {
    /// Extraction bounds: the region of interest with a small margin, or the
    /// cube around the unit sphere.
    pub fn bounds(&self) -> Aabb {
        match self.region {
            Some(r) => r.expanded(0.02),
            None => Aabb::centered([0.0; 3], [1.0; 3]),
        }
    }
}

/// Everything needed to continue training bit-exactly.
///
/// Per-step randomness is derived from `(seed, step)`, so the step counter
/// doubles as the RNG state.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub config: TrainConfig,
    pub frame: SceneFrame,
    pub field: NeuralField<T>,
    pub optimizer: Adam<T>,
    pub mask: PriorMask,
    /// Steps completed.
    pub step: usize,
    pub log: Vec<LogRow>,
}

impl<T: Real> TrainState<T> {
    pub fn to_container(&self) -> Container {
        let mut c = self.field.to_container();
        c.set_meta("kind", &"train_state");
        c.set_meta("train_config", &self.config.to_kv().to_text());
        c.set_meta("step", &(self.step as u64));
        c.set_meta("frame", &self.frame);
        c.set_meta("adam_t", &self.optimizer.t);
        c.put_floats("adam.m", &self.optimizer.m);
        c.put_floats("adam.v", &self.optimizer.v);
        let flat: Vec<f64> = self.log.iter().flat_map(|r| r.to_array()).collect();
        c.put_floats("log", &flat);
        self.mask.store(&mut c);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind: String = c.meta("kind").unwrap_or_default();
        if kind != "train_state" {
            return Err(Error::Checkpoint("not a training checkpoint".into()));
        }
        let text: String = c.meta("train_config")?;
        let config = TrainConfig::from_kv(&KeyValues::parse(&text)?)?;
        let field = NeuralField::from_container(c)?;
        let t: u64 = c.meta("adam_t")?;
        let optimizer = Adam::from_moments(
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
            t,
            c.floats("adam.m")?,
            c.floats("adam.v")?,
        )?;
        if optimizer.m.len() != field.param_count() {
            return Err(Error::Checkpoint("optimizer state does not match the field".into()));
        }
        let flat = c.floats::<f64>("log")?;
        let log = flat.chunks_exact(LOG_COLUMNS).map(LogRow::from_slice).collect();
        let step = c.meta::<u64>("step")? as usize;
        Ok(TrainState {
            config,
            frame: c.meta("frame")?,
            field,
            optimizer,
            mask: PriorMask::load(c)?,
            step,
            log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.to_container())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&checkpoint::read(path)?)
    }

    /// Same state in another scalar type.
    pub fn cast<U: Real>(&self) -> TrainState<U> {
        let conv = |x: &[T]| x.iter().map(|v| U::lit(v.as_f64())).collect();
        TrainState {
            config: self.config.clone(),
            frame: self.frame.clone(),
            field: self.field.cast(),
            optimizer: Adam {
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                t: self.optimizer.t,
                m: conv(&self.optimizer.m),
                v: conv(&self.optimizer.v),
            },
            mask: self.mask.clone(),
            step: self.step,
            log: self.log.clone(),
        }
    }
}

impl TrainState<f64> {
    /// Loads a checkpoint written in either precision.
    pub fn load_any(path: &Path) -> Result<Self> {
        let c = checkpoint::read(path)?;
        match c.meta::<String>("dtype")?.as_str() {
            "f32" => Ok(TrainState::<f32>::from_container(&c)?.cast()),
            _ => Self::from_container(&c),
        }
    }
}

/// Uniform sampler over the valid pixels of the training views.
#[derive(Clone, Debug)]
struct PixelSampler {
    /// `(view, pixel)` of every valid pixel.
    pixels: Vec<(u32, u32)>,
}

impl PixelSampler {
    fn new(scene: &Scene, views: &[usize]) -> Self {
        let mut pixels = Vec::new();
        for &v in views {
            for (i, &ok) in scene.views[v].valid.iter().enumerate() {
                if ok {
                    pixels.push((v as u32, i as u32));
                }
            }
        }
        PixelSampler { pixels }
    }

    fn sample<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<(usize, usize)> {
        (0..count)
            .map(|_| {
                let (v, p) = self.pixels[rng.random_range(0..self.pixels.len())];
                (v as usize, p as usize)
            })
            .collect()
    }
}

/// Per-batch record kept for the non-finite diagnostic dump.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct BatchLoss {
    pub color: f64,
    pub prior: f64,
    pub eik: f64,
    pub total: f64,
}

#[derive(serde::Serialize)]
struct BatchDump {
    step: usize,
    pixels: Vec<(usize, usize)>,
    color: Vec<[f64; 3]>,
    normal_raw: Vec<[f64; 3]>,
    depth: Vec<f64>,
    weight_sum: Vec<f64>,
    loss: BatchLoss,
    sharpness: f64,
}

pub struct Trainer<'a, T> {
    scene: &'a Scene,
    pub state: TrainState<T>,
    train_views: Vec<usize>,
    /// Check neighbors per scene view (empty for held-out views).
    neighbors: Vec<Vec<usize>>,
    sampler: PixelSampler,
    /// Where a failing batch is written; defaults to the system temp dir.
    pub dump_dir: Option<PathBuf>,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Fresh state: sphere-initialized field, zero moments, all-UNTESTED mask.
    pub fn new(scene: &'a Scene, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut field = NeuralField::new(config.field.clone(), stream_seed(config.seed, "init", 0))?;
        field.initialize_sphere(config.sphere_radius, config.sphere_side, stream_seed(config.seed, "init", 1));
        let optimizer = Adam::new(field.param_count(), config.adam_beta1, config.adam_beta2, config.adam_eps);
        let sizes: Vec<(usize, usize)> = scene.views.iter().map(|v| (v.width, v.height)).collect();
        let state = TrainState {
            config,
            frame: SceneFrame {
                scene: scene.name.clone(),
                region: scene.region,
                to_original: scene.to_original,
            },
            field,
            optimizer,
            mask: PriorMask::new(&sizes),
            step: 0,
            log: Vec::new(),
        };
        Self::resume(scene, state)
    }

    /// Continues from a saved state on the same scene.
    pub fn resume(scene: &'a Scene, state: TrainState<T>) -> Result<Self> {
        let config = &state.config;
        config.validate()?;
        if state.mask.view_count() != scene.views.len() {
            return Err(Error::Validation(format!(
                "state has {} mask views, scene has {} views",
                state.mask.view_count(),
                scene.views.len()
            )));
        }
        if let Some(&v) = config.exclude_views.iter().find(|&&v| v >= scene.views.len()) {
            return Err(Error::Config(format!("exclude_views: no view {v}")));
        }
        let train_views: Vec<usize> =
            (0..scene.views.len()).filter(|v| !config.exclude_views.contains(v)).collect();
        for &v in &train_views {
            let view = &scene.views[v];
            if view.center().norm() >= 1.0 {
                return Err(Error::Validation(format!(
                    "frame {} lies outside the unit sphere; normalize the scene first",
                    view.name
                )));
            }
        }
        let sampler = PixelSampler::new(scene, &train_views);
        if sampler.pixels.is_empty() {
            return Err(Error::Validation("no valid pixels in the training views".into()));
        }
        let mut neighbors = vec![Vec::new(); scene.views.len()];
        for &v in train_views.iter().filter(|_| config.geocheck) {
            neighbors[v] = select_neighbors_among(scene, v, &train_views, config.check.neighbors)?;
        }
        Ok(Trainer {
            scene,
            state,
            train_views,
            neighbors,
            sampler,
            dump_dir: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.state.config
    }

    pub fn train_views(&self) -> &[usize] {
        &self.train_views
    }

    pub fn neighbors(&self, view: usize) -> &[usize] {
        &self.neighbors[view]
    }

    pub fn in_phase_two(&self) -> bool {
        self.state.step >= self.state.config.phase_one_iters
    }

    /// One optimizer update on a fresh batch.
    pub fn step(&mut self) -> Result<LogRow> {
        let cfg = self.state.config.clone();
        let step = self.state.step;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, "sampling", step as u64));
        let pixels = self.sampler.sample(&mut rng, cfg.rays_per_batch);
        let m = pixels.len();
        let mut rays = Vec::with_capacity(m);
        for &(v, p) in &pixels {
            let view = &self.scene.views[v];
            let ray = view.pixel_ray((p % view.width) as f64, (p / view.width) as f64)?;
            rays.push(ray.cast::<T>());
        }
        let field = &self.state.field;
        let fwd = forward_batch(field, &rays, &cfg.sampling, Some(&mut rng));
        let sharpness = fwd.sharpness.as_f64();

        // Check verdicts come from the detached render and are applied
        // before the loss so a pixel is gated from the step it is rejected.
        let check_active = cfg.geocheck && step >= cfg.phase_one_iters;
        if check_active {
            for (&(v, p), out) in pixels.iter().zip(&fwd.outputs) {
                if out.is_degenerate() {
                    continue;
                }
                let view = &self.scene.views[v];
                let normal = Vector3::from(out.normal.map(|c| c.as_f64()));
                let depth = out.depth.as_f64() / out.weight_sum.as_f64();
                let verdict = evaluate_indicator(
                    &self.scene.views,
                    v,
                    p % view.width,
                    p / view.width,
                    normal,
                    depth,
                    &self.neighbors[v],
                    &cfg.check,
                );
                self.state.mask.update(v, p, verdict);
            }
        }
        let omega: Vec<T> = pixels
            .iter()
            .map(|&(v, p)| if check_active { T::lit(self.state.mask.omega(v, p)) } else { T::one() })
            .collect();

        let mut grads = vec![T::zero(); field.param_count()];
        let loss = objective(self.scene, &cfg, field, &pixels, &fwd, &omega, Some(&mut grads));
        let bad_grad = grads.iter().position(|g| !g.is_finite());
        if !loss.total.is_finite() || bad_grad.is_some() {
            let dump = BatchDump {
                step,
                pixels: pixels.clone(),
                color: fwd.outputs.iter().map(|o| o.color.map(|v| v.as_f64())).collect(),
                normal_raw: fwd.outputs.iter().map(|o| o.normal_raw.map(|v| v.as_f64())).collect(),
                depth: fwd.outputs.iter().map(|o| o.depth.as_f64()).collect(),
                weight_sum: fwd.outputs.iter().map(|o| o.weight_sum.as_f64()).collect(),
                loss,
                sharpness,
            };
            let what = match bad_grad {
                _ if !loss.total.is_finite() => format!("loss is {}", loss.total),
                Some(i) => format!("gradient of parameter {i} is {}", grads[i]),
                None => unreachable!(),
            };
            return Err(self.non_finite(step, &what, &dump));
        }
        let lr = cfg.learning_rate(step);
        self.state.optimizer.step(self.state.field.params_mut(), &grads, lr);
        self.state.step += 1;
        let row = LogRow {
            step,
            loss: loss.total,
            loss_color: loss.color,
            loss_prior: loss.prior,
            loss_eik: loss.eik,
            rejected: self.state.mask.rejected_count(),
            sharpness,
        };
        self.state.log.push(row);
        Ok(row)
    }

    fn non_finite(&self, step: usize, what: &str, dump: &BatchDump) -> Error {
        let dir = self.dump_dir.clone().unwrap_or_else(std::env::temp_dir);
        let path = dir.join(format!("nonfinite_step{step}.json"));
        let written = fs::create_dir_all(&dir)
            .ok()
            .and_then(|_| serde_json::to_vec_pretty(dump).ok())
            .and_then(|bytes| fs::write(&path, bytes).ok())
            .is_some();
        let where_ = if written {
            format!("batch dumped to {}", path.display())
        } else {
            "batch dump could not be written".to_string()
        };
        Error::NonFinite(format!(
            "{what} at step {step} (L_c {}, L_p {}, L_eik {}); {where_}",
            dump.loss.color, dump.loss.prior, dump.loss.eik
        ))
    }

    /// Runs until `until` steps are complete (capped at `total_iters`),
    /// calling `hook` after every step.
    pub fn run_until(&mut self, until: usize, mut hook: impl FnMut(&TrainState<T>) -> Result<()>) -> Result<()> {
        let until = until.min(self.state.config.total_iters);
        while self.state.step < until {
            self.step()?;
            hook(&self.state)?;
        }
        Ok(())
    }
}

/// Weighted loss of a rendered batch; accumulates parameter gradients into
/// `grads` when given. `pixels` are `(view, pixel index)` pairs matching the
/// rays of `fwd`.
pub fn objective<T: Real>(
    scene: &Scene,
    cfg: &TrainConfig,
    field: &NeuralField<T>,
    pixels: &[(usize, usize)],
    fwd: &BatchForward<T>,
    omega: &[T],
    grads: Option<&mut [T]>,
) -> BatchLoss {
    let m = pixels.len();
    let mut targets = Vec::with_capacity(m);
    let mut priors = Vec::with_capacity(m);
    let mut pred_cam = Vec::with_capacity(m);
    let mut rotations = Vec::with_capacity(m);
    for (&(v, p), out) in pixels.iter().zip(&fwd.outputs) {
        let view = &scene.views[v];
        let (x, y) = (p % view.width, p / view.width);
        targets.push(view.rgb(x, y).map(|c| T::lit(c as f64)));
        priors.push(view.prior(x, y).map(|c| T::lit(c as f64)));
        let r = view.rotation;
        let n = r * Vector3::from(out.normal_raw.map(|c| c.as_f64()));
        pred_cam.push([T::lit(n.x), T::lit(n.y), T::lit(n.z)]);
        rotations.push(r);
    }
    let colors: Vec<[T; 3]> = fwd.outputs.iter().map(|o| o.color).collect();
    let lc = loss_color(&colors, &targets);
    let lp = loss_prior(&pred_cam, &priors, omega);
    let le = loss_eikonal(&fwd.grad);
    let (color, prior, eik) = (lc.value.as_f64(), lp.value.as_f64(), le.value.as_f64());
    let total = total_loss([cfg.lambda_color, cfg.lambda_prior, cfg.lambda_eik], color, prior, eik);
    if let Some(grads) = grads {
        let (lam_c, lam_p, lam_e) = (T::lit(cfg.lambda_color), T::lit(cfg.lambda_prior), T::lit(cfg.lambda_eik));
        let color_adj: Vec<[T; 3]> = lc.grad.iter().map(|g| g.map(|v| v * lam_c)).collect();
        let normal_adj: Vec<[T; 3]> = lp
            .grad
            .iter()
            .zip(&rotations)
            .map(|(g, r)| world_adjoint(r, g, lam_p))
            .collect();
        let eik_adj: Vec<[T; 3]> = le.grad.iter().map(|g| g.map(|v| v * lam_e)).collect();
        backward_batch(
            field,
            fwd,
            &RenderAdjoints {
                color: &color_adj,
                normal: &normal_adj,
                depth: &[],
                sample_grad: &eik_adj,
            },
            grads,
        );
    }
    BatchLoss { color, prior, eik, total }
}

/// `λ Rᵀ g`: the camera-frame adjoint mapped back to the world frame.
fn world_adjoint<T: Real>(r: &Matrix3<f64>, g: &[T; 3], lambda: T) -> [T; 3] {
    let gw = r.transpose() * Vector3::from(g.map(|v| v.as_f64()));
    [T::lit(gw.x) * lambda, T::lit(gw.y) * lambda, T::lit(gw.z) * lambda]
}

/// Trains from scratch or resumes, writing `log.csv`, periodic checkpoints
/// and `final.ckpt` into `out_dir`.
pub fn train<T: Real>(scene: &Scene, state: Option<TrainState<T>>, config: TrainConfig, out_dir: &Path) -> Result<TrainState<T>> {
    let mut trainer = match state {
        Some(s) => Trainer::resume(scene, s)?,
        None => Trainer::new(scene, config)?,
    };
    trainer.dump_dir = Some(out_dir.to_path_buf());
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let every = trainer.config().checkpoint_every;
    let total = trainer.config().total_iters;
    trainer.run_until(total, |s| {
        if every > 0 && s.step % every == 0 && s.step < total {
            s.save(&ckpt_dir.join(format!("step_{:07}.ckpt", s.step)))?;
        }
        Ok(())
    })?;
    let state = trainer.state;
    state.save(&out_dir.join("final.ckpt"))?;
    let log_path = out_dir.join("log.csv");
    fs::write(&log_path, log_csv(&state.log)).map_err(|e| Error::io(&log_path, e))?;
    Ok(state)
}

#[cfg(test)]
mod tests;
