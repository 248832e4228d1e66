use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, SphereSide};
use crate::geocheck::CheckConfig;
use crate::kv::{parse_list, KeyValues};
use crate::render::SamplingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Full,
    Tiny,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "tiny" => Ok(Preset::Tiny),
            other => Err(Error::Config(format!("unknown preset '{other}' (full | tiny)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Full => "full",
            Preset::Tiny => "tiny",
        })
    }
}

fn parse_side(s: &str) -> Result<SphereSide> {
    match s {
        "inside" => Ok(SphereSide::SolidInside),
        "outside" => Ok(SphereSide::SolidOutside),
        other => Err(Error::Config(format!("unknown sphere_side '{other}' (inside | outside)"))),
    }
}

fn side_name(s: SphereSide) -> &'static str {
    match s {
        SphereSide::SolidInside => "inside",
        SphereSide::SolidOutside => "outside",
    }
}

fn usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    parse_list(value).map_err(|e| Error::Config(format!("key '{key}': cannot parse '{value}': {e}")))
}

/// Optimization settings. Every field maps to one flat config key.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub field: FieldConfig,
    pub sampling: SamplingConfig,
    /// Rays per batch (`m`).
    pub rays_per_batch: usize,
    /// Iterations with Ω ≡ 1 before the geometric check starts.
    pub phase_one_iters: usize,
    pub total_iters: usize,
    pub lambda_color: f64,
    pub lambda_prior: f64,
    pub lambda_eik: f64,
    pub lr: f64,
    pub lr_warmup: usize,
    /// Final learning rate as a fraction of `lr` after cosine decay.
    pub lr_min_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub check: CheckConfig,
    /// When false the prior is never checked (Ω ≡ 1 in both phases).
    pub geocheck: bool,
    pub seed: u64,
    pub sphere_side: SphereSide,
    pub sphere_radius: f64,
    /// Views held out from both sampling and the check.
    pub exclude_views: Vec<usize>,
    /// Checkpoint period in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

pub(crate) const CONFIG_KEYS: [&str; 37] = [
    "preset",
    "rays_per_batch",
    "phase_one_iters",
    "total_iters",
    "lambda_color",
    "lambda_prior",
    "lambda_eik",
    "lr",
    "lr_warmup",
    "lr_min_factor",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "patch_half",
    "neighbors",
    "eps_ratio",
    "std_floor",
    "geocheck",
    "seed",
    "sphere_side",
    "sphere_radius",
    "exclude_views",
    "checkpoint_every",
    "n_coarse",
    "n_upsample_rounds",
    "n_importance",
    "upsample_base_sharpness",
    "pos_octaves",
    "dir_octaves",
    "geo_width",
    "geo_layers",
    "geo_skips",
    "feature_dim",
    "color_width",
    "color_layers",
    "softplus_beta",
    "init_sharpness_param",
];

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Full => TrainConfig {
                preset,
                field: FieldConfig::full(),
                sampling: SamplingConfig::full(),
                rays_per_batch: 512,
                phase_one_iters: 60_000,
                total_iters: 160_000,
                lambda_color: 1.0,
                lambda_prior: 1.0,
                lambda_eik: 0.1,
                lr: 5e-4,
                lr_warmup: 5_000,
                lr_min_factor: 0.05,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                adam_eps: 1e-8,
                check: CheckConfig::default(),
                geocheck: true,
                seed: 0,
                sphere_side: SphereSide::SolidOutside,
                sphere_radius: 0.9,
                exclude_views: Vec::new(),
                checkpoint_every: 10_000,
            },
            Preset::Tiny => TrainConfig {
                preset,
                field: FieldConfig::tiny(),
                sampling: SamplingConfig::tiny(),
                rays_per_batch: 256,
                phase_one_iters: 6_000,
                total_iters: 10_000,
                lr: 1e-3,
                lr_warmup: 200,
                check: CheckConfig {
                    patch_half: 3,
                    ..CheckConfig::default()
                },
                checkpoint_every: 2_000,
                ..Self::preset(Preset::Full)
            },
        }
    }

    pub fn phase_two_iters(&self) -> usize {
        self.total_iters.saturating_sub(self.phase_one_iters)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.field.validate()?;
        self.check.validate()?;
        if self.rays_per_batch == 0 || self.sampling.n_coarse < 2 {
            return bad("rays_per_batch must be ≥ 1 and n_coarse ≥ 2".into());
        }
        if self.phase_one_iters >= self.total_iters {
            return bad(format!(
                "phase_one_iters ({}) must be below total_iters ({})",
                self.phase_one_iters, self.total_iters
            ));
        }
        for (name, v) in [
            ("lambda_color", self.lambda_color),
            ("lambda_prior", self.lambda_prior),
            ("lambda_eik", self.lambda_eik),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value ≥ 0, got {v}"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lr_min_factor) {
            return bad(format!("lr_min_factor must be in [0, 1], got {}", self.lr_min_factor));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must be in [0, 1) and eps positive".into());
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius < 1.0) {
            return bad(format!("sphere_radius must be in (0, 1), got {}", self.sphere_radius));
        }
        Ok(())
    }

    /// Preset chosen by the `preset` key (default full) with every other key
    /// applied on top.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&CONFIG_KEYS)?;
        let preset = match kv.raw("preset") {
            Some(p) => p.parse()?,
            None => Preset::Full,
        };
        let mut c = Self::preset(preset);
        kv.read_into("rays_per_batch", &mut c.rays_per_batch)?;
        kv.read_into("phase_one_iters", &mut c.phase_one_iters)?;
        kv.read_into("total_iters", &mut c.total_iters)?;
        kv.read_into("lambda_color", &mut c.lambda_color)?;
        kv.read_into("lambda_prior", &mut c.lambda_prior)?;
        kv.read_into("lambda_eik", &mut c.lambda_eik)?;
        kv.read_into("lr", &mut c.lr)?;
        kv.read_into("lr_warmup", &mut c.lr_warmup)?;
        kv.read_into("lr_min_factor", &mut c.lr_min_factor)?;
        kv.read_into("adam_beta1", &mut c.adam_beta1)?;
        kv.read_into("adam_beta2", &mut c.adam_beta2)?;
        kv.read_into("adam_eps", &mut c.adam_eps)?;
        kv.read_into("patch_half", &mut c.check.patch_half)?;
        kv.read_into("neighbors", &mut c.check.neighbors)?;
        kv.read_into("eps_ratio", &mut c.check.eps_ratio)?;
        kv.read_into("std_floor", &mut c.check.std_floor)?;
        kv.read_into("geocheck", &mut c.geocheck)?;
        kv.read_into("seed", &mut c.seed)?;
        if let Some(s) = kv.raw("sphere_side") {
            c.sphere_side = parse_side(s)?;
        }
        kv.read_into("sphere_radius", &mut c.sphere_radius)?;
        if let Some(s) = kv.raw("exclude_views") {
            c.exclude_views = usize_list("exclude_views", s)?;
        }
        kv.read_into("checkpoint_every", &mut c.checkpoint_every)?;
        kv.read_into("n_coarse", &mut c.sampling.n_coarse)?;
        kv.read_into("n_upsample_rounds", &mut c.sampling.n_upsample_rounds)?;
        kv.read_into("n_importance", &mut c.sampling.n_importance)?;
        kv.read_into("upsample_base_sharpness", &mut c.sampling.upsample_base_sharpness)?;
        kv.read_into("pos_octaves", &mut c.field.pos_octaves)?;
        kv.read_into("dir_octaves", &mut c.field.dir_octaves)?;
        kv.read_into("geo_width", &mut c.field.geo_width)?;
        kv.read_into("geo_layers", &mut c.field.geo_layers)?;
        if let Some(s) = kv.raw("geo_skips") {
            c.field.geo_skips = usize_list("geo_skips", s)?;
        }
        kv.read_into("feature_dim", &mut c.field.feature_dim)?;
        kv.read_into("color_width", &mut c.field.color_width)?;
        kv.read_into("color_layers", &mut c.field.color_layers)?;
        kv.read_into("softplus_beta", &mut c.field.softplus_beta)?;
        kv.read_into("init_sharpness_param", &mut c.field.init_sharpness_param)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KeyValues {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut kv = KeyValues::default();
        kv.set("preset", self.preset);
        kv.set("rays_per_batch", self.rays_per_batch);
        kv.set("phase_one_iters", self.phase_one_iters);
        kv.set("total_iters", self.total_iters);
        kv.set("lambda_color", self.lambda_color);
        kv.set("lambda_prior", self.lambda_prior);
        kv.set("lambda_eik", self.lambda_eik);
        kv.set("lr", self.lr);
        kv.set("lr_warmup", self.lr_warmup);
        kv.set("lr_min_factor", self.lr_min_factor);
        kv.set("adam_beta1", self.adam_beta1);
        kv.set("adam_beta2", self.adam_beta2);
        kv.set("adam_eps", self.adam_eps);
        kv.set("patch_half", self.check.patch_half);
        kv.set("neighbors", self.check.neighbors);
        kv.set("eps_ratio", self.check.eps_ratio);
        kv.set("std_floor", self.check.std_floor);
        kv.set("geocheck", self.geocheck);
        kv.set("seed", self.seed);
        kv.set("sphere_side", side_name(self.sphere_side));
        kv.set("sphere_radius", self.sphere_radius);
        kv.set("exclude_views", list(&self.exclude_views));
        kv.set("checkpoint_every", self.checkpoint_every);
        kv.set("n_coarse", self.sampling.n_coarse);
        kv.set("n_upsample_rounds", self.sampling.n_upsample_rounds);
        kv.set("n_importance", self.sampling.n_importance);
        kv.set("upsample_base_sharpness", self.sampling.upsample_base_sharpness);
        kv.set("pos_octaves", self.field.pos_octaves);
        kv.set("dir_octaves", self.field.dir_octaves);
        kv.set("geo_width", self.field.geo_width);
        kv.set("geo_layers", self.field.geo_layers);
        kv.set("geo_skips", list(&self.field.geo_skips));
        kv.set("feature_dim", self.field.feature_dim);
        kv.set("color_width", self.field.color_width);
        kv.set("color_layers", self.field.color_layers);
        kv.set("softplus_beta", self.field.softplus_beta);
        kv.set("init_sharpness_param", self.field.init_sharpness_param);
        kv
    }

    /// Learning rate at `step`: linear warm-up, then cosine decay to
    /// `lr · lr_min_factor` at `total_iters`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if step < self.lr_warmup {
            return self.lr * (step + 1) as f64 / self.lr_warmup as f64;
        }
        let span = self.total_iters.saturating_sub(self.lr_warmup).max(1);
        let progress = ((step - self.lr_warmup) as f64 / span as f64).min(1.0);
        let a = self.lr_min_factor;
        self.lr * (a + (1.0 - a) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}
