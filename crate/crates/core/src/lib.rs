//! Neural signed-distance surface reconstruction from posed images, guided by
//! per-pixel normal priors that are gated by a multi-view photometric check.
//!
//! The numeric core (field, renderer, losses) is generic over [`Real`]; the
//! aliases below fix the scalar type for the common cases.

pub mod camera;
pub mod checkpoint;
pub mod error;
pub mod field;
pub mod geocheck;
pub mod kv;
pub mod mesh;
pub mod metrics;
pub mod noise;
pub mod render;
pub mod scene;
pub mod seed;
pub mod scalar;
pub mod train;
pub mod transform;

pub use camera::{CameraView, Ray};
pub use error::{Error, Result};
pub use field::{AnalyticField, Field, FieldConfig, NeuralField, SphereSide};
pub use mesh::TriMesh;
pub use scene::Scene;
pub use train::{Preset, SceneFrame, TrainConfig, TrainState, Trainer};
pub use transform::{Aabb, Similarity};
pub use scalar::Real;

pub type NeuralField32 = NeuralField<f32>;
pub type NeuralField64 = NeuralField<f64>;
pub type Ray64 = Ray<f64>;
