//! Axis-aligned regions and uniform similarity transforms.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Aabb { min, max }
    }

    pub fn centered(center: [f64; 3], half: [f64; 3]) -> Self {
        Aabb {
            min: std::array::from_fn(|k| center[k] - half[k]),
            max: std::array::from_fn(|k| center[k] + half[k]),
        }
    }

    /// Box with `min > max`; contains nothing.
    pub fn empty() -> Self {
        Aabb {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|k| self.min[k] > self.max[k])
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64; 3]>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.include(*p);
        }
        b
    }

    pub fn include(&mut self, p: [f64; 3]) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.max[k] - self.min[k])
    }

    pub fn diagonal(&self) -> f64 {
        let e = self.extent();
        (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        std::array::from_fn(|i| {
            [
                if i & 1 == 0 { self.min[0] } else { self.max[0] },
                if i & 2 == 0 { self.min[1] } else { self.max[1] },
                if i & 4 == 0 { self.min[2] } else { self.max[2] },
            ]
        })
    }

    pub fn expanded(&self, margin: f64) -> Self {
        Aabb {
            min: self.min.map(|v| v - margin),
            max: self.max.map(|v| v + margin),
        }
    }

    /// Image of the box under a similarity (scale is positive, so the image
    /// is again axis aligned).
    pub fn transformed(&self, t: &Similarity) -> Self {
        Aabb {
            min: t.apply(self.min),
            max: t.apply(self.max),
        }
    }
}

/// `x ↦ scale·x + translation` with `scale > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub translation: [f64; 3],
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            scale: 1.0,
            translation: [0.0; 3],
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| self.scale * p[k] + self.translation[k])
    }

    pub fn apply_vec(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from(self.apply((*p).into()))
    }

    pub fn inverse(&self) -> Self {
        Similarity {
            scale: 1.0 / self.scale,
            translation: self.translation.map(|t| -t / self.scale),
        }
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &Similarity) -> Self {
        Similarity {
            scale: self.scale * first.scale,
            translation: self.apply(first.translation),
        }
    }

    /// Largest deviation from the identity over the unit ball.
    pub fn distance_from_identity(&self) -> f64 {
        let t = self.translation;
        (self.scale - 1.0).abs() + (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()
    }
}
