//! Closed-form signed distance fields used as oracles and for synthetic scenes.

use serde::{Deserialize, Serialize};

use crate::field::Field;
use crate::noise::ValueNoise;
use crate::scalar::{norm3, Real, V3};

/// Closed-form shapes. Negative inside solid material, positive in free space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape<T> {
    Sphere { center: V3<T>, radius: T },
    /// Half-space `n·x < offset` is solid; `normal` must be unit length.
    Plane { normal: V3<T>, offset: T },
    /// Solid axis-aligned box.
    Cuboid { center: V3<T>, half: V3<T> },
    /// Hollow axis-aligned room: free inside, solid outside the walls.
    Room { center: V3<T>, half: V3<T> },
    Union(Vec<Shape<T>>),
    /// `scale * inner((x - offset) / scale)`: the inner shape mapped by `x ↦ scale x + offset`.
    Similarity {
        inner: Box<Shape<T>>,
        scale: T,
        offset: V3<T>,
    },
}

fn sub<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cuboid_sdf<T: Real>(x: V3<T>, center: V3<T>, half: V3<T>) -> (T, V3<T>) {
    let d = sub(x, center);
    let q = [
        d[0].abs() - half[0],
        d[1].abs() - half[1],
        d[2].abs() - half[2],
    ];
    let sign = |v: T| if v < T::zero() { -T::one() } else { T::one() };
    let outer = q.map(|v| v.max(T::zero()));
    let outer_len = norm3(outer);
    let inner = q[0].max(q[1]).max(q[2]);
    if inner > T::zero() {
        let g = [
            sign(d[0]) * outer[0] / outer_len,
            sign(d[1]) * outer[1] / outer_len,
            sign(d[2]) * outer[2] / outer_len,
        ];
        (outer_len, g)
    } else {
        let k = if q[0] >= q[1] && q[0] >= q[2] {
            0
        } else if q[1] >= q[2] {
            1
        } else {
            2
        };
        let mut g = [T::zero(); 3];
        g[k] = sign(d[k]);
        (inner, g)
    }
}

impl<T: Real> Shape<T> {
    /// Distance and exact gradient.
    pub fn eval(&self, x: V3<T>) -> (T, V3<T>) {
        match self {
            Shape::Sphere { center, radius } => {
                let d = sub(x, *center);
                let len = norm3(d);
                let g = if len > T::zero() {
                    d.map(|v| v / len)
                } else {
                    [T::zero(), T::zero(), T::one()]
                };
                (len - *radius, g)
            }
            Shape::Plane { normal, offset } => {
                (crate::scalar::dot3(*normal, x) - *offset, *normal)
            }
            Shape::Cuboid { center, half } => cuboid_sdf(x, *center, *half),
            Shape::Room { center, half } => {
                let (v, g) = cuboid_sdf(x, *center, *half);
                (-v, g.map(|c| -c))
            }
            Shape::Union(parts) => {
                let mut best: Option<(T, V3<T>)> = None;
                for p in parts {
                    let cur = p.eval(x);
                    if best.is_none_or(|b| cur.0 < b.0) {
                        best = Some(cur);
                    }
                }
                best.unwrap_or((T::infinity(), [T::zero(); 3]))
            }
            Shape::Similarity {
                inner,
                scale,
                offset,
            } => {
                let local = sub(x, *offset).map(|v| v / *scale);
                let (v, g) = inner.eval(local);
                (v * *scale, g)
            }
        }
    }

    /// Wraps the shape so that it follows the map `x ↦ scale x + offset`.
    pub fn transformed(self, scale: T, offset: V3<T>) -> Shape<T> {
        Shape::Similarity {
            inner: Box::new(self),
            scale,
            offset,
        }
    }

    pub fn cast<U: Real>(&self) -> Shape<U> {
        let c = |v: T| U::lit(v.as_f64());
        let c3 = |v: V3<T>| v.map(c);
        match self {
            Shape::Sphere { center, radius } => Shape::Sphere {
                center: c3(*center),
                radius: c(*radius),
            },
            Shape::Plane { normal, offset } => Shape::Plane {
                normal: c3(*normal),
                offset: c(*offset),
            },
            Shape::Cuboid { center, half } => Shape::Cuboid {
                center: c3(*center),
                half: c3(*half),
            },
            Shape::Room { center, half } => Shape::Room {
                center: c3(*center),
                half: c3(*half),
            },
            Shape::Union(parts) => Shape::Union(parts.iter().map(|p| p.cast()).collect()),
            Shape::Similarity {
                inner,
                scale,
                offset,
            } => Shape::Similarity {
                inner: Box::new(inner.cast()),
                scale: c(*scale),
                offset: c3(*offset),
            },
        }
    }
}

impl Shape<f64> {
    /// First distance `t > t_min` along `origin + t·dir` (unit `dir`) at
    /// which the ray enters solid material, assuming it starts in free space.
    pub fn intersect(&self, origin: V3<f64>, dir: V3<f64>, t_min: f64) -> Option<f64> {
        let after = |t: f64| (t > t_min).then_some(t);
        match self {
            Shape::Sphere { center, radius } => {
                let oc = sub(origin, *center);
                let b = crate::scalar::dot3(oc, dir);
                let c = crate::scalar::dot3(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let root = disc.sqrt();
                after(-b - root).or_else(|| after(-b + root))
            }
            Shape::Plane { normal, offset } => {
                let denom = crate::scalar::dot3(*normal, dir);
                if denom >= 0.0 {
                    return None;
                }
                after((offset - crate::scalar::dot3(*normal, origin)) / denom)
            }
            Shape::Cuboid { center, half } => {
                let (enter, exit) = slabs(origin, dir, *center, *half);
                (enter <= exit).then_some(enter).and_then(after)
            }
            Shape::Room { center, half } => {
                let (enter, exit) = slabs(origin, dir, *center, *half);
                (enter <= exit).then_some(exit).and_then(after)
            }
            Shape::Union(parts) => parts
                .iter()
                .filter_map(|p| p.intersect(origin, dir, t_min))
                .min_by(f64::total_cmp),
            Shape::Similarity {
                inner,
                scale,
                offset,
            } => {
                let local = sub(origin, *offset).map(|v| v / scale);
                inner
                    .intersect(local, dir, t_min / scale)
                    .map(|t| t * scale)
            }
        }
    }
}

/// Entry and exit distances of a line through an axis-aligned box.
fn slabs(origin: V3<f64>, dir: V3<f64>, center: V3<f64>, half: V3<f64>) -> (f64, f64) {
    let mut enter = f64::NEG_INFINITY;
    let mut exit = f64::INFINITY;
    for k in 0..3 {
        let lo = center[k] - half[k];
        let hi = center[k] + half[k];
        if dir[k] == 0.0 {
            if origin[k] < lo || origin[k] > hi {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            continue;
        }
        let a = (lo - origin[k]) / dir[k];
        let b = (hi - origin[k]) / dir[k];
        enter = enter.max(a.min(b));
        exit = exit.min(a.max(b));
    }
    (enter, exit)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Albedo {
    Constant([f64; 3]),
    /// Solid value-noise texture with the given base frequency.
    Noise { frequency: f64, seed: u64 },
}

/// Analytic stand-in for a trained field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticField<T> {
    pub shape: Shape<T>,
    pub albedo: Albedo,
}

impl<T: Real> AnalyticField<T> {
    pub fn new(shape: Shape<T>) -> Self {
        AnalyticField {
            shape,
            albedo: Albedo::Constant([0.5; 3]),
        }
    }

    pub fn with_albedo(mut self, albedo: Albedo) -> Self {
        self.albedo = albedo;
        self
    }

    pub fn sphere(center: V3<T>, radius: T) -> Self {
        Self::new(Shape::Sphere { center, radius })
    }

    pub fn plane(normal: V3<T>, offset: T) -> Self {
        Self::new(Shape::Plane { normal, offset })
    }

    /// Same field with every distance multiplied by `factor` (no longer a
    /// metric SDF unless `factor == 1`).
    pub fn scaled_values(self, factor: T) -> ScaledField<T> {
        ScaledField {
            inner: self,
            factor,
        }
    }
}

impl<T: Real> Field<T> for AnalyticField<T> {
    fn sdf(&self, x: V3<T>) -> T {
        self.shape.eval(x).0
    }

    fn sdf_gradient(&self, x: V3<T>) -> V3<T> {
        self.shape.eval(x).1
    }

    fn color(&self, x: V3<T>, _v: V3<T>) -> V3<T> {
        match &self.albedo {
            Albedo::Constant(c) => c.map(T::lit),
            Albedo::Noise { frequency, seed } => {
                let noise = ValueNoise::new(*seed);
                let p = x.map(|v| v.as_f64() * frequency);
                let g = noise.fbm(p, 3);
                [T::lit(0.2 + 0.6 * g), T::lit(0.25 + 0.5 * g), T::lit(0.3 + 0.4 * g)]
            }
        }
    }
}

/// Analytic field with distances multiplied by a constant.
#[derive(Clone, Debug)]
pub struct ScaledField<T> {
    pub inner: AnalyticField<T>,
    pub factor: T,
}

impl<T: Real> Field<T> for ScaledField<T> {
    fn sdf(&self, x: V3<T>) -> T {
        self.inner.sdf(x) * self.factor
    }

    fn sdf_gradient(&self, x: V3<T>) -> V3<T> {
        self.inner.sdf_gradient(x).map(|g| g * self.factor)
    }

    fn color(&self, x: V3<T>, v: V3<T>) -> V3<T> {
        self.inner.color(x, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_sphere_outside_point() {
        let f = AnalyticField::sphere([0.0, 0.0, 0.0], 1.0);
        assert_relative_eq!(f.sdf([2.0, 0.0, 0.0]), 1.0);
        assert_eq!(f.sdf_gradient([0.0, 0.0, 0.7]), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn plane_below() {
        let f = AnalyticField::plane([0.0, 0.0, 1.0], 0.0);
        assert_relative_eq!(f.sdf([0.4, -2.0, -0.3]), -0.3);
    }

    #[test]
    fn cuboid_center_is_negative_half_extent() {
        let s = Shape::Cuboid {
            center: [1.0, 0.0, 0.0],
            half: [2.0, 1.4, 2.0],
        };
        assert_relative_eq!(s.eval([1.0, 0.0, 0.0]).0, -1.4);
    }

    #[test]
    fn room_center_is_nearest_wall_distance() {
        let s = Shape::Room {
            center: [0.0; 3],
            half: [2.0, 1.4, 2.0],
        };
        let (v, g) = s.eval([0.0, 0.3, 0.0]);
        assert_relative_eq!(v, 1.1);
        assert_eq!(g, [0.0, -1.0, 0.0]);
    }

    #[test]
    fn constant_gray_color() {
        let f = AnalyticField::sphere([0.0; 3], 1.0);
        assert_eq!(f.color([0.3, 0.1, 0.0], [0.0, 0.0, 1.0]), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn similarity_scales_distances() {
        let s = Shape::Sphere {
            center: [0.0; 3],
            radius: 1.0,
        }
        .transformed(0.5, [1.0, 0.0, 0.0]);
        assert_relative_eq!(s.eval([1.0, 0.0, 0.0]).0, -0.5);
        assert_relative_eq!(s.eval([2.0, 0.0, 0.0]).0, 0.5);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape: Shape<f64> = Shape::Union(vec![
            Shape::Room {
                center: [0.0; 3],
                half: [0.6, 0.45, 0.6],
            },
            Shape::Cuboid {
                center: [0.2, 0.0, 0.1],
                half: [0.05, 0.5, 0.05],
            },
        ]);
        let h = 1e-6;
        for p in [[0.1, 0.2, -0.3], [0.3, -0.1, 0.25], [0.21, 0.3, 0.0], [0.0, 0.0, 0.0]] {
            let (_, g) = shape.eval(p);
            for k in 0..3 {
                let mut a = p;
                let mut b = p;
                a[k] += h;
                b[k] -= h;
                let fd = (shape.eval(a).0 - shape.eval(b).0) / (2.0 * h);
                assert_relative_eq!(g[k], fd, epsilon = 1e-6);
            }
            assert_relative_eq!(norm3(g), 1.0, epsilon = 1e-12);
        }
    }
}
