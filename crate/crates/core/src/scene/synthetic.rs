//! Analytically rendered scenes with exact ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{label, Scene};
use crate::camera::{look_at, CameraView};
use crate::error::{Error, Result};
use crate::field::{Albedo, AnalyticField, Shape};
use crate::kv::KeyValues;
use crate::mesh::{box_face, TriMesh};
use crate::noise::ValueNoise;
use crate::transform::Aabb;

/// Half extents of the box room (meters, z up).
pub const ROOM_HALF: [f64; 3] = [2.0, 2.0, 1.3];
pub const PILLAR_CENTER: [f64; 3] = [1.3, 0.6, 0.0];
/// The pillar spans floor to ceiling.
pub const PILLAR_HALF: [f64; 3] = [0.12, 0.12, 1.3];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Plane,
    BoxRoom,
    BoxRoomPillar,
}

impl FromStr for Primitive {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Primitive::Plane),
            "box_room" => Ok(Primitive::BoxRoom),
            "box_room_pillar" => Ok(Primitive::BoxRoomPillar),
            other => Err(Error::Validation(format!(
                "unknown primitive '{other}' (expected plane, box_room or box_room_pillar)"
            ))),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Primitive::Plane => "plane",
            Primitive::BoxRoom => "box_room",
            Primitive::BoxRoomPillar => "box_room_pillar",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    /// Value noise on every surface.
    Noise,
    /// Noise on walls and pillar, uniform albedo on floor and ceiling.
    FlatFloorCeiling,
    /// Uniform albedo per surface class.
    Flat,
}

impl FromStr for Texture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(Texture::Noise),
            "flat_floor_ceiling" => Ok(Texture::FlatFloorCeiling),
            "flat" => Ok(Texture::Flat),
            other => Err(Error::Validation(format!(
                "unknown texture '{other}' (expected noise, flat_floor_ceiling or flat)"
            ))),
        }
    }
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Texture::Noise => "noise",
            Texture::FlatFloorCeiling => "flat_floor_ceiling",
            Texture::Flat => "flat",
        })
    }
}

/// Description of a synthetic scene. Text form is a flat key-value file
/// with the field names as keys.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub primitive: Primitive,
    pub texture: Texture,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in units of the image width.
    pub focal: f64,
    pub seed: u64,
    /// Base texture frequency in cycles per meter.
    pub texture_frequency: f64,
    /// Strength of a view-dependent highlight; 0 gives Lambertian images.
    pub specular: f64,
    /// Mean angle of the smooth error added to every prior normal.
    pub prior_error_deg: f64,
    /// Rotation of prior normals on the pillar about the vertical axis.
    pub pillar_rotation_deg: f64,
    /// Box-blur radius (pixels) of prior normals around the pillar.
    pub pillar_blur: usize,
    /// Sub-samples per pixel axis for the color image (box filter).
    pub supersample: usize,
}

const SPEC_KEYS: [&str; 13] = [
    "supersample",
    "primitive",
    "texture",
    "views",
    "width",
    "height",
    "focal",
    "seed",
    "texture_frequency",
    "specular",
    "prior_error_deg",
    "pillar_rotation_deg",
    "pillar_blur",
];

impl SyntheticSpec {
    pub fn new(primitive: Primitive) -> Self {
        let pillar = primitive == Primitive::BoxRoomPillar;
        SyntheticSpec {
            primitive,
            texture: if pillar { Texture::FlatFloorCeiling } else { Texture::Noise },
            views: if primitive == Primitive::Plane { 8 } else { 24 },
            width: 80,
            height: 60,
            focal: 0.7,
            seed: 0,
            texture_frequency: 4.0,
            specular: 0.0,
            prior_error_deg: if pillar { 7.0 } else { 0.0 },
            pillar_rotation_deg: if pillar { 40.0 } else { 0.0 },
            pillar_blur: if pillar { 2 } else { 0 },
            supersample: 3,
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&SPEC_KEYS)?;
        let primitive: Primitive = kv
            .raw("primitive")
            .ok_or_else(|| Error::Config("synthetic spec needs 'primitive'".into()))?
            .parse()?;
        let mut s = SyntheticSpec::new(primitive);
        if let Some(t) = kv.raw("texture") {
            s.texture = t.parse()?;
        }
        kv.read_into("views", &mut s.views)?;
        kv.read_into("width", &mut s.width)?;
        kv.read_into("height", &mut s.height)?;
        kv.read_into("focal", &mut s.focal)?;
        kv.read_into("seed", &mut s.seed)?;
        kv.read_into("texture_frequency", &mut s.texture_frequency)?;
        kv.read_into("specular", &mut s.specular)?;
        kv.read_into("prior_error_deg", &mut s.prior_error_deg)?;
        kv.read_into("pillar_rotation_deg", &mut s.pillar_rotation_deg)?;
        kv.read_into("pillar_blur", &mut s.pillar_blur)?;
        kv.read_into("supersample", &mut s.supersample)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("primitive", self.primitive);
        kv.set("texture", self.texture);
        kv.set("views", self.views);
        kv.set("width", self.width);
        kv.set("height", self.height);
        kv.set("focal", self.focal);
        kv.set("seed", self.seed);
        kv.set("texture_frequency", self.texture_frequency);
        kv.set("specular", self.specular);
        kv.set("prior_error_deg", self.prior_error_deg);
        kv.set("pillar_rotation_deg", self.pillar_rotation_deg);
        kv.set("pillar_blur", self.pillar_blur);
        kv.set("supersample", self.supersample);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.views < 2 {
            return bad(format!("synthetic scene needs at least 2 views, got {}", self.views));
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("image size {}x{} is too small", self.width, self.height));
        }
        if self.supersample == 0 || self.supersample > 16 {
            return bad(format!("supersample must be in 1..=16, got {}", self.supersample));
        }
        if !(self.focal > 0.0 && self.focal.is_finite()) {
            return bad(format!("focal must be positive, got {}", self.focal));
        }
        for (name, v) in [
            ("texture_frequency", self.texture_frequency),
            ("specular", self.specular),
            ("prior_error_deg", self.prior_error_deg),
            ("pillar_rotation_deg", self.pillar_rotation_deg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

pub fn room_region() -> Aabb {
    Aabb::centered([0.0; 3], ROOM_HALF)
}

pub fn pillar_box() -> Aabb {
    Aabb::centered(PILLAR_CENTER, PILLAR_HALF)
}

fn pillar_shape() -> Shape<f64> {
    Shape::Cuboid {
        center: PILLAR_CENTER,
        half: PILLAR_HALF,
    }
}

fn scene_shape(p: Primitive) -> Shape<f64> {
    let room = Shape::Room {
        center: [0.0; 3],
        half: ROOM_HALF,
    };
    match p {
        Primitive::Plane => Shape::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        },
        Primitive::BoxRoom => room,
        Primitive::BoxRoomPillar => Shape::Union(vec![room, pillar_shape()]),
    }
}

fn plane_region() -> Aabb {
    Aabb::new([-1.5, -1.5, -0.05], [1.5, 1.5, 0.05])
}

/// Ground-truth surface: room faces wound toward the interior, pillar sides
/// (its caps touch floor and ceiling and are not part of the surface).
fn gt_mesh(p: Primitive) -> TriMesh {
    match p {
        Primitive::Plane => box_face(&plane_region(), 2, true, 16, false)
            .transformed(&crate::transform::Similarity {
                scale: 1.0,
                translation: [0.0, 0.0, -0.05],
            }),
        Primitive::BoxRoom => TriMesh::cuboid(&room_region(), 16, true),
        Primitive::BoxRoomPillar => {
            let mut m = TriMesh::cuboid(&room_region(), 16, true);
            for axis in 0..2 {
                for side in [false, true] {
                    m.append(&box_face(&pillar_box(), axis, side, 8, false));
                }
            }
            m
        }
    }
}

/// World-to-camera poses.
fn camera_poses(spec: &SyntheticSpec) -> Vec<(Matrix3<f64>, Vector3<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xca3e_5a5e);
    let n = spec.views;
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let theta = 2.0 * PI * i as f64 / n as f64;
        match spec.primitive {
            Primitive::Plane => {
                if i == 0 {
                    // Fronto-parallel view from straight above.
                    poses.push(look_at(
                        Vector3::new(0.0, 0.0, 1.3),
                        Vector3::zeros(),
                        Vector3::y(),
                    ));
                    continue;
                }
                let eye = Vector3::new(0.6 * theta.cos(), 0.6 * theta.sin(), 1.2 + 0.1 * (i % 2) as f64);
                let target = Vector3::new(-0.2 * theta.cos(), -0.2 * theta.sin(), 0.0);
                poses.push(look_at(eye, target, Vector3::z()));
            }
            Primitive::BoxRoom | Primitive::BoxRoomPillar => {
                let radius = 1.15 + rng.random_range(-0.05..0.05);
                let high = i % 2 == 0;
                let z = if high { 0.3 } else { -0.3 };
                let eye = Vector3::new(radius * theta.cos(), radius * theta.sin(), z);
                let yaw = if (i / 2) % 2 == 0 { 20.0f64 } else { -20.0 } + rng.random_range(-3.0..3.0);
                let look = theta + PI + yaw.to_radians();
                let pitch: f64 = if high { -12.0 } else { 12.0 };
                let dir = Vector3::new(
                    look.cos() * pitch.to_radians().cos(),
                    look.sin() * pitch.to_radians().cos(),
                    pitch.to_radians().sin(),
                );
                poses.push(look_at(eye, eye + dir, Vector3::z()));
            }
        }
    }
    poses
}

struct Surface {
    class: u8,
    albedo: [f64; 3],
}

fn stretch(g: f64) -> f64 {
    ((g - 0.5) * 2.0 + 0.5).clamp(0.0, 1.0)
}

fn surface_at(spec: &SyntheticSpec, p: [f64; 3], n: [f64; 3], on_pillar: bool, noise: &[ValueNoise; 3]) -> Surface {
    let class = if spec.primitive == Primitive::Plane {
        label::PLANE
    } else if on_pillar {
        label::PILLAR
    } else if n[2] > 0.5 {
        label::FLOOR
    } else if n[2] < -0.5 {
        label::CEILING
    } else {
        label::WALL
    };
    let textured = match spec.texture {
        Texture::Noise => true,
        Texture::Flat => false,
        Texture::FlatFloorCeiling => matches!(class, label::WALL | label::PILLAR | label::PLANE),
    };
    let q = p.map(|v| v * spec.texture_frequency);
    let albedo = match (class, textured) {
        (label::PILLAR, true) => {
            let g = stretch(noise[1].fbm(q.map(|v| v * 2.0), 4));
            [0.15 + 0.7 * g, 0.3 + 0.45 * g, 0.35 + 0.3 * g]
        }
        (label::PILLAR, false) => [0.3, 0.5, 0.55],
        (label::FLOOR | label::CEILING, true) => {
            let g = stretch(noise[2].fbm(q, 4));
            [0.3 + 0.5 * g, 0.28 + 0.4 * g, 0.2 + 0.35 * g]
        }
        (label::FLOOR, false) => [0.55, 0.45, 0.35],
        (label::CEILING, false) => [0.85, 0.85, 0.8],
        (_, true) => {
            let g = stretch(noise[0].fbm(q, 4));
            [0.2 + 0.65 * g, 0.22 + 0.55 * g, 0.25 + 0.45 * g]
        }
        (_, false) => [0.75, 0.72, 0.68],
    };
    Surface { class, albedo }
}

const LIGHT: [f64; 3] = [0.267_261_241_912_424_4, -0.534_522_483_824_848_8, 0.801_783_725_737_273_2];

fn shade(spec: &SyntheticSpec, albedo: [f64; 3], n: [f64; 3], dir: [f64; 3]) -> [f32; 3] {
    let lambert = 0.7 + 0.3 * crate::scalar::dot3(n, LIGHT).max(0.0);
    let facing = (-crate::scalar::dot3(n, dir)).max(0.0);
    let highlight = spec.specular * facing.powi(24);
    albedo.map(|a| (a * lambert + highlight).clamp(0.0, 1.0) as f32)
}

/// Box-filtered color over a `supersample²` grid of rays inside the pixel.
#[allow(clippy::too_many_arguments)]
fn pixel_color(
    spec: &SyntheticSpec,
    shape: &Shape<f64>,
    pillar: &Shape<f64>,
    view: &CameraView,
    center: [f64; 3],
    x: usize,
    y: usize,
    noise: &[ValueNoise; 3],
) -> [f32; 3] {
    let s = spec.supersample;
    let mut acc = [0.0f64; 3];
    for sy in 0..s {
        for sx in 0..s {
            let ox = (sx as f64 + 0.5) / s as f64 - 0.5;
            let oy = (sy as f64 + 0.5) / s as f64 - 0.5;
            let dir: [f64; 3] =
                (view.rotation.transpose() * view.camera_direction(x as f64 + ox, y as f64 + oy)).into();
            let Some(dist) = shape.intersect(center, dir, 1e-9) else {
                continue;
            };
            let p: [f64; 3] = std::array::from_fn(|c| center[c] + dist * dir[c]);
            let n = shape.eval(p).1;
            let on_pillar = spec.primitive == Primitive::BoxRoomPillar && pillar.eval(p).0.abs() < 1e-7;
            let surf = surface_at(spec, p, n, on_pillar, noise);
            let rgb = shade(spec, surf.albedo, n, dir);
            for c in 0..3 {
                acc[c] += rgb[c] as f64;
            }
        }
    }
    acc.map(|v| (v / (s * s) as f64) as f32)
}

/// Rotates unit `n` by `angle` toward the tangent direction of `axis_hint`.
fn tilt(n: Vector3<f64>, axis_hint: Vector3<f64>, angle: f64) -> Vector3<f64> {
    let u = axis_hint - n * n.dot(&axis_hint);
    let len = u.norm();
    if len < 1e-9 || angle == 0.0 {
        return n;
    }
    (n * angle.cos() + u / len * angle.sin()).normalize()
}

/// Renders a scene by exact ray casting against closed-form geometry.
pub fn make_synthetic_scene(spec: &SyntheticSpec) -> Result<Scene> {
    spec.validate()?;
    let shape = scene_shape(spec.primitive);
    let pillar = pillar_shape();
    let noise = [
        ValueNoise::new(spec.seed.wrapping_add(1)),
        ValueNoise::new(spec.seed.wrapping_add(2)),
        ValueNoise::new(spec.seed.wrapping_add(3)),
    ];
    let (w, h) = (spec.width, spec.height);
    let f = spec.focal * w as f64;
    let k = Matrix3::new(f, 0.0, (w as f64 - 1.0) / 2.0, 0.0, f, (h as f64 - 1.0) / 2.0, 0.0, 0.0, 1.0);
    let mut views = Vec::with_capacity(spec.views);
    for (vi, (r, t)) in camera_poses(spec).into_iter().enumerate() {
        let center: [f64; 3] = (-(r.transpose() * t)).into();
        let mut image = vec![0.0f32; w * h * 3];
        let mut normals = vec![0.0f32; w * h * 3];
        let mut depth = vec![0.0f32; w * h];
        let mut labels = vec![label::NONE; w * h];
        // Unit placeholder so construction validates; replaced below.
        let probe = CameraView::new(
            format!("{vi:06}"),
            w,
            h,
            k,
            r,
            t,
            vec![0.0; w * h * 3],
            vec![0.0; w * h * 3],
        )?;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let dir: [f64; 3] = (r.transpose() * probe.camera_direction(x as f64, y as f64)).into();
                let Some(dist) = shape.intersect(center, dir, 1e-9) else {
                    continue;
                };
                let p: [f64; 3] = std::array::from_fn(|c| center[c] + dist * dir[c]);
                let n = shape.eval(p).1;
                let on_pillar = spec.primitive == Primitive::BoxRoomPillar && pillar.eval(p).0.abs() < 1e-7;
                let surf = surface_at(spec, p, n, on_pillar, &noise);
                let rgb = pixel_color(spec, &shape, &pillar, &probe, center, x, y, &noise);
                image[3 * i..3 * i + 3].copy_from_slice(&rgb);
                let nc = r * Vector3::from(n);
                normals[3 * i..3 * i + 3].copy_from_slice(&[nc.x as f32, nc.y as f32, nc.z as f32]);
                depth[i] = dist as f32;
                labels[i] = surf.class;
            }
        }
        mark_pillar_edges(&mut labels, &normals, w, h);
        let priors = corrupt_priors(spec, vi, &r, &normals, &labels, w, h);
        let mut view = CameraView::new(format!("{vi:06}"), w, h, k, r, t, image, priors)?;
        view.gt_normals = Some(normals);
        view.gt_depth = Some(depth);
        view.labels = Some(labels);
        views.push(view);
    }
    let mut scene = Scene::new(spec.primitive.to_string(), views);
    scene.region = Some(match spec.primitive {
        Primitive::Plane => plane_region(),
        _ => room_region(),
    });
    scene.gt_mesh = Some(gt_mesh(spec.primitive));
    scene.analytic = Some(AnalyticField::new(shape).with_albedo(Albedo::Noise {
        frequency: spec.texture_frequency,
        seed: spec.seed.wrapping_add(1),
    }));
    Ok(scene)
}

/// Relabels pillar pixels within two pixels of a non-pillar pixel or of a
/// pillar pixel on a different face.
fn mark_pillar_edges(labels: &mut [u8], normals: &[f32], w: usize, h: usize) {
    const R: isize = 2;
    let snapshot = labels.to_vec();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if snapshot[i] != label::PILLAR {
                continue;
            }
            let ni = &normals[3 * i..3 * i + 3];
            let mut edge = false;
            'scan: for dy in -R..=R {
                for dx in -R..=R {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    let nj = &normals[3 * j..3 * j + 3];
                    let same_face = ni[0] * nj[0] + ni[1] * nj[1] + ni[2] * nj[2] > 0.99;
                    if snapshot[j] != label::PILLAR || !same_face {
                        edge = true;
                        break 'scan;
                    }
                }
            }
            if edge {
                labels[i] = label::PILLAR_EDGE;
            }
        }
    }
}

fn corrupt_priors(
    spec: &SyntheticSpec,
    view: usize,
    r: &Matrix3<f64>,
    gt: &[f32],
    labels: &[u8],
    w: usize,
    h: usize,
) -> Vec<f32> {
    let noise = ValueNoise::new(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(view as u64 + 101));
    let up_cam = r * Vector3::z();
    let on_pillar = |l: u8| l == label::PILLAR || l == label::PILLAR_EDGE;
    let mut out = gt.to_vec();
    for i in 0..w * h {
        if labels[i] == label::NONE {
            continue;
        }
        let mut n = Vector3::new(gt[3 * i] as f64, gt[3 * i + 1] as f64, gt[3 * i + 2] as f64);
        if spec.prior_error_deg > 0.0 {
            let p = [(i % w) as f64 / 14.0, (i / w) as f64 / 14.0, view as f64 * 7.31];
            let hint = Vector3::new(
                noise.fbm(p, 2) - 0.5,
                noise.fbm([p[0] + 17.1, p[1], p[2]], 2) - 0.5,
                noise.fbm([p[0], p[1] + 29.3, p[2]], 2) - 0.5,
            );
            let angle = spec.prior_error_deg * 2.0 * noise.fbm([p[0], p[1], p[2] + 3.7], 2);
            n = tilt(n, hint, angle.to_radians());
        }
        if spec.pillar_rotation_deg > 0.0 && on_pillar(labels[i]) {
            let rot = nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_normalize(up_cam),
                spec.pillar_rotation_deg.to_radians(),
            );
            n = rot * n;
        }
        out[3 * i..3 * i + 3].copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
    }
    if spec.pillar_blur > 0 {
        let b = spec.pillar_blur as isize;
        let near_pillar = |x: isize, y: isize| -> bool {
            (-b..=b).any(|dy| {
                (-b..=b).any(|dx| {
                    let (xx, yy) = (x + dx, y + dy);
                    xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize && on_pillar(labels[yy as usize * w + xx as usize])
                })
            })
        };
        let src = out.clone();
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                if labels[i] == label::NONE || !near_pillar(x, y) {
                    continue;
                }
                let mut acc = Vector3::zeros();
                for dy in -b..=b {
                    for dx in -b..=b {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            continue;
                        }
                        let j = yy as usize * w + xx as usize;
                        acc += Vector3::new(src[3 * j] as f64, src[3 * j + 1] as f64, src[3 * j + 2] as f64);
                    }
                }
                if acc.norm() > 1e-6 {
                    let n = acc.normalize();
                    out[3 * i..3 * i + 3].copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
                }
            }
        }
    }
    out
}

/// Pixels of class `class` whose whole `(2·half+1)²` neighborhood lies
/// inside the image, has the same class and the same ground-truth normal.
pub fn interior_pixels(view: &CameraView, classes: &[u8], half: usize) -> Vec<usize> {
    let (Some(labels), Some(normals)) = (&view.labels, &view.gt_normals) else {
        return Vec::new();
    };
    let (w, h) = (view.width, view.height);
    let mut out = Vec::new();
    for y in half..h.saturating_sub(half) {
        for x in half..w.saturating_sub(half) {
            let i = y * w + x;
            if !classes.contains(&labels[i]) {
                continue;
            }
            let ni = &normals[3 * i..3 * i + 3];
            let uniform = (y - half..=y + half).all(|yy| {
                (x - half..=x + half).all(|xx| {
                    let j = yy * w + xx;
                    let nj = &normals[3 * j..3 * j + 3];
                    labels[j] == labels[i] && ni[0] * nj[0] + ni[1] * nj[1] + ni[2] * nj[2] > 0.9999
                })
            });
            if uniform {
                out.push(i);
            }
        }
    }
    out
}
