//! Multi-view scenes: loading, normalization into the unit sphere and
//! neighbor-view selection.

mod io;
pub mod raster;
pub mod synthetic;

pub use io::{load_scene, save_scene};
pub use synthetic::{make_synthetic_scene, Primitive, SyntheticSpec, Texture};

use nalgebra::Vector3;

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::field::AnalyticField;
use crate::mesh::TriMesh;
use crate::transform::{Aabb, Similarity};

/// Fraction of the unit sphere filled by the region of interest after
/// normalization.
pub const NORMALIZED_RADIUS: f64 = 0.95;

/// Per-pixel semantic labels of synthetic scenes.
pub mod label {
    pub const NONE: u8 = 0;
    pub const WALL: u8 = 1;
    pub const FLOOR: u8 = 2;
    pub const CEILING: u8 = 3;
    pub const PILLAR: u8 = 4;
    /// Pillar pixels near its silhouette or a vertical crease.
    pub const PILLAR_EDGE: u8 = 5;
    pub const PLANE: u8 = 6;
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub views: Vec<CameraView>,
    /// Region of interest in scene coordinates.
    pub region: Option<Aabb>,
    /// Maps scene coordinates back to the units the scene was loaded in.
    pub to_original: Similarity,
    /// Ground-truth surface in scene coordinates.
    pub gt_mesh: Option<TriMesh>,
    /// Closed-form geometry (synthetic scenes only), in scene coordinates.
    pub analytic: Option<AnalyticField<f64>>,
}

impl Scene {
    pub fn new(name: impl Into<String>, views: Vec<CameraView>) -> Self {
        Scene {
            name: name.into(),
            views,
            region: None,
            to_original: Similarity::identity(),
            gt_mesh: None,
            analytic: None,
        }
    }

    /// Camera centers plus region corners.
    pub fn roi_points(&self) -> Vec<[f64; 3]> {
        let mut pts: Vec<[f64; 3]> = self.views.iter().map(|v| v.center().into()).collect();
        if let Some(r) = &self.region {
            pts.extend(r.corners());
        }
        pts
    }

    /// Center and radius of the sphere bounding the region of interest.
    pub fn bounding_sphere(&self) -> ([f64; 3], f64) {
        let pts = self.roi_points();
        let center = Aabb::from_points(&pts).center();
        let radius = pts
            .iter()
            .map(|p| crate::mesh::norm(crate::mesh::sub(*p, center)))
            .fold(0.0, f64::max);
        (center, radius)
    }

    /// Region of interest, falling back to the camera bounding box.
    pub fn region_or_cameras(&self) -> Aabb {
        self.region
            .unwrap_or_else(|| Aabb::from_points(&self.roi_points()))
    }

    /// Applies `t` (scene → new coordinates) to every geometric quantity.
    pub fn transformed(&self, t: &Similarity) -> Result<Scene> {
        let mut views = Vec::with_capacity(self.views.len());
        for v in &self.views {
            views.push(transform_view(v, t)?);
        }
        let analytic = self.analytic.as_ref().map(|f| AnalyticField {
            shape: f.shape.clone().transformed(t.scale, t.translation),
            albedo: f.albedo.clone(),
        });
        Ok(Scene {
            name: self.name.clone(),
            views,
            region: self.region.map(|r| r.transformed(t)),
            to_original: self.to_original.after(&t.inverse()),
            gt_mesh: self.gt_mesh.as_ref().map(|m| m.transformed(t)),
            analytic,
        })
    }

    pub fn view_index(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }
}

/// Camera update for `y = s·x + c`: `R' = R`, `t' = s·t − R·c`.
fn transform_view(v: &CameraView, t: &Similarity) -> Result<CameraView> {
    let mut out = v.clone();
    let c = Vector3::from(t.translation);
    out.translation = v.translation * t.scale - v.rotation * c;
    if let Some(depth) = out.gt_depth.as_mut() {
        for d in depth.iter_mut() {
            *d = (*d as f64 * t.scale) as f32;
        }
    }
    out.validate()?;
    Ok(out)
}

/// Maps the region of interest (camera centers and region corners) into the
/// sphere of radius [`NORMALIZED_RADIUS`] around the origin. Returns the
/// normalized scene and the applied transform (input → normalized).
pub fn normalize_scene(scene: &Scene) -> Result<(Scene, Similarity)> {
    if scene.views.len() < 2 {
        return Err(Error::Validation(format!(
            "normalization needs at least 2 views, scene has {}",
            scene.views.len()
        )));
    }
    let centers: Vec<[f64; 3]> = scene.views.iter().map(|v| v.center().into()).collect();
    let spread = Aabb::from_points(&centers).diagonal();
    if spread < 1e-9 {
        return Err(Error::Degenerate("all camera centers coincide".into()));
    }
    let (center, radius) = scene.bounding_sphere();
    let scale = NORMALIZED_RADIUS / radius;
    let t = Similarity {
        scale,
        translation: center.map(|c| -c * scale),
    };
    Ok((scene.transformed(&t)?, t))
}

/// Angle in degrees between the optical axes of two views.
pub fn view_angle_deg(a: &CameraView, b: &CameraView) -> f64 {
    a.forward().dot(&b.forward()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Largest optical-axis angle for a preferred neighbor.
pub const NEIGHBOR_MAX_ANGLE_DEG: f64 = 45.0;

/// Picks `count` neighbors of `reference`: views within
/// [`NEIGHBOR_MAX_ANGLE_DEG`] first, each group ordered by camera-center
/// distance and then by view angle.
pub fn select_neighbor_views(scene: &Scene, reference: usize, count: usize) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..scene.views.len()).collect();
    select_neighbors_among(scene, reference, &all, count)
}

/// [`select_neighbor_views`] restricted to the views in `candidates`.
pub fn select_neighbors_among(
    scene: &Scene,
    reference: usize,
    candidates: &[usize],
    count: usize,
) -> Result<Vec<usize>> {
    let n = scene.views.len();
    if count == 0 {
        return Err(Error::Validation("neighbor count must be at least 1".into()));
    }
    if reference >= n {
        return Err(Error::Validation(format!(
            "reference view {reference} out of range (scene has {n} views)"
        )));
    }
    let pool: Vec<usize> = candidates.iter().copied().filter(|&j| j != reference && j < n).collect();
    if pool.len() < count {
        return Err(Error::Validation(format!(
            "{count} neighbors requested but only {} candidate views exist",
            pool.len()
        )));
    }
    let r = &scene.views[reference];
    let rc = r.center();
    let mut ranked: Vec<(bool, f64, f64, usize)> = pool
        .into_iter()
        .map(|j| {
            let v = &scene.views[j];
            let angle = view_angle_deg(r, v);
            (angle >= NEIGHBOR_MAX_ANGLE_DEG, (v.center() - rc).norm(), angle, j)
        })
        .collect();
    ranked.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    Ok(ranked.into_iter().take(count).map(|e| e.3).collect())
}
