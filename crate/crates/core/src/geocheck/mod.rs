//! Multi-view photometric check of normal priors: plane-induced homography,
//! zero-mean NCC, and the per-pixel accept/reject indicator.

mod mask;

pub use mask::{MaskState, PriorMask};

use nalgebra::{Matrix3, Vector3};

use crate::camera::CameraView;
use crate::error::{Error, Result};

/// Smallest `|vᵀn|` accepted for a plane hypothesis.
pub const MIN_GRAZING: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckConfig {
    /// Patch half size; the patch is `(2·half+1)²` pixels.
    pub patch_half: usize,
    /// Neighbor views per reference view (J).
    pub neighbors: usize,
    /// Threshold per valid neighbor: `ε = ratio · J_valid`.
    pub eps_ratio: f64,
    /// Patches with intensity standard deviation below this are invalid.
    pub std_floor: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            patch_half: 5,
            neighbors: 2,
            eps_ratio: 0.6,
            std_floor: 1e-3,
        }
    }
}

impl CheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_half == 0 || self.neighbors == 0 {
            return Err(Error::Config("patch half size and neighbor count must be ≥ 1".into()));
        }
        if !(self.eps_ratio.is_finite() && self.std_floor >= 0.0) {
            return Err(Error::Config("invalid check threshold".into()));
        }
        Ok(())
    }
}

/// Local plane `{p | pᵀn = d·vᵀn}` in the reference camera frame: the
/// plane with normal `n` through the point at distance `d` along `v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHypothesis {
    pub normal: Vector3<f64>,
    pub depth: f64,
    pub view_dir: Vector3<f64>,
}

impl PlaneHypothesis {
    pub fn new(normal: Vector3<f64>, depth: f64, view_dir: Vector3<f64>) -> Result<Self> {
        let h = PlaneHypothesis {
            normal: normal.normalize(),
            depth,
            view_dir: view_dir.normalize(),
        };
        if !(depth > 0.0 && depth.is_finite()) {
            return Err(Error::Degenerate(format!("plane depth {depth} is not positive")));
        }
        if h.view_dir.dot(&h.normal).abs() < MIN_GRAZING {
            return Err(Error::Degenerate("plane is parallel to the viewing ray".into()));
        }
        Ok(h)
    }

    /// Plane offset `ρ` with `nᵀp = ρ`.
    pub fn offset(&self) -> f64 {
        self.depth * self.view_dir.dot(&self.normal)
    }
}

/// Relative pose `X_j = R_ij X_i + t_ij` between two camera frames.
pub fn relative_pose(vi: &CameraView, vj: &CameraView) -> (Matrix3<f64>, Vector3<f64>) {
    let r = vj.rotation * vi.rotation.transpose();
    let t = vj.translation - r * vi.translation;
    (r, t)
}

/// Homography from pixels of `vi` to pixels of `vj` induced by a plane in
/// the frame of `vi`: `K_j (R_ij + t_ij nᵀ / (d·vᵀn)) K_i⁻¹`.
pub fn homography(vi: &CameraView, vj: &CameraView, hyp: &PlaneHypothesis) -> Result<Matrix3<f64>> {
    let denom = hyp.offset();
    if hyp.view_dir.dot(&hyp.normal).abs() < MIN_GRAZING || denom.abs() < f64::MIN_POSITIVE {
        return Err(Error::Degenerate("plane is parallel to the viewing ray".into()));
    }
    let (r, t) = relative_pose(vi, vj);
    let k_inv = vi
        .intrinsics
        .try_inverse()
        .ok_or_else(|| Error::Degenerate(format!("frame {}: singular intrinsics", vi.name)))?;
    Ok(vj.intrinsics * (r + t * hyp.normal.transpose() / denom) * k_inv)
}

/// Applies a homography to pixel `(x, y)`; `None` if the point maps to
/// infinity or behind the target camera.
pub fn warp(h: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(x, y, 1.0);
    (p.z > 1e-12).then(|| (p.x / p.z, p.y / p.z))
}

/// Zero-mean normalized cross-correlation, clipped to [−1, 1]. `None` when
/// either sample set has standard deviation below `std_floor`.
pub fn zncc(a: &[f64], b: &[f64], std_floor: f64) -> Option<f64> {
    assert_eq!(a.len(), b.len(), "patch sizes differ");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let floor = std_floor * std_floor * n;
    if saa < floor || sbb < floor || saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Why a neighbor did not produce a score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Invalid {
    /// The reference patch leaves the reference image.
    ReferenceOutOfBounds,
    /// The warped patch leaves the neighbor image or falls behind it.
    OutOfBounds,
    LowVariance,
    DegeneratePlane,
}

impl Invalid {
    pub fn as_str(&self) -> &'static str {
        match self {
            Invalid::ReferenceOutOfBounds => "reference_out_of_bounds",
            Invalid::OutOfBounds => "out_of_bounds",
            Invalid::LowVariance => "low_variance",
            Invalid::DegeneratePlane => "degenerate_plane",
        }
    }
}

/// Reference luminance patch around integer pixel `(x, y)`.
pub fn reference_patch(view: &CameraView, x: usize, y: usize, half: usize) -> Option<Vec<f64>> {
    if x < half || y < half || x + half >= view.width || y + half >= view.height {
        return None;
    }
    let mut out = Vec::with_capacity((2 * half + 1).pow(2));
    for yy in y - half..=y + half {
        for xx in x - half..=x + half {
            out.push(view.luma[yy * view.width + xx] as f64);
        }
    }
    Some(out)
}

/// NCC between the reference patch of `vi` centered at `(x, y)` and its
/// image under `h` in `vj` (bilinear luminance samples).
pub fn ncc(
    vi: &CameraView,
    vj: &CameraView,
    x: usize,
    y: usize,
    half: usize,
    h: &Matrix3<f64>,
    std_floor: f64,
) -> std::result::Result<f64, Invalid> {
    let a = reference_patch(vi, x, y, half).ok_or(Invalid::ReferenceOutOfBounds)?;
    let mut b = Vec::with_capacity(a.len());
    for yy in y - half..=y + half {
        for xx in x - half..=x + half {
            let (u, v) = warp(h, xx as f64, yy as f64).ok_or(Invalid::OutOfBounds)?;
            b.push(vj.luma_bilinear(u, v).ok_or(Invalid::OutOfBounds)?);
        }
    }
    zncc(&a, &b, std_floor).ok_or(Invalid::LowVariance)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Indicator {
    /// The prior agrees with the rendered geometry (Ω = 1).
    Pass,
    /// The prior is judged unfaithful (Ω = 0).
    Fail,
    /// No valid neighbor; the pixel keeps its state.
    Untestable,
}

/// Ω from per-neighbor scores: pass iff the sum over valid neighbors
/// reaches `eps_ratio · J_valid`.
pub fn indicator_from_scores(scores: &[Option<f64>], eps_ratio: f64) -> Indicator {
    let valid: Vec<f64> = scores.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Indicator::Untestable;
    }
    if valid.iter().sum::<f64>() >= eps_ratio * valid.len() as f64 {
        Indicator::Pass
    } else {
        Indicator::Fail
    }
}

/// Score of one neighbor for one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborScore {
    pub view: usize,
    pub score: std::result::Result<f64, Invalid>,
}

/// Scores each neighbor for pixel `(x, y)` of view `vi` given the rendered
/// world-frame normal and ray distance.
#[allow(clippy::too_many_arguments)]
pub fn neighbor_scores(
    views: &[CameraView],
    vi: usize,
    x: usize,
    y: usize,
    normal_world: Vector3<f64>,
    depth: f64,
    neighbors: &[usize],
    cfg: &CheckConfig,
) -> Vec<NeighborScore> {
    let view = &views[vi];
    let in_bounds = x >= cfg.patch_half
        && y >= cfg.patch_half
        && x + cfg.patch_half < view.width
        && y + cfg.patch_half < view.height;
    if !in_bounds {
        return neighbors
            .iter()
            .map(|&j| NeighborScore {
                view: j,
                score: Err(Invalid::ReferenceOutOfBounds),
            })
            .collect();
    }
    let n_cam = view.world_to_camera_dir(&normal_world);
    let v_cam = view.camera_direction(x as f64, y as f64);
    let hyp = if n_cam.norm() > 0.0 {
        PlaneHypothesis::new(n_cam, depth, v_cam).ok()
    } else {
        None
    };
    neighbors
        .iter()
        .map(|&j| {
            let score = match &hyp {
                None => Err(Invalid::DegeneratePlane),
                Some(hyp) => match homography(view, &views[j], hyp) {
                    Ok(h) => ncc(view, &views[j], x, y, cfg.patch_half, &h, cfg.std_floor),
                    Err(_) => Err(Invalid::DegeneratePlane),
                },
            };
            NeighborScore { view: j, score }
        })
        .collect()
}

/// Ω for pixel `(x, y)` of view `vi`: whether the plane given by the
/// rendered normal and depth is photometrically consistent with the
/// neighbors. A degenerate plane fails the check.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_indicator(
    views: &[CameraView],
    vi: usize,
    x: usize,
    y: usize,
    normal_world: Vector3<f64>,
    depth: f64,
    neighbors: &[usize],
    cfg: &CheckConfig,
) -> Indicator {
    let scored = neighbor_scores(views, vi, x, y, normal_world, depth, neighbors, cfg);
    if scored.iter().any(|s| s.score == Err(Invalid::DegeneratePlane)) {
        return Indicator::Fail;
    }
    let scores: Vec<Option<f64>> = scored.into_iter().map(|s| s.score.ok()).collect();
    indicator_from_scores(&scores, cfg.eps_ratio)
}

#[cfg(test)]
mod tests;
