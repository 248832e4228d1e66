use nalgebra::{Matrix3, Matrix4, Point3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::Real;

const ORTHO_TOL: f64 = 1e-6;
const UNIT_TOL: f64 = 1e-4;

/// Ray in scene units: `origin + t * dir` for `t` in `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: [T; 3],
    pub dir: [T; 3],
    pub near: T,
    pub far: T,
}

impl<T: Real> Ray<T> {
    pub fn at(&self, t: T) -> [T; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }

    pub fn cast<U: Real>(&self) -> Ray<U> {
        let c = |v: T| U::lit(v.as_f64());
        Ray {
            origin: self.origin.map(c),
            dir: self.dir.map(c),
            near: c(self.near),
            far: c(self.far),
        }
    }
}

impl Ray<f64> {
    /// Ray bounded by the unit sphere around the origin. `None` if the line
    /// misses the sphere or the sphere lies behind the origin.
    pub fn in_unit_sphere(origin: Vector3<f64>, dir: Vector3<f64>) -> Option<Self> {
        let dir = dir.normalize();
        let b = origin.dot(&dir);
        let c = origin.norm_squared() - 1.0;
        let disc = b * b - c;
        if disc <= 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let far = -b + root;
        let near = (-b - root).max(0.0);
        if far <= near {
            return None;
        }
        Some(Ray {
            origin: origin.into(),
            dir: dir.into(),
            near,
            far,
        })
    }
}

/// One posed RGB frame with its normal-prior map.
///
/// Pixel `(x, y)` has its center at image coordinate `(x, y)`. Camera frame
/// axes are x right, y down, z forward. `rotation`/`translation` map world to
/// camera: `p_cam = R p_world + t`.
#[derive(Clone, Debug)]
pub struct CameraView {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Row-major `H*W*3`, values in `[0, 1]`.
    pub image: Vec<f32>,
    /// Row-major `H*W`, derived from `image`.
    pub luma: Vec<f32>,
    /// Row-major `H*W*3` camera-frame unit normals; zero on invalid pixels.
    pub prior_normals: Vec<f32>,
    pub valid: Vec<bool>,
    /// Ground truth normals (synthetic scenes only), same layout as the prior.
    pub gt_normals: Option<Vec<f32>>,
    /// Ground truth distance along the pixel ray (synthetic scenes only).
    pub gt_depth: Option<Vec<f32>>,
    /// Per-pixel surface labels (synthetic scenes only), see [`crate::scene::synthetic::Label`].
    pub labels: Option<Vec<u8>>,
}

pub fn luminance(rgb: &[f32]) -> Vec<f32> {
    rgb.chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect()
}

impl CameraView {
    /// Builds and validates a view. `valid` defaults to pixels with a
    /// non-zero prior normal.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        width: usize,
        height: usize,
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image: Vec<f32>,
        prior_normals: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        let n = width * height;
        if image.len() != n * 3 {
            return Err(Error::Validation(format!(
                "frame {name}: image has {} values, expected {}",
                image.len(),
                n * 3
            )));
        }
        if prior_normals.len() != n * 3 {
            return Err(Error::Validation(format!(
                "frame {name}: normal map has {} values, expected {} ({}x{}x3)",
                prior_normals.len(),
                n * 3,
                height,
                width
            )));
        }
        let valid = prior_normals
            .chunks_exact(3)
            .map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2] > 0.25)
            .collect();
        let view = CameraView {
            luma: luminance(&image),
            name,
            width,
            height,
            intrinsics,
            rotation,
            translation,
            image,
            prior_normals,
            valid,
            gt_normals: None,
            gt_depth: None,
            labels: None,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL || (r.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Validation(format!(
                "frame {name}: rotation is not orthonormal with det +1 (error {err:.3e})"
            )));
        }
        let k = &self.intrinsics;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::Validation(format!(
                "frame {name}: focal lengths must be positive"
            )));
        }
        let (cx, cy) = (k[(0, 2)], k[(1, 2)]);
        if !(cx >= 0.0 && cx <= self.width as f64 && cy >= 0.0 && cy <= self.height as f64) {
            return Err(Error::Validation(format!(
                "frame {name}: principal point ({cx}, {cy}) outside image"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation(format!("frame {name}: non-finite translation")));
        }
        for (i, v) in self.prior_normals.chunks_exact(3).enumerate() {
            if self.valid[i] {
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (len as f64 - 1.0).abs() > UNIT_TOL {
                    return Err(Error::Validation(format!(
                        "frame {name}: prior normal at pixel {i} has length {len}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Camera-to-world 4x4 pose.
    pub fn cam_to_world(&self) -> Matrix4<f64> {
        let rt = self.rotation.transpose();
        let c = self.center();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
        m
    }

    /// Camera center `c = -Rᵀt`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.transpose() * Vector3::z()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= -0.5 && y >= -0.5 && x < self.width as f64 - 0.5 && y < self.height as f64 - 0.5
    }

    /// Unit viewing direction through pixel `(x, y)` in the camera frame.
    pub fn camera_direction(&self, x: f64, y: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let dy = (y - k[(1, 2)]) / k[(1, 1)];
        let dx = (x - k[(0, 2)] - k[(0, 1)] * dy) / k[(0, 0)];
        Vector3::new(dx, dy, 1.0).normalize()
    }

    /// Ray through pixel `(x, y)` bounded by the unit sphere.
    pub fn pixel_ray(&self, x: f64, y: f64) -> Result<Ray<f64>> {
        if !self.in_bounds(x, y) {
            return Err(Error::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let dir = self.rotation.transpose() * self.camera_direction(x, y);
        Ray::in_unit_sphere(self.center(), dir).ok_or_else(|| {
            Error::Degenerate(format!(
                "ray through ({x}, {y}) of frame {} misses the unit sphere",
                self.name
            ))
        })
    }

    /// Projects a world point; returns pixel coordinates and camera-frame z.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64, f64) {
        let pc = self.rotation * p.coords + self.translation;
        let h = self.intrinsics * pc;
        (h.x / h.z, h.y / h.z, pc.z)
    }

    pub fn world_to_camera_dir(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    #[inline]
    pub fn rgb(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.image[i], self.image[i + 1], self.image[i + 2]]
    }

    #[inline]
    pub fn prior(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [
            self.prior_normals[i],
            self.prior_normals[i + 1],
            self.prior_normals[i + 2],
        ]
    }

    /// Bilinear luminance lookup; `None` outside the pixel-center lattice.
    #[inline]
    pub fn luma_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (w, h) = (self.width, self.height);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        if x0 >= w || y0 >= h {
            return None;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        if x1 >= w || y1 >= h {
            return None;
        }
        let at = |xx: usize, yy: usize| self.luma[yy * w + xx] as f64;
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        Some(top * (1.0 - fy) + bot * fy)
    }
}

/// Rotation that looks from `eye` toward `target` with camera y pointing
/// roughly along `-up` (image rows grow downward). Returns world-to-camera `(R, t)`.
pub fn look_at(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    up: Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let z = (target - eye).normalize();
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -(r * eye);
    (r, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn view(r: Matrix3<f64>, t: Vector3<f64>) -> CameraView {
        let (w, h) = (32, 24);
        let k = Matrix3::new(40.0, 0.0, 15.5, 0.0, 40.0, 11.5, 0.0, 0.0, 1.0);
        let mut normals = vec![0.0f32; w * h * 3];
        for px in normals.chunks_exact_mut(3) {
            px[2] = -1.0;
        }
        CameraView::new("t", w, h, k, r, t, vec![0.5; w * h * 3], normals).unwrap()
    }

    #[test]
    fn identity_pose_center_at_origin() {
        let v = view(Matrix3::identity(), Vector3::zeros());
        assert_eq!(v.center(), Vector3::zeros());
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let v = view(Matrix3::identity(), Vector3::zeros());
        let ray = v.pixel_ray(15.5, 11.5).unwrap();
        assert_relative_eq!(ray.dir[2], 1.0, epsilon = 1e-12);
        assert_relative_eq!(ray.near, 0.0);
        assert_relative_eq!(ray.far, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn adjacent_pixel_angle_is_inverse_focal() {
        let v = view(Matrix3::identity(), Vector3::zeros());
        let a = Vector3::from(v.pixel_ray(15.5, 11.5).unwrap().dir);
        let b = Vector3::from(v.pixel_ray(16.5, 11.5).unwrap().dir);
        let angle = a.angle(&b);
        // atan(1/f) at the principal point.
        assert_relative_eq!(angle, (1.0f64 / 40.0).atan(), epsilon = 1e-12);
        assert_relative_eq!(angle, 1.0 / 40.0, epsilon = 1e-4);
    }

    #[test]
    fn out_of_bounds_pixel_is_rejected() {
        let v = view(Matrix3::identity(), Vector3::zeros());
        assert!(matches!(v.pixel_ray(40.0, 3.0), Err(Error::OutOfBounds { .. })));
        assert!(v.pixel_ray(-0.6, 3.0).is_err());
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.01;
        let (w, h) = (4, 4);
        let k = Matrix3::new(4.0, 0.0, 2.0, 0.0, 4.0, 2.0, 0.0, 0.0, 1.0);
        let e = CameraView::new("bad", w, h, k, r, Vector3::zeros(), vec![0.0; 48], vec![0.0; 48]);
        assert!(matches!(e, Err(Error::Validation(_))));
    }

    #[test]
    fn wrong_normal_resolution_is_rejected() {
        let k = Matrix3::new(4.0, 0.0, 2.0, 0.0, 4.0, 2.0, 0.0, 0.0, 1.0);
        let e = CameraView::new(
            "bad",
            4,
            4,
            k,
            Matrix3::identity(),
            Vector3::zeros(),
            vec![0.0; 48],
            vec![0.0; 45],
        );
        assert!(matches!(e, Err(Error::Validation(_))));
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Vector3::new(0.1, -0.2, 0.3);
        let target = Vector3::new(-0.4, 0.1, 0.0);
        let (r, t) = look_at(eye, target, Vector3::y());
        let mut v = view(r, t);
        v.rotation = r;
        let (x, y, z) = v.project(&Point3::from(target));
        assert!(z > 0.0);
        assert_relative_eq!(x, 15.5, epsilon = 1e-9);
        assert_relative_eq!(y, 11.5, epsilon = 1e-9);
    }
}
