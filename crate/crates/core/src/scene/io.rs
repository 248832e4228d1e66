//! Scene directories.
//!
//! ```text
//! scene/
//!   image/000000.png        RGB, 8 or 16 bit
//!   pose/000000.txt         4x4 camera-to-world, row-major
//!   intrinsics.txt          3x3 or 4x4 (shared), or intrinsics/000000.txt
//!   normal/000000.nrm       prior normals, camera frame (x right, y down, z forward)
//!   normal_gt/000000.nrm    optional ground-truth normals
//!   depth/000000.dep        optional ground-truth distance along the ray
//!   label/000000.png        optional 8-bit labels
//!   region.txt              optional "min x y z" / "max x y z"
//!   gt_mesh.ply             optional ground-truth mesh
//!   analytic.json           optional closed-form geometry
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, Matrix4, Vector3};

use super::raster::{read_raster, write_raster, Raster};
use super::Scene;
use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::field::AnalyticField;
use crate::mesh::{read_ply, write_ply};
use crate::transform::Aabb;

fn load_err(frame: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        frame: frame.to_string(),
        reason: reason.into(),
    }
}

fn frame_ids(dir: &Path, ext: &str) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(ids);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

fn parse_numbers(text: &str) -> std::result::Result<Vec<f64>, String> {
    text.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

fn read_numbers(path: &Path, frame: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)
        .map_err(|e| load_err(frame, format!("{}: {e}", path.display())))?;
    parse_numbers(&text).map_err(|e| load_err(frame, format!("{}: {e}", path.display())))
}

fn parse_intrinsics(values: &[f64], frame: &str, path: &Path) -> Result<Matrix3<f64>> {
    let k = match values.len() {
        9 => Matrix3::from_row_slice(values),
        16 => Matrix4::from_row_slice(values).fixed_view::<3, 3>(0, 0).into_owned(),
        n => {
            return Err(load_err(
                frame,
                format!("{}: expected 9 or 16 intrinsics values, found {n}", path.display()),
            ))
        }
    };
    Ok(k)
}

fn read_pose(path: &Path, frame: &str) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let v = read_numbers(path, frame)?;
    if v.len() != 16 {
        return Err(load_err(
            frame,
            format!("{}: expected 16 pose values, found {}", path.display(), v.len()),
        ));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("frame {frame}: non-finite pose")));
    }
    let m = Matrix4::from_row_slice(&v);
    let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
    if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-6 {
        return Err(Error::Validation(format!(
            "frame {frame}: pose bottom row {bottom:?} is not [0 0 0 1]"
        )));
    }
    let r_c2w = m.fixed_view::<3, 3>(0, 0).into_owned();
    let c = m.fixed_view::<3, 1>(0, 3).into_owned();
    let r = r_c2w.transpose();
    Ok((r, -(r * c)))
}

fn read_rgb(path: &Path, frame: &str) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| load_err(frame, format!("{}: {e}", path.display())))?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    Ok((w as usize, h as usize, rgb.into_raw()))
}

fn read_map(path: &Path, frame: &str, channels: usize, width: usize, height: usize) -> Result<Vec<f32>> {
    let r = read_raster(path).map_err(|e| match e {
        Error::Io { .. } => load_err(frame, format!("{}: missing or unreadable", path.display())),
        Error::Validation(msg) => load_err(frame, msg),
        other => other,
    })?;
    if r.height != height || r.width != width || r.channels != channels {
        return Err(Error::Validation(format!(
            "frame {frame}: {} is {}x{}x{}, expected {height}x{width}x{channels}",
            path.display(),
            r.height,
            r.width,
            r.channels
        )));
    }
    Ok(r.data)
}

/// Loads a scene directory (layout in the module docs). Every frame in
/// `image/` must have a pose, intrinsics and a normal map; files in the
/// other streams without a matching image are an error.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scene directory not found"),
        ));
    }
    let ids = frame_ids(&dir.join("image"), "png")?;
    if ids.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no frames in image/",
            dir.display()
        )));
    }
    for (stream, ext) in [("pose", "txt"), ("normal", "nrm"), ("normal_gt", "nrm"), ("depth", "dep"), ("label", "png")] {
        if let Some(orphan) = frame_ids(&dir.join(stream), ext)?.difference(&ids).next() {
            return Err(load_err(orphan, format!("{stream}/{orphan}.{ext} has no image")));
        }
    }
    let shared_k = dir.join("intrinsics.txt");
    let shared_k = if shared_k.is_file() {
        Some(parse_intrinsics(&read_numbers(&shared_k, "*")?, "*", &shared_k)?)
    } else {
        None
    };
    let mut views = Vec::with_capacity(ids.len());
    for id in &ids {
        let f = |stream: &str, ext: &str| -> PathBuf { dir.join(stream).join(format!("{id}.{ext}")) };
        let (width, height, image) = read_rgb(&f("image", "png"), id)?;
        let k = match &shared_k {
            Some(k) => *k,
            None => {
                let p = f("intrinsics", "txt");
                parse_intrinsics(&read_numbers(&p, id)?, id, &p)?
            }
        };
        let pose_path = f("pose", "txt");
        if !pose_path.is_file() {
            return Err(load_err(id, format!("missing {}", pose_path.display())));
        }
        let (r, t) = read_pose(&pose_path, id)?;
        let normal_path = f("normal", "nrm");
        if !normal_path.is_file() {
            return Err(load_err(id, format!("missing {}", normal_path.display())));
        }
        let normals = read_map(&normal_path, id, 3, width, height)?;
        let mut view = CameraView::new(id.clone(), width, height, k, r, t, image, normals)?;
        let gt = f("normal_gt", "nrm");
        if gt.is_file() {
            view.gt_normals = Some(read_map(&gt, id, 3, width, height)?);
        }
        let depth = f("depth", "dep");
        if depth.is_file() {
            view.gt_depth = Some(read_map(&depth, id, 1, width, height)?);
        }
        let label = f("label", "png");
        if label.is_file() {
            let img = image::open(&label)
                .map_err(|e| load_err(id, format!("{}: {e}", label.display())))?
                .to_luma8();
            if img.dimensions() != (width as u32, height as u32) {
                return Err(Error::Validation(format!(
                    "frame {id}: label map size {:?} differs from image",
                    img.dimensions()
                )));
            }
            view.labels = Some(img.into_raw());
        }
        views.push(view);
    }
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    let mut scene = Scene::new(name, views);
    let region = dir.join("region.txt");
    if region.is_file() {
        let v = read_numbers(&region, "region")?;
        let nums: Vec<f64> = v;
        if nums.len() != 6 {
            return Err(load_err("region", "region.txt needs 6 numbers"));
        }
        scene.region = Some(Aabb::new([nums[0], nums[1], nums[2]], [nums[3], nums[4], nums[5]]));
    }
    let mesh = dir.join("gt_mesh.ply");
    if mesh.is_file() {
        scene.gt_mesh = Some(read_ply(&mesh)?);
    }
    let analytic = dir.join("analytic.json");
    if analytic.is_file() {
        let text = fs::read_to_string(&analytic).map_err(|e| Error::io(&analytic, e))?;
        let field: AnalyticField<f64> = serde_json::from_str(&text)
            .map_err(|e| load_err("analytic", format!("{}: {e}", analytic.display())))?;
        scene.analytic = Some(field);
    }
    Ok(scene)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes `scene` in the directory layout read by [`load_scene`]. Images are
/// stored as 16-bit PNG; frame files are named by view order.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    for sub in ["image", "pose", "intrinsics", "normal"] {
        mkdir(&dir.join(sub))?;
    }
    for (i, v) in scene.views.iter().enumerate() {
        let id = format!("{i:06}");
        let path = |stream: &str, ext: &str| dir.join(stream).join(format!("{id}.{ext}"));
        let pixels: Vec<u16> = v.image.iter().map(|c| quantize16(*c)).collect();
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_raw(v.width as u32, v.height as u32, pixels).expect("image size");
        let p = path("image", "png");
        img.save(&p).map_err(|e| load_err(&id, format!("{}: {e}", p.display())))?;
        write_text(&path("pose", "txt"), &matrix_text(v.cam_to_world().as_slice(), 4))?;
        write_text(&path("intrinsics", "txt"), &matrix_text(v.intrinsics.as_slice(), 3))?;
        write_raster(&path("normal", "nrm"), &Raster::new(v.height, v.width, 3, v.prior_normals.clone()))?;
        if let Some(gt) = &v.gt_normals {
            mkdir(&dir.join("normal_gt"))?;
            write_raster(&path("normal_gt", "nrm"), &Raster::new(v.height, v.width, 3, gt.clone()))?;
        }
        if let Some(depth) = &v.gt_depth {
            mkdir(&dir.join("depth"))?;
            write_raster(&path("depth", "dep"), &Raster::new(v.height, v.width, 1, depth.clone()))?;
        }
        if let Some(labels) = &v.labels {
            mkdir(&dir.join("label"))?;
            let img: ImageBuffer<Luma<u8>, Vec<u8>> =
                ImageBuffer::from_raw(v.width as u32, v.height as u32, labels.clone()).expect("label size");
            let p = path("label", "png");
            img.save(&p).map_err(|e| load_err(&id, format!("{}: {e}", p.display())))?;
        }
    }
    if let Some(r) = &scene.region {
        write_text(
            &dir.join("region.txt"),
            &format!(
                "{} {} {}\n{} {} {}\n",
                r.min[0], r.min[1], r.min[2], r.max[0], r.max[1], r.max[2]
            ),
        )?;
    }
    if let Some(m) = &scene.gt_mesh {
        write_ply(m, &dir.join("gt_mesh.ply"))?;
    }
    if let Some(a) = &scene.analytic {
        let json = serde_json::to_string_pretty(a).expect("analytic field serializes");
        write_text(&dir.join("analytic.json"), &json)?;
    }
    Ok(())
}

/// Row-major text of a column-major nalgebra slice.
fn matrix_text(col_major: &[f64], n: usize) -> String {
    let mut s = String::new();
    for r in 0..n {
        let row: Vec<String> = (0..n).map(|c| format!("{}", col_major[c * n + r])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
