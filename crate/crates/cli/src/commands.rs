use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use sdfrecon::geocheck::{evaluate_indicator, neighbor_scores, MaskState};
use sdfrecon::kv::{parse_list, KeyValues};
use sdfrecon::mesh::{extract_mesh, read_ply, write_ply, ExtractConfig};
use sdfrecon::metrics::{eval_mesh, normal_angles, psnr, GeometryReport, NormalReport};
use sdfrecon::render::{render_rays, render_view, weight_profile_csv};
use sdfrecon::scalar::Real;
use sdfrecon::scene::raster::{write_raster, Raster};
use sdfrecon::scene::{label, load_scene, select_neighbors_among, make_synthetic_scene, normalize_scene, save_scene, SyntheticSpec};
use sdfrecon::train::train;
use sdfrecon::{Error, Preset, Result, Scene, TrainConfig, TrainState};

use crate::manifest::{io, Run};

/// Keys that may change when continuing from a checkpoint.
const RESUME_KEYS: [&str; 2] = ["total_iters", "checkpoint_every"];

fn read_kv(path: &Path) -> Result<KeyValues> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    KeyValues::parse(&text)
}

fn overrides(set: &[String]) -> Result<KeyValues> {
    KeyValues::from_pairs(set.iter().map(String::as_str))
}

fn parse_views(text: Option<&str>, count: usize) -> Result<Vec<usize>> {
    let views = match text {
        None => return Ok((0..count).collect()),
        Some(t) => parse_list::<usize>(t).map_err(|_| Error::Validation(format!("bad view list '{t}'")))?,
    };
    if let Some(v) = views.iter().find(|&&v| v >= count) {
        return Err(Error::Validation(format!("view {v} out of range (scene has {count})")));
    }
    Ok(views)
}

pub struct SyntheticArgs<'a> {
    pub spec: Option<&'a Path>,
    pub primitive: Option<&'a str>,
    pub set: &'a [String],
    pub seed: Option<u64>,
}

pub fn make_synthetic(run: &mut Run, args: SyntheticArgs) -> Result<()> {
    let mut kv = match args.spec {
        Some(p) => {
            run.input("spec", p);
            read_kv(p)?
        }
        None => KeyValues::default(),
    };
    if let Some(p) = args.primitive {
        kv.set("primitive", p);
    }
    kv.merge(&overrides(args.set)?);
    if let Some(s) = args.seed {
        kv.set("seed", s);
    }
    let spec = SyntheticSpec::from_kv(&kv)?;
    let scene = make_synthetic_scene(&spec)?;
    let scene_dir = run.path("scene");
    save_scene(&scene, &scene_dir)?;
    run.produced("scene");
    let text = spec.to_kv().to_text();
    run.write("synthetic.txt", &text)?;
    run.config_kv(&text);
    run.manifest.seed = Some(spec.seed);
    run.manifest.scene = Some(spec.primitive.to_string());
    println!("wrote {} views of {} to {}", scene.views.len(), spec.primitive, scene_dir.display());
    Ok(())
}

fn load_normalized(run: &mut Run, dir: &Path) -> Result<Scene> {
    run.input("scene", dir);
    let scene = load_scene(dir)?;
    run.manifest.scene = Some(scene.name.clone());
    Ok(normalize_scene(&scene)?.0)
}

pub struct TrainArgs<'a> {
    pub scene: &'a Path,
    pub config: Option<&'a Path>,
    pub preset: Option<Preset>,
    pub set: &'a [String],
    pub seed: Option<u64>,
    pub resume: Option<&'a Path>,
    pub double: bool,
}

pub fn train_cmd(run: &mut Run, args: TrainArgs) -> Result<()> {
    if args.double {
        train_typed::<f64>(run, args)
    } else {
        train_typed::<f32>(run, args)
    }
}

fn train_typed<T: Real>(run: &mut Run, args: TrainArgs) -> Result<()> {
    let scene = load_normalized(run, args.scene)?;
    let mut extra = match args.config {
        Some(p) => {
            run.input("config", p);
            read_kv(p)?
        }
        None => KeyValues::default(),
    };
    if let Some(p) = args.preset {
        extra.set("preset", p);
    }
    extra.merge(&overrides(args.set)?);
    if let Some(s) = args.seed {
        extra.set("seed", s);
    }
    let (state, config) = match args.resume {
        Some(path) => {
            run.input("resume", path);
            if let Some(k) = extra.keys().find(|k| !RESUME_KEYS.contains(k)) {
                return Err(Error::Validation(format!(
                    "'{k}' cannot change when resuming; only {} can",
                    RESUME_KEYS.join(", ")
                )));
            }
            let state = TrainState::<f64>::load_any(path)?.cast::<T>();
            let mut kv = state.config.to_kv();
            kv.merge(&extra);
            (Some(state), TrainConfig::from_kv(&kv)?)
        }
        None => (None, TrainConfig::from_kv(&extra)?),
    };
    let state = state.map(|mut s| {
        s.config = config.clone();
        s
    });
    let text = config.to_kv().to_text();
    run.write("config.txt", &text)?;
    run.config_kv(&text);
    run.manifest.seed = Some(config.seed);
    let state = train::<T>(&scene, state, config, &run.dir)?;
    run.produced("checkpoints");
    run.produced("final.ckpt");
    run.produced("log.csv");
    if let Some(last) = state.log.last() {
        println!(
            "step {} loss {:.6} (color {:.6}, prior {:.6}, eikonal {:.6}), rejected {}",
            last.step + 1,
            last.loss,
            last.loss_color,
            last.loss_prior,
            last.loss_eik,
            last.rejected
        );
    }
    Ok(())
}

pub fn extract(run: &mut Run, checkpoint: &Path, resolution: Option<usize>) -> Result<()> {
    run.input("checkpoint", checkpoint);
    let state = TrainState::<f64>::load_any(checkpoint)?;
    let resolution = resolution.unwrap_or(match state.config.preset {
        Preset::Full => 256,
        Preset::Tiny => 64,
    });
    let cfg = ExtractConfig::new(resolution, state.frame.bounds());
    let mesh = extract_mesh(&state.field, &cfg, &state.frame.to_original)?;
    write_ply(&mesh, &run.path("mesh.ply"))?;
    run.produced("mesh.ply");
    run.manifest.scene = Some(state.frame.scene.clone());
    run.manifest.config.insert("resolution".into(), resolution.to_string());
    println!(
        "extracted {} vertices, {} faces at resolution {resolution}",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    Ok(())
}

pub fn eval_mesh_cmd(run: &mut Run, pred: &Path, gt: &Path, tau: f64, samples: usize, seed: u64) -> Result<()> {
    run.input("pred", pred);
    run.input("gt", gt);
    let report = eval_mesh(&read_ply(pred)?, &read_ply(gt)?, tau, samples, seed)?;
    run.write("geometry.csv", &format!("{}\n{}\n", GeometryReport::CSV_HEADER, report.csv_row()))?;
    run.write("geometry.json", &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    run.manifest.config.insert("tau".into(), tau.to_string());
    run.manifest.config.insert("n_samples".into(), samples.to_string());
    run.manifest.seed = Some(seed);
    print!("{}", report.table());
    Ok(())
}

/// Loads a checkpoint and its scene, checking that both use the same
/// normalization.
fn checkpoint_and_scene(run: &mut Run, checkpoint: &Path, scene_dir: &Path) -> Result<(TrainState<f64>, Scene)> {
    run.input("checkpoint", checkpoint);
    let state = TrainState::<f64>::load_any(checkpoint)?;
    let scene = load_normalized(run, scene_dir)?;
    let (a, b) = (state.frame.to_original, scene.to_original);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * (1.0 + x.abs().max(y.abs()));
    if !close(a.scale, b.scale) || (0..3).any(|k| !close(a.translation[k], b.translation[k])) {
        return Err(Error::Validation(format!(
            "checkpoint was trained on a differently framed scene ('{}')",
            state.frame.scene
        )));
    }
    if state.mask.view_count() != scene.views.len() {
        return Err(Error::Validation(format!(
            "checkpoint covers {} views, scene has {}",
            state.mask.view_count(),
            scene.views.len()
        )));
    }
    Ok((state, scene))
}

fn gt_normal_pairs(normals: &[f32], valid: &[bool]) -> (Vec<[f64; 3]>, Vec<bool>) {
    let n: Vec<[f64; 3]> = normals.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    (n, valid.to_vec())
}

pub fn eval_normals(run: &mut Run, checkpoint: &Path, scene_dir: &Path, views: Option<&str>) -> Result<()> {
    let (state, scene) = checkpoint_and_scene(run, checkpoint, scene_dir)?;
    let views = parse_views(views, scene.views.len())?;
    let s = state.field.sharpness();
    let mut rendered_all = Vec::new();
    let mut prior_all = Vec::new();
    let mut csv = format!("view,source,{}\n", NormalReport::CSV_HEADER);
    for &v in &views {
        let view = &scene.views[v];
        let Some(gt) = &view.gt_normals else {
            return Err(Error::Validation(format!("frame {} has no ground-truth normals", view.name)));
        };
        let (gt, valid) = gt_normal_pairs(gt, &view.valid);
        let r = render_view(&state.field, view, &state.config.sampling, s);
        let prior = gt_normal_pairs(&view.prior_normals, &view.valid).0;
        let rendered = normal_angles(&r.normal_cam, &gt, &valid)?;
        let priors = normal_angles(&prior, &gt, &valid)?;
        for (name, angles) in [("rendered", &rendered), ("prior", &priors)] {
            if let Ok(rep) = NormalReport::from_angles(angles) {
                let _ = writeln!(csv, "{},{name},{}", view.name, rep.csv_row());
            }
        }
        rendered_all.extend(rendered);
        prior_all.extend(priors);
    }
    let rendered = NormalReport::from_angles(&rendered_all)?;
    let prior = NormalReport::from_angles(&prior_all)?;
    let _ = writeln!(csv, "all,rendered,{}", rendered.csv_row());
    let _ = writeln!(csv, "all,prior,{}", prior.csv_row());
    run.write("normals.csv", &csv)?;
    println!("rendered normals\n{}input priors\n{}", rendered.table(), prior.table());
    Ok(())
}

fn write_png_rgb(path: &Path, w: usize, h: usize, rgb: &[f32]) -> Result<()> {
    let px: Vec<u8> = rgb.iter().map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    image::RgbImage::from_raw(w as u32, h as u32, px)
        .expect("image size")
        .save(path)
        .map_err(|e| io(path, std::io::Error::other(e.to_string())))
}

pub fn render(
    run: &mut Run,
    checkpoint: &Path,
    scene_dir: &Path,
    views: Option<&str>,
    weights_stride: Option<usize>,
) -> Result<()> {
    let (state, scene) = checkpoint_and_scene(run, checkpoint, scene_dir)?;
    let views = parse_views(views, scene.views.len())?;
    let s = state.field.sharpness();
    let held_out = &state.config.exclude_views;
    let mut csv = String::from("view,held_out,psnr\n");
    for &v in &views {
        let view = &scene.views[v];
        let r = render_view(&state.field, view, &state.config.sampling, s);
        let name = &view.name;
        write_png_rgb(&run.path(&format!("color_{name}.png")), r.width, r.height, &r.color)?;
        let normal_rgb: Vec<f32> = r.normal_cam.iter().flat_map(|n| n.map(|c| (0.5 * (c + 1.0)) as f32)).collect();
        write_png_rgb(&run.path(&format!("normal_{name}.png")), r.width, r.height, &normal_rgb)?;
        let depth: Vec<f32> = r.depth.iter().map(|d| (*d * state.frame.to_original.scale) as f32).collect();
        write_raster(&run.path(&format!("depth_{name}.dep")), &Raster::new(r.height, r.width, 1, depth))?;
        for f in ["color", "normal"] {
            run.produced(&format!("{f}_{name}.png"));
        }
        run.produced(&format!("depth_{name}.dep"));
        let value = psnr(&r.color, &view.image)?;
        let _ = writeln!(csv, "{name},{},{value}", held_out.contains(&v));
        println!("{name}: PSNR {value:.2} dB{}", if held_out.contains(&v) { " (held out)" } else { "" });
        if let Some(stride) = weights_stride {
            let stride = stride.max(1);
            let mut rays = Vec::new();
            for y in (0..view.height).step_by(stride) {
                for x in (0..view.width).step_by(stride) {
                    if let Ok(ray) = view.pixel_ray(x as f64, y as f64) {
                        rays.push(ray);
                    }
                }
            }
            let outs = render_rays(&state.field, &rays, &state.config.sampling, s);
            run.write(&format!("weights_{name}.csv"), &weight_profile_csv(&outs))?;
        }
    }
    run.write("psnr.csv", &csv)?;
    Ok(())
}

pub fn dump_masks(run: &mut Run, checkpoint: &Path, scene_dir: Option<&Path>, pixels: &[String]) -> Result<()> {
    if !pixels.is_empty() && scene_dir.is_none() {
        return Err(Error::Validation("--pixel needs --scene".into()));
    }
    let (state, scene) = match scene_dir {
        Some(dir) => {
            let (state, scene) = checkpoint_and_scene(run, checkpoint, dir)?;
            (state, Some(scene))
        }
        None => {
            run.input("checkpoint", checkpoint);
            (TrainState::<f64>::load_any(checkpoint)?, None)
        }
    };
    let mask = &state.mask;
    for v in 0..mask.view_count() {
        let name = format!("mask_{v:06}.png");
        mask.write_image(v, &run.path(&name))?;
        run.produced(&name);
    }
    run.write("mask_summary.csv", &mask.summary_csv())?;
    if let Some(scene) = scene {
        let mut counts = [[0usize; 3]; 256];
        for (v, view) in scene.views.iter().enumerate() {
            let Some(labels) = &view.labels else { continue };
            for (p, &l) in labels.iter().enumerate() {
                let slot = match mask.get(v, p) {
                    MaskState::Untested => 0,
                    MaskState::Accepted => 1,
                    MaskState::Rejected => 2,
                };
                counts[l as usize][slot] += 1;
            }
        }
        let mut csv = String::from("label,untested,accepted,rejected\n");
        for (l, c) in counts.iter().enumerate() {
            if l as u8 != label::NONE && c.iter().sum::<usize>() > 0 {
                let _ = writeln!(csv, "{l},{},{},{}", c[0], c[1], c[2]);
            }
        }
        run.write("mask_labels.csv", &csv)?;
        if !pixels.is_empty() {
            run.write("pixel_scores.csv", &pixel_scores(&state, &scene, pixels)?)?;
        }
    }
    let (u, a, r) = mask.counts();
    println!("untested {u}, accepted {a}, rejected {r}");
    Ok(())
}

fn parse_pixel(text: &str, scene: &Scene) -> Result<(usize, usize, usize)> {
    let bad = || Error::Validation(format!("bad pixel '{text}', expected VIEW,X,Y inside the scene"));
    let v: Vec<usize> = parse_list(text).map_err(|_| bad())?;
    let &[view, x, y] = v.as_slice() else { return Err(bad()) };
    let cam = scene.views.get(view).ok_or_else(bad)?;
    if x >= cam.width || y >= cam.height {
        return Err(bad());
    }
    Ok((view, x, y))
}

/// Per-neighbor NCC of selected pixels under the checkpoint's rendered
/// plane, one row per neighbor.
fn pixel_scores(state: &TrainState<f64>, scene: &Scene, pixels: &[String]) -> Result<String> {
    let cfg = &state.config;
    let train_views: Vec<usize> = (0..scene.views.len()).filter(|v| !cfg.exclude_views.contains(v)).collect();
    let mut csv = String::from("view,x,y,state,indicator,depth,neighbor,score\n");
    for text in pixels {
        let (v, x, y) = parse_pixel(text, scene)?;
        let view = &scene.views[v];
        let ray = view.pixel_ray(x as f64, y as f64)?;
        let out = &render_rays(&state.field, &[ray], &cfg.sampling, state.field.sharpness())[0];
        let normal = Vector3::from(out.normal);
        let depth = out.depth / out.weight_sum;
        let neighbors = select_neighbors_among(scene, v, &train_views, cfg.check.neighbors)?;
        let indicator = evaluate_indicator(&scene.views, v, x, y, normal, depth, &neighbors, &cfg.check);
        let state_name = state.mask.get(v, y * view.width + x).name();
        for s in neighbor_scores(&scene.views, v, x, y, normal, depth, &neighbors, &cfg.check) {
            let score = match s.score {
                Ok(c) => format!("{c:.6}"),
                Err(e) => e.as_str().to_string(),
            };
            let _ = writeln!(csv, "{v},{x},{y},{state_name},{indicator:?},{depth:.6},{},{score}", s.view);
        }
    }
    Ok(csv)
}
