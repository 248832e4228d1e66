use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sdfrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdfrecon"))
        .args(args)
        .env("SDFRECON_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    lines[0].to_string()
}

fn make_scene(dir: &Path) {
    assert_ok(&sdfrecon(&[
        "make-synthetic",
        "--primitive",
        "box_room",
        "--set",
        "views=6",
        "--set",
        "width=24",
        "--set",
        "height=18",
        "--set",
        "supersample=1",
        "--seed",
        "3",
        "--out",
        path(dir),
    ]));
}

/// Tiny training run small enough for a smoke test.
fn train(scene: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--scene",
        scene.to_str().unwrap(),
        "--preset",
        "tiny",
        "--set",
        "rays_per_batch=16",
        "--set",
        "total_iters=12",
        "--set",
        "phase_one_iters=6",
        "--set",
        "checkpoint_every=5",
        "--set",
        "patch_half=2",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    sdfrecon(&args)
}

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    make_scene(&synth);
    let scene = synth.join("scene");
    assert!(scene.join("gt_mesh.ply").is_file());
    assert!(synth.join("manifest.json").is_file());

    let run = tmp.path().join("run");
    assert_ok(&train(&scene, &run, &[]));
    assert!(run.join("final.ckpt").is_file());
    let ckpts = fs::read_dir(run.join("checkpoints")).unwrap().count();
    assert!(ckpts >= 1, "{ckpts} checkpoints");
    let log = fs::read_to_string(run.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["config"]["total_iters"], "12");
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o == "final.ckpt"));

    let ckpt = run.join("final.ckpt");
    let ext = tmp.path().join("ext");
    assert_ok(&sdfrecon(&["extract", "--checkpoint", path(&ckpt), "--resolution", "16", "--out", path(&ext)]));
    assert!(ext.join("mesh.ply").is_file());

    let rend = tmp.path().join("render");
    assert_ok(&sdfrecon(&[
        "render",
        "--checkpoint",
        path(&ckpt),
        "--scene",
        path(&scene),
        "--views",
        "0,2",
        "--weights-stride",
        "8",
        "--out",
        path(&rend),
    ]));
    let psnr = fs::read_to_string(rend.join("psnr.csv")).unwrap();
    assert_eq!(psnr.lines().count(), 3);
    assert!(rend.join("color_000000.png").is_file());
    assert!(rend.join("weights_000002.csv").is_file());

    let normals = tmp.path().join("normals");
    assert_ok(&sdfrecon(&[
        "eval-normals",
        "--checkpoint",
        path(&ckpt),
        "--scene",
        path(&scene),
        "--out",
        path(&normals),
    ]));
    let csv = fs::read_to_string(normals.join("normals.csv")).unwrap();
    assert!(csv.starts_with("view,source,Mean,Median,RMSE,11.25°,22.5°,30°"));
    assert!(csv.contains("all,rendered,"));

    let masks = tmp.path().join("masks");
    assert_ok(&sdfrecon(&[
        "dump-masks",
        "--checkpoint",
        path(&ckpt),
        "--scene",
        path(&scene),
        "--pixel",
        "1,12,9",
        "--out",
        path(&masks),
    ]));
    assert!(masks.join("mask_000005.png").is_file());
    assert!(masks.join("mask_labels.csv").is_file());
    let scores = fs::read_to_string(masks.join("pixel_scores.csv")).unwrap();
    assert!(scores.starts_with("view,x,y,state,indicator,depth,neighbor,score\n1,12,9,"), "{scores}");
    let o = sdfrecon(&["dump-masks", "--checkpoint", path(&ckpt), "--pixel", "1,12,9", "--out", path(&tmp.path().join("m2"))]);
    assert_eq!(o.status.code(), Some(2));

    // Continuing from an intermediate checkpoint reproduces the final loss.
    let resumed = tmp.path().join("resumed");
    let mid = run.join("checkpoints").join("step_0000010.ckpt");
    assert_ok(&sdfrecon(&[
        "train",
        "--scene",
        path(&scene),
        "--resume",
        path(&mid),
        "--out",
        path(&resumed),
    ]));
    let o = train(&scene, &tmp.path().join("bad_resume"), &["--resume", path(&mid)]);
    assert_eq!(o.status.code(), Some(2));
    let last = |p: &Path| fs::read_to_string(p.join("log.csv")).unwrap().lines().last().unwrap().to_string();
    assert_eq!(last(&run), last(&resumed));
}

#[test]
fn eval_mesh_against_itself_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    make_scene(&synth);
    let gt = synth.join("scene").join("gt_mesh.ply");
    let out = tmp.path().join("eval");
    assert_ok(&sdfrecon(&[
        "eval-mesh",
        "--pred",
        path(&gt),
        "--gt",
        path(&gt),
        "--samples",
        "2000",
        "--out",
        path(&out),
    ]));
    let csv = fs::read_to_string(out.join("geometry.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..5], &["Accu.", "Comp.", "Prec.", "Recall", "F-score"]);
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[4], 1.0);
}

#[test]
fn output_directory_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = tmp.path().join("synth");
    make_scene(&synth);
    let gt = synth.join("scene").join("gt_mesh.ply");
    let out = tmp.path().join("eval");
    let args = |extra: &[&str]| {
        let mut a = vec!["eval-mesh", "--pred", path(&gt), "--gt", path(&gt), "--samples", "500", "--out", path(&out)];
        a.extend_from_slice(extra);
        sdfrecon(&a)
    };
    assert_ok(&args(&[]));
    let first = fs::read_to_string(out.join("geometry.csv")).unwrap();

    let again = args(&[]);
    assert_eq!(again.status.code(), Some(2));
    assert!(stderr_line(&again).starts_with("error[E_VALIDATION]:"));

    fs::write(out.join("stale.txt"), "x").unwrap();
    assert_ok(&args(&["--overwrite"]));
    assert!(!out.join("stale.txt").exists());
    assert_eq!(fs::read_to_string(out.join("geometry.csv")).unwrap(), first);

    // A directory this tool did not write is never replaced.
    let foreign = tmp.path().join("foreign");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("keep.txt"), "x").unwrap();
    let o = sdfrecon(&["eval-mesh", "--pred", path(&gt), "--gt", path(&gt), "--out", path(&foreign), "--overwrite"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(foreign.join("keep.txt").exists());
}

#[test]
fn errors_are_one_line_with_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");

    let o = sdfrecon(&["train", "--scene", path(&missing), "--out", path(&tmp.path().join("a"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("error[E_IO]:"));

    let o = sdfrecon(&["make-synthetic", "--primitive", "torus", "--out", path(&tmp.path().join("b"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[E_VALIDATION]:"));

    let synth = tmp.path().join("synth");
    make_scene(&synth);
    let o = train(&synth.join("scene"), &tmp.path().join("c"), &["--set", "bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[E_CONFIG]:"));

    let o = Command::new(env!("CARGO_BIN_EXE_sdfrecon"))
        .args(["eval-mesh", "--pred", "a.ply", "--gt", "b.ply", "--out", path(&tmp.path().join("d"))])
        .env("SDFRECON_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_fixes_generated_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    make_scene(&a);
    make_scene(&b);
    for f in ["image/000001.png", "normal/000004.nrm", "gt_mesh.ply"] {
        assert_eq!(
            fs::read(a.join("scene").join(f)).unwrap(),
            fs::read(b.join("scene").join(f)).unwrap(),
            "{f}"
        );
    }
}
