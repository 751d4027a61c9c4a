use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_vitis");

fn vitis(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_lists_every_key_with_defaults() {
    let keys = String::from_utf8(vitis(&["show-config"]).stdout).unwrap();
    let names: Vec<&str> = keys
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once(" = ").map(|(k, _)| k))
        .collect();
    assert!(names.len() > 30);
    for cmd in [
        vec!["--help"],
        vec!["reconstruct", "--help"],
        vec!["map", "--help"],
        vec!["segment", "--help"],
        vec!["volumes", "--help"],
        vec!["detect", "--help"],
        vec!["synth", "row", "--help"],
        vec!["synth", "images", "--help"],
        vec!["eval", "counts", "--help"],
        vec!["eval", "detection", "--help"],
        vec!["classify-server", "--help"],
    ] {
        let o = vitis(&cmd);
        assert_eq!(code(&o), 0, "{cmd:?}");
        let text = String::from_utf8(o.stdout).unwrap();
        for k in &names {
            assert!(text.contains(&format!("  {k} ")), "{cmd:?} help lacks {k}");
        }
        assert!(text.contains("[default: 0.85]"));
    }
}

#[test]
fn config_errors_list_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "sgm_p1 = 500\nth_p = 1.5\n# fine\nwindow = 80\n").unwrap();
    let o = vitis(&["--config", p(&cfg), "--set", "nonsense=1", "--set", "close_diameter=4", "show-config"]);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    for k in ["sgm_p1", "th_p", "nonsense", "window"] {
        assert!(e.contains(k), "{k} missing from {e}");
    }
    assert_eq!(code(&vitis(&["detect"])), 1, "missing required flags is a usage error");
}

#[test]
fn overrides_win_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    std::fs::write(&cfg, "th_h = 0.5\nseed = 7\n").unwrap();
    let o = vitis(&["--config", p(&cfg), "--set", "th_h=0.9", "show-config"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\nth_h = 0.9\n") && text.contains("\nseed = 7\n"));
}

#[test]
fn io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = vitis(&["segment", "--input", p(&dir.path().join("none.ply")), "--output", p(dir.path())]);
    assert_eq!(code(&o), 2);
    let o = vitis(&["--config", p(&dir.path().join("none.cfg")), "show-config"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn eval_counts_reproduces_hand_table() {
    let dir = tempfile::tempdir().unwrap();
    let one = r#"{"tp": 9, "fp": 1, "tn": 89, "fn": 1}"#;
    let patches = format!(r#"{{"total": 100, "classes": [{one}, {one}, {one}, {one}, {one}]}}"#);
    let pf = dir.path().join("p.json");
    let cf = dir.path().join("c.json");
    std::fs::write(&pf, patches).unwrap();
    std::fs::write(&cf, r#"{"gc": 10, "t_gc": 9, "f_gc": 2, "n_gc": 1}"#).unwrap();
    let o = vitis(&["eval", "counts", "--patches", p(&pf), "--clusters", p(&cf)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let b = &r["patch_metrics"]["bunch"];
    let close = |v: &Value, x: f64| (v.as_f64().unwrap() - x).abs() < 1e-9;
    assert!(close(&b["acc"], 0.98));
    assert!(close(&b["bacc"], (0.9 + 89.0 / 90.0) / 2.0));
    assert!(close(&b["precision"], 0.9) && close(&b["recall"], 0.9));
    assert!(close(&b["tnr"], 89.0 / 90.0));
    assert!(close(&r["cluster_metrics"]["acc"], 0.9));
    assert!(close(&r["cluster_metrics"]["precision"], 9.0 / 11.0));

    std::fs::write(&cf, r#"{"gc": 10, "t_gc": 9, "f_gc": 2, "n_gc": 3}"#).unwrap();
    assert_eq!(code(&vitis(&["eval", "counts", "--clusters", p(&cf)])), 1);
}

fn synth_images(dir: &Path, count: &str) {
    let o = vitis(&["--set", "seed=3", "synth", "images", "--output", p(dir), "--count", count]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn detect_through_process_classifier_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    synth_images(&imgs, "1");
    let server = format!("classifier=process:{BIN} --set classifier=fixed:0.9,0.025,0.025,0.025,0.025 classify-server");
    let run = |out: &str| {
        let out = dir.path().join(out);
        let o = vitis(&["--set", &server, "detect", "--input", p(&imgs), "--output", p(&out), "--overlay"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a");
    let b = run("b");
    let ja = std::fs::read(a.join("image_000.detections.json")).unwrap();
    assert_eq!(ja, std::fs::read(b.join("image_000.detections.json")).unwrap());
    // Constant bunch scores everywhere: one box covering the whole image.
    let v: Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["x_min"], 0);
    assert_eq!(v[0]["x_max"], 959);
    assert!(a.join("image_000.boxes.png").exists());
}

#[test]
fn detect_through_tcp_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = dir.path().join("imgs");
    synth_images(&imgs, "1");
    let mut server = Command::new(BIN)
        .args(["classify-server", "--listen", "127.0.0.1:0", "--max-connections", "1"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let tcp = dir.path().join("tcp");
    let o = vitis(&["--set", &format!("classifier=tcp:{addr}"), "detect", "--input", p(&imgs), "--output", p(&tcp)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(server.wait().unwrap().success());
    let local = dir.path().join("local");
    assert_eq!(code(&vitis(&["detect", "--input", p(&imgs), "--output", p(&local)])), 0);
    assert_eq!(
        std::fs::read(tcp.join("image_000.detections.json")).unwrap(),
        std::fs::read(local.join("image_000.detections.json")).unwrap()
    );
}

#[test]
fn eval_detection_report() {
    let dir = tempfile::tempdir().unwrap();
    synth_images(dir.path(), "4");
    let out = dir.path().join("report.json");
    let o = vitis(&["eval", "detection", "--input", p(dir.path()), "--output", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out);
    assert_eq!(r["images"], 4);
    let k = &r["clusters"];
    assert_eq!(k["t_gc"].as_u64().unwrap() + k["n_gc"].as_u64().unwrap(), k["gc"].as_u64().unwrap());
    assert!(r["patch_metrics"]["bunch"]["acc"].as_f64().unwrap() > 0.5);
}

fn small_row(dir: &Path, plants: &str) -> (std::path::PathBuf, Vec<String>) {
    let row = dir.join("row");
    let set = vec![
        "--set".to_string(),
        format!("plant_count={plants}"),
        "--set".into(),
        "height_comparison=above".into(),
    ];
    let mut args: Vec<&str> = set.iter().map(String::as_str).collect();
    args.extend(["synth", "row", "--output", p(&row)]);
    let o = vitis(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (row, set)
}

#[test]
fn reconstruct_skips_bad_frames_and_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (row, _) = small_row(dir.path(), "2");
    let frames = row.join("frames");
    assert_eq!(std::fs::read_dir(&frames).unwrap().count(), 9);
    let calib = row.join("calibration.txt");
    let rec = dir.path().join("rec");
    let o = vitis(&["--jobs", "1", "reconstruct", "--input", p(&frames), "--calibration", p(&calib), "--output", p(&rec)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&rec.join("reconstruct_summary.json"));
    assert_eq!(s["reconstructed"], 3);
    assert_eq!(s["warning"], false);
    for i in 0..3 {
        assert!(rec.join(format!("frame_{i:04}.ply")).exists());
    }

    // Identity trajectory over two frames, then a trajectory missing frame 2.
    let map = dir.path().join("map.ply");
    let traj = row.join("trajectory.txt");
    let o = vitis(&["map", "--input", p(&rec), "--trajectory", p(&traj), "--output", p(&map)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read(&map).unwrap();
    vitis(&["map", "--input", p(&rec), "--trajectory", p(&traj), "--output", p(&map)]);
    assert_eq!(first, std::fs::read(&map).unwrap());
    let short = dir.path().join("short.txt");
    let text = std::fs::read_to_string(&traj).unwrap();
    std::fs::write(&short, text.lines().take(2).collect::<Vec<_>>().join("\n")).unwrap();
    let o = vitis(&["map", "--input", p(&rec), "--trajectory", p(&short), "--output", p(&map)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("frame 2"), "{}", stderr(&o));

    // A corrupt right image and an unpaired left image are skipped.
    std::fs::write(frames.join("right_0001.pgm"), b"P5 garbage").unwrap();
    std::fs::copy(frames.join("left_0000.pgm"), frames.join("left_0009.pgm")).unwrap();
    let rec2 = dir.path().join("rec2");
    let o = vitis(&["reconstruct", "--input", p(&frames), "--calibration", p(&calib), "--output", p(&rec2)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&rec2.join("reconstruct_summary.json"));
    assert_eq!((s["frame_count"].as_u64(), s["reconstructed"].as_u64()), (Some(4), Some(2)));
    assert_eq!(s["warning"], true);
    assert_eq!(
        std::fs::read(rec.join("frame_0000.ply")).unwrap(),
        std::fs::read(rec2.join("frame_0000.ply")).unwrap()
    );

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = vitis(&["reconstruct", "--input", p(&empty), "--calibration", p(&calib), "--output", p(&rec2)]);
    assert_eq!(code(&o), 1);
    let o = vitis(&["reconstruct", "--input", p(&frames), "--calibration", p(&empty.join("c.txt")), "--output", p(&rec2)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn full_synthetic_row_gives_54_plants() {
    let dir = tempfile::tempdir().unwrap();
    let (row, set) = small_row(dir.path(), "54");
    let with = |extra: &[&str]| -> Output {
        let mut args: Vec<&str> = set.iter().map(String::as_str).collect();
        args.extend_from_slice(extra);
        vitis(&args)
    };
    let rec = dir.path().join("rec");
    let map = dir.path().join("map.ply");
    let seg = dir.path().join("seg");
    let vol = dir.path().join("vol");
    for step in [
        vec!["reconstruct", "--input", p(&row.join("frames")), "--calibration", p(&row.join("calibration.txt")), "--output", p(&rec)],
        vec!["map", "--input", p(&rec), "--trajectory", p(&row.join("trajectory.txt")), "--output", p(&map)],
        vec!["segment", "--input", p(&map), "--output", p(&seg)],
        vec!["volumes", "--input", p(&map), "--clusters", p(&seg.join("clusters.csv")), "--output", p(&vol)],
    ] {
        let o = with(&step);
        assert_eq!(code(&o), 0, "{step:?}: {}", stderr(&o));
    }
    assert_eq!(json(&rec.join("reconstruct_summary.json"))["reconstructed"], 55);
    let csv = std::fs::read_to_string(vol.join("volumes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 55);
    assert!(csv.starts_with("plant_id,n_points,og_005,og_010,ch,obb,aabb,height\n"));
    let summary = json(&vol.join("volume_summary.json"));
    assert_eq!(summary["n_plants"], 54);

    let centroids = json(&seg.join("centroids.json"));
    let truth = json(&row.join("truth.json"));
    for (c, t) in centroids.as_array().unwrap().iter().zip(truth["plants"].as_array().unwrap()) {
        let dy = c["centroid"][1].as_f64().unwrap() - t["centre"][1].as_f64().unwrap();
        assert!(dy.abs() < 0.1, "centroid off by {dy}");
    }

    // Idempotent for fixed inputs.
    let vol2 = dir.path().join("vol2");
    with(&["volumes", "--input", p(&map), "--clusters", p(&seg.join("clusters.csv")), "--output", p(&vol2)]);
    assert_eq!(csv, std::fs::read_to_string(vol2.join("volumes.csv")).unwrap());
}
