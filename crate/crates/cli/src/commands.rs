use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vitis::config::{ClassifierChoice, PipelineConfig};
use vitis::detection::{
    cluster_metrics, detect_bunches, detections_json, draw_boxes, evaluate_detection, load_label_png, patch_metrics,
    save_label_png, serve_classifier, split_dataset, truth_regions, ClassLabel, ClassMetrics, ClusterCounts,
    ClusterMetrics, ConfusionCounts,
};
use vitis::error::{Error, Result};
use vitis::geometry::{ColoredPointCloud, Point};
use vitis::mapping::{load_trajectory, save_trajectory, FramePose};
use vitis::par;
use vitis::pipeline::{build_row_map, detection_report, reconstruct_frame, segment_row, volume_csv};
use vitis::ply::{load_ply, save_ply};
use vitis::segmentation::{centroids_json, save_labeling_ply};
use vitis::stereo::{load_calibration, write_calibration, RectifiedStereoPair};
use vitis::synth::{
    generate_annotated_image, generate_row, random_scene, render_frame, row_frame_positions, CameraRig,
    SyntheticRowSpec,
};
use vitis::volume::{plant_volumes, summarize, summary_json};

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::Serialization(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_luma8())
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

fn save_image(img: &impl SaveImage, path: &Path) -> Result<()> {
    img.save_to(path).map_err(|e| image_err(path, e))
}

trait SaveImage {
    fn save_to(&self, path: &Path) -> image::ImageResult<()>;
}

impl SaveImage for GrayImage {
    fn save_to(&self, path: &Path) -> image::ImageResult<()> {
        self.save(path)
    }
}

impl SaveImage for RgbImage {
    fn save_to(&self, path: &Path) -> image::ImageResult<()> {
        self.save(path)
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// `prefix_<digits>.ext` → digits.
fn frame_index(path: &Path, prefix: &str) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    stem.strip_prefix(prefix)?.parse().ok()
}

// ---------------------------------------------------------------- reconstruct

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    /// Directory of `left_N.pgm` / `right_N.pgm` pairs with optional `color_N.png`.
    #[arg(long)]
    input: PathBuf,
    /// Stereo calibration file.
    #[arg(long)]
    calibration: PathBuf,
    /// Output directory for `frame_N.ply` and `reconstruct_summary.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct FrameRecord {
    index: u64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    triangulated: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outliers_removed: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    invalid_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct ReconstructSummary {
    frame_count: usize,
    reconstructed: usize,
    warning: bool,
    frames: Vec<FrameRecord>,
}

struct FrameFiles {
    left: Option<PathBuf>,
    right: Option<PathBuf>,
    color: Option<PathBuf>,
}

pub fn reconstruct(a: &ReconstructArgs, cfg: &PipelineConfig) -> Result<()> {
    let calib = load_calibration(&a.calibration)?;
    let mut frames: BTreeMap<u64, FrameFiles> = BTreeMap::new();
    for p in list_dir(&a.input)? {
        let blank = || FrameFiles {
            left: None,
            right: None,
            color: None,
        };
        if let Some(i) = frame_index(&p, "left_") {
            frames.entry(i).or_insert_with(blank).left = Some(p);
        } else if let Some(i) = frame_index(&p, "right_") {
            frames.entry(i).or_insert_with(blank).right = Some(p);
        } else if let Some(i) = frame_index(&p, "color_") {
            frames.entry(i).or_insert_with(blank).color = Some(p);
        }
    }
    let frames: Vec<(u64, FrameFiles)> = frames.into_iter().filter(|(_, f)| f.left.is_some() || f.right.is_some()).collect();
    if frames.is_empty() {
        return Err(Error::EmptyInput(format!("no stereo frames in {}", a.input.display())));
    }
    create_dir(&a.output)?;
    let process = |i: u64, f: &FrameFiles| -> Result<FrameRecord> {
        let (Some(l), Some(r)) = (&f.left, &f.right) else {
            return Err(Error::Validation(format!("frame {i} is missing its {} image", if f.left.is_none() { "left" } else { "right" })));
        };
        let left = load_gray(l)?;
        let right = load_gray(r)?;
        let color = match &f.color {
            Some(c) => load_rgb(c)?,
            None => image::DynamicImage::ImageLuma8(left.clone()).to_rgb8(),
        };
        let pair = RectifiedStereoPair::new(left, right)?;
        let rec = reconstruct_frame(&pair, &color, &calib, cfg)?;
        save_ply(&rec.cloud, a.output.join(format!("frame_{i:04}.ply")))?;
        Ok(FrameRecord {
            index: i,
            status: "ok",
            points: Some(rec.cloud.len()),
            triangulated: Some(rec.triangulated),
            outliers_removed: Some(rec.outliers_removed),
            invalid_fraction: Some(rec.invalid_fraction),
            error: None,
        })
    };
    let records: Vec<FrameRecord> = par::map_slice(&frames, |(i, f)| {
        process(*i, f).unwrap_or_else(|e| FrameRecord {
            index: *i,
            status: "skipped",
            points: None,
            triangulated: None,
            outliers_removed: None,
            invalid_fraction: None,
            error: Some(e.to_string()),
        })
    });
    for r in records.iter().filter(|r| r.error.is_some()) {
        log::warn!("frame {} skipped: {}", r.index, r.error.as_deref().unwrap_or(""));
    }
    let reconstructed = records.iter().filter(|r| r.error.is_none()).count();
    let summary = ReconstructSummary {
        frame_count: records.len(),
        reconstructed,
        warning: reconstructed < records.len(),
        frames: records,
    };
    write_text(&a.output.join("reconstruct_summary.json"), &to_json(&summary)?)?;
    if reconstructed == 0 {
        return Err(Error::Validation(format!("all {} frames failed", summary.frame_count)));
    }
    Ok(())
}

// ------------------------------------------------------------------------ map

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Directory of `frame_N.ply` clouds in the vehicle frame.
    #[arg(long)]
    input: PathBuf,
    /// Trajectory: `frame_index` and a row-major 3×4 pose per line.
    #[arg(long)]
    trajectory: PathBuf,
    /// Output row map PLY.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct MapSummary {
    frames: usize,
    points: usize,
    merge_cell: f64,
}

pub fn map(a: &MapArgs, cfg: &PipelineConfig) -> Result<()> {
    let poses: BTreeMap<u64, FramePose> = load_trajectory(&a.trajectory)?.into_iter().map(|p| (p.frame_index, p)).collect();
    let files: Vec<(u64, PathBuf)> = list_dir(&a.input)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "ply"))
        .filter_map(|p| frame_index(&p, "frame_").map(|i| (i, p)))
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no frame_N.ply clouds in {}", a.input.display())));
    }
    if let Some((i, _)) = files.iter().find(|(i, _)| !poses.contains_key(i)) {
        return Err(Error::Validation(format!("trajectory has no pose for frame {i}")));
    }
    let clouds = par::map_slice(&files, |(_, p)| load_ply(p));
    let frames: Vec<(ColoredPointCloud, FramePose)> = clouds
        .into_iter()
        .zip(&files)
        .map(|(c, (i, _))| c.map(|c| (c, poses[i])))
        .collect::<Result<_>>()?;
    let row = build_row_map(&frames, cfg)?;
    if let Some(dir) = a.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_ply(&row.cloud, &a.output)?;
    print!(
        "{}",
        to_json(&MapSummary {
            frames: row.frame_count,
            points: row.cloud.len(),
            merge_cell: row.merge_cell,
        })?
    );
    Ok(())
}

// -------------------------------------------------------------------- segment

#[derive(Args, Debug)]
pub struct SegmentArgs {
    /// Row map PLY.
    #[arg(long)]
    input: PathBuf,
    /// Output directory for `labeled.ply`, `clusters.csv` and `centroids.json`.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Serialize)]
struct SegmentSummary {
    points: usize,
    canopy_points: usize,
    clusters: usize,
    iterations: usize,
    converged: bool,
}

pub fn segment(a: &SegmentArgs, cfg: &PipelineConfig) -> Result<()> {
    let cloud = load_ply(&a.input)?;
    let seg = segment_row(&cloud, cfg)?;
    create_dir(&a.output)?;
    save_labeling_ply(&cloud, &seg.labeling, &a.output.join("labeled.ply"))?;
    write_text(&a.output.join("clusters.csv"), &seg.clusters_csv())?;
    write_text(&a.output.join("centroids.json"), &centroids_json(&seg.kmeans.clusters)?)?;
    let summary = SegmentSummary {
        points: cloud.len(),
        canopy_points: seg.canopy_indices.len(),
        clusters: seg.kmeans.clusters.len(),
        iterations: seg.kmeans.iterations,
        converged: seg.kmeans.converged,
    };
    write_text(&a.output.join("segment_summary.json"), &to_json(&summary)?)?;
    Ok(())
}

// -------------------------------------------------------------------- volumes

#[derive(Args, Debug)]
pub struct VolumesArgs {
    /// Row map PLY the clusters index into.
    #[arg(long)]
    input: PathBuf,
    /// `point_index,cluster_id` CSV from `segment`.
    #[arg(long)]
    clusters: PathBuf,
    /// Optional manual reference volumes, one number per line.
    #[arg(long)]
    manual: Option<PathBuf>,
    /// Output directory for `volumes.csv` and `volume_summary.json`.
    #[arg(long)]
    output: PathBuf,
}

fn parse_clusters_csv(text: &str, n_points: usize) -> Result<Vec<Vec<usize>>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Validation(format!("clusters line {}: expected point_index,cluster_id", ln + 1));
        let (p, c) = line.split_once(',').ok_or_else(bad)?;
        let p: usize = p.trim().parse().map_err(|_| bad())?;
        let c: usize = c.trim().parse().map_err(|_| bad())?;
        if p >= n_points {
            return Err(Error::Validation(format!("clusters line {}: point {p} outside the {n_points}-point map", ln + 1)));
        }
        groups.entry(c).or_default().push(p);
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput("cluster file has no assignments".into()));
    }
    Ok(groups.into_values().collect())
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.parse().map_err(|_| Error::Validation(format!("{what}: `{l}` is not a number"))))
        .collect()
}

pub fn volumes(a: &VolumesArgs, cfg: &PipelineConfig) -> Result<()> {
    let cloud = load_ply(&a.input)?;
    let text = std::fs::read_to_string(&a.clusters).map_err(io_err(&a.clusters))?;
    let groups = parse_clusters_csv(&text, cloud.len())?;
    let plants: Vec<Vec<Point>> = groups
        .iter()
        .map(|g| g.iter().map(|&i| cloud.points()[i].position).collect())
        .collect();
    let rows = plant_volumes(&plants, &cfg.og_deltas)?;
    let manual = a
        .manual
        .as_ref()
        .map(|p| std::fs::read_to_string(p).map_err(io_err(p)).and_then(|t| parse_numbers(&t, "manual volumes")))
        .transpose()?;
    create_dir(&a.output)?;
    write_text(&a.output.join("volumes.csv"), &volume_csv(&rows))?;
    write_text(&a.output.join("volume_summary.json"), &summary_json(&summarize(&rows, manual.as_deref())?)?)?;
    Ok(())
}

// --------------------------------------------------------------------- detect

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Image file or directory of images (`*_labels.png` files are ignored).
    #[arg(long)]
    input: PathBuf,
    /// Output directory for `<name>.detections.json`.
    #[arg(long)]
    output: PathBuf,
    /// Also write `<name>.boxes.png` with red detection boxes.
    #[arg(long)]
    overlay: bool,
}

fn is_image(p: &Path) -> bool {
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    matches!(ext.as_str(), "png" | "ppm" | "pnm") && !stem.ends_with("_labels") && !stem.ends_with(".boxes")
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    let files = if input.is_dir() {
        list_dir(input)?.into_iter().filter(|p| is_image(p)).collect()
    } else {
        vec![input.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no images in {}", input.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

pub fn detect(a: &DetectArgs, cfg: &PipelineConfig) -> Result<()> {
    let files = image_inputs(&a.input)?;
    let classifier = cfg.build_classifier()?;
    let params = cfg.detection_params();
    create_dir(&a.output)?;
    for f in files {
        let img = load_rgb(&f)?;
        let out = detect_bunches(&img, classifier.as_ref(), &params)?;
        let name = stem(&f);
        write_text(&a.output.join(format!("{name}.detections.json")), &detections_json(&out.detections))?;
        if a.overlay {
            save_image(&draw_boxes(&img, &out.boxes()), &a.output.join(format!("{name}.boxes.png")))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------- synth

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Rendered stereo frames, calibration, trajectory and truth cloud of a row.
    Row(SynthRowArgs),
    /// Annotated color images with planted bunches.
    Images(SynthImagesArgs),
}

#[derive(Args, Debug)]
pub struct SynthRowArgs {
    #[arg(long)]
    output: PathBuf,
    /// Plants in the row (defaults to the `plant_count` key).
    #[arg(long)]
    plants: Option<usize>,
    /// Rendered frames (default: plants + 1).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 640)]
    width: u32,
    #[arg(long, default_value_t = 480)]
    height: u32,
}

#[derive(Args, Debug)]
pub struct SynthImagesArgs {
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    min_bunches: usize,
    #[arg(long, default_value_t = 20)]
    max_bunches: usize,
    #[arg(long, default_value_t = 960)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
}

#[derive(Serialize)]
struct RowTruth<'a> {
    spec: &'a SyntheticRowSpec,
    rig: &'a CameraRig,
    plants: &'a [vitis::synth::PlantTruth],
    frame_positions: &'a [f64],
}

pub fn synth(c: &SynthCommand, cfg: &PipelineConfig) -> Result<()> {
    match c {
        SynthCommand::Row(a) => synth_row(a, cfg),
        SynthCommand::Images(a) => synth_images(a, cfg),
    }
}

fn synth_row(a: &SynthRowArgs, cfg: &PipelineConfig) -> Result<()> {
    let spec = SyntheticRowSpec {
        plant_count: a.plants.unwrap_or(cfg.plant_count),
        spacing: cfg.plant_spacing,
        seed: cfg.seed,
        ..Default::default()
    };
    let rig = CameraRig {
        width: a.width,
        height: a.height,
        ..Default::default()
    };
    let n = a.frames.unwrap_or(spec.plant_count + 1);
    let ys = row_frame_positions(&spec, n);
    let frames = a.output.join("frames");
    create_dir(&frames)?;
    let poses = par::map_range(ys.len(), |k| -> Result<FramePose> {
        let f = render_frame(&spec, &rig, ys[k], k as u64)?;
        save_image(&f.left, &frames.join(format!("left_{k:04}.pgm")))?;
        save_image(&f.right, &frames.join(format!("right_{k:04}.pgm")))?;
        save_image(&f.color, &frames.join(format!("color_{k:04}.png")))?;
        Ok(f.pose)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    save_trajectory(&poses, &a.output.join("trajectory.txt"))?;
    write_text(&a.output.join("calibration.txt"), &write_calibration(&rig.calibration()?))?;
    let truth = generate_row(&spec)?;
    save_ply(&truth.cloud, a.output.join("truth.ply"))?;
    let rec = RowTruth {
        spec: &spec,
        rig: &rig,
        plants: &truth.plants,
        frame_positions: &ys,
    };
    write_text(&a.output.join("truth.json"), &to_json(&rec)?)?;
    Ok(())
}

fn synth_images(a: &SynthImagesArgs, cfg: &PipelineConfig) -> Result<()> {
    if a.min_bunches > a.max_bunches {
        return Err(Error::Validation("--min-bunches exceeds --max-bunches".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scenes = (0..a.count)
        .map(|k| random_scene(a.width, a.height, rng.random_range(a.min_bunches..=a.max_bunches), cfg.seed.wrapping_add(k as u64)))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.output)?;
    let done = par::map_slice(&scenes, generate_annotated_image);
    for (k, (img, scene)) in done.into_iter().zip(&scenes).enumerate() {
        let img = img?;
        save_image(&img.image, &a.output.join(format!("image_{k:03}.png")))?;
        save_label_png(&img.labels, &a.output.join(format!("image_{k:03}_labels.png")))?;
        write_text(&a.output.join(format!("image_{k:03}_scene.json")), &to_json(scene)?)?;
    }
    Ok(())
}

// ----------------------------------------------------------------------- eval

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Run detection on annotated images and report patch and cluster metrics.
    Detection(EvalDetectionArgs),
    /// Metrics from confusion and cluster counts given as JSON.
    Counts(EvalCountsArgs),
}

#[derive(Args, Debug)]
pub struct EvalDetectionArgs {
    /// Directory of `<name>.png` images with `<name>_labels.png` truth.
    #[arg(long)]
    input: PathBuf,
    /// Evaluate one split of a seeded 60/20/20 shuffle instead of every image.
    #[arg(long, value_parser = ["all", "train", "validation", "test"], default_value = "all")]
    split: String,
    /// Report file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalCountsArgs {
    /// Patch confusion counts: `{"total": N, "classes": [5 × {tp, fp, tn, fn}]}` in
    /// bunch, pole, wood, leaves, background order.
    #[arg(long)]
    patches: Option<PathBuf>,
    /// Cluster counts: `{"gc", "t_gc", "f_gc", "n_gc"}`.
    #[arg(long)]
    clusters: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Serialize)]
struct CountsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    patch_metrics: Option<BTreeMap<ClassLabel, ClassMetrics>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cluster_metrics: Option<ClusterMetrics>,
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn eval(c: &EvalCommand, cfg: &PipelineConfig) -> Result<()> {
    match c {
        EvalCommand::Detection(a) => eval_detection(a, cfg),
        EvalCommand::Counts(a) => {
            if a.patches.is_none() && a.clusters.is_none() {
                return Err(Error::Validation("give --patches, --clusters or both".into()));
            }
            let patches = a
                .patches
                .as_ref()
                .map(|p| read_json::<ConfusionCounts>(p).and_then(|c| patch_metrics(&c)))
                .transpose()?;
            let clusters = a
                .clusters
                .as_ref()
                .map(|p| read_json::<ClusterCounts>(p).and_then(|c| cluster_metrics(&c)))
                .transpose()?;
            let report = CountsReport {
                patch_metrics: patches.map(|m| m.into_iter().collect()),
                cluster_metrics: clusters,
            };
            emit(&a.output, &to_json(&report)?)
        }
    }
}

fn eval_detection(a: &EvalDetectionArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut pairs: Vec<(PathBuf, PathBuf)> = image_inputs(&a.input)?
        .into_iter()
        .filter_map(|img| {
            let labels = img.with_file_name(format!("{}_labels.png", stem(&img)));
            labels.exists().then_some((img, labels))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!("no image/label pairs in {}", a.input.display())));
    }
    if a.split != "all" {
        let s = split_dataset(&pairs, cfg.seed)?;
        pairs = match a.split.as_str() {
            "train" => s.train,
            "validation" => s.validation,
            _ => s.test,
        };
    }
    let classifier = cfg.build_classifier()?;
    let params = cfg.detection_params();
    let thresholds = cfg.label_thresholds();
    let evals = pairs
        .iter()
        .map(|(img, lab)| {
            let image = load_rgb(img)?;
            let truth = load_label_png(lab)?;
            let out = detect_bunches(&image, classifier.as_ref(), &params)?;
            evaluate_detection(&out, &truth, &truth_regions(&truth), &thresholds, cfg.match_rule)
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&a.output, &to_json(&detection_report(&evals)?)?)
}

// ------------------------------------------------------------ classify-server

#[derive(Args, Debug)]
pub struct ServerArgs {
    /// Listen on this TCP address instead of serving stdin/stdout.
    #[arg(long)]
    listen: Option<String>,
    /// Stop after this many TCP connections.
    #[arg(long)]
    max_connections: Option<usize>,
}

pub fn classify_server(a: &ServerArgs, cfg: &PipelineConfig) -> Result<()> {
    let classifier = match &cfg.classifier {
        ClassifierChoice::Heuristic | ClassifierChoice::Fixed(_) => cfg.build_classifier()?,
        other => {
            return Err(Error::Config(format!(
                "classify-server serves heuristic or fixed classifiers, not `{other}`"
            )))
        }
    };
    match &a.listen {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            serve_classifier(stdin.lock(), BufWriter::new(stdout.lock()), classifier.as_ref())?;
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(|e| Error::io(addr.as_str(), e))?;
            let local = listener.local_addr().map_err(|e| Error::io(addr.as_str(), e))?;
            println!("listening on {local}");
            std::io::stdout().flush().map_err(|e| Error::io("<stdout>", e))?;
            for (n, conn) in listener.incoming().enumerate() {
                let stream = conn.map_err(|e| Error::io(addr.as_str(), e))?;
                let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io(addr.as_str(), e))?);
                if let Err(e) = serve_classifier(reader, BufWriter::new(stream), classifier.as_ref()) {
                    log::warn!("connection ended with error: {e}");
                }
                if a.max_connections.is_some_and(|m| n + 1 >= m) {
                    break;
                }
            }
        }
    }
    Ok(())
}
