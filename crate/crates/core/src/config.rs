//! Pipeline configuration: a plain `key = value` file (`#` comments) with
//! command-line overrides. Every key has a default; unknown keys, bad values
//! and failed module checks are all reported together.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use crate::detection::{
    ClassScores, CombineRule, DetectionParams, FixedClassifier, HeuristicClassifier, LabelThresholds, MatchRule,
    PatchClassifier, ProcessClassifier, TcpClassifier,
};
use crate::error::{Error, Result};
use crate::geometry::Axis;
use crate::segmentation::{HeightComparison, SegmentationParams};
use crate::stereo::{DisparityRange, SgmParams, StereoParams};

/// Which patch classifier the detector talks to.
#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierChoice {
    Heuristic,
    /// Same five scores for every patch.
    Fixed([f64; 5]),
    /// Spawned process speaking the patch protocol on its standard streams.
    Process(String),
    /// TCP endpoint `host:port` speaking the patch protocol.
    Tcp(String),
}

impl FromStr for ClassifierChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "heuristic" {
            return Ok(Self::Heuristic);
        }
        match s.split_once(':') {
            Some(("process", cmd)) if !cmd.trim().is_empty() => Ok(Self::Process(cmd.trim().to_string())),
            Some(("tcp", addr)) if !addr.trim().is_empty() => Ok(Self::Tcp(addr.trim().to_string())),
            Some(("fixed", v)) => {
                let vals: Vec<f64> = v
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| format!("bad fixed scores `{v}`"))?;
                let arr: [f64; 5] = vals.try_into().map_err(|_| "fixed scores need 5 values".to_string())?;
                Ok(Self::Fixed(arr))
            }
            _ => Err(format!(
                "expected heuristic, fixed:<5 scores>, process:<command> or tcp:<host:port>, got `{s}`"
            )),
        }
    }
}

impl std::fmt::Display for ClassifierChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Heuristic => f.write_str("heuristic"),
            Self::Fixed(s) => write!(f, "fixed:{},{},{},{},{}", s[0], s[1], s[2], s[3], s[4]),
            Self::Process(c) => write!(f, "process:{c}"),
            Self::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // stereo
    pub disparity_min: u32,
    pub disparity_max: u32,
    pub census_window: u32,
    pub sgm_p1: u32,
    pub sgm_p2: u32,
    pub uniqueness_ratio: Option<f64>,
    pub lr_threshold: Option<f64>,
    pub subpixel: bool,
    // point selection
    pub lateral_axis: Axis,
    pub lateral_min: f64,
    pub lateral_max: f64,
    pub frame_voxel: f64,
    pub outlier_k: usize,
    pub outlier_std: f64,
    // mapping
    pub merge_cell: f64,
    // segmentation
    pub cell_side: f64,
    pub th_p: f64,
    pub th_h: f64,
    pub height_comparison: HeightComparison,
    pub ground_height: f64,
    pub plant_count: usize,
    pub plant_spacing: f64,
    pub row_axis: Axis,
    // volume
    pub og_deltas: Vec<f64>,
    // detection
    pub window: u32,
    pub stride: u32,
    pub threshold: f64,
    pub close_diameter: u32,
    pub min_area: usize,
    pub combine: CombineRule,
    pub label_threshold_bunch: f64,
    pub label_threshold_pole: f64,
    pub label_threshold_wood: f64,
    pub match_rule: MatchRule,
    pub classifier: ClassifierChoice,
    pub classifier_input: Option<u32>,
    pub classifier_timeout: f64,
    // synthetic data
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sgm = SgmParams::default();
        let seg = SegmentationParams::default();
        let det = DetectionParams::default();
        let lt = LabelThresholds::default();
        Self {
            disparity_min: DisparityRange::default().min(),
            disparity_max: DisparityRange::default().max(),
            census_window: 5,
            sgm_p1: sgm.p1,
            sgm_p2: sgm.p2,
            uniqueness_ratio: sgm.uniqueness_ratio,
            lr_threshold: sgm.lr_threshold,
            subpixel: sgm.subpixel,
            lateral_axis: Axis::X,
            lateral_min: -0.6,
            lateral_max: 0.6,
            frame_voxel: 0.01,
            outlier_k: 10,
            outlier_std: 2.0,
            merge_cell: 0.01,
            cell_side: seg.cell_side,
            th_p: seg.th_p,
            th_h: seg.th_h,
            height_comparison: seg.height_comparison,
            ground_height: 0.0,
            plant_count: 54,
            plant_spacing: 0.9,
            row_axis: Axis::Y,
            og_deltas: vec![0.05, 0.1],
            window: det.window,
            stride: det.stride,
            threshold: det.threshold,
            close_diameter: det.close_diameter,
            min_area: det.min_area,
            combine: det.combine,
            label_threshold_bunch: lt.bunch,
            label_threshold_pole: lt.pole,
            label_threshold_wood: lt.wood,
            match_rule: MatchRule::Overlap,
            classifier: ClassifierChoice::Heuristic,
            classifier_input: None,
            classifier_timeout: 10.0,
            seed: 1,
        }
    }
}

/// Every configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("disparity_min", "smallest disparity searched (px)"),
    ("disparity_max", "largest disparity searched (px)"),
    ("census_window", "census window side, odd, 3..=7"),
    ("sgm_p1", "SGM penalty for ±1 disparity changes"),
    ("sgm_p2", "SGM penalty for larger disparity jumps"),
    ("uniqueness_ratio", "uniqueness ratio in (0, 1], or none"),
    ("lr_threshold", "left-right consistency tolerance (px), or none"),
    ("subpixel", "parabola sub-pixel refinement (true/false)"),
    ("lateral_axis", "vehicle axis of the lateral point-selection band"),
    ("lateral_min", "lower bound of the lateral band (m)"),
    ("lateral_max", "upper bound of the lateral band (m)"),
    ("frame_voxel", "per-frame box grid filter cell (m), 0 disables"),
    ("outlier_k", "neighbours of the statistical outlier filter, 0 disables"),
    ("outlier_std", "standard-deviation multiplier of the outlier filter"),
    ("merge_cell", "overlap merge grid step when stitching (m)"),
    ("cell_side", "segmentation grid cell side (m)"),
    ("th_p", "minimum fraction of positive-GRVI points per canopy cell"),
    ("th_h", "cell mean-height threshold above ground (m)"),
    ("height_comparison", "canopy cells lie below or above th_h"),
    ("ground_height", "ground level subtracted from heights (m)"),
    ("plant_count", "number of plants in the row (k-means k)"),
    ("plant_spacing", "nominal distance between plants (m)"),
    ("row_axis", "map axis along the row"),
    ("og_deltas", "comma-separated occupancy-grid voxel sides (m)"),
    ("window", "detection patch side (px)"),
    ("stride", "detection patch step (px), at most the window"),
    ("threshold", "probability-map binarization threshold"),
    ("close_diameter", "closing disk diameter (px), odd"),
    ("min_area", "smallest kept component (px)"),
    ("combine", "overlapping patch scores: mean or max"),
    ("label_threshold_bunch", "patch labeling bunch fraction"),
    ("label_threshold_pole", "patch labeling pole fraction"),
    ("label_threshold_wood", "patch labeling wood fraction"),
    ("match_rule", "detection matching: overlap or iou:<threshold>"),
    ("classifier", "heuristic, fixed:<5 scores>, process:<command> or tcp:<host:port>"),
    ("classifier_input", "classifier input side (px; patches are upscaled), or none"),
    ("classifier_timeout", "seconds to wait for each classifier response"),
    ("seed", "seed of synthetic data and dataset splits"),
];

fn opt_f64(v: &str) -> std::result::Result<Option<f64>, String> {
    match v {
        "none" | "off" => Ok(None),
        _ => v.parse().map(Some).map_err(|_| format!("expected a number or none, got `{v}`")),
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse `{v}`"))
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), |x| x.to_string())
}

fn axis_name(a: Axis) -> &'static str {
    match a {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

impl PipelineConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "disparity_min" => self.disparity_min = parse(v)?,
            "disparity_max" => self.disparity_max = parse(v)?,
            "census_window" => self.census_window = parse(v)?,
            "sgm_p1" => self.sgm_p1 = parse(v)?,
            "sgm_p2" => self.sgm_p2 = parse(v)?,
            "uniqueness_ratio" => self.uniqueness_ratio = opt_f64(v)?,
            "lr_threshold" => self.lr_threshold = opt_f64(v)?,
            "subpixel" => self.subpixel = parse(v)?,
            "lateral_axis" => self.lateral_axis = v.parse().map_err(|e: Error| e.to_string())?,
            "lateral_min" => self.lateral_min = parse(v)?,
            "lateral_max" => self.lateral_max = parse(v)?,
            "frame_voxel" => self.frame_voxel = parse(v)?,
            "outlier_k" => self.outlier_k = parse(v)?,
            "outlier_std" => self.outlier_std = parse(v)?,
            "merge_cell" => self.merge_cell = parse(v)?,
            "cell_side" => self.cell_side = parse(v)?,
            "th_p" => self.th_p = parse(v)?,
            "th_h" => self.th_h = parse(v)?,
            "height_comparison" => self.height_comparison = v.parse().map_err(|e: Error| e.to_string())?,
            "ground_height" => self.ground_height = parse(v)?,
            "plant_count" => self.plant_count = parse(v)?,
            "plant_spacing" => self.plant_spacing = parse(v)?,
            "row_axis" => self.row_axis = v.parse().map_err(|e: Error| e.to_string())?,
            "og_deltas" => {
                self.og_deltas = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(s.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "window" => self.window = parse(v)?,
            "stride" => self.stride = parse(v)?,
            "threshold" => self.threshold = parse(v)?,
            "close_diameter" => self.close_diameter = parse(v)?,
            "min_area" => self.min_area = parse(v)?,
            "combine" => self.combine = v.parse().map_err(|e: Error| e.to_string())?,
            "label_threshold_bunch" => self.label_threshold_bunch = parse(v)?,
            "label_threshold_pole" => self.label_threshold_pole = parse(v)?,
            "label_threshold_wood" => self.label_threshold_wood = parse(v)?,
            "match_rule" => {
                self.match_rule = match v {
                    "overlap" => MatchRule::Overlap,
                    _ => match v.strip_prefix("iou:") {
                        Some(t) => MatchRule::Iou(parse(t)?),
                        None => return Err(format!("expected overlap or iou:<threshold>, got `{v}`")),
                    },
                }
            }
            "classifier" => self.classifier = v.parse()?,
            "classifier_input" => self.classifier_input = if v == "none" { None } else { Some(parse(v)?) },
            "classifier_timeout" => self.classifier_timeout = parse(v)?,
            "seed" => self.seed = parse(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Text form of one key's current value.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "disparity_min" => self.disparity_min.to_string(),
            "disparity_max" => self.disparity_max.to_string(),
            "census_window" => self.census_window.to_string(),
            "sgm_p1" => self.sgm_p1.to_string(),
            "sgm_p2" => self.sgm_p2.to_string(),
            "uniqueness_ratio" => fmt_opt(&self.uniqueness_ratio),
            "lr_threshold" => fmt_opt(&self.lr_threshold),
            "subpixel" => self.subpixel.to_string(),
            "lateral_axis" => axis_name(self.lateral_axis).into(),
            "lateral_min" => self.lateral_min.to_string(),
            "lateral_max" => self.lateral_max.to_string(),
            "frame_voxel" => self.frame_voxel.to_string(),
            "outlier_k" => self.outlier_k.to_string(),
            "outlier_std" => self.outlier_std.to_string(),
            "merge_cell" => self.merge_cell.to_string(),
            "cell_side" => self.cell_side.to_string(),
            "th_p" => self.th_p.to_string(),
            "th_h" => self.th_h.to_string(),
            "height_comparison" => self.height_comparison.to_string(),
            "ground_height" => self.ground_height.to_string(),
            "plant_count" => self.plant_count.to_string(),
            "plant_spacing" => self.plant_spacing.to_string(),
            "row_axis" => axis_name(self.row_axis).into(),
            "og_deltas" => self.og_deltas.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            "window" => self.window.to_string(),
            "stride" => self.stride.to_string(),
            "threshold" => self.threshold.to_string(),
            "close_diameter" => self.close_diameter.to_string(),
            "min_area" => self.min_area.to_string(),
            "combine" => self.combine.to_string(),
            "label_threshold_bunch" => self.label_threshold_bunch.to_string(),
            "label_threshold_pole" => self.label_threshold_pole.to_string(),
            "label_threshold_wood" => self.label_threshold_wood.to_string(),
            "match_rule" => match self.match_rule {
                MatchRule::Overlap => "overlap".into(),
                MatchRule::Iou(t) => format!("iou:{t}"),
            },
            "classifier" => self.classifier.to_string(),
            "classifier_input" => fmt_opt(&self.classifier_input),
            "classifier_timeout" => self.classifier_timeout.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` text and `key=value` overrides on top of the
    /// defaults, then validates. Every problem is listed in one error.
    pub fn load(text: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        if let Some(text) = text {
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                match line.split_once('=') {
                    Some((k, v)) => {
                        if let Err(e) = cfg.set(k.trim(), v) {
                            problems.push(format!("line {}: {}: {e}", i + 1, k.trim()));
                        }
                    }
                    None => problems.push(format!("line {}: expected `key = value`", i + 1)),
                }
            }
        }
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v) {
                        problems.push(format!("--set {}: {e}", k.trim()));
                    }
                }
                None => problems.push(format!("--set `{o}`: expected key=value")),
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load_file(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).map_err(|e| Error::io(p, e)))
            .transpose()?;
        Self::load(text.as_deref(), overrides)
    }

    /// Module-level checks, one message per offending key.
    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |key: &str, r: Result<()>| {
            if let Err(e) = r {
                p.push(format!("{key}: {e}"));
            }
        };
        check("disparity_min", DisparityRange::new(self.disparity_min, self.disparity_max).map(|_| ()));
        let mut sgm = self.sgm_params();
        check("sgm_p1", sgm.validate());
        sgm.p1 = 1;
        sgm.p2 = 2;
        check("uniqueness_ratio", sgm.validate());
        check(
            "census_window",
            if self.census_window % 2 == 1 && (3..=7).contains(&self.census_window) {
                Ok(())
            } else {
                Err(Error::param(format!("{} is not odd in 3..=7", self.census_window)))
            },
        );
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{v} must be positive")))
            }
        };
        check(
            "lateral_min",
            if self.lateral_min < self.lateral_max {
                Ok(())
            } else {
                Err(Error::param("band is empty or inverted"))
            },
        );
        check(
            "frame_voxel",
            if self.frame_voxel >= 0.0 && self.frame_voxel.is_finite() {
                Ok(())
            } else {
                Err(Error::param("must be ≥ 0"))
            },
        );
        check("outlier_std", positive(self.outlier_std));
        check("merge_cell", positive(self.merge_cell));
        check("cell_side", positive(self.cell_side));
        check("th_p", self.segmentation_params().validate());
        check("plant_spacing", positive(self.plant_spacing));
        check(
            "plant_count",
            if self.plant_count > 0 {
                Ok(())
            } else {
                Err(Error::param("must be at least 1"))
            },
        );
        check(
            "og_deltas",
            if self.og_deltas.is_empty() {
                Err(Error::param("at least one δ required"))
            } else {
                self.og_deltas.iter().try_for_each(|&d| positive(d))
            },
        );
        check("window", self.detection_params().validate());
        check(
            "stride",
            if self.stride >= 1 && self.stride <= self.window {
                Ok(())
            } else {
                Err(Error::param(format!("{} must be in 1..={}", self.stride, self.window)))
            },
        );
        for (k, v) in [
            ("label_threshold_bunch", self.label_threshold_bunch),
            ("label_threshold_pole", self.label_threshold_pole),
            ("label_threshold_wood", self.label_threshold_wood),
        ] {
            check(
                k,
                if (0.0..1.0).contains(&v) {
                    Ok(())
                } else {
                    Err(Error::param("must lie in [0, 1)"))
                },
            );
        }
        if let MatchRule::Iou(t) = self.match_rule {
            check(
                "match_rule",
                if t > 0.0 && t <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::param("IoU threshold must lie in (0, 1]"))
                },
            );
        }
        if let ClassifierChoice::Fixed(s) = self.classifier {
            check("classifier", ClassScores::new(s).map(|_| ()));
        }
        if let Some(n) = self.classifier_input {
            check(
                "classifier_input",
                if n >= self.window {
                    Ok(())
                } else {
                    Err(Error::param(format!("{n} is smaller than the window; patches are only upscaled")))
                },
            );
        }
        check("classifier_timeout", positive(self.classifier_timeout));
        p
    }

    /// All keys with their current values, in file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, desc) in CONFIG_KEYS {
            let _ = writeln!(s, "# {desc}\n{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn sgm_params(&self) -> SgmParams {
        SgmParams {
            p1: self.sgm_p1,
            p2: self.sgm_p2,
            aggregate: true,
            uniqueness_ratio: self.uniqueness_ratio,
            lr_threshold: self.lr_threshold,
            subpixel: self.subpixel,
        }
    }

    pub fn stereo_params(&self) -> Result<StereoParams> {
        Ok(StereoParams {
            range: DisparityRange::new(self.disparity_min, self.disparity_max)?,
            census_window: self.census_window,
            sgm: self.sgm_params(),
        })
    }

    pub fn segmentation_params(&self) -> SegmentationParams {
        SegmentationParams {
            cell_side: self.cell_side,
            th_p: self.th_p,
            th_h: self.th_h,
            height_comparison: self.height_comparison,
        }
    }

    pub fn detection_params(&self) -> DetectionParams {
        DetectionParams {
            window: self.window,
            stride: self.stride,
            threshold: self.threshold,
            close_diameter: self.close_diameter,
            min_area: self.min_area,
            combine: self.combine,
            ..Default::default()
        }
    }

    pub fn label_thresholds(&self) -> LabelThresholds {
        LabelThresholds {
            bunch: self.label_threshold_bunch,
            pole: self.label_threshold_pole,
            wood: self.label_threshold_wood,
        }
    }

    pub fn row_axis_vector(&self) -> nalgebra::Vector3<f64> {
        let mut v = nalgebra::Vector3::zeros();
        v[self.row_axis.index()] = 1.0;
        v
    }

    /// Instantiates the configured classifier.
    pub fn build_classifier(&self) -> Result<Box<dyn PatchClassifier>> {
        let timeout = Duration::from_secs_f64(self.classifier_timeout);
        Ok(match &self.classifier {
            ClassifierChoice::Heuristic => Box::new(HeuristicClassifier::default()),
            ClassifierChoice::Fixed(s) => Box::new(FixedClassifier {
                scores: ClassScores::new(*s)?,
                input_size: self.classifier_input,
            }),
            ClassifierChoice::Process(cmd) => {
                let mut parts = cmd.split_whitespace().map(String::from);
                let program = parts.next().ok_or_else(|| Error::Config("empty classifier command".into()))?;
                let args: Vec<String> = parts.collect();
                Box::new(ProcessClassifier::spawn(&program, &args, self.classifier_input, timeout)?)
            }
            ClassifierChoice::Tcp(addr) => Box::new(TcpClassifier::connect(addr, self.classifier_input, timeout)?),
        })
    }
}
