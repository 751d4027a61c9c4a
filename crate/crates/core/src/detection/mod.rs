//! Sliding-window grape-cluster detection: patch grid and labeling, pluggable
//! five-class patch classification, probability maps, binary morphology,
//! bounding boxes and evaluation metrics.

mod classifier;
mod grid;
mod maps;
mod metrics;
mod pipeline;
mod resize;

use std::fmt;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use classifier::{
    classify_patch, parse_request_header, parse_scores_line, serve_classifier, write_request, write_scores_line,
    FixedClassifier, HeuristicClassifier, PatchClassifier, ProcessClassifier, TcpClassifier, DEFAULT_TIMEOUT,
};
pub use grid::{build_patch_grid, extract_patch, label_patch, label_patches, LabelThresholds, PatchGrid};
pub use maps::{
    assemble_probability_maps, binarize, bounding_boxes, connected_components, morphological_close, BinaryImage,
    CombineRule, DetectionBox, ProbabilityMaps, ScoreImage,
};
pub use metrics::{
    cluster_metrics, confusion_from_labels, match_detections, patch_metrics, per_image_mean_cluster_metrics,
    split_dataset, ClassCounts, ClassMetrics, ClusterCounts, ClusterMetrics, ConfusionCounts, DatasetSplit, MatchRule,
};
pub use pipeline::{
    detect_bunches, detections_json, draw_boxes, evaluate_detection, truth_regions, Detection, DetectionOutput, DetectionParams,
    ImageEvaluation,
};
pub use resize::resize_bicubic;

/// The five patch classes, in wire-protocol score order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Bunch,
    Pole,
    Wood,
    Leaves,
    Background,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 5] = [Self::Bunch, Self::Pole, Self::Wood, Self::Leaves, Self::Background];

    /// Position in score vectors.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Ground-truth PNG palette index.
    pub fn palette_index(self) -> u8 {
        match self {
            Self::Background => 0,
            Self::Leaves => 1,
            Self::Wood => 2,
            Self::Pole => 3,
            Self::Bunch => 4,
        }
    }

    pub fn from_palette_index(i: u8) -> Option<Self> {
        Some(match i {
            0 => Self::Background,
            1 => Self::Leaves,
            2 => Self::Wood,
            3 => Self::Pole,
            4 => Self::Bunch,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bunch => "bunch",
            Self::Pole => "pole",
            Self::Wood => "wood",
            Self::Leaves => "leaves",
            Self::Background => "background",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::param(format!("unknown class `{s}`")))
    }
}

pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

/// Five class scores in [0, 1] summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores([f64; 5]);

impl ClassScores {
    pub fn new(scores: [f64; 5]) -> Result<Self> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Validation(format!("class scores must lie in [0, 1]: {scores:?}")));
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
            return Err(Error::Validation(format!("class scores sum to {sum}, not 1")));
        }
        Ok(Self(scores))
    }

    /// Softmax of arbitrary finite logits.
    pub fn softmax(logits: [f64; 5]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = logits.map(|l| (l - m).exp());
        let s: f64 = e.iter().sum();
        Self(e.map(|v| v / s))
    }

    pub fn get(&self, c: ClassLabel) -> f64 {
        self.0[c.index()]
    }

    pub fn as_array(&self) -> &[f64; 5] {
        &self.0
    }

    /// Highest-scoring class; ties go to the earlier class.
    pub fn argmax(&self) -> ClassLabel {
        let mut best = 0;
        for i in 1..5 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        ClassLabel::ALL[best]
    }
}

/// Per-pixel ground-truth class image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: u32,
    height: u32,
    data: Vec<ClassLabel>,
}

impl LabelImage {
    pub fn new(width: u32, height: u32, fill: ClassLabel) -> Self {
        Self {
            width,
            height,
            data: vec![fill; (width * height) as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<ClassLabel>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::param("label count does not match dimensions"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> ClassLabel {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: ClassLabel) {
        self.data[(y * self.width + x) as usize] = c;
    }

    pub fn as_slice(&self) -> &[ClassLabel] {
        &self.data
    }
}

/// Palette of the ground-truth PNG, indexed by [`ClassLabel::palette_index`].
pub const LABEL_PALETTE: [[u8; 3]; 5] = [[0, 0, 0], [0, 160, 0], [140, 90, 40], [200, 200, 200], [120, 40, 160]];

fn image_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an indexed (or 8-bit grayscale) PNG whose values are palette indices 0–4.
pub fn load_label_png(path: &Path) -> Result<LabelImage> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| image_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    if !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(image_err(path, format!("expected an indexed PNG, got {:?}", info.color_type)));
    }
    let bits = info.bit_depth as usize;
    if bits > 8 {
        return Err(image_err(path, "16-bit label images are not supported"));
    }
    let (w, h) = (info.width, info.height);
    let mut data = Vec::with_capacity((w * h) as usize);
    for y in 0..h as usize {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w as usize {
            let bit = x * bits;
            let v = (row[bit / 8] >> (8 - bits - bit % 8)) & ((1u16 << bits) - 1) as u8;
            let c = ClassLabel::from_palette_index(v)
                .ok_or_else(|| image_err(path, format!("label value {v} at ({x}, {y}) outside 0–4")))?;
            data.push(c);
        }
    }
    LabelImage::from_vec(w, h, data)
}

/// Writes an 8-bit indexed PNG with [`LABEL_PALETTE`].
pub fn save_label_png(labels: &LabelImage, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), labels.width, labels.height);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(LABEL_PALETTE.concat());
    let mut w = enc.write_header().map_err(|e| image_err(path, e))?;
    let bytes: Vec<u8> = labels.data.iter().map(|c| c.palette_index()).collect();
    w.write_image_data(&bytes).map_err(|e| image_err(path, e))?;
    w.finish().map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_round_trip() {
        for c in ClassLabel::ALL {
            assert_eq!(ClassLabel::from_palette_index(c.palette_index()), Some(c));
            assert_eq!(c.name().parse::<ClassLabel>().unwrap(), c);
        }
        assert_eq!(ClassLabel::from_palette_index(5), None);
    }

    #[test]
    fn scores_validation() {
        assert!(ClassScores::new([0.2; 5]).is_ok());
        assert!(ClassScores::new([0.5, 0.5, 0.1, 0.0, 0.0]).is_err());
        assert!(ClassScores::new([1.2, -0.2, 0.0, 0.0, 0.0]).is_err());
        let s = ClassScores::softmax([1.0, 5.0, 0.0, 0.0, 0.0]);
        assert!((s.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.argmax(), ClassLabel::Pole);
    }

    #[test]
    fn label_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.png");
        let mut l = LabelImage::new(7, 5, ClassLabel::Background);
        l.set(3, 2, ClassLabel::Bunch);
        l.set(6, 4, ClassLabel::Leaves);
        l.set(0, 0, ClassLabel::Pole);
        save_label_png(&l, &path).unwrap();
        assert_eq!(load_label_png(&path).unwrap(), l);
    }

    #[test]
    fn label_png_rejects_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        image::GrayImage::from_pixel(3, 3, image::Luma([9])).save(&path).unwrap();
        assert!(matches!(load_label_png(&path), Err(Error::Image { .. })));
        let path = dir.path().join("rgb.png");
        image::RgbImage::new(3, 3).save(&path).unwrap();
        assert!(load_label_png(&path).is_err());
    }
}
