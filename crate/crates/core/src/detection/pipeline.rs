use image::RgbImage;
use serde::Serialize;

use super::{
    assemble_probability_maps, binarize, build_patch_grid, classify_patch, confusion_from_labels,
    connected_components, extract_patch, label_patches, match_detections, morphological_close, resize_bicubic,
    BinaryImage, ClassLabel, ClassScores, ClusterCounts, CombineRule, ConfusionCounts, DetectionBox, LabelImage,
    LabelThresholds, MatchRule, PatchClassifier, PatchGrid, ProbabilityMaps,
};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionParams {
    pub window: u32,
    pub stride: u32,
    pub threshold: f64,
    pub close_diameter: u32,
    pub min_area: usize,
    pub combine: CombineRule,
    pub target: ClassLabel,
}

impl Default for DetectionParams {
    fn default() -> Self {
        Self {
            window: 80,
            stride: 40,
            threshold: 0.85,
            close_diameter: 5,
            min_area: 25,
            combine: CombineRule::Mean,
            target: ClassLabel::Bunch,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::param("window and stride must be positive"));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::param(format!("threshold {} must lie in [0, 1)", self.threshold)));
        }
        if self.close_diameter.is_multiple_of(2) {
            return Err(Error::param(format!("closing diameter {} must be odd", self.close_diameter)));
        }
        Ok(())
    }
}

/// One detected cluster: its box, pixel count and mean class scores over
/// the component.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: DetectionBox,
    pub area: usize,
    pub scores: [f64; 5],
}

#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub grid: PatchGrid,
    pub patch_scores: Vec<ClassScores>,
    pub maps: ProbabilityMaps,
    pub mask: BinaryImage,
    pub detections: Vec<Detection>,
}

impl DetectionOutput {
    pub fn boxes(&self) -> Vec<DetectionBox> {
        self.detections.iter().map(|d| d.bbox).collect()
    }

    /// Argmax class of every patch.
    pub fn patch_labels(&self) -> Vec<ClassLabel> {
        self.patch_scores.iter().map(|s| s.argmax()).collect()
    }
}

/// Patch grid → classification → maps → threshold → closing → components → boxes.
pub fn detect_bunches(image: &RgbImage, classifier: &dyn PatchClassifier, params: &DetectionParams) -> Result<DetectionOutput> {
    params.validate()?;
    let grid = build_patch_grid(image.width(), image.height(), params.window, params.stride)?;
    let target = classifier.input_size();
    let patch_scores = par::map_range(grid.len(), |id| {
        let mut patch = extract_patch(image, &grid, id)?;
        if let Some(n) = target {
            if n != params.window {
                patch = resize_bicubic(&patch, n)?;
            }
        }
        classify_patch(&patch, classifier, id)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let maps = assemble_probability_maps(&grid, &patch_scores, params.combine)?;
    let raw = binarize(&maps.class_map(params.target), params.threshold);
    let mask = morphological_close(&raw, params.close_diameter)?;
    let detections = connected_components(&mask)
        .into_iter()
        .filter(|c| c.len() >= params.min_area)
        .filter_map(|c| {
            let bbox = DetectionBox::enclosing(&c)?;
            let mut scores = [0.0; 5];
            for &(x, y) in &c {
                let s = maps.scores_at(x, y);
                for k in 0..5 {
                    scores[k] += s[k];
                }
            }
            let n = c.len() as f64;
            Some(Detection {
                bbox,
                area: c.len(),
                scores: scores.map(|v| v / n),
            })
        })
        .collect();
    Ok(DetectionOutput {
        grid,
        patch_scores,
        maps,
        mask,
        detections,
    })
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
    area: usize,
    scores: std::collections::BTreeMap<&'a str, f64>,
}

/// Pretty JSON list of boxes with their class scores.
pub fn detections_json(detections: &[Detection]) -> String {
    let recs: Vec<DetectionRecord> = detections
        .iter()
        .map(|d| DetectionRecord {
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            area: d.area,
            scores: ClassLabel::ALL.iter().map(|c| (c.name(), d.scores[c.index()])).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&recs).expect("serializable records")
}

/// Bunch clusters of a label image as 8-connected regions.
pub fn truth_regions(truth: &LabelImage) -> Vec<Vec<(u32, u32)>> {
    let mask = BinaryImage::from_fn(truth.width(), truth.height(), |x, y| truth.get(x, y) == ClassLabel::Bunch);
    connected_components(&mask)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageEvaluation {
    pub patches: ConfusionCounts,
    pub clusters: ClusterCounts,
}

/// Patch confusion against labelled ground truth and cluster counts against
/// the given truth regions.
pub fn evaluate_detection(
    output: &DetectionOutput,
    truth: &LabelImage,
    regions: &[Vec<(u32, u32)>],
    thresholds: &LabelThresholds,
    rule: MatchRule,
) -> Result<ImageEvaluation> {
    let truth_labels = label_patches(truth, &output.grid, thresholds)?;
    let patches = confusion_from_labels(&truth_labels, &output.patch_labels())?;
    let clusters = match_detections(&output.boxes(), regions, rule);
    Ok(ImageEvaluation { patches, clusters })
}

/// Draws 2-pixel red rectangles onto a copy of `image`.
pub fn draw_boxes(image: &RgbImage, boxes: &[DetectionBox]) -> RgbImage {
    let mut out = image.clone();
    let red = image::Rgb([255, 0, 0]);
    let (w, h) = out.dimensions();
    for b in boxes {
        for t in 0..2u32 {
            let (x0, y0) = (b.x_min + t, b.y_min + t);
            let (x1, y1) = (b.x_max.saturating_sub(t), b.y_max.saturating_sub(t));
            if x0 > x1 || y0 > y1 {
                break;
            }
            for x in x0..=x1.min(w - 1) {
                out.put_pixel(x, y0, red);
                out.put_pixel(x, y1, red);
            }
            for y in y0..=y1.min(h - 1) {
                out.put_pixel(x0, y, red);
                out.put_pixel(x1, y, red);
            }
        }
    }
    out
}
