//! Row-level orchestration: stereo frames to per-plant volumes.

use std::collections::BTreeMap;

use image::RgbImage;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::detection::{
    cluster_metrics, patch_metrics, per_image_mean_cluster_metrics, ClassLabel, ClassMetrics, ClusterCounts,
    ClusterMetrics, ConfusionCounts, ImageEvaluation,
};
use crate::error::{Error, Result};
use crate::filters::{box_grid_filter, lateral_band_filter, statistical_outlier_filter, FilterStatus};
use crate::geometry::{apply_transform, ColoredPointCloud, Point};
use crate::mapping::{stitch_frames, FramePose, RowMap};
use crate::par;
use crate::segmentation::{centroids_json, kmeans_plants, label_canopy, write_clusters_csv, CanopyLabeling, KMeansResult};
use crate::stereo::{compute_disparity, triangulate_color_cloud, RectifiedStereoPair, StereoCalibration};
use crate::synth::{render_frame, row_frame_positions, CameraRig, SyntheticRowSpec};
use crate::volume::{plant_volumes, summarize, summary_json, write_volume_csv, PlantVolumes};

/// One reconstructed frame, in the vehicle frame.
#[derive(Debug, Clone)]
pub struct FrameReconstruction {
    pub cloud: ColoredPointCloud,
    pub invalid_fraction: f64,
    /// Points straight out of triangulation.
    pub triangulated: usize,
    pub outliers_removed: usize,
}

/// Disparity, triangulation, camera-to-vehicle transform, lateral band,
/// per-frame box grid and statistical outlier removal.
pub fn reconstruct_frame(
    pair: &RectifiedStereoPair,
    color: &RgbImage,
    calib: &StereoCalibration,
    cfg: &PipelineConfig,
) -> Result<FrameReconstruction> {
    let disparity = compute_disparity(pair, &cfg.stereo_params()?)?;
    let camera = triangulate_color_cloud(&disparity, pair, color, calib)?;
    let triangulated = camera.len();
    let mut cloud = apply_transform(&camera, &calib.camera_to_vehicle)?;
    cloud.frame_id = "vehicle".into();
    cloud = lateral_band_filter(&cloud, cfg.lateral_min, cfg.lateral_max, cfg.lateral_axis)?;
    if cfg.frame_voxel > 0.0 && !cloud.is_empty() {
        cloud = box_grid_filter(&cloud, cfg.frame_voxel)?;
    }
    let mut outliers_removed = 0;
    if cfg.outlier_k > 0 {
        let (filtered, status) = statistical_outlier_filter(&cloud, cfg.outlier_k, cfg.outlier_std)?;
        if let FilterStatus::Applied { removed } = status {
            outliers_removed = removed;
        }
        cloud = filtered;
    }
    Ok(FrameReconstruction {
        cloud,
        invalid_fraction: disparity.invalid_fraction(),
        triangulated,
        outliers_removed,
    })
}

pub fn build_row_map(frames: &[(ColoredPointCloud, FramePose)], cfg: &PipelineConfig) -> Result<RowMap> {
    stitch_frames(frames, cfg.merge_cell)
}

#[derive(Debug, Clone)]
pub struct RowSegmentation {
    pub labeling: CanopyLabeling,
    /// Indices of canopy points in the labeled cloud; cluster members index this list.
    pub canopy_indices: Vec<usize>,
    pub canopy_points: Vec<Point>,
    pub kmeans: KMeansResult,
}

impl RowSegmentation {
    /// Canopy points of each cluster, in cluster order.
    pub fn plant_points(&self) -> Vec<Vec<Point>> {
        self.kmeans
            .clusters
            .iter()
            .map(|c| c.members.iter().map(|&m| self.canopy_points[m]).collect())
            .collect()
    }

    pub fn clusters_csv(&self) -> String {
        let mut buf = Vec::new();
        write_clusters_csv(&mut buf, &self.kmeans.clusters, Some(&self.canopy_indices)).expect("in-memory write");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Canopy labeling followed by k-means with one cluster per plant.
pub fn segment_row(cloud: &ColoredPointCloud, cfg: &PipelineConfig) -> Result<RowSegmentation> {
    let labeling = label_canopy(cloud, cfg.ground_height, &cfg.segmentation_params())?;
    let canopy_indices = labeling.canopy_indices();
    if canopy_indices.len() < cfg.plant_count {
        return Err(Error::InsufficientPoints {
            needed: cfg.plant_count,
            got: canopy_indices.len(),
        });
    }
    let canopy_points: Vec<Point> = canopy_indices.iter().map(|&i| cloud.points()[i].position).collect();
    let kmeans = kmeans_plants(&canopy_points, cfg.plant_count, &cfg.row_axis_vector(), cfg.plant_spacing)?;
    Ok(RowSegmentation {
        labeling,
        canopy_indices,
        canopy_points,
        kmeans,
    })
}

pub fn estimate_volumes(seg: &RowSegmentation, cfg: &PipelineConfig) -> Result<Vec<PlantVolumes>> {
    plant_volumes(&seg.plant_points(), &cfg.og_deltas)
}

pub fn volume_csv(rows: &[PlantVolumes]) -> String {
    let mut buf = Vec::new();
    write_volume_csv(&mut buf, rows).expect("in-memory write");
    String::from_utf8(buf).expect("ascii csv")
}

/// Everything a synthetic end-to-end run produces.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub frames: Vec<FrameReconstruction>,
    pub poses: Vec<FramePose>,
    pub map: RowMap,
    pub segmentation: RowSegmentation,
    pub volumes: Vec<PlantVolumes>,
    pub volume_csv: String,
    pub summary_json: String,
    pub centroids_json: String,
}

/// Renders `n_frames` stereo frames along the row and runs reconstruction,
/// stitching, segmentation and volume estimation on them. Frames are
/// processed in parallel; the result does not depend on the schedule.
pub fn run_synthetic_pipeline(
    spec: &SyntheticRowSpec,
    rig: &CameraRig,
    n_frames: usize,
    cfg: &PipelineConfig,
) -> Result<SyntheticRun> {
    if n_frames == 0 {
        return Err(Error::param("at least one frame is required"));
    }
    let calib = rig.calibration()?;
    let ys = row_frame_positions(spec, n_frames);
    let done = par::map_range(ys.len(), |k| -> Result<(FrameReconstruction, FramePose)> {
        let f = render_frame(spec, rig, ys[k], k as u64)?;
        let pair = RectifiedStereoPair::new(f.left, f.right)?;
        Ok((reconstruct_frame(&pair, &f.color, &calib, cfg)?, f.pose))
    });
    let mut frames = Vec::with_capacity(n_frames);
    let mut poses = Vec::with_capacity(n_frames);
    for r in done {
        let (fr, pose) = r?;
        frames.push(fr);
        poses.push(pose);
    }
    let pairs: Vec<(ColoredPointCloud, FramePose)> =
        frames.iter().zip(&poses).map(|(f, p)| (f.cloud.clone(), *p)).collect();
    let map = build_row_map(&pairs, cfg)?;
    drop(pairs);
    let segmentation = segment_row(&map.cloud, cfg)?;
    let volumes = estimate_volumes(&segmentation, cfg)?;
    Ok(SyntheticRun {
        volume_csv: volume_csv(&volumes),
        summary_json: summary_json(&summarize(&volumes, None)?)?,
        centroids_json: centroids_json(&segmentation.kmeans.clusters)?,
        frames,
        poses,
        map,
        segmentation,
        volumes,
    })
}

/// Patch and cluster metrics over a set of evaluated images. Counts are
/// summed across images; `per_image_mean` averages the per-image cluster
/// metrics instead.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub images: usize,
    pub patches: ConfusionCounts,
    pub patch_metrics: BTreeMap<ClassLabel, ClassMetrics>,
    pub clusters: ClusterCounts,
    pub cluster_metrics: ClusterMetrics,
    pub per_image_mean: ClusterMetrics,
}

pub fn detection_report(evals: &[ImageEvaluation]) -> Result<DetectionReport> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("no evaluated images".into()));
    }
    let patches = evals.iter().fold(ConfusionCounts::default(), |a, e| a.merge(&e.patches));
    let clusters = evals.iter().fold(ClusterCounts::default(), |a, e| a.merge(&e.clusters));
    let per: Vec<ClusterCounts> = evals.iter().map(|e| e.clusters).collect();
    Ok(DetectionReport {
        images: evals.len(),
        patches,
        patch_metrics: patch_metrics(&patches)?.into_iter().collect(),
        clusters,
        cluster_metrics: cluster_metrics(&clusters)?,
        per_image_mean: per_image_mean_cluster_metrics(&per)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::HeightComparison;

    fn cfg(plants: usize) -> PipelineConfig {
        PipelineConfig {
            plant_count: plants,
            height_comparison: HeightComparison::Above,
            ..Default::default()
        }
    }

    #[test]
    fn short_row_end_to_end() {
        let spec = SyntheticRowSpec {
            plant_count: 3,
            ..Default::default()
        };
        let rig = CameraRig {
            width: 320,
            height: 240,
            ..Default::default()
        };
        let mut c = cfg(3);
        // Half-resolution frames halve disparities.
        c.disparity_min = 2;
        c.disparity_max = 20;
        let run = run_synthetic_pipeline(&spec, &rig, 3, &c).unwrap();
        assert_eq!(run.volumes.len(), 3);
        assert_eq!(run.volume_csv.lines().count(), 4);
        for (cl, truth) in run.segmentation.kmeans.clusters.iter().zip(0..) {
            let y = spec.plant_centre(truth).y;
            assert!((cl.centroid.y - y).abs() < 0.15, "cluster {} at {} vs {}", cl.cluster_id, cl.centroid.y, y);
        }
        for f in &run.frames {
            assert!(f.cloud.points().iter().all(|p| p.position.x.abs() <= 0.6 + 1e-9));
        }
    }

    #[test]
    fn report_sums_counts() {
        let one = ImageEvaluation {
            patches: ConfusionCounts::default(),
            clusters: ClusterCounts { gc: 4, t_gc: 3, f_gc: 1, n_gc: 1 },
        };
        let two = ImageEvaluation {
            clusters: ClusterCounts { gc: 2, t_gc: 2, f_gc: 0, n_gc: 0 },
            ..one
        };
        let r = detection_report(&[one, two]).unwrap();
        assert_eq!(r.clusters.gc, 6);
        assert_eq!(r.cluster_metrics.acc, Some(5.0 / 6.0));
        assert_eq!(r.per_image_mean.acc, Some((0.75 + 1.0) / 2.0));
        assert!(detection_report(&[]).is_err());
    }

    #[test]
    fn too_few_canopy_points() {
        let cloud = ColoredPointCloud::empty("map");
        assert!(segment_row(&cloud, &cfg(2)).is_err());
    }
}
