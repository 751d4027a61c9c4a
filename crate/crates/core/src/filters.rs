//! Point-cloud filters: voxel merging, statistical outlier removal and
//! lateral band selection.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{voxel_index, Axis, ColoredPoint, ColoredPointCloud, Point, Rgb};
use crate::knn::KdTree;
use crate::par;

struct CellAccum {
    sum: [f64; 3],
    lo: [f64; 3],
    hi: [f64; 3],
    color: [u64; 3],
    count: u64,
}

impl CellAccum {
    fn new(p: &ColoredPoint) -> Self {
        let q = [p.position.x, p.position.y, p.position.z];
        let mut acc = CellAccum {
            sum: [0.0; 3],
            lo: q,
            hi: q,
            color: [0; 3],
            count: 0,
        };
        acc.add(p);
        acc
    }

    fn add(&mut self, p: &ColoredPoint) {
        for i in 0..3 {
            let v = p.position[i];
            self.sum[i] += v;
            self.lo[i] = self.lo[i].min(v);
            self.hi[i] = self.hi[i].max(v);
            self.color[i] += p.color.0[i] as u64;
        }
        self.count += 1;
    }

    fn mean(&self) -> ColoredPoint {
        let n = self.count as f64;
        // the clamp keeps the rounded mean inside its own voxel
        let pos = Point::new(
            (self.sum[0] / n).clamp(self.lo[0], self.hi[0]),
            (self.sum[1] / n).clamp(self.lo[1], self.hi[1]),
            (self.sum[2] / n).clamp(self.lo[2], self.hi[2]),
        );
        let c = |i: usize| ((self.color[i] as f64 / n).round()).min(255.0) as u8;
        ColoredPoint::new(pos, Rgb([c(0), c(1), c(2)]))
    }
}

/// Replaces all points sharing an origin-anchored cube of side `cell_size`
/// with their mean position and mean color. Output cells appear in order of
/// first occurrence in the input.
pub fn box_grid_filter(cloud: &ColoredPointCloud, cell_size: f64) -> Result<ColoredPointCloud> {
    let points = box_grid_merge(cloud.points(), cell_size)?;
    Ok(ColoredPointCloud::from_trusted(points, &cloud.frame_id, cloud.has_color))
}

pub(crate) fn box_grid_merge(points: &[ColoredPoint], cell_size: f64) -> Result<Vec<ColoredPoint>> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::param(format!("cell size must be positive, got {cell_size}")));
    }
    let mut slots: HashMap<[i64; 3], usize> = HashMap::with_capacity(points.len() / 2);
    let mut cells: Vec<CellAccum> = Vec::new();
    for p in points {
        let key = voxel_index(&p.position, cell_size);
        match slots.get(&key) {
            Some(&i) => cells[i].add(p),
            None => {
                slots.insert(key, cells.len());
                cells.push(CellAccum::new(p));
            }
        }
    }
    Ok(cells.iter().map(CellAccum::mean).collect())
}

/// Outcome flag of [`statistical_outlier_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    Applied { removed: usize },
    /// The cloud had too few points for the neighbour statistics; returned unchanged.
    PassThrough,
}

/// Removes points whose mean distance to their `k` nearest neighbours
/// exceeds `global mean + std_ratio × global std` of those distances.
pub fn statistical_outlier_filter(
    cloud: &ColoredPointCloud,
    k: usize,
    std_ratio: f64,
) -> Result<(ColoredPointCloud, FilterStatus)> {
    if k == 0 {
        return Err(Error::param("outlier filter needs k ≥ 1"));
    }
    if std_ratio.is_nan() || std_ratio <= 0.0 {
        return Err(Error::param("outlier filter needs std_ratio > 0"));
    }
    if cloud.len() <= k {
        log::warn!(
            "statistical outlier filter skipped: {} points for k = {k}",
            cloud.len()
        );
        return Ok((cloud.clone(), FilterStatus::PassThrough));
    }
    let mean_dists = mean_knn_distances(cloud, k);
    let n = mean_dists.len() as f64;
    let mean = mean_dists.iter().sum::<f64>() / n;
    let var = mean_dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let threshold = mean + std_ratio * var.sqrt();
    let kept: Vec<ColoredPoint> = cloud
        .points()
        .iter()
        .zip(&mean_dists)
        .filter(|(_, &d)| d <= threshold)
        .map(|(p, _)| *p)
        .collect();
    let removed = cloud.len() - kept.len();
    Ok((
        ColoredPointCloud::from_trusted(kept, &cloud.frame_id, cloud.has_color),
        FilterStatus::Applied { removed },
    ))
}

/// Mean Euclidean distance from each point to its `k` nearest neighbours.
pub fn mean_knn_distances(cloud: &ColoredPointCloud, k: usize) -> Vec<f64> {
    let positions: Vec<Point> = cloud.positions().copied().collect();
    let tree = KdTree::build(&positions);
    par::map_range(positions.len(), |i| {
        let d = tree.knn_sq_dists(&positions[i], k, Some(i));
        d.iter().map(|s| s.sqrt()).sum::<f64>() / d.len().max(1) as f64
    })
}

/// Keeps exactly the points whose coordinate on `axis` lies in the closed
/// interval `[min_offset, max_offset]`.
pub fn lateral_band_filter(
    cloud: &ColoredPointCloud,
    min_offset: f64,
    max_offset: f64,
    axis: Axis,
) -> Result<ColoredPointCloud> {
    if min_offset.is_nan() || max_offset.is_nan() || min_offset >= max_offset {
        return Err(Error::param(format!(
            "lateral band [{min_offset}, {max_offset}] is empty or inverted"
        )));
    }
    let a = axis.index();
    let kept = cloud
        .points()
        .iter()
        .filter(|p| p.position[a] >= min_offset && p.position[a] <= max_offset)
        .copied()
        .collect();
    Ok(ColoredPointCloud::from_trusted(kept, &cloud.frame_id, cloud.has_color))
}
