//! Canopy labeling from GRVI and height over a 3D grid, and k-means
//! partitioning of the canopy into plants.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{voxel_index, ColoredPointCloud, Point, Rgb};
use crate::par;

/// Green-red vegetation index `(g − r) / (g + r)`, 0 when both are 0.
pub fn grvi(r: f64, g: f64) -> Result<f64> {
    if !(r >= 0.0 && g >= 0.0) || !r.is_finite() || !g.is_finite() {
        return Err(Error::param(format!("GRVI channels must be non-negative, got r={r} g={g}")));
    }
    let s = r + g;
    Ok(if s == 0.0 { 0.0 } else { (g - r) / s })
}

/// GRVI of an 8-bit color.
pub fn grvi_rgb(c: Rgb) -> f64 {
    let (r, g) = (c.r() as f64, c.g() as f64);
    if r + g == 0.0 {
        0.0
    } else {
        (g - r) / (g + r)
    }
}

/// Direction of the mean-height test against `th_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeightComparison {
    /// `H̄ < th_h`
    #[default]
    Below,
    /// `H̄ > th_h`
    Above,
}

impl FromStr for HeightComparison {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "below" => Ok(Self::Below),
            "above" => Ok(Self::Above),
            other => Err(Error::param(format!("height comparison must be `below` or `above`, got `{other}`"))),
        }
    }
}

impl fmt::Display for HeightComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Below => "below",
            Self::Above => "above",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationParams {
    pub cell_side: f64,
    pub th_p: f64,
    pub th_h: f64,
    pub height_comparison: HeightComparison,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            cell_side: 0.1,
            th_p: 0.7,
            th_h: 0.75,
            height_comparison: HeightComparison::Below,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_side > 0.0 && self.cell_side.is_finite()) {
            return Err(Error::param(format!("cell side must be positive, got {}", self.cell_side)));
        }
        if !(self.th_p > 0.0 && self.th_p <= 1.0) {
            return Err(Error::param(format!("th_p must be in (0, 1], got {}", self.th_p)));
        }
        if !self.th_h.is_finite() {
            return Err(Error::param("th_h must be finite"));
        }
        Ok(())
    }

    /// Decision rule for one cell.
    pub fn is_canopy_cell(&self, green_fraction: f64, mean_height: f64) -> bool {
        green_fraction > self.th_p
            && match self.height_comparison {
                HeightComparison::Below => mean_height < self.th_h,
                HeightComparison::Above => mean_height > self.th_h,
            }
    }
}

/// Per-point canopy flags aligned with the labeled cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanopyLabeling {
    flags: Vec<bool>,
}

impl CanopyLabeling {
    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn canopy_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Indices of canopy points, ascending.
    pub fn canopy_indices(&self) -> Vec<usize> {
        self.flags.iter().enumerate().filter(|(_, &f)| f).map(|(i, _)| i).collect()
    }
}

/// Labels every point of each grid cell that has more than `th_p` of its
/// points with positive GRVI and whose mean height above `ground_height`
/// passes the configured comparison.
pub fn label_canopy(cloud: &ColoredPointCloud, ground_height: f64, params: &SegmentationParams) -> Result<CanopyLabeling> {
    params.validate()?;
    let mut slot_of: HashMap<[i64; 3], usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut cell_of = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points().iter().enumerate() {
        let key = voxel_index(&p.position, params.cell_side);
        let slot = *slot_of.entry(key).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[slot].push(i);
        cell_of.push(slot);
    }
    let pts = cloud.points();
    let verdicts = par::map_slice(&members, |idx| {
        let green = idx.iter().filter(|&&i| grvi_rgb(pts[i].color) > 0.0).count();
        // Sorted summation keeps the mean independent of point order.
        let mut h: Vec<f64> = idx.iter().map(|&i| pts[i].position.z - ground_height).collect();
        h.sort_by(f64::total_cmp);
        let mean_h = h.iter().sum::<f64>() / h.len() as f64;
        params.is_canopy_cell(green as f64 / idx.len() as f64, mean_h)
    });
    Ok(CanopyLabeling {
        flags: cell_of.iter().map(|&s| verdicts[s]).collect(),
    })
}

/// One plant: member indices into the clustered point slice, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantCluster {
    pub cluster_id: usize,
    pub members: Vec<usize>,
    pub centroid: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub clusters: Vec<PlantCluster>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each centroid update.
    pub wcss_history: Vec<f64>,
    pub converged: bool,
}

pub const KMEANS_MAX_ITERATIONS: usize = 100;

/// Initial centroids: spaced `spacing` apart along `row_axis`, the first half
/// a spacing past the smallest projection, at the canopy mean across the row.
pub fn initial_centroids(points: &[Point], k: usize, row_axis: &Vector3<f64>, spacing: f64) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no points to seed centroids".into()));
    }
    let u = row_axis
        .try_normalize(1e-12)
        .ok_or_else(|| Error::param("row axis must be non-zero"))?;
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::param(format!("spacing must be positive, got {spacing}")));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let across = mean - u * mean.dot(&u);
    let t0 = points.iter().map(|p| p.coords.dot(&u)).fold(f64::INFINITY, f64::min) + spacing / 2.0;
    Ok((0..k).map(|i| Point::from(across + u * (t0 + i as f64 * spacing))).collect())
}

fn nearest(p: &Point, centroids: &[Point]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means seeded by [`initial_centroids`]. Runs until the assignment
/// stops changing or [`KMEANS_MAX_ITERATIONS`] is reached. An emptied cluster
/// is re-seeded with the point farthest from its centroid.
pub fn kmeans_plants(points: &[Point], k: usize, row_axis: &Vector3<f64>, spacing: f64) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::param("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k,
            got: points.len(),
        });
    }
    let mut centroids = initial_centroids(points, k, row_axis, spacing)?;
    let mut assign: Vec<usize> = par::map_slice(points, |p| nearest(p, &centroids).0);
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        reseed_empty(points, &mut assign, &centroids, k);
        centroids = means(points, &assign, k);
        wcss_history.push(wcss(points, &assign, &centroids));
        let next: Vec<usize> = par::map_slice(points, |p| nearest(p, &centroids).0);
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }
    let mut members = vec![Vec::new(); k];
    for (i, &a) in assign.iter().enumerate() {
        members[a].push(i);
    }
    let clusters = members
        .into_iter()
        .zip(centroids)
        .enumerate()
        .map(|(cluster_id, (members, centroid))| PlantCluster {
            cluster_id,
            members,
            centroid,
        })
        .collect();
    Ok(KMeansResult {
        clusters,
        iterations,
        wcss_history,
        converged,
    })
}

fn reseed_empty(points: &[Point], assign: &mut [usize], centroids: &[Point], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Farthest point among clusters that can spare one.
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if counts[assign[i]] < 2 {
                continue;
            }
            let d = (p - centroids[assign[i]]).norm_squared();
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => assign[i] = empty,
            None => return,
        }
    }
}

fn means(points: &[Point], assign: &[usize], k: usize) -> Vec<Point> {
    let mut sum = vec![Vector3::zeros(); k];
    let mut n = vec![0usize; k];
    for (p, &a) in points.iter().zip(assign) {
        sum[a] += p.coords;
        n[a] += 1;
    }
    sum.into_iter()
        .zip(n)
        .map(|(s, n)| Point::from(s / n.max(1) as f64))
        .collect()
}

fn wcss(points: &[Point], assign: &[usize], centroids: &[Point]) -> f64 {
    points.iter().zip(assign).map(|(p, &a)| (p - centroids[a]).norm_squared()).sum()
}

/// Writes the labeled cloud as PLY with an extra `canopy` uchar property.
pub fn save_labeling_ply(cloud: &ColoredPointCloud, labeling: &CanopyLabeling, path: &Path) -> Result<()> {
    if labeling.flags.len() != cloud.len() {
        return Err(Error::param("labeling does not match cloud size"));
    }
    let flags: Vec<u8> = labeling.flags.iter().map(|&f| f as u8).collect();
    crate::ply::save_ply_with(cloud, &[("canopy", &flags)], crate::ply::PlyEncoding::BinaryLittleEndian, path)
}

/// `point_index,cluster_id` rows; `index_map` translates member indices
/// (e.g. canopy subset → full cloud).
pub fn write_clusters_csv<W: Write>(mut w: W, clusters: &[PlantCluster], index_map: Option<&[usize]>) -> std::io::Result<()> {
    let mut rows: Vec<(usize, usize)> = clusters
        .iter()
        .flat_map(|c| c.members.iter().map(move |&m| (m, c.cluster_id)))
        .map(|(m, id)| (index_map.map_or(m, |map| map[m]), id))
        .collect();
    rows.sort_unstable();
    writeln!(w, "point_index,cluster_id")?;
    for (i, id) in rows {
        writeln!(w, "{i},{id}")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CentroidRecord {
    cluster_id: usize,
    n_points: usize,
    centroid: [f64; 3],
}

pub fn centroids_json(clusters: &[PlantCluster]) -> Result<String> {
    let recs: Vec<CentroidRecord> = clusters
        .iter()
        .map(|c| CentroidRecord {
            cluster_id: c.cluster_id,
            n_points: c.members.len(),
            centroid: [c.centroid.x, c.centroid.y, c.centroid.z],
        })
        .collect();
    serde_json::to_string_pretty(&recs).map_err(|e| Error::Serialization(e.to_string()))
}
