//! Per-plant canopy volume: occupancy grid, convex hull, oriented and
//! axis-aligned boxes, the manual reference formula and canopy height.

mod hull;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{voxel_index, AxisAlignedBox, Point};
use crate::par;
use crate::stats::{descriptive_stats, DescriptiveStats};

pub use hull::{convex_hull, ConvexHull};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum VolumeMethod {
    OccupancyGrid { delta: f64 },
    ConvexHull,
    OrientedBox,
    AxisAlignedBox,
    Manual { width: f64 },
}

impl fmt::Display for VolumeMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::OccupancyGrid { delta } => write!(f, "OG(δ={delta})"),
            Self::ConvexHull => f.write_str("CH"),
            Self::OrientedBox => f.write_str("OBB"),
            Self::AxisAlignedBox => f.write_str("AABB"),
            Self::Manual { width } => write!(f, "MANUAL(w={width})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeEstimate {
    pub method: VolumeMethod,
    /// Cubic meters, never negative.
    pub value: f64,
    /// Set when the geometry was degenerate and `value` was forced to 0.
    pub degenerate: bool,
}

impl VolumeEstimate {
    fn new(method: VolumeMethod, value: f64) -> Self {
        Self {
            method,
            value: value.max(0.0),
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrientedBox {
    pub center: Point,
    /// Columns are orthonormal, right-handed box axes.
    pub axes: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

impl OrientedBox {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }
}

fn non_empty(points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyInput("volume of an empty point set".into()));
    }
    Ok(())
}

/// Distinct origin-anchored cells of side `delta`, times `delta³`.
pub fn occupancy_grid_volume(points: &[Point], delta: f64) -> Result<VolumeEstimate> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::param(format!("voxel size must be positive, got {delta}")));
    }
    non_empty(points)?;
    let cells: HashSet<[i64; 3]> = points.iter().map(|p| voxel_index(p, delta)).collect();
    Ok(VolumeEstimate::new(
        VolumeMethod::OccupancyGrid { delta },
        cells.len() as f64 * delta.powi(3),
    ))
}

/// Convex hull volume; degenerate sets are an error whose value is 0.
pub fn convex_hull_volume(points: &[Point]) -> Result<VolumeEstimate> {
    let h = convex_hull(points)?;
    Ok(VolumeEstimate::new(VolumeMethod::ConvexHull, h.volume()))
}

/// Like [`convex_hull_volume`] but maps degeneracy to a flagged zero.
pub fn convex_hull_volume_or_zero(points: &[Point]) -> Result<VolumeEstimate> {
    match convex_hull_volume(points) {
        Err(Error::DegenerateGeometry { value, .. }) => Ok(VolumeEstimate {
            method: VolumeMethod::ConvexHull,
            value,
            degenerate: true,
        }),
        other => other,
    }
}

fn box_along(points: &[Point], axes: Matrix3<f64>) -> OrientedBox {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let q = axes.transpose() * p.coords;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    OrientedBox {
        center: Point::from(axes * ((lo + hi) / 2.0)),
        axes,
        half_extents: (hi - lo) / 2.0,
    }
}

fn principal_axes(points: &[Point]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| {
        let d = p.coords - mean;
        a + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    // Largest variance first; right-handed.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let c0 = eig.eigenvectors.column(order[0]).normalize();
    let c1 = eig.eigenvectors.column(order[1]).normalize();
    let c1 = (c1 - c0 * c0.dot(&c1)).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}

/// Smaller of the principal-axes box and the axis-aligned box, so the result
/// never exceeds the AABB volume.
pub fn obb_volume(points: &[Point]) -> Result<(VolumeEstimate, OrientedBox)> {
    non_empty(points)?;
    let identity = box_along(points, Matrix3::identity());
    let mut best = identity;
    if points.len() > 1 {
        let axes = principal_axes(points);
        if axes.iter().all(|v| v.is_finite()) {
            let pca = box_along(points, axes);
            if pca.volume() < best.volume() {
                best = pca;
            }
        }
    }
    Ok((VolumeEstimate::new(VolumeMethod::OrientedBox, best.volume()), best))
}

pub fn aabb_volume(points: &[Point]) -> Result<(VolumeEstimate, AxisAlignedBox)> {
    non_empty(points)?;
    let b = AxisAlignedBox::enclosing(points.iter()).expect("non-empty");
    Ok((VolumeEstimate::new(VolumeMethod::AxisAlignedBox, b.volume()), b))
}

pub const DEFAULT_PLANT_WIDTH: f64 = 0.9;

/// `width × depth × height` from field measurements.
pub fn manual_reference_volume(depth: f64, height: f64, width: f64) -> Result<VolumeEstimate> {
    for (name, v) in [("depth", depth), ("height", height), ("width", width)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(VolumeEstimate::new(VolumeMethod::Manual { width }, width * depth * height))
}

/// Vertical extent `max z − min z`.
pub fn canopy_height(points: &[Point]) -> Result<f64> {
    non_empty(points)?;
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.z), h.max(p.z)));
    Ok(hi - lo)
}

/// One report row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantVolumes {
    pub plant_id: usize,
    pub n_points: usize,
    /// `(δ, volume)` per configured voxel size.
    pub og: Vec<(f64, f64)>,
    pub ch: f64,
    pub ch_degenerate: bool,
    pub obb: f64,
    pub aabb: f64,
    pub height: f64,
}

/// All estimators for each plant, in input order. Plants run in parallel.
pub fn plant_volumes(plants: &[Vec<Point>], deltas: &[f64]) -> Result<Vec<PlantVolumes>> {
    if deltas.is_empty() {
        return Err(Error::param("at least one occupancy-grid δ is required"));
    }
    let rows = par::map_range(plants.len(), |i| -> Result<PlantVolumes> {
        let pts = &plants[i];
        let og = deltas
            .iter()
            .map(|&d| occupancy_grid_volume(pts, d).map(|v| (d, v.value)))
            .collect::<Result<Vec<_>>>()?;
        let ch = convex_hull_volume_or_zero(pts)?;
        Ok(PlantVolumes {
            plant_id: i,
            n_points: pts.len(),
            og,
            ch: ch.value,
            ch_degenerate: ch.degenerate,
            obb: obb_volume(pts)?.0.value,
            aabb: aabb_volume(pts)?.0.value,
            height: canopy_height(pts)?,
        })
    });
    rows.into_iter().collect()
}

/// Column name for an occupancy-grid δ: 0.05 → `og_005`.
pub fn og_column(delta: f64) -> String {
    format!("og_{:03}", (delta * 100.0).round() as i64)
}

/// `plant_id,n_points,og_…,ch,obb,aabb,height`.
pub fn write_volume_csv<W: Write>(mut w: W, rows: &[PlantVolumes]) -> std::io::Result<()> {
    let deltas: Vec<f64> = rows.first().map(|r| r.og.iter().map(|o| o.0).collect()).unwrap_or_default();
    let mut header = vec!["plant_id".to_string(), "n_points".to_string()];
    header.extend(deltas.iter().map(|&d| og_column(d)));
    header.extend(["ch", "obb", "aabb", "height"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let mut cells = vec![r.plant_id.to_string(), r.n_points.to_string()];
        cells.extend(r.og.iter().map(|o| format!("{:.9}", o.1)));
        cells.extend([r.ch, r.obb, r.aabb, r.height].map(|v| format!("{v:.9}")));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeSummary {
    pub n_plants: usize,
    pub degenerate_hulls: usize,
    pub methods: BTreeMap<String, DescriptiveStats>,
}

/// Descriptive statistics per method column (plus `manual` when given).
pub fn summarize(rows: &[PlantVolumes], manual: Option<&[f64]>) -> Result<VolumeSummary> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no plants to summarize".into()));
    }
    let mut methods = BTreeMap::new();
    for (k, &(d, _)) in rows[0].og.iter().enumerate() {
        let v: Vec<f64> = rows.iter().map(|r| r.og[k].1).collect();
        methods.insert(og_column(d), descriptive_stats(&v)?);
    }
    let col = |f: fn(&PlantVolumes) -> f64| -> Result<DescriptiveStats> {
        descriptive_stats(&rows.iter().map(f).collect::<Vec<_>>())
    };
    methods.insert("ch".into(), col(|r| r.ch)?);
    methods.insert("obb".into(), col(|r| r.obb)?);
    methods.insert("aabb".into(), col(|r| r.aabb)?);
    methods.insert("height".into(), col(|r| r.height)?);
    if let Some(m) = manual {
        methods.insert("manual".into(), descriptive_stats(m)?);
    }
    Ok(VolumeSummary {
        n_plants: rows.len(),
        degenerate_hulls: rows.iter().filter(|r| r.ch_degenerate).count(),
        methods,
    })
}

pub fn summary_json(summary: &VolumeSummary) -> Result<String> {
    serde_json::to_string_pretty(summary).map_err(|e| Error::Serialization(e.to_string()))
}
