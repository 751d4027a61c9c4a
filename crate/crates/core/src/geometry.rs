//! Core geometric types shared by every pipeline stage.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// 3D position in meters.
pub type Point = Point3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// 8-bit RGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl Rgb {
    pub const BLACK: Rgb = Rgb([0, 0, 0]);

    pub fn new(r: u8, g: u8, b: u8) -> Self {
        Rgb([r, g, b])
    }

    pub fn r(self) -> u8 {
        self.0[0]
    }

    pub fn g(self) -> u8 {
        self.0[1]
    }

    pub fn b(self) -> u8 {
        self.0[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Point,
    pub color: Rgb,
}

impl ColoredPoint {
    pub fn new(position: Point, color: Rgb) -> Self {
        Self { position, color }
    }
}

/// Ordered collection of colored points expressed in one reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ColoredPointCloud {
    points: Vec<ColoredPoint>,
    pub frame_id: String,
    /// False when the source carried no color (points then hold black).
    pub has_color: bool,
}

impl Default for ColoredPointCloud {
    fn default() -> Self {
        Self::empty("map")
    }
}

impl ColoredPointCloud {
    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            points: Vec::new(),
            frame_id: frame_id.into(),
            has_color: true,
        }
    }

    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<ColoredPoint>, frame_id: impl Into<String>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !is_finite(&p.position)) {
            return Err(Error::param(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            frame_id: frame_id.into(),
            has_color: true,
        })
    }

    /// Caller guarantees finiteness (points derived from an existing cloud).
    pub(crate) fn from_trusted(points: Vec<ColoredPoint>, frame_id: &str, has_color: bool) -> Self {
        debug_assert!(points.iter().all(|p| is_finite(&p.position)));
        Self {
            points,
            frame_id: frame_id.to_string(),
            has_color,
        }
    }

    pub fn points(&self) -> &[ColoredPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<ColoredPoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Point> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    /// Tight axis-aligned bounds, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<AxisAlignedBox> {
        AxisAlignedBox::enclosing(self.positions())
    }

    /// Keeps the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        Self::from_trusted(points, &self.frame_id, self.has_color)
    }
}

fn is_finite(p: &Point) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the unit `axis`, no translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(axis);
        let rot = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        Self {
            rotation: *rot.matrix(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds from a 3×4 matrix `[R | t]` given row-major.
    pub fn from_row_major_3x4(m: &[f64; 12]) -> Self {
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Self {
            rotation,
            translation,
        }
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    /// Checks orthonormality and det = +1 within 1e-9, and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |RᵀR − I| = {dev:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant {det} ≠ +1")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Maps every position through `t`; colors and order are preserved.
pub fn apply_transform(cloud: &ColoredPointCloud, t: &RigidTransform) -> Result<ColoredPointCloud> {
    t.validate()?;
    let points = par::map_slice(cloud.points(), |p| ColoredPoint {
        position: t.apply(&p.position),
        color: p.color,
    });
    if points.iter().any(|p| !is_finite(&p.position)) {
        return Err(Error::InvalidTransform("transform produced non-finite coordinates".into()));
    }
    Ok(ColoredPointCloud::from_trusted(points, &cloud.frame_id, cloud.has_color))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub min_corner: Point,
    pub max_corner: Point,
}

impl AxisAlignedBox {
    pub fn new(min_corner: Point, max_corner: Point) -> Result<Self> {
        if (0..3).any(|i| min_corner[i] > max_corner[i]) {
            return Err(Error::param("box min corner exceeds max corner"));
        }
        Ok(Self {
            min_corner,
            max_corner,
        })
    }

    pub fn enclosing<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            for i in 0..3 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        Some(Self {
            min_corner: lo,
            max_corner: hi,
        })
    }

    /// Closed-interval containment on all three axes.
    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|i| p[i] >= self.min_corner[i] && p[i] <= self.max_corner[i])
    }

    pub fn intersection(&self, other: &AxisAlignedBox) -> Option<AxisAlignedBox> {
        let mut lo = self.min_corner;
        let mut hi = self.max_corner;
        for i in 0..3 {
            lo[i] = lo[i].max(other.min_corner[i]);
            hi[i] = hi[i].min(other.max_corner[i]);
            if lo[i] > hi[i] {
                return None;
            }
        }
        Some(AxisAlignedBox {
            min_corner: lo,
            max_corner: hi,
        })
    }

    pub fn extents(&self) -> Vector3<f64> {
        self.max_corner - self.min_corner
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }
}

/// Coordinate axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::param(format!("unknown axis '{other}'"))),
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

/// Origin-anchored voxel index of `p` for cubes of side `cell`.
#[inline]
pub fn voxel_index(p: &Point, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}
