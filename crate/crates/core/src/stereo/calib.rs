use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// Maps reference-camera points into color-image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorRegistration {
    /// Reference camera frame → color camera frame.
    pub transform: RigidTransform,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl ColorRegistration {
    /// Projects a reference-frame point; `None` behind the color camera.
    pub fn project(&self, p: &crate::geometry::Point) -> Option<(f64, f64)> {
        let q = self.transform.apply(p);
        (q.z > 0.0).then(|| (self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }
}

/// Stereo intrinsics, color registration and the camera mounting pose.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoCalibration {
    pub focal_length: f64,
    pub baseline: f64,
    pub cx: f64,
    pub cy: f64,
    pub color: Option<ColorRegistration>,
    /// Reference camera frame → vehicle frame.
    pub camera_to_vehicle: RigidTransform,
}

impl StereoCalibration {
    pub fn new(focal_length: f64, baseline: f64, cx: f64, cy: f64) -> Result<Self> {
        let c = Self {
            focal_length,
            baseline,
            cx,
            cy,
            color: None,
            camera_to_vehicle: RigidTransform::identity(),
        };
        c.validate()?;
        Ok(c)
    }

    /// Color camera coincident with the reference camera, same intrinsics.
    pub fn with_identity_color(mut self) -> Self {
        self.color = Some(ColorRegistration {
            transform: RigidTransform::identity(),
            fx: self.focal_length,
            fy: self.focal_length,
            cx: self.cx,
            cy: self.cy,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.focal_length) || !pos(self.baseline) {
            return Err(Error::Config(format!(
                "focal length and baseline must be positive, got f={} B={}",
                self.focal_length, self.baseline
            )));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::Config("principal point must be finite".into()));
        }
        if let Some(c) = &self.color {
            if !pos(c.fx) || !pos(c.fy) || !c.cx.is_finite() || !c.cy.is_finite() {
                return Err(Error::Config("color intrinsics must be positive and finite".into()));
            }
            c.transform.validate()?;
        }
        self.camera_to_vehicle.validate()
    }
}

fn numbers(key: &str, raw: &str, line: usize) -> Result<Vec<f64>> {
    raw.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("line {line}: `{key}` has non-numeric value `{s}`")))
        })
        .collect()
}

fn transform_from(key: &str, v: &[f64]) -> Result<RigidTransform> {
    let arr: [f64; 12] = v
        .try_into()
        .map_err(|_| Error::Config(format!("`{key}` needs 12 numbers (row-major 3×4), got {}", v.len())))?;
    let t = RigidTransform::from_row_major_3x4(&arr);
    t.validate()?;
    Ok(t)
}

/// Parses the `key = value` calibration format. `#` starts a comment.
///
/// Required: `focal_length_px`, `baseline_m`, `cx`, `cy`.
/// Optional: `color_registration` (12 numbers, row-major 3×4), `color_fx`,
/// `color_fy`, `color_cx`, `color_cy` (default to the stereo intrinsics),
/// `camera_to_vehicle` (12 numbers, default identity).
pub fn parse_calibration(text: &str) -> Result<StereoCalibration> {
    let mut kv: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim();
        const KNOWN: [&str; 10] = [
            "focal_length_px",
            "baseline_m",
            "cx",
            "cy",
            "color_registration",
            "color_fx",
            "color_fy",
            "color_cx",
            "color_cy",
            "camera_to_vehicle",
        ];
        if !KNOWN.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown calibration key `{key}`", i + 1)));
        }
        kv.insert(key.to_string(), numbers(key, value, i + 1)?);
    }
    let scalar = |key: &str| -> Result<Option<f64>> {
        match kv.get(key).map(Vec::as_slice) {
            None => Ok(None),
            Some([v]) => Ok(Some(*v)),
            Some(v) => Err(Error::Config(format!("`{key}` expects one number, got {}", v.len()))),
        }
    };
    let required = |key: &str| -> Result<f64> {
        scalar(key)?.ok_or_else(|| Error::Config(format!("missing calibration key `{key}`")))
    };
    let mut calib = StereoCalibration::new(
        required("focal_length_px")?,
        required("baseline_m")?,
        required("cx")?,
        required("cy")?,
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    if let Some(v) = kv.get("color_registration") {
        calib.color = Some(ColorRegistration {
            transform: transform_from("color_registration", v)?,
            fx: scalar("color_fx")?.unwrap_or(calib.focal_length),
            fy: scalar("color_fy")?.unwrap_or(calib.focal_length),
            cx: scalar("color_cx")?.unwrap_or(calib.cx),
            cy: scalar("color_cy")?.unwrap_or(calib.cy),
        });
    }
    if let Some(v) = kv.get("camera_to_vehicle") {
        calib.camera_to_vehicle = transform_from("camera_to_vehicle", v)?;
    }
    calib.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(calib)
}

pub fn load_calibration(path: &Path) -> Result<StereoCalibration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_calibration(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Serialises in the format read by [`parse_calibration`].
pub fn write_calibration(calib: &StereoCalibration) -> String {
    let mut s = String::new();
    let join = |t: &RigidTransform| {
        t.to_row_major_3x4()
            .iter()
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(s, "focal_length_px = {:?}", calib.focal_length);
    let _ = writeln!(s, "baseline_m = {:?}", calib.baseline);
    let _ = writeln!(s, "cx = {:?}", calib.cx);
    let _ = writeln!(s, "cy = {:?}", calib.cy);
    if let Some(c) = &calib.color {
        let _ = writeln!(s, "color_registration = {}", join(&c.transform));
        let _ = writeln!(s, "color_fx = {:?}", c.fx);
        let _ = writeln!(s, "color_fy = {:?}", c.fy);
        let _ = writeln!(s, "color_cx = {:?}", c.cx);
        let _ = writeln!(s, "color_cy = {:?}", c.cy);
    }
    let _ = writeln!(s, "camera_to_vehicle = {}", join(&calib.camera_to_vehicle));
    s
}
