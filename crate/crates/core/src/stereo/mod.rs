//! Dense disparity from a rectified infrared pair (census cost, semi-global
//! aggregation) and triangulation into a colored point cloud.

mod calib;
mod census;
mod cost;
mod sgm;
mod triangulate;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calib::{load_calibration, parse_calibration, write_calibration, ColorRegistration, StereoCalibration};
pub use census::{census_transform, CensusImage};
pub use cost::{build_cost_volume, CostVolume};
pub use sgm::{sgm_aggregate, SgmParams};
pub use triangulate::{disparity_to_depth, triangulate_color_cloud};

/// Row-aligned left/right 8-bit grayscale images of equal size.
#[derive(Debug, Clone)]
pub struct RectifiedStereoPair {
    left: GrayImage,
    right: GrayImage,
}

impl RectifiedStereoPair {
    pub fn new(left: GrayImage, right: GrayImage) -> Result<Self> {
        if left.dimensions() != right.dimensions() {
            return Err(Error::param(format!(
                "stereo pair size mismatch: left {:?}, right {:?}",
                left.dimensions(),
                right.dimensions()
            )));
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &GrayImage {
        &self.left
    }

    pub fn right(&self) -> &GrayImage {
        &self.right
    }

    pub fn width(&self) -> u32 {
        self.left.width()
    }

    pub fn height(&self) -> u32 {
        self.left.height()
    }
}

/// Inclusive integer disparity search interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisparityRange {
    d_min: u32,
    d_max: u32,
}

impl DisparityRange {
    pub fn new(d_min: u32, d_max: u32) -> Result<Self> {
        if d_min >= d_max {
            return Err(Error::param(format!("disparity range [{d_min}, {d_max}] requires d_min < d_max")));
        }
        Ok(Self { d_min, d_max })
    }

    pub fn min(&self) -> u32 {
        self.d_min
    }

    pub fn max(&self) -> u32 {
        self.d_max
    }

    /// Number of candidate disparities.
    pub fn count(&self) -> usize {
        (self.d_max - self.d_min + 1) as usize
    }

    pub fn contains(&self, d: f32) -> bool {
        d >= self.d_min as f32 && d <= self.d_max as f32
    }
}

impl Default for DisparityRange {
    fn default() -> Self {
        Self { d_min: 8, d_max: 40 }
    }
}

/// Per-pixel disparity in pixels; invalid pixels are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    width: u32,
    height: u32,
    range: DisparityRange,
    data: Vec<f32>,
}

impl DisparityMap {
    pub fn invalid(width: u32, height: u32, range: DisparityRange) -> Self {
        Self {
            width,
            height,
            range,
            data: vec![f32::NAN; (width * height) as usize],
        }
    }

    /// Builds a map from raw values; `None` entries are invalid.
    pub fn from_values(width: u32, height: u32, range: DisparityRange, values: &[Option<f32>]) -> Result<Self> {
        if values.len() != (width * height) as usize {
            return Err(Error::param("disparity value count does not match dimensions"));
        }
        let mut data = Vec::with_capacity(values.len());
        for v in values {
            match v {
                Some(d) if range.contains(*d) => data.push(*d),
                Some(d) => return Err(Error::param(format!("disparity {d} outside {range:?}"))),
                None => data.push(f32::NAN),
            }
        }
        Ok(Self {
            width,
            height,
            range,
            data,
        })
    }

    pub(crate) fn from_raw(width: u32, height: u32, range: DisparityRange, data: Vec<f32>) -> Self {
        debug_assert!(data.iter().all(|d| d.is_nan() || range.contains(*d)));
        Self {
            width,
            height,
            range,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn range(&self) -> DisparityRange {
        self.range
    }

    pub fn get(&self, x: u32, y: u32) -> Option<f32> {
        let d = self.data[(y * self.width + x) as usize];
        (!d.is_nan()).then_some(d)
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| !d.is_nan()).count()
    }

    pub fn invalid_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        1.0 - self.valid_count() as f64 / self.data.len() as f64
    }

    /// Raw values with NaN marking invalid pixels.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// 8-bit visualisation scaled over the disparity range; invalid pixels are 0.
    pub fn to_image(&self) -> GrayImage {
        let lo = self.range.min() as f32;
        let span = (self.range.max() - self.range.min()) as f32;
        GrayImage::from_fn(self.width, self.height, |x, y| match self.get(x, y) {
            Some(d) => image::Luma([(1.0 + 254.0 * (d - lo) / span).round() as u8]),
            None => image::Luma([0]),
        })
    }
}

/// Full stereo configuration: census window plus aggregation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoParams {
    pub range: DisparityRange,
    pub census_window: u32,
    pub sgm: SgmParams,
}

impl Default for StereoParams {
    fn default() -> Self {
        Self {
            range: DisparityRange::default(),
            census_window: 5,
            sgm: SgmParams::default(),
        }
    }
}

/// Census cost volume followed by semi-global aggregation.
pub fn compute_disparity(pair: &RectifiedStereoPair, params: &StereoParams) -> Result<DisparityMap> {
    let volume = build_cost_volume(pair, params.range, params.census_window)?;
    sgm_aggregate(&volume, &params.sgm)
}
