use image::RgbImage;

use super::calib::StereoCalibration;
use super::{DisparityMap, RectifiedStereoPair};
use crate::error::{Error, Result};
use crate::geometry::{ColoredPoint, ColoredPointCloud, Point, Rgb};
use crate::par;

/// Frame label of clouds produced by [`triangulate_color_cloud`].
pub const CAMERA_FRAME: &str = "camera";

/// `Z = f · B / d`.
pub fn disparity_to_depth(d: f64, calib: &StereoCalibration) -> Result<f64> {
    if !d.is_finite() || d <= 0.0 {
        return Err(Error::InvalidDisparity(d));
    }
    Ok(calib.focal_length * calib.baseline / d)
}

/// Back-projects valid disparities into the reference camera frame and keeps
/// the points that land inside the color image, carrying the sampled color.
/// Points come out in raster order of their source pixels.
pub fn triangulate_color_cloud(
    disparity: &DisparityMap,
    pair: &RectifiedStereoPair,
    color: &RgbImage,
    calib: &StereoCalibration,
) -> Result<ColoredPointCloud> {
    if (disparity.width(), disparity.height()) != (pair.width(), pair.height()) {
        return Err(Error::param(format!(
            "disparity map {}×{} does not match stereo pair {}×{}",
            disparity.width(),
            disparity.height(),
            pair.width(),
            pair.height()
        )));
    }
    let reg = calib
        .color
        .as_ref()
        .ok_or_else(|| Error::Config("calibration lacks a color registration".into()))?;
    calib.validate()?;
    let (cw, ch) = color.dimensions();
    let f = calib.focal_length;
    let rows = par::map_range(disparity.height() as usize, |y| {
        let mut out = Vec::new();
        for x in 0..disparity.width() {
            let Some(d) = disparity.get(x, y as u32) else {
                continue;
            };
            if d <= 0.0 {
                continue;
            }
            let z = f * calib.baseline / d as f64;
            let p = Point::new((x as f64 - calib.cx) * z / f, (y as f64 - calib.cy) * z / f, z);
            let Some((u, v)) = reg.project(&p) else {
                continue;
            };
            let (u, v) = (u.round(), v.round());
            if u < 0.0 || v < 0.0 || u >= cw as f64 || v >= ch as f64 {
                continue;
            }
            let c = color.get_pixel(u as u32, v as u32).0;
            out.push(ColoredPoint::new(p, Rgb(c)));
        }
        out
    });
    Ok(ColoredPointCloud::from_trusted(rows.concat(), CAMERA_FRAME, true))
}
