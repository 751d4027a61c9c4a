use image::{GrayImage, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use super::row::SyntheticRowSpec;
use super::{scale_rgb, value_noise};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::mapping::FramePose;
use crate::par;
use crate::stereo::StereoCalibration;

/// Side-looking stereo head. The reference camera sits at
/// `(−standoff, y, camera_height)` in the vehicle frame and looks along +x
/// with image x pointing to −y; the right camera is `baseline` further
/// along the image x axis. A textured wall at `x = wall_x` closes the view.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraRig {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub baseline: f64,
    pub standoff: f64,
    pub camera_height: f64,
    pub wall_x: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            hfov_deg: 60.0,
            baseline: 0.07,
            standoff: 2.2,
            camera_height: 1.2,
            wall_x: 2.3,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::param("rig image must be at least 16×16"));
        }
        if !(self.hfov_deg > 1.0 && self.hfov_deg < 170.0) {
            return Err(Error::param(format!("field of view {} out of range", self.hfov_deg)));
        }
        if !(self.baseline > 0.0 && self.standoff > 0.0 && self.wall_x > 0.0) {
            return Err(Error::param("baseline, standoff and wall distance must be positive"));
        }
        Ok(())
    }

    /// Pinhole focal length from the horizontal field of view.
    pub fn focal_length(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Camera axes expressed in the vehicle frame (columns: image x, image y, optical axis).
    pub fn rotation() -> Matrix3<f64> {
        Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
    }

    pub fn camera_to_vehicle(&self) -> RigidTransform {
        RigidTransform {
            rotation: Self::rotation(),
            translation: Vector3::new(-self.standoff, 0.0, self.camera_height),
        }
    }

    /// Calibration of the rendered frames: identity colour registration.
    pub fn calibration(&self) -> Result<StereoCalibration> {
        let (cx, cy) = self.principal_point();
        let mut c = StereoCalibration::new(self.focal_length(), self.baseline, cx, cy)?.with_identity_color();
        c.camera_to_vehicle = self.camera_to_vehicle();
        Ok(c)
    }

    /// Half-width along the row of the view at the canopy front face.
    fn half_view(&self, depth: f64) -> f64 {
        depth * self.width as f64 / 2.0 / self.focal_length()
    }
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub index: u64,
    pub left: GrayImage,
    pub right: GrayImage,
    pub color: RgbImage,
    pub pose: FramePose,
}

#[derive(Clone, Copy)]
enum Surface {
    Canopy,
    Trunk,
    Ground,
    Wall,
}

fn ray_ellipsoid(o: &Vector3<f64>, d: &Vector3<f64>, c: &Vector3<f64>, s: &[f64; 3]) -> Option<f64> {
    let oc = (o - c).component_div(&Vector3::from(*s));
    let dd = d.component_div(&Vector3::from(*s));
    let a = dd.dot(&dd);
    let b = oc.dot(&dd);
    let cc = oc.dot(&oc) - 1.0;
    let disc = b * b - a * cc;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > 1e-9).then_some(t)
}

fn ray_trunk(o: &Vector3<f64>, d: &Vector3<f64>, y: f64, r: f64, top: f64) -> Option<f64> {
    let (px, py) = (o.x, o.y - y);
    let a = d.x * d.x + d.y * d.y;
    if a == 0.0 {
        return None;
    }
    let b = px * d.x + py * d.y;
    let c = px * px + py * py - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    let z = o.z + t * d.z;
    (t > 1e-9 && (0.0..=top).contains(&z)).then_some(t)
}

fn shade(surface: Surface, p: &Vector3<f64>, seed: u64) -> [u8; 3] {
    let q = [p.x, p.y, p.z];
    let fine = value_noise(seed, q, 0.008);
    let coarse = value_noise(seed ^ 0x9e37, q, 0.04);
    let s = 0.45 + 0.45 * fine + 0.35 * coarse;
    match surface {
        Surface::Canopy => scale_rgb([60.0, 150.0, 45.0], s),
        Surface::Trunk => scale_rgb([120.0, 80.0, 50.0], s),
        Surface::Ground => scale_rgb([140.0, 110.0, 80.0], s),
        Surface::Wall => scale_rgb([130.0, 120.0, 110.0], s),
    }
}

fn trace(spec: &SyntheticRowSpec, rig: &CameraRig, o: &Vector3<f64>, d: &Vector3<f64>, plants: &[usize]) -> [u8; 3] {
    let mut best = (f64::INFINITY, Surface::Wall);
    for &i in plants {
        let c = spec.plant_centre(i).coords;
        if let Some(t) = ray_ellipsoid(o, d, &c, &spec.semi_axes) {
            if t < best.0 {
                best = (t, Surface::Canopy);
            }
        }
        if let Some(t) = ray_trunk(o, d, c.y, spec.trunk_radius, spec.trunk_height) {
            if t < best.0 {
                best = (t, Surface::Trunk);
            }
        }
    }
    if d.z < 0.0 {
        let t = -o.z / d.z;
        if t < best.0 {
            best = (t, Surface::Ground);
        }
    }
    if d.x > 0.0 {
        let t = (rig.wall_x - o.x) / d.x;
        if t < best.0 {
            best = (t, Surface::Wall);
        }
    }
    if !best.0.is_finite() {
        return [0, 0, 0];
    }
    shade(best.1, &(o + d * best.0), spec.seed)
}

fn luminance(c: [u8; 3]) -> u8 {
    (0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64).round() as u8
}

/// Ray-traces the row seen from vehicle position `y` along the row.
/// Rendering is exact per pixel centre; no anti-aliasing.
pub fn render_frame(spec: &SyntheticRowSpec, rig: &CameraRig, y: f64, index: u64) -> Result<RenderedFrame> {
    spec.validate()?;
    rig.validate()?;
    let f = rig.focal_length();
    let (cx, cy) = rig.principal_point();
    let r = CameraRig::rotation();
    let left_o = Vector3::new(-rig.standoff, y, rig.camera_height);
    let right_o = left_o + r * Vector3::new(rig.baseline, 0.0, 0.0);
    let reach = rig.half_view(rig.standoff + rig.wall_x) + spec.semi_axes[1] + rig.baseline;
    let plants: Vec<usize> = (0..spec.plant_count)
        .filter(|&i| (spec.plant_centre(i).y - y).abs() <= reach)
        .collect();
    let (w, h) = (rig.width as usize, rig.height as usize);
    let rows = par::map_range(h, |v| {
        let mut colour = Vec::with_capacity(w * 3);
        let mut right = Vec::with_capacity(w);
        for u in 0..w {
            let d = r * Vector3::new((u as f64 - cx) / f, (v as f64 - cy) / f, 1.0);
            colour.extend_from_slice(&trace(spec, rig, &left_o, &d, &plants));
            right.push(luminance(trace(spec, rig, &right_o, &d, &plants)));
        }
        (colour, right)
    });
    let mut colour = Vec::with_capacity(w * h * 3);
    let mut right = Vec::with_capacity(w * h);
    for (c, rr) in rows {
        colour.extend(c);
        right.extend(rr);
    }
    let left: Vec<u8> = colour.chunks_exact(3).map(|c| luminance([c[0], c[1], c[2]])).collect();
    Ok(RenderedFrame {
        index,
        left: GrayImage::from_raw(rig.width, rig.height, left).expect("sized buffer"),
        right: GrayImage::from_raw(rig.width, rig.height, right).expect("sized buffer"),
        color: RgbImage::from_raw(rig.width, rig.height, colour).expect("sized buffer"),
        pose: FramePose {
            frame_index: index,
            pose: RigidTransform::from_translation(Vector3::new(0.0, y, 0.0)),
        },
    })
}

/// `n` evenly spaced vehicle positions covering the row span.
pub fn row_frame_positions(spec: &SyntheticRowSpec, n: usize) -> Vec<f64> {
    let (y0, y1) = spec.row_span();
    match n {
        0 => Vec::new(),
        1 => vec![(y0 + y1) / 2.0],
        _ => (0..n).map(|k| y0 + (y1 - y0) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn render_row_frames(spec: &SyntheticRowSpec, rig: &CameraRig, n_frames: usize) -> Result<Vec<RenderedFrame>> {
    row_frame_positions(spec, n_frames)
        .into_iter()
        .enumerate()
        .map(|(k, y)| render_frame(spec, rig, y, k as u64))
        .collect()
}
