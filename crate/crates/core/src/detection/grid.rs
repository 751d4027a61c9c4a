use image::RgbImage;

use super::{ClassLabel, LabelImage};
use crate::error::{Error, Result};

/// Sliding-window positions with a flush-to-edge final position, plus a
/// look-up table of pixel offsets relative to a window's top-left pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    width: u32,
    height: u32,
    window: u32,
    stride: u32,
    xs: Vec<u32>,
    ys: Vec<u32>,
    offsets: Vec<usize>,
}

fn positions(extent: u32, window: u32, stride: u32) -> Vec<u32> {
    let last = extent - window;
    let mut v: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

pub fn build_patch_grid(width: u32, height: u32, window: u32, stride: u32) -> Result<PatchGrid> {
    if window == 0 || window > width.min(height) {
        return Err(Error::param(format!(
            "window {window} must be in 1..={} for a {width}×{height} image",
            width.min(height)
        )));
    }
    if stride == 0 || stride > window {
        return Err(Error::param(format!("stride {stride} must be in 1..={window} to cover every pixel")));
    }
    let offsets = (0..window as usize)
        .flat_map(|dy| (0..window as usize).map(move |dx| dy * width as usize + dx))
        .collect();
    Ok(PatchGrid {
        width,
        height,
        window,
        stride,
        xs: positions(width, window, stride),
        ys: positions(height, window, stride),
        offsets,
    })
}

impl PatchGrid {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn xs(&self) -> &[u32] {
        &self.xs
    }

    pub fn ys(&self) -> &[u32] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left corner of patch `id` (row-major over positions).
    pub fn origin(&self, id: usize) -> (u32, u32) {
        (self.xs[id % self.xs.len()], self.ys[id / self.xs.len()])
    }

    /// Linear pixel indices of patch `id`, in raster order within the window.
    pub fn pixel_indices(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.origin(id);
        let base = y as usize * self.width as usize + x as usize;
        self.offsets.iter().map(move |o| base + o)
    }
}

/// Copies patch `id` out of `image` through the offset table.
pub fn extract_patch(image: &RgbImage, grid: &PatchGrid, id: usize) -> Result<RgbImage> {
    if image.dimensions() != (grid.width, grid.height) {
        return Err(Error::param("image does not match the patch grid"));
    }
    let raw = image.as_raw();
    let mut out = Vec::with_capacity(grid.offsets.len() * 3);
    for i in grid.pixel_indices(id) {
        out.extend_from_slice(&raw[i * 3..i * 3 + 3]);
    }
    Ok(RgbImage::from_raw(grid.window, grid.window, out).expect("window-sized buffer"))
}

/// Fractions of the patch above which bunch, pole and wood win.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelThresholds {
    pub bunch: f64,
    pub pole: f64,
    pub wood: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        Self {
            bunch: 0.2,
            pole: 0.2,
            wood: 0.2,
        }
    }
}

/// Cascade bunch → pole → wood on strict fractions, then leaves if they
/// outnumber background, else background.
pub fn label_patch(pixels: &[ClassLabel], thresholds: &LabelThresholds) -> ClassLabel {
    let mut counts = [0usize; 5];
    for p in pixels {
        counts[p.index()] += 1;
    }
    let total = pixels.len() as f64;
    for (c, t) in [
        (ClassLabel::Bunch, thresholds.bunch),
        (ClassLabel::Pole, thresholds.pole),
        (ClassLabel::Wood, thresholds.wood),
    ] {
        if counts[c.index()] as f64 > t * total {
            return c;
        }
    }
    if counts[ClassLabel::Leaves.index()] > counts[ClassLabel::Background.index()] {
        ClassLabel::Leaves
    } else {
        ClassLabel::Background
    }
}

/// Ground-truth label of every grid patch.
pub fn label_patches(truth: &LabelImage, grid: &PatchGrid, thresholds: &LabelThresholds) -> Result<Vec<ClassLabel>> {
    if (truth.width(), truth.height()) != (grid.width, grid.height) {
        return Err(Error::param("ground truth does not match the patch grid"));
    }
    let data = truth.as_slice();
    Ok((0..grid.len())
        .map(|id| {
            let px: Vec<ClassLabel> = grid.pixel_indices(id).map(|i| data[i]).collect();
            label_patch(&px, thresholds)
        })
        .collect())
}
