use image::GrayImage;

use crate::error::{Error, Result};
use crate::par;

/// Per-pixel census descriptors. Bit `i` of a descriptor is set when the
/// `i`-th window neighbour (raster order, centre skipped) is darker than the
/// centre. Pixels closer than `window / 2` to the border are undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct CensusImage {
    width: u32,
    height: u32,
    window: u32,
    data: Vec<u64>,
}

impl CensusImage {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    /// Number of bits in each descriptor.
    pub fn bit_count(&self) -> u32 {
        self.window * self.window - 1
    }

    pub fn is_defined(&self, x: u32, y: u32) -> bool {
        let r = self.window / 2;
        x >= r && y >= r && x + r < self.width && y + r < self.height
    }

    pub fn get(&self, x: u32, y: u32) -> Option<u64> {
        self.is_defined(x, y)
            .then(|| self.data[(y * self.width + x) as usize])
    }

    pub(crate) fn raw(&self) -> &[u64] {
        &self.data
    }
}

/// Computes census descriptors with an odd `window` (3, 5 or 7).
pub fn census_transform(image: &GrayImage, window: u32) -> Result<CensusImage> {
    if window.is_multiple_of(2) || window < 3 {
        return Err(Error::param(format!("census window must be odd and ≥ 3, got {window}")));
    }
    if window > 7 {
        return Err(Error::param(format!(
            "census window {window} exceeds the 64-bit descriptor (max 7)"
        )));
    }
    let (w, h) = image.dimensions();
    if w < window || h < window {
        return Err(Error::param(format!(
            "image {w}×{h} is smaller than the census window {window}"
        )));
    }
    let r = (window / 2) as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&o| o != (0, 0))
        .collect();
    let px = image.as_raw();
    let mut data = vec![0u64; (w * h) as usize];
    par::for_each_chunk_mut(&mut data, w as usize, |y, row| {
        let y = y as i64;
        if y < r || y + r >= h as i64 {
            return;
        }
        for x in r..(w as i64 - r) {
            let centre = px[(y * w as i64 + x) as usize];
            let mut bits = 0u64;
            for (i, (dx, dy)) in offsets.iter().enumerate() {
                let v = px[((y + dy) * w as i64 + x + dx) as usize];
                bits |= ((v < centre) as u64) << i;
            }
            row[x as usize] = bits;
        }
    });
    Ok(CensusImage {
        width: w,
        height: h,
        window,
        data,
    })
}
