use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lattice;
use crate::error::{Error, Result};
use crate::stereo::{DisparityMap, DisparityRange, RectifiedStereoPair};

/// Stereo pair with per-pixel truth in left-image coordinates.
#[derive(Debug, Clone)]
pub struct SyntheticStereo {
    pub pair: RectifiedStereoPair,
    pub truth: DisparityMap,
    /// Left pixels not visible in the right image (hidden or out of view).
    pub occluded: Vec<bool>,
}

impl SyntheticStereo {
    /// True for pixels that are neither occluded nor within `margin` of the border.
    pub fn interior_visible(&self, margin: u32) -> Vec<bool> {
        let (w, h) = (self.truth.width(), self.truth.height());
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                x >= margin && y >= margin && x + margin < w && y + margin < h && !self.occluded[(y * w + x) as usize]
            })
            .collect()
    }
}

/// Multi-scale random texture with values in 1..=254: fine white noise
/// over 4-pixel blocks, so census descriptors stay informative.
pub fn random_texture(width: u32, height: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coarse_seed = rng.random::<u64>();
    GrayImage::from_fn(width, height, |x, y| {
        let fine: f64 = rng.random_range(0.0..1.0);
        let coarse = lattice(coarse_seed, (x / 4) as i64, (y / 4) as i64, 0);
        image::Luma([(1.0 + 253.0 * (0.6 * fine + 0.4 * coarse)).round() as u8])
    })
}

pub fn constant_disparity(width: u32, height: u32, d: f64) -> Vec<f64> {
    vec![d; (width * height) as usize]
}

/// Background at `background`, central half-size rectangle at `foreground`.
pub fn two_plane_disparity(width: u32, height: u32, background: f64, foreground: f64) -> Vec<f64> {
    let (x0, x1, y0, y1) = (width / 4, 3 * width / 4, height / 4, 3 * height / 4);
    (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| if (x0..x1).contains(&x) && (y0..y1).contains(&y) { foreground } else { background })
        .collect()
}

/// Renders the right view of `texture` under a per-pixel disparity field
/// given in left coordinates. Each left pixel `x` lands at `x − d(x)`;
/// consecutive left pixels on the same surface (|Δd| ≤ 1) are joined and
/// sampled linearly, the larger disparity wins where surfaces overlap, and
/// right pixels nothing lands on get fresh texture.
pub fn generate_stereo_pair(texture: &GrayImage, disparity: &[f64], range: DisparityRange) -> Result<SyntheticStereo> {
    let (w, h) = texture.dimensions();
    let n = (w * h) as usize;
    if disparity.len() != n {
        return Err(Error::param(format!("{} disparities for {w}×{h} pixels", disparity.len())));
    }
    let (lo, hi) = (range.min() as f64, range.max() as f64);
    if let Some(d) = disparity.iter().find(|d| !(lo..=hi).contains(*d)) {
        return Err(Error::param(format!("disparity {d} outside [{lo}, {hi}]")));
    }
    let wu = w as usize;
    let mut right = vec![0u8; n];
    let mut occluded = vec![false; n];
    for y in 0..h as usize {
        let l: Vec<f64> = (0..wu).map(|x| texture.get_pixel(x as u32, y as u32).0[0] as f64).collect();
        let d = &disparity[y * wu..(y + 1) * wu];
        let pos: Vec<f64> = (0..wu).map(|x| x as f64 - d[x]).collect();
        let mut zbuf = vec![f64::NEG_INFINITY; wu];
        let mut val = vec![0.0; wu];
        let mut splat = |xr: i64, dd: f64, v: f64| {
            if (0..wu as i64).contains(&xr) && dd > zbuf[xr as usize] {
                zbuf[xr as usize] = dd;
                val[xr as usize] = v;
            }
        };
        for x in 0..wu {
            // Integer landing positions of pixel x itself.
            if pos[x].fract() == 0.0 {
                splat(pos[x] as i64, d[x], l[x]);
            }
            if x + 1 < wu && (d[x] - d[x + 1]).abs() <= 1.0 && pos[x + 1] > pos[x] {
                let (p0, p1) = (pos[x], pos[x + 1]);
                let mut xr = p0.ceil() as i64;
                while (xr as f64) <= p1 {
                    let t = (xr as f64 - p0) / (p1 - p0);
                    splat(xr, d[x] + (d[x + 1] - d[x]) * t, l[x] + (l[x + 1] - l[x]) * t);
                    xr += 1;
                }
            }
        }
        for x in 0..wu {
            let xr = pos[x].round() as i64;
            occluded[y * wu + x] = xr < 0 || xr >= wu as i64 || zbuf[xr as usize] > d[x] + 0.5;
        }
        for xr in 0..wu {
            right[y * wu + xr] = if zbuf[xr].is_finite() {
                val[xr].round().clamp(0.0, 255.0) as u8
            } else {
                (1.0 + 253.0 * lattice(0x5eed, xr as i64, y as i64, 1)) as u8
            };
        }
    }
    let truth_vals: Vec<Option<f32>> = disparity.iter().map(|&d| Some(d as f32)).collect();
    Ok(SyntheticStereo {
        pair: RectifiedStereoPair::new(texture.clone(), GrayImage::from_raw(w, h, right).expect("sized buffer"))?,
        truth: DisparityMap::from_values(w, h, range, &truth_vals)?,
        occluded,
    })
}
