use image::RgbImage;

use crate::error::{Error, Result};

/// Catmull-Rom cubic (a = −0.5).
fn kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and normalised weights for each output coordinate
/// (pixel-centre alignment, clamped edges).
fn taps(src: u32, dst: u32) -> Vec<([usize; 4], [f64; 4])> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = (o as f64 + 0.5) * scale - 0.5;
            let i = s.floor();
            let t = s - i;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let j = i as i64 - 1 + k as i64;
                idx[k] = j.clamp(0, src as i64 - 1) as usize;
                w[k] = kernel(t - (k as f64 - 1.0));
            }
            let sum: f64 = w.iter().sum();
            (idx, w.map(|v| v / sum))
        })
        .collect()
}

/// Separable bicubic upscaling of a patch to `target × target`.
pub fn resize_bicubic(patch: &RgbImage, target: u32) -> Result<RgbImage> {
    let (w, h) = patch.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::param("cannot resize an empty patch"));
    }
    if target < w.max(h) {
        return Err(Error::param(format!("bicubic resize only upscales: {w}×{h} → {target}")));
    }
    if target == w && target == h {
        return Ok(patch.clone());
    }
    let (tx, ty) = (taps(w, target), taps(h, target));
    let raw = patch.as_raw();
    let t = target as usize;
    // Horizontal pass into f64 rows, no rounding in between.
    let mut mid = vec![0.0f64; t * h as usize * 3];
    for y in 0..h as usize {
        for (ox, (idx, wt)) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut v = 0.0;
                for k in 0..4 {
                    v += wt[k] * raw[(y * w as usize + idx[k]) * 3 + c] as f64;
                }
                mid[(y * t + ox) * 3 + c] = v;
            }
        }
    }
    let mut out = vec![0u8; t * t * 3];
    for (oy, (idx, wt)) in ty.iter().enumerate() {
        for ox in 0..t {
            for c in 0..3 {
                let mut v = 0.0;
                for k in 0..4 {
                    v += wt[k] * mid[(idx[k] * t + ox) * 3 + c];
                }
                out[(oy * t + ox) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(RgbImage::from_raw(target, target, out).expect("target-sized buffer"))
}
