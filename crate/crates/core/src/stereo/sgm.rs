use super::cost::CostVolume;
use super::DisparityMap;
use crate::error::{Error, Result};
use crate::par;

/// Semi-global aggregation and post-processing switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmParams {
    /// Penalty for a ±1 px disparity change between neighbours.
    pub p1: u32,
    /// Penalty for larger disparity jumps.
    pub p2: u32,
    /// When false, winners come straight from the matching costs (pure WTA).
    pub aggregate: bool,
    /// Invalidate when the winner's aggregated cost ≥ ratio × the best
    /// non-adjacent aggregated cost, or when all in-bounds matching costs tie.
    pub uniqueness_ratio: Option<f64>,
    /// Maximum left/right winner disagreement in pixels.
    pub lr_threshold: Option<f64>,
    pub subpixel: bool,
}

impl Default for SgmParams {
    fn default() -> Self {
        Self {
            p1: 10,
            p2: 120,
            aggregate: true,
            uniqueness_ratio: Some(0.95),
            lr_threshold: Some(1.0),
            subpixel: true,
        }
    }
}

impl SgmParams {
    /// Plain winner-take-all on the raw costs, no checks or refinement.
    pub fn winner_take_all() -> Self {
        Self {
            aggregate: false,
            uniqueness_ratio: None,
            lr_threshold: None,
            subpixel: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.aggregate && !(0 < self.p1 && self.p1 < self.p2) {
            return Err(Error::param(format!(
                "SGM penalties require 0 < p1 < p2, got p1={} p2={}",
                self.p1, self.p2
            )));
        }
        if let Some(r) = self.uniqueness_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::param(format!("uniqueness ratio must be in (0, 1], got {r}")));
            }
        }
        if let Some(t) = self.lr_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(Error::param(format!("LR threshold must be ≥ 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// One recurrence step: `out[d] = c[d] + min(prev[d], prev[d±1] + p1, min(prev) + p2) − min(prev)`.
#[inline]
fn path_step(c: &[u8], prev: Option<&[u32]>, p1: u32, p2: u32, out: &mut [u32]) {
    match prev {
        None => {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o = ci as u32;
            }
        }
        Some(prev) => {
            let nd = c.len();
            let pmin = prev.iter().copied().min().unwrap_or(0);
            let jump = pmin + p2;
            for d in 0..nd {
                let mut best = prev[d].min(jump);
                if d > 0 {
                    best = best.min(prev[d - 1] + p1);
                }
                if d + 1 < nd {
                    best = best.min(prev[d + 1] + p1);
                }
                out[d] = c[d] as u32 + best - pmin;
            }
        }
    }
}

fn add_into(acc: &mut [u32], l: &[u32]) {
    for (a, v) in acc.iter_mut().zip(l) {
        *a += v;
    }
}

/// Summed path costs laid out like the cost volume.
fn aggregate(volume: &CostVolume, p1: u32, p2: u32) -> Vec<u32> {
    let (w, h) = (volume.width() as usize, volume.height() as usize);
    let nd = volume.range().count();
    let costs = volume.raw();
    let row_len = w * nd;
    let mut sum = vec![0u32; w * h * nd];

    // Horizontal paths: rows are independent.
    par::for_each_chunk_mut(&mut sum, row_len, |y, srow| {
        let crow = &costs[y * row_len..(y + 1) * row_len];
        let mut prev = vec![0u32; nd];
        let mut cur = vec![0u32; nd];
        for x in 0..w {
            let c = &crow[x * nd..(x + 1) * nd];
            path_step(c, (x > 0).then_some(&prev[..]), p1, p2, &mut cur);
            add_into(&mut srow[x * nd..(x + 1) * nd], &cur);
            std::mem::swap(&mut prev, &mut cur);
        }
        for x in (0..w).rev() {
            let c = &crow[x * nd..(x + 1) * nd];
            path_step(c, (x + 1 < w).then_some(&prev[..]), p1, p2, &mut cur);
            add_into(&mut srow[x * nd..(x + 1) * nd], &cur);
            std::mem::swap(&mut prev, &mut cur);
        }
    });

    // Vertical and diagonal paths: sweep rows, parallel over x within a row.
    // Each pixel holds three path vectors: from (x−1), (x), (x+1) of the previous row.
    for downward in [true, false] {
        let mut prev = vec![0u32; w * 3 * nd];
        let mut cur = vec![0u32; w * 3 * nd];
        let rows: Vec<usize> = if downward { (0..h).collect() } else { (0..h).rev().collect() };
        for (i, &y) in rows.iter().enumerate() {
            let first = i == 0;
            let crow = &costs[y * row_len..(y + 1) * row_len];
            let prev_ref = &prev;
            let srow = &mut sum[y * row_len..(y + 1) * row_len];
            par::for_each_chunk_pair_mut(&mut cur, 3 * nd, srow, nd, |x, cell, s| {
                let c = &crow[x * nd..(x + 1) * nd];
                for (k, dx) in [-1i64, 0, 1].into_iter().enumerate() {
                    let px = x as i64 + dx;
                    let src = (!first && px >= 0 && (px as usize) < w).then(|| {
                        let base = (px as usize * 3 + k) * nd;
                        &prev_ref[base..base + nd]
                    });
                    let out = &mut cell[k * nd..(k + 1) * nd];
                    path_step(c, src, p1, p2, out);
                    add_into(s, out);
                }
            });
            std::mem::swap(&mut prev, &mut cur);
        }
    }
    sum
}

/// Aggregates `volume` and extracts a validated disparity map.
pub fn sgm_aggregate(volume: &CostVolume, params: &SgmParams) -> Result<DisparityMap> {
    params.validate()?;
    let (w, h) = (volume.width() as usize, volume.height() as usize);
    let range = volume.range();
    let nd = range.count();
    let sum: Vec<u32> = if params.aggregate {
        aggregate(volume, params.p1, params.p2)
    } else {
        volume.raw().iter().map(|&c| c as u32).collect()
    };
    let cell = |x: usize, y: usize| &sum[(y * w + x) * nd..(y * w + x + 1) * nd];
    let argmin = |s: &[u32]| {
        let mut best = 0;
        for d in 1..s.len() {
            if s[d] < s[best] {
                best = d;
            }
        }
        best
    };

    // Right-image winners read the diagonal S(xr + d, y, d).
    let right_winners: Option<Vec<Option<usize>>> = params.lr_threshold.map(|_| {
        par::map_range(w * h, |i| {
            let (xr, y) = (i % w, i / w);
            let mut best: Option<(usize, u32)> = None;
            for k in 0..nd {
                let x = xr + range.min() as usize + k;
                if x >= w {
                    break;
                }
                let v = cell(x, y)[k];
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((k, v));
                }
            }
            best.map(|(k, _)| k)
        })
    });

    let defined = volume.defined_mask();
    let raw = volume.raw();
    let data = par::map_range(w * h, |i| {
        let (x, y) = (i % w, i / w);
        if !defined[i] {
            return f32::NAN;
        }
        let s = cell(x, y);
        let k = argmin(s);
        let d_int = range.min() as usize + k;
        if let Some(ratio) = params.uniqueness_ratio {
            let second = s
                .iter()
                .enumerate()
                .filter(|(j, _)| j.abs_diff(k) > 1)
                .map(|(_, &v)| v)
                .min();
            if let Some(second) = second {
                if s[k] as f64 >= ratio * second as f64 {
                    return f32::NAN;
                }
            }
            // Matching costs that all tie carry no information, although
            // border penalties can still break the tie after aggregation.
            let m = &raw[i * nd..(i + 1) * nd];
            let in_bounds = (x + 1).saturating_sub(range.min() as usize).min(nd);
            if in_bounds > 0 && m[..in_bounds].iter().all(|&v| v == m[0]) {
                return f32::NAN;
            }
        }
        if let (Some(t), Some(rw)) = (params.lr_threshold, &right_winners) {
            if d_int > x {
                return f32::NAN;
            }
            match rw[y * w + x - d_int] {
                Some(kr) if (kr as f64 - k as f64).abs() <= t => {}
                _ => return f32::NAN,
            }
        }
        let mut d = d_int as f64;
        if params.subpixel && k > 0 && k + 1 < nd {
            let (c0, c1, c2) = (s[k - 1] as f64, s[k] as f64, s[k + 1] as f64);
            let denom = c0 - 2.0 * c1 + c2;
            if denom > 0.0 {
                d += ((c0 - c2) / (2.0 * denom)).clamp(-0.5, 0.5);
            }
        }
        d as f32
    });
    Ok(DisparityMap::from_raw(w as u32, h as u32, range, data))
}
