use super::census::census_transform;
use super::{DisparityRange, RectifiedStereoPair};
use crate::error::Result;
use crate::par;

/// Hamming matching costs laid out `[y][x][d]`, `d` relative to `range.min()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: u32,
    height: u32,
    range: DisparityRange,
    max_cost: u8,
    costs: Vec<u8>,
    defined: Vec<bool>,
}

impl CostVolume {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn range(&self) -> DisparityRange {
        self.range
    }

    /// Cost assigned to impossible matches (descriptor bit count).
    pub fn max_cost(&self) -> u8 {
        self.max_cost
    }

    /// Cost at absolute disparity `d`.
    pub fn cost(&self, x: u32, y: u32, d: u32) -> u8 {
        let nd = self.range.count();
        let i = (y as usize * self.width as usize + x as usize) * nd + (d - self.range.min()) as usize;
        self.costs[i]
    }

    /// Whether the left descriptor at `(x, y)` exists.
    pub fn is_defined(&self, x: u32, y: u32) -> bool {
        self.defined[(y * self.width + x) as usize]
    }

    pub(crate) fn raw(&self) -> &[u8] {
        &self.costs
    }

    pub(crate) fn defined_mask(&self) -> &[bool] {
        &self.defined
    }

    #[cfg(test)]
    pub(crate) fn from_parts(width: u32, height: u32, range: DisparityRange, max_cost: u8, costs: Vec<u8>) -> Self {
        let defined = vec![true; (width * height) as usize];
        Self {
            width,
            height,
            range,
            max_cost,
            costs,
            defined,
        }
    }
}

/// `cost(x, y, d)` = Hamming distance between the left descriptor at `(x, y)`
/// and the right descriptor at `(x − d, y)`; the maximal cost when either
/// descriptor is missing.
pub fn build_cost_volume(pair: &RectifiedStereoPair, range: DisparityRange, window: u32) -> Result<CostVolume> {
    let left = census_transform(pair.left(), window)?;
    let right = census_transform(pair.right(), window)?;
    let (w, h) = (pair.width() as usize, pair.height() as usize);
    let nd = range.count();
    let max_cost = left.bit_count() as u8;
    let mut costs = vec![max_cost; w * h * nd];
    let (lraw, rraw) = (left.raw(), right.raw());
    par::for_each_chunk_mut(&mut costs, w * nd, |y, row| {
        for x in 0..w {
            if !left.is_defined(x as u32, y as u32) {
                continue;
            }
            let l = lraw[y * w + x];
            let cell = &mut row[x * nd..(x + 1) * nd];
            for (k, c) in cell.iter_mut().enumerate() {
                let d = range.min() as usize + k;
                if d > x || !right.is_defined((x - d) as u32, y as u32) {
                    continue;
                }
                *c = (l ^ rraw[y * w + x - d]).count_ones() as u8;
            }
        }
    });
    let defined = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| left.is_defined(x as u32, y as u32))
        .collect();
    Ok(CostVolume {
        width: w as u32,
        height: h as u32,
        range,
        max_cost,
        costs,
        defined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::GrayImage;
    use rand::{Rng, SeedableRng};

    fn noise(w: u32, h: u32, seed: u64) -> GrayImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, |_, _| image::Luma([rng.random()]))
    }

    #[test]
    fn identical_images_cost_zero_at_d0() {
        let img = noise(40, 30, 1);
        let pair = RectifiedStereoPair::new(img.clone(), img).unwrap();
        let v = build_cost_volume(&pair, DisparityRange::new(0, 4).unwrap(), 5).unwrap();
        for y in 2..28 {
            for x in 2..38 {
                assert_eq!(v.cost(x, y, 0), 0);
            }
        }
        assert!(!v.is_defined(0, 0));
        assert_eq!(v.cost(0, 0, 0), 24);
    }

    #[test]
    fn shifted_pair_costs_zero_at_the_shift() {
        let left = noise(60, 20, 2);
        // right(x) = left(x + 7)  ⇔  left(x) matches right(x − 7)
        let right = GrayImage::from_fn(60, 20, |x, y| {
            *left.get_pixel((x + 7).min(59), y)
        });
        let pair = RectifiedStereoPair::new(left, right).unwrap();
        let v = build_cost_volume(&pair, DisparityRange::new(0, 10).unwrap(), 5).unwrap();
        for y in 2..18 {
            for x in (7 + 2)..(60 - 2 - 7) {
                assert_eq!(v.cost(x, y, 7), 0, "({x},{y})");
            }
        }
        // right pixel out of bounds → maximal cost
        assert_eq!(v.cost(3, 5, 7), v.max_cost());
    }

    #[test]
    fn cost_is_hamming_distance() {
        // Build two 3×3 images whose census codes differ in exactly 3 bits.
        let a = GrayImage::from_raw(3, 3, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let b = GrayImage::from_raw(3, 3, vec![9, 8, 3, 4, 5, 6, 7, 1, 9]).unwrap();
        // a: 11110000, b: 00110010 → bits 0,1,6 differ
        let pair = RectifiedStereoPair::new(a, b).unwrap();
        let v = build_cost_volume(&pair, DisparityRange::new(0, 1).unwrap(), 3).unwrap();
        assert_eq!(v.cost(1, 1, 0), 3);
        assert!(v.raw().iter().all(|&c| c <= v.max_cost()));
    }
}
