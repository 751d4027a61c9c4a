use serde::Serialize;

use super::{ClassLabel, ClassScores, PatchGrid};
use crate::error::{Error, Result};
use crate::par;

/// Single-channel real-valued image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl ScoreImage {
    pub fn from_vec(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != (width * height) as usize {
            return Err(Error::param("score count does not match dimensions"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// 8-bit rendering, score 1 → 255.
    pub fn to_gray(&self) -> image::GrayImage {
        let px = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::GrayImage::from_raw(self.width, self.height, px).expect("sized buffer")
    }
}

/// How scores of overlapping patches combine at a pixel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    #[default]
    Mean,
    /// Per-class maximum; pixels no longer sum to 1.
    Max,
}

impl std::str::FromStr for CombineRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            _ => Err(Error::param(format!("unknown combine rule `{s}` (mean|max)"))),
        }
    }
}

impl std::fmt::Display for CombineRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Max => "max",
        })
    }
}

/// Five per-pixel class score images.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    width: u32,
    height: u32,
    pixels: Vec<[f64; 5]>,
    coverage: Vec<u32>,
}

impl ProbabilityMaps {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scores_at(&self, x: u32, y: u32) -> [f64; 5] {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Number of patches covering each pixel.
    pub fn coverage(&self) -> &[u32] {
        &self.coverage
    }

    pub fn class_map(&self, class: ClassLabel) -> ScoreImage {
        let data = self.pixels.iter().map(|p| p[class.index()]).collect();
        ScoreImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Combines per-patch scores into per-pixel maps. Each image row visits its
/// covering patches in patch-id order, so the result does not depend on
/// the thread count.
pub fn assemble_probability_maps(grid: &PatchGrid, scores: &[ClassScores], rule: CombineRule) -> Result<ProbabilityMaps> {
    if scores.len() != grid.len() {
        return Err(Error::param(format!(
            "{} scores for {} grid patches",
            scores.len(),
            grid.len()
        )));
    }
    let (w, h, win) = (grid.width() as usize, grid.height() as usize, grid.window() as usize);
    let nx = grid.xs().len();
    let mut pixels = vec![[0.0f64; 5]; w * h];
    let mut coverage = vec![0u32; w * h];
    par::for_each_chunk_pair_mut(&mut pixels, w, &mut coverage, w, |y, row, cov| {
        for (gy, &py) in grid.ys().iter().enumerate() {
            let py = py as usize;
            if y < py || y >= py + win {
                continue;
            }
            for (gx, &px) in grid.xs().iter().enumerate() {
                let s = scores[gy * nx + gx].as_array();
                let px = px as usize;
                for x in px..px + win {
                    let acc = &mut row[x];
                    for c in 0..5 {
                        acc[c] = match rule {
                            CombineRule::Mean => acc[c] + s[c],
                            CombineRule::Max => acc[c].max(s[c]),
                        };
                    }
                    cov[x] += 1;
                }
            }
        }
        if rule == CombineRule::Mean {
            for (acc, &n) in row.iter_mut().zip(cov.iter()) {
                debug_assert!(n > 0, "flush rule leaves no pixel uncovered");
                if n > 0 {
                    let n = n as f64;
                    acc.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
    });
    Ok(ProbabilityMaps {
        width: grid.width(),
        height: grid.height(),
        pixels,
        coverage,
    })
}

/// Boolean image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    /// True when every 1-pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn to_gray(&self) -> image::GrayImage {
        let px = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width, self.height, px).expect("sized buffer")
    }
}

/// `1` where the score strictly exceeds `threshold`.
pub fn binarize(map: &ScoreImage, threshold: f64) -> BinaryImage {
    BinaryImage {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&v| v > threshold).collect(),
    }
}

/// Horizontal half-widths of the digital disk, indexed by `dy + r`.
fn disk_rows(diameter: u32) -> Vec<usize> {
    let r = (diameter / 2) as i64;
    (-r..=r).map(|dy| ((r * r + r - dy * dy) as f64).sqrt().floor() as usize).collect()
}

/// One pass of dilation (`grow`) or erosion (`!grow`) with the disk on a
/// `w × h` canvas; outside pixels read as `!grow`.
fn disk_pass(src: &[bool], w: usize, h: usize, rows: &[usize], grow: bool) -> Vec<bool> {
    let r = rows.len() / 2;
    // Per-row prefix counts of set pixels turn each horizontal run into O(1).
    let mut prefix = vec![0u32; h * (w + 1)];
    for y in 0..h {
        let p = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        for x in 0..w {
            p[x + 1] = p[x] + src[y * w + x] as u32;
        }
    }
    let mut out = vec![false; w * h];
    par::for_each_chunk_mut(&mut out, w, |y, row| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut hit = !grow;
            for (k, &hw) in rows.iter().enumerate() {
                let yy = y as i64 + k as i64 - r as i64;
                let lo = x as i64 - hw as i64;
                let hi = x as i64 + hw as i64;
                let span = (hi - lo + 1) as u32;
                if yy < 0 || yy >= h as i64 {
                    if !grow {
                        hit = false;
                        break;
                    }
                    continue;
                }
                let (clo, chi) = (lo.max(0) as usize, hi.min(w as i64 - 1) as usize);
                let p = &prefix[yy as usize * (w + 1)..];
                let ones = p[chi + 1] - p[clo];
                if grow && ones > 0 {
                    hit = true;
                    break;
                }
                if !grow && ones < span {
                    hit = false;
                    break;
                }
            }
            *o = hit;
        }
    });
    out
}

/// Closing (dilation then erosion) by a disk of odd `diameter`. The image
/// is padded with zeros by the disk radius so the result equals the
/// closing of the image embedded in an empty plane.
pub fn morphological_close(img: &BinaryImage, diameter: u32) -> Result<BinaryImage> {
    if diameter == 0 || diameter.is_multiple_of(2) {
        return Err(Error::param(format!("closing diameter must be odd, got {diameter}")));
    }
    let r = (diameter / 2) as usize;
    let (w, h) = (img.width as usize, img.height as usize);
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut canvas = vec![false; pw * ph];
    for y in 0..h {
        canvas[(y + r) * pw + r..(y + r) * pw + r + w].copy_from_slice(&img.data[y * w..(y + 1) * w]);
    }
    let rows = disk_rows(diameter);
    let dilated = disk_pass(&canvas, pw, ph, &rows, true);
    let closed = disk_pass(&dilated, pw, ph, &rows, false);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        data.extend_from_slice(&closed[(y + r) * pw + r..(y + r) * pw + r + w]);
    }
    Ok(BinaryImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// 8-connected components ordered by their first pixel in raster order;
/// pixels within a component are in raster order.
pub fn connected_components(img: &BinaryImage) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut seen = vec![false; img.data.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..img.data.len() {
        if !img.data[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if img.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp.into_iter().map(|i| ((i as i64 % w) as u32, (i as i64 / w) as u32)).collect());
    }
    out
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DetectionBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl DetectionBox {
    /// Tight box around a non-empty pixel set.
    pub fn enclosing(pixels: &[(u32, u32)]) -> Option<Self> {
        let (&(x0, y0), rest) = pixels.split_first()?;
        let mut b = Self {
            x_min: x0,
            y_min: y0,
            x_max: x0,
            y_max: y0,
        };
        for &(x, y) in rest {
            b.x_min = b.x_min.min(x);
            b.y_min = b.y_min.min(y);
            b.x_max = b.x_max.max(x);
            b.y_max = b.y_max.max(y);
        }
        Some(b)
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Tight boxes of components with at least `min_area` pixels, in component order.
pub fn bounding_boxes(components: &[Vec<(u32, u32)>], min_area: usize) -> Vec<DetectionBox> {
    components
        .iter()
        .filter(|c| c.len() >= min_area)
        .filter_map(|c| DetectionBox::enclosing(c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::build_patch_grid;
    use proptest::prelude::*;

    fn fixed(bunch: f64) -> ClassScores {
        let r = (1.0 - bunch) / 4.0;
        ClassScores::new([bunch, r, r, r, r]).unwrap()
    }

    #[test]
    fn maps_without_overlap_copy_patch_scores() {
        let g = build_patch_grid(8, 4, 4, 4).unwrap();
        let s = [fixed(1.0), fixed(0.2)];
        let m = assemble_probability_maps(&g, &s, CombineRule::Mean).unwrap();
        assert_eq!(m.scores_at(1, 1), *s[0].as_array());
        assert_eq!(m.scores_at(6, 3), *s[1].as_array());
        assert!(m.coverage().iter().all(|&c| c == 1));
    }

    #[test]
    fn overlap_means_and_maxes() {
        let g = build_patch_grid(6, 4, 4, 2).unwrap();
        assert_eq!(g.len(), 2);
        let s = [fixed(1.0), fixed(0.5)];
        let m = assemble_probability_maps(&g, &s, CombineRule::Mean).unwrap();
        assert_eq!(m.scores_at(3, 0)[0], 0.75);
        assert_eq!(m.scores_at(0, 0)[0], 1.0);
        assert_eq!(m.scores_at(5, 0)[0], 0.5);
        let sum: f64 = m.scores_at(3, 2).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let mx = assemble_probability_maps(&g, &s, CombineRule::Max).unwrap();
        assert_eq!(mx.scores_at(3, 0)[0], 1.0);
        assert!(assemble_probability_maps(&g, &s[..1], CombineRule::Mean).is_err());
    }

    #[test]
    fn binarize_is_strict() {
        let m = ScoreImage::from_vec(3, 1, vec![0.86, 0.85, 0.0]).unwrap();
        let b = binarize(&m, 0.85);
        assert_eq!(b.as_slice(), &[true, false, false]);
        assert_eq!(binarize(&ScoreImage::from_vec(2, 2, vec![0.0; 4]).unwrap(), 0.85).count_ones(), 0);
    }

    #[test]
    fn disk_shape() {
        assert_eq!(disk_rows(5), vec![1, 2, 2, 2, 1]);
        assert_eq!(disk_rows(1), vec![0]);
        assert_eq!(disk_rows(3), vec![1, 1, 1]);
    }

    #[test]
    fn closing_examples() {
        let mut one = BinaryImage::new(9, 9);
        one.set(4, 4, true);
        assert_eq!(morphological_close(&one, 5).unwrap(), one);

        // Two 3×3 blobs with a 2-pixel gap.
        let bridged = BinaryImage::from_fn(12, 7, |x, y| (2..5).contains(&y) && ((1..4).contains(&x) || (6..9).contains(&x)));
        let closed = morphological_close(&bridged, 5).unwrap();
        assert_eq!(connected_components(&bridged).len(), 2);
        assert_eq!(connected_components(&closed).len(), 1);
        assert!(bridged.is_subset_of(&closed));

        let full = BinaryImage::from_fn(6, 5, |_, _| true);
        assert_eq!(morphological_close(&full, 5).unwrap(), full);
        assert!(morphological_close(&full, 4).is_err());
    }

    #[test]
    fn components_eight_connected() {
        let diag = BinaryImage::from_fn(3, 3, |x, y| (x, y) == (0, 0) || (x, y) == (1, 1));
        assert_eq!(connected_components(&diag).len(), 1);
        assert!(connected_components(&BinaryImage::new(5, 5)).is_empty());
        let checker = BinaryImage::from_fn(4, 4, |x, y| (x + y) % 2 == 0);
        let cc = connected_components(&checker);
        assert_eq!(cc.len(), 1);
        assert_eq!(cc[0].len(), 8);
        assert_eq!(cc[0][0], (0, 0));
        let two = BinaryImage::from_fn(6, 3, |x, y| (x, y) == (4, 0) || (x, y) == (1, 2));
        let cc = connected_components(&two);
        assert_eq!(cc, vec![vec![(4, 0)], vec![(1, 2)]]);
    }

    #[test]
    fn box_examples() {
        let comps = vec![vec![(2, 3), (5, 7)], vec![(9, 9)]];
        let b = bounding_boxes(&comps, 0);
        assert_eq!(
            b[0],
            DetectionBox {
                x_min: 2,
                y_min: 3,
                x_max: 5,
                y_max: 7
            }
        );
        assert_eq!(bounding_boxes(&comps, 4).len(), 0);
        assert_eq!(bounding_boxes(&comps, 2).len(), 1);

        let disks = BinaryImage::from_fn(60, 40, |x, y| {
            let d1 = (x as i32 - 12).pow(2) + (y as i32 - 15).pow(2) <= 36;
            let d2 = (x as i32 - 45).pow(2) + (y as i32 - 25).pow(2) <= 64;
            d1 || d2
        });
        let b = bounding_boxes(&connected_components(&disks), 25);
        assert_eq!(
            b,
            vec![
                DetectionBox {
                    x_min: 6,
                    y_min: 9,
                    x_max: 18,
                    y_max: 21
                },
                DetectionBox {
                    x_min: 37,
                    y_min: 17,
                    x_max: 53,
                    y_max: 33
                }
            ]
        );
    }

    fn random_image(w: u32, h: u32, bits: &[bool]) -> BinaryImage {
        BinaryImage::from_fn(w, h, |x, y| bits[(y * w + x) as usize % bits.len()])
    }

    proptest! {
        #[test]
        fn closing_idempotent_and_extensive(w in 1u32..24, h in 1u32..24, bits in prop::collection::vec(any::<bool>(), 1..600), d in prop::sample::select(vec![1u32, 3, 5, 7])) {
            let img = random_image(w, h, &bits);
            let c = morphological_close(&img, d).unwrap();
            prop_assert!(img.is_subset_of(&c));
            prop_assert_eq!(morphological_close(&c, d).unwrap(), c);
        }

        #[test]
        fn binarize_monotone(vals in prop::collection::vec(0.0f64..=1.0, 1..200), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let m = ScoreImage::from_vec(vals.len() as u32, 1, vals).unwrap();
            prop_assert!(binarize(&m, hi).is_subset_of(&binarize(&m, lo)));
        }

        #[test]
        fn mean_maps_sum_to_one(w in 8u32..40, h in 8u32..40, (window, stride) in (2u32..8).prop_flat_map(|n| (Just(n), 1..=n)), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let g = build_patch_grid(w, h, window, stride).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<ClassScores> = (0..g.len())
                .map(|_| ClassScores::softmax(std::array::from_fn(|_| rng.random_range(-5.0..5.0))))
                .collect();
            let m = assemble_probability_maps(&g, &s, CombineRule::Mean).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let sum: f64 = m.scores_at(x, y).iter().sum();
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}
