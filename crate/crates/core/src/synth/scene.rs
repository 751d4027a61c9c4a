use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{scale_rgb, value_noise};
use crate::detection::{truth_regions, ClassLabel, LabelImage};
use crate::error::{Error, Result};

/// Axis-aligned elliptical bunch in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BunchSpec {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl BunchSpec {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = (x as f64 - self.cx) / self.rx;
        let dy = (y as f64 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }
}

/// Layered scene: leaves everywhere, a sky band at the top, horizontal
/// wood strips, vertical poles, bunches painted last.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub sky_height: u32,
    /// (top row, thickness)
    pub wood_strips: Vec<(u32, u32)>,
    /// (left column, thickness)
    pub poles: Vec<(u32, u32)>,
    pub bunches: Vec<BunchSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image: RgbImage,
    pub labels: LabelImage,
    /// 8-connected bunch regions, in raster order of their first pixel.
    pub regions: Vec<Vec<(u32, u32)>>,
}

const LEAVES: [f64; 3] = [50.0, 150.0, 40.0];
const SKY: [f64; 3] = [150.0, 190.0, 235.0];
const WOOD: [f64; 3] = [130.0, 85.0, 45.0];
const POLE: [f64; 3] = [205.0, 205.0, 200.0];
const BUNCH: [f64; 3] = [70.0, 35.0, 105.0];

pub fn generate_annotated_image(spec: &SceneSpec) -> Result<AnnotatedImage> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::param("scene must have positive size"));
    }
    if spec.bunches.iter().any(|b| !(b.rx > 0.0 && b.ry > 0.0)) {
        return Err(Error::param("bunch radii must be positive"));
    }
    let mut labels = LabelImage::new(w, h, ClassLabel::Leaves);
    let mut image = RgbImage::new(w, h);
    let s = spec.seed;
    for y in 0..h {
        for x in 0..w {
            let p = [x as f64, y as f64, 0.0];
            let mut class = ClassLabel::Leaves;
            if y < spec.sky_height {
                class = ClassLabel::Background;
            }
            if spec.wood_strips.iter().any(|&(y0, t)| (y0..y0 + t).contains(&y)) {
                class = ClassLabel::Wood;
            }
            if spec.poles.iter().any(|&(x0, t)| (x0..x0 + t).contains(&x)) {
                class = ClassLabel::Pole;
            }
            if spec.bunches.iter().any(|b| b.contains(x, y)) {
                class = ClassLabel::Bunch;
            }
            let n = value_noise(s, p, 6.0);
            let fine = value_noise(s ^ 0xf1, p, 2.0);
            let rgb = match class {
                ClassLabel::Leaves => scale_rgb(LEAVES, 0.6 + 0.45 * n + 0.1 * fine),
                ClassLabel::Background => scale_rgb(SKY, 0.95 + 0.05 * n),
                ClassLabel::Wood => scale_rgb(WOOD, 0.8 + 0.3 * n),
                ClassLabel::Pole => scale_rgb(POLE, 0.96 + 0.04 * fine),
                ClassLabel::Bunch => scale_rgb(BUNCH, 0.75 + 0.35 * value_noise(s ^ 0xb0, p, 4.0)),
            };
            labels.set(x, y, class);
            image.put_pixel(x, y, image::Rgb(rgb));
        }
    }
    let regions = truth_regions(&labels);
    Ok(AnnotatedImage { image, labels, regions })
}

/// Bunch cell side; cells are at least this large.
const CELL: u32 = 180;
/// Clearance kept between a bunch's bounding box and its cell edge, so
/// neighbouring bunches are at least `2 · MARGIN` apart, more than one
/// default detection window.
const MARGIN: f64 = 48.0;
const RX: std::ops::Range<f64> = 24.0..34.0;
const RY: std::ops::Range<f64> = 30.0..42.0;

/// Jittered-grid layout: `n_bunches` cells of a grid of roughly 180-pixel
/// cells below the sky band receive one bunch each, kept `MARGIN` pixels
/// inside its cell; one wood strip and up to two poles are added.
pub fn random_scene(width: u32, height: u32, n_bunches: usize, seed: u64) -> Result<SceneSpec> {
    let sky = height / 12;
    let cols = (width / CELL).max(1);
    let rows = ((height - sky) / CELL).max(1);
    let (cw, ch) = (width / cols, (height - sky) / rows);
    if n_bunches > (cols * rows) as usize {
        return Err(Error::param(format!("{n_bunches} bunches do not fit {cols}×{rows} cells")));
    }
    if (cw as f64) <= 2.0 * (RX.end + MARGIN) || (ch as f64) <= 2.0 * (RY.end + MARGIN) {
        return Err(Error::param("image too small for the bunch layout"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<u32> = (0..cols * rows).collect();
    cells.shuffle(&mut rng);
    cells.truncate(n_bunches);
    cells.sort_unstable();
    let bunches = cells
        .iter()
        .map(|&c| {
            let rx = rng.random_range(RX);
            let ry = rng.random_range(RY);
            let (x0, y0) = ((c % cols * cw) as f64, (sky + c / cols * ch) as f64);
            let (mx, my) = (rx + MARGIN, ry + MARGIN);
            BunchSpec {
                cx: rng.random_range(x0 + mx..x0 + cw as f64 - mx),
                cy: rng.random_range(y0 + my..y0 + ch as f64 - my),
                rx,
                ry,
            }
        })
        .collect();
    let wood_strips = vec![(rng.random_range(sky + 10..height / 3), rng.random_range(8..16))];
    let poles = (0..rng.random_range(1..=2))
        .map(|_| (rng.random_range(0..width - 16), rng.random_range(10..16)))
        .collect();
    Ok(SceneSpec {
        width,
        height,
        sky_height: sky,
        wood_strips,
        poles,
        bunches,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::HeuristicClassifier;

    #[test]
    fn five_bunches_five_regions() {
        let s = random_scene(800, 640, 5, 4).unwrap();
        let a = generate_annotated_image(&s).unwrap();
        assert_eq!(a.regions.len(), 5);
        let bunch_px = a.labels.as_slice().iter().filter(|&&c| c == ClassLabel::Bunch).count();
        assert_eq!(a.regions.iter().map(Vec::len).sum::<usize>(), bunch_px);
    }

    #[test]
    fn no_bunches_no_regions() {
        let mut s = random_scene(640, 480, 0, 1).unwrap();
        s.bunches.clear();
        assert!(generate_annotated_image(&s).unwrap().regions.is_empty());
    }

    #[test]
    fn overlapping_pair_merges() {
        let mut s = random_scene(640, 480, 0, 1).unwrap();
        s.bunches = vec![
            BunchSpec { cx: 200.0, cy: 200.0, rx: 30.0, ry: 30.0 },
            BunchSpec { cx: 240.0, cy: 200.0, rx: 30.0, ry: 30.0 },
            BunchSpec { cx: 400.0, cy: 300.0, rx: 20.0, ry: 20.0 },
        ];
        assert_eq!(generate_annotated_image(&s).unwrap().regions.len(), 2);
    }

    #[test]
    fn colours_match_labels_under_reference_rules() {
        let s = random_scene(480, 440, 4, 9).unwrap();
        let a = generate_annotated_image(&s).unwrap();
        let mut agree = 0;
        for (p, c) in a.image.pixels().zip(a.labels.as_slice()) {
            agree += (HeuristicClassifier::pixel_class(p.0) == *c) as usize;
        }
        assert_eq!(agree, a.labels.as_slice().len());
    }

    #[test]
    fn bunches_keep_their_distance() {
        let s = random_scene(960, 800, 20, 5).unwrap();
        for (i, a) in s.bunches.iter().enumerate() {
            for b in &s.bunches[i + 1..] {
                let gx = (a.cx - b.cx).abs() - a.rx - b.rx;
                let gy = (a.cy - b.cy).abs() - a.ry - b.ry;
                assert!(gx.max(gy) >= 2.0 * MARGIN);
            }
        }
        assert!(random_scene(960, 800, 21, 5).is_err());
    }

    #[test]
    fn deterministic() {
        let s = random_scene(640, 480, 6, 11).unwrap();
        assert_eq!(s, random_scene(640, 480, 6, 11).unwrap());
        let a = generate_annotated_image(&s).unwrap();
        assert_eq!(a.image, generate_annotated_image(&s).unwrap().image);
    }
}
