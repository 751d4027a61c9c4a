use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ColoredPoint, ColoredPointCloud, Point, Rgb};
use crate::mapping::MAP_FRAME;
use crate::par;

/// A straight row along +y of ellipsoidal canopies on vertical trunks over
/// flat ground (z = 0). Plant `i` is centred at `y = i · spacing`, `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticRowSpec {
    pub plant_count: usize,
    pub spacing: f64,
    /// Canopy semi-axes along x (lateral), y (row) and z (up).
    pub semi_axes: [f64; 3],
    /// Canopy bottom height; trunks span `0..trunk_height`.
    pub trunk_height: f64,
    pub trunk_radius: f64,
    /// Ground strip half-width around the row.
    pub ground_half_width: f64,
    /// Canopy points per m³.
    pub density: f64,
    /// Trunk and ground points per m².
    pub surface_density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticRowSpec {
    fn default() -> Self {
        Self {
            plant_count: 54,
            spacing: 0.9,
            semi_axes: [0.3, 0.35, 0.45],
            trunk_height: 0.75,
            trunk_radius: 0.04,
            ground_half_width: 0.6,
            density: 4000.0,
            surface_density: 300.0,
            noise_sigma: 0.005,
            seed: 1,
        }
    }
}

impl SyntheticRowSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be positive, got {v}")))
            }
        };
        if self.plant_count == 0 {
            return Err(Error::param("plant count must be at least 1"));
        }
        positive("spacing", self.spacing)?;
        for (a, n) in self.semi_axes.iter().zip(["semi-axis x", "semi-axis y", "semi-axis z"]) {
            positive(n, *a)?;
        }
        positive("trunk height", self.trunk_height)?;
        positive("trunk radius", self.trunk_radius)?;
        positive("ground half-width", self.ground_half_width)?;
        positive("density", self.density)?;
        positive("surface density", self.surface_density)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param(format!("noise sigma must be ≥ 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn plant_centre(&self, i: usize) -> Point {
        Point::new(0.0, i as f64 * self.spacing, self.trunk_height + self.semi_axes[2])
    }

    /// Row extent along y, half a spacing beyond the outer plants.
    pub fn row_span(&self) -> (f64, f64) {
        (-self.spacing / 2.0, (self.plant_count as f64 - 0.5) * self.spacing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointClass {
    Canopy,
    Trunk,
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantTruth {
    pub centre: [f64; 3],
    pub semi_axes: [f64; 3],
    /// 4/3 · π · abc.
    pub volume: f64,
    /// Canopy vertical extent, 2c.
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthBundle {
    pub cloud: ColoredPointCloud,
    pub classes: Vec<PointClass>,
    /// Plant of each canopy and trunk point.
    pub plant_of: Vec<Option<usize>>,
    pub plants: Vec<PlantTruth>,
}

impl GroundTruthBundle {
    pub fn is_canopy(&self) -> Vec<bool> {
        self.classes.iter().map(|c| *c == PointClass::Canopy).collect()
    }
}

/// Green-dominant canopy colour (GRVI > 0).
pub(crate) fn canopy_color(rng: &mut impl Rng) -> Rgb {
    let g: u8 = rng.random_range(110..=200);
    Rgb::new(rng.random_range(30..=g - 20), g, rng.random_range(20..=80))
}

/// Red/brown-dominant colour (GRVI ≤ 0).
fn soil_color(rng: &mut impl Rng, trunk: bool) -> Rgb {
    let r: u8 = if trunk { rng.random_range(100..=150) } else { rng.random_range(110..=170) };
    let b = if trunk { rng.random_range(30..=60) } else { rng.random_range(50..=90) };
    Rgb::new(r, rng.random_range(60..=r - 10), b)
}

fn jitter(rng: &mut impl Rng, noise: &Option<Normal<f64>>, p: Point) -> Point {
    match noise {
        Some(n) => Point::new(p.x + n.sample(rng), p.y + n.sample(rng), p.z + n.sample(rng)),
        None => p,
    }
}

type Sampled = (Vec<ColoredPoint>, Vec<PointClass>);

fn sample_plant(spec: &SyntheticRowSpec, i: usize, noise: &Option<Normal<f64>>) -> Sampled {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let [a, b, c] = spec.semi_axes;
    let centre = spec.plant_centre(i);
    let volume = 4.0 / 3.0 * std::f64::consts::PI * a * b * c;
    let n_canopy = (spec.density * volume).round() as usize;
    let mut pts = Vec::with_capacity(n_canopy + 64);
    let mut cls = Vec::with_capacity(n_canopy + 64);
    while pts.len() < n_canopy {
        let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if u[0] * u[0] + u[1] * u[1] + u[2] * u[2] > 1.0 {
            continue;
        }
        let p = Point::new(centre.x + a * u[0], centre.y + b * u[1], centre.z + c * u[2]);
        let col = canopy_color(&mut rng);
        pts.push(ColoredPoint::new(jitter(&mut rng, noise, p), col));
        cls.push(PointClass::Canopy);
    }
    let r = spec.trunk_radius;
    let n_trunk = (spec.surface_density * 2.0 * std::f64::consts::PI * r * spec.trunk_height).round() as usize;
    for _ in 0..n_trunk {
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let z = rng.random_range(0.0..spec.trunk_height);
        let p = Point::new(r * phi.cos(), centre.y + r * phi.sin(), z);
        let col = soil_color(&mut rng, true);
        pts.push(ColoredPoint::new(jitter(&mut rng, noise, p), col));
        cls.push(PointClass::Trunk);
    }
    (pts, cls)
}

fn sample_ground(spec: &SyntheticRowSpec, noise: &Option<Normal<f64>>) -> Vec<ColoredPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    let (y0, y1) = spec.row_span();
    let g = spec.ground_half_width;
    let n = (spec.surface_density * 2.0 * g * (y1 - y0)).round() as usize;
    (0..n)
        .map(|_| {
            let p = Point::new(rng.random_range(-g..g), rng.random_range(y0..y1), 0.0);
            let col = soil_color(&mut rng, false);
            ColoredPoint::new(jitter(&mut rng, noise, p), col)
        })
        .collect()
}

/// Samples canopies uniformly inside their ellipsoids, trunks on their
/// cylinder surfaces and the ground on its plane, then adds isotropic
/// Gaussian noise. Points are ordered plant by plant (canopy, trunk), then
/// ground, in the map frame.
pub fn generate_row(spec: &SyntheticRowSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("valid sigma"));
    let per_plant = par::map_range(spec.plant_count, |i| sample_plant(spec, i, &noise));
    let mut points = Vec::new();
    let mut classes = Vec::new();
    let mut plant_of = Vec::new();
    for (i, (p, c)) in per_plant.into_iter().enumerate() {
        plant_of.extend(std::iter::repeat_n(Some(i), p.len()));
        points.extend(p);
        classes.extend(c);
    }
    let ground = sample_ground(spec, &noise);
    plant_of.extend(std::iter::repeat_n(None, ground.len()));
    classes.extend(std::iter::repeat_n(PointClass::Ground, ground.len()));
    points.extend(ground);
    let [a, b, c] = spec.semi_axes;
    let plants = (0..spec.plant_count)
        .map(|i| {
            let ctr = spec.plant_centre(i);
            PlantTruth {
                centre: [ctr.x, ctr.y, ctr.z],
                semi_axes: spec.semi_axes,
                volume: 4.0 / 3.0 * std::f64::consts::PI * a * b * c,
                height: 2.0 * c,
            }
        })
        .collect();
    Ok(GroundTruthBundle {
        cloud: ColoredPointCloud::new(points, MAP_FRAME)?,
        classes,
        plant_of,
        plants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::grvi_rgb;

    fn small() -> SyntheticRowSpec {
        SyntheticRowSpec {
            plant_count: 3,
            semi_axes: [0.3, 0.3, 0.6],
            ..Default::default()
        }
    }

    #[test]
    fn three_plants_exact_volume() {
        let b = generate_row(&small()).unwrap();
        assert_eq!(b.plants.len(), 3);
        for p in &b.plants {
            assert!((p.volume - 0.2262).abs() < 1e-4);
        }
        assert_eq!(b.plants[2].centre, [0.0, 1.8, 1.35]);
        assert_eq!(b.classes.len(), b.cloud.len());
        assert_eq!(b.plant_of.len(), b.cloud.len());
    }

    #[test]
    fn colours_follow_classes() {
        let b = generate_row(&small()).unwrap();
        for (p, c) in b.cloud.points().iter().zip(&b.classes) {
            let g = grvi_rgb(p.color);
            match c {
                PointClass::Canopy => assert!(g > 0.0),
                _ => assert!(g <= 0.0),
            }
        }
    }

    #[test]
    fn canopy_inside_ellipsoids() {
        let spec = SyntheticRowSpec {
            noise_sigma: 0.0,
            ..small()
        };
        let b = generate_row(&spec).unwrap();
        for ((p, c), k) in b.cloud.points().iter().zip(&b.classes).zip(&b.plant_of) {
            if *c == PointClass::Canopy {
                let ctr = spec.plant_centre(k.unwrap());
                let d = p.position - ctr;
                let [a, bb, cc] = spec.semi_axes;
                assert!((d.x / a).powi(2) + (d.y / bb).powi(2) + (d.z / cc).powi(2) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_row(&small()).unwrap();
        assert_eq!(a, generate_row(&small()).unwrap());
        let other = generate_row(&SyntheticRowSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.cloud, other.cloud);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_row(&SyntheticRowSpec { density: 0.0, ..small() }).is_err());
        assert!(generate_row(&SyntheticRowSpec { spacing: -1.0, ..small() }).is_err());
        assert!(generate_row(&SyntheticRowSpec { plant_count: 0, ..small() }).is_err());
    }
}
