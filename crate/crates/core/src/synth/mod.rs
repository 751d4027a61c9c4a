//! Synthetic vineyards, stereo pairs and annotated images with exact ground
//! truth.
//!
//! All randomness comes from ChaCha8 keyed by the caller's seed, with one
//! stream per independent item (plant, frame, image), so outputs are
//! reproducible across platforms and thread counts. Procedural textures use
//! a stateless integer hash of lattice coordinates.

mod frames;
mod row;
mod scene;
mod stereo;

pub use frames::{render_frame, render_row_frames, row_frame_positions, CameraRig, RenderedFrame};
pub use row::{generate_row, GroundTruthBundle, PlantTruth, PointClass, SyntheticRowSpec};
pub use scene::{generate_annotated_image, random_scene, AnnotatedImage, BunchSpec, SceneSpec};
pub use stereo::{constant_disparity, generate_stereo_pair, random_texture, two_plane_disparity, SyntheticStereo};

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in [0, 1) for an integer lattice point.
fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = mix(seed ^ mix((i as u64).wrapping_add(mix((j as u64).wrapping_add(mix(k as u64))))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated value noise in [0, 1) with lattice spacing `cell`.
fn value_noise(seed: u64, p: [f64; 3], cell: f64) -> f64 {
    let q = p.map(|v| v / cell);
    let f = q.map(f64::floor);
    let t = [smooth(q[0] - f[0]), smooth(q[1] - f[1]), smooth(q[2] - f[2])];
    let (i, j, k) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
                    * (if dy == 1 { t[1] } else { 1.0 - t[1] })
                    * (if dz == 1 { t[2] } else { 1.0 - t[2] });
                acc += w * lattice(seed, i + dx, j + dy, k + dz);
            }
        }
    }
    acc
}

fn scale_rgb(base: [f64; 3], s: f64) -> [u8; 3] {
    base.map(|c| (c * s).round().clamp(0.0, 255.0) as u8)
}
