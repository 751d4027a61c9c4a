pub mod config;
pub mod detection;
pub mod error;
pub mod filters;
pub mod geometry;
mod knn;
pub mod mapping;
pub mod par;
pub mod pipeline;
pub mod ply;
pub mod segmentation;
pub mod stereo;
pub mod synth;
pub mod volume;
pub mod stats;
