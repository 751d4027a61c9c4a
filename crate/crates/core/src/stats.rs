use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample statistics (n − 1 denominator; n = 1 gives a zero deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

pub fn descriptive_stats(values: &[f64]) -> Result<DescriptiveStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("descriptive statistics of an empty list".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("descriptive statistics require finite values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = if values.len() == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // rounding can push the mean a hair outside [min, max] for near-constant input
    let mean = mean.clamp(min, max);
    Ok(DescriptiveStats {
        mean,
        std_dev,
        min,
        max,
    })
}
