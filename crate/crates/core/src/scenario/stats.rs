//! Summary statistics over a population of durations.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Order statistics and moments of a sample, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub min: f64,
    pub max: f64,
    /// Lower middle element for even counts.
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub stddev: f64,
    /// `mean + 3 * stddev`.
    pub three_sigma: f64,
    pub sample_count: usize,
}

pub fn summarize(samples: &[f64]) -> Result<StatsSummary> {
    if samples.is_empty() {
        return Err(SimError::config("cannot summarize an empty sample"));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(SimError::config(format!("non-finite sample {x}")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let stddev = if n > 1 {
        let ss: f64 = sorted.iter().map(|x| (x - mean) * (x - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(StatsSummary {
        min: sorted[0],
        max: sorted[n - 1],
        median: sorted[(n - 1) / 2],
        mean,
        stddev,
        three_sigma: mean + 3.0 * stddev,
        sample_count: n,
    })
}
