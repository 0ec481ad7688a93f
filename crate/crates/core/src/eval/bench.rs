use std::time::Instant;

use serde::Serialize;

use crate::hyperimage::HyperImage;
use crate::rhm::{match_rhm, RhmConfig};
use crate::{Error, Result};

/// Wall-clock samples of repeated matching, in milliseconds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchStats {
    pub samples_ms: Vec<f64>,
    pub min_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

impl BenchStats {
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::InvalidConfig("no timing samples".into()));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
            mean_ms: sorted.iter().sum::<f64>() / n as f64,
            median_ms,
            samples_ms,
        })
    }
}

/// Times `repeats` runs of [`match_rhm`] on already assembled hyperimages.
pub fn bench_match(
    src: &HyperImage,
    tgt: &HyperImage,
    cfg: &RhmConfig,
    repeats: usize,
) -> Result<BenchStats> {
    if repeats < 3 {
        return Err(Error::InvalidConfig(format!(
            "need at least 3 repeats, got {repeats}"
        )));
    }
    // One untimed run to fault in buffers and surface errors early.
    match_rhm(src, tgt, cfg)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let conf = match_rhm(src, tgt, cfg)?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
        drop(conf);
    }
    BenchStats::from_samples(samples)
}
