//! Keypoint-transfer evaluation: annotations, PCK and dataset reports.

mod annotation;
mod bench;
mod pipeline;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Point, Result};

pub use annotation::{
    load_annotations, parse_annotations, write_annotations, Difficulty, PairAnnotation, Side,
};
pub use bench::{bench_match, BenchStats};
pub use pipeline::{match_pair, HpfPipeline, KeypointPipeline, Matcher, PairMatch};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Which box normalizes the PCK threshold; both are taken from the target side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PckReference {
    #[serde(rename = "img")]
    Image,
    #[serde(rename = "bbox")]
    BBox,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PckConfig {
    pub alpha: f64,
    pub reference: PckReference,
}

impl Default for PckConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            reference: PckReference::Image,
        }
    }
}

impl PckConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `(height, width)` of the reference box for `pair`.
    pub fn reference_size(&self, pair: &PairAnnotation) -> (f64, f64) {
        match self.reference {
            PckReference::Image => (pair.tgt_dims.height as f64, pair.tgt_dims.width as f64),
            PckReference::BBox => (pair.tgt_bbox.height, pair.tgt_bbox.width),
        }
    }
}

/// True when `pred` lies within `alpha * max(h, w)` of `gt` (inclusive).
pub fn keypoint_correct(pred: Point, gt: Point, alpha: f64, reference: (f64, f64)) -> Result<bool> {
    let (h, w) = reference;
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "reference size must be positive, got {h}x{w}"
        )));
    }
    Ok(pred.distance(gt) <= alpha * h.max(w))
}

/// Fraction of the pair's keypoints predicted correctly.
pub fn pck_pair(preds: &[Point], pair: &PairAnnotation, cfg: &PckConfig) -> Result<f64> {
    if preds.len() != pair.tgt_kps.len() {
        return Err(Error::DimMismatch(format!(
            "{} predictions for {} keypoints in pair {}",
            preds.len(),
            pair.tgt_kps.len(),
            pair.pair_id
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidAnnotation {
            pair_id: pair.pair_id.clone(),
            message: "no keypoints".into(),
        });
    }
    let reference = cfg.reference_size(pair);
    let mut correct = 0usize;
    for (p, gt) in preds.iter().zip(&pair.tgt_kps) {
        if keypoint_correct(*p, *gt, cfg.alpha, reference)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Bucket {
    pub pck: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairScore {
    pub pair_id: String,
    pub category: String,
    pub pck: f64,
    pub keypoints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairFailure {
    pub pair_id: String,
    pub error: String,
}

/// Aggregated PCK over a dataset. Every aggregate is a mean of per-pair PCKs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub reference: PckReference,
    pub overall: f64,
    pub pair_count: usize,
    pub keypoint_count: usize,
    pub per_category: BTreeMap<String, Bucket>,
    /// Annotation type (`viewpoint`, `scale`, `truncation`, `occlusion`) to
    /// level to bucket; pairs without that label are left out of the type.
    pub per_difficulty: BTreeMap<String, BTreeMap<String, Bucket>>,
    pub pairs: Vec<PairScore>,
    pub failures: Vec<PairFailure>,
}

const DIFFICULTY_TYPES: [&str; 4] = ["viewpoint", "scale", "truncation", "occlusion"];

fn difficulty_labels(kind: &str) -> &'static [&'static str] {
    match kind {
        "viewpoint" | "scale" => &["easy", "medi", "hard"],
        _ => &["none", "src", "tgt", "both"],
    }
}

fn pair_labels(pair: &PairAnnotation) -> [Option<&'static str>; 4] {
    [
        pair.viewpoint.map(Difficulty::label),
        pair.scale.map(Difficulty::label),
        pair.truncation.map(Side::label),
        pair.occlusion.map(Side::label),
    ]
}

fn mean_bucket(values: &[f64]) -> Bucket {
    Bucket {
        pck: values.iter().sum::<f64>() / values.len() as f64,
        pairs: values.len(),
    }
}

impl EvalReport {
    fn build(pairs: &[PairAnnotation], results: Vec<Result<f64>>, cfg: &PckConfig) -> Self {
        let mut scores = Vec::new();
        let mut failures = Vec::new();
        let mut by_category: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut by_level: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        let mut keypoint_count = 0;
        for (pair, result) in pairs.iter().zip(results) {
            match result {
                Ok(pck) => {
                    keypoint_count += pair.tgt_kps.len();
                    by_category
                        .entry(pair.category.clone())
                        .or_default()
                        .push(pck);
                    for (kind, label) in DIFFICULTY_TYPES.iter().zip(pair_labels(pair)) {
                        if let Some(label) = label {
                            by_level
                                .entry(kind.to_string())
                                .or_default()
                                .entry(label.to_string())
                                .or_default()
                                .push(pck);
                        }
                    }
                    scores.push(PairScore {
                        pair_id: pair.pair_id.clone(),
                        category: pair.category.clone(),
                        pck,
                        keypoints: pair.tgt_kps.len(),
                    });
                }
                Err(e) => failures.push(PairFailure {
                    pair_id: pair.pair_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
        let overall = if scores.is_empty() {
            0.0
        } else {
            scores.iter().map(|s| s.pck).sum::<f64>() / scores.len() as f64
        };
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            alpha: cfg.alpha,
            reference: cfg.reference,
            overall,
            pair_count: scores.len(),
            keypoint_count,
            per_category: by_category
                .iter()
                .map(|(k, v)| (k.clone(), mean_bucket(v)))
                .collect(),
            per_difficulty: by_level
                .iter()
                .map(|(kind, levels)| {
                    (
                        kind.clone(),
                        levels
                            .iter()
                            .map(|(l, v)| (l.clone(), mean_bucket(v)))
                            .collect(),
                    )
                })
                .collect(),
            pairs: scores,
            failures,
        }
    }

    /// Aligned text rendering: headline, per-category rows and a row of
    /// difficulty columns.
    pub fn to_table(&self) -> String {
        let reference = match self.reference {
            PckReference::Image => "img",
            PckReference::BBox => "bbox",
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "PCK@{:.2} ({reference})  pairs {}  keypoints {}  failed {}",
            self.alpha,
            self.pair_count,
            self.keypoint_count,
            self.failures.len()
        );
        let _ = writeln!(out, "overall {:>8.3}", self.overall);
        let _ = writeln!(out);
        let width = self
            .per_category
            .keys()
            .map(|k| k.len())
            .max()
            .unwrap_or(0)
            .max(8);
        let _ = writeln!(out, "{:<width$} {:>6} {:>7}", "category", "pairs", "PCK");
        for (name, b) in &self.per_category {
            let _ = writeln!(out, "{name:<width$} {:>6} {:>7.3}", b.pairs, b.pck);
        }
        if !self.per_difficulty.is_empty() {
            let _ = writeln!(out);
            let mut head = String::new();
            let mut row = String::new();
            for kind in DIFFICULTY_TYPES {
                let levels = self.per_difficulty.get(kind);
                for label in difficulty_labels(kind) {
                    let col = format!("{}:{label}", &kind[..4]);
                    let _ = write!(head, "{col:>10}");
                    match levels.and_then(|l| l.get(*label)) {
                        Some(b) => {
                            let _ = write!(row, "{:>10.3}", b.pck);
                        }
                        None => {
                            let _ = write!(row, "{:>10}", "-");
                        }
                    }
                }
            }
            let _ = writeln!(out, "{head}");
            let _ = writeln!(out, "{row}");
        }
        for f in &self.failures {
            let _ = writeln!(out, "FAILED {}: {}", f.pair_id, f.error);
        }
        out
    }
}

/// Runs `pipeline` on every pair and aggregates PCK. Pairs whose prediction
/// fails are listed in `failures` and excluded from every aggregate.
pub fn evaluate_dataset<P>(
    pairs: &[PairAnnotation],
    pipeline: &P,
    cfg: &PckConfig,
) -> Result<EvalReport>
where
    P: KeypointPipeline + ?Sized,
{
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "no annotation pairs to evaluate".into(),
        ));
    }
    cfg.validate()?;
    let results: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|pair| {
            let preds = pipeline.predict(pair)?;
            pck_pair(&preds, pair, cfg)
        })
        .collect();
    Ok(EvalReport::build(pairs, results, cfg))
}
