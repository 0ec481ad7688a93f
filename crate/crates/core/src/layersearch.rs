//! Beam search over layer combinations.
//!
//! Seeds are the singletons of the base candidates. Every later round grows
//! each surviving set by one candidate larger than the set's minimum, so the
//! minimum (and therefore the base layer) never changes along a path.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::eval::{pck_pair, HpfPipeline, KeypointPipeline, PairAnnotation, PckConfig};
use crate::feature_io::StackSource;
use crate::hyperimage::LayerSet;
use crate::rhm::RhmConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchConfig {
    pub candidates: BTreeSet<u32>,
    pub base_candidates: BTreeSet<u32>,
    pub beam_size: usize,
    pub max_layers: usize,
}

impl SearchConfig {
    pub fn new(
        candidates: impl IntoIterator<Item = u32>,
        base_candidates: impl IntoIterator<Item = u32>,
    ) -> Self {
        Self {
            candidates: candidates.into_iter().collect(),
            base_candidates: base_candidates.into_iter().collect(),
            beam_size: 4,
            max_layers: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_candidates.is_empty() {
            return Err(Error::InvalidConfig("no base candidates".into()));
        }
        if let Some(l) = self.base_candidates.difference(&self.candidates).next() {
            return Err(Error::InvalidConfig(format!(
                "base candidate {l} is not a candidate layer"
            )));
        }
        if self.beam_size == 0 {
            return Err(Error::InvalidConfig("beam size must be at least 1".into()));
        }
        if self.max_layers == 0 {
            return Err(Error::InvalidConfig("max layers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scores a layer set, given as ascending ids. Higher is better.
pub trait Evaluator: Sync {
    fn evaluate(&self, layers: &[u32]) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&[u32]) -> Result<f64> + Sync,
{
    fn evaluate(&self, layers: &[u32]) -> Result<f64> {
        self(layers)
    }
}

/// Scored layer sets from one round of the search.
#[derive(Clone, Debug, Default)]
pub struct BeamMemory {
    entries: Vec<(Vec<u32>, f64)>,
}

/// Descending score, then lexicographically smaller ids.
fn rank(a: &(Vec<u32>, f64), b: &(Vec<u32>, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

impl BeamMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mut layers: Vec<u32>, score: f64) {
        layers.sort_unstable();
        self.entries.push((layers, score));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find_best_n(&self, n: usize) -> Vec<(Vec<u32>, f64)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(rank);
        sorted.truncate(n);
        sorted
    }

    pub fn find_best(&self) -> Option<(Vec<u32>, f64)> {
        self.entries.iter().min_by(|a, b| rank(a, b)).cloned()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    /// 0 for the seed round.
    pub iteration: usize,
    pub layers: Vec<u32>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchOutcome {
    pub layers: LayerSet,
    pub score: f64,
    /// Every evaluated set in evaluation order.
    pub trace: Vec<TraceEntry>,
}

fn score_round<E: Evaluator + ?Sized>(
    sets: Vec<Vec<u32>>,
    eval: &E,
    iteration: usize,
) -> Result<Vec<TraceEntry>> {
    sets.into_par_iter()
        .map(|layers| {
            let score = eval.evaluate(&layers).and_then(|s| {
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::InvalidConfig(format!("evaluator returned {s}")))
                }
            });
            match score {
                Ok(score) => Ok(TraceEntry {
                    iteration,
                    layers,
                    score,
                }),
                Err(e) => Err(Error::Evaluator {
                    layers,
                    source: Box::new(e),
                }),
            }
        })
        .collect()
}

pub fn search<E: Evaluator + ?Sized>(cfg: &SearchConfig, eval: &E) -> Result<SearchOutcome> {
    cfg.validate()?;
    let seeds = cfg.base_candidates.iter().map(|&l| vec![l]).collect();
    let mut round = score_round(seeds, eval, 0)?;
    let mut trace = round.clone();
    let mut memory = BeamMemory::new();
    for e in &round {
        memory.insert(e.layers.clone(), e.score);
    }
    let (mut best_layers, mut best_score) = memory.find_best().expect("at least one seed");

    for iteration in 1..cfg.max_layers {
        let mut expansions = BTreeSet::new();
        for (beam, _) in memory.find_best_n(cfg.beam_size) {
            let min = beam[0];
            for &l in cfg.candidates.range(min + 1..) {
                if beam.binary_search(&l).is_err() {
                    let mut next = beam.clone();
                    next.push(l);
                    next.sort_unstable();
                    expansions.insert(next);
                }
            }
        }
        if expansions.is_empty() {
            break;
        }
        round = score_round(expansions.into_iter().collect(), eval, iteration)?;
        memory = BeamMemory::new();
        for e in &round {
            memory.insert(e.layers.clone(), e.score);
        }
        trace.extend(round.iter().cloned());
        let (layers, score) = memory.find_best().expect("nonempty round");
        if score > best_score {
            best_layers = layers;
            best_score = score;
        }
    }

    Ok(SearchOutcome {
        layers: LayerSet::from_ids(&best_layers)?,
        score: best_score,
        trace,
    })
}

/// Mean validation PCK of the full pipeline, cached per layer set.
pub struct PckEvaluator {
    validation: Vec<PairAnnotation>,
    stacks: Arc<dyn StackSource>,
    rhm: RhmConfig,
    pck: PckConfig,
    cache: Mutex<HashMap<Vec<u32>, f64>>,
}

pub fn make_pck_evaluator(
    validation: Vec<PairAnnotation>,
    stacks: Arc<dyn StackSource>,
    rhm: RhmConfig,
    pck: PckConfig,
) -> Result<PckEvaluator> {
    if validation.is_empty() {
        return Err(Error::InvalidConfig("no validation pairs".into()));
    }
    rhm.validate()?;
    pck.validate()?;
    for pair in &validation {
        for id in [&pair.src_image, &pair.tgt_image] {
            stacks.stack(id).map_err(|e| Error::Pair {
                pair_id: pair.pair_id.clone(),
                source: Box::new(e),
            })?;
        }
    }
    Ok(PckEvaluator {
        validation,
        stacks,
        rhm,
        pck,
        cache: Mutex::new(HashMap::new()),
    })
}

impl Evaluator for PckEvaluator {
    fn evaluate(&self, layers: &[u32]) -> Result<f64> {
        let mut key = layers.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v);
        }
        let set = LayerSet::from_ids(&key)?;
        debug_assert_eq!(set.base(), key[0]);
        let pipeline = HpfPipeline::new(Arc::clone(&self.stacks), set, self.rhm);
        let scores: Vec<f64> = self
            .validation
            .par_iter()
            .map(|pair| {
                let preds = pipeline.predict(pair)?;
                pck_pair(&preds, pair, &self.pck)
            })
            .collect::<Result<_>>()?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        self.cache.lock().expect("cache lock").insert(key, mean);
        Ok(mean)
    }
}
