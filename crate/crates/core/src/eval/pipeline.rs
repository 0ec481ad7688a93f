use std::sync::Arc;

use crate::feature_io::{FeatureStack, StackSource};
use crate::flow::{form_flow, transfer_all, Flow};
use crate::hyperimage::{assemble, HyperImage, LayerSet};
use crate::rhm::{match_nn_only, match_rhm, ConfidenceTensor, RhmConfig};
use crate::{Error, PairAnnotation, Point, Result};

/// Anything that predicts target keypoints for an annotated pair.
pub trait KeypointPipeline: Sync {
    fn predict(&self, pair: &PairAnnotation) -> Result<Vec<Point>>;
}

/// Matching kernel used by [`match_pair`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Matcher {
    /// Appearance times geometric consensus.
    #[default]
    Rhm,
    /// Appearance only.
    NnOnly,
}

/// Everything produced by matching one pair of stacks.
#[derive(Debug)]
pub struct PairMatch {
    pub src: HyperImage,
    pub tgt: HyperImage,
    pub confidence: ConfidenceTensor,
    pub flow: Flow,
}

pub fn match_pair(
    src: &FeatureStack,
    tgt: &FeatureStack,
    layers: &LayerSet,
    cfg: &RhmConfig,
    matcher: Matcher,
) -> Result<PairMatch> {
    let (src, tgt) = rayon::join(|| assemble(src, layers), || assemble(tgt, layers));
    let (src, tgt) = (src?, tgt?);
    let confidence = match matcher {
        Matcher::Rhm => match_rhm(&src, &tgt, cfg)?,
        Matcher::NnOnly => match_nn_only(&src, &tgt, cfg)?,
    };
    let flow = form_flow(&confidence, &src, &tgt)?;
    Ok(PairMatch {
        src,
        tgt,
        confidence,
        flow,
    })
}

/// The full pipeline: load stacks, assemble, match, form flow and transfer.
pub struct HpfPipeline {
    pub stacks: Arc<dyn StackSource>,
    pub layers: LayerSet,
    pub rhm: RhmConfig,
    pub matcher: Matcher,
}

impl HpfPipeline {
    pub fn new(stacks: Arc<dyn StackSource>, layers: LayerSet, rhm: RhmConfig) -> Self {
        Self {
            stacks,
            layers,
            rhm,
            matcher: Matcher::Rhm,
        }
    }

    pub fn with_matcher(mut self, matcher: Matcher) -> Self {
        self.matcher = matcher;
        self
    }
}

impl KeypointPipeline for HpfPipeline {
    fn predict(&self, pair: &PairAnnotation) -> Result<Vec<Point>> {
        let run = || -> Result<Vec<Point>> {
            let src = self.stacks.stack(&pair.src_image)?;
            let tgt = self.stacks.stack(&pair.tgt_image)?;
            let m = match_pair(&src, &tgt, &self.layers, &self.rhm, self.matcher)?;
            Ok(transfer_all(&m.flow, &m.src, pair)?
                .into_iter()
                .map(|p| p.point)
                .collect())
        };
        run().map_err(|e| Error::Pair {
            pair_id: pair.pair_id.clone(),
            source: Box::new(e),
        })
    }
}
