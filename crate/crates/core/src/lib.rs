//! Semantic correspondence from multi-layer convolutional features.
//!
//! The crate consumes feature maps exported by an external backbone (the HFM1
//! file format in [`feature_io`]) and runs the full matching pipeline on the CPU:
//!
//! ```text
//! FeatureStack ──assemble──▶ HyperImage ──match_rhm──▶ ConfidenceTensor
//!                                                            │
//!                                  form_flow ◀───────────────┘
//!                                      │
//!                  transfer_keypoint ──┴──▶ predictions ──▶ PCK
//! ```
//!
//! [`layersearch`] runs a beam search over layer combinations using the mean
//! validation PCK of that pipeline as its objective.
//!
//! All heavy kernels are data-parallel through `rayon` and produce bitwise
//! identical output regardless of the worker count.

mod error;
pub mod eval;
pub mod feature_io;
pub mod flow;
mod geometry;
pub mod hyperimage;
pub mod layersearch;
pub mod rhm;

pub use error::{Error, Result};
pub use geometry::{BBox, ImageDims, Point};

pub use eval::{
    evaluate_dataset, keypoint_correct, load_annotations, pck_pair, write_annotations, EvalReport,
    HpfPipeline, KeypointPipeline, Matcher, PairAnnotation, PckConfig, PckReference,
};
pub use feature_io::{
    load_stack, planted_pair, save_stack, synth_stack, FeatureMap, FeatureStack, LayerGeometry,
    LayerSpec, StackSource,
};
pub use flow::{form_flow, transfer_all, transfer_keypoint, Flow, KeypointPrediction};
pub use hyperimage::{assemble, HyperImage, Hyperpixel, LayerSet};
pub use layersearch::{
    make_pck_evaluator, search, BeamMemory, Evaluator, SearchConfig, SearchOutcome, TraceEntry,
};
pub use rhm::{
    appearance_similarity, match_nn_only, match_rhm, offset_bin, ConfidenceTensor, HoughHistogram,
    OffsetNormalizer, RhmConfig,
};
