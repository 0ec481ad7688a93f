use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt payload: {0}")]
    Corrupt(String),

    #[error("non-finite value in layer {layer_id} at flat index {index}")]
    NonFinite { layer_id: u32, index: usize },

    #[error("invalid feature stack: {0}")]
    InvalidStack(String),

    #[error("layer {0} is not present in the feature stack")]
    MissingLayer(u32),

    #[error(
        "base layer {base} ({base_h}x{base_w}) is smaller than layer {other} ({other_h}x{other_w})"
    )]
    BaseNotLargest {
        base: u32,
        base_h: usize,
        base_w: usize,
        other: u32,
        other_h: usize,
        other_w: usize,
    },

    #[error("invalid layer set: {0}")]
    InvalidLayerSet(String),

    #[error("position ({i}, {j}) outside {height}x{width} grid")]
    OutOfGrid {
        i: usize,
        j: usize,
        height: usize,
        width: usize,
    },

    #[error("keypoint ({y}, {x}) outside {height}x{width} image")]
    KeypointOutOfBounds {
        y: f64,
        x: f64,
        height: u32,
        width: u32,
    },

    #[error("no receptive field covers keypoint ({y}, {x})")]
    NoCoveringCell { y: f64, x: f64 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    AnnotationSyntax { line: usize, message: String },

    #[error("pair {pair_id}: {message}")]
    InvalidAnnotation { pair_id: String, message: String },

    #[error("no feature stack for image `{image_id}`")]
    MissingStack { image_id: String },

    #[error("pair {pair_id}: {source}")]
    Pair {
        pair_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("keypoint #{index}: {source}")]
    Keypoint {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluating layers {layers:?}: {source}")]
    Evaluator {
        layers: Vec<u32>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by flags or settings rather than by input data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::MissingLayer(_)
            | Error::BaseNotLargest { .. }
            | Error::InvalidLayerSet(_)
            | Error::InvalidConfig(_) => true,
            Error::Pair { source, .. }
            | Error::Keypoint { source, .. }
            | Error::Evaluator { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
