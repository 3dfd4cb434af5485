use std::path::PathBuf;

use longembed_autodiff::TensorError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("odd head dimension {0}; rotary embeddings rotate pairs")]
    OddHeadDim(usize),

    #[error("{positions} positions for a sequence of {seq}")]
    PositionLengthMismatch { positions: usize, seq: usize },

    #[error("target context {target} is shorter than trained context {trained}")]
    TargetShorterThanTrained { target: usize, trained: usize },

    #[error("sequence of {len} tokens exceeds the allowed {limit}")]
    SequenceTooLong { len: usize, limit: usize },

    #[error("weight {name}: {detail}")]
    WeightShape { name: String, detail: String },

    #[error("row {0} has no unmasked tokens")]
    EmptyRow(usize),

    #[error("zero-norm embedding in row {0}")]
    ZeroNormEmbedding(usize),

    #[error("no positions selected for masked language modeling")]
    EmptyMaskSelection,

    #[error("no labeled positions")]
    NoLabels,

    #[error("batch of {n} does not tile into chunks of {chunk}")]
    ChunkTiling { n: usize, chunk: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("positive document of pair {0} is missing from the corpus")]
    PositiveNotInCorpus(usize),

    #[error("stage {stage} cannot run on {data} data")]
    StageDataMismatch {
        stage: &'static str,
        data: &'static str,
    },

    #[error("pair {pair} has {available} hard negatives, plan requires {required}")]
    NotEnoughNegatives {
        pair: usize,
        available: usize,
        required: usize,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),

    #[error("step {step} beyond schedule of {total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used by the CLI's one-line error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Tensor(_) => "tensor",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::OddHeadDim(_) => "odd_head_dim",
            Error::PositionLengthMismatch { .. } => "position_length_mismatch",
            Error::TargetShorterThanTrained { .. } => "target_shorter_than_trained",
            Error::SequenceTooLong { .. } => "sequence_too_long",
            Error::WeightShape { .. } => "weight_shape",
            Error::EmptyRow(_) => "empty_row",
            Error::ZeroNormEmbedding(_) => "zero_norm_embedding",
            Error::EmptyMaskSelection => "empty_mask_selection",
            Error::NoLabels => "no_labels",
            Error::ChunkTiling { .. } => "chunk_tiling",
            Error::Empty(_) => "empty_input",
            Error::PositiveNotInCorpus(_) => "positive_not_in_corpus",
            Error::StageDataMismatch { .. } => "stage_data_mismatch",
            Error::NotEnoughNegatives { .. } => "not_enough_negatives",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::StepOutOfRange { .. } => "step_out_of_range",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }
}
