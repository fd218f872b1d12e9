use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("no superpixel falls into the {0} size class")]
    NoEligibleSegments(&'static str),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("unknown discriminator architecture `{0}`")]
    UnknownArch(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("training data is empty")]
    DataEmpty,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("image {height}x{width} is smaller than the {patch}px patch")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("logit range is degenerate (all values equal {0})")]
    DegenerateRange(f64),
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("patch set is empty")]
    EmptyPatchSet,
    #[error("SVR solver failed: {0}")]
    SolverFailure(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance input")]
    ZeroVariance,
    #[error("group `{0}` has no scores")]
    EmptyGroup(String),
    #[error("baseline time must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("container format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
