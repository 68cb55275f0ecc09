use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet has no {0} class")]
    MissingSpecial(&'static str),
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("label id {id} is not a character class of the alphabet")]
    InvalidLabel { id: usize },
    #[error("unknown label token {0:?}")]
    UnknownLabel(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("label sequence is infeasible: {frames} frames given, min_frames = {min_frames}")]
    Infeasible { frames: usize, min_frames: usize },
    #[error("non-finite value at frame {frame}, class {class}")]
    NonFinite { frame: usize, class: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("path enumeration exceeds the guard of {limit} paths")]
    OracleGuard { limit: usize },
    #[error("sequence of {frames} frames is shorter than the stacking window {window}")]
    TooShort { frames: usize, window: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible sample {id}: {source}")]
    InfeasibleSample {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error reports a label that cannot fit in the available frames.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::Infeasible { .. } => true,
            Error::InfeasibleSample { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
