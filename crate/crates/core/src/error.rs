//! One error type over every module, with a coarse classification used for
//! process exit codes.

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::decoder::{DecoderError, TrainError};
use crate::eval::EvalError;
use crate::face3d::FaceError;
use crate::project::ProjectError;
use crate::semantics::SemanticsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad or unreadable input.
    Data,
    /// A computation failed (divergence, non-finite values, singular systems).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Face(#[from] FaceError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Project(#[from] ProjectError),
}

fn decoder_kind(e: &DecoderError) -> ErrorKind {
    match e {
        DecoderError::NonFinite { .. } => ErrorKind::Numeric,
        _ => ErrorKind::Data,
    }
}

fn semantics_kind(e: &SemanticsError) -> ErrorKind {
    match e {
        SemanticsError::Decoder(d) => decoder_kind(d),
        SemanticsError::SamplingFailed => ErrorKind::Numeric,
        _ => ErrorKind::Data,
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Decoder(e) => decoder_kind(e),
            Self::Train(TrainError::Diverged { .. }) => ErrorKind::Numeric,
            Self::Train(TrainError::Decoder(e)) => decoder_kind(e),
            Self::Semantics(e) => semantics_kind(e),
            Self::Eval(EvalError::Decoder(e)) => decoder_kind(e),
            Self::Project(ProjectError::Edit { source, .. }) => semantics_kind(source),
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
