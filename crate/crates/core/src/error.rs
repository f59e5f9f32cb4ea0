//! Crate-level error type aggregating the per-module failures.

use thiserror::Error;

use crate::coupled::CoupledError;
use crate::dmp::TrainError;
use crate::io::IoError;
use crate::merge::MergeError;
use crate::quat::QuatError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Quat(#[from] QuatError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Coupled(#[from] CoupledError),
}

pub type Result<T> = std::result::Result<T, Error>;
