//! Errors shared by both ends of a session.

use std::io;

use thiserror::Error;

use crate::coo::TensorError;
use crate::cp::CpError;
use crate::handshake::{codes, HandshakeError};
use crate::metadata::MetadataError;
use crate::partition::PartitionError;
use crate::result::ResultError;
use crate::shm::ShmError;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Shm(#[from] ShmError),
    #[error(transparent)]
    Handshake(#[from] HandshakeError),
    #[error(transparent)]
    Metadata(#[from] MetadataError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cp(#[from] CpError),
    #[error(transparent)]
    Result(#[from] ResultError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid session token {0:?}")]
    InvalidToken(String),
    #[error("plan does not describe this tensor: {0}")]
    PlanMismatch(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("partition {partition}: element {element} lies outside its box or the tensor")]
    OutOfBox { partition: usize, element: usize },
    #[error("region {0} is missing")]
    RegionMissing(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("timed out waiting for {0}")]
    Timeout(String),
}

impl SessionError {
    /// The flag error code this failure maps to.
    pub fn code(&self) -> u32 {
        match self {
            SessionError::Metadata(_) | SessionError::OutOfBox { .. } => codes::METADATA_INVALID,
            SessionError::RegionMissing(_) | SessionError::Shm(ShmError::NotFound(_)) => {
                codes::REGION_MISSING
            }
            SessionError::LayoutMismatch(_) => codes::LAYOUT_MISMATCH,
            SessionError::Cp(_) => codes::COMPUTE_FAILURE,
            SessionError::Handshake(HandshakeError::Peer(code)) => *code,
            _ => codes::COMPUTE_FAILURE,
        }
    }
}

pub type Result<T> = std::result::Result<T, SessionError>;

/// Session tokens become part of region names, so they are limited to
/// ASCII alphanumerics, `_` and `.`.
pub fn validate_token(token: &str) -> Result<()> {
    let ok = !token.is_empty()
        && token.len() <= 64
        && token
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidToken(token.to_string()))
    }
}
