use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("reference image is identically zero")]
    ZeroReference,

    #[error("bad magic bytes {0:?}, expected \"LSDV\"")]
    BadMagic([u8; 4]),

    #[error("unsupported file version {0}")]
    VersionMismatch(u16),

    #[error("unexpected file kind {found}, expected {expected}")]
    WrongKind { expected: u8, found: u8 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("dimension product overflows: {0:?}")]
    DimsOverflow(Vec<u32>),

    #[error(transparent)]
    Io(#[from] io::Error),
}
