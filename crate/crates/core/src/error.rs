use alloc::string::String;

use crate::kernels::KernelFamily;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("level count {levels} out of range for n = {n} (at most {max})")]
    LevelsOutOfRange { n: usize, levels: u32, max: u32 },

    #[error("rank {rank} exceeds leaf capacity {leaf_size}")]
    RankExceedsLeaf { rank: usize, leaf_size: usize },

    #[error("factorization failed at node {node} ({stage})")]
    Factorization { node: usize, stage: &'static str },

    #[error("dense size {n} exceeds cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("random Fourier features are not available for the {0} kernel")]
    UnsupportedFamily(KernelFamily),

    #[error("points lie in the same leaf {0}; the path expansion applies across leaves only")]
    SameLeaf(usize),

    #[error("class {0} has no training samples")]
    EmptyClass(String),

    #[error("input is not positive semi-definite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("relative error undefined for zero-norm truth")]
    ZeroNorm,

    #[error("empty input")]
    Empty,
}

pub type Result<T> = core::result::Result<T, Error>;
