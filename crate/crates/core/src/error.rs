use thiserror::Error;

use crate::tree::NodeKey;

#[derive(Debug, Error)]
pub enum MraError {
    #[error("unsupported order k={k}: expected {min}..={max}")]
    UnsupportedOrder { k: usize, min: usize, max: usize },

    #[error("unsupported dimension {0}: expected 1, 2 or 3")]
    UnsupportedDimension(usize),

    #[error("two-scale filters failed orthogonality check (residual {residual:e})")]
    FilterConstruction { residual: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function is already in {0} form")]
    WrongForm(&'static str),

    #[error("incompatible functions: {0}")]
    Incompatible(String),

    #[error("projection did not converge by level {max_depth} in box {key}")]
    RefinementFailure { key: NodeKey, max_depth: u8 },

    #[error("point {point:?} lies outside the domain [{lo}, {hi}]")]
    OutsideDomain { point: Vec<f64>, lo: f64, hi: f64 },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("kernel fit could not reach relative error {eps:e} (best {achieved:e})")]
    FitFailure { eps: f64, achieved: f64 },

    #[error("kernel range inconsistent with function: {0}")]
    RangeMismatch(String),

    #[error("eigensolver breakdown: {0}")]
    Breakdown(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MraError>;
