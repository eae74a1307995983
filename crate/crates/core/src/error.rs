use alloc::boxed::Box;
use alloc::string::String;

use crate::model::CalModel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize a zero vector{}", row.map(|r| alloc::format!(" (row {r})")).unwrap_or_default())]
    Normalization { row: Option<usize> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("non-finite values: {0}")]
    Numerics(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("id mapping error: {0}")]
    Mapping(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("split error: {0}")]
    Split(String),

    /// Training produced a non-finite loss or stayed far above its starting loss.
    /// Carries the parameters from the last epoch that finished cleanly, if any.
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence {
        epoch: usize,
        loss: f64,
        last_good: Option<Box<CalModel<f32>>>,
    },
}
