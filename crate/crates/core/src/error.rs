use thiserror::Error;

use crate::idx::IdxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("image dimensions differ: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("coefficient vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("pad size {pad_to} is smaller than the image extent {extent}")]
    PadTooSmall { pad_to: usize, extent: usize },

    #[error("no selected pyramid level is large enough for a {window}x{window} window")]
    ConfigUnusable { window: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("{images} images but {labels} labels")]
    LabelCountMismatch { images: usize, labels: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParams(msg.into())
    }
}
