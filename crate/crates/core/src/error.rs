use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoints are not aligned: {0}")]
    Alignment(String),
    #[error("fusion needs at least one model")]
    EmptyFusion,
    #[error("invalid fusion weights: {0}")]
    Weight(String),
    #[error("no intertraining candidate left for target task `{0}`")]
    NoCandidate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
