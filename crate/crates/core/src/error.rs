use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the window")]
    OutOfWindow { x: f64, y: f64 },

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("margin ordering violated: {0}")]
    MarginOrdering(String),

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn pre(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by user configuration rather than numerics.
    pub fn is_configuration(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_configuration(),
            Error::InvalidWindow(_)
            | Error::InvalidParameter(_)
            | Error::MarginOrdering(_)
            | Error::Scenario(_)
            | Error::Precondition(_) => true,
            _ => false,
        }
    }
}
