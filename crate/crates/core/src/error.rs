//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A match-file line did not parse as `x y x y score`.
    #[error("match file line {line}: {reason}")]
    MatchParse { line: usize, reason: String },

    /// A match-file line carried a coordinate outside the image it refers to.
    #[error("match file line {line}: coordinate out of bounds ({what})")]
    MatchOutOfBounds { line: usize, what: String },

    /// Fewer matches than the pipeline can work with.
    #[error("insufficient matches: have {have}, need at least {need}")]
    InsufficientMatches { have: usize, need: usize },

    /// The iterative singular-value solver failed to settle.
    #[error("partial SVD did not converge after {iterations} steps (last drift {drift:.3e})")]
    SvdNoConvergence { iterations: usize, drift: f64 },

    /// A configuration field was outside its stated domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A stage of the pipeline failed; carries the stage name and the cause.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
