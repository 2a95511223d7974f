use thiserror::Error;

/// Errors raised by the filtering library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipfError {
    /// A model, prior, or observation definition is invalid.
    #[error("invalid model definition: {0}")]
    Model(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A simulated state became non-finite.
    #[error("simulation blew up (non-finite state) at step {step}")]
    SimulationBlowup { step: usize },

    /// Every importance weight underflowed or was not finite.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// An operation was called with arguments outside its contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// Controller synthesis failed (e.g. Riccati blow-up).
    #[error("controller design failed: {0}")]
    Design(String),

    /// A reference filter lost a structural property (e.g. SPD covariance).
    #[error("oracle failure at step {step}: {reason}")]
    Oracle { step: usize, reason: String },
}

impl PipfError {
    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipfError::SimulationBlowup { .. }
                | PipfError::DegenerateWeights(_)
                | PipfError::Design(_)
                | PipfError::Oracle { .. }
        )
    }
}

pub type Result<T, E = PipfError> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(PipfError::Dimension { what, expected, got })
    }
}
