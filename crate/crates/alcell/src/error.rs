//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the simulator, data pipeline, and models.
#[derive(Debug, Error)]
pub enum Error {
    /// The mass total x2 + x3 + x4 must be strictly positive to form ratios.
    #[error("mass-ratio denominator x2+x3+x4 = {0} is not positive")]
    DegenerateMassTotal(f64),

    /// An auxiliary quantity evaluated to a non-finite value.
    #[error("auxiliary quantity g{index} is not finite at the given state/input")]
    NonFiniteAux { index: usize },

    /// A derivative component evaluated to a non-finite value.
    #[error("derivative component {index} (1-based) is not finite")]
    NonFiniteDerivative { index: usize },

    /// Ground-truth integration produced a non-finite state.
    #[error("simulation diverged at step {step}: {source}")]
    SimulationDiverged {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// Corpus generation gave up on one trajectory slot after repeated retries.
    #[error("trajectory {index} diverged on all {attempts} sampling attempts")]
    CorpusExhausted { index: usize, attempts: usize },

    /// Initial-condition conversion requires c_x2 + c_x3 < 1.
    #[error("initial ratios sum to {0}; no mass left for cryolite")]
    RatioConversion(f64),

    /// Vector length does not match the expected network layer width.
    #[error("{context}: expected length {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The training loss left the finite range.
    #[error("training diverged: loss became non-finite in epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    /// A predictor produced a non-finite derivative estimate.
    #[error("network output component {index} is not finite")]
    NonFiniteNetworkOutput { index: usize },

    /// A model file declares a target kind incompatible with the predictor kind.
    #[error("predictor {kind} requires a network trained on {expected} targets, found {actual}")]
    TargetKindMismatch {
        kind: &'static str,
        expected: &'static str,
        actual: &'static str,
    },

    /// A required input file is missing.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// A CSV or JSON artifact did not parse.
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
