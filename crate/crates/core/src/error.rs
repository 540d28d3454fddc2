use thiserror::Error;

/// Errors produced by the comb engine and everything built on it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("representation mismatch: {left:?} vs {right:?}")]
    RepresentationMismatch {
        left: crate::comb::Representation,
        right: crate::comb::Representation,
    },

    #[error("truncation did not converge: estimated tail {tail:.3e} exceeds tolerance {tolerance:.3e}")]
    Truncation { tail: f64, tolerance: f64 },

    #[error("singular channel scale matrix (det = {det:.3e})")]
    SingularScale { det: f64 },

    #[error("conditioning on a null event: outcome probability {probability:.3e}")]
    NullEvent { probability: f64 },

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("probability {value:.3e} out of [0, 1] beyond numerical slack")]
    ProbabilityOutOfRange { value: f64 },

    #[error("CHSH value {s} exceeds the Tsirelson bound")]
    NonPhysicalChsh { s: f64 },

    #[error("no test rounds for setting {setting}; increase the number of pairs or the test-setting probabilities")]
    MissingSetting { setting: String },

    #[error("insufficient Fock cutoff {n_max}: discarded norm {discarded:.3e}")]
    InsufficientCutoff { n_max: usize, discarded: f64 },

    #[error("Wigner cross term requires equal peak widths ({left} vs {right})")]
    UnequalWidths { left: f64, right: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}
