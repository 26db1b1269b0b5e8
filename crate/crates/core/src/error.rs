use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid cavity parameters: {0}")]
    InvalidParams(String),

    #[error("coefficients violate r = 1 + t (deviation {0:e})")]
    InconsistentCoefficients(f64),

    #[error("t - t0 has imaginary part {0:e}; device circuits are only defined at resonance")]
    OffResonance(f64),

    #[error("{what} is not normalized (squared norm {norm})")]
    NotNormalized { what: String, norm: f64 },

    #[error("unknown mode `{0}`")]
    UnknownMode(String),

    #[error("unknown sink `{0}`")]
    UnknownSink(String),

    #[error("sink `{name}` already registered with a different kind")]
    SinkKindConflict { name: String },

    #[error("element writes mode `{0}` twice")]
    DuplicateModeWrite(String),

    #[error("quantum dot index {0} out of range")]
    BadQdIndex(usize),

    #[error("photon index {0} out of range")]
    BadPhotonIndex(usize),

    #[error("no live photon in mode `{0}`")]
    NoPhotonInMode(String),

    #[error("more than one photon occupies mode `{0}`")]
    AmbiguousPhoton(String),

    #[error("transmission {0} outside [0, 1]")]
    InvalidTransmission(f64),

    #[error("states live in different spaces: {0}")]
    MismatchedSpace(String),

    #[error("outcome has zero probability")]
    ZeroProbability,

    #[error("dimension {0} exceeds the dense oracle limit")]
    DimensionOverflow(usize),

    #[error("invalid device configuration: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    Protocol(String),

    #[error("netlist error at {line}:{column}: {message}")]
    Netlist {
        line: usize,
        column: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
