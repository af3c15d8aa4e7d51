use alloc::string::String;

/// Errors raised by the analytic evaluators, the simulator and the schedulers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{name} = {value} is outside {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("position {position} + {len} exceeds stream length {stream_len}")]
    Overflow {
        position: usize,
        len: usize,
        stream_len: usize,
    },
    #[error("draft tree is full ({max_size} nodes)")]
    TreeFull { max_size: usize },
    #[error("unknown configuration id {0}")]
    UnknownConfig(usize),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid scheduler: {0}")]
    InvalidScheduler(String),
    #[error("lossless decoding violated at position {position}")]
    Losslessness { position: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, range: &'static str) -> Self {
        Error::Domain { name, value, range }
    }

    /// True for failures of an internal invariant rather than bad input.
    pub fn is_invariant_breach(&self) -> bool {
        matches!(self, Error::Losslessness { .. })
    }
}
