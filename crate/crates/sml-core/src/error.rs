use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum SmlError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("agent {agent} has an empty neighborhood")]
    EmptyNeighborhood { agent: usize },

    #[error("power iteration did not converge within {max_iters} iterations (residual {residual:e})")]
    ConvergenceFailure { max_iters: usize, residual: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("agent index {index} out of range (K = {num_agents})")]
    AgentIndex { index: usize, num_agents: usize },

    #[error("non-finite statistic for agent {agent} at time {time}")]
    NonFiniteSignal { agent: usize, time: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("idx parse: bad magic {magic:#010x}")]
    IdxBadMagic { magic: u32 },

    #[error("idx parse: truncated payload (expected {expected} bytes, got {got})")]
    IdxTruncated { expected: usize, got: usize },

    #[error("idx parse: dimension product overflows")]
    IdxDimOverflow,

    #[error("data error: {0}")]
    Data(String),

    #[error("agent {agent} holdout is missing class {class:+}")]
    MissingClass { agent: usize, class: i8 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("replay snapshot hash mismatch (recorded {recorded}, actual {actual})")]
    HashMismatch { recorded: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SmlError>;

impl SmlError {
    /// CLI exit code: 2 config, 3 data, 4 numeric divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            SmlError::Config(_) | SmlError::HashMismatch { .. } => 2,
            SmlError::Data(_)
            | SmlError::IdxBadMagic { .. }
            | SmlError::IdxTruncated { .. }
            | SmlError::IdxDimOverflow
            | SmlError::MissingClass { .. }
            | SmlError::Io(_) => 3,
            SmlError::Divergence { .. }
            | SmlError::ConvergenceFailure { .. }
            | SmlError::NonFiniteSignal { .. } => 4,
            _ => 1,
        }
    }
}
