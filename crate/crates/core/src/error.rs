use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("effort {0} is outside the admissible range [0, 1]")]
    EffortOutOfRange(f64),

    #[error("type index {index} is invalid for agent {agent} with {count} types")]
    InvalidTypeIndex {
        agent: usize,
        index: usize,
        count: usize,
    },

    #[error("agent index {index} is invalid for a problem with {count} agents")]
    InvalidAgentIndex { index: usize, count: usize },

    #[error("invalid parameter `{field}` = {value}: {reason}")]
    InvalidParameter {
        field: String,
        value: f64,
        reason: &'static str,
    },

    #[error("prior of agent {agent} sums to {sum}, expected 1")]
    PriorNotNormalized { agent: usize, sum: f64 },

    #[error("conditional expectation on agent {agent}, type {type_index} is undefined: prior probability is zero")]
    ZeroProbabilityCondition { agent: usize, type_index: usize },

    #[error("quadrature rule has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("contract vector has length {found}, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("{0}")]
    InvalidConfig(String),

    #[error("objective is not finite at effort {effort} (agent {agent}, type {true_type}, announced {announced})")]
    NonFiniteObjective {
        agent: usize,
        true_type: usize,
        announced: usize,
        effort: f64,
    },

    #[error("sampler failure at stage {stage}: {reason}")]
    SamplerFailure { stage: usize, reason: String },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("unknown strategy `{name}`; available: {available}")]
    UnknownStrategy { name: String, available: String },
}

pub(crate) fn check_positive(field: &str, value: f64) -> Result<()> {
    if value > 0.0 && !value.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field: field.to_string(),
            value,
            reason: "must be positive",
        })
    }
}

pub(crate) fn check_nonnegative(field: &str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field: field.to_string(),
            value,
            reason: "must be finite and nonnegative",
        })
    }
}
