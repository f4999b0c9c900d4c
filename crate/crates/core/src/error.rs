use thiserror::Error;

use crate::sim::SimTime;

/// Errors raised by the simulator and its configuration loaders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled in the past (now {now}, fire_at {fire_at})")]
    ScheduleInPast { now: SimTime, fire_at: SimTime },

    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("invalid timeline: {0}")]
    Timeline(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("transfer did not complete within {limit} of simulated time")]
    Timeout { limit: SimTime },

    #[error("{0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            SimError::Config(_)
                | SimError::Policy(_)
                | SimError::Timeline(_)
                | SimError::InvalidProbability(_)
                | SimError::Io(_)
        )
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
