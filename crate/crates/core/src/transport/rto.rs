//! Retransmission timer: the RFC 2988 smoothed estimator with exponential
//! backoff, plus the accelerated tail rule that swaps backoff for short
//! fixed timers once few packets remain in flight.

use serde::{Deserialize, Serialize};

use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RtoMode {
    Rfc2988,
    Accelerated,
}

impl RtoMode {
    pub fn name(self) -> &'static str {
        match self {
            RtoMode::Rfc2988 => "rfc2988",
            RtoMode::Accelerated => "accelerated",
        }
    }
}

impl std::str::FromStr for RtoMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rfc2988" => Ok(RtoMode::Rfc2988),
            "accelerated" => Ok(RtoMode::Accelerated),
            _ => Err(format!("unknown rto mode '{s}' (expected accelerated|rfc2988)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtoPolicyConfig {
    pub mode: RtoMode,
    pub tail_threshold_small: u32,
    pub tail_rto_small: SimTime,
    pub tail_threshold_large: u32,
    pub tail_rto_large: SimTime,
    pub min_rto: SimTime,
    pub max_rto: SimTime,
    pub granularity: SimTime,
    /// Timer value before the first RTT sample.
    pub initial_rto: SimTime,
}

impl Default for RtoPolicyConfig {
    fn default() -> Self {
        RtoPolicyConfig {
            mode: RtoMode::Accelerated,
            tail_threshold_small: 100,
            tail_rto_small: SimTime::from_millis(50),
            tail_threshold_large: 6800,
            tail_rto_large: SimTime::from_millis(185),
            min_rto: SimTime::from_millis(200),
            max_rto: SimTime::from_secs(120),
            granularity: SimTime::from_millis(1),
            initial_rto: SimTime::from_secs(1),
        }
    }
}

impl RtoPolicyConfig {
    pub fn with_mode(mode: RtoMode) -> Self {
        RtoPolicyConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tail_threshold_small >= self.tail_threshold_large {
            return Err("tail_threshold_small must be below tail_threshold_large".into());
        }
        if self.tail_rto_small >= self.tail_rto_large {
            return Err("tail_rto_small must be below tail_rto_large".into());
        }
        if self.min_rto > self.max_rto {
            return Err("min_rto must not exceed max_rto".into());
        }
        if self.tail_rto_small == SimTime::ZERO {
            return Err("tail_rto_small must be positive".into());
        }
        Ok(())
    }
}

/// Smoothed RTT state. Kept in floating-point nanoseconds; the timer value
/// is rounded to whole nanoseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RttEstimator {
    srtt_ns: f64,
    rttvar_ns: f64,
    rto: SimTime,
    has_sample: bool,
}

impl RttEstimator {
    pub fn new(config: &RtoPolicyConfig) -> Self {
        RttEstimator {
            srtt_ns: 0.0,
            rttvar_ns: 0.0,
            rto: config.initial_rto,
            has_sample: false,
        }
    }

    pub fn has_sample(&self) -> bool {
        self.has_sample
    }

    pub fn srtt(&self) -> SimTime {
        SimTime::from_nanos(self.srtt_ns.round() as u64)
    }

    pub fn rttvar(&self) -> SimTime {
        SimTime::from_nanos(self.rttvar_ns.round() as u64)
    }

    pub fn srtt_ns(&self) -> f64 {
        self.srtt_ns
    }

    pub fn rttvar_ns(&self) -> f64 {
        self.rttvar_ns
    }

    /// Base timer value, before backoff or tail overrides.
    pub fn rto(&self) -> SimTime {
        self.rto
    }

    pub fn update(&mut self, sample: SimTime, config: &RtoPolicyConfig) {
        let r = sample.as_nanos() as f64;
        if self.has_sample {
            self.rttvar_ns = 0.75 * self.rttvar_ns + 0.25 * (self.srtt_ns - r).abs();
            self.srtt_ns = 0.875 * self.srtt_ns + 0.125 * r;
        } else {
            self.srtt_ns = r;
            self.rttvar_ns = r / 2.0;
            self.has_sample = true;
        }
        let g = config.granularity.as_nanos() as f64;
        let raw = self.srtt_ns + g.max(4.0 * self.rttvar_ns);
        let clamped = raw.clamp(config.min_rto.as_nanos() as f64, config.max_rto.as_nanos() as f64);
        self.rto = SimTime::from_nanos(clamped.round() as u64);
    }
}

/// The estimator's timer doubled `backoff` times, capped at `max_rto`.
pub fn backed_off_rto(estimator: &RttEstimator, config: &RtoPolicyConfig, backoff: u32) -> SimTime {
    let factor = 1u64.checked_shl(backoff.min(63)).unwrap_or(u64::MAX);
    estimator.rto().saturating_mul(factor).min(config.max_rto)
}

/// Timer value to arm with, given the current flight size and backoff.
pub fn effective_rto(
    estimator: &RttEstimator,
    config: &RtoPolicyConfig,
    packets_in_flight: u32,
    backoff: u32,
) -> SimTime {
    let backed_off = || backed_off_rto(estimator, config, backoff);
    match config.mode {
        RtoMode::Rfc2988 => backed_off(),
        RtoMode::Accelerated => {
            // The tail overrides need a measured path; before the first
            // sample the connection is still on its initial timer.
            if !estimator.has_sample() {
                backed_off()
            } else if packets_in_flight < config.tail_threshold_small {
                config.tail_rto_small
            } else if packets_in_flight < config.tail_threshold_large {
                config.tail_rto_large
            } else {
                backed_off()
            }
        }
    }
}

/// True when a timeout at this flight size is handled by a tail override
/// (and therefore does not back off).
pub fn in_tail_branch(estimator: &RttEstimator, config: &RtoPolicyConfig, packets_in_flight: u32) -> bool {
    config.mode == RtoMode::Accelerated
        && estimator.has_sample()
        && packets_in_flight < config.tail_threshold_large
}
