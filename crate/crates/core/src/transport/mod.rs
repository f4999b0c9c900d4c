//! Reliable byte-stream transport: a SACK sender with pluggable congestion
//! and retransmission-timer policies, and an ACK-every-segment receiver.

mod receiver;
pub mod rto;
mod scoreboard;
mod sender;

use serde::{Deserialize, Serialize};

pub use receiver::ReceiverState;
pub use rto::{backed_off_rto, effective_rto, in_tail_branch, RtoMode, RtoPolicyConfig, RttEstimator};
pub use sender::{AckActions, RtoAction, SenderState, SenderStats};

use crate::error::{Result, SimError};
use crate::link::{FlowId, DEFAULT_MSS, DEFAULT_OVERHEAD};
use crate::sim::SimTime;

/// Window size used to switch congestion control off.
pub const FIXED_CWND: u32 = 99_999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CcMode {
    /// Window pinned at [`FIXED_CWND`]; loss never shrinks it.
    Fixed,
    /// Slow start, congestion avoidance and halving on loss.
    Reno,
}

impl CcMode {
    pub fn name(self) -> &'static str {
        match self {
            CcMode::Fixed => "fixed",
            CcMode::Reno => "reno",
        }
    }
}

impl std::str::FromStr for CcMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fixed" => Ok(CcMode::Fixed),
            "reno" => Ok(CcMode::Reno),
            _ => Err(format!("unknown cc mode '{s}' (expected fixed|reno)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportConfig {
    pub mss: u32,
    pub overhead: u32,
    pub cc_mode: CcMode,
    pub rto: RtoPolicyConfig,
    pub reno_initial_cwnd: u32,
    /// Receive window in segments.
    pub rwnd_segments: u32,
    /// Outstanding-byte cap before window scaling takes effect.
    pub prescale_window_bytes: u64,
    /// How long after the first data packet the cap stays in force.
    pub prescale_duration: SimTime,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            mss: DEFAULT_MSS,
            overhead: DEFAULT_OVERHEAD,
            cc_mode: CcMode::Fixed,
            rto: RtoPolicyConfig::default(),
            reno_initial_cwnd: 10,
            rwnd_segments: FIXED_CWND,
            prescale_window_bytes: 65_535,
            prescale_duration: SimTime::from_millis(180),
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mss == 0 {
            return Err(SimError::config("mss must be positive"));
        }
        if (self.prescale_window_bytes as u128) < self.mss as u128 {
            return Err(SimError::config("pre-scaling window must hold at least one segment"));
        }
        self.rto.validate().map_err(SimError::Config)
    }
}

/// Opens a sender/receiver pair for a transfer of `bytes_total` bytes.
pub fn open_connection(
    flow: FlowId,
    bytes_total: u64,
    config: &TransportConfig,
) -> Result<(SenderState, ReceiverState)> {
    if bytes_total == 0 {
        return Err(SimError::config("transfer size must be positive"));
    }
    config.validate()?;
    Ok((
        SenderState::new(flow, Some(bytes_total), *config),
        ReceiverState::new(flow, config.overhead),
    ))
}

/// Opens a pair whose sender has data until [`SenderState::close`] is called.
pub fn open_unbounded(flow: FlowId, config: &TransportConfig) -> Result<(SenderState, ReceiverState)> {
    config.validate()?;
    Ok((
        SenderState::new(flow, None, *config),
        ReceiverState::new(flow, config.overhead),
    ))
}
