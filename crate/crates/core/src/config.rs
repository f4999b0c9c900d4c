//! Run configuration shared by every command. Loadable from a TOML file
//! whose keys mirror the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::htb::{HtbConfig, PolicyTable};
use crate::link::{LinkConfig, DEFAULT_MSS, DEFAULT_OVERHEAD};
use crate::scenario::{Timeline, TimelineConfig, TransferConfig, DEFAULT_TRANSFER_BYTES, DEFAULT_TSQ_LIMIT_BYTES};
use crate::sim::SimTime;
use crate::transport::{CcMode, RtoMode, RtoPolicyConfig, TransportConfig};

/// Timer constants, in segments and milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RtoSettings {
    pub tail_threshold_small: u32,
    pub tail_rto_small_ms: f64,
    pub tail_threshold_large: u32,
    pub tail_rto_large_ms: f64,
    pub min_rto_ms: f64,
    pub max_rto_ms: f64,
    pub granularity_ms: f64,
    pub initial_rto_ms: f64,
}

impl Default for RtoSettings {
    fn default() -> Self {
        let d = RtoPolicyConfig::default();
        RtoSettings {
            tail_threshold_small: d.tail_threshold_small,
            tail_rto_small_ms: d.tail_rto_small.as_millis_f64(),
            tail_threshold_large: d.tail_threshold_large,
            tail_rto_large_ms: d.tail_rto_large.as_millis_f64(),
            min_rto_ms: d.min_rto.as_millis_f64(),
            max_rto_ms: d.max_rto.as_millis_f64(),
            granularity_ms: d.granularity.as_millis_f64(),
            initial_rto_ms: d.initial_rto.as_millis_f64(),
        }
    }
}

fn ms(name: &str, v: f64) -> Result<SimTime> {
    if !v.is_finite() || v < 0.0 {
        return Err(SimError::config(format!("{name} must be a non-negative number of milliseconds")));
    }
    Ok(SimTime::from_secs_f64(v / 1e3))
}

impl RtoSettings {
    pub fn to_policy(&self, mode: RtoMode) -> Result<RtoPolicyConfig> {
        let p = RtoPolicyConfig {
            mode,
            tail_threshold_small: self.tail_threshold_small,
            tail_rto_small: ms("tail_rto_small_ms", self.tail_rto_small_ms)?,
            tail_threshold_large: self.tail_threshold_large,
            tail_rto_large: ms("tail_rto_large_ms", self.tail_rto_large_ms)?,
            min_rto: ms("min_rto_ms", self.min_rto_ms)?,
            max_rto: ms("max_rto_ms", self.max_rto_ms)?,
            granularity: ms("granularity_ms", self.granularity_ms)?,
            initial_rto: ms("initial_rto_ms", self.initial_rto_ms)?,
        };
        p.validate().map_err(SimError::Config)?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub rtt_ms: f64,
    /// Per-packet drop probability, as a fraction.
    pub loss: f64,
    pub rate_mbps: f64,
    pub mss: u32,
    pub overhead_bytes: u32,
    pub size_bytes: u64,
    #[serde(alias = "cc")]
    pub cc_mode: CcMode,
    #[serde(alias = "rto")]
    pub rto_mode: RtoMode,
    pub seed: u64,
    pub samples: u32,
    pub bin_ms: f64,
    #[serde(alias = "policy")]
    pub policy_path: Option<PathBuf>,
    #[serde(alias = "timeline")]
    pub timeline_path: Option<PathBuf>,
    #[serde(alias = "out")]
    pub out_path: Option<PathBuf>,
    #[serde(rename = "timer")]
    pub rto_settings: RtoSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            rtt_ms: 180.0,
            loss: 0.0,
            rate_mbps: 476.0,
            mss: DEFAULT_MSS,
            overhead_bytes: DEFAULT_OVERHEAD,
            size_bytes: DEFAULT_TRANSFER_BYTES,
            cc_mode: CcMode::Fixed,
            rto_mode: RtoMode::Accelerated,
            seed: 1,
            samples: 160,
            bin_ms: 100.0,
            policy_path: None,
            timeline_path: None,
            out_path: None,
            rto_settings: RtoSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(SimError::config(format!(
                "loss must be a fraction in [0, 1] (0.01 = 1%), got {}",
                self.loss
            )));
        }
        if !(self.rtt_ms.is_finite() && self.rtt_ms > 0.0) {
            return Err(SimError::config("rtt_ms must be positive"));
        }
        if !(self.rate_mbps.is_finite() && self.rate_mbps > 0.0) {
            return Err(SimError::config("rate_mbps must be positive"));
        }
        if !(self.bin_ms.is_finite() && self.bin_ms > 0.0) {
            return Err(SimError::config("bin_ms must be positive"));
        }
        if self.mss == 0 {
            return Err(SimError::config("mss must be positive"));
        }
        if self.size_bytes == 0 {
            return Err(SimError::config("size_bytes must be positive"));
        }
        if self.samples < 2 {
            return Err(SimError::config("samples must be at least 2"));
        }
        self.rto_settings.to_policy(self.rto_mode)?;
        Ok(())
    }

    /// RTT rounded to a whole, even number of nanoseconds.
    pub fn rtt(&self) -> SimTime {
        let ns = (self.rtt_ms * 1e6).round() as u64;
        SimTime::from_nanos(ns + ns % 2)
    }

    pub fn rate_bps(&self) -> u64 {
        (self.rate_mbps * 1e6).round() as u64
    }

    pub fn bin(&self) -> SimTime {
        SimTime::from_secs_f64(self.bin_ms / 1e3)
    }

    pub fn link(&self) -> Result<LinkConfig> {
        LinkConfig::new(self.rtt(), self.loss)
    }

    /// The policy file if one is given (its total rate defaults to
    /// `rate_mbps`), otherwise the standard policy at `rate_mbps`.
    pub fn policy(&self) -> Result<PolicyTable> {
        match &self.policy_path {
            Some(p) => PolicyTable::from_toml_str(&read(p)?, self.rate_bps()),
            None => Ok(PolicyTable::standard(self.rate_bps())),
        }
    }

    pub fn timeline(&self) -> Result<Option<Timeline>> {
        self.timeline_path
            .as_ref()
            .map(|p| Timeline::from_toml_str(&read(p)?))
            .transpose()
    }

    pub fn transport(&self) -> Result<TransportConfig> {
        let t = TransportConfig {
            mss: self.mss,
            overhead: self.overhead_bytes,
            cc_mode: self.cc_mode,
            rto: self.rto_settings.to_policy(self.rto_mode)?,
            prescale_duration: self.rtt(),
            ..TransportConfig::default()
        };
        t.validate()?;
        Ok(t)
    }

    pub fn transfer(&self) -> Result<TransferConfig> {
        self.validate()?;
        let cfg = TransferConfig {
            link: self.link()?,
            policy: self.policy()?,
            htb: HtbConfig::default(),
            transport: self.transport()?,
            size_bytes: self.size_bytes,
            seed: self.seed,
            time_limit: SimTime::from_secs(60),
            tsq_limit_bytes: DEFAULT_TSQ_LIMIT_BYTES,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn timeline_config(&self) -> Result<TimelineConfig> {
        self.validate()?;
        Ok(TimelineConfig {
            link: self.link()?,
            htb: HtbConfig::default(),
            transport: self.transport()?,
            bin: self.bin(),
            crosstalk_bytes: self.size_bytes,
            seed: self.seed,
            horizon: None,
            tsq_limit_bytes: DEFAULT_TSQ_LIMIT_BYTES,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}
