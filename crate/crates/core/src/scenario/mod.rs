//! Experiments: single shaped transfers with their timing decomposition,
//! Monte Carlo loss sweeps, and replay of a multi-class traffic timeline.
//!
//! A transfer's completion time `N` runs from the first data packet on the
//! wire to the arrival of the ACK that covers the last byte. It splits into
//!
//! * the first round trip, when the pre-scaling window cap applies,
//! * the box `B`, from the cap lifting to the last first-transmission,
//! * the retransmission tail `R`, up to the send of the packet whose ACK
//!   completed the transfer,
//! * and one round trip for that packet and its ACK.
//!
//! The true transfer time is `T = B + R + rtt/2`, which equals
//! `N - 3/2 rtt` whenever the transfer outlasts its first round trip.

mod network;
pub mod output;
pub mod stats;
pub mod timeline;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use network::{TraceEvent, TraceKind};
pub use stats::{summarize, StatsSummary};
pub use timeline::{run_timeline, ActivityInterval, ThroughputSample, Timeline, TimelineAction, TimelineConfig, TimelineEvent, TimelineResult};

use crate::error::{Result, SimError};
use crate::htb::{Htb, HtbConfig, PolicyTable, TrafficType};
use crate::link::{Direction, FlowId, Link, LinkConfig};
use crate::sim::{RandomStream, SimTime};
use crate::transport::{open_connection, RtoMode, TransportConfig};
use network::Network;

/// Default transfer: 88,400 full segments.
pub const DEFAULT_TRANSFER_BYTES: u64 = 88_400 * 1448;

/// Bytes each sender may keep waiting in the shaper, as with the Linux
/// small-queue default.
pub const DEFAULT_TSQ_LIMIT_BYTES: u64 = 131_072;

/// Everything needed to simulate one shaped transfer.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferConfig {
    pub link: LinkConfig,
    /// Policy whose total rate is the path rate.
    pub policy: PolicyTable,
    pub htb: HtbConfig,
    pub transport: TransportConfig,
    pub size_bytes: u64,
    pub seed: u64,
    pub time_limit: SimTime,
    pub tsq_limit_bytes: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            link: LinkConfig::default(),
            policy: PolicyTable::default(),
            htb: HtbConfig::default(),
            transport: TransportConfig::default(),
            size_bytes: DEFAULT_TRANSFER_BYTES,
            seed: 1,
            time_limit: SimTime::from_secs(60),
            tsq_limit_bytes: DEFAULT_TSQ_LIMIT_BYTES,
        }
    }
}

impl TransferConfig {
    pub fn with_loss(mut self, loss: f64) -> Self {
        self.link.loss_probability = loss;
        self
    }

    pub fn with_rto_mode(mut self, mode: RtoMode) -> Self {
        self.transport.rto.mode = mode;
        self
    }

    pub fn with_rate_bps(mut self, rate: u64) -> Self {
        self.policy = self.policy.with_total_rate(rate);
        self
    }

    pub fn rate_bps(&self) -> u64 {
        self.policy.total_rate_bps
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.transport.validate()?;
        if self.size_bytes == 0 {
            return Err(SimError::config("transfer size must be positive"));
        }
        if self.time_limit == SimTime::ZERO {
            return Err(SimError::config("time limit must be positive"));
        }
        Ok(())
    }

    /// Transport settings with the pre-scaling period tied to the path RTT.
    fn transport_for_path(&self) -> TransportConfig {
        TransportConfig {
            prescale_duration: self.link.rtt,
            ..self.transport
        }
    }

    fn htb_for_path(&self) -> HtbConfig {
        HtbConfig {
            full_segment_wire_bytes: self.transport.mss + self.transport.overhead,
            ..self.htb
        }
    }
}

/// Measured timing and counts for one transfer. Durations in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub run_id: u64,
    pub loss: f64,
    pub n_time: SimTime,
    pub box_width: SimTime,
    pub retrans_tail: SimTime,
    pub true_transfer: SimTime,
    pub packets_sent: u64,
    pub packets_lost: u64,
    pub retransmissions: u64,
    pub spurious_retransmissions: u64,
}

/// Extra per-transfer measurements not part of the record schema.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransferDiagnostics {
    pub rtt: SimTime,
    pub first_send: SimTime,
    pub box_start: SimTime,
    pub box_end: SimTime,
    pub completed_at: SimTime,
    /// Send time of the packet whose ACK completed the transfer.
    pub completing_send: SimTime,
    pub timeouts: u64,
    pub sack_losses: u64,
    pub rtt_samples: u64,
    pub ack_drops: u64,
    pub peak_in_flight: u32,
    /// Data packets that reached the receiver, duplicates included.
    pub packets_received: u64,
    /// Lowest and highest congestion window seen at any event.
    pub cwnd_range: (u32, u32),
    pub events: u64,
}

#[derive(Clone, Debug)]
pub struct TransferOutcome {
    pub record: TransferRecord,
    pub diagnostics: TransferDiagnostics,
    pub trace: Vec<TraceEvent>,
}

/// Simulates one transfer with loss drawn from stream `run_id`.
pub fn run_transfer(config: &TransferConfig, run_id: u64) -> Result<TransferRecord> {
    Ok(simulate_transfer(config, run_id, false)?.record)
}

/// As [`run_transfer`], also returning diagnostics and a packet trace.
pub fn run_transfer_traced(config: &TransferConfig, run_id: u64) -> Result<TransferOutcome> {
    simulate_transfer(config, run_id, true)
}

pub fn run_transfer_detailed(config: &TransferConfig, run_id: u64) -> Result<TransferOutcome> {
    simulate_transfer(config, run_id, false)
}

fn simulate_transfer(config: &TransferConfig, run_id: u64, trace: bool) -> Result<TransferOutcome> {
    config.validate()?;
    let stream = RandomStream::new(config.seed, run_id);
    let link = Link::new(config.link, &stream)?;
    let htb = Htb::build(&config.policy, config.htb_for_path())?;
    let mut net = Network::new(htb, link, config.tsq_limit_bytes);
    let flow = FlowId(0);
    let (sender, receiver) = open_connection(flow, config.size_bytes, &config.transport_for_path())?;
    if trace {
        net.trace_flow(0);
    }
    net.add_flow(TrafficType::Crosstalk, sender, receiver)?;
    let limit = config.time_limit;
    let (mut cwnd_lo, mut cwnd_hi) = (u32::MAX, 0);
    loop {
        let Some((now, ev)) = net.queue.pop_until(limit) else {
            return Err(SimError::Timeout { limit });
        };
        let done = net.handle(now, ev)?;
        let cwnd = net.flows[0].sender.cwnd();
        cwnd_lo = cwnd_lo.min(cwnd);
        cwnd_hi = cwnd_hi.max(cwnd);
        if done.is_some() {
            break;
        }
    }
    let slot = &net.flows[0];
    let s = slot.sender.stats();
    let rtt = config.link.rtt;
    let first_send = s.first_wire_send.expect("data was sent");
    let completed_at = slot.completed_at.expect("completed");
    let completing_send = slot.completing_echo.expect("completed");
    let box_start = first_send + rtt;
    let box_end = s.last_first_send.expect("data was sent");
    let box_width = box_end.saturating_sub(box_start);
    let retrans_tail = completing_send.saturating_sub(box_end.max(box_start));
    let record = TransferRecord {
        run_id,
        loss: config.link.loss_probability,
        n_time: completed_at - first_send,
        box_width,
        retrans_tail,
        true_transfer: box_width + retrans_tail + rtt.half(),
        packets_sent: s.packets_sent,
        packets_lost: net.link.flow_counters(flow, Direction::Forward).dropped,
        retransmissions: s.retransmissions,
        spurious_retransmissions: slot.receiver.duplicate_count(),
    };
    let diagnostics = TransferDiagnostics {
        rtt,
        first_send,
        box_start,
        box_end,
        completed_at,
        completing_send,
        timeouts: s.timeouts,
        sack_losses: s.sack_losses,
        rtt_samples: s.rtt_samples,
        ack_drops: net.link.flow_counters(flow, Direction::Reverse).dropped,
        peak_in_flight: slot.peak_in_flight,
        packets_received: slot.receiver.segments_received(),
        cwnd_range: (cwnd_lo, cwnd_hi),
        events: net.queue.dispatched(),
    };
    Ok(TransferOutcome {
        record,
        diagnostics,
        trace: std::mem::take(&mut net.trace),
    })
}

/// Records and summaries of a batch of independent transfers.
#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloResult {
    pub records: Vec<TransferRecord>,
    pub n_time: StatsSummary,
    pub true_transfer: StatsSummary,
}

/// Runs `samples` transfers on streams `0..samples`, in parallel.
pub fn run_monte_carlo(config: &TransferConfig, samples: u32) -> Result<MonteCarloResult> {
    if samples < 2 {
        return Err(SimError::config("Monte Carlo needs at least 2 samples"));
    }
    config.validate()?;
    let records = (0..samples as u64)
        .into_par_iter()
        .map(|i| run_transfer(config, i))
        .collect::<Result<Vec<_>>>()?;
    let n: Vec<f64> = records.iter().map(|r| r.n_time.as_secs_f64()).collect();
    let t: Vec<f64> = records.iter().map(|r| r.true_transfer.as_secs_f64()).collect();
    Ok(MonteCarloResult {
        n_time: summarize(&n)?,
        true_transfer: summarize(&t)?,
        records,
    })
}

/// Loss levels of the standard sweep.
pub const DEFAULT_SWEEP_LOSSES: [f64; 5] = [0.0, 0.00001, 0.0001, 0.001, 0.01];

/// One loss level and timer mode of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub loss: f64,
    pub rto_mode: RtoMode,
    pub samples: u32,
    pub n_time: StatsSummary,
    pub true_transfer: StatsSummary,
    /// Accelerated minus RFC 2988, for the pair this row belongs to.
    pub diff_n_three_sigma: f64,
    pub diff_t_three_sigma: f64,
}

/// Runs both timer modes at every loss level. Rows come in (rfc2988,
/// accelerated) pairs, in the order of `losses`.
pub fn run_sweep(config: &TransferConfig, losses: &[f64], samples: u32) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(losses.len() * 2);
    for &loss in losses {
        let base = config.clone().with_loss(loss);
        let rfc = run_monte_carlo(&base.clone().with_rto_mode(RtoMode::Rfc2988), samples)?;
        let acc = run_monte_carlo(&base.with_rto_mode(RtoMode::Accelerated), samples)?;
        let dn = acc.n_time.three_sigma - rfc.n_time.three_sigma;
        let dt = acc.true_transfer.three_sigma - rfc.true_transfer.three_sigma;
        for (mode, mc) in [(RtoMode::Rfc2988, rfc), (RtoMode::Accelerated, acc)] {
            rows.push(SweepRow {
                loss,
                rto_mode: mode,
                samples,
                n_time: mc.n_time,
                true_transfer: mc.true_transfer,
                diff_n_three_sigma: dn,
                diff_t_three_sigma: dt,
            });
        }
    }
    Ok(rows)
}
