//! Sliding-window SACK sender.
//!
//! Per-segment state is kept in a deque indexed from the cumulative ACK
//! point. A segment is `InFlight` from the moment it is handed to the
//! scheduler (its wire time is filled in when it actually leaves), `Lost`
//! once loss detection or the timer has queued it for retransmission, and
//! `Sacked` once the receiver reports it.
//!
//! A retransmission is itself declared lost once [`DUPTHRESH`] segments
//! first sent after it have been SACKed.

use std::collections::{BTreeSet, VecDeque};

use serde::Serialize;

use super::rto::{backed_off_rto, effective_rto, in_tail_branch, RttEstimator};
use super::scoreboard::Scoreboard;
use super::{CcMode, TransportConfig, FIXED_CWND};
use crate::error::{Result, SimError};
use crate::link::{FlowId, Segment};
use crate::sim::SimTime;

/// Segments above a hole that must be SACKed before it is declared lost.
const DUPTHRESH: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SegState {
    InFlight { sent_at: Option<SimTime>, retx: u32 },
    Lost { retx: u32 },
    Sacked,
}

#[derive(Clone, Copy, Debug)]
struct RetxMark {
    idx: u64,
    retx: u32,
    frontier: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SenderStats {
    /// Data packets put on the wire, first transmissions and retransmissions.
    pub packets_sent: u64,
    pub retransmissions: u64,
    /// Holes declared lost from SACK information.
    pub sack_losses: u64,
    /// Retransmissions declared lost from SACK information.
    pub lost_retransmits: u64,
    pub timeouts: u64,
    pub rtt_samples: u64,
    pub first_wire_send: Option<SimTime>,
    /// Wire time of the most recent first transmission.
    pub last_first_send: Option<SimTime>,
    /// Wire time of the most recent retransmission.
    pub last_retransmit: Option<SimTime>,
}

/// What an ACK did to the sender.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AckActions {
    pub newly_acked_bytes: u64,
    /// Segments queued for retransmission by this ACK.
    pub retransmits_queued: u32,
    pub rtt_sample: Option<SimTime>,
    pub completed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RtoAction {
    /// The first unacknowledged segment was queued for retransmission.
    Retransmit { seq_start: u64, rearm_at: SimTime },
    /// The hole is still waiting in the local queue; only the timer moved.
    Rearmed { rearm_at: SimTime },
}

#[derive(Clone, Debug)]
pub struct SenderState {
    flow: FlowId,
    config: TransportConfig,
    /// `None` while the source is open-ended.
    bytes_total: Option<u64>,
    next_seq: u64,
    cum_acked: u64,
    /// Segment index of `segs[0]`.
    base: u64,
    segs: VecDeque<SegState>,
    packets_in_flight: u32,
    retx_queue: BTreeSet<u64>,
    /// Segment queued by the last timeout; it may leave even with the
    /// window full.
    timer_hole: Option<u64>,
    scoreboard: Scoreboard,
    /// Loss detection has already looked at every index below this.
    lost_scan: u64,
    /// Retransmissions on the wire, in send order, with the first unsent
    /// segment index at the time they left.
    retx_watch: VecDeque<RetxMark>,
    fresh: Vec<(u64, u64)>,

    cwnd: u32,
    ssthresh: u32,
    ca_acked: u32,
    recovery_point: Option<u64>,

    estimator: RttEstimator,
    backoff: u32,
    rto_deadline: Option<SimTime>,

    stats: SenderStats,
}

impl SenderState {
    pub(super) fn new(flow: FlowId, bytes_total: Option<u64>, config: TransportConfig) -> Self {
        let cwnd = match config.cc_mode {
            CcMode::Fixed => FIXED_CWND,
            CcMode::Reno => config.reno_initial_cwnd,
        };
        SenderState {
            flow,
            config,
            bytes_total,
            next_seq: 0,
            cum_acked: 0,
            base: 0,
            segs: VecDeque::new(),
            packets_in_flight: 0,
            retx_queue: BTreeSet::new(),
            timer_hole: None,
            scoreboard: Scoreboard::default(),
            lost_scan: 0,
            retx_watch: VecDeque::new(),
            fresh: Vec::new(),
            cwnd,
            ssthresh: u32::MAX,
            ca_acked: 0,
            recovery_point: None,
            estimator: RttEstimator::new(&config.rto),
            backoff: 0,
            rto_deadline: None,
            stats: SenderStats::default(),
        }
    }

    pub fn flow(&self) -> FlowId {
        self.flow
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    pub fn bytes_total(&self) -> Option<u64> {
        self.bytes_total
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn cum_acked(&self) -> u64 {
        self.cum_acked
    }

    pub fn packets_in_flight(&self) -> u32 {
        self.packets_in_flight
    }

    pub fn cwnd(&self) -> u32 {
        self.cwnd
    }

    pub fn estimator(&self) -> &RttEstimator {
        &self.estimator
    }

    pub fn backoff(&self) -> u32 {
        self.backoff
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub fn is_complete(&self) -> bool {
        self.bytes_total == Some(self.cum_acked)
    }

    /// Number of segments a bounded transfer is cut into.
    pub fn segment_count(&self) -> Option<u64> {
        self.bytes_total.map(|b| b.div_ceil(self.config.mss as u64))
    }

    /// Stops an open-ended source at the current send point. Returns true if
    /// that already completes the transfer.
    pub fn close(&mut self) -> bool {
        if self.bytes_total.is_none() {
            self.bytes_total = Some(self.next_seq);
        }
        if self.is_complete() && self.next_seq > 0 {
            self.rto_deadline = None;
        }
        self.is_complete()
    }

    /// Timer value to arm with now. The accelerated overrides only apply
    /// once every byte has been sent at least once; before that a small
    /// flight just means the window is still opening.
    pub fn effective_rto(&self) -> SimTime {
        if self.has_new_data() {
            backed_off_rto(&self.estimator, &self.config.rto, self.backoff)
        } else {
            effective_rto(&self.estimator, &self.config.rto, self.packets_in_flight, self.backoff)
        }
    }

    fn in_tail(&self) -> bool {
        !self.has_new_data() && in_tail_branch(&self.estimator, &self.config.rto, self.packets_in_flight)
    }

    fn mss(&self) -> u64 {
        self.config.mss as u64
    }

    fn seg_range(&self, idx: u64) -> (u64, u64) {
        let start = idx * self.mss();
        let end = start + self.mss();
        (start, self.bytes_total.map_or(end, |t| end.min(t)))
    }

    fn state_mut(&mut self, idx: u64) -> Option<&mut SegState> {
        let off = idx.checked_sub(self.base)?;
        self.segs.get_mut(off as usize)
    }

    fn prescale_active(&self, now: SimTime) -> bool {
        match self.stats.first_wire_send {
            None => true,
            Some(t) => now < t + self.config.prescale_duration,
        }
    }

    /// When the pre-scaling cap stops limiting the sender, if it currently does.
    pub fn window_opens_at(&self, now: SimTime) -> Option<SimTime> {
        let t = self.stats.first_wire_send? + self.config.prescale_duration;
        (t > now && self.has_new_data()).then_some(t)
    }

    fn has_new_data(&self) -> bool {
        self.bytes_total.is_none_or(|t| self.next_seq < t)
    }

    fn window_limit_bytes(&self, now: SimTime) -> u64 {
        let rwnd = self.config.rwnd_segments as u64 * self.mss();
        if self.prescale_active(now) {
            rwnd.min(self.config.prescale_window_bytes)
        } else {
            rwnd
        }
    }

    /// Next segment to hand to the scheduler, if the windows allow one.
    /// Retransmissions go first.
    pub fn on_send_opportunity(&mut self, now: SimTime) -> Option<Segment> {
        let first_retx = self.retx_queue.first().copied();
        let forced = first_retx.is_some() && first_retx == self.timer_hole;
        if self.packets_in_flight >= self.cwnd && !forced {
            return None;
        }
        let seg = if let Some(idx) = self.retx_queue.pop_first() {
            if forced {
                self.timer_hole = None;
            }
            let st = self.state_mut(idx).expect("queued retransmission within window");
            let SegState::Lost { retx } = *st else {
                unreachable!("retransmission queue holds only lost segments")
            };
            *st = SegState::InFlight {
                sent_at: None,
                retx: retx + 1,
            };
            let (s, e) = self.seg_range(idx);
            Segment::data(self.flow, s, e, self.config.overhead, true)
        } else {
            if !self.has_new_data() {
                return None;
            }
            let idx = self.next_seq / self.mss();
            let (s, e) = self.seg_range(idx);
            debug_assert_eq!(s, self.next_seq);
            if e - self.cum_acked > self.window_limit_bytes(now) {
                return None;
            }
            self.segs.push_back(SegState::InFlight { sent_at: None, retx: 0 });
            self.next_seq = e;
            Segment::data(self.flow, s, e, self.config.overhead, false)
        };
        self.packets_in_flight += 1;
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.effective_rto());
        }
        Some(seg)
    }

    /// Records that `seg` left the host at `at`.
    pub fn on_wire(&mut self, seg: &Segment, at: SimTime) {
        self.stats.packets_sent += 1;
        if seg.is_retransmission {
            self.stats.retransmissions += 1;
            self.stats.last_retransmit = Some(at);
        } else {
            self.stats.first_wire_send.get_or_insert(at);
            self.stats.last_first_send = Some(at);
        }
        let idx = seg.seq_start / self.mss();
        let frontier = self.base + self.segs.len() as u64;
        if let Some(&mut SegState::InFlight { ref mut sent_at, retx }) = self.state_mut(idx) {
            if sent_at.is_none() {
                *sent_at = Some(at);
                if retx > 0 {
                    self.retx_watch.push_back(RetxMark { idx, retx, frontier });
                }
            }
        }
    }

    pub fn on_ack(&mut self, ack: &Segment, now: SimTime) -> Result<AckActions> {
        debug_assert!(!ack.is_data());
        if ack.ack_cum > self.next_seq {
            return Err(SimError::Protocol(format!(
                "flow {}: ACK {} beyond highest byte sent {}",
                self.flow.0, ack.ack_cum, self.next_seq
            )));
        }
        if let Some(b) = ack.sack.as_slice().iter().find(|b| b.end > self.next_seq) {
            return Err(SimError::Protocol(format!(
                "flow {}: SACK block {}..{} beyond highest byte sent {}",
                self.flow.0, b.start, b.end, self.next_seq
            )));
        }
        let mut out = AckActions::default();
        // RTT is sampled from the segment this ACK echoes, if the ACK newly
        // covers it and it was never retransmitted.
        let echoed = Some(ack.echo_sent_at);
        let mut sampled: Option<SimTime> = None;
        let mut newly_acked_segs = 0u32;

        if ack.ack_cum > self.cum_acked {
            out.newly_acked_bytes = ack.ack_cum - self.cum_acked;
            let new_base = if self.bytes_total == Some(ack.ack_cum) {
                ack.ack_cum.div_ceil(self.mss())
            } else {
                ack.ack_cum / self.mss()
            };
            while self.base < new_base {
                let st = self.segs.pop_front().expect("acked segment tracked");
                if let SegState::InFlight { sent_at, retx } = st {
                    self.packets_in_flight -= 1;
                    newly_acked_segs += 1;
                    if retx == 0 && sent_at == echoed {
                        sampled = sent_at;
                    }
                }
                self.base += 1;
            }
            self.cum_acked = ack.ack_cum;
            let rest = self.retx_queue.split_off(&self.base);
            self.retx_queue = rest;
            self.scoreboard.prune_below(self.base);
        }

        let mut fresh = std::mem::take(&mut self.fresh);
        fresh.clear();
        for b in ack.sack.as_slice() {
            let s = (b.start / self.mss()).max(self.base);
            let e = if self.bytes_total == Some(b.end) {
                b.end.div_ceil(self.mss())
            } else {
                b.end / self.mss()
            };
            self.scoreboard.insert(s, e, &mut fresh);
        }
        for &(s, e) in &fresh {
            for idx in s..e {
                let st = self.state_mut(idx).expect("sacked segment tracked");
                match std::mem::replace(st, SegState::Sacked) {
                    SegState::InFlight { sent_at, retx } => {
                        self.packets_in_flight -= 1;
                        newly_acked_segs += 1;
                        if retx == 0 && sent_at == echoed {
                            sampled = sent_at;
                        }
                    }
                    SegState::Lost { .. } => {
                        self.retx_queue.remove(&idx);
                    }
                    SegState::Sacked => {}
                }
            }
        }
        self.fresh = fresh;

        if let Some(sent) = sampled {
            let sample = now.saturating_sub(sent);
            self.estimator.update(sample, &self.config.rto);
            self.backoff = 0;
            self.stats.rtt_samples += 1;
            out.rtt_sample = Some(sample);
        }

        out.retransmits_queued = self.detect_losses() + self.detect_lost_retransmits();
        self.grow_window(newly_acked_segs, out.retransmits_queued > 0);

        if out.newly_acked_bytes > 0 {
            self.rto_deadline = if self.cum_acked == self.next_seq {
                None
            } else {
                Some(now + self.effective_rto())
            };
        }
        out.completed = self.is_complete();
        if out.completed {
            self.rto_deadline = None;
        }
        Ok(out)
    }

    /// Marks every first-transmission hole with at least [`DUPTHRESH`]
    /// SACKed segments above it.
    fn detect_losses(&mut self) -> u32 {
        let Some(limit) = self.scoreboard.nth_highest(DUPTHRESH) else {
            return 0;
        };
        let mut marked = 0;
        let from = self.lost_scan.max(self.base);
        for idx in from..limit {
            let st = self.state_mut(idx).expect("index below SACKed data");
            if let SegState::InFlight {
                sent_at: Some(_),
                retx: 0,
            } = *st
            {
                *st = SegState::Lost { retx: 0 };
                self.packets_in_flight -= 1;
                self.retx_queue.insert(idx);
                marked += 1;
            }
        }
        self.lost_scan = self.lost_scan.max(limit);
        self.stats.sack_losses += marked as u64;
        marked
    }

    /// Marks every retransmission with at least [`DUPTHRESH`] SACKed
    /// segments above the send frontier it left at.
    fn detect_lost_retransmits(&mut self) -> u32 {
        let Some(limit) = self.scoreboard.nth_highest(DUPTHRESH) else {
            return 0;
        };
        let mut marked = 0;
        while let Some(&m) = self.retx_watch.front() {
            if m.frontier > limit {
                break;
            }
            self.retx_watch.pop_front();
            let Some(st) = self.state_mut(m.idx) else { continue };
            if let SegState::InFlight {
                sent_at: Some(_),
                retx,
            } = *st
            {
                if retx == m.retx {
                    *st = SegState::Lost { retx };
                    self.packets_in_flight -= 1;
                    self.retx_queue.insert(m.idx);
                    marked += 1;
                }
            }
        }
        self.stats.lost_retransmits += marked as u64;
        marked
    }

    fn grow_window(&mut self, acked: u32, loss: bool) {
        if self.config.cc_mode != CcMode::Reno {
            return;
        }
        if let Some(p) = self.recovery_point {
            if self.cum_acked >= p {
                self.recovery_point = None;
            }
        }
        if loss && self.recovery_point.is_none() {
            self.ssthresh = (self.packets_in_flight / 2).max(2);
            self.cwnd = self.ssthresh;
            self.ca_acked = 0;
            self.recovery_point = Some(self.next_seq);
            return;
        }
        if self.recovery_point.is_some() || acked == 0 {
            return;
        }
        if self.cwnd < self.ssthresh {
            self.cwnd = self.cwnd.saturating_add(acked).min(self.ssthresh.max(self.cwnd + 1));
        } else {
            self.ca_acked += acked;
            while self.ca_acked >= self.cwnd {
                self.ca_acked -= self.cwnd;
                self.cwnd += 1;
            }
        }
    }

    /// Handles expiry of the retransmission timer at `now`.
    pub fn on_rto_timeout(&mut self, now: SimTime) -> Result<RtoAction> {
        if self.cum_acked == self.next_seq {
            return Err(SimError::Protocol(format!(
                "flow {}: retransmission timer fired with nothing outstanding",
                self.flow.0
            )));
        }
        let base = self.base;
        let front = *self.segs.front().expect("outstanding data");
        match front {
            SegState::InFlight {
                sent_at: Some(_),
                retx,
            } => {
                let tail = self.in_tail();
                self.segs[0] = SegState::Lost { retx };
                self.packets_in_flight -= 1;
                self.retx_queue.insert(base);
                self.timer_hole = Some(base);
                if !tail {
                    self.backoff += 1;
                }
                self.stats.timeouts += 1;
                if self.config.cc_mode == CcMode::Reno {
                    self.ssthresh = (self.packets_in_flight / 2).max(2);
                    self.cwnd = 1;
                    self.ca_acked = 0;
                    self.recovery_point = None;
                }
                let rearm_at = now + self.effective_rto();
                self.rto_deadline = Some(rearm_at);
                Ok(RtoAction::Retransmit {
                    seq_start: self.seg_range(base).0,
                    rearm_at,
                })
            }
            SegState::InFlight { sent_at: None, .. } | SegState::Lost { .. } => {
                if matches!(front, SegState::Lost { .. }) {
                    self.timer_hole = Some(base);
                }
                let rearm_at = now + self.effective_rto();
                self.rto_deadline = Some(rearm_at);
                Ok(RtoAction::Rearmed { rearm_at })
            }
            SegState::Sacked => Err(SimError::Protocol(format!(
                "flow {}: first unacknowledged segment is marked SACKed",
                self.flow.0
            ))),
        }
    }
}
