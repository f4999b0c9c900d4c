//! Wide-area path emulation: fixed one-way delay (half the RTT) and
//! independent Bernoulli loss in each direction, as a netem router would
//! apply in uniform mode.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::{RandomStream, SimTime};

/// Payload bytes in a full segment.
pub const DEFAULT_MSS: u32 = 1448;

/// Per-packet header bytes: 52 of TCP/IP with the timestamp option plus a
/// 14-byte Ethernet header. A full segment is 1514 bytes on the wire.
pub const DEFAULT_OVERHEAD: u32 = 66;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Sender to receiver (data).
    Forward,
    /// Receiver to sender (ACKs).
    Reverse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Data,
    Ack,
}

/// Half-open byte range `[start, end)` reported in a selective ACK.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteRange {
    pub start: u64,
    pub end: u64,
}

impl ByteRange {
    pub fn new(start: u64, end: u64) -> Self {
        debug_assert!(start < end);
        Self { start, end }
    }

    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

pub const MAX_SACK_BLOCKS: usize = 3;

/// Up to three SACK blocks, most recently changed first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SackBlocks {
    blocks: [ByteRange; MAX_SACK_BLOCKS],
    len: u8,
}

impl SackBlocks {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a block; silently ignores blocks past the third.
    pub fn push(&mut self, r: ByteRange) {
        if (self.len as usize) < MAX_SACK_BLOCKS {
            self.blocks[self.len as usize] = r;
            self.len += 1;
        }
    }

    pub fn as_slice(&self) -> &[ByteRange] {
        &self.blocks[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl FromIterator<ByteRange> for SackBlocks {
    fn from_iter<I: IntoIterator<Item = ByteRange>>(iter: I) -> Self {
        let mut s = SackBlocks::new();
        for r in iter {
            s.push(r);
        }
        s
    }
}

/// A simulated data or ACK packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub flow: FlowId,
    pub kind: SegmentKind,
    /// Data: first byte carried.
    pub seq_start: u64,
    /// Data: one past the last byte carried.
    pub seq_end: u64,
    /// ACK: next byte expected (cumulative acknowledgment).
    pub ack_cum: u64,
    pub sack: SackBlocks,
    pub payload_bytes: u32,
    pub wire_bytes: u32,
    pub is_retransmission: bool,
    /// Time the packet left the sending host.
    pub sent_at: SimTime,
    /// ACK: `sent_at` of the data segment that triggered it (timestamp echo).
    pub echo_sent_at: SimTime,
}

impl Segment {
    pub fn data(flow: FlowId, seq_start: u64, seq_end: u64, overhead: u32, retransmission: bool) -> Self {
        assert!(seq_end > seq_start, "empty data segment");
        let payload = u32::try_from(seq_end - seq_start).expect("segment larger than u32");
        Segment {
            flow,
            kind: SegmentKind::Data,
            seq_start,
            seq_end,
            ack_cum: 0,
            sack: SackBlocks::new(),
            payload_bytes: payload,
            wire_bytes: payload + overhead,
            is_retransmission: retransmission,
            sent_at: SimTime::ZERO,
            echo_sent_at: SimTime::ZERO,
        }
    }

    pub fn ack(flow: FlowId, ack_cum: u64, sack: SackBlocks, overhead: u32, echo_sent_at: SimTime) -> Self {
        debug_assert!(sack.as_slice().iter().all(|b| b.start > ack_cum));
        Segment {
            flow,
            kind: SegmentKind::Ack,
            seq_start: 0,
            seq_end: 0,
            ack_cum,
            sack,
            payload_bytes: 0,
            wire_bytes: overhead,
            is_retransmission: false,
            sent_at: SimTime::ZERO,
            echo_sent_at,
        }
    }

    pub fn is_data(&self) -> bool {
        self.kind == SegmentKind::Data
    }
}

/// Path parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub rtt: SimTime,
    /// Per-packet, per-direction drop probability.
    pub loss_probability: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            rtt: SimTime::from_millis(180),
            loss_probability: 0.0,
        }
    }
}

impl LinkConfig {
    pub fn new(rtt: SimTime, loss_probability: f64) -> Result<Self> {
        let cfg = Self { rtt, loss_probability };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rtt.as_nanos().is_multiple_of(2) {
            return Err(SimError::config("rtt must be an even number of nanoseconds"));
        }
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(SimError::InvalidProbability(self.loss_probability));
        }
        Ok(())
    }

    pub fn one_way_delay(&self) -> SimTime {
        self.rtt.half()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DirectionCounters {
    pub transmitted: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// The emulated path. Holds one random stream per direction so that ACK
/// traffic never perturbs the data-loss sequence.
#[derive(Clone, Debug)]
pub struct Link {
    config: LinkConfig,
    forward_rng: RandomStream,
    reverse_rng: RandomStream,
    forward: DirectionCounters,
    reverse: DirectionCounters,
    per_flow: Vec<[DirectionCounters; 2]>,
}

impl Link {
    pub fn new(config: LinkConfig, stream: &RandomStream) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            forward_rng: stream.fork(0),
            reverse_rng: stream.fork(1),
            forward: DirectionCounters::default(),
            reverse: DirectionCounters::default(),
            per_flow: Vec::new(),
        })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    /// Returns the arrival time, or `None` if the packet is lost.
    pub fn transmit(&mut self, segment: &Segment, direction: Direction, now: SimTime) -> Option<SimTime> {
        let p = self.config.loss_probability;
        let (rng, totals, slot) = match direction {
            Direction::Forward => (&mut self.forward_rng, &mut self.forward, 0),
            Direction::Reverse => (&mut self.reverse_rng, &mut self.reverse, 1),
        };
        let lost = rng.bernoulli(p).expect("validated probability");
        let idx = segment.flow.0 as usize;
        if self.per_flow.len() <= idx {
            self.per_flow.resize(idx + 1, Default::default());
        }
        let flow = &mut self.per_flow[idx][slot];
        totals.transmitted += 1;
        flow.transmitted += 1;
        if lost {
            totals.dropped += 1;
            flow.dropped += 1;
            None
        } else {
            totals.delivered += 1;
            flow.delivered += 1;
            Some(now + self.config.one_way_delay())
        }
    }

    pub fn counters(&self, direction: Direction) -> DirectionCounters {
        match direction {
            Direction::Forward => self.forward,
            Direction::Reverse => self.reverse,
        }
    }

    pub fn flow_counters(&self, flow: FlowId, direction: Direction) -> DirectionCounters {
        let slot = match direction {
            Direction::Forward => 0,
            Direction::Reverse => 1,
        };
        self.per_flow
            .get(flow.0 as usize)
            .map(|c| c[slot])
            .unwrap_or_default()
    }
}
