//! Receiver: reassembles the byte stream and acknowledges every data
//! segment with a cumulative ACK plus up to three SACK blocks.

use std::collections::{BTreeMap, VecDeque};

use crate::link::{ByteRange, FlowId, SackBlocks, Segment, MAX_SACK_BLOCKS};
use crate::sim::SimTime;

#[derive(Clone, Debug)]
pub struct ReceiverState {
    flow: FlowId,
    overhead: u32,
    /// Contiguous prefix handed to the application.
    delivered: u64,
    /// Out-of-order data above `delivered`, start -> end.
    ranges: BTreeMap<u64, u64>,
    /// Starts of out-of-order blocks, most recently changed first.
    recency: VecDeque<u64>,
    duplicate_count: u64,
    segments_received: u64,
}

impl ReceiverState {
    pub(super) fn new(flow: FlowId, overhead: u32) -> Self {
        ReceiverState {
            flow,
            overhead,
            delivered: 0,
            ranges: BTreeMap::new(),
            recency: VecDeque::new(),
            duplicate_count: 0,
            segments_received: 0,
        }
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn duplicate_count(&self) -> u64 {
        self.duplicate_count
    }

    pub fn segments_received(&self) -> u64 {
        self.segments_received
    }

    /// Out-of-order ranges currently held, in byte order.
    pub fn received_ranges(&self) -> Vec<ByteRange> {
        self.ranges.iter().map(|(&s, &e)| ByteRange::new(s, e)).collect()
    }

    fn covered(&self, start: u64, end: u64) -> bool {
        if end <= self.delivered {
            return true;
        }
        self.ranges
            .range(..=start)
            .next_back()
            .is_some_and(|(_, &e)| e >= end)
    }

    /// Accepts a data segment. Returns the ACK to send back and the number
    /// of bytes newly delivered in order.
    pub fn on_data(&mut self, seg: &Segment, _now: SimTime) -> (Segment, u64) {
        debug_assert!(seg.is_data());
        self.segments_received += 1;
        let before = self.delivered;
        if self.covered(seg.seq_start, seg.seq_end) {
            self.duplicate_count += 1;
        } else {
            self.merge(seg.seq_start.max(self.delivered), seg.seq_end);
        }
        let sack: SackBlocks = self
            .recency
            .iter()
            .take(MAX_SACK_BLOCKS)
            .map(|s| ByteRange::new(*s, self.ranges[s]))
            .collect();
        let ack = Segment::ack(self.flow, self.delivered, sack, self.overhead, seg.sent_at);
        (ack, self.delivered - before)
    }

    fn merge(&mut self, start: u64, end: u64) {
        let mut lo = start;
        let mut hi = end;
        let mut absorbed = Vec::new();
        for (&s, &e) in self.ranges.range(..=end).rev() {
            if e < start {
                break;
            }
            absorbed.push(s);
            lo = lo.min(s);
            hi = hi.max(e);
        }
        for s in &absorbed {
            self.ranges.remove(s);
            // Usually the block just extended, so near the front.
            if let Some(i) = self.recency.iter().position(|r| r == s) {
                self.recency.remove(i);
            }
        }
        if lo <= self.delivered {
            self.delivered = hi;
            return;
        }
        self.ranges.insert(lo, hi);
        self.recency.push_front(lo);
    }
}
