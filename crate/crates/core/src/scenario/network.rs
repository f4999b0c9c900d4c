//! Glue between the event queue, the shaper, the path and the endpoints.
//!
//! Each sender may keep up to `tsq_limit_bytes` waiting in the shaper (it
//! stops once the limit is reached, so the last packet may overshoot it),
//! and is offered a new send opportunity whenever one of its packets leaves.
//! Retransmission timers are scheduled lazily: a timer event only re-checks
//! the sender's current deadline, so restarting a timer costs nothing.

use serde::Serialize;

use crate::error::Result;
use crate::htb::{EnqueueOutcome, Htb, TrafficType};
use crate::link::{Direction, FlowId, Link, Segment};
use crate::sim::{EventQueue, SimTime};
use crate::transport::{ReceiverState, RtoAction, SenderState};

#[derive(Clone, Debug)]
pub(crate) enum Ev {
    /// Data segment reaches the receiver.
    Data(Box<Segment>),
    /// ACK reaches the sender.
    Ack(Box<Segment>),
    /// The shaper may be able to release a packet.
    Dequeue,
    /// Check the retransmission timer of a flow.
    Rto(usize),
    /// The pre-scaling cap of a flow lifts.
    Wake(usize),
    /// Handled by the driver, not the network.
    External(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Send,
    Retransmit,
    Ack,
    RtoFire,
}

/// One line of a packet trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEvent {
    pub t: SimTime,
    pub event: TraceKind,
    pub flow: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_start: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seq_end: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ack_cum: Option<u64>,
    /// Send events: whether the path dropped the packet.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropped: Option<bool>,
    pub in_flight: u32,
    /// Timer events: when the timer fires next.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_timer: Option<SimTime>,
}

/// Wire bytes delivered to receivers, per class and time bin.
#[derive(Clone, Debug)]
pub(crate) struct Bins {
    pub width: SimTime,
    pub bytes: Vec<[u64; 6]>,
}

impl Bins {
    pub fn new(width: SimTime, horizon: SimTime) -> Self {
        let n = horizon.as_nanos().div_ceil(width.as_nanos()) as usize;
        Bins {
            width,
            bytes: vec![[0; 6]; n.max(1)],
        }
    }

    fn add(&mut self, at: SimTime, traffic: TrafficType, bytes: u32) {
        let i = (at.as_nanos() / self.width.as_nanos()) as usize;
        if let Some(b) = self.bytes.get_mut(i) {
            b[traffic.index()] += bytes as u64;
        }
    }
}

pub(crate) struct FlowSlot {
    pub traffic: TrafficType,
    pub sender: SenderState,
    pub receiver: ReceiverState,
    /// Wire bytes of this flow waiting in the shaper.
    queued_bytes: u64,
    rto_event: Option<SimTime>,
    wake_event: Option<SimTime>,
    pub completed_at: Option<SimTime>,
    /// Echoed send time carried by the ACK that completed the transfer.
    pub completing_echo: Option<SimTime>,
    pub peak_in_flight: u32,
    pub shaper_drops: u64,
}

pub(crate) struct Network {
    pub queue: EventQueue<Ev>,
    pub htb: Htb,
    pub link: Link,
    pub flows: Vec<FlowSlot>,
    dequeue_event: Option<SimTime>,
    tsq_limit_bytes: u64,
    /// Flow whose packets are traced, if any.
    trace_flow: Option<usize>,
    pub trace: Vec<TraceEvent>,
    pub bins: Option<Bins>,
}

impl Network {
    pub fn new(htb: Htb, link: Link, tsq_limit_bytes: u64) -> Self {
        Network {
            queue: EventQueue::new(),
            htb,
            link,
            flows: Vec::new(),
            dequeue_event: None,
            tsq_limit_bytes: tsq_limit_bytes.max(1),
            trace_flow: None,
            trace: Vec::new(),
            bins: None,
        }
    }

    pub fn trace_flow(&mut self, f: usize) {
        self.trace_flow = Some(f);
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    /// Adds a flow and gives it its first send opportunity.
    pub fn add_flow(&mut self, traffic: TrafficType, sender: SenderState, receiver: ReceiverState) -> Result<usize> {
        let f = self.flows.len();
        debug_assert_eq!(sender.flow(), FlowId(f as u32));
        self.htb.register_flow(sender.flow(), traffic);
        self.flows.push(FlowSlot {
            traffic,
            sender,
            receiver,
            queued_bytes: 0,
            rto_event: None,
            wake_event: None,
            completed_at: None,
            completing_echo: None,
            peak_in_flight: 0,
            shaper_drops: 0,
        });
        let now = self.now();
        self.pump(f, now)?;
        self.kick(now)?;
        Ok(f)
    }

    /// Stops an open-ended flow at its current send point.
    pub fn close_flow(&mut self, f: usize) {
        let now = self.now();
        let slot = &mut self.flows[f];
        if slot.sender.close() && slot.completed_at.is_none() {
            slot.completed_at = Some(now);
        }
    }

    /// Dispatches one internal event. Returns the flow that completed, if any.
    pub fn handle(&mut self, now: SimTime, ev: Ev) -> Result<Option<usize>> {
        let mut completed = None;
        match ev {
            Ev::Data(seg) => self.on_data(*seg, now)?,
            Ev::Ack(ack) => completed = self.on_ack(*ack, now)?,
            Ev::Dequeue => {
                if self.dequeue_event == Some(now) {
                    self.dequeue_event = None;
                }
                self.on_dequeue(now)?;
            }
            Ev::Rto(f) => {
                if self.flows[f].rto_event == Some(now) {
                    self.flows[f].rto_event = None;
                }
                self.on_rto(f, now)?;
            }
            Ev::Wake(f) => {
                if self.flows[f].wake_event == Some(now) {
                    self.flows[f].wake_event = None;
                }
                self.pump(f, now)?;
            }
            Ev::External(_) => unreachable!("external events are handled by the driver"),
        }
        self.kick(now)?;
        Ok(completed)
    }

    fn traced(&self, f: usize) -> bool {
        self.trace_flow == Some(f)
    }

    fn on_dequeue(&mut self, now: SimTime) -> Result<()> {
        while let Some(mut seg) = self.htb.dequeue(now) {
            seg.sent_at = now;
            let f = seg.flow.0 as usize;
            let slot = &mut self.flows[f];
            slot.queued_bytes -= seg.wire_bytes as u64;
            slot.sender.on_wire(&seg, now);
            let arrival = self.link.transmit(&seg, Direction::Forward, now);
            if self.traced(f) {
                let in_flight = self.flows[f].sender.packets_in_flight();
                self.trace.push(TraceEvent {
                    t: now,
                    event: if seg.is_retransmission {
                        TraceKind::Retransmit
                    } else {
                        TraceKind::Send
                    },
                    flow: f as u32,
                    seq_start: Some(seg.seq_start),
                    seq_end: Some(seg.seq_end),
                    ack_cum: None,
                    dropped: Some(arrival.is_none()),
                    in_flight,
                    next_timer: None,
                });
            }
            if let Some(at) = arrival {
                self.queue.schedule(at, Ev::Data(Box::new(seg)))?;
            }
            self.pump(f, now)?;
        }
        Ok(())
    }

    fn on_data(&mut self, seg: Segment, now: SimTime) -> Result<()> {
        let f = seg.flow.0 as usize;
        let slot = &mut self.flows[f];
        if let Some(b) = &mut self.bins {
            b.add(now, slot.traffic, seg.wire_bytes);
        }
        let (mut ack, _) = slot.receiver.on_data(&seg, now);
        ack.sent_at = now;
        if let Some(at) = self.link.transmit(&ack, Direction::Reverse, now) {
            self.queue.schedule(at, Ev::Ack(Box::new(ack)))?;
        }
        Ok(())
    }

    fn on_ack(&mut self, ack: Segment, now: SimTime) -> Result<Option<usize>> {
        let f = ack.flow.0 as usize;
        let slot = &mut self.flows[f];
        let actions = slot.sender.on_ack(&ack, now)?;
        let mut completed = None;
        if actions.completed && slot.completed_at.is_none() {
            slot.completed_at = Some(now);
            slot.completing_echo = Some(ack.echo_sent_at);
            completed = Some(f);
        }
        if self.traced(f) {
            let s = &self.flows[f].sender;
            self.trace.push(TraceEvent {
                t: now,
                event: TraceKind::Ack,
                flow: f as u32,
                seq_start: None,
                seq_end: None,
                ack_cum: Some(ack.ack_cum),
                dropped: None,
                in_flight: s.packets_in_flight(),
                next_timer: s.rto_deadline(),
            });
        }
        self.pump(f, now)?;
        Ok(completed)
    }

    fn on_rto(&mut self, f: usize, now: SimTime) -> Result<()> {
        let slot = &mut self.flows[f];
        if slot.sender.rto_deadline().is_some_and(|d| d <= now) {
            let in_flight = slot.sender.packets_in_flight();
            let action = slot.sender.on_rto_timeout(now)?;
            if self.traced(f) {
                let (seq, next) = match action {
                    RtoAction::Retransmit { seq_start, rearm_at } => (Some(seq_start), rearm_at),
                    RtoAction::Rearmed { rearm_at } => (None, rearm_at),
                };
                self.trace.push(TraceEvent {
                    t: now,
                    event: TraceKind::RtoFire,
                    flow: f as u32,
                    seq_start: seq,
                    seq_end: None,
                    ack_cum: None,
                    dropped: None,
                    in_flight,
                    next_timer: Some(next),
                });
            }
        }
        self.pump(f, now)
    }

    /// Fills the flow's share of the shaper queue and re-syncs its timers.
    fn pump(&mut self, f: usize, now: SimTime) -> Result<()> {
        let slot = &mut self.flows[f];
        while slot.queued_bytes < self.tsq_limit_bytes {
            let Some(seg) = slot.sender.on_send_opportunity(now) else { break };
            match self.htb.enqueue(seg, now) {
                EnqueueOutcome::Accepted => slot.queued_bytes += seg.wire_bytes as u64,
                // The timer recovers it.
                EnqueueOutcome::Dropped => slot.shaper_drops += 1,
            }
        }
        slot.peak_in_flight = slot.peak_in_flight.max(slot.sender.packets_in_flight());
        if let Some(d) = slot.sender.rto_deadline() {
            let at = d.max(now);
            if slot.rto_event.is_none_or(|e| at < e) {
                self.queue.schedule(at, Ev::Rto(f))?;
                slot.rto_event = Some(at);
            }
        }
        if let Some(w) = slot.sender.window_opens_at(now) {
            if slot.wake_event != Some(w) {
                self.queue.schedule(w, Ev::Wake(f))?;
                slot.wake_event = Some(w);
            }
        }
        Ok(())
    }

    /// Makes sure a dequeue attempt is pending for the earliest eligible time.
    fn kick(&mut self, now: SimTime) -> Result<()> {
        if let Some(t) = self.htb.next_dequeue_time(now) {
            if self.dequeue_event.is_none_or(|d| t < d) {
                self.queue.schedule(t, Ev::Dequeue)?;
                self.dequeue_event = Some(t);
            }
        }
        Ok(())
    }
}
