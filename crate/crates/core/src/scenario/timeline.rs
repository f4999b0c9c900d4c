//! Replays a schedule of traffic sources through one shared shaper and
//! records delivered throughput per class.
//!
//! Crosstalk starts a bounded file transfer which runs to completion; its
//! end marker only documents when the burst is expected to be over. Every
//! other type is a greedy source that sends as fast as it is allowed from
//! its start marker to its end marker, then drains what it has sent.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::network::{Bins, Ev, Network};
use super::DEFAULT_TRANSFER_BYTES;
use crate::error::{Result, SimError};
use crate::htb::{Htb, HtbConfig, PolicyTable, TrafficType};
use crate::link::{FlowId, Link, LinkConfig};
use crate::sim::{RandomStream, SimTime};
use crate::transport::{open_connection, open_unbounded, TransportConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimelineAction {
    Start,
    End,
}

impl fmt::Display for TimelineAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimelineAction::Start => "start",
            TimelineAction::End => "end",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimelineEvent {
    pub at: SimTime,
    pub action: TimelineAction,
    pub traffic: TrafficType,
}

impl TimelineEvent {
    pub fn new(at_secs: f64, action: TimelineAction, traffic: TrafficType) -> Self {
        TimelineEvent {
            at: SimTime::from_secs_f64(at_secs),
            action,
            traffic,
        }
    }
}

/// A validated, time-ordered schedule.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timeline {
    events: Vec<TimelineEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TimelineFile {
    #[serde(default)]
    event: Vec<RawEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: f64,
    action: TimelineAction,
    #[serde(rename = "type")]
    traffic: String,
}

impl Timeline {
    /// Checks ordering and that starts and ends of each type alternate.
    pub fn new(events: Vec<TimelineEvent>) -> Result<Self> {
        let mut active = [false; 6];
        let mut last = SimTime::ZERO;
        for (i, e) in events.iter().enumerate() {
            if e.at < last {
                return Err(SimError::Timeline(format!(
                    "event {} at {} is earlier than the one before it",
                    i + 1,
                    e.at
                )));
            }
            last = e.at;
            let slot = &mut active[e.traffic.index()];
            match (e.action, *slot) {
                (TimelineAction::Start, true) => {
                    return Err(SimError::Timeline(format!(
                        "{} starts at {} while already active",
                        e.traffic, e.at
                    )))
                }
                (TimelineAction::End, false) => {
                    return Err(SimError::Timeline(format!("{} ends at {} without a start", e.traffic, e.at)))
                }
                (TimelineAction::Start, false) => *slot = true,
                (TimelineAction::End, true) => *slot = false,
            }
        }
        Ok(Timeline { events })
    }

    pub fn empty() -> Self {
        Timeline { events: Vec::new() }
    }

    /// The benchmark schedule: EFD and ad hoc run throughout, catch-up,
    /// interactive and raw come and go, and two crosstalk bursts arrive.
    pub fn standard() -> Self {
        use TimelineAction::{End, Start};
        use TrafficType::*;
        let rows = [
            (0.4, Start, Efd),
            (3.4, Start, Adhoc),
            (6.4, Start, Catchup),
            (9.4, Start, Interactive),
            (12.4, Start, Crosstalk),
            (14.2, Start, Raw),
            (14.8, End, Crosstalk),
            (15.5, End, Interactive),
            (17.2, End, Raw),
            (19.2, End, Catchup),
            (21.4, Start, Crosstalk),
            (21.4, Start, Interactive),
            (23.2, Start, Raw),
            (23.8, End, Crosstalk),
            (26.4, End, Raw),
            (27.5, End, Interactive),
        ];
        let events = rows
            .iter()
            .map(|&(t, a, ty)| TimelineEvent::new(t, a, ty))
            .collect();
        Timeline::new(events).expect("standard timeline is valid")
    }

    /// Parses `[[event]]` tables with `at` (seconds), `action` and `type`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TimelineFile = toml::from_str(text).map_err(|e| SimError::Timeline(e.to_string()))?;
        let mut events = Vec::with_capacity(file.event.len());
        for raw in file.event {
            if !raw.at.is_finite() || raw.at < 0.0 {
                return Err(SimError::Timeline(format!("invalid event time {}", raw.at)));
            }
            let traffic = TrafficType::from_str(&raw.traffic).map_err(|e| SimError::Timeline(e.to_string()))?;
            events.push(TimelineEvent::new(raw.at, raw.action, traffic));
        }
        Timeline::new(events)
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    pub fn last_event_time(&self) -> SimTime {
        self.events.last().map_or(SimTime::ZERO, |e| e.at)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimelineConfig {
    pub link: LinkConfig,
    pub htb: HtbConfig,
    pub transport: TransportConfig,
    pub bin: SimTime,
    /// Size of each crosstalk file.
    pub crosstalk_bytes: u64,
    pub seed: u64,
    /// Simulated span; defaults to one second past the last event.
    pub horizon: Option<SimTime>,
    pub tsq_limit_bytes: u64,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        TimelineConfig {
            link: LinkConfig::default(),
            htb: HtbConfig::default(),
            transport: TransportConfig::default(),
            bin: SimTime::from_millis(100),
            crosstalk_bytes: DEFAULT_TRANSFER_BYTES,
            seed: 1,
            horizon: None,
            tsq_limit_bytes: super::DEFAULT_TSQ_LIMIT_BYTES,
        }
    }
}

/// Delivered rate of one class in one bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub bin_start: SimTime,
    pub traffic: TrafficType,
    pub mbps: f64,
}

/// When a source was sending: from its start marker to its end marker
/// (greedy sources) or to the final ACK (crosstalk files).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ActivityInterval {
    pub traffic: TrafficType,
    pub start: SimTime,
    pub end: Option<SimTime>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimelineResult {
    pub bin: SimTime,
    pub horizon: SimTime,
    /// One sample per bin per class, bin-major in class order.
    pub samples: Vec<ThroughputSample>,
    /// Wire bytes delivered per class over the whole run.
    pub delivered_bytes: BTreeMap<TrafficType, u64>,
    pub activity: Vec<ActivityInterval>,
    /// Completion time (first packet to final ACK) of each crosstalk file.
    pub crosstalk_n_times: Vec<SimTime>,
    pub shaper_drops: u64,
}

impl TimelineResult {
    pub fn series(&self, traffic: TrafficType) -> impl Iterator<Item = &ThroughputSample> {
        self.samples.iter().filter(move |s| s.traffic == traffic)
    }
}

pub fn run_timeline(policy: &PolicyTable, timeline: &Timeline, config: &TimelineConfig) -> Result<TimelineResult> {
    config.link.validate()?;
    config.transport.validate()?;
    if config.bin == SimTime::ZERO {
        return Err(SimError::config("bin width must be positive"));
    }
    let horizon = config
        .horizon
        .unwrap_or_else(|| timeline.last_event_time() + SimTime::from_secs(1));
    let stream = RandomStream::new(config.seed, 0);
    let link = Link::new(config.link, &stream)?;
    let htb_cfg = HtbConfig {
        full_segment_wire_bytes: config.transport.mss + config.transport.overhead,
        ..config.htb
    };
    let htb = Htb::build(policy, htb_cfg)?;
    let transport = TransportConfig {
        prescale_duration: config.link.rtt,
        ..config.transport
    };
    let mut net = Network::new(htb, link, config.tsq_limit_bytes);
    net.bins = Some(Bins::new(config.bin, horizon));
    for (i, e) in timeline.events().iter().enumerate() {
        net.queue.schedule(e.at, Ev::External(i))?;
    }

    let mut open: [Option<usize>; 6] = [None; 6];
    // Activity interval index per flow.
    let mut interval_of: Vec<usize> = Vec::new();
    let mut activity: Vec<ActivityInterval> = Vec::new();
    let mut crosstalk_n_times = Vec::new();

    while let Some((now, ev)) = net.queue.pop_until(horizon) {
        match ev {
            Ev::External(i) => {
                let e = timeline.events()[i];
                let k = e.traffic.index();
                match e.action {
                    TimelineAction::Start => {
                        let f = net.flows.len();
                        let flow = FlowId(f as u32);
                        let (s, r) = if e.traffic == TrafficType::Crosstalk {
                            open_connection(flow, config.crosstalk_bytes, &transport)?
                        } else {
                            open_unbounded(flow, &transport)?
                        };
                        interval_of.push(activity.len());
                        activity.push(ActivityInterval {
                            traffic: e.traffic,
                            start: now,
                            end: None,
                        });
                        net.add_flow(e.traffic, s, r)?;
                        open[k] = Some(f);
                    }
                    TimelineAction::End => {
                        let f = open[k].take().expect("validated timeline");
                        if e.traffic != TrafficType::Crosstalk {
                            net.close_flow(f);
                            activity[interval_of[f]].end = Some(now);
                        }
                    }
                }
            }
            ev => {
                if let Some(f) = net.handle(now, ev)? {
                    let slot = &net.flows[f];
                    if slot.traffic == TrafficType::Crosstalk {
                        activity[interval_of[f]].end = Some(now);
                        let first = slot.sender.stats().first_wire_send.expect("sent");
                        crosstalk_n_times.push(now - first);
                    }
                }
            }
        }
    }

    let bins = net.bins.take().expect("bins enabled");
    let secs = config.bin.as_secs_f64();
    let mut samples = Vec::with_capacity(bins.bytes.len() * 6);
    let mut delivered_bytes: BTreeMap<TrafficType, u64> = TrafficType::ALL.iter().map(|&t| (t, 0)).collect();
    for (i, row) in bins.bytes.iter().enumerate() {
        let bin_start = SimTime::from_nanos(i as u64 * config.bin.as_nanos());
        for t in TrafficType::ALL {
            let b = row[t.index()];
            *delivered_bytes.get_mut(&t).expect("all classes") += b;
            samples.push(ThroughputSample {
                bin_start,
                traffic: t,
                mbps: b as f64 * 8.0 / secs / 1e6,
            });
        }
    }
    Ok(TimelineResult {
        bin: config.bin,
        horizon,
        samples,
        delivered_bytes,
        activity,
        crosstalk_n_times,
        shaper_drops: net.flows.iter().map(|f| f.shaper_drops).sum(),
    })
}
