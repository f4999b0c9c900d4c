//! Hierarchical token bucket scheduler for the six-class transfer policy.
//!
//! The tree is two levels deep: a root whose rate equals the node's total
//! allocation, and one leaf per [`TrafficType`]. Each leaf has a guarantee
//! bucket (`tokens`, filled at the guaranteed rate) and a ceiling bucket
//! (`ctokens`, filled at the ceiling rate). Selection is two-pass:
//!
//! 1. Guarantee pass: the highest-priority backlogged leaf whose own
//!    `tokens` and `ctokens` cover the head packet.
//! 2. Borrow pass: otherwise, the highest-priority backlogged leaf whose
//!    `ctokens` cover the head packet.
//!
//! Both passes also require the root bucket to cover the packet, so the
//! aggregate never exceeds the root rate. When guarantees are oversubscribed
//! the root bucket runs dry first and the lowest-priority guarantees absorb
//! the shortfall. Equal priorities are served round-robin, one packet each.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::link::{FlowId, Segment, DEFAULT_MSS, DEFAULT_OVERHEAD};
use crate::sim::SimTime;

const NANOS_PER_SEC: i128 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficType {
    Crosstalk,
    Efd,
    Interactive,
    Raw,
    Catchup,
    Adhoc,
}

impl TrafficType {
    pub const ALL: [TrafficType; 6] = [
        TrafficType::Crosstalk,
        TrafficType::Efd,
        TrafficType::Interactive,
        TrafficType::Raw,
        TrafficType::Catchup,
        TrafficType::Adhoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrafficType::Crosstalk => "crosstalk",
            TrafficType::Efd => "efd",
            TrafficType::Interactive => "interactive",
            TrafficType::Raw => "raw",
            TrafficType::Catchup => "catchup",
            TrafficType::Adhoc => "adhoc",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TrafficType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrafficType {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crosstalk" | "xtalk" => Ok(TrafficType::Crosstalk),
            "efd" => Ok(TrafficType::Efd),
            "interactive" => Ok(TrafficType::Interactive),
            "raw" => Ok(TrafficType::Raw),
            "catchup" => Ok(TrafficType::Catchup),
            "adhoc" | "ad hoc" | "ad-hoc" => Ok(TrafficType::Adhoc),
            other => Err(SimError::Policy(format!("unknown traffic type '{other}'"))),
        }
    }
}

/// A rate given either absolutely or as a share of the total allocation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateSpec {
    BitsPerSec(u64),
    Percent(f64),
}

impl RateSpec {
    pub fn mbit(mbps: f64) -> Self {
        RateSpec::BitsPerSec((mbps * 1e6).round() as u64)
    }

    pub fn resolve(self, total_bps: u64) -> u64 {
        match self {
            RateSpec::BitsPerSec(b) => b,
            RateSpec::Percent(p) => (total_bps as f64 * p / 100.0).round() as u64,
        }
    }
}

impl FromStr for RateSpec {
    type Err = SimError;

    /// Accepts `N%`, `Nbit`, `Nkbit`, `Nmbit`, `Ngbit` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || SimError::Policy(format!("cannot parse rate '{s}'"));
        if let Some(num) = t.strip_suffix('%') {
            let p: f64 = num.trim().parse().map_err(|_| bad())?;
            if !(0.0..=100.0).contains(&p) {
                return Err(SimError::Policy(format!("percentage out of range in '{s}'")));
            }
            return Ok(RateSpec::Percent(p));
        }
        let (num, scale) = if let Some(n) = t.strip_suffix("gbit") {
            (n, 1e9)
        } else if let Some(n) = t.strip_suffix("mbit") {
            (n, 1e6)
        } else if let Some(n) = t.strip_suffix("kbit") {
            (n, 1e3)
        } else if let Some(n) = t.strip_suffix("bit") {
            (n, 1.0)
        } else {
            return Err(bad());
        };
        let v: f64 = num.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad());
        }
        Ok(RateSpec::BitsPerSec((v * scale).round() as u64))
    }
}

impl fmt::Display for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSpec::Percent(p) => write!(f, "{p}%"),
            RateSpec::BitsPerSec(b) => write!(f, "{}mbit", *b as f64 / 1e6),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolicyRow {
    pub traffic: TrafficType,
    pub priority: u8,
    pub guarantee: RateSpec,
    pub ceil: RateSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub total_rate_bps: u64,
    pub rows: Vec<PolicyRow>,
}

impl Default for PolicyTable {
    fn default() -> Self {
        PolicyTable::standard(476_000_000)
    }
}

impl PolicyTable {
    /// The six-class policy: crosstalk 95%/100% at priority 0, EFD 5%/5%,
    /// interactive 1 Mbit/10%, raw, catchup and ad hoc 1 Mbit/100%.
    pub fn standard(total_rate_bps: u64) -> Self {
        use RateSpec::*;
        let row = |traffic, priority, guarantee, ceil| PolicyRow {
            traffic,
            priority,
            guarantee,
            ceil,
        };
        let one_mbit = BitsPerSec(1_000_000);
        PolicyTable {
            total_rate_bps,
            rows: vec![
                row(TrafficType::Crosstalk, 0, Percent(95.0), Percent(100.0)),
                row(TrafficType::Efd, 1, Percent(5.0), Percent(5.0)),
                row(TrafficType::Interactive, 2, one_mbit, Percent(10.0)),
                row(TrafficType::Raw, 3, one_mbit, Percent(100.0)),
                row(TrafficType::Catchup, 4, one_mbit, Percent(100.0)),
                row(TrafficType::Adhoc, 5, one_mbit, Percent(100.0)),
            ],
        }
    }

    /// Same rows, different total allocation.
    pub fn with_total_rate(mut self, total_rate_bps: u64) -> Self {
        self.total_rate_bps = total_rate_bps;
        self
    }

    pub fn row(&self, traffic: TrafficType) -> Option<&PolicyRow> {
        self.rows.iter().find(|r| r.traffic == traffic)
    }

    /// Parses the TOML policy file format:
    ///
    /// ```toml
    /// total_rate = "476mbit"
    /// [[class]]
    /// type = "crosstalk"
    /// priority = 0
    /// guarantee = "95%"
    /// ceil = "100%"
    /// ```
    pub fn from_toml_str(text: &str, default_total_bps: u64) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            total_rate: Option<String>,
            #[serde(default)]
            class: Vec<Row>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Row {
            #[serde(rename = "type")]
            traffic: String,
            priority: u8,
            guarantee: String,
            ceil: String,
        }
        let file: File = toml::from_str(text).map_err(|e| SimError::Policy(e.to_string()))?;
        let total = match file.total_rate {
            Some(s) => match s.parse::<RateSpec>()? {
                RateSpec::BitsPerSec(b) => b,
                RateSpec::Percent(_) => {
                    return Err(SimError::Policy("total_rate must be absolute".into()));
                }
            },
            None => default_total_bps,
        };
        let rows = file
            .class
            .iter()
            .map(|r| {
                Ok(PolicyRow {
                    traffic: r.traffic.parse()?,
                    priority: r.priority,
                    guarantee: r.guarantee.parse()?,
                    ceil: r.ceil.parse()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PolicyTable {
            total_rate_bps: total,
            rows,
        })
    }
}

/// Bucket in fixed-point credit units of one nanobit (1e-9 bit), so that a
/// rate in bit/s times an interval in ns is an exact integer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Bucket {
    rate_bps: u64,
    cap: i64,
    level: i64,
}

fn cost_units(wire_bytes: u32) -> i64 {
    wire_bytes as i64 * 8 * NANOS_PER_SEC as i64
}

impl Bucket {
    fn full(rate_bps: u64, cap_bytes: u64) -> Self {
        let cap = cap_bytes as i64 * 8 * NANOS_PER_SEC as i64;
        Bucket {
            rate_bps,
            cap,
            level: cap,
        }
    }

    fn refill(&mut self, dt: SimTime) {
        let add = self.rate_bps as i128 * dt.as_nanos() as i128;
        self.level = (self.level as i128 + add).min(self.cap as i128) as i64;
    }

    fn covers(&self, cost: i64) -> bool {
        self.level >= cost
    }

    fn charge(&mut self, cost: i64) {
        self.level -= cost;
    }

    /// Nanoseconds until the level reaches `cost`; `None` if it never will.
    fn wait_for(&self, cost: i64) -> Option<u64> {
        if self.level >= cost {
            return Some(0);
        }
        if self.rate_bps == 0 || cost > self.cap {
            return None;
        }
        let deficit = (cost - self.level) as u128;
        let rate = self.rate_bps as u128;
        Some(deficit.div_ceil(rate) as u64)
    }

    fn bytes(&self) -> f64 {
        self.level as f64 / (8.0 * NANOS_PER_SEC as f64)
    }

    fn cap_bytes(&self) -> f64 {
        self.cap as f64 / (8.0 * NANOS_PER_SEC as f64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    pub enqueued_packets: u64,
    pub dequeued_packets: u64,
    pub dequeued_bytes: u64,
    pub dropped_packets: u64,
}

/// One node of the tree. Only leaves hold packets.
#[derive(Clone, Debug)]
pub struct BandwidthClass {
    pub id: usize,
    pub traffic: Option<TrafficType>,
    pub parent: Option<usize>,
    pub priority: u8,
    pub guarantee_rate_bps: u64,
    pub ceil_rate_bps: u64,
    tokens: Bucket,
    ctokens: Bucket,
    queue: VecDeque<Segment>,
    stats: ClassStats,
}

impl BandwidthClass {
    pub fn tokens_bytes(&self) -> f64 {
        self.tokens.bytes()
    }

    pub fn ctokens_bytes(&self) -> f64 {
        self.ctokens.bytes()
    }

    pub fn burst_bytes(&self) -> f64 {
        self.tokens.cap_bytes()
    }

    pub fn cburst_bytes(&self) -> f64 {
        self.ctokens.cap_bytes()
    }

    pub fn backlog(&self) -> usize {
        self.queue.len()
    }

    pub fn stats(&self) -> ClassStats {
        self.stats
    }

    pub fn is_leaf(&self) -> bool {
        self.parent.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HtbConfig {
    /// Per-leaf FIFO limit in packets.
    pub queue_limit: usize,
    /// Wire size of a full segment, for the minimum burst.
    pub full_segment_wire_bytes: u32,
    /// Buckets hold at least this much time at their rate.
    pub burst_time: SimTime,
    /// Buckets hold at least this many full segments.
    pub burst_segments: u32,
}

impl Default for HtbConfig {
    fn default() -> Self {
        HtbConfig {
            queue_limit: 10_000,
            full_segment_wire_bytes: DEFAULT_MSS + DEFAULT_OVERHEAD,
            burst_time: SimTime::from_millis(1),
            burst_segments: 10,
        }
    }
}

impl HtbConfig {
    /// `max(burst_segments * full segment, rate * burst_time)` in bytes.
    pub fn burst_bytes(&self, rate_bps: u64) -> u64 {
        let by_segments = self.burst_segments as u64 * self.full_segment_wire_bytes as u64;
        let by_time = (rate_bps as u128 * self.burst_time.as_nanos() as u128 / (8 * NANOS_PER_SEC as u128)) as u64;
        by_segments.max(by_time)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    Guarantee,
    Borrow,
}

/// Two-level HTB with a flow classifier in front of it.
#[derive(Clone, Debug)]
pub struct Htb {
    config: HtbConfig,
    classes: Vec<BandwidthClass>,
    /// Leaf class id per traffic type.
    leaf_of: [usize; 6],
    /// Leaves grouped by priority, ascending; each group has a round-robin cursor.
    groups: Vec<(u8, Vec<usize>, usize)>,
    flows: HashMap<FlowId, TrafficType>,
    last_update: SimTime,
    backlog: usize,
    last_pass: Option<Pass>,
}

pub const ROOT: usize = 0;

impl Htb {
    /// Builds the root plus one leaf per traffic type.
    pub fn build(policy: &PolicyTable, config: HtbConfig) -> Result<Self> {
        if policy.rows.is_empty() {
            return Err(SimError::Policy("policy has no classes".into()));
        }
        if policy.total_rate_bps == 0 {
            return Err(SimError::Policy("total rate must be positive".into()));
        }
        for t in TrafficType::ALL {
            match policy.rows.iter().filter(|r| r.traffic == t).count() {
                0 => return Err(SimError::Policy(format!("policy is missing class '{t}'"))),
                1 => {}
                _ => return Err(SimError::Policy(format!("class '{t}' defined twice"))),
            }
        }
        let total = policy.total_rate_bps;
        let root_burst = config.burst_bytes(total);
        let mut classes = vec![BandwidthClass {
            id: ROOT,
            traffic: None,
            parent: None,
            priority: 0,
            guarantee_rate_bps: total,
            ceil_rate_bps: total,
            tokens: Bucket::full(total, root_burst),
            ctokens: Bucket::full(total, root_burst),
            queue: VecDeque::new(),
            stats: ClassStats::default(),
        }];
        let mut leaf_of = [0usize; 6];
        for t in TrafficType::ALL {
            let row = policy.row(t).expect("checked above");
            let guarantee = row.guarantee.resolve(total);
            let ceil = row.ceil.resolve(total);
            if guarantee > ceil {
                return Err(SimError::Policy(format!(
                    "class '{t}': guarantee {guarantee} bit/s exceeds ceil {ceil} bit/s"
                )));
            }
            if ceil > total {
                return Err(SimError::Policy(format!("class '{t}': ceil exceeds the total rate")));
            }
            if ceil == 0 {
                return Err(SimError::Policy(format!("class '{t}': ceil must be positive")));
            }
            let id = classes.len();
            leaf_of[t.index()] = id;
            classes.push(BandwidthClass {
                id,
                traffic: Some(t),
                parent: Some(ROOT),
                priority: row.priority,
                guarantee_rate_bps: guarantee,
                ceil_rate_bps: ceil,
                tokens: Bucket::full(guarantee, config.burst_bytes(guarantee)),
                ctokens: Bucket::full(ceil, config.burst_bytes(ceil)),
                queue: VecDeque::new(),
                stats: ClassStats::default(),
            });
        }
        let mut leaves: Vec<usize> = (1..classes.len()).collect();
        leaves.sort_by_key(|&id| (classes[id].priority, id));
        let mut groups: Vec<(u8, Vec<usize>, usize)> = Vec::new();
        for id in leaves {
            let p = classes[id].priority;
            match groups.last_mut() {
                Some((gp, members, _)) if *gp == p => members.push(id),
                _ => groups.push((p, vec![id], 0)),
            }
        }
        Ok(Htb {
            config,
            classes,
            leaf_of,
            groups,
            flows: HashMap::new(),
            last_update: SimTime::ZERO,
            backlog: 0,
            last_pass: None,
        })
    }

    pub fn config(&self) -> &HtbConfig {
        &self.config
    }

    pub fn root(&self) -> &BandwidthClass {
        &self.classes[ROOT]
    }

    pub fn leaf(&self, t: TrafficType) -> &BandwidthClass {
        &self.classes[self.leaf_of[t.index()]]
    }

    pub fn classes(&self) -> &[BandwidthClass] {
        &self.classes
    }

    /// Declares the traffic type of a flow (stand-in for address/port filters).
    pub fn register_flow(&mut self, flow: FlowId, traffic: TrafficType) {
        self.flows.insert(flow, traffic);
    }

    /// Unregistered flows fall into the ad hoc class.
    pub fn classify(&self, flow: FlowId) -> TrafficType {
        self.flows.get(&flow).copied().unwrap_or(TrafficType::Adhoc)
    }

    /// Packets queued across all leaves.
    pub fn backlog(&self) -> usize {
        self.backlog
    }

    /// Which pass served the most recent dequeue.
    pub fn last_pass(&self) -> Option<Pass> {
        self.last_pass
    }

    pub fn enqueue(&mut self, segment: Segment, now: SimTime) -> EnqueueOutcome {
        self.refresh(now);
        let id = self.leaf_of[self.classify(segment.flow).index()];
        let limit = self.config.queue_limit;
        let class = &mut self.classes[id];
        if class.queue.len() >= limit {
            class.stats.dropped_packets += 1;
            return EnqueueOutcome::Dropped;
        }
        class.queue.push_back(segment);
        class.stats.enqueued_packets += 1;
        self.backlog += 1;
        EnqueueOutcome::Accepted
    }

    fn refresh(&mut self, now: SimTime) {
        if now <= self.last_update {
            return;
        }
        let dt = now - self.last_update;
        for c in &mut self.classes {
            c.tokens.refill(dt);
            c.ctokens.refill(dt);
        }
        self.last_update = now;
    }

    fn head_cost(&self, id: usize) -> Option<i64> {
        self.classes[id].queue.front().map(|s| cost_units(s.wire_bytes))
    }

    fn pick(&mut self, pass: Pass) -> Option<usize> {
        let root_level = self.classes[ROOT].ctokens;
        for g in 0..self.groups.len() {
            let n = self.groups[g].1.len();
            let start = self.groups[g].2;
            for k in 0..n {
                let pos = (start + k) % n;
                let id = self.groups[g].1[pos];
                let Some(cost) = self.head_cost(id) else { continue };
                let c = &self.classes[id];
                let ok = root_level.covers(cost)
                    && c.ctokens.covers(cost)
                    && (pass == Pass::Borrow || c.tokens.covers(cost));
                if ok {
                    self.groups[g].2 = (pos + 1) % n;
                    return Some(id);
                }
            }
        }
        None
    }

    /// Dequeues the next packet permitted at `now`, if any.
    pub fn dequeue(&mut self, now: SimTime) -> Option<Segment> {
        if self.backlog == 0 {
            return None;
        }
        self.refresh(now);
        let (id, pass) = match self.pick(Pass::Guarantee) {
            Some(id) => (id, Pass::Guarantee),
            None => (self.pick(Pass::Borrow)?, Pass::Borrow),
        };
        let seg = self.classes[id].queue.pop_front().expect("backlogged");
        let cost = cost_units(seg.wire_bytes);
        {
            let c = &mut self.classes[id];
            if pass == Pass::Guarantee {
                c.tokens.charge(cost);
            }
            c.ctokens.charge(cost);
            c.stats.dequeued_packets += 1;
            c.stats.dequeued_bytes += seg.wire_bytes as u64;
        }
        let root = &mut self.classes[ROOT];
        if pass == Pass::Guarantee {
            root.tokens.charge(cost);
            // The root guarantee bucket only records pass-1 usage; it may go
            // negative but never gates selection.
        }
        root.ctokens.charge(cost);
        root.stats.dequeued_packets += 1;
        root.stats.dequeued_bytes += seg.wire_bytes as u64;
        self.backlog -= 1;
        self.last_pass = Some(pass);
        Some(seg)
    }

    /// Earliest time at which [`Htb::dequeue`] will return a packet, or
    /// `None` if every queue is empty.
    pub fn next_dequeue_time(&mut self, now: SimTime) -> Option<SimTime> {
        if self.backlog == 0 {
            return None;
        }
        self.refresh(now);
        let root = self.classes[ROOT].ctokens;
        let mut best: Option<u64> = None;
        for c in &self.classes[1..] {
            let Some(head) = c.queue.front() else { continue };
            let cost = cost_units(head.wire_bytes);
            // The borrow pass needs a subset of what the guarantee pass
            // needs, so its readiness time is the earliest possible.
            let wait = match (c.ctokens.wait_for(cost), root.wait_for(cost)) {
                (Some(a), Some(b)) => a.max(b),
                _ => continue,
            };
            best = Some(best.map_or(wait, |b| b.min(wait)));
        }
        best.map(|w| now + SimTime::from_nanos(w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(flow: u32, i: u64) -> Segment {
        let mss = DEFAULT_MSS as u64;
        Segment::data(FlowId(flow), i * mss, (i + 1) * mss, DEFAULT_OVERHEAD, false)
    }

    fn htb_with(flows: &[(u32, TrafficType)]) -> Htb {
        let mut h = Htb::build(&PolicyTable::default(), HtbConfig::default()).unwrap();
        for &(f, t) in flows {
            h.register_flow(FlowId(f), t);
        }
        h
    }

    /// Keeps `flows` backlogged and drains for `duration`; returns wire bytes per flow.
    fn drain(h: &mut Htb, flows: &[u32], duration: SimTime) -> HashMap<u32, u64> {
        let mut next_seq: HashMap<u32, u64> = HashMap::new();
        for &f in flows {
            for _ in 0..4 {
                let i = next_seq.entry(f).or_insert(0);
                h.enqueue(data(f, *i), SimTime::ZERO);
                *i += 1;
            }
        }
        let mut out: HashMap<u32, u64> = HashMap::new();
        let mut now = SimTime::ZERO;
        while let Some(t) = h.next_dequeue_time(now) {
            if t > duration {
                break;
            }
            now = t;
            let seg = h.dequeue(now).expect("ready");
            *out.entry(seg.flow.0).or_insert(0) += seg.wire_bytes as u64;
            let i = next_seq.get_mut(&seg.flow.0).unwrap();
            h.enqueue(data(seg.flow.0, *i), now);
            *i += 1;
        }
        out
    }

    fn mbps(bytes: u64, over: SimTime) -> f64 {
        bytes as f64 * 8.0 / over.as_secs_f64() / 1e6
    }

    #[test]
    fn default_policy_resolves_absolute_rates() {
        let h = htb_with(&[]);
        let x = h.leaf(TrafficType::Crosstalk);
        assert_eq!((x.guarantee_rate_bps, x.ceil_rate_bps, x.priority), (452_200_000, 476_000_000, 0));
        let e = h.leaf(TrafficType::Efd);
        assert_eq!((e.guarantee_rate_bps, e.ceil_rate_bps, e.priority), (23_800_000, 23_800_000, 1));
        let i = h.leaf(TrafficType::Interactive);
        assert_eq!((i.guarantee_rate_bps, i.ceil_rate_bps, i.priority), (1_000_000, 47_600_000, 2));
        let r = h.root();
        assert_eq!((r.guarantee_rate_bps, r.ceil_rate_bps), (476_000_000, 476_000_000));
        for t in [TrafficType::Raw, TrafficType::Catchup, TrafficType::Adhoc] {
            assert_eq!(h.leaf(t).guarantee_rate_bps, 1_000_000);
            assert_eq!(h.leaf(t).ceil_rate_bps, 476_000_000);
        }
    }

    #[test]
    fn burst_sizes_follow_rule() {
        let h = htb_with(&[]);
        // 476 Mbit/s * 1 ms = 59,500 bytes > 10 * 1514.
        assert_eq!(h.root().burst_bytes(), 59_500.0);
        assert_eq!(h.leaf(TrafficType::Efd).burst_bytes(), 15_140.0);
        assert_eq!(h.leaf(TrafficType::Adhoc).burst_bytes(), 15_140.0);
        assert_eq!(h.leaf(TrafficType::Adhoc).cburst_bytes(), 59_500.0);
    }

    #[test]
    fn rejects_guarantee_above_ceil_and_empty_policy() {
        let mut p = PolicyTable::default();
        p.rows[1].guarantee = RateSpec::Percent(6.0);
        assert!(Htb::build(&p, HtbConfig::default()).is_err());
        let empty = PolicyTable {
            total_rate_bps: 476_000_000,
            rows: vec![],
        };
        assert!(Htb::build(&empty, HtbConfig::default()).is_err());
        let mut missing = PolicyTable::default();
        missing.rows.pop();
        assert!(Htb::build(&missing, HtbConfig::default()).is_err());
    }

    #[test]
    fn classification() {
        let h = htb_with(&[(1, TrafficType::Crosstalk), (2, TrafficType::Efd), (3, TrafficType::Efd)]);
        assert_eq!(h.classify(FlowId(1)), TrafficType::Crosstalk);
        assert_eq!(h.classify(FlowId(99)), TrafficType::Adhoc);
        assert_eq!(h.classify(FlowId(2)), h.classify(FlowId(3)));
    }

    #[test]
    fn queue_limit_drops_and_counts() {
        let cfg = HtbConfig {
            queue_limit: 2,
            ..HtbConfig::default()
        };
        let mut h = Htb::build(&PolicyTable::default(), cfg).unwrap();
        assert_eq!(h.enqueue(data(0, 0), SimTime::ZERO), EnqueueOutcome::Accepted);
        assert_eq!(h.enqueue(data(0, 1), SimTime::ZERO), EnqueueOutcome::Accepted);
        assert_eq!(h.enqueue(data(0, 2), SimTime::ZERO), EnqueueOutcome::Dropped);
        assert_eq!(h.leaf(TrafficType::Adhoc).stats().dropped_packets, 1);
        assert_eq!(h.backlog(), 2);
    }

    #[test]
    fn empty_scheduler_has_no_next_time() {
        let mut h = htb_with(&[]);
        assert_eq!(h.next_dequeue_time(SimTime::ZERO), None);
        assert_eq!(h.dequeue(SimTime::ZERO), None);
    }

    #[test]
    fn eligible_leaf_is_ready_now() {
        let mut h = htb_with(&[]);
        let t = SimTime::from_millis(3);
        h.enqueue(data(0, 0), t);
        assert_eq!(h.next_dequeue_time(t), Some(t));
    }

    #[test]
    fn next_time_is_exact_deficit_over_rate() {
        // EFD at 23.8 Mbit/s with an empty bucket: one 1514-byte packet
        // needs ceil(1514 * 8 / 23.8e6 s) = ceil(508,907.56 ns).
        let mut h = htb_with(&[(5, TrafficType::Efd)]);
        for i in 0..10 {
            h.enqueue(data(5, i), SimTime::ZERO);
            assert!(h.dequeue(SimTime::ZERO).is_some());
        }
        h.enqueue(data(5, 10), SimTime::ZERO);
        assert_eq!(h.dequeue(SimTime::ZERO), None);
        assert_eq!(h.next_dequeue_time(SimTime::ZERO), Some(SimTime::from_nanos(508_908)));
        assert!(h.dequeue(SimTime::from_nanos(508_907)).is_none());
        assert!(h.dequeue(SimTime::from_nanos(508_908)).is_some());
    }

    #[test]
    fn adhoc_alone_borrows_full_rate() {
        let mut h = htb_with(&[(1, TrafficType::Adhoc)]);
        let d = SimTime::from_secs(2);
        let out = drain(&mut h, &[1], d);
        let rate = mbps(out[&1], d);
        assert!((rate - 476.0).abs() / 476.0 < 0.01, "adhoc {rate}");
    }

    #[test]
    fn efd_is_capped_with_idle_link() {
        let mut h = htb_with(&[(1, TrafficType::Efd)]);
        let d = SimTime::from_secs(2);
        let out = drain(&mut h, &[1], d);
        let rate = mbps(out[&1], d);
        assert!((rate - 23.8).abs() / 23.8 < 0.01, "efd {rate}");
    }

    #[test]
    fn crosstalk_dominates_bulk_classes() {
        let mut h = htb_with(&[
            (1, TrafficType::Crosstalk),
            (2, TrafficType::Raw),
            (3, TrafficType::Catchup),
            (4, TrafficType::Adhoc),
        ]);
        let d = SimTime::from_secs(4);
        let out = drain(&mut h, &[1, 2, 3, 4], d);
        let x = mbps(out[&1], d);
        assert!((452.2 * 0.99..=476.0 * 1.001).contains(&x), "crosstalk {x}");
        for f in [2, 3, 4] {
            let r = mbps(*out.get(&f).unwrap_or(&0), d);
            assert!(r <= 1.0 + 0.05, "flow {f} {r}");
        }
        let total: u64 = out.values().sum();
        assert!(mbps(total, d) <= 476.0 * 1.001);
    }

    #[test]
    fn equal_priorities_round_robin() {
        let mut p = PolicyTable::default();
        p.rows[3].priority = 4; // raw shares priority with catchup
        let mut h = Htb::build(&p, HtbConfig::default()).unwrap();
        h.register_flow(FlowId(1), TrafficType::Raw);
        h.register_flow(FlowId(2), TrafficType::Catchup);
        let d = SimTime::from_secs(1);
        let out = drain(&mut h, &[1, 2], d);
        let (a, b) = (out[&1] as f64, out[&2] as f64);
        assert!((a - b).abs() / (a + b) < 0.01, "{a} vs {b}");
    }

    #[test]
    fn rate_parsing() {
        assert_eq!("95%".parse::<RateSpec>().unwrap(), RateSpec::Percent(95.0));
        assert_eq!("1mbit".parse::<RateSpec>().unwrap(), RateSpec::BitsPerSec(1_000_000));
        assert_eq!("452.2Mbit".parse::<RateSpec>().unwrap(), RateSpec::BitsPerSec(452_200_000));
        assert_eq!("10kbit".parse::<RateSpec>().unwrap(), RateSpec::BitsPerSec(10_000));
        assert!("fast".parse::<RateSpec>().is_err());
        assert!("120%".parse::<RateSpec>().is_err());
        assert_eq!(RateSpec::Percent(95.0).resolve(476_000_000), 452_200_000);
    }

    #[test]
    fn policy_file_roundtrip_of_standard_table() {
        let text = r#"
            total_rate = "476mbit"
            [[class]]
            type = "crosstalk"
            priority = 0
            guarantee = "95%"
            ceil = "100%"
            [[class]]
            type = "efd"
            priority = 1
            guarantee = "5%"
            ceil = "5%"
            [[class]]
            type = "interactive"
            priority = 2
            guarantee = "1mbit"
            ceil = "10%"
            [[class]]
            type = "raw"
            priority = 3
            guarantee = "1mbit"
            ceil = "100%"
            [[class]]
            type = "catchup"
            priority = 4
            guarantee = "1mbit"
            ceil = "100%"
            [[class]]
            type = "adhoc"
            priority = 5
            guarantee = "1mbit"
            ceil = "100%"
        "#;
        let p = PolicyTable::from_toml_str(text, 1).unwrap();
        assert_eq!(p, PolicyTable::default());
    }
}
