//! Checks shared by the property suite and the acceptance run.

#![allow(dead_code)]

use lfnsim::htb::{HtbConfig, PolicyRow, RateSpec};
use lfnsim::link::{FlowId, Segment};
use lfnsim::scenario::{run_transfer_detailed, run_transfer_traced, TraceKind};
use lfnsim::transport::{open_connection, CcMode, RtoMode, RtoPolicyConfig, RttEstimator, TransportConfig, FIXED_CWND};
use lfnsim::{EventQueue, Htb, PolicyTable, RandomStream, SimTime, TrafficType, TransferConfig, TransferRecord};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const WIRE: u32 = 1514;

// ---------------------------------------------------------------------------
// A bare transport harness: pacer, fixed delay, Bernoulli loss both ways.

#[derive(Clone, Copy, Debug)]
enum Ev {
    Tick,
    Data(Segment),
    Ack(Segment),
    Rto,
}

pub struct Delivery {
    pub delivered: u64,
    /// Sum of the in-order byte counts the receiver reported.
    pub in_order_sum: u64,
    pub completed: bool,
    pub cwnd_seen: (u32, u32),
}

pub fn run_harness(size: u64, loss: f64, one_way_ms: u64, cc: CcMode, rto: RtoMode, seed: u64) -> Delivery {
    let pace = SimTime::from_micros(25);
    let delay = SimTime::from_millis(one_way_ms);
    let cfg = TransportConfig {
        cc_mode: cc,
        rto: RtoPolicyConfig::with_mode(rto),
        prescale_duration: delay.saturating_mul(2),
        ..TransportConfig::default()
    };
    let (mut tx, mut rx) = open_connection(FlowId(0), size, &cfg).unwrap();
    let mut fwd = RandomStream::new(seed, 0);
    let mut rev = RandomStream::new(seed, 1);
    let mut q: EventQueue<Ev> = EventQueue::new();
    let mut tick_at = Some(SimTime::ZERO);
    let mut rto_at: Option<SimTime> = None;
    let mut in_order_sum = 0u64;
    let mut cwnd_seen = (u32::MAX, 0u32);
    // Timer backoff can reach its two-minute cap at 20% loss.
    let limit = SimTime::from_secs(10_000_000);

    q.schedule(SimTime::ZERO, Ev::Tick).unwrap();
    while let Some((now, ev)) = q.pop_until(limit) {
        let wakes_pacer = !matches!(ev, Ev::Tick | Ev::Data(_));
        match ev {
            Ev::Tick => {
                if tick_at != Some(now) {
                    continue;
                }
                tick_at = None;
                if let Some(mut seg) = tx.on_send_opportunity(now) {
                    seg.sent_at = now;
                    tx.on_wire(&seg, now);
                    if !fwd.bernoulli(loss).unwrap() {
                        q.schedule(now + delay, Ev::Data(seg)).unwrap();
                    }
                    tick_at = Some(now + pace);
                } else if let Some(w) = tx.window_opens_at(now) {
                    tick_at = Some(w);
                }
                if let Some(t) = tick_at {
                    q.schedule(t, Ev::Tick).unwrap();
                }
            }
            Ev::Data(seg) => {
                let before = rx.delivered();
                let (mut ack, newly) = rx.on_data(&seg, now);
                assert_eq!(rx.delivered(), before + newly, "delivery is a growing prefix");
                in_order_sum += newly;
                ack.sent_at = now;
                if !rev.bernoulli(loss).unwrap() {
                    q.schedule(now + delay, Ev::Ack(ack)).unwrap();
                }
            }
            Ev::Ack(ack) => {
                if tx.on_ack(&ack, now).unwrap().completed {
                    return Delivery {
                        delivered: rx.delivered(),
                        in_order_sum,
                        completed: true,
                        cwnd_seen,
                    };
                }
            }
            Ev::Rto => {
                if rto_at == Some(now) {
                    rto_at = None;
                }
                if tx.rto_deadline().is_some_and(|d| d <= now) {
                    tx.on_rto_timeout(now).unwrap();
                }
            }
        }
        cwnd_seen = (cwnd_seen.0.min(tx.cwnd()), cwnd_seen.1.max(tx.cwnd()));
        if wakes_pacer && tick_at.is_none() {
            q.schedule(now, Ev::Tick).unwrap();
            tick_at = Some(now);
        }
        if let Some(d) = tx.rto_deadline() {
            let at = d.max(now);
            if rto_at.is_none_or(|e| at < e) {
                q.schedule(at, Ev::Rto).unwrap();
                rto_at = Some(at);
            }
        }
    }
    Delivery {
        delivered: rx.delivered(),
        in_order_sum,
        completed: false,
        cwnd_seen,
    }
}

pub fn cc_mode() -> impl Strategy<Value = CcMode> {
    prop_oneof![Just(CcMode::Fixed), Just(CcMode::Reno)]
}

pub fn rto_mode() -> impl Strategy<Value = RtoMode> {
    prop_oneof![Just(RtoMode::Accelerated), Just(RtoMode::Rfc2988)]
}

pub fn delivery_case() -> impl Strategy<Value = (u64, f64, u64, CcMode, RtoMode, u64)> {
    (
        prop_oneof![1u64..4_000, 4_000u64..=10_000_000],
        0.0f64..=0.2,
        1u64..=90,
        cc_mode(),
        rto_mode(),
        any::<u64>(),
    )
}

pub fn check_delivery(
    (size, loss, one_way_ms, cc, rto, seed): (u64, f64, u64, CcMode, RtoMode, u64),
) -> Result<(), TestCaseError> {
    let d = run_harness(size, loss, one_way_ms, cc, rto, seed);
    prop_assert!(d.completed);
    prop_assert_eq!(d.delivered, size);
    prop_assert_eq!(d.in_order_sum, size);
    Ok(())
}

pub fn fixed_window_case() -> impl Strategy<Value = (u64, f64, RtoMode, u64)> {
    (1u64..=3_000_000, 0.0f64..=0.2, rto_mode(), any::<u64>())
}

pub fn check_fixed_window((size, loss, rto, seed): (u64, f64, RtoMode, u64)) -> Result<(), TestCaseError> {
    let d = run_harness(size, loss, 20, CcMode::Fixed, rto, seed);
    prop_assert!(d.completed);
    prop_assert_eq!(d.cwnd_seen, (FIXED_CWND, FIXED_CWND));
    Ok(())
}

// ---------------------------------------------------------------------------
// Full shaped path.

pub fn path(size: u64, loss: f64, rto: RtoMode) -> TransferConfig {
    TransferConfig {
        size_bytes: size,
        time_limit: SimTime::from_secs(1_000_000),
        ..TransferConfig::default().with_loss(loss).with_rto_mode(rto)
    }
}

/// T = N − 3/2 RTT, exactly, once N covers that much.
pub fn check_identity(r: &TransferRecord, rtt: SimTime) -> Result<(), TestCaseError> {
    prop_assert_eq!(r.true_transfer, r.box_width + r.retrans_tail + rtt.half());
    let one_and_half = rtt + rtt.half();
    if r.n_time >= one_and_half {
        prop_assert_eq!(r.true_transfer, r.n_time - one_and_half);
    }
    Ok(())
}

pub fn record_case() -> impl Strategy<Value = (u64, f64, RtoMode, u64)> {
    (
        1u64..=20_000_000,
        prop_oneof![Just(0.0), 0.0f64..=0.05],
        rto_mode(),
        0u64..10_000,
    )
}

pub fn check_record((size, loss, rto, run_id): (u64, f64, RtoMode, u64)) -> Result<(), TestCaseError> {
    let o = run_transfer_detailed(&path(size, loss, rto), run_id).unwrap();
    let r = o.record;
    check_identity(&r, o.diagnostics.rtt)?;
    // Whatever is neither received nor dropped was still on the wire at
    // completion, and can only be a duplicate.
    let unaccounted = r.packets_sent - o.diagnostics.packets_received - r.packets_lost;
    prop_assert!(unaccounted <= r.retransmissions);
    prop_assert_eq!(o.diagnostics.cwnd_range, (FIXED_CWND, FIXED_CWND));
    if loss == 0.0 {
        prop_assert_eq!(r.retransmissions, 0);
        prop_assert_eq!(r.spurious_retransmissions, 0);
        prop_assert_eq!(r.retrans_tail, SimTime::ZERO);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Timer behaviour seen in packet traces.

/// Consecutive timer firings with no ACK in between.
pub struct SilentPair {
    pub gap: SimTime,
    /// How far ahead the second firing re-armed the timer.
    pub next: SimTime,
    pub in_flight: u32,
    /// Every byte had been sent once by the first firing.
    pub all_sent: bool,
}

pub fn silent_rto_pairs(cfg: &TransferConfig, run_id: u64) -> Vec<SilentPair> {
    let trace = run_transfer_traced(cfg, run_id).unwrap().trace;
    let mut highest = 0;
    let mut last_fire: Option<(SimTime, u32, bool)> = None;
    let mut pairs = Vec::new();
    for e in &trace {
        match e.event {
            TraceKind::Send => highest = highest.max(e.seq_end.unwrap()),
            TraceKind::Retransmit => {}
            TraceKind::Ack => last_fire = None,
            TraceKind::RtoFire => {
                let all_sent = highest == cfg.size_bytes;
                if let Some((t0, in_flight, all_sent)) = last_fire {
                    pairs.push(SilentPair {
                        gap: e.t - t0,
                        next: e.next_timer.unwrap() - e.t,
                        in_flight,
                        all_sent,
                    });
                }
                last_fire = Some((e.t, e.in_flight, all_sent));
            }
        }
    }
    pairs
}

/// Repeated tail timeouts in accelerated mode over `runs` lossy transfers.
/// Returns how many were seen, or the first one not 50 ms apart.
pub fn tail_spacing(runs: u64) -> Result<usize, String> {
    let cfg = path(1_000_000, 0.1, RtoMode::Accelerated);
    let want = SimTime::from_millis(50);
    let mut seen = 0;
    for run_id in 0..runs {
        for p in silent_rto_pairs(&cfg, run_id) {
            if p.all_sent && p.in_flight < 99 {
                if p.gap != want || p.next != want {
                    return Err(format!("run {run_id}: gap {} then {}", p.gap, p.next));
                }
                seen += 1;
            }
        }
    }
    Ok(seen)
}

// ---------------------------------------------------------------------------
// Smoothed RTT estimator against a direct transcription of the RFC 2988
// update rules.

pub fn rfc2988_oracle(samples_ms: &[f64]) -> Vec<f64> {
    let (g, lo, hi) = (1.0, 200.0, 120_000.0);
    let mut srtt = 0.0;
    let mut rttvar = 0.0;
    let mut out = Vec::new();
    for (i, &r) in samples_ms.iter().enumerate() {
        if i == 0 {
            srtt = r;
            rttvar = r / 2.0;
        } else {
            rttvar = (1.0 - 0.25) * rttvar + 0.25 * (srtt - r).abs();
            srtt = (1.0 - 0.125) * srtt + 0.125 * r;
        }
        let rto: f64 = srtt + f64::max(g, 4.0 * rttvar);
        out.push(rto.clamp(lo, hi));
    }
    out
}

pub fn rtt_sequence() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(1u64..5_000_000, 1..60)
}

pub fn check_estimator(samples_us: Vec<u64>) -> Result<(), TestCaseError> {
    let config = RtoPolicyConfig::with_mode(RtoMode::Rfc2988);
    let mut est = RttEstimator::new(&config);
    prop_assert_eq!(est.rto(), SimTime::from_secs(1));
    let ms: Vec<f64> = samples_us.iter().map(|&u| u as f64 / 1e3).collect();
    let expected = rfc2988_oracle(&ms);
    for (&u, want) in samples_us.iter().zip(expected) {
        est.update(SimTime::from_micros(u), &config);
        let got = est.rto().as_nanos() as f64 / 1e6;
        prop_assert!((got - want).abs() <= 1e-6 * want.max(1.0), "got {got} ms, want {want} ms");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shaper: event-driven scheduler against a 1 ms fixed-step oracle with the
// same bucket rules, on two saturated classes.

#[derive(Clone, Copy, Debug)]
pub struct Micro {
    pub total_bps: u64,
    /// Type, priority, guarantee and ceiling of the two active classes.
    pub classes: [(TrafficType, u8, u64, u64); 2],
}

/// Links slow enough that one millisecond of tokens is well under a
/// bucket, so the stepped oracle never overflows a cap that the event
/// scheduler would not.
pub fn micro() -> impl Strategy<Value = Micro> {
    let class = (0.0f64..=1.0, 0.0f64..=1.0);
    (5_000_000u64..=40_000_000, 0usize..6, 1usize..6, 0u8..6, 1u8..6, class.clone(), class).prop_map(
        |(total, a, b_off, pa, pb_off, (ga, ca), (gb, cb))| {
            let ta = TrafficType::ALL[a];
            let tb = TrafficType::ALL[(a + b_off) % 6];
            let pb = (pa + pb_off) % 6;
            let rates = |g: f64, c: f64| {
                let ceil = ((total as f64 * (0.05 + 0.95 * c)) as u64).max(1);
                ((ceil as f64 * g) as u64, ceil)
            };
            let (ga, ca) = rates(ga, ca);
            let (gb, cb) = rates(gb, cb);
            Micro {
                total_bps: total,
                classes: [(ta, pa, ga, ca), (tb, pb, gb, cb)],
            }
        },
    )
}

fn policy_of(m: &Micro) -> PolicyTable {
    let rows = TrafficType::ALL
        .iter()
        .map(|&t| {
            let (priority, g, c) = m
                .classes
                .iter()
                .find(|c| c.0 == t)
                .map_or((7, 1_000, 1_000), |c| (c.1, c.2, c.3));
            PolicyRow {
                traffic: t,
                priority,
                guarantee: RateSpec::BitsPerSec(g),
                ceil: RateSpec::BitsPerSec(c),
            }
        })
        .collect();
    PolicyTable {
        total_rate_bps: m.total_bps,
        rows,
    }
}

pub fn packet(flow: u32) -> Segment {
    Segment::data(FlowId(flow), 0, (WIRE - 66) as u64, 66, false)
}

/// Bytes served per class before each checkpoint, event-driven.
pub fn event_driven(m: &Micro, checkpoints: &[SimTime]) -> Vec<[u64; 2]> {
    let mut h = Htb::build(&policy_of(m), HtbConfig::default()).unwrap();
    for (k, c) in m.classes.iter().enumerate() {
        h.register_flow(FlowId(k as u32), c.0);
        for _ in 0..4 {
            h.enqueue(packet(k as u32), SimTime::ZERO);
        }
    }
    let end = *checkpoints.last().unwrap();
    let mut log: Vec<(SimTime, usize)> = Vec::new();
    let mut now = SimTime::ZERO;
    while now < end {
        while let Some(seg) = h.dequeue(now) {
            log.push((now, seg.flow.0 as usize));
            h.enqueue(packet(seg.flow.0), now);
        }
        now = h.next_dequeue_time(now).expect("saturated");
    }
    checkpoints
        .iter()
        .map(|&cp| {
            let mut b = [0u64; 2];
            for &(_, k) in log.iter().filter(|(t, _)| *t < cp) {
                b[k] += WIRE as u64;
            }
            b
        })
        .collect()
}

/// Same rules stepped every millisecond with bucket levels in bytes.
pub fn fixed_step(m: &Micro, checkpoints: &[SimTime]) -> Vec<[u64; 2]> {
    let cfg = HtbConfig::default();
    let cap = |rate: u64| cfg.burst_bytes(rate) as f64;
    let per_ms = |rate: u64| rate as f64 / 8.0 / 1000.0;
    let mut root = cap(m.total_bps);
    let mut tok = [cap(m.classes[0].2), cap(m.classes[1].2)];
    let mut ctok = [cap(m.classes[0].3), cap(m.classes[1].3)];
    let order: Vec<usize> = if m.classes[0].1 <= m.classes[1].1 { vec![0, 1] } else { vec![1, 0] };
    let cost = WIRE as f64;
    let mut served = [0u64; 2];
    let mut out = Vec::new();
    let mut cps = checkpoints.iter().peekable();
    let mut step = 0u64;
    while let Some(&&cp) = cps.peek() {
        let t = SimTime::from_millis(step);
        if t >= cp {
            out.push(served);
            cps.next();
            continue;
        }
        if step > 0 {
            root = (root + per_ms(m.total_bps)).min(cap(m.total_bps));
            for k in 0..2 {
                tok[k] = (tok[k] + per_ms(m.classes[k].2)).min(cap(m.classes[k].2));
                ctok[k] = (ctok[k] + per_ms(m.classes[k].3)).min(cap(m.classes[k].3));
            }
        }
        loop {
            let pick = order
                .iter()
                .find(|&&k| root >= cost && ctok[k] >= cost && tok[k] >= cost)
                .map(|&k| (k, true))
                .or_else(|| order.iter().find(|&&k| root >= cost && ctok[k] >= cost).map(|&k| (k, false)));
            let Some((k, guaranteed)) = pick else { break };
            if guaranteed {
                tok[k] -= cost;
            }
            ctok[k] -= cost;
            root -= cost;
            served[k] += WIRE as u64;
        }
        step += 1;
    }
    out
}

pub fn check_shaper(m: Micro) -> Result<(), TestCaseError> {
    let checkpoints: Vec<SimTime> = (1..=6).map(|k| SimTime::from_millis(50 * k)).collect();
    let a = event_driven(&m, &checkpoints);
    let b = fixed_step(&m, &checkpoints);
    // Totals may differ by one step of the link plus the initial bucket,
    // which the two schedulers can split differently.
    let step = m.total_bps / 8 / 1000;
    let burst = HtbConfig::default().burst_bytes(m.total_bps);
    let tol = step + burst + WIRE as u64;
    for (cp, (x, y)) in checkpoints.iter().zip(a.iter().zip(&b)) {
        for k in 0..2 {
            prop_assert!(x[k].abs_diff(y[k]) <= tol, "class {k} at {cp}: event {} vs step {} (tol {tol})", x[k], y[k]);
        }
    }
    // After the start-up bursts the rates agree to within a step.
    let (a0, a1, b0, b1) = (a[1], a[5], b[1], b[5]);
    for k in 0..2 {
        let (ea, eb) = (a1[k] - a0[k], b1[k] - b0[k]);
        prop_assert!(ea.abs_diff(eb) <= 2 * (step + 2 * WIRE as u64), "class {k} steady state: event {ea} vs step {eb}");
    }
    // Neither exceeds the link plus one bucket.
    let horizon = checkpoints.last().unwrap().as_secs_f64();
    let bound = m.total_bps as f64 / 8.0 * horizon + burst as f64;
    let last = a.last().unwrap();
    prop_assert!((last[0] + last[1]) as f64 <= bound + WIRE as f64);
    Ok(())
}
