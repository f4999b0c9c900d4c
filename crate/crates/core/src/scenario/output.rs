//! File formats. Durations are seconds with six decimals; rates are Mb/s.

use std::io::Write;

use super::network::TraceEvent;
use super::{SweepRow, TimelineResult};
use crate::error::{Result, SimError};

fn io_err(e: impl std::fmt::Display) -> SimError {
    SimError::Io(e.to_string())
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

/// Header of the throughput series.
pub const SERIES_HEADER: [&str; 4] = ["run_id", "bin_start_s", "class", "mbps"];

pub fn write_series_csv<W: Write>(out: W, run_id: &str, result: &TimelineResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_HEADER).map_err(io_err)?;
    for s in &result.samples {
        w.write_record([
            run_id,
            &f6(s.bin_start.as_secs_f64()),
            s.traffic.name(),
            &f6(s.mbps),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Per-class delivered totals of a timeline run.
pub fn write_totals_csv<W: Write>(out: W, run_id: &str, result: &TimelineResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "class", "delivered_bytes", "mean_mbps"]).map_err(io_err)?;
    let secs = result.horizon.as_secs_f64();
    for (t, &b) in &result.delivered_bytes {
        w.write_record([
            run_id.to_string(),
            t.name().to_string(),
            b.to_string(),
            f6(b as f64 * 8.0 / secs / 1e6),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

const STAT_FIELDS: [&str; 6] = ["min", "max", "median", "mean", "stddev", "three_sigma"];

pub fn sweep_header() -> Vec<String> {
    let mut h = vec!["loss".to_string(), "rto_mode".to_string(), "samples".to_string()];
    for prefix in ["n", "t"] {
        for f in STAT_FIELDS {
            h.push(format!("{prefix}_{f}"));
        }
    }
    h.push("diff_n_three_sigma".into());
    h.push("diff_t_three_sigma".into());
    h
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(sweep_header()).map_err(io_err)?;
    for r in rows {
        let mut rec = vec![r.loss.to_string(), r.rto_mode.name().to_string(), r.samples.to_string()];
        for s in [&r.n_time, &r.true_transfer] {
            for v in [s.min, s.max, s.median, s.mean, s.stddev, s.three_sigma] {
                rec.push(f6(v));
            }
        }
        rec.push(f6(r.diff_n_three_sigma));
        rec.push(f6(r.diff_t_three_sigma));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// One JSON object per line.
pub fn write_trace_jsonl<W: Write>(mut out: W, trace: &[TraceEvent]) -> Result<()> {
    for e in trace {
        serde_json::to_writer(&mut out, e).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
