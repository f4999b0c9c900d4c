//! `lfnsim` command-line front end.
//!
//! Every flag can also be given in a TOML file passed with `--config`;
//! flags win over the file.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lfnsim::scenario::output::{write_series_csv, write_sweep_csv, write_totals_csv, write_trace_jsonl};
use lfnsim::scenario::{run_sweep, run_timeline, run_transfer, run_transfer_traced, Timeline, DEFAULT_SWEEP_LOSSES};
use lfnsim::{CcMode, RtoMode, RunConfig, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;
const EXIT_OTHER: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "lfnsim", version, about = "Packet-level simulator for shaped bulk transfers over a long fat network")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML file whose keys mirror these flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    rtt_ms: Option<f64>,
    /// Per-packet drop probability as a fraction (0.01 = 1%).
    #[arg(long, global = true)]
    loss: Option<f64>,
    #[arg(long, global = true)]
    rate_mbps: Option<f64>,
    #[arg(long, global = true)]
    mss: Option<u32>,
    #[arg(long, global = true)]
    overhead_bytes: Option<u32>,
    #[arg(long, global = true)]
    size_bytes: Option<u64>,
    /// fixed | reno
    #[arg(long, global = true)]
    cc: Option<CcMode>,
    /// accelerated | rfc2988
    #[arg(long, global = true)]
    rto: Option<RtoMode>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<u32>,
    #[arg(long, global = true)]
    bin_ms: Option<f64>,
    #[arg(long, global = true, value_name = "FILE")]
    policy: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    timeline: Option<PathBuf>,
    /// Output file; standard output if omitted.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one transfer and print its record as JSON.
    Transfer {
        /// Loss stream within the seed.
        #[arg(long, default_value_t = 0)]
        run_id: u64,
    },
    /// Monte Carlo statistics for both timer modes at several loss levels.
    Sweep {
        /// Comma-separated loss fractions.
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<f64>>,
    },
    /// Replay a traffic timeline and write per-class throughput.
    Scenario {
        /// Use the built-in benchmark timeline when no file is given.
        #[arg(long)]
        default_timeline: bool,
        /// Per-class totals; defaults to a `.totals.csv` file next to --out.
        #[arg(long, value_name = "PATH")]
        totals: Option<PathBuf>,
    },
    /// Per-packet JSON-lines trace of one transfer.
    Trace {
        #[arg(long, default_value_t = 0)]
        run_id: u64,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, SimError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = c.$flag.clone() { cfg.$field = v; })*
        };
    }
    apply!(
        rtt_ms => rtt_ms,
        loss => loss,
        rate_mbps => rate_mbps,
        mss => mss,
        overhead_bytes => overhead_bytes,
        size_bytes => size_bytes,
        cc => cc_mode,
        rto => rto_mode,
        seed => seed,
        samples => samples,
        bin_ms => bin_ms,
    );
    if c.policy.is_some() {
        cfg.policy_path = c.policy.clone();
    }
    if c.timeline.is_some() {
        cfg.timeline_path = c.timeline.clone();
    }
    if c.out.is_some() {
        cfg.out_path = c.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, SimError> {
    Ok(match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| SimError::Io(format!("{}: {e}", p.display())))?;
            Box::new(BufWriter::new(f))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn totals_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "series".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.totals.csv"))
}

fn run(cli: Cli) -> Result<(), SimError> {
    let cfg = load_config(&cli.common)?;
    let out_path = cfg.out_path.clone();
    match cli.command {
        Command::Transfer { run_id } => {
            let record = run_transfer(&cfg.transfer()?, run_id)?;
            let mut out = open_out(out_path.as_deref())?;
            let text = serde_json::to_string_pretty(&record).map_err(|e| SimError::Io(e.to_string()))?;
            writeln!(out, "{text}").and_then(|_| out.flush()).map_err(|e| SimError::Io(e.to_string()))
        }
        Command::Sweep { losses } => {
            let losses = losses.unwrap_or_else(|| DEFAULT_SWEEP_LOSSES.to_vec());
            if let Some(bad) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                return Err(SimError::Config(format!("loss must be a fraction in [0, 1], got {bad}")));
            }
            let rows = run_sweep(&cfg.transfer()?, &losses, cfg.samples)?;
            write_sweep_csv(open_out(out_path.as_deref())?, &rows)
        }
        Command::Scenario { default_timeline, totals } => {
            let timeline = match cfg.timeline()? {
                Some(t) => t,
                None if default_timeline => Timeline::standard(),
                None => {
                    return Err(SimError::Config(
                        "scenario needs --timeline FILE or --default-timeline".into(),
                    ))
                }
            };
            let result = run_timeline(&cfg.policy()?, &timeline, &cfg.timeline_config()?)?;
            let run_id = cfg.seed.to_string();
            write_series_csv(open_out(out_path.as_deref())?, &run_id, &result)?;
            match totals.or_else(|| out_path.as_deref().map(totals_path)) {
                Some(p) => write_totals_csv(open_out(Some(&p))?, &run_id, &result),
                None => write_totals_csv(io::stderr().lock(), &run_id, &result),
            }
        }
        Command::Trace { run_id } => {
            let outcome = run_transfer_traced(&cfg.transfer()?, run_id)?;
            write_trace_jsonl(open_out(out_path.as_deref())?, &outcome.trace)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lfnsim: {e}");
            ExitCode::from(match e {
                SimError::Timeout { .. } => EXIT_TIMEOUT,
                e if e.is_config_error() => EXIT_CONFIG,
                _ => EXIT_OTHER,
            })
        }
    }
}
