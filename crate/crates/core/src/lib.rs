//! Deterministic packet-level simulator for bulk transfers over a long,
//! high-bandwidth path: a token-bucket shaper with a six-class policy, a
//! SACK transport whose congestion window can be pinned, and a choice of
//! retransmission-timer rules.

pub mod config;
pub mod error;
pub mod htb;
pub mod link;
pub mod scenario;
pub mod sim;
pub mod transport;

pub use config::RunConfig;
pub use error::{Result, SimError};
pub use htb::{Htb, HtbConfig, PolicyTable, TrafficType};
pub use link::{FlowId, Link, LinkConfig, Segment};
pub use scenario::{run_monte_carlo, run_timeline, run_transfer, summarize, StatsSummary, Timeline, TransferConfig, TransferRecord};
pub use sim::{EventQueue, RandomStream, SimTime};
pub use transport::{CcMode, RtoMode, RtoPolicyConfig, TransportConfig};
