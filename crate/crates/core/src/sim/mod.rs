//! Closed-loop simulation of the asynchronous inference/execution
//! protocol: a tick-locked executor consuming interpolated action chunks
//! while inference requests launch, complete after a modeled latency, and
//! land through fusion, smoothing, and interpolation.

pub mod bench;
pub mod engine;
pub mod metrics;
pub mod policy;
pub mod realtime;
pub mod trace;

pub use bench::{render_report, table3_report, BenchRow, PresetRow, Table3Preset};
pub use engine::{run_discrete_event, run_discrete_event_with, run_discrete_event_with_delays, DelaySource};
pub use metrics::{metrics_from_trace, Metrics};
pub use policy::{ChunkPolicy, Observation, SinePolicy};
pub use realtime::{run_real_time, run_real_time_with, RealTimeOutcome};
pub use trace::{FusionRecord, SimTrace, TraceEvent};
