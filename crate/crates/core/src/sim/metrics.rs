//! Episode metrics, derived purely from the trace so a saved trace
//! reproduces the live values exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::trace::{SimTrace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub ticks: u64,
    pub swaps: u64,
    pub stall_count: u64,
    /// Largest ‖a_t - a_{t-1}‖₂ across a chunk swap.
    pub max_boundary_jump: f64,
    pub mean_boundary_jump: f64,
    /// Mean ‖a_t - a_{t-1}‖₂ between consecutive same-chunk actions.
    pub mean_intra_chunk_jump: f64,
    pub achieved_control_hz: f64,
    pub tracking_error_mean: f64,
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn metrics_from_trace(trace: &SimTrace) -> Metrics {
    let mut m = Metrics::default();
    let mut prev_tick: Option<(u64, [f64; 10])> = None;
    let mut boundary_sum = 0.0;
    let mut boundary_n = 0u64;
    let mut intra_sum = 0.0;
    let mut intra_n = 0u64;
    let mut err_sum = 0.0;
    let mut first_time = None;
    let mut last_time = 0.0;
    for event in &trace.events {
        match event {
            TraceEvent::Tick {
                time,
                chunk,
                tracking_error,
                action,
                ..
            } => {
                m.ticks += 1;
                err_sum += tracking_error;
                first_time.get_or_insert(*time);
                last_time = *time;
                if let Some((prev_chunk, prev_action)) = &prev_tick {
                    let jump = norm_diff(action, prev_action);
                    if *prev_chunk != *chunk {
                        m.max_boundary_jump = m.max_boundary_jump.max(jump);
                        boundary_sum += jump;
                        boundary_n += 1;
                    } else {
                        intra_sum += jump;
                        intra_n += 1;
                    }
                }
                prev_tick = Some((*chunk, *action));
            }
            TraceEvent::Stall { .. } => m.stall_count += 1,
            TraceEvent::Swap { .. } => m.swaps += 1,
            _ => {}
        }
    }
    if boundary_n > 0 {
        m.mean_boundary_jump = boundary_sum / boundary_n as f64;
    }
    if intra_n > 0 {
        m.mean_intra_chunk_jump = intra_sum / intra_n as f64;
    }
    if m.ticks > 0 {
        m.tracking_error_mean = err_sum / m.ticks as f64;
    }
    if let Some(first) = first_time {
        if m.ticks > 1 && last_time > first {
            m.achieved_control_hz = (m.ticks - 1) as f64 / (last_time - first);
        }
    }
    m
}

impl Metrics {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(s, "{name},{v:.17e}");
        };
        row("ticks", self.ticks as f64);
        row("swaps", self.swaps as f64);
        row("stall_count", self.stall_count as f64);
        row("max_boundary_jump", self.max_boundary_jump);
        row("mean_boundary_jump", self.mean_boundary_jump);
        row("mean_intra_chunk_jump", self.mean_intra_chunk_jump);
        row("achieved_control_hz", self.achieved_control_hz);
        row("tracking_error_mean", self.tracking_error_mean);
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut m = Metrics::default();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (name, value) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("bad metrics line: {line}")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad metrics value: {line}")))?;
            match name.trim() {
                "ticks" => m.ticks = v as u64,
                "swaps" => m.swaps = v as u64,
                "stall_count" => m.stall_count = v as u64,
                "max_boundary_jump" => m.max_boundary_jump = v,
                "mean_boundary_jump" => m.mean_boundary_jump = v,
                "mean_intra_chunk_jump" => m.mean_intra_chunk_jump = v,
                "achieved_control_hz" => m.achieved_control_hz = v,
                "tracking_error_mean" => m.tracking_error_mean = v,
                other => return Err(Error::Parse(format!("unknown metric {other:?}"))),
            }
        }
        Ok(m)
    }
}
