//! Simulation traces: one event per line, fixed field order, decimal
//! floats. Metrics are recomputable from a parsed trace alone.

use std::fmt::Write as _;

use crate::chunk::ACTION_DIM;
use crate::error::{Error, Result};

/// Fusion bookkeeping for one completed inference request.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRecord {
    pub request: u64,
    pub old_chunk: u64,
    pub new_chunk: u64,
    /// Model actions executed from the old chunk at launch (s).
    pub executed: usize,
    /// Frozen prefix length in model steps (d).
    pub frozen_steps: usize,
    /// Fusion end (L).
    pub fusion_end: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    /// One executor tick: the action consumed and the plant tracking error.
    Tick {
        tick: u64,
        time: f64,
        chunk: u64,
        ctrl_index: usize,
        tracking_error: f64,
        action: [f64; ACTION_DIM],
    },
    /// Chunk exhausted before a replacement landed; last action held.
    Stall { tick: u64, time: f64, chunk: u64 },
    Launch {
        request: u64,
        tick: u64,
        time: f64,
        old_chunk: Option<u64>,
        executed_model_steps: usize,
    },
    Complete {
        request: u64,
        swap_tick: u64,
        time: f64,
        measured_delay: f64,
    },
    Fuse(FusionRecord),
    Swap {
        request: u64,
        tick: u64,
        time: f64,
        old_chunk: Option<u64>,
        new_chunk: u64,
    },
}

impl TraceEvent {
    pub fn time(&self) -> f64 {
        match self {
            TraceEvent::Tick { time, .. }
            | TraceEvent::Stall { time, .. }
            | TraceEvent::Launch { time, .. }
            | TraceEvent::Complete { time, .. }
            | TraceEvent::Swap { time, .. } => *time,
            TraceEvent::Fuse(_) => f64::NEG_INFINITY, // carries no clock
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
    /// Present when the run ended early (e.g. worker panic).
    pub truncated: bool,
}

fn push_f(line: &mut String, v: f64) {
    let _ = write!(line, " {v:.17e}");
}

fn opt_chunk(c: Option<u64>) -> String {
    match c {
        Some(id) => id.to_string(),
        None => "-".to_string(),
    }
}

impl SimTrace {
    pub fn fusion_records(&self) -> impl Iterator<Item = &FusionRecord> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Fuse(r) => Some(r),
            _ => None,
        })
    }

    pub fn measured_delays(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Complete { measured_delay, .. } => Some(*measured_delay),
                _ => None,
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if self.truncated {
            out.push_str("truncated\n");
        }
        for event in &self.events {
            let mut line = String::new();
            match event {
                TraceEvent::Tick {
                    tick,
                    time,
                    chunk,
                    ctrl_index,
                    tracking_error,
                    action,
                } => {
                    let _ = write!(line, "tick {tick}");
                    push_f(&mut line, *time);
                    let _ = write!(line, " {chunk} {ctrl_index}");
                    push_f(&mut line, *tracking_error);
                    for a in action {
                        push_f(&mut line, *a);
                    }
                }
                TraceEvent::Stall { tick, time, chunk } => {
                    let _ = write!(line, "stall {tick}");
                    push_f(&mut line, *time);
                    let _ = write!(line, " {chunk}");
                }
                TraceEvent::Launch {
                    request,
                    tick,
                    time,
                    old_chunk,
                    executed_model_steps,
                } => {
                    let _ = write!(line, "launch {request} {tick}");
                    push_f(&mut line, *time);
                    let _ = write!(line, " {} {executed_model_steps}", opt_chunk(*old_chunk));
                }
                TraceEvent::Complete {
                    request,
                    swap_tick,
                    time,
                    measured_delay,
                } => {
                    let _ = write!(line, "complete {request} {swap_tick}");
                    push_f(&mut line, *time);
                    push_f(&mut line, *measured_delay);
                }
                TraceEvent::Fuse(r) => {
                    let _ = write!(
                        line,
                        "fuse {} {} {} {} {} {} {}",
                        r.request,
                        r.old_chunk,
                        r.new_chunk,
                        r.executed,
                        r.frozen_steps,
                        r.fusion_end,
                        r.weights.len()
                    );
                    for w in &r.weights {
                        push_f(&mut line, *w);
                    }
                }
                TraceEvent::Swap {
                    request,
                    tick,
                    time,
                    old_chunk,
                    new_chunk,
                } => {
                    let _ = write!(line, "swap {request} {tick}");
                    push_f(&mut line, *time);
                    let _ = write!(line, " {} {new_chunk}", opt_chunk(*old_chunk));
                }
            }
            line.push('\n');
            out.push_str(&line);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut trace = SimTrace::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "truncated" {
                trace.truncated = true;
                continue;
            }
            let mut it = line.split_whitespace();
            let kind = it.next().unwrap_or("");
            let rest: Vec<&str> = it.collect();
            let bad = || Error::Parse(format!("bad trace line: {line}"));
            let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let u = |s: &str| s.parse::<u64>().map_err(|_| bad());
            let us = |s: &str| s.parse::<usize>().map_err(|_| bad());
            let chunk_opt = |s: &str| -> Result<Option<u64>> {
                if s == "-" {
                    Ok(None)
                } else {
                    Ok(Some(s.parse::<u64>().map_err(|_| bad())?))
                }
            };
            let event = match kind {
                "tick" => {
                    if rest.len() != 5 + ACTION_DIM {
                        return Err(bad());
                    }
                    let mut action = [0.0; ACTION_DIM];
                    for (a, s) in action.iter_mut().zip(&rest[5..]) {
                        *a = f(s)?;
                    }
                    TraceEvent::Tick {
                        tick: u(rest[0])?,
                        time: f(rest[1])?,
                        chunk: u(rest[2])?,
                        ctrl_index: us(rest[3])?,
                        tracking_error: f(rest[4])?,
                        action,
                    }
                }
                "stall" => {
                    if rest.len() != 3 {
                        return Err(bad());
                    }
                    TraceEvent::Stall {
                        tick: u(rest[0])?,
                        time: f(rest[1])?,
                        chunk: u(rest[2])?,
                    }
                }
                "launch" => {
                    if rest.len() != 5 {
                        return Err(bad());
                    }
                    TraceEvent::Launch {
                        request: u(rest[0])?,
                        tick: u(rest[1])?,
                        time: f(rest[2])?,
                        old_chunk: chunk_opt(rest[3])?,
                        executed_model_steps: us(rest[4])?,
                    }
                }
                "complete" => {
                    if rest.len() != 4 {
                        return Err(bad());
                    }
                    TraceEvent::Complete {
                        request: u(rest[0])?,
                        swap_tick: u(rest[1])?,
                        time: f(rest[2])?,
                        measured_delay: f(rest[3])?,
                    }
                }
                "fuse" => {
                    if rest.len() < 7 {
                        return Err(bad());
                    }
                    let n = us(rest[6])?;
                    if rest.len() != 7 + n {
                        return Err(bad());
                    }
                    TraceEvent::Fuse(FusionRecord {
                        request: u(rest[0])?,
                        old_chunk: u(rest[1])?,
                        new_chunk: u(rest[2])?,
                        executed: us(rest[3])?,
                        frozen_steps: us(rest[4])?,
                        fusion_end: us(rest[5])?,
                        weights: rest[7..].iter().map(|s| f(s)).collect::<Result<_>>()?,
                    })
                }
                "swap" => {
                    if rest.len() != 5 {
                        return Err(bad());
                    }
                    TraceEvent::Swap {
                        request: u(rest[0])?,
                        tick: u(rest[1])?,
                        time: f(rest[2])?,
                        old_chunk: chunk_opt(rest[3])?,
                        new_chunk: u(rest[4])?,
                    }
                }
                _ => return Err(bad()),
            };
            trace.events.push(event);
        }
        Ok(trace)
    }

    /// Event times are nondecreasing and every fusion record references a
    /// completed request.
    pub fn check_invariants(&self) -> Result<()> {
        let mut last = f64::NEG_INFINITY;
        let mut completed = std::collections::HashSet::new();
        for event in &self.events {
            if let TraceEvent::Complete { request, .. } = event {
                completed.insert(*request);
            }
            if let TraceEvent::Fuse(r) = event {
                if !completed.contains(&r.request) {
                    return Err(Error::invalid(format!(
                        "fusion record for request {} before its completion",
                        r.request
                    )));
                }
            }
            let t = event.time();
            if t.is_finite() {
                if t < last - 1e-12 {
                    return Err(Error::invalid(format!(
                        "event times decreased: {last} -> {t}"
                    )));
                }
                last = t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_text_roundtrip() {
        let trace = SimTrace {
            events: vec![
                TraceEvent::Launch {
                    request: 0,
                    tick: 0,
                    time: 0.0,
                    old_chunk: None,
                    executed_model_steps: 0,
                },
                TraceEvent::Complete {
                    request: 0,
                    swap_tick: 0,
                    time: 0.0,
                    measured_delay: 0.091,
                },
                TraceEvent::Fuse(FusionRecord {
                    request: 0,
                    old_chunk: 1,
                    new_chunk: 2,
                    executed: 1,
                    frozen_steps: 1,
                    fusion_end: 9,
                    weights: vec![1.0, 0.5, 0.0],
                }),
                TraceEvent::Swap {
                    request: 0,
                    tick: 0,
                    time: 0.0,
                    old_chunk: Some(1),
                    new_chunk: 2,
                },
                TraceEvent::Tick {
                    tick: 0,
                    time: 0.0,
                    chunk: 2,
                    ctrl_index: 0,
                    tracking_error: 0.25,
                    action: [0.5; ACTION_DIM],
                },
                TraceEvent::Stall {
                    tick: 1,
                    time: 0.02,
                    chunk: 2,
                },
            ],
            truncated: false,
        };
        let text = trace.to_text();
        let back = SimTrace::from_text(&text).unwrap();
        assert_eq!(trace, back);
        trace.check_invariants().unwrap();
    }

    #[test]
    fn invariants_catch_unordered_and_orphan_fuse() {
        let bad_order = SimTrace {
            events: vec![
                TraceEvent::Stall { tick: 1, time: 1.0, chunk: 1 },
                TraceEvent::Stall { tick: 0, time: 0.5, chunk: 1 },
            ],
            truncated: false,
        };
        assert!(bad_order.check_invariants().is_err());

        let orphan = SimTrace {
            events: vec![TraceEvent::Fuse(FusionRecord {
                request: 3,
                old_chunk: 1,
                new_chunk: 2,
                executed: 0,
                frozen_steps: 0,
                fusion_end: 0,
                weights: vec![],
            })],
            truncated: false,
        };
        assert!(orphan.check_invariants().is_err());
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(SimTrace::from_text("tick 0\n").is_err());
        assert!(SimTrace::from_text("nonsense 1 2 3\n").is_err());
        assert!(SimTrace::from_text("fuse 0 1 2 0 0 0 2 1.0\n").is_err());
    }
}
