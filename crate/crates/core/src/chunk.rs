//! Fixed-horizon action chunks, the unit of scheduling and fusion.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Relative end-effector actions are 3 + 6 + 1 numbers.
pub const ACTION_DIM: usize = 10;

/// An ordered sequence of 10-dim actions emitted at `model_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionChunk {
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Actions per second.
    pub model_hz: f64,
}

impl ActionChunk {
    pub fn new(actions: Vec<[f64; ACTION_DIM]>, model_hz: f64) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("action chunk must hold at least one action"));
        }
        if !(model_hz > 0.0) {
            return Err(Error::invalid(format!("model_hz must be > 0, got {model_hz}")));
        }
        if actions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("action values must be finite"));
        }
        Ok(Self { actions, model_hz })
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Remaining tail after `executed` actions; `None` once exhausted.
    pub fn remaining(&self, executed: usize) -> Option<&[[f64; ACTION_DIM]]> {
        if executed < self.actions.len() {
            Some(&self.actions[executed..])
        } else {
            None
        }
    }

    /// Structured-text record: a `model_hz` line, then one `action` line
    /// per step with 10 values.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model_hz {:.17e}", self.model_hz);
        for a in &self.actions {
            s.push_str("action");
            for v in a {
                let _ = write!(s, " {v:.17e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let mut model_hz = None;
        let mut actions = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            match it.next().unwrap_or("") {
                "model_hz" => {
                    let v = it
                        .next()
                        .ok_or_else(|| Error::Parse("model_hz line missing value".into()))?;
                    model_hz = Some(
                        v.parse::<f64>()
                            .map_err(|e| Error::Parse(format!("bad model_hz {v:?}: {e}")))?,
                    );
                }
                "action" => {
                    let vals: Vec<f64> = it
                        .map(|t| {
                            t.parse::<f64>()
                                .map_err(|e| Error::Parse(format!("bad float {t:?}: {e}")))
                        })
                        .collect::<Result<_>>()?;
                    if vals.len() != ACTION_DIM {
                        return Err(Error::DimensionMismatch {
                            context: "action line",
                            expected: ACTION_DIM,
                            got: vals.len(),
                        });
                    }
                    let mut a = [0.0; ACTION_DIM];
                    a.copy_from_slice(&vals);
                    actions.push(a);
                }
                other => {
                    return Err(Error::Parse(format!("unexpected chunk record line key {other:?}")))
                }
            }
        }
        let model_hz =
            model_hz.ok_or_else(|| Error::Parse("chunk record missing model_hz line".into()))?;
        ActionChunk::new(actions, model_hz)
    }
}
