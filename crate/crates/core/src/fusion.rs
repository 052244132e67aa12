//! Asynchronous chunk fusion: delay estimation, frozen prefix, and
//! decay-weighted blending of the unexecuted old chunk with a fresh one.
//!
//! While an inference request runs, the executor keeps consuming the old
//! chunk; the first `d` steps of the new chunk (the estimated delay in
//! action steps) are therefore fully constrained to the old actions, the
//! following window decays smoothly from old to new, and everything past
//! the fusion end `L` is taken from the new chunk untouched.

use std::collections::VecDeque;

use crate::chunk::{ActionChunk, ACTION_DIM};
use crate::error::{Error, Result};

/// Bounded FIFO of recent inference delays (seconds).
#[derive(Debug, Clone)]
pub struct DelayQueue {
    delays: VecDeque<f64>,
    capacity: usize,
    cold_start: f64,
}

impl DelayQueue {
    /// `cold_start` is returned by [`estimate_delay`] while the queue is
    /// still empty (typically one full inference latency).
    pub fn new(capacity: usize, cold_start: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("delay queue capacity must be positive"));
        }
        if !(cold_start >= 0.0) {
            return Err(Error::invalid("cold-start delay must be ≥ 0"));
        }
        Ok(Self {
            delays: VecDeque::with_capacity(capacity),
            capacity,
            cold_start,
        })
    }

    pub fn push(&mut self, delay: f64) -> Result<()> {
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(Error::invalid(format!("delay must be ≥ 0, got {delay}")));
        }
        if self.delays.len() == self.capacity {
            self.delays.pop_front();
        }
        self.delays.push_back(delay);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.delays.iter()
    }
}

/// Conservative delay estimate for the next request: `max(Q)`, or the
/// configured cold-start value while the queue is empty.
pub fn estimate_delay(queue: &DelayQueue) -> f64 {
    queue
        .delays
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(if queue.delays.is_empty() {
            queue.cold_start
        } else {
            f64::NEG_INFINITY
        })
}

/// Fusion-window parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FusionConfig {
    /// Soft-constraint window length past the frozen prefix; the fusion
    /// end is `L = d + min(H - d, overlap_window)`.
    pub overlap_window: usize,
    /// Executor period Δt, seconds.
    pub control_period: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            overlap_window: 8,
            control_period: 0.02,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_period > 0.0) {
            return Err(Error::invalid("control_period must be > 0"));
        }
        Ok(())
    }

    /// Fusion end for a given frozen prefix and horizon. A zero delay
    /// trusts the fresh chunk fully (L = 0, weights all zero); otherwise
    /// `L = d + min(H - d, overlap_window)`.
    pub fn fusion_end(&self, d: usize, horizon: usize) -> usize {
        if d == 0 {
            0
        } else {
            d + (horizon.saturating_sub(d)).min(self.overlap_window)
        }
    }
}

/// Executor-side view of the chunk currently being consumed.
#[derive(Debug, Clone)]
pub struct ExecutionState {
    pub active_chunk: ActionChunk,
    pub executed_count: usize,
}

impl ExecutionState {
    pub fn new(active_chunk: ActionChunk) -> Self {
        Self {
            active_chunk,
            executed_count: 0,
        }
    }

    /// Unexecuted tail of the active chunk.
    pub fn remaining(&self) -> &[[f64; ACTION_DIM]] {
        &self.active_chunk.actions[self.executed_count.min(self.active_chunk.horizon())..]
    }

    pub fn advance(&mut self) -> Result<()> {
        if self.executed_count >= self.active_chunk.horizon() {
            return Err(Error::invalid("chunk already exhausted"));
        }
        self.executed_count += 1;
        Ok(())
    }
}

/// Inference delay measured in action steps: `d = ⌈δ/Δt⌉`, with a 1e-9
/// relative guard so exact multiples do not round up from float noise.
pub fn steps_of_delay(delta: f64, control_period: f64) -> Result<usize> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delay must be ≥ 0, got {delta}")));
    }
    if !(control_period > 0.0) {
        return Err(Error::invalid("control period must be > 0"));
    }
    let d = (delta / control_period - 1e-9).ceil();
    Ok(d.max(0.0) as usize)
}

/// Exponential decay `g(ρ) = ρ(e^ρ - 1)/(e - 1)`, increasing from 0 to 1.
pub fn decay_g(rho: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("ρ must be in [0, 1], got {rho}")));
    }
    Ok(rho * rho.exp_m1() / 1f64.exp_m1())
}

/// Piecewise fusion weights over the new chunk's indices:
/// 1 on `[0, d)`, `1 - g((i-d)/(L-d))` on `[d, L)`, 0 on `[L, horizon)`.
pub fn fusion_weights(d: usize, fusion_end: usize, horizon: usize) -> Result<Vec<f64>> {
    if d > fusion_end || fusion_end > horizon {
        return Err(Error::invalid(format!(
            "need d ≤ L ≤ horizon, got d={d}, L={fusion_end}, horizon={horizon}"
        )));
    }
    let mut weights = Vec::with_capacity(horizon);
    for i in 0..horizon {
        let w = if i < d {
            1.0
        } else if i < fusion_end {
            let rho = (i - d) as f64 / (fusion_end - d) as f64;
            1.0 - decay_g(rho)?
        } else {
            0.0
        };
        weights.push(w);
    }
    Ok(weights)
}

/// `ã_i = w_i · remain_i + (1 - w_i) · fresh_i`, component-wise over all
/// 10 dims. Weight 1 copies the old action bit-for-bit, weight 0 the new.
///
/// `remain` is the old chunk's tail aligned so its index 0 matches the new
/// chunk's index 0; any index with nonzero weight must still be covered.
pub fn fuse_chunks(
    remain: &[[f64; ACTION_DIM]],
    fresh: &ActionChunk,
    weights: &[f64],
) -> Result<ActionChunk> {
    if weights.len() != fresh.horizon() {
        return Err(Error::DimensionMismatch {
            context: "fusion weights vs fresh chunk",
            expected: fresh.horizon(),
            got: weights.len(),
        });
    }
    let mut out = Vec::with_capacity(fresh.horizon());
    for (i, (fresh_a, &w)) in fresh.actions.iter().zip(weights.iter()).enumerate() {
        if w != 0.0 && i >= remain.len() {
            return Err(Error::invalid(format!(
                "weight {w} at index {i} but only {} old actions remain",
                remain.len()
            )));
        }
        let a = if w == 0.0 {
            *fresh_a
        } else if w == 1.0 {
            remain[i]
        } else {
            let old = &remain[i];
            std::array::from_fn(|d| w * old[d] + (1.0 - w) * fresh_a[d])
        };
        out.push(a);
    }
    ActionChunk::new(out, fresh.model_hz)
}
