//! Deterministic discrete-event simulation of the asynchronous
//! inference/execution protocol.
//!
//! All control decisions are quantized to executor ticks, so the engine is
//! a pure function of the config and the per-request delay sequence. The
//! wall-clock runner reuses the same arithmetic, which is what makes its
//! fusion decisions replayable here event-for-event.
//!
//! Per-tick order: apply a due swap (completion, fusion, swap events),
//! launch a request if the worker is idle, then execute one action.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::chunk::{ActionChunk, ACTION_DIM};
use crate::config::{LaunchPolicy, PipelineOrder, SimConfig};
use crate::error::Result;
use crate::fusion::{
    estimate_delay, fuse_chunks, fusion_weights, steps_of_delay, DelayQueue, FusionConfig,
};
use crate::sim::metrics::{metrics_from_trace, Metrics};
use crate::sim::policy::{ChunkPolicy, Observation, SinePolicy};
use crate::sim::trace::{FusionRecord, SimTrace, TraceEvent};
use crate::smooth::{freq_interpolate, smooth_chunk, SavGolConfig};
use crate::toy::{latency_of, plant_step, ToyPlant};

/// Where per-request inference delays come from.
pub enum DelaySource {
    /// Latency model plus seeded uniform jitter.
    Drawn { base: f64, jitter: f64, rng: ChaCha8Rng },
    /// Replay of measured delays; exhausting the list leaves the final
    /// request dangling in flight, like a run cut off mid-inference.
    Injected { delays: Vec<f64>, next: usize },
}

impl DelaySource {
    pub fn drawn(cfg: &SimConfig) -> Self {
        let (latency, _) = latency_of(&cfg.latency_model());
        DelaySource::Drawn {
            base: latency,
            jitter: cfg.latency.jitter_ms / 1000.0,
            // separate stream from the policy so replay stays aligned
            rng: ChaCha8Rng::seed_from_u64(cfg.sim.seed ^ 0x6c6174656e6379),
        }
    }

    fn next(&mut self) -> Option<f64> {
        match self {
            DelaySource::Drawn { base, jitter, rng } => {
                Some(*base + rng.gen::<f64>() * *jitter)
            }
            DelaySource::Injected { delays, next } => {
                let v = delays.get(*next).copied();
                *next += 1;
                v
            }
        }
    }
}

/// Builds the executable control chunk out of a fresh model chunk:
/// fusion against the old chunk's tail, smoothing, interpolation.
pub(crate) struct ChunkAssembler {
    pub fusion_enabled: bool,
    pub fusion_cfg: FusionConfig,
    pub model_hz: f64,
    pub control_hz: f64,
    pub savgol: Option<SavGolConfig>,
    pub order: PipelineOrder,
}

pub(crate) struct AssembledChunk {
    /// Model-rate chunk later fusions blend against.
    pub model_chunk: ActionChunk,
    pub control_actions: Vec<[f64; ACTION_DIM]>,
    pub record: Option<FusionRecord>,
}

impl ChunkAssembler {
    pub fn assemble(
        &self,
        request: u64,
        new_chunk_id: u64,
        fresh: ActionChunk,
        old: Option<(&ActionChunk, u64, usize)>,
        estimated_delay: f64,
    ) -> Result<AssembledChunk> {
        let fresh = match (self.order, &self.savgol) {
            (PipelineOrder::SmoothFirst, Some(cfg)) => smooth_chunk(&fresh, cfg)?.0,
            _ => fresh,
        };
        let horizon = fresh.horizon();
        let mut record = None;
        let fused = match old {
            Some((old_chunk, old_id, executed))
                if self.fusion_enabled && executed < old_chunk.horizon() =>
            {
                let remain = &old_chunk.actions[executed..];
                let model_period = 1.0 / self.model_hz;
                let d = steps_of_delay(estimated_delay, model_period)?.min(horizon);
                let fusion_end = self.fusion_cfg.fusion_end(d, horizon);
                let mut weights = fusion_weights(d, fusion_end, horizon)?;
                // no overlap past the old chunk's tail
                for w in weights.iter_mut().skip(remain.len()) {
                    *w = 0.0;
                }
                let fused = fuse_chunks(remain, &fresh, &weights)?;
                record = Some(FusionRecord {
                    request,
                    old_chunk: old_id,
                    new_chunk: new_chunk_id,
                    executed,
                    frozen_steps: d,
                    fusion_end,
                    weights,
                });
                fused
            }
            _ => fresh,
        };
        let executed_chunk = match (self.order, &self.savgol) {
            (PipelineOrder::FuseFirst, Some(cfg)) => smooth_chunk(&fused, cfg)?.0,
            _ => fused.clone(),
        };
        let control_actions = freq_interpolate(&executed_chunk, self.control_hz)?.actions;
        Ok(AssembledChunk {
            model_chunk: fused,
            control_actions,
            record,
        })
    }
}

struct ActiveChunk {
    id: u64,
    origin_tick: u64,
    control_actions: Vec<[f64; ACTION_DIM]>,
    model_chunk: ActionChunk,
}

struct PendingSwap {
    request: u64,
    swap_tick: u64,
    measured_delay: f64,
    chunk: ActiveChunk,
    record: Option<FusionRecord>,
}

/// Smallest tick index whose time is at or after `time` (1e-9 guard).
fn ceil_tick(time: f64, control_hz: f64) -> u64 {
    (time * control_hz - 1e-9).ceil().max(0.0) as u64
}

fn tick_time(tick: u64, control_hz: f64) -> f64 {
    tick as f64 / control_hz
}

/// Run the virtual-clock simulation with delays drawn from the config's
/// latency model.
pub fn run_discrete_event(cfg: &SimConfig) -> Result<(SimTrace, Metrics)> {
    let policy = SinePolicy {
        model_hz: cfg.sim.model_hz,
        horizon: cfg.sim.horizon,
        params: cfg.policy,
        seed: cfg.sim.seed,
    };
    run_discrete_event_with(cfg, &policy, DelaySource::drawn(cfg))
}

/// Replay: run the virtual-clock simulation against measured delays.
pub fn run_discrete_event_with_delays(
    cfg: &SimConfig,
    delays: &[f64],
) -> Result<(SimTrace, Metrics)> {
    let policy = SinePolicy {
        model_hz: cfg.sim.model_hz,
        horizon: cfg.sim.horizon,
        params: cfg.policy,
        seed: cfg.sim.seed,
    };
    run_discrete_event_with(
        cfg,
        &policy,
        DelaySource::Injected {
            delays: delays.to_vec(),
            next: 0,
        },
    )
}

/// Discrete-event core with an explicit policy and delay source.
pub fn run_discrete_event_with(
    cfg: &SimConfig,
    policy: &dyn ChunkPolicy,
    mut delays: DelaySource,
) -> Result<(SimTrace, Metrics)> {
    cfg.validate()?;
    let control_hz = cfg.sim.control_hz;
    let total_ticks = (cfg.sim.duration * control_hz).round().max(1.0) as u64;
    let assembler = ChunkAssembler {
        fusion_enabled: cfg.fusion.enabled,
        fusion_cfg: cfg.fusion_config(),
        model_hz: cfg.sim.model_hz,
        control_hz,
        savgol: cfg.smoothing.enabled.then(|| cfg.savgol()),
        order: cfg.sim.pipeline_order,
    };
    let mut queue = DelayQueue::new(cfg.fusion.queue_capacity, cfg.worst_case_delay())?;
    let mut plant = ToyPlant::at_rest(ACTION_DIM, 1.0 / control_hz);
    let mut trace = SimTrace::default();
    let mut next_chunk_id: u64 = 1;
    let mut next_request: u64 = 0;
    let mut last_action = [0.0; ACTION_DIM];
    let mut last_launch_time = 0.0f64;
    let mut pending: Option<PendingSwap> = None;
    let mut worker_lost = false; // injected delays exhausted mid-flight

    // Warmup request: the first chunk is produced before the tick clock
    // starts, so the first delay estimate is the first measured latency.
    let obs0 = Observation {
        time: 0.0,
        plant_position: plant.position.clone(),
        plant_velocity: plant.velocity.clone(),
    };
    let delta0 = delays.next().ok_or_else(|| {
        crate::error::Error::invalid("replay delay list is empty; need at least the warmup delay")
    })?;
    let fresh0 = policy.generate(next_request, &obs0);
    let assembled0 = assembler.assemble(next_request, next_chunk_id, fresh0, None, 0.0)?;
    trace.events.push(TraceEvent::Launch {
        request: next_request,
        tick: 0,
        time: 0.0,
        old_chunk: None,
        executed_model_steps: 0,
    });
    trace.events.push(TraceEvent::Complete {
        request: next_request,
        swap_tick: 0,
        time: 0.0,
        measured_delay: delta0,
    });
    trace.events.push(TraceEvent::Swap {
        request: next_request,
        tick: 0,
        time: 0.0,
        old_chunk: None,
        new_chunk: next_chunk_id,
    });
    queue.push(delta0)?;
    let mut active = ActiveChunk {
        id: next_chunk_id,
        origin_tick: 0,
        control_actions: assembled0.control_actions,
        model_chunk: assembled0.model_chunk,
    };
    next_chunk_id += 1;
    next_request += 1;

    for tick in 0..total_ticks {
        let now = tick_time(tick, control_hz);

        // 1. apply a due swap
        if pending.as_ref().is_some_and(|p| p.swap_tick <= tick) {
            let p = pending.take().unwrap();
            // recorded at the processing tick; the finish instant itself
            // is the launch time plus the measured delay
            trace.events.push(TraceEvent::Complete {
                request: p.request,
                swap_tick: p.swap_tick,
                time: now,
                measured_delay: p.measured_delay,
            });
            if let Some(record) = p.record {
                trace.events.push(TraceEvent::Fuse(record));
            }
            trace.events.push(TraceEvent::Swap {
                request: p.request,
                tick,
                time: now,
                old_chunk: Some(active.id),
                new_chunk: p.chunk.id,
            });
            queue.push(p.measured_delay)?;
            active = p.chunk;
        }

        // 2. launch when the worker is idle
        let launch_due = match cfg.sim.launch_policy {
            LaunchPolicy::MaxRate => true,
            LaunchPolicy::FixedPeriod => now >= last_launch_time + cfg.sim.launch_period - 1e-9,
        };
        if pending.is_none() && !worker_lost && launch_due {
            let s_ctrl = tick - active.origin_tick;
            let executed_model_steps =
                (s_ctrl as f64 * cfg.sim.model_hz / control_hz + 1e-9).floor() as usize;
            trace.events.push(TraceEvent::Launch {
                request: next_request,
                tick,
                time: now,
                old_chunk: Some(active.id),
                executed_model_steps,
            });
            last_launch_time = now;
            match delays.next() {
                None => worker_lost = true,
                Some(delta) => {
                    let obs = Observation {
                        time: now,
                        plant_position: plant.position.clone(),
                        plant_velocity: plant.velocity.clone(),
                    };
                    let estimate = estimate_delay(&queue);
                    let fresh = policy.generate(next_request, &obs);
                    let assembled = assembler.assemble(
                        next_request,
                        next_chunk_id,
                        fresh,
                        Some((&active.model_chunk, active.id, executed_model_steps)),
                        estimate,
                    )?;
                    let completion_time = now + delta;
                    // one tick of margin past completion so the wall-clock
                    // runner can use the identical rule without racing the
                    // publish against the executor's poll
                    let swap_tick = (ceil_tick(completion_time, control_hz) + 1).max(tick + 1);
                    pending = Some(PendingSwap {
                        request: next_request,
                        swap_tick,
                        measured_delay: delta,
                        chunk: ActiveChunk {
                            id: next_chunk_id,
                            origin_tick: tick,
                            control_actions: assembled.control_actions,
                            model_chunk: assembled.model_chunk,
                        },
                        record: assembled.record,
                    });
                    next_chunk_id += 1;
                }
            }
            next_request += 1;
        }

        // 3. execute one action
        let ctrl_index = (tick - active.origin_tick) as usize;
        let action = if ctrl_index < active.control_actions.len() {
            active.control_actions[ctrl_index]
        } else {
            trace.events.push(TraceEvent::Stall {
                tick,
                time: now,
                chunk: active.id,
            });
            last_action
        };
        plant_step(&mut plant, &action)?;
        let tracking_error = match policy.reference(now) {
            Some(reference) => plant
                .position
                .iter()
                .zip(&reference)
                .map(|(p, r)| (p - r) * (p - r))
                .sum::<f64>()
                .sqrt(),
            None => 0.0,
        };
        trace.events.push(TraceEvent::Tick {
            tick,
            time: now,
            chunk: active.id,
            ctrl_index: ctrl_index.min(active.control_actions.len().saturating_sub(1)),
            tracking_error,
            action,
        });
        last_action = action;
    }

    let metrics = metrics_from_trace(&trace);
    Ok((trace, metrics))
}
