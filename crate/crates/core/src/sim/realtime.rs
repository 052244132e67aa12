//! Wall-clock execution of the asynchronous protocol: a tick-locked
//! executor thread and one inference worker, communicating over
//! single-producer/single-consumer channels. The executor never blocks on
//! the worker.
//!
//! Every control decision (swap ticks, launch ticks, fusion parameters) is
//! computed from tick indices and measured delays with the same arithmetic
//! as the discrete-event engine, so feeding the measured delays back into
//! discrete-event mode reproduces the fusion decisions event-for-event.

use std::sync::mpsc::{self, TryRecvError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chunk::{ActionChunk, ACTION_DIM};
use crate::config::{LaunchPolicy, SimConfig};
use crate::error::{Error, Result};
use crate::fusion::{estimate_delay, DelayQueue};
use crate::sim::engine::ChunkAssembler;
use crate::sim::metrics::{metrics_from_trace, Metrics};
use crate::sim::policy::{ChunkPolicy, Observation, SinePolicy};
use crate::sim::trace::{FusionRecord, SimTrace, TraceEvent};
use crate::toy::{latency_of, plant_step, ToyPlant};

/// Result of a wall-clock run, with the extra measurements replay needs.
#[derive(Debug)]
pub struct RealTimeOutcome {
    pub trace: SimTrace,
    pub metrics: Metrics,
    /// Per-request measured delays in completion order (warmup first).
    pub measured_delays: Vec<f64>,
    /// Largest |actual wake - nominal tick| over the episode, seconds.
    pub max_tick_jitter: f64,
    /// Ticks per wall second actually achieved.
    pub wall_achieved_hz: f64,
}

struct LaunchMsg {
    request: u64,
    launch_tick: u64,
    obs: Observation,
    old_chunk: Option<(ActionChunk, u64, usize)>,
}

struct DoneMsg {
    request: u64,
    swap_tick: u64,
    measured_delay: f64,
    chunk_id: u64,
    origin_tick: u64,
    control_actions: Vec<[f64; ACTION_DIM]>,
    model_chunk: ActionChunk,
    record: Option<FusionRecord>,
}

fn ceil_tick(time: f64, control_hz: f64) -> u64 {
    (time * control_hz - 1e-9).ceil().max(0.0) as u64
}

/// Wait until `deadline` precisely: coarse sleeps down to the kernel's
/// wake-up granularity, then spin. Virtualized hosts wake sleeps ~10 ms
/// late, which a control-rate tick loop cannot absorb.
fn sleep_until(deadline: Instant) {
    const WAKE_GRANULARITY: Duration = Duration::from_millis(12);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let remaining = deadline - now;
        if remaining > WAKE_GRANULARITY {
            thread::sleep(remaining - WAKE_GRANULARITY);
        } else {
            std::hint::spin_loop();
        }
    }
}

pub fn run_real_time(cfg: &SimConfig) -> Result<RealTimeOutcome> {
    let policy = Arc::new(SinePolicy {
        model_hz: cfg.sim.model_hz,
        horizon: cfg.sim.horizon,
        params: cfg.policy,
        seed: cfg.sim.seed,
    });
    run_real_time_with(cfg, policy)
}

pub fn run_real_time_with(
    cfg: &SimConfig,
    policy: Arc<dyn ChunkPolicy + Send + Sync>,
) -> Result<RealTimeOutcome> {
    cfg.validate()?;
    let control_hz = cfg.sim.control_hz;
    let period = Duration::from_secs_f64(1.0 / control_hz);
    let total_ticks = (cfg.sim.duration * control_hz).round().max(1.0) as u64;

    let (launch_tx, launch_rx) = mpsc::channel::<LaunchMsg>();
    let (done_tx, done_rx) = mpsc::channel::<DoneMsg>();

    let worker_cfg = cfg.clone();
    let worker_policy = Arc::clone(&policy);
    let worker = thread::spawn(move || {
        worker_loop(&worker_cfg, worker_policy.as_ref(), launch_rx, done_tx);
    });

    let mut trace = SimTrace::default();
    let mut plant = ToyPlant::at_rest(ACTION_DIM, 1.0 / control_hz);
    let mut next_request: u64 = 0;
    let mut last_action = [0.0; ACTION_DIM];
    let mut last_launch_time = 0.0f64;
    let mut measured_delays = Vec::new();
    let mut max_tick_jitter = 0.0f64;

    // Warmup: block for the first chunk before the tick clock starts.
    let obs0 = Observation {
        time: 0.0,
        plant_position: plant.position.clone(),
        plant_velocity: plant.velocity.clone(),
    };
    launch_tx
        .send(LaunchMsg {
            request: next_request,
            launch_tick: 0,
            obs: obs0,
            old_chunk: None,
        })
        .map_err(|_| Error::invalid("worker gone before warmup"))?;
    let first = done_rx
        .recv()
        .map_err(|_| Error::invalid("worker died during warmup"))?;
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
        measured_delay: first.measured_delay,
    });
    trace.events.push(TraceEvent::Swap {
        request: next_request,
        tick: 0,
        time: 0.0,
        old_chunk: None,
        new_chunk: first.chunk_id,
    });
    measured_delays.push(first.measured_delay);
    let mut active_id = first.chunk_id;
    let mut active_origin: u64 = 0;
    let mut active_control = first.control_actions;
    let mut active_model = first.model_chunk;
    next_request += 1;

    let mut pending: Option<DoneMsg> = None;
    let mut in_flight = false;
    let mut worker_dead = false;
    let start = Instant::now();
    let mut first_wake: Option<Instant> = None;
    let mut last_wake = start;

    for tick in 0..total_ticks {
        let nominal = start + period * (tick as u32);
        sleep_until(nominal);
        let wake = Instant::now();
        first_wake.get_or_insert(wake);
        last_wake = wake;
        max_tick_jitter = max_tick_jitter.max((wake - nominal).as_secs_f64());
        let now = tick as f64 / control_hz;

        // poll the worker without blocking
        if pending.is_none() && !worker_dead {
            match done_rx.try_recv() {
                Ok(msg) => {
                    in_flight = false;
                    pending = Some(msg);
                }
                Err(TryRecvError::Empty) => {}
                Err(TryRecvError::Disconnected) => {
                    worker_dead = true;
                    trace.truncated = true;
                }
            }
        }

        // apply a due swap
        if pending.as_ref().is_some_and(|p| p.swap_tick <= tick) {
            let p = pending.take().unwrap();
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
                old_chunk: Some(active_id),
                new_chunk: p.chunk_id,
            });
            measured_delays.push(p.measured_delay);
            active_id = p.chunk_id;
            active_origin = p.origin_tick;
            active_control = p.control_actions;
            active_model = p.model_chunk;
        }

        // launch when the worker is idle
        let launch_due = match cfg.sim.launch_policy {
            LaunchPolicy::MaxRate => true,
            LaunchPolicy::FixedPeriod => now >= last_launch_time + cfg.sim.launch_period - 1e-9,
        };
        if !in_flight && pending.is_none() && !worker_dead && launch_due {
            let s_ctrl = tick - active_origin;
            let executed_model_steps =
                (s_ctrl as f64 * cfg.sim.model_hz / control_hz + 1e-9).floor() as usize;
            trace.events.push(TraceEvent::Launch {
                request: next_request,
                tick,
                time: now,
                old_chunk: Some(active_id),
                executed_model_steps,
            });
            last_launch_time = now;
            let msg = LaunchMsg {
                request: next_request,
                launch_tick: tick,
                obs: Observation {
                    time: now,
                    plant_position: plant.position.clone(),
                    plant_velocity: plant.velocity.clone(),
                },
                old_chunk: Some((active_model.clone(), active_id, executed_model_steps)),
            };
            if launch_tx.send(msg).is_err() {
                worker_dead = true;
                trace.truncated = true;
            } else {
                in_flight = true;
            }
            next_request += 1;
        }

        // execute one action; the tick loop never waits on the worker
        let ctrl_index = (tick - active_origin) as usize;
        let action = if ctrl_index < active_control.len() {
            active_control[ctrl_index]
        } else {
            trace.events.push(TraceEvent::Stall {
                tick,
                time: now,
                chunk: active_id,
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
            chunk: active_id,
            ctrl_index: ctrl_index.min(active_control.len().saturating_sub(1)),
            tracking_error,
            action,
        });
        last_action = action;
    }

    drop(launch_tx);
    let _ = worker.join();

    let metrics = metrics_from_trace(&trace);
    let wall_achieved_hz = match first_wake {
        Some(first) if total_ticks > 1 => {
            (total_ticks - 1) as f64 / (last_wake - first).as_secs_f64()
        }
        _ => 0.0,
    };
    Ok(RealTimeOutcome {
        trace,
        metrics,
        measured_delays,
        max_tick_jitter,
        wall_achieved_hz,
    })
}

fn worker_loop(
    cfg: &SimConfig,
    policy: &(dyn ChunkPolicy + Send + Sync),
    launch_rx: mpsc::Receiver<LaunchMsg>,
    done_tx: mpsc::Sender<DoneMsg>,
) {
    let control_hz = cfg.sim.control_hz;
    let assembler = ChunkAssembler {
        fusion_enabled: cfg.fusion.enabled,
        fusion_cfg: cfg.fusion_config(),
        model_hz: cfg.sim.model_hz,
        control_hz,
        savgol: cfg.smoothing.enabled.then(|| cfg.savgol()),
        order: cfg.sim.pipeline_order,
    };
    let mut queue = match DelayQueue::new(cfg.fusion.queue_capacity, cfg.worst_case_delay()) {
        Ok(q) => q,
        Err(_) => return,
    };
    let (base_latency, _) = latency_of(&cfg.latency_model());
    let jitter = cfg.latency.jitter_ms / 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed ^ 0x6c6174656e6379);
    let mut next_chunk_id: u64 = 1;

    while let Ok(msg) = launch_rx.recv() {
        let started = Instant::now();
        let estimate = if msg.old_chunk.is_some() {
            estimate_delay(&queue)
        } else {
            0.0
        };
        let fresh = policy.generate(msg.request, &msg.obs);
        // simulate the DiT denoising cost; a coarse sleep is fine because
        // the measured delay captures whatever the kernel actually gave us
        let target = base_latency + rng.gen::<f64>() * jitter;
        thread::sleep(Duration::from_secs_f64(target));
        let assembled = match assembler.assemble(
            msg.request,
            next_chunk_id,
            fresh,
            msg.old_chunk.as_ref().map(|(c, id, s)| (c, *id, *s)),
            estimate,
        ) {
            Ok(a) => a,
            Err(_) => return,
        };
        // end-to-end: denoising plus fusion/smoothing/interpolation
        let measured_delay = started.elapsed().as_secs_f64();
        let launch_time = msg.launch_tick as f64 / control_hz;
        let completion_time = launch_time + measured_delay;
        let swap_tick =
            (ceil_tick(completion_time, control_hz) + 1).max(msg.launch_tick + 1);
        if queue.push(measured_delay).is_err() {
            return;
        }
        let done = DoneMsg {
            request: msg.request,
            swap_tick: if msg.old_chunk.is_none() { 0 } else { swap_tick },
            measured_delay,
            chunk_id: next_chunk_id,
            origin_tick: msg.launch_tick,
            control_actions: assembled.control_actions,
            model_chunk: assembled.model_chunk,
            record: assembled.record,
        };
        next_chunk_id += 1;
        if done_tx.send(done).is_err() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::engine::run_discrete_event_with_delays;

    // two concurrent tick loops starve each other on single-core hosts
    static ONE_AT_A_TIME: std::sync::Mutex<()> = std::sync::Mutex::new(());

    fn rt_cfg(duration: f64) -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.sim.duration = duration;
        cfg.sim.seed = 17;
        cfg.latency.jitter_ms = 20.0;
        cfg
    }

    #[test]
    fn real_time_replay_matches_discrete_event() {
        let _lock = ONE_AT_A_TIME.lock().unwrap_or_else(|e| e.into_inner());
        let cfg = rt_cfg(2.0);
        let outcome = run_real_time(&cfg).unwrap();
        assert!(!outcome.trace.truncated);
        outcome.trace.check_invariants().unwrap();
        let (replay, _) = run_discrete_event_with_delays(&cfg, &outcome.measured_delays).unwrap();
        let rt_records: Vec<_> = outcome.trace.fusion_records().cloned().collect();
        let de_records: Vec<_> = replay.fusion_records().cloned().collect();
        assert_eq!(rt_records, de_records);
        assert!(outcome.max_tick_jitter < 1.0 / cfg.sim.control_hz);
    }

    #[test]
    fn worker_panic_shuts_down_with_partial_trace() {
        struct Panicker;
        impl ChunkPolicy for Panicker {
            fn generate(&self, request: u64, _obs: &Observation) -> ActionChunk {
                if request >= 3 {
                    panic!("injected failure");
                }
                ActionChunk::new(vec![[0.01; ACTION_DIM]; 16], 10.0).unwrap()
            }
        }
        let _lock = ONE_AT_A_TIME.lock().unwrap_or_else(|e| e.into_inner());
        let cfg = rt_cfg(2.0);
        let outcome = run_real_time_with(&cfg, Arc::new(Panicker)).unwrap();
        assert!(outcome.trace.truncated);
        assert!(outcome.metrics.ticks > 0);
    }
}
