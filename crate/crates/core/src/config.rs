//! Simulator configuration: flat key-value sections per subsystem, read
//! and written as TOML. Every field has a default so a minimal file works;
//! `sim --print-config` dumps the full default set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::sampler::SamplerConfig;
use crate::smooth::SavGolConfig;
use crate::toy::{LatencyMode, LatencyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    DiscreteEvent,
    RealTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaunchPolicy {
    /// A new request starts at the tick the previous one's chunk lands.
    MaxRate,
    /// Requests start at most once per `launch_period` seconds.
    FixedPeriod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineOrder {
    /// Fuse the raw chunks, then smooth, then interpolate (default).
    FuseFirst,
    /// Smooth the fresh chunk first, then fuse, then interpolate.
    SmoothFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub control_hz: f64,
    pub model_hz: f64,
    /// Chunk horizon in model actions.
    pub horizon: usize,
    /// Episode length, seconds.
    pub duration: f64,
    pub seed: u64,
    pub mode: SimMode,
    pub launch_policy: LaunchPolicy,
    /// Seconds; only read under `launch_policy = "fixed_period"`.
    pub launch_period: f64,
    pub pipeline_order: PipelineOrder,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            control_hz: 50.0,
            model_hz: 10.0,
            horizon: 16,
            duration: 10.0,
            seed: 0,
            mode: SimMode::DiscreteEvent,
            launch_policy: LaunchPolicy::MaxRate,
            launch_period: 0.2,
            pipeline_order: PipelineOrder::FuseFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionSection {
    pub enabled: bool,
    pub overlap_window: usize,
    pub queue_capacity: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            overlap_window: 8,
            queue_capacity: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingSection {
    pub enabled: bool,
    pub window: usize,
    pub polyorder: usize,
}

impl Default for SmoothingSection {
    fn default() -> Self {
        let savgol = SavGolConfig::default();
        Self {
            enabled: true,
            window: savgol.window,
            polyorder: savgol.polyorder,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencySection {
    pub per_step_ms: f64,
    pub fixed_overhead_ms: f64,
    pub steps: usize,
    pub mode: LatencyMode,
    pub v2a_suffix_per_step_ms: f64,
    pub joint_prefix_steps: usize,
    /// Uniform random extra delay in `[0, jitter_ms]`, seeded.
    pub jitter_ms: f64,
}

impl Default for LatencySection {
    fn default() -> Self {
        // A V2A-like deployment point: ~90 ms per call plus jitter.
        Self {
            per_step_ms: 2.9,
            fixed_overhead_ms: 3.0,
            steps: 30,
            mode: LatencyMode::Joint,
            v2a_suffix_per_step_ms: 0.0,
            joint_prefix_steps: 0,
            jitter_ms: 30.0,
        }
    }
}

/// Parameters of the toy tracking policy that stands in for the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySection {
    /// Std-dev of the per-chunk constant offset noise.
    pub noise_sigma: f64,
    /// Reference sinusoid amplitude.
    pub amplitude: f64,
    /// Base reference frequency, Hz (per-dim multiples).
    pub base_freq: f64,
    /// Proportional feedback gain toward the reference.
    pub feedback_gain: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            noise_sigma: 0.2,
            amplitude: 0.5,
            base_freq: 0.15,
            feedback_gain: 1.0,
        }
    }
}

/// Sampler section of the config file; `seed` drives latent-noise
/// construction in the CLI demo paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSection {
    #[serde(flatten)]
    pub config: SamplerConfig,
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            config: SamplerConfig::default(),
            seed: 0,
        }
    }
}

/// Full simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimConfig {
    pub sim: SimSection,
    pub fusion: FusionSection,
    pub smoothing: SmoothingSection,
    pub sampler: SamplerSection,
    pub latency: LatencySection,
    pub policy: PolicySection,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            per_step_ms: self.latency.per_step_ms,
            fixed_overhead_ms: self.latency.fixed_overhead_ms,
            steps: self.latency.steps,
            mode: self.latency.mode,
            v2a_suffix_per_step_ms: self.latency.v2a_suffix_per_step_ms,
            joint_prefix_steps: self.latency.joint_prefix_steps,
        }
    }

    pub fn savgol(&self) -> SavGolConfig {
        SavGolConfig {
            window: self.smoothing.window,
            polyorder: self.smoothing.polyorder,
        }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig {
            overlap_window: self.fusion.overlap_window,
            control_period: 1.0 / self.sim.control_hz,
        }
    }

    /// Worst-case inference delay the latency section can produce.
    pub fn worst_case_delay(&self) -> f64 {
        let (latency, _) = crate::toy::latency_of(&self.latency_model());
        latency + self.latency.jitter_ms / 1000.0
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.model_hz > 0.0) || s.control_hz < s.model_hz {
            return Err(Error::InvalidConfig(format!(
                "need control_hz ≥ model_hz > 0, got control_hz={}, model_hz={}",
                s.control_hz, s.model_hz
            )));
        }
        if s.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be ≥ 1".into()));
        }
        if !(s.duration > 0.0) {
            return Err(Error::InvalidConfig("duration must be > 0".into()));
        }
        if s.launch_policy == LaunchPolicy::FixedPeriod && !(s.launch_period > 0.0) {
            return Err(Error::InvalidConfig("launch_period must be > 0".into()));
        }
        if self.smoothing.enabled {
            self.savgol()
                .validate()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        self.sampler
            .config
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.latency_model()
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.fusion.queue_capacity == 0 {
            return Err(Error::InvalidConfig("queue_capacity must be ≥ 1".into()));
        }
        if self.latency.jitter_ms < 0.0 {
            return Err(Error::InvalidConfig("jitter_ms must be ≥ 0".into()));
        }
        // The horizon must cover the frozen prefix of a request launched
        // one realized delay into the active chunk.
        let worst = self.worst_case_delay();
        let worst_steps = (worst * s.model_hz).ceil() as usize;
        if 2 * worst_steps > s.horizon {
            return Err(Error::InvalidConfig(format!(
                "horizon {} model steps ({:.3} s at {} Hz) is shorter than twice the \
                 worst-case inference delay ({} steps = 2·⌈{:.3} s · {} Hz⌉); \
                 increase horizon or reduce latency/jitter",
                s.horizon,
                s.horizon as f64 / s.model_hz,
                s.model_hz,
                2 * worst_steps,
                worst,
                s.model_hz
            )));
        }
        Ok(())
    }
}
