//! Analytic velocity fields with closed-form flow solutions, a coupled
//! video→action toy field, a latency model for end-to-end accounting, and
//! a double-integrator plant. These are the oracles the sampler and the
//! closed-loop simulator are verified against.

use crate::error::{Error, Result};
use crate::sampler::{LatentState, VelocityField};

/// Elementwise linear field `v(x) = a·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearField {
    pub a: f64,
    pub b: f64,
}

impl LinearField {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// Closed-form endpoint of `dx/dt = a·x + b` after `duration` (may be
/// negative to integrate backwards): `x₀ + b·d` when `a = 0`, otherwise
/// `e^{a·d}·x₀ + (e^{a·d} - 1)·b/a`.
pub fn exact_endpoint(field: &LinearField, x0: f64, duration: f64) -> f64 {
    if field.a == 0.0 {
        x0 + field.b * duration
    } else {
        let ead = (field.a * duration).exp();
        let em1 = (field.a * duration).exp_m1();
        ead * x0 + em1 * field.b / field.a
    }
}

/// Toy dual-modality field: linear dynamics per modality plus an additive
/// action drift mapped from the (current or frozen) video latent through a
/// coupling matrix, and optional conditioning drifts for guidance tests.
#[derive(Debug, Clone)]
pub struct CoupledField {
    pub video: LinearField,
    pub action: LinearField,
    /// `coupling[action_dim][video_dim]`; empty outer vec means zero.
    pub coupling: Vec<Vec<f64>>,
    /// Added to every video velocity component, times `cond[0]`.
    pub cond_drift_video: f64,
    /// Added to every action velocity component, times `cond[0]`.
    pub cond_drift_action: f64,
}

impl CoupledField {
    pub fn uncoupled(video: LinearField, action: LinearField) -> Self {
        Self {
            video,
            action,
            coupling: Vec::new(),
            cond_drift_video: 0.0,
            cond_drift_action: 0.0,
        }
    }

    pub fn with_coupling(
        video: LinearField,
        action: LinearField,
        coupling: Vec<Vec<f64>>,
    ) -> Self {
        Self {
            video,
            action,
            coupling,
            cond_drift_video: 0.0,
            cond_drift_action: 0.0,
        }
    }

    fn drift(&self, action_dim: usize, context: &[f64]) -> f64 {
        match self.coupling.get(action_dim) {
            Some(row) => row.iter().zip(context).map(|(c, v)| c * v).sum(),
            None => 0.0,
        }
    }

    fn cond_term(&self, gain: f64, cond: Option<&[f64]>) -> f64 {
        match cond {
            Some(c) if !c.is_empty() => gain * c[0],
            _ => 0.0,
        }
    }
}

impl VelocityField for CoupledField {
    fn eval_joint(&self, state: &LatentState, cond: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let cv = self.cond_term(self.cond_drift_video, cond);
        let ca = self.cond_term(self.cond_drift_action, cond);
        let video = state.video.iter().map(|&x| self.video.eval(x) + cv).collect();
        let action = state
            .action
            .iter()
            .enumerate()
            .map(|(j, &x)| self.action.eval(x) + self.drift(j, &state.video) + ca)
            .collect();
        (video, action)
    }

    fn freeze_context(&self, video: &[f64], _t_video: f64, _cond: Option<&[f64]>) -> Vec<f64> {
        video.to_vec()
    }

    fn eval_action_only(
        &self,
        action: &[f64],
        _t_action: f64,
        context: &[f64],
        cond: Option<&[f64]>,
    ) -> Vec<f64> {
        let ca = self.cond_term(self.cond_drift_action, cond);
        action
            .iter()
            .enumerate()
            .map(|(j, &x)| self.action.eval(x) + self.drift(j, context) + ca)
            .collect()
    }
}

/// Which execution regime the latency model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    Joint,
    V2a,
}

/// End-to-end inference latency as an affine function of denoising steps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatencyModel {
    pub per_step_ms: f64,
    pub fixed_overhead_ms: f64,
    pub steps: usize,
    pub mode: LatencyMode,
    /// Action-only suffix cost; used in [`LatencyMode::V2a`].
    pub v2a_suffix_per_step_ms: f64,
    /// Joint-prefix length in V2A mode.
    pub joint_prefix_steps: usize,
}

impl LatencyModel {
    pub fn joint(steps: usize, per_step_ms: f64, fixed_overhead_ms: f64) -> Self {
        Self {
            per_step_ms,
            fixed_overhead_ms,
            steps,
            mode: LatencyMode::Joint,
            v2a_suffix_per_step_ms: 0.0,
            joint_prefix_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_step_ms < 0.0
            || self.fixed_overhead_ms < 0.0
            || self.v2a_suffix_per_step_ms < 0.0
        {
            return Err(Error::invalid("latency parameters must be ≥ 0"));
        }
        if self.mode == LatencyMode::V2a && self.joint_prefix_steps > self.steps {
            return Err(Error::invalid(format!(
                "joint_prefix_steps {} exceeds steps {}",
                self.joint_prefix_steps, self.steps
            )));
        }
        Ok(())
    }
}

/// `(latency_seconds, frequency_hz)` of one inference call.
pub fn latency_of(model: &LatencyModel) -> (f64, f64) {
    let ms = match model.mode {
        LatencyMode::Joint => model.steps as f64 * model.per_step_ms + model.fixed_overhead_ms,
        LatencyMode::V2a => {
            model.joint_prefix_steps as f64 * model.per_step_ms
                + (model.steps - model.joint_prefix_steps) as f64 * model.v2a_suffix_per_step_ms
                + model.fixed_overhead_ms
        }
    };
    let latency = ms / 1000.0;
    let frequency = if latency > 0.0 { 1.0 / latency } else { f64::INFINITY };
    (latency, frequency)
}

/// Double-integrator plant: `velocity += action·Δt; position += velocity·Δt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPlant {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub control_period: f64,
}

impl ToyPlant {
    pub fn at_rest(dims: usize, control_period: f64) -> Self {
        Self {
            position: vec![0.0; dims],
            velocity: vec![0.0; dims],
            control_period,
        }
    }
}

pub fn plant_step(plant: &mut ToyPlant, action: &[f64]) -> Result<()> {
    if action.len() != plant.position.len() {
        return Err(Error::DimensionMismatch {
            context: "plant action",
            expected: plant.position.len(),
            got: action.len(),
        });
    }
    let dt = plant.control_period;
    for ((v, p), a) in plant
        .velocity
        .iter_mut()
        .zip(plant.position.iter_mut())
        .zip(action)
    {
        *v += a * dt;
        *p += *v * dt;
    }
    Ok(())
}
