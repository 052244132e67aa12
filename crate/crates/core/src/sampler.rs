//! Flow-matching sampling over the dual-modality latent state.
//!
//! Video and action latents carry independent timesteps; each modality
//! integrates the rectified-flow ODE `dx/dt = v(x, t)` from `t = 1` (noise)
//! to `t = 0` (data) with Euler steps on its own timeshifted grid. The
//! video-to-action schedule runs a short joint prefix, freezes the video
//! latent and its context once, and finishes with action-only steps.
//! Consecutive velocity predictions that stay nearly parallel can be
//! cached: when the cosine similarity of two real evaluations exceeds γ,
//! the next `k` evaluations reuse the last prediction.

use rand::Rng;

use crate::error::{Error, Result};

/// Per-modality noisy latents with independent diffusion timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub video: Vec<f64>,
    pub action: Vec<f64>,
    pub t_video: f64,
    pub t_action: f64,
}

impl LatentState {
    /// A pure-noise state at `t = 1` for both modalities.
    pub fn noise(video: Vec<f64>, action: Vec<f64>) -> Self {
        Self {
            video,
            action,
            t_video: 1.0,
            t_action: 1.0,
        }
    }
}

/// Which modality classifier-free guidance extrapolates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CfgTarget {
    Video,
    Action,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    #[serde(rename = "steps")]
    pub total_steps: usize,
    /// Joint denoising steps before the video latent freezes.
    #[serde(rename = "joint_prefix")]
    pub joint_prefix_n: usize,
    /// Cosine-similarity gate for the velocity cache.
    #[serde(rename = "gamma")]
    pub cache_threshold_gamma: f64,
    /// Evaluations skipped after the gate fires.
    #[serde(rename = "cache_k")]
    pub cache_length_k: usize,
    pub timeshift_video: f64,
    pub timeshift_action: f64,
    pub cfg_scale: f64,
    pub cfg_target: CfgTarget,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total_steps: 30,
            joint_prefix_n: 5,
            cache_threshold_gamma: 2.0, // gate disabled unless lowered
            cache_length_k: 0,
            timeshift_video: 6.0,
            timeshift_action: 1.0,
            cfg_scale: 1.0,
            cfg_target: CfgTarget::Video,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::invalid("total_steps must be ≥ 1"));
        }
        if self.joint_prefix_n > self.total_steps {
            return Err(Error::invalid(format!(
                "joint_prefix {} exceeds total_steps {}",
                self.joint_prefix_n, self.total_steps
            )));
        }
        if !(self.timeshift_video > 0.0) || !(self.timeshift_action > 0.0) {
            return Err(Error::invalid("timeshifts must be > 0"));
        }
        if !self.cfg_scale.is_finite() || !self.cache_threshold_gamma.is_finite() {
            return Err(Error::invalid("cfg_scale and gamma must be finite"));
        }
        Ok(())
    }
}

/// A deterministic velocity field over the dual-modality state.
///
/// `cond` is an opaque conditioning vector; `None` is the unconditional
/// branch used by classifier-free guidance.
pub trait VelocityField {
    /// Joint velocities `(v_video, v_action)` at the given state.
    fn eval_joint(&self, state: &LatentState, cond: Option<&[f64]>) -> (Vec<f64>, Vec<f64>);

    /// Build the reusable visual-language context from a frozen video
    /// latent. Called once when the action-only suffix starts.
    fn freeze_context(&self, video: &[f64], t_video: f64, cond: Option<&[f64]>) -> Vec<f64>;

    /// Action velocity against a frozen context.
    fn eval_action_only(
        &self,
        action: &[f64],
        t_action: f64,
        context: &[f64],
        cond: Option<&[f64]>,
    ) -> Vec<f64>;
}

/// SNR timeshift `t' = s·t / (1 + (s-1)·t)`: fixes 0 and 1, monotone,
/// biases sampling toward `t = 1` for `s > 1`.
pub fn timeshift_map(t: f64, shift: f64) -> Result<f64> {
    if !(shift > 0.0) {
        return Err(Error::invalid(format!("shift must be > 0, got {shift}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t must be in [0, 1], got {t}")));
    }
    // the clamp absorbs float rounding at the upper fixed point
    Ok((shift * t / (1.0 + (shift - 1.0) * t)).clamp(0.0, 1.0))
}

/// Descending timestep grid `t_0 = 1 > … > t_steps = 0` on the shifted
/// schedule; length `steps + 1`.
pub fn shifted_schedule(steps: usize, shift: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    (0..=steps)
        .map(|i| timeshift_map((steps - i) as f64 / steps as f64, shift))
        .collect()
}

/// Independent per-modality training timesteps: uniform draws pushed
/// through each modality's timeshift.
pub fn sample_train_timesteps(rng: &mut impl Rng, cfg: &SamplerConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let u_video: f64 = rng.gen();
    let u_action: f64 = rng.gen();
    Ok((
        timeshift_map(u_video, cfg.timeshift_video)?,
        timeshift_map(u_action, cfg.timeshift_action)?,
    ))
}

/// Cosine similarity, with zero-norm inputs defined as 0 so a degenerate
/// prediction can never fire the cache gate. The flag reports degeneracy.
pub fn cosine_similarity_flagged(a: &[f64], b: &[f64]) -> (f64, bool) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return (0.0, true);
    }
    ((dot / (na * nb)).clamp(-1.0, 1.0), false)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine_similarity_flagged(a, b).0
}

/// Classifier-free guidance: `v_uncond + scale · (v_cond - v_uncond)`.
pub fn cfg_combine(v_uncond: &[f64], v_cond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if v_uncond.len() != v_cond.len() {
        return Err(Error::DimensionMismatch {
            context: "cfg_combine",
            expected: v_uncond.len(),
            got: v_cond.len(),
        });
    }
    Ok(v_uncond
        .iter()
        .zip(v_cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect())
}

/// Velocity-cache state; reset at the start of every inference call.
#[derive(Debug, Clone, Default)]
pub struct CacheState {
    pub last_velocity: Option<Vec<f64>>,
    pub skips_remaining: usize,
    /// Real model evaluations performed.
    pub eval_count: usize,
}

impl CacheState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.last_velocity = None;
        self.skips_remaining = 0;
    }
}

/// Core cache step: reuse the last velocity while skips remain, otherwise
/// evaluate for real, then arm exactly `k` skips when two consecutive real
/// predictions have cosine similarity above `gamma`.
pub fn cached_eval(
    cache: &mut CacheState,
    gamma: f64,
    k: usize,
    eval: impl FnOnce() -> Vec<f64>,
) -> Vec<f64> {
    if cache.skips_remaining > 0 {
        cache.skips_remaining -= 1;
        return cache
            .last_velocity
            .clone()
            .expect("skips armed without a stored velocity");
    }
    let v = eval();
    cache.eval_count += 1;
    if k > 0 {
        if let Some(prev) = &cache.last_velocity {
            let (sim, _) = cosine_similarity_flagged(&v, prev);
            if sim > gamma {
                cache.skips_remaining = k;
            }
        }
    }
    cache.last_velocity = Some(v.clone());
    v
}

/// Weighted flow-matching objective `λ_v·MSE(video) + λ_a·MSE(action)`.
pub fn flow_loss(
    pred_video: &[f64],
    target_video: &[f64],
    pred_action: &[f64],
    target_action: &[f64],
    lambda_video: f64,
    lambda_action: f64,
) -> Result<f64> {
    fn mse(pred: &[f64], target: &[f64], ctx: &'static str) -> Result<f64> {
        if pred.len() != target.len() {
            return Err(Error::DimensionMismatch {
                context: ctx,
                expected: target.len(),
                got: pred.len(),
            });
        }
        if pred.is_empty() {
            return Ok(0.0);
        }
        Ok(pred
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pred.len() as f64)
    }
    Ok(lambda_video * mse(pred_video, target_video, "flow_loss video")?
        + lambda_action * mse(pred_action, target_action, "flow_loss action")?)
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; keeps the dependency set small.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Conditioned-frame augmentation: with probability `p` return
/// `s·z₀ + (1-s)·ε` with `s ~ U[0.3, 0.7]` and `ε ~ N(0, I)`, otherwise
/// the input unchanged.
pub fn noisy_condition_augment(z0: &[f64], rng: &mut impl Rng, p: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must be in [0, 1], got {p}")));
    }
    if rng.gen::<f64>() >= p {
        return Ok(z0.to_vec());
    }
    let s: f64 = rng.gen_range(0.3..0.7);
    Ok(z0
        .iter()
        .map(|z| s * z + (1.0 - s) * standard_normal(rng))
        .collect())
}

/// Keep the primary view (index 0) always; drop each auxiliary view
/// independently with probability `p`.
pub fn view_dropout<T: Copy>(views: &[T], rng: &mut impl Rng, p: f64) -> Result<Vec<T>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("p must be in [0, 1], got {p}")));
    }
    let mut kept = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        if i == 0 || rng.gen::<f64>() >= p {
            kept.push(*v);
        }
    }
    Ok(kept)
}

/// Experimental per-denoising-step soft constraint: after every
/// action-only update, blend the action latent toward `target` with
/// per-element `weights` (1 pins the element, 0 leaves it free).
#[derive(Debug, Clone)]
pub struct SoftConstraint {
    pub target: Vec<f64>,
    pub weights: Vec<f64>,
}

fn eval_joint_with_cfg<M: VelocityField>(
    model: &M,
    state: &LatentState,
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let guided = cond.is_some() && cfg.cfg_scale != 1.0;
    if !guided {
        return Ok(model.eval_joint(state, cond));
    }
    let (cv, ca) = model.eval_joint(state, cond);
    let (uv, ua) = model.eval_joint(state, None);
    let video = match cfg.cfg_target {
        CfgTarget::Video | CfgTarget::Both => cfg_combine(&uv, &cv, cfg.cfg_scale)?,
        CfgTarget::Action => cv,
    };
    let action = match cfg.cfg_target {
        CfgTarget::Action | CfgTarget::Both => cfg_combine(&ua, &ca, cfg.cfg_scale)?,
        CfgTarget::Video => ca,
    };
    Ok((video, action))
}

fn eval_action_with_cfg<M: VelocityField>(
    model: &M,
    action: &[f64],
    t_action: f64,
    context: &[f64],
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let guided = cond.is_some()
        && cfg.cfg_scale != 1.0
        && matches!(cfg.cfg_target, CfgTarget::Action | CfgTarget::Both);
    let c = model.eval_action_only(action, t_action, context, cond);
    if !guided {
        return Ok(c);
    }
    let u = model.eval_action_only(action, t_action, context, None);
    cfg_combine(&u, &c, cfg.cfg_scale)
}

/// One joint Euler step at schedule index `i`; the cache gates on the
/// concatenated (video‖action) velocity.
fn joint_step<M: VelocityField>(
    model: &M,
    state: &mut LatentState,
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
    cache: &mut CacheState,
    sched_video: &[f64],
    sched_action: &[f64],
    i: usize,
) -> Result<()> {
    state.t_video = sched_video[i];
    state.t_action = sched_action[i];
    let n_video = state.video.len();
    let mut err = None;
    let concat = cached_eval(cache, cfg.cache_threshold_gamma, cfg.cache_length_k, || {
        match eval_joint_with_cfg(model, state, cfg, cond) {
            Ok((mut v, a)) => {
                v.extend(a);
                v
            }
            Err(e) => {
                err = Some(e);
                Vec::new()
            }
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    let dt_video = sched_video[i + 1] - sched_video[i];
    let dt_action = sched_action[i + 1] - sched_action[i];
    for (x, v) in state.video.iter_mut().zip(&concat[..n_video]) {
        *x += v * dt_video;
    }
    for (x, v) in state.action.iter_mut().zip(&concat[n_video..]) {
        *x += v * dt_action;
    }
    state.t_video = sched_video[i + 1];
    state.t_action = sched_action[i + 1];
    Ok(())
}

/// Euler-integrate both modalities over all steps from `t=1` to `t=0`.
///
/// Returns the final state and the cache used (for evaluation counting).
pub fn sample_joint<M: VelocityField>(
    model: &M,
    init: &LatentState,
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
) -> Result<(LatentState, CacheState)> {
    cfg.validate()?;
    let sched_video = shifted_schedule(cfg.total_steps, cfg.timeshift_video)?;
    let sched_action = shifted_schedule(cfg.total_steps, cfg.timeshift_action)?;
    let mut state = init.clone();
    let mut cache = CacheState::new();
    for i in 0..cfg.total_steps {
        joint_step(
            model,
            &mut state,
            cfg,
            cond,
            &mut cache,
            &sched_video,
            &sched_action,
            i,
        )?;
    }
    Ok((state, cache))
}

/// Joint prefix of `joint_prefix_n` steps, then an action-only suffix
/// against the video context frozen at step N.
pub fn sample_v2a<M: VelocityField>(
    model: &M,
    init: &LatentState,
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
) -> Result<(LatentState, CacheState)> {
    sample_v2a_constrained(model, init, cfg, cond, None)
}

/// [`sample_v2a`] with the experimental per-step soft constraint applied
/// to the action latent during the suffix.
pub fn sample_v2a_constrained<M: VelocityField>(
    model: &M,
    init: &LatentState,
    cfg: &SamplerConfig,
    cond: Option<&[f64]>,
    constraint: Option<&SoftConstraint>,
) -> Result<(LatentState, CacheState)> {
    cfg.validate()?;
    let n = cfg.joint_prefix_n;
    let sched_video = shifted_schedule(cfg.total_steps, cfg.timeshift_video)?;
    let sched_action = shifted_schedule(cfg.total_steps, cfg.timeshift_action)?;
    let mut state = init.clone();
    let mut cache = CacheState::new();
    for i in 0..n {
        joint_step(
            model,
            &mut state,
            cfg,
            cond,
            &mut cache,
            &sched_video,
            &sched_action,
            i,
        )?;
    }
    if n == cfg.total_steps {
        return Ok((state, cache));
    }

    // Video freezes at z_v^(N); the visual-language context is built once.
    let context = model.freeze_context(&state.video, sched_video[n], cond);
    // The cached velocity changes dimensionality at the mode switch.
    cache.reset();
    if let Some(c) = constraint {
        if c.target.len() != state.action.len() || c.weights.len() != state.action.len() {
            return Err(Error::DimensionMismatch {
                context: "soft constraint",
                expected: state.action.len(),
                got: c.target.len().max(c.weights.len()),
            });
        }
    }
    for i in n..cfg.total_steps {
        state.t_action = sched_action[i];
        let mut err = None;
        let velocity = cached_eval(&mut cache, cfg.cache_threshold_gamma, cfg.cache_length_k, || {
            match eval_action_with_cfg(model, &state.action, state.t_action, &context, cfg, cond) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    Vec::new()
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let dt = sched_action[i + 1] - sched_action[i];
        for (x, v) in state.action.iter_mut().zip(&velocity) {
            *x += v * dt;
        }
        if let Some(c) = constraint {
            for ((x, t), w) in state.action.iter_mut().zip(&c.target).zip(&c.weights) {
                *x = w * t + (1.0 - w) * *x;
            }
        }
        state.t_action = sched_action[i + 1];
    }
    Ok((state, cache))
}
