//! Euler–Maruyama particle dynamics for the three flows:
//!
//! * ULA:     x ← x + η ḡ(x) + √(2η) ε
//! * SGLD:    x ← x + η g_ξ(x) + √(2η) ε
//! * SVRG-LD: x ← x + η (g_ξ(x) − g_ξ(x₀) + ḡ(x₀)) + √(2η) ε
//!
//! where gⱼ = ∇log μⱼ, ḡ = ∇log μ and x₀ is the particle's own anchor from
//! the start of the current epoch.
//!
//! Every particle owns a noise stream keyed by `(seed, 2p)`; per-particle
//! index draws use `(seed, 2p + 1)` and the shared index uses a dedicated
//! stream. Updates fan out over particles with rayon and are bitwise
//! independent of the thread count.
//!
//! Gradient cost is counted in component-gradient evaluations per particle:
//! a full aggregate score costs N, a single component score costs 1.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_oracle::GaussianState;
use crate::numerics::{cholesky, RngStream};
use crate::targets::FiniteSumTarget;

const SHARED_INDEX_STREAM: u64 = u64::MAX;
const MIN_PARTICLES_PER_TASK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ula,
    Sgld,
    SvrgLd,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ula, Method::Sgld, Method::SvrgLd];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ula => "ula",
            Method::Sgld => "sgld",
            Method::SvrgLd => "svrg",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label.to_ascii_lowercase().as_str() {
            "ula" | "gd" | "langevin" => Some(Method::Ula),
            "sgld" | "sgd" => Some(Method::Sgld),
            "svrg" | "svrg_ld" | "svrg-ld" => Some(Method::SvrgLd),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// How the component index ξ is drawn for SGLD and SVRG-LD steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum IndexMode {
    /// One index per step for the whole ensemble.
    #[default]
    Shared,
    /// An independent index for every particle.
    PerParticle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// η = 1 / (γ T^α); `horizon` defaults to the run length.
    Schedule {
        alpha: f64,
        gamma: f64,
        horizon: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum NoiseMode {
    #[default]
    Gaussian,
    /// ε ≡ 0; leaves only the drift, for hand-checkable updates.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub method: Method,
    pub step_size: StepSize,
    pub total_steps: u64,
    /// SVRG epoch length; `None` means ⌈η^{-3/2}⌉.
    pub epoch_steps: Option<u64>,
    pub particles: usize,
    pub seed: u64,
    pub index_mode: IndexMode,
    pub checkpoint_every: u64,
    pub noise: NoiseMode,
}

impl SamplerConfig {
    pub fn new(method: Method, eta: f64, total_steps: u64) -> Self {
        Self {
            method,
            step_size: StepSize::Fixed(eta),
            total_steps,
            epoch_steps: None,
            particles: 1000,
            seed: 0,
            index_mode: IndexMode::Shared,
            checkpoint_every: default_checkpoint_every(total_steps),
            noise: NoiseMode::Gaussian,
        }
    }

    pub fn with_particles(mut self, particles: usize) -> Self {
        self.particles = particles;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_index_mode(mut self, mode: IndexMode) -> Self {
        self.index_mode = mode;
        self
    }

    pub fn with_checkpoint_every(mut self, every: u64) -> Self {
        self.checkpoint_every = every;
        self
    }

    pub fn with_epoch_steps(mut self, steps: u64) -> Self {
        self.epoch_steps = Some(steps);
        self
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        make_eta(self)?;
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be at least 1".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        if self.epoch_steps == Some(0) {
            return Err(Error::InvalidConfig("epoch_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective SVRG epoch length.
    pub fn epoch_len(&self) -> Result<u64> {
        match self.epoch_steps {
            Some(m) => Ok(m),
            None => Ok(default_epoch_steps(make_eta(self)?)),
        }
    }
}

/// ⌈steps / 50⌉, at least 1.
pub fn default_checkpoint_every(total_steps: u64) -> u64 {
    total_steps.div_ceil(50).max(1)
}

/// ⌈η^{-3/2}⌉, so one epoch spans Δ = M η ≈ 1/√η of flow time.
pub fn default_epoch_steps(eta: f64) -> u64 {
    (eta.powf(-1.5).ceil() as u64).max(1)
}

/// Resolves the step size of `cfg`.
pub fn make_eta(cfg: &SamplerConfig) -> Result<f64> {
    match cfg.step_size {
        StepSize::Fixed(eta) => {
            if eta > 0.0 && eta.is_finite() {
                Ok(eta)
            } else {
                Err(Error::InvalidConfig(format!("step size must be positive, got {eta}")))
            }
        }
        StepSize::Schedule {
            alpha,
            gamma,
            horizon,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidSchedule(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            if !(gamma > 0.0) || !gamma.is_finite() {
                return Err(Error::InvalidSchedule(format!("gamma must be positive, got {gamma}")));
            }
            let horizon = horizon.unwrap_or(cfg.total_steps);
            if horizon == 0 {
                return Err(Error::InvalidSchedule("schedule horizon must be at least 1".into()));
            }
            Ok(1.0 / (gamma * (horizon as f64).powf(alpha)))
        }
    }
}

/// M particles in ℝᵈ, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    states: Vec<f64>,
    step_count: u64,
    grad_evals: f64,
}

impl ParticleEnsemble {
    pub fn from_states(states: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || states.is_empty() || !states.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: states.len(),
            });
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial particle state".into()));
        }
        Ok(Self {
            dim,
            states,
            step_count: 0,
            grad_evals: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.states[p * self.dim..(p + 1) * self.dim]
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Component-gradient evaluations per particle so far.
    pub fn grad_evals(&self) -> f64 {
        self.grad_evals
    }

    fn finish_step(&mut self, cost: f64) -> Result<()> {
        self.step_count += 1;
        self.grad_evals += cost;
        if self.states.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("particle state after step {}", self.step_count)));
        }
        Ok(())
    }
}

/// Random streams driving one ensemble.
#[derive(Debug, Clone)]
pub struct EnsembleRng {
    noise: Vec<RngStream>,
    index: Vec<RngStream>,
    shared_index: RngStream,
    zero_noise: bool,
}

impl EnsembleRng {
    pub fn new(seed: u64, particles: usize) -> Self {
        Self {
            noise: (0..particles as u64).map(|p| RngStream::new(seed, 2 * p)).collect(),
            index: (0..particles as u64).map(|p| RngStream::new(seed, 2 * p + 1)).collect(),
            shared_index: RngStream::new(seed, SHARED_INDEX_STREAM),
            zero_noise: false,
        }
    }

    pub fn with_noise(mut self, noise: NoiseMode) -> Self {
        self.zero_noise = noise == NoiseMode::Zero;
        self
    }

    pub fn particles(&self) -> usize {
        self.noise.len()
    }
}

/// Draws M i.i.d. particles from N(init_mean, init_cov) on per-particle
/// streams. A zero covariance places every particle at `init_mean`.
pub fn init_ensemble(cfg: &SamplerConfig, init: &GaussianState) -> Result<(ParticleEnsemble, EnsembleRng)> {
    cfg.validate()?;
    let d = init.dim();
    let mut rng = EnsembleRng::new(cfg.seed, cfg.particles).with_noise(cfg.noise);
    let factor = if init.cov.is_zero() {
        None
    } else {
        Some(cholesky(&init.cov)?)
    };
    let mut states = vec![0.0; cfg.particles * d];
    states
        .par_chunks_mut(d)
        .zip(rng.noise.par_iter_mut())
        .with_min_len(MIN_PARTICLES_PER_TASK)
        .for_each_init(
            || vec![0.0; d],
            |z, (x, stream)| {
                match &factor {
                    Some(l) => {
                        stream.fill_standard_normal(z);
                        l.mul_lower(z, x);
                    }
                    None => x.iter_mut().for_each(|v| *v = 0.0),
                }
                x.iter_mut().zip(&init.mean).for_each(|(v, m)| *v += m);
            },
        );
    let ensemble = ParticleEnsemble::from_states(states, d)?;
    Ok((ensemble, rng))
}

fn check_step(e: &ParticleEnsemble, t: &FiniteSumTarget, eta: f64, rng: &EnsembleRng) -> Result<()> {
    if e.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: e.dim(),
        });
    }
    if rng.particles() != e.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            got: rng.particles(),
        });
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {eta}")));
    }
    Ok(())
}

struct Scratch {
    drift: Vec<f64>,
    tmp: Vec<f64>,
    noise: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            drift: vec![0.0; d],
            tmp: vec![0.0; d],
            noise: vec![0.0; d],
        }
    }
}

/// Applies x ← x + η·drift(p, x) + √(2η)ε to every particle in parallel.
/// `drift` receives the particle index, its state, its index stream and
/// scratch space, and must fill `scratch.drift`.
fn update_particles<F>(e: &mut ParticleEnsemble, rng: &mut EnsembleRng, eta: f64, drift: F)
where
    F: Fn(usize, &[f64], &mut RngStream, &mut Scratch) + Sync,
{
    let d = e.dim;
    let noise_scale = (2.0 * eta).sqrt();
    let zero_noise = rng.zero_noise;
    e.states
        .par_chunks_mut(d)
        .zip(rng.noise.par_iter_mut().zip(rng.index.par_iter_mut()))
        .enumerate()
        .with_min_len(MIN_PARTICLES_PER_TASK)
        .for_each_init(
            || Scratch::new(d),
            |scratch, (p, (x, (noise_stream, index_stream)))| {
                drift(p, x, index_stream, scratch);
                if zero_noise {
                    scratch.noise.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    noise_stream.fill_standard_normal(&mut scratch.noise);
                }
                for k in 0..d {
                    x[k] += eta * scratch.drift[k] + noise_scale * scratch.noise[k];
                }
            },
        );
}

/// Draws the step's shared index from the dedicated stream, before fan-out.
fn shared_index(mode: IndexMode, rng: &mut EnsembleRng, n: usize) -> Option<usize> {
    match mode {
        IndexMode::Shared => Some(rng.shared_index.uniform_index(n)),
        IndexMode::PerParticle => None,
    }
}

/// One ULA step; costs N per particle.
pub fn ula_step(e: &mut ParticleEnsemble, t: &FiniteSumTarget, eta: f64, rng: &mut EnsembleRng) -> Result<()> {
    check_step(e, t, eta, rng)?;
    update_particles(e, rng, eta, |_, x, _, s| t.aggregate_score_into(x, &mut s.drift));
    e.finish_step(t.len() as f64)
}

/// One SGLD step; costs 1 per particle.
pub fn sgld_step(
    e: &mut ParticleEnsemble,
    t: &FiniteSumTarget,
    eta: f64,
    mode: IndexMode,
    rng: &mut EnsembleRng,
) -> Result<()> {
    check_step(e, t, eta, rng)?;
    let n = t.len();
    let shared = shared_index(mode, rng, n);
    update_particles(e, rng, eta, |_, x, index_stream, s| {
        let j = shared.unwrap_or_else(|| index_stream.uniform_index(n));
        t.component_score_into(j, x, &mut s.drift);
    });
    e.finish_step(1.0)
}

/// Per-particle anchors x₀ and cached full scores ḡ(x₀) for one SVRG epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgAnchor {
    dim: usize,
    anchor_states: Vec<f64>,
    anchor_full_grads: Vec<f64>,
    anchored_at: u64,
    epoch_steps: u64,
}

impl SvrgAnchor {
    pub fn anchor_state(&self, p: usize) -> &[f64] {
        &self.anchor_states[p * self.dim..(p + 1) * self.dim]
    }

    pub fn anchor_full_grad(&self, p: usize) -> &[f64] {
        &self.anchor_full_grads[p * self.dim..(p + 1) * self.dim]
    }

    /// Ensemble step count when the anchor was taken.
    pub fn anchored_at(&self) -> u64 {
        self.anchored_at
    }

    pub fn epoch_steps(&self) -> u64 {
        self.epoch_steps
    }

    /// Whether an ensemble at `step` still lies inside this epoch.
    pub fn is_current(&self, step: u64) -> bool {
        step >= self.anchored_at && step - self.anchored_at < self.epoch_steps
    }
}

/// Anchors every particle at its current state and caches ḡ there; costs
/// N per particle.
pub fn svrg_epoch_start(e: &mut ParticleEnsemble, t: &FiniteSumTarget, epoch_steps: u64) -> Result<SvrgAnchor> {
    if e.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: e.dim(),
        });
    }
    if epoch_steps == 0 {
        return Err(Error::InvalidConfig("epoch_steps must be at least 1".into()));
    }
    let d = e.dim;
    let anchor_states = e.states.clone();
    let mut anchor_full_grads = vec![0.0; anchor_states.len()];
    anchor_full_grads
        .par_chunks_mut(d)
        .zip(anchor_states.par_chunks(d))
        .with_min_len(MIN_PARTICLES_PER_TASK)
        .for_each(|(g, x)| t.aggregate_score_into(x, g));
    e.grad_evals += t.len() as f64;
    Ok(SvrgAnchor {
        dim: d,
        anchor_states,
        anchor_full_grads,
        anchored_at: e.step_count,
        epoch_steps,
    })
}

/// One SVRG-LD step with the control-variate drift; costs 2 per particle.
pub fn svrg_ld_step(
    e: &mut ParticleEnsemble,
    anchor: &SvrgAnchor,
    t: &FiniteSumTarget,
    eta: f64,
    mode: IndexMode,
    rng: &mut EnsembleRng,
) -> Result<()> {
    check_step(e, t, eta, rng)?;
    if !anchor.is_current(e.step_count) || anchor.anchor_states.len() != e.states.len() {
        return Err(Error::StaleAnchor {
            anchored_at: anchor.anchored_at,
            epoch_steps: anchor.epoch_steps,
            step: e.step_count,
        });
    }
    let n = t.len();
    let shared = shared_index(mode, rng, n);
    update_particles(e, rng, eta, |p, x, index_stream, s| {
        let j = shared.unwrap_or_else(|| index_stream.uniform_index(n));
        t.component_score_into(j, x, &mut s.drift);
        t.component_score_into(j, anchor.anchor_state(p), &mut s.tmp);
        for ((g, a), full) in s.drift.iter_mut().zip(&s.tmp).zip(anchor.anchor_full_grad(p)) {
            *g = (*g - a) + full;
        }
    });
    e.finish_step(2.0)
}

/// One metric evaluation during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub step: u64,
    pub grad_evals: f64,
    /// Wall-clock time spent stepping so far, metric evaluation excluded.
    pub elapsed_ms: f64,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub checkpoints: Vec<Checkpoint<T>>,
    pub ensemble: ParticleEnsemble,
    /// Number of SVRG anchor refreshes.
    pub epochs: u64,
}

/// Runs `cfg.total_steps` steps from N(init), calling `metrics` at step 0,
/// every `checkpoint_every` steps and at the final step.
pub fn run<T, F>(cfg: &SamplerConfig, t: &FiniteSumTarget, init: &GaussianState, mut metrics: F) -> Result<RunOutput<T>>
where
    F: FnMut(&ParticleEnsemble) -> Result<T>,
{
    cfg.validate()?;
    if init.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            got: init.dim(),
        });
    }
    let eta = make_eta(cfg)?;
    let epoch_steps = cfg.epoch_len()?;
    let (mut e, mut rng) = init_ensemble(cfg, init)?;
    let mut checkpoints = Vec::new();
    let mut elapsed_ms = 0.0;
    let mut record = |e: &ParticleEnsemble, elapsed_ms: f64| -> Result<()> {
        let value = metrics(e)?;
        checkpoints.push(Checkpoint {
            step: e.step_count,
            grad_evals: e.grad_evals,
            elapsed_ms,
            value,
        });
        Ok(())
    };
    record(&e, elapsed_ms)?;
    let mut anchor: Option<SvrgAnchor> = None;
    let mut epochs = 0;
    for step in 1..=cfg.total_steps {
        let started = Instant::now();
        match cfg.method {
            Method::Ula => ula_step(&mut e, t, eta, &mut rng)?,
            Method::Sgld => sgld_step(&mut e, t, eta, cfg.index_mode, &mut rng)?,
            Method::SvrgLd => {
                if !anchor.as_ref().is_some_and(|a| a.is_current(e.step_count)) {
                    anchor = Some(svrg_epoch_start(&mut e, t, epoch_steps)?);
                    epochs += 1;
                }
                let a = anchor.as_ref().expect("anchor refreshed above");
                svrg_ld_step(&mut e, a, t, eta, cfg.index_mode, &mut rng)?;
            }
        }
        elapsed_ms += started.elapsed().as_secs_f64() * 1e3;
        if step % cfg.checkpoint_every == 0 || step == cfg.total_steps {
            record(&e, elapsed_ms)?;
        }
    }
    Ok(RunOutput {
        checkpoints,
        ensemble: e,
        epochs,
    })
}
