//! Experiment configuration documents.
//!
//! Configs are TOML key-value documents. Top-level sampler keys apply to every
//! method; `[ula]`, `[sgld]` and `[svrg]` tables override them per method.
//! Unknown keys are rejected. The full key table lives in the README.

use std::path::PathBuf;

use serde::Deserialize;
use wgflow::estimators::KdeOptions;
use wgflow::samplers::{default_checkpoint_every, IndexMode, Method, SamplerConfig, StepSize};
use wgflow::{FiniteSumTarget, GaussianState, SymMatrix};

use crate::error::{HarnessError, Result};

pub const DEFAULT_PARTICLES: usize = 1000;
pub const DEFAULT_METRIC_SAMPLES: usize = 1000;
pub const DEFAULT_INIT_MEAN: f64 = 3.0;
pub const DEFAULT_OUTPUT: &str = "metrics.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Mixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// Moment-matched closed forms; Gaussian family only.
    Oracle,
    /// Kernel density estimates on up to `metric_samples` particles.
    Kde,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeanSource {
    /// Means drawn i.i.d. from N(0, I) with this generator seed.
    Seed(u64),
    Gaussian(Vec<Vec<f64>>),
    Mixture(Vec<[Vec<f64>; 2]>),
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub family: Family,
    pub components: usize,
    pub dim: usize,
    pub means: MeanSource,
    /// One sampler per method; `seed` is replaced by each entry of `seeds`.
    pub samplers: Vec<SamplerConfig>,
    pub metric: MetricMode,
    pub metric_samples: usize,
    pub kde: KdeOptions,
    pub init: GaussianState,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn build_target(&self) -> Result<FiniteSumTarget> {
        let target = match (&self.means, self.family) {
            (MeanSource::Seed(seed), Family::Gaussian) => {
                FiniteSumTarget::gaussian_from_seed(self.components, self.dim, *seed)
            }
            (MeanSource::Seed(seed), Family::Mixture) => {
                FiniteSumTarget::mixture_from_seed(self.components, self.dim, *seed)
            }
            (MeanSource::Gaussian(m), _) => FiniteSumTarget::gaussian(m.clone()),
            (MeanSource::Mixture(m), _) => FiniteSumTarget::mixture(m.clone()),
        }?;
        Ok(target)
    }

    /// Sampler settings for `method`: its configured entry, or the settings of
    /// the first configured method with the method swapped.
    pub fn sampler_for(&self, method: Method) -> SamplerConfig {
        self.samplers
            .iter()
            .find(|s| s.method == method)
            .cloned()
            .unwrap_or_else(|| SamplerConfig {
                method,
                ..self.samplers[0].clone()
            })
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplerKeys {
    eta: Option<f64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    horizon: Option<u64>,
    steps: Option<u64>,
    epoch_steps: Option<u64>,
    particles: Option<usize>,
    index_mode: Option<String>,
    checkpoint_every: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    family: String,
    components: Option<usize>,
    dim: Option<usize>,
    means_seed: Option<u64>,
    means: Option<Vec<Vec<f64>>>,
    mixture_means: Option<Vec<[Vec<f64>; 2]>>,
    method: Option<String>,
    methods: Option<Vec<String>>,
    metric: Option<String>,
    metric_samples: Option<usize>,
    kde_bandwidth: Option<f64>,
    leave_one_out: Option<bool>,
    init_mean: Option<Vec<f64>>,
    init_cov: Option<Vec<Vec<f64>>>,
    seeds: Option<Vec<u64>>,
    output: Option<PathBuf>,
    #[serde(flatten)]
    sampler: SamplerKeys,
    ula: Option<SamplerKeys>,
    sgld: Option<SamplerKeys>,
    svrg: Option<SamplerKeys>,
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Validation(msg.into())
}

/// Parses and validates a config document, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    validate(raw)
}

/// Reads and parses a config file.
pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text)
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig> {
    let family = match raw.family.as_str() {
        "gaussian" => Family::Gaussian,
        "mixture" => Family::Mixture,
        other => return Err(invalid(format!("family must be gaussian or mixture, got {other:?}"))),
    };

    let (means, inferred) = match (raw.means, raw.mixture_means) {
        (Some(_), Some(_)) => return Err(invalid("give either means or mixture_means, not both")),
        (Some(m), None) => {
            if family != Family::Gaussian {
                return Err(invalid("means is for the gaussian family; use mixture_means"));
            }
            let shape = (m.len(), m.first().map_or(0, Vec::len));
            (MeanSource::Gaussian(m), Some(shape))
        }
        (None, Some(m)) => {
            if family != Family::Mixture {
                return Err(invalid("mixture_means is for the mixture family; use means"));
            }
            let shape = (m.len(), m.first().map_or(0, |p| p[0].len()));
            (MeanSource::Mixture(m), Some(shape))
        }
        (None, None) => (MeanSource::Seed(raw.means_seed.unwrap_or(0)), None),
    };
    if inferred.is_some() && raw.means_seed.is_some() {
        return Err(invalid("means_seed conflicts with explicit means"));
    }
    let resolve = |key: &str, given: Option<usize>, from_means: Option<usize>| -> Result<usize> {
        match (given, from_means) {
            (Some(g), Some(f)) if g != f => Err(invalid(format!("{key} = {g} disagrees with the explicit means ({f})"))),
            (Some(g), _) => Ok(g),
            (None, Some(f)) => Ok(f),
            (None, None) => Err(invalid(format!("missing required key {key:?}"))),
        }
    };
    let components = resolve("components", raw.components, inferred.map(|s| s.0))?;
    let dim = resolve("dim", raw.dim, inferred.map(|s| s.1))?;
    if components == 0 || dim == 0 {
        return Err(invalid("components and dim must be at least 1"));
    }

    let methods: Vec<Method> = match (raw.method, raw.methods) {
        (Some(_), Some(_)) => return Err(invalid("give either method or methods, not both")),
        (Some(m), None) => vec![parse_method(&m)?],
        (None, Some(list)) => list.iter().map(|m| parse_method(m)).collect::<Result<_>>()?,
        (None, None) => Method::ALL.to_vec(),
    };
    if methods.is_empty() {
        return Err(invalid("methods must not be empty"));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(invalid(format!("method {m} listed twice")));
        }
    }

    let metric = match raw.metric.as_deref() {
        None if family == Family::Gaussian => MetricMode::Oracle,
        None => MetricMode::Kde,
        Some("oracle") => MetricMode::Oracle,
        Some("kde") => MetricMode::Kde,
        Some(other) => return Err(invalid(format!("metric must be oracle or kde, got {other:?}"))),
    };
    if metric == MetricMode::Oracle && family != Family::Gaussian {
        return Err(invalid("metric = \"oracle\" requires the gaussian family"));
    }
    let metric_samples = raw.metric_samples.unwrap_or(DEFAULT_METRIC_SAMPLES);
    if metric_samples < 2 {
        return Err(invalid("metric_samples must be at least 2"));
    }
    if let Some(h) = raw.kde_bandwidth {
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("kde_bandwidth must be positive"));
        }
    }
    let kde = KdeOptions {
        bandwidth: raw.kde_bandwidth,
        leave_one_out: raw.leave_one_out.unwrap_or(false),
    };

    let init_mean = raw.init_mean.unwrap_or_else(|| vec![DEFAULT_INIT_MEAN; dim]);
    if init_mean.len() != dim {
        return Err(invalid(format!("init_mean has {} entries, expected {dim}", init_mean.len())));
    }
    let init_cov = match raw.init_cov {
        Some(rows) => SymMatrix::from_rows(&rows).map_err(|e| invalid(format!("init_cov: {e}")))?,
        None => SymMatrix::identity(dim),
    };
    let init = GaussianState::new(init_mean, init_cov).map_err(|e| invalid(format!("init_cov: {e}")))?;

    let seeds = raw.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(invalid("seeds must not be empty"));
    }

    let mut samplers = Vec::with_capacity(methods.len());
    for method in methods {
        let overrides = match method {
            Method::Ula => raw.ula.as_ref(),
            Method::Sgld => raw.sgld.as_ref(),
            Method::SvrgLd => raw.svrg.as_ref(),
        };
        samplers.push(build_sampler(method, &raw.sampler, overrides, family)?);
    }

    Ok(ExperimentConfig {
        family,
        components,
        dim,
        means,
        samplers,
        metric,
        metric_samples,
        kde,
        init,
        seeds,
        output: raw.output.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT)),
    })
}

fn parse_method(label: &str) -> Result<Method> {
    Method::from_label(label).ok_or_else(|| invalid(format!("unknown method {label:?} (expected ula, sgld or svrg)")))
}

fn build_sampler(method: Method, base: &SamplerKeys, over: Option<&SamplerKeys>, family: Family) -> Result<SamplerConfig> {
    let pick = |f: fn(&SamplerKeys) -> Option<f64>| over.and_then(f).or_else(|| f(base));
    let pick_u = |f: fn(&SamplerKeys) -> Option<u64>| over.and_then(f).or_else(|| f(base));
    let label = method.label();

    let steps = pick_u(|k| k.steps).ok_or_else(|| invalid("missing required key \"steps\""))?;
    let eta = pick(|k| k.eta);
    let alpha = pick(|k| k.alpha);
    let step_size = match (eta, alpha) {
        (Some(_), Some(_)) => return Err(invalid(format!("[{label}] give either eta or alpha, not both"))),
        (Some(eta), None) => StepSize::Fixed(eta),
        (None, Some(alpha)) => {
            let gamma = match (pick(|k| k.gamma), family) {
                (Some(g), _) => g,
                (None, Family::Gaussian) => 1.0,
                (None, Family::Mixture) => {
                    return Err(invalid(format!("[{label}] the mixture family needs gamma with an alpha schedule")))
                }
            };
            StepSize::Schedule {
                alpha,
                gamma,
                horizon: pick_u(|k| k.horizon),
            }
        }
        (None, None) => return Err(invalid(format!("[{label}] missing step size: set eta or alpha"))),
    };
    let index_mode = match over.and_then(|k| k.index_mode.as_deref()).or(base.index_mode.as_deref()) {
        None | Some("shared") => IndexMode::Shared,
        Some("per_particle") => IndexMode::PerParticle,
        Some(other) => return Err(invalid(format!("index_mode must be shared or per_particle, got {other:?}"))),
    };
    let cfg = SamplerConfig {
        method,
        step_size,
        total_steps: steps,
        epoch_steps: pick_u(|k| k.epoch_steps),
        particles: over.and_then(|k| k.particles).or(base.particles).unwrap_or(DEFAULT_PARTICLES),
        seed: 0,
        index_mode,
        checkpoint_every: pick_u(|k| k.checkpoint_every).unwrap_or_else(|| default_checkpoint_every(steps)),
        noise: Default::default(),
    };
    cfg.validate().map_err(|e| invalid(format!("[{label}] {e}")))?;
    Ok(cfg)
}
