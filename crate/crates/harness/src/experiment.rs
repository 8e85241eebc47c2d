//! Method × seed runs, checkpoint metrics, CSV output and the oracle check.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use wgflow::estimators::{empirical_mean_cov, fisher_estimate, kl_estimate};
use wgflow::gaussian_oracle::{gaussian_fisher, gaussian_kl, ou_evolve, sgld_diffusion};
use wgflow::samplers::{make_eta, run, IndexMode, Method, ParticleEnsemble, SamplerConfig};
use wgflow::{Error, FiniteSumTarget, GaussianState, SymMatrix};

use crate::config::{ExperimentConfig, Family, MetricMode};
use crate::error::{HarnessError, Result};

pub const CSV_HEADER: [&str; 7] = ["method", "seed", "step", "grad_evals", "kl", "fisher", "wall_ms"];

/// One checkpoint of one (method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub method: Method,
    pub seed: u64,
    pub step: u64,
    pub grad_evals: u64,
    pub kl: f64,
    pub fisher: f64,
    pub wall_ms: f64,
}

/// Metric evaluator shared by every run of one experiment.
enum Metric {
    Oracle(GaussianState),
    Kde { log_norm: f64, samples: usize, opts: wgflow::estimators::KdeOptions },
}

impl Metric {
    fn new(cfg: &ExperimentConfig, target: &FiniteSumTarget) -> Result<Self> {
        Ok(match cfg.metric {
            MetricMode::Oracle => Metric::Oracle(GaussianState::standard(target.center().to_vec())),
            MetricMode::Kde => Metric::Kde {
                log_norm: target.default_log_normalizer()?,
                samples: cfg.metric_samples,
                opts: cfg.kde,
            },
        })
    }

    fn eval(&self, e: &ParticleEnsemble, target: &FiniteSumTarget) -> wgflow::Result<(f64, f64)> {
        let d = e.dim();
        let pair = match self {
            Metric::Oracle(reference) => empirical_mean_cov(e.states(), d)
                .and_then(|p| Ok((gaussian_kl(&p, reference)?, gaussian_fisher(&p, reference)?))),
            Metric::Kde { log_norm, samples, opts } => {
                let m = e.len().min(*samples);
                let xs = &e.states()[..m * d];
                kl_estimate(xs, d, target, *log_norm, opts)
                    .and_then(|kl| Ok((kl, fisher_estimate(xs, d, target, opts)?)))
            }
        };
        match pair {
            Ok(v) => Ok(v),
            Err(Error::NotPositiveDefinite { .. } | Error::DegenerateSample(_)) => Ok((f64::INFINITY, f64::INFINITY)),
            Err(e) => Err(e),
        }
    }
}

fn run_one(cfg: &ExperimentConfig, target: &FiniteSumTarget, metric: &Metric, method: Method, seed: u64) -> Result<Vec<MetricsRecord>> {
    let sampler = SamplerConfig {
        seed,
        ..cfg.sampler_for(method)
    };
    let out = run(&sampler, target, &cfg.init, |e| metric.eval(e, target))?;
    Ok(out
        .checkpoints
        .into_iter()
        .map(|c| MetricsRecord {
            method,
            seed,
            step: c.step,
            grad_evals: c.grad_evals as u64,
            kl: c.value.0,
            fisher: c.value.1,
            wall_ms: c.elapsed_ms,
        })
        .collect())
}

/// Runs every configured (method, seed) pair and returns the records sorted
/// by (method label, seed, step).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let target = cfg.build_target()?;
    if target.dim() != cfg.init.dim() {
        return Err(HarnessError::Validation(format!(
            "init has dimension {}, target has {}",
            cfg.init.dim(),
            target.dim()
        )));
    }
    let metric = Metric::new(cfg, &target)?;
    let jobs: Vec<(Method, u64)> = cfg
        .samplers
        .iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s.method, seed)))
        .collect();
    let groups = jobs
        .par_iter()
        .map(|&(method, seed)| run_one(cfg, &target, &metric, method, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<MetricsRecord> = groups.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [MetricsRecord]) {
    records.sort_by(|a, b| {
        (a.method.label(), a.seed, a.step).cmp(&(b.method.label(), b.seed, b.step))
    });
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders records as CSV text (LF line endings, 17 significant digits).
pub fn records_to_csv(records: &[MetricsRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("writing to memory");
    for r in records {
        w.write_record([
            r.method.label().to_string(),
            r.seed.to_string(),
            r.step.to_string(),
            r.grad_evals.to_string(),
            fmt_float(r.kl),
            fmt_float(r.fisher),
            fmt_float(r.wall_ms),
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("ASCII output")
}

/// Writes `records` to `path` via a sibling temporary file, so a failed
/// write never leaves a partial CSV behind.
pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(records_to_csv(records).as_bytes())?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(HarnessError::io(path, e));
    }
    Ok(())
}

/// Parses CSV text produced by [`records_to_csv`].
pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<MetricsRecord>> {
    let mismatch = |message: String| HarnessError::SchemaMismatch {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| mismatch(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(mismatch(format!(
            "expected header {:?}, got {:?}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| mismatch(format!("line {line}: {e}")))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let bad = |k: usize| mismatch(format!("line {line}: bad {} value {:?}", CSV_HEADER[k], field(k)));
        let int = |k: usize| field(k).parse::<u64>().map_err(|_| bad(k));
        let float = |k: usize| field(k).parse::<f64>().map_err(|_| bad(k));
        let record = MetricsRecord {
            method: Method::from_label(field(0)).ok_or_else(|| bad(0))?,
            seed: int(1)?,
            step: int(2)?,
            grad_evals: int(3)?,
            kl: float(4)?,
            fisher: float(5)?,
            wall_ms: float(6)?,
        };
        if let Some(prev) = records.last().filter(|p: &&MetricsRecord| p.method == record.method && p.seed == record.seed) {
            if record.step < prev.step || record.grad_evals < prev.grad_evals {
                return Err(mismatch(format!(
                    "line {line}: step and grad_evals must be nondecreasing within ({}, {})",
                    record.method, record.seed
                )));
            }
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_csv(&text, path)
}

/// Knobs for [`oracle_check_with`].
#[derive(Debug, Clone)]
pub struct OracleCheckOptions {
    /// Discretization allowance: tolerance is 4·SE + c·η·scale.
    pub c: f64,
    /// Replaces the ULA diffusion matrix I.
    pub ula_diffusion: Option<SymMatrix>,
    /// Replaces the SGLD diffusion matrix I + η·Var(ξ)/2.
    pub sgld_diffusion: Option<SymMatrix>,
}

pub const ORACLE_TOLERANCE_C: f64 = 0.5;
/// SVRG and ULA trajectories closer than this are reported identical.
pub const IDENTICAL_TOLERANCE: f64 = 1e-12;

impl Default for OracleCheckOptions {
    fn default() -> Self {
        OracleCheckOptions {
            c: ORACLE_TOLERANCE_C,
            ula_diffusion: None,
            sgld_diffusion: None,
        }
    }
}

/// One method's ensemble moments against the closed-form law.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentComparison {
    pub method: Method,
    pub eta: f64,
    pub checkpoints: usize,
    pub max_mean_deviation: f64,
    pub max_cov_deviation: f64,
    /// Largest deviation / tolerance over all checked entries.
    pub worst_ratio: f64,
    pub worst_step: u64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub particles: usize,
    pub comparisons: Vec<MomentComparison>,
    /// Max coordinate deviation between SVRG-LD and ULA over all checkpoints.
    pub svrg_max_deviation: Option<f64>,
}

impl OracleReport {
    pub fn svrg_identical(&self) -> Option<bool> {
        self.svrg_max_deviation.map(|d| d <= IDENTICAL_TOLERANCE)
    }

    pub fn passed(&self) -> bool {
        self.comparisons.iter().all(|c| c.passed) && self.svrg_identical().unwrap_or(true)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "oracle check: seed {}, {} particles", self.seed, self.particles)?;
        for c in &self.comparisons {
            writeln!(
                f,
                "  {:<5} eta={:.4e} checkpoints={:<4} max|dmean|={:.3e} max|dcov|={:.3e} worst dev/tol={:.3} (step {})  {}",
                c.method.label(),
                c.eta,
                c.checkpoints,
                c.max_mean_deviation,
                c.max_cov_deviation,
                c.worst_ratio,
                c.worst_step,
                if c.passed { "PASS" } else { "FAIL" }
            )?;
        }
        if let Some(dev) = self.svrg_max_deviation {
            writeln!(
                f,
                "  svrg  max trajectory deviation from ula = {dev:.3e}  {}",
                if dev <= IDENTICAL_TOLERANCE { "IDENTICAL" } else { "DIFFERENT" }
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

struct Snapshot {
    step: u64,
    moments: GaussianState,
    states: Option<Vec<f64>>,
}

fn snapshots(cfg: &SamplerConfig, target: &FiniteSumTarget, init: &GaussianState, keep_states: bool) -> Result<Vec<Snapshot>> {
    let out = run(cfg, target, init, |e| {
        Ok((
            empirical_mean_cov(e.states(), e.dim())?,
            keep_states.then(|| e.states().to_vec()),
        ))
    })?;
    Ok(out
        .checkpoints
        .into_iter()
        .map(|c| Snapshot {
            step: c.step,
            moments: c.value.0,
            states: c.value.1,
        })
        .collect())
}

fn compare_moments(
    sampler: &SamplerConfig,
    snaps: &[Snapshot],
    init: &GaussianState,
    center: &[f64],
    diffusion: &SymMatrix,
    c: f64,
) -> Result<MomentComparison> {
    let d = init.dim();
    let m = sampler.particles as f64;
    let eta = make_eta(sampler)?;
    let mean_scale = init
        .mean
        .iter()
        .zip(center)
        .fold(1.0_f64, |s, (a, b)| s.max((a - b).abs()));
    let mut cmp = MomentComparison {
        method: sampler.method,
        eta,
        checkpoints: snaps.len(),
        max_mean_deviation: 0.0,
        max_cov_deviation: 0.0,
        worst_ratio: 0.0,
        worst_step: 0,
        passed: true,
    };
    for s in snaps {
        let reference = ou_evolve(init, center, diffusion, eta * s.step as f64)?;
        let note = |dev: f64, tol: f64, cmp: &mut MomentComparison| {
            let ratio = if tol > 0.0 { dev / tol } else if dev > 0.0 { f64::INFINITY } else { 0.0 };
            if ratio > cmp.worst_ratio || ratio.is_nan() {
                cmp.worst_ratio = ratio;
                cmp.worst_step = s.step;
            }
        };
        for i in 0..d {
            let dev = (s.moments.mean[i] - reference.mean[i]).abs();
            let se = (reference.cov.get(i, i) / m).sqrt();
            cmp.max_mean_deviation = cmp.max_mean_deviation.max(dev);
            note(dev, 4.0 * se + c * eta * mean_scale, &mut cmp);
        }
        for i in 0..d {
            for k in i..d {
                let r = &reference.cov;
                let dev = (s.moments.cov.get(i, k) - r.get(i, k)).abs();
                let se = ((r.get(i, k).powi(2) + r.get(i, i) * r.get(k, k)) / m).sqrt();
                cmp.max_cov_deviation = cmp.max_cov_deviation.max(dev);
                note(dev, 4.0 * se + c * eta, &mut cmp);
            }
        }
    }
    cmp.passed = cmp.worst_ratio <= 1.0;
    Ok(cmp)
}

/// [`oracle_check_with`] at the default tolerance.
pub fn oracle_check(cfg: &ExperimentConfig) -> Result<OracleReport> {
    oracle_check_with(cfg, &OracleCheckOptions::default())
}

/// Runs ULA and SGLD (per-particle indices) on the first seed and compares
/// ensemble moments at every checkpoint with the closed-form OU law. When
/// SVRG-LD is configured, its trajectory is compared with ULA's.
pub fn oracle_check_with(cfg: &ExperimentConfig, opts: &OracleCheckOptions) -> Result<OracleReport> {
    if cfg.family != Family::Gaussian {
        return Err(HarnessError::Validation("oracle-check requires the gaussian family".into()));
    }
    let target = cfg.build_target()?;
    let var = target.mean_variance().expect("gaussian family").clone();
    let center = target.center().to_vec();
    let seed = cfg.seeds[0];
    let want_svrg = cfg.samplers.iter().any(|s| s.method == Method::SvrgLd);

    let ula = SamplerConfig {
        seed,
        ..cfg.sampler_for(Method::Ula)
    };
    let sgld = SamplerConfig {
        seed,
        index_mode: IndexMode::PerParticle,
        ..cfg.sampler_for(Method::Sgld)
    };
    let sgld_eta = make_eta(&sgld)?;
    let ula_snaps = snapshots(&ula, &target, &cfg.init, want_svrg)?;
    let sgld_snaps = snapshots(&sgld, &target, &cfg.init, false)?;
    let ula_d = opts.ula_diffusion.clone().unwrap_or_else(|| SymMatrix::identity(target.dim()));
    let sgld_d = opts.sgld_diffusion.clone().unwrap_or_else(|| sgld_diffusion(&var, sgld_eta));
    let comparisons = vec![
        compare_moments(&ula, &ula_snaps, &cfg.init, &center, &ula_d, opts.c)?,
        compare_moments(&sgld, &sgld_snaps, &cfg.init, &center, &sgld_d, opts.c)?,
    ];

    let svrg_max_deviation = if want_svrg {
        let svrg = SamplerConfig {
            method: Method::SvrgLd,
            ..ula.clone()
        };
        let svrg = SamplerConfig {
            epoch_steps: cfg.sampler_for(Method::SvrgLd).epoch_steps,
            ..svrg
        };
        let svrg_snaps = snapshots(&svrg, &target, &cfg.init, true)?;
        let mut dev = 0.0_f64;
        for (a, b) in ula_snaps.iter().zip(&svrg_snaps) {
            let (xa, xb) = (a.states.as_ref().expect("kept"), b.states.as_ref().expect("kept"));
            for (u, v) in xa.iter().zip(xb) {
                dev = dev.max((u - v).abs());
            }
        }
        Some(dev)
    } else {
        None
    };

    Ok(OracleReport {
        seed,
        particles: ula.particles,
        comparisons,
        svrg_max_deviation,
    })
}
