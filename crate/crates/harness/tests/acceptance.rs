//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Runs as a plain binary so the lines are always printed; exits
//! nonzero when any criterion fails.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use wgflow::estimators::{empirical_mean_cov, fisher_estimate, kl_estimate, KdeOptions};
use wgflow::gaussian_oracle::{ou_evolve, sgld_diffusion, stationary_fisher_trace};
use wgflow::numerics::{cholesky, finite_diff_grad, RngStream};
use wgflow::samplers::{make_eta, run, IndexMode, Method, SamplerConfig, StepSize};
use wgflow::{FiniteSumTarget, GaussianState, SymMatrix};
use wgflow_harness::config::parse_config;
use wgflow_harness::experiment::run_experiment;
use wgflow_harness::report::{group_runs, matched_final, Axis, Criterion};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn gaussian_target() -> FiniteSumTarget {
    FiniteSumTarget::gaussian_from_seed(100, 2, 0).unwrap()
}

/// Max over entries of |emp − ref| − (4·SE + slack); ≤ 0 means within tolerance.
fn moment_excess(emp: &GaussianState, reference: &GaussianState, m: usize, mean_slack: f64, cov_slack: f64) -> (f64, f64) {
    let d = reference.dim();
    let m = m as f64;
    let r = &reference.cov;
    let mut mean_excess = f64::NEG_INFINITY;
    let mut cov_excess = f64::NEG_INFINITY;
    for i in 0..d {
        let se = (r.get(i, i) / m).sqrt();
        mean_excess = mean_excess.max((emp.mean[i] - reference.mean[i]).abs() - 4.0 * se - mean_slack);
        for k in i..d {
            let se = ((r.get(i, k).powi(2) + r.get(i, i) * r.get(k, k)) / m).sqrt();
            cov_excess = cov_excess.max((emp.cov.get(i, k) - r.get(i, k)).abs() - 4.0 * se - cov_slack);
        }
    }
    (mean_excess, cov_excess)
}

fn closed_form_law() -> Outcome {
    let target = gaussian_target();
    let var = target.mean_variance().unwrap().clone();
    let center = target.center().to_vec();
    let x0 = vec![3.0, 3.0];
    let init = GaussianState::new(x0.clone(), SymMatrix::zeros(2)).unwrap();
    let (eta, steps, particles) = (0.01, 2000_u64, 10_000);
    let cfg = SamplerConfig::new(Method::Sgld, eta, steps)
        .with_particles(particles)
        .with_seed(1)
        .with_index_mode(IndexMode::PerParticle)
        .with_checkpoint_every(steps);
    let out = run(&cfg, &target, &init, |_| Ok(())).unwrap();
    let emp = empirical_mean_cov(out.ensemble.states(), 2).unwrap();
    let t = eta * steps as f64;
    let decay = (-t).exp();
    let mean: Vec<f64> = center.iter().zip(&x0).map(|(c, x)| c + decay * (x - c)).collect();
    let cov = SymMatrix::identity(2).combine(&var, 1.0, 0.5 * eta).scale(1.0 - (-2.0 * t).exp());
    let reference = GaussianState::new(mean, cov).unwrap();
    let (me, ce) = moment_excess(&emp, &reference, particles, 0.05, 0.1);
    outcome(
        me <= 0.0 && ce <= 0.0,
        format!(
            "mean excess over 4SE+0.05 = {me:.3e}, cov excess over 4SE+0.1 = {ce:.3e} (<= 0 required)"
        ),
    )
}

fn rate_check() -> Outcome {
    let target = gaussian_target();
    let var = target.mean_variance().unwrap();
    let fisher_at = |horizon: u64| {
        let mut cfg = SamplerConfig::new(Method::Sgld, 1.0, horizon);
        cfg.step_size = StepSize::Schedule {
            alpha: 0.5,
            gamma: 1.0,
            horizon: None,
        };
        let eta = make_eta(&cfg).unwrap();
        (eta, stationary_fisher_trace(var, eta).unwrap())
    };
    let (eta1, f1) = fisher_at(1000);
    let (eta4, f4) = fisher_at(4000);
    let ratio = f4 / f1;
    let (lo, hi) = (0.5 * 0.75, 0.5 * 1.25);
    outcome(
        (lo..=hi).contains(&ratio),
        format!(
            "Fisher(eta={eta4:.4e}) / Fisher(eta={eta1:.4e}) = {f4:.4e} / {f1:.4e} = {ratio:.4} (required in [{lo}, {hi}])"
        ),
    )
}

fn svrg_degeneracy() -> Outcome {
    let target = gaussian_target();
    let init = GaussianState::standard(vec![3.0, 3.0]);
    let steps = 1000;
    let base = SamplerConfig::new(Method::Ula, 0.01, steps)
        .with_particles(1000)
        .with_seed(7)
        .with_checkpoint_every(10);
    let keep = |e: &wgflow::ParticleEnsemble| Ok(e.states().to_vec());
    let ula = run(&base, &target, &init, keep).unwrap();
    let svrg_cfg = SamplerConfig {
        method: Method::SvrgLd,
        epoch_steps: Some(100),
        ..base
    };
    let svrg = run(&svrg_cfg, &target, &init, keep).unwrap();
    let traj_dev = ula
        .checkpoints
        .iter()
        .zip(&svrg.checkpoints)
        .flat_map(|(a, b)| a.value.iter().zip(&b.value).map(|(u, v)| (u - v).abs()))
        .fold(0.0_f64, f64::max);
    let mut rng = RngStream::new(11, 0);
    let mut sigma_max = 0.0_f64;
    for _ in 0..100 {
        let y: Vec<f64> = (0..2).map(|_| 3.0 * rng.standard_normal()).collect();
        let x: Vec<f64> = (0..2).map(|_| 3.0 * rng.standard_normal()).collect();
        let s = target.sigma_svrg(&y, &x);
        sigma_max = sigma_max.max(s.as_slice().iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    outcome(
        traj_dev <= 1e-12 && sigma_max <= 1e-12 && ula.checkpoints.len() == svrg.checkpoints.len(),
        format!("max trajectory deviation = {traj_dev:.3e}, max |sigma_svrg| entry = {sigma_max:.3e} (<= 1e-12)"),
    )
}

fn linear_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn gd_flow_decay() -> Outcome {
    let eta = 0.002;
    let steps = (3.0 / eta) as u64;
    let cfg = parse_config(&format!(
        "family = \"gaussian\"\ncomponents = 100\ndim = 2\nmethod = \"ula\"\neta = {eta}\nsteps = {steps}\nparticles = 10000\ncheckpoint_every = 15\nseeds = [0]\n"
    ))
    .unwrap();
    let recs = run_experiment(&cfg).unwrap();
    let (ts, logs): (Vec<f64>, Vec<f64>) = recs.iter().map(|r| (eta * r.step as f64, r.kl.ln())).unzip();
    let slope = linear_slope(&ts, &logs);
    let target = -2.0;
    outcome(
        (slope - target).abs() <= 0.15 * target.abs(),
        format!(
            "slope of log KL vs t over t in [0, {:.1}] = {slope:.4} (required -2 +/- 15%, {} checkpoints)",
            ts.last().unwrap(),
            ts.len()
        ),
    )
}

fn figure_orderings() -> Outcome {
    let cfg = parse_config(
        "family = \"gaussian\"\ncomponents = 100\ndim = 2\nmeans_seed = 0\nsteps = 2000\neta = 0.02\nparticles = 4000\nseeds = [0, 1, 2, 3, 4]\n",
    )
    .unwrap();
    let recs = run_experiment(&cfg).unwrap();
    let groups = group_runs(&recs);
    let by_step = matched_final(&groups, Axis::Step, &Method::ALL).unwrap();
    let by_grad = matched_final(&groups, Axis::GradEvals, &[Method::Ula, Method::SvrgLd]).unwrap();

    // One-sided sign test at 5 paired seeds: 5/5 wins gives p = 1/32 < 0.05.
    let wins = |mf: &wgflow_harness::report::MatchedFinal, better: Method, worse: Method| {
        let b = mf.records(better).unwrap();
        let w = mf.records(worse).unwrap();
        b.iter()
            .zip(w)
            .filter(|(x, y)| {
                assert_eq!(x.seed, y.seed);
                x.kl <= y.kl
            })
            .count()
    };
    let median = |mf: &wgflow_harness::report::MatchedFinal, m: Method| mf.quartiles(m, Criterion::Kl).unwrap().median;
    let seeds = cfg.seeds.len();
    let checks = [
        ("step", Method::Ula, Method::Sgld, &by_step),
        ("step", Method::SvrgLd, Method::Sgld, &by_step),
        ("grad", Method::SvrgLd, Method::Ula, &by_grad),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (axis, better, worse, mf) in checks {
        let w = wins(mf, better, worse);
        let (mb, mw) = (median(mf, better), median(mf, worse));
        passed &= w == seeds && mb <= mw;
        parts.push(format!("{axis}@{}: {better} {mb:.3e} <= {worse} {mw:.3e} in {w}/{seeds} seeds", mf.x));
    }
    outcome(passed, parts.join("; "))
}

fn gradient_accounting() -> Outcome {
    let target = gaussian_target();
    let n = target.len() as f64;
    let init = GaussianState::standard(vec![0.0, 0.0]);
    let mut failures = Vec::new();
    let mut cases = 0;
    for (steps, epoch) in [(1000_u64, 100_u64), (1001, 100), (250, 7), (1, 50), (0, 10)] {
        for method in Method::ALL {
            let cfg = SamplerConfig::new(method, 0.01, steps).with_particles(8).with_epoch_steps(epoch);
            let got = run(&cfg, &target, &init, |_| Ok(())).unwrap().ensemble.grad_evals();
            let s = steps as f64;
            let want = match method {
                Method::Ula => n * s,
                Method::Sgld => s,
                Method::SvrgLd => n * steps.div_ceil(epoch) as f64 + 2.0 * s,
            };
            cases += 1;
            if got != want {
                failures.push(format!("{method} steps={steps} epoch={epoch}: {got} != {want}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{cases} counter equalities exact")
        } else {
            failures.join("; ")
        },
    )
}

fn estimator_calibration() -> Outcome {
    // pi = N((1, 0), I), mu = N(0, I): KL = 0.5, Fisher = 1.
    let target = FiniteSumTarget::gaussian(vec![vec![0.0, 0.0]]).unwrap();
    let log_norm = target.default_log_normalizer().unwrap();
    let opts = KdeOptions::default();
    let draw = |m: usize, seed: u64| {
        let mut rng = RngStream::new(1000 + seed, 0);
        let mut xs = vec![0.0; 2 * m];
        rng.fill_standard_normal(&mut xs);
        xs.iter_mut().step_by(2).for_each(|x| *x += 1.0);
        xs
    };
    let sizes = [250, 1000, 4000];
    let seeds = 20;
    let errors: Vec<Vec<(f64, f64)>> = sizes
        .iter()
        .map(|&m| {
            (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let xs = draw(m, s);
                    let kl = kl_estimate(&xs, 2, &target, log_norm, &opts).unwrap();
                    let fi = fisher_estimate(&xs, 2, &target, &opts).unwrap();
                    (kl - 0.5, fi - 1.0)
                })
                .collect()
        })
        .collect();
    let med = |v: Vec<f64>| wgflow_harness::report::quartiles(&v).median;
    let kl_med: Vec<f64> = errors.iter().map(|e| med(e.iter().map(|p| p.0.abs()).collect())).collect();
    let fi_med: Vec<f64> = errors.iter().map(|e| med(e.iter().map(|p| p.1.abs()).collect())).collect();
    // The tolerance applies to a typical estimate: the median over the 20 seeds.
    let within = errors[1].iter().filter(|p| p.0.abs() <= 0.2 && p.1.abs() <= 0.3).count();
    let nonincreasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        kl_med[1] <= 0.2 && fi_med[1] <= 0.3 && nonincreasing(&kl_med) && nonincreasing(&fi_med),
        format!(
            "M=1000 median |KL err| = {:.3} (<= 0.2), median |Fisher err| = {:.3} (<= 0.3), {within}/{seeds} seeds within both; median |err| over M={sizes:?}: KL {kl_med:.3?}, Fisher {fi_med:.3?}",
            kl_med[1], fi_med[1]
        ),
    )
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = RngStream::new(5, 0);
    let gauss = gaussian_target();
    let mix = FiniteSumTarget::mixture_from_seed(5, 2, 0).unwrap();

    // Scores against central differences of the normalized log densities.
    let mut fd_worst = 0.0_f64;
    for t in [&gauss, &mix] {
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.standard_normal()).collect();
            let j = rng.uniform_index(t.len());
            let g = t.grad_log_component(j, &x).unwrap();
            let fd = finite_diff_grad(|y| t.log_component(j, y).unwrap(), &x, 1e-5);
            let ga = t.grad_log_aggregate(&x);
            let fda = finite_diff_grad(|y| t.log_aggregate_unnormalized(y), &x, 1e-5);
            for k in 0..2 {
                let scale = 1.0 + g[k].abs().max(ga[k].abs());
                fd_worst = fd_worst.max((g[k] - fd[k]).abs() / scale).max((ga[k] - fda[k]).abs() / scale);
            }
        }
    }
    if fd_worst > 1e-6 {
        failures.push(format!("finite differences: {fd_worst:.3e}"));
    }

    // Noise covariances are PSD.
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.standard_normal()).collect();
        let y: Vec<f64> = (0..2).map(|_| 2.0 * rng.standard_normal()).collect();
        for s in [mix.sigma_sgd(&x), mix.sigma_svrg(&y, &x), gauss.sigma_sgd(&x)] {
            let shifted = s.add(&SymMatrix::scaled_identity(2, 1e-12 * (1.0 + s.trace())));
            if cholesky(&shifted).is_err() {
                failures.push("sigma not PSD".into());
            }
        }
    }

    // Control variate: averaging the SVRG drift over all indices gives the full score.
    let mut cv_worst = 0.0_f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.standard_normal()).collect();
        let x0: Vec<f64> = (0..2).map(|_| 2.0 * rng.standard_normal()).collect();
        let full_x = mix.grad_log_aggregate(&x);
        let full_x0 = mix.grad_log_aggregate(&x0);
        let mut avg = [0.0; 2];
        for j in 0..mix.len() {
            let gx = mix.grad_log_component(j, &x).unwrap();
            let gx0 = mix.grad_log_component(j, &x0).unwrap();
            for k in 0..2 {
                avg[k] += (gx[k] - gx0[k] + full_x0[k]) / mix.len() as f64;
            }
        }
        for k in 0..2 {
            cv_worst = cv_worst.max((avg[k] - full_x[k]).abs());
        }
    }
    if cv_worst > 1e-12 {
        failures.push(format!("control variate: {cv_worst:.3e}"));
    }

    // OU semigroup and stationarity.
    let var = gauss.mean_variance().unwrap();
    let diffusion = sgld_diffusion(var, 0.1);
    let c = gauss.center().to_vec();
    let init = GaussianState::new(vec![3.0, -1.0], SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 0.5]]).unwrap()).unwrap();
    let direct = ou_evolve(&init, &c, &diffusion, 1.7).unwrap();
    let split = ou_evolve(&ou_evolve(&init, &c, &diffusion, 0.6).unwrap(), &c, &diffusion, 1.1).unwrap();
    let stationary = GaussianState::new(c.clone(), diffusion.clone()).unwrap();
    let still = ou_evolve(&stationary, &c, &diffusion, 5.0).unwrap();
    let semigroup = direct.cov.max_abs_diff(&split.cov).max(
        direct.mean.iter().zip(&split.mean).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())),
    );
    let stat = still.cov.max_abs_diff(&diffusion);
    if semigroup > 1e-12 || stat > 1e-12 {
        failures.push(format!("ou semigroup {semigroup:.3e}, stationarity {stat:.3e}"));
    }

    // Determinism across thread counts.
    let states_with = |threads: usize, method: Method| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let cfg = SamplerConfig::new(method, 0.05, 200)
            .with_particles(3000)
            .with_seed(9)
            .with_index_mode(IndexMode::PerParticle);
        pool.install(|| run(&cfg, &mix, &GaussianState::standard(vec![1.0, 1.0]), |_| Ok(())).unwrap().ensemble)
    };
    for method in Method::ALL {
        let a = states_with(1, method);
        let b = states_with(4, method);
        if a.states().iter().zip(b.states()).any(|(u, v)| u.to_bits() != v.to_bits()) {
            failures.push(format!("{method} differs between 1 and 4 threads"));
        }
    }

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "finite differences {fd_worst:.1e}, control variate {cv_worst:.1e}, ou semigroup {semigroup:.1e}, PSD and thread determinism ok"
            )
        } else {
            failures.join("; ")
        },
    )
}

type Check = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Check; 8] = [
        ("closed-form law reproduction", Duration::from_secs(30), closed_form_law),
        ("Fisher rate under eta = T^-1/2", Duration::from_secs(1), rate_check),
        ("SVRG degeneracy on gaussian targets", Duration::from_secs(5), svrg_degeneracy),
        ("exponential KL decay under ULA", Duration::from_secs(30), gd_flow_decay),
        ("method orderings across seeds", Duration::from_secs(60), figure_orderings),
        ("gradient accounting", Duration::from_secs(1), gradient_accounting),
        ("estimator calibration", Duration::from_secs(30), estimator_calibration),
        ("property suites", Duration::from_secs(60), property_suites),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= budget;
        let passed = result.passed && in_budget;
        failed += usize::from(!passed);
        println!(
            "criterion {id} [{name}]: {} | {} | {:.2}s of {}s budget{}",
            if passed { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_budget { "" } else { " (over budget)" }
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
