//! Sample-based KL and relative-Fisher estimates through a Gaussian kernel
//! density estimate.
//!
//! Samples are passed as flat row-major slices (`count × dim`), the same
//! layout the particle ensemble uses.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian_oracle::GaussianState;
use crate::numerics::{RealVector, SymMatrix};
use crate::targets::FiniteSumTarget;

/// Pooled standard deviations at or below this are rejected.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Estimator knobs; the default is Silverman's bandwidth with the self-kernel
/// included.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KdeOptions {
    /// Fixed bandwidth instead of Silverman's rule.
    pub bandwidth: Option<f64>,
    /// Drop the self-kernel when evaluating at a support point.
    pub leave_one_out: bool,
}

fn point_count(samples: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: samples.len(),
        });
    }
    Ok(samples.len() / dim)
}

/// Silverman's rule h = σ̂ (4 / ((d + 2) M))^{1/(d+4)}, with σ̂ the mean of
/// the per-coordinate sample standard deviations.
pub fn silverman_bandwidth(samples: &[f64], dim: usize) -> Result<f64> {
    let m = point_count(samples, dim)?;
    if m < 2 {
        return Err(Error::DegenerateSample(0.0));
    }
    let moments = empirical_mean_cov(samples, dim)?;
    let sigma = (0..dim).map(|k| moments.cov.get(k, k).sqrt()).sum::<f64>() / dim as f64;
    if !(sigma > DEGENERATE_SPREAD) {
        return Err(Error::DegenerateSample(sigma));
    }
    let d = dim as f64;
    Ok(sigma * (4.0 / ((d + 2.0) * m as f64)).powf(1.0 / (d + 4.0)))
}

/// Isotropic Gaussian KDE.
#[derive(Debug, Clone)]
pub struct KdeModel {
    dim: usize,
    points: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(points: Vec<f64>, dim: usize, bandwidth: f64) -> Result<Self> {
        let m = point_count(&points, dim)?;
        if m == 0 {
            return Err(Error::DegenerateSample(0.0));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            dim,
            points,
            bandwidth,
        })
    }

    /// Fits with Silverman's bandwidth.
    pub fn fit(points: Vec<f64>, dim: usize) -> Result<Self> {
        let h = silverman_bandwidth(&points, dim)?;
        Self::new(points, dim, h)
    }

    fn fit_with(points: &[f64], dim: usize, opts: &KdeOptions) -> Result<Self> {
        match opts.bandwidth {
            Some(h) => Self::new(points.to_vec(), dim, h),
            None => Self::fit(points.to_vec(), dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    // −‖x − xᵢ‖² / 2h² for every support point except `skip`.
    fn log_kernels(&self, x: &[f64], skip: Option<usize>, out: &mut Vec<f64>) {
        let inv = 0.5 / (self.bandwidth * self.bandwidth);
        out.clear();
        for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let r2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            out.push(-r2 * inv);
        }
    }

    fn log_density_skip(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let mut buf = Vec::with_capacity(self.len());
        self.log_kernels(x, skip, &mut buf);
        let d = self.dim as f64;
        let log_norm = -0.5 * d * (2.0 * PI * self.bandwidth * self.bandwidth).ln();
        crate::numerics::log_sum_exp(&buf) - (buf.len() as f64).ln() + log_norm
    }

    fn score_skip(&self, x: &[f64], skip: Option<usize>) -> RealVector {
        let mut buf = Vec::with_capacity(self.len());
        self.log_kernels(x, skip, &mut buf);
        let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut acc = vec![0.0; self.dim];
        let mut k = 0;
        for (i, p) in self.points.chunks_exact(self.dim).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let w = (buf[k] - max).exp();
            k += 1;
            total += w;
            for (a, (pi, xi)) in acc.iter_mut().zip(p.iter().zip(x)) {
                *a += w * (pi - xi);
            }
        }
        let scale = 1.0 / (total * self.bandwidth * self.bandwidth);
        acc.iter_mut().for_each(|a| *a *= scale);
        acc
    }

    /// log p̂(x), via log-sum-exp so far-field queries stay finite.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_density_skip(x, None)
    }

    /// ∇log p̂(x) = Σᵢ wᵢ(x)(xᵢ − x)/h² with softmax weights wᵢ.
    pub fn score(&self, x: &[f64]) -> RealVector {
        self.score_skip(x, None)
    }
}

/// Free-function form of [`KdeModel::log_density`].
pub fn kde_log_density(m: &KdeModel, x: &[f64]) -> f64 {
    m.log_density(x)
}

/// Free-function form of [`KdeModel::score`].
pub fn kde_score(m: &KdeModel, x: &[f64]) -> RealVector {
    m.score(x)
}

/// (1/M) Σᵢ [log p̂(xᵢ) − (log μ̃(xᵢ) − log_norm)], with the KDE fit on the
/// same samples and μ̃ the unnormalized aggregate.
pub fn kl_estimate(
    samples: &[f64],
    dim: usize,
    target: &FiniteSumTarget,
    log_norm: f64,
    opts: &KdeOptions,
) -> Result<f64> {
    check_target_dim(target, dim)?;
    let kde = KdeModel::fit_with(samples, dim, opts)?;
    let loo = opts.leave_one_out && kde.len() > 1;
    let terms: Vec<f64> = (0..kde.len())
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let x = kde.point(i);
            let skip = loo.then_some(i);
            kde.log_density_skip(x, skip) - (target.log_aggregate_unnormalized(x) - log_norm)
        })
        .collect();
    finite_mean(&terms, "KL estimate")
}

/// (1/M) Σᵢ ‖∇log p̂(xᵢ) − ∇log μ(xᵢ)‖².
pub fn fisher_estimate(
    samples: &[f64],
    dim: usize,
    target: &FiniteSumTarget,
    opts: &KdeOptions,
) -> Result<f64> {
    check_target_dim(target, dim)?;
    let kde = KdeModel::fit_with(samples, dim, opts)?;
    let loo = opts.leave_one_out && kde.len() > 1;
    let terms: Vec<f64> = (0..kde.len())
        .into_par_iter()
        .with_min_len(32)
        .map(|i| {
            let x = kde.point(i);
            let s = kde.score_skip(x, loo.then_some(i));
            let g = target.grad_log_aggregate(x);
            s.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .collect();
    finite_mean(&terms, "Fisher estimate")
}

/// Sample mean and unbiased sample covariance. A single point yields a zero
/// covariance.
pub fn empirical_mean_cov(samples: &[f64], dim: usize) -> Result<GaussianState> {
    let m = point_count(samples, dim)?;
    if m == 0 {
        return Err(Error::DegenerateSample(0.0));
    }
    let mut mean = vec![0.0; dim];
    for p in samples.chunks_exact(dim) {
        for (a, v) in mean.iter_mut().zip(p) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut cov = SymMatrix::zeros(dim);
    let mut diff = vec![0.0; dim];
    let weight = 1.0 / (m.max(2) - 1) as f64;
    for p in samples.chunks_exact(dim) {
        for k in 0..dim {
            diff[k] = p[k] - mean[k];
        }
        cov.add_outer(&diff, weight);
    }
    GaussianState::new(mean, cov)
}

fn check_target_dim(target: &FiniteSumTarget, dim: usize) -> Result<()> {
    if target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: dim,
        });
    }
    Ok(())
}

fn finite_mean(terms: &[f64], what: &str) -> Result<f64> {
    let mean = terms.iter().sum::<f64>() / terms.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, standard_normal_vec, RngStream};

    fn normal_samples(m: usize, dim: usize, mean: &[f64], seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut out = standard_normal_vec(&mut rng, m * dim);
        for p in out.chunks_exact_mut(dim) {
            p.iter_mut().zip(mean).for_each(|(v, c)| *v += c);
        }
        out
    }

    #[test]
    fn silverman_examples() {
        let s = normal_samples(1000, 2, &[0.0, 0.0], 1);
        let h = silverman_bandwidth(&s, 2).unwrap();
        let moments = empirical_mean_cov(&s, 2).unwrap();
        let sigma = (moments.cov.get(0, 0).sqrt() + moments.cov.get(1, 1).sqrt()) / 2.0;
        let factor = (4.0f64 / 4000.0).powf(1.0 / 6.0);
        assert!((factor - 0.3162).abs() < 1e-4);
        assert!((h - sigma * factor).abs() < 1e-12);
        assert!((sigma - 1.0).abs() < 0.1);

        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let h2 = silverman_bandwidth(&doubled, 2).unwrap();
        assert!((h2 - 2.0 * h).abs() < 1e-12);

        let same = vec![1.5; 20];
        assert!(matches!(silverman_bandwidth(&same, 2), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn log_density_two_points() {
        let kde = KdeModel::new(vec![1.0, 0.0, -1.0, 0.0], 2, 1.0).unwrap();
        let v = kde.log_density(&[0.0, 0.0]);
        let expect = (1.0 / (2.0 * PI)).ln() - 0.5;
        assert!((v - expect).abs() < 1e-14);
        assert!((v + 2.337877).abs() < 1e-6);
        let far = kde.log_density(&[1e5, 1e5]);
        assert!(far.is_finite() && far < -1e9);
    }

    #[test]
    fn log_density_integrates_to_one() {
        let pts = normal_samples(30, 2, &[0.5, -0.5], 4);
        let kde = KdeModel::new(pts, 2, 0.4).unwrap();
        let (lo, hi, n) = (-7.0, 7.0, 561);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            for k in 0..n {
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wk = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                let x = [lo + h * i as f64, lo + h * k as f64];
                total += wi * wk * kde.log_density(&x).exp();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn score_examples() {
        let kde = KdeModel::new(vec![1.0, 2.0, -1.0, -2.0], 2, 0.7).unwrap();
        let s = kde.score(&[0.0, 0.0]);
        assert!(s.iter().all(|v| v.abs() < 1e-15));

        let single = KdeModel::new(vec![0.3, -0.4], 2, 0.5).unwrap();
        let x = [1.0, 1.0];
        let s = single.score(&x);
        assert!((s[0] - (0.3 - 1.0) / 0.25).abs() < 1e-14);
        assert!((s[1] - (-0.4 - 1.0) / 0.25).abs() < 1e-14);
    }

    #[test]
    fn score_matches_finite_differences() {
        let pts = normal_samples(40, 2, &[0.0, 0.0], 9);
        let kde = KdeModel::fit(pts, 2).unwrap();
        let mut rng = RngStream::new(10, 0);
        for _ in 0..50 {
            let x = standard_normal_vec(&mut rng, 2);
            let fd = finite_diff_grad(|p| kde.log_density(p), &x, 1e-5);
            let s = kde.score(&x);
            let err = crate::numerics::norm_sq(&crate::numerics::sub(&s, &fd)).sqrt();
            assert!(err <= 1e-4 * crate::numerics::norm_sq(&fd).sqrt().max(1e-2));
        }
    }

    #[test]
    fn moments_examples() {
        let g = empirical_mean_cov(&[1.0, 0.0, -1.0, 0.0], 2).unwrap();
        assert_eq!(g.mean, vec![0.0, 0.0]);
        assert_eq!(g.cov.as_slice(), &[2.0, 0.0, 0.0, 0.0]);
        let g = empirical_mean_cov(&[0.5; 12], 3).unwrap();
        assert!(g.cov.is_zero());
    }

    #[test]
    fn kl_against_reference_shift() {
        let target = FiniteSumTarget::gaussian(vec![vec![0.0, 0.0]]).unwrap();
        let log_norm = target.default_log_normalizer().unwrap();
        let s = normal_samples(1000, 2, &[3.0, 0.0], 21);
        let kl = kl_estimate(&s, 2, &target, log_norm, &KdeOptions::default()).unwrap();
        assert!((kl - 4.5).abs() < 0.5, "{kl}");
    }

    #[test]
    fn minimal_inputs_are_finite() {
        let target = FiniteSumTarget::gaussian(vec![vec![0.0, 0.0]]).unwrap();
        let s = [0.1, 0.2, -0.3, 0.5];
        let opts = KdeOptions::default();
        assert!(kl_estimate(&s, 2, &target, 0.0, &opts).unwrap().is_finite());
        assert!(fisher_estimate(&s, 2, &target, &opts).unwrap() >= 0.0);
        let loo = KdeOptions {
            leave_one_out: true,
            ..opts
        };
        assert!(kl_estimate(&s, 2, &target, 0.0, &loo).unwrap().is_finite());
        let same = [1.0, 1.0, 1.0, 1.0];
        assert!(matches!(
            fisher_estimate(&same, 2, &target, &opts),
            Err(Error::DegenerateSample(_))
        ));
    }
}
