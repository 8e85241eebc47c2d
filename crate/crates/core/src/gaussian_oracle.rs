//! Closed forms for Gaussian laws under Ornstein–Uhlenbeck evolution.
//!
//! For the Gaussian family every flow here is an OU process
//! dx = −(x − ξ̄) dt + √2 D̃^{1/2} dW, so a Gaussian initial law stays Gaussian
//! and its moments evolve in closed form. D̃ = I for Langevin and SVRG
//! dynamics, D̃ = I + η Var(ξ)/2 for SGLD.

use crate::error::{Error, Result};
use crate::numerics::{cholesky, dot, RealVector, SymMatrix};

/// A Gaussian law N(mean, cov).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: RealVector,
    pub cov: SymMatrix,
}

impl GaussianState {
    pub fn new(mean: RealVector, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                got: mean.len(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// N(mean, I).
    pub fn standard(mean: RealVector) -> Self {
        let d = mean.len();
        Self {
            mean,
            cov: SymMatrix::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Law at time `t` of the OU process started from `init`, with stationary
/// law N(target_mean, diffusion).
pub fn ou_evolve(
    init: &GaussianState,
    target_mean: &[f64],
    diffusion: &SymMatrix,
    t: f64,
) -> Result<GaussianState> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    let d = init.dim();
    for got in [target_mean.len(), diffusion.dim()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    let decay = (-t).exp();
    let decay2 = (-2.0 * t).exp();
    let mean = init
        .mean
        .iter()
        .zip(target_mean)
        .map(|(m, c)| c + decay * (m - c))
        .collect();
    let cov = init.cov.combine(diffusion, decay2, -(-2.0 * t).exp_m1());
    Ok(GaussianState { mean, cov })
}

/// Stationary covariance of the SGLD flow on the Gaussian family,
/// I + η Var(ξ)/2.
pub fn sgld_diffusion(mean_variance: &SymMatrix, eta: f64) -> SymMatrix {
    SymMatrix::identity(mean_variance.dim()).combine(mean_variance, 1.0, 0.5 * eta)
}

/// KL(p ‖ q) between Gaussians.
pub fn gaussian_kl(p: &GaussianState, q: &GaussianState) -> Result<f64> {
    let d = check_dims(p, q)?;
    let lq = cholesky(&q.cov)?;
    let lp = cholesky(&p.cov)?;
    let q_inv = lq.inverse();
    let trace: f64 = (0..d)
        .map(|i| (0..d).map(|k| q_inv.get(i, k) * p.cov.get(k, i)).sum::<f64>())
        .sum();
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let maha = dot(&diff, &lq.solve(&diff));
    let kl = 0.5 * (trace + maha - d as f64 + lq.logdet() - lp.logdet());
    Ok(kl.max(0.0))
}

/// Relative Fisher information E_p‖∇log p − ∇log q‖².
///
/// With A = q.cov⁻¹ − p.cov⁻¹ this is tr(A p.cov A) + ‖q.cov⁻¹(p.mean − q.mean)‖².
pub fn gaussian_fisher(p: &GaussianState, q: &GaussianState) -> Result<f64> {
    let d = check_dims(p, q)?;
    let q_inv = cholesky(&q.cov)?.inverse();
    let p_inv = cholesky(&p.cov)?.inverse();
    let a = q_inv.combine(&p_inv, 1.0, -1.0);
    let ap = a.matmul(&p.cov);
    let mut trace = 0.0;
    for i in 0..d {
        for k in 0..d {
            trace += ap[i * d + k] * a.get(k, i);
        }
    }
    let diff: Vec<f64> = p.mean.iter().zip(&q.mean).map(|(a, b)| a - b).collect();
    let shift = q_inv.mul_vec(&diff);
    Ok((trace + dot(&shift, &shift)).max(0.0))
}

/// ½[log|I + ηV/2| + η tr(V)/2], a large-horizon closed-form expression for
/// the stationary SGLD law. It is not the exact KL; use [`gaussian_kl`] for that.
pub fn approx_stationary_kl(mean_variance: &SymMatrix, eta: f64) -> Result<f64> {
    let s = sgld_diffusion(mean_variance, eta);
    let logdet = cholesky(&s)?.logdet();
    Ok(0.5 * (logdet + 0.5 * eta * mean_variance.trace()))
}

/// tr((I + ηV/2)⁻¹ − I + ηV/2): Fisher information of the stationary SGLD
/// law relative to N(ξ̄, I).
pub fn stationary_fisher_trace(mean_variance: &SymMatrix, eta: f64) -> Result<f64> {
    let s = sgld_diffusion(mean_variance, eta);
    let inv = cholesky(&s)?.inverse();
    let d = s.dim() as f64;
    Ok(inv.trace() - d + 0.5 * eta * mean_variance.trace())
}

fn check_dims(p: &GaussianState, q: &GaussianState) -> Result<usize> {
    let d = q.dim();
    for got in [p.dim(), p.cov.dim(), q.cov.dim()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    Ok(d)
}
