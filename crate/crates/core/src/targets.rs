//! Finite-sum targets: N component densities μⱼ and the aggregate
//! μ ∝ exp((1/N) Σⱼ log μⱼ).
//!
//! Two families are provided: unit-covariance Gaussians N(ξⱼ, I) and two-mode
//! mixtures ½N(ξⱼ₁, I) + ½N(ξⱼ₂, I). Component densities carry their full
//! normalizing constants, so the aggregate needs exactly one global
//! normalizer (see [`FiniteSumTarget::log_normalizer`]).
//!
//! Scores use the convention ∇log N(x; ξ, I) = ξ − x.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, norm_sq, RealVector, RngStream, SymMatrix};

/// Default grid resolution for the aggregate normalizer.
pub const DEFAULT_NORMALIZER_POINTS: usize = 400;
/// Margin added to the largest mean coordinate for the quadrature box.
pub const DEFAULT_NORMALIZER_MARGIN: f64 = 8.0;

/// N(ξ, I).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub mean: RealVector,
}

/// ½N(ξ₁, I) + ½N(ξ₂, I).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGaussianComponent {
    pub means: [RealVector; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Components {
    Gaussian(Vec<GaussianComponent>),
    Mixture(Vec<MixtureGaussianComponent>),
}

/// Immutable finite-sum target.
#[derive(Debug, Clone)]
pub struct FiniteSumTarget {
    dim: usize,
    components: Components,
    /// Mean of all component mean vectors (ξ̄ for the Gaussian family).
    center: RealVector,
    /// max ‖ξ‖ over all component means.
    mean_bound: f64,
    /// Var(ξ) for the Gaussian family.
    mean_variance: Option<SymMatrix>,
}

fn check_means<'a>(means: impl Iterator<Item = &'a RealVector>, dim: usize) -> Result<()> {
    for m in means {
        if m.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: m.len(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component mean".into()));
        }
    }
    Ok(())
}

fn gaussian_log_kernel(x: &[f64], mean: &[f64]) -> f64 {
    -0.5 * x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

impl FiniteSumTarget {
    /// Gaussian family with the given component means.
    pub fn gaussian(means: Vec<RealVector>) -> Result<Self> {
        let dim = means.first().map(Vec::len).ok_or_else(|| {
            Error::InvalidConfig("a target needs at least one component".into())
        })?;
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        check_means(means.iter(), dim)?;
        let n = means.len() as f64;
        let mut center = vec![0.0; dim];
        for m in &means {
            for (c, v) in center.iter_mut().zip(m) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n);
        let mut var = SymMatrix::zeros(dim);
        let mut diff = vec![0.0; dim];
        for m in &means {
            for k in 0..dim {
                diff[k] = m[k] - center[k];
            }
            var.add_outer(&diff, 1.0 / n);
        }
        let mean_bound = means.iter().map(|m| norm_sq(m).sqrt()).fold(0.0, f64::max);
        Ok(Self {
            dim,
            components: Components::Gaussian(
                means.into_iter().map(|mean| GaussianComponent { mean }).collect(),
            ),
            center,
            mean_bound,
            mean_variance: Some(var),
        })
    }

    /// Mixture family; each entry holds the two mode means of one component.
    pub fn mixture(pairs: Vec<[RealVector; 2]>) -> Result<Self> {
        let dim = pairs.first().map(|p| p[0].len()).ok_or_else(|| {
            Error::InvalidConfig("a target needs at least one component".into())
        })?;
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        check_means(pairs.iter().flat_map(|p| p.iter()), dim)?;
        let count = (2 * pairs.len()) as f64;
        let mut center = vec![0.0; dim];
        for m in pairs.iter().flat_map(|p| p.iter()) {
            for (c, v) in center.iter_mut().zip(m) {
                *c += v / count;
            }
        }
        let mean_bound = pairs
            .iter()
            .flat_map(|p| p.iter())
            .map(|m| norm_sq(m).sqrt())
            .fold(0.0, f64::max);
        Ok(Self {
            dim,
            components: Components::Mixture(
                pairs.into_iter().map(|means| MixtureGaussianComponent { means }).collect(),
            ),
            center,
            mean_bound,
            mean_variance: None,
        })
    }

    /// Gaussian family with means drawn i.i.d. from N(0, I).
    pub fn gaussian_from_seed(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, 0);
        let means = (0..n)
            .map(|_| crate::numerics::standard_normal_vec(&mut rng, dim))
            .collect();
        Self::gaussian(means)
    }

    /// Mixture family with all 2N mode means drawn i.i.d. from N(0, I).
    pub fn mixture_from_seed(n: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, 0);
        let pairs = (0..n)
            .map(|_| {
                let a = crate::numerics::standard_normal_vec(&mut rng, dim);
                let b = crate::numerics::standard_normal_vec(&mut rng, dim);
                [a, b]
            })
            .collect();
        Self::mixture(pairs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Component count N.
    pub fn len(&self) -> usize {
        match &self.components {
            Components::Gaussian(c) => c.len(),
            Components::Mixture(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.components, Components::Gaussian(_))
    }

    /// Mean of all component means; ξ̄ for the Gaussian family.
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Largest component-mean norm C.
    pub fn mean_bound(&self) -> f64 {
        self.mean_bound
    }

    /// Var(ξ) = (1/N) Σ (ξⱼ − ξ̄)(ξⱼ − ξ̄)ᵀ, Gaussian family only.
    pub fn mean_variance(&self) -> Option<&SymMatrix> {
        self.mean_variance.as_ref()
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: j,
                count: self.len(),
            });
        }
        Ok(())
    }

    fn log_norm_const(&self) -> f64 {
        -0.5 * self.dim as f64 * (2.0 * PI).ln()
    }

    /// log μⱼ(x), normalized.
    pub fn log_component(&self, j: usize, x: &[f64]) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.log_component_unchecked(j, x))
    }

    fn log_component_unchecked(&self, j: usize, x: &[f64]) -> f64 {
        match &self.components {
            Components::Gaussian(c) => self.log_norm_const() + gaussian_log_kernel(x, &c[j].mean),
            Components::Mixture(c) => {
                let [a, b] = &c[j].means;
                self.log_norm_const() - 2f64.ln()
                    + log_sum_exp(&[gaussian_log_kernel(x, a), gaussian_log_kernel(x, b)])
            }
        }
    }

    /// ∇log μⱼ(x).
    pub fn grad_log_component(&self, j: usize, x: &[f64]) -> Result<RealVector> {
        self.check_index(j)?;
        let mut out = vec![0.0; self.dim];
        self.component_score_into(j, x, &mut out);
        Ok(out)
    }

    /// Writes ∇log μⱼ(x) into `out`. `j` must be in range.
    pub fn component_score_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        match &self.components {
            Components::Gaussian(c) => {
                for ((o, m), v) in out.iter_mut().zip(&c[j].mean).zip(x) {
                    *o = m - v;
                }
            }
            Components::Mixture(c) => {
                let [a, b] = &c[j].means;
                let la = gaussian_log_kernel(x, a);
                let lb = gaussian_log_kernel(x, b);
                let shift = la.max(lb);
                let wa = (la - shift).exp();
                let wb = (lb - shift).exp();
                let total = wa + wb;
                let (wa, wb) = (wa / total, wb / total);
                for k in 0..self.dim {
                    out[k] = wa * (a[k] - x[k]) + wb * (b[k] - x[k]);
                }
            }
        }
    }

    /// ∇log μ(x) = (1/N) Σⱼ ∇log μⱼ(x).
    pub fn grad_log_aggregate(&self, x: &[f64]) -> RealVector {
        let mut out = vec![0.0; self.dim];
        self.aggregate_score_into(x, &mut out);
        out
    }

    /// Writes ∇log μ(x) into `out`. For the Gaussian family the sum collapses
    /// to ξ̄ − x, evaluated in that closed form.
    pub fn aggregate_score_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.components {
            Components::Gaussian(_) => {
                for ((o, m), v) in out.iter_mut().zip(&self.center).zip(x) {
                    *o = m - v;
                }
            }
            Components::Mixture(c) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut buf = vec![0.0; self.dim];
                for j in 0..c.len() {
                    self.component_score_into(j, x, &mut buf);
                    for (o, b) in out.iter_mut().zip(&buf) {
                        *o += b;
                    }
                }
                let n = c.len() as f64;
                out.iter_mut().for_each(|o| *o /= n);
            }
        }
    }

    /// (1/N) Σⱼ log μⱼ(x); not normalized.
    pub fn log_aggregate_unnormalized(&self, x: &[f64]) -> f64 {
        let n = self.len();
        (0..n).map(|j| self.log_component_unchecked(j, x)).sum::<f64>() / n as f64
    }

    /// log ∫ exp(log_aggregate_unnormalized) by trapezoid quadrature over a
    /// box of half-width `box_halfwidth` centered at the mean of all component
    /// means.
    pub fn log_normalizer(&self, box_halfwidth: f64, grid_points_per_axis: usize) -> Result<f64> {
        if self.dim > 2 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if !(box_halfwidth > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "quadrature half-width must be positive, got {box_halfwidth}"
            )));
        }
        if grid_points_per_axis < 64 {
            return Err(Error::InvalidConfig(format!(
                "quadrature needs at least 64 points per axis, got {grid_points_per_axis}"
            )));
        }
        let n = grid_points_per_axis;
        let h = 2.0 * box_halfwidth / (n - 1) as f64;
        let node = |axis: usize, i: usize| self.center[axis] - box_halfwidth + h * i as f64;
        let log_weight = |i: usize| if i == 0 || i == n - 1 { (0.5 * h).ln() } else { h.ln() };
        let mut terms = Vec::with_capacity(n.pow(self.dim as u32));
        match self.dim {
            1 => {
                for i in 0..n {
                    terms.push(log_weight(i) + self.log_aggregate_unnormalized(&[node(0, i)]));
                }
            }
            _ => {
                let mut x = [0.0; 2];
                for i in 0..n {
                    x[0] = node(0, i);
                    for k in 0..n {
                        x[1] = node(1, k);
                        terms.push(log_weight(i) + log_weight(k) + self.log_aggregate_unnormalized(&x));
                    }
                }
            }
        }
        Ok(log_sum_exp(&terms))
    }

    /// Quadrature box half-width used by [`Self::default_log_normalizer`].
    pub fn default_box_halfwidth(&self) -> f64 {
        let max_coord = match &self.components {
            Components::Gaussian(c) => c.iter().flat_map(|g| g.mean.iter()).fold(0.0_f64, |m, v| m.max(v.abs())),
            Components::Mixture(c) => c
                .iter()
                .flat_map(|g| g.means.iter().flat_map(|m| m.iter()))
                .fold(0.0_f64, |m, v| m.max(v.abs())),
        };
        max_coord + DEFAULT_NORMALIZER_MARGIN
    }

    /// Aggregate normalizer with the default box and resolution. The
    /// Gaussian family in d > 2 uses its closed form −½ tr Var(ξ).
    pub fn default_log_normalizer(&self) -> Result<f64> {
        match (&self.mean_variance, self.dim > 2) {
            (Some(var), true) => Ok(-0.5 * var.trace()),
            _ => self.log_normalizer(self.default_box_halfwidth(), DEFAULT_NORMALIZER_POINTS),
        }
    }

    /// Σ_SGD(x) = (1/N) Σⱼ (gⱼ − ḡ)(gⱼ − ḡ)ᵀ.
    pub fn sigma_sgd(&self, x: &[f64]) -> SymMatrix {
        let d = self.dim;
        let n = self.len();
        let mut out = SymMatrix::zeros(d);
        let mut g = vec![0.0; d];
        match &self.components {
            // gⱼ(x) − ḡ(x) = ξⱼ − ξ̄ independently of x.
            Components::Gaussian(c) => {
                for comp in c {
                    for k in 0..d {
                        g[k] = comp.mean[k] - self.center[k];
                    }
                    out.add_outer(&g, 1.0 / n as f64);
                }
            }
            Components::Mixture(_) => {
                let agg = self.grad_log_aggregate(x);
                for j in 0..n {
                    self.component_score_into(j, x, &mut g);
                    for k in 0..d {
                        g[k] -= agg[k];
                    }
                    out.add_outer(&g, 1.0 / n as f64);
                }
            }
        }
        out
    }

    /// Σ_SVRG(y, x) = (1/N) Σⱼ vⱼvⱼᵀ with vⱼ = gⱼ(x) − gⱼ(y) + ḡ(y) − ḡ(x).
    pub fn sigma_svrg(&self, y: &[f64], x: &[f64]) -> SymMatrix {
        let d = self.dim;
        let n = self.len();
        let agg_x = self.grad_log_aggregate(x);
        let agg_y = self.grad_log_aggregate(y);
        let mut gx = vec![0.0; d];
        let mut gy = vec![0.0; d];
        let mut v = vec![0.0; d];
        let mut out = SymMatrix::zeros(d);
        for j in 0..n {
            self.component_score_into(j, x, &mut gx);
            self.component_score_into(j, y, &mut gy);
            for k in 0..d {
                v[k] = (gx[k] - gy[k]) + (agg_y[k] - agg_x[k]);
            }
            out.add_outer(&v, 1.0 / n as f64);
        }
        out
    }
}
