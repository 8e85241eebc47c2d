//! Small dense linear algebra, reproducible random streams and finite
//! differences.
//!
//! Dimensions here are tiny (the experiments run in d = 2), so everything is
//! dense, row-major and unblocked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A point in ℝᵈ. Hot paths take `&[f64]` and write into caller buffers.
pub type RealVector = Vec<f64>;

/// Relative asymmetry accepted by [`SymMatrix::new`] before rejecting input.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Pivot threshold factor: a Cholesky pivot at or below
/// `PIVOT_TOLERANCE * trace / d` is treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Dense symmetric matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Builds from row-major entries. Entries are symmetrized; inputs whose
    /// asymmetry exceeds `SYMMETRY_TOLERANCE` relative to the largest entry
    /// are rejected.
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {bad}")));
        }
        let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let mut asym = 0.0_f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                asym = asym.max((data[i * dim + j] - data[j * dim + i]).abs());
            }
        }
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let mut m = Self { dim, data };
        m.symmetrize();
        Ok(m)
    }

    /// Builds from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = value;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = *v;
        }
        m
    }

    /// Accumulates `weight * v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], weight: f64) {
        debug_assert_eq!(v.len(), self.dim);
        let d = self.dim;
        for i in 0..d {
            for j in i..d {
                let w = weight * (v[i] * v[j]);
                self.data[i * d + j] += w;
                if j != i {
                    self.data[j * d + i] += w;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, 1.0, 1.0)
    }

    /// Entrywise `a * self + b * other`.
    pub fn combine(&self, other: &Self, a: f64, b: f64) -> Self {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        Self {
            dim: self.dim,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// Plain matrix product, row-major. Not symmetric in general.
    pub fn matmul(&self, other: &Self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.get(i, k);
                for j in 0..d {
                    out[i * d + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> RealVector {
        let d = self.dim;
        (0..d)
            .map(|i| (0..d).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg;
            }
        }
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

/// Dense Cholesky factorization.
///
/// Fails with `NotPositiveDefinite` when a pivot drops to
/// `PIVOT_TOLERANCE * trace(S) / d` or below; rank-deficient inputs such as a
/// zero covariance are therefore reported rather than factored.
pub fn cholesky(s: &SymMatrix) -> Result<Cholesky> {
    let d = s.dim();
    let tolerance = PIVOT_TOLERANCE * s.trace().abs() / d.max(1) as f64;
    let mut lower = vec![0.0; d * d];
    for j in 0..d {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= lower[j * d + k] * lower[j * d + k];
        }
        if !(pivot > tolerance) {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot,
                tolerance,
            });
        }
        let diag = pivot.sqrt();
        lower[j * d + j] = diag;
        for i in (j + 1)..d {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= lower[i * d + k] * lower[j * d + k];
            }
            lower[i * d + j] = v / diag;
        }
    }
    Ok(Cholesky { dim: d, lower })
}

impl Cholesky {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// Row-major entries of `L` (upper triangle zero).
    pub fn as_slice(&self) -> &[f64] {
        &self.lower
    }

    /// Log-determinant of the factored matrix.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// `L z`, used to color standard-normal draws.
    pub fn mul_lower(&self, z: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = (0..=i).map(|k| self.get(i, k) * z[k]).sum();
        }
    }

    /// Solves `S x = b`.
    pub fn solve(&self, b: &[f64]) -> RealVector {
        let d = self.dim;
        let mut y = b.to_vec();
        for i in 0..d {
            for k in 0..i {
                y[i] -= self.get(i, k) * y[k];
            }
            y[i] /= self.get(i, i);
        }
        for i in (0..d).rev() {
            for k in (i + 1)..d {
                y[i] -= self.get(k, i) * y[k];
            }
            y[i] /= self.get(i, i);
        }
        y
    }

    /// `S⁻¹`, assembled column by column.
    pub fn inverse(&self) -> SymMatrix {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for j in 0..d {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..d {
                data[i * d + j] = col[i];
            }
        }
        let mut m = SymMatrix { dim: d, data };
        m.symmetrize();
        m
    }

    /// Reassembles `L Lᵀ`.
    pub fn reconstruct(&self) -> SymMatrix {
        let d = self.dim;
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                data[i * d + j] = (0..=i.min(j)).map(|k| self.get(i, k) * self.get(j, k)).sum();
            }
        }
        SymMatrix { dim: d, data }
    }
}

/// `log det S` through the Cholesky factor.
pub fn logdet_psd(s: &SymMatrix) -> Result<f64> {
    Ok(cholesky(s)?.logdet())
}

/// One reproducible random stream keyed by `(seed, stream id)`.
///
/// Backed by ChaCha8 in counter mode with the stream id selecting the
/// ChaCha stream, so the sequence of a stream never depends on how many other
/// streams exist or on which thread drives it.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    normals_drawn: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            seed,
            stream,
            normals_drawn: 0,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of standard-normal variates produced so far.
    pub fn draw_index(&self) -> u64 {
        self.normals_drawn
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.normals_drawn += 1;
        self.rng.sample(StandardNormal)
    }

    /// Fills `out` with i.i.d. N(0, 1) draws; advances the draw index by
    /// `out.len()`.
    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.standard_normal();
        }
    }

    /// Uniform index in `0..n`.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// `d` i.i.d. standard normal draws from `rng`.
pub fn standard_normal_vec(rng: &mut RngStream, d: usize) -> RealVector {
    let mut out = vec![0.0; d];
    rng.fill_standard_normal(&mut out);
    out
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> RealVector
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn sub(a: &[f64], b: &[f64]) -> RealVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Numerically stable `log Σ exp(vᵢ)`; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
