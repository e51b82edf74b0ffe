//! Minimal dense linear algebra kernel.
//!
//! Row-major `f64` storage and plain loops throughout; the operating range
//! is small dense models (n ≤ 256) where blocking buys nothing. Two API
//! layers, following the usual small-kernel convention:
//!
//! - hot-path operations ([`matvec`], [`axpy`], …) treat shape mismatches as
//!   programmer error and panic with a descriptive message;
//! - construction from untrusted data and the iterative spectral-norm
//!   estimate return [`Result`].
//!
//! All operations are pure: inputs are never modified and repeated calls
//! produce identical results.

use crate::error::{Error, Result};
use crate::rng::Xoshiro256;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    /// Validating constructor: length must equal `rows * cols` and every
    /// entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix entries".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::ShapeMismatch("ragged matrix rows".into()));
        }
        Self::from_vec(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `A x`.
    pub fn matvec(&self, x: &[f64]) -> DenseVector {
        assert_eq!(
            self.cols,
            x.len(),
            "matvec: matrix has {} cols but vector has length {}",
            self.cols,
            x.len()
        );
        let mut out = vec![0.0; self.rows];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
        DenseVector::from_raw(out)
    }

    /// `Aᵀ x`.
    pub fn matvec_t(&self, x: &[f64]) -> DenseVector {
        assert_eq!(
            self.rows,
            x.len(),
            "matvec_t: matrix has {} rows but vector has length {}",
            self.rows,
            x.len()
        );
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            let row = self.row(i);
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * xi;
            }
        }
        DenseVector::from_raw(out)
    }

    /// `A += alpha · u vᵀ` (gradient accumulation).
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(self.rows, u.len(), "add_outer: row dimension mismatch");
        assert_eq!(self.cols, v.len(), "add_outer: col dimension mismatch");
        for (i, &ui) in u.iter().enumerate() {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            let s = alpha * ui;
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += s * vj;
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Dense vector; derefs to `[f64]` for read access.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        DenseVector { data: vec![0.0; n] }
    }

    /// Validating constructor: rejects non-finite entries.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("vector entries".into()));
        }
        Ok(DenseVector { data })
    }

    pub fn from_slice(data: &[f64]) -> Self {
        DenseVector {
            data: data.to_vec(),
        }
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        DenseVector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.data.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

/// `A x`.
pub fn matvec(a: &DenseMatrix, x: &DenseVector) -> DenseVector {
    a.matvec(x)
}

pub fn add(x: &DenseVector, y: &DenseVector) -> DenseVector {
    assert_eq!(x.len(), y.len(), "add: length mismatch");
    DenseVector::from_raw(x.iter().zip(y.iter()).map(|(a, b)| a + b).collect())
}

pub fn sub(x: &DenseVector, y: &DenseVector) -> DenseVector {
    assert_eq!(x.len(), y.len(), "sub: length mismatch");
    DenseVector::from_raw(x.iter().zip(y.iter()).map(|(a, b)| a - b).collect())
}

pub fn scale(alpha: f64, x: &DenseVector) -> DenseVector {
    DenseVector::from_raw(x.iter().map(|a| alpha * a).collect())
}

/// `alpha · x + y`.
pub fn axpy(alpha: f64, x: &DenseVector, y: &DenseVector) -> DenseVector {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    DenseVector::from_raw(
        x.iter()
            .zip(y.iter())
            .map(|(a, b)| alpha * a + b)
            .collect(),
    )
}

/// Result of the power-iteration largest-singular-value estimate.
#[derive(Debug, Clone, Copy)]
pub struct SpectralEstimate {
    pub value: f64,
    /// Relative change between the final two iterates reached `tol`.
    pub converged: bool,
    pub iterations: usize,
}

const POWER_SEED: u64 = 0x5EED0F5A17;
const POWER_RESTART_SEED: u64 = 0xA17E55EED2;

/// Largest singular value of a square matrix via power iteration on `AᵀA`.
///
/// The start vector is pseudo-random from a fixed seed; if the matrix maps
/// it to zero the iteration restarts once from a different seed, so a zero
/// estimate is only reported when two independent start vectors both land
/// in the null space (in practice: A = 0).
pub fn spectral_norm(a: &DenseMatrix, max_iters: usize, tol: f64) -> Result<SpectralEstimate> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch(format!(
            "spectral_norm requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidArgument("spectral_norm: max_iters >= 1".into()));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        });
    }

    for seed in [POWER_SEED, POWER_RESTART_SEED] {
        let mut rng = Xoshiro256::seed_from(seed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.next_range(-1.0, 1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }

        let mut prev = f64::NAN;
        let mut stalled = false;
        for it in 1..=max_iters {
            let w = a.matvec(&v);
            let sigma = w.norm2(); // ‖A v‖ with ‖v‖ = 1
            if sigma == 0.0 {
                stalled = true;
                break;
            }
            let u = a.matvec_t(&w); // AᵀA v
            let nu = u.norm2();
            if nu == 0.0 {
                stalled = true;
                break;
            }
            v = u.iter().map(|x| x / nu).collect();
            if prev.is_finite() && (sigma - prev).abs() <= tol * sigma.max(f64::MIN_POSITIVE) {
                return Ok(SpectralEstimate {
                    value: sigma,
                    converged: true,
                    iterations: it,
                });
            }
            prev = sigma;
        }
        if !stalled {
            return Ok(SpectralEstimate {
                value: prev,
                converged: false,
                iterations: max_iters,
            });
        }
    }

    // Two independent start vectors annihilated: the matrix is zero.
    Ok(SpectralEstimate {
        value: 0.0,
        converged: true,
        iterations: 1,
    })
}

/// √Σ (Aᵢⱼ − Bᵢⱼ)².
pub fn frobenius_distance(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    assert_eq!(
        (a.rows(), a.cols()),
        (b.rows(), b.cols()),
        "frobenius_distance: shape mismatch {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    );
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
