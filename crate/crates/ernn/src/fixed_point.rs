//! Inexact-Newton fixed-point machinery.
//!
//! The solver drives a residual system f(z) = 0 with the update
//! z⁽ᵏ⁺¹⁾ = z⁽ᵏ⁾ + η⁽ᵏ⁾ f(z⁽ᵏ⁾). When ‖I + η⁽ᵏ⁾ f′(z⁽ᵏ⁾)‖ < 1 at every
//! iterate the error contracts linearly, which [`check_contraction`]
//! estimates a posteriori. The module also hosts the scalar equilibrium
//! map Φ(α) solving h = tanh(h + α) together with its implicit-function
//! derivative, and the closed-form / Neumann-approximated solutions of
//! the linear state equation z = Uz + Vh + Wx + b.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, DenseMatrix, DenseVector};

type ResidualFn<'a> = Box<dyn Fn(&[f64]) -> DenseVector + 'a>;
type JacobianFn<'a> = Box<dyn Fn(&[f64]) -> DenseMatrix + 'a>;

/// A residual system f(z) = 0 of fixed dimension, with an optional
/// analytic Jacobian. When the Jacobian is absent, contraction estimates
/// fall back to central finite differences.
pub struct ResidualSystem<'a> {
    dimension: usize,
    residual: ResidualFn<'a>,
    jacobian: Option<JacobianFn<'a>>,
}

impl<'a> ResidualSystem<'a> {
    pub fn new(dimension: usize, residual: impl Fn(&[f64]) -> DenseVector + 'a) -> Self {
        ResidualSystem {
            dimension,
            residual: Box::new(residual),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        dimension: usize,
        residual: impl Fn(&[f64]) -> DenseVector + 'a,
        jacobian: impl Fn(&[f64]) -> DenseMatrix + 'a,
    ) -> Self {
        ResidualSystem {
            dimension,
            residual: Box::new(residual),
            jacobian: Some(Box::new(jacobian)),
        }
    }

    /// A linear residual f(z) = A (z − z*), the workhorse of the
    /// convergence tests.
    pub fn linear(a: DenseMatrix, z_star: DenseVector) -> Self {
        assert_eq!(a.rows(), a.cols(), "linear system matrix must be square");
        assert_eq!(a.rows(), z_star.len(), "linear system shape mismatch");
        let dim = z_star.len();
        let jac = a.clone();
        ResidualSystem {
            dimension: dim,
            residual: Box::new(move |z| {
                let e: Vec<f64> = z.iter().zip(z_star.iter()).map(|(zi, si)| zi - si).collect();
                a.matvec(&e)
            }),
            jacobian: Some(Box::new(move |_| jac.clone())),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn residual(&self, z: &[f64]) -> DenseVector {
        (self.residual)(z)
    }

    /// Analytic Jacobian if supplied, otherwise central finite differences
    /// with step 1e-6 · max(1, ‖z‖∞).
    pub fn jacobian(&self, z: &[f64]) -> Result<DenseMatrix> {
        if let Some(jac) = &self.jacobian {
            return Ok(jac(z));
        }
        let n = self.dimension;
        let h = 1e-6 * z.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut j = DenseMatrix::zeros(n, n);
        let mut zp = z.to_vec();
        for col in 0..n {
            let orig = zp[col];
            zp[col] = orig + h;
            let fp = (self.residual)(&zp);
            zp[col] = orig - h;
            let fm = (self.residual)(&zp);
            zp[col] = orig;
            for row in 0..n {
                let d = (fp[row] - fm[row]) / (2.0 * h);
                if !d.is_finite() {
                    return Err(Error::NonFinite("finite-difference Jacobian".into()));
                }
                j[(row, col)] = d;
            }
        }
        Ok(j)
    }
}

/// Full record of one fixed-point solve.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    /// Accepted iterates, starting with z⁽⁰⁾.
    pub iterates: Vec<DenseVector>,
    /// ‖f(z⁽ᵏ⁾)‖₂, one entry per iterate.
    pub residual_norms: Vec<f64>,
    /// ‖I + η⁽ᵏ⁾ f′(z⁽ᵏ⁾)‖₂ per executed step, when recording was requested.
    pub contraction_norms: Vec<f64>,
    pub converged: bool,
    /// Number of accepted update steps; equals `iterates.len() - 1`.
    pub iterations_used: usize,
    /// Populated when the solve aborted on a non-finite iterate or residual.
    pub failure_reason: Option<String>,
}

fn eta_for(etas: &[f64], k: usize) -> f64 {
    if etas.len() == 1 {
        etas[0]
    } else {
        etas[k]
    }
}

/// Runs z⁽ᵏ⁺¹⁾ = z⁽ᵏ⁾ + η⁽ᵏ⁾ f(z⁽ᵏ⁾) until ‖f‖₂ ≤ tol or `max_iters`
/// steps. A step that produces a non-finite iterate or residual is
/// discarded and the solve reports `converged = false` with the reason.
pub fn inexact_newton_solve(
    sys: &ResidualSystem,
    z0: &DenseVector,
    etas: &[f64],
    max_iters: usize,
    tol: f64,
    record_contraction: bool,
) -> Result<(DenseVector, SolveTrace)> {
    if z0.len() != sys.dimension() {
        return Err(Error::ShapeMismatch(format!(
            "start vector length {} != system dimension {}",
            z0.len(),
            sys.dimension()
        )));
    }
    if etas.is_empty() || (etas.len() != 1 && etas.len() < max_iters) {
        return Err(Error::InvalidArgument(
            "eta schedule must be a single value or cover max_iters steps".into(),
        ));
    }

    let mut trace = SolveTrace {
        iterates: vec![z0.clone()],
        residual_norms: Vec::new(),
        contraction_norms: Vec::new(),
        converged: false,
        iterations_used: 0,
        failure_reason: None,
    };

    let mut z = z0.clone();
    let mut r = sys.residual(&z);
    if !r.is_finite() {
        trace.failure_reason = Some("non-finite residual at the start vector".into());
        trace.residual_norms.push(f64::NAN);
        return Ok((z, trace));
    }
    trace.residual_norms.push(r.norm2());

    for k in 0..max_iters {
        if trace.residual_norms[k] <= tol {
            trace.converged = true;
            break;
        }
        let eta = eta_for(etas, k);
        if record_contraction {
            let j = sys.jacobian(&z)?;
            let n = j.rows();
            let mut m = DenseMatrix::identity(n);
            for i in 0..n {
                for jj in 0..n {
                    m[(i, jj)] += eta * j[(i, jj)];
                }
            }
            trace
                .contraction_norms
                .push(spectral_norm(&m, 1000, 1e-12)?.value);
        }

        let next: Vec<f64> = z.iter().zip(r.iter()).map(|(zi, ri)| zi + eta * ri).collect();
        if !next.iter().all(|v| v.is_finite()) {
            trace.failure_reason = Some(format!("non-finite iterate at step {}", k + 1));
            if record_contraction {
                trace.contraction_norms.pop();
            }
            return Ok((z, trace));
        }
        let next = DenseVector::from_raw(next);
        let rn = sys.residual(&next);
        if !rn.is_finite() {
            trace.failure_reason = Some(format!("non-finite residual at step {}", k + 1));
            if record_contraction {
                trace.contraction_norms.pop();
            }
            return Ok((z, trace));
        }
        z = next;
        r = rn;
        trace.iterates.push(z.clone());
        trace.residual_norms.push(r.norm2());
        trace.iterations_used = k + 1;
    }

    if *trace.residual_norms.last().unwrap() <= tol {
        trace.converged = true;
    }
    Ok((z, trace))
}

/// Spectral-norm estimate of I + η f′(z); values below 1 mean the inexact
/// Newton step contracts locally.
pub fn check_contraction(sys: &ResidualSystem, z: &DenseVector, eta: f64) -> Result<f64> {
    let j = sys.jacobian(z)?;
    let n = j.rows();
    let mut m = DenseMatrix::identity(n);
    for i in 0..n {
        for jj in 0..n {
            m[(i, jj)] += eta * j[(i, jj)];
        }
    }
    Ok(spectral_norm(&m, 1000, 1e-12)?.value)
}

/// Equilibrium of h = tanh(h + alpha), by bisection on
/// g(h) = h − tanh(h + alpha).
///
/// g is nondecreasing with opposite signs at the bracket ends
/// [min(0, tanh α) − 1, max(0, tanh α) + 1], so the root is unique and the
/// bracket always closes. Φ(0) = 0 is returned exactly.
pub fn phi_scalar(alpha: f64, tol: f64) -> f64 {
    assert!(tol > 0.0, "phi_scalar: tol must be positive");
    if alpha == 0.0 {
        return 0.0;
    }
    let g = |h: f64| h - (h + alpha).tanh();
    let t = alpha.tanh();
    let mut lo = t.min(0.0) - 1.0;
    let mut hi = t.max(0.0) + 1.0;
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket has collapsed to float resolution
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// dΦ/dα from the implicit-function rule: with s = sech²(h + α) at the
/// equilibrium h = Φ(α), the derivative is s / (1 − s). Unbounded at
/// α = 0, which is rejected.
pub fn phi_derivative(alpha: f64, tol: f64) -> Result<f64> {
    if alpha == 0.0 {
        return Err(Error::UnboundedDerivative);
    }
    let h = phi_scalar(alpha, tol);
    let th = (h + alpha).tanh();
    let s = 1.0 - th * th;
    Ok(s / (1.0 - s))
}

/// One sample of the Φ sweep. `dphi` is `f64::INFINITY` at α = 0.
#[derive(Debug, Clone, Copy)]
pub struct PhiPoint {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
}

/// Evaluates Φ and Φ′ on an evenly spaced grid. The grid is interpolated
/// endpoint-to-endpoint so a symmetric range hits α = 0 exactly.
pub fn phi_curve(lo: f64, hi: f64, points: usize, tol: f64) -> Result<Vec<PhiPoint>> {
    if points < 2 || !(lo < hi) {
        return Err(Error::InvalidArgument(
            "phi_curve needs lo < hi and at least 2 points".into(),
        ));
    }
    let last = (points - 1) as f64;
    let mut out = Vec::with_capacity(points);
    for i in 0..points {
        let alpha = (lo * (last - i as f64) + hi * i as f64) / last;
        let phi = phi_scalar(alpha, tol);
        let dphi = match phi_derivative(alpha, tol) {
            Ok(d) => d,
            Err(Error::UnboundedDerivative) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        out.push(PhiPoint { alpha, phi, dphi });
    }
    Ok(out)
}

/// CSV export of the Φ sweep, header `alpha,phi,dphi`.
pub fn write_phi_csv(points: &[PhiPoint], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "alpha,phi,dphi")?;
    for p in points {
        writeln!(w, "{},{},{}", p.alpha, p.phi, p.dphi)?;
    }
    Ok(())
}

/// Solves (I − U) z = rhs by Gaussian elimination with partial pivoting.
fn solve_i_minus_u(u: &DenseMatrix, rhs: &DenseVector) -> Result<DenseVector> {
    let n = u.rows();
    assert_eq!(u.cols(), n, "U must be square");
    assert_eq!(rhs.len(), n, "rhs length mismatch");
    let mut a = DenseMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - u[(i, j)]
    });
    let mut b: Vec<f64> = rhs.to_vec();
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .unwrap();
        if pivot.abs() < 1e-12 {
            return Err(Error::SingularSystem {
                row: col,
                pivot,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a[(col, j)];
                a[(col, j)] = a[(pivot_row, j)];
                a[(pivot_row, j)] = tmp;
            }
            b.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = a[(r, col)] / a[(col, col)];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[(r, j)] -= factor * a[(col, j)];
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[(col, j)] * b[j];
        }
        b[col] = acc / a[(col, col)];
    }
    Ok(DenseVector::from_raw(b))
}

fn linear_rhs(
    v: &DenseMatrix,
    w: &DenseMatrix,
    b: &DenseVector,
    h_prev: &DenseVector,
    x: &DenseVector,
) -> DenseVector {
    let mut rhs = v.matvec(h_prev);
    let wx = w.matvec(x);
    for ((r, wxi), bi) in rhs.data_mut().iter_mut().zip(wx.iter()).zip(b.iter()) {
        *r += wxi + bi;
    }
    rhs
}

/// Exact solution z of the linear state equation z = Uz + Vh_prev + Wx + b,
/// i.e. (I − U) z = rhs, by direct dense solve. Test oracle; not on the
/// training path.
pub fn linear_fixed_point_exact(
    u: &DenseMatrix,
    v: &DenseMatrix,
    w: &DenseMatrix,
    b: &DenseVector,
    h_prev: &DenseVector,
    x: &DenseVector,
) -> Result<DenseVector> {
    let rhs = linear_rhs(v, w, b, h_prev, x);
    solve_i_minus_u(u, &rhs)
}

/// First-order Neumann approximation (I − U)⁻¹ ≈ I + U applied to the same
/// right-hand side: returns (I + U)(Vh_prev + Wx + b).
pub fn linear_fixed_point_approx(
    u: &DenseMatrix,
    v: &DenseMatrix,
    w: &DenseMatrix,
    b: &DenseVector,
    h_prev: &DenseVector,
    x: &DenseVector,
) -> DenseVector {
    let rhs = linear_rhs(v, w, b, h_prev, x);
    let mut out = u.matvec(&rhs);
    for (o, r) in out.data_mut().iter_mut().zip(rhs.iter()) {
        *o += r;
    }
    out
}
