//! Cyclic Jacobi eigendecomposition for complex Hermitian matrices.
//!
//! The matrices in this crate are small (dimension <= ~32), where Jacobi gives
//! excellent accuracy at O(n^3) per sweep. Convergence is declared when the
//! off-diagonal Frobenius norm drops below 1e-12 times the input norm, with a
//! hard cap of 100 sweeps.

use num_complex::Complex64;

use super::matrix::ComplexMatrix;
use crate::{Error, Result};

const OFF_DIAG_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues (sorted descending) and orthonormal eigenvectors of a
/// Hermitian matrix, satisfying `M = V diag(lambda) V^H`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V diag(lambda) V^H`, for reconstruction checks.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        ComplexMatrix::from_fn(n, n, |i, j| {
            (0..n).map(|k| v[(i, k)] * self.eigenvalues[k] * v[(j, k)].conj()).sum()
        })
    }
}

/// Eigendecomposition of a square Hermitian matrix.
///
/// Rejects non-square input and matrices whose Hermitian deviation exceeds
/// `1e-8 * ||M||_F`.
pub fn hermitian_eig(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::Dimension {
            operation: "hermitian_eig",
            detail: format!("expected square matrix, got {}x{}", m.rows(), m.cols()),
        });
    }
    let norm = m.frob_norm();
    let deviation = m.hermitian_deviation();
    if deviation > HERMITIAN_TOL * norm {
        return Err(Error::NotHermitian { deviation, norm });
    }

    let n = m.rows();
    // Work on the symmetrized half to shed the (tolerated) deviation.
    let mut a = ComplexMatrix::from_fn(n, n, |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
    let mut v = ComplexMatrix::identity(n);

    let target = OFF_DIAG_TOL * norm;
    let mut converged = norm == 0.0 || n == 1;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        converged = off_diag_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence {
            operation: "hermitian_eig",
            detail: format!("off-diagonal norm {:.3e} after {MAX_SWEEPS} sweeps", off_diag_norm(&a)),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = ComplexMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    Ok(HermitianEigen { eigenvalues, eigenvectors })
}

fn off_diag_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// One complex Jacobi rotation zeroing `a[p][q]` via the unitary
/// `U = diag(phase, 1) * [[c, -s], [s, c]]` acting on the (p, q) plane:
/// `A <- U^H A U`, `V <- V U`.
fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let phase = apq / r;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;

    // Off-diagonal after rotation is r(c^2 - s^2) + cs(aqq - app); the stable
    // small root of t^2 - 2*tau*t - 1 = 0 with tau = (aqq - app) / (2r).
    let tau = (aqq - app) / (2.0 * r);
    let t = if tau >= 0.0 {
        -1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let up = phase * c; // U[p][p]
    let uq = -phase * s; // U[p][q]
    let n = a.rows();

    // Right-multiply A and V by U (columns p, q).
    for i in 0..n {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = aip * up + aiq * s;
        a[(i, q)] = aip * uq + aiq * c;

        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = vip * up + viq * s;
        v[(i, q)] = vip * uq + viq * c;
    }
    // Left-multiply A by U^H (rows p, q).
    for j in 0..n {
        let apj = a[(p, j)];
        let aqj = a[(q, j)];
        a[(p, j)] = apj * up.conj() + aqj * s;
        a[(q, j)] = apj * uq.conj() + aqj * c;
    }
    // Clean the target entries and keep the diagonal exactly real.
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);
}
