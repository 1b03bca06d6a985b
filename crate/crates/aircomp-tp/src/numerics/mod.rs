//! Shared complex linear-algebra and projection kernel.
//!
//! Everything here is a pure function of its inputs and safe to call from any
//! number of concurrent workers.

mod eig;
mod matrix;

pub use eig::{hermitian_eig, HermitianEigen};
pub use matrix::{ComplexMatrix, RealMatrix};

use num_complex::Complex64;

use crate::{Error, Result};

/// Singular values below `1e-10 * sigma_max` are treated as zero.
const PINV_RELATIVE_TOL: f64 = 1e-10;

/// Moore-Penrose pseudo-inverse.
///
/// Computed through the Hermitian eigendecomposition of the smaller Gram
/// matrix: for tall `M`, `M^+ = (M^H M)^+ M^H`; for wide `M`,
/// `M^+ = M^H (M M^H)^+`. Rank deficiency is handled by thresholding
/// singular values at `1e-10 * sigma_max`.
pub fn pseudo_inverse(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let mh = m.adjoint();
    if m.rows() >= m.cols() {
        let gram_inv = gram_pseudo_inverse(&mh.mul(m))?;
        Ok(gram_inv.mul(&mh))
    } else {
        let gram_inv = gram_pseudo_inverse(&m.mul(&mh))?;
        Ok(mh.mul(&gram_inv))
    }
}

/// Pseudo-inverse of a Hermitian PSD Gram matrix (eigenvalues = sigma^2).
fn gram_pseudo_inverse(gram: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eigen = hermitian_eig(gram)?;
    let sigma_max = eigen.eigenvalues[0].max(0.0).sqrt();
    let threshold = PINV_RELATIVE_TOL * sigma_max;
    let inv: Vec<f64> = eigen
        .eigenvalues
        .iter()
        .map(|&l| {
            let sigma = l.max(0.0).sqrt();
            if sigma > threshold {
                1.0 / l
            } else {
                0.0
            }
        })
        .collect();
    let n = gram.rows();
    let v = &eigen.eigenvectors;
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| v[(i, k)] * inv[k] * v[(j, k)].conj()).sum()
    }))
}

/// Euclidean projection onto the probability simplex.
///
/// Sort-based algorithm: with `v` sorted descending, the threshold is
/// `theta = (sum_{i<=rho} v_i - 1) / rho` for the largest `rho` keeping
/// `v_rho - theta > 0`, and the projection is `max(v - theta, 0)`.
pub fn simplex_projection(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Dimension {
            operation: "simplex_projection",
            detail: "empty vector".to_string(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument {
            operation: "simplex_projection",
            detail: "non-finite entry".to_string(),
        });
    }
    // Points already on the simplex are fixed points, exactly.
    if v.iter().all(|&x| x >= 0.0) && sorted_desc_sum(v) == 1.0 {
        return Ok(v.to_vec());
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let candidate = (cumulative - 1.0) / (i as f64 + 1.0);
        if x - candidate > 0.0 {
            theta = candidate;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Fold the rounding residual into the largest entry so the output passes
    // the fixed-point check above and re-projection returns it unchanged.
    for _ in 0..16 {
        let s = sorted_desc_sum(&out);
        if s == 1.0 {
            break;
        }
        let imax = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        out[imax] += 1.0 - s;
    }
    Ok(out)
}

/// Sum in sorted-descending order, matching the order the projection
/// algorithm itself accumulates in.
fn sorted_desc_sum(v: &[f64]) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.iter().sum()
}

/// Projection onto the spectrahedron `{X >= 0, tr X = 1}` in Frobenius norm:
/// eigendecompose, project the eigenvalue vector onto the simplex, rebuild.
pub fn psd_trace1_projection(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eigen = hermitian_eig(m)?;
    let projected = simplex_projection(&eigen.eigenvalues)?;
    let n = m.rows();
    let v = &eigen.eigenvectors;
    let rebuilt = ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .filter(|&k| projected[k] > 0.0)
            .map(|k| v[(i, k)] * projected[k] * v[(j, k)].conj())
            .sum()
    });
    // Symmetrize away rounding in the reconstruction.
    Ok(ComplexMatrix::from_fn(n, n, |i, j| (rebuilt[(i, j)] + rebuilt[(j, i)].conj()) * 0.5))
}

/// Hermitian square root `S` of a PSD matrix, with `S S^H = M`.
///
/// Eigenvalues below `-1e-6 * ||M||_F` are rejected as not-PSD; small negative
/// eigenvalues from rounding are clamped to zero.
pub fn matrix_sqrt_psd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eigen = hermitian_eig(m)?;
    let norm = m.frob_norm();
    let min = *eigen.eigenvalues.last().unwrap();
    if min < -1e-6 * norm {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let n = m.rows();
    let v = &eigen.eigenvectors;
    let roots: Vec<f64> = eigen.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| v[(i, k)] * roots[k] * v[(j, k)].conj()).sum()
    }))
}

/// Inverse of a Hermitian positive-definite matrix via eigendecomposition.
pub fn inverse_hermitian_pd(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eigen = hermitian_eig(m)?;
    let n = m.rows();
    let min = *eigen.eigenvalues.last().unwrap();
    if min <= 0.0 {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    let v = &eigen.eigenvectors;
    Ok(ComplexMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| v[(i, k)] * (1.0 / eigen.eigenvalues[k]) * v[(j, k)].conj()).sum()
    }))
}

/// Rayleigh quotient `u^H M u / u^H u` for a Hermitian `M`.
pub fn rayleigh_quotient(m: &ComplexMatrix, u: &[Complex64]) -> f64 {
    let mu = m.matvec(u);
    let num: Complex64 = u.iter().zip(&mu).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = u.iter().map(|a| a.norm_sqr()).sum();
    num.re / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian_vec, stream_rng};
    use proptest::prelude::*;

    fn random_complex(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        let mut rng = stream_rng(seed, 0);
        let data = complex_gaussian_vec(&mut rng, rows * cols, Complex64::new(0.0, 0.0), 1.0);
        ComplexMatrix::from_vec(rows, cols, data)
    }

    fn random_hermitian(n: usize, seed: u64) -> ComplexMatrix {
        let a = random_complex(n, n, seed);
        let ah = a.adjoint();
        a.add(&ah).scale_re(0.5)
    }

    #[test]
    fn eig_identity_has_unit_eigenvalues() {
        let eigen = hermitian_eig(&ComplexMatrix::identity(3)).unwrap();
        for l in &eigen.eigenvalues {
            assert!((l - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eig_diagonal_sorts_descending() {
        let m = ComplexMatrix::from_diag(&[3.0, 1.0]);
        let eigen = hermitian_eig(&m).unwrap();
        assert!((eigen.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((eigen.eigenvalues[1] - 1.0).abs() < 1e-14);
        // Eigenvectors are a permutation of the identity columns.
        let v = &eigen.eigenvectors;
        assert!((v[(0, 0)].norm() - 1.0).abs() < 1e-12);
        assert!((v[(1, 1)].norm() - 1.0).abs() < 1e-12);
        assert!(v[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        for seed in 0..6 {
            let m = random_hermitian(5, seed);
            let eigen = hermitian_eig(&m).unwrap();
            let err = eigen.reconstruct().sub(&m).frob_norm();
            assert!(err < 1e-10 * m.frob_norm(), "reconstruction error {err}");
        }
    }

    #[test]
    fn eig_vectors_orthonormal() {
        let m = random_hermitian(8, 42);
        let eigen = hermitian_eig(&m).unwrap();
        let v = &eigen.eigenvectors;
        let gram = v.adjoint().mul(v);
        let err = gram.sub(&ComplexMatrix::identity(8)).frob_norm();
        assert!(err < 1e-10, "orthonormality error {err}");
    }

    #[test]
    fn eig_rejects_non_square_and_non_hermitian() {
        let rect = ComplexMatrix::zeros(2, 3);
        assert!(matches!(hermitian_eig(&rect), Err(Error::Dimension { .. })));
        let mut m = ComplexMatrix::identity(2);
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(matches!(hermitian_eig(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn rayleigh_quotient_bounded_by_top_eigenvalue() {
        let m = random_hermitian(6, 7);
        let eigen = hermitian_eig(&m).unwrap();
        let top = eigen.eigenvalues[0];
        let mut rng = stream_rng(13, 1);
        for _ in 0..200 {
            let u = complex_gaussian_vec(&mut rng, 6, Complex64::new(0.0, 0.0), 1.0);
            assert!(rayleigh_quotient(&m, &u) <= top + 1e-8);
        }
        // The maximum is attained at the top eigenvector.
        let u0 = eigen.eigenvectors.col(0);
        assert!((rayleigh_quotient(&m, &u0) - top).abs() < 1e-8);
    }

    #[test]
    fn pinv_scalar_and_identity() {
        let m = ComplexMatrix::from_vec(1, 1, vec![Complex64::new(2.0, 0.0)]);
        let p = pseudo_inverse(&m).unwrap();
        assert!((p[(0, 0)] - Complex64::new(0.5, 0.0)).norm() < 1e-14);

        let id = ComplexMatrix::identity(4);
        let p = pseudo_inverse(&id).unwrap();
        assert!(p.sub(&id).frob_norm() < 1e-12);
    }

    #[test]
    fn pinv_full_column_rank_left_inverse() {
        let m = random_complex(3, 2, 5);
        let p = pseudo_inverse(&m).unwrap();
        let pm = p.mul(&m);
        assert!(pm.sub(&ComplexMatrix::identity(2)).frob_norm() < 1e-8);
    }

    #[test]
    fn pinv_satisfies_moore_penrose_conditions() {
        for &(rows, cols, seed) in &[(4usize, 3usize, 1u64), (3, 5, 2), (4, 4, 3)] {
            let m = random_complex(rows, cols, seed);
            let p = pseudo_inverse(&m).unwrap();
            let scale = m.frob_norm().max(1.0);
            assert!(m.mul(&p).mul(&m).sub(&m).frob_norm() < 1e-8 * scale);
            assert!(p.mul(&m).mul(&p).sub(&p).frob_norm() < 1e-8 * scale);
            let mp = m.mul(&p);
            assert!(mp.adjoint().sub(&mp).frob_norm() < 1e-8);
            let pm = p.mul(&m);
            assert!(pm.adjoint().sub(&pm).frob_norm() < 1e-8);
        }
    }

    #[test]
    fn pinv_matches_normal_equation_oracle_for_tall_matrices() {
        // For full column rank: M^+ = (M^H M)^{-1} M^H.
        let m = random_complex(5, 3, 9);
        let p = pseudo_inverse(&m).unwrap();
        let gram = m.adjoint().mul(&m);
        let oracle = inverse_hermitian_pd(&gram).unwrap().mul(&m.adjoint());
        assert!(p.sub(&oracle).frob_norm() < 1e-8);
    }

    #[test]
    fn pinv_zero_matrix_is_zero() {
        let m = ComplexMatrix::zeros(2, 3);
        let p = pseudo_inverse(&m).unwrap();
        assert_eq!(p.rows(), 3);
        assert_eq!(p.cols(), 2);
        assert_eq!(p.frob_norm(), 0.0);
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(simplex_projection(&[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(simplex_projection(&[1.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        // Sort-based oracle by hand: theta = 1, projection (1, 0).
        assert_eq!(simplex_projection(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(simplex_projection(&[]).is_err());
    }

    proptest! {
        #[test]
        fn simplex_projection_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
            let once = simplex_projection(&v).unwrap();
            let twice = simplex_projection(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            let sum: f64 = once.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(once.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn psd_projection_examples() {
        let fixed = ComplexMatrix::from_diag(&[0.5, 0.5]);
        assert!(psd_trace1_projection(&fixed).unwrap().sub(&fixed).frob_norm() < 1e-12);

        let stretched = ComplexMatrix::from_diag(&[2.0, 0.0]);
        let expect = ComplexMatrix::from_diag(&[1.0, 0.0]);
        assert!(psd_trace1_projection(&stretched).unwrap().sub(&expect).frob_norm() < 1e-12);

        let sym = ComplexMatrix::from_diag(&[1.0, 1.0]);
        assert!(psd_trace1_projection(&sym).unwrap().sub(&fixed).frob_norm() < 1e-12);
    }

    #[test]
    fn psd_projection_always_feasible() {
        for seed in 0..8 {
            let m = random_hermitian(6, 100 + seed);
            let p = psd_trace1_projection(&m).unwrap();
            assert!((p.trace().re - 1.0).abs() < 1e-12);
            assert!(p.trace().im.abs() < 1e-12);
            let eigen = hermitian_eig(&p).unwrap();
            assert!(*eigen.eigenvalues.last().unwrap() >= -1e-12);
        }
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let id = ComplexMatrix::identity(2);
        assert!(matrix_sqrt_psd(&id).unwrap().sub(&id).frob_norm() < 1e-12);

        let m = ComplexMatrix::from_diag(&[4.0, 9.0]);
        let expect = ComplexMatrix::from_diag(&[2.0, 3.0]);
        assert!(matrix_sqrt_psd(&m).unwrap().sub(&expect).frob_norm() < 1e-12);
    }

    #[test]
    fn sqrt_reconstructs_random_psd() {
        for seed in 0..5 {
            let x = random_complex(6, 6, 200 + seed);
            let m = x.mul(&x.adjoint()); // PSD by construction
            let s = matrix_sqrt_psd(&m).unwrap();
            let err = s.mul(&s.adjoint()).sub(&m).frob_norm();
            assert!(err < 1e-8 * m.frob_norm(), "sqrt reconstruction error {err}");
        }
    }

    #[test]
    fn sqrt_rejects_indefinite_input() {
        let m = ComplexMatrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::NotPsd { .. })));
    }
}
