//! Dense linear-algebra helpers for the terminal-ingredient synthesis:
//! Lyapunov and Riccati solvers, stability tests and symmetric square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest real part over the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).abs().max() <= tol * (1.0 + m.abs().max())
}

pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    is_symmetric(m, 1e-12) && min_eigenvalue_sym(m) > 0.0
}

/// `P^{-1/2}` for a symmetric positive-definite `P`, via eigen-decomposition.
pub fn inv_sqrt_spd(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(p));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(Error::Numerical("matrix is not positive definite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose())))
}

/// Residual `P A + Aᵀ P + M` of the continuous Lyapunov equation.
pub fn lyapunov_residual(a: &DMatrix<f64>, m: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    p * a + a.transpose() * p + m
}

/// Solves `P A + Aᵀ P = −M` for Hurwitz `A` through the Kronecker-vectorized
/// linear system.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || m.shape() != (n, n) {
        return Err(Error::Contract("solve_lyapunov expects square matrices of equal size".into()));
    }
    let abscissa = spectral_abscissa(a);
    if abscissa >= 0.0 {
        return Err(Error::NotStabilized { abscissa });
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = at.kronecker(&eye) + eye.kronecker(&at);
    let rhs = DVector::from_iterator(n * n, m.iter().map(|v| -v));
    let vec_p = op
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let p = symmetrize(&DMatrix::from_column_slice(n, n, vec_p.as_slice()));
    let res = spectral_norm(&lyapunov_residual(a, m, &p));
    if !(res <= 1e-8 * (1.0 + m.abs().max())) {
        return Err(Error::Numerical(format!("Lyapunov residual {res:e} too large")));
    }
    Ok(p)
}

/// PBH test restricted to the closed right half-plane.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    let scale = 1.0 + a.abs().max() + b.abs().max();
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.re < -1e-12 {
            continue;
        }
        let mut pbh = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { *lambda } else { Complex64::new(0.0, 0.0) };
                pbh[(i, j)] = diag - Complex64::new(a[(i, j)], 0.0);
            }
            for j in 0..b.ncols() {
                pbh[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
            }
        }
        let sv = pbh.svd(false, false).singular_values;
        let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smallest <= 1e-10 * scale {
            return false;
        }
    }
    true
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
///
/// The matrix sign function of the Hamiltonian gives a first solution which
/// is then polished with Kleinman–Newton steps.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R is singular".into()))?;
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let z_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let c = if det.abs() > 0.0 && det.is_finite() {
            det.abs().powf(1.0 / (2.0 * n as f64))
        } else {
            1.0
        };
        let next = (&z / c + z_inv * c) * 0.5;
        let delta = (&next - &z).abs().max();
        let size = next.abs().max();
        z = next;
        if delta <= 1e-13 * size {
            converged = true;
            break;
        }
    }
    if !converged || z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("sign iteration did not converge".into()));
    }

    let eye = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&z.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(z.view((n, n), (n, n)) + &eye));
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(z.view((0, 0), (n, n)) + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-z.view((n, 0), (n, n))));
    let mut p = symmetrize(
        &lhs.svd(true, true)
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Numerical(e.to_string()))?,
    );

    // Kleinman refinement
    for _ in 0..8 {
        let k = -(&r_inv * b.transpose() * &p);
        let a_c = a + b * &k;
        if !is_hurwitz(&a_c) {
            break;
        }
        let m = q + k.transpose() * r * &k;
        let next = solve_lyapunov(&a_c, &m)?;
        let change = (&next - &p).abs().max();
        p = next;
        if change <= 1e-15 * (1.0 + p.abs().max()) {
            break;
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    #[test]
    fn lyapunov_identity_case() {
        let p = solve_lyapunov(&(-DMatrix::identity(2, 2)), &(DMatrix::identity(2, 2) * 2.0)).unwrap();
        assert!((p - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn lyapunov_companion_residual() {
        let a = m2(0.0, 1.0, -2.0, -3.0);
        let m = DMatrix::identity(2, 2);
        let p = solve_lyapunov(&a, &m).unwrap();
        assert!(spectral_norm(&lyapunov_residual(&a, &m, &p)) <= 1e-10);
        assert!(is_positive_definite(&p));
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let err = solve_lyapunov(&m2(0.0, 1.0, 1.0, 0.0), &DMatrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::NotStabilized { .. }));
    }

    #[test]
    fn care_scalar_integrator() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn care_residual_double_integrator() {
        let a = m2(0.0, 1.0, 0.0, 0.0);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::from_element(1, 1, 0.5);
        let p = solve_care(&a, &b, &q, &r).unwrap();
        let res = a.transpose() * &p + &p * &a - &p * &b * (1.0 / 0.5) * b.transpose() * &p + &q;
        assert!(res.abs().max() < 1e-10, "{res}");
    }

    #[test]
    fn pbh_detects_uncontrollable_unstable_mode() {
        let a = m2(1.0, 0.0, 0.0, -1.0);
        let b_bad = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let b_good = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(!is_stabilizable(&a, &b_bad));
        assert!(is_stabilizable(&a, &b_good));
    }

    #[test]
    fn inverse_square_root() {
        let p = m2(0.0814, 0.0314, 0.0314, 0.0814);
        let s = inv_sqrt_spd(&p).unwrap();
        let back = &s * &p * &s;
        assert!((back - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-12);
    }
}
