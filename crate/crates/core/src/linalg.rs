//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Sign and log-magnitude of det(m), from an LU factorization.
pub fn log_det(m: &DMatrix<f64>) -> (f64, f64) {
    let lu = m.clone().lu();
    let mut sign: f64 = lu.p().determinant();
    let mut log = 0.0;
    let u = lu.u();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        sign *= d.signum();
        log += d.abs().ln();
    }
    (sign, log)
}

/// det(m) as a plain number; may over- or underflow for large matrices.
pub fn det(m: &DMatrix<f64>) -> f64 {
    let (s, l) = log_det(m);
    s * l.exp()
}

/// Smallest singular value by inverse iteration on mᵀm, reusing one LU
/// factorization. Returns 0 for exactly singular input.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let lu = m.clone().lu();
    if !lu.is_invertible() {
        return 0.0;
    }
    let mt_lu = m.transpose().lu();
    // deterministic start with components in every direction
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0);
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..500 {
        let Some(y) = mt_lu.solve(&x) else { return 0.0 };
        let Some(z) = lu.solve(&y) else { return 0.0 };
        let nz = z.norm();
        if !(nz.is_finite() && nz > 0.0) {
            return 0.0;
        }
        let new = 1.0 / nz.sqrt();
        x = z / nz;
        if (new - est).abs() <= 1e-13 * new {
            return new;
        }
        est = new;
    }
    est
}

/// Largest |eigenvalue| of a symmetric matrix.
pub fn spectral_radius_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0, |r: f64, e| r.max(e.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |r: f64, &e| r.min(e))
}

/// ‖K‖ in the weighted space L²(w): the spectral norm of W^½ K W^(−½).
pub fn weighted_operator_norm(k: &DMatrix<f64>, weights: &[f64]) -> f64 {
    let n = k.nrows();
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sw[i] * k[(i, j)] / sw[j]);
    scaled.singular_values().max()
}

/// Condition number estimate ‖m‖₁‖m⁻¹‖₁ computed from an explicit inverse.
pub fn condition_1(m: &DMatrix<f64>) -> f64 {
    let norm1 = |a: &DMatrix<f64>| {
        (0..a.ncols())
            .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    match m.clone().try_inverse() {
        Some(inv) => norm1(m) * norm1(&inv),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            let x = (i * 31 + j * 17) as f64;
            (x * 0.37).sin() + if i == j { 2.0 } else { 0.0 }
        })
    }

    #[test]
    fn log_det_matches_direct() {
        for n in [1, 3, 8, 20] {
            let m = sample(n);
            let d = m.determinant();
            let (s, l) = log_det(&m);
            assert_relative_eq!(s * l.exp(), d, max_relative = 1e-10);
        }
        let mut m = DMatrix::identity(4, 4);
        m.swap_rows(0, 1);
        assert_eq!(det(&m), -1.0);
    }

    #[test]
    fn sigma_min_matches_svd() {
        for n in [4, 12, 30] {
            let m = sample(n);
            let want = m.singular_values().min();
            assert_relative_eq!(sigma_min(&m), want, max_relative = 1e-8);
        }
        assert_eq!(sigma_min(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn symmetric_spectra() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(spectral_radius_sym(&m), 3.0, epsilon = 1e-14);
        assert_relative_eq!(min_eigenvalue_sym(&m), 1.0, epsilon = 1e-14);
        let w = [1.0, 4.0];
        // W^½ K W^(−½) for diagonal K is K itself
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -3.0]));
        assert_relative_eq!(weighted_operator_norm(&d, &w), 3.0, epsilon = 1e-14);
        assert_relative_eq!(condition_1(&d), 6.0, epsilon = 1e-14);
    }
}
