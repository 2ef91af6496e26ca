//! Small dense-matrix helpers shared across modules.
//!
//! Systems here are tiny (n ≤ a handful), so none of this tries to be
//! clever; it only fixes the conventions: the matrix norm is the spectral
//! norm and definiteness checks go through the symmetric eigendecomposition.

use nalgebra::{DMatrix, DVector};

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// Symmetry defect relative to the matrix scale.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    let d = m - m.transpose();
    spectral_norm(&d) / (1.0 + spectral_norm(m))
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    m.is_square() && symmetry_defect(m) <= rel_tol
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn vec_all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Least-squares line fit `y ≈ a + b·x`; returns `(a, b)`.
/// `None` when fewer than two points are given or the x's are degenerate.
pub fn line_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let b = (n * sxy - sx * sy) / denom;
    let a = (sy - b * sx) / n;
    Some((a, b))
}
