//! Float helpers routed through `libm` so the crate stays `no_std`.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// Total variation distance, using the half-L1 convention.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}
