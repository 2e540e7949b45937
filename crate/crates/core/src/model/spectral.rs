//! Spectral-norm diagnostics for a layered readout.

use crate::tensor::{norm, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralFactors {
    /// `‖W_j‖_op` per layer.
    pub spectral_norms: Vec<f64>,
    /// `‖W_j‖_F` per layer.
    pub frobenius_norms: Vec<f64>,
    /// `∏ ‖W_j‖_op`.
    pub product: f64,
    /// `(Σ ‖W_j‖_F² / ‖W_j‖_op²)^{1/2}`; `None` when some layer is zero.
    pub complexity: Option<f64>,
}

/// Largest singular value by power iteration on `WᵀW`, run to convergence.
pub fn spectral_norm(w: &Tensor) -> f64 {
    let (rows, cols) = (w.rows(), w.cols());
    if w.data().iter().all(|&x| x == 0.0) || rows == 0 || cols == 0 {
        return 0.0;
    }
    let wt = w.transpose();
    // Deterministic start with no special alignment to coordinate axes.
    let mut v = Tensor::new([cols, 1], (0..cols).map(|i| 1.0 + 0.37 * ((i as f64) * 1.618).sin()).collect());
    let mut prev = 0.0;
    let mut sigma = 0.0;
    for _ in 0..100_000 {
        let nv = v.norm();
        v = v.scale(1.0 / nv);
        let wv = w.matmul(&v);
        sigma = wv.norm();
        let next = wt.matmul(&wv);
        if next.norm() == 0.0 {
            return 0.0;
        }
        v = next;
        if (sigma - prev).abs() <= 1e-15 * sigma {
            break;
        }
        prev = sigma;
    }
    sigma
}

/// Product of spectral norms and the Frobenius complexity of a stack of
/// weight matrices.
pub fn spectral_factors(weights: &[Tensor]) -> SpectralFactors {
    let spectral_norms: Vec<f64> = weights.iter().map(spectral_norm).collect();
    let frobenius_norms: Vec<f64> = weights.iter().map(|w| norm(w.data())).collect();
    let product = spectral_norms.iter().product();
    let complexity = if spectral_norms.iter().any(|&s| s == 0.0) {
        None
    } else {
        Some(frobenius_norms.iter().zip(&spectral_norms).map(|(f, s)| (f / s).powi(2)).sum::<f64>().sqrt())
    };
    SpectralFactors { spectral_norms, frobenius_norms, product, complexity }
}
