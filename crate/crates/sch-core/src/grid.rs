//! Mode bookkeeping for the cosine eigenbasis of the Neumann Laplacian on
//! the unit cube `(0,1)^d`.
//!
//! Eigenfunctions are `e_k(x) = Π_i c_{k_i} cos(k_i π x_i)` with `c_0 = 1`,
//! `c_k = √2`, and eigenvalues `λ_k = π² Σ_i k_i²`; `{e_k}` is orthonormal in
//! `L²((0,1)^d)`.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchError};

/// Spectral truncation: `n` cosine modes per dimension in `d` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 1–3 (1 is for smoke tests).
    pub d: usize,
    /// Modes per dimension; power of two, at least 4.
    pub n: usize,
    /// Physical-grid oversampling factor used by quadrature of nonlinear
    /// quantities (`≥ 2`).
    pub quad_oversample: usize,
}

impl GridSpec {
    pub fn new(d: usize, n: usize, quad_oversample: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(SchError::InvalidGrid(format!("d = {d}, expected 1, 2 or 3")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(SchError::InvalidGrid(format!(
                "n = {n}, expected a power of two >= 4"
            )));
        }
        if quad_oversample < 2 {
            return Err(SchError::InvalidGrid(format!(
                "quad_oversample = {quad_oversample}, expected >= 2"
            )));
        }
        Ok(GridSpec { d, n, quad_oversample })
    }

    /// Total number of retained modes, `n^d`.
    pub fn modes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n; self.d]
    }

    /// `λ_k = π² Σ_i k_i²` for a multi-index within the truncation.
    pub fn eigenvalue(&self, k: &[usize]) -> Result<f64> {
        if k.len() != self.d || k.iter().any(|&ki| ki >= self.n) {
            return Err(SchError::ModeOutOfRange { index: k.to_vec(), n: self.n });
        }
        Ok(eigenvalue_of(k))
    }

    /// Dense tensor of eigenvalues over the truncation, same layout as
    /// coefficient tensors.
    pub fn lambda_tensor(&self) -> ArrayD<f64> {
        with_lambda_tensor(self, |l| l.clone())
    }
}

thread_local! {
    static LAMBDA_CACHE: std::cell::RefCell<std::collections::HashMap<(usize, usize), std::rc::Rc<ArrayD<f64>>>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
}

/// Run `f` with the (thread-locally cached) eigenvalue tensor of `grid`.
pub fn with_lambda_tensor<R>(grid: &GridSpec, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
    let rc = LAMBDA_CACHE.with(|cache| {
        cache
            .borrow_mut()
            .entry((grid.d, grid.n))
            .or_insert_with(|| {
                std::rc::Rc::new(ArrayD::from_shape_fn(IxDyn(&grid.shape()), |ix| {
                    let mut s = 0.0;
                    for i in 0..grid.d {
                        s += (ix[i] * ix[i]) as f64;
                    }
                    std::f64::consts::PI * std::f64::consts::PI * s
                }))
            })
            .clone()
    });
    f(&rc)
}

/// `λ_k` without range checking (used on validated indices).
pub fn eigenvalue_of(k: &[usize]) -> f64 {
    let s: usize = k.iter().map(|&ki| ki * ki).sum();
    std::f64::consts::PI * std::f64::consts::PI * s as f64
}

/// Partial sums `S_N = Σ_{0 < |k|_∞ ≤ N} λ_k^α` for `N = 0..=n_max`
/// (`S_0 = 0`), in `d` dimensions.
///
/// The summability dichotomy is `Σ λ_j^α < ∞ iff α < −d/2`; these partial
/// sums make the dichotomy observable at finite truncations.
pub fn eigenvalue_partial_sums(d: usize, alpha: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&d) {
        return Err(SchError::InvalidGrid(format!("d = {d}")));
    }
    let mut sums = Vec::with_capacity(n_max + 1);
    sums.push(0.0);
    let mut total = 0.0;
    for shell in 1..=n_max {
        total += shell_sum(d, alpha, shell);
        sums.push(total);
    }
    Ok(sums)
}

/// Sum of `λ_k^α` over the shell `|k|_∞ = m` (excluding k = 0).
fn shell_sum(d: usize, alpha: f64, m: usize) -> f64 {
    let mut s = 0.0;
    let mut k = vec![0usize; d];
    loop {
        if k.iter().copied().max().unwrap() == m {
            s += eigenvalue_of(&k).powf(alpha);
        }
        // odometer over {0..m}^d
        let mut carry = true;
        for ki in k.iter_mut() {
            if *ki < m {
                *ki += 1;
                carry = false;
                break;
            }
            *ki = 0;
        }
        if carry {
            break;
        }
    }
    s
}
