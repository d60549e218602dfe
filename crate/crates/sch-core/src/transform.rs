//! One-dimensional cosine transforms (DCT-II analysis / DCT-III synthesis)
//! built on a complex FFT via the even-odd reordering construction.
//!
//! Conventions (unnormalized):
//! `dct2(x)_k  = Σ_{j<M} x_j cos(πk(j+1/2)/M)` and
//! `dct3(a)_j  = Σ_{k<M} a_k cos(πk(j+1/2)/M)`;
//! `dct2 ∘ dct3 = diag(M, M/2, …, M/2)`.
//!
//! Plans cache FFT instances and twiddle tables per length; the cache is
//! thread-local, so plans are never shared across threads.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub(crate) struct CosinePlan {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    /// `exp(−iπk/(2M))` for the forward path.
    tw_fwd: Vec<Complex<f64>>,
    /// `exp(+iπk/(2M))` for the synthesis path.
    tw_inv: Vec<Complex<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl CosinePlan {
    fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        let ifft = planner.plan_fft_inverse(m);
        let half_angle = std::f64::consts::PI / (2.0 * m as f64);
        let tw_fwd: Vec<_> = (0..m)
            .map(|k| Complex::from_polar(1.0, -half_angle * k as f64))
            .collect();
        let tw_inv: Vec<_> = (0..m)
            .map(|k| Complex::from_polar(1.0, half_angle * k as f64))
            .collect();
        let scratch_len = fft.get_inplace_scratch_len().max(ifft.get_inplace_scratch_len());
        CosinePlan {
            m,
            fft,
            ifft,
            tw_fwd,
            tw_inv,
            buf: vec![Complex::default(); m],
            scratch: vec![Complex::default(); scratch_len],
        }
    }

    /// `out_k = Σ_j x_j cos(πk(j+1/2)/M)`.
    pub(crate) fn dct2(&mut self, x: &[f64], out: &mut [f64]) {
        let m = self.m;
        debug_assert_eq!(x.len(), m);
        debug_assert_eq!(out.len(), m);
        for j in 0..m.div_ceil(2) {
            self.buf[j] = Complex::new(x[2 * j], 0.0);
        }
        for j in 0..m / 2 {
            self.buf[m - 1 - j] = Complex::new(x[2 * j + 1], 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for k in 0..m {
            out[k] = (self.buf[k] * self.tw_fwd[k]).re;
        }
    }

    /// `out_j = Σ_k a_k cos(πk(j+1/2)/M)` (transpose of `dct2`).
    pub(crate) fn dct3(&mut self, a: &[f64], out: &mut [f64]) {
        let m = self.m;
        debug_assert_eq!(a.len(), m);
        debug_assert_eq!(out.len(), m);
        // dct3 = dct2⁻¹ ∘ diag(M, M/2, …): feed the scaled spectrum through
        // the inverted forward path.
        self.buf[0] = Complex::new(m as f64 * a[0], 0.0);
        let half = m as f64 / 2.0;
        for k in 1..m {
            self.buf[k] = Complex::new(half * a[k], -half * a[m - k]) * self.tw_inv[k];
        }
        self.ifft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let inv_m = 1.0 / m as f64;
        for j in 0..m.div_ceil(2) {
            out[2 * j] = self.buf[j].re * inv_m;
        }
        for j in 0..m / 2 {
            out[2 * j + 1] = self.buf[m - 1 - j].re * inv_m;
        }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<RefCell<CosinePlan>>>> =
        RefCell::new(HashMap::new());
}

/// Run `f` with the thread-local plan for length `m`.
pub(crate) fn with_plan<R>(m: usize, f: impl FnOnce(&mut CosinePlan) -> R) -> R {
    let plan = PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(m)
            .or_insert_with(|| Rc::new(RefCell::new(CosinePlan::new(m))))
            .clone()
    });
    let mut plan = plan.borrow_mut();
    f(&mut plan)
}
