//! Spectral noise sampling.
//!
//! The driving noise is `W(x,t) = Σ_j q_j β_j(t) e_j(x)` with i.i.d. standard
//! Brownian motions `β_j`; `q_j = 1` for space-time white noise and
//! `q_j = λ_j^{1/2−d/4−υ/2}` for the colored family. The stochastic
//! convolution `Z^ε(t) = ε^σ ∫_0^t e^{−(t−s)εΔ²} dW(s)` is a decoupled
//! Ornstein–Uhlenbeck process per mode and is sampled by its exact
//! transition law, so the marginal of `Z^ε(t)` carries no time-stepping
//! bias at any step size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchError};
use crate::field::{lp_norm_of_physical, SpectralField};
use crate::grid::{eigenvalue_partial_sums, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Colored { upsilon: f64 },
}

/// Noise family, amplitude exponent `σ` and mean-mode policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    pub sigma: f64,
    #[serde(default = "default_true")]
    pub exclude_mean_mode: bool,
}

fn default_true() -> bool {
    true
}

impl NoiseSpec {
    pub fn white(sigma: f64) -> Self {
        NoiseSpec { kind: NoiseKind::White, sigma, exclude_mean_mode: true }
    }

    pub fn colored(sigma: f64, upsilon: f64) -> Result<Self> {
        let spec =
            NoiseSpec { kind: NoiseKind::Colored { upsilon }, sigma, exclude_mean_mode: true };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma <= 0.0 {
            return Err(SchError::InvalidParameter(format!("sigma = {} <= 0", self.sigma)));
        }
        if let NoiseKind::Colored { upsilon } = self.kind {
            if !(0.0..=1.0).contains(&upsilon) || upsilon == 0.0 {
                return Err(SchError::InvalidParameter(format!(
                    "upsilon = {upsilon} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Spectral weight `q_k`. The zero mode gets weight 0 when excluded (and
    /// always for the colored family, whose weight formula is singular at
    /// `λ_0 = 0`).
    pub fn weight(&self, lambda: f64, d: usize) -> f64 {
        if lambda == 0.0 {
            return match self.kind {
                NoiseKind::White if !self.exclude_mean_mode => 1.0,
                _ => 0.0,
            };
        }
        match self.kind {
            NoiseKind::White => 1.0,
            NoiseKind::Colored { upsilon } => {
                lambda.powf(0.5 - d as f64 / 4.0 - upsilon / 2.0)
            }
        }
    }
}

/// Deterministic per-sample RNG stream: identical `(base_seed, stream_id)`
/// yields an identical draw sequence regardless of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub base_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(base_seed: u64, stream_id: u64) -> Self {
        RngStream { base_seed, stream_id }
    }

    /// Instantiate the stream's generator; the 256-bit key is expanded from
    /// a splitmix64 chain over `(base_seed, stream_id)`.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = splitmix64(self.base_seed ^ splitmix64(self.stream_id));
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// State of the stochastic convolution `Z^ε(t)`.
#[derive(Debug, Clone)]
pub struct OuState {
    pub z: SpectralField,
    pub t: f64,
    pub spec: NoiseSpec,
    pub epsilon: f64,
}

impl OuState {
    /// `Z^ε(0) = 0`.
    pub fn new(grid: GridSpec, spec: NoiseSpec, epsilon: f64) -> Result<Self> {
        spec.validate()?;
        if epsilon <= 0.0 {
            return Err(SchError::InvalidParameter(format!("epsilon = {epsilon} <= 0")));
        }
        Ok(OuState { z: SpectralField::zeros(grid), t: 0.0, spec, epsilon })
    }
}

/// Precomputed per-mode transition factors for a fixed `(grid, spec, ε, dt)`:
/// decay `E_k = exp(−ελ_k² dt)` and increment standard deviation
/// `ε^σ q_k √((1−E_k²)/(2ελ_k²))` (with the Brownian limit `√dt` at λ = 0).
#[derive(Debug, Clone)]
pub struct OuFactors {
    pub decay: Vec<f64>,
    pub incr_std: Vec<f64>,
    pub dt: f64,
}

impl OuFactors {
    pub fn new(grid: GridSpec, spec: &NoiseSpec, epsilon: f64, dt: f64) -> Result<Self> {
        spec.validate()?;
        if dt <= 0.0 {
            return Err(SchError::InvalidParameter(format!("dt = {dt} <= 0")));
        }
        if epsilon <= 0.0 {
            return Err(SchError::InvalidParameter(format!("epsilon = {epsilon} <= 0")));
        }
        let amp = epsilon.powf(spec.sigma);
        let lambdas = grid.lambda_tensor();
        let mut decay = Vec::with_capacity(lambdas.len());
        let mut incr_std = Vec::with_capacity(lambdas.len());
        for &lam in lambdas.iter() {
            let a = epsilon * lam * lam;
            decay.push((-a * dt).exp());
            let q = spec.weight(lam, grid.d);
            // (1 − e^{−2a dt}) / (2a), continuous at a → 0
            let var_unit = if a == 0.0 { dt } else { -(-2.0 * a * dt).exp_m1() / (2.0 * a) };
            incr_std.push(amp * q * var_unit.sqrt());
        }
        Ok(OuFactors { decay, incr_std, dt })
    }

    /// Draw the one-step stochastic-convolution increment (the integral
    /// `ε^σ ∫_t^{t+dt} e^{−(t+dt−s)εΔ²} dW(s)` in law). Draw order is
    /// row-major over modes; excluded modes draw nothing.
    pub fn sample_increment(&self, grid: GridSpec, rng: &mut ChaCha8Rng) -> SpectralField {
        let mut incr = SpectralField::zeros(grid);
        let slice = incr.coeffs.as_slice_mut().expect("standard layout");
        for (c, &std) in slice.iter_mut().zip(&self.incr_std) {
            if std > 0.0 {
                let xi: f64 = rng.sample(StandardNormal);
                *c = std * xi;
            }
        }
        incr
    }

    /// Advance an OU state in place: `z ← E ⊙ z + increment`.
    pub fn step_in_place(&self, state: &mut OuState, rng: &mut ChaCha8Rng) {
        let incr = self.sample_increment(state.z.grid(), rng);
        let slice = state.z.coeffs.as_slice_mut().expect("standard layout");
        let inc = incr.coeffs.as_slice().expect("standard layout");
        for ((z, &e), &dz) in slice.iter_mut().zip(&self.decay).zip(inc) {
            *z = e * *z + dz;
        }
        state.t += self.dt;
    }
}

/// One increment of the driving noise itself: coefficient `k` is an
/// independent `N(0, q_k² dt)` draw.
pub fn white_increment(
    grid: GridSpec,
    dt: f64,
    spec: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SpectralField> {
    spec.validate()?;
    if dt <= 0.0 {
        return Err(SchError::InvalidParameter(format!("dt = {dt} <= 0")));
    }
    let lambdas = grid.lambda_tensor();
    let mut f = SpectralField::zeros(grid);
    let slice = f.coeffs.as_slice_mut().expect("standard layout");
    let sqrt_dt = dt.sqrt();
    for (c, &lam) in slice.iter_mut().zip(lambdas.iter()) {
        let q = spec.weight(lam, grid.d);
        if q > 0.0 {
            let xi: f64 = rng.sample(StandardNormal);
            *c = q * sqrt_dt * xi;
        }
    }
    Ok(f)
}

/// Exact one-step OU transition (value-semantic form of
/// [`OuFactors::step_in_place`]).
pub fn ou_step(state: &OuState, dt: f64, rng: &mut ChaCha8Rng) -> Result<OuState> {
    let factors = OuFactors::new(state.z.grid(), &state.spec, state.epsilon, dt)?;
    let mut next = state.clone();
    factors.step_in_place(&mut next, rng);
    Ok(next)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonteCarloStat {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl MonteCarloStat {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        MonteCarloStat { mean, stderr: (var / n as f64).sqrt(), samples: n }
    }
}

/// Which pathwise statistic a convolution experiment records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupStatistic {
    /// `sup_t ∥Z(t)∥^p_{L^p}` (midpoint quadrature; Parseval at p = 2).
    LpSup { p: f64 },
    /// `sup_t ∥(−Δ)^{1−d/4−ϑ/2} Z(t)∥^p` (Parseval, transform-free).
    FracSup { p: f64, theta: f64 },
    /// `sup over grid points and times of |Z|` (for the Ω event).
    UniformSup,
}

/// Pathwise supremum of the chosen statistic over the simulation time grid.
pub fn path_sup_statistic(
    grid: GridSpec,
    spec: &NoiseSpec,
    epsilon: f64,
    t_final: f64,
    dt: f64,
    stat: SupStatistic,
    stream: RngStream,
) -> Result<f64> {
    let factors = OuFactors::new(grid, spec, epsilon, dt)?;
    let mut state = OuState::new(grid, *spec, epsilon)?;
    let mut rng = stream.rng();
    let steps = (t_final / dt).round().max(1.0) as usize;
    let mut sup = evaluate_stat(&state.z, grid, stat)?;
    for _ in 0..steps {
        factors.step_in_place(&mut state, &mut rng);
        sup = sup.max(evaluate_stat(&state.z, grid, stat)?);
    }
    Ok(sup)
}

fn evaluate_stat(z: &SpectralField, grid: GridSpec, stat: SupStatistic) -> Result<f64> {
    match stat {
        SupStatistic::LpSup { p } => {
            if p == 2.0 {
                Ok(z.norm_sobolev(0.0)?.powi(2))
            } else {
                let phys = z.to_physical(grid.quad_oversample)?;
                Ok(lp_norm_of_physical(&phys, p).powf(p))
            }
        }
        SupStatistic::FracSup { p, theta } => {
            let order = 1.0 - grid.d as f64 / 4.0 - theta / 2.0;
            let norm = z.fractional_apply(order).norm_sobolev(0.0)?;
            Ok(norm.powf(p))
        }
        SupStatistic::UniformSup => z.sup_abs(grid.quad_oversample),
    }
}

/// `E[sup_{t≤T} ∥Z^ε(t)∥^p_{L^p}]` by Monte Carlo over independent streams.
#[allow(clippy::too_many_arguments)]
pub fn convolution_sup_stats(
    grid: GridSpec,
    spec: &NoiseSpec,
    epsilon: f64,
    t_final: f64,
    dt: f64,
    p: f64,
    num_samples: usize,
    base: RngStream,
) -> Result<MonteCarloStat> {
    convolution_stat(grid, spec, epsilon, t_final, dt, SupStatistic::LpSup { p }, num_samples, base)
}

/// Same harness for `E[sup_t ∥(−Δ)^{1−d/4−ϑ/2} Z^ε(t)∥^p]`.
#[allow(clippy::too_many_arguments)]
pub fn convolution_frac_stats(
    grid: GridSpec,
    spec: &NoiseSpec,
    epsilon: f64,
    t_final: f64,
    dt: f64,
    p: f64,
    theta: f64,
    num_samples: usize,
    base: RngStream,
) -> Result<MonteCarloStat> {
    convolution_stat(
        grid,
        spec,
        epsilon,
        t_final,
        dt,
        SupStatistic::FracSup { p, theta },
        num_samples,
        base,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn convolution_stat(
    grid: GridSpec,
    spec: &NoiseSpec,
    epsilon: f64,
    t_final: f64,
    dt: f64,
    stat: SupStatistic,
    num_samples: usize,
    base: RngStream,
) -> Result<MonteCarloStat> {
    if num_samples < 2 {
        return Err(SchError::InvalidParameter("num_samples must be >= 2".into()));
    }
    let mut values = Vec::with_capacity(num_samples);
    for i in 0..num_samples {
        let stream = RngStream::new(base.base_seed, base.stream_id.wrapping_add(i as u64));
        values.push(path_sup_statistic(grid, spec, epsilon, t_final, dt, stat, stream)?);
    }
    Ok(MonteCarloStat::from_values(&values))
}

/// Partial sums of `Tr((−Δ)^{−1}Q) ≈ Σ λ_k^{−1/2−d/4−υ/2}` over
/// `|k|_∞ ≤ N`, `N = 0..=n_max`.
pub fn trace_partial_sum(d: usize, upsilon: f64, n_max: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&upsilon) || upsilon == 0.0 {
        return Err(SchError::InvalidParameter(format!("upsilon = {upsilon} outside (0, 1]")));
    }
    let alpha = -0.5 - d as f64 / 4.0 - upsilon / 2.0;
    eigenvalue_partial_sums(d, alpha, n_max)
}

/// Mode-wise variance check helper: exact one-step variance of mode `k`
/// starting from zero, `ε^{2σ} q_k² (1 − e^{−2ελ_k² dt})/(2ελ_k²)`.
pub fn ou_one_step_variance(
    grid: GridSpec,
    spec: &NoiseSpec,
    epsilon: f64,
    dt: f64,
    k: &[usize],
) -> Result<f64> {
    let lam = grid.eigenvalue(k)?;
    let q = spec.weight(lam, grid.d);
    let a = epsilon * lam * lam;
    let var_unit = if a == 0.0 { dt } else { -(-2.0 * a * dt).exp_m1() / (2.0 * a) };
    Ok(epsilon.powf(2.0 * spec.sigma) * q * q * var_unit)
}

/// Consistency helper used by tests and the harness: verifies that the mean
/// mode stays exactly zero along an OU path when excluded.
pub fn mean_mode_is_zero(state: &OuState) -> bool {
    !state.spec.exclude_mean_mode || state.z.mean() == 0.0
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproducible_streams() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let spec = NoiseSpec::white(1.0);
        let s = RngStream::new(1234, 7);
        let a = white_increment(grid, 0.5, &spec, &mut s.rng()).unwrap();
        let b = white_increment(grid, 0.5, &spec, &mut s.rng()).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
        let c = white_increment(grid, 0.5, &spec, &mut RngStream::new(1234, 8).rng()).unwrap();
        assert_ne!(a.coeffs, c.coeffs);
    }

    #[test]
    fn white_increment_moments() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let spec = NoiseSpec::white(1.0);
        let n = 100_000;
        let mut rng = RngStream::new(99, 0).rng();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let f = white_increment(grid, 1.0, &spec, &mut rng).unwrap();
            let v = f.coeffs[[1, 0]];
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        // variance 1, standard error of the variance ≈ sqrt(2/n)
        let se = (2.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 / (n as f64).sqrt() * 1.5, "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn colored_weight_formula() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let spec = NoiseSpec::colored(1.0, 1.0).unwrap();
        let lam = grid.eigenvalue(&[1, 0]).unwrap();
        // d=2, υ=1: q² = λ^{2(1/2−1/2−1/2)} = 1/λ = 1/π²
        let q = spec.weight(lam, 2);
        assert!((q * q - 1.0 / lam).abs() < 1e-14);
        // Monte Carlo corroboration of the variance/dt ratio
        let n = 50_000;
        let mut rng = RngStream::new(3, 0).rng();
        let mut sumsq = 0.0;
        for _ in 0..n {
            let f = white_increment(grid, 0.25, &spec, &mut rng).unwrap();
            let v = f.coeffs[[1, 0]];
            sumsq += v * v;
        }
        let var_per_dt = sumsq / n as f64 / 0.25;
        let expect = 1.0 / (std::f64::consts::PI * std::f64::consts::PI);
        assert!((var_per_dt - expect).abs() < 4.0 * expect * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn mean_mode_excluded_exactly() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let spec = NoiseSpec::white(1.0);
        let mut rng = RngStream::new(5, 5).rng();
        let f = white_increment(grid, 0.3, &spec, &mut rng).unwrap();
        assert_eq!(f.mean(), 0.0);
        let mut state = OuState::new(grid, spec, 0.25).unwrap();
        let factors = OuFactors::new(grid, &spec, 0.25, 0.01).unwrap();
        for _ in 0..50 {
            factors.step_in_place(&mut state, &mut rng);
        }
        assert_eq!(state.z.mean(), 0.0);
        assert!(mean_mode_is_zero(&state));
    }

    #[test]
    fn ou_step_one_step_variance_matches_ito_isometry() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let spec = NoiseSpec::white(1.0);
        let (eps, dt) = (0.5, 0.05);
        let expect = ou_one_step_variance(grid, &spec, eps, dt, &[1, 0]).unwrap();
        let n = 100_000;
        let mut rng = RngStream::new(17, 0).rng();
        let state = OuState::new(grid, spec, eps).unwrap();
        let mut sumsq = 0.0;
        for _ in 0..n {
            let next = ou_step(&state, dt, &mut rng).unwrap();
            let v = next.z.coeffs[[1, 0]];
            sumsq += v * v;
        }
        let var = sumsq / n as f64;
        assert!((var - expect).abs() < 4.0 * expect * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn stationary_variance_limit() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let spec = NoiseSpec::white(2.0);
        let (eps, sigma) = (0.5, 2.0);
        let lam = grid.eigenvalue(&[1, 1]).unwrap();
        // huge dt: variance → ε^{2σ−1} q²/(2λ²)
        let var = ou_one_step_variance(grid, &spec, eps, 1e6, &[1, 1]).unwrap();
        let expect = eps.powf(2.0 * sigma - 1.0) / (2.0 * lam * lam);
        assert!((var - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn invalid_arguments_error() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let spec = NoiseSpec::white(1.0);
        let mut rng = RngStream::new(0, 0).rng();
        assert!(white_increment(grid, 0.0, &spec, &mut rng).is_err());
        assert!(OuFactors::new(grid, &spec, 0.5, -1.0).is_err());
        assert!(NoiseSpec::colored(1.0, 0.0).is_err());
        assert!(trace_partial_sum(3, 1.5, 8).is_err());
    }

    #[test]
    fn trace_dichotomy_examples() {
        // d=3, υ=0.1: divergent (exponent −1.3 > −3/2)
        let s = trace_partial_sum(3, 0.1, 32).unwrap();
        assert!(s[32] >= 1.5 * s[8], "growth {}", s[32] / s[8]);
        // d=2, υ=1: convergent (exponent −1.5 < −1)
        let s = trace_partial_sum(2, 1.0, 64).unwrap();
        assert!((s[64] - s[32]) / s[32] < 0.05);
        // one-term sum in d=2: λ^{-1/2-d/4-υ/2} at λ = π²
        let s = trace_partial_sum(2, 0.5, 1).unwrap();
        let lam = std::f64::consts::PI * std::f64::consts::PI;
        let expect = 2.0 * lam.powf(-0.5 - 0.5 - 0.25) + (2.0 * lam).powf(-0.5 - 0.5 - 0.25);
        assert!((s[1] - expect).abs() < 1e-13);
    }
}
