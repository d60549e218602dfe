//! Time integration of the stochastic equation
//! `du = Δ(−εΔu + f(u)/ε) dt + ε^σ dW`, its deterministic counterpart
//! `∂_t u = Δw`, and the translated (pathwise) form
//! `∂_t Y = −εΔ²Y + (1/ε)Δ(f(u_A+Y+Z) − f(u_A)) − Δr_A`.
//!
//! The stepper is an exponential Euler scheme: per mode
//! `u'_k = E_k u_k + φ_k dt · N_k(u) + ζ_k` with `E_k = exp(−ελ_k² dt)`,
//! `φ_k = (1−E_k)/(ελ_k² dt)` (`φ_0 = 1` in the λ → 0 limit),
//! `N_k(u) = −(λ_k/ε)[f(u)]_k`, and `ζ` the exact Ornstein–Uhlenbeck
//! increment of [`crate::noise`] (`ζ_0 = 0` with the mean mode excluded).
//! The stiff linear semigroup `e^{−tεΔ²}` is handled exactly; the mean mode
//! satisfies `u'_0 = u_0` so mass is conserved to the bit.
//!
//! The cubic is evaluated pointwise on a zero-padded midpoint grid. With
//! pad 2 the products of an n-mode field stay below the first aliased
//! frequency, so the retained modes are alias-free; pad 3 remains available
//! through `dealias_pad`.

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchError};
use crate::field::{lp_powers_of_physical, LpPowers, NormBundle, SpectralField};
use crate::grid::GridSpec;
use crate::noise::{NoiseSpec, OuFactors, OuState, RngStream};

/// `dt ≤ c·ε³` is the stability scale of the explicitly treated `(1/ε)Δf`
/// term; this returns the default `c = 0.1` choice.
pub fn recommended_dt(epsilon: f64) -> f64 {
    0.1 * epsilon.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub epsilon: f64,
    pub grid: GridSpec,
    pub dt: f64,
    /// Horizon `T`.
    pub t_final: f64,
    /// `None` runs the deterministic flow (noise amplitude 0).
    pub noise: Option<NoiseSpec>,
    /// Zero-padding factor for the cubic (`≥ 2`).
    #[serde(default = "default_pad")]
    pub dealias_pad: usize,
    /// `ϑ` in the fractional norm of order `2 − d/2 − ϑ` recorded along
    /// trajectories.
    #[serde(default = "default_theta")]
    pub frac_theta: f64,
}

fn default_pad() -> usize {
    2
}

fn default_theta() -> f64 {
    0.2
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(SchError::InvalidParameter(format!(
                "epsilon = {} outside (0, 1]",
                self.epsilon
            )));
        }
        if self.dt <= 0.0 || self.dt > self.t_final {
            return Err(SchError::InvalidParameter(format!(
                "dt = {} must be in (0, T = {}]",
                self.dt, self.t_final
            )));
        }
        if self.dealias_pad < 2 {
            return Err(SchError::InvalidParameter(format!(
                "dealias_pad = {} < 2 would alias the cubic",
                self.dealias_pad
            )));
        }
        if let Some(noise) = &self.noise {
            noise.validate()?;
        }
        Ok(())
    }
}

/// `f(u) = u³ − u`, evaluated pointwise on the `pad·n` midpoint grid and
/// truncated back to `n` modes per dimension.
pub fn f_eval(u: &SpectralField, pad: usize) -> Result<SpectralField> {
    if pad < 2 {
        return Err(SchError::InvalidParameter(format!(
            "pad = {pad} < 2 would alias the cubic"
        )));
    }
    let phys = u.to_physical(pad)?;
    f_eval_from_physical(u.grid(), &phys)
}

fn f_eval_from_physical(grid: GridSpec, phys: &ArrayD<f64>) -> Result<SpectralField> {
    let f_phys = phys.mapv(|v| v * v * v - v);
    SpectralField::from_physical(grid, &f_phys)
}

/// Residual of the cubic difference identity
/// `f(a) − f(b) = (a−b)f'(a) + (a−b)³ − 3(a−b)²a`.
pub fn taylor_identity_check(a: f64, b: f64) -> f64 {
    let f = |x: f64| x * x * x - x;
    let fp = 3.0 * a * a - 1.0;
    let d = a - b;
    let lhs = f(a) - f(b);
    let rhs = d * fp + d * d * d - 3.0 * d * d * a;
    (lhs - rhs).abs()
}

/// Chemical potential `w = −εΔu + (1/ε)f(u)` with the dealiased cubic
/// (pad = the grid's `quad_oversample`).
pub fn chemical_potential(u: &SpectralField, epsilon: f64) -> Result<SpectralField> {
    let pad = u.grid().quad_oversample.max(2);
    let f = f_eval(u, pad)?;
    let lambdas = u.grid().lambda_tensor();
    let mut w = SpectralField::zeros(u.grid());
    ndarray::Zip::from(&mut w.coeffs)
        .and(&u.coeffs)
        .and(&f.coeffs)
        .and(&lambdas)
        .for_each(|w, &uk, &fk, &lam| {
            *w = epsilon * lam * uk + fk / epsilon;
        });
    Ok(w)
}

/// Ginzburg–Landau free energy `∫ (ε|∇u|²/2 + F(u)/ε)`, `F(u) = (u²−1)²/4`.
pub fn ginzburg_landau_energy(u: &SpectralField, epsilon: f64) -> Result<f64> {
    let phys = u.to_physical(u.grid().quad_oversample)?;
    let mut potential = 0.0;
    for &v in phys.iter() {
        let w = v * v - 1.0;
        potential += w * w * 0.25;
    }
    potential /= phys.len() as f64;
    Ok(0.5 * epsilon * u.grad_sq() + potential / epsilon)
}

/// Precomputed per-mode exponential-Euler factors for fixed parameters.
pub struct Stepper {
    pub params: ModelParams,
    pad: usize,
    decay: Vec<f64>,
    /// `φ_k dt · (−λ_k/ε)` applied to `[f]_k` (0 at k = 0).
    nl_factor: Vec<f64>,
    /// `φ_k dt · λ_k` applied to `[r_A]_k` in the translated form.
    ra_factor: Vec<f64>,
    ou: Option<OuFactors>,
}

impl Stepper {
    pub fn new(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        let grid = params.grid;
        let eps = params.epsilon;
        let dt = params.dt;
        let lambdas = grid.lambda_tensor();
        let mut decay = Vec::with_capacity(lambdas.len());
        let mut nl_factor = Vec::with_capacity(lambdas.len());
        let mut ra_factor = Vec::with_capacity(lambdas.len());
        for &lam in lambdas.iter() {
            let a = eps * lam * lam;
            decay.push((-a * dt).exp());
            // φ_k dt = (1−E_k)/(ελ_k²), with the λ → 0 limit dt
            let phi_dt = if a == 0.0 { dt } else { -(-a * dt).exp_m1() / a };
            nl_factor.push(-phi_dt * lam / eps);
            ra_factor.push(phi_dt * lam);
        }
        let ou = match &params.noise {
            Some(spec) => Some(OuFactors::new(grid, spec, eps, dt)?),
            None => None,
        };
        let pad = params.dealias_pad.max(grid.quad_oversample);
        Ok(Stepper { params: *params, pad, decay, nl_factor, ra_factor, ou })
    }

    /// Physical oversampling used for both dealiasing and quadrature.
    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn ou_factors(&self) -> Option<&OuFactors> {
        self.ou.as_ref()
    }

    fn advance_linear_plus_nl(
        &self,
        u: &SpectralField,
        f_coeffs: &SpectralField,
        noise_incr: Option<&SpectralField>,
    ) -> SpectralField {
        let grid = u.grid();
        let mut next = SpectralField::zeros(grid);
        let out = next.coeffs.as_slice_mut().expect("standard layout");
        let us = u.coeffs.as_slice().expect("standard layout");
        let fs = f_coeffs.coeffs.as_slice().expect("standard layout");
        for i in 0..out.len() {
            out[i] = self.decay[i] * us[i] + self.nl_factor[i] * fs[i];
        }
        if let Some(z) = noise_incr {
            let zs = z.coeffs.as_slice().expect("standard layout");
            for i in 0..out.len() {
                out[i] += zs[i];
            }
        }
        next
    }

    /// One stochastic step given the current padded physical representation;
    /// the drawn increment also advances `ou` so the convolution path stays
    /// coupled to the solution path.
    pub fn step_with_physical(
        &self,
        u: &SpectralField,
        phys: &ArrayD<f64>,
        ou: Option<(&mut OuState, &mut ChaCha8Rng)>,
    ) -> Result<SpectralField> {
        let f_coeffs = f_eval_from_physical(u.grid(), phys)?;
        let incr = match (self.ou.as_ref(), ou) {
            (Some(factors), Some((state, rng))) => {
                let incr = factors.sample_increment(u.grid(), rng);
                let zs = state.z.coeffs.as_slice_mut().expect("standard layout");
                let is = incr.coeffs.as_slice().expect("standard layout");
                for (i, z) in zs.iter_mut().enumerate() {
                    *z = factors.decay[i] * *z + is[i];
                }
                state.t += factors.dt;
                Some(incr)
            }
            _ => None,
        };
        Ok(self.advance_linear_plus_nl(u, &f_coeffs, incr.as_ref()))
    }

    pub fn step_deterministic(&self, u: &SpectralField) -> Result<SpectralField> {
        let phys = u.to_physical(self.pad)?;
        let f_coeffs = f_eval_from_physical(u.grid(), &phys)?;
        Ok(self.advance_linear_plus_nl(u, &f_coeffs, None))
    }

    /// One step of the translated form: `N_k(Y) = −(λ_k/ε)[f(u_A+Y+Z) −
    /// f(u_A)]_k + λ_k [r_A]_k`, no noise term (randomness enters through Z
    /// only).
    pub fn step_translated(
        &self,
        y: &SpectralField,
        cache: &AnsatzCache,
        y_phys: &ArrayD<f64>,
        z_phys: &ArrayD<f64>,
    ) -> Result<SpectralField> {
        let combined = y_phys + z_phys + &cache.ua_phys;
        let f_combined = f_eval_from_physical(y.grid(), &combined)?;
        let f_diff = f_combined.sub(&cache.f_ua)?;
        let mut next = self.advance_linear_plus_nl(y, &f_diff, None);
        let out = next.coeffs.as_slice_mut().expect("standard layout");
        let ras = cache.ra.coeffs.as_slice().expect("standard layout");
        for i in 0..out.len() {
            out[i] += self.ra_factor[i] * ras[i];
        }
        Ok(next)
    }
}

/// Static ansatz data reused across translated steps.
pub struct AnsatzCache {
    ua: SpectralField,
    ra: SpectralField,
    ua_phys: ArrayD<f64>,
    f_ua: SpectralField,
}

impl AnsatzCache {
    pub fn new(stepper: &Stepper, u_ansatz: &SpectralField, r_ansatz: &SpectralField) -> Result<Self> {
        u_ansatz.check_same_grid(r_ansatz)?;
        let ua_phys = u_ansatz.to_physical(stepper.pad)?;
        let f_ua = f_eval_from_physical(u_ansatz.grid(), &ua_phys)?;
        Ok(AnsatzCache {
            ua: u_ansatz.clone(),
            ra: r_ansatz.clone(),
            ua_phys,
            f_ua,
        })
    }

    pub fn u_ansatz(&self) -> &SpectralField {
        &self.ua
    }
}

/// One stochastic exponential-Euler step (one-shot form; loops should use
/// [`Stepper`] + [`run`]).
pub fn step(
    u: &SpectralField,
    params: &ModelParams,
    ou: &OuState,
    rng: &mut ChaCha8Rng,
) -> Result<(SpectralField, OuState)> {
    let stepper = Stepper::new(params)?;
    let phys = u.to_physical(stepper.pad)?;
    let mut ou_next = ou.clone();
    let next = stepper.step_with_physical(u, &phys, Some((&mut ou_next, rng)))?;
    if !next.is_finite() {
        return Err(SchError::BlowUp { step: 0, t: ou.t });
    }
    Ok((next, ou_next))
}

pub fn step_deterministic(u: &SpectralField, params: &ModelParams) -> Result<SpectralField> {
    let mut p = *params;
    p.noise = None;
    let stepper = Stepper::new(&p)?;
    let next = stepper.step_deterministic(u)?;
    if !next.is_finite() {
        return Err(SchError::BlowUp { step: 0, t: 0.0 });
    }
    Ok(next)
}

pub fn step_translated(
    y: &SpectralField,
    params: &ModelParams,
    u_ansatz: &SpectralField,
    r_ansatz: &SpectralField,
    z: &SpectralField,
) -> Result<SpectralField> {
    let stepper = Stepper::new(params)?;
    let cache = AnsatzCache::new(&stepper, u_ansatz, r_ansatz)?;
    let y_phys = y.to_physical(stepper.pad)?;
    let z_phys = z.to_physical(stepper.pad)?;
    let next = stepper.step_translated(y, &cache, &y_phys, &z_phys)?;
    if !next.is_finite() {
        return Err(SchError::BlowUp { step: 0, t: 0.0 });
    }
    Ok(next)
}

/// Recorded trajectory: times, optional state snapshots, a [`NormBundle`]
/// per recorded time and the running left-endpoint time integrals
/// `∫∥·∥^p_{L^p}` (p = 4/3, 2, 8/3, 3, 4) and `∫∥∇·∥²`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub norms: Vec<NormBundle>,
    pub int_l43_pow: Vec<f64>,
    pub int_l2_sq: Vec<f64>,
    pub int_l83_pow: Vec<f64>,
    pub int_l3_cubed: Vec<f64>,
    pub int_l4_fourth: Vec<f64>,
    pub int_grad_sq: Vec<f64>,
    pub dt: f64,
}

impl Trajectory {
    fn with_capacity(cap: usize, dt: f64) -> Self {
        Trajectory {
            times: Vec::with_capacity(cap),
            states: Vec::new(),
            norms: Vec::with_capacity(cap),
            int_l43_pow: Vec::with_capacity(cap),
            int_l2_sq: Vec::with_capacity(cap),
            int_l83_pow: Vec::with_capacity(cap),
            int_l3_cubed: Vec::with_capacity(cap),
            int_l4_fourth: Vec::with_capacity(cap),
            int_grad_sq: Vec::with_capacity(cap),
            dt,
        }
    }

    fn record(
        &mut self,
        t: f64,
        state: &SpectralField,
        norms: NormBundle,
        acc: &Integrals,
        keep_state: bool,
    ) {
        self.times.push(t);
        if keep_state {
            self.states.push(state.clone());
        }
        self.norms.push(norms);
        self.int_l43_pow.push(acc.l43);
        self.int_l2_sq.push(acc.l2);
        self.int_l83_pow.push(acc.l83);
        self.int_l3_cubed.push(acc.l3);
        self.int_l4_fourth.push(acc.l4);
        self.int_grad_sq.push(acc.grad_sq);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    /// CSV of the norm series: `t, h_minus1, l2, l3, l4, h1, h_frac, mean,
    /// int_l3_cubed, int_l4_fourth`.
    pub fn norm_series_csv(&self) -> String {
        let mut out =
            String::from("t,h_minus1,l2,l3,l4,h1,h_frac,mean,int_l3_cubed,int_l4_fourth\n");
        for (i, t) in self.times.iter().enumerate() {
            let n = &self.norms[i];
            out.push_str(&format!(
                "{t},{},{},{},{},{},{},{},{},{}\n",
                n.h_minus1,
                n.l2,
                n.l3,
                n.l4,
                n.h1,
                n.h_frac,
                n.mean,
                self.int_l3_cubed[i],
                self.int_l4_fourth[i]
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Integrals {
    l43: f64,
    l2: f64,
    l83: f64,
    l3: f64,
    l4: f64,
    grad_sq: f64,
}

impl Integrals {
    fn accumulate(&mut self, dt: f64, powers: &LpPowers, grad_sq: f64) {
        self.l43 += dt * powers.l43;
        self.l2 += dt * powers.l2;
        self.l83 += dt * powers.l83;
        self.l3 += dt * powers.l3;
        self.l4 += dt * powers.l4;
        self.grad_sq += dt * grad_sq;
    }
}

/// What the integrator actually integrates.
pub enum RunMode<'a> {
    /// The stochastic equation for `u`.
    Stochastic { stream: RngStream },
    /// The deterministic flow (noise ignored).
    Deterministic,
    /// The translated form for `Y`; `Z` is advanced internally by exact OU
    /// transitions from the same stream. `initial` is `Y(0)`.
    Translated {
        u_ansatz: &'a SpectralField,
        r_ansatz: &'a SpectralField,
        stream: RngStream,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Record every `record_stride`-th step (t = 0 and t = T always).
    pub record_stride: usize,
    /// Keep state snapshots in the trajectory (norm series are always kept).
    pub record_states: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_stride: 1, record_states: true }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    /// The `Z` trajectory in translated mode.
    pub convolution: Option<Trajectory>,
}

/// Integrate and record. Blow-up aborts with the offending step index.
pub fn run(
    params: &ModelParams,
    initial: &SpectralField,
    mode: RunMode,
    opts: &RunOptions,
    mut observer: Option<&mut dyn FnMut(usize, f64, &SpectralField)>,
) -> Result<RunOutput> {
    params.validate()?;
    if initial.grid() != params.grid {
        return Err(SchError::GridMismatch("initial datum on wrong grid".into()));
    }
    let stepper = Stepper::new(params)?;
    let steps = (params.t_final / params.dt).round().max(1.0) as usize;
    let stride = opts.record_stride.max(1);
    let n_rec = steps / stride + 2;
    let theta = params.frac_theta;

    let mut u = initial.clone();
    let mut acc = Integrals::default();
    let mut traj = Trajectory::with_capacity(n_rec, params.dt);

    match mode {
        RunMode::Stochastic { stream } => {
            let mut rng = stream.rng();
            let noise_spec = params.noise;
            let mut ou = match noise_spec {
                Some(spec) => Some(OuState::new(params.grid, spec, params.epsilon)?),
                None => None,
            };
            for m in 0..=steps {
                let t = m as f64 * params.dt;
                let phys = u.to_physical(stepper.pad)?;
                let powers = lp_powers_of_physical(&phys);
                if m % stride == 0 || m == steps {
                    let norms = NormBundle::from_parts(&u, &powers, theta)?;
                    traj.record(t, &u, norms, &acc, opts.record_states);
                    if let Some(obs) = observer.as_mut() {
                        obs(m, t, &u);
                    }
                }
                if m == steps {
                    break;
                }
                acc.accumulate(params.dt, &powers, u.grad_sq());
                u = match ou.as_mut() {
                    Some(state) => stepper.step_with_physical(&u, &phys, Some((state, &mut rng)))?,
                    None => stepper.step_with_physical(&u, &phys, None)?,
                };
                if !u.is_finite() {
                    return Err(SchError::BlowUp { step: m + 1, t: t + params.dt });
                }
            }
        }
        RunMode::Deterministic => {
            for m in 0..=steps {
                let t = m as f64 * params.dt;
                let phys = u.to_physical(stepper.pad)?;
                let powers = lp_powers_of_physical(&phys);
                if m % stride == 0 || m == steps {
                    let norms = NormBundle::from_parts(&u, &powers, theta)?;
                    traj.record(t, &u, norms, &acc, opts.record_states);
                    if let Some(obs) = observer.as_mut() {
                        obs(m, t, &u);
                    }
                }
                if m == steps {
                    break;
                }
                acc.accumulate(params.dt, &powers, u.grad_sq());
                u = stepper.step_with_physical(&u, &phys, None)?;
                if !u.is_finite() {
                    return Err(SchError::BlowUp { step: m + 1, t: t + params.dt });
                }
            }
        }
        RunMode::Translated { u_ansatz, r_ansatz, stream } => {
            // noise: None integrates the deterministic reduction (Z ≡ 0)
            let cache = AnsatzCache::new(&stepper, u_ansatz, r_ansatz)?;
            let mut rng = stream.rng();
            let mut z = match params.noise {
                Some(spec) => Some((
                    OuState::new(params.grid, spec, params.epsilon)?,
                    stepper.ou_factors().expect("noise spec present").clone(),
                )),
                None => None,
            };
            let zero_state = SpectralField::zeros(params.grid);
            let mut z_acc = Integrals::default();
            let mut z_traj = Trajectory::with_capacity(n_rec, params.dt);
            for m in 0..=steps {
                let t = m as f64 * params.dt;
                let z_field = z.as_ref().map(|(s, _)| &s.z).unwrap_or(&zero_state);
                let y_phys = u.to_physical(stepper.pad)?;
                let z_phys = z_field.to_physical(stepper.pad)?;
                let y_powers = lp_powers_of_physical(&y_phys);
                let z_powers = lp_powers_of_physical(&z_phys);
                if m % stride == 0 || m == steps {
                    let norms = NormBundle::from_parts(&u, &y_powers, theta)?;
                    traj.record(t, &u, norms, &acc, opts.record_states);
                    let z_norms = NormBundle::from_parts(z_field, &z_powers, theta)?;
                    z_traj.record(t, z_field, z_norms, &z_acc, opts.record_states);
                    if let Some(obs) = observer.as_mut() {
                        obs(m, t, &u);
                    }
                }
                if m == steps {
                    break;
                }
                acc.accumulate(params.dt, &y_powers, u.grad_sq());
                z_acc.accumulate(params.dt, &z_powers, z_field.grad_sq());
                u = stepper.step_translated(&u, &cache, &y_phys, &z_phys)?;
                if let Some((state, factors)) = z.as_mut() {
                    factors.step_in_place(state, &mut rng);
                }
                if !u.is_finite() {
                    return Err(SchError::BlowUp { step: m + 1, t: t + params.dt });
                }
            }
            return Ok(RunOutput { trajectory: traj, convolution: Some(z_traj) });
        }
    }
    Ok(RunOutput { trajectory: traj, convolution: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSpec;

    fn grid2(n: usize) -> GridSpec {
        GridSpec::new(2, n, 2).unwrap()
    }

    fn params_no_noise(n: usize, epsilon: f64, dt: f64, t_final: f64) -> ModelParams {
        ModelParams {
            epsilon,
            grid: grid2(n),
            dt,
            t_final,
            noise: None,
            dealias_pad: 2,
            frac_theta: 0.2,
        }
    }

    #[test]
    fn f_eval_constants() {
        let g = grid2(8);
        for (c, want) in [(1.0, 0.0), (0.0, 0.0), (2.0, 6.0)] {
            let u = SpectralField::constant(g, c);
            let f = f_eval(&u, 2).unwrap();
            assert!((f.mean() - want).abs() < 1e-12, "c={c}");
            let rest: f64 = f
                .coeffs
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                - f.mean() * f.mean();
            assert!(rest.abs() < 1e-22);
        }
        assert!(f_eval(&SpectralField::constant(g, 1.0), 1).is_err());
    }

    #[test]
    fn cubic_identity_residuals() {
        assert_eq!(taylor_identity_check(0.7, 0.7), 0.0);
        assert!(taylor_identity_check(1.0, -1.0) < 1e-14);
        let mut rng = RngStream::new(11, 0).rng();
        use rand::Rng;
        let max = (0..1000)
            .map(|_| {
                let a = rng.random_range(-2.0..2.0);
                let b = rng.random_range(-2.0..2.0);
                taylor_identity_check(a, b)
            })
            .fold(0.0f64, f64::max);
        assert!(max <= 1e-12, "max residual {max}");
    }

    #[test]
    fn chemical_potential_cases() {
        let g = grid2(8);
        let w = chemical_potential(&SpectralField::constant(g, 1.0), 0.3).unwrap();
        assert!(w.norm_sobolev(0.0).unwrap() < 1e-12);
        let w = chemical_potential(&SpectralField::constant(g, 0.0), 0.3).unwrap();
        assert!(w.norm_sobolev(0.0).unwrap() < 1e-20);
        // linear regime: w ≈ (ελ − 1/ε) u for u = δ e_{(1,0)}
        let eps = 0.5;
        let delta = 1e-3;
        let u = SpectralField::basis_mode(g, &[1, 0]).unwrap().scaled(delta);
        let w = chemical_potential(&u, eps).unwrap();
        let lam = g.eigenvalue(&[1, 0]).unwrap();
        let expect = (eps * lam - 1.0 / eps) * delta;
        assert!((w.coeffs[[1, 0]] - expect).abs() < 1e-8);
    }

    #[test]
    fn pure_phases_are_fixed_points() {
        let p = params_no_noise(8, 0.5, 1e-4, 1.0);
        for c in [1.0, -1.0, 0.0] {
            let u = SpectralField::constant(p.grid, c);
            let next = step_deterministic(&u, &p).unwrap();
            let diff = next.sub(&u).unwrap().norm_sobolev(0.0).unwrap();
            assert!(diff < 1e-15, "c={c}: {diff}");
        }
    }

    #[test]
    fn linearized_growth_factor_matches_scalar_ode() {
        // tiny single-mode amplitude makes f(u) ≈ −u, so the step reduces to
        // the scalar ODE du = (−ελ² + λ/ε)u dt
        let g = grid2(8);
        let eps = 0.5;
        let lam = g.eigenvalue(&[1, 0]).unwrap();
        let exact_rate = -eps * lam * lam + lam / eps;
        let mut errs = Vec::new();
        for dt in [2e-4, 1e-4] {
            let p = params_no_noise(8, eps, dt, 1.0);
            let u = SpectralField::basis_mode(g, &[1, 0]).unwrap().scaled(1e-7);
            let next = step_deterministic(&u, &p).unwrap();
            let factor = next.coeffs[[1, 0]] / u.coeffs[[1, 0]];
            errs.push((factor - (exact_rate * dt).exp()).abs());
        }
        // first order in dt for the nonlinear term: halving dt cuts the
        // defect by about 4 here because the leading defect is O(dt²)
        assert!(errs[1] < errs[0] / 2.5, "errors {errs:?}");
        assert!(errs[0] < 1e-4);
    }

    #[test]
    fn mass_conserved_over_stochastic_steps() {
        let mut p = params_no_noise(8, 0.5, 1e-3, 2.0);
        p.noise = Some(NoiseSpec::white(1.0));
        let stepper = Stepper::new(&p).unwrap();
        let mut u = SpectralField::constant(p.grid, 0.3);
        let m0 = u.mean();
        let mut ou = OuState::new(p.grid, p.noise.unwrap(), p.epsilon).unwrap();
        let mut rng = RngStream::new(2024, 0).rng();
        for _ in 0..2000 {
            let phys = u.to_physical(stepper.pad()).unwrap();
            u = stepper.step_with_physical(&u, &phys, Some((&mut ou, &mut rng))).unwrap();
        }
        assert!((u.mean() - m0).abs() <= 1e-12);
        assert_eq!(ou.z.mean(), 0.0);
    }

    #[test]
    fn energy_dissipates_deterministically() {
        let g = grid2(16);
        let eps = 0.5;
        let u0 = SpectralField::from_function(g, 2, |x| {
            0.2 * (std::f64::consts::PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos()
                + 0.1 * (2.0 * std::f64::consts::PI * x[0]).cos()
        })
        .unwrap();
        for dt in [2e-4, 1e-4] {
            let p = params_no_noise(16, eps, dt, 40.0 * dt);
            let out = run(&p, &u0, RunMode::Deterministic, &RunOptions::default(), None).unwrap();
            let mut prev = f64::INFINITY;
            for state in &out.trajectory.states {
                let e = ginzburg_landau_energy(state, eps).unwrap();
                assert!(e <= prev * (1.0 + 1e-10), "energy rose: {prev} -> {e}");
                prev = e;
            }
        }
    }

    #[test]
    fn first_order_self_convergence() {
        let g = grid2(8);
        let eps = 0.5;
        let u0 = SpectralField::from_function(g, 2, |x| {
            0.3 * (std::f64::consts::PI * x[0]).cos()
                + 0.2 * (std::f64::consts::PI * x[1]).cos()
        })
        .unwrap();
        let t_final = 0.02;
        let mut finals = Vec::new();
        for dt in [4e-4, 2e-4, 1e-4] {
            let p = params_no_noise(8, eps, dt, t_final);
            let out = run(
                &p,
                &u0,
                RunMode::Deterministic,
                &RunOptions { record_stride: usize::MAX, record_states: true },
                None,
            )
            .unwrap();
            finals.push(out.trajectory.states.last().unwrap().clone());
        }
        let d01 = finals[0].sub(&finals[1]).unwrap().norm_sobolev(0.0).unwrap();
        let d12 = finals[1].sub(&finals[2]).unwrap().norm_sobolev(0.0).unwrap();
        let ratio = d01 / d12;
        assert!((1.5..3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn translated_form_zero_data_stays_zero() {
        // Z ≡ 0 (noise spec present but we freeze Z by never stepping it via
        // the free function), rA ≡ 0, uA an equilibrium: Y stays 0
        let g = grid2(8);
        let mut p = params_no_noise(8, 0.5, 1e-4, 1.0);
        p.noise = Some(NoiseSpec::white(8.0));
        let ua = SpectralField::constant(g, 1.0);
        let ra = SpectralField::zeros(g);
        let z = SpectralField::zeros(g);
        let y = SpectralField::zeros(g);
        let y1 = step_translated(&y, &p, &ua, &ra, &z).unwrap();
        assert!(y1.norm_sobolev(0.0).unwrap() < 1e-15);
    }

    #[test]
    fn integrator_forms_agree_on_matched_paths() {
        // uA static with wA ≡ 0 ⇒ rA = −chemical_potential(uA) makes
        // (uA, wA) an exact ansatz pair, and for a static ansatz the
        // exponential-Euler factors cancel algebraically: the discrete
        // translation identity u = uA + Y + Z holds to rounding at every
        // step (stronger than the O(dt) agreement of the continuous forms).
        let g = grid2(8);
        let eps = 0.5;
        let sigma = 2.0;
        let ua = SpectralField::from_function(g, 2, |x| {
            0.4 * (std::f64::consts::PI * x[0]).cos() * (2.0 * std::f64::consts::PI * x[1]).cos()
        })
        .unwrap();
        let ra = chemical_potential(&ua, eps).unwrap().scaled(-1.0);
        let t_final = 0.01;
        for dt in [2e-4, 1e-4] {
            let p = ModelParams {
                epsilon: eps,
                grid: g,
                dt,
                t_final,
                noise: Some(NoiseSpec::white(sigma)),
                dealias_pad: 2,
                frac_theta: 0.2,
            };
            let stream = RngStream::new(77, 3);
            let opts = RunOptions { record_stride: usize::MAX, record_states: true };
            let full = run(&p, &ua, RunMode::Stochastic { stream }, &opts, None).unwrap();
            let translated = run(
                &p,
                &SpectralField::zeros(g),
                RunMode::Translated { u_ansatz: &ua, r_ansatz: &ra, stream },
                &opts,
                None,
            )
            .unwrap();
            let u_end = full.trajectory.states.last().unwrap();
            let y_end = translated.trajectory.states.last().unwrap();
            let z_end = translated.convolution.as_ref().unwrap().states.last().unwrap();
            let recon = ua.add(y_end).unwrap().add(z_end).unwrap();
            let diff = u_end.sub(&recon).unwrap().norm_sobolev(0.0).unwrap();
            assert!(diff < 1e-12, "dt={dt}: translation defect {diff}");
        }
    }

    #[test]
    fn run_bookkeeping() {
        // T = dt → exactly 2 recorded states
        let p = params_no_noise(8, 0.5, 1e-3, 1e-3);
        let u0 = SpectralField::constant(p.grid, 1.0);
        let out = run(&p, &u0, RunMode::Deterministic, &RunOptions::default(), None).unwrap();
        assert_eq!(out.trajectory.len(), 2);
        assert_eq!(out.trajectory.times[0], 0.0);

        // zero noise, u ≡ 1: all norms constant, ∫∥u∥⁴ over T = 1 is 1
        let p = params_no_noise(8, 0.5, 0.01, 1.0);
        let out = run(&p, &u0, RunMode::Deterministic, &RunOptions::default(), None).unwrap();
        let traj = &out.trajectory;
        for n in &traj.norms {
            assert!((n.l2 - 1.0).abs() < 1e-12);
            assert!((n.l4 - 1.0).abs() < 1e-12);
            assert!((n.mean - 1.0).abs() < 1e-12);
        }
        let last = traj.int_l4_fourth.last().unwrap();
        assert!((last - 1.0).abs() < 1e-10, "∫∥u∥⁴ = {last}");
        // running integrals nondecreasing
        for w in traj.int_l3_cubed.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // CSV header contract
        assert!(traj
            .norm_series_csv()
            .starts_with("t,h_minus1,l2,l3,l4,h1,h_frac,mean,int_l3_cubed,int_l4_fourth"));
    }

    #[test]
    fn blow_up_reports_step() {
        // absurdly large dt with strong nonlinearity drives overflow
        let p = ModelParams {
            epsilon: 0.05,
            grid: grid2(8),
            dt: 10.0,
            t_final: 100.0,
            noise: None,
            dealias_pad: 2,
            frac_theta: 0.2,
        };
        let u0 = SpectralField::from_function(p.grid, 2, |x| {
            5.0 * (std::f64::consts::PI * x[0]).cos()
        })
        .unwrap();
        match run(&p, &u0, RunMode::Deterministic, &RunOptions::default(), None) {
            Err(SchError::BlowUp { step, .. }) => assert!(step >= 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
