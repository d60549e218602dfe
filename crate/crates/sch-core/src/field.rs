//! Real scalar fields on `(0,1)^d` stored as coefficients in the cosine
//! eigenbasis of the Neumann Laplacian.
//!
//! Physical representations live on tensor-product midpoint grids
//! `x_j = (j+1/2)/M`; with the unnormalized transforms of [`crate::transform`]
//! the discrete basis functions are exactly orthonormal under the midpoint
//! quadrature `(1/M^d) Σ_j`, so analysis ∘ synthesis is the identity on the
//! retained modes for every `M ≥ n`.

use std::io::{Read, Write};

use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::{Result, SchError};
use crate::grid::GridSpec;
use crate::transform::with_plan;

const SQRT2: f64 = std::f64::consts::SQRT_2;
const SCHF_MAGIC: &[u8; 4] = b"SCHF";
const SCHF_VERSION: u32 = 1;

/// Scalar field as a dense tensor of cosine coefficients, `coeffs[k]` being
/// the coefficient of `e_k(x) = Π_i c_{k_i} cos(k_i π x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: GridSpec,
    pub coeffs: ArrayD<f64>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralField { grid, coeffs: ArrayD::zeros(IxDyn(&grid.shape())) }
    }

    /// `u ≡ c` (the zero mode carries the mean since `e_0 ≡ 1`).
    pub fn constant(grid: GridSpec, c: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.coeffs[IxDyn(&vec![0; grid.d])] = c;
        f
    }

    /// The single eigenfunction `e_k`.
    pub fn basis_mode(grid: GridSpec, k: &[usize]) -> Result<Self> {
        grid.eigenvalue(k)?;
        let mut f = Self::zeros(grid);
        f.coeffs[IxDyn(k)] = 1.0;
        Ok(f)
    }

    pub fn from_coeffs(grid: GridSpec, coeffs: ArrayD<f64>) -> Result<Self> {
        if coeffs.shape() != grid.shape().as_slice() {
            return Err(SchError::GridMismatch(format!(
                "coefficient tensor shape {:?} does not match grid {:?}",
                coeffs.shape(),
                grid.shape()
            )));
        }
        if !coeffs.iter().all(|v| v.is_finite()) {
            return Err(SchError::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(SpectralField { grid, coeffs })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|v| v.is_finite())
    }

    /// Synthesize values on the `(oversample·n)^d` midpoint grid.
    pub fn to_physical(&self, oversample: usize) -> Result<ArrayD<f64>> {
        if oversample < 1 {
            return Err(SchError::InvalidParameter("oversample must be >= 1".into()));
        }
        let m = oversample * self.grid.n;
        let mut cur = self.coeffs.clone();
        for axis in 0..self.grid.d {
            cur = synth_axis(&cur, axis, m);
        }
        Ok(cur)
    }

    /// Project physical midpoint-grid values onto the first `n` modes per
    /// dimension. The grid size is inferred from `values` (all axes equal,
    /// at least `n`).
    pub fn from_physical(grid: GridSpec, values: &ArrayD<f64>) -> Result<Self> {
        if values.ndim() != grid.d {
            return Err(SchError::GridMismatch(format!(
                "physical tensor has {} axes, grid has d = {}",
                values.ndim(),
                grid.d
            )));
        }
        let m = values.shape()[0];
        if values.shape().iter().any(|&s| s != m) || m < grid.n {
            return Err(SchError::GridMismatch(format!(
                "physical tensor shape {:?} incompatible with n = {}",
                values.shape(),
                grid.n
            )));
        }
        let mut cur = values.clone();
        for axis in 0..grid.d {
            cur = analyze_axis(&cur, axis, grid.n);
        }
        // no finiteness validation here: steppers detect overflow on the
        // freshly advanced state and report blow-up with the step index
        Ok(SpectralField { grid, coeffs: cur })
    }

    /// Project a pointwise function sampled on the oversampled midpoint grid.
    pub fn from_function(
        grid: GridSpec,
        oversample: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let m = oversample * grid.n;
        let shape = vec![m; grid.d];
        let mut x = vec![0.0; grid.d];
        let values = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            for i in 0..grid.d {
                x[i] = (ix[i] as f64 + 0.5) / m as f64;
            }
            f(&x)
        });
        Self::from_physical(grid, &values)
    }

    /// `(−Δ)^s`: multiply mode `k ≠ 0` by `λ_k^s`; the zero mode is kept at
    /// `s = 0` and annihilated otherwise (fractional powers act on the
    /// mean-zero part only).
    pub fn fractional_apply(&self, s: f64) -> Self {
        if s == 0.0 {
            return self.clone();
        }
        let lambdas = self.grid.lambda_tensor();
        let mut out = self.clone();
        ndarray::Zip::from(&mut out.coeffs).and(&lambdas).for_each(|c, &lam| {
            *c = if lam == 0.0 { 0.0 } else { lam.powf(s) * *c };
        });
        out
    }

    /// `∥v∥_s = (Σ_{k≠0} λ_k^s v_k² + v_0²)^{1/2}`; equals the `L²` norm at
    /// `s = 0` by Parseval.
    pub fn norm_sobolev(&self, s: f64) -> Result<f64> {
        if !(-2.0..=2.0).contains(&s) {
            return Err(SchError::InvalidParameter(format!(
                "Sobolev order s = {s} outside [-2, 2]"
            )));
        }
        let lambdas = self.grid.lambda_tensor();
        let mut acc = 0.0;
        ndarray::Zip::from(&self.coeffs).and(&lambdas).for_each(|&c, &lam| {
            if lam == 0.0 {
                acc += c * c;
            } else if s == 0.0 {
                acc += c * c;
            } else {
                acc += lam.powf(s) * c * c;
            }
        });
        Ok(acc.sqrt())
    }

    /// `|v|_1² = ∥∇v∥² = Σ_k λ_k v_k²`.
    pub fn grad_sq(&self) -> f64 {
        let lambdas = self.grid.lambda_tensor();
        let mut acc = 0.0;
        ndarray::Zip::from(&self.coeffs).and(&lambdas).for_each(|&c, &lam| {
            acc += lam * c * c;
        });
        acc
    }

    /// `L^p` norm by midpoint quadrature on the grid oversampled by the
    /// grid's `quad_oversample`. Quadrature error is part of the reported
    /// number (exact for `p ∈ {2, 4}` of band-limited fields at oversample 2).
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        self.norm_lp_at(p, self.grid.quad_oversample)
    }

    pub fn norm_lp_at(&self, p: f64, oversample: usize) -> Result<f64> {
        if p < 1.0 {
            return Err(SchError::InvalidParameter(format!("Lp order p = {p} < 1")));
        }
        let phys = self.to_physical(oversample)?;
        Ok(lp_norm_of_physical(&phys, p))
    }

    /// Max of `|u|` over the oversampled physical grid (the discrete stand-in
    /// for `∥u∥_{C(D)}`).
    pub fn sup_abs(&self, oversample: usize) -> Result<f64> {
        let phys = self.to_physical(oversample)?;
        Ok(phys.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
    }

    /// `m(u) = (1/|D|) ∫ u = u_0`.
    pub fn mean(&self) -> f64 {
        self.coeffs[IxDyn(&vec![0; self.grid.d])]
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(SpectralField { grid: self.grid, coeffs: &self.coeffs + &other.coeffs })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(SpectralField { grid: self.grid, coeffs: &self.coeffs - &other.coeffs })
    }

    pub fn scaled(&self, a: f64) -> Self {
        SpectralField { grid: self.grid, coeffs: &self.coeffs * a }
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(SchError::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Binary snapshot: magic `SCHF`, format version, `d`, `n` (little-endian
    /// u32), then `n^d` coefficients as little-endian f64 in row-major
    /// multi-index order.
    pub fn write_schf<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SCHF_MAGIC)?;
        w.write_all(&SCHF_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.d as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        for v in self.coeffs.as_standard_layout().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read a snapshot written by [`SpectralField::write_schf`]. The format
    /// does not persist `quad_oversample`; the returned grid uses the
    /// default 2.
    pub fn read_schf<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SCHF_MAGIC {
            return Err(SchError::BadSnapshot("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != SCHF_VERSION {
            return Err(SchError::BadSnapshot(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let d = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let n = u32::from_le_bytes(word) as usize;
        let grid = GridSpec::new(d, n, 2)
            .map_err(|e| SchError::BadSnapshot(format!("bad header: {e}")))?;
        let count = grid.modes();
        let mut data = vec![0.0f64; count];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        let coeffs = ArrayD::from_shape_vec(IxDyn(&grid.shape()), data)
            .map_err(|e| SchError::BadSnapshot(e.to_string()))?;
        SpectralField::from_coeffs(grid, coeffs)
    }
}

/// `((1/M^d) Σ_j |u_j|^p)^{1/p}` on an already synthesized physical tensor.
pub fn lp_norm_of_physical(phys: &ArrayD<f64>, p: f64) -> f64 {
    let inv_vol = 1.0 / phys.len() as f64;
    if p == 2.0 {
        (phys.iter().map(|v| v * v).sum::<f64>() * inv_vol).sqrt()
    } else {
        (phys.iter().map(|v| v.abs().powf(p)).sum::<f64>() * inv_vol).powf(1.0 / p)
    }
}

/// The `L^p` powers `∥u∥_p^p = (1/M^d) Σ_j |u_j|^p` needed by the time
/// integrals, for p ∈ {4/3, 2, 8/3, 3, 4}, in one pass (no `powf` calls).
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LpPowers {
    pub l43: f64,
    pub l2: f64,
    pub l83: f64,
    pub l3: f64,
    pub l4: f64,
}

pub fn lp_powers_of_physical(phys: &ArrayD<f64>) -> LpPowers {
    let mut acc = LpPowers::default();
    for &v in phys.iter() {
        let a = v.abs();
        let a2 = a * a;
        let a43 = a * a.cbrt();
        acc.l43 += a43;
        acc.l2 += a2;
        acc.l83 += a43 * a43;
        acc.l3 += a2 * a;
        acc.l4 += a2 * a2;
    }
    let inv_vol = 1.0 / phys.len() as f64;
    acc.l43 *= inv_vol;
    acc.l2 *= inv_vol;
    acc.l83 *= inv_vol;
    acc.l3 *= inv_vol;
    acc.l4 *= inv_vol;
    acc
}

fn axis_scale(k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        SQRT2
    }
}

fn synth_axis(src: &ArrayD<f64>, axis: usize, m_out: usize) -> ArrayD<f64> {
    let n_in = src.shape()[axis];
    let mut shape = src.shape().to_vec();
    shape[axis] = m_out;
    let mut out = ArrayD::zeros(IxDyn(&shape));
    let mut a = vec![0.0; m_out];
    let mut y = vec![0.0; m_out];
    with_plan(m_out, |plan| {
        for (src_lane, mut out_lane) in src
            .lanes(Axis(axis))
            .into_iter()
            .zip(out.lanes_mut(Axis(axis)))
        {
            for (k, v) in src_lane.iter().enumerate() {
                a[k] = v * axis_scale(k);
            }
            a[n_in..].fill(0.0);
            plan.dct3(&a, &mut y);
            for (o, v) in out_lane.iter_mut().zip(&y) {
                *o = *v;
            }
        }
    });
    out
}

fn analyze_axis(src: &ArrayD<f64>, axis: usize, n_out: usize) -> ArrayD<f64> {
    let m = src.shape()[axis];
    let mut shape = src.shape().to_vec();
    shape[axis] = n_out;
    let mut out = ArrayD::zeros(IxDyn(&shape));
    let mut x = vec![0.0; m];
    let mut capital = vec![0.0; m];
    let inv_m = 1.0 / m as f64;
    with_plan(m, |plan| {
        for (src_lane, mut out_lane) in src
            .lanes(Axis(axis))
            .into_iter()
            .zip(out.lanes_mut(Axis(axis)))
        {
            for (b, v) in x.iter_mut().zip(src_lane.iter()) {
                *b = *v;
            }
            plan.dct2(&x, &mut capital);
            for (k, o) in out_lane.iter_mut().enumerate() {
                *o = capital[k] * axis_scale(k) * inv_m;
            }
        }
    });
    out
}

/// The spatial norms tracked along trajectories.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormBundle {
    pub h_minus1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    pub h1: f64,
    /// `∥·∥_s` at the fractional order `s = 2 − d/2 − ϑ`.
    pub h_frac: f64,
    pub mean: f64,
}

impl NormBundle {
    /// Fractional order used for `h_frac`.
    pub fn frac_order(d: usize, theta: f64) -> f64 {
        2.0 - d as f64 / 2.0 - theta
    }

    pub fn compute(f: &SpectralField, theta: f64) -> Result<Self> {
        let phys = f.to_physical(f.grid().quad_oversample)?;
        Self::compute_with_physical(f, &phys, theta)
    }

    /// Variant for hot loops where the physical representation is already
    /// available (any midpoint oversampling).
    pub fn compute_with_physical(
        f: &SpectralField,
        phys: &ArrayD<f64>,
        theta: f64,
    ) -> Result<Self> {
        let powers = lp_powers_of_physical(phys);
        Self::from_parts(f, &powers, theta)
    }

    pub fn from_parts(f: &SpectralField, powers: &LpPowers, theta: f64) -> Result<Self> {
        let s_frac = Self::frac_order(f.grid().d, theta);
        Ok(NormBundle {
            h_minus1: f.norm_sobolev(-1.0)?,
            l2: f.norm_sobolev(0.0)?,
            l3: powers.l3.powf(1.0 / 3.0),
            l4: powers.l4.powf(0.25),
            h1: f.norm_sobolev(1.0)?,
            h_frac: f.norm_sobolev(s_frac)?,
            mean: f.mean(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, seed: u64) -> SpectralField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs = ArrayD::from_shape_fn(IxDyn(&grid.shape()), |_| rng.random_range(-1.0..1.0));
        SpectralField::from_coeffs(grid, coeffs).unwrap()
    }

    #[test]
    fn constant_mode_synthesizes_to_constant() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let f = SpectralField::constant(grid, 1.0);
        let phys = f.to_physical(2).unwrap();
        for v in phys.iter() {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn single_mode_synthesizes_to_scaled_cosine() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let f = SpectralField::basis_mode(grid, &[1, 0]).unwrap();
        let m = 16;
        let phys = f.to_physical(2).unwrap();
        for i in 0..m {
            let x = (i as f64 + 0.5) / m as f64;
            let expect = SQRT2 * (std::f64::consts::PI * x).cos();
            assert!((phys[[i, 3]] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn roundtrip_identity_all_dims() {
        for (d, n) in [(1usize, 16usize), (2, 8), (3, 4)] {
            let grid = GridSpec::new(d, n, 2).unwrap();
            let f = random_field(grid, 42 + d as u64);
            for oversample in [1usize, 2, 3] {
                let phys = f.to_physical(oversample).unwrap();
                let back = SpectralField::from_physical(grid, &phys).unwrap();
                let num = back.sub(&f).unwrap().norm_sobolev(0.0).unwrap();
                let den = f.norm_sobolev(0.0).unwrap();
                assert!(num / den < 1e-12, "d={d} oversample={oversample}: {}", num / den);
            }
        }
    }

    #[test]
    fn parseval_l2_matches_quadrature() {
        let grid = GridSpec::new(2, 16, 2).unwrap();
        for seed in 0..20 {
            let f = random_field(grid, seed);
            let parseval = f.norm_sobolev(0.0).unwrap();
            let quad = f.norm_lp(2.0).unwrap();
            assert!((parseval - quad).abs() < 1e-10 * (1.0 + parseval));
        }
    }

    #[test]
    fn fractional_eigenrelation() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let f = SpectralField::basis_mode(grid, &[1, 0]).unwrap();
        let lam = std::f64::consts::PI * std::f64::consts::PI;
        let up = f.fractional_apply(1.0);
        assert!((up.coeffs[[1, 0]] - lam).abs() < 1e-12);
        let down = f.fractional_apply(-0.5);
        assert!((down.coeffs[[1, 0]] - 1.0 / std::f64::consts::PI).abs() < 1e-12);
        // identity power keeps the mean
        let same = SpectralField::constant(grid, 3.0).fractional_apply(0.0);
        assert_eq!(same.mean(), 3.0);
    }

    #[test]
    fn fractional_inverse_restores_mean_zero_part() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let mut f = random_field(grid, 3);
        f.coeffs[[0, 0]] = 0.0;
        for s in [0.5, 1.0, -1.0, 1.7] {
            let back = f.fractional_apply(s).fractional_apply(-s);
            let err = back.sub(&f).unwrap().norm_sobolev(0.0).unwrap();
            assert!(err < 1e-10, "s={s}: {err}");
        }
    }

    #[test]
    fn sobolev_norm_examples() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        let e10 = SpectralField::basis_mode(grid, &[1, 0]).unwrap();
        let got = e10.norm_sobolev(-1.0).unwrap();
        assert!((got - 1.0 / std::f64::consts::PI).abs() < 1e-13);
        // constant: seminorm vanishes, mean term remains, any s
        let c = SpectralField::constant(grid, -2.5);
        for s in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            assert!((c.norm_sobolev(s).unwrap() - 2.5).abs() < 1e-13);
        }
        assert!(c.norm_sobolev(2.5).is_err());
    }

    #[test]
    fn lp_norm_examples() {
        let g1 = GridSpec::new(1, 16, 2).unwrap();
        // f ≡ 2 has norm 2 for every p
        let two = SpectralField::constant(g1, 2.0);
        for p in [1.0, 4.0 / 3.0, 2.0, 8.0 / 3.0, 3.0, 4.0] {
            assert!((two.norm_lp(p).unwrap() - 2.0).abs() < 1e-12);
        }
        // cos(πx): L² = sqrt(1/2), L⁴ = (3/8)^{1/4}
        let cos = SpectralField::basis_mode(g1, &[1]).unwrap().scaled(1.0 / SQRT2);
        assert!((cos.norm_lp(2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((cos.norm_lp(4.0).unwrap() - (3.0f64 / 8.0).powf(0.25)).abs() < 1e-12);
        assert!(cos.norm_lp(0.5).is_err());
    }

    #[test]
    fn mean_examples() {
        let grid = GridSpec::new(2, 8, 2).unwrap();
        assert_eq!(SpectralField::constant(grid, 3.0).mean(), 3.0);
        let e10 = SpectralField::basis_mode(grid, &[1, 0]).unwrap();
        assert_eq!(e10.mean(), 0.0);
        let both = SpectralField::constant(grid, 3.0).add(&e10).unwrap();
        assert_eq!(both.mean(), 3.0);
    }

    // ∥v∥² ≤ ∥v∥_{H^{-1}} ∥∇v∥ for mean-zero fields.
    #[test]
    fn interpolation_chain_holds() {
        let grid = GridSpec::new(2, 16, 2).unwrap();
        for seed in 100..140 {
            let mut f = random_field(grid, seed);
            f.coeffs[[0, 0]] = 0.0;
            let l2 = f.norm_sobolev(0.0).unwrap();
            let hm1 = f.norm_sobolev(-1.0).unwrap();
            let grad = f.grad_sq().sqrt();
            assert!(l2 * l2 <= hm1 * grad * (1.0 + 1e-12));
        }
    }

    #[test]
    fn schf_roundtrip_and_layout() {
        let grid = GridSpec::new(2, 4, 2).unwrap();
        let f = random_field(grid, 9);
        let mut bytes = Vec::new();
        f.write_schf(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"SCHF");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 4 + 16 * 8);
        // header words little-endian: version 1, d=2, n=4
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 4);
        // first payload float is coeffs[[0,0]] (row-major)
        assert_eq!(
            f64::from_le_bytes(bytes[16..24].try_into().unwrap()),
            f.coeffs[[0, 0]]
        );
        let back = SpectralField::read_schf(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.coeffs, f.coeffs);
        // corrupt magic
        bytes[0] = b'X';
        assert!(SpectralField::read_schf(&mut bytes.as_slice()).is_err());
    }
}
