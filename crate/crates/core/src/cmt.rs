//! Lossless two-port coupled-mode resonator model.
//!
//! For a drive at angular frequency `omega` the mode amplitudes and outgoing
//! waves are
//!
//! ```text
//! M(omega) = i (omega - W) + K K^T / 2
//! a        = M^-1 K s+
//! s-       = C (s+ - K^T a) = C sigma s+,   sigma = I - K^T M^-1 K
//! ```
//!
//! with `W = diag(resonance_freqs)`, `K` the real `n_modes x 2` coupling
//! matrix and `C` a constant unitary background. `sigma` is unitary for
//! real `W`, so the transfer function `H = C sigma` conserves power.
//!
//! Transmission through the filter is `|H[1][0]|^2` (port 0 in, port 1 out).

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::SpectralGrid;

pub const N_PORTS: usize = 2;
const CONDITION_LIMIT: f64 = 1e14;
const UNITARY_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Port-swap background: unit transmission, no reflection.
pub fn port_swap() -> Matrix2<Complex64> {
    Matrix2::new(ZERO, ONE, ONE, ZERO)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmtModel {
    resonance_freqs: Vec<f64>,
    /// n_modes x 2, real.
    coupling: DMatrix<f64>,
    background: Matrix2<Complex64>,
}

/// Incoming and outgoing wave amplitudes at the two ports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortWaves {
    pub s_plus: Vector2<Complex64>,
    pub s_minus: Vector2<Complex64>,
}

impl CmtModel {
    pub fn new(
        resonance_freqs: Vec<f64>,
        coupling: DMatrix<f64>,
        background: Matrix2<Complex64>,
    ) -> Result<Self> {
        let n = resonance_freqs.len();
        if coupling.nrows() != n || coupling.ncols() != N_PORTS {
            return Err(Error::DimensionMismatch(format!(
                "coupling must be {n}x{N_PORTS}, got {}x{}",
                coupling.nrows(),
                coupling.ncols()
            )));
        }
        if resonance_freqs.iter().chain(coupling.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        let dev = (background.adjoint() * background - Matrix2::identity())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if !(dev <= UNITARY_TOL) {
            return Err(Error::NonUnitaryBackground(dev));
        }
        Ok(Self {
            resonance_freqs,
            coupling,
            background,
        })
    }

    /// Model with the port-swap background. `coupling` is row-major, two entries per mode.
    pub fn with_swap_background(resonance_freqs: Vec<f64>, coupling: &[f64]) -> Result<Self> {
        let n = resonance_freqs.len();
        if coupling.len() != n * N_PORTS {
            return Err(Error::DimensionMismatch(format!(
                "{} coupling entries for {n} modes",
                coupling.len()
            )));
        }
        Self::new(
            resonance_freqs,
            DMatrix::from_row_slice(n, N_PORTS, coupling),
            port_swap(),
        )
    }

    pub fn n_modes(&self) -> usize {
        self.resonance_freqs.len()
    }

    pub fn resonance_freqs(&self) -> &[f64] {
        &self.resonance_freqs
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn background(&self) -> &Matrix2<Complex64> {
        &self.background
    }

    /// Number of trainable parameters: resonances then couplings (row-major).
    pub fn n_params(&self) -> usize {
        self.n_modes() * (1 + N_PORTS)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.resonance_freqs.clone();
        for r in 0..self.n_modes() {
            for c in 0..N_PORTS {
                p.push(self.coupling[(r, c)]);
            }
        }
        p
    }

    /// Copy of the model with parameters in [`params`](Self::params) order.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let n = self.n_modes();
        if params.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a {n}-mode model",
                params.len()
            )));
        }
        Self::new(
            params[..n].to_vec(),
            DMatrix::from_row_slice(n, N_PORTS, &params[n..]),
            self.background,
        )
    }

    /// `M = i(omega - W) + K K^T / 2`.
    fn resonance_matrix(&self, omega: f64) -> DMatrix<Complex64> {
        let n = self.n_modes();
        let kkt = &self.coupling * self.coupling.transpose();
        DMatrix::from_fn(n, n, |r, c| {
            let mut z = Complex64::new(0.5 * kkt[(r, c)], 0.0);
            if r == c {
                z += I * (omega - self.resonance_freqs[r]);
            }
            z
        })
    }

    fn inverse_resonance(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let m = self.resonance_matrix(omega);
        let singular = || Error::Singular { omega, band: None };
        let inv = m.clone().lu().try_inverse().ok_or_else(singular)?;
        let cond = norm1(&m) * norm1(&inv);
        if !cond.is_finite() || cond > CONDITION_LIMIT {
            return Err(singular());
        }
        Ok(inv)
    }

    fn complex_coupling(&self) -> DMatrix<Complex64> {
        self.coupling.map(|v| Complex64::new(v, 0.0))
    }

    pub fn mode_amplitudes(&self, omega: f64, s_plus: Vector2<Complex64>) -> Result<DVector<Complex64>> {
        if self.n_modes() == 0 {
            return Ok(DVector::zeros(0));
        }
        let rhs = self.complex_coupling() * s_plus;
        Ok(self.inverse_resonance(omega)? * rhs)
    }

    /// `sigma = I - K^T M^-1 K`.
    pub fn sigma(&self, omega: f64) -> Result<Matrix2<Complex64>> {
        if self.n_modes() == 0 {
            return Ok(Matrix2::identity());
        }
        let k = self.complex_coupling();
        let inv = self.inverse_resonance(omega)?;
        let core = k.transpose() * inv * &k;
        Ok(Matrix2::from_fn(|r, c| {
            let d = if r == c { ONE } else { ZERO };
            d - core[(r, c)]
        }))
    }

    /// `H = C sigma`.
    pub fn transfer(&self, omega: f64) -> Result<Matrix2<Complex64>> {
        Ok(self.background * self.sigma(omega)?)
    }

    pub fn port_waves(&self, omega: f64, s_plus: Vector2<Complex64>) -> Result<PortWaves> {
        Ok(PortWaves {
            s_plus,
            s_minus: self.transfer(omega)? * s_plus,
        })
    }

    /// `|H[1][0]|^2` at one frequency.
    pub fn transmission(&self, omega: f64) -> Result<f64> {
        Ok(self.transfer(omega)?[(1, 0)].norm_sqr())
    }

    /// Transmission at every band of `grid`.
    pub fn transmission_response(&self, grid: &SpectralGrid) -> Result<Vec<f64>> {
        grid.omega()
            .iter()
            .enumerate()
            .map(|(band, &w)| self.transmission(w).map_err(|e| with_band(e, band)))
            .collect()
    }

    /// Transmission curve and its Jacobian (bands x n_params, columns in
    /// [`params`](Self::params) order).
    pub fn grad_transmission(&self, grid: &SpectralGrid) -> Result<TransmissionGrad> {
        let n = self.n_modes();
        let bands = grid.bands();
        let mut values = Vec::with_capacity(bands);
        let mut jac = DMatrix::zeros(bands, self.n_params());
        let k = self.complex_coupling();
        // row of C selecting the output port
        let ell = Vector2::new(self.background[(1, 0)], self.background[(1, 1)]);
        // p = K ell, q = K e0
        let p = &k * ell;
        let q = k.column(0).clone_owned();
        for (band, &omega) in grid.omega().iter().enumerate() {
            if n == 0 {
                values.push(self.background[(1, 0)].norm_sqr());
                continue;
            }
            let inv = self.inverse_resonance(omega).map_err(|e| with_band(e, band))?;
            let u = &inv * &q;
            // M is complex symmetric, so M^-T p = M^-1 p
            let v = &inv * &p;
            let h = ell[0] - p.dot(&u);
            values.push(h.norm_sqr());
            let ktu = k.transpose() * &u;
            let ktv = k.transpose() * &v;
            let hc = h.conj();
            for m in 0..n {
                let dh = -I * v[m] * u[m];
                jac[(band, m)] = 2.0 * (hc * dh).re;
                for j in 0..N_PORTS {
                    let mut dh = -ell[j] * u[m] + 0.5 * (v[m] * ktu[j] + ktv[j] * u[m]);
                    if j == 0 {
                        dh -= v[m];
                    }
                    jac[(band, n + m * N_PORTS + j)] = 2.0 * (hc * dh).re;
                }
            }
        }
        Ok(TransmissionGrad {
            values,
            jacobian: jac,
        })
    }
}

fn with_band(e: Error, band: usize) -> Error {
    match e {
        Error::Singular { omega, .. } => Error::Singular {
            omega,
            band: Some(band),
        },
        other => other,
    }
}

fn norm1(m: &DMatrix<Complex64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionGrad {
    pub values: Vec<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Plain-text (TOML) representation of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmtModelFile {
    pub n_modes: usize,
    /// rad/fs
    pub resonance_freqs: Vec<f64>,
    /// n_modes x 2, row-major
    pub coupling: Vec<f64>,
    /// 2x2 row-major, (re, im) interleaved
    pub background: Vec<f64>,
}

impl From<&CmtModel> for CmtModelFile {
    fn from(m: &CmtModel) -> Self {
        let mut background = Vec::with_capacity(8);
        for r in 0..2 {
            for c in 0..2 {
                background.push(m.background[(r, c)].re);
                background.push(m.background[(r, c)].im);
            }
        }
        Self {
            n_modes: m.n_modes(),
            resonance_freqs: m.resonance_freqs.clone(),
            coupling: m.params()[m.n_modes()..].to_vec(),
            background,
        }
    }
}

impl TryFrom<CmtModelFile> for CmtModel {
    type Error = Error;

    fn try_from(f: CmtModelFile) -> Result<Self> {
        if f.resonance_freqs.len() != f.n_modes || f.coupling.len() != f.n_modes * N_PORTS {
            return Err(Error::Format("model field lengths disagree with n_modes".into()));
        }
        if f.background.len() != 8 {
            return Err(Error::Format("background needs 8 numbers".into()));
        }
        let b = &f.background;
        let bg = Matrix2::new(
            Complex64::new(b[0], b[1]),
            Complex64::new(b[2], b[3]),
            Complex64::new(b[4], b[5]),
            Complex64::new(b[6], b[7]),
        );
        CmtModel::new(
            f.resonance_freqs,
            DMatrix::from_row_slice(f.n_modes, N_PORTS, &f.coupling),
            bg,
        )
    }
}

impl CmtModel {
    pub fn to_toml(&self) -> String {
        toml::to_string(&CmtModelFile::from(self)).expect("model serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: CmtModelFile = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        f.try_into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(omega0: f64, kappa: f64) -> CmtModel {
        CmtModel::with_swap_background(vec![omega0], &[kappa, kappa]).unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, grid: &SpectralGrid) -> CmtModel {
        let (lo, hi) = grid.omega_range();
        let freqs = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let k: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.5..0.5)).collect();
        CmtModel::with_swap_background(freqs, &k).unwrap()
    }

    /// Gauss-Jordan inverse, independent of the LU path.
    fn gauss_jordan_inverse(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = m.nrows();
        let mut a = m.clone();
        let mut inv = DMatrix::<Complex64>::identity(n, n);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[(x, col)].norm().partial_cmp(&a[(y, col)].norm()).unwrap())
                .unwrap();
            a.swap_rows(col, piv);
            inv.swap_rows(col, piv);
            let d = a[(col, col)];
            for c in 0..n {
                a[(col, c)] /= d;
                inv[(col, c)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = a[(r, col)];
                    for c in 0..n {
                        let (ac, ic) = (a[(col, c)], inv[(col, c)]);
                        a[(r, c)] -= f * ac;
                        inv[(r, c)] -= f * ic;
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn zero_coupling_gives_zero_amplitudes_and_identity_sigma() {
        let m = CmtModel::with_swap_background(vec![3.0, 3.5], &[0.0; 4]).unwrap();
        let s = Vector2::new(ONE, ZERO);
        let a = m.mode_amplitudes(3.2, s).unwrap();
        assert!(a.iter().all(|z| *z == ZERO));
        assert_eq!(m.sigma(3.2).unwrap(), Matrix2::identity());
        assert_eq!(m.transfer(3.2).unwrap(), port_swap());
        assert!(matches!(m.sigma(3.0), Err(Error::Singular { .. })));
    }

    #[test]
    fn single_mode_on_resonance() {
        let kappa = 0.3;
        let m = single(3.0, kappa);
        let a = m.mode_amplitudes(3.0, Vector2::new(ONE, ZERO)).unwrap();
        assert!((a[0] - Complex64::new(1.0 / kappa, 0.0)).norm() < 1e-14);
        let s = m.sigma(3.0).unwrap();
        let expected = Matrix2::new(ZERO, -ONE, -ONE, ZERO);
        assert!((s - expected).iter().all(|z| z.norm() < 1e-14));
        assert!(m.transmission(3.0).unwrap() < 1e-28);
        let detuned = 100.0 * kappa * kappa;
        assert!(m.transmission(3.0 + detuned).unwrap() > 0.999);
        assert!(m.transmission(3.0 - detuned).unwrap() > 0.999);
    }

    #[test]
    fn single_mode_lorentzian_linewidth() {
        let kappa = 0.2;
        let m = single(3.0, kappa);
        let half = m.transmission(3.0 + kappa * kappa).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        let half = m.transmission(3.0 - kappa * kappa).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn amplitudes_match_independent_inverse() {
        let grid = SpectralGrid::visible();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = random_model(&mut rng, 3, &grid);
            let omega = rng.random_range(2.7..4.7);
            let s = Vector2::new(Complex64::new(0.3, -0.2), Complex64::new(0.7, 0.1));
            let a = m.mode_amplitudes(omega, s).unwrap();
            let inv = gauss_jordan_inverse(&m.resonance_matrix(omega));
            let oracle = inv * (m.complex_coupling() * s);
            assert!((a - oracle).camax() < 1e-12);
        }
    }

    #[test]
    fn port_waves_conserve_power() {
        let grid = SpectralGrid::visible();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 4, &grid);
        let s = Vector2::new(Complex64::new(0.6, 0.2), Complex64::new(-0.1, 0.4));
        let w = m.port_waves(3.3, s).unwrap();
        assert!((w.s_minus.norm() - w.s_plus.norm()).abs() < 1e-9);
    }

    #[test]
    fn transmission_curve_shapes() {
        let grid = SpectralGrid::visible();
        let flat = CmtModel::with_swap_background(vec![], &[]).unwrap();
        assert!(flat.transmission_response(&grid).unwrap().iter().all(|&t| t == 1.0));
        let m = single(grid.omega()[15], 0.3);
        let t = m.transmission_response(&grid).unwrap();
        assert!(t[15] < 1e-20);
        assert!(t.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn dip_is_stationary_in_resonance() {
        let grid = SpectralGrid::visible();
        let m = single(grid.omega()[10], 0.25);
        let g = m.grad_transmission(&grid).unwrap();
        assert!(g.jacobian[(10, 0)].abs() < 1e-14);
        let zero = CmtModel::with_swap_background(vec![1.0, 9.0], &[0.0; 4]).unwrap();
        let g = zero.grad_transmission(&grid).unwrap();
        for b in 0..grid.bands() {
            assert_eq!(g.jacobian[(b, 0)], 0.0);
            assert_eq!(g.jacobian[(b, 1)], 0.0);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let grid = SpectralGrid::visible();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let m = random_model(&mut rng, 4, &grid);
            let g = m.grad_transmission(&grid).unwrap();
            let p = m.params();
            for i in 0..p.len() {
                let mut hi = p.clone();
                let mut lo = p.clone();
                hi[i] += 1e-6;
                lo[i] -= 1e-6;
                let th = m.with_params(&hi).unwrap().transmission_response(&grid).unwrap();
                let tl = m.with_params(&lo).unwrap().transmission_response(&grid).unwrap();
                // f64 differences only resolve the larger entries; tests/gradient.rs
                // checks every entry against an extended-precision oracle
                for b in 0..grid.bands() {
                    let fd = (th[b] - tl[b]) / 2e-6;
                    let an = g.jacobian[(b, i)];
                    if an.abs() > 1e-3 {
                        assert!((an - fd).abs() / an.abs() < 1e-5, "param {i} band {b}: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn general_background_gradient() {
        let grid = SpectralGrid::uniform(450.0, 650.0, 9).unwrap();
        let phase = Complex64::from_polar(1.0, 0.7);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = Matrix2::new(
            Complex64::new(s, 0.0) * phase,
            Complex64::new(0.0, s),
            Complex64::new(0.0, s),
            Complex64::new(s, 0.0) * phase.conj(),
        );
        let dev = (c.adjoint() * c - Matrix2::identity()).camax();
        assert!(dev < 1e-12);
        let m = CmtModel::new(vec![3.4, 3.9], DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]), c).unwrap();
        let g = m.grad_transmission(&grid).unwrap();
        let t = m.transmission_response(&grid).unwrap();
        assert!(g.values.iter().zip(&t).all(|(a, b)| (a - b).abs() < 1e-14));
        let p = m.params();
        for i in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let th = m.with_params(&hi).unwrap().transmission_response(&grid).unwrap();
            let tl = m.with_params(&lo).unwrap().transmission_response(&grid).unwrap();
            for b in 0..grid.bands() {
                let fd = (th[b] - tl[b]) / 2e-6;
                assert!((g.jacobian[(b, i)] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn rejects_non_unitary_background() {
        let c = Matrix2::new(ONE, ONE, ZERO, ONE);
        assert!(matches!(
            CmtModel::new(vec![], DMatrix::zeros(0, 2), c),
            Err(Error::NonUnitaryBackground(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        let m = CmtModel::with_swap_background(vec![3.1, 4.2], &[0.1, 0.2, -0.3, 0.4]).unwrap();
        let back = CmtModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn sigma_is_unitary_and_reciprocal(seed in any::<u64>(), n in 1usize..=8) {
            let grid = SpectralGrid::visible();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, n, &grid);
            for &w in grid.omega() {
                let s = m.sigma(w).unwrap();
                let dev = (s.adjoint() * s - Matrix2::identity()).iter().map(|z| z.norm()).fold(0.0, f64::max);
                prop_assert!(dev < 1e-10);
                let h = m.transfer(w).unwrap();
                prop_assert!(h[(1, 0)].norm_sqr() <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn symmetric_coupling_is_reciprocal(seed in any::<u64>(), n in 1usize..=6) {
            let grid = SpectralGrid::visible();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = grid.omega_range();
            let freqs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            let k: Vec<f64> = (0..n).flat_map(|_| { let v = rng.random_range(-0.5..0.5); [v, v] }).collect();
            let m = CmtModel::with_swap_background(freqs, &k).unwrap();
            for &w in grid.omega() {
                let h = m.transfer(w).unwrap();
                prop_assert!((h[(1, 0)].norm() - h[(0, 1)].norm()).abs() < 1e-10);
            }
        }
    }
}
