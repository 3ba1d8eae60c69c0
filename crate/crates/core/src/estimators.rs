//! Least-squares and MMSE channel estimation in the `y = X F g + w` model.
//!
//! `X` is the diagonal pilot matrix, `F` the unitary DFT matrix and `g` the
//! time-domain channel vector (the tap vector zero-padded to `N` and scaled by
//! `sqrt(N)`, so that `F g` is the per-subcarrier response).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ofdm::{dft_matrix, DftMatrix};

/// Smallest estimate magnitude the one-tap equalizer divides by.
pub const DEEP_FADE_EPS: f64 = 1e-12;

// LU pivot ratio below which a system is treated as ill-conditioned.
const PIVOT_RATIO_FLOOR: f64 = 1e-13;
const RIDGE_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    /// Diagonal of the pilot matrix `X`.
    pub pilot: Vec<Complex64>,
    /// Demodulated received pilot symbol `y`.
    pub received: Vec<Complex64>,
    /// Per-subcarrier noise variance.
    pub noise_variance: f64,
}

impl PilotObservation {
    pub fn new(pilot: Vec<Complex64>, received: Vec<Complex64>, noise_variance: f64) -> Result<Self> {
        if pilot.is_empty() || pilot.len() != received.len() {
            return Err(Error::InputShape(format!(
                "pilot has {} entries, observation {}",
                pilot.len(),
                received.len()
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::DegenerateInput(format!("noise variance {noise_variance}")));
        }
        Ok(Self { pilot, received, noise_variance })
    }

    pub fn len(&self) -> usize {
        self.pilot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pilot.is_empty()
    }

    fn check_invertible(&self) -> Result<()> {
        match self.pilot.iter().position(|x| x.norm() == 0.0) {
            Some(bin) => Err(Error::SingularPilot { bin }),
            None => Ok(()),
        }
    }

    fn is_unit_modulus(&self) -> bool {
        self.pilot.iter().all(|x| (x.norm_sqr() - 1.0).abs() < 1e-9)
    }
}

/// Covariance `R_gg = E[g gᴴ]` of the time-domain channel vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCovariance {
    r_gg: DMatrix<Complex64>,
}

impl ChannelCovariance {
    /// Validates that `r_gg` is Hermitian and positive semidefinite.
    pub fn new(r_gg: DMatrix<Complex64>) -> Result<Self> {
        if !r_gg.is_square() || r_gg.nrows() == 0 {
            return Err(Error::InvalidDimension(format!(
                "covariance must be square and non-empty, got {}x{}",
                r_gg.nrows(),
                r_gg.ncols()
            )));
        }
        let asym = (&r_gg - r_gg.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-10 {
            return Err(Error::DegenerateInput(format!("covariance is not Hermitian ({asym:e})")));
        }
        let min_eig = SymmetricEigen::new(r_gg.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(Error::DegenerateInput(format!(
                "covariance has negative eigenvalue {min_eig:e}"
            )));
        }
        Ok(Self { r_gg })
    }

    /// Exact covariance for independent uniformly-phased taps with powers
    /// `tap_powers` at `tap_delays`, in an `n`-bin system.
    pub fn from_tap_powers(tap_delays: &[usize], tap_powers: &[f64], n: usize) -> Result<Self> {
        let mut r = DMatrix::zeros(n, n);
        for (&d, &p) in tap_delays.iter().zip(tap_powers) {
            if d >= n {
                return Err(Error::InvalidProfile(format!("tap delay {d} does not fit in {n} bins")));
            }
            r[(d, d)] += Complex64::new(p * n as f64, 0.0);
        }
        Self::new(r)
    }

    pub fn zeros(n: usize) -> Self {
        Self { r_gg: DMatrix::zeros(n, n) }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.r_gg
    }

    pub fn dim(&self) -> usize {
        self.r_gg.nrows()
    }
}

/// `R_gg = (1/M) sum g gᴴ` over `M >= 2` equal-length channel vectors.
pub fn sample_covariance(realizations: &[Vec<Complex64>]) -> Result<ChannelCovariance> {
    if realizations.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 channel vectors, got {}",
            realizations.len()
        )));
    }
    let n = realizations[0].len();
    if n == 0 || realizations.iter().any(|g| g.len() != n) {
        return Err(Error::InputShape("channel vectors must share a non-zero length".into()));
    }
    let mut r = DMatrix::<Complex64>::zeros(n, n);
    for g in realizations {
        for j in 0..n {
            let gj = g[j].conj();
            if gj == Complex64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..n {
                r[(i, j)] += g[i] * gj;
            }
        }
    }
    r /= Complex64::new(realizations.len() as f64, 0.0);
    // exact Hermitian symmetry regardless of summation order
    let r = (&r + r.adjoint()).map(|z| z * 0.5);
    ChannelCovariance::new(r)
}

/// Element-wise `X⁻¹ y`.
pub fn ls_estimate(obs: &PilotObservation) -> Result<Vec<Complex64>> {
    obs.check_invertible()?;
    Ok(obs.received.iter().zip(&obs.pilot).map(|(y, x)| y / x).collect())
}

/// Full matrix form `F (Fᴴ Xᴴ X F)⁻¹ Fᴴ Xᴴ y`, valid for any invertible pilot.
pub fn ls_estimate_matrix(obs: &PilotObservation) -> Result<Vec<Complex64>> {
    obs.check_invertible()?;
    let f = dft_matrix(obs.len())?;
    let (gram, fh_xh_y) = normal_equations(&f, obs);
    let g = robust_solve(gram, &fh_xh_y);
    Ok((f.matrix() * g).iter().copied().collect())
}

/// MMSE estimate in the form
/// `F R [(FᴴXᴴXF)⁻¹ σ² + R]⁻¹ (FᴴXᴴXF)⁻¹ Fᴴ Xᴴ y`.
///
/// Ill-conditioned systems (e.g. zero noise with a rank-deficient prior) get a
/// ridge of `1e-12 * trace / N` on the diagonal.
pub fn mmse_estimate(obs: &PilotObservation, cov: &ChannelCovariance) -> Result<Vec<Complex64>> {
    obs.check_invertible()?;
    check_cov_dim(obs, cov)?;
    let n = obs.len();
    let f = dft_matrix(n)?;
    let (gram, fh_xh_y) = normal_equations(&f, obs);
    let gram_inv = robust_solve(gram.clone(), &DMatrix::identity(n, n));
    let g_ls = robust_solve(gram, &fh_xh_y);
    let inner = gram_inv * Complex64::new(obs.noise_variance, 0.0) + cov.matrix();
    let g_hat = cov.matrix() * robust_solve(inner, &g_ls);
    Ok((f.matrix() * g_hat).iter().copied().collect())
}

/// MMSE estimate in the Wiener form `F R_gy R_yy⁻¹ y`, with
/// `R_gy = R Fᴴ Xᴴ` and `R_yy = X F R Fᴴ Xᴴ + σ² I`.
pub fn mmse_estimate_wiener(obs: &PilotObservation, cov: &ChannelCovariance) -> Result<Vec<Complex64>> {
    obs.check_invertible()?;
    check_cov_dim(obs, cov)?;
    let n = obs.len();
    let f = dft_matrix(n)?;
    let xf = DMatrix::from_diagonal(&DVector::from_vec(obs.pilot.clone())) * f.matrix();
    let r_gy = cov.matrix() * xf.adjoint();
    let r_yy = &xf * cov.matrix() * xf.adjoint()
        + DMatrix::<Complex64>::identity(n, n) * Complex64::new(obs.noise_variance, 0.0);
    let y = DMatrix::from_column_slice(n, 1, &obs.received);
    let g_hat = r_gy * robust_solve(r_yy, &y);
    Ok((f.matrix() * g_hat).iter().copied().collect())
}

/// Precomputed MMSE smoother for unit-modulus pilots.
///
/// With `XᴴX = I` the estimate reduces to `V diag(λ/(λ+σ²)) Vᴴ ĥ_LS` where
/// `R = U Λ Uᴴ` and `V = F U`; only eigenvectors with non-negligible
/// eigenvalues are kept, so applying the filter costs `O(N * rank)`.
#[derive(Debug, Clone)]
pub struct MmseFilter {
    basis: DMatrix<Complex64>,
    eigenvalues: Vec<f64>,
    ridge: f64,
}

impl MmseFilter {
    pub fn new(cov: &ChannelCovariance) -> Result<Self> {
        let n = cov.dim();
        let f = dft_matrix(n)?;
        let eig = SymmetricEigen::new(cov.matrix().clone());
        let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 1e-12 * max).collect();
        let mut basis = DMatrix::zeros(n, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            basis.set_column(c, &(f.matrix() * eig.eigenvectors.column(i)));
        }
        let trace: f64 = cov.matrix().diagonal().iter().map(|z| z.re).sum();
        Ok(Self {
            basis,
            eigenvalues: keep.iter().map(|&i| eig.eigenvalues[i]).collect(),
            ridge: ridge_for(trace, n),
        })
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Smooths an LS estimate given the noise variance.
    pub fn apply(&self, h_ls: &[Complex64], noise_variance: f64) -> Vec<Complex64> {
        let coeffs = self.basis.adjoint() * DVector::from_column_slice(h_ls);
        let denom_extra = if noise_variance > 0.0 { 0.0 } else { self.ridge };
        let weighted = DVector::from_iterator(
            coeffs.len(),
            coeffs
                .iter()
                .zip(&self.eigenvalues)
                .map(|(c, &l)| c * (l / (l + noise_variance + denom_extra))),
        );
        (&self.basis * weighted).iter().copied().collect()
    }

    /// MMSE estimate from a pilot observation; falls back to the full matrix
    /// form when the pilot is not unit-modulus.
    pub fn estimate(&self, obs: &PilotObservation, cov: &ChannelCovariance) -> Result<Vec<Complex64>> {
        if obs.is_unit_modulus() {
            Ok(self.apply(&ls_estimate(obs)?, obs.noise_variance))
        } else {
            mmse_estimate(obs, cov)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equalized {
    pub symbols: Vec<Complex64>,
    /// Bins whose estimate was too small to divide by; their symbol is the raw observation.
    pub deep_fades: Vec<usize>,
}

/// One-tap zero-forcing equalizer `X̂(k) = Y(k) / ĥ(k)`.
pub fn equalize(received: &[Complex64], h_hat: &[Complex64]) -> Result<Equalized> {
    if received.len() != h_hat.len() {
        return Err(Error::InputShape(format!(
            "{} observations for {} channel estimates",
            received.len(),
            h_hat.len()
        )));
    }
    let mut deep_fades = Vec::new();
    let symbols = received
        .iter()
        .zip(h_hat)
        .enumerate()
        .map(|(k, (y, h))| {
            if h.norm() > DEEP_FADE_EPS {
                y / h
            } else {
                deep_fades.push(k);
                *y
            }
        })
        .collect();
    Ok(Equalized { symbols, deep_fades })
}

fn check_cov_dim(obs: &PilotObservation, cov: &ChannelCovariance) -> Result<()> {
    if cov.dim() != obs.len() {
        return Err(Error::InputShape(format!(
            "covariance is {0}x{0} but the observation has {1} bins",
            cov.dim(),
            obs.len()
        )));
    }
    Ok(())
}

/// `(Fᴴ Xᴴ X F, Fᴴ Xᴴ y)`.
fn normal_equations(f: &DftMatrix, obs: &PilotObservation) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = obs.len();
    let x = DMatrix::from_diagonal(&DVector::from_vec(obs.pilot.clone()));
    let xf = &x * f.matrix();
    let gram = xf.adjoint() * &xf;
    let rhs = xf.adjoint() * DMatrix::from_column_slice(n, 1, &obs.received);
    (gram, rhs)
}

fn ridge_for(trace: f64, n: usize) -> f64 {
    let r = RIDGE_FACTOR * trace.abs() / n as f64;
    if r > 0.0 {
        r
    } else {
        RIDGE_FACTOR
    }
}

/// LU solve of `a x = b`, retried with a diagonal ridge when the pivots
/// indicate ill-conditioning.
fn robust_solve(a: DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let pivots: Vec<f64> = lu.u().diagonal().iter().map(|z| z.norm()).collect();
    let max = pivots.iter().copied().fold(0.0, f64::max);
    let min = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 && min / max > PIVOT_RATIO_FLOOR {
        if let Some(x) = lu.solve(b) {
            return x;
        }
    }
    let trace: f64 = a.diagonal().iter().map(|z| z.re).sum();
    let ridged = a + DMatrix::<Complex64>::identity(n, n) * Complex64::new(ridge_for(trace, n), 0.0);
    ridged
        .lu()
        .solve(b)
        .expect("ridge-regularized system is non-singular")
}
