//! 4-QAM mapping and OFDM modulation.
//!
//! Transforms use the unitary convention in both directions (scale `1/sqrt(N)`),
//! so modulation followed by demodulation is the identity and Parseval holds.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rng;

/// Bits carried by one 4-QAM symbol.
pub const QPSK_BITS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfdmConfig {
    pub num_subcarriers: usize,
    pub cp_len: usize,
    pub bits_per_symbol: usize,
}

impl OfdmConfig {
    pub fn new(num_subcarriers: usize, cp_len: usize) -> Result<Self> {
        let cfg = Self {
            num_subcarriers,
            cp_len,
            bits_per_symbol: QPSK_BITS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_subcarriers == 0 || !self.num_subcarriers.is_power_of_two() {
            return Err(Error::InvalidDimension(format!(
                "number of subcarriers must be a positive power of two, got {}",
                self.num_subcarriers
            )));
        }
        if self.cp_len >= self.num_subcarriers {
            return Err(Error::InvalidDimension(format!(
                "cyclic prefix ({}) must be shorter than the symbol ({})",
                self.cp_len, self.num_subcarriers
            )));
        }
        if self.bits_per_symbol != QPSK_BITS {
            return Err(Error::UnsupportedModulation {
                bits_per_symbol: self.bits_per_symbol,
            });
        }
        Ok(())
    }

    /// Samples per OFDM symbol including the cyclic prefix.
    pub fn frame_len(&self) -> usize {
        self.num_subcarriers + self.cp_len
    }

    pub fn bits_per_frame(&self) -> usize {
        self.num_subcarriers * self.bits_per_symbol
    }
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            num_subcarriers: 64,
            cp_len: 16,
            bits_per_symbol: QPSK_BITS,
        }
    }
}

/// One OFDM symbol in both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmFrame {
    pub freq_symbols: Vec<Complex64>,
    /// Cyclic prefix followed by the time-domain body.
    pub time_samples: Vec<Complex64>,
}

// Gray mapping, indexed by the bit pattern read as a 2-bit integer (b0 b1).
const QPSK_TABLE: [(f64, f64); 4] = [
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),   // 00
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),  // 01
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),  // 10
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2), // 11
];

/// The four unit-energy constellation points, indexed by bit pattern.
pub fn qpsk_constellation() -> [Complex64; 4] {
    QPSK_TABLE.map(|(re, im)| Complex64::new(re, im))
}

/// Maps a bit stream (values 0/1) onto unit-energy Gray-coded 4-QAM symbols.
pub fn qam_map(bits: &[u8], bits_per_symbol: usize) -> Result<Vec<Complex64>> {
    if bits_per_symbol != QPSK_BITS {
        return Err(Error::UnsupportedModulation { bits_per_symbol });
    }
    if !bits.len().is_multiple_of(bits_per_symbol) {
        return Err(Error::InputShape(format!(
            "{} bits is not a multiple of {bits_per_symbol}",
            bits.len()
        )));
    }
    if let Some(pos) = bits.iter().position(|&b| b > 1) {
        return Err(Error::InputShape(format!(
            "bit {pos} has non-binary value {}",
            bits[pos]
        )));
    }
    let table = qpsk_constellation();
    Ok(bits
        .chunks_exact(2)
        .map(|b| table[usize::from(b[0]) << 1 | usize::from(b[1])])
        .collect())
}

/// Hard-decision minimum-distance 4-QAM demapper.
///
/// The first bit is the sign of the imaginary part and the second the sign of
/// the real part. A point exactly on a decision boundary resolves to the
/// lexicographically smallest of the tied patterns, i.e. zero components
/// decode as positive.
pub fn qam_demap(symbols: &[Complex64]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for s in symbols {
        bits.push(u8::from(s.im < 0.0));
        bits.push(u8::from(s.re < 0.0));
    }
    bits
}

/// Unitary OFDM modulator/demodulator with cached FFT plans.
#[derive(Clone)]
pub struct OfdmModem {
    cfg: OfdmConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for OfdmModem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OfdmModem").field("cfg", &self.cfg).finish()
    }
}

impl OfdmModem {
    pub fn new(cfg: OfdmConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            cfg,
            forward: planner.plan_fft_forward(cfg.num_subcarriers),
            inverse: planner.plan_fft_inverse(cfg.num_subcarriers),
            scale: 1.0 / (cfg.num_subcarriers as f64).sqrt(),
        })
    }

    pub fn config(&self) -> &OfdmConfig {
        &self.cfg
    }

    /// Unitary IDFT of `freq_symbols` with the last `cp_len` samples prepended.
    pub fn modulate(&self, freq_symbols: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.cfg.num_subcarriers;
        if freq_symbols.len() != n {
            return Err(Error::InputShape(format!(
                "expected {n} frequency symbols, got {}",
                freq_symbols.len()
            )));
        }
        let mut body = freq_symbols.to_vec();
        self.inverse.process(&mut body);
        body.iter_mut().for_each(|s| *s *= self.scale);

        let mut out = Vec::with_capacity(self.cfg.frame_len());
        out.extend_from_slice(&body[n - self.cfg.cp_len..]);
        out.extend_from_slice(&body);
        Ok(out)
    }

    /// Strips the cyclic prefix and applies the unitary DFT.
    pub fn demodulate(&self, time_samples: &[Complex64]) -> Result<Vec<Complex64>> {
        if time_samples.len() != self.cfg.frame_len() {
            return Err(Error::InputShape(format!(
                "expected {} time samples, got {}",
                self.cfg.frame_len(),
                time_samples.len()
            )));
        }
        let mut body = time_samples[self.cfg.cp_len..].to_vec();
        self.forward.process(&mut body);
        body.iter_mut().for_each(|s| *s *= self.scale);
        Ok(body)
    }

    pub fn frame(&self, freq_symbols: &[Complex64]) -> Result<OfdmFrame> {
        Ok(OfdmFrame {
            freq_symbols: freq_symbols.to_vec(),
            time_samples: self.modulate(freq_symbols)?,
        })
    }
}

pub fn ofdm_modulate(freq_symbols: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(*cfg)?.modulate(freq_symbols)
}

pub fn ofdm_demodulate(time_samples: &[Complex64], cfg: &OfdmConfig) -> Result<Vec<Complex64>> {
    OfdmModem::new(*cfg)?.demodulate(time_samples)
}

/// `N x N` unitary DFT matrix, entry `(n, k) = exp(-j 2 pi n k / N) / sqrt(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DftMatrix(pub DMatrix<Complex64>);

impl DftMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    /// Largest entry-wise deviation of `F Fᴴ` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let prod = &self.0 * self.0.adjoint();
        let eye = DMatrix::<Complex64>::identity(self.dim(), self.dim());
        (prod - eye).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn dft_matrix(n: usize) -> Result<DftMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension("DFT size must be at least 1".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(DftMatrix(DMatrix::from_fn(n, n, |r, c| {
        // reduce r*c mod n first so the angle stays small and exact for small n
        let idx = (r * c) % n;
        Complex64::from_polar(scale, -2.0 * PI * idx as f64 / n as f64)
    })))
}

/// Random unit-modulus 4-QAM pilot symbol, deterministic in `seed`.
///
/// The induced diagonal pilot matrix `X` satisfies `XᴴX = I`.
pub fn generate_pilot(cfg: &OfdmConfig, seed: u64) -> Vec<Complex64> {
    let mut rng = rng::stream(seed, &[]);
    random_qpsk(cfg.num_subcarriers, &mut rng)
}

/// `count` uniformly random constellation points.
pub fn random_qpsk<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Complex64> {
    let table = qpsk_constellation();
    (0..count).map(|_| table[rng.random_range(0..4)]).collect()
}

pub fn random_bits<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<u8> {
    (0..count).map(|_| rng.random_range(0..2u8)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-10;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < tol)
    }

    #[test]
    fn qam_fixed_points() {
        let s = qam_map(&[0, 0, 1, 1, 0, 1, 1, 0], 2).unwrap();
        let r = FRAC_1_SQRT_2;
        assert!(close(&s, &[c(r, r), c(-r, -r), c(-r, r), c(r, -r)], 1e-15));
        assert!(s.iter().all(|z| (z.norm_sqr() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn qam_errors() {
        assert!(matches!(qam_map(&[0, 1, 1], 2), Err(Error::InputShape(_))));
        assert!(matches!(
            qam_map(&[0, 1, 1, 0], 4),
            Err(Error::UnsupportedModulation { bits_per_symbol: 4 })
        ));
        assert!(matches!(qam_map(&[0, 2], 2), Err(Error::InputShape(_))));
    }

    #[test]
    fn demap_near_point_and_boundary() {
        let r = FRAC_1_SQRT_2;
        assert_eq!(qam_demap(&[c(0.9 * r, 1.1 * r)]), vec![0, 0]);
        assert_eq!(qam_demap(&[c(0.0, r)]), vec![0, 0]);
        assert_eq!(qam_demap(&[c(0.0, -r)]), vec![1, 0]);
        assert_eq!(qam_demap(&[c(0.0, 0.0)]), vec![0, 0]);
    }

    #[test]
    fn demap_matches_minimum_distance_oracle() {
        // brute force over the table, first-wins on ties (table is in lexicographic order)
        let table = qpsk_constellation();
        let oracle = |z: Complex64| {
            let mut best = 0;
            for (i, p) in table.iter().enumerate() {
                if (z - p).norm_sqr() < (z - table[best]).norm_sqr() {
                    best = i;
                }
            }
            vec![(best >> 1) as u8, (best & 1) as u8]
        };
        let grid: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.125).collect();
        for &re in &grid {
            for &im in &grid {
                let z = c(re, im);
                assert_eq!(qam_demap(&[z]), oracle(z), "at {z}");
            }
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let table = qpsk_constellation();
        for a in 0..4usize {
            for b in 0..4usize {
                let d = (table[a] - table[b]).norm();
                // nearest neighbours sit at distance sqrt(2), diagonal at 2
                if (d - 2f64.sqrt()).abs() < 1e-12 {
                    assert_eq!((a ^ b).count_ones(), 1, "{a:02b} vs {b:02b}");
                }
            }
        }
    }

    #[test]
    fn modulate_small_cases() {
        let cfg = OfdmConfig { num_subcarriers: 4, cp_len: 0, bits_per_symbol: 2 };
        let out = ofdm_modulate(&[c(1.0, 0.0); 4], &cfg).unwrap();
        assert!(close(&out, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], TOL));

        let cfg = OfdmConfig { num_subcarriers: 4, cp_len: 1, bits_per_symbol: 2 };
        let mut x = vec![c(0.0, 0.0); 4];
        x[0] = c(1.0, 0.0);
        let out = ofdm_modulate(&x, &cfg).unwrap();
        assert_eq!(out.len(), 5);
        assert!(close(&out, &[c(0.5, 0.0); 5], TOL));
    }

    #[test]
    fn demodulate_constant_body() {
        let cfg = OfdmConfig { num_subcarriers: 4, cp_len: 1, bits_per_symbol: 2 };
        let v = c(0.3, -0.7);
        let out = ofdm_demodulate(&[v; 5], &cfg).unwrap();
        assert!(close(&out, &[v * 2.0, c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], TOL));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let cfg = OfdmConfig::default();
        assert!(matches!(ofdm_modulate(&[c(1.0, 0.0); 3], &cfg), Err(Error::InputShape(_))));
        assert!(matches!(ofdm_demodulate(&[c(1.0, 0.0); 64], &cfg), Err(Error::InputShape(_))));
    }

    #[test]
    fn config_validation() {
        assert!(OfdmConfig::new(64, 16).is_ok());
        assert!(OfdmConfig::new(48, 8).is_err());
        assert!(OfdmConfig::new(16, 16).is_err());
        assert!(OfdmConfig::new(0, 0).is_err());
    }

    #[test]
    fn dft_matrix_small() {
        assert!(matches!(dft_matrix(0), Err(Error::InvalidDimension(_))));
        let f1 = dft_matrix(1).unwrap();
        assert!((f1.0[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        let f2 = dft_matrix(2).unwrap();
        let r = FRAC_1_SQRT_2;
        let expect = [r, r, r, -r];
        for (i, e) in expect.iter().enumerate() {
            assert!((f2.0[(i / 2, i % 2)] - c(*e, 0.0)).norm() < 1e-15);
        }
        for n in [1, 2, 4, 8, 64] {
            assert!(dft_matrix(n).unwrap().unitarity_error() < TOL, "N={n}");
        }
    }

    #[test]
    fn pilot_is_unit_modulus_and_deterministic() {
        let cfg = OfdmConfig::default();
        let p = generate_pilot(&cfg, 11);
        assert_eq!(p, generate_pilot(&cfg, 11));
        assert_ne!(p, generate_pilot(&cfg, 12));
        assert!(p.iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        // diagonal XᴴX has entries |X(k)|^2
        let worst = p.iter().map(|z| (z.conj() * z - 1.0).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }
}
