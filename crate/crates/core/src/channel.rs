//! Position-dependent multipath channel for a vehicle driving past a base station.
//!
//! A realization combines two independent pieces:
//!
//! - a scalar large-scale power gain `G * beta * A * d^-gamma` (exponential fast
//!   fading, log-normal shadowing, distance path loss), and
//! - a power-normalized tapped delay line whose tap magnitudes are fixed and
//!   whose phases rotate with the per-tap Doppler shift.
//!
//! The link-level simulation convolves frames with the normalized taps only.
//! Noise is referenced to the received power, so the large-scale gain is not
//! observable in BER or NMSE; it is carried on each realization for reporting.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleParams {
    pub pathloss_constant: f64,
    pub pathloss_exponent: f64,
    pub shadow_sigma_db: f64,
    pub fast_fading_mean: f64,
}

impl Default for LargeScaleParams {
    fn default() -> Self {
        Self {
            pathloss_constant: 1.0,
            pathloss_exponent: 2.7,
            shadow_sigma_db: 4.0,
            fast_fading_mean: 1.0,
        }
    }
}

impl LargeScaleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pathloss_constant > 0.0 && self.pathloss_constant.is_finite()) {
            return Err(Error::InvalidProfile("path-loss constant must be positive".into()));
        }
        if !(self.pathloss_exponent > 0.0 && self.pathloss_exponent.is_finite()) {
            return Err(Error::InvalidProfile("path-loss exponent must be positive".into()));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return Err(Error::InvalidProfile("shadowing sigma must be non-negative".into()));
        }
        if !(self.fast_fading_mean > 0.0 && self.fast_fading_mean.is_finite()) {
            return Err(Error::InvalidProfile("fast-fading mean must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form `E[G * beta]` for independent exponential and log-normal factors.
    pub fn mean_fading_product(&self) -> f64 {
        let s = self.shadow_sigma_db * std::f64::consts::LN_10 / 10.0;
        self.fast_fading_mean * (0.5 * s * s).exp()
    }
}

/// Random factors of one large-scale gain draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LargeScaleDraw {
    /// Exponential fast-fading power `G`.
    pub fast_fading: f64,
    /// Linear log-normal shadowing `beta`.
    pub shadowing: f64,
}

impl LargeScaleDraw {
    pub fn sample<R: Rng + ?Sized>(params: &LargeScaleParams, rng: &mut R) -> Self {
        let exp = Exp::new(1.0 / params.fast_fading_mean).expect("validated mean");
        let z: f64 = StandardNormal.sample(rng);
        Self {
            fast_fading: exp.sample(rng),
            shadowing: 10f64.powf(params.shadow_sigma_db * z / 10.0),
        }
    }
}

/// `G * beta * A * d^-gamma` for given random factors.
pub fn large_scale_gain_with(
    params: &LargeScaleParams,
    distance_m: f64,
    draw: LargeScaleDraw,
) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return Err(Error::InvalidGeometry(format!(
            "distance must be positive, got {distance_m}"
        )));
    }
    Ok(draw.fast_fading
        * draw.shadowing
        * params.pathloss_constant
        * distance_m.powf(-params.pathloss_exponent))
}

pub fn large_scale_gain<R: Rng + ?Sized>(
    params: &LargeScaleParams,
    distance_m: f64,
    rng: &mut R,
) -> Result<f64> {
    let draw = LargeScaleDraw::sample(params, rng);
    large_scale_gain_with(params, distance_m, draw)
}

/// Tapped-delay-line description of the small-scale channel.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathProfile {
    /// Tap delays in samples; strictly increasing, first tap at 0.
    pub tap_delays: Vec<usize>,
    /// Tap powers `C_l^2`, summing to one.
    pub tap_powers: Vec<f64>,
    /// Per-tap maximum Doppler shift in Hz.
    pub doppler_hz: Vec<f64>,
    pub carrier_freq_hz: f64,
    pub sample_period_s: f64,
}

impl Default for MultipathProfile {
    fn default() -> Self {
        Self {
            tap_delays: vec![0, 2, 5],
            tap_powers: vec![0.6, 0.3, 0.1],
            doppler_hz: vec![0.0; 3],
            carrier_freq_hz: 5.9e9,
            sample_period_s: 1e-6,
        }
    }
}

impl MultipathProfile {
    pub fn num_taps(&self) -> usize {
        self.tap_delays.len()
    }

    pub fn max_delay(&self) -> usize {
        self.tap_delays.last().copied().unwrap_or(0)
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Same profile with every tap shifted by `doppler_hz`.
    pub fn with_uniform_doppler(mut self, doppler_hz: f64) -> Self {
        self.doppler_hz = vec![doppler_hz; self.num_taps()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.tap_delays.len();
        if l == 0 {
            return Err(Error::InvalidProfile("at least one tap is required".into()));
        }
        if self.tap_powers.len() != l || self.doppler_hz.len() != l {
            return Err(Error::InvalidProfile(format!(
                "{l} delays but {} powers and {} Doppler shifts",
                self.tap_powers.len(),
                self.doppler_hz.len()
            )));
        }
        if self.tap_delays[0] != 0 {
            return Err(Error::InvalidProfile("first tap must have zero delay".into()));
        }
        if self.tap_delays.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidProfile("tap delays must be strictly increasing".into()));
        }
        if self.tap_powers.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidProfile("tap powers must be non-negative".into()));
        }
        let total: f64 = self.tap_powers.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidProfile(format!("tap powers sum to {total}, not 1")));
        }
        if self.doppler_hz.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidProfile("Doppler shifts must be finite".into()));
        }
        if !(self.carrier_freq_hz > 0.0 && self.carrier_freq_hz.is_finite()) {
            return Err(Error::InvalidProfile("carrier frequency must be positive".into()));
        }
        if !(self.sample_period_s > 0.0 && self.sample_period_s.is_finite()) {
            return Err(Error::InvalidProfile("sample period must be positive".into()));
        }
        Ok(())
    }

    /// Also checks that the delay spread fits inside the cyclic prefix.
    pub fn validate_for(&self, cfg: &OfdmConfig) -> Result<()> {
        self.validate()?;
        if self.max_delay() > 0 && self.max_delay() >= cfg.cp_len {
            return Err(Error::IsiViolation {
                cp_len: cfg.cp_len,
                max_delay: self.max_delay(),
            });
        }
        Ok(())
    }
}

/// Phase of tap `l` at sample index `n`.
///
/// `static_phase - 2 pi c tau_l / lambda_c + 2 pi f_D,l n T_s`, with the delay
/// converted to seconds. Only the sum of the first two terms is observable.
pub fn tap_phase(profile: &MultipathProfile, static_phase: f64, l: usize, n: u64) -> f64 {
    let tau_s = profile.tap_delays[l] as f64 * profile.sample_period_s;
    let propagation = 2.0 * PI * SPEED_OF_LIGHT * tau_s / profile.wavelength_m();
    let doppler = 2.0 * PI * profile.doppler_hz[l] * n as f64 * profile.sample_period_s;
    static_phase - propagation + doppler
}

/// `H(k) = sum_l alpha_l exp(-j 2 pi k tau_l / N)`.
pub fn cir_to_cfr(tap_gains: &[Complex64], tap_delays: &[usize], n: usize) -> Result<Vec<Complex64>> {
    if tap_gains.len() != tap_delays.len() {
        return Err(Error::InputShape(format!(
            "{} tap gains for {} delays",
            tap_gains.len(),
            tap_delays.len()
        )));
    }
    if let Some(&d) = tap_delays.iter().find(|&&d| d >= n) {
        return Err(Error::InvalidProfile(format!("tap delay {d} does not fit in {n} bins")));
    }
    Ok((0..n)
        .map(|k| {
            tap_gains
                .iter()
                .zip(tap_delays)
                .map(|(a, &d)| a * Complex64::cis(-2.0 * PI * ((k * d) % n) as f64 / n as f64))
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub tap_gains: Vec<Complex64>,
    pub tap_delays: Vec<usize>,
    /// Per-subcarrier frequency response.
    pub cfr: Vec<Complex64>,
    pub large_scale_gain: f64,
    /// Sample index along the trajectory.
    pub position_index: u64,
    /// Vehicle-to-BS distance, when generated from a trajectory.
    pub distance_m: Option<f64>,
}

impl ChannelRealization {
    /// Time-domain channel vector `g` with `cfr = F g` for the unitary DFT `F`:
    /// the tap vector zero-padded to `N` and scaled by `sqrt(N)`.
    pub fn g_vector(&self) -> Vec<Complex64> {
        let n = self.cfr.len();
        let scale = (n as f64).sqrt();
        let mut g = vec![Complex64::new(0.0, 0.0); n];
        for (a, &d) in self.tap_gains.iter().zip(&self.tap_delays) {
            g[d] += a * scale;
        }
        g
    }

    pub fn tap_energy(&self) -> f64 {
        self.tap_gains.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Multipath fading process: a profile plus per-tap static phases drawn once.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    pub profile: MultipathProfile,
    pub static_phases: Vec<f64>,
}

impl FadingProcess {
    /// Draws the static phases uniformly on `[0, 2 pi)`.
    pub fn new<R: Rng + ?Sized>(profile: MultipathProfile, rng: &mut R) -> Result<Self> {
        profile.validate()?;
        let static_phases = (0..profile.num_taps())
            .map(|_| rng.random_range(0.0..2.0 * PI))
            .collect();
        Ok(Self { profile, static_phases })
    }

    pub fn tap_gains(&self, n: u64) -> Vec<Complex64> {
        self.profile
            .tap_powers
            .iter()
            .zip(&self.static_phases)
            .enumerate()
            .map(|(l, (p, &phi))| Complex64::from_polar(p.sqrt(), tap_phase(&self.profile, phi, l, n)))
            .collect()
    }

    pub fn realization(&self, n: u64, num_subcarriers: usize) -> Result<ChannelRealization> {
        let tap_gains = self.tap_gains(n);
        let cfr = cir_to_cfr(&tap_gains, &self.profile.tap_delays, num_subcarriers)?;
        Ok(ChannelRealization {
            tap_gains,
            tap_delays: self.profile.tap_delays.clone(),
            cfr,
            large_scale_gain: 1.0,
            position_index: n,
            distance_m: None,
        })
    }
}

/// Single realization at sample index `n` with freshly drawn static phases.
/// Carries unit large-scale gain.
pub fn generate_cir<R: Rng + ?Sized>(
    profile: &MultipathProfile,
    n: u64,
    num_subcarriers: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    FadingProcess::new(profile.clone(), rng)?.realization(n, num_subcarriers)
}

/// Received samples plus the noise variance that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub samples: Vec<Complex64>,
    pub noise_variance: f64,
}

/// Circularly-symmetric complex Gaussian noise of the given total variance.
pub fn add_noise<R: Rng + ?Sized>(signal: &[Complex64], variance: f64, rng: &mut R) -> Vec<Complex64> {
    let sd = (variance / 2.0).sqrt();
    signal
        .iter()
        .map(|s| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            s + Complex64::new(re, im) * sd
        })
        .collect()
}

pub fn mean_power(signal: &[Complex64]) -> f64 {
    signal.iter().map(|s| s.norm_sqr()).sum::<f64>() / signal.len() as f64
}

/// Adds AWGN with per-sample variance `mean_power(signal) / 10^(snr_db/10)`.
/// `snr_db = +inf` adds nothing.
pub fn awgn<R: Rng + ?Sized>(signal: &[Complex64], snr_db: f64, rng: &mut R) -> Result<Received> {
    if signal.is_empty() {
        return Err(Error::InputShape("cannot add noise to an empty signal".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::DegenerateInput("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(Received {
            samples: signal.to_vec(),
            noise_variance: 0.0,
        });
    }
    let power = mean_power(signal);
    if power == 0.0 {
        return Err(Error::DegenerateInput(
            "zero-power signal has no finite-SNR noise level".into(),
        ));
    }
    let noise_variance = power / 10f64.powf(snr_db / 10.0);
    Ok(Received {
        samples: add_noise(signal, noise_variance, rng),
        noise_variance,
    })
}

/// Linear convolution of a CP-prefixed frame with the tap impulse response,
/// truncated to the frame length, followed by AWGN at `snr_db` measured on the
/// noise-free received frame.
pub fn apply_channel<R: Rng + ?Sized>(
    frame_time: &[Complex64],
    ch: &ChannelRealization,
    cfg: &OfdmConfig,
    snr_db: f64,
    rng: &mut R,
) -> Result<Received> {
    let max_delay = ch.tap_delays.iter().copied().max().unwrap_or(0);
    if max_delay > cfg.cp_len {
        return Err(Error::IsiViolation {
            cp_len: cfg.cp_len,
            max_delay,
        });
    }
    if frame_time.len() != cfg.frame_len() {
        return Err(Error::InputShape(format!(
            "expected a frame of {} samples, got {}",
            cfg.frame_len(),
            frame_time.len()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); frame_time.len()];
    for (a, &d) in ch.tap_gains.iter().zip(&ch.tap_delays) {
        for (o, x) in out[d..].iter_mut().zip(frame_time) {
            *o += a * x;
        }
    }
    awgn(&out, snr_db, rng)
}

/// Straight-road constant-speed motion towards (and past) a base station.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub initial_distance_m: f64,
    pub speed_mps: f64,
    /// Perpendicular distance from the road to the base station.
    pub bs_offset_m: f64,
    /// Samples elapsed between consecutive trajectory steps.
    pub step_samples: u64,
}

impl Default for Trajectory {
    fn default() -> Self {
        Self {
            initial_distance_m: 200.0,
            speed_mps: 27.78,
            bs_offset_m: 20.0,
            step_samples: 160,
        }
    }
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_distance_m > 0.0 && self.initial_distance_m.is_finite()) {
            return Err(Error::InvalidGeometry("initial distance must be positive".into()));
        }
        if !(self.bs_offset_m >= 0.0 && self.bs_offset_m <= self.initial_distance_m) {
            return Err(Error::InvalidGeometry(
                "base-station offset must lie in [0, initial distance]".into(),
            ));
        }
        if !(self.speed_mps >= 0.0 && self.speed_mps.is_finite()) {
            return Err(Error::InvalidGeometry("speed must be non-negative".into()));
        }
        Ok(())
    }

    /// Distance to the base station after `elapsed_s` seconds.
    ///
    /// The vehicle starts `sqrt(d0^2 - offset^2)` metres before the point of
    /// closest approach. With zero offset the road runs through the base
    /// station and reaching it is a geometry error.
    pub fn distance_at(&self, elapsed_s: f64) -> Result<f64> {
        let along0 = (self.initial_distance_m.powi(2) - self.bs_offset_m.powi(2)).max(0.0).sqrt();
        let along = along0 - self.speed_mps * elapsed_s;
        let d = if self.bs_offset_m == 0.0 {
            along
        } else {
            along.hypot(self.bs_offset_m)
        };
        if d <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "vehicle reaches the base station after {elapsed_s} s"
            )));
        }
        Ok(d)
    }
}

/// Realizations at trajectory steps `0..n_steps`, sharing static tap phases.
///
/// Step `i` sits at sample index `i * step_samples`; each step draws its own
/// large-scale gain at the current distance.
pub fn evolve_trajectory<R: Rng + ?Sized>(
    traj: &Trajectory,
    profile: &MultipathProfile,
    params: &LargeScaleParams,
    n_steps: usize,
    num_subcarriers: usize,
    rng: &mut R,
) -> Result<Vec<ChannelRealization>> {
    if n_steps == 0 {
        return Err(Error::InvalidDimension("trajectory needs at least one step".into()));
    }
    traj.validate()?;
    params.validate()?;
    let process = FadingProcess::new(profile.clone(), rng)?;
    (0..n_steps)
        .map(|i| {
            let n = i as u64 * traj.step_samples;
            let distance = traj.distance_at(n as f64 * profile.sample_period_s)?;
            let mut r = process.realization(n, num_subcarriers)?;
            r.large_scale_gain = large_scale_gain(params, distance, rng)?;
            r.distance_m = Some(distance);
            Ok(r)
        })
        .collect()
}
