//! Experiment orchestration: datasets from vehicle trajectories, metrics, and
//! Monte Carlo BER sweeps comparing channel estimators.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;

use crate::channel::{
    apply_channel, evolve_trajectory, generate_cir, LargeScaleParams, MultipathProfile, Trajectory,
};
use crate::error::{Error, Result};
use crate::estimators::{equalize, ls_estimate, sample_covariance, ChannelCovariance, MmseFilter, PilotObservation};
use crate::exec::Execution;
use crate::format::sig9;
use crate::mlp::{init_network, train, MlpNetwork, TrainConfig, TrainOutcome, TrainingData, TrainingSample};
use crate::ofdm::{qam_demap, qam_map, random_bits, random_qpsk, OfdmConfig, OfdmModem};
use crate::rng::{self, tag};

/// Fractions of the train and validation splits; the test split takes the rest.
pub const TRAIN_FRACTION: f64 = 0.70;
pub const VALIDATION_FRACTION: f64 = 0.15;

/// Everything needed to simulate the physical link.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkConfig {
    pub ofdm: OfdmConfig,
    pub profile: MultipathProfile,
    pub large_scale: LargeScaleParams,
    pub trajectory: Trajectory,
    /// Consecutive frames sharing one set of static tap phases in a dataset.
    pub frames_per_trajectory: usize,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        self.profile.validate_for(&self.ofdm)?;
        self.large_scale.validate()?;
        self.trajectory.validate()?;
        if self.frames_per_trajectory == 0 {
            return Err(Error::config("channel.frames_per_trajectory", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::InputShape(format!("unknown split `{s}`")))
    }
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub snr_db: f64,
    pub n_frames: usize,
    /// Steps between the observed pilot frame and the target channel
    /// (0 = estimation, 1 = one-step prediction).
    pub horizon: usize,
    pub num_subcarriers: usize,
    pub cp_len: usize,
    pub tap_delays: Vec<usize>,
    pub tap_powers: Vec<f64>,
    pub doppler_hz: Vec<f64>,
    pub step_samples: u64,
    pub frames_per_trajectory: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<TrainingSample>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Split label of every sample, in sample order.
    pub fn labels(&self) -> Vec<Split> {
        let mut labels = vec![Split::Train; self.samples.len()];
        for split in [Split::Validation, Split::Test] {
            for &i in self.indices(split) {
                labels[i] = split;
            }
        }
        labels
    }

    pub fn split_samples(&self, split: Split) -> Vec<TrainingSample> {
        self.indices(split).iter().map(|&i| self.samples[i]).collect()
    }

    pub fn training_data(&self) -> TrainingData {
        TrainingData {
            train: self.split_samples(Split::Train),
            validation: self.split_samples(Split::Validation),
            test: self.split_samples(Split::Test),
        }
    }

    /// Text serialization: `#`-prefixed provenance lines, then a
    /// `in_re,in_im,t_re,t_im,split` table with round-trip exact floats.
    pub fn to_text(&self) -> String {
        let p = &self.provenance;
        let join = |v: Vec<String>| v.join(" ");
        let mut out = String::from("# v2i-dataset v1\n");
        let _ = writeln!(out, "# seed={}", p.seed);
        let _ = writeln!(out, "# snr_db={:e}", p.snr_db);
        let _ = writeln!(out, "# n_frames={}", p.n_frames);
        let _ = writeln!(out, "# horizon={}", p.horizon);
        let _ = writeln!(out, "# num_subcarriers={}", p.num_subcarriers);
        let _ = writeln!(out, "# cp_len={}", p.cp_len);
        let _ = writeln!(out, "# tap_delays={}", join(p.tap_delays.iter().map(|d| d.to_string()).collect()));
        let _ = writeln!(out, "# tap_powers={}", join(p.tap_powers.iter().map(|x| format!("{x:e}")).collect()));
        let _ = writeln!(out, "# doppler_hz={}", join(p.doppler_hz.iter().map(|x| format!("{x:e}")).collect()));
        let _ = writeln!(out, "# step_samples={}", p.step_samples);
        let _ = writeln!(out, "# frames_per_trajectory={}", p.frames_per_trajectory);
        out.push_str("in_re,in_im,t_re,t_im,split\n");
        for (s, label) in self.samples.iter().zip(self.labels()) {
            let _ = writeln!(
                out,
                "{:e},{:e},{:e},{:e},{}",
                s.input[0], s.input[1], s.target[0], s.target[1], label
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut meta = BTreeMap::new();
        let mut samples = Vec::new();
        let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
        let mut header_seen = false;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let parse_err = |reason: String| Error::Parse { line: lineno, reason };
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line.trim() != "in_re,in_im,t_re,t_im,split" {
                    return Err(parse_err(format!("unexpected header `{line}`")));
                }
                header_seen = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(parse_err(format!("expected 5 columns, got {}", cols.len())));
            }
            let v: Vec<f64> = cols[..4]
                .iter()
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(e.to_string()))?;
            let split: Split = cols[4].trim().parse().map_err(|e: Error| parse_err(e.to_string()))?;
            let i = samples.len();
            samples.push(TrainingSample::new([v[0], v[1]], [v[2], v[3]]));
            match split {
                Split::Train => train.push(i),
                Split::Validation => validation.push(i),
                Split::Test => test.push(i),
            }
        }
        if !header_seen {
            return Err(Error::Parse { line: 0, reason: "missing column header".into() });
        }
        let get = |k: &str| -> Result<&String> {
            meta.get(k).ok_or_else(|| Error::Parse { line: 0, reason: format!("missing provenance `{k}`") })
        };
        fn num<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Parse { line: 0, reason: format!("bad provenance `{k}={v}`") })
        }
        fn list<T: FromStr>(k: &str, v: &str) -> Result<Vec<T>> {
            v.split_whitespace().map(|x| num(k, x)).collect()
        }
        let provenance = Provenance {
            seed: num("seed", get("seed")?)?,
            snr_db: num("snr_db", get("snr_db")?)?,
            n_frames: num("n_frames", get("n_frames")?)?,
            horizon: num("horizon", get("horizon")?)?,
            num_subcarriers: num("num_subcarriers", get("num_subcarriers")?)?,
            cp_len: num("cp_len", get("cp_len")?)?,
            tap_delays: list("tap_delays", get("tap_delays")?)?,
            tap_powers: list("tap_powers", get("tap_powers")?)?,
            doppler_hz: list("doppler_hz", get("doppler_hz")?)?,
            step_samples: num("step_samples", get("step_samples")?)?,
            frames_per_trajectory: num("frames_per_trajectory", get("frames_per_trajectory")?)?,
        };
        Ok(Self { samples, train, validation, test, provenance })
    }
}

/// Deterministic 70/15/15 partition of `0..n`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[tag::SPLIT]));
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = ((n as f64 * VALIDATION_FRACTION).round() as usize).min(n - n_train);
    let mut train = idx[..n_train].to_vec();
    let mut validation = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    (train, validation, test)
}

fn ls_observation(
    modem: &OfdmModem,
    link: &LinkConfig,
    pilot: &[Complex64],
    channel: &crate::channel::ChannelRealization,
    snr_db: f64,
    rng: &mut rng::SimRng,
) -> Result<PilotObservation> {
    let tx = modem.modulate(pilot)?;
    let rx = apply_channel(&tx, channel, &link.ofdm, snr_db, rng)?;
    let y = modem.demodulate(&rx.samples)?;
    PilotObservation::new(pilot.to_vec(), y, rx.noise_variance)
}

/// Pilot frames sent along vehicle trajectories, turned into per-subcarrier
/// `(LS observation, true response)` pairs.
///
/// Frames are grouped into trajectories of `frames_per_trajectory` steps with
/// fresh static tap phases each. Sample `k` of frame `m` pairs the LS
/// observation `Y_m(k)/X_m(k)` with the true `H_{m+horizon}(k)`.
pub fn build_dataset(link: &LinkConfig, snr_db: f64, n_frames: usize, horizon: usize, seed: u64) -> Result<Dataset> {
    build_dataset_with(link, snr_db, n_frames, horizon, seed, Execution::default())
}

pub fn build_dataset_with(
    link: &LinkConfig,
    snr_db: f64,
    n_frames: usize,
    horizon: usize,
    seed: u64,
    exec: Execution,
) -> Result<Dataset> {
    link.validate()?;
    if n_frames < 10 {
        return Err(Error::InsufficientData(format!("need at least 10 frames, got {n_frames}")));
    }
    let modem = OfdmModem::new(link.ofdm)?;
    let n = link.ofdm.num_subcarriers;
    let per_traj = link.frames_per_trajectory;
    let n_traj = n_frames.div_ceil(per_traj);

    let chunks = exec.map(n_traj, |t| -> Result<Vec<TrainingSample>> {
        let frames = per_traj.min(n_frames - t * per_traj);
        let mut rng = rng::stream(seed, &[tag::DATASET, t as u64]);
        let channels = evolve_trajectory(
            &link.trajectory,
            &link.profile,
            &link.large_scale,
            frames + horizon,
            n,
            &mut rng,
        )?;
        let mut out = Vec::with_capacity(frames * n);
        for m in 0..frames {
            let pilot = random_qpsk(n, &mut rng);
            let obs = ls_observation(&modem, link, &pilot, &channels[m], snr_db, &mut rng)?;
            let h_ls = ls_estimate(&obs)?;
            let truth = &channels[m + horizon].cfr;
            out.extend(
                h_ls.iter()
                    .zip(truth)
                    .map(|(x, t)| TrainingSample::new([x.re, x.im], [t.re, t.im])),
            );
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(n_frames * n);
    for chunk in chunks {
        samples.extend(chunk?);
    }
    let (train, validation, test) = split_indices(samples.len(), seed);
    Ok(Dataset {
        samples,
        train,
        validation,
        test,
        provenance: Provenance {
            seed,
            snr_db,
            n_frames,
            horizon,
            num_subcarriers: n,
            cp_len: link.ofdm.cp_len,
            tap_delays: link.profile.tap_delays.clone(),
            tap_powers: link.profile.tap_powers.clone(),
            doppler_hz: link.profile.doppler_hz.clone(),
            step_samples: link.trajectory.step_samples,
            frames_per_trajectory: per_traj,
        },
    })
}

/// Initializes a network from `seed` and trains it on the dataset's splits.
pub fn train_model(dataset: &Dataset, n_hidden: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = init_network(n_hidden, cfg.seed, cfg.init_scale)?;
    train(&init, &dataset.training_data(), cfg)
}

/// Energy-normalized MSE `Σ‖ĥ - h‖² / Σ‖h‖²`.
pub fn nmse(estimates: &[Vec<Complex64>], truths: &[Vec<Complex64>]) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.iter().zip(truths).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::InputShape("estimates and truths differ in shape".into()));
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for (est, truth) in estimates.iter().zip(truths) {
        for (e, t) in est.iter().zip(truth) {
            err += (e - t).norm_sqr();
            energy += t.norm_sqr();
        }
    }
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("truth has zero energy".into()));
    }
    Ok(err / energy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BitErrors {
    pub error_bits: u64,
    pub total_bits: u64,
}

impl BitErrors {
    pub fn rate(&self) -> f64 {
        if self.total_bits == 0 {
            0.0
        } else {
            self.error_bits as f64 / self.total_bits as f64
        }
    }

    /// Binomial standard error of [`BitErrors::rate`].
    pub fn std_error(&self) -> f64 {
        if self.total_bits == 0 {
            return 0.0;
        }
        let p = self.rate();
        (p * (1.0 - p) / self.total_bits as f64).sqrt()
    }

    fn add(&mut self, other: BitErrors) {
        self.error_bits += other.error_bits;
        self.total_bits += other.total_bits;
    }
}

pub fn ber(tx_bits: &[u8], rx_bits: &[u8]) -> Result<BitErrors> {
    if tx_bits.len() != rx_bits.len() || tx_bits.is_empty() {
        return Err(Error::InputShape(format!(
            "bit streams of length {} and {}",
            tx_bits.len(),
            rx_bits.len()
        )));
    }
    let error_bits = tx_bits.iter().zip(rx_bits).filter(|(a, b)| a != b).count() as u64;
    Ok(BitErrors { error_bits, total_bits: tx_bits.len() as u64 })
}

/// `a <= b` up to `k` combined binomial standard errors.
pub fn ber_le_within(a: &BitErrors, b: &BitErrors, k: f64) -> bool {
    let sigma = (a.std_error().powi(2) + b.std_error().powi(2)).sqrt();
    a.rate() <= b.rate() + k * sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Estimator {
    /// Genie: the true channel response.
    Perfect,
    Ls,
    Mmse,
    /// LS estimate from the previous frame's pilot.
    OutdatedLs,
    Mlp,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Perfect,
        Estimator::Ls,
        Estimator::Mmse,
        Estimator::OutdatedLs,
        Estimator::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Perfect => "perfect",
            Estimator::Ls => "ls",
            Estimator::Mmse => "mmse",
            Estimator::OutdatedLs => "outdated_ls",
            Estimator::Mlp => "mlp",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::config("experiment.estimators", format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    /// Data frames (one channel draw each) per SNR point.
    pub frames_per_point: usize,
    pub estimators: Vec<Estimator>,
    /// Input alignment of the MLP estimator: 0 feeds the current pilot's LS
    /// observation, 1 the previous frame's (one-step prediction).
    pub horizon: usize,
    /// Channel draws used to estimate the MMSE prior covariance.
    pub covariance_samples: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            frames_per_point: 1000,
            estimators: vec![Estimator::Perfect, Estimator::Ls, Estimator::Mmse],
            horizon: 0,
            covariance_samples: 2000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Ber,
    Nmse,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ber => "ber",
            Metric::Nmse => "nmse",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub estimator: Estimator,
    pub metric: Metric,
    pub value: f64,
    /// Frames simulated for this point.
    pub trial_count: u64,
    /// Bits counted (BER rows only).
    pub total_bits: u64,
    pub error_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn get(&self, snr_db: f64, estimator: Estimator, metric: Metric) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.estimator == estimator && r.metric == metric)
    }

    pub fn bit_errors(&self, snr_db: f64, estimator: Estimator) -> Option<BitErrors> {
        self.get(snr_db, estimator, Metric::Ber).map(|r| BitErrors {
            error_bits: r.error_bits,
            total_bits: r.total_bits,
        })
    }

    /// `ber.csv`: `snr_db,estimator,ber,total_bits,error_bits`, sorted by SNR then estimator name.
    pub fn ber_csv(&self) -> String {
        let mut rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.metric == Metric::Ber).collect();
        rows.sort_by(|a, b| {
            a.snr_db
                .total_cmp(&b.snr_db)
                .then_with(|| a.estimator.as_str().cmp(b.estimator.as_str()))
        });
        let mut out = String::from("snr_db,estimator,ber,total_bits,error_bits\n");
        for r in rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                sig9(r.snr_db),
                r.estimator,
                sig9(r.value),
                r.total_bits,
                r.error_bits
            );
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
struct TrialTally {
    bits: Vec<BitErrors>,
    sq_err: Vec<f64>,
    energy: f64,
}

/// Everything a sweep trial needs that is shared across trials.
struct SweepContext<'a> {
    link: &'a LinkConfig,
    cfg: &'a SweepConfig,
    modem: OfdmModem,
    mmse: Option<(MmseFilter, ChannelCovariance)>,
    model: Option<&'a MlpNetwork>,
}

impl SweepContext<'_> {
    fn trial(&self, snr_idx: usize, trial: usize) -> Result<TrialTally> {
        let link = self.link;
        let n = link.ofdm.num_subcarriers;
        let snr_db = self.cfg.snr_db[snr_idx];
        let mut rng = rng::stream(self.cfg.seed, &[tag::SWEEP, snr_idx as u64, trial as u64]);
        let channels = evolve_trajectory(&link.trajectory, &link.profile, &link.large_scale, 2, n, &mut rng)?;
        let (previous, current) = (&channels[0], &channels[1]);

        let pilot_prev = random_qpsk(n, &mut rng);
        let obs_prev = ls_observation(&self.modem, link, &pilot_prev, previous, snr_db, &mut rng)?;
        let pilot = random_qpsk(n, &mut rng);
        let obs = ls_observation(&self.modem, link, &pilot, current, snr_db, &mut rng)?;

        let bits = random_bits(link.ofdm.bits_per_frame(), &mut rng);
        let tx = self.modem.modulate(&qam_map(&bits, link.ofdm.bits_per_symbol)?)?;
        let rx = apply_channel(&tx, current, &link.ofdm, snr_db, &mut rng)?;
        let y = self.modem.demodulate(&rx.samples)?;

        let ls_prev = ls_estimate(&obs_prev)?;
        let ls_cur = ls_estimate(&obs)?;
        let mut tally = TrialTally {
            energy: current.cfr.iter().map(|h| h.norm_sqr()).sum(),
            ..Default::default()
        };
        for &est in &self.cfg.estimators {
            let h_hat = match est {
                Estimator::Perfect => current.cfr.clone(),
                Estimator::Ls => ls_cur.clone(),
                Estimator::OutdatedLs => ls_prev.clone(),
                Estimator::Mmse => {
                    let (filter, cov) = self.mmse.as_ref().expect("prepared when requested");
                    filter.estimate(&obs, cov)?
                }
                Estimator::Mlp => {
                    let net = self.model.ok_or_else(|| Error::MissingModel("MLP estimator requested".into()))?;
                    let input = if self.cfg.horizon == 0 { &ls_cur } else { &ls_prev };
                    input
                        .iter()
                        .map(|x| {
                            let o = net.predict(&[x.re, x.im]);
                            Complex64::new(o[0], o[1])
                        })
                        .collect()
                }
            };
            let eq = equalize(&y, &h_hat)?;
            tally.bits.push(ber(&bits, &qam_demap(&eq.symbols))?);
            tally.sq_err.push(h_hat.iter().zip(&current.cfr).map(|(a, b)| (a - b).norm_sqr()).sum());
        }
        Ok(tally)
    }
}

/// MMSE prior from `samples` independent channel draws.
pub fn estimate_covariance(link: &LinkConfig, samples: usize, seed: u64) -> Result<ChannelCovariance> {
    let gs: Vec<Vec<Complex64>> = (0..samples)
        .map(|i| {
            let mut rng = rng::stream(seed, &[tag::COVARIANCE, i as u64]);
            generate_cir(&link.profile, 0, link.ofdm.num_subcarriers, &mut rng).map(|r| r.g_vector())
        })
        .collect::<Result<_>>()?;
    sample_covariance(&gs)
}

/// Monte Carlo BER and NMSE per SNR point and estimator.
///
/// Every trial draws a fresh two-step channel trajectory, sends a pilot on
/// each step and a data frame on the second. LS and MMSE use the current
/// pilot, outdated-LS the previous one, and the MLP whichever `cfg.horizon`
/// selects. Trials are keyed by `(seed, snr index, trial index)`.
pub fn ber_sweep(
    link: &LinkConfig,
    cfg: &SweepConfig,
    model: Option<&MlpNetwork>,
    exec: Execution,
) -> Result<SweepResult> {
    link.validate()?;
    if cfg.frames_per_point == 0 || cfg.snr_db.is_empty() || cfg.estimators.is_empty() {
        return Err(Error::InsufficientData("sweep needs SNR points, frames and estimators".into()));
    }
    if cfg.estimators.contains(&Estimator::Mlp) && model.is_none() {
        return Err(Error::MissingModel("the MLP estimator needs a trained model".into()));
    }
    if cfg.horizon > 1 {
        return Err(Error::config("experiment.horizon", "must be 0 or 1"));
    }
    let mmse = if cfg.estimators.contains(&Estimator::Mmse) {
        let cov = estimate_covariance(link, cfg.covariance_samples, cfg.seed)?;
        Some((MmseFilter::new(&cov)?, cov))
    } else {
        None
    };
    let ctx = SweepContext {
        link,
        cfg,
        modem: OfdmModem::new(link.ofdm)?,
        mmse,
        model,
    };

    let per_point = cfg.frames_per_point;
    let tallies: Vec<TrialTally> = exec
        .map(cfg.snr_db.len() * per_point, |i| ctx.trial(i / per_point, i % per_point))
        .into_iter()
        .collect::<Result<_>>()?;

    let n_est = cfg.estimators.len();
    let mut rows = Vec::new();
    for (s, chunk) in tallies.chunks(per_point).enumerate() {
        let mut bits = vec![BitErrors::default(); n_est];
        let mut sq_err = vec![0.0; n_est];
        let mut energy = 0.0;
        for t in chunk {
            for e in 0..n_est {
                bits[e].add(t.bits[e]);
                sq_err[e] += t.sq_err[e];
            }
            energy += t.energy;
        }
        for (e, &est) in cfg.estimators.iter().enumerate() {
            let base = SweepRow {
                snr_db: cfg.snr_db[s],
                estimator: est,
                metric: Metric::Ber,
                value: bits[e].rate(),
                trial_count: per_point as u64,
                total_bits: bits[e].total_bits,
                error_bits: bits[e].error_bits,
            };
            rows.push(SweepRow {
                metric: Metric::Nmse,
                value: sq_err[e] / energy,
                total_bits: 0,
                error_bits: 0,
                ..base.clone()
            });
            rows.push(base);
        }
    }
    Ok(SweepResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub snr_db: f64,
    pub split: Split,
    pub nmse: f64,
    pub is_best: bool,
}

/// One row per `(epoch, split)`; the epoch with minimum validation NMSE (or
/// training NMSE without a validation split) is flagged.
pub fn mse_vs_epoch(history: &[crate::mlp::EpochMetrics], snr_db: f64) -> Vec<EpochRow> {
    let score = |m: &crate::mlp::EpochMetrics| m.validation.unwrap_or(m.train).nmse;
    let best = history
        .iter()
        .min_by(|a, b| score(a).total_cmp(&score(b)))
        .map(|m| m.epoch);
    let mut rows = Vec::new();
    for m in history {
        let splits = [
            (Split::Train, Some(m.train)),
            (Split::Validation, m.validation),
            (Split::Test, m.test),
        ];
        for (split, metrics) in splits {
            if let Some(metrics) = metrics {
                rows.push(EpochRow {
                    epoch: m.epoch,
                    snr_db,
                    split,
                    nmse: metrics.nmse,
                    is_best: Some(m.epoch) == best,
                });
            }
        }
    }
    rows
}

/// `mse_epoch.csv`: `epoch,snr_db,split,nmse,is_best`.
pub fn mse_epoch_csv(rows: &[EpochRow]) -> String {
    let mut rows: Vec<&EpochRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        a.epoch
            .cmp(&b.epoch)
            .then_with(|| a.snr_db.total_cmp(&b.snr_db))
            .then_with(|| a.split.as_str().cmp(b.split.as_str()))
    });
    let mut out = String::from("epoch,snr_db,split,nmse,is_best\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, sig9(r.snr_db), r.split, sig9(r.nmse), u8::from(r.is_best));
    }
    out
}

/// Paired real-valued outputs and targets of one data split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSeries {
    pub split: Split,
    pub outputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl SplitSeries {
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.targets.iter().zip(&self.outputs).map(|(t, o)| t - o)
    }
}

/// Network outputs against targets per split, real and imaginary parts flattened.
pub fn model_series(net: &MlpNetwork, dataset: &Dataset) -> Vec<SplitSeries> {
    Split::ALL
        .into_iter()
        .filter(|&s| !dataset.indices(s).is_empty())
        .map(|split| {
            let mut outputs = Vec::new();
            let mut targets = Vec::new();
            for &i in dataset.indices(split) {
                let s = &dataset.samples[i];
                outputs.extend(net.predict(&s.input));
                targets.extend(s.target);
            }
            SplitSeries { split, outputs, targets }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub split: Split,
}

/// Histogram of `target - output` errors on `bin_count` equal-width bins
/// spanning the error range over all splits. An all-equal error set collapses
/// to one degenerate bin.
pub fn error_histogram(series: &[SplitSeries], bin_count: usize) -> Result<Vec<HistRow>> {
    if bin_count < 2 {
        return Err(Error::InvalidDimension(format!("need at least 2 bins, got {bin_count}")));
    }
    let (lo, hi) = series
        .iter()
        .flat_map(|s| s.errors())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(e), hi.max(e)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InsufficientData("no finite errors to histogram".into()));
    }
    let bins = if hi > lo { bin_count } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut rows = Vec::new();
    for s in series {
        let mut counts = vec![0u64; bins];
        for e in s.errors() {
            let b = if bins == 1 { 0 } else { (((e - lo) / width) as usize).min(bins - 1) };
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            let bin_lo = lo + b as f64 * width;
            let bin_hi = if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width };
            rows.push(HistRow { bin_lo, bin_hi, count, split: s.split });
        }
    }
    Ok(rows)
}

/// `hist.csv`: `bin_lo,bin_hi,count,split`.
pub fn hist_csv(rows: &[HistRow]) -> String {
    let mut rows: Vec<&HistRow> = rows.iter().collect();
    rows.sort_by(|a, b| {
        a.bin_lo
            .total_cmp(&b.bin_lo)
            .then_with(|| a.bin_hi.total_cmp(&b.bin_hi))
            .then_with(|| a.count.cmp(&b.count))
            .then_with(|| a.split.as_str().cmp(b.split.as_str()))
    });
    let mut out = String::from("bin_lo,bin_hi,count,split\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", sig9(r.bin_lo), sig9(r.bin_hi), r.count, r.split);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionStats {
    pub slope: f64,
    pub intercept: f64,
    pub r: f64,
}

/// Least-squares line `output ≈ slope * target + intercept` and Pearson correlation.
pub fn regression_stats(outputs: &[f64], targets: &[f64]) -> Result<RegressionStats> {
    if outputs.len() != targets.len() {
        return Err(Error::InputShape("outputs and targets differ in length".into()));
    }
    if targets.len() < 2 {
        return Err(Error::UndefinedFit("need at least two points".into()));
    }
    let n = targets.len() as f64;
    let mt = targets.iter().sum::<f64>() / n;
    let mo = outputs.iter().sum::<f64>() / n;
    let (mut stt, mut soo, mut sto) = (0.0, 0.0, 0.0);
    for (t, o) in targets.iter().zip(outputs) {
        stt += (t - mt) * (t - mt);
        soo += (o - mo) * (o - mo);
        sto += (t - mt) * (o - mo);
    }
    if stt == 0.0 {
        return Err(Error::UndefinedFit("targets are constant".into()));
    }
    let slope = sto / stt;
    let r = if soo == 0.0 { 0.0 } else { (sto / (stt * soo).sqrt()).clamp(-1.0, 1.0) };
    Ok(RegressionStats { slope, intercept: mo - slope * mt, r })
}

/// `regression.csv` (`target,output,split`) and `regression_stats.csv`
/// (`split,slope,intercept,r`).
pub fn regression_csv(series: &[SplitSeries]) -> Result<(String, String)> {
    let mut points: Vec<(f64, f64, Split)> = series
        .iter()
        .flat_map(|s| s.targets.iter().zip(&s.outputs).map(move |(t, o)| (*t, *o, s.split)))
        .collect();
    points.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.total_cmp(&b.1))
            .then_with(|| a.2.as_str().cmp(b.2.as_str()))
    });
    let mut points_csv = String::from("target,output,split\n");
    for (t, o, s) in points {
        let _ = writeln!(points_csv, "{},{},{}", sig9(t), sig9(o), s);
    }

    let mut by_name: Vec<&SplitSeries> = series.iter().collect();
    by_name.sort_by(|a, b| a.split.as_str().cmp(b.split.as_str()));
    let mut stats_csv = String::from("split,slope,intercept,r\n");
    for s in by_name {
        let st = regression_stats(&s.outputs, &s.targets)?;
        let _ = writeln!(stats_csv, "{},{},{},{}", s.split, sig9(st.slope), sig9(st.intercept), sig9(st.r));
    }
    Ok((points_csv, stats_csv))
}
