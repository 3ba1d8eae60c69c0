//! Run configuration: INI sections `[ofdm]`, `[channel]`, `[mlp]` and
//! `[experiment]`. Omitted keys keep their defaults; unknown sections or keys
//! are rejected. Every validation error names the offending `section.key`.

use std::fmt::Display;
use std::str::FromStr;

use ini::Ini;

use crate::channel::{LargeScaleParams, MultipathProfile};
use crate::error::{Error, Result};
use crate::harness::{Estimator, LinkConfig, SweepConfig};
use crate::mlp::TrainConfig;
use crate::ofdm::QPSK_BITS;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub snr_db: Vec<f64>,
    pub frames_per_point: usize,
    /// Pilot frames in a generated dataset.
    pub n_frames: usize,
    /// SNR at which training datasets are generated.
    pub train_snr_db: f64,
    pub horizon: usize,
    pub estimators: Vec<Estimator>,
    pub covariance_samples: usize,
    pub hist_bins: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            frames_per_point: 8000,
            n_frames: 200,
            train_snr_db: 10.0,
            horizon: 0,
            estimators: vec![Estimator::Perfect, Estimator::Ls, Estimator::Mmse, Estimator::Mlp],
            covariance_samples: 2000,
            hist_bins: 40,
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub link: LinkConfig,
    pub hidden_units: usize,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            link: LinkConfig {
                frames_per_trajectory: 10,
                ..LinkConfig::default()
            },
            hidden_units: 10,
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

const OFDM_KEYS: &[&str] = &["num_subcarriers", "cp_len", "bits_per_symbol"];
const CHANNEL_KEYS: &[&str] = &[
    "tap_delays",
    "tap_powers",
    "doppler_hz",
    "carrier_freq_hz",
    "sample_period_s",
    "pathloss_constant",
    "pathloss_exponent",
    "shadow_sigma_db",
    "fast_fading_mean",
    "initial_distance_m",
    "speed_mps",
    "bs_offset_m",
    "step_samples",
    "frames_per_trajectory",
];
const MLP_KEYS: &[&str] = &["hidden_units", "learning_rate", "epochs", "init_scale", "seed", "standardize"];
const EXPERIMENT_KEYS: &[&str] = &[
    "seed",
    "snr_db",
    "frames_per_point",
    "n_frames",
    "train_snr_db",
    "horizon",
    "estimators",
    "covariance_samples",
    "hist_bins",
    "output_dir",
];

struct Section<'a> {
    name: &'static str,
    props: Option<&'a ini::Properties>,
}

impl Section<'_> {
    fn key(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.props.and_then(|p| p.get(key)).map(str::trim)
    }

    fn value<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.raw(key) {
            *slot = v
                .parse()
                .map_err(|e: T::Err| Error::config(self.key(key), format!("cannot parse `{v}`: {e}")))?;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.raw(key) {
            *slot = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|e: T::Err| Error::config(self.key(key), format!("cannot parse `{s}`: {e}")))
                })
                .collect::<Result<_>>()?;
        }
        Ok(())
    }
}

fn check(ok: bool, key: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, reason))
    }
}

fn keyed<T>(r: Result<T>, key: &str) -> Result<T> {
    r.map_err(|e| Error::config(key, e.to_string()))
}

impl RunConfig {
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Parse {
            line: e.line,
            reason: e.msg.to_string(),
        })?;
        let known: [(&'static str, &[&str]); 4] = [
            ("ofdm", OFDM_KEYS),
            ("channel", CHANNEL_KEYS),
            ("mlp", MLP_KEYS),
            ("experiment", EXPERIMENT_KEYS),
        ];
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(Error::config(k, "keys must belong to a section"));
                }
                continue;
            };
            let Some((_, keys)) = known.iter().find(|(s, _)| *s == name) else {
                return Err(Error::config(name, "unknown section"));
            };
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(Error::config(format!("{name}.{k}"), "unknown key"));
                }
                if props.get_all(k).count() > 1 {
                    return Err(Error::config(format!("{name}.{k}"), "duplicate key"));
                }
            }
        }
        let section = |name: &'static str| Section { name, props: ini.section(Some(name)) };

        let mut cfg = RunConfig::default();
        let s = section("ofdm");
        let ofdm = &mut cfg.link.ofdm;
        s.value("num_subcarriers", &mut ofdm.num_subcarriers)?;
        s.value("cp_len", &mut ofdm.cp_len)?;
        s.value("bits_per_symbol", &mut ofdm.bits_per_symbol)?;

        let s = section("channel");
        let p = &mut cfg.link.profile;
        s.list("tap_delays", &mut p.tap_delays)?;
        s.list("tap_powers", &mut p.tap_powers)?;
        s.list("doppler_hz", &mut p.doppler_hz)?;
        if p.doppler_hz.len() == 1 {
            let f = p.doppler_hz[0];
            *p = p.clone().with_uniform_doppler(f);
        } else if s.raw("doppler_hz").is_none() {
            *p = p.clone().with_uniform_doppler(0.0);
        }
        s.value("carrier_freq_hz", &mut p.carrier_freq_hz)?;
        s.value("sample_period_s", &mut p.sample_period_s)?;
        let ls = &mut cfg.link.large_scale;
        s.value("pathloss_constant", &mut ls.pathloss_constant)?;
        s.value("pathloss_exponent", &mut ls.pathloss_exponent)?;
        s.value("shadow_sigma_db", &mut ls.shadow_sigma_db)?;
        s.value("fast_fading_mean", &mut ls.fast_fading_mean)?;
        let t = &mut cfg.link.trajectory;
        s.value("initial_distance_m", &mut t.initial_distance_m)?;
        s.value("speed_mps", &mut t.speed_mps)?;
        s.value("bs_offset_m", &mut t.bs_offset_m)?;
        s.value("step_samples", &mut t.step_samples)?;
        s.value("frames_per_trajectory", &mut cfg.link.frames_per_trajectory)?;

        let s = section("mlp");
        s.value("hidden_units", &mut cfg.hidden_units)?;
        let tr = &mut cfg.train;
        s.value("learning_rate", &mut tr.learning_rate)?;
        s.value("epochs", &mut tr.epochs)?;
        s.value("init_scale", &mut tr.init_scale)?;
        s.value("seed", &mut tr.seed)?;
        s.value("standardize", &mut tr.standardize)?;

        let s = section("experiment");
        let ex = &mut cfg.experiment;
        s.value("seed", &mut ex.seed)?;
        s.list("snr_db", &mut ex.snr_db)?;
        s.value("frames_per_point", &mut ex.frames_per_point)?;
        s.value("n_frames", &mut ex.n_frames)?;
        s.value("train_snr_db", &mut ex.train_snr_db)?;
        s.value("horizon", &mut ex.horizon)?;
        s.list("estimators", &mut ex.estimators)?;
        s.value("covariance_samples", &mut ex.covariance_samples)?;
        s.value("hist_bins", &mut ex.hist_bins)?;
        s.value("output_dir", &mut ex.output_dir)?;

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> std::io::Result<Result<Self>> {
        std::fs::read_to_string(path).map(|text| Self::from_ini_str(&text))
    }

    /// Replaces both the experiment and training seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.experiment.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.link.ofdm;
        check(
            o.num_subcarriers >= 2 && o.num_subcarriers.is_power_of_two(),
            "ofdm.num_subcarriers",
            format!("must be a power of two >= 2, got {}", o.num_subcarriers),
        )?;
        check(
            o.cp_len < o.num_subcarriers,
            "ofdm.cp_len",
            format!("must be below num_subcarriers ({}), got {}", o.num_subcarriers, o.cp_len),
        )?;
        check(
            o.bits_per_symbol == QPSK_BITS,
            "ofdm.bits_per_symbol",
            format!("only 4-QAM ({QPSK_BITS} bits) is supported, got {}", o.bits_per_symbol),
        )?;

        let p = &self.link.profile;
        check(!p.tap_delays.is_empty(), "channel.tap_delays", "at least one tap is required")?;
        check(p.tap_delays[0] == 0, "channel.tap_delays", "first tap must have zero delay")?;
        check(
            p.tap_delays.windows(2).all(|w| w[0] < w[1]),
            "channel.tap_delays",
            "delays must be strictly increasing",
        )?;
        check(
            p.max_delay() == 0 || p.max_delay() < o.cp_len,
            "channel.tap_delays",
            format!("max delay {} must be below ofdm.cp_len {}", p.max_delay(), o.cp_len),
        )?;
        check(
            p.tap_powers.len() == p.tap_delays.len(),
            "channel.tap_powers",
            "needs one power per tap",
        )?;
        keyed(
            MultipathProfile { doppler_hz: vec![0.0; p.num_taps()], ..p.clone() }.validate(),
            "channel.tap_powers",
        )?;
        check(
            p.doppler_hz.len() == p.tap_delays.len() && p.doppler_hz.iter().all(|f| f.is_finite() && *f >= 0.0),
            "channel.doppler_hz",
            "needs one non-negative value, or one per tap",
        )?;
        check(
            p.carrier_freq_hz.is_finite() && p.carrier_freq_hz > 0.0,
            "channel.carrier_freq_hz",
            "must be positive",
        )?;
        check(
            p.sample_period_s.is_finite() && p.sample_period_s > 0.0,
            "channel.sample_period_s",
            "must be positive",
        )?;
        let l = &self.link.large_scale;
        let d = LargeScaleParams::default();
        keyed(LargeScaleParams { pathloss_constant: l.pathloss_constant, ..d }.validate(), "channel.pathloss_constant")?;
        keyed(LargeScaleParams { pathloss_exponent: l.pathloss_exponent, ..d }.validate(), "channel.pathloss_exponent")?;
        keyed(LargeScaleParams { shadow_sigma_db: l.shadow_sigma_db, ..d }.validate(), "channel.shadow_sigma_db")?;
        keyed(LargeScaleParams { fast_fading_mean: l.fast_fading_mean, ..d }.validate(), "channel.fast_fading_mean")?;
        let t = &self.link.trajectory;
        check(
            t.initial_distance_m.is_finite() && t.initial_distance_m > 0.0,
            "channel.initial_distance_m",
            "must be positive",
        )?;
        check(
            t.speed_mps.is_finite() && t.speed_mps >= 0.0,
            "channel.speed_mps",
            "must be non-negative",
        )?;
        keyed(t.validate(), "channel.bs_offset_m")?;
        check(t.step_samples > 0, "channel.step_samples", "must be positive")?;
        check(
            self.link.frames_per_trajectory > 0,
            "channel.frames_per_trajectory",
            "must be at least 1",
        )?;

        check(self.hidden_units >= 1, "mlp.hidden_units", "must be at least 1")?;
        check(self.train.epochs >= 1, "mlp.epochs", "must be at least 1")?;
        self.train.validate()?;

        let e = &self.experiment;
        check(!e.snr_db.is_empty(), "experiment.snr_db", "needs at least one SNR point")?;
        check(
            e.snr_db.iter().all(|s| !s.is_nan() && *s != f64::NEG_INFINITY),
            "experiment.snr_db",
            "SNR points must be numbers or +inf",
        )?;
        check(e.frames_per_point >= 1, "experiment.frames_per_point", "must be at least 1")?;
        check(e.n_frames >= 10, "experiment.n_frames", "must be at least 10")?;
        check(
            !e.train_snr_db.is_nan() && e.train_snr_db != f64::NEG_INFINITY,
            "experiment.train_snr_db",
            "must be a number or +inf",
        )?;
        check(e.horizon <= 1, "experiment.horizon", "must be 0 (estimation) or 1 (prediction)")?;
        check(!e.estimators.is_empty(), "experiment.estimators", "needs at least one estimator")?;
        check(
            !e.estimators.contains(&Estimator::Mmse) || e.covariance_samples >= 1,
            "experiment.covariance_samples",
            "must be at least 1 when mmse is requested",
        )?;
        check(e.hist_bins >= 2, "experiment.hist_bins", "must be at least 2")?;
        check(!e.output_dir.is_empty(), "experiment.output_dir", "must not be empty")?;
        Ok(())
    }

    pub fn sweep_config(&self) -> SweepConfig {
        let e = &self.experiment;
        SweepConfig {
            snr_db: e.snr_db.clone(),
            frames_per_point: e.frames_per_point,
            estimators: e.estimators.clone(),
            horizon: e.horizon,
            covariance_samples: e.covariance_samples,
            seed: e.seed,
        }
    }
}
