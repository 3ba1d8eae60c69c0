//! `v2i` command-line driver: dataset generation, training, BER sweeps and
//! gradient checking, each a deterministic function of `(config, seed)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use v2i_core::config::RunConfig;
use v2i_core::exec::Execution;
use v2i_core::harness::{
    build_dataset_with, error_histogram, hist_csv, model_series, mse_epoch_csv, mse_vs_epoch, regression_csv,
    ber_sweep, train_model, Dataset, Estimator, Metric, Split,
};
use v2i_core::mlp::{analytic_gradient, gradient_check, GradCheckReport, Gradients, MlpNetwork, TrainingSample};
use v2i_core::{format::sig9, Error};

pub const DATASET_FILE: &str = "dataset.csv";
pub const MODEL_FILE: &str = "model.mlp";
pub const EPOCH_FILE: &str = "mse_epoch.csv";
pub const BER_FILE: &str = "ber.csv";
pub const NMSE_FILE: &str = "nmse.csv";
pub const HIST_FILE: &str = "hist.csv";
pub const REGRESSION_FILE: &str = "regression.csv";
pub const REGRESSION_STATS_FILE: &str = "regression_stats.csv";

#[derive(Debug, Parser)]
#[command(name = "v2i", version, about = "OFDM channel estimation experiments for vehicle-to-infrastructure links")]
pub struct Cli {
    /// INI run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides both the experiment and the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `experiment.output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run Monte Carlo trials on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a training dataset at `experiment.train_snr_db`.
    Dataset,
    /// Train the MLP; writes the best-validation model and the epoch curve.
    Train {
        /// Dataset to train on [default: <out>/dataset.csv].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// BER/NMSE sweep over `experiment.snr_db`; error histogram and
    /// regression tables too when a model and dataset are available.
    Sweep {
        /// Trained model [default: <out>/model.mlp when mlp is requested].
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset for the histogram and regression tables
        /// [default: <out>/dataset.csv if present].
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Compare backprop gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(Error),
    Numerical(String),
    Io { path: PathBuf, source: std::io::Error },
    /// A file was read but its contents are unusable.
    Format { path: PathBuf, source: Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration error: {e}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Format { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for CliError {}

/// Routes a core error to the exit-code class it belongs to.
fn classify(e: Error) -> CliError {
    match e {
        Error::InvalidConfig { .. }
        | Error::Parse { .. }
        | Error::MissingModel(_)
        | Error::InvalidDimension(_)
        | Error::InvalidGeometry(_)
        | Error::InvalidProfile(_)
        | Error::IsiViolation { .. }
        | Error::UnsupportedModulation { .. }
        | Error::InsufficientData(_) => CliError::Config(e),
        other => CliError::Numerical(other.to_string()),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Output files of one command, written together once it has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(PathBuf, String)>,
    pub messages: Vec<String>,
}

impl Outputs {
    fn file(&mut self, path: PathBuf, contents: String) {
        self.files.push((path, contents));
    }

    fn say(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }

    pub fn write(&self) -> Result<(), CliError> {
        for (path, contents) in &self.files {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
            }
            fs::write(path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
        }
        Ok(())
    }
}

pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub exec: Execution,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(path) => RunConfig::from_ini_str(&read(path)?).map_err(CliError::Config)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            config = config.with_seed(seed);
        }
        let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&config.experiment.output_dir));
        let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
        Ok(Self { config, out_dir, exec })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn cmd_dataset(ctx: &Context) -> Result<Outputs, CliError> {
    let ds = build_dataset_ctx(ctx, ctx.config.experiment.train_snr_db).map_err(classify)?;
    let mut out = Outputs::default();
    let path = ctx.out(DATASET_FILE);
    out.say(format!(
        "{}: {} samples ({} train, {} validation, {} test)",
        path.display(),
        ds.len(),
        ds.train.len(),
        ds.validation.len(),
        ds.test.len()
    ));
    out.file(path, ds.to_text());
    Ok(out)
}

fn build_dataset_ctx(ctx: &Context, snr_db: f64) -> v2i_core::Result<Dataset> {
    let cfg = &ctx.config;
    let e = &cfg.experiment;
    build_dataset_with(&cfg.link, snr_db, e.n_frames, e.horizon, e.seed, ctx.exec)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::from_text(&read(path)?).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}

fn load_model(path: &Path) -> Result<MlpNetwork, CliError> {
    MlpNetwork::load(&read(path)?).map_err(|source| CliError::Format { path: path.to_path_buf(), source })
}

pub fn cmd_train(ctx: &Context, dataset: Option<&Path>) -> Result<Outputs, CliError> {
    let path = dataset.map(Path::to_path_buf).unwrap_or_else(|| ctx.out(DATASET_FILE));
    let ds = load_dataset(&path)?;
    let cfg = &ctx.config;
    let outcome = train_model(&ds, cfg.hidden_units, &cfg.train).map_err(|e| match e {
        Error::Diverged { epoch, sample, .. } => {
            CliError::Numerical(format!("training diverged at epoch {epoch}, sample {sample}"))
        }
        other => classify(other),
    })?;
    let rows = mse_vs_epoch(&outcome.history, ds.provenance.snr_db);
    let mut out = Outputs::default();
    if let Some(last) = outcome.history.last() {
        out.say(format!("final train nmse {}", sig9(last.train.nmse)));
    }
    if let Some(best) = outcome.best_epoch {
        out.say(format!("best epoch {best}"));
    }
    out.file(ctx.out(MODEL_FILE), outcome.network.save());
    out.file(ctx.out(EPOCH_FILE), mse_epoch_csv(&rows));
    Ok(out)
}

pub fn cmd_sweep(ctx: &Context, model: Option<&Path>, dataset: Option<&Path>) -> Result<Outputs, CliError> {
    let cfg = &ctx.config;
    let wants_mlp = cfg.experiment.estimators.contains(&Estimator::Mlp);
    let model_path = match model {
        Some(p) => Some(p.to_path_buf()),
        None if wants_mlp => {
            let p = ctx.out(MODEL_FILE);
            if !p.is_file() {
                return Err(CliError::Config(Error::MissingModel(format!(
                    "mlp requested but {} does not exist; run `train` or pass --model",
                    p.display()
                ))));
            }
            Some(p)
        }
        None => None,
    };
    let net = model_path.as_deref().map(load_model).transpose()?;
    let dataset_path = match dataset {
        Some(p) => Some(p.to_path_buf()),
        None => Some(ctx.out(DATASET_FILE)).filter(|p| p.is_file()),
    };

    let result = ber_sweep(&cfg.link, &cfg.sweep_config(), net.as_ref(), ctx.exec).map_err(classify)?;
    let mut out = Outputs::default();
    for &snr in &cfg.experiment.snr_db {
        let line: Vec<String> = cfg
            .experiment
            .estimators
            .iter()
            .filter_map(|&e| result.get(snr, e, Metric::Ber).map(|r| format!("{e} {}", sig9(r.value))))
            .collect();
        out.say(format!("{} dB: {}", sig9(snr), line.join(", ")));
    }
    out.file(ctx.out(BER_FILE), result.ber_csv());
    out.file(ctx.out(NMSE_FILE), nmse_csv(&result));

    if let (Some(net), Some(path)) = (&net, dataset_path) {
        let ds = load_dataset(&path)?;
        if !ds.test.is_empty() {
            let series = model_series(net, &ds);
            let hist = error_histogram(&series, cfg.experiment.hist_bins).map_err(classify)?;
            let (points, stats) = regression_csv(&series).map_err(classify)?;
            out.file(ctx.out(HIST_FILE), hist_csv(&hist));
            out.file(ctx.out(REGRESSION_FILE), points);
            out.file(ctx.out(REGRESSION_STATS_FILE), stats);
            if let Some(test) = series.iter().find(|s| s.split == Split::Test) {
                if let Ok(st) = v2i_core::harness::regression_stats(&test.outputs, &test.targets) {
                    out.say(format!("test regression r {}", sig9(st.r)));
                }
            }
        }
    }
    Ok(out)
}

/// `nmse.csv`: `snr_db,estimator,nmse`, sorted like `ber.csv`.
pub fn nmse_csv(result: &v2i_core::harness::SweepResult) -> String {
    let mut rows: Vec<_> = result.rows.iter().filter(|r| r.metric == Metric::Nmse).collect();
    rows.sort_by(|a, b| {
        a.snr_db
            .total_cmp(&b.snr_db)
            .then_with(|| a.estimator.as_str().cmp(b.estimator.as_str()))
    });
    let mut out = String::from("snr_db,estimator,nmse\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", sig9(r.snr_db), r.estimator, sig9(r.value)));
    }
    out
}

/// Gradient check against an arbitrary analytic gradient; fails when the
/// worst relative error reaches the tolerance.
pub fn cmd_gradcheck_with<F>(seed: u64, cases: usize, analytic: F) -> Result<(GradCheckReport, Outputs), CliError>
where
    F: Fn(&MlpNetwork, &TrainingSample) -> Gradients,
{
    if cases == 0 {
        return Err(CliError::Config(Error::config("cases", "must be at least 1")));
    }
    let report = gradient_check(seed, cases, analytic);
    let mut out = Outputs::default();
    out.say(format!(
        "max relative error {} over {} cases (worst case {}, tolerance {})",
        sig9(report.max_relative_error),
        report.cases,
        report.worst_case,
        sig9(report.tolerance)
    ));
    if report.passed() {
        Ok((report, out))
    } else {
        Err(CliError::Numerical(out.messages.remove(0)))
    }
}

pub fn cmd_gradcheck(ctx: &Context, cases: usize) -> Result<Outputs, CliError> {
    cmd_gradcheck_with(ctx.config.experiment.seed, cases, analytic_gradient).map(|(_, out)| out)
}

/// Executes the parsed command and writes its output files; returns messages for stdout.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let ctx = Context::from_cli(cli)?;
    let outputs = match &cli.command {
        Command::Dataset => cmd_dataset(&ctx)?,
        Command::Train { dataset } => cmd_train(&ctx, dataset.as_deref())?,
        Command::Sweep { model, dataset } => cmd_sweep(&ctx, model.as_deref(), dataset.as_deref())?,
        Command::Gradcheck { cases } => cmd_gradcheck(&ctx, *cases)?,
    };
    outputs.write()?;
    Ok(outputs.messages)
}

/// Runs with process-style arguments and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(messages) => {
            for m in messages {
                println!("{m}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
