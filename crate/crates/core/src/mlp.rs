//! Bias-free single-hidden-layer perceptron for per-subcarrier channel
//! estimation: two inputs (real and imaginary part of an observation), `n_h`
//! sigmoid hidden units and two linear outputs.
//!
//! Training is plain per-sample gradient descent on `½ Σ_k (t_k - O_k)²`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

pub const N_IN: usize = 2;
pub const N_OUT: usize = 2;

/// Default finite-difference step for [`numerical_gradient`].
pub const FD_STEP: f64 = 1e-5;
/// Gradient checks fail above this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-6;
// Relative errors are measured against max(|analytic|, |numeric|, floor); the
// floor keeps near-zero gradients from amplifying rounding noise.
const GRADCHECK_SCALE_FLOOR: f64 = 1e-3;

/// Logistic sigmoid, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub input: [f64; N_IN],
    pub target: [f64; N_OUT],
}

impl TrainingSample {
    pub fn new(input: [f64; N_IN], target: [f64; N_OUT]) -> Self {
        Self { input, target }
    }

    pub fn is_finite(&self) -> bool {
        self.input.iter().chain(&self.target).all(|v| v.is_finite())
    }
}

/// Weights of the network. `w1` is `n_in x n_h` and `w2` is `n_h x n_o`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    n_in: usize,
    n_h: usize,
    n_o: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// Activations from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: [f64; N_OUT],
    pub hidden: Vec<f64>,
}

/// `∂ε/∂w` for every weight, laid out like [`MlpNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.w2)
    }
}

/// Uniform weights in `[-init_scale, init_scale]`.
pub fn init_network(n_h: usize, seed: u64, init_scale: f64) -> Result<MlpNetwork> {
    if n_h == 0 {
        return Err(Error::InvalidDimension("hidden layer needs at least one unit".into()));
    }
    if !(init_scale >= 0.0 && init_scale.is_finite()) {
        return Err(Error::InvalidDimension(format!("init scale {init_scale}")));
    }
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| {
                if init_scale == 0.0 {
                    0.0
                } else {
                    rng.random_range(-init_scale..=init_scale)
                }
            })
            .collect()
    };
    let w1 = draw(N_IN * n_h);
    let w2 = draw(n_h * N_OUT);
    MlpNetwork::from_weights(n_h, w1, w2)
}

impl MlpNetwork {
    pub fn from_weights(n_h: usize, w1: Vec<f64>, w2: Vec<f64>) -> Result<Self> {
        if n_h == 0 || w1.len() != N_IN * n_h || w2.len() != n_h * N_OUT {
            return Err(Error::InvalidDimension(format!(
                "n_h = {n_h} with {} input weights and {} output weights",
                w1.len(),
                w2.len()
            )));
        }
        if w1.iter().chain(&w2).any(|w| !w.is_finite()) {
            return Err(Error::DegenerateInput("non-finite weight".into()));
        }
        Ok(Self { n_in: N_IN, n_h, n_o: N_OUT, w1, w2 })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_h
    }

    pub fn n_out(&self) -> usize {
        self.n_o
    }

    pub fn w1_at(&self, i: usize, j: usize) -> f64 {
        self.w1[i * self.n_h + j]
    }

    pub fn w2_at(&self, j: usize, k: usize) -> f64 {
        self.w2[j * self.n_o + k]
    }

    pub fn num_weights(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    fn weight_mut(&mut self, idx: usize) -> &mut f64 {
        let split = self.w1.len();
        if idx < split {
            &mut self.w1[idx]
        } else {
            &mut self.w2[idx - split]
        }
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.w2).all(|w| w.is_finite())
    }

    pub fn forward(&self, input: &[f64; N_IN]) -> Forward {
        let hidden: Vec<f64> = (0..self.n_h)
            .map(|j| sigmoid((0..N_IN).map(|i| input[i] * self.w1_at(i, j)).sum()))
            .collect();
        let mut output = [0.0; N_OUT];
        for (k, o) in output.iter_mut().enumerate() {
            *o = hidden.iter().enumerate().map(|(j, h)| h * self.w2_at(j, k)).sum();
        }
        Forward { output, hidden }
    }

    pub fn predict(&self, input: &[f64; N_IN]) -> [f64; N_OUT] {
        self.forward(input).output
    }

    pub fn cost(&self, sample: &TrainingSample) -> f64 {
        mse_cost(&self.predict(&sample.input), &sample.target)
    }

    /// In-place gradient step; returns the pre-update cost.
    fn step(&mut self, sample: &TrainingSample, learning_rate: f64) -> f64 {
        let fwd = self.forward(&sample.input);
        let grad = gradients_from(self, sample, &fwd);
        for (w, g) in self.w1.iter_mut().zip(&grad.w1) {
            *w -= learning_rate * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grad.w2) {
            *w -= learning_rate * g;
        }
        mse_cost(&fwd.output, &sample.target)
    }

    /// Rescales weights so that the network accepts raw inputs and produces raw
    /// outputs, given that it was trained on `x / input_scale` and `t / output_scale`.
    fn fold_scales(&mut self, scales: &Scales) {
        for i in 0..N_IN {
            for j in 0..self.n_h {
                self.w1[i * self.n_h + j] /= scales.input[i];
            }
        }
        for j in 0..self.n_h {
            for k in 0..N_OUT {
                self.w2[j * self.n_o + k] *= scales.output[k];
            }
        }
    }

    /// Plain-text `mlpv1` serialization with 17 significant digits.
    pub fn save(&self) -> String {
        let mut out = format!("mlpv1 {} {} {}\n", self.n_in, self.n_h, self.n_o);
        let rows = self.w1.chunks(self.n_h).chain(self.w2.chunks(self.n_o));
        for row in rows {
            let line: Vec<String> = row.iter().map(|w| format!("{w:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "empty model file".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "mlpv1" {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected `mlpv1 n_in n_h n_o`, got `{header}`"),
            });
        }
        let dims: Vec<usize> = fields[1..]
            .iter()
            .map(|f| f.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, reason: format!("bad dimension: {e}") })?;
        let (n_in, n_h, n_o) = (dims[0], dims[1], dims[2]);
        if n_in != N_IN || n_o != N_OUT || n_h == 0 {
            return Err(Error::Parse {
                line: 1,
                reason: format!("unsupported shape {n_in}x{n_h}x{n_o}"),
            });
        }
        let mut read_rows = |count: usize, width: usize| -> Result<Vec<f64>> {
            let mut vals = Vec::with_capacity(count * width);
            for _ in 0..count {
                let (idx, line) = lines.next().ok_or(Error::Parse {
                    line: 0,
                    reason: "model file ended early".into(),
                })?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Parse { line: idx + 1, reason: e.to_string() })?;
                if row.len() != width {
                    return Err(Error::Parse {
                        line: idx + 1,
                        reason: format!("expected {width} values, got {}", row.len()),
                    });
                }
                vals.extend(row);
            }
            Ok(vals)
        };
        let w1 = read_rows(n_in, n_h)?;
        let w2 = read_rows(n_h, n_o)?;
        if let Some((idx, _)) = lines.next() {
            return Err(Error::Parse { line: idx + 1, reason: "trailing data".into() });
        }
        Self::from_weights(n_h, w1, w2)
    }
}

/// `½ Σ_k (t_k - O_k)²`.
pub fn mse_cost(output: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(output.len(), target.len());
    0.5 * output.iter().zip(target).map(|(o, t)| (t - o).powi(2)).sum::<f64>()
}

fn gradients_from(net: &MlpNetwork, sample: &TrainingSample, fwd: &Forward) -> Gradients {
    let n_h = net.n_h;
    // output layer is linear, so its local gradient is 1
    let err: [f64; N_OUT] = std::array::from_fn(|k| sample.target[k] - fwd.output[k]);
    let mut w2 = vec![0.0; n_h * N_OUT];
    let mut w1 = vec![0.0; N_IN * n_h];
    for j in 0..n_h {
        let h = fwd.hidden[j];
        let mut back = 0.0;
        for k in 0..N_OUT {
            w2[j * N_OUT + k] = -err[k] * h;
            back += net.w2_at(j, k) * err[k];
        }
        let delta = back * h * (1.0 - h);
        for i in 0..N_IN {
            w1[i * n_h + j] = -delta * sample.input[i];
        }
    }
    Gradients { w1, w2 }
}

/// Backpropagated `∂ε/∂w` for one sample.
pub fn analytic_gradient(net: &MlpNetwork, sample: &TrainingSample) -> Gradients {
    let fwd = net.forward(&sample.input);
    gradients_from(net, sample, &fwd)
}

/// One gradient-descent step, `w ← w - η ∂ε/∂w`.
pub fn backward(net: &MlpNetwork, sample: &TrainingSample, learning_rate: f64) -> Result<MlpNetwork> {
    let mut next = net.clone();
    next.step(sample, learning_rate);
    if !next.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            sample: 0,
            last_finite: Box::new(net.clone()),
        });
    }
    Ok(next)
}

/// Central differences `(ε(w+h) - ε(w-h)) / 2h` for every weight.
pub fn numerical_gradient(net: &MlpNetwork, sample: &TrainingSample, h: f64) -> Gradients {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = net.clone();
    let grads: Vec<f64> = (0..net.num_weights())
        .map(|idx| {
            let w = *probe.weight_mut(idx);
            *probe.weight_mut(idx) = w + h;
            let plus = probe.cost(sample);
            *probe.weight_mut(idx) = w - h;
            let minus = probe.cost(sample);
            *probe.weight_mut(idx) = w;
            (plus - minus) / (2.0 * h)
        })
        .collect();
    let (w1, w2) = grads.split_at(net.w1.len());
    Gradients { w1: w1.to_vec(), w2: w2.to_vec() }
}

/// Largest per-weight relative error between two gradient sets.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(GRADCHECK_SCALE_FLOOR))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub cases: usize,
    pub max_relative_error: f64,
    pub worst_case: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Random `(network, sample)` pair number `case` of a gradient check.
pub fn gradcheck_case(seed: u64, case: usize) -> (MlpNetwork, TrainingSample) {
    let mut rng = rng::stream(seed, &[tag::GRADCHECK, case as u64]);
    let n_h = rng.random_range(1..=12);
    let w1 = (0..N_IN * n_h).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w2 = (0..n_h * N_OUT).map(|_| rng.random_range(-1.0..1.0)).collect();
    let net = MlpNetwork::from_weights(n_h, w1, w2).expect("consistent shape");
    let mut v = || rng.random_range(-2.0..2.0);
    let sample = TrainingSample::new([v(), v()], [v(), v()]);
    (net, sample)
}

/// Compares `analytic` against central differences over `cases` random pairs.
pub fn gradient_check<F>(seed: u64, cases: usize, analytic: F) -> GradCheckReport
where
    F: Fn(&MlpNetwork, &TrainingSample) -> Gradients,
{
    let mut worst = (0.0, 0);
    for case in 0..cases {
        let (net, sample) = gradcheck_case(seed, case);
        let err = max_relative_error(&analytic(&net, &sample), &numerical_gradient(&net, &sample, FD_STEP));
        if err > worst.0 || err.is_nan() {
            worst = (err, case);
        }
    }
    GradCheckReport {
        cases,
        max_relative_error: worst.0,
        worst_case: worst.1,
        tolerance: GRADCHECK_TOLERANCE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Train on inputs and targets divided by their training-split RMS.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            epochs: 20,
            seed: 1,
            init_scale: 0.05,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::config(
                "mlp.learning_rate",
                format!("must lie in (0, 1), got {}", self.learning_rate),
            ));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::config("mlp.init_scale", "must be non-negative"));
        }
        Ok(())
    }
}

/// Train/validation/test partition handed to [`train`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingData {
    pub train: Vec<TrainingSample>,
    pub validation: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    /// Mean squared error per output component.
    pub mse: f64,
    /// `Σ|t - O|² / Σ|t|²`.
    pub nmse: f64,
}

impl SplitMetrics {
    pub fn evaluate(net: &MlpNetwork, samples: &[TrainingSample]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let (mut sse, mut energy) = (0.0, 0.0);
        for s in samples {
            let o = net.predict(&s.input);
            for (t, y) in s.target.iter().zip(o) {
                sse += (t - y).powi(2);
                energy += t.powi(2);
            }
        }
        let nmse = if energy > 0.0 {
            sse / energy
        } else if sse == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Some(Self {
            mse: sse / (samples.len() * N_OUT) as f64,
            nmse,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train: SplitMetrics,
    pub validation: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
}

impl EpochMetrics {
    fn selection_score(&self) -> f64 {
        self.validation.unwrap_or(self.train).mse
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation MSE (training MSE
    /// when there is no validation split).
    pub network: MlpNetwork,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Scales {
    input: [f64; N_IN],
    output: [f64; N_OUT],
}

impl Scales {
    fn identity() -> Self {
        Self { input: [1.0; N_IN], output: [1.0; N_OUT] }
    }

    fn from_samples(samples: &[TrainingSample]) -> Self {
        let rms = |f: &dyn Fn(&TrainingSample) -> f64| {
            let r = (samples.iter().map(|s| f(s).powi(2)).sum::<f64>() / samples.len() as f64).sqrt();
            if r > 0.0 && r.is_finite() {
                r
            } else {
                1.0
            }
        };
        Self {
            input: std::array::from_fn(|i| rms(&|s| s.input[i])),
            output: std::array::from_fn(|k| rms(&|s| s.target[k])),
        }
    }

    fn apply(&self, s: &TrainingSample) -> TrainingSample {
        TrainingSample {
            input: std::array::from_fn(|i| s.input[i] / self.input[i]),
            target: std::array::from_fn(|k| s.target[k] / self.output[k]),
        }
    }
}

/// Per-sample gradient descent over `cfg.epochs` shuffled passes.
///
/// With `cfg.standardize`, `initial` is interpreted in standardized
/// coordinates (inputs and targets divided by their training-split RMS) and
/// the returned network is folded back to raw units. Metrics are always
/// reported in raw units.
pub fn train(initial: &MlpNetwork, data: &TrainingData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InsufficientData("training split is empty".into()));
    }
    if let Some(pos) = data.train.iter().position(|s| !s.is_finite()) {
        return Err(Error::DegenerateInput(format!("training sample {pos} is not finite")));
    }
    let scales = if cfg.standardize {
        Scales::from_samples(&data.train)
    } else {
        Scales::identity()
    };
    let scaled: Vec<TrainingSample> = data.train.iter().map(|s| scales.apply(s)).collect();
    let raw = |net: &MlpNetwork| {
        let mut out = net.clone();
        if cfg.standardize {
            out.fold_scales(&scales);
        }
        out
    };

    let mut net = initial.clone();
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, MlpNetwork)> = None;

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        for (pos, &idx) in order.iter().enumerate() {
            let before = net.clone();
            let cost = net.step(&scaled[idx], cfg.learning_rate);
            if !cost.is_finite() || !net.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    sample: pos,
                    last_finite: Box::new(raw(&before)),
                });
            }
        }
        let current = raw(&net);
        let metrics = EpochMetrics {
            epoch,
            train: SplitMetrics::evaluate(&current, &data.train).expect("non-empty"),
            validation: SplitMetrics::evaluate(&current, &data.validation),
            test: SplitMetrics::evaluate(&current, &data.test),
        };
        let score = metrics.selection_score();
        if !score.is_finite() {
            return Err(Error::Diverged {
                epoch,
                sample: order.len(),
                last_finite: Box::new(best.map(|b| b.2).unwrap_or_else(|| raw(initial))),
            });
        }
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, current));
        }
        history.push(metrics);
    }

    Ok(match best {
        Some((_, epoch, network)) => TrainOutcome { network, history, best_epoch: Some(epoch) },
        None => TrainOutcome { network: raw(initial), history, best_epoch: None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: [f64; 2], t: [f64; 2]) -> TrainingSample {
        TrainingSample::new(i, t)
    }

    #[test]
    fn sigmoid_identities() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [-30.0, -3.3, -0.1, 0.0, 0.7, 5.0, 40.0] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-12);
            let h = 1e-5;
            let fd = (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h);
            let s = sigmoid(z);
            assert!((fd - s * (1.0 - s)).abs() < 1e-10);
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_network(10, 3, 0.5).unwrap();
        assert_eq!(a, init_network(10, 3, 0.5).unwrap());
        assert_ne!(a, init_network(10, 4, 0.5).unwrap());
        assert_eq!((a.w1.len(), a.w2.len()), (2 * 10, 10 * 2));
        assert!(a.w1.iter().chain(&a.w2).all(|w| w.abs() <= 0.5));
        assert!(matches!(init_network(0, 3, 0.5), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn zero_network_forward() {
        let net = init_network(4, 0, 0.0).unwrap();
        let f = net.forward(&[0.3, -2.0]);
        assert_eq!(f.output, [0.0, 0.0]);
        assert!(f.hidden.iter().all(|&h| h == 0.5));
    }

    #[test]
    fn hand_evaluated_forward() {
        // W1 = [[1],[0]], W2 = [[2, 0]]
        let net = MlpNetwork::from_weights(1, vec![1.0, 0.0], vec![2.0, 0.0]).unwrap();
        let f = net.forward(&[0.0, 123.0]);
        assert_eq!(f.output, [1.0, 0.0]);
    }

    #[test]
    fn cost_arithmetic() {
        assert_eq!(mse_cost(&[0.3, 0.4], &[0.3, 0.4]), 0.0);
        assert_eq!(mse_cost(&[0.0, 0.0], &[1.0, 0.0]), 0.5);
        assert_eq!(mse_cost(&[0.0, -1.0], &[1.0, 1.0]), 2.5);
    }

    #[test]
    fn zero_error_gives_zero_update() {
        let net = init_network(3, 1, 0.5).unwrap();
        let out = net.predict(&[0.2, -0.4]);
        let s = sample([0.2, -0.4], out);
        assert_eq!(backward(&net, &s, 0.5).unwrap(), net);
        assert!(numerical_gradient(&net, &s, 1e-6).iter().all(|g| g.abs() < 1e-8));
    }

    #[test]
    fn central_difference_is_exact_for_quadratic_weight() {
        // with n_h = 1 the cost is quadratic in each output weight
        let net = MlpNetwork::from_weights(1, vec![0.4, -0.2], vec![0.7, -1.1]).unwrap();
        let s = sample([1.0, 0.5], [0.3, 0.9]);
        let h0 = sigmoid(0.4 * 1.0 - 0.2 * 0.5);
        let exact = -(0.3 - 0.7 * h0) * h0;
        let g = numerical_gradient(&net, &s, 1e-3);
        assert!((g.w2[0] - exact).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let report = gradient_check(2024, 100, analytic_gradient);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let corrupted = |net: &MlpNetwork, s: &TrainingSample| {
            let mut g = analytic_gradient(net, s);
            g.w1[0] *= 1.01;
            g.w1[0] += 1e-3;
            g
        };
        assert!(!gradient_check(2024, 10, corrupted).passed());
    }

    #[test]
    fn small_step_decreases_cost() {
        for case in 0..100 {
            let (net, s) = gradcheck_case(99, case);
            let next = backward(&net, &s, 1e-3).unwrap();
            assert!(next.cost(&s) < net.cost(&s), "case {case}");
        }
    }

    #[test]
    fn backward_matches_gradient_formula() {
        let (net, s) = gradcheck_case(5, 0);
        let g = analytic_gradient(&net, &s);
        let next = backward(&net, &s, 0.1).unwrap();
        for (i, w) in next.w1.iter().enumerate() {
            assert!((w - (net.w1[i] - 0.1 * g.w1[i])).abs() < 1e-15);
        }
    }

    fn linear_map_data(n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = rng::stream(seed, &[]);
        (0..n)
            .map(|_| {
                let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                sample(x, [0.8 * x[0] - 0.3 * x[1], 0.3 * x[0] + 0.8 * x[1]])
            })
            .collect()
    }

    #[test]
    fn learns_linear_map() {
        let data = TrainingData { train: linear_map_data(500, 1), ..Default::default() };
        let cfg = TrainConfig { epochs: 200, learning_rate: 0.05, ..Default::default() };
        let net = init_network(10, 7, 0.5).unwrap();
        let out = train(&net, &data, &cfg).unwrap();
        let last = out.history.last().unwrap().train.mse;
        assert!(last < 1e-3, "final train MSE {last}");
        assert!(last <= out.history[0].train.mse);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = TrainingData { train: linear_map_data(10, 1), ..Default::default() };
        let net = init_network(3, 7, 0.5).unwrap();
        let out = train(&net, &data, &TrainConfig { epochs: 0, standardize: false, ..Default::default() }).unwrap();
        assert_eq!(out.network, net);
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn zero_error_fixed_point() {
        let net = init_network(5, 2, 0.5).unwrap();
        let train_set: Vec<TrainingSample> = linear_map_data(50, 3)
            .into_iter()
            .map(|s| sample(s.input, net.predict(&s.input)))
            .collect();
        let data = TrainingData { train: train_set, ..Default::default() };
        let out = train(&net, &data, &TrainConfig { epochs: 5, standardize: false, ..Default::default() }).unwrap();
        assert_eq!(out.network, net);
    }

    #[test]
    fn training_is_deterministic_and_keeps_best_validation() {
        let all = linear_map_data(400, 4);
        let data = TrainingData {
            train: all[..280].to_vec(),
            validation: all[280..340].to_vec(),
            test: all[340..].to_vec(),
        };
        let cfg = TrainConfig { epochs: 15, ..Default::default() };
        let net = init_network(10, 1, 0.5).unwrap();
        let a = train(&net, &data, &cfg).unwrap();
        let b = train(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let best = a.best_epoch.unwrap();
        let best_val = a.history[best - 1].validation.unwrap().mse;
        assert!(a.history.iter().all(|m| m.validation.unwrap().mse >= best_val));
        let check = SplitMetrics::evaluate(&a.network, &data.validation).unwrap().mse;
        assert!((check - best_val).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let data = TrainingData {
            train: vec![sample([1e200, -1e200], [1e300, 1e300]); 3],
            ..Default::default()
        };
        let net = init_network(3, 1, 0.5).unwrap();
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.9, standardize: false, ..Default::default() };
        match train(&net, &data, &cfg) {
            Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn learning_rate_range_is_enforced() {
        let data = TrainingData { train: linear_map_data(5, 1), ..Default::default() };
        let net = init_network(2, 1, 0.5).unwrap();
        for eta in [0.0, 1.0, -0.1] {
            let cfg = TrainConfig { learning_rate: eta, ..Default::default() };
            assert!(matches!(train(&net, &data, &cfg), Err(Error::InvalidConfig { .. })));
        }
    }

    #[test]
    fn save_load_round_trip() {
        let net = init_network(10, 8, 0.5).unwrap();
        let text = net.save();
        assert!(text.starts_with("mlpv1 2 10 2\n"));
        assert_eq!(text.lines().count(), 1 + 2 + 10);
        assert_eq!(MlpNetwork::load(&text).unwrap(), net);
    }

    #[test]
    fn load_rejects_malformed() {
        assert!(MlpNetwork::load("").is_err());
        assert!(MlpNetwork::load("mlpv2 2 1 2\n1 2\n3 4\n5 6\n").is_err());
        assert!(MlpNetwork::load("mlpv1 3 1 2\n1\n2\n3\n4 5\n").is_err());
        assert!(MlpNetwork::load("mlpv1 2 1 2\n1\n2\n3\n").is_err());
        assert!(MlpNetwork::load("mlpv1 2 1 2\n1\n2\n3 x\n").is_err());
        assert!(MlpNetwork::load("mlpv1 2 1 2\n1\n2\n3 4\n9\n").is_err());
        assert!(MlpNetwork::load("mlpv1 2 1 2\n1\n2\n3 4\n").is_ok());
    }
}
