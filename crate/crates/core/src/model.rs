//! Logistic regression trained on binary cross-entropy with Adam.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{FairError, Result};

/// Probability clip applied inside logarithms.
pub const LOG_CLIP: f64 = 1e-12;

/// Weights and bias of a logistic model. Gradients share the same shape
/// and are represented with this type as well.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros(d: usize) -> Self {
        ModelParams {
            weights: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &ModelParams) {
        debug_assert_eq!(self.dim(), other.dim());
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            *w += alpha * g;
        }
        self.bias += alpha * other.bias;
    }

    /// Iterates weights first, then the bias.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().copied().chain(std::iter::once(self.bias))
    }

    pub fn get(&self, j: usize) -> f64 {
        if j < self.dim() {
            self.weights[j]
        } else {
            self.bias
        }
    }

    pub fn get_mut(&mut self, j: usize) -> &mut f64 {
        if j < self.dim() {
            &mut self.weights[j]
        } else {
            &mut self.bias
        }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Plain-text form: `bias <v>` then one `w<i> <v>` line per weight.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "bias {:.16e}", self.bias).unwrap();
        for (i, w) in self.weights.iter().enumerate() {
            writeln!(out, "w{i} {w:.16e}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let parse_line = |line: &str, expect: &str| -> Result<f64> {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            if key != expect {
                return Err(FairError::Data(format!(
                    "model file: expected {expect:?}, found {key:?}"
                )));
            }
            let value = parts
                .next()
                .ok_or_else(|| FairError::Data(format!("model file: {expect} has no value")))?;
            let v: f64 = value
                .parse()
                .map_err(|_| FairError::Data(format!("model file: bad number {value:?}")))?;
            if !v.is_finite() || parts.next().is_some() {
                return Err(FairError::Data(format!("model file: malformed line {line:?}")));
            }
            Ok(v)
        };
        let bias = parse_line(
            lines
                .next()
                .ok_or_else(|| FairError::Data("model file is empty".into()))?,
            "bias",
        )?;
        let weights = lines
            .enumerate()
            .map(|(i, line)| parse_line(line, &format!("w{i}")))
            .collect::<Result<Vec<_>>>()?;
        if weights.is_empty() {
            return Err(FairError::Data("model file has no weights".into()));
        }
        Ok(ModelParams { weights, bias })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| FairError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| FairError::io(&path, e))?;
        Self::from_text(&text)
    }
}

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logits and probabilities for every row of a row-major `n x d` matrix.
pub fn predict_proba(params: &ModelParams, features: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if d != params.dim() || (d > 0 && !features.len().is_multiple_of(d)) {
        return Err(FairError::config(format!(
            "model expects {} features, matrix has width {d}",
            params.dim()
        )));
    }
    let logits: Vec<f64> = features.chunks_exact(d).map(|x| params.logit(x)).collect();
    let probs = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok((logits, probs))
}

pub fn predict_dataset(params: &ModelParams, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
    predict_proba(params, data.features(), data.n_features())
}

/// Mean BCE over `rows` and its gradient.
pub fn bce_loss_and_grad(params: &ModelParams, data: &Dataset, rows: &[usize]) -> Result<(f64, ModelParams)> {
    if rows.is_empty() {
        return Err(FairError::config("BCE requested over an empty row subset"));
    }
    check_width(params, data)?;
    let m = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = ModelParams::zeros(params.dim());
    for &i in rows {
        let x = data.row(i);
        let p = sigmoid(params.logit(x));
        let y = f64::from(data.labels()[i]);
        loss -= y * p.max(LOG_CLIP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLIP).ln();
        let r = p - y;
        for (g, xj) in grad.weights.iter_mut().zip(x) {
            *g += r * xj;
        }
        grad.bias += r;
    }
    grad.weights.iter_mut().for_each(|g| *g /= m);
    grad.bias /= m;
    Ok((loss / m, grad))
}

/// BCE over every row of `data`.
pub fn full_bce_loss_and_grad(params: &ModelParams, data: &Dataset) -> Result<(f64, ModelParams)> {
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    bce_loss_and_grad(params, data, &rows)
}

pub fn full_bce_loss(params: &ModelParams, data: &Dataset) -> Result<f64> {
    check_width(params, data)?;
    let mut loss = 0.0;
    for i in 0..data.n_rows() {
        let p = sigmoid(params.logit(data.row(i)));
        let y = f64::from(data.labels()[i]);
        loss -= y * p.max(LOG_CLIP).ln() + (1.0 - y) * (1.0 - p).max(LOG_CLIP).ln();
    }
    Ok(loss / data.n_rows() as f64)
}

fn check_width(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.dim() != data.n_features() {
        return Err(FairError::config(format!(
            "model has {} weights, dataset has {} features",
            params.dim(),
            data.n_features()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub early_stop_window: usize,
    pub early_stop_delta: f64,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added to the zero initialization.
    /// Zero disables it.
    pub init_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 1000,
            max_epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_window: 10,
            early_stop_delta: 1e-6,
            seed: 0,
            init_noise: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FairError::config("learning_rate must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(FairError::config("Adam betas must lie in (0,1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(FairError::config("batch_size and max_epochs must be positive"));
        }
        if !(self.adam_epsilon > 0.0) || self.init_noise < 0.0 {
            return Err(FairError::config(
                "adam_epsilon must be positive and init_noise non-negative",
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Hyperparameters of a single Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(d: usize) -> Self {
        AdamState {
            first_moment: ModelParams::zeros(d),
            second_moment: ModelParams::zeros(d),
            step_count: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &ModelParams,
    grad: &ModelParams,
    state: &AdamState,
    config: &AdamConfig,
) -> Result<(ModelParams, AdamState)> {
    if grad.dim() != params.dim() || state.first_moment.dim() != params.dim() {
        return Err(FairError::config("Adam: parameter and gradient shapes differ"));
    }
    if !grad.is_finite() {
        return Err(FairError::numeric("non-finite gradient entry"));
    }
    let t = state.step_count + 1;
    let bc1 = 1.0 - config.beta1.powf(t as f64);
    let bc2 = 1.0 - config.beta2.powf(t as f64);
    let mut next = params.clone();
    let mut m = state.first_moment.clone();
    let mut v = state.second_moment.clone();
    for j in 0..=params.dim() {
        let g = grad.get(j);
        let mj = m.get_mut(j);
        *mj = config.beta1 * *mj + (1.0 - config.beta1) * g;
        let m_hat = *mj / bc1;
        let vj = v.get_mut(j);
        *vj = config.beta2 * *vj + (1.0 - config.beta2) * g * g;
        let v_hat = *vj / bc2;
        *next.get_mut(j) -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok((
        next,
        AdamState {
            first_moment: m,
            second_moment: v,
            step_count: t,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded full-train loss.
    pub params: ModelParams,
    /// Full-train loss before training, then after each epoch.
    pub history: Vec<f64>,
    pub best_loss: f64,
}

/// Phase-1 training: minibatch Adam on BCE from a zero start.
pub fn train_performance(train: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let d = train.n_features();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::zeros(d);
    if config.init_noise > 0.0 {
        let noise =
            Normal::new(0.0, config.init_noise).map_err(|e| FairError::config(format!("init_noise: {e}")))?;
        for w in params.weights.iter_mut() {
            *w = noise.sample(&mut rng);
        }
        params.bias = noise.sample(&mut rng);
    }
    let adam = config.adam();
    let mut state = AdamState::new(d);

    let initial = full_bce_loss(&params, train)?;
    let mut history = vec![initial];
    let mut best = (initial, params.clone());
    // best loss as of the end of each epoch, for the early-stop window
    let mut best_by_epoch = vec![initial];

    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = bce_loss_and_grad(&params, train, batch)?;
            if !loss.is_finite() {
                return Err(FairError::numeric(format!("non-finite loss in epoch {epoch}")));
            }
            let (p, s) = adam_step(&params, &grad, &state, &adam)?;
            params = p;
            state = s;
        }
        let loss = full_bce_loss(&params, train)?;
        if !loss.is_finite() {
            return Err(FairError::numeric(format!("non-finite loss after epoch {epoch}")));
        }
        history.push(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        best_by_epoch.push(best.0);
        if epoch >= config.early_stop_window {
            let earlier = best_by_epoch[epoch - config.early_stop_window];
            if earlier - best.0 < config.early_stop_delta {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best.1,
        history,
        best_loss: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use indexmap::IndexMap;
    use rand::Rng;

    fn toy(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut z: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[..4].copy_from_slice(&[0, 1, 0, 1]);
        z[..4].copy_from_slice(&[0, 0, 1, 1]);
        let names = (0..d).map(|j| format!("x{j}")).collect();
        let sensitive: IndexMap<String, Vec<u8>> = [("z".to_string(), z)].into();
        Dataset::new(names, features, labels, sensitive).unwrap()
    }

    #[test]
    fn zero_model_predicts_half() {
        let (logits, probs) =
            predict_proba(&ModelParams::zeros(3), &[1.0, -2.0, 5.0, 0.0, 0.0, 9.0], 3).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn closed_form_probability() {
        let params = ModelParams {
            weights: vec![1.0],
            bias: 0.0,
        };
        let (_, p) = predict_proba(&params, &[3f64.ln()], 1).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn width_mismatch_is_config_error() {
        let err = predict_proba(&ModelParams::zeros(2), &[1.0, 2.0, 3.0], 3).unwrap_err();
        assert!(matches!(err, FairError::Config(_)));
    }

    #[test]
    fn sigmoid_is_stable_and_monotone() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        let xs = [-30.0, -3.0, -0.1, 0.0, 0.1, 3.0, 30.0];
        assert!(xs.windows(2).all(|w| sigmoid(w[0]) < sigmoid(w[1])));
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let data = toy(37, 4, 1);
        let rows: Vec<usize> = (0..37).collect();
        let (loss, _) = bce_loss_and_grad(&ModelParams::zeros(4), &data, &rows).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_saturated_is_clipped() {
        // labels [0,1,0,1] with x = +-1 and a huge weight
        let sensitive: IndexMap<String, Vec<u8>> = [("z".to_string(), vec![0, 0, 1, 1])].into();
        let data = Dataset::new(
            vec!["x".into()],
            vec![-1.0, 1.0, -1.0, 1.0],
            vec![0, 1, 0, 1],
            sensitive,
        )
        .unwrap();
        let params = ModelParams {
            weights: vec![1e4],
            bias: 0.0,
        };
        let (loss, _) = bce_loss_and_grad(&params, &data, &[0, 1, 2, 3]).unwrap();
        assert!(loss <= -(1.0 - LOG_CLIP).ln() + 1e-15);
    }

    #[test]
    fn bce_empty_subset_is_config_error() {
        let data = toy(10, 2, 2);
        assert!(matches!(
            bce_loss_and_grad(&ModelParams::zeros(2), &data, &[]),
            Err(FairError::Config(_))
        ));
    }

    #[test]
    fn bce_gradient_matches_central_differences() {
        let data = toy(50, 5, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams {
            weights: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: rng.random_range(-1.0..1.0),
        };
        let rows: Vec<usize> = (0..50).collect();
        let (_, grad) = bce_loss_and_grad(&params, &data, &rows).unwrap();
        let h = 1e-6;
        for j in 0..=5 {
            let mut up = params.clone();
            *up.get_mut(j) += h;
            let mut down = params.clone();
            *down.get_mut(j) -= h;
            let fd = (bce_loss_and_grad(&up, &data, &rows).unwrap().0
                - bce_loss_and_grad(&down, &data, &rows).unwrap().0)
                / (2.0 * h);
            let rel = (fd - grad.get(j)).abs() / grad.get(j).abs().max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: fd {fd} analytic {}", grad.get(j));
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let params = ModelParams {
            weights: vec![0.3, -1.2],
            bias: 0.7,
        };
        let (next, state) = adam_step(
            &params,
            &ModelParams::zeros(2),
            &AdamState::new(2),
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(next, params);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let params = ModelParams::zeros(3);
        let grad = ModelParams {
            weights: vec![1e-3, -2.5, 40.0],
            bias: -1e-3,
        };
        let (next, _) = adam_step(&params, &grad, &AdamState::new(3), &cfg).unwrap();
        for j in 0..=3 {
            let expected = -cfg.learning_rate * grad.get(j).signum();
            assert!((next.get(j) - expected).abs() < 1e-6);
        }
        let again = adam_step(&params, &grad, &AdamState::new(3), &cfg).unwrap();
        assert_eq!(again.0, next);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let grad = ModelParams {
            weights: vec![f64::NAN],
            bias: 0.0,
        };
        let err = adam_step(
            &ModelParams::zeros(1),
            &grad,
            &AdamState::new(1),
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, FairError::Numeric(_)));
    }

    #[test]
    fn intercept_only_recovers_base_rate() {
        let n = 10_000;
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 10 < 3)).collect();
        let z: Vec<u8> = (0..n).map(|i| ((i / 10) % 2) as u8).collect();
        let data = Dataset::new(
            vec!["zero".into()],
            vec![0.0; n],
            labels,
            [("z".to_string(), z)].into(),
        )
        .unwrap();
        let out = train_performance(&data, &TrainConfig::default()).unwrap();
        let (_, p) = predict_dataset(&out.params, &data).unwrap();
        let mean = p.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.3).abs() < 0.02, "mean predicted probability {mean}");
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = toy(400, 3, 5);
        let cfg = TrainConfig {
            batch_size: 64,
            max_epochs: 30,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_performance(&data, &cfg).unwrap();
        let b = train_performance(&data, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert!(a.best_loss <= a.history[0]);
    }

    #[test]
    fn text_round_trip() {
        let params = ModelParams {
            weights: vec![0.1, -3.0e-17, 12345.678901234567],
            bias: -0.333_333_333_333_333_3,
        };
        let text = params.to_text();
        assert!(text.starts_with("bias "));
        assert_eq!(text.lines().nth(1).unwrap().split(' ').next(), Some("w0"));
        assert_eq!(ModelParams::from_text(&text).unwrap(), params);
        assert!(ModelParams::from_text("bias 1.0\nw1 2.0\n").is_err());
    }
}
