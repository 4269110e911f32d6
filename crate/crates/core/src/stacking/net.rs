use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMode, StackedDataset, StackedExample, DEFAULT_MIN_NON_O};
use crate::error::{Error, Result};
use crate::labels::{argmax, Label, NUM_LABELS};

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.inputs..(j + 1) * self.inputs]
    }
}

/// Feed-forward classifier: rectified hidden layers, softmax output,
/// cross-entropy loss.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaNet {
    pub layers: Vec<Dense>,
    pub feature_mode: FeatureMode,
    pub n_models: usize,
    pub min_non_o: usize,
}

impl MetaNet {
    /// All-zero parameters. `sizes` lists every layer width, input first.
    pub fn zeros(sizes: &[usize], feature_mode: FeatureMode, n_models: usize) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output width");
        MetaNet {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            feature_mode,
            n_models,
            min_non_o: DEFAULT_MIN_NON_O,
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot(sizes: &[usize], feature_mode: FeatureMode, n_models: usize, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes, feature_mode, n_models);
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        net
    }

    /// The standard stacking shape `[n_models * 19, hidden, 19]`.
    pub fn for_stacking(n_models: usize, hidden: usize, feature_mode: FeatureMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::glorot(&[n_models * NUM_LABELS, hidden, NUM_LABELS], feature_mode, n_models, &mut rng)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.input_width() {
            return Err(Error::DimensionMismatch { expected: self.input_width(), found: features.len() });
        }
        Ok(())
    }

    /// Softmax output for one input.
    pub fn probabilities(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let mut pass = Pass::new(self);
        pass.forward(self, features);
        Ok(pass.probs)
    }

    /// Argmax of the softmax output; lowest index on ties.
    pub fn predict_index(&self, features: &[f64]) -> Result<usize> {
        self.check_input(features)?;
        let mut pass = Pass::new(self);
        pass.forward(self, features);
        // argmax of the logits, not the probabilities
        Ok(argmax(pass.activations.last().expect("output layer")))
    }

    pub fn predict(&self, features: &[f64]) -> Result<Label> {
        Label::new(self.predict_index(features)?)
    }

    /// Cross-entropy of `target` for one input.
    pub fn loss(&self, features: &[f64], target: usize) -> Result<f64> {
        self.check_input(features)?;
        let mut pass = Pass::new(self);
        pass.forward(self, features);
        Ok(pass.loss(target))
    }

    /// Mean loss and accuracy over a set of examples.
    pub fn evaluate(&self, examples: &[StackedExample]) -> Result<(f64, f64)> {
        if examples.is_empty() {
            return Ok((0.0, 0.0));
        }
        let mut pass = Pass::new(self);
        let mut loss = 0.0;
        let mut correct = 0usize;
        for ex in examples {
            self.check_input(&ex.features)?;
            pass.forward(self, &ex.features);
            loss += pass.loss(ex.label.index());
            if argmax(pass.activations.last().expect("output layer")) == ex.label.index() {
                correct += 1;
            }
        }
        let n = examples.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }

    /// Analytic gradient of the loss for one example, shaped like `layers`.
    pub fn gradients(&self, features: &[f64], target: usize) -> Result<Vec<Dense>> {
        self.check_input(features)?;
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        let mut pass = Pass::new(self);
        pass.forward(self, features);
        pass.backward(self, features, target, &mut grads);
        Ok(grads)
    }

    /// Parameter `k` in layer order, weights before biases.
    fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            if k < layer.weights.len() {
                return &mut layer.weights[k];
            }
            k -= layer.weights.len();
            if k < layer.biases.len() {
                return &mut layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range")
    }
}

/// Scratch buffers for one forward/backward pass.
struct Pass {
    /// Post-activation output of each layer; the last holds raw logits.
    activations: Vec<Vec<f64>>,
    probs: Vec<f64>,
    deltas: Vec<Vec<f64>>,
    nonzero: Vec<usize>,
}

impl Pass {
    fn new(net: &MetaNet) -> Self {
        Pass {
            activations: net.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            probs: vec![0.0; net.output_width()],
            deltas: net.layers.iter().map(|l| vec![0.0; l.outputs]).collect(),
            nonzero: Vec::new(),
        }
    }

    fn forward(&mut self, net: &MetaNet, x: &[f64]) {
        // one-hot inputs are mostly zero; only visit the rest
        self.nonzero.clear();
        self.nonzero.extend(x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i));
        let last = net.layers.len() - 1;
        for (k, layer) in net.layers.iter().enumerate() {
            let (done, rest) = self.activations.split_at_mut(k);
            let out = &mut rest[0];
            for (j, o) in out.iter_mut().enumerate() {
                let row = layer.row(j);
                let mut z = layer.biases[j];
                if k == 0 {
                    for &i in &self.nonzero {
                        z += row[i] * x[i];
                    }
                } else {
                    z += row.iter().zip(&done[k - 1]).map(|(w, a)| w * a).sum::<f64>();
                }
                *o = if k < last { z.max(0.0) } else { z };
            }
        }
        let logits = &self.activations[last];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, z) in self.probs.iter_mut().zip(logits) {
            *p = (z - max).exp();
            sum += *p;
        }
        self.probs.iter_mut().for_each(|p| *p /= sum);
    }

    fn loss(&self, target: usize) -> f64 {
        let logits = self.activations.last().expect("output layer");
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        log_sum - logits[target]
    }

    /// Adds this example's gradient into `grads`.
    fn backward(&mut self, net: &MetaNet, x: &[f64], target: usize, grads: &mut [Dense]) {
        let last = net.layers.len() - 1;
        for (d, p) in self.deltas[last].iter_mut().zip(&self.probs) {
            *d = *p;
        }
        self.deltas[last][target] -= 1.0;
        for k in (0..=last).rev() {
            let layer = &net.layers[k];
            let grad = &mut grads[k];
            for j in 0..layer.outputs {
                let d = self.deltas[k][j];
                grad.biases[j] += d;
                if d == 0.0 {
                    continue;
                }
                let grow = &mut grad.weights[j * layer.inputs..(j + 1) * layer.inputs];
                if k == 0 {
                    for &i in &self.nonzero {
                        grow[i] += d * x[i];
                    }
                } else {
                    for (g, a) in grow.iter_mut().zip(&self.activations[k - 1]) {
                        *g += d * a;
                    }
                }
            }
            if k > 0 {
                let (below, above) = self.deltas.split_at_mut(k);
                let prev = &mut below[k - 1];
                for (i, p) in prev.iter_mut().enumerate() {
                    *p = if self.activations[k - 1][i] > 0.0 {
                        (0..layer.outputs).map(|j| layer.weights[j * layer.inputs + i] * above[0][j]).sum()
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden_width: 128, learning_rate: 1e-3, epochs: 50, batch_size: 64, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("hidden_width, epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss before the first epoch and after each epoch.
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

/// Mini-batch gradient descent on cross-entropy. Deterministic given
/// `config.seed` (initialisation and per-epoch shuffling).
pub fn train(dataset: &StackedDataset, config: &TrainConfig) -> Result<(MetaNet, TrainReport)> {
    config.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = dataset.input_width();
    let mut net =
        MetaNet::glorot(&[width, config.hidden_width, NUM_LABELS], dataset.feature_mode, dataset.n_models, &mut rng);
    let (initial_loss, _) = net.evaluate(&dataset.train)?;
    let mut epoch_losses = vec![initial_loss];

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut grads: Vec<Dense> = net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
    let mut pass = Pass::new(&net);
    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(config.batch_size) {
            for g in &mut grads {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.biases.iter_mut().for_each(|v| *v = 0.0);
            }
            for &idx in batch {
                let ex = &dataset.train[idx];
                net.check_input(&ex.features)?;
                pass.forward(&net, &ex.features);
                pass.backward(&net, &ex.features, ex.label.index(), &mut grads);
            }
            let step = config.learning_rate / batch.len() as f64;
            for (layer, g) in net.layers.iter_mut().zip(&grads) {
                for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                    *w -= step * gw;
                }
                for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                    *b -= step * gb;
                }
            }
        }
        let (loss, _) = net.evaluate(&dataset.train)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epoch_losses.push(loss);
    }
    let (_, train_accuracy) = net.evaluate(&dataset.train)?;
    let test_accuracy = if dataset.test.is_empty() { None } else { Some(net.evaluate(&dataset.test)?.1) };
    let report = TrainReport {
        epoch_losses,
        train_accuracy,
        test_accuracy,
        n_train: dataset.train.len(),
        n_test: dataset.test.len(),
    };
    Ok((net, report))
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`, so near-zero gradients are compared
/// absolutely.
pub fn gradient_check(net: &MetaNet, example: &StackedExample, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let target = example.label.index();
    gradient_check_target(net, &example.features, target, eps)
}

/// As [`gradient_check`] for an arbitrary output index.
pub(crate) fn gradient_check_target(net: &MetaNet, features: &[f64], target: usize, eps: f64) -> Result<f64> {
    if target >= net.output_width() {
        return Err(Error::IndexOutOfRange(target));
    }
    let analytic: Vec<f64> =
        net.gradients(features, target)?.into_iter().flat_map(|g| g.weights.into_iter().chain(g.biases)).collect();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.into_iter().enumerate() {
        let original = *probe.param_mut(k);
        *probe.param_mut(k) = original + eps;
        let up = probe.loss(features, target)?;
        *probe.param_mut(k) = original - eps;
        let down = probe.loss(features, target)?;
        *probe.param_mut(k) = original;
        let numeric = (up - down) / (2.0 * eps);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(sizes: &[usize], seed: u64) -> MetaNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MetaNet::glorot(sizes, FeatureMode::Logits, 1, &mut rng);
        for layer in &mut net.layers {
            for b in &mut layer.biases {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    #[test]
    fn zero_net_predicts_o() {
        let net = MetaNet::zeros(&[152, 128, 19], FeatureMode::OneHot, 8);
        let mut x = vec![0.0; 152];
        x[5] = 1.0;
        x[40] = 1.0;
        assert_eq!(net.predict(&x).unwrap(), Label::O);
        let p = net.probabilities(&x).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 19.0).abs() < 1e-15));
    }

    #[test]
    fn wrong_width_is_rejected() {
        let net = MetaNet::zeros(&[152, 8, 19], FeatureMode::OneHot, 8);
        assert!(matches!(net.predict(&[0.0; 133]), Err(Error::DimensionMismatch { expected: 152, found: 133 })));
    }

    #[test]
    fn softmax_sums_to_one() {
        let net = random_net(&[10, 6, 19], 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-20.0..20.0)).collect();
            let s: f64 = net.probabilities(&x).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_check_small_net() {
        let net = random_net(&[10, 5, 4], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ex = StackedExample { features: x, label: Label::new(2).unwrap() };
        let err = gradient_check(&net, &ex, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn linear_net_matches_closed_form() {
        let net = random_net(&[6, 4], 21);
        let x = [0.3, -1.2, 0.0, 2.0, 0.7, -0.1];
        let target = 1;
        let g = net.gradients(&x, target).unwrap();
        // softmax-CE: dL/dz = p - y, dL/dW = (p - y) x^T
        let layer = &net.layers[0];
        let z: Vec<f64> =
            (0..4).map(|j| layer.biases[j] + (0..6).map(|i| layer.weights[j * 6 + i] * x[i]).sum::<f64>()).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for j in 0..4 {
            let d = e[j] / s - if j == target { 1.0 } else { 0.0 };
            assert!((g[0].biases[j] - d).abs() < 1e-12);
            for i in 0..6 {
                assert!((g[0].weights[j * 6 + i] - d * x[i]).abs() < 1e-12);
            }
        }
        let err = gradient_check_target(&net, &x, target, 1e-5).unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn zero_eps_is_an_error() {
        let net = random_net(&[3, 2], 1);
        let ex = StackedExample { features: vec![1.0, 0.0, 0.0], label: Label::O };
        assert!(matches!(gradient_check(&net, &ex, 0.0), Err(Error::InvalidEpsilon(_))));
    }

    fn copy_model0(n: usize, seed: u64) -> StackedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..n)
            .map(|_| {
                let mut features = vec![0.0; 3 * NUM_LABELS];
                let mut first = 0;
                for m in 0..3 {
                    let l = rng.random_range(0..NUM_LABELS);
                    if m == 0 {
                        first = l;
                    }
                    features[m * NUM_LABELS + l] = 1.0;
                }
                StackedExample { features, label: Label::new(first).unwrap() }
            })
            .collect();
        StackedDataset::split(examples, FeatureMode::OneHot, 3, &Default::default()).unwrap()
    }

    #[test]
    fn single_example_loss_does_not_increase() {
        let mut ds = copy_model0(1, 4);
        ds.train.truncate(1);
        if ds.train.is_empty() {
            ds = copy_model0(2, 4);
            ds.train.truncate(1);
        }
        let config = TrainConfig { epochs: 1, hidden_width: 8, ..TrainConfig::default() };
        let (_, report) = train(&ds, &config).unwrap();
        assert!(report.epoch_losses[1] <= report.epoch_losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = copy_model0(200, 8);
        let config = TrainConfig { epochs: 3, hidden_width: 16, ..TrainConfig::default() };
        let (a, ra) = train(&ds, &config).unwrap();
        let (b, rb) = train(&ds, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let other = TrainConfig { seed: 1, ..config };
        assert_ne!(train(&ds, &other).unwrap().0, a);
    }

    #[test]
    fn empty_dataset() {
        let ds = StackedDataset { train: vec![], test: vec![], feature_mode: FeatureMode::OneHot, n_models: 1 };
        assert!(matches!(train(&ds, &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn diverging_training_reports_non_finite_loss() {
        let mut ds = copy_model0(50, 2);
        for ex in &mut ds.train {
            ex.features.iter_mut().for_each(|v| *v *= 1e150);
        }
        let config = TrainConfig { epochs: 5, hidden_width: 8, learning_rate: 1e10, ..TrainConfig::default() };
        assert!(matches!(train(&ds, &config), Err(Error::NonFiniteLoss { .. })));
    }
}
