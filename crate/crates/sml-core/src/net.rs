//! Per-agent feedforward classifier.
//!
//! The net has `L` layers on top of an `n_0`-dimensional input, two output
//! nodes, and the convention `u = W x - theta` at every layer with the
//! activation applied between layers (not on the output). The logit is
//! `z_1 - z_2`, which is the log posterior ratio of the softmax head, and
//! training minimizes the empirical logistic risk by mini-batch gradient
//! descent.

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Result, SmlError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Arctan,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Arctan => x.atan(),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Arctan => 1.0 / (1.0 + x * x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// Lipschitz constant; all three choices also satisfy sigma(0) = 0.
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Arctan => "arctan",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "arctan" => Ok(Activation::Arctan),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(SmlError::Config(format!("unknown activation {other:?}"))),
        }
    }
}

/// Dense feedforward net with two output nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedforwardNet {
    /// (n_0, n_1, ..., n_L) with n_L = 2.
    layer_sizes: Vec<usize>,
    /// weights[l] is n_{l+1} x n_l, row-major.
    weights: Vec<Vec<f64>>,
    /// biases[l] has length n_{l+1}; subtracted from the pre-activation.
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Parameter-shaped gradient of the empirical risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 10, epochs: 15, learning_rate: 0.05, seed: 0, shuffle: true }
    }
}

impl FeedforwardNet {
    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(SmlError::Shape("need at least input and output layers".into()));
        }
        if *layer_sizes.last().unwrap() != 2 {
            return Err(SmlError::Shape("output layer must have 2 nodes".into()));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(SmlError::Shape("zero-width layer".into()));
        }
        Ok(())
    }

    /// All-zero parameters.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l + 1] * layer_sizes[l]])
            .collect();
        let biases = (0..layer_sizes.len() - 1)
            .map(|l| vec![0.0; layer_sizes[l + 1]])
            .collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases, activation })
    }

    /// Seed-deterministic init: weights uniform in [-r, r] with
    /// r = 1/sqrt(fan-in), biases zero.
    pub fn init_seeded(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = seed::rng(seed, "init", 0);
        for l in 0..net.weights.len() {
            let r = 1.0 / (layer_sizes[l] as f64).sqrt();
            for w in net.weights[l].iter_mut() {
                *w = rng.gen_range(-r..=r);
            }
        }
        Ok(net)
    }

    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        Self::check_sizes(&layer_sizes)?;
        if weights.len() != layer_sizes.len() - 1 || biases.len() != layer_sizes.len() - 1 {
            return Err(SmlError::Shape("layer count mismatch".into()));
        }
        for l in 0..weights.len() {
            if weights[l].len() != layer_sizes[l + 1] * layer_sizes[l] {
                return Err(SmlError::Shape(format!("weight matrix {l} has wrong size")));
            }
            if biases[l].len() != layer_sizes[l + 1] {
                return Err(SmlError::Shape(format!("bias vector {l} has wrong size")));
            }
            if weights[l].iter().chain(&biases[l]).any(|x| !x.is_finite()) {
                return Err(SmlError::Shape(format!("non-finite parameter in layer {l}")));
            }
        }
        Ok(Self { layer_sizes, weights, biases, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_matrix(&self, l: usize) -> &[f64] {
        &self.weights[l]
    }

    pub fn bias_vector(&self, l: usize) -> &[f64] {
        &self.biases[l]
    }

    /// Largest row l1-norm over all weight matrices (the Lemma-style `b`).
    pub fn max_row_l1(&self) -> f64 {
        let mut best: f64 = 0.0;
        for l in 0..self.weights.len() {
            let cols = self.layer_sizes[l];
            for row in self.weights[l].chunks(cols) {
                best = best.max(row.iter().map(|w| w.abs()).sum());
            }
        }
        best
    }

    /// Largest |bias| over all layers (the Lemma-style `a`).
    pub fn max_bias_abs(&self) -> f64 {
        self.biases
            .iter()
            .flatten()
            .map(|b| b.abs())
            .fold(0.0, f64::max)
    }

    /// Pre-activations of every layer; the last entry is the output z.
    fn forward_pre(&self, h: &[f64]) -> Result<Vec<Vec<f64>>> {
        if h.len() != self.layer_sizes[0] {
            return Err(SmlError::Shape(format!(
                "input has length {}, net expects {}",
                h.len(),
                self.layer_sizes[0]
            )));
        }
        let mut pres = Vec::with_capacity(self.num_layers());
        let mut x: Vec<f64> = h.to_vec();
        for l in 0..self.num_layers() {
            let cols = self.layer_sizes[l];
            let pre: Vec<f64> = self.weights[l]
                .chunks(cols)
                .zip(&self.biases[l])
                .map(|(row, th)| row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() - th)
                .collect();
            if l + 1 < self.num_layers() {
                x = pre.iter().map(|&u| self.activation.apply(u)).collect();
            }
            pres.push(pre);
        }
        Ok(pres)
    }

    /// Local instantaneous logit f(h) = z_1 - z_2.
    pub fn forward_logit(&self, h: &[f64]) -> Result<f64> {
        let pres = self.forward_pre(h)?;
        let z = pres.last().unwrap();
        Ok(z[0] - z[1])
    }

    /// Softmax posterior of class +1: sigmoid of the logit.
    pub fn posterior_plus(&self, h: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.forward_logit(h)?))
    }

    /// Empirical logistic risk over the dataset, evaluated in the stable
    /// softplus form.
    pub fn empirical_risk(&self, data: &LabeledDataset) -> Result<f64> {
        let mut total = 0.0;
        for (h, &gamma) in data.features.iter().zip(&data.labels) {
            let margin = f64::from(gamma) * self.forward_logit(h)?;
            total += softplus(-margin);
        }
        Ok(total / data.len() as f64)
    }

    /// Exact gradient of the empirical risk by backpropagation.
    pub fn risk_gradient(&self, data: &LabeledDataset) -> Result<Gradients> {
        let mut grads = Gradients {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        for (h, &gamma) in data.features.iter().zip(&data.labels) {
            self.accumulate_sample(h, gamma, &mut grads)?;
        }
        let inv = 1.0 / data.len() as f64;
        for g in grads.weights.iter_mut().chain(grads.biases.iter_mut()) {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
        Ok(grads)
    }

    fn accumulate_sample(&self, h: &[f64], gamma: i8, grads: &mut Gradients) -> Result<()> {
        let pres = self.forward_pre(h)?;
        let nl = self.num_layers();
        let z = &pres[nl - 1];
        let f = z[0] - z[1];
        // d/df log(1 + exp(-gamma f)) = -gamma * sigmoid(-gamma f)
        let g = -f64::from(gamma) * sigmoid(-f64::from(gamma) * f);
        let mut delta = vec![g, -g];
        for l in (0..nl).rev() {
            let input: Vec<f64> = if l == 0 {
                h.to_vec()
            } else {
                pres[l - 1].iter().map(|&u| self.activation.apply(u)).collect()
            };
            let cols = self.layer_sizes[l];
            for (m, &d) in delta.iter().enumerate() {
                for (j, &x) in input.iter().enumerate() {
                    grads.weights[l][m * cols + j] += d * x;
                }
                grads.biases[l][m] -= d;
            }
            if l > 0 {
                let rows = self.layer_sizes[l + 1];
                delta = (0..cols)
                    .map(|j| {
                        let back: f64 = (0..rows)
                            .map(|m| self.weights[l][m * cols + j] * delta[m])
                            .sum();
                        back * self.activation.grad(pres[l - 1][j])
                    })
                    .collect();
            }
        }
        Ok(())
    }

    /// Mini-batch gradient descent on the empirical risk. Deterministic
    /// given `cfg.seed`. Returns the risk trace: entry 0 is the initial
    /// risk, entry e the risk after epoch e.
    pub fn train(&mut self, data: &LabeledDataset, cfg: &TrainConfig) -> Result<Vec<f64>> {
        if cfg.batch_size == 0 || cfg.batch_size > data.len() {
            return Err(SmlError::Config(format!(
                "batch_size {} out of range for {} samples",
                cfg.batch_size,
                data.len()
            )));
        }
        if !(cfg.learning_rate >= 0.0) || cfg.epochs == 0 {
            return Err(SmlError::Config("need learning_rate >= 0 and epochs >= 1".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = seed::rng(cfg.seed, "shuffle", 0);
        let mut trace = Vec::with_capacity(cfg.epochs + 1);
        trace.push(self.empirical_risk(data)?);
        for epoch in 0..cfg.epochs {
            if cfg.shuffle {
                for i in (1..order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
            }
            for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
                let feats: Vec<Vec<f64>> =
                    batch.iter().map(|&n| data.features[n].clone()).collect();
                let labels: Vec<i8> = batch.iter().map(|&n| data.labels[n]).collect();
                let minibatch = LabeledDataset::new(feats, labels)?;
                let loss = self.empirical_risk(&minibatch)?;
                if !loss.is_finite() {
                    return Err(SmlError::Divergence { epoch, batch: bi });
                }
                let grads = self.risk_gradient(&minibatch)?;
                for l in 0..self.weights.len() {
                    for (w, g) in self.weights[l].iter_mut().zip(&grads.weights[l]) {
                        *w -= cfg.learning_rate * g;
                    }
                    for (b, g) in self.biases[l].iter_mut().zip(&grads.biases[l]) {
                        *b -= cfg.learning_rate * g;
                    }
                }
            }
            let risk = self.empirical_risk(data)?;
            if !risk.is_finite() {
                return Err(SmlError::Divergence { epoch, batch: 0 });
            }
            trace.push(risk);
        }
        Ok(trace)
    }

    /// Text checkpoint: layer sizes and activation header, then row-major
    /// matrices and bias vectors at full (shortest round-trip) precision.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.layer_sizes.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!("sizes,{}\n", sizes.join(",")));
        out.push_str(&format!("activation,{}\n", self.activation.name()));
        for l in 0..self.weights.len() {
            let cols = self.layer_sizes[l];
            for row in self.weights[l].chunks(cols) {
                let cells: Vec<String> = row.iter().map(|w| format!("{w}")).collect();
                out.push_str(&format!("w{l},{}\n", cells.join(",")));
            }
            let cells: Vec<String> = self.biases[l].iter().map(|b| format!("{b}")).collect();
            out.push_str(&format!("b{l},{}\n", cells.join(",")));
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let sizes_line = lines.next().ok_or_else(|| SmlError::Data("empty checkpoint".into()))?;
        let mut parts = sizes_line.split(',');
        if parts.next() != Some("sizes") {
            return Err(SmlError::Data("checkpoint missing sizes header".into()));
        }
        let layer_sizes: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| SmlError::Data(format!("bad size {p:?}"))))
            .collect::<Result<_>>()?;
        let act_line = lines.next().ok_or_else(|| SmlError::Data("checkpoint missing activation".into()))?;
        let activation = match act_line.strip_prefix("activation,") {
            Some(name) => Activation::from_name(name)?,
            None => return Err(SmlError::Data("checkpoint missing activation header".into())),
        };
        let parse_row = |line: &str, prefix: &str| -> Result<Vec<f64>> {
            let body = line
                .strip_prefix(prefix)
                .and_then(|r| r.strip_prefix(','))
                .ok_or_else(|| SmlError::Data(format!("expected {prefix} row, got {line:?}")))?;
            body.split(',')
                .map(|c| c.parse().map_err(|_| SmlError::Data(format!("bad number {c:?}"))))
                .collect()
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let mut matrix = Vec::with_capacity(layer_sizes[l + 1] * layer_sizes[l]);
            for _ in 0..layer_sizes[l + 1] {
                let line = lines.next().ok_or_else(|| SmlError::Data("truncated checkpoint".into()))?;
                matrix.extend(parse_row(line, &format!("w{l}"))?);
            }
            let line = lines.next().ok_or_else(|| SmlError::Data("truncated checkpoint".into()))?;
            biases.push(parse_row(line, &format!("b{l}"))?);
            weights.push(matrix);
        }
        Self::from_parts(layer_sizes, weights, biases, activation)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow: max(x, 0) + log1p(e^{-|x|}).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
