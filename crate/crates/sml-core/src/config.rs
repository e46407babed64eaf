//! Experiment configuration: TOML sections with every knob the runner
//! exposes. The resolved config (defaults filled in, seed pinned) is
//! snapshotted next to the artifacts so a run can be replayed byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmlError};
use crate::graph::AgentGraph;
use crate::net::{Activation, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub num_agents: usize,
    /// Listen edges (l, k): agent k listens to agent l.
    pub edges: Vec<(usize, usize)>,
    pub self_loops: Vec<usize>,
    /// Only "averaging" is implemented; the field is a hook for other rules.
    pub rule: String,
}

impl GraphConfig {
    pub fn build(&self) -> Result<AgentGraph> {
        if self.rule != "averaging" {
            return Err(SmlError::Config(format!(
                "combination rule {:?} not implemented (only \"averaging\")",
                self.rule
            )));
        }
        AgentGraph::new(self.num_agents, &self.edges, &self.self_loops)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub delta: f64,
    /// Initial lambda, shared by every agent.
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Mnist {
        /// Directory holding the IDX files.
        dir: String,
        images_file: String,
        labels_file: String,
        digit_neg: u8,
        digit_pos: u8,
        /// Training samples per class per agent.
        per_class: usize,
    },
    Gaussian {
        dim: usize,
        /// Per-agent mean norms; the class-+1 mean of agent k is
        /// `mean_norms[k] / sqrt(dim)` in every coordinate.
        mean_norms: Vec<f64>,
        std: f64,
        per_class: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: String,
}

impl ModelConfig {
    pub fn activation(&self) -> Result<Activation> {
        Activation::from_name(&self.activation)
    }

    pub fn layer_sizes(&self, input_dim: usize) -> Vec<usize> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden);
        sizes.push(2);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub shuffle: bool,
}

impl TrainSettings {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
            shuffle: self.shuffle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub steps: usize,
    pub switch_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub seed: u64,
    pub out_dir: String,
    /// Fraction of the training allocation generated as per-agent holdout
    /// for synthetic sources; MNIST uses the partition remainder instead.
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub diffusion: DiffusionConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    /// Agents whose training data is poisoned before training.
    pub corrupt_agents: Vec<usize>,
    pub prediction: PredictionConfig,
    pub run: RunSettings,
}

impl ExperimentConfig {
    /// The simulation setup of the experiment section: 10 agents on the
    /// averaging rule, MNIST digits 0/1, 98 training samples per class,
    /// one hidden layer of 64 arctan nodes, mini-batch 10 over 15 epochs,
    /// agent 0 poisoned, 1000 prediction steps with the class switch at 500.
    pub fn paper_default() -> Self {
        // ring over 10 agents plus a few chords, all bidirectional,
        // self-loops everywhere
        let mut edges = Vec::new();
        for k in 0..10usize {
            let next = (k + 1) % 10;
            edges.push((k, next));
            edges.push((next, k));
        }
        for &(a, b) in &[(0usize, 5usize), (2, 7), (4, 9)] {
            edges.push((a, b));
            edges.push((b, a));
        }
        Self {
            graph: GraphConfig {
                num_agents: 10,
                edges,
                self_loops: (0..10).collect(),
                rule: "averaging".into(),
            },
            diffusion: DiffusionConfig { delta: 0.05, lambda0: 0.0 },
            data: DataConfig::Mnist {
                dir: "data/mnist".into(),
                images_file: "train-images-idx3-ubyte".into(),
                labels_file: "train-labels-idx1-ubyte".into(),
                digit_neg: 0,
                digit_pos: 1,
                per_class: 98,
            },
            model: ModelConfig { hidden: vec![64], activation: "arctan".into() },
            train: TrainSettings { batch_size: 10, epochs: 15, learning_rate: 0.05, shuffle: true },
            corrupt_agents: vec![0],
            prediction: PredictionConfig { steps: 1000, switch_at: 500 },
            run: RunSettings { seed: 1, out_dir: "runs/paper".into(), holdout_fraction: 0.2 },
        }
    }

    /// Small synthetic default: K agents on a fully connected graph with
    /// Gaussian sources.
    pub fn gaussian_default(num_agents: usize) -> Self {
        let edges = (0..num_agents)
            .flat_map(|a| (0..num_agents).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        Self {
            graph: GraphConfig {
                num_agents,
                edges,
                self_loops: (0..num_agents).collect(),
                rule: "averaging".into(),
            },
            diffusion: DiffusionConfig { delta: 0.05, lambda0: 0.0 },
            data: DataConfig::Gaussian {
                dim: 2,
                mean_norms: vec![1.0; num_agents],
                std: 1.0,
                per_class: 250,
            },
            model: ModelConfig { hidden: vec![8], activation: "arctan".into() },
            train: TrainSettings { batch_size: 10, epochs: 30, learning_rate: 0.2, shuffle: true },
            corrupt_agents: vec![],
            prediction: PredictionConfig { steps: 400, switch_at: 200 },
            run: RunSettings { seed: 1, out_dir: "runs/gaussian".into(), holdout_fraction: 0.2 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.graph.num_agents;
        if !(self.diffusion.delta > 0.0 && self.diffusion.delta < 1.0) {
            return Err(SmlError::Config(format!(
                "delta {} must lie in (0, 1)",
                self.diffusion.delta
            )));
        }
        if !self.diffusion.lambda0.is_finite() {
            return Err(SmlError::Config("lambda0 must be finite".into()));
        }
        if let Some(&a) = self.corrupt_agents.iter().find(|&&a| a >= k) {
            return Err(SmlError::Config(format!("corrupt agent {a} out of range (K = {k})")));
        }
        if self.prediction.switch_at > self.prediction.steps {
            return Err(SmlError::Config(format!(
                "switch_at {} exceeds steps {}",
                self.prediction.switch_at, self.prediction.steps
            )));
        }
        if !(self.run.holdout_fraction > 0.0 && self.run.holdout_fraction < 1.0) {
            return Err(SmlError::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        if let DataConfig::Gaussian { dim, mean_norms, std, per_class } = &self.data {
            if *dim == 0 || *per_class == 0 {
                return Err(SmlError::Config("gaussian dim and per_class must be positive".into()));
            }
            if mean_norms.len() != k {
                return Err(SmlError::Config(format!(
                    "need {k} gaussian mean norms, got {}",
                    mean_norms.len()
                )));
            }
            if !(*std > 0.0) {
                return Err(SmlError::Config("gaussian std must be positive".into()));
            }
        }
        self.model.activation()?;
        self.graph.build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| SmlError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SmlError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SmlError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
