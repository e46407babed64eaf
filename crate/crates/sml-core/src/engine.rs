//! Prediction-phase core: debiased logit statistics, the adaptive diffusion
//! recursion, instantaneous decisions, and the belief-form oracle used for
//! equivalence testing.
//!
//! The recursion is
//!
//! ```text
//! lambda_{k,i} = (1 - delta) sum_l a_{lk} lambda_{l,i-1} + delta sum_l a_{lk} c_{l,i}
//! ```
//!
//! with `c_{k,i} = f_k(h_{k,i}) - mean of f_k over agent k's training set`.

use crate::data::{Label, LabeledDataset};
use crate::error::{Result, SmlError};
use crate::graph::CombinationMatrix;
use crate::net::FeedforwardNet;

/// Mean of the net's logit over its own training features (the debiasing
/// term).
pub fn training_mean(net: &FeedforwardNet, train_features: &[Vec<f64>]) -> Result<f64> {
    if train_features.is_empty() {
        return Err(SmlError::Data("training mean needs at least one sample".into()));
    }
    let mut total = 0.0;
    for h in train_features {
        total += net.forward_logit(h)?;
    }
    Ok(total / train_features.len() as f64)
}

/// The K trained nets plus each agent's empirical training mean.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEnsemble {
    nets: Vec<FeedforwardNet>,
    training_means: Vec<f64>,
}

impl AgentEnsemble {
    /// Build from trained nets and their training sets; the debiasing means
    /// are computed here.
    pub fn new(nets: Vec<FeedforwardNet>, training_sets: &[LabeledDataset]) -> Result<Self> {
        if nets.len() != training_sets.len() || nets.is_empty() {
            return Err(SmlError::Shape(format!(
                "need matching nonempty nets/training sets, got {}/{}",
                nets.len(),
                training_sets.len()
            )));
        }
        let training_means = nets
            .iter()
            .zip(training_sets)
            .map(|(net, data)| training_mean(net, &data.features))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { nets, training_means })
    }

    pub fn from_parts(nets: Vec<FeedforwardNet>, training_means: Vec<f64>) -> Result<Self> {
        if nets.len() != training_means.len() || nets.is_empty() {
            return Err(SmlError::Shape("nets/means length mismatch".into()));
        }
        if training_means.iter().any(|m| !m.is_finite()) {
            return Err(SmlError::Shape("non-finite training mean".into()));
        }
        Ok(Self { nets, training_means })
    }

    pub fn num_agents(&self) -> usize {
        self.nets.len()
    }

    pub fn net(&self, k: usize) -> &FeedforwardNet {
        &self.nets[k]
    }

    pub fn nets(&self) -> &[FeedforwardNet] {
        &self.nets
    }

    pub fn training_means(&self) -> &[f64] {
        &self.training_means
    }

    /// Debiased statistic c = f_k(h) - training mean of agent k.
    pub fn debiased_statistic(&self, k: usize, h: &[f64]) -> Result<f64> {
        if k >= self.nets.len() {
            return Err(SmlError::AgentIndex { index: k, num_agents: self.nets.len() });
        }
        Ok(self.nets[k].forward_logit(h)? - self.training_means[k])
    }
}

/// Vector of log-belief ratios evolving under the diffusion recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub lambda: Vec<f64>,
    pub step_size: f64,
    pub time_index: usize,
}

impl DiffusionState {
    pub fn new(lambda: Vec<f64>, step_size: f64) -> Result<Self> {
        if !(step_size > 0.0 && step_size < 1.0) {
            return Err(SmlError::Config(format!("step size {step_size} must lie in (0, 1)")));
        }
        if lambda.iter().any(|x| !x.is_finite()) {
            return Err(SmlError::Config("non-finite initial lambda".into()));
        }
        Ok(Self { lambda, step_size, time_index: 0 })
    }
}

/// One synchronous round of the adaptive diffusion recursion. Pure: the
/// input state is untouched.
pub fn diffusion_step(
    state: &DiffusionState,
    c: &[f64],
    matrix: &CombinationMatrix,
) -> Result<DiffusionState> {
    let k = state.lambda.len();
    if c.len() != k || matrix.num_agents() != k {
        return Err(SmlError::Shape(format!(
            "dimension mismatch: lambda {k}, c {}, matrix {}",
            c.len(),
            matrix.num_agents()
        )));
    }
    if let Some(agent) = c.iter().position(|x| !x.is_finite()) {
        return Err(SmlError::NonFiniteSignal { agent, time: state.time_index + 1 });
    }
    let delta = state.step_size;
    let blended: Vec<f64> = state
        .lambda
        .iter()
        .zip(c)
        .map(|(l, ci)| (1.0 - delta) * l + delta * ci)
        .collect();
    Ok(DiffusionState {
        lambda: matrix.combine(&blended),
        step_size: delta,
        time_index: state.time_index + 1,
    })
}

/// Decision rule: +1 iff lambda >= 0.
pub fn decide(lambda: f64) -> Label {
    if lambda >= 0.0 {
        1
    } else {
        -1
    }
}

/// Trajectories of a prediction run: `lambda[t][k]` and `decisions[t][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRun {
    pub lambda: Vec<Vec<f64>>,
    pub decisions: Vec<Vec<Label>>,
    /// Per-step debiased statistics, kept for the standalone-classifier
    /// contrast.
    pub statistics: Vec<Vec<f64>>,
}

/// Iterate the debiased statistic plus diffusion step over per-agent feature
/// streams. `streams[k][t]` is agent k's observation at time t.
pub fn run_prediction(
    ensemble: &AgentEnsemble,
    matrix: &CombinationMatrix,
    step_size: f64,
    streams: &[Vec<Vec<f64>>],
    lambda0: &[f64],
) -> Result<PredictionRun> {
    let k = ensemble.num_agents();
    if streams.len() != k || lambda0.len() != k {
        return Err(SmlError::Shape(format!(
            "expected {k} streams and lambda0 entries, got {}/{}",
            streams.len(),
            lambda0.len()
        )));
    }
    let horizon = streams.first().map_or(0, Vec::len);
    if streams.iter().any(|s| s.len() != horizon) {
        return Err(SmlError::Shape("agent streams have unequal length".into()));
    }
    let mut state = DiffusionState::new(lambda0.to_vec(), step_size)?;
    let mut run = PredictionRun {
        lambda: Vec::with_capacity(horizon),
        decisions: Vec::with_capacity(horizon),
        statistics: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let c = (0..k)
            .map(|a| ensemble.debiased_statistic(a, &streams[a][t]))
            .collect::<Result<Vec<f64>>>()?;
        state = diffusion_step(&state, &c, matrix)?;
        run.decisions.push(state.lambda.iter().map(|&l| decide(l)).collect());
        run.lambda.push(state.lambda.clone());
        run.statistics.push(c);
    }
    Ok(run)
}

/// Belief pairs (phi(+1), phi(-1)), kept in the log domain so large horizons
/// never underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    /// log_beliefs[k] = (log phi_k(+1), log phi_k(-1)), normalized so the
    /// probabilities sum to one.
    log_beliefs: Vec<[f64; 2]>,
}

fn log_normalize(pair: [f64; 2]) -> [f64; 2] {
    let m = pair[0].max(pair[1]);
    let lse = m + ((pair[0] - m).exp() + (pair[1] - m).exp()).ln();
    [pair[0] - lse, pair[1] - lse]
}

impl BeliefState {
    pub fn uniform(num_agents: usize) -> Self {
        Self { log_beliefs: vec![log_normalize([0.0, 0.0]); num_agents] }
    }

    /// Beliefs whose log ratios equal the given lambda vector.
    pub fn from_log_ratios(lambda: &[f64]) -> Self {
        Self {
            log_beliefs: lambda.iter().map(|&l| log_normalize([l / 2.0, -l / 2.0])).collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.log_beliefs.len()
    }

    /// log(phi_k(+1) / phi_k(-1)).
    pub fn log_ratio(&self, k: usize) -> f64 {
        self.log_beliefs[k][0] - self.log_beliefs[k][1]
    }

    /// Probability-domain belief pairs.
    pub fn beliefs(&self) -> Vec<(f64, f64)> {
        self.log_beliefs
            .iter()
            .map(|p| (p[0].exp(), p[1].exp()))
            .collect()
    }
}

/// One round of the belief-form social learning update: the Bayes-like
/// private step followed by the geometric neighborhood combination.
/// `likelihood_ratios[k]` is the (positive) ratio L_k(h|+1)/L_k(h|-1), which
/// for the trained statistic is exp(c_k).
pub fn belief_oracle_step(
    state: &BeliefState,
    likelihood_ratios: &[f64],
    matrix: &CombinationMatrix,
    step_size: f64,
) -> Result<BeliefState> {
    let k = state.num_agents();
    if likelihood_ratios.len() != k || matrix.num_agents() != k {
        return Err(SmlError::Shape("belief step dimension mismatch".into()));
    }
    if let Some(agent) = likelihood_ratios.iter().position(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(SmlError::NonFiniteSignal { agent, time: 0 });
    }
    if !(step_size > 0.0 && step_size <= 1.0) {
        return Err(SmlError::Config(format!("step size {step_size} must lie in (0, 1]")));
    }
    // private update, log domain
    let intermediate: Vec<[f64; 2]> = (0..k)
        .map(|a| {
            let lr = likelihood_ratios[a].ln();
            let prior = state.log_beliefs[a];
            log_normalize([
                (1.0 - step_size) * prior[0] + step_size * (lr / 2.0),
                (1.0 - step_size) * prior[1] + step_size * (-lr / 2.0),
            ])
        })
        .collect();
    // geometric combination over neighborhoods
    let combined: Vec<[f64; 2]> = (0..k)
        .map(|c| {
            let mut pair = [0.0; 2];
            for l in 0..k {
                let a = matrix.weight(l, c);
                pair[0] += a * intermediate[l][0];
                pair[1] += a * intermediate[l][1];
            }
            log_normalize(pair)
        })
        .collect();
    Ok(BeliefState { log_beliefs: combined })
}
