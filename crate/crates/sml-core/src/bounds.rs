//! Theory evaluation: the feedforward-network Rademacher bound, the
//! empirical Rademacher average of the linear class, class-conditional means
//! with the consistency condition, and the consistency probability bound.
//!
//! Logs are natural throughout.

use rand::Rng;

use crate::data::LabeledDataset;
use crate::engine::AgentEnsemble;
use crate::error::{Result, SmlError};
use crate::seed;

/// Structural constants of an L-layer feedforward net entering the
/// closed-form Rademacher bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FnnComplexityParams {
    /// Number of layers L >= 1 (excluding the input layer).
    pub depth: usize,
    /// Per-row l1 bound on the weights.
    pub weight_l1_bound: f64,
    /// Bound on every |bias| entry.
    pub bias_bound: f64,
    /// Bound on the input inf-norm.
    pub input_inf_bound: f64,
    /// Lipschitz constant of the activation.
    pub lipschitz: f64,
    pub input_dim: usize,
    pub sample_count: usize,
}

impl FnnComplexityParams {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.input_dim == 0 || self.sample_count == 0 {
            return Err(SmlError::Domain("depth, input_dim, sample_count must be positive".into()));
        }
        if !(self.weight_l1_bound >= 0.0
            && self.bias_bound >= 0.0
            && self.input_inf_bound > 0.0
            && self.lipschitz > 0.0)
        {
            return Err(SmlError::Domain("bound constants must be nonnegative (c, L_sigma positive)".into()));
        }
        Ok(())
    }
}

/// Closed-form upper bound on the Rademacher average of the feedforward
/// class:
///
/// ```text
/// (2/sqrt(N)) [ (2 b L)^(L-1) b c sqrt(2 log(2 n0)) + sum_{l=0}^{L-1} (2 b L)^l a ]
/// ```
///
/// with the convention 0^0 = 1, so a zero-weight net still pays the bias
/// term 2a/sqrt(N).
pub fn fnn_rademacher_bound(p: &FnnComplexityParams) -> Result<f64> {
    p.validate()?;
    let two_bl = 2.0 * p.weight_l1_bound * p.lipschitz;
    let pow = |e: usize| -> f64 {
        if e == 0 {
            1.0
        } else {
            two_bl.powi(e as i32)
        }
    };
    let weight_term = pow(p.depth - 1)
        * p.weight_l1_bound
        * p.input_inf_bound
        * (2.0 * (2.0 * p.input_dim as f64).ln()).sqrt();
    let bias_term: f64 = (0..p.depth).map(|l| pow(l) * p.bias_bound).sum();
    Ok(2.0 / (p.sample_count as f64).sqrt() * (weight_term + bias_term))
}

/// Monte-Carlo estimate of the empirical Rademacher average with its
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// True when every sign pattern was enumerated (estimate is exact).
    pub exhaustive: bool,
}

/// Empirical Rademacher average of the linear class {h -> w.h : ||w||_1 <= b}
/// over the given sample rows. The inner supremum has the closed form
/// b * ||(1/N) sum_n r_n x_n||_inf, so only the sign average is sampled.
///
/// Passing `num_draws == 2^N` (N <= 20) switches to exhaustive enumeration
/// of all sign patterns, making the result exact with zero standard error.
pub fn empirical_rademacher_linear(
    l1_bound: f64,
    samples: &[Vec<f64>],
    num_draws: usize,
    seed_value: u64,
) -> Result<RademacherEstimate> {
    let n = samples.len();
    if n == 0 || samples[0].is_empty() {
        return Err(SmlError::Data("need at least one sample with one coordinate".into()));
    }
    if samples.iter().any(|s| s.len() != samples[0].len()) {
        return Err(SmlError::Shape("ragged sample rows".into()));
    }
    if num_draws == 0 {
        return Err(SmlError::Domain("num_draws must be positive".into()));
    }
    let m = samples[0].len();
    let sup_for_signs = |signs: &dyn Fn(usize) -> f64| -> f64 {
        let mut best: f64 = 0.0;
        for j in 0..m {
            let mut acc = 0.0;
            for (i, row) in samples.iter().enumerate() {
                acc += signs(i) * row[j];
            }
            best = best.max((acc / n as f64).abs());
        }
        l1_bound * best
    };

    if n <= 20 && num_draws == 1usize << n {
        let total: f64 = (0..1usize << n)
            .map(|mask| sup_for_signs(&|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }))
            .sum();
        return Ok(RademacherEstimate {
            mean: total / (1usize << n) as f64,
            std_error: 0.0,
            exhaustive: true,
        });
    }

    let mut rng = seed::rng(seed_value, "rademacher", 0);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..num_draws {
        let signs: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
        let v = sup_for_signs(&|i| signs[i]);
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / num_draws as f64;
    let var = (sum_sq / num_draws as f64 - mean * mean).max(0.0);
    let std_error = if num_draws > 1 {
        (var / (num_draws - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate { mean, std_error, exhaustive: false })
}

/// Per-agent and Perron-weighted class-conditional logit means plus the
/// network training mean.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClassMeans {
    pub per_agent_pos: Vec<f64>,
    pub per_agent_neg: Vec<f64>,
    pub network_pos: f64,
    pub network_neg: f64,
    /// Perron-weighted empirical training mean.
    pub network_training_mean: f64,
}

/// Estimate the class-conditional means of every agent's logit on its
/// labeled holdout and aggregate with the Perron weights.
pub fn class_means(
    ensemble: &AgentEnsemble,
    holdouts: &[LabeledDataset],
    perron: &[f64],
) -> Result<ClassMeans> {
    let k = ensemble.num_agents();
    if holdouts.len() != k || perron.len() != k {
        return Err(SmlError::Shape("holdouts/perron length mismatch".into()));
    }
    let mut per_agent_pos = Vec::with_capacity(k);
    let mut per_agent_neg = Vec::with_capacity(k);
    for a in 0..k {
        for class in [1i8, -1] {
            if !holdouts[a].labels.contains(&class) {
                return Err(SmlError::MissingClass { agent: a, class });
            }
        }
        let mean_for = |class: i8| -> Result<f64> {
            let rows = holdouts[a].class_features(class);
            let mut total = 0.0;
            for h in &rows {
                total += ensemble.net(a).forward_logit(h)?;
            }
            Ok(total / rows.len() as f64)
        };
        per_agent_pos.push(mean_for(1)?);
        per_agent_neg.push(mean_for(-1)?);
    }
    let weighted = |v: &[f64]| -> f64 { v.iter().zip(perron).map(|(x, p)| x * p).sum() };
    Ok(ClassMeans {
        network_pos: weighted(&per_agent_pos),
        network_neg: weighted(&per_agent_neg),
        network_training_mean: weighted(ensemble.training_means()),
        per_agent_pos,
        per_agent_neg,
    })
}

/// Consistency condition outcome with both margins.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConsistencyCheck {
    pub holds: bool,
    /// mu+ - training mean.
    pub margin_pos: f64,
    /// training mean - mu-.
    pub margin_neg: f64,
}

/// True iff the class means strictly straddle the network training mean.
pub fn consistency_condition(means: &ClassMeans) -> ConsistencyCheck {
    let margin_pos = means.network_pos - means.network_training_mean;
    let margin_neg = means.network_training_mean - means.network_neg;
    ConsistencyCheck { holds: margin_pos > 0.0 && margin_neg > 0.0, margin_pos, margin_neg }
}

/// Inputs to the consistency probability bound.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConsistencyInputs {
    pub d: f64,
    /// Network-average risk of the target models; must be below log 2.
    pub network_risk: f64,
    /// Uniform bound on |f_k|.
    pub logit_bound: f64,
    pub sample_counts: Vec<usize>,
    /// Per-agent complexity terms rho_N.
    pub complexities: Vec<f64>,
}

/// Per-agent contributions to the probability bound.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AgentBoundTerms {
    /// Value of exp(-(d - rho)^2 N / 2B^2), or 1 when flagged vacuous.
    pub mean_term: f64,
    /// Value of exp(-((Delta - R)/2 - rho)^2 N / 2B^2), or 1 when vacuous.
    pub risk_term: f64,
    pub mean_term_vacuous: bool,
    pub risk_term_vacuous: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ProbabilityBound {
    /// Raw value of the bound; may be negative.
    pub raw: f64,
    /// Raw value clamped into [0, 1] for reporting.
    pub clamped: f64,
    pub delta_constant: f64,
    pub per_agent: Vec<AgentBoundTerms>,
}

/// Lower bound on the probability of consistent learning:
///
/// ```text
/// 1 - 2 sum_k exp(-(d - rho_k)^2 N_k / 2B^2)
///   -   sum_k exp(-((Delta - R)/2 - rho_k)^2 N_k / 2B^2),   Delta = log(1 + e^-d)
/// ```
///
/// When a gap `d - rho_k` or `(Delta - R)/2 - rho_k` is not positive, the
/// corresponding exponential is replaced by 1 (the trivially valid bound)
/// and flagged vacuous for that agent.
pub fn consistency_probability_bound(inp: &ConsistencyInputs) -> Result<ProbabilityBound> {
    let k = inp.sample_counts.len();
    if k == 0 || inp.complexities.len() != k {
        return Err(SmlError::Shape("sample_counts/complexities length mismatch".into()));
    }
    let log2 = std::f64::consts::LN_2;
    if !(inp.network_risk > 0.0 && inp.network_risk < log2) {
        return Err(SmlError::Domain(format!(
            "network risk {} must lie in (0, log 2)",
            inp.network_risk
        )));
    }
    let d_max = -(inp.network_risk.exp() - 1.0).ln();
    if !(inp.d > 0.0 && inp.d < d_max) {
        return Err(SmlError::Domain(format!(
            "d = {} must lie in (0, {d_max}) for network risk {}",
            inp.d, inp.network_risk
        )));
    }
    if !(inp.logit_bound > 0.0) {
        return Err(SmlError::Domain("logit bound B must be positive".into()));
    }
    if inp.complexities.iter().any(|r| !(*r >= 0.0)) {
        return Err(SmlError::Domain("complexities must be nonnegative".into()));
    }
    if inp.sample_counts.iter().any(|&n| n == 0) {
        return Err(SmlError::Domain("sample counts must be positive".into()));
    }

    let delta_constant = (1.0 + (-inp.d).exp()).ln();
    let b2 = inp.logit_bound * inp.logit_bound;
    let mut per_agent = Vec::with_capacity(k);
    let mut raw = 1.0;
    for a in 0..k {
        let n = inp.sample_counts[a] as f64;
        let rho = inp.complexities[a];
        let term = |gap: f64| -> (f64, bool) {
            if gap <= 0.0 {
                (1.0, true)
            } else {
                ((-(gap * gap) * n / (2.0 * b2)).exp(), false)
            }
        };
        let (mean_term, mean_term_vacuous) = term(inp.d - rho);
        let (risk_term, risk_term_vacuous) =
            term((delta_constant - inp.network_risk) / 2.0 - rho);
        raw -= 2.0 * mean_term + risk_term;
        per_agent.push(AgentBoundTerms { mean_term, risk_term, mean_term_vacuous, risk_term_vacuous });
    }
    Ok(ProbabilityBound { raw, clamped: raw.clamp(0.0, 1.0), delta_constant, per_agent })
}

/// Perron-weighted network average of per-agent risks.
pub fn network_average_risk(per_agent_risks: &[f64], perron: &[f64]) -> Result<f64> {
    if per_agent_risks.len() != perron.len() {
        return Err(SmlError::Shape(format!(
            "risks/perron length mismatch: {}/{}",
            per_agent_risks.len(),
            perron.len()
        )));
    }
    Ok(per_agent_risks.iter().zip(perron).map(|(r, p)| r * p).sum())
}
