//! Experiment orchestration: data preparation, the training phase, the
//! consistency and bound evaluations, the prediction phase, and every CSV
//! artifact. All outputs are functions of (config, seed) alone; the run
//! directory carries a snapshot and hash so any run can be replayed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bounds::{
    class_means, consistency_condition, consistency_probability_bound, fnn_rademacher_bound,
    network_average_risk, ClassMeans, ConsistencyCheck, ConsistencyInputs, FnnComplexityParams,
    ProbabilityBound,
};
use crate::config::{DataConfig, ExperimentConfig};
use crate::data::{
    build_binary_task, corrupt_agent, gaussian_stream, gaussian_training_set, parse_idx,
    partition_agents, prediction_schedule, GaussianSourceSpec, Label, LabeledDataset,
    DEFAULT_PIXEL_SCALE,
};
use crate::engine::{decide, run_prediction, AgentEnsemble, PredictionRun};
use crate::error::{Result, SmlError};
use crate::graph::{build_averaging_matrix, DEFAULT_PERRON_MAX_ITERS, DEFAULT_PERRON_TOL};
use crate::net::FeedforwardNet;
use crate::seed;

/// Datasets of one experiment: per-agent training sets, per-agent labeled
/// holdouts, and per-agent prediction streams following the class schedule.
pub struct PreparedData {
    pub training: Vec<LabeledDataset>,
    pub holdouts: Vec<LabeledDataset>,
    pub streams: Vec<Vec<Vec<f64>>>,
    pub schedule: Vec<Label>,
}

/// Everything a finished run produced, plus where it lives on disk.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunSummary {
    pub config_sha256: String,
    pub seed: u64,
    pub perron: Vec<f64>,
    pub final_risks: Vec<f64>,
    /// Windowed accuracy of the diffused decision, per agent.
    pub sml_accuracy: Vec<f64>,
    /// Windowed accuracy of each agent's standalone debiased logit.
    pub standalone_accuracy: Vec<f64>,
    pub consistency: ConsistencyCheck,
    pub class_means: ClassMeans,
    pub probability_bound: Option<ProbabilityBound>,
}

/// Steps counted by the accuracy window: at least `warmup` steps after the
/// start and `settle` steps after the class switch.
pub fn accuracy_window(steps: usize, switch_at: usize, warmup: usize, settle: usize) -> Vec<usize> {
    (0..steps)
        .filter(|&i| {
            if i < switch_at {
                i >= warmup
            } else {
                i >= switch_at + settle
            }
        })
        .collect()
}

pub const ACCURACY_WARMUP: usize = 100;
pub const ACCURACY_SETTLE: usize = 50;

fn windowed_accuracy(decisions: &[Label], schedule: &[Label], window: &[usize]) -> f64 {
    if window.is_empty() {
        return f64::NAN;
    }
    let hits = window.iter().filter(|&&i| decisions[i] == schedule[i]).count();
    hits as f64 / window.len() as f64
}

/// Full-precision decimal cell (17 significant digits).
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Build the datasets for the configured source. Deterministic given the
/// config and master seed.
pub fn prepare_data(cfg: &ExperimentConfig, master_seed: u64) -> Result<PreparedData> {
    let k = cfg.graph.num_agents;
    let schedule = prediction_schedule(cfg.prediction.steps, cfg.prediction.switch_at)?;
    match &cfg.data {
        DataConfig::Mnist { dir, images_file, labels_file, digit_neg, digit_pos, per_class } => {
            let images = parse_idx(&fs::read(Path::new(dir).join(images_file)).map_err(|e| {
                SmlError::Data(format!("cannot read {dir}/{images_file}: {e}"))
            })?)?;
            let labels = parse_idx(&fs::read(Path::new(dir).join(labels_file)).map_err(|e| {
                SmlError::Data(format!("cannot read {dir}/{labels_file}: {e}"))
            })?)?;
            let task = build_binary_task(&images, &labels, *digit_neg, *digit_pos, DEFAULT_PIXEL_SCALE)?;
            let mut assignment = partition_agents(&task, k, *per_class, master_seed)?;
            for &a in &cfg.corrupt_agents {
                corrupt_agent(&mut assignment, a, master_seed)?;
            }
            // streams draw with replacement from the holdout pool of the
            // scheduled class, independently per agent
            let pos: Vec<&Vec<f64>> = assignment.holdout.class_features(1);
            let neg: Vec<&Vec<f64>> = assignment.holdout.class_features(-1);
            if pos.is_empty() || neg.is_empty() {
                return Err(SmlError::Data("holdout pool is missing a class".into()));
            }
            let streams = (0..k)
                .map(|a| {
                    let mut rng = seed::rng(master_seed, "stream", a as u64);
                    schedule
                        .iter()
                        .map(|&cls| {
                            let pool = if cls == 1 { &pos } else { &neg };
                            pool[rng.gen_range(0..pool.len())].clone()
                        })
                        .collect()
                })
                .collect();
            let holdouts = vec![assignment.holdout.clone(); k];
            Ok(PreparedData { training: assignment.training, holdouts, streams, schedule })
        }
        DataConfig::Gaussian { dim, mean_norms, std, per_class } => {
            let specs: Vec<GaussianSourceSpec> = (0..k)
                .map(|a| {
                    let coord = mean_norms[a] / (*dim as f64).sqrt();
                    GaussianSourceSpec::new(
                        vec![coord; *dim],
                        *std,
                        seed::derive(master_seed, "gauss-spec", a as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let holdout_per_class =
                ((cfg.run.holdout_fraction * *per_class as f64).round() as usize).max(1);
            let mut training = Vec::with_capacity(k);
            let mut holdouts = Vec::with_capacity(k);
            let mut streams = Vec::with_capacity(k);
            for (a, spec) in specs.iter().enumerate() {
                training.push(gaussian_training_set(spec, *per_class, 0)?);
                holdouts.push(gaussian_training_set(spec, holdout_per_class, 1)?);
                let (features, _) = gaussian_stream(spec, &schedule, 2);
                streams.push(features);
                let _ = a;
            }
            let mut prepared = PreparedData { training, holdouts, streams, schedule };
            for &a in &cfg.corrupt_agents {
                corrupt_prepared_gaussian(&mut prepared, a, master_seed)?;
            }
            Ok(prepared)
        }
    }
}

/// Gaussian variant of the poisoning scenario: class-+1 features only,
/// labels redrawn uniformly.
fn corrupt_prepared_gaussian(data: &mut PreparedData, k: usize, master_seed: u64) -> Result<()> {
    let num_agents = data.training.len();
    if k >= num_agents {
        return Err(SmlError::AgentIndex { index: k, num_agents });
    }
    let pool: Vec<Vec<f64>> = data.training[k]
        .class_features(1)
        .into_iter()
        .chain(data.holdouts[k].class_features(1))
        .cloned()
        .collect();
    let n = data.training[k].len();
    let mut rng = seed::rng(master_seed, "corrupt", k as u64);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        features.push(pool[rng.gen_range(0..pool.len())].clone());
        labels.push(if rng.gen::<bool>() { 1 } else { -1 });
    }
    data.training[k] = LabeledDataset::new(features, labels)?;
    Ok(())
}

/// Train every agent's net in parallel. Deterministic regardless of worker
/// count: each agent's seed is derived up front.
pub fn train_agents(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    master_seed: u64,
) -> Result<(Vec<FeedforwardNet>, Vec<Vec<f64>>)> {
    let activation = cfg.model.activation()?;
    let results: Vec<Result<(FeedforwardNet, Vec<f64>)>> = data
        .training
        .par_iter()
        .enumerate()
        .map(|(a, train)| {
            let sizes = cfg.model.layer_sizes(train.dim());
            let init_seed = seed::derive(master_seed, "init", a as u64);
            let mut net = FeedforwardNet::init_seeded(&sizes, activation, init_seed)?;
            let tc = cfg.train.to_train_config(seed::derive(master_seed, "train", a as u64));
            let trace = net.train(train, &tc)?;
            Ok((net, trace))
        })
        .collect();
    let mut nets = Vec::with_capacity(results.len());
    let mut traces = Vec::with_capacity(results.len());
    for r in results {
        let (net, trace) = r?;
        nets.push(net);
        traces.push(trace);
    }
    Ok((nets, traces))
}

/// Per-agent risk-trace CSV with the Perron-weighted network average rows.
pub fn emit_risk_curves(traces: &[Vec<f64>], perron: &[f64]) -> Result<String> {
    if traces.is_empty() || traces.iter().any(|t| t.len() != traces[0].len()) {
        return Err(SmlError::Shape("need equal-length nonempty traces".into()));
    }
    if traces.len() != perron.len() {
        return Err(SmlError::Shape("traces/perron length mismatch".into()));
    }
    let mut out = String::from("epoch,agent,risk\n");
    for epoch in 0..traces[0].len() {
        for (a, trace) in traces.iter().enumerate() {
            out.push_str(&format!("{epoch},{a},{}\n", fmt(trace[epoch])));
        }
        let avg: f64 = traces.iter().zip(perron).map(|(t, p)| t[epoch] * p).sum();
        out.push_str(&format!("{epoch},network,{}\n", fmt(avg)));
    }
    Ok(out)
}

fn lambda_csv(run: &PredictionRun, schedule: &[Label]) -> String {
    let mut out = String::from("time,agent,lambda,decision,true_label\n");
    for (t, row) in run.lambda.iter().enumerate() {
        for (a, &l) in row.iter().enumerate() {
            out.push_str(&format!(
                "{t},{a},{},{},{}\n",
                fmt(l),
                run.decisions[t][a],
                schedule[t]
            ));
        }
    }
    out
}

fn accuracy_csv(summary: &RunSummary) -> String {
    let mut out = String::from("agent,sml_accuracy,standalone_accuracy\n");
    for a in 0..summary.sml_accuracy.len() {
        out.push_str(&format!(
            "{a},{},{}\n",
            fmt(summary.sml_accuracy[a]),
            fmt(summary.standalone_accuracy[a])
        ));
    }
    out
}

/// Bound evaluation of one trained ensemble.
pub struct BoundReport {
    pub params: Vec<FnnComplexityParams>,
    pub lemma_bounds: Vec<f64>,
    pub complexities: Vec<f64>,
    pub logit_bound: f64,
    pub holdout_risks: Vec<f64>,
    pub network_risk: f64,
    pub probability: Option<ProbabilityBound>,
    pub note: String,
}

pub fn evaluate_bounds(
    ensemble: &AgentEnsemble,
    data: &PreparedData,
    perron: &[f64],
) -> Result<BoundReport> {
    let k = ensemble.num_agents();
    let mut params = Vec::with_capacity(k);
    let mut lemma_bounds = Vec::with_capacity(k);
    let mut complexities = Vec::with_capacity(k);
    let mut holdout_risks = Vec::with_capacity(k);
    let mut logit_bound: f64 = 0.0;
    for a in 0..k {
        let net = ensemble.net(a);
        let inf_norm = data.training[a]
            .features
            .iter()
            .chain(&data.holdouts[a].features)
            .flat_map(|row| row.iter().map(|x| x.abs()))
            .fold(0.0, f64::max);
        let p = FnnComplexityParams {
            depth: net.num_layers(),
            weight_l1_bound: net.max_row_l1(),
            bias_bound: net.max_bias_abs(),
            input_inf_bound: inf_norm.max(f64::MIN_POSITIVE),
            lipschitz: net.activation().lipschitz(),
            input_dim: net.input_dim(),
            sample_count: data.training[a].len(),
        };
        let lemma = fnn_rademacher_bound(&p)?;
        // rho = 2 E R(F(h^N)), approximated by the distribution-free bound
        complexities.push(2.0 * lemma);
        lemma_bounds.push(lemma);
        params.push(p);
        holdout_risks.push(net.empirical_risk(&data.holdouts[a])?);
        for h in data.training[a].features.iter().chain(&data.holdouts[a].features) {
            logit_bound = logit_bound.max(net.forward_logit(h)?.abs());
        }
    }
    let network_risk = network_average_risk(&holdout_risks, perron)?;
    let log2 = std::f64::consts::LN_2;
    let (probability, note) = if network_risk > 0.0 && network_risk < log2 {
        let d = 0.5 * -(network_risk.exp() - 1.0).ln();
        let inp = ConsistencyInputs {
            d,
            network_risk,
            logit_bound: logit_bound.max(f64::MIN_POSITIVE),
            sample_counts: data.training.iter().map(LabeledDataset::len).collect(),
            complexities: complexities.clone(),
        };
        (Some(consistency_probability_bound(&inp)?), format!("d chosen as midpoint {d}"))
    } else {
        (
            None,
            format!("probability bound unavailable: network holdout risk {network_risk} not in (0, log 2)"),
        )
    };
    Ok(BoundReport {
        params,
        lemma_bounds,
        complexities,
        logit_bound,
        holdout_risks,
        network_risk,
        probability,
        note,
    })
}

impl BoundReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "agent,samples,depth,weight_l1_bound,bias_bound,input_inf_bound,lemma_bound,rho,holdout_risk,mean_term,risk_term,mean_vacuous,risk_vacuous\n",
        );
        for a in 0..self.params.len() {
            let p = &self.params[a];
            let (mt, rt, mv, rv) = match &self.probability {
                Some(b) => {
                    let t = &b.per_agent[a];
                    (fmt(t.mean_term), fmt(t.risk_term), t.mean_term_vacuous, t.risk_term_vacuous)
                }
                None => ("".into(), "".into(), false, false),
            };
            out.push_str(&format!(
                "{a},{},{},{},{},{},{},{},{},{mt},{rt},{mv},{rv}\n",
                p.sample_count,
                p.depth,
                fmt(p.weight_l1_bound),
                fmt(p.bias_bound),
                fmt(p.input_inf_bound),
                fmt(self.lemma_bounds[a]),
                fmt(self.complexities[a]),
                fmt(self.holdout_risks[a]),
            ));
        }
        out
    }

    pub fn to_text(&self, means: &ClassMeans, check: &ConsistencyCheck) -> String {
        let mut out = String::new();
        out.push_str("bound report\n============\n");
        out.push_str(&format!("network holdout risk: {}\n", fmt(self.network_risk)));
        out.push_str(&format!("logit bound B: {}\n", fmt(self.logit_bound)));
        out.push_str(&format!(
            "class means: mu+ {} mu- {} training mean {}\n",
            fmt(means.network_pos),
            fmt(means.network_neg),
            fmt(means.network_training_mean)
        ));
        out.push_str(&format!(
            "consistency condition: {} (margins {} / {})\n",
            if check.holds { "holds" } else { "fails" },
            fmt(check.margin_pos),
            fmt(check.margin_neg)
        ));
        match &self.probability {
            Some(b) => {
                out.push_str(&format!(
                    "probability bound: raw {} clamped {} (Delta {})\n",
                    fmt(b.raw),
                    fmt(b.clamped),
                    fmt(b.delta_constant)
                ));
                let vacuous = b
                    .per_agent
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.mean_term_vacuous || t.risk_term_vacuous)
                    .map(|(a, _)| a.to_string())
                    .collect::<Vec<_>>();
                if !vacuous.is_empty() {
                    out.push_str(&format!("vacuous for agents: {}\n", vacuous.join(",")));
                }
            }
            None => out.push_str("probability bound: unavailable\n"),
        }
        out.push_str(&format!("note: {}\n", self.note));
        out
    }
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Stage;

impl Stage {
    fn wrap<T>(name: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            SmlError::Config(m) => SmlError::Config(format!("[{name}] {m}")),
            SmlError::Data(m) => SmlError::Data(format!("[{name}] {m}")),
            other => other,
        })
    }
}

/// Run the whole pipeline and write every artifact under the configured
/// output directory. `workers` limits the rayon pool; the artifacts are
/// byte-identical for any worker count.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunArtifacts> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SmlError::Config(e.to_string()))?;
            pool.install(|| run_experiment_inner(cfg))
        }
        None => run_experiment_inner(cfg),
    }
}

fn run_experiment_inner(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let out_dir = PathBuf::from(&cfg.run.out_dir);
    fs::create_dir_all(&out_dir)?;
    fs::create_dir_all(out_dir.join("checkpoints"))?;
    match pipeline(cfg, &out_dir) {
        Ok(artifacts) => Ok(artifacts),
        Err(e) => {
            let _ = fs::write(out_dir.join("FAILED"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn pipeline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let master_seed = cfg.run.seed;

    // snapshot first so failed runs are reproducible too
    let snapshot = cfg.to_toml()?;
    let config_sha256 = sha256_hex(&snapshot);
    write_file(out_dir, "config_snapshot.toml", &snapshot)?;
    write_file(
        out_dir,
        "manifest.txt",
        &format!("config_sha256={config_sha256}\nseed={master_seed}\n"),
    )?;
    // timestamps live only in the sidecar log, never in the artifacts
    let _ = fs::write(
        out_dir.join("run.log"),
        format!("started_unix={}\n", std::time::UNIX_EPOCH.elapsed().map(|d| d.as_secs()).unwrap_or(0)),
    );

    let graph = Stage::wrap("graph", cfg.graph.build())?;
    if !graph.is_strongly_connected() {
        return Err(SmlError::InvalidGraph("[graph] not strongly connected with a self-loop".into()));
    }
    let matrix = Stage::wrap("graph", build_averaging_matrix(&graph))?;
    let perron =
        Stage::wrap("graph", matrix.perron_eigenvector(DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITERS))?;
    write_file(out_dir, "matrix.csv", &matrix.to_csv())?;
    let perron_csv: String =
        perron.iter().map(|p| format!("{p}\n")).collect();
    write_file(out_dir, "perron.csv", &perron_csv)?;

    let data = Stage::wrap("data", prepare_data(cfg, master_seed))?;

    let (nets, traces) = Stage::wrap("training", train_agents(cfg, &data, master_seed))?;
    write_file(out_dir, "risk_trace.csv", &emit_risk_curves(&traces, &perron)?)?;
    for (a, net) in nets.iter().enumerate() {
        write_file(out_dir, &format!("checkpoints/agent_{a}.csv"), &net.to_checkpoint())?;
    }

    let ensemble = Stage::wrap("ensemble", AgentEnsemble::new(nets, &data.training))?;
    let means_csv: String = ensemble
        .training_means()
        .iter()
        .enumerate()
        .map(|(a, m)| format!("{a},{}\n", fmt(*m)))
        .collect();
    write_file(out_dir, "training_means.csv", &format!("agent,training_mean\n{means_csv}"))?;

    let means = Stage::wrap("bounds", class_means(&ensemble, &data.holdouts, &perron))?;
    let check = consistency_condition(&means);
    let report = Stage::wrap("bounds", evaluate_bounds(&ensemble, &data, &perron))?;
    write_file(out_dir, "bounds.csv", &report.to_csv())?;
    write_file(out_dir, "bounds_report.txt", &report.to_text(&means, &check))?;

    let run = Stage::wrap(
        "prediction",
        run_prediction(
            &ensemble,
            &matrix,
            cfg.diffusion.delta,
            &data.streams,
            &vec![cfg.diffusion.lambda0; cfg.graph.num_agents],
        ),
    )?;
    write_file(out_dir, "lambda_trajectory.csv", &lambda_csv(&run, &data.schedule))?;

    let window = accuracy_window(
        cfg.prediction.steps,
        cfg.prediction.switch_at,
        ACCURACY_WARMUP,
        ACCURACY_SETTLE,
    );
    let k = cfg.graph.num_agents;
    let per_agent = |f: &dyn Fn(usize, usize) -> Label| -> Vec<f64> {
        (0..k)
            .map(|a| {
                let decisions: Vec<Label> =
                    (0..cfg.prediction.steps).map(|t| f(t, a)).collect();
                windowed_accuracy(&decisions, &data.schedule, &window)
            })
            .collect()
    };
    let sml_accuracy = per_agent(&|t, a| run.decisions[t][a]);
    let standalone_accuracy = per_agent(&|t, a| decide(run.statistics[t][a]));

    let summary = RunSummary {
        config_sha256,
        seed: master_seed,
        perron,
        final_risks: traces.iter().map(|t| *t.last().unwrap()).collect(),
        sml_accuracy,
        standalone_accuracy,
        consistency: check,
        class_means: means,
        probability_bound: report.probability,
    };
    write_file(out_dir, "accuracy.csv", &accuracy_csv(&summary))?;
    Ok(RunArtifacts { out_dir: out_dir.to_path_buf(), summary })
}

/// Re-run a finished experiment from its snapshot, after verifying the
/// recorded hash, into `out_dir`. Produces byte-identical artifacts.
pub fn replay(run_dir: &Path, out_dir: &Path, workers: Option<usize>) -> Result<RunArtifacts> {
    let snapshot = fs::read_to_string(run_dir.join("config_snapshot.toml"))
        .map_err(|e| SmlError::Config(format!("cannot read snapshot: {e}")))?;
    let manifest = fs::read_to_string(run_dir.join("manifest.txt"))
        .map_err(|e| SmlError::Config(format!("cannot read manifest: {e}")))?;
    let recorded = manifest
        .lines()
        .find_map(|l| l.strip_prefix("config_sha256="))
        .ok_or_else(|| SmlError::Config("manifest missing config_sha256".into()))?
        .to_string();
    let actual = sha256_hex(&snapshot);
    if recorded != actual {
        return Err(SmlError::HashMismatch { recorded, actual });
    }
    let mut cfg = ExperimentConfig::from_toml(&snapshot)?;
    cfg.run.out_dir = out_dir.to_string_lossy().into_owned();
    run_experiment(&cfg, workers)
}

/// Bounds-only evaluation: rebuild the data and load the trained checkpoints
/// from a finished run, then recompute the bound report.
pub fn bounds_from_run(run_dir: &Path) -> Result<BoundReport> {
    let snapshot = fs::read_to_string(run_dir.join("config_snapshot.toml"))
        .map_err(|e| SmlError::Config(format!("cannot read snapshot: {e}")))?;
    let cfg = ExperimentConfig::from_toml(&snapshot)?;
    let data = prepare_data(&cfg, cfg.run.seed)?;
    let nets = (0..cfg.graph.num_agents)
        .map(|a| {
            let text = fs::read_to_string(run_dir.join(format!("checkpoints/agent_{a}.csv")))
                .map_err(|e| SmlError::Data(format!("cannot read checkpoint {a}: {e}")))?;
            FeedforwardNet::from_checkpoint(&text)
        })
        .collect::<Result<Vec<_>>>()?;
    let ensemble = AgentEnsemble::new(nets, &data.training)?;
    let matrix = build_averaging_matrix(&cfg.graph.build()?)?;
    let perron = matrix.perron_eigenvector(DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITERS)?;
    evaluate_bounds(&ensemble, &data, &perron)
}
