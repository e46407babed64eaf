//! Agent graphs, combination matrices and the Perron eigenvector.
//!
//! The network is a directed graph over `K` agents. Entry `(l, k)` of the
//! adjacency means agent `k` listens to agent `l` (`l` is in the neighborhood
//! `N_k`). The averaging rule turns the graph into a left-stochastic
//! combination matrix whose columns sum to one; its Perron eigenvector
//! weights agents in every network average.

use crate::error::{Result, SmlError};

/// Directed agent graph with explicit self-loop flags on the diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    num_agents: usize,
    /// Row-major K x K; `adj[l * K + k]` means `l` is in `N_k`.
    adj: Vec<bool>,
}

impl AgentGraph {
    /// Build from `(l, k)` listen edges plus the agents carrying self-loops.
    pub fn new(num_agents: usize, edges: &[(usize, usize)], self_loops: &[usize]) -> Result<Self> {
        if num_agents == 0 {
            return Err(SmlError::InvalidGraph("zero agents".into()));
        }
        let k = num_agents;
        let mut adj = vec![false; k * k];
        for &(l, c) in edges {
            if l >= k || c >= k {
                return Err(SmlError::InvalidGraph(format!(
                    "edge ({l}, {c}) out of range for K = {k}"
                )));
            }
            adj[l * k + c] = true;
        }
        for &a in self_loops {
            if a >= k {
                return Err(SmlError::InvalidGraph(format!(
                    "self-loop on agent {a} out of range for K = {k}"
                )));
            }
            adj[a * k + a] = true;
        }
        Ok(Self { num_agents, adj })
    }

    /// Fully connected graph with self-loops on every agent.
    pub fn fully_connected(num_agents: usize) -> Self {
        Self {
            num_agents,
            adj: vec![true; num_agents * num_agents],
        }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// True iff `l` is in the neighborhood of `k`.
    pub fn listens_to(&self, k: usize, l: usize) -> bool {
        self.adj[l * self.num_agents + k]
    }

    /// Agents in `N_k`, ascending.
    pub fn neighborhood(&self, k: usize) -> Vec<usize> {
        (0..self.num_agents).filter(|&l| self.listens_to(k, l)).collect()
    }

    pub fn has_self_loop(&self, k: usize) -> bool {
        self.adj[k * self.num_agents + k]
    }

    /// Strong connectivity plus at least one self-loop (primitivity for
    /// Perron theory): every agent reaches every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        let k = self.num_agents;
        if !(0..k).any(|a| self.has_self_loop(a)) {
            return false;
        }
        let reach = |forward: bool| -> usize {
            let mut seen = vec![false; k];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(u) = stack.pop() {
                for v in 0..k {
                    let edge = if forward {
                        self.adj[u * k + v]
                    } else {
                        self.adj[v * k + u]
                    };
                    if edge && !seen[v] {
                        seen[v] = true;
                        count += 1;
                        stack.push(v);
                    }
                }
            }
            count
        };
        reach(true) == k && reach(false) == k
    }
}

/// Left-stochastic combination matrix; `perron` is filled in lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    num_agents: usize,
    /// Row-major K x K; `weights[l * K + k]` is `a_{lk}`.
    weights: Vec<f64>,
}

pub const DEFAULT_PERRON_TOL: f64 = 1e-12;
pub const DEFAULT_PERRON_MAX_ITERS: usize = 1_000_000;

impl CombinationMatrix {
    pub fn from_weights(num_agents: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != num_agents * num_agents {
            return Err(SmlError::Shape(format!(
                "expected {0}x{0} weights, got {1} entries",
                num_agents,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SmlError::InvalidGraph("weights must be finite and nonnegative".into()));
        }
        Ok(Self { num_agents, weights })
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// `a_{lk}`: weight agent `k` applies to neighbor `l`.
    pub fn weight(&self, l: usize, k: usize) -> f64 {
        self.weights[l * self.num_agents + k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Matrix-vector product `(A v)_l = sum_k a_{lk} v_k`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let k = self.num_agents;
        (0..k)
            .map(|l| (0..k).map(|c| self.weights[l * k + c] * v[c]).sum())
            .collect()
    }

    /// Neighborhood-weighted combine used by the diffusion recursion:
    /// `out_k = sum_l a_{lk} v_l`.
    pub fn combine(&self, v: &[f64]) -> Vec<f64> {
        let k = self.num_agents;
        (0..k)
            .map(|c| (0..k).map(|l| self.weights[l * k + c] * v[l]).sum())
            .collect()
    }

    /// Columns sum to one within `tol`.
    pub fn is_left_stochastic(&self, tol: f64) -> bool {
        let k = self.num_agents;
        (0..k).all(|c| {
            let s: f64 = (0..k).map(|l| self.weights[l * k + c]).sum();
            (s - 1.0).abs() <= tol
        })
    }

    /// Perron eigenvector by power iteration with per-step sum normalization.
    /// Returns pi with `A pi = pi` within `tol` (inf-norm), positive entries
    /// summing to one.
    pub fn perron_eigenvector(&self, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
        let k = self.num_agents;
        let mut pi = vec![1.0 / k as f64; k];
        let mut residual = f64::INFINITY;
        for _ in 0..max_iters {
            let next = self.apply(&pi);
            let sum: f64 = next.iter().sum();
            let next: Vec<f64> = next.iter().map(|x| x / sum).collect();
            let again = self.apply(&next);
            residual = next
                .iter()
                .zip(&again)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            pi = next;
            if residual < tol {
                let sum: f64 = pi.iter().sum();
                for x in pi.iter_mut() {
                    *x /= sum;
                }
                return Ok(pi);
            }
        }
        Err(SmlError::ConvergenceFailure { max_iters, residual })
    }

    /// Row-major CSV, full precision.
    pub fn to_csv(&self) -> String {
        let k = self.num_agents;
        let mut out = String::new();
        for l in 0..k {
            let row: Vec<String> = (0..k).map(|c| format!("{}", self.weights[l * k + c])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Uniform averaging rule: `a_{lk} = 1/|N_k|` for `l` in `N_k`, zero otherwise.
pub fn build_averaging_matrix(graph: &AgentGraph) -> Result<CombinationMatrix> {
    let k = graph.num_agents();
    let mut weights = vec![0.0; k * k];
    for c in 0..k {
        let nbrs = graph.neighborhood(c);
        if nbrs.is_empty() {
            return Err(SmlError::EmptyNeighborhood { agent: c });
        }
        let w = 1.0 / nbrs.len() as f64;
        for l in nbrs {
            weights[l * k + c] = w;
        }
    }
    CombinationMatrix::from_weights(k, weights)
}

/// Seeded Erdos-Renyi directed graph, rejection-sampled until strongly
/// connected, with at least one self-loop forced. Test and experiment fuzzing
/// surface.
pub fn random_strongly_connected(num_agents: usize, edge_prob: f64, seed: u64) -> AgentGraph {
    use rand::Rng;
    let mut rng = crate::seed::rng(seed, "graph", 0);
    loop {
        let mut edges = Vec::new();
        for l in 0..num_agents {
            for c in 0..num_agents {
                if l != c && rng.gen::<f64>() < edge_prob {
                    edges.push((l, c));
                }
            }
        }
        let loop_on = rng.gen_range(0..num_agents);
        let mut self_loops = vec![loop_on];
        for a in 0..num_agents {
            if a != loop_on && rng.gen::<f64>() < 0.5 {
                self_loops.push(a);
            }
        }
        let g = AgentGraph::new(num_agents, &edges, &self_loops).expect("in-range edges");
        if g.is_strongly_connected() {
            return g;
        }
    }
}
