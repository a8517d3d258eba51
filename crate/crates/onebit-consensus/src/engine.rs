//! Simulation orchestration: single runs under fixed or Markovian switching
//! topologies, replication ensembles, and the metric streams used by the
//! rate analysis.
//!
//! Reproducibility contract: every replication owns one ChaCha substream per
//! directed edge of the union graph plus one substream for the Markov chain.
//! The chain stream is separate so an h = 1 switching run consumes exactly
//! the same edge-noise variates as the fixed run and produces a bit-identical
//! trace.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::channel::{transmit, LinkConfig};
use crate::error::{Error, Result};
use crate::linsys::{GainPair, LinearSystem, SystemKind};
use crate::protocol::{agent_step, ControllerConfig, EstimatorState};
use crate::topology::{
    algebraic_connectivity, build_selection, is_connected, orthogonal_diagonalizer, Graph,
    MarkovTopologyProcess, SelectionMatrices,
};

/// Slack on the Lemma-2 bound, absorbing floating-point roundoff and the
/// paper's 4-decimal gain rounding.
pub const BOUND_TOL: f64 = 1e-9;

/// Multiplicative spacing of trace records after the first 100 steps.
pub const DECIMATION_FACTOR: f64 = 1.3;

/// Fixed graph or Markovian switching process.
#[derive(Debug, Clone)]
pub enum TopologySet {
    Fixed(Graph),
    Switching(MarkovTopologyProcess),
}

impl TopologySet {
    pub fn union(&self) -> &Graph {
        match self {
            TopologySet::Fixed(g) => g,
            TopologySet::Switching(p) => &p.union,
        }
    }

    /// Laplacian entering the Lyapunov analysis: L in the fixed case, the
    /// expected Laplacian in the switching case.
    pub fn analysis_laplacian(&self) -> DMatrix<f64> {
        match self {
            TopologySet::Fixed(g) => g.laplacian(),
            TopologySet::Switching(p) => p.expected_laplacian(),
        }
    }
}

/// Full configuration for one simulation campaign.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub sys: LinearSystem,
    pub gains: GainPair,
    pub topo: TopologySet,
    pub link: LinkConfig,
    pub beta: f64,
    pub gamma: f64,
    pub m: f64,
    pub t0: u64,
    pub x0: Vec<DVector<f64>>,
    pub zhat0: DVector<f64>,
    pub horizon: u64,
    pub seed: u64,
    pub replications: usize,
}

impl SimConfig {
    /// Checks every Algorithm-1 Initiation constraint plus structural
    /// consistency; call before any run.
    pub fn validate(&self) -> Result<()> {
        if self.sys.kind != SystemKind::Discrete {
            return Err(Error::Validation(
                "simulation requires a discrete-time system; discretize first".into(),
            ));
        }
        let n = self.sys.dim();
        let union = self.topo.union();
        let big_n = union.agent_count();
        let d = union.total_degree();
        if self.x0.len() != big_n {
            return Err(Error::Validation(format!(
                "{} initial states for {big_n} agents",
                self.x0.len()
            )));
        }
        if self.gains.k1.ncols() != n || self.gains.k2.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "gains are {}-dimensional but the system is {n}-dimensional",
                self.gains.k2.ncols()
            )));
        }
        if self.zhat0.nrows() != d || self.link.thresholds.nrows() != d {
            return Err(Error::Validation(format!(
                "union graph has {d} directed edges but zhat0 has {} and thresholds {}",
                self.zhat0.nrows(),
                self.link.thresholds.nrows()
            )));
        }
        if !(self.m > 0.0) {
            return Err(Error::NonPositiveRadius(self.m));
        }
        for (i, x) in self.x0.iter().enumerate() {
            if x.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "agent {i} initial state has dimension {}",
                    x.nrows()
                )));
            }
            let z = (&self.gains.k2 * x)[(0, 0)];
            if z.abs() > self.m {
                return Err(Error::Validation(format!(
                    "Algorithm-1 Initiation violated: |K2 x_{i}^0| = {:.6} > M = {}",
                    z.abs(),
                    self.m
                )));
            }
        }
        if self.zhat0.iter().any(|v| v.abs() > self.m) {
            return Err(Error::Validation(format!(
                "Algorithm-1 Initiation violated: initial estimate exceeds M = {}",
                self.m
            )));
        }
        // Delegated checks: gamma > 0, t0 > gamma d_max - 1.
        ControllerConfig::new(
            self.gains.k1.clone(),
            self.gains.k2.clone(),
            self.gamma,
            self.t0,
            union.max_degree(),
        )?;
        if !(self.beta > 0.0) {
            return Err(Error::Validation(format!(
                "estimation step coefficient beta must be positive, got {}",
                self.beta
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::Validation("at least one replication required".into()));
        }
        match &self.topo {
            TopologySet::Fixed(g) => {
                if !is_connected(g)? {
                    return Err(Error::NotConnected(algebraic_connectivity(&g.laplacian())));
                }
            }
            TopologySet::Switching(_) => {
                // Joint connectivity was enforced by MarkovTopologyProcess::new.
            }
        }
        Ok(())
    }

    /// Default Lemma-2-compliant offset for this configuration.
    pub fn default_t0(gamma: f64, topo: &TopologySet) -> u64 {
        ControllerConfig::default_t0(gamma, topo.union().max_degree())
    }
}

/// One decimated trace record.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Simulation step counter k = 1, 2, ... (paper time is t0 + k).
    pub step: u64,
    /// Active topology index m(t); 0 in the fixed case.
    pub m: usize,
    /// Stacked agent states at the end of the step.
    pub x: Vec<DVector<f64>>,
    pub z_hat: DVector<f64>,
    /// Per-agent ||x_i - x_bar||^2.
    pub cons_err: DVector<f64>,
    pub v_sample: f64,
    pub r_sample: f64,
}

/// Decimated metric stream of a single replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    /// Largest |K2 x_i(t)| observed anywhere in the run.
    pub max_compressed: f64,
}

impl Trace {
    pub fn steps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.step).collect()
    }

    /// Order-sensitive checksum over the exact bit patterns of the recorded
    /// states and estimates (FNV-1a over f64 bits).
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for rec in &self.records {
            eat(rec.step);
            eat(rec.m as u64);
            for x in &rec.x {
                for v in x.iter() {
                    eat(v.to_bits());
                }
            }
            for v in rec.z_hat.iter() {
                eat(v.to_bits());
            }
        }
        h
    }
}

/// Pointwise replication averages of the trace metrics.
#[derive(Debug, Clone)]
pub struct EnsembleMetrics {
    pub steps: Vec<u64>,
    /// records x N matrix of mean per-agent consensus MSE.
    pub cons_err_mean: DMatrix<f64>,
    /// stderr of the same entries.
    pub cons_err_stderr: DMatrix<f64>,
    pub v_mean: Vec<f64>,
    pub v_stderr: Vec<f64>,
    pub r_mean: Vec<f64>,
    pub r_stderr: Vec<f64>,
    pub replications: usize,
}

impl EnsembleMetrics {
    /// Max over agents of the ensemble per-agent consensus MSE, per record.
    pub fn max_consensus_mse(&self) -> Vec<f64> {
        (0..self.steps.len())
            .map(|r| self.cons_err_mean.row(r).max())
            .collect()
    }
}

/// Per-agent squared deviations from the instantaneous average and their max.
pub fn consensus_error(x: &[DVector<f64>]) -> (DVector<f64>, f64) {
    let big_n = x.len();
    if big_n == 0 {
        return (DVector::zeros(0), 0.0);
    }
    let mut mean = x[0].clone();
    for xi in &x[1..] {
        mean += xi;
    }
    mean /= big_n as f64;
    let per = DVector::from_fn(big_n, |i, _| (&x[i] - &mean).norm_squared());
    let max = per.max();
    (per, max)
}

/// Lyapunov samples of Eqs. (10)-(11):
/// V = ||(T_G^-1 (x) K2) delta||^2 with delta the stacked deviations, and
/// R = ||z_hat - (Q (x) K2) x||^2.
pub fn lyapunov_samples(
    x: &[DVector<f64>],
    z_hat: &DVector<f64>,
    t_g: &DMatrix<f64>,
    k2: &nalgebra::RowDVector<f64>,
    sel: &SelectionMatrices,
) -> Result<(f64, f64)> {
    let big_n = x.len();
    if t_g.nrows() != big_n {
        return Err(Error::DimensionMismatch(format!(
            "T_G is {}x{} for {big_n} agents",
            t_g.nrows(),
            t_g.ncols()
        )));
    }
    let z: DVector<f64> = DVector::from_fn(big_n, |i, _| (k2 * &x[i])[(0, 0)]);
    let z_mean = z.mean();
    // (I_N (x) K2)(J_N (x) I_n) x = z - z_bar agentwise; T_G^-1 = T_G^T.
    let y = z.map(|v| v - z_mean);
    let v_sample = (t_g.transpose() * &y).norm_squared();

    let d = z_hat.nrows();
    if sel.edge_order.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {d} entries for {} edges",
            sel.edge_order.len()
        )));
    }
    let mut r_sample = 0.0;
    for (s, &(_, j)) in sel.edge_order.iter().enumerate() {
        let e = z_hat[s] - z[j];
        r_sample += e * e;
    }
    Ok((v_sample, r_sample))
}

/// Record schedule: every step up to 100, then multiplicatively spaced.
pub fn record_schedule(horizon: u64) -> Vec<u64> {
    let mut steps = Vec::new();
    let mut k = 1u64;
    while k <= horizon {
        steps.push(k);
        k = if k < 100 {
            k + 1
        } else {
            (k as f64 * DECIMATION_FACTOR).ceil() as u64
        };
    }
    steps
}

fn edge_rng(seed: u64, rep: usize, d: usize, edge: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((rep as u64) * (d as u64 + 1) + edge as u64 + 1);
    rng
}

fn chain_rng(seed: u64, rep: usize, d: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream((rep as u64) * (d as u64 + 1));
    rng
}

fn run_single(config: &SimConfig, rep: usize) -> Result<Trace> {
    let union = config.topo.union();
    let big_n = union.agent_count();
    let d = union.total_degree();
    let edges = union.edges();

    let (selections, process): (Vec<SelectionMatrices>, Option<&MarkovTopologyProcess>) =
        match &config.topo {
            TopologySet::Fixed(g) => (vec![build_selection(g, None)?], None),
            TopologySet::Switching(p) => (p.selections.clone(), Some(p)),
        };
    let t_g = orthogonal_diagonalizer(&config.topo.analysis_laplacian())?;

    let a = &config.sys.a;
    let b = &config.sys.b;
    let k1 = &config.gains.k1;
    let k2 = &config.gains.k2;

    let mut est = EstimatorState::new(config.zhat0.clone(), config.m, config.beta)?;
    let mut x = config.x0.clone();
    let mut max_compressed = x
        .iter()
        .map(|xi| (k2 * xi)[(0, 0)].abs())
        .fold(0.0f64, f64::max);

    let mut edge_rngs: Vec<ChaCha12Rng> = (0..d)
        .map(|s| edge_rng(config.seed, rep, d, s))
        .collect();
    let mut m_rng = chain_rng(config.seed, rep, d);
    let mut m_state = 0usize;

    let schedule = record_schedule(config.horizon);
    let mut records = Vec::with_capacity(schedule.len());
    let mut next_record = 0usize;

    let mut bits = DVector::from_element(d, f64::NAN);
    let mut z_agent = vec![0.0f64; big_n];
    let mut u = vec![0.0f64; big_n];

    for k in 1..=config.horizon {
        let t = config.t0 + k;
        let m_idx = match process {
            None => 0,
            Some(p) => {
                m_state = p.sample_chain(m_state, &mut m_rng);
                m_state
            }
        };
        let sel = &selections[m_idx];

        for (i, xi) in x.iter().enumerate() {
            z_agent[i] = (k2 * xi)[(0, 0)];
        }
        for (s, &(_, j)) in edges.iter().enumerate() {
            bits[s] = if sel.p_active[s] > 0.5 {
                transmit(z_agent[j], s, &config.link, &mut edge_rngs[s])
            } else {
                f64::NAN
            };
        }
        est.step(&bits, &sel.p_active, &config.link, t)?;

        for (i, xi) in x.iter().enumerate() {
            let mut consensus = 0.0;
            for (s, &(lst, _)) in edges.iter().enumerate() {
                if lst == i && sel.p_active[s] > 0.5 {
                    consensus += est.z_hat[s] - z_agent[i];
                }
            }
            u[i] = (k1 * xi)[(0, 0)] + config.gamma / (t as f64 + 1.0) * consensus;
        }
        for i in 0..big_n {
            x[i] = agent_step(&x[i], u[i], a, b)?;
            let z_new = (k2 * &x[i])[(0, 0)];
            max_compressed = max_compressed.max(z_new.abs());
            if z_new.abs() > config.m + BOUND_TOL {
                return Err(Error::BoundViolated {
                    agent: i,
                    t,
                    value: z_new.abs(),
                    m: config.m,
                });
            }
        }

        if next_record < schedule.len() && k == schedule[next_record] {
            let (cons_err, _) = consensus_error(&x);
            let (v_sample, r_sample) =
                lyapunov_samples(&x, &est.z_hat, &t_g, k2, &selections[0])?;
            records.push(TraceRecord {
                step: k,
                m: m_idx,
                x: x.clone(),
                z_hat: est.z_hat.clone(),
                cons_err,
                v_sample,
                r_sample,
            });
            next_record += 1;
        }
    }

    Ok(Trace {
        records,
        max_compressed,
    })
}

/// One replication under a fixed connected topology.
pub fn run_fixed(config: &SimConfig) -> Result<Trace> {
    if !matches!(config.topo, TopologySet::Fixed(_)) {
        return Err(Error::Validation(
            "run_fixed requires a fixed topology; use run_switching".into(),
        ));
    }
    config.validate()?;
    run_single(config, 0)
}

/// One replication under Markovian switching.
pub fn run_switching(config: &SimConfig) -> Result<Trace> {
    if !matches!(config.topo, TopologySet::Switching(_)) {
        return Err(Error::Validation(
            "run_switching requires a switching topology; use run_fixed".into(),
        ));
    }
    config.validate()?;
    run_single(config, 0)
}

/// One replication, auto-detecting the topology kind (used by replications
/// and the CLI).
pub fn run_auto(config: &SimConfig, rep: usize) -> Result<Trace> {
    config.validate()?;
    run_single(config, rep)
}

/// Independent replications on disjoint substreams, averaged pointwise.
/// Replications execute in parallel; aggregation sums in replication order,
/// so the result is bit-stable across thread schedules.
pub fn run_replications(config: &SimConfig) -> Result<EnsembleMetrics> {
    config.validate()?;
    let traces: Vec<Trace> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_single(config, rep))
        .collect::<Result<Vec<_>>>()?;

    let reps = traces.len();
    let steps = traces[0].steps();
    let rows = steps.len();
    let big_n = config.topo.union().agent_count();
    for tr in &traces {
        if tr.steps() != steps {
            return Err(Error::Validation(
                "replications disagree on the record schedule".into(),
            ));
        }
    }

    let mut ce_sum = DMatrix::zeros(rows, big_n);
    let mut ce_sq = DMatrix::zeros(rows, big_n);
    let mut v_sum = vec![0.0; rows];
    let mut v_sq = vec![0.0; rows];
    let mut r_sum = vec![0.0; rows];
    let mut r_sq = vec![0.0; rows];
    for tr in &traces {
        for (r, rec) in tr.records.iter().enumerate() {
            for i in 0..big_n {
                ce_sum[(r, i)] += rec.cons_err[i];
                ce_sq[(r, i)] += rec.cons_err[i] * rec.cons_err[i];
            }
            v_sum[r] += rec.v_sample;
            v_sq[r] += rec.v_sample * rec.v_sample;
            r_sum[r] += rec.r_sample;
            r_sq[r] += rec.r_sample * rec.r_sample;
        }
    }
    let nf = reps as f64;
    let stderr = |sum: f64, sq: f64| {
        if reps < 2 {
            0.0
        } else {
            let var = (sq - sum * sum / nf).max(0.0) / (nf - 1.0);
            (var / nf).sqrt()
        }
    };
    let cons_err_mean = ce_sum.map(|v| v / nf);
    let cons_err_stderr = DMatrix::from_fn(rows, big_n, |r, i| stderr(ce_sum[(r, i)], ce_sq[(r, i)]));
    Ok(EnsembleMetrics {
        steps,
        cons_err_mean,
        cons_err_stderr,
        v_mean: v_sum.iter().map(|s| s / nf).collect(),
        v_stderr: v_sum
            .iter()
            .zip(&v_sq)
            .map(|(&s, &q)| stderr(s, q))
            .collect(),
        r_mean: r_sum.iter().map(|s| s / nf).collect(),
        r_stderr: r_sum
            .iter()
            .zip(&r_sq)
            .map(|(&s, &q)| stderr(s, q))
            .collect(),
        replications: reps,
    })
}
