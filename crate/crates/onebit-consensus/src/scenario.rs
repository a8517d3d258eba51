//! Scenario files: the JSON schema describing a complete experiment, its
//! validation against every Algorithm-1 assumption, and the conversion into
//! an engine `SimConfig`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::channel::{LinkConfig, NoiseModel};
use crate::engine::{SimConfig, TopologySet};
use crate::error::{Error, Result};
use crate::linsys::{
    check_compression_stability, gain_identity_residuals, infer_compression_coefficients,
    synthesize_gains, to_brunovsky, zoh_discretize, Frame, GainPair, LinearSystem, SystemKind,
};
use crate::topology::{Graph, MarkovTopologyProcess};

/// Tolerance on the Assumption-4 identities for published (rounded) gains.
pub const PUBLISHED_GAIN_TOL: f64 = 5e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixPairSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub sampling_period: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    #[serde(default)]
    pub continuous: Option<MatrixPairSpec>,
    #[serde(default)]
    pub discrete: Option<MatrixPairSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainsSpec {
    pub k1: Vec<f64>,
    pub k2: Vec<f64>,
    /// Canonical-frame compression coefficients; inferred when omitted.
    #[serde(default)]
    pub b: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologySpec {
    pub agents: usize,
    /// Fixed topology: directed (listener, source) pairs.
    #[serde(default)]
    pub edges: Option<Vec<(usize, usize)>>,
    /// Switching topology: one edge list per sub-graph.
    #[serde(default)]
    pub graphs: Option<Vec<Vec<(usize, usize)>>>,
    #[serde(default)]
    pub transition: Option<Vec<Vec<f64>>>,
    /// When true, each listed edge also adds its reverse.
    #[serde(default)]
    pub symmetrize: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub default: f64,
    /// Per-edge overrides as (listener, source, threshold).
    #[serde(default)]
    pub overrides: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Zhat0Spec {
    Scalar(f64),
    Vector(Vec<f64>),
}

/// On-disk scenario schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub units: Option<String>,
    pub system: SystemSpec,
    #[serde(default)]
    pub gains: Option<GainsSpec>,
    #[serde(default)]
    pub compression: Option<CompressionSpec>,
    pub topology: TopologySpec,
    pub noise: NoiseSpec,
    pub thresholds: ThresholdSpec,
    pub beta: f64,
    pub gamma: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(default)]
    pub t0: Option<u64>,
    pub x0: Vec<Vec<f64>>,
    #[serde(default)]
    pub zhat0: Option<Zhat0Spec>,
    pub horizon: u64,
    pub seed: u64,
    pub replications: usize,
}

/// Fully validated scenario: a ready SimConfig plus the metadata and the
/// continuous-time system when one was declared.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub units: Option<String>,
    pub config: SimConfig,
    pub continuous: Option<(LinearSystem, f64)>,
}

fn matrix_from(spec: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let rows = spec.len();
    if rows == 0 {
        return Err(Error::Validation(format!("{what} matrix is empty")));
    }
    let cols = spec[0].len();
    if spec.iter().any(|r| r.len() != cols) {
        return Err(Error::Validation(format!("{what} matrix rows differ in length")));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| spec[i][j]))
}

fn directed_edges(list: &[(usize, usize)], symmetrize: bool) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(list.len() * 2);
    for &(i, j) in list {
        edges.push((i, j));
        if symmetrize {
            edges.push((j, i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Resolve and validate every field into a runnable scenario.
    pub fn build(&self) -> Result<Scenario> {
        let sys = match (&self.system.discrete, &self.system.continuous) {
            (Some(d), _) => LinearSystem::new(
                matrix_from(&d.a, "discrete A")?,
                DVector::from_row_slice(&d.b),
                SystemKind::Discrete,
            )?,
            (None, Some(c)) => {
                let period = c.sampling_period.ok_or_else(|| {
                    Error::Validation(
                        "continuous system block requires sampling_period for ZOH".into(),
                    )
                })?;
                let cont = LinearSystem::new(
                    matrix_from(&c.a, "continuous A")?,
                    DVector::from_row_slice(&c.b),
                    SystemKind::Continuous,
                )?;
                zoh_discretize(&cont, period)?
            }
            (None, None) => {
                return Err(Error::Validation(
                    "system block must declare a discrete or continuous pair".into(),
                ))
            }
        };
        let n = sys.dim();

        let gains = match (&self.gains, &self.compression) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Validation(
                    "exactly one of 'gains' (published) or 'compression' (synthesis) required"
                        .into(),
                ))
            }
            (Some(g), None) => {
                if g.k1.len() != n || g.k2.len() != n {
                    return Err(Error::Validation(format!(
                        "published gains must have {n} entries"
                    )));
                }
                let k1 = RowDVector::from_row_slice(&g.k1);
                let k2 = RowDVector::from_row_slice(&g.k2);
                let (k2b, fixed) = gain_identity_residuals(&k1, &k2, &sys.a, &sys.b);
                if k2b > PUBLISHED_GAIN_TOL || fixed > PUBLISHED_GAIN_TOL {
                    return Err(Error::IdentityViolation {
                        k2b_residual: k2b,
                        fixed_point_residual: fixed,
                        tolerance: PUBLISHED_GAIN_TOL,
                    });
                }
                let b = match &g.b {
                    Some(b) => b.clone(),
                    None => {
                        let canon = to_brunovsky(&sys)?;
                        infer_compression_coefficients(&canon, &k2)?
                    }
                };
                let stab = check_compression_stability(&b);
                if !stab.stable {
                    return Err(Error::UnstableCompression(
                        stab.roots.iter().map(|r| r.norm()).collect(),
                    ));
                }
                GainPair {
                    k1,
                    k2,
                    b,
                    frame: Frame::Original,
                }
            }
            (None, Some(c)) => {
                let canon = to_brunovsky(&sys)?;
                synthesize_gains(&canon, &c.b)?.original
            }
        };

        let big_n = self.topology.agents;
        let topo = match (&self.topology.edges, &self.topology.graphs) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Validation(
                    "topology must declare either 'edges' (fixed) or 'graphs' (switching)".into(),
                ))
            }
            (Some(edges), None) => {
                if self.topology.transition.is_some() {
                    return Err(Error::Validation(
                        "fixed topology must not carry a transition matrix".into(),
                    ));
                }
                TopologySet::Fixed(Graph::new(
                    big_n,
                    directed_edges(edges, self.topology.symmetrize),
                )?)
            }
            (None, Some(lists)) => {
                let transition = self.topology.transition.as_ref().ok_or_else(|| {
                    Error::Validation("switching topology requires a transition matrix".into())
                })?;
                let graphs = lists
                    .iter()
                    .map(|l| Graph::new(big_n, directed_edges(l, self.topology.symmetrize)))
                    .collect::<Result<Vec<_>>>()?;
                let p = matrix_from(transition, "transition")?;
                TopologySet::Switching(MarkovTopologyProcess::new(graphs, p)?)
            }
        };

        let union = topo.union().clone();
        let d = union.total_degree();
        let noise = NoiseModel::new(self.noise.sigma)?;
        let mut thresholds = DVector::from_element(d, self.thresholds.default);
        for &(i, j, c) in &self.thresholds.overrides {
            match union.edges().binary_search(&(i, j)) {
                Ok(s) => thresholds[s] = c,
                Err(_) => return Err(Error::EdgeNotInUnion(i, j)),
            }
        }
        let link = LinkConfig::new(thresholds, noise)?;

        let x0 = self
            .x0
            .iter()
            .map(|row| {
                if row.len() != n {
                    Err(Error::Validation(format!(
                        "initial state rows must have {n} entries"
                    )))
                } else {
                    Ok(DVector::from_row_slice(row))
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let zhat0 = match &self.zhat0 {
            None => DVector::zeros(d),
            Some(Zhat0Spec::Scalar(v)) => DVector::from_element(d, *v),
            Some(Zhat0Spec::Vector(v)) => {
                if v.len() != d {
                    return Err(Error::Validation(format!(
                        "zhat0 must have {d} entries (one per directed union edge)"
                    )));
                }
                DVector::from_row_slice(v)
            }
        };

        let t0 = self
            .t0
            .unwrap_or_else(|| SimConfig::default_t0(self.gamma, &topo));

        let config = SimConfig {
            sys,
            gains,
            topo,
            link,
            beta: self.beta,
            gamma: self.gamma,
            m: self.m,
            t0,
            x0,
            zhat0,
            horizon: self.horizon,
            seed: self.seed,
            replications: self.replications,
        };
        config.validate()?;

        let continuous = match &self.system.continuous {
            Some(c) if self.system.discrete.is_none() => Some((
                LinearSystem::new(
                    matrix_from(&c.a, "continuous A")?,
                    DVector::from_row_slice(&c.b),
                    SystemKind::Continuous,
                )?,
                c.sampling_period.unwrap(),
            )),
            Some(c) => Some((
                LinearSystem::new(
                    matrix_from(&c.a, "continuous A")?,
                    DVector::from_row_slice(&c.b),
                    SystemKind::Continuous,
                )?,
                c.sampling_period.ok_or_else(|| {
                    Error::Validation("continuous block requires sampling_period".into())
                })?,
            )),
            None => None,
        };

        Ok(Scenario {
            name: self.name.clone(),
            description: self.description.clone(),
            units: self.units.clone(),
            config,
            continuous,
        })
    }
}

/// Read, parse and validate a scenario file.
pub fn load_scenario<P: AsRef<Path>>(path: P) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    ScenarioFile::parse(&text)?.build()
}
