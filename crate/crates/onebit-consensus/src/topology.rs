//! Graphs, Laplacian spectra, the edge-selection matrices, and the Markov
//! switching process over topologies.
//!
//! Edges are directed pairs `(i, j)` meaning "agent i listens to agent j".
//! The canonical edge order is lexicographic by (listener, source), which
//! fixes the layout of the estimate vector, the bit vector, and the
//! threshold vector.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Connectivity tolerance on the algebraic connectivity lambda_2.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// Directed graph over `N` agents with the canonical (lexicographic) edge
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Build from 0-based directed edges. Rejects self-loops, duplicates and
    /// out-of-range indices; the edge list is sorted into canonical order.
    pub fn new(n: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(i, j) in &edges {
            if i >= n || j >= n {
                return Err(Error::Validation(format!(
                    "edge ({i}, {j}) out of range for {n} agents"
                )));
            }
            if i == j {
                return Err(Error::Validation(format!("self-loop at agent {i}")));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate edge".into()));
        }
        Ok(Self { n, edges })
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    /// Edges in canonical order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Total degree d = sum of in-degrees = number of directed edges.
    pub fn total_degree(&self) -> usize {
        self.edges.len()
    }

    /// In-degree (neighbor count) per agent.
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(i, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
        }
        a
    }

    /// `L = D - A_G`; row sums are zero by construction.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency();
        let deg = self.degrees();
        for i in 0..self.n {
            l[(i, i)] += deg[i] as f64;
        }
        l
    }

    /// Every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges
            .iter()
            .all(|&(i, j)| self.edges.binary_search(&(j, i)).is_ok())
    }

    fn require_symmetric(&self) -> Result<()> {
        for &(i, j) in &self.edges {
            if self.edges.binary_search(&(j, i)).is_err() {
                return Err(Error::AsymmetricGraph(i, j));
            }
        }
        Ok(())
    }

    /// Number of connected components by breadth-first search over the
    /// symmetric closure.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                for &(i, j) in &self.edges {
                    let next = if i == v {
                        j
                    } else if j == v {
                        i
                    } else {
                        continue;
                    };
                    if !seen[next] {
                        seen[next] = true;
                        stack.push(next);
                    }
                }
            }
        }
        count
    }
}

/// Sorted eigenvalues of a symmetric Laplacian.
pub fn laplacian_spectrum(g: &Graph) -> Result<Vec<f64>> {
    g.require_symmetric()?;
    Ok(symmetric_spectrum(&g.laplacian()))
}

fn symmetric_spectrum(l: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = l
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Algebraic connectivity lambda_2 of a symmetric Laplacian.
pub fn algebraic_connectivity(l: &DMatrix<f64>) -> f64 {
    let ev = symmetric_spectrum(l);
    if ev.len() < 2 {
        f64::INFINITY
    } else {
        ev[1]
    }
}

pub fn is_connected(g: &Graph) -> Result<bool> {
    let spectral = algebraic_connectivity(&g.laplacian()) > CONNECTIVITY_TOL;
    debug_assert_eq!(
        spectral,
        g.component_count() == 1,
        "spectral and BFS connectivity disagree"
    );
    let _ = laplacian_spectrum(g)?;
    Ok(spectral)
}

/// Orthogonal `T_G` diagonalizing a symmetric Laplacian, eigenvalues in
/// ascending order, with the first column fixed to `1/sqrt(N) * ones`.
///
/// The all-ones vector always lies in the null space of a Laplacian; the
/// null-space basis is rotated so it comes first.
pub fn orthogonal_diagonalizer(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if (l - l.transpose()).abs().max() > 1e-12 {
        return Err(Error::Validation("Laplacian is not symmetric".into()));
    }
    let eig = l.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let mut t = DMatrix::zeros(n, n);
    for (k, &idx) in order.iter().enumerate() {
        t.set_column(k, &eig.eigenvectors.column(idx));
    }
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    // Rotate the null space so the first column is the normalized ones vector.
    let null_dim = eigenvalues
        .iter()
        .take_while(|&&v| v.abs() <= CONNECTIVITY_TOL.max(1e-10 * eigenvalues[n - 1].abs()))
        .count()
        .max(1);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut basis: Vec<DVector<f64>> = vec![ones];
    for k in 0..null_dim {
        let mut v = t.column(k).into_owned();
        for u in &basis {
            let proj = u.dot(&v);
            v -= u * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    for (k, v) in basis.iter().take(null_dim).enumerate() {
        t.set_column(k, v);
    }

    let ortho = (&t.transpose() * &t - DMatrix::identity(n, n)).abs().max();
    let diag_resid = {
        let d = t.transpose() * l * &t;
        let mut r = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    r = r.max(d[(i, j)].abs());
                }
            }
        }
        r
    };
    if ortho > 1e-9 || diag_resid > 1e-9 {
        return Err(Error::Validation(format!(
            "diagonalizer residuals too large: orthogonality {ortho:.3e}, off-diagonal {diag_resid:.3e}"
        )));
    }
    Ok(t)
}

/// The selection matrices of the vector-form recursions.
///
/// `Q` (d x N) picks the source agent of each edge; `W` (N x d) picks each
/// agent's block of edges; `p_active` is the diagonal 0/1 edge-activity mask
/// (identity in the fixed case).
#[derive(Debug, Clone)]
pub struct SelectionMatrices {
    pub q: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub p_active: DVector<f64>,
    pub edge_order: Vec<(usize, usize)>,
}

/// Build the selection matrices of `sub` against the union's canonical edge
/// order. With `sub = None` the union itself is used (fixed case,
/// `p_active = 1`).
pub fn build_selection(union: &Graph, sub: Option<&Graph>) -> Result<SelectionMatrices> {
    let d = union.total_degree();
    let n = union.agent_count();
    let sub = sub.unwrap_or(union);
    if sub.agent_count() != n {
        return Err(Error::MismatchedAgentCount(n, sub.agent_count()));
    }
    for &(i, j) in sub.edges() {
        if union.edges().binary_search(&(i, j)).is_err() {
            return Err(Error::EdgeNotInUnion(i, j));
        }
    }

    let mut q = DMatrix::zeros(d, n);
    let mut w = DMatrix::zeros(n, d);
    let mut p_active = DVector::zeros(d);
    for (s, &(i, j)) in union.edges().iter().enumerate() {
        if sub.edges().binary_search(&(i, j)).is_ok() {
            q[(s, j)] = 1.0;
            w[(i, s)] = 1.0;
            p_active[s] = 1.0;
        }
    }
    Ok(SelectionMatrices {
        q,
        w,
        p_active,
        edge_order: union.edges().to_vec(),
    })
}

/// Union of edge sets plus the joint-connectivity verdict of Assumption-style
/// switching sets.
pub struct UnionConnectivity {
    pub union: Graph,
    pub jointly_connected: bool,
}

pub fn union_and_check_joint_connectivity(graphs: &[Graph]) -> Result<UnionConnectivity> {
    let n = graphs
        .first()
        .ok_or_else(|| Error::Validation("at least one graph required".into()))?
        .agent_count();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for g in graphs {
        if g.agent_count() != n {
            return Err(Error::MismatchedAgentCount(n, g.agent_count()));
        }
        edges.extend_from_slice(g.edges());
    }
    edges.sort_unstable();
    edges.dedup();
    let union = Graph::new(n, edges)?;
    let jointly_connected = algebraic_connectivity(&union.laplacian()) > CONNECTIVITY_TOL;
    Ok(UnionConnectivity {
        union,
        jointly_connected,
    })
}

/// Stationary distribution of a row-stochastic, ergodic transition matrix.
///
/// Ergodicity is checked by verifying that some power `P^k`, `k <= h^2`, is
/// entrywise positive; pi then solves `pi P = pi`, `sum pi = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let h = p.nrows();
    if p.ncols() != h {
        return Err(Error::Validation("transition matrix must be square".into()));
    }
    for u in 0..h {
        let row_sum: f64 = p.row(u).iter().sum();
        if (row_sum - 1.0).abs() > 1e-12 || p.row(u).iter().any(|&v| v < 0.0) {
            return Err(Error::Validation(format!(
                "transition row {u} is not a probability distribution"
            )));
        }
    }
    let mut power = p.clone();
    let mut positive = power.iter().all(|&v| v > 0.0);
    let mut k = 1;
    while !positive && k < h * h {
        power = &power * p;
        positive = power.iter().all(|&v| v > 0.0);
        k += 1;
    }
    if !positive {
        return Err(Error::NotErgodic);
    }

    // Solve (P^T - I) pi = 0 with the last equation replaced by sum = 1.
    let mut sys = p.transpose() - DMatrix::identity(h, h);
    let mut rhs = DVector::zeros(h);
    for v in 0..h {
        sys[(h - 1, v)] = 1.0;
    }
    rhs[h - 1] = 1.0;
    let pi = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Validation("singular stationary-distribution system".into()))?;

    let resid = (p.transpose() * &pi - &pi).abs().max();
    debug_assert!(resid < 1e-10, "stationary residual {resid}");
    Ok(pi)
}

/// Markov chain over a family of graphs sharing the union edge order.
#[derive(Debug, Clone)]
pub struct MarkovTopologyProcess {
    pub graphs: Vec<Graph>,
    pub transition: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub union: Graph,
    /// Per-graph selection matrices against the union edge order.
    pub selections: Vec<SelectionMatrices>,
}

impl MarkovTopologyProcess {
    pub fn new(graphs: Vec<Graph>, transition: DMatrix<f64>) -> Result<Self> {
        if graphs.len() != transition.nrows() {
            return Err(Error::Validation(format!(
                "{} graphs but {}x{} transition matrix",
                graphs.len(),
                transition.nrows(),
                transition.ncols()
            )));
        }
        let uc = union_and_check_joint_connectivity(&graphs)?;
        if !uc.jointly_connected {
            return Err(Error::NotJointlyConnected(algebraic_connectivity(
                &uc.union.laplacian(),
            )));
        }
        let pi = stationary_distribution(&transition)?;
        let selections = graphs
            .iter()
            .map(|g| build_selection(&uc.union, Some(g)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graphs,
            transition,
            pi,
            union: uc.union,
            selections,
        })
    }

    pub fn state_count(&self) -> usize {
        self.graphs.len()
    }

    /// Draw the next chain state by inverse CDF on one uniform variate.
    pub fn sample_chain<R: Rng + ?Sized>(&self, current: usize, rng: &mut R) -> usize {
        let u: f64 = rng.gen::<f64>();
        let mut cum = 0.0;
        for v in 0..self.state_count() {
            cum += self.transition[(current, v)];
            if u < cum {
                return v;
            }
        }
        self.state_count() - 1
    }

    /// `L_check = sum_u pi_u L_u`.
    pub fn expected_laplacian(&self) -> DMatrix<f64> {
        let n = self.union.agent_count();
        let mut l = DMatrix::zeros(n, n);
        for (g, &p) in self.graphs.iter().zip(self.pi.iter()) {
            l += g.laplacian() * p;
        }
        l
    }
}
