//! Theorem arithmetic: the Lyapunov-lemma constants, the beta/gamma
//! admissibility thresholds, the lambda_min(U) rate trichotomy, empirical
//! slope fits, and the Lemma-6/7 difference-equation oracle tying original
//! states to compressed states.

use nalgebra::DMatrix;

use crate::channel::{normal_pdf, LinkConfig};
use crate::engine::{Trace, TopologySet};
use crate::error::{Error, Result};
use crate::linsys::{check_compression_stability, GainPair};
use crate::topology::{algebraic_connectivity, build_selection, orthogonal_diagonalizer};

/// Constants of Lemmas 3-4 (fixed) and 10-11 (switching).
///
/// The switching forms are used uniformly: with h = 1 and pi = [1] they
/// reduce to the fixed-topology constants because T_G is orthogonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConstants {
    pub lambda2: f64,
    pub lambda_g: f64,
    pub lambda_qw: f64,
    pub lambda_ql: f64,
    pub alpha: f64,
    pub f_m: f64,
    pub pi_min: f64,
    pub d_max: usize,
}

fn spectral_norm_sq(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let s = sv.max();
    s * s
}

/// Every constant entering Theorems 1-4 for the given topology set and link.
pub fn theorem_constants(topo: &TopologySet, link: &LinkConfig, m: f64) -> Result<TheoremConstants> {
    if !(m > 0.0) {
        return Err(Error::NonPositiveRadius(m));
    }
    let union = topo.union();
    let big_n = union.agent_count();
    let l_check = topo.analysis_laplacian();
    let lambda2 = algebraic_connectivity(&l_check);
    let t_g = orthogonal_diagonalizer(&l_check)?;
    let j_n = DMatrix::identity(big_n, big_n)
        - DMatrix::from_element(big_n, big_n, 1.0 / big_n as f64);
    let q = build_selection(union, None)?.q;

    let (graphs, pi): (Vec<_>, Vec<f64>) = match topo {
        TopologySet::Fixed(g) => (vec![g.clone()], vec![1.0]),
        TopologySet::Switching(p) => (p.graphs.clone(), p.pi.iter().copied().collect()),
    };

    let mut lambda_g = 0.0f64;
    let mut lambda_qw = 0.0f64;
    let mut lambda_ql = 0.0f64;
    for g in &graphs {
        let sel = build_selection(union, Some(g))?;
        let w = &sel.w;
        lambda_g = lambda_g.max(spectral_norm_sq(&(t_g.transpose() * &j_n * w)));
        lambda_qw = lambda_qw.max(spectral_norm_sq(&(&q * w)));
        lambda_ql = lambda_ql.max(spectral_norm_sq(&(&q * g.laplacian() * &t_g)));
    }
    let alpha = if lambda_g > 0.0 {
        2.0 * lambda_qw.sqrt() + lambda_ql * lambda2 / lambda_g
    } else {
        2.0 * lambda_qw.sqrt()
    };

    let sigma = link.noise.sigma();
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let f_m = link
        .thresholds
        .iter()
        .map(|c| normal_pdf(c.abs() + m, sigma))
        .fold(f64::INFINITY, f64::min);
    let f_m = if f_m.is_finite() { f_m } else { 0.0 };

    let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);

    Ok(TheoremConstants {
        lambda2,
        lambda_g,
        lambda_qw,
        lambda_ql,
        alpha,
        f_m,
        pi_min,
        d_max: union.max_degree(),
    })
}

/// Admissibility thresholds of Theorems 1 and 3 (pi_min-scaled).
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// gamma must exceed 1/lambda_2 for the rate theorem.
    pub gamma_threshold: f64,
    /// Theorem 1(i)/3(i): beta above this gives consensus.
    pub beta_min_consensus: f64,
    /// Theorem 1(ii)/3(ii): beta above this gives the O(1/t) rate.
    pub beta_min_rate: f64,
}

pub fn beta_thresholds(consts: &TheoremConstants, gamma: f64) -> Result<RateReport> {
    if !(gamma > 0.0) {
        return Err(Error::Validation(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let c = consts;
    if c.lambda2 <= 0.0 || c.f_m <= 0.0 || c.pi_min <= 0.0 {
        return Err(Error::Validation(
            "theorem constants require lambda2, f_M and pi_min positive".into(),
        ));
    }
    let scale = 1.0 / (2.0 * c.f_m * c.pi_min);
    let beta_min_consensus =
        scale * (gamma * c.lambda_g * c.lambda_g / c.lambda2.powi(3) + gamma * c.alpha);
    let gamma_threshold = 1.0 / c.lambda2;
    if gamma <= gamma_threshold {
        return Err(Error::GammaTooSmall {
            gamma,
            gamma_min: gamma_threshold,
        });
    }
    let beta_min_rate = scale
        * (gamma * gamma * c.lambda_g * c.lambda_g
            / (c.lambda2 * c.lambda2 * (gamma * c.lambda2 - 1.0))
            + gamma * c.alpha
            + 1.0);
    Ok(RateReport {
        gamma_threshold,
        beta_min_consensus,
        beta_min_rate,
    })
}

/// Convergence regime per the Lemma-5 trichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// lambda_min(U) > 1: O(1/t).
    Linear,
    /// lambda_min(U) = 1: O(ln t / t).
    LogLinear,
    /// lambda_min(U) < 1: O(t^{-lambda_min}).
    Sublinear,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Linear => write!(f, "O(1/t)"),
            Regime::LogLinear => write!(f, "O(ln t / t)"),
            Regime::Sublinear => write!(f, "O(t^-lambda)"),
        }
    }
}

/// Smallest eigenvalue of the 2x2 coupling matrix
/// U = [[gamma lambda2, gamma lambda_G/lambda2], [., 2 beta f_M pi_min - gamma alpha]]
/// by the closed form, plus the regime it implies.
pub fn lambda_min_u(beta: f64, gamma: f64, consts: &TheoremConstants) -> (f64, Regime) {
    let u1 = gamma * consts.lambda2;
    let u2 = gamma * consts.lambda_g / consts.lambda2;
    let u4 = 2.0 * beta * consts.f_m * consts.pi_min - gamma * consts.alpha;
    let mid = 0.5 * (u1 + u4);
    let half_gap = 0.5 * (u1 - u4);
    let lam = mid - (half_gap * half_gap + u2 * u2).sqrt();
    let regime = if lam > 1.0 {
        Regime::Linear
    } else if lam == 1.0 {
        Regime::LogLinear
    } else {
        Regime::Sublinear
    };
    (lam, regime)
}

/// Least-squares fit of log(value) against log(step) over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn rate_slope(steps: &[u64], values: &[f64], window: (f64, f64)) -> Result<SlopeFit> {
    if steps.len() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} steps but {} values",
            steps.len(),
            values.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in steps.iter().zip(values) {
        let tf = t as f64;
        if tf < window.0 || tf > window.1 {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::NonPositiveMetric(format!(
                "value {v} at step {t} inside the fit window"
            )));
        }
        xs.push(tf.ln());
        ys.push(v.ln());
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "slope window [{}, {}] contains {n} points; need at least 2",
            window.0, window.1
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

/// Result of iterating the Lemma-7 recursion
/// D^{n-1} xi + b_{n-1} D^{n-2} xi + ... + b_1 xi = eta
/// forward from zero initial conditions (D is the one-step advance).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub xi: Vec<f64>,
    /// xi* = eta*/prod(1 - r_j) when a limit eta* is supplied; the product
    /// equals p(1) with p the recursion polynomial.
    pub predicted_limit: Option<f64>,
}

pub fn difference_equation_oracle(
    b: &[f64],
    eta: &[f64],
    eta_star: Option<f64>,
) -> Result<OracleResult> {
    let stab = check_compression_stability(b);
    if !stab.stable {
        return Err(Error::UnstableCoefficients(
            stab.roots.iter().map(|r| r.norm()).collect(),
        ));
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("eta contains a non-finite value".into()));
    }
    let order = b.len();
    let len = eta.len();
    let mut xi = vec![0.0f64; len];
    for k in 0..len {
        if k < order {
            continue;
        }
        // xi[k] plays the role of D^{n-1} xi at base index k - order.
        let mut v = eta[k - order];
        for (j, &bj) in b.iter().enumerate() {
            v -= bj * xi[k - order + j];
        }
        xi[k] = v;
    }
    let predicted_limit = eta_star.map(|es| {
        let p1 = 1.0 + b.iter().sum::<f64>();
        es / p1
    });
    Ok(OracleResult {
        xi,
        predicted_limit,
    })
}

/// Max residual of the Lemma-6 identity along the dense (step-contiguous)
/// prefix of a canonical-frame trace:
/// sum_j b_j x_{in}(t+j-1) + x_{in}(t+n-1) = K2 x_i(t+n-1).
pub fn verify_original_from_compressed(trace: &Trace, gains: &GainPair) -> Result<f64> {
    let n = gains.k2.ncols();
    let b = &gains.b;
    if b.len() + 1 != n {
        return Err(Error::Validation(format!(
            "{} compression coefficients for an {n}-dimensional system",
            b.len()
        )));
    }
    // Collect the longest run of consecutive steps from the start.
    let mut dense_end = 1;
    while dense_end < trace.records.len()
        && trace.records[dense_end].step == trace.records[dense_end - 1].step + 1
    {
        dense_end += 1;
    }
    if dense_end < n {
        return Err(Error::InsufficientHorizon {
            horizon: dense_end,
            n,
        });
    }
    let big_n = trace.records[0].x.len();
    let mut max_resid = 0.0f64;
    for base in 0..=(dense_end - n) {
        for i in 0..big_n {
            // x_{in} over the shift window and K2 x_i at the window end.
            let mut lhs = trace.records[base + n - 1].x[i][n - 1];
            for (j, &bj) in b.iter().enumerate() {
                lhs += bj * trace.records[base + j].x[i][n - 1];
            }
            let rhs = (&gains.k2 * &trace.records[base + n - 1].x[i])[(0, 0)];
            max_resid = max_resid.max((lhs - rhs).abs());
        }
    }
    Ok(max_resid)
}
