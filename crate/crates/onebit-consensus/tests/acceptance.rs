//! The eleven acceptance criteria, one pass/fail line each.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use onebit_consensus::analysis::{
    beta_thresholds, difference_equation_oracle, lambda_min_u, rate_slope, TheoremConstants,
};
use onebit_consensus::channel::{normal_cdf, transmit, LinkConfig, NoiseModel};
use onebit_consensus::engine::{
    run_fixed, run_replications, run_switching, EnsembleMetrics, TopologySet,
};
use onebit_consensus::linsys::{zoh_discretize, LinearSystem, SystemKind};
use onebit_consensus::protocol::project;
use onebit_consensus::scenario::load_scenario;
use onebit_consensus::topology::MarkovTopologyProcess;

fn scenario_path(name: &str) -> String {
    format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Report { failures: vec![] }
    }

    fn record(&mut self, idx: usize, name: &str, pass: bool, detail: String) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("acceptance {idx:02} {name}: {verdict} ({detail})");
        if !pass {
            self.failures.push(format!("{idx:02} {name}: {detail}"));
        }
    }
}

fn printed_discrete() -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.7358, 0.1839, 0.0, 0.0, //
                -0.7358, 0.0, 0.0, 0.0, //
                0.7073, 0.0777, 1.0, 0.5, //
                2.6891, 0.3964, 0.0, 1.0,
            ],
        ),
        DVector::from_row_slice(&[0.1982, 0.5518, -0.093, -0.2668]),
    )
}

fn printed_gains() -> (RowDVector<f64>, RowDVector<f64>) {
    (
        RowDVector::from_row_slice(&[-0.9224, -0.1825, -0.0, -0.1788]),
        RowDVector::from_row_slice(&[3.8734, 0.9054, 0.3575, 0.8772]),
    )
}

/// Monotonicity violations (>5% increase between decimated points) after the
/// burn-in step, and the log-log slope of max-over-agents consensus MSE.
fn rate_criterion(metrics: &EnsembleMetrics, burn_in: f64, horizon: f64) -> (usize, f64) {
    let mse = metrics.max_consensus_mse();
    let mut violations = 0;
    for i in 0..mse.len() - 1 {
        if (metrics.steps[i] as f64) >= burn_in && mse[i + 1] > mse[i] * 1.05 {
            violations += 1;
        }
    }
    let fit = rate_slope(&metrics.steps, &mse, (burn_in, horizon)).unwrap();
    (violations, fit.slope)
}

#[test]
fn acceptance_criteria() {
    let mut rep = Report::new();

    // 1. Gain identities on the paper's printed Example-1 data.
    {
        let (a_d, b_d) = printed_discrete();
        let (k1, k2) = printed_gains();
        let k2b = ((&k2 * &b_d)[(0, 0)] - 1.0).abs();
        let closed = &a_d + &b_d * &k1;
        let fp = (&k2 * closed - &k2)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        rep.record(
            1,
            "gain identities",
            k2b <= 2e-4 && fp <= 2e-3,
            format!("|K2 Bd - 1| = {k2b:.2e}, fixed-point residual = {fp:.2e}"),
        );
    }

    // 2. ZOH discretization reproduces the printed discrete pair.
    {
        let a_c = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 1.0, 0.0, 0.0, //
                -4.0, -4.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                6.0, 0.0, 0.0, 0.0,
            ],
        );
        let b_c = DVector::from_row_slice(&[0.0, 3.0, 0.0, -1.0]);
        let cont = LinearSystem::new(a_c, b_c, SystemKind::Continuous).unwrap();
        let disc = zoh_discretize(&cont, 0.5).unwrap();
        let (a_ref, b_ref) = printed_discrete();
        let da = (&disc.a - &a_ref).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let db = (&disc.b - &b_ref).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        rep.record(
            2,
            "ZOH discretization",
            da <= 1e-3 && db <= 1e-3,
            format!("max |dA| = {da:.2e}, max |dB| = {db:.2e}"),
        );
    }

    // 3. Consensus rate under the fixed Example-1 topology.
    {
        let sc = load_scenario(scenario_path("example1.json")).unwrap();
        let metrics = run_replications(&sc.config).unwrap();
        let (violations, slope) = rate_criterion(&metrics, 1e3, sc.config.horizon as f64);
        rep.record(
            3,
            "fixed-topology rate",
            violations == 0 && (-1.3..=-0.7).contains(&slope),
            format!("slope = {slope:.3}, monotonicity violations = {violations}"),
        );
    }

    // 4. Consensus rate under Markovian switching (Example 2).
    {
        let sc = load_scenario(scenario_path("example2.json")).unwrap();
        let metrics = run_replications(&sc.config).unwrap();
        let (violations, slope) = rate_criterion(&metrics, 1e3, sc.config.horizon as f64);
        rep.record(
            4,
            "switching-topology rate",
            violations == 0 && (-1.3..=-0.7).contains(&slope),
            format!("slope = {slope:.3}, monotonicity violations = {violations}"),
        );
    }

    // 5. Lemma-2 boundedness over 1e4 Example-1 steps.
    {
        let mut sc = load_scenario(scenario_path("example1.json")).unwrap();
        sc.config.horizon = 10_000;
        let trace = run_fixed(&sc.config).unwrap();
        let bound = sc.config.m + 1e-9;
        rep.record(
            5,
            "compressed-state bound",
            trace.max_compressed <= bound,
            format!("max |K2 x| = {:.6} <= {bound}", trace.max_compressed),
        );
    }

    // 6. Projection non-expansiveness over 1e5 random pairs.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut violations = 0usize;
        for _ in 0..100_000 {
            let m = 0.1 + 4.9 * rng.gen::<f64>();
            let v1 = 20.0 * rng.gen::<f64>() - 10.0;
            let v2 = 20.0 * rng.gen::<f64>() - 10.0;
            let p1 = project(v1, m).unwrap();
            let p2 = project(v2, m).unwrap();
            if (p1 - p2).abs() > (v1 - v2).abs() + 1e-12 {
                violations += 1;
            }
        }
        rep.record(
            6,
            "projection non-expansive",
            violations == 0,
            format!("violations = {violations} / 100000"),
        );
    }

    // 7. Quantizer calibration: E[bit] = F(c - z) at 3 binomial stderr.
    {
        let sigma = 4.0;
        let c = -2.0;
        let link = LinkConfig::uniform(c, 1, NoiseModel::new(sigma).unwrap()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let draws = 100_000usize;
        let mut worst = 0.0f64;
        let mut pass = true;
        for _ in 0..20 {
            let z = 10.0 * rng.gen::<f64>() - 5.0;
            let mut sum = 0.0;
            for _ in 0..draws {
                sum += transmit(z, 0, &link, &mut rng);
            }
            let mean = sum / draws as f64;
            let p = normal_cdf(c - z, sigma);
            let stderr = (p * (1.0 - p) / draws as f64).sqrt();
            let dev = (mean - p).abs() / stderr;
            worst = worst.max(dev);
            if dev > 3.0 {
                pass = false;
            }
        }
        rep.record(
            7,
            "quantizer calibration",
            pass,
            format!("worst deviation = {worst:.2} stderr over 20 states"),
        );
    }

    // 8. Markov machinery: stationary frequencies and expected Laplacian.
    {
        let sc = load_scenario(scenario_path("example2.json")).unwrap();
        let process: &MarkovTopologyProcess = match &sc.config.topo {
            TopologySet::Switching(p) => p,
            TopologySet::Fixed(_) => unreachable!(),
        };
        let h = process.state_count();
        let steps = 1_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut counts = vec![0usize; h];
        let mut state = 0usize;
        for _ in 0..steps {
            state = process.sample_chain(state, &mut rng);
            counts[state] += 1;
        }
        let mut pass = true;
        let mut worst = 0.0f64;
        for (u, &cnt) in counts.iter().enumerate() {
            let p = process.pi[u];
            let stderr = (p * (1.0 - p) / steps as f64).sqrt();
            let dev = (cnt as f64 / steps as f64 - p).abs() / stderr;
            worst = worst.max(dev);
            if dev > 3.0 {
                pass = false;
            }
        }
        // Entrywise Monte-Carlo mean of sampled Laplacians vs expected_laplacian.
        let laps: Vec<DMatrix<f64>> =
            process.graphs.iter().map(|g| g.laplacian()).collect();
        let n = laps[0].nrows();
        let mut mean = DMatrix::zeros(n, n);
        for (u, &cnt) in counts.iter().enumerate() {
            mean += &laps[u] * (cnt as f64 / steps as f64);
        }
        let expected = process.expected_laplacian();
        for i in 0..n {
            for j in 0..n {
                let mu = mean[(i, j)];
                let mut var = 0.0;
                for (u, &cnt) in counts.iter().enumerate() {
                    var += (cnt as f64 / steps as f64) * (laps[u][(i, j)] - mu).powi(2);
                }
                let stderr = (var / steps as f64).sqrt();
                let dev = (mu - expected[(i, j)]).abs();
                if dev > 3.0 * stderr + 1e-9 {
                    pass = false;
                }
            }
        }
        rep.record(
            8,
            "Markov machinery",
            pass,
            format!("worst frequency deviation = {worst:.2} stderr"),
        );
    }

    // 9. lambda_min(U) > 1 whenever beta clears the rate threshold.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut min_lam = f64::INFINITY;
        let mut pass = true;
        for _ in 0..200 {
            let lambda2 = 0.5 + 7.5 * rng.gen::<f64>();
            let lambda_g = 0.2 + 5.0 * rng.gen::<f64>();
            let lambda_qw = 0.1 + 4.0 * rng.gen::<f64>();
            let lambda_ql = 0.1 + 4.0 * rng.gen::<f64>();
            let alpha = 2.0 * lambda_qw.sqrt() + lambda_ql * lambda2 / lambda_g;
            let consts = TheoremConstants {
                lambda2,
                lambda_g,
                lambda_qw,
                lambda_ql,
                alpha,
                f_m: 0.01 + 0.29 * rng.gen::<f64>(),
                pi_min: 0.1 + 0.9 * rng.gen::<f64>(),
                d_max: 3,
            };
            let gamma = (1.1 + 3.0 * rng.gen::<f64>()) / lambda2;
            let thresholds = beta_thresholds(&consts, gamma).unwrap();
            let beta = thresholds.beta_min_rate * (1.0 + 2.0 * rng.gen::<f64>()) + 1e-9;
            let (lam, _) = lambda_min_u(beta, gamma, &consts);
            min_lam = min_lam.min(lam);
            if lam <= 1.0 {
                pass = false;
            }
        }
        rep.record(
            9,
            "lambda_min(U) consistency",
            pass,
            format!("min lambda_min(U) over 200 sets = {min_lam:.4}"),
        );
    }

    // 10. Difference-equation oracle: limits and decaying-eta rate.
    {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let mut worst = 0.0f64;
        let mut pass = true;
        for _ in 0..100 {
            let order = 1 + rng.gen_range(0..5usize);
            // Build b from random real roots inside (-0.9, 0.9):
            // p(z) = prod (z - r_j) = z^m + b_m z^{m-1} + ... + b_1.
            let mut coeffs = vec![1.0f64];
            for _ in 0..order {
                let r = 1.8 * rng.gen::<f64>() - 0.9;
                let mut next = vec![0.0; coeffs.len() + 1];
                for (k, &c) in coeffs.iter().enumerate() {
                    next[k + 1] += c;
                    next[k] -= r * c;
                }
                coeffs = next;
            }
            let b = coeffs[..order].to_vec();
            let eta_star = 6.0 * rng.gen::<f64>() - 3.0;
            let eta = vec![eta_star; 4000];
            let res = difference_equation_oracle(&b, &eta, Some(eta_star)).unwrap();
            let err = (res.xi.last().unwrap() - res.predicted_limit.unwrap()).abs();
            worst = worst.max(err);
            if err > 1e-6 {
                pass = false;
            }
        }
        // Decaying driving term: squared error decays at slope <= -0.8.
        let b = vec![-0.125, 0.75, -1.5];
        let len = 100_000usize;
        let eta: Vec<f64> = (0..len).map(|k| 1.0 / (k + 1) as f64).collect();
        let res = difference_equation_oracle(&b, &eta, Some(0.0)).unwrap();
        let steps: Vec<u64> = (1..=len as u64).collect();
        let sq: Vec<f64> = res.xi.iter().map(|v| v * v).collect();
        let fit = rate_slope(&steps, &sq, (1e4, 1e5)).unwrap();
        if fit.slope > -0.8 {
            pass = false;
        }
        rep.record(
            10,
            "difference-equation oracle",
            pass,
            format!(
                "worst limit error = {worst:.2e}, decaying-eta slope = {:.3}",
                fit.slope
            ),
        );
    }

    // 11. h = 1 switching is bit-identical to the fixed run.
    {
        let mut sc = load_scenario(scenario_path("example1.json")).unwrap();
        sc.config.horizon = 10_000;
        let fixed_trace = run_fixed(&sc.config).unwrap();
        let graph = match &sc.config.topo {
            TopologySet::Fixed(g) => g.clone(),
            TopologySet::Switching(_) => unreachable!(),
        };
        let process =
            MarkovTopologyProcess::new(vec![graph], DMatrix::from_element(1, 1, 1.0)).unwrap();
        sc.config.topo = TopologySet::Switching(process);
        let switching_trace = run_switching(&sc.config).unwrap();
        let (cf, cs) = (fixed_trace.checksum(), switching_trace.checksum());
        rep.record(
            11,
            "degenerate-reduction equivalence",
            cf == cs,
            format!("checksums {cf:#018x} vs {cs:#018x}"),
        );
    }

    assert!(
        rep.failures.is_empty(),
        "failed acceptance criteria:\n{}",
        rep.failures.join("\n")
    );
}
