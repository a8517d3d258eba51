//! Batch interface for one-bit consensus experiments.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use onebit_consensus::analysis::{
    beta_thresholds, difference_equation_oracle, lambda_min_u, rate_slope, theorem_constants,
};
use onebit_consensus::engine::{run_auto, run_replications, SimConfig, Trace};
use onebit_consensus::linsys::zoh_discretize;
use onebit_consensus::scenario::{load_scenario, Scenario};
use onebit_consensus::{Error, Result};

#[derive(Parser)]
#[command(
    name = "obc",
    about = "One-bit consensus simulation and analysis",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Beta,
    Gamma,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's replicated simulation and report the consensus rate.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's replication count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's horizon.
        #[arg(long)]
        horizon: Option<u64>,
        /// Trace output file (CSV) or full report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
    },
    /// Evaluate the theorem constants and step-size thresholds.
    Check {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Zero-order-hold discretization of the scenario's continuous system.
    Discretize {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Iterate the Lemma-7 difference-equation recursion on a driving file.
    Oracle {
        /// Compression coefficients b_1..b_{n-1}, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        b: Vec<f64>,
        /// File with one eta value per line.
        #[arg(long)]
        eta: PathBuf,
        /// Known limit of eta, enabling the closed-form limit prediction.
        #[arg(long)]
        eta_star: Option<f64>,
    },
    /// Sweep beta or gamma over a grid and tabulate slope vs parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Relative output paths may be redirected with OBC_OUT_DIR.
fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("OBC_OUT_DIR") {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_out(path: &Path, contents: &str) -> Result<()> {
    let full = resolve_out(path);
    if let Some(parent) = full.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&full, contents)?;
    Ok(())
}

/// Per-step trace rows, one line per agent, with round-trip float formatting.
fn trace_to_csv(trace: &Trace, t0: u64, n: usize) -> String {
    let mut out = String::from("t,m,agent");
    for k in 1..=n {
        out.push_str(&format!(",x_{k}"));
    }
    out.push_str(",cons_err,V,R\n");
    for rec in &trace.records {
        for (agent, x) in rec.x.iter().enumerate() {
            out.push_str(&format!("{},{},{}", t0 + rec.step, rec.m, agent + 1));
            for v in x.iter() {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(
                ",{},{},{}\n",
                rec.cons_err[agent], rec.v_sample, rec.r_sample
            ));
        }
    }
    out
}

fn params_json(sc: &Scenario) -> serde_json::Value {
    let c = &sc.config;
    json!({
        "name": sc.name,
        "agents": c.topo.union().agent_count(),
        "beta": c.beta,
        "gamma": c.gamma,
        "M": c.m,
        "t0": c.t0,
        "sigma": c.link.noise.sigma(),
        "horizon": c.horizon,
        "seed": c.seed,
        "replications": c.replications,
    })
}

/// Ensemble run plus the log-log slope of the max-over-agents consensus MSE
/// over the last two decades.
fn run_summary(sc: &Scenario) -> Result<serde_json::Value> {
    let config = &sc.config;
    let metrics = run_replications(config)?;
    let mse = metrics.max_consensus_mse();
    let window = (config.horizon as f64 / 100.0, config.horizon as f64);
    let fit = rate_slope(&metrics.steps, &mse, window)?;
    Ok(json!({
        "slope": fit.slope,
        "slope_window": [window.0, window.1],
        "r_squared": fit.r_squared,
        "final_mse": mse.last().copied(),
        "params": params_json(sc),
    }))
}

fn cmd_run(
    scenario: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    horizon: Option<u64>,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<()> {
    let mut sc = load_scenario(scenario)?;
    if let Some(r) = reps {
        sc.config.replications = r;
    }
    if let Some(s) = seed {
        sc.config.seed = s;
    }
    if let Some(h) = horizon {
        sc.config.horizon = h;
    }
    sc.config.validate()?;

    let summary = run_summary(&sc)?;
    match format {
        OutputFormat::Csv => {
            if let Some(path) = out {
                let trace = run_auto(&sc.config, 0)?;
                let csv = trace_to_csv(&trace, sc.config.t0, sc.config.sys.dim());
                write_out(path, &csv)?;
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        OutputFormat::Json => {
            let text = serde_json::to_string_pretty(&summary).unwrap();
            match out {
                Some(path) => write_out(path, &text)?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn cmd_check(scenario: &Path) -> Result<()> {
    let sc = load_scenario(scenario)?;
    let c = &sc.config;
    let consts = theorem_constants(&c.topo, &c.link, c.m)?;
    let (lam_u, regime) = lambda_min_u(c.beta, c.gamma, &consts);
    let gamma_min = 1.0 / consts.lambda2;
    let (beta_min_consensus, beta_min_rate, pass_consensus, pass_rate) =
        match beta_thresholds(&consts, c.gamma) {
            Ok(rep) => (
                json!(rep.beta_min_consensus),
                json!(rep.beta_min_rate),
                c.beta > rep.beta_min_consensus,
                c.beta > rep.beta_min_rate,
            ),
            Err(Error::GammaTooSmall { .. }) => {
                // Consensus threshold (Theorem 1(i)/3(i)) does not need
                // gamma > 1/lambda_2; only the rate threshold does.
                let scale = 1.0 / (2.0 * consts.f_m * consts.pi_min);
                let bc = scale
                    * (c.gamma * consts.lambda_g * consts.lambda_g / consts.lambda2.powi(3)
                        + c.gamma * consts.alpha);
                (json!(bc), serde_json::Value::Null, c.beta > bc, false)
            }
            Err(e) => return Err(e),
        };
    let report = json!({
        "lambda2": consts.lambda2,
        "lambda_G": consts.lambda_g,
        "lambda_QW": consts.lambda_qw,
        "lambda_QL": consts.lambda_ql,
        "alpha": consts.alpha,
        "f_M": consts.f_m,
        "pi_min": consts.pi_min,
        "beta_min_consensus": beta_min_consensus,
        "beta_min_rate": beta_min_rate,
        "gamma_min": gamma_min,
        "lambda_min_U": lam_u,
        "regime": regime.to_string(),
        "pass": { "consensus": pass_consensus, "rate": pass_rate },
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_discretize(scenario: &Path) -> Result<()> {
    let sc = load_scenario(scenario)?;
    let (cont, period) = sc.continuous.ok_or_else(|| {
        Error::Validation("scenario has no continuous system block to discretize".into())
    })?;
    let disc = zoh_discretize(&cont, period)?;
    let n = disc.dim();
    let a_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| disc.a[(i, j)]).collect())
        .collect();
    let b_col: Vec<f64> = disc.b.iter().copied().collect();
    let report = json!({
        "sampling_period": period,
        "a_d": a_rows,
        "b_d": b_col,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_oracle(b: &[f64], eta_path: &Path, eta_star: Option<f64>) -> Result<()> {
    let text = std::fs::read_to_string(eta_path)?;
    let eta = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad eta value {l:?}: {e}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if eta.is_empty() {
        return Err(Error::Validation("eta file contains no values".into()));
    }
    let res = difference_equation_oracle(b, &eta, eta_star)?;
    let tail: Vec<f64> = res.xi.iter().rev().take(5).rev().copied().collect();
    let report = json!({
        "length": res.xi.len(),
        "final": res.xi.last().copied(),
        "tail": tail,
        "predicted_limit": res.predicted_limit,
    });
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    scenario: &Path,
    param: SweepParam,
    from: f64,
    to: f64,
    steps: usize,
    reps: Option<usize>,
    horizon: Option<u64>,
    out: Option<&Path>,
) -> Result<()> {
    if steps < 2 {
        return Err(Error::Validation("sweep needs at least 2 grid points".into()));
    }
    let mut sc = load_scenario(scenario)?;
    if let Some(r) = reps {
        sc.config.replications = r;
    }
    if let Some(h) = horizon {
        sc.config.horizon = h;
    }
    let consts = theorem_constants(&sc.config.topo, &sc.config.link, sc.config.m)?;
    let mut table = String::from("param,value,slope,r_squared,final_mse,lambda_min_U,regime\n");
    for k in 0..steps {
        let value = from + (to - from) * k as f64 / (steps - 1) as f64;
        let mut config: SimConfig = sc.config.clone();
        match param {
            SweepParam::Beta => config.beta = value,
            SweepParam::Gamma => config.gamma = value,
        }
        config.validate()?;
        let metrics = run_replications(&config)?;
        let mse = metrics.max_consensus_mse();
        let window = (config.horizon as f64 / 100.0, config.horizon as f64);
        let fit = rate_slope(&metrics.steps, &mse, window)?;
        let (lam_u, regime) = lambda_min_u(config.beta, config.gamma, &consts);
        let name = match param {
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
        };
        table.push_str(&format!(
            "{name},{value},{},{},{},{lam_u},{regime}\n",
            fit.slope,
            fit.r_squared,
            mse.last().copied().unwrap_or(f64::NAN),
        ));
    }
    match out {
        Some(path) => write_out(path, &table)?,
        None => print!("{table}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            reps,
            seed,
            horizon,
            out,
            format,
        } => cmd_run(&scenario, reps, seed, horizon, out.as_deref(), format),
        Command::Check { scenario } => cmd_check(&scenario),
        Command::Discretize { scenario } => cmd_discretize(&scenario),
        Command::Oracle { b, eta, eta_star } => cmd_oracle(&b, &eta, eta_star),
        Command::Sweep {
            scenario,
            param,
            from,
            to,
            steps,
            reps,
            horizon,
            out,
        } => cmd_sweep(
            &scenario,
            param,
            from,
            to,
            steps,
            reps,
            horizon,
            out.as_deref(),
        ),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
