//! The `barrier-mdp` command line: `solve`, `oracle`, `certify`, `bench`
//! and `gen`. Data goes to files or standard output, diagnostics to
//! standard error, and the exit code is the machine-readable result.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;

use crate::barrier::{BarrierParams, EvalBarrierParams};
use crate::bounds::{certify_optimality, certify_policy_eval, certify_policy_values, BoundCertificate};
use crate::env::{self, GridSpec, Problem, RandomMdpSpec};
use crate::error::{invalid, Error, Result};
use crate::mdp::{Mdp, PairWeights, PolicyStoch};
use crate::oracle::{policy_q, value_iteration, OracleTolerances};
use crate::parallel::{map_collect, Execution};
use crate::solver::{
    eta_continuation_observed, feasible_init, solve_observed, solve_policy_eval, SolverOptions, StepMode, Termination,
};
use crate::table::QTable;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;
pub const EXIT_STALLED: i32 = 3;
pub const EXIT_CERTIFICATE_FAILED: i32 = 4;

/// Environment variable selecting the diagnostic level.
pub const LOG_ENV: &str = "BARRIER_MDP_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "barrier-mdp",
    version,
    about = "Log-barrier solver for tabular MDP linear programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the barrier objective and write the solver report.
    Solve(SolveArgs),
    /// Compute Q* by value iteration or Q^pi by an exact linear solve.
    Oracle(OracleArgs),
    /// Solve, run the oracle and evaluate every applicable bound certificate.
    Certify(CertifyArgs),
    /// Error-versus-iteration curves over a list of eta values, as CSV.
    Bench(BenchArgs),
    /// Write a generated model file.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepArg(pub StepMode);

impl FromStr for StepArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "backtracking" {
            return Ok(StepArg(StepMode::default()));
        }
        if let Some(rest) = s.strip_prefix("constant:") {
            let step: f64 = rest.parse().map_err(|_| format!("bad step length {rest:?}"))?;
            if !(step > 0.0 && step.is_finite()) {
                return Err("step length must be finite and > 0".into());
            }
            return Ok(StepArg(StepMode::Constant { step }));
        }
        Err(format!("expected `constant:<alpha>` or `backtracking`, got {s:?}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolveOpts {
    /// Gradient sup-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iters: usize,
    /// `constant:<alpha>` or `backtracking`.
    #[arg(long, default_value = "backtracking")]
    pub step: StepArg,
    /// Margin of the constant feasible starting point.
    #[arg(long, default_value_t = 1.0)]
    pub init_margin: f64,
    /// Record every iteration instead of every 100th.
    #[arg(long)]
    pub full_history: bool,
}

impl SolveOpts {
    fn options(&self) -> SolverOptions {
        SolverOptions {
            init_margin: self.init_margin,
            step_mode: self.step.0,
            grad_tol: self.tol,
            max_iters: self.max_iters,
            record_history: self.full_history,
            keep_history: true,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long)]
    pub eta: f64,
    #[command(flatten)]
    pub solver: SolveOpts,
    /// Output path, `-` for standard output.
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
#[group(id = "mode", required = true, multiple = false)]
pub struct OracleMode {
    /// Optimal Q-function by value iteration.
    #[arg(long)]
    pub qstar: bool,
    /// Q-function of the row-stochastic policy matrix in this JSON file.
    #[arg(long)]
    pub policy: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[command(flatten)]
    pub mode: OracleMode,
    /// Value-iteration residual tolerance.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub vi_max_iters: usize,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub mdp: PathBuf,
    #[arg(long)]
    pub eta: f64,
    /// Certify the policy-evaluation problem for this policy instead.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolveOpts,
    #[arg(long, default_value_t = 1e-12)]
    pub vi_tol: f64,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// `frozenlake6`, `chain:<n>` or `random:<seed>,<S>,<A>`.
    #[arg(long)]
    pub env: EnvArg,
    /// Comma-separated, strictly decreasing.
    #[arg(long, value_delimiter = ',', required = true)]
    pub etas: Vec<f64>,
    #[command(flatten)]
    pub solver: SolveOpts,
    #[arg(long)]
    pub csv: PathBuf,
    /// Warm-start each eta from the previous minimizer.
    #[arg(long, conflicts_with = "cold")]
    pub warm: bool,
    /// Independent solves from the constant start (the default).
    #[arg(long)]
    pub cold: bool,
    /// Run cold solves one after another.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// `frozenlake6`, `chain:<n>` or `random:<seed>,<S>,<A>`.
    #[arg(long)]
    pub env: EnvArg,
    #[arg(long, default_value = "-")]
    pub out: String,
}

/// Named generator with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvArg {
    FrozenLake6,
    Chain(usize),
    Random { seed: u64, states: usize, actions: usize },
}

impl FromStr for EnvArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "frozenlake6" {
            return Ok(EnvArg::FrozenLake6);
        }
        if let Some(n) = s.strip_prefix("chain:") {
            return n
                .parse()
                .map(EnvArg::Chain)
                .map_err(|_| format!("bad chain length {n:?}"));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let parts: Vec<&str> = rest.split(',').collect();
            if let [seed, states, actions] = parts[..] {
                let bad = |what: &str, v: &str| format!("bad {what} {v:?}");
                return Ok(EnvArg::Random {
                    seed: seed.parse().map_err(|_| bad("seed", seed))?,
                    states: states.parse().map_err(|_| bad("state count", states))?,
                    actions: actions.parse().map_err(|_| bad("action count", actions))?,
                });
            }
            return Err("expected `random:<seed>,<S>,<A>`".into());
        }
        Err(format!("unknown environment {s:?}"))
    }
}

impl EnvArg {
    pub fn build(&self) -> Result<Mdp> {
        match *self {
            EnvArg::FrozenLake6 => env::frozen_lake(&GridSpec::frozen_lake6()),
            EnvArg::Chain(n) => env::chain(n, 0.9),
            EnvArg::Random { seed, states, actions } => env::random_mdp(&RandomMdpSpec::dense(states, actions, seed)),
        }
    }
}

/// Installs the stderr logger according to [`LOG_ENV`].
pub fn init_logging() {
    let level = match std::env::var(LOG_ENV).as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("trace") => log::LevelFilter::Trace,
        Ok("info") => log::LevelFilter::Info,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INPUT,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Certify(a) => cmd_certify(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Gen(a) => cmd_gen(&a),
    }
}

fn write_output(out: &str, text: &str) -> Result<()> {
    if out == "-" {
        let mut stdout = io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.write_all(b"\n")?;
        stdout.flush()?;
    } else {
        fs::write(out, format!("{text}\n"))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(out: &str, value: &T) -> Result<()> {
    write_output(out, &serde_json::to_string_pretty(value)?)
}

/// Loads a model and refuses it when any invariant fails.
pub fn load_valid(path: &Path) -> Result<Problem> {
    let problem = env::load(path)?;
    check_valid(&problem.mdp)?;
    Ok(problem)
}

fn check_valid(mdp: &Mdp) -> Result<()> {
    let violations = mdp.validate();
    if violations.is_empty() {
        return Ok(());
    }
    let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
    Err(invalid("model", list.join("; ")))
}

fn load_policy(path: &Path, mdp: &Mdp) -> Result<PolicyStoch> {
    let text = fs::read_to_string(path)?;
    let table: QTable = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })?;
    table.check_shape(mdp.num_states(), mdp.num_actions(), "policy")?;
    PolicyStoch::new(table)
}

fn termination_code(t: Termination) -> i32 {
    match t {
        Termination::GradTolMet => EXIT_OK,
        Termination::MaxIters => EXIT_MAX_ITERS,
        Termination::LineSearchStalled => EXIT_STALLED,
    }
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let problem = load_valid(&a.mdp)?;
    let p = BarrierParams::new(a.eta, problem.weights.clone(), problem.rho.clone())?;
    let opts = a.solver.options();
    let q0 = feasible_init(&problem.mdp, opts.init_margin)?;
    let report = solve_observed(&problem.mdp, &p, q0, &opts, &mut |_, _| {})?;
    info!(
        "{:?} after {} iterations, gradient norm {:e}",
        report.termination, report.iterations, report.final_grad_norm
    );
    write_json(&a.out, &report)?;
    Ok(termination_code(report.termination))
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    let problem = load_valid(&a.mdp)?;
    let q = match &a.mode.policy {
        Some(path) => {
            let pi = load_policy(path, &problem.mdp)?;
            policy_q(&problem.mdp, &pi)?
        }
        None => value_iteration(&problem.mdp, OracleTolerances::new(a.tol, a.vi_max_iters)?)?,
    };
    write_json(&a.out, &q)?;
    Ok(EXIT_OK)
}

fn all_passed(certs: &[BoundCertificate]) -> i32 {
    for c in certs.iter().filter(|c| !c.passed()) {
        warn!(
            "certificate {} failed: {} <= {} <= {} (tolerance {:e})",
            c.name, c.lower, c.value, c.upper, c.slack_tolerance
        );
    }
    if certs.iter().all(BoundCertificate::passed) {
        EXIT_OK
    } else {
        EXIT_CERTIFICATE_FAILED
    }
}

fn cmd_certify(a: &CertifyArgs) -> Result<i32> {
    let problem = load_valid(&a.mdp)?;
    let mdp = &problem.mdp;
    let opts = a.solver.options();
    if let Some(path) = &a.policy {
        let pi = load_policy(path, mdp)?;
        // the model file carries triple weights; the pair problem uses unit weights
        let pair_weights = PairWeights::ones(mdp.num_states(), mdp.num_actions());
        let p = EvalBarrierParams::new(a.eta, pair_weights, problem.rho.clone())?;
        let report = solve_policy_eval(mdp, &pi, &p, &opts)?;
        if !report.converged() {
            write_json(&a.out, &report)?;
            return Ok(termination_code(report.termination));
        }
        let q_pi = policy_q(mdp, &pi)?;
        let certs = certify_policy_eval(&report, &q_pi, mdp, &pi, &p)?;
        write_json(&a.out, &certs)?;
        return Ok(all_passed(&certs));
    }
    let p = BarrierParams::new(a.eta, problem.weights.clone(), problem.rho.clone())?;
    let q0 = feasible_init(mdp, opts.init_margin)?;
    let report = solve_observed(mdp, &p, q0, &opts, &mut |_, _| {})?;
    if !report.converged() {
        write_json(&a.out, &report)?;
        return Ok(termination_code(report.termination));
    }
    let tol = OracleTolerances::new(a.vi_tol, OracleTolerances::default().max_iters)?;
    let q_star = value_iteration(mdp, tol)?;
    let rho_state = p.rho.state_marginal();
    let mut certs = certify_optimality(&report, &q_star, tol.vi_tol, mdp, &p)?.to_vec();
    certs.extend(certify_policy_values(
        &report, &q_star, tol.vi_tol, mdp, &p, &rho_state,
    )?);
    write_json(&a.out, &certs)?;
    Ok(all_passed(&certs))
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub eta: f64,
    pub iteration: usize,
    pub f_value: f64,
    pub grad_inf_norm: f64,
    pub sup_error: f64,
}

pub const CSV_HEADER: &str = "eta,iteration,f_value,grad_inf_norm,sup_error";

/// Renders rows with shortest round-trip decimals.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:?},{},{:?},{:?},{:?}\n",
            r.eta, r.iteration, r.f_value, r.grad_inf_norm, r.sup_error
        ));
    }
    out
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let problem = Problem::standard(a.env.build()?);
    let mdp = &problem.mdp;
    let base = BarrierParams::new(a.etas[0], problem.weights.clone(), problem.rho.clone())?;
    let opts = a.solver.options();
    let q_star = value_iteration(mdp, OracleTolerances::default())?;
    let row = |eta: f64, rec: &crate::solver::HistoryRecord, q: &QTable| CurveRow {
        eta,
        iteration: rec.iteration,
        f_value: rec.f_value,
        grad_inf_norm: rec.grad_inf_norm,
        sup_error: q.sup_distance(&q_star),
    };
    let (rows, terminations) = if a.warm {
        let mut rows = Vec::new();
        let reports = eta_continuation_observed(mdp, &base, &a.etas, &opts, &mut |eta, rec, q| {
            rows.push(row(eta, rec, q))
        })?;
        (rows, reports.iter().map(|r| r.termination).collect::<Vec<_>>())
    } else {
        crate::solver::check_eta_path(&a.etas)?;
        let mode = if a.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let results = map_collect(mode, &a.etas, |&eta| -> Result<_> {
            let p = base.with_eta(eta)?;
            let mut rows = Vec::new();
            let q0 = feasible_init(mdp, opts.init_margin)?;
            let rep = solve_observed(mdp, &p, q0, &opts, &mut |rec, q| rows.push(row(eta, rec, q)))?;
            Ok((rows, rep.termination))
        });
        let mut rows = Vec::new();
        let mut terms = Vec::new();
        for r in results {
            let (mut part, t) = r?;
            rows.append(&mut part);
            terms.push(t);
        }
        (rows, terms)
    };
    fs::write(&a.csv, curve_csv(&rows))?;
    for (eta, t) in a.etas.iter().zip(&terminations) {
        info!("eta={eta}: {t:?}");
    }
    Ok(terminations
        .iter()
        .map(|t| termination_code(*t))
        .max()
        .unwrap_or(EXIT_OK))
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let mdp = a.env.build()?;
    write_output(&a.out, env::to_json(&mdp, None, None)?.as_str())?;
    Ok(EXIT_OK)
}
