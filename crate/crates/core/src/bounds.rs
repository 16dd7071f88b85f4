//! Policies induced by a barrier solution, and machine-checked sandwich
//! certificates for the error bounds of the barrier minimizer.
//!
//! Every certificate carries the tolerance it was checked with. For the
//! optimality problem the tolerance is
//! `vi_tol (1 + gamma) / (1 - gamma) + kappa grad_tol` with
//! `kappa = |S| |A|^2 max w / min w`: the first term covers the oracle's
//! distance to `Q*`, the second the gap between a finite-precision
//! stationary point and the exact minimizer. Policy evaluation uses
//! `kappa = |S| |A| max w / min w` and the linear-solve residual in place
//! of `vi_tol`.

use serde::Serialize;

use crate::barrier::{BarrierParams, DualTensor, EvalBarrierParams, PairDual};
use crate::error::{Error, Result};
use crate::mdp::{bellman_t, bellman_t_pi, greedy, Mdp, PolicyDet, PolicyStoch};
use crate::oracle::{j_from_q, policy_q, LINEAR_SOLVE_TOL};
use crate::solver::SolverReport;
use crate::table::QTable;

/// Largest disagreement tolerated between a supplied state distribution and
/// the state marginal of `rho`.
pub const STATE_MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub name: String,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub slack_tolerance: f64,
}

impl BoundCertificate {
    /// Lower bounds are checked non-strictly.
    pub fn new(name: impl Into<String>, lower: f64, value: f64, upper: f64, slack_tolerance: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            value,
            upper,
            lower_ok: value >= lower - slack_tolerance,
            upper_ok: value <= upper + slack_tolerance,
            slack_tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// Greedy policy of `q`; ties go to the lowest action index.
pub fn primal_policy(q: &QTable) -> PolicyDet {
    greedy(q)
}

/// Normalized action marginals `lambda(s,a) / sum_a lambda(s,a)`.
pub fn dual_policy(lambda: &DualTensor) -> Result<PolicyStoch> {
    normalize_rows(&lambda.action_marginal())
}

/// Normalized rows of a policy-evaluation dual.
pub fn pair_dual_policy(lambda: &PairDual) -> Result<PolicyStoch> {
    normalize_rows(lambda.table())
}

fn normalize_rows(pair: &QTable) -> Result<PolicyStoch> {
    let mut out = pair.clone();
    for s in 0..pair.num_states() {
        let total: f64 = pair.row(s).iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateState { state: s });
        }
        for a in 0..pair.num_actions() {
            out.set(s, a, pair.get(s, a) / total);
        }
    }
    Ok(PolicyStoch::from_table_unchecked(out))
}

fn require_converged<D>(report: &SolverReport<D>) -> Result<()> {
    if !report.converged() || !(report.final_grad_norm <= report.grad_tol) {
        return Err(Error::Precondition(format!(
            "solve did not converge ({:?}, gradient norm {:e} against tolerance {:e})",
            report.termination, report.final_grad_norm, report.grad_tol
        )));
    }
    Ok(())
}

fn check_reference(q_tilde: &QTable, reference: &QTable, what: &str) -> Result<()> {
    if !q_tilde.same_shape(reference) {
        return Err(Error::Precondition(format!("{what} has the wrong shape")));
    }
    Ok(())
}

/// Tolerance for the optimality certificates.
pub fn optimality_tolerance(mdp: &Mdp, p: &BarrierParams, vi_tol: f64, grad_tol: f64) -> f64 {
    let gamma = mdp.gamma();
    let kappa = (mdp.num_states() * mdp.num_actions() * mdp.num_actions()) as f64 * p.weights.max() / p.weights.min();
    vi_tol * (1.0 + gamma) / (1.0 - gamma) + kappa * grad_tol
}

/// Tolerance for the policy-evaluation certificates.
pub fn evaluation_tolerance(mdp: &Mdp, p: &EvalBarrierParams, grad_tol: f64) -> f64 {
    let gamma = mdp.gamma();
    let kappa = (mdp.num_states() * mdp.num_actions()) as f64 * p.weights.max() / p.weights.min();
    LINEAR_SOLVE_TOL * (1.0 + gamma) / (1.0 - gamma) + kappa * grad_tol
}

/// Distance and Bellman-error sandwiches for the barrier minimizer:
///
/// * `eta min w <= ||Q~ - Q*|| <= eta sum w / min rho`
/// * `(1 - gamma) eta min w <= ||Q~ - TQ~|| <= (1 + gamma) eta sum w / min rho`
pub fn certify_optimality(
    report: &SolverReport<DualTensor>,
    q_star: &QTable,
    vi_tol: f64,
    mdp: &Mdp,
    p: &BarrierParams,
) -> Result<[BoundCertificate; 2]> {
    require_converged(report)?;
    check_reference(&report.q_tilde, q_star, "Q*")?;
    let q = &report.q_tilde;
    let tol = optimality_tolerance(mdp, p, vi_tol, report.grad_tol);
    let gamma = mdp.gamma();
    let (eta, wmin, wsum, rmin) = (p.eta, p.weights.min(), p.weights.sum(), p.rho.min());
    let bellman = q.sup_distance(&bellman_t(mdp, q)?);
    Ok([
        BoundCertificate::new("q_error", eta * wmin, q.sup_distance(q_star), eta * wsum / rmin, tol),
        BoundCertificate::new(
            "bellman_error",
            (1.0 - gamma) * eta * wmin,
            bellman,
            (1.0 + gamma) * eta * wsum / rmin,
            tol,
        ),
    ])
}

/// Objective values of the two induced policies against the optimum, with
/// `C = eta (1 + gamma) sum w / ((1 - gamma) min rho)`:
///
/// * `J* - eta sum w <= J(dual policy) <= J*`
/// * `J* - C <= J(primal policy) <= J*`
/// * `-C <= J(primal) - J(dual) <= eta sum w`
///
/// `rho_state` must be the state marginal of `rho`. `J*` is the exact value
/// of the greedy policy of `q_star`.
pub fn certify_policy_values(
    report: &SolverReport<DualTensor>,
    q_star: &QTable,
    vi_tol: f64,
    mdp: &Mdp,
    p: &BarrierParams,
    rho_state: &[f64],
) -> Result<[BoundCertificate; 3]> {
    require_converged(report)?;
    check_reference(&report.q_tilde, q_star, "Q*")?;
    let marginal = p.rho.state_marginal();
    if rho_state.len() != marginal.len()
        || rho_state
            .iter()
            .zip(&marginal)
            .any(|(a, b)| !((a - b).abs() <= STATE_MARGINAL_TOL))
    {
        return Err(Error::Precondition(
            "state distribution differs from the state marginal of rho".into(),
        ));
    }
    let na = mdp.num_actions();
    let optimal = greedy(q_star).to_stochastic(na);
    let dual = dual_policy(&report.lambda_tilde)?;
    let primal = primal_policy(&report.q_tilde).to_stochastic(na);
    let value = |pi: &PolicyStoch| -> Result<f64> { Ok(j_from_q(pi, &policy_q(mdp, pi)?, rho_state)) };
    let j_star = value(&optimal)?;
    let j_dual = value(&dual)?;
    let j_primal = value(&primal)?;

    let gamma = mdp.gamma();
    let (eta, wsum, rmin) = (p.eta, p.weights.sum(), p.rho.min());
    let c = eta * (1.0 + gamma) * wsum / ((1.0 - gamma) * rmin);
    let tol = optimality_tolerance(mdp, p, vi_tol, report.grad_tol) + LINEAR_SOLVE_TOL / (1.0 - gamma);
    Ok([
        BoundCertificate::new("dual_policy_value", j_star - eta * wsum, j_dual, j_star, tol),
        BoundCertificate::new("primal_policy_value", j_star - c, j_primal, j_star, tol),
        BoundCertificate::new("policy_value_gap", -c, j_primal - j_dual, eta * wsum, 2.0 * tol),
    ])
}

/// Sandwiches for the policy-evaluation minimizer against `Q^pi`:
///
/// * `eta min w <= ||Q~ - Q^pi|| <= eta sum w / min rho`
/// * `(1 - gamma) eta min w <= ||Q~ - T^pi Q~|| <= (1 + gamma) eta sum w / min rho`
pub fn certify_policy_eval(
    report: &SolverReport<PairDual>,
    q_pi: &QTable,
    mdp: &Mdp,
    pi: &PolicyStoch,
    p: &EvalBarrierParams,
) -> Result<[BoundCertificate; 2]> {
    require_converged(report)?;
    check_reference(&report.q_tilde, q_pi, "Q^pi")?;
    let q = &report.q_tilde;
    let tol = evaluation_tolerance(mdp, p, report.grad_tol);
    let gamma = mdp.gamma();
    let (eta, wmin, wsum, rmin) = (p.eta, p.weights.min(), p.weights.sum(), p.rho.min());
    let bellman = q.sup_distance(&bellman_t_pi(mdp, pi, q)?);
    Ok([
        BoundCertificate::new(
            "policy_eval_q_error",
            eta * wmin,
            q.sup_distance(q_pi),
            eta * wsum / rmin,
            tol,
        ),
        BoundCertificate::new(
            "policy_eval_bellman_error",
            (1.0 - gamma) * eta * wmin,
            bellman,
            (1.0 + gamma) * eta * wsum / rmin,
            tol,
        ),
    ])
}
