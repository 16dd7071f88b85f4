//! Dynamic-programming ground truth the barrier solver is checked against:
//! value iteration, exact policy evaluation by a dense linear solve, exact
//! objective values, and dual-feasibility and occupancy verifiers.
//!
//! Nothing here touches the barrier code paths; the dual verifiers loop over
//! the dense transition tensor instead of the sparse adjacency lists the
//! solver uses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{DualTensor, PairDual};
use crate::error::{invalid, Error, Result};
use crate::mdp::{bellman_t, bellman_t_pi, DistributionRho, Mdp, PolicyStoch};
use crate::table::{QTable, TripleTable};

/// Residual ceiling for the exact linear solves.
pub const LINEAR_SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTolerances {
    pub vi_tol: f64,
    pub max_iters: usize,
}

impl OracleTolerances {
    pub fn new(vi_tol: f64, max_iters: usize) -> Result<Self> {
        if !(vi_tol > 0.0) {
            return Err(invalid("vi_tol", format!("must be > 0, got {vi_tol}")));
        }
        if max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        Ok(Self { vi_tol, max_iters })
    }
}

impl Default for OracleTolerances {
    fn default() -> Self {
        Self {
            vi_tol: 1e-12,
            max_iters: 1_000_000,
        }
    }
}

fn fixed_point(mdp: &Mdp, tol: OracleTolerances, mut step: impl FnMut(&QTable) -> Result<QTable>) -> Result<QTable> {
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..tol.max_iters {
        let next = step(&q)?;
        residual = q.sup_distance(&next);
        if residual <= tol.vi_tol {
            // one more application keeps the residual of the returned table below tol
            return Ok(next);
        }
        q = next;
    }
    Err(Error::NotConverged {
        iterations: tol.max_iters,
        residual,
    })
}

/// `Q*` by value iteration from zero; stops once `||Q - TQ|| <= vi_tol`.
pub fn value_iteration(mdp: &Mdp, tol: OracleTolerances) -> Result<QTable> {
    fixed_point(mdp, tol, |q| bellman_t(mdp, q))
}

/// Solution of the primal LP `min sum rho Q  s.t.  Q >= FQ`, obtained as the
/// fixed point of `Q -> max_a' FQ(., ., a')`.
///
/// This coincides with `Q*` whenever every state-action pair has a single
/// successor. With stochastic transitions `max_a' FQ <= TQ`, so the LP
/// solution lies entrywise below `Q*` and the barrier minimizer converges
/// to this table rather than to `Q*` as `eta -> 0`.
pub fn lp_optimum(mdp: &Mdp, tol: OracleTolerances) -> Result<QTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let r = mdp.expected_reward().clone();
    fixed_point(mdp, tol, |q| {
        Ok(QTable::from_fn(ns, na, |s, a| {
            let best = (0..na)
                .map(|b| (0..ns).map(|next| mdp.p(s, a, next) * q.get(next, b)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            r.get(s, a) + gamma * best
        }))
    })
}

fn solve_dense(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(&b).ok_or_else(|| Error::Singular {
        pivot: first_zero_pivot(&lu),
    })?;
    // one step of iterative refinement
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(x)
}

fn first_zero_pivot(lu: &nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> usize {
    let u = lu.u();
    (0..u.nrows()).find(|&i| u[(i, i)] == 0.0).unwrap_or(0)
}

/// `Q^pi` from `(I - gamma P^pi) Q = R` by LU with partial pivoting.
pub fn policy_q(mdp: &Mdp, pi: &PolicyStoch) -> Result<QTable> {
    pi.table().check_shape(mdp.num_states(), mdp.num_actions(), "policy")?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let n = ns * na;
    let gamma = mdp.gamma();
    let mut m = DMatrix::<f64>::identity(n, n);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for next in 0..ns {
                let p = mdp.p(s, a, next);
                if p == 0.0 {
                    continue;
                }
                for b in 0..na {
                    m[(row, next * na + b)] -= gamma * p * pi.prob(next, b);
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(mdp.expected_reward().as_slice());
    let x = solve_dense(m, rhs)?;
    let q = QTable::from_vec(ns, na, x.as_slice().to_vec())?;
    let residual = q.sup_distance(&bellman_t_pi(mdp, pi, &q)?);
    if !(residual <= LINEAR_SOLVE_TOL) {
        return Err(Error::NotConverged {
            iterations: 1,
            residual,
        });
    }
    Ok(q)
}

fn check_state_distribution(mdp: &Mdp, rho_state: &[f64]) -> Result<()> {
    if rho_state.len() != mdp.num_states() {
        return Err(Error::Shape {
            what: "state distribution",
            expected: format!("{} entries", mdp.num_states()),
            got: format!("{} entries", rho_state.len()),
        });
    }
    if rho_state.iter().any(|p| !(*p >= 0.0)) {
        return Err(invalid("state distribution", "entries must be >= 0"));
    }
    let total: f64 = rho_state.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(invalid("state distribution", format!("sums to {total}, not 1")));
    }
    Ok(())
}

/// `J^pi = sum_s rho(s) sum_a pi(a|s) Q^pi(s,a)`.
pub fn exact_j(mdp: &Mdp, pi: &PolicyStoch, rho_state: &[f64]) -> Result<f64> {
    check_state_distribution(mdp, rho_state)?;
    let q = policy_q(mdp, pi)?;
    Ok(j_from_q(pi, &q, rho_state))
}

pub(crate) fn j_from_q(pi: &PolicyStoch, q: &QTable, rho_state: &[f64]) -> f64 {
    let mut j = 0.0;
    for (s, weight) in rho_state.iter().enumerate() {
        let v: f64 = (0..q.num_actions()).map(|a| pi.prob(s, a) * q.get(s, a)).sum();
        j += weight * v;
    }
    j
}

/// Dual flow-balance residual
/// `rho(s,a) - sum_a' lambda(s,a,a') + gamma sum_{s',a'} P(s|s',a') lambda(s',a',a)`.
///
/// The sign matches the barrier gradient, so the residual at `lambda_eta(Q)`
/// equals `grad f_eta(Q)` and vanishes exactly on the dual-feasible set.
pub fn dual_residual(mdp: &Mdp, lambda: &DualTensor, rho: &DistributionRho) -> Result<QTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    lambda.table().check_shape(ns, na, "dual tensor")?;
    rho.table().check_shape(ns, na, "rho")?;
    let gamma = mdp.gamma();
    Ok(QTable::from_fn(ns, na, |s, a| {
        let outflow: f64 = (0..na).map(|b| lambda.get(s, a, b)).sum();
        let mut inflow = 0.0;
        for prev in 0..ns {
            for prev_a in 0..na {
                inflow += mdp.p(prev, prev_a, s) * lambda.get(prev, prev_a, a);
            }
        }
        rho.get(s, a) - outflow + gamma * inflow
    }))
}

/// Flow-balance residual of the policy-evaluation dual
/// `rho(s,a) - lambda(s,a) + gamma pi(a|s) sum_{s',a'} P(s|s',a') lambda(s',a')`.
pub fn policy_dual_residual(mdp: &Mdp, pi: &PolicyStoch, lambda: &PairDual, rho: &DistributionRho) -> Result<QTable> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    lambda.table().check_shape(ns, na, "dual table")?;
    rho.table().check_shape(ns, na, "rho")?;
    pi.table().check_shape(ns, na, "policy")?;
    let gamma = mdp.gamma();
    Ok(QTable::from_fn(ns, na, |s, a| {
        let mut inflow = 0.0;
        for prev in 0..ns {
            for prev_a in 0..na {
                inflow += mdp.p(prev, prev_a, s) * lambda.get(prev, prev_a);
            }
        }
        rho.get(s, a) - lambda.get(s, a) + gamma * pi.prob(s, a) * inflow
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OccupancyReport {
    /// `|(1 - gamma) sum lambda - 1|`
    pub mass_deviation: f64,
    /// `max_s |lambda(s) - mu(s) / (1 - gamma)|` for the policy induced by `lambda`
    pub occupancy_deviation: f64,
    /// Largest flow-balance residual, checked against the caller's tolerance.
    pub max_residual: f64,
}

/// Checks the probability-mass and occupancy identities satisfied by every
/// dual-feasible `lambda`. Refuses when `lambda` is not feasible to within
/// `tau`, where the identities carry no meaning.
pub fn occupancy_check(mdp: &Mdp, lambda: &DualTensor, rho: &DistributionRho, tau: f64) -> Result<OccupancyReport> {
    let residual = dual_residual(mdp, lambda, rho)?;
    let max_residual = residual.max_abs();
    if !(max_residual <= tau) {
        return Err(Error::Precondition(format!(
            "dual residual {max_residual:e} exceeds tolerance {tau:e}"
        )));
    }
    let gamma = mdp.gamma();
    let mass_deviation = ((1.0 - gamma) * lambda.total() - 1.0).abs();

    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let pair = lambda.action_marginal();
    let state_mass: Vec<f64> = (0..ns).map(|s| pair.row(s).iter().sum()).collect();
    if let Some(state) = state_mass.iter().position(|m| !(*m > 0.0)) {
        return Err(Error::DegenerateState { state });
    }

    // d = rho_state + gamma P_pi^T d, with pi(a|s) = lambda(s,a) / lambda(s)
    let rho_state = rho.state_marginal();
    let mut m = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = pair.get(s, a) / state_mass[s];
            for next in 0..ns {
                m[(next, s)] -= gamma * pa * mdp.p(s, a, next);
            }
        }
    }
    let d = solve_dense(m, DVector::from_vec(rho_state))?;
    let occupancy_deviation = state_mass
        .iter()
        .zip(d.iter())
        .fold(0.0_f64, |acc, (l, o)| acc.max((l - o).abs()));
    Ok(OccupancyReport {
        mass_deviation,
        occupancy_deviation,
        max_residual,
    })
}

/// Exactly dual-feasible `lambda` built from a policy.
///
/// The constraint only pins the action marginals, so the next-action factor
/// is a choice: mass leaving `(s,a)` is credited to next action `a'` with
/// probability `pi(a'|s)`. The resulting linear system
/// `lambda(s,a) = rho(s,a) + gamma sum P(s|s',a') pi(a|s') lambda(s',a')`
/// has a column-stochastic transition and a unique nonnegative solution.
pub fn feasible_dual_from_policy(mdp: &Mdp, pi: &PolicyStoch, rho: &DistributionRho) -> Result<DualTensor> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    pi.table().check_shape(ns, na, "policy")?;
    rho.table().check_shape(ns, na, "rho")?;
    let n = ns * na;
    let gamma = mdp.gamma();
    let mut m = DMatrix::<f64>::identity(n, n);
    for prev in 0..ns {
        for prev_a in 0..na {
            let col = prev * na + prev_a;
            for s in 0..ns {
                let p = mdp.p(prev, prev_a, s);
                if p == 0.0 {
                    continue;
                }
                for a in 0..na {
                    m[(s * na + a, col)] -= gamma * p * pi.prob(prev, a);
                }
            }
        }
    }
    let x = solve_dense(m, DVector::from_column_slice(rho.table().as_slice()))?;
    let table = TripleTable::from_fn(ns, na, |s, a, b| x[s * na + a].max(0.0) * pi.prob(s, b));
    DualTensor::new(table)
}
