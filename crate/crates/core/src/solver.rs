//! Gradient descent on the barrier objectives with every iterate kept
//! strictly inside the domain.
//!
//! Steps are accepted on an upper bound of the change in the objective
//! written in slack ratios, falling back to the exact ratio form, rather
//! than on a difference of two large objective values. Near convergence the
//! decrease is many orders of magnitude below the objective and a plain
//! difference would drown in rounding. The objective value itself is only
//! evaluated for recorded iterates.

use log::{debug, trace};
use serde::Serialize;

use crate::barrier::{
    BarrierParams, DualTensor, EvalBarrierParams, EvaluationBarrier, FirstOrder, OptimalityBarrier, PairDual,
};
use crate::error::{invalid, Error, Result};
use crate::mdp::{Mdp, PolicyStoch};
use crate::table::{QTable, TripleTable};

/// Smallest step length tried before the line search gives up.
pub const MIN_STEP: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepMode {
    /// Fixed step. A step that would leave the domain or raise the objective
    /// is halved until it does neither.
    Constant { step: f64 },
    /// Armijo backtracking after halving into the domain.
    Backtracking { initial: f64, shrink: f64, armijo: f64 },
}

impl Default for StepMode {
    fn default() -> Self {
        StepMode::Backtracking {
            initial: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub init_margin: f64,
    pub step_mode: StepMode,
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Record every iterate instead of every 100th and the last.
    pub record_history: bool,
    /// Store records in the report. When off they only reach the observer,
    /// which keeps memory flat on very long runs.
    pub keep_history: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            init_margin: 1.0,
            step_mode: StepMode::default(),
            grad_tol: 1e-8,
            max_iters: 200_000,
            record_history: false,
            keep_history: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_margin > 0.0 && self.init_margin.is_finite()) {
            return Err(invalid("init_margin", "must be finite and > 0"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(invalid("grad_tol", "must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be positive"));
        }
        match self.step_mode {
            StepMode::Constant { step } if !(step > 0.0 && step.is_finite()) => {
                Err(invalid("step", "must be finite and > 0"))
            }
            StepMode::Backtracking {
                initial,
                shrink,
                armijo,
            } => {
                if !(initial > 0.0 && initial.is_finite()) {
                    Err(invalid("initial step", "must be finite and > 0"))
                } else if !(shrink > 0.0 && shrink < 1.0) {
                    Err(invalid("shrink", "must lie in (0, 1)"))
                } else if !(armijo > 0.0 && armijo < 1.0) {
                    Err(invalid("armijo", "must lie in (0, 1)"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTolMet,
    MaxIters,
    LineSearchStalled,
}

impl Termination {
    pub fn converged(self) -> bool {
        self == Termination::GradTolMet
    }
}

/// One iterate. `step` is the step taken away from it and `decrease` a
/// certified upper bound on the resulting change in the objective; both
/// are zero for the final iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub f_value: f64,
    pub grad_inf_norm: f64,
    pub min_slack: f64,
    pub step: f64,
    pub decrease: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport<D> {
    pub eta: f64,
    pub q_tilde: QTable,
    pub lambda_tilde: D,
    pub iterations: usize,
    pub termination: Termination,
    pub final_grad_norm: f64,
    pub final_f_value: f64,
    pub min_slack: f64,
    pub grad_tol: f64,
    pub history: Vec<HistoryRecord>,
}

impl<D> SolverReport<D> {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Constant table `(r_max + margin) / (1 - gamma)`; every slack is at least
/// `margin`.
pub fn feasible_init(mdp: &Mdp, margin: f64) -> Result<QTable> {
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(invalid("margin", "must be finite and > 0"));
    }
    let v = (mdp.r_max() + margin) / (1.0 - mdp.gamma());
    Ok(QTable::filled(mdp.num_states(), mdp.num_actions(), v))
}

/// What the descent loop needs from an objective.
pub(crate) trait Descent {
    type Dual: Clone;
    type Slack: Clone;

    fn eta(&self) -> f64;
    fn first_order(&self, q: &QTable) -> Result<FirstOrder<Self::Dual, Self::Slack>>;
    /// As `first_order`, reusing the buffers of `out`.
    fn first_order_into(&self, q: &QTable, out: &mut FirstOrder<Self::Dual, Self::Slack>) -> Result<()> {
        *out = self.first_order(q)?;
        Ok(())
    }
    fn value(&self, q: &QTable, sl: &Self::Slack) -> f64;
    fn slack_direction(&self, g: &QTable) -> Self::Slack;
    fn slack_direction_into(&self, g: &QTable, out: &mut Self::Slack) {
        *out = self.slack_direction(g);
    }
    fn change_bound(&self, sl: &Self::Slack, dsl: &Self::Slack, step: f64, g2: f64) -> Option<f64>;
    fn change_exact(&self, sl: &Self::Slack, g: &QTable, dsl: &Self::Slack, step: f64) -> Option<f64>;
}

impl Descent for OptimalityBarrier<'_> {
    type Dual = DualTensor;
    type Slack = TripleTable;

    fn eta(&self) -> f64 {
        self.params().eta
    }

    fn first_order(&self, q: &QTable) -> Result<FirstOrder<DualTensor, TripleTable>> {
        OptimalityBarrier::first_order(self, q)
    }

    fn first_order_into(&self, q: &QTable, out: &mut FirstOrder<DualTensor, TripleTable>) -> Result<()> {
        OptimalityBarrier::first_order_into(self, q, out)
    }

    fn value(&self, q: &QTable, sl: &TripleTable) -> f64 {
        self.value_from_slack(q, sl)
    }

    fn slack_direction(&self, g: &QTable) -> TripleTable {
        OptimalityBarrier::slack_direction(self, g)
    }

    fn slack_direction_into(&self, g: &QTable, out: &mut TripleTable) {
        OptimalityBarrier::slack_direction_into(self, g, out)
    }

    fn change_bound(&self, sl: &TripleTable, dsl: &TripleTable, step: f64, g2: f64) -> Option<f64> {
        OptimalityBarrier::change_bound(self, sl, dsl, step, g2)
    }

    fn change_exact(&self, sl: &TripleTable, g: &QTable, dsl: &TripleTable, step: f64) -> Option<f64> {
        self.decrease_along(sl, g, dsl, step)
    }
}

impl Descent for EvaluationBarrier<'_> {
    type Dual = PairDual;
    type Slack = QTable;

    fn eta(&self) -> f64 {
        self.params().eta
    }

    fn first_order(&self, q: &QTable) -> Result<FirstOrder<PairDual, QTable>> {
        EvaluationBarrier::first_order(self, q)
    }

    fn value(&self, q: &QTable, sl: &QTable) -> f64 {
        self.value_from_slack(q, sl)
    }

    fn slack_direction(&self, g: &QTable) -> QTable {
        EvaluationBarrier::slack_direction(self, g)
    }

    fn change_bound(&self, sl: &QTable, dsl: &QTable, step: f64, g2: f64) -> Option<f64> {
        EvaluationBarrier::change_bound(self, sl, dsl, step, g2)
    }

    fn change_exact(&self, sl: &QTable, g: &QTable, dsl: &QTable, step: f64) -> Option<f64> {
        self.decrease_along(sl, g, dsl, step)
    }
}

fn l2_squared(g: &QTable) -> f64 {
    g.as_slice().iter().map(|v| v * v).sum()
}

/// `out = q - step * g`.
fn axpy_into(q: &QTable, step: f64, g: &QTable, out: &mut QTable) {
    for ((o, x), d) in out.as_mut_slice().iter_mut().zip(q.as_slice()).zip(g.as_slice()) {
        *o = x - step * d;
    }
}

/// Picks a step and returns it with a certified upper bound on the change
/// in the objective. `None` means the step underflowed.
///
/// The cheap bound is tried first; the exact slack-ratio change is
/// consulted only when the bound alone cannot accept the step.
fn line_search<O: Descent>(obj: &O, mode: StepMode, sl: &O::Slack, g: &QTable, dsl: &O::Slack) -> Option<(f64, f64)> {
    let (mut step, shrink, armijo) = match mode {
        StepMode::Constant { step } => (step, 0.5, 0.0),
        StepMode::Backtracking {
            initial,
            shrink,
            armijo,
        } => (initial, shrink, armijo),
    };
    let g2 = l2_squared(g);
    // feasibility guard first
    let mut bound = loop {
        if step < MIN_STEP {
            return None;
        }
        match obj.change_bound(sl, dsl, step, g2) {
            Some(b) => break b,
            None => step *= 0.5,
        }
    };
    loop {
        let threshold = -armijo * step * g2;
        if bound <= threshold {
            return Some((step, bound));
        }
        if let Some(exact) = obj.change_exact(sl, g, dsl, step) {
            if exact <= threshold {
                return Some((step, exact));
            }
        }
        step *= shrink;
        if step < MIN_STEP {
            return None;
        }
        bound = obj.change_bound(sl, dsl, step, g2)?;
    }
}

pub(crate) fn descend<O: Descent>(
    obj: &O,
    q0: QTable,
    opts: &SolverOptions,
    observer: &mut dyn FnMut(&HistoryRecord, &QTable),
) -> Result<SolverReport<O::Dual>> {
    opts.validate()?;
    let mut q = q0;
    let mut state = obj.first_order(&q)?;
    // buffers reused across iterations; accepted trials are swapped in
    let mut trial_q = q.clone();
    let mut trial = state.clone();
    let mut dsl = state.slack.clone();
    let mut termination = Termination::MaxIters;
    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        let gnorm = state.gradient.max_abs();
        let mut finished = gnorm <= opts.grad_tol || iteration >= opts.max_iters;
        if gnorm <= opts.grad_tol {
            termination = Termination::GradTolMet;
        }
        let mut step = 0.0;
        let mut change = 0.0;
        if !finished {
            obj.slack_direction_into(&state.gradient, &mut dsl);
            match line_search(obj, opts.step_mode, &state.slack, &state.gradient, &dsl) {
                Some((s, c)) => {
                    axpy_into(&q, s, &state.gradient, &mut trial_q);
                    match obj.first_order_into(&trial_q, &mut trial) {
                        Ok(()) => {
                            step = s;
                            change = c;
                        }
                        // the ratio test and the recomputed slack can only
                        // disagree within rounding at the boundary
                        Err(Error::OutOfDomain { .. }) => {
                            termination = Termination::LineSearchStalled;
                            finished = true;
                        }
                        Err(e) => return Err(e),
                    }
                }
                None => {
                    termination = Termination::LineSearchStalled;
                    finished = true;
                }
            }
        }
        if finished || opts.record_history || iteration % 100 == 0 {
            let record = HistoryRecord {
                iteration,
                f_value: obj.value(&q, &state.slack),
                grad_inf_norm: gnorm,
                min_slack: state.min_slack,
                step,
                decrease: change,
            };
            trace!(
                "iter {iteration}: f={:.15e} |g|={gnorm:.3e} step={step:.3e} min_slack={:.3e}",
                record.f_value,
                record.min_slack
            );
            if opts.keep_history {
                history.push(record);
            }
            observer(&record, &q);
        }
        if finished {
            break;
        }
        std::mem::swap(&mut q, &mut trial_q);
        std::mem::swap(&mut state, &mut trial);
        iteration += 1;
    }
    let final_grad_norm = state.gradient.max_abs();
    let final_f_value = obj.value(&q, &state.slack);
    debug!(
        "eta={} finished after {iteration} iterations: {:?}, |g|={final_grad_norm:.3e}",
        obj.eta(),
        termination
    );
    Ok(SolverReport {
        eta: obj.eta(),
        q_tilde: q,
        lambda_tilde: state.dual,
        iterations: iteration,
        termination,
        final_grad_norm,
        final_f_value,
        min_slack: state.min_slack,
        grad_tol: opts.grad_tol,
        history,
    })
}

/// Minimizes `f_eta` from the constant feasible start.
pub fn solve(mdp: &Mdp, p: &BarrierParams, opts: &SolverOptions) -> Result<SolverReport<DualTensor>> {
    let q0 = feasible_init(mdp, opts.init_margin)?;
    solve_from(mdp, p, q0, opts)
}

/// Minimizes `f_eta` from a caller-supplied interior point.
pub fn solve_from(mdp: &Mdp, p: &BarrierParams, q0: QTable, opts: &SolverOptions) -> Result<SolverReport<DualTensor>> {
    solve_observed(mdp, p, q0, opts, &mut |_, _| {})
}

/// As [`solve_from`], handing every recorded iterate to `observer`.
pub fn solve_observed(
    mdp: &Mdp,
    p: &BarrierParams,
    q0: QTable,
    opts: &SolverOptions,
    observer: &mut dyn FnMut(&HistoryRecord, &QTable),
) -> Result<SolverReport<DualTensor>> {
    let obj = OptimalityBarrier::new(mdp, p)?;
    descend(&obj, q0, opts, observer)
}

/// Minimizes the policy-evaluation barrier `f_eta^pi`.
pub fn solve_policy_eval(
    mdp: &Mdp,
    pi: &PolicyStoch,
    p: &EvalBarrierParams,
    opts: &SolverOptions,
) -> Result<SolverReport<PairDual>> {
    let obj = EvaluationBarrier::new(mdp, pi, p)?;
    let q0 = feasible_init(mdp, opts.init_margin)?;
    descend(&obj, q0, opts, &mut |_, _| {})
}

/// Solves along a strictly decreasing `eta` path, starting each stage from
/// the previous minimizer. The domain does not depend on `eta`, so every
/// warm start is interior.
pub fn eta_continuation(
    mdp: &Mdp,
    base: &BarrierParams,
    etas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SolverReport<DualTensor>>> {
    eta_continuation_observed(mdp, base, etas, opts, &mut |_, _, _| {})
}

/// As [`eta_continuation`]; the observer also receives the stage's `eta`.
pub fn eta_continuation_observed(
    mdp: &Mdp,
    base: &BarrierParams,
    etas: &[f64],
    opts: &SolverOptions,
    observer: &mut dyn FnMut(f64, &HistoryRecord, &QTable),
) -> Result<Vec<SolverReport<DualTensor>>> {
    check_eta_path(etas)?;
    let mut reports: Vec<SolverReport<DualTensor>> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let p = base.with_eta(eta)?;
        let q0 = match reports.last() {
            Some(prev) => prev.q_tilde.clone(),
            None => feasible_init(mdp, opts.init_margin)?,
        };
        let report = solve_observed(mdp, &p, q0, opts, &mut |r, q| observer(eta, r, q))?;
        reports.push(report);
    }
    Ok(reports)
}

pub(crate) fn check_eta_path(etas: &[f64]) -> Result<()> {
    if etas.is_empty() {
        return Err(invalid("etas", "need at least one value"));
    }
    if etas.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(invalid("etas", "values must be finite and > 0"));
    }
    if etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("etas", "must be strictly decreasing"));
    }
    Ok(())
}
