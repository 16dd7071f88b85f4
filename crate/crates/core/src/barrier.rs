//! The log-barrier objective over the Q-function LP and everything derived
//! from it: domain membership, value, gradient, Hessian, the induced dual
//! variables, the policy-evaluation variant, the Jensen upper surrogate and
//! the piecewise practical loss.
//!
//! For a table `Q`, the slack of constraint `(s,a,a')` is
//! `Q(s,a) - (FQ)(s,a,a')` and the domain is the set where every slack is
//! strictly positive. Barrier terms are `-ln(slack)`; a nonpositive slack is
//! always reported as an error, never as an infinite value.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, ConstraintIndex, Error, Result};
use crate::mdp::{policy_values, DistributionRho, Mdp, PairWeights, PolicyStoch, Weights};
use crate::table::{QTable, TripleTable};

/// Barrier weight `eta`, constraint weights and the LP objective weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierParams {
    pub eta: f64,
    pub weights: Weights,
    pub rho: DistributionRho,
}

impl BarrierParams {
    pub fn new(eta: f64, weights: Weights, rho: DistributionRho) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and > 0, got {eta}")));
        }
        if weights.table().num_states() != rho.table().num_states()
            || weights.table().num_actions() != rho.table().num_actions()
        {
            return Err(invalid("barrier params", "weights and rho disagree on shape"));
        }
        Ok(Self { eta, weights, rho })
    }

    /// Unit weights and uniform `rho`.
    pub fn standard(mdp: &Mdp, eta: f64) -> Result<Self> {
        Self::new(
            eta,
            Weights::ones(mdp.num_states(), mdp.num_actions()),
            DistributionRho::uniform(mdp.num_states(), mdp.num_actions()),
        )
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(eta, self.weights.clone(), self.rho.clone())
    }

    fn check(&self, mdp: &Mdp) -> Result<()> {
        self.weights
            .table()
            .check_shape(mdp.num_states(), mdp.num_actions(), "weights")?;
        self.rho.table().check_shape(mdp.num_states(), mdp.num_actions(), "rho")
    }
}

/// Parameters of the policy-evaluation barrier, whose constraints are
/// indexed by `(s,a)` only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalBarrierParams {
    pub eta: f64,
    pub weights: PairWeights,
    pub rho: DistributionRho,
}

impl EvalBarrierParams {
    pub fn new(eta: f64, weights: PairWeights, rho: DistributionRho) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and > 0, got {eta}")));
        }
        if weights.table().num_states() != rho.table().num_states()
            || weights.table().num_actions() != rho.table().num_actions()
        {
            return Err(invalid("barrier params", "weights and rho disagree on shape"));
        }
        Ok(Self { eta, weights, rho })
    }

    pub fn standard(mdp: &Mdp, eta: f64) -> Result<Self> {
        Self::new(
            eta,
            PairWeights::ones(mdp.num_states(), mdp.num_actions()),
            DistributionRho::uniform(mdp.num_states(), mdp.num_actions()),
        )
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::new(eta, self.weights.clone(), self.rho.clone())
    }

    fn check(&self, mdp: &Mdp) -> Result<()> {
        self.weights
            .table()
            .check_shape(mdp.num_states(), mdp.num_actions(), "weights")?;
        self.rho.table().check_shape(mdp.num_states(), mdp.num_actions(), "rho")
    }
}

/// Shift `epsilon` and infeasibility slope `nu` of the piecewise loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PracticalLossParams {
    pub epsilon: f64,
    pub nu: f64,
}

impl PracticalLossParams {
    pub fn new(epsilon: f64, nu: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(nu > 0.0) {
            return Err(invalid("practical loss", "epsilon and nu must be > 0"));
        }
        Ok(Self { epsilon, nu })
    }
}

impl Default for PracticalLossParams {
    fn default() -> Self {
        Self { epsilon: 1e-6, nu: 1e3 }
    }
}

/// Nonnegative dual variables `lambda(s,a,a')`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DualTensor(TripleTable);

impl DualTensor {
    pub fn new(table: TripleTable) -> Result<Self> {
        if let Some(v) = table.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(
                "dual tensor",
                format!("entries must be finite and >= 0, found {v}"),
            ));
        }
        Ok(Self(table))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.0.get(s, a, b)
    }

    pub fn table(&self) -> &TripleTable {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.0.num_actions()
    }

    /// `lambda(s,a) = sum_a' lambda(s,a,a')`.
    pub fn action_marginal(&self) -> QTable {
        self.0.marginal()
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

/// Nonnegative dual variables `lambda(s,a)` of the policy-evaluation LP.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PairDual(QTable);

impl PairDual {
    pub fn new(table: QTable) -> Result<Self> {
        if let Some(v) = table.as_slice().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(
                "dual table",
                format!("entries must be finite and >= 0, found {v}"),
            ));
        }
        Ok(Self(table))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &QTable {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.sum()
    }
}

/// `Q(s,a) - (FQ)(s,a,a')` for every triple.
pub fn slack(mdp: &Mdp, q: &QTable) -> Result<TripleTable> {
    mdp.check_q(q)?;
    let r = mdp.expected_reward().as_slice();
    let out = lookahead_gap(mdp, q, |idx| q.as_slice()[idx] - r[idx]);
    TripleTable::from_vec(mdp.num_states(), mdp.num_actions(), out)
}

/// `base(s,a) - gamma sum_s' P(s'|s,a) q(s',a')` over all triples, with the
/// expectation summed in ascending `s'` order.
#[inline]
fn lookahead_gap(mdp: &Mdp, q: &QTable, base: impl Fn(usize) -> f64) -> Vec<f64> {
    let na = mdp.num_actions();
    let mut out = vec![0.0; mdp.num_states() * na * na];
    lookahead_gap_into(mdp, q.as_slice(), base, &mut out);
    out
}

fn lookahead_gap_into(mdp: &Mdp, qv: &[f64], base: impl Fn(usize) -> f64, out: &mut [f64]) {
    // fixed lane widths let the compiler unroll; the arithmetic is identical
    match mdp.num_actions() {
        2 => lookahead_fixed::<2>(mdp, qv, base, out),
        3 => lookahead_fixed::<3>(mdp, qv, base, out),
        4 => lookahead_fixed::<4>(mdp, qv, base, out),
        na => lookahead_any(mdp, na, qv, base, out),
    }
}

#[inline(always)]
fn lookahead_fixed<const N: usize>(mdp: &Mdp, qv: &[f64], base: impl Fn(usize) -> f64, out: &mut [f64]) {
    let gamma = mdp.gamma();
    for (idx, lane) in out.chunks_exact_mut(N).enumerate() {
        let mut acc = [0.0; N];
        for &(next, p) in mdp.successors_at(idx) {
            let row: &[f64; N] = qv[next * N..(next + 1) * N].try_into().expect("lane width");
            for k in 0..N {
                acc[k] += p * row[k];
            }
        }
        let b = base(idx);
        for k in 0..N {
            lane[k] = b - gamma * acc[k];
        }
    }
}

fn lookahead_any(mdp: &Mdp, na: usize, qv: &[f64], base: impl Fn(usize) -> f64, out: &mut [f64]) {
    let gamma = mdp.gamma();
    for (idx, lane) in out.chunks_exact_mut(na).enumerate() {
        lane.fill(0.0);
        for &(next, p) in mdp.successors_at(idx) {
            for (x, v) in lane.iter_mut().zip(&qv[next * na..(next + 1) * na]) {
                *x += p * v;
            }
        }
        let b = base(idx);
        for x in lane.iter_mut() {
            *x = b - gamma * *x;
        }
    }
}

/// `grad += sum over pairs of P(s|pair) lambda(pair, .)` scattered into the
/// successor rows, pairs in ascending order.
fn scatter_inflow(mdp: &Mdp, lambda: &[f64], grad: &mut [f64]) {
    match mdp.num_actions() {
        2 => scatter_fixed::<2>(mdp, lambda, grad),
        3 => scatter_fixed::<3>(mdp, lambda, grad),
        4 => scatter_fixed::<4>(mdp, lambda, grad),
        na => {
            for (idx, lane) in lambda.chunks_exact(na).enumerate() {
                for &(s, p) in mdp.successors_at(idx) {
                    for (x, l) in grad[s * na..(s + 1) * na].iter_mut().zip(lane) {
                        *x += p * l;
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn scatter_fixed<const N: usize>(mdp: &Mdp, lambda: &[f64], grad: &mut [f64]) {
    for (idx, lane) in lambda.chunks_exact(N).enumerate() {
        let lane: &[f64; N] = lane.try_into().expect("lane width");
        for &(s, p) in mdp.successors_at(idx) {
            let row: &mut [f64; N] = (&mut grad[s * N..(s + 1) * N]).try_into().expect("lane width");
            for k in 0..N {
                row[k] += p * lane[k];
            }
        }
    }
}

fn min_slack_index(table: &TripleTable) -> (ConstraintIndex, f64) {
    let na = table.num_actions();
    let mut best = (0, f64::INFINITY);
    for (i, &v) in table.as_slice().iter().enumerate() {
        // NaN slack counts as the most violated
        if v.is_nan() {
            best = (i, f64::NAN);
            break;
        }
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i, v) = best;
    (
        ConstraintIndex::Triple {
            state: i / (na * na),
            action: (i / na) % na,
            next_action: i % na,
        },
        v,
    )
}

fn domain_error(table: &TripleTable) -> Option<Error> {
    let (index, min) = min_slack_index(table);
    if min > 0.0 {
        None
    } else {
        Some(Error::OutOfDomain { index, slack: min })
    }
}

/// Domain membership and the smallest slack.
pub fn in_domain(mdp: &Mdp, q: &QTable) -> Result<(bool, f64)> {
    let sl = slack(mdp, q)?;
    let (_, min) = min_slack_index(&sl);
    Ok((min > 0.0, min))
}

/// Value, gradient and duals at one interior point.
#[derive(Debug, Clone)]
pub struct Evaluation<D> {
    pub value: f64,
    pub gradient: QTable,
    pub dual: D,
    pub min_slack: f64,
}

/// The barrier objective for the optimality LP, bound to one model.
#[derive(Debug, Clone, Copy)]
pub struct OptimalityBarrier<'a> {
    mdp: &'a Mdp,
    params: &'a BarrierParams,
}

impl<'a> OptimalityBarrier<'a> {
    pub fn new(mdp: &'a Mdp, params: &'a BarrierParams) -> Result<Self> {
        params.check(mdp)?;
        Ok(Self { mdp, params })
    }

    pub fn mdp(&self) -> &'a Mdp {
        self.mdp
    }

    pub fn params(&self) -> &'a BarrierParams {
        self.params
    }

    pub fn slack(&self, q: &QTable) -> Result<TripleTable> {
        slack(self.mdp, q)
    }

    fn interior_slack(&self, q: &QTable) -> Result<TripleTable> {
        let sl = slack(self.mdp, q)?;
        match domain_error(&sl) {
            Some(e) => Err(e),
            None => Ok(sl),
        }
    }

    /// Objective value from a slack table known to be interior.
    pub(crate) fn value_from_slack(&self, q: &QTable, sl: &TripleTable) -> f64 {
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        let mut linear = 0.0;
        let mut barrier = 0.0;
        for s in 0..ns {
            for a in 0..na {
                linear += self.params.rho.get(s, a) * q.get(s, a);
                for b in 0..na {
                    barrier -= self.params.weights.get(s, a, b) * sl.get(s, a, b).ln();
                }
            }
        }
        linear + self.params.eta * barrier
    }

    fn dual_from_slack(&self, sl: &TripleTable) -> TripleTable {
        let eta = self.params.eta;
        TripleTable::from_fn(self.mdp.num_states(), self.mdp.num_actions(), |s, a, b| {
            eta * self.params.weights.get(s, a, b) / sl.get(s, a, b)
        })
    }

    pub fn value(&self, q: &QTable) -> Result<f64> {
        let sl = self.interior_slack(q)?;
        Ok(self.value_from_slack(q, &sl))
    }

    pub fn lambda(&self, q: &QTable) -> Result<DualTensor> {
        let sl = self.interior_slack(q)?;
        Ok(DualTensor(self.dual_from_slack(&sl)))
    }

    pub fn gradient(&self, q: &QTable) -> Result<QTable> {
        Ok(self.evaluate(q)?.gradient)
    }

    pub fn evaluate(&self, q: &QTable) -> Result<Evaluation<DualTensor>> {
        Ok(self.evaluate_with_slack(q)?.0)
    }

    pub(crate) fn evaluate_with_slack(&self, q: &QTable) -> Result<(Evaluation<DualTensor>, TripleTable)> {
        let first = self.first_order(q)?;
        let eval = Evaluation {
            value: self.value_from_slack(q, &first.slack),
            gradient: first.gradient,
            dual: first.dual,
            min_slack: first.min_slack,
        };
        Ok((eval, first.slack))
    }

    /// Gradient, duals and slack without the logarithms of the value.
    pub(crate) fn first_order(&self, q: &QTable) -> Result<FirstOrder<DualTensor, TripleTable>> {
        let sl = self.interior_slack(q)?;
        let lambda = self.dual_from_slack(&sl);
        let gradient = flow_gradient(self.mdp, &self.params.rho, &lambda);
        Ok(FirstOrder {
            gradient,
            dual: DualTensor(lambda),
            min_slack: sl.min(),
            slack: sl,
        })
    }

    /// [`Self::first_order`] into buffers of the right shape, with the same
    /// arithmetic and no allocation. On error `out` holds garbage.
    pub(crate) fn first_order_into(&self, q: &QTable, out: &mut FirstOrder<DualTensor, TripleTable>) -> Result<()> {
        self.mdp.check_q(q)?;
        let na = self.mdp.num_actions();
        let gamma = self.mdp.gamma();
        let r = self.mdp.expected_reward().as_slice();
        let qv = q.as_slice();
        lookahead_gap_into(self.mdp, qv, |i| qv[i] - r[i], out.slack.as_mut_slice());
        let mut min = f64::INFINITY;
        for &v in out.slack.as_slice() {
            if !(v > 0.0) {
                return Err(domain_error(&out.slack).expect("nonpositive slack"));
            }
            min = min.min(v);
        }
        out.min_slack = min;
        let eta = self.params.eta;
        let lambda = out.dual.0.as_mut_slice();
        for ((l, w), v) in lambda
            .iter_mut()
            .zip(self.params.weights.table().as_slice())
            .zip(out.slack.as_slice())
        {
            *l = eta * w / v;
        }
        let grad = out.gradient.as_mut_slice();
        grad.fill(0.0);
        scatter_inflow(self.mdp, lambda, grad);
        let rho = self.params.rho.table().as_slice();
        for ((x, lane), r) in grad.iter_mut().zip(lambda.chunks_exact(na)).zip(rho) {
            let outflow: f64 = lane.iter().sum();
            *x = r - outflow + gamma * *x;
        }
        Ok(())
    }

    /// Upper bound on the change `f(Q - step g) - f(Q)`; see [`change_bound`].
    pub(crate) fn change_bound(&self, sl: &TripleTable, dsl: &TripleTable, step: f64, g2: f64) -> Option<f64> {
        change_bound(
            self.params.eta,
            self.params.weights.table().as_slice(),
            sl.as_slice(),
            dsl.as_slice(),
            step,
            g2,
        )
    }

    /// Exact Hessian `eta sum w / slack^2 v v^T` with
    /// `v = e_{s,a} - gamma sum_s' P(s'|s,a) e_{s',a'}`.
    pub fn hessian(&self, q: &QTable) -> Result<DMatrix<f64>> {
        let sl = self.interior_slack(q)?;
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        let n = ns * na;
        let gamma = self.mdp.gamma();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut v: Vec<(usize, f64)> = Vec::with_capacity(ns + 1);
        for s in 0..ns {
            for a in 0..na {
                for b in 0..na {
                    let coeff =
                        self.params.eta * self.params.weights.get(s, a, b) / (sl.get(s, a, b) * sl.get(s, a, b));
                    v.clear();
                    let here = s * na + a;
                    let mut self_coeff = 1.0;
                    for &(next, p) in self.mdp.successors(s, a) {
                        let idx = next * na + b;
                        if idx == here {
                            self_coeff -= gamma * p;
                        } else {
                            v.push((idx, -gamma * p));
                        }
                    }
                    v.push((here, self_coeff));
                    for &(i, vi) in &v {
                        for &(j, vj) in &v {
                            h[(i, j)] += coeff * vi * vj;
                        }
                    }
                }
            }
        }
        Ok(h)
    }

    /// Change in the objective along `q - step * direction`, computed from
    /// slack ratios so that tiny decreases stay resolvable. Returns `None`
    /// when the trial point leaves the domain.
    pub(crate) fn decrease_along(
        &self,
        sl: &TripleTable,
        direction: &QTable,
        dslack: &TripleTable,
        step: f64,
    ) -> Option<f64> {
        let (ns, na) = (self.mdp.num_states(), self.mdp.num_actions());
        let mut linear = 0.0;
        let mut barrier = 0.0;
        for s in 0..ns {
            for a in 0..na {
                linear -= self.params.rho.get(s, a) * direction.get(s, a);
                for b in 0..na {
                    let base = sl.get(s, a, b);
                    let ratio = -step * dslack.get(s, a, b) / base;
                    // new slack = base * (1 + ratio)
                    if !(ratio > -1.0) || !(base - step * dslack.get(s, a, b) > 0.0) {
                        return None;
                    }
                    barrier -= self.params.weights.get(s, a, b) * ratio.ln_1p();
                }
            }
        }
        Some(step * linear + self.params.eta * barrier)
    }

    /// Directional slack change: `d(s,a,a') = g(s,a) - gamma sum_s' P g(s',a')`.
    pub(crate) fn slack_direction(&self, g: &QTable) -> TripleTable {
        let out = lookahead_gap(self.mdp, g, |idx| g.as_slice()[idx]);
        TripleTable::from_vec(self.mdp.num_states(), self.mdp.num_actions(), out).expect("shape")
    }

    pub(crate) fn slack_direction_into(&self, g: &QTable, out: &mut TripleTable) {
        let gv = g.as_slice();
        lookahead_gap_into(self.mdp, gv, |idx| gv[idx], out.as_mut_slice());
    }
}

/// Gradient, duals and slack at an interior point.
#[derive(Debug, Clone)]
pub(crate) struct FirstOrder<D, S> {
    pub gradient: QTable,
    pub dual: D,
    pub slack: S,
    pub min_slack: f64,
}

/// Upper bound on the change of a barrier objective along `Q - step g`,
/// where `g` is the gradient at `Q` and `g2 = |g|_2^2`.
///
/// With `x = -step dslack / slack` the exact change is
/// `-step rho.g - eta sum w ln(1 + x)`. The linear parts add up to
/// `-step g2`, and `-ln(1 + x) <= -x + x^2 / (1 + x)` for `x > -1` leaves
/// `-step g2 + eta sum w x^2 / (1 + x)`. No logarithms, and no cancellation
/// between large terms. `None` when the trial point leaves the domain.
pub(crate) fn change_bound(eta: f64, weights: &[f64], sl: &[f64], dsl: &[f64], step: f64, g2: f64) -> Option<f64> {
    let mut quad = 0.0;
    for ((w, base), d) in weights.iter().zip(sl).zip(dsl) {
        let x = -step * d / base;
        if !(x > -1.0) || !(base - step * d > 0.0) {
            return None;
        }
        quad += w * x * x / (1.0 + x);
    }
    Some(-step * g2 + eta * quad)
}

/// `rho(s,a) - sum_a' lambda(s,a,a') + gamma sum_{s',a'} P(s|s',a') lambda(s',a',a)`.
fn flow_gradient(mdp: &Mdp, rho: &DistributionRho, lambda: &TripleTable) -> QTable {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    // scatter along successors; each inflow entry still receives its terms
    // in ascending (s',a') order
    let mut inflow = vec![0.0; ns * na];
    scatter_inflow(mdp, lambda.as_slice(), &mut inflow);
    let mut out = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            let outflow: f64 = lambda.lane(s, a).iter().sum();
            out.push(rho.get(s, a) - outflow + gamma * inflow[s * na + a]);
        }
    }
    QTable::from_vec(ns, na, out).expect("shape")
}

/// `f_eta(Q) = sum rho Q + eta sum w (-ln slack)`.
pub fn f_eta(mdp: &Mdp, q: &QTable, p: &BarrierParams) -> Result<f64> {
    OptimalityBarrier::new(mdp, p)?.value(q)
}

pub fn grad_f_eta(mdp: &Mdp, q: &QTable, p: &BarrierParams) -> Result<QTable> {
    OptimalityBarrier::new(mdp, p)?.gradient(q)
}

/// `lambda_eta(s,a,a') = eta w(s,a,a') / slack(s,a,a')`.
pub fn lambda_eta(mdp: &Mdp, q: &QTable, p: &BarrierParams) -> Result<DualTensor> {
    OptimalityBarrier::new(mdp, p)?.lambda(q)
}

pub fn hessian_f_eta(mdp: &Mdp, q: &QTable, p: &BarrierParams) -> Result<DMatrix<f64>> {
    OptimalityBarrier::new(mdp, p)?.hessian(q)
}

/// The policy-evaluation barrier `sum rho Q + eta sum w(s,a) (-ln[Q - T^pi Q])`.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationBarrier<'a> {
    mdp: &'a Mdp,
    policy: &'a PolicyStoch,
    params: &'a EvalBarrierParams,
}

impl<'a> EvaluationBarrier<'a> {
    pub fn new(mdp: &'a Mdp, policy: &'a PolicyStoch, params: &'a EvalBarrierParams) -> Result<Self> {
        params.check(mdp)?;
        policy
            .table()
            .check_shape(mdp.num_states(), mdp.num_actions(), "policy")?;
        Ok(Self { mdp, policy, params })
    }

    pub fn mdp(&self) -> &'a Mdp {
        self.mdp
    }

    pub fn params(&self) -> &'a EvalBarrierParams {
        self.params
    }

    pub fn policy(&self) -> &'a PolicyStoch {
        self.policy
    }

    /// `Q(s,a) - (T^pi Q)(s,a)`.
    pub fn slack(&self, q: &QTable) -> Result<QTable> {
        self.mdp.check_q(q)?;
        Ok(self.raw_slack(q))
    }

    fn raw_slack(&self, q: &QTable) -> QTable {
        let v = policy_values(self.policy, q);
        let r = self.mdp.expected_reward();
        let gamma = self.mdp.gamma();
        QTable::from_fn(self.mdp.num_states(), self.mdp.num_actions(), |s, a| {
            let mut acc = 0.0;
            for &(next, p) in self.mdp.successors(s, a) {
                acc += p * v[next];
            }
            q.get(s, a) - r.get(s, a) - gamma * acc
        })
    }

    fn interior_slack(&self, q: &QTable) -> Result<QTable> {
        let sl = self.slack(q)?;
        let na = self.mdp.num_actions();
        let mut worst = (0, f64::INFINITY);
        for (i, &v) in sl.as_slice().iter().enumerate() {
            if v.is_nan() {
                worst = (i, f64::NAN);
                break;
            }
            if v < worst.1 {
                worst = (i, v);
            }
        }
        if worst.1 > 0.0 {
            Ok(sl)
        } else {
            Err(Error::OutOfDomain {
                index: ConstraintIndex::Pair {
                    state: worst.0 / na,
                    action: worst.0 % na,
                },
                slack: worst.1,
            })
        }
    }

    pub fn in_domain(&self, q: &QTable) -> Result<(bool, f64)> {
        let sl = self.slack(q)?;
        let min = sl.as_slice().iter().copied().fold(f64::INFINITY, |m, v| {
            if v.is_nan() || m.is_nan() {
                f64::NAN
            } else {
                m.min(v)
            }
        });
        Ok((min > 0.0, min))
    }

    pub(crate) fn value_from_slack(&self, q: &QTable, sl: &QTable) -> f64 {
        let mut linear = 0.0;
        let mut barrier = 0.0;
        for s in 0..self.mdp.num_states() {
            for a in 0..self.mdp.num_actions() {
                linear += self.params.rho.get(s, a) * q.get(s, a);
                barrier -= self.params.weights.get(s, a) * sl.get(s, a).ln();
            }
        }
        linear + self.params.eta * barrier
    }

    pub fn value(&self, q: &QTable) -> Result<f64> {
        let sl = self.interior_slack(q)?;
        Ok(self.value_from_slack(q, &sl))
    }

    pub fn lambda(&self, q: &QTable) -> Result<PairDual> {
        let sl = self.interior_slack(q)?;
        Ok(PairDual(self.dual_from_slack(&sl)))
    }

    fn dual_from_slack(&self, sl: &QTable) -> QTable {
        QTable::from_fn(self.mdp.num_states(), self.mdp.num_actions(), |s, a| {
            self.params.eta * self.params.weights.get(s, a) / sl.get(s, a)
        })
    }

    pub fn gradient(&self, q: &QTable) -> Result<QTable> {
        Ok(self.evaluate(q)?.gradient)
    }

    /// Gradient `rho(s,a) - lambda(s,a) + gamma pi(a|s) sum_{s',a'} P(s|s',a') lambda(s',a')`.
    pub fn evaluate(&self, q: &QTable) -> Result<Evaluation<PairDual>> {
        Ok(self.evaluate_with_slack(q)?.0)
    }

    pub(crate) fn evaluate_with_slack(&self, q: &QTable) -> Result<(Evaluation<PairDual>, QTable)> {
        let first = self.first_order(q)?;
        let eval = Evaluation {
            value: self.value_from_slack(q, &first.slack),
            gradient: first.gradient,
            dual: first.dual,
            min_slack: first.min_slack,
        };
        Ok((eval, first.slack))
    }

    pub(crate) fn first_order(&self, q: &QTable) -> Result<FirstOrder<PairDual, QTable>> {
        let sl = self.interior_slack(q)?;
        let lambda = self.dual_from_slack(&sl);
        let gradient = eval_flow_gradient(self.mdp, self.policy, &self.params.rho, &lambda);
        Ok(FirstOrder {
            gradient,
            dual: PairDual(lambda),
            min_slack: sl.min(),
            slack: sl,
        })
    }

    pub(crate) fn change_bound(&self, sl: &QTable, dsl: &QTable, step: f64, g2: f64) -> Option<f64> {
        change_bound(
            self.params.eta,
            self.params.weights.table().as_slice(),
            sl.as_slice(),
            dsl.as_slice(),
            step,
            g2,
        )
    }

    pub(crate) fn slack_direction(&self, g: &QTable) -> QTable {
        let v = policy_values(self.policy, g);
        let gamma = self.mdp.gamma();
        QTable::from_fn(self.mdp.num_states(), self.mdp.num_actions(), |s, a| {
            let mut acc = 0.0;
            for &(next, p) in self.mdp.successors(s, a) {
                acc += p * v[next];
            }
            g.get(s, a) - gamma * acc
        })
    }

    pub(crate) fn decrease_along(&self, sl: &QTable, direction: &QTable, dslack: &QTable, step: f64) -> Option<f64> {
        let mut linear = 0.0;
        let mut barrier = 0.0;
        for s in 0..self.mdp.num_states() {
            for a in 0..self.mdp.num_actions() {
                linear -= self.params.rho.get(s, a) * direction.get(s, a);
                let base = sl.get(s, a);
                let ratio = -step * dslack.get(s, a) / base;
                if !(ratio > -1.0) || !(base - step * dslack.get(s, a) > 0.0) {
                    return None;
                }
                barrier -= self.params.weights.get(s, a) * ratio.ln_1p();
            }
        }
        Some(step * linear + self.params.eta * barrier)
    }
}

pub(crate) fn eval_flow_gradient(mdp: &Mdp, pi: &PolicyStoch, rho: &DistributionRho, lambda: &QTable) -> QTable {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let mut inflow = vec![0.0; ns];
    for prev in 0..ns {
        for prev_a in 0..na {
            let l = lambda.get(prev, prev_a);
            for &(s, p) in mdp.successors(prev, prev_a) {
                inflow[s] += p * l;
            }
        }
    }
    QTable::from_fn(ns, na, |s, a| {
        rho.get(s, a) - lambda.get(s, a) + gamma * pi.prob(s, a) * inflow[s]
    })
}

pub fn f_eta_pi(mdp: &Mdp, pi: &PolicyStoch, q: &QTable, p: &EvalBarrierParams) -> Result<f64> {
    EvaluationBarrier::new(mdp, pi, p)?.value(q)
}

pub fn grad_f_eta_pi(mdp: &Mdp, pi: &PolicyStoch, q: &QTable, p: &EvalBarrierParams) -> Result<QTable> {
    EvaluationBarrier::new(mdp, pi, p)?.gradient(q)
}

/// Jensen upper surrogate: the transition expectation moved outside the
/// barrier, one term per `(s,a,s',a')` with `P(s'|s,a) > 0`.
pub fn surrogate_g_eta(mdp: &Mdp, q: &QTable, p: &BarrierParams) -> Result<f64> {
    p.check(mdp)?;
    mdp.check_q(q)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let mut linear = 0.0;
    let mut barrier = 0.0;
    for s in 0..ns {
        for a in 0..na {
            linear += p.rho.get(s, a) * q.get(s, a);
            for &(next, prob) in mdp.successors(s, a) {
                let r = mdp.r(s, a, next);
                for b in 0..na {
                    let sl = q.get(s, a) - r - gamma * q.get(next, b);
                    if !(sl > 0.0) {
                        return Err(Error::OutOfDomain {
                            index: ConstraintIndex::Transition {
                                state: s,
                                action: a,
                                next_state: next,
                                next_action: b,
                            },
                            slack: sl,
                        });
                    }
                    barrier -= prob * p.weights.get(s, a, b) * sl.ln();
                }
            }
        }
    }
    Ok(linear + p.eta * barrier)
}

/// `h(x) = -ln(epsilon - x)` for `x < 0`, `nu x` otherwise.
pub fn practical_h(x: f64, p: &PracticalLossParams) -> f64 {
    if x < 0.0 {
        -(p.epsilon - x).ln()
    } else {
        p.nu * x
    }
}

/// Tabular loss built from `h`: `sum rho Q + eta sum P w h(r + gamma Q(s',a') - Q(s,a))`.
/// Defined everywhere, discontinuous where a temporal difference crosses zero.
pub fn practical_loss(mdp: &Mdp, q: &QTable, p: &BarrierParams, loss: &PracticalLossParams) -> Result<f64> {
    p.check(mdp)?;
    mdp.check_q(q)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let mut linear = 0.0;
    let mut penalty = 0.0;
    for s in 0..ns {
        for a in 0..na {
            linear += p.rho.get(s, a) * q.get(s, a);
            for &(next, prob) in mdp.successors(s, a) {
                let r = mdp.r(s, a, next);
                for b in 0..na {
                    let td = r + gamma * q.get(next, b) - q.get(s, a);
                    penalty += prob * p.weights.get(s, a, b) * practical_h(td, loss);
                }
            }
        }
    }
    Ok(linear + p.eta * penalty)
}
