//! Finite MDP model, the auxiliary distributions used by the LP, and the
//! three Bellman operators.
//!
//! All sums run over indices in lexicographic order so results are
//! reproducible bit for bit. Transition rows are additionally kept in a sparse
//! successor/predecessor form; skipping exact zeros does not change any sum.

use std::fmt;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::table::{QTable, TripleTable};

/// Tolerance on probability row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A finite discounted MDP with per-transition rewards `r(s,a,s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    expected: QTable,
    // (s,a) -> [(s', P(s'|s,a))], s' ascending, zero entries skipped
    successors: Vec<Vec<(usize, f64)>>,
    // s' -> [(s*|A|+a, P(s'|s,a))], (s,a) ascending
    predecessors: Vec<Vec<(usize, f64)>>,
}

impl Mdp {
    /// Builds a model from flat row-major `[s][a][s']` tensors. Only shapes
    /// are checked here; probabilistic invariants are reported by
    /// [`Mdp::validate`].
    pub fn new(
        num_states: usize,
        num_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("mdp", "need at least one state and one action"));
        }
        let len = num_states * num_actions * num_states;
        for (what, t) in [("transition", &transition), ("reward", &reward)] {
            if t.len() != len {
                return Err(Error::Shape {
                    what,
                    expected: format!("{0}x{1}x{0}", num_states, num_actions),
                    got: format!("{} entries", t.len()),
                });
            }
        }
        let sa = num_states * num_actions;
        let mut successors = Vec::with_capacity(sa);
        let mut predecessors = vec![Vec::new(); num_states];
        let mut expected = Vec::with_capacity(sa);
        for idx in 0..sa {
            let p_row = &transition[idx * num_states..(idx + 1) * num_states];
            let r_row = &reward[idx * num_states..(idx + 1) * num_states];
            let mut succ = Vec::new();
            let mut acc = 0.0;
            for (next, (&p, &r)) in p_row.iter().zip(r_row).enumerate() {
                if p != 0.0 {
                    succ.push((next, p));
                    predecessors[next].push((idx, p));
                    acc += p * r;
                }
            }
            successors.push(succ);
            expected.push(acc);
        }
        Ok(Self {
            num_states,
            num_actions,
            gamma,
            transition,
            reward,
            expected: QTable::from_vec(num_states, num_actions, expected)?,
            successors,
            predecessors,
        })
    }

    /// Builds a model from nested `[s][a][s']` arrays.
    pub fn from_nested(gamma: f64, transition: &[Vec<Vec<f64>>], reward: &[Vec<Vec<f64>>]) -> Result<Self> {
        let num_states = transition.len();
        let num_actions = transition.first().map_or(0, Vec::len);
        let flatten = |what: &'static str, t: &[Vec<Vec<f64>>]| -> Result<Vec<f64>> {
            if t.len() != num_states {
                return Err(Error::Shape {
                    what,
                    expected: format!("{num_states} states"),
                    got: format!("{}", t.len()),
                });
            }
            let mut out = Vec::with_capacity(num_states * num_actions * num_states);
            for (s, block) in t.iter().enumerate() {
                if block.len() != num_actions {
                    return Err(Error::Shape {
                        what,
                        expected: format!("{num_actions} actions"),
                        got: format!("{} at state {s}", block.len()),
                    });
                }
                for (a, row) in block.iter().enumerate() {
                    if row.len() != num_states {
                        return Err(Error::Shape {
                            what,
                            expected: format!("{num_states} next states"),
                            got: format!("{} at ({s},{a})", row.len()),
                        });
                    }
                    out.extend_from_slice(row);
                }
            }
            Ok(out)
        };
        let p = flatten("transition", transition)?;
        let r = flatten("reward", reward)?;
        Self::new(num_states, num_actions, gamma, p, r)
    }

    #[inline]
    pub fn num_states(&self) -> usize {
        self.num_states
    }

    #[inline]
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    #[inline]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    #[inline]
    pub fn r(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn transition_nested(&self) -> Vec<Vec<Vec<f64>>> {
        nest(&self.transition, self.num_states, self.num_actions)
    }

    pub fn reward_nested(&self) -> Vec<Vec<Vec<f64>>> {
        nest(&self.reward, self.num_states, self.num_actions)
    }

    /// Nonzero successors of `(s, a)` with their probabilities.
    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.num_actions + a]
    }

    /// [`Self::successors`] by flat pair index `s*|A|+a`.
    #[inline]
    pub(crate) fn successors_at(&self, pair: usize) -> &[(usize, f64)] {
        &self.successors[pair]
    }

    /// Pairs `(s*|A|+a, P(next|s,a))` with nonzero probability of reaching `next`.
    #[inline]
    pub fn predecessors(&self, next: usize) -> &[(usize, f64)] {
        &self.predecessors[next]
    }

    /// `max |r(s,a,s')|`.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// True when every transition row is one-hot.
    pub fn is_deterministic(&self) -> bool {
        self.successors.iter().all(|succ| succ.len() == 1)
    }

    /// Every invariant violation; an empty list means the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            out.push(Violation::Gamma(self.gamma));
        }
        let ns = self.num_states;
        for s in 0..ns {
            for a in 0..self.num_actions {
                let base = (s * self.num_actions + a) * ns;
                let mut sum = 0.0;
                for next in 0..ns {
                    let p = self.transition[base + next];
                    if !p.is_finite() || p < 0.0 {
                        out.push(Violation::Probability {
                            state: s,
                            action: a,
                            next_state: next,
                            value: p,
                        });
                    }
                    let r = self.reward[base + next];
                    if !r.is_finite() {
                        out.push(Violation::Reward {
                            state: s,
                            action: a,
                            next_state: next,
                            value: r,
                        });
                    }
                    sum += p;
                }
                if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
                    out.push(Violation::RowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
            }
        }
        out
    }

    /// `R(s,a) = sum_s' P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self) -> &QTable {
        &self.expected
    }

    pub(crate) fn check_q(&self, q: &QTable) -> Result<()> {
        q.check_shape(self.num_states, self.num_actions, "Q table")
    }
}

fn nest(flat: &[f64], ns: usize, na: usize) -> Vec<Vec<Vec<f64>>> {
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| flat[(s * na + a) * ns..(s * na + a + 1) * ns].to_vec())
                .collect()
        })
        .collect()
}

/// One failed model invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Gamma(f64),
    Probability {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
    RowSum {
        state: usize,
        action: usize,
        sum: f64,
    },
    Reward {
        state: usize,
        action: usize,
        next_state: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Gamma(g) => write!(f, "gamma must be < 1 (and >= 0), got {g}"),
            Violation::Probability {
                state,
                action,
                next_state,
                value,
            } => write!(
                f,
                "probability at ({state},{action},{next_state}) must be finite and >= 0, got {value}"
            ),
            Violation::RowSum { state, action, sum } => {
                write!(f, "row sum ≠ 1 at ({state},{action}): {sum}")
            }
            Violation::Reward {
                state,
                action,
                next_state,
                value,
            } => write!(f, "reward at ({state},{action},{next_state}) is not finite: {value}"),
        }
    }
}

/// A distribution over state–action pairs with strictly positive support.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DistributionRho(QTable);

impl DistributionRho {
    pub fn new(table: QTable) -> Result<Self> {
        if let Some(v) = table.as_slice().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid("rho", format!("entries must be finite and > 0, found {v}")));
        }
        let total = table.sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(invalid("rho", format!("entries must sum to 1, got {total}")));
        }
        Ok(Self(table))
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let n = (num_states * num_actions) as f64;
        Self(QTable::filled(num_states, num_actions, 1.0 / n))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &QTable {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    /// `rho(s) = sum_a rho(s,a)`.
    pub fn state_marginal(&self) -> Vec<f64> {
        (0..self.0.num_states()).map(|s| self.0.row(s).iter().sum()).collect()
    }
}

/// Strictly positive constraint weights `w(s,a,a')`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Weights(TripleTable);

impl Weights {
    pub fn new(table: TripleTable) -> Result<Self> {
        if let Some(v) = table.as_slice().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid("weights", format!("entries must be finite and > 0, found {v}")));
        }
        Ok(Self(table))
    }

    pub fn ones(num_states: usize, num_actions: usize) -> Self {
        Self(TripleTable::filled(num_states, num_actions, 1.0))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize, b: usize) -> f64 {
        self.0.get(s, a, b)
    }

    pub fn table(&self) -> &TripleTable {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn max(&self) -> f64 {
        self.0.max()
    }
}

/// Strictly positive weights `w(s,a)` for the policy-evaluation constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PairWeights(QTable);

impl PairWeights {
    pub fn new(table: QTable) -> Result<Self> {
        if let Some(v) = table.as_slice().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(invalid("weights", format!("entries must be finite and > 0, found {v}")));
        }
        Ok(Self(table))
    }

    pub fn ones(num_states: usize, num_actions: usize) -> Self {
        Self(QTable::filled(num_states, num_actions, 1.0))
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &QTable {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    pub fn min(&self) -> f64 {
        self.0.min()
    }

    pub fn max(&self) -> f64 {
        self.0.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Deterministic policy: one action per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct PolicyDet(Vec<usize>);

impl PolicyDet {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some((s, a)) = actions.iter().enumerate().find(|(_, a)| **a >= num_actions) {
            return Err(invalid("policy", format!("action {a} at state {s} out of range")));
        }
        Ok(Self(actions))
    }

    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    /// One-hot stochastic form.
    pub fn to_stochastic(&self, num_actions: usize) -> PolicyStoch {
        PolicyStoch(QTable::from_fn(self.0.len(), num_actions, |s, a| {
            if self.0[s] == a {
                1.0
            } else {
                0.0
            }
        }))
    }
}

/// Stochastic policy `pi(a|s)`; rows are probability vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PolicyStoch(QTable);

impl PolicyStoch {
    pub fn new(table: QTable) -> Result<Self> {
        for s in 0..table.num_states() {
            let row = table.row(s);
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
                return Err(invalid(
                    "policy",
                    format!("negative or non-finite entry {v} at state {s}"),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid("policy", format!("row {s} sums to {sum}")));
            }
        }
        Ok(Self(table))
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self(QTable::filled(num_states, num_actions, 1.0 / num_actions as f64))
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn table(&self) -> &QTable {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.num_states()
    }

    pub fn num_actions(&self) -> usize {
        self.0.num_actions()
    }

    pub(crate) fn from_table_unchecked(table: QTable) -> Self {
        Self(table)
    }
}

/// `(TQ)(s,a) = R(s,a) + gamma sum_s' P(s'|s,a) max_a' Q(s',a')`.
pub fn bellman_t(mdp: &Mdp, q: &QTable) -> Result<QTable> {
    mdp.check_q(q)?;
    let v = q.row_max();
    let r = mdp.expected_reward();
    Ok(QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let mut acc = 0.0;
        for &(next, p) in mdp.successors(s, a) {
            acc += p * v[next];
        }
        r.get(s, a) + mdp.gamma() * acc
    }))
}

/// `(FQ)(s,a,a') = R(s,a) + gamma sum_s' P(s'|s,a) Q(s',a')`.
pub fn bellman_f(mdp: &Mdp, q: &QTable) -> Result<TripleTable> {
    mdp.check_q(q)?;
    let na = mdp.num_actions();
    let mut out = Vec::with_capacity(mdp.num_states() * na * na);
    let r = mdp.expected_reward();
    let mut acc = vec![0.0; na];
    for s in 0..mdp.num_states() {
        for a in 0..na {
            f_lane(mdp, q, s, a, &mut acc);
            let base = r.get(s, a);
            out.extend(acc.iter().map(|x| base + mdp.gamma() * x));
        }
    }
    TripleTable::from_vec(mdp.num_states(), na, out)
}

/// Expected next-state values `acc[a'] = sum_s' P(s'|s,a) Q(s',a')`.
#[inline]
pub(crate) fn f_lane(mdp: &Mdp, q: &QTable, s: usize, a: usize, acc: &mut [f64]) {
    acc.iter_mut().for_each(|x| *x = 0.0);
    for &(next, p) in mdp.successors(s, a) {
        for (x, qv) in acc.iter_mut().zip(q.row(next)) {
            *x += p * qv;
        }
    }
}

/// `(T^pi Q)(s,a) = R(s,a) + gamma sum_{s',a'} P(s'|s,a) pi(a'|s') Q(s',a')`.
pub fn bellman_t_pi(mdp: &Mdp, pi: &PolicyStoch, q: &QTable) -> Result<QTable> {
    mdp.check_q(q)?;
    pi.table().check_shape(mdp.num_states(), mdp.num_actions(), "policy")?;
    let v = policy_values(pi, q);
    let r = mdp.expected_reward();
    Ok(QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        let mut acc = 0.0;
        for &(next, p) in mdp.successors(s, a) {
            acc += p * v[next];
        }
        r.get(s, a) + mdp.gamma() * acc
    }))
}

/// `V(s) = sum_a pi(a|s) Q(s,a)`.
pub(crate) fn policy_values(pi: &PolicyStoch, q: &QTable) -> Vec<f64> {
    (0..q.num_states())
        .map(|s| q.row(s).iter().zip(pi.table().row(s)).map(|(qv, p)| p * qv).sum())
        .collect()
}

/// Greedy deterministic policy; ties go to the lowest action index.
pub fn greedy(q: &QTable) -> PolicyDet {
    let actions = (0..q.num_states())
        .map(|s| {
            let row = q.row(s);
            let mut best = 0;
            for (a, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect();
    PolicyDet(actions)
}
