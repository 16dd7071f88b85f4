//! Seeded test-model generators and the JSON model format.
//!
//! Random models use ChaCha8 seeded through `seed_from_u64`; uniforms are the
//! top 53 bits of `next_u64` scaled by `2^-53`. Both steps are fixed by their
//! crates' portability guarantees, so a seed names the same model on every
//! platform.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Error, Result};
use crate::mdp::{DistributionRho, Mdp, Weights};
use crate::table::{QTable, TripleTable};

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

/// Default 6x6 layout. `S` start, `F` frozen, `H` hole, `G` goal.
pub const FROZEN_LAKE_6: [&str; 6] = ["SFFFFF", "FHFFFH", "FFFHFF", "FHFFFF", "FFFFHF", "HFFFFG"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub size: usize,
    pub holes: Vec<usize>,
    pub goal: usize,
    /// Mass moved off the intended direction, split evenly between the two
    /// perpendicular moves.
    pub slip: f64,
    pub step_reward: f64,
    pub hole_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl GridSpec {
    /// Parses a square layout of `S`/`F`/`H`/`G` characters.
    pub fn from_layout(rows: &[&str], slip: f64, gamma: f64) -> Result<Self> {
        let size = rows.len();
        let mut holes = Vec::new();
        let mut goal = None;
        for (i, row) in rows.iter().enumerate() {
            if row.chars().count() != size {
                return Err(invalid("grid layout", format!("row {i} is not {size} cells wide")));
            }
            for (j, c) in row.chars().enumerate() {
                let cell = i * size + j;
                match c {
                    'H' => holes.push(cell),
                    'G' if goal.is_none() => goal = Some(cell),
                    'G' => return Err(invalid("grid layout", "more than one goal")),
                    'S' | 'F' => {}
                    other => return Err(invalid("grid layout", format!("unknown cell {other:?}"))),
                }
            }
        }
        let spec = Self {
            size,
            holes,
            goal: goal.ok_or_else(|| invalid("grid layout", "no goal cell"))?,
            slip,
            step_reward: 0.0,
            hole_reward: 0.0,
            goal_reward: 1.0,
            gamma,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The default 6x6 lake with the standard one-third split (`slip = 2/3`)
    /// and `gamma = 0.9`.
    pub fn frozen_lake6() -> Self {
        Self::from_layout(&FROZEN_LAKE_6, 2.0 / 3.0, 0.9).expect("default layout is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.size * self.size;
        if self.size == 0 {
            return Err(invalid("grid", "size must be positive"));
        }
        if self.goal >= cells {
            return Err(invalid("grid", format!("goal {} outside {cells} cells", self.goal)));
        }
        if let Some(h) = self.holes.iter().find(|h| **h >= cells) {
            return Err(invalid("grid", format!("hole {h} outside {cells} cells")));
        }
        if self.holes.contains(&self.goal) {
            return Err(invalid("grid", "goal cell is also a hole"));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(invalid("grid", format!("slip {} outside [0, 1]", self.slip)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("grid", format!("gamma {} outside [0, 1)", self.gamma)));
        }
        for r in [self.step_reward, self.hole_reward, self.goal_reward] {
            if !r.is_finite() {
                return Err(invalid("grid", "rewards must be finite"));
            }
        }
        Ok(())
    }

    fn step(&self, cell: usize, action: usize) -> usize {
        let n = self.size;
        let (i, j) = (cell / n, cell % n);
        match action {
            UP if i > 0 => cell - n,
            RIGHT if j + 1 < n => cell + 1,
            DOWN if i + 1 < n => cell + n,
            LEFT if j > 0 => cell - 1,
            _ => cell,
        }
    }
}

/// Gridworld with slippery moves; holes and the goal absorb with zero reward,
/// and rewards are paid on entering a cell.
pub fn frozen_lake(spec: &GridSpec) -> Result<Mdp> {
    spec.validate()?;
    let ns = spec.size * spec.size;
    let na = 4;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    let absorbing = |c: usize| c == spec.goal || spec.holes.contains(&c);
    let entry_reward = |c: usize| {
        if c == spec.goal {
            spec.goal_reward
        } else if spec.holes.contains(&c) {
            spec.hole_reward
        } else {
            spec.step_reward
        }
    };
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if absorbing(s) {
                p[base + s] = 1.0;
                continue;
            }
            let moves = [
                (a, 1.0 - spec.slip),
                ((a + 1) % 4, spec.slip / 2.0),
                ((a + 3) % 4, spec.slip / 2.0),
            ];
            for (dir, prob) in moves {
                if prob > 0.0 {
                    let next = spec.step(s, dir);
                    p[base + next] += prob;
                    r[base + next] = entry_reward(next);
                }
            }
        }
    }
    Mdp::new(ns, na, spec.gamma, p, r)
}

/// States `0..n`; action 0 stays put, action 1 advances. Entering the last
/// state pays 1, which then absorbs with zero reward.
pub fn chain(n: usize, gamma: f64) -> Result<Mdp> {
    if n < 2 {
        return Err(invalid("chain", format!("need at least 2 states, got {n}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("chain", format!("gamma {gamma} outside [0, 1)")));
    }
    let na = 2;
    let mut p = vec![0.0; n * na * n];
    let mut r = vec![0.0; n * na * n];
    for s in 0..n {
        let stay = s * na * n;
        p[stay + s] = 1.0;
        let adv = (s * na + 1) * n;
        let next = (s + 1).min(n - 1);
        p[adv + next] = 1.0;
        if s + 1 == n - 1 {
            r[adv + next] = 1.0;
        }
    }
    Mdp::new(n, na, gamma, p, r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    pub reward_scale: f64,
    /// Probability that a transition entry is masked to zero.
    pub sparsity: f64,
    pub gamma: f64,
}

impl RandomMdpSpec {
    /// Dense model with rewards in `[-1, 1]` and `gamma = 0.9`.
    pub fn dense(num_states: usize, num_actions: usize, seed: u64) -> Self {
        Self {
            num_states,
            num_actions,
            seed,
            reward_scale: 1.0,
            sparsity: 0.0,
            gamma: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(invalid("random mdp", "need at least one state and one action"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(invalid("random mdp", "reward_scale must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(invalid("random mdp", "sparsity must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("random mdp", "gamma must lie in [0, 1)"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Random model: each transition row normalizes `exp(u)` over the unmasked
/// entries (the largest survives if all would be masked); rewards are
/// uniform in `[-reward_scale, reward_scale]`.
///
/// Draw order per `(s,a)`: `|S|` weights, then `|S|` mask uniforms. Rewards
/// for all transitions are drawn afterwards in `[s][a][s']` order.
pub fn random_mdp(spec: &RandomMdpSpec) -> Result<Mdp> {
    spec.validate()?;
    let (ns, na) = (spec.num_states, spec.num_actions);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut p = Vec::with_capacity(ns * na * ns);
    for _ in 0..ns * na {
        let weights: Vec<f64> = (0..ns).map(|_| uniform(&mut rng).exp()).collect();
        let mask: Vec<bool> = (0..ns).map(|_| uniform(&mut rng) >= spec.sparsity).collect();
        let mut row: Vec<f64> = weights
            .iter()
            .zip(&mask)
            .map(|(w, keep)| if *keep { *w } else { 0.0 })
            .collect();
        if row.iter().all(|v| *v == 0.0) {
            let best = (0..ns)
                .max_by(|&i, &j| weights[i].total_cmp(&weights[j]))
                .expect("at least one state");
            row[best] = weights[best];
        }
        let total: f64 = row.iter().sum();
        p.extend(row.iter().map(|v| v / total));
    }
    let r = (0..ns * na * ns)
        .map(|_| spec.reward_scale * (2.0 * uniform(&mut rng) - 1.0))
        .collect();
    Mdp::new(ns, na, spec.gamma, p, r)
}

/// A model together with the LP objective weights and constraint weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub mdp: Mdp,
    pub rho: DistributionRho,
    pub weights: Weights,
}

impl Problem {
    /// Uniform `rho` and unit weights.
    pub fn standard(mdp: Mdp) -> Self {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        Self {
            mdp,
            rho: DistributionRho::uniform(ns, na),
            weights: Weights::ones(ns, na),
        }
    }
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho: Option<&'a QTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<&'a TripleTable>,
}

/// Serializes a model. `rho` and `weights` are written only when given.
pub fn to_json(mdp: &Mdp, rho: Option<&DistributionRho>, weights: Option<&Weights>) -> Result<String> {
    let out = ModelFileOut {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        gamma: mdp.gamma(),
        transition: mdp.transition_nested(),
        reward: mdp.reward_nested(),
        rho: rho.map(DistributionRho::table),
        weights: weights.map(Weights::table),
    };
    Ok(serde_json::to_string_pretty(&out)?)
}

pub fn save_problem(problem: &Problem, path: impl AsRef<Path>) -> Result<()> {
    let text = to_json(&problem.mdp, Some(&problem.rho), Some(&problem.weights))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes only the model tensors; loading it back gives default `rho` and weights.
pub fn save(mdp: &Mdp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json(mdp, None, None)? + "\n")?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Problem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        context: context.into(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| parse_err(format!("`{key}`"), "missing required key"))
}

fn as_usize(v: &Value, key: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| parse_err(format!("`{key}`"), "expected a nonnegative integer"))
}

fn number(v: &Value, context: impl Fn() -> String) -> Result<f64> {
    v.as_f64().ok_or_else(|| parse_err(context(), "expected a number"))
}

fn array(v: &Value, len: usize, context: impl Fn() -> String) -> Result<&Vec<Value>> {
    let arr = v.as_array().ok_or_else(|| parse_err(context(), "expected an array"))?;
    if arr.len() != len {
        return Err(parse_err(
            context(),
            format!("expected {len} entries, found {}", arr.len()),
        ));
    }
    Ok(arr)
}

/// Reads a `[d0][d1][d2]` tensor into a flat vector.
fn tensor3(v: &Value, key: &str, dims: [usize; 3]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dims.iter().product());
    for (i, block) in array(v, dims[0], || format!("`{key}`"))?.iter().enumerate() {
        for (j, row) in array(block, dims[1], || format!("`{key}`[{i}]"))?.iter().enumerate() {
            for (k, x) in array(row, dims[2], || format!("`{key}`[{i}][{j}]"))?.iter().enumerate() {
                out.push(number(x, || format!("`{key}`[{i}][{j}][{k}]"))?);
            }
        }
    }
    Ok(out)
}

fn tensor2(v: &Value, key: &str, dims: [usize; 2]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dims[0] * dims[1]);
    for (i, row) in array(v, dims[0], || format!("`{key}`"))?.iter().enumerate() {
        for (j, x) in array(row, dims[1], || format!("`{key}`[{i}]"))?.iter().enumerate() {
            out.push(number(x, || format!("`{key}`[{i}][{j}]"))?);
        }
    }
    Ok(out)
}

/// Parses the model format. Shapes and types are checked here; probability
/// invariants are left to [`Mdp::validate`].
pub fn from_json(text: &str) -> Result<Problem> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("document", e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| parse_err("document", "top level must be an object"))?;
    let ns = as_usize(field(obj, "num_states")?, "num_states")?;
    let na = as_usize(field(obj, "num_actions")?, "num_actions")?;
    if ns == 0 || na == 0 {
        return Err(parse_err("`num_states`/`num_actions`", "must be positive"));
    }
    let gamma = number(field(obj, "gamma")?, || "`gamma`".into())?;
    let p = tensor3(field(obj, "transition")?, "transition", [ns, na, ns])?;
    let r = tensor3(field(obj, "reward")?, "reward", [ns, na, ns])?;
    let mdp = Mdp::new(ns, na, gamma, p, r)?;
    let rho = match obj.get("rho") {
        None | Some(Value::Null) => DistributionRho::uniform(ns, na),
        Some(v) => {
            let t = QTable::from_vec(ns, na, tensor2(v, "rho", [ns, na])?)?;
            DistributionRho::new(t).map_err(|e| parse_err("`rho`", e.to_string()))?
        }
    };
    let weights = match obj.get("weights") {
        None | Some(Value::Null) => Weights::ones(ns, na),
        Some(v) => {
            let t = TripleTable::from_vec(ns, na, tensor3(v, "weights", [ns, na, na])?)?;
            Weights::new(t).map_err(|e| parse_err("`weights`", e.to_string()))?
        }
    };
    Ok(Problem { mdp, rho, weights })
}
