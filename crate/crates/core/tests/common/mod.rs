//! Helpers shared by the integration tests: seeded instances, interior
//! points and finite differences computed straight from `f_eta`.
#![allow(dead_code)]

use barrier_mdp::barrier::{f_eta, grad_f_eta, BarrierParams};
use barrier_mdp::env::{random_mdp, RandomMdpSpec};
use barrier_mdp::solver::feasible_init;
use barrier_mdp::{DistributionRho, Mdp, QTable, TripleTable, Weights};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

/// Random model with `1..=max_states` states and `1..=max_actions` actions.
pub fn random_instance(seed: u64, max_states: usize, max_actions: usize) -> Mdp {
    let mut r = rng(seed ^ 0x5eed);
    let ns = 1 + below(&mut r, max_states as u64) as usize;
    let na = 1 + below(&mut r, max_actions as u64) as usize;
    random_mdp(&RandomMdpSpec::dense(ns, na, seed)).unwrap()
}

/// Weights in `[0.5, 2]`, a random positive `rho` and the given `eta`.
pub fn random_params(mdp: &Mdp, eta: f64, r: &mut ChaCha8Rng) -> BarrierParams {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let w = TripleTable::from_fn(ns, na, |_, _, _| 0.5 + 1.5 * unit(r));
    let raw: Vec<f64> = (0..ns * na).map(|_| 0.1 + unit(r)).collect();
    let total: f64 = raw.iter().sum();
    let rho = QTable::from_vec(ns, na, raw.iter().map(|v| v / total).collect()).unwrap();
    BarrierParams::new(eta, Weights::new(w).unwrap(), DistributionRho::new(rho).unwrap()).unwrap()
}

/// A point whose slacks all exceed `margin - gamma`, jittered by up to `spread`.
pub fn interior_point(mdp: &Mdp, margin: f64, spread: f64, r: &mut ChaCha8Rng) -> QTable {
    let mut q = feasible_init(mdp, margin + spread).unwrap();
    for v in q.as_mut_slice() {
        *v -= spread * unit(r);
    }
    q
}

fn shifted(q: &QTable, i: usize, h: f64) -> QTable {
    let mut out = q.clone();
    out.as_mut_slice()[i] += h;
    out
}

/// Central differences of `f_eta`, one coordinate at a time.
pub fn fd_gradient(mdp: &Mdp, q: &QTable, p: &BarrierParams, h: f64) -> Vec<f64> {
    (0..q.as_slice().len())
        .map(|i| {
            let up = f_eta(mdp, &shifted(q, i, h), p).unwrap();
            let down = f_eta(mdp, &shifted(q, i, -h), p).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the gradient; column `j` is the derivative along `e_j`.
pub fn fd_hessian(mdp: &Mdp, q: &QTable, p: &BarrierParams, h: f64) -> Vec<Vec<f64>> {
    let n = q.as_slice().len();
    let mut h_fd = vec![vec![0.0; n]; n];
    for j in 0..n {
        let up = grad_f_eta(mdp, &shifted(q, j, h), p).unwrap();
        let down = grad_f_eta(mdp, &shifted(q, j, -h), p).unwrap();
        for (row, (u, d)) in h_fd.iter_mut().zip(up.as_slice().iter().zip(down.as_slice())) {
            row[j] = (u - d) / (2.0 * h);
        }
    }
    h_fd
}
