//! Bellman operators and the dynamic-programming oracles.

mod common;

use barrier_mdp::env::{chain, frozen_lake, GridSpec, FROZEN_LAKE_6};
use barrier_mdp::mdp::{bellman_f, bellman_t, bellman_t_pi, greedy};
use barrier_mdp::oracle::{exact_j, lp_optimum, policy_q, value_iteration, OracleTolerances};
use barrier_mdp::{Mdp, PolicyStoch, QTable};
use common::{random_instance, rng, unit};
use proptest::prelude::*;
use rand_core::RngCore;

fn random_q(mdp: &Mdp, scale: f64, seed: u64) -> QTable {
    let mut r = rng(seed);
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    for v in q.as_mut_slice() {
        *v = scale * (2.0 * unit(&mut r) - 1.0);
    }
    q
}

fn random_policy(mdp: &Mdp, seed: u64) -> PolicyStoch {
    let mut r = rng(seed);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut t = QTable::zeros(ns, na);
    for s in 0..ns {
        let raw: Vec<f64> = (0..na).map(|_| 0.05 + unit(&mut r)).collect();
        let total: f64 = raw.iter().sum();
        for (a, v) in raw.iter().enumerate() {
            t.set(s, a, v / total);
        }
    }
    PolicyStoch::new(t).unwrap()
}

fn tight() -> OracleTolerances {
    OracleTolerances::new(1e-12, 10_000_000).unwrap()
}

/// `max_a' (FQ)(s,a,a')`.
fn max_f(mdp: &Mdp, q: &QTable) -> QTable {
    let f = bellman_f(mdp, q).unwrap();
    QTable::from_fn(mdp.num_states(), mdp.num_actions(), |s, a| {
        f.lane(s, a).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn t_is_a_gamma_contraction(seed in 0u64..1000, a in 0u64..1000, b in 0u64..1000) {
        let mdp = random_instance(seed, 6, 4);
        let (x, y) = (random_q(&mdp, 10.0, a), random_q(&mdp, 10.0, b));
        let tx = bellman_t(&mdp, &x).unwrap();
        let ty = bellman_t(&mdp, &y).unwrap();
        prop_assert!(tx.sup_distance(&ty) <= mdp.gamma() * x.sup_distance(&y) + 1e-12);
    }

    #[test]
    fn t_pi_is_a_gamma_contraction(seed in 0u64..1000, a in 0u64..1000, b in 0u64..1000) {
        let mdp = random_instance(seed, 6, 4);
        let pi = random_policy(&mdp, seed ^ a);
        let (x, y) = (random_q(&mdp, 10.0, a), random_q(&mdp, 10.0, b));
        let tx = bellman_t_pi(&mdp, &pi, &x).unwrap();
        let ty = bellman_t_pi(&mdp, &pi, &y).unwrap();
        prop_assert!(tx.sup_distance(&ty) <= mdp.gamma() * x.sup_distance(&y) + 1e-12);
    }

    #[test]
    fn greedy_value_iteration_policy_is_near_optimal(seed in 0u64..1000) {
        let mdp = random_instance(seed, 6, 4);
        let vi_tol = 1e-10;
        let q = value_iteration(&mdp, OracleTolerances::new(vi_tol, 10_000_000).unwrap()).unwrap();
        let pi = greedy(&q).to_stochastic(mdp.num_actions());
        let q_pi = policy_q(&mdp, &pi).unwrap();
        let g = mdp.gamma();
        prop_assert!(q_pi.sup_distance(&q) <= vi_tol * (1.0 + g) / (1.0 - g) + 1e-9);
    }

    #[test]
    fn t_is_monotone(seed in 0u64..1000, a in 0u64..1000, bump in 0.0f64..5.0) {
        let mdp = random_instance(seed, 6, 4);
        let x = random_q(&mdp, 10.0, a);
        let mut r = rng(a ^ 1);
        let mut y = x.clone();
        for v in y.as_mut_slice() {
            *v += bump * unit(&mut r);
        }
        let tx = bellman_t(&mdp, &x).unwrap();
        let ty = bellman_t(&mdp, &y).unwrap();
        for (p, q) in tx.as_slice().iter().zip(ty.as_slice()) {
            prop_assert!(p <= q);
        }
    }

    #[test]
    fn max_f_never_exceeds_t(seed in 0u64..1000, a in 0u64..1000) {
        let mdp = random_instance(seed, 6, 4);
        let q = random_q(&mdp, 10.0, a);
        let t = bellman_t(&mdp, &q).unwrap();
        let m = max_f(&mdp, &q);
        for (x, y) in m.as_slice().iter().zip(t.as_slice()) {
            prop_assert!(x <= &(y + 1e-12));
        }
    }

    #[test]
    fn greedy_ignores_positive_affine_maps(seed in 0u64..1000, c in 0.01f64..100.0, b in -50.0f64..50.0) {
        let mdp = random_instance(seed, 6, 4);
        let q = random_q(&mdp, 1.0, seed);
        prop_assert_eq!(greedy(&q), greedy(&q.map(|v| c * v + b)));
    }

    #[test]
    fn policy_q_is_the_fixed_point_of_t_pi(seed in 0u64..1000) {
        let mdp = random_instance(seed, 6, 3);
        let pi = PolicyStoch::uniform(mdp.num_states(), mdp.num_actions());
        let q = policy_q(&mdp, &pi).unwrap();
        let tq = bellman_t_pi(&mdp, &pi, &q).unwrap();
        prop_assert!(q.sup_distance(&tq) <= 1e-9);
    }

    #[test]
    fn lp_optimum_sits_below_q_star(seed in 0u64..300) {
        let mdp = random_instance(seed, 5, 3);
        let q_star = value_iteration(&mdp, tight()).unwrap();
        let q_hat = lp_optimum(&mdp, tight()).unwrap();
        for (h, s) in q_hat.as_slice().iter().zip(q_star.as_slice()) {
            prop_assert!(h <= &(s + 1e-9));
        }
    }
}

#[test]
fn max_f_equals_t_on_deterministic_models() {
    let lake = frozen_lake(&GridSpec::from_layout(&FROZEN_LAKE_6, 0.0, 0.9).unwrap()).unwrap();
    for mdp in [lake, chain(7, 0.8).unwrap()] {
        assert!(mdp.is_deterministic());
        for seed in 0..10 {
            let q = random_q(&mdp, 5.0, seed);
            assert_eq!(max_f(&mdp, &q), bellman_t(&mdp, &q).unwrap());
        }
        let q_star = value_iteration(&mdp, tight()).unwrap();
        let q_hat = lp_optimum(&mdp, tight()).unwrap();
        assert!(q_star.sup_distance(&q_hat) <= 1e-10);
    }
}

#[test]
fn stochastic_lake_separates_the_lp_optimum_from_q_star() {
    let mdp = frozen_lake(&GridSpec::frozen_lake6()).unwrap();
    let q_star = value_iteration(&mdp, tight()).unwrap();
    let q_hat = lp_optimum(&mdp, tight()).unwrap();
    assert!(q_star.sup_distance(&q_hat) > 1e-3);
}

#[test]
fn value_iteration_is_a_fixed_point() {
    let mdp = random_instance(42, 8, 4);
    let q = value_iteration(&mdp, tight()).unwrap();
    assert!(q.sup_distance(&bellman_t(&mdp, &q).unwrap()) <= 1e-11);
}

#[test]
fn exact_j_matches_monte_carlo() {
    let mdp = random_instance(5, 4, 2);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let pi = PolicyStoch::uniform(ns, na);
    let rho_state = vec![1.0 / ns as f64; ns];
    let exact = exact_j(&mdp, &pi, &rho_state).unwrap();

    // 20k episodes truncated where gamma^h drops below 1e-6
    let horizon = (1e-6f64.ln() / mdp.gamma().ln()).ceil() as usize;
    let episodes = 20_000;
    let mut r = rng(99);
    let pick = |weights: &dyn Fn(usize) -> f64, n: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let u = unit(r);
        let mut acc = 0.0;
        for i in 0..n {
            acc += weights(i);
            if u < acc {
                return i;
            }
        }
        n - 1
    };
    let mut total = 0.0;
    let mut sq = 0.0;
    for _ in 0..episodes {
        let mut s = (r.next_u64() % ns as u64) as usize;
        let mut ret = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let a = pick(&|a| pi.prob(s, a), na, &mut r);
            let next = pick(&|n| mdp.p(s, a, n), ns, &mut r);
            ret += disc * mdp.r(s, a, next);
            disc *= mdp.gamma();
            s = next;
        }
        total += ret;
        sq += ret * ret;
    }
    let mean = total / episodes as f64;
    let sd = ((sq / episodes as f64 - mean * mean) / episodes as f64).sqrt();
    assert!(
        (mean - exact).abs() <= 5.0 * sd + 1e-5,
        "mc {mean} vs exact {exact} (sd {sd})"
    );
}
