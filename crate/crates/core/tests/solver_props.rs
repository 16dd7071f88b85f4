//! Solver behaviour against the LP optimum and across start strategies.

mod common;

use barrier_mdp::barrier::{BarrierParams, EvalBarrierParams};
use barrier_mdp::env::{random_mdp, RandomMdpSpec};
use barrier_mdp::oracle::{lp_optimum, policy_q, OracleTolerances};
use barrier_mdp::parallel::{eta_sweep, solve_batch, Execution};
use barrier_mdp::solver::{
    eta_continuation, feasible_init, solve, solve_from, solve_observed, solve_policy_eval, SolverOptions, StepMode,
    Termination,
};
use barrier_mdp::{Error, Mdp, PolicyStoch, QTable};
use common::random_instance;
use proptest::prelude::*;

fn tight() -> OracleTolerances {
    OracleTolerances::new(1e-12, 10_000_000).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn minimizer_dominates_the_lp_optimum_within_the_sandwich(seed in 0u64..10_000, k in 0usize..3) {
        let eta = [0.1, 0.01, 0.001][k];
        let mdp = random_instance(seed, 5, 3);
        let p = BarrierParams::standard(&mdp, eta).unwrap();
        let rep = solve(&mdp, &p, &SolverOptions::default()).unwrap();
        prop_assert!(rep.converged());
        let q_hat = lp_optimum(&mdp, tight()).unwrap();
        for (t, h) in rep.q_tilde.as_slice().iter().zip(q_hat.as_slice()) {
            prop_assert!(t >= h);
        }
        let dist = rep.q_tilde.sup_distance(&q_hat);
        let slackness = 1e-6;
        prop_assert!(dist >= eta * p.weights.min() * (1.0 - slackness));
        prop_assert!(dist <= eta * p.weights.sum() / p.rho.min() + slackness);
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let mdp = random_mdp(&RandomMdpSpec::dense(6, 3, 4)).unwrap();
    let base = BarrierParams::standard(&mdp, 0.1).unwrap();
    let etas = [0.1, 0.03, 0.01, 0.003];
    let opts = SolverOptions::default();
    let warm = eta_continuation(&mdp, &base, &etas, &opts).unwrap();
    let cold = eta_sweep(Execution::Sequential, &mdp, &base, &etas, &opts).unwrap();
    for (w, c) in warm.iter().zip(&cold) {
        assert!(w.converged() && c.converged());
        assert!(w.q_tilde.sup_distance(&c.q_tilde) <= 1e-6, "eta {}", w.eta);
    }
    let warm_iters: usize = warm[1..].iter().map(|r| r.iterations).sum();
    let cold_iters: usize = cold[1..].iter().map(|r| r.iterations).sum();
    assert!(warm_iters < cold_iters);
}

#[test]
fn full_history_is_monotone_and_interior() {
    let mdp = random_mdp(&RandomMdpSpec::dense(4, 3, 9)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.01).unwrap();
    for step_mode in [StepMode::default(), StepMode::Constant { step: 0.05 }] {
        let opts = SolverOptions {
            step_mode,
            record_history: true,
            max_iters: 2_000_000,
            ..SolverOptions::default()
        };
        let rep = solve(&mdp, &p, &opts).unwrap();
        assert!(rep.converged());
        assert_eq!(rep.history.len(), rep.iterations + 1);
        for w in rep.history.windows(2) {
            assert!(w[0].decrease <= 0.0);
            assert!(w[1].f_value <= w[0].f_value + 1e-12 * (1.0 + w[0].f_value.abs()));
            assert!(w[1].min_slack > 0.0);
        }
        let last = rep.history.last().unwrap();
        assert_eq!((last.step, last.decrease), (0.0, 0.0));
        assert_eq!(last.f_value, rep.final_f_value);
    }
}

#[test]
fn streamed_history_reaches_only_the_observer() {
    let mdp = random_mdp(&RandomMdpSpec::dense(3, 2, 2)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.1).unwrap();
    let opts = SolverOptions {
        record_history: true,
        keep_history: false,
        ..SolverOptions::default()
    };
    let mut seen = 0;
    let q0 = feasible_init(&mdp, 1.0).unwrap();
    let rep = solve_observed(&mdp, &p, q0, &opts, &mut |_, _| seen += 1).unwrap();
    assert!(rep.history.is_empty());
    assert_eq!(seen, rep.iterations + 1);
}

#[test]
fn sparse_history_keeps_every_hundredth_and_the_last() {
    let mdp = random_mdp(&RandomMdpSpec::dense(4, 2, 3)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.01).unwrap();
    let opts = SolverOptions {
        step_mode: StepMode::Constant { step: 0.05 },
        max_iters: 1_000_000,
        ..SolverOptions::default()
    };
    let rep = solve(&mdp, &p, &opts).unwrap();
    assert!(rep.iterations > 200);
    let iters: Vec<usize> = rep.history.iter().map(|h| h.iteration).collect();
    assert!(iters[..iters.len() - 1].iter().all(|i| i % 100 == 0));
    assert_eq!(*iters.last().unwrap(), rep.iterations);
}

#[test]
fn iteration_budget_is_reported() {
    let mdp = random_mdp(&RandomMdpSpec::dense(4, 2, 3)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.01).unwrap();
    let opts = SolverOptions {
        max_iters: 5,
        ..SolverOptions::default()
    };
    let rep = solve(&mdp, &p, &opts).unwrap();
    assert_eq!(rep.termination, Termination::MaxIters);
    assert_eq!(rep.iterations, 5);
    assert!(!rep.converged());
}

#[test]
fn exterior_start_is_rejected() {
    let mdp = random_mdp(&RandomMdpSpec::dense(3, 2, 1)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.1).unwrap();
    let q0 = QTable::zeros(3, 2);
    assert!(matches!(
        solve_from(&mdp, &p, q0, &SolverOptions::default()),
        Err(Error::OutOfDomain { .. })
    ));
}

#[test]
fn policy_evaluation_approaches_q_pi_from_above() {
    let mdp = random_mdp(&RandomMdpSpec::dense(5, 3, 12)).unwrap();
    let pi = PolicyStoch::uniform(5, 3);
    let q_pi = policy_q(&mdp, &pi).unwrap();
    let mut last = f64::INFINITY;
    for eta in [0.1, 0.01, 0.001] {
        let p = EvalBarrierParams::standard(&mdp, eta).unwrap();
        let rep = solve_policy_eval(&mdp, &pi, &p, &SolverOptions::default()).unwrap();
        assert!(rep.converged());
        for (t, q) in rep.q_tilde.as_slice().iter().zip(q_pi.as_slice()) {
            assert!(t > q);
        }
        let d = rep.q_tilde.sup_distance(&q_pi);
        assert!(d < last);
        last = d;
    }
}

#[test]
fn batch_modes_agree() {
    let problems: Vec<(Mdp, BarrierParams)> = (0..6)
        .map(|seed| {
            let m = random_mdp(&RandomMdpSpec::dense(4, 2, seed)).unwrap();
            let p = BarrierParams::standard(&m, 0.05).unwrap();
            (m, p)
        })
        .collect();
    let opts = SolverOptions::default();
    let a = solve_batch(Execution::Parallel, &problems, &opts).unwrap();
    let b = solve_batch(Execution::Sequential, &problems, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn backtracking_steps_meet_armijo_and_stay_in_the_start_level_set() {
    let mdp = random_mdp(&RandomMdpSpec::dense(5, 3, 11)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.01).unwrap();
    let opts = SolverOptions {
        record_history: true,
        ..SolverOptions::default()
    };
    let rep = solve(&mdp, &p, &opts).unwrap();
    assert!(rep.converged());
    let f0 = rep.history[0].f_value;
    for w in rep.history.windows(2) {
        // the squared 2-norm is at least the squared sup norm
        let wanted = -1e-4 * w[0].step * w[0].grad_inf_norm * w[0].grad_inf_norm;
        let change = w[1].f_value - w[0].f_value;
        assert!(
            change <= wanted + 1e-12 * (1.0 + w[0].f_value.abs()),
            "iteration {}",
            w[0].iteration
        );
        assert!(w[1].f_value <= f0);
    }
}

#[test]
fn constant_step_error_decays_geometrically() {
    let mdp = random_mdp(&RandomMdpSpec::dense(4, 2, 5)).unwrap();
    let p = BarrierParams::standard(&mdp, 0.1).unwrap();
    let reference = solve(
        &mdp,
        &p,
        &SolverOptions {
            grad_tol: 1e-12,
            ..SolverOptions::default()
        },
    )
    .unwrap();
    let opts = SolverOptions {
        step_mode: StepMode::Constant { step: 0.01 },
        record_history: true,
        keep_history: false,
        grad_tol: 1e-7,
        max_iters: 2_000_000,
        ..SolverOptions::default()
    };
    let mut errors = Vec::new();
    let q0 = feasible_init(&mdp, 1.0).unwrap();
    let rep = solve_observed(&mdp, &p, q0, &opts, &mut |_, q| {
        let d: f64 = q
            .as_slice()
            .iter()
            .zip(reference.q_tilde.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        errors.push(d.sqrt().ln());
    })
    .unwrap();
    assert!(rep.converged());
    let tail = &errors[errors.len() / 2..];
    let n = tail.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = tail.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in tail.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    assert!(slope < 0.0, "slope {slope}");
}

#[test]
fn greedy_policy_evaluation_matches_the_optimality_solve() {
    let mdp = random_mdp(&RandomMdpSpec::dense(4, 2, 8)).unwrap();
    let eta = 1e-3;
    let p = BarrierParams::standard(&mdp, eta).unwrap();
    let opt = solve(&mdp, &p, &SolverOptions::default()).unwrap();
    let pi = barrier_mdp::mdp::greedy(&opt.q_tilde).to_stochastic(2);
    let pe = EvalBarrierParams::standard(&mdp, eta).unwrap();
    let ev = solve_policy_eval(&mdp, &pi, &pe, &SolverOptions::default()).unwrap();
    assert!(ev.converged());
    let q_hat = lp_optimum(&mdp, tight()).unwrap();
    let q_pi = policy_q(&mdp, &pi).unwrap();
    let allowance = eta * p.weights.sum() / p.rho.min() + eta * pe.weights.sum() / pe.rho.min();
    assert!(ev.q_tilde.sup_distance(&opt.q_tilde) <= allowance + q_pi.sup_distance(&q_hat));
}
