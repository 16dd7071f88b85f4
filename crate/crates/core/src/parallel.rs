//! Batch work over independent solves: whole instances, `eta` sweeps and
//! finite-difference probes. Each item runs sequentially; only the batch is
//! spread over threads, and results always come back in input order, so
//! both modes return identical values.

use crate::barrier::{BarrierParams, DualTensor};
use crate::error::Result;
use crate::mdp::Mdp;
use crate::solver::{check_eta_path, solve, SolverOptions, SolverReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the `parallel` feature is off.
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually uses more than one thread in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// `items.iter().map(f).collect()`, optionally spread over the rayon pool.
pub fn map_collect<T, U, F>(mode: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Execution::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Independent solves of one `eta` each, all from the constant start.
pub fn eta_sweep(
    mode: Execution,
    mdp: &Mdp,
    base: &BarrierParams,
    etas: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SolverReport<DualTensor>>> {
    check_eta_path(etas)?;
    map_collect(mode, etas, |&eta| solve(mdp, &base.with_eta(eta)?, opts))
        .into_iter()
        .collect()
}

/// One solve per `(model, params)` pair.
pub fn solve_batch(
    mode: Execution,
    problems: &[(Mdp, BarrierParams)],
    opts: &SolverOptions,
) -> Result<Vec<SolverReport<DualTensor>>> {
    map_collect(mode, problems, |(mdp, p)| solve(mdp, p, opts))
        .into_iter()
        .collect()
}
