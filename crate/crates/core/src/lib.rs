//! Log-barrier gradient descent for the Q-function linear program of finite
//! discounted MDPs, with dynamic-programming oracles and bound certificates.

// `!(x > 0.0)` is the idiom for "not positive, or NaN" throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod bounds;
pub mod cli;
pub mod env;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod parallel;
pub mod solver;
pub mod table;

pub use error::{ConstraintIndex, Error, Result};
pub use mdp::{DistributionRho, Mdp, PairWeights, PolicyDet, PolicyStoch, Weights};
pub use table::{QTable, TripleTable};
