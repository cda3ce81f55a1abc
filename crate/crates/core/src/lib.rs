//! Restless-bandit policy engine.
//!
//! Solves the average-reward LP relaxation of an N-armed restless bandit,
//! builds the W-weighted Lyapunov machinery around the optimal single-armed
//! policy, and simulates focus-set policies (set-expansion, ID,
//! set-optimization) next to LP-priority, FTVA and a random baseline.

pub mod chain;
pub mod checks;
pub mod error;
pub mod instances;
pub mod lp;
pub mod lyapunov;
pub mod mdp;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod setopt;
pub mod setupdate;
pub mod simplex;
pub mod simulator;
pub mod stats;

pub use error::{Error, Result};
pub use lp::{solve_lp, LpSolution, SolveOptions};
pub use lyapunov::LyapunovKit;
pub use mdp::{ArmConfig, InitialStates, RbInstance};
pub use policies::PolicyKind;
pub use simulator::{run, RunOptions, RunResult};
