//! Self-play preference optimization.
//!
//! Computes Minimax Winners of preference games by running a single no-regret
//! learner against its own iterates. Covers normal-form games with full and
//! bandit feedback, contextual bandits, and tabular finite-horizon MDPs with
//! trajectory-level preferences, plus a Bradley-Terry reward-model baseline and
//! exact solvers used to check every convergence claim.

pub mod baselines;
pub mod envs;
pub mod error;
pub mod game;
pub mod harness;
pub mod learners;
pub mod pref;
mod sampling;
pub mod spo;

pub use error::{Result, SpoError};
pub use sampling::splitmix_seed;
pub use game::{GameSolution, MixedStrategy};
pub use pref::{PreferenceMatrix, PreferenceValue, Trajectory};
