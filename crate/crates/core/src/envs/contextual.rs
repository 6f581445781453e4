use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::game::MixedStrategy;
use crate::pref::{PreferenceMatrix, PreferenceValue};
use crate::sampling::sample_index;

/// Finite contexts drawn from `rho`, each with its own preference game over
/// that context's arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualBandit {
    pub games: Vec<PreferenceMatrix>,
    pub rho: MixedStrategy,
}

impl ContextualBandit {
    pub fn new(games: Vec<PreferenceMatrix>, rho: MixedStrategy) -> Result<Self> {
        if games.is_empty() {
            return Err(SpoError::InvalidInput("need at least one context".into()));
        }
        if games.len() != rho.len() {
            return Err(SpoError::DimensionMismatch {
                expected: games.len(),
                got: rho.len(),
            });
        }
        Ok(Self { games, rho })
    }

    pub fn n_contexts(&self) -> usize {
        self.games.len()
    }

    pub fn n_arms(&self, x: usize) -> usize {
        self.games[x].n()
    }

    pub fn preference(&self, x: usize, y: usize, y2: usize) -> Result<PreferenceValue> {
        self.games
            .get(x)
            .ok_or(SpoError::IndexOutOfRange {
                index: x,
                len: self.games.len(),
            })?
            .get(y, y2)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.rho.probs(), rng)
    }
}
