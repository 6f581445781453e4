use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TabularMDP;
use crate::error::{Result, SpoError};
use crate::pref::{geometric_preference, GeometricEndpoint, GeometricParams, PreferenceValue};
use crate::pref::{Trajectory, TrajectoryPreference};

/// Point mass in the plane moved by fixed displacement actions. Modeled as a
/// single-state MDP: the endpoint is the sum of the chosen displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointNavEnv {
    pub horizon: usize,
    pub directions: Vec<(f64, f64)>,
    pub params: GeometricParams,
}

impl Default for PointNavEnv {
    /// Eight unit compass moves, horizon 12.
    fn default() -> Self {
        Self::compass(8, 12)
    }
}

impl PointNavEnv {
    pub fn compass(n_directions: usize, horizon: usize) -> Self {
        let directions = (0..n_directions)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n_directions as f64;
                (th.cos(), th.sin())
            })
            .collect();
        Self {
            horizon,
            directions,
            params: GeometricParams::default(),
        }
    }

    pub fn mdp(&self) -> Result<TabularMDP> {
        let a = self.directions.len();
        if a == 0 {
            return Err(SpoError::InvalidInput("point-nav needs at least one direction".into()));
        }
        TabularMDP::deterministic(1, a, self.horizon, 0, |_, _| 0, None)
    }

    pub fn position(&self, t: &Trajectory) -> (f64, f64) {
        t.steps.iter().fold((0.0, 0.0), |(x, y), &(_, a)| {
            let d = self.directions[a];
            (x + d.0, y + d.1)
        })
    }

    pub fn endpoint(&self, t: &Trajectory) -> GeometricEndpoint {
        let (x, y) = self.position(t);
        GeometricEndpoint::from_cartesian(x, y)
    }

    pub fn preference(&self) -> PointNavPreference {
        PointNavPreference { env: self.clone() }
    }
}

/// Geometric preference on episode endpoints.
#[derive(Debug, Clone)]
pub struct PointNavPreference {
    env: PointNavEnv,
}

impl TrajectoryPreference for PointNavPreference {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        geometric_preference(&self.env.endpoint(a), &self.env.endpoint(b), &self.env.params)
    }
}
