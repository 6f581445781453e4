use serde::{Deserialize, Serialize};

use super::{PointNavEnv, TabularMDP};
use crate::error::{Result, SpoError};
use crate::pref::{FnPreference, NonMarkovSpec, PreferenceValue, Trajectory};

pub const GRIDWORLD_SIDE: usize = 5;

/// Named instance addressable from the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Builtin {
    Mdp(TabularMDP),
    /// Tabular MDP paired with the tail-return constraint of its preference.
    NonMarkov { mdp: TabularMDP, spec: NonMarkovSpec },
    PointNav(PointNavEnv),
}

pub fn builtin_names() -> &'static [&'static str] {
    &["chain", "gridworld", "nonmarkov-chain", "pointnav"]
}

pub fn builtin(name: &str) -> Result<Builtin> {
    match name {
        "chain" => Ok(Builtin::Mdp(chain(2, 3, 0.1)?)),
        "gridworld" => Ok(Builtin::Mdp(gridworld()?)),
        "nonmarkov-chain" => {
            let (mdp, spec) = nonmarkov_chain()?;
            Ok(Builtin::NonMarkov { mdp, spec })
        }
        "pointnav" => Ok(Builtin::PointNav(PointNavEnv::default())),
        other => Err(SpoError::Config(format!(
            "unknown environment '{other}' (known: {})",
            builtin_names().join(", ")
        ))),
    }
}

/// Left/right chain starting at state 0. The intended move fails (agent
/// stays put) with probability `slip`. Reward `s / (n - 1)`.
pub fn chain(n_states: usize, horizon: usize, slip: f64) -> Result<TabularMDP> {
    if n_states < 2 || !(0.0..=1.0).contains(&slip) {
        return Err(SpoError::InvalidInput("chain needs >= 2 states and slip in [0, 1]".into()));
    }
    let last = n_states - 1;
    let transitions = (0..n_states)
        .map(|s| {
            (0..2)
                .map(|a| {
                    let target = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(last) };
                    let mut row = vec![0.0; n_states];
                    row[target] += 1.0 - slip;
                    row[s] += slip;
                    row
                })
                .collect()
        })
        .collect();
    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    let reward = (0..n_states).map(|s| vec![s as f64 / last as f64; 2]).collect();
    TabularMDP::new(n_states, 2, horizon, transitions, initial, Some(reward))
}

/// 5x5 grid, start in the top-left corner, actions up/down/left/right/stay.
/// Reward `1 - manhattan(s, goal) / 8` with the goal in the opposite corner;
/// horizon 10.
pub fn gridworld() -> Result<TabularMDP> {
    let n = GRIDWORLD_SIDE;
    let goal = (n - 1, n - 1);
    let next = |s: usize, a: usize| {
        let (r, c) = (s / n, s % n);
        let (r, c) = match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(n - 1), c),
            2 => (r, c.saturating_sub(1)),
            3 => (r, (c + 1).min(n - 1)),
            _ => (r, c),
        };
        r * n + c
    };
    let reward = (0..n * n)
        .map(|s| {
            let d = (goal.0 - s / n) + (goal.1 - s % n);
            vec![1.0 - d as f64 / 8.0; 5]
        })
        .collect();
    TabularMDP::deterministic(n * n, 5, 10, 0, next, Some(reward))
}

/// Five-state line with actions left/stay/right, reward `s / 4`, horizon 12,
/// and the constraint that the last quarter accrues at most 1.
pub fn nonmarkov_chain() -> Result<(TabularMDP, NonMarkovSpec)> {
    let next = |s: usize, a: usize| match a {
        0 => s.saturating_sub(1),
        1 => s,
        _ => (s + 1).min(4),
    };
    let reward = (0..5).map(|s| vec![s as f64 / 4.0; 3]).collect();
    let mdp = TabularMDP::deterministic(5, 3, 12, 0, next, Some(reward))?;
    Ok((mdp, NonMarkovSpec::new(1.0, 0.75)?))
}

type PrefFn = fn(&Trajectory, &Trajectory) -> Result<PreferenceValue>;

fn cyclic_class(t: &Trajectory) -> usize {
    t.steps.iter().filter(|s| s.1 == 1).count() % 3
}

fn cyclic_compare(a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
    let (x, y) = (cyclic_class(a), cyclic_class(b));
    let v = if x == y {
        0.0
    } else if (x + 1) % 3 == y {
        1.0
    } else {
        -1.0
    };
    PreferenceValue::new(v)
}

/// Rock-paper-scissors over the number of times action 1 is taken, mod 3.
/// No scalar trajectory reward explains it.
pub fn cyclic_action_count_preference() -> FnPreference<PrefFn> {
    FnPreference(cyclic_compare as PrefFn)
}
