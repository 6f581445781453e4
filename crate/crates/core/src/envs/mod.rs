//! Finite-horizon tabular environments, history indexing, policies and exact
//! trajectory enumeration.

mod builtin;
mod contextual;
mod pointnav;

pub use builtin::{
    builtin, builtin_names, chain, cyclic_action_count_preference, gridworld, nonmarkov_chain,
    Builtin, GRIDWORLD_SIDE,
};
pub use contextual::ContextualBandit;
pub use pointnav::PointNavEnv;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::game::MixedStrategy;
use crate::pref::{PreferenceValue, Trajectory, TrajectoryPreference};
use crate::sampling::sample_index;

/// Maximum number of full trajectories `(S·A)^H` we agree to enumerate.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDoc", into = "MdpDoc")]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    horizon: usize,
    /// Flat `[s][a][s']`.
    transitions: Vec<f64>,
    initial: Vec<f64>,
    /// Flat `[s][a]`.
    reward: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct MdpDoc {
    states: usize,
    actions: usize,
    horizon: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    initial: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDoc> for TabularMDP {
    type Error = SpoError;

    fn try_from(d: MdpDoc) -> Result<Self> {
        TabularMDP::new(d.states, d.actions, d.horizon, d.transitions, d.initial, d.reward)
    }
}

impl From<TabularMDP> for MdpDoc {
    fn from(m: TabularMDP) -> Self {
        let (s, a) = (m.n_states, m.n_actions);
        MdpDoc {
            states: s,
            actions: a,
            horizon: m.horizon,
            transitions: (0..s)
                .map(|i| (0..a).map(|j| m.next_state_probs(i, j).to_vec()).collect())
                .collect(),
            initial: m.initial.clone(),
            reward: m
                .reward
                .as_ref()
                .map(|r| r.chunks(a).map(|c| c.to_vec()).collect()),
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SpoError::InvalidInput(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(SpoError::InvalidInput(format!("{what} sums to {total}, not 1")));
    }
    Ok(())
}

impl TabularMDP {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        initial: Vec<f64>,
        reward: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || horizon == 0 {
            return Err(SpoError::InvalidInput(
                "states, actions and horizon must be positive".into(),
            ));
        }
        if transitions.len() != n_states {
            return Err(SpoError::DimensionMismatch {
                expected: n_states,
                got: transitions.len(),
            });
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, row) in transitions.iter().enumerate() {
            if row.len() != n_actions {
                return Err(SpoError::DimensionMismatch {
                    expected: n_actions,
                    got: row.len(),
                });
            }
            for (a, next) in row.iter().enumerate() {
                if next.len() != n_states {
                    return Err(SpoError::DimensionMismatch {
                        expected: n_states,
                        got: next.len(),
                    });
                }
                check_distribution(next, &format!("transition row ({s}, {a})"))?;
                flat.extend_from_slice(next);
            }
        }
        if initial.len() != n_states {
            return Err(SpoError::DimensionMismatch {
                expected: n_states,
                got: initial.len(),
            });
        }
        check_distribution(&initial, "initial distribution")?;
        let reward = match reward {
            None => None,
            Some(r) => {
                if r.len() != n_states || r.iter().any(|row| row.len() != n_actions) {
                    return Err(SpoError::InvalidInput("reward table must be states x actions".into()));
                }
                let flat: Vec<f64> = r.into_iter().flatten().collect();
                if flat.iter().any(|x| !x.is_finite()) {
                    return Err(SpoError::NonFinite("reward table"));
                }
                Some(flat)
            }
        };
        Ok(Self {
            n_states,
            n_actions,
            horizon,
            transitions: flat,
            initial,
            reward,
        })
    }

    /// Deterministic dynamics `next(s, a)` with a fixed start state.
    pub fn deterministic<F: Fn(usize, usize) -> usize>(
        n_states: usize,
        n_actions: usize,
        horizon: usize,
        start: usize,
        next: F,
        reward: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let transitions = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|a| {
                        let mut row = vec![0.0; n_states];
                        row[next(s, a)] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        let mut initial = vec![0.0; n_states];
        initial[start] = 1.0;
        Self::new(n_states, n_actions, horizon, transitions, initial, reward)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> Option<f64> {
        self.reward.as_ref().map(|r| r[s * self.n_actions + a])
    }

    pub fn has_reward(&self) -> bool {
        self.reward.is_some()
    }

    /// Copy with the horizon replaced.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(SpoError::InvalidInput("horizon must be positive".into()));
        }
        Ok(Self {
            horizon,
            ..self.clone()
        })
    }

    fn pair_radix(&self) -> u128 {
        (self.n_states * self.n_actions) as u128
    }

    /// Number of distinct histories ending at step `h`: `(S·A)^h · S`.
    pub fn history_count(&self, h: usize) -> u128 {
        self.pair_radix().saturating_pow(h as u32).saturating_mul(self.n_states as u128)
    }

    /// Number of distinct full trajectories `(S·A)^H`.
    pub fn trajectory_count(&self) -> u128 {
        self.pair_radix().saturating_pow(self.horizon as u32)
    }

    pub fn check_enumerable(&self) -> Result<usize> {
        let needed = self.trajectory_count();
        if needed > ENUMERATION_LIMIT {
            return Err(SpoError::EnumerationTooLarge {
                needed,
                limit: ENUMERATION_LIMIT,
            });
        }
        Ok(needed as usize)
    }

    /// Attaches ground-truth rewards (when the MDP has them) to a step list.
    pub fn make_trajectory(&self, steps: Vec<(usize, usize)>) -> Trajectory {
        match &self.reward {
            Some(_) => {
                let r = steps
                    .iter()
                    .map(|&(s, a)| self.reward(s, a).expect("reward present"))
                    .collect();
                Trajectory::with_rewards(steps, r).expect("lengths agree")
            }
            None => Trajectory::new(steps),
        }
    }

    /// Mixed-radix code of a full trajectory in `[0, (S·A)^H)`.
    pub fn trajectory_code(&self, t: &Trajectory) -> Result<usize> {
        if t.horizon() != self.horizon {
            return Err(SpoError::DimensionMismatch {
                expected: self.horizon,
                got: t.horizon(),
            });
        }
        let mut code = 0usize;
        for &(s, a) in &t.steps {
            if s >= self.n_states || a >= self.n_actions {
                return Err(SpoError::InvalidInput(format!("step ({s}, {a}) out of range")));
            }
            code = code * self.n_states * self.n_actions + s * self.n_actions + a;
        }
        Ok(code)
    }

    pub fn decode_trajectory(&self, mut code: usize) -> Trajectory {
        let sa = self.n_states * self.n_actions;
        let mut steps = vec![(0, 0); self.horizon];
        for h in (0..self.horizon).rev() {
            let pair = code % sa;
            code /= sa;
            steps[h] = (pair / self.n_actions, pair % self.n_actions);
        }
        self.make_trajectory(steps)
    }
}

/// Encoded history prefix `(s_0, a_0, ..., s_{h-1}, a_{h-1}, s_h)`.
///
/// `id = pairs · S + s_h` where `pairs` is the mixed-radix code of the
/// completed `(s, a)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryIndex {
    pub step: usize,
    pub id: usize,
}

impl HistoryIndex {
    pub fn root(state: usize) -> Self {
        Self { step: 0, id: state }
    }

    pub fn encode(mdp: &TabularMDP, pairs: &[(usize, usize)], state: usize) -> Result<Self> {
        let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
        if state >= s_n {
            return Err(SpoError::IndexOutOfRange {
                index: state,
                len: s_n,
            });
        }
        if pairs.len() >= mdp.horizon {
            return Err(SpoError::InvalidInput(format!(
                "history of length {} exceeds horizon {}",
                pairs.len(),
                mdp.horizon
            )));
        }
        let mut code = 0usize;
        for &(s, a) in pairs {
            if s >= s_n || a >= a_n {
                return Err(SpoError::InvalidInput(format!("pair ({s}, {a}) out of range")));
            }
            code = code * s_n * a_n + s * a_n + a;
        }
        Ok(Self {
            step: pairs.len(),
            id: code * s_n + state,
        })
    }

    pub fn decode(&self, mdp: &TabularMDP) -> (Vec<(usize, usize)>, usize) {
        let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
        let state = self.id % s_n;
        let mut code = self.id / s_n;
        let mut pairs = vec![(0, 0); self.step];
        for h in (0..self.step).rev() {
            let p = code % (s_n * a_n);
            code /= s_n * a_n;
            pairs[h] = (p / a_n, p % a_n);
        }
        (pairs, state)
    }

    /// History after taking `action` here and landing in `next`.
    pub fn extend(&self, mdp: &TabularMDP, action: usize, next: usize) -> Self {
        let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
        let (pairs, state) = (self.id / s_n, self.id % s_n);
        let code = pairs * s_n * a_n + state * a_n + action;
        Self {
            step: self.step + 1,
            id: code * s_n + next,
        }
    }

    /// Code of the `(s, a)` pairs including the action taken here.
    pub fn pairs_code_with(&self, mdp: &TabularMDP, action: usize) -> usize {
        let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
        (self.id / s_n) * s_n * a_n + (self.id % s_n) * a_n + action
    }

    pub fn state(&self, mdp: &TabularMDP) -> usize {
        self.id % mdp.n_states
    }
}

/// A finite-horizon policy queried at `(step, history, state)`.
pub trait Policy {
    fn n_actions(&self) -> usize;
    fn action_probs(&self, history: HistoryIndex, state: usize) -> Result<&[f64]>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_actions(&self) -> usize {
        (**self).n_actions()
    }

    fn action_probs(&self, history: HistoryIndex, state: usize) -> Result<&[f64]> {
        (**self).action_probs(history, state)
    }
}

/// Action distributions per history `π_h(·|φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularHistoryPolicy {
    n_actions: usize,
    /// Per step, flat `[history][action]`.
    tables: Vec<Vec<f64>>,
}

/// Upper bound on stored history-table entries.
pub const HISTORY_TABLE_LIMIT: u128 = 20_000_000;

impl TabularHistoryPolicy {
    pub fn uniform(mdp: &TabularMDP) -> Result<Self> {
        let a = mdp.n_actions;
        let mut total: u128 = 0;
        for h in 0..mdp.horizon {
            total = total.saturating_add(mdp.history_count(h).saturating_mul(a as u128));
        }
        if total > HISTORY_TABLE_LIMIT {
            return Err(SpoError::EnumerationTooLarge {
                needed: total,
                limit: HISTORY_TABLE_LIMIT,
            });
        }
        let tables = (0..mdp.horizon)
            .map(|h| vec![1.0 / a as f64; mdp.history_count(h) as usize * a])
            .collect();
        Ok(Self {
            n_actions: a,
            tables,
        })
    }

    /// Deterministic policy from a chooser over histories.
    pub fn deterministic<F: FnMut(HistoryIndex) -> usize>(
        mdp: &TabularMDP,
        mut choose: F,
    ) -> Result<Self> {
        let mut p = Self::uniform(mdp)?;
        let a_n = p.n_actions;
        for (h, table) in p.tables.iter_mut().enumerate() {
            for (id, row) in table.chunks_mut(a_n).enumerate() {
                let a = choose(HistoryIndex { step: h, id });
                row.iter_mut().for_each(|x| *x = 0.0);
                row[a] = 1.0;
            }
        }
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.tables.len()
    }

    pub fn histories_at(&self, h: usize) -> usize {
        self.tables[h].len() / self.n_actions
    }

    pub fn get(&self, history: HistoryIndex) -> Result<&[f64]> {
        let table = self
            .tables
            .get(history.step)
            .ok_or(SpoError::PolicyUndefined { step: history.step })?;
        let start = history.id * self.n_actions;
        table
            .get(start..start + self.n_actions)
            .ok_or(SpoError::PolicyUndefined { step: history.step })
    }

    pub fn set(&mut self, history: HistoryIndex, probs: &[f64]) -> Result<()> {
        if probs.len() != self.n_actions {
            return Err(SpoError::DimensionMismatch {
                expected: self.n_actions,
                got: probs.len(),
            });
        }
        MixedStrategy::new(probs.to_vec())?;
        let a_n = self.n_actions;
        let table = self
            .tables
            .get_mut(history.step)
            .ok_or(SpoError::PolicyUndefined { step: history.step })?;
        let start = history.id * a_n;
        table
            .get_mut(start..start + a_n)
            .ok_or(SpoError::PolicyUndefined { step: history.step })?
            .copy_from_slice(probs);
        Ok(())
    }

    pub fn table(&self, h: usize) -> &[f64] {
        &self.tables[h]
    }

    pub(crate) fn table_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.tables[h]
    }
}

impl Policy for TabularHistoryPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, history: HistoryIndex, _state: usize) -> Result<&[f64]> {
        self.get(history)
    }
}

/// Time-indexed Markov policy `π_h(·|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flat `[h][s][a]`.
    pub probs: Vec<f64>,
}

impl MarkovPolicy {
    pub fn uniform(mdp: &TabularMDP) -> Self {
        let (s, a) = (mdp.n_states, mdp.n_actions);
        Self {
            n_states: s,
            n_actions: a,
            probs: vec![1.0 / a as f64; mdp.horizon * s * a],
        }
    }

    pub fn horizon(&self) -> usize {
        self.probs.len() / (self.n_states * self.n_actions)
    }

    pub fn at(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.n_states + s) * self.n_actions;
        &self.probs[start..start + self.n_actions]
    }

    pub fn at_mut(&mut self, h: usize, s: usize) -> &mut [f64] {
        let start = (h * self.n_states + s) * self.n_actions;
        &mut self.probs[start..start + self.n_actions]
    }

    /// Stationary deterministic policy: `choice[s]` at every step.
    pub fn stationary_deterministic(mdp: &TabularMDP, choice: &[usize]) -> Self {
        let mut p = Self::uniform(mdp);
        for h in 0..mdp.horizon {
            for (s, &a) in choice.iter().enumerate() {
                let row = p.at_mut(h, s);
                row.iter_mut().for_each(|x| *x = 0.0);
                row[a] = 1.0;
            }
        }
        p
    }
}

impl Policy for MarkovPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, history: HistoryIndex, state: usize) -> Result<&[f64]> {
        if history.step >= self.horizon() || state >= self.n_states {
            return Err(SpoError::PolicyUndefined { step: history.step });
        }
        Ok(self.at(history.step, state))
    }
}

pub fn rollout<P: Policy + ?Sized>(mdp: &TabularMDP, policy: &P, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rollout_with(mdp, policy, &mut rng)
}

/// Samples `s_0 ~ initial`, `a_h ~ π_h(·|φ_h)`, `s_{h+1} ~ T(s_h, a_h)`.
pub fn rollout_with<P: Policy + ?Sized, R: Rng + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut s = sample_index(&mdp.initial, rng);
    let mut hist = HistoryIndex::root(s);
    let mut steps = Vec::with_capacity(mdp.horizon);
    for h in 0..mdp.horizon {
        let probs = policy.action_probs(hist, s)?;
        if probs.len() != mdp.n_actions {
            return Err(SpoError::PolicyUndefined { step: h });
        }
        let a = sample_index(probs, rng);
        steps.push((s, a));
        if h + 1 < mdp.horizon {
            let next = sample_index(mdp.next_state_probs(s, a), rng);
            hist = hist.extend(mdp, a, next);
            s = next;
        }
    }
    Ok(mdp.make_trajectory(steps))
}

/// Exact distribution over full trajectories, keyed by trajectory code in
/// ascending order; only positive-probability entries are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistribution {
    pub entries: Vec<(usize, f64)>,
}

impl TrajectoryDistribution {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Dense probability vector of length `(S·A)^H`.
    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut d = vec![0.0; len];
        for &(c, p) in &self.entries {
            d[c] = p;
        }
        d
    }

    pub fn from_dense(d: &[f64]) -> Self {
        Self {
            entries: d
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(c, &p)| (c, p))
                .collect(),
        }
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        let len = self
            .entries
            .iter()
            .chain(&other.entries)
            .map(|e| e.0 + 1)
            .max()
            .unwrap_or(0);
        let (a, b) = (self.dense(len), other.dense(len));
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum()
    }

    /// Expected value of a per-trajectory function.
    pub fn expect<F: FnMut(usize) -> f64>(&self, mut f: F) -> f64 {
        self.entries.iter().map(|&(c, p)| p * f(c)).sum()
    }
}

pub fn enumerate_trajectory_distribution<P: Policy + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
) -> Result<TrajectoryDistribution> {
    mdp.check_enumerable()?;
    let mut entries = Vec::new();
    for s0 in 0..mdp.n_states {
        let p0 = mdp.initial[s0];
        if p0 > 0.0 {
            enumerate_from(mdp, policy, HistoryIndex::root(s0), p0, &mut entries)?;
        }
    }
    Ok(TrajectoryDistribution { entries })
}

fn enumerate_from<P: Policy + ?Sized>(
    mdp: &TabularMDP,
    policy: &P,
    hist: HistoryIndex,
    prob: f64,
    out: &mut Vec<(usize, f64)>,
) -> Result<()> {
    let s = hist.state(mdp);
    let probs = policy.action_probs(hist, s)?;
    if probs.len() != mdp.n_actions {
        return Err(SpoError::PolicyUndefined { step: hist.step });
    }
    for (a, &pa) in probs.iter().enumerate() {
        if pa <= 0.0 {
            continue;
        }
        let pr = prob * pa;
        if hist.step + 1 == mdp.horizon {
            out.push((hist.pairs_code_with(mdp, a), pr));
            continue;
        }
        for (next, &pn) in mdp.next_state_probs(s, a).iter().enumerate() {
            if pn > 0.0 {
                enumerate_from(mdp, policy, hist.extend(mdp, a, next), pr * pn, out)?;
            }
        }
    }
    Ok(())
}

/// How a policy-level preference is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreferenceEstimate {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPreference {
    pub value: PreferenceValue,
    /// Zero for exact evaluation.
    pub standard_error: f64,
}

/// `E_{ξ1~d1, ξ2~d2} P(ξ1, ξ2)` over two enumerated distributions.
///
/// The sum is always taken in a canonical argument order so that swapping the
/// distributions negates the result exactly.
pub fn distribution_preference<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    d1: &TrajectoryDistribution,
    d2: &TrajectoryDistribution,
    oracle: &mut O,
) -> Result<PreferenceValue> {
    let order = d1
        .entries
        .partial_cmp(&d2.entries)
        .unwrap_or(std::cmp::Ordering::Equal);
    let (first, second, sign) = match order {
        std::cmp::Ordering::Equal => return Ok(PreferenceValue::ZERO),
        std::cmp::Ordering::Less => (d1, d2, 1.0),
        std::cmp::Ordering::Greater => (d2, d1, -1.0),
    };
    let t1: Vec<Trajectory> = first.entries.iter().map(|e| mdp.decode_trajectory(e.0)).collect();
    let t2: Vec<Trajectory> = second.entries.iter().map(|e| mdp.decode_trajectory(e.0)).collect();
    let mut acc = 0.0;
    for (x, &(_, p)) in t1.iter().zip(&first.entries) {
        let mut row = 0.0;
        for (y, &(_, q)) in t2.iter().zip(&second.entries) {
            row += q * oracle.compare(x, y)?.value();
        }
        acc += p * row;
    }
    PreferenceValue::new((sign * acc).clamp(-1.0, 1.0))
}

/// Policy-level preference `E_{ξ1~π1, ξ2~π2} P(ξ1, ξ2)`.
pub fn policy_preference<P1, P2, O>(
    mdp: &TabularMDP,
    pi1: &P1,
    pi2: &P2,
    oracle: &mut O,
    estimate: PreferenceEstimate,
) -> Result<PolicyPreference>
where
    P1: Policy + ?Sized,
    P2: Policy + ?Sized,
    O: TrajectoryPreference + ?Sized,
{
    match estimate {
        PreferenceEstimate::Exact => {
            let d1 = enumerate_trajectory_distribution(mdp, pi1)?;
            let d2 = enumerate_trajectory_distribution(mdp, pi2)?;
            Ok(PolicyPreference {
                value: distribution_preference(mdp, &d1, &d2, oracle)?,
                standard_error: 0.0,
            })
        }
        PreferenceEstimate::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(SpoError::InvalidInput("Monte-Carlo budget must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..samples {
                let x = rollout_with(mdp, pi1, &mut rng)?;
                let y = rollout_with(mdp, pi2, &mut rng)?;
                let v = oracle.compare(&x, &y)?.value();
                sum += v;
                sq += v * v;
            }
            let n = samples as f64;
            let mean = sum / n;
            let var = if samples > 1 {
                ((sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            Ok(PolicyPreference {
                value: PreferenceValue::new(mean.clamp(-1.0, 1.0))?,
                standard_error: (var / n).sqrt(),
            })
        }
    }
}

/// `H` copies of `R / H`.
pub fn split_trajectory_reward(t: &Trajectory, total: f64) -> Result<Vec<f64>> {
    let h = t.horizon();
    if h == 0 {
        return Err(SpoError::InvalidInput("empty trajectory".into()));
    }
    Ok(vec![total / h as f64; h])
}

/// Single history policy whose trajectory distribution is the `weights`
/// mixture of the components'. At each history the action distribution is
/// the average of the components' weighted by the probability each assigns
/// to reaching that history (transition terms cancel).
pub fn collapse_history_policies(
    mdp: &TabularMDP,
    policies: &[TabularHistoryPolicy],
    weights: &MixedStrategy,
) -> Result<TabularHistoryPolicy> {
    if policies.is_empty() {
        return Err(SpoError::InvalidInput("no policies to collapse".into()));
    }
    if weights.len() != policies.len() {
        return Err(SpoError::DimensionMismatch {
            expected: policies.len(),
            got: weights.len(),
        });
    }
    let a_n = mdp.n_actions;
    let s_n = mdp.n_states;
    let mut out = TabularHistoryPolicy::uniform(mdp)?;
    // reach[k][id]: product of component k's action probabilities along the history.
    let mut reach: Vec<Vec<f64>> = weights.probs().iter().map(|&w| vec![w; s_n]).collect();
    for h in 0..mdp.horizon {
        let count = mdp.history_count(h) as usize;
        let mut next_reach = if h + 1 < mdp.horizon {
            vec![vec![0.0; count * a_n * s_n]; policies.len()]
        } else {
            Vec::new()
        };
        let table = out.table_mut(h);
        for id in 0..count {
            let mut mix = vec![0.0; a_n];
            let mut mass = 0.0;
            let mut contributors = (0, 0);
            for (k, pol) in policies.iter().enumerate() {
                let r = reach[k][id];
                if r > 0.0 {
                    contributors = (contributors.0 + 1, k);
                }
                mass += r;
                let row = &pol.table(h)[id * a_n..(id + 1) * a_n];
                for (m, &p) in mix.iter_mut().zip(row) {
                    *m += r * p;
                }
            }
            let row = &mut table[id * a_n..(id + 1) * a_n];
            if contributors.0 == 1 {
                // a single component reaches this history: copy it verbatim
                row.copy_from_slice(&policies[contributors.1].table(h)[id * a_n..(id + 1) * a_n]);
            } else if mass > 0.0 {
                for (o, m) in row.iter_mut().zip(&mix) {
                    *o = m / mass;
                }
            }
            if h + 1 < mdp.horizon {
                let (pairs, s) = (id / s_n, id % s_n);
                for (k, pol) in policies.iter().enumerate() {
                    let prow = &pol.table(h)[id * a_n..(id + 1) * a_n];
                    for a in 0..a_n {
                        let code = pairs * s_n * a_n + s * a_n + a;
                        let v = reach[k][id] * prow[a];
                        for s2 in 0..s_n {
                            next_reach[k][code * s_n + s2] = v;
                        }
                    }
                }
            }
        }
        reach = next_reach;
    }
    Ok(out)
}

/// History-level dynamic programming on a per-trajectory leaf value.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryValues {
    /// Per step, flat `[history][action]`.
    pub q: Vec<Vec<f64>>,
    /// Per step, per history.
    pub v: Vec<Vec<f64>>,
    /// `E_{s_0}[V_0]`.
    pub root: f64,
}

#[derive(Debug, Clone, Copy)]
enum Backup<'a> {
    Max,
    Expect(&'a TabularHistoryPolicy),
}

fn history_backward(mdp: &TabularMDP, leaf: &[f64], backup: Backup<'_>) -> Result<HistoryValues> {
    let n_leaf = mdp.check_enumerable()?;
    if leaf.len() != n_leaf {
        return Err(SpoError::DimensionMismatch {
            expected: n_leaf,
            got: leaf.len(),
        });
    }
    let (s_n, a_n, hz) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut q: Vec<Vec<f64>> = vec![Vec::new(); hz];
    let mut v: Vec<Vec<f64>> = vec![Vec::new(); hz];
    for h in (0..hz).rev() {
        let count = mdp.history_count(h) as usize;
        let mut qh = vec![0.0; count * a_n];
        let mut vh = vec![0.0; count];
        for id in 0..count {
            let (pairs, s) = (id / s_n, id % s_n);
            for a in 0..a_n {
                let code = pairs * s_n * a_n + s * a_n + a;
                qh[id * a_n + a] = if h + 1 == hz {
                    leaf[code]
                } else {
                    let vn = &v[h + 1];
                    let mut acc = 0.0;
                    for (s2, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                        if p > 0.0 {
                            acc += p * vn[code * s_n + s2];
                        }
                    }
                    acc
                };
            }
            let row = &qh[id * a_n..(id + 1) * a_n];
            vh[id] = match backup {
                Backup::Max => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Backup::Expect(pi) => {
                    let pr = &pi.table(h)[id * a_n..(id + 1) * a_n];
                    row.iter().zip(pr).map(|(x, p)| x * p).sum()
                }
            };
        }
        q[h] = qh;
        v[h] = vh;
    }
    let root = (0..s_n).map(|s| mdp.initial[s] * v[0][s]).sum();
    Ok(HistoryValues { q, v, root })
}

/// Optimal history-dependent values for a trajectory-level payoff.
pub fn history_best_response(mdp: &TabularMDP, leaf: &[f64]) -> Result<HistoryValues> {
    history_backward(mdp, leaf, Backup::Max)
}

/// Values of `policy` for a trajectory-level payoff.
pub fn history_policy_values(
    mdp: &TabularMDP,
    policy: &TabularHistoryPolicy,
    leaf: &[f64],
) -> Result<HistoryValues> {
    if policy.n_actions != mdp.n_actions || policy.horizon() != mdp.horizon {
        return Err(SpoError::InvalidInput("policy does not match the MDP".into()));
    }
    history_backward(mdp, leaf, Backup::Expect(policy))
}

/// Per history, the actions within `tol` of the optimal Q-value.
pub fn optimal_action_sets(values: &HistoryValues, n_actions: usize, tol: f64) -> Vec<Vec<Vec<usize>>> {
    values
        .q
        .iter()
        .map(|qh| {
            qh.chunks(n_actions)
                .map(|row| {
                    let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    (0..n_actions).filter(|&a| row[a] >= best - tol).collect()
                })
                .collect()
        })
        .collect()
}

/// Finite-horizon optimum of the MDP's own Markov reward by backward
/// induction over `(h, s)`; returns `(value, greedy policy)`.
pub fn markov_optimum(mdp: &TabularMDP) -> Result<(f64, MarkovPolicy)> {
    let r = mdp.reward.as_ref().ok_or(SpoError::MissingReward)?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let mut v_next = vec![0.0; s_n];
    let mut pol = MarkovPolicy::uniform(mdp);
    for h in (0..mdp.horizon).rev() {
        let mut v = vec![0.0; s_n];
        for s in 0..s_n {
            let mut best = (f64::NEG_INFINITY, 0);
            for a in 0..a_n {
                let cont: f64 = if h + 1 < mdp.horizon {
                    mdp.next_state_probs(s, a)
                        .iter()
                        .zip(&v_next)
                        .map(|(p, x)| p * x)
                        .sum()
                } else {
                    0.0
                };
                let q = r[s * a_n + a] + cont;
                if q > best.0 {
                    best = (q, a);
                }
            }
            v[s] = best.0;
            let row = pol.at_mut(h, s);
            row.iter_mut().for_each(|x| *x = 0.0);
            row[best.1] = 1.0;
        }
        v_next = v;
    }
    let value = (0..s_n).map(|s| mdp.initial[s] * v_next[s]).sum();
    Ok((value, pol))
}

/// Expected ground-truth return of a Markov policy by forward occupancy.
pub fn expected_return(mdp: &TabularMDP, policy: &MarkovPolicy) -> Result<f64> {
    let r = mdp.reward.as_ref().ok_or(SpoError::MissingReward)?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let mut occ = mdp.initial.clone();
    let mut total = 0.0;
    for h in 0..mdp.horizon {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            if occ[s] == 0.0 {
                continue;
            }
            for (a, &pa) in policy.at(h, s).iter().enumerate() {
                let w = occ[s] * pa;
                total += w * r[s * a_n + a];
                for (s2, &p) in mdp.next_state_probs(s, a).iter().enumerate() {
                    next[s2] += w * p;
                }
            }
        }
        occ = next;
    }
    Ok(total)
}

/// Random dense MDP: transition and initial rows drawn from shifted uniform
/// weights, Markov rewards uniform on `[0, 1)`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, s: usize, a: usize, h: usize) -> Result<TabularMDP> {
    let mut row = |n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
        let t: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|x| x / t).collect();
        let fix = 1.0 - p.iter().sum::<f64>();
        p[0] += fix;
        p
    };
    let trans = (0..s).map(|_| (0..a).map(|_| row(s)).collect()).collect();
    let init = row(s);
    let reward = (0..s).map(|_| (0..a).map(|_| rng.gen::<f64>()).collect()).collect();
    TabularMDP::new(s, a, h, trans, init, Some(reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pref::{max_reward_preference, FnPreference, MaxRewardPreference};

    fn random_mdp_ok(rng: &mut ChaCha8Rng, s: usize, a: usize, h: usize) -> TabularMDP {
        random_mdp(rng, s, a, h).unwrap()
    }

    fn random_history_policy(rng: &mut ChaCha8Rng, mdp: &TabularMDP) -> TabularHistoryPolicy {
        let mut p = TabularHistoryPolicy::uniform(mdp).unwrap();
        for h in 0..mdp.horizon() {
            for id in 0..p.histories_at(h) {
                let w: Vec<f64> = (0..mdp.n_actions()).map(|_| rng.gen::<f64>()).collect();
                let ms = MixedStrategy::normalized(w).unwrap();
                p.set(HistoryIndex { step: h, id }, ms.probs()).unwrap();
            }
        }
        p
    }

    #[test]
    fn transition_rows_validated() {
        let bad = TabularMDP::new(1, 1, 1, vec![vec![vec![0.9]]], vec![1.0], None);
        assert!(bad.is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = chain(2, 3, 0.1).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"states\":2"));
        let back: TabularMDP = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn history_encoding_is_bijective() {
        let m = chain(3, 4, 0.0).unwrap().with_horizon(4).unwrap();
        for h in 0..4 {
            for id in 0..m.history_count(h) as usize {
                let hi = HistoryIndex { step: h, id };
                let (pairs, s) = hi.decode(&m);
                assert_eq!(HistoryIndex::encode(&m, &pairs, s).unwrap(), hi);
            }
        }
        let h = HistoryIndex::root(1).extend(&m, 0, 2);
        assert_eq!(h.decode(&m), (vec![(1, 0)], 2));
    }

    #[test]
    fn deterministic_rollout_is_unique() {
        let m = gridworld().unwrap();
        let (_, pol) = markov_optimum(&m).unwrap();
        let t1 = rollout(&m, &pol, 1).unwrap();
        let t2 = rollout(&m, &pol, 99).unwrap();
        assert_eq!(t1, t2);
        let d = enumerate_trajectory_distribution(&m.with_horizon(2).unwrap(), &MarkovPolicy {
            probs: pol.probs[..2 * 25 * 5].to_vec(),
            ..pol.clone()
        })
        .unwrap();
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.entries[0].1, 1.0);
    }

    #[test]
    fn bandit_rollout_is_single_step() {
        let m = TabularMDP::new(1, 3, 1, vec![vec![vec![1.0]; 3]], vec![1.0], None).unwrap();
        let t = rollout(&m, &MarkovPolicy::uniform(&m), 4).unwrap();
        assert_eq!(t.horizon(), 1);
    }

    #[test]
    fn uniform_two_by_two_is_equiprobable() {
        let half = vec![0.5, 0.5];
        let m = TabularMDP::new(2, 2, 2, vec![vec![half.clone(); 2]; 2], half, None).unwrap();
        let d = enumerate_trajectory_distribution(&m, &TabularHistoryPolicy::uniform(&m).unwrap())
            .unwrap();
        assert_eq!(d.entries.len(), 16);
        assert!(d.entries.iter().all(|e| e.1 == 1.0 / 16.0));
    }

    #[test]
    fn enumeration_sums_to_one_and_matches_rollouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_mdp_ok(&mut rng, 2, 2, 3);
        let pol = random_history_policy(&mut rng, &m);
        let d = enumerate_trajectory_distribution(&m, &pol).unwrap();
        assert!((d.total_mass() - 1.0).abs() < 1e-9);
        let n = 100_000;
        let mut counts = vec![0usize; m.trajectory_count() as usize];
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..n {
            let t = rollout_with(&m, &pol, &mut r).unwrap();
            counts[m.trajectory_code(&t).unwrap()] += 1;
        }
        let dense = d.dense(counts.len());
        for (c, &k) in counts.iter().enumerate() {
            let p = dense[c];
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            let f = k as f64 / n as f64;
            assert!((f - p).abs() <= 3.0 * sigma + 1e-12, "code {c}: {f} vs {p}");
        }
    }

    #[test]
    fn enumeration_guard_trips() {
        let m = gridworld().unwrap();
        assert!(matches!(
            enumerate_trajectory_distribution(&m, &MarkovPolicy::uniform(&m)),
            Err(SpoError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn policy_preference_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_mdp_ok(&mut rng, 2, 2, 3);
        let p1 = random_history_policy(&mut rng, &m);
        let p2 = random_history_policy(&mut rng, &m);
        let mut o = MaxRewardPreference;
        let same = policy_preference(&m, &p1, &p1, &mut o, PreferenceEstimate::Exact).unwrap();
        assert_eq!(same.value.value(), 0.0);
        let a = policy_preference(&m, &p1, &p2, &mut o, PreferenceEstimate::Exact).unwrap();
        let b = policy_preference(&m, &p2, &p1, &mut o, PreferenceEstimate::Exact).unwrap();
        assert_eq!(a.value.value(), -b.value.value());
        let mc = policy_preference(
            &m,
            &p1,
            &p2,
            &mut o,
            PreferenceEstimate::MonteCarlo {
                samples: 20_000,
                seed: 3,
            },
        )
        .unwrap();
        assert!((mc.value.value() - a.value.value()).abs() < 4.0 * mc.standard_error + 1e-9);
    }

    #[test]
    fn deterministic_policies_compare_their_trajectories() {
        let m = chain(2, 3, 0.0).unwrap();
        let p1 = TabularHistoryPolicy::deterministic(&m, |_| 1).unwrap();
        let p2 = TabularHistoryPolicy::deterministic(&m, |_| 0).unwrap();
        let mut o = MaxRewardPreference;
        let v = policy_preference(&m, &p1, &p2, &mut o, PreferenceEstimate::Exact).unwrap();
        let t1 = rollout(&m, &p1, 0).unwrap();
        let t2 = rollout(&m, &p2, 0).unwrap();
        assert_eq!(v.value, max_reward_preference(&t1, &t2).unwrap());
    }

    #[test]
    fn split_reward_examples() {
        let t = Trajectory::new(vec![(0, 0); 4]);
        assert_eq!(split_trajectory_reward(&t, 1.0).unwrap(), vec![0.25; 4]);
        assert_eq!(split_trajectory_reward(&t, 0.0).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn split_reward_preserves_optimal_policies_small() {
        // brute force over every deterministic history policy
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_mdp_ok(&mut rng, 2, 2, 2);
        let n = m.trajectory_count() as usize;
        let leaf: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let split: Vec<f64> = (0..n)
            .map(|c| {
                let t = m.decode_trajectory(c);
                split_trajectory_reward(&t, leaf[c]).unwrap().iter().sum()
            })
            .collect();
        let histories: Vec<HistoryIndex> = (0..m.horizon())
            .flat_map(|h| (0..m.history_count(h) as usize).map(move |id| HistoryIndex { step: h, id }))
            .collect();
        let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut values = Vec::new();
        for mask in 0..(1u32 << histories.len()) {
            let pos = |hi: HistoryIndex| histories.iter().position(|x| *x == hi).unwrap();
            let pol = TabularHistoryPolicy::deterministic(&m, |hi| ((mask >> pos(hi)) & 1) as usize)
                .unwrap();
            let d = enumerate_trajectory_distribution(&m, &pol).unwrap();
            let v = (d.expect(|c| leaf[c]), d.expect(|c| split[c]));
            best = (best.0.max(v.0), best.1.max(v.1));
            values.push(v);
        }
        for v in &values {
            assert_eq!(v.0 >= best.0 - 1e-12, v.1 >= best.1 - 1e-12);
        }
        let dp = history_best_response(&m, &leaf).unwrap();
        assert!((dp.root - best.0).abs() < 1e-12);
    }

    #[test]
    fn collapse_matches_mixture_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let m = random_mdp_ok(&mut rng, 2, 2, 2);
        let pols: Vec<TabularHistoryPolicy> =
            (0..3).map(|_| random_history_policy(&mut rng, &m)).collect();
        let w = MixedStrategy::normalized((0..3).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let collapsed = collapse_history_policies(&m, &pols, &w).unwrap();
        let n = m.trajectory_count() as usize;
        let mut mix = vec![0.0; n];
        for (p, &wk) in pols.iter().zip(w.probs()) {
            let d = enumerate_trajectory_distribution(&m, p).unwrap().dense(n);
            for (x, y) in mix.iter_mut().zip(d) {
                *x += wk * y;
            }
        }
        let got = enumerate_trajectory_distribution(&m, &collapsed).unwrap().dense(n);
        let l1: f64 = got.iter().zip(&mix).map(|(a, b)| (a - b).abs()).sum();
        assert!(l1 <= 1e-9, "{l1}");
        let single = collapse_history_policies(&m, &pols[..1], &MixedStrategy::pure(1, 0)).unwrap();
        assert_eq!(single, pols[0]);
    }

    #[test]
    fn policy_values_are_consistent_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let m = random_mdp_ok(&mut rng, 3, 2, 3);
        let pol = random_history_policy(&mut rng, &m);
        let n = m.trajectory_count() as usize;
        let leaf: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let vals = history_policy_values(&m, &pol, &leaf).unwrap();
        let d = enumerate_trajectory_distribution(&m, &pol).unwrap();
        assert!((vals.root - d.expect(|c| leaf[c])).abs() < 1e-12);
        let br = history_best_response(&m, &leaf).unwrap();
        assert!(br.root >= vals.root);
    }

    #[test]
    fn zero_oracle_gives_zero_preference() {
        let m = chain(2, 2, 0.2).unwrap();
        let p = TabularHistoryPolicy::uniform(&m).unwrap();
        let q = TabularHistoryPolicy::deterministic(&m, |_| 1).unwrap();
        let mut zero = FnPreference(|_: &Trajectory, _: &Trajectory| Ok(PreferenceValue::ZERO));
        let v = policy_preference(&m, &p, &q, &mut zero, PreferenceEstimate::Exact).unwrap();
        assert_eq!(v.value.value(), 0.0);
    }

    #[test]
    fn gridworld_optimum_by_hand() {
        let m = gridworld().unwrap();
        let (v, pol) = markov_optimum(&m).unwrap();
        assert!((v - 5.5).abs() < 1e-12);
        assert!((expected_return(&m, &pol).unwrap() - 5.5).abs() < 1e-12);
    }
}
