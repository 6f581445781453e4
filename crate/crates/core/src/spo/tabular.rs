use serde::{Deserialize, Serialize};

use crate::envs::{
    enumerate_trajectory_distribution, history_best_response, history_policy_values,
    HistoryIndex, TabularHistoryPolicy, TabularMDP, TrajectoryDistribution,
};
use crate::error::{Result, SpoError};
use crate::learners::{log_weight_step, softmax, LearningRate};
use crate::pref::TrajectoryPreference;

/// Which critic feeds the per-history exponential-weights update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// `A = Q - E_π Q`.
    #[default]
    Advantage,
    QValue,
}

/// `sqrt(2 ln |A| / T)`: the Hedge rate for payoffs with range 2.
pub fn default_tabular_eta(n_actions: usize, rounds: u64) -> f64 {
    (2.0 * (n_actions.max(2) as f64).ln() / rounds.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabularConfig {
    pub rounds: u64,
    pub eta: LearningRate,
    pub critic: CriticKind,
    pub keep_policies: bool,
}

impl TabularConfig {
    pub fn new(mdp: &TabularMDP, rounds: u64) -> Self {
        Self {
            rounds,
            eta: LearningRate::Fixed {
                eta: default_tabular_eta(mdp.n_actions(), rounds),
            },
            critic: CriticKind::Advantage,
            keep_policies: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSpoRun {
    pub final_policy: TabularHistoryPolicy,
    /// `π_1, ..., π_T` when requested.
    pub policies: Vec<TabularHistoryPolicy>,
    /// Trajectory distribution of the uniform mixture of `π_1..π_T`.
    pub average_distribution: TrajectoryDistribution,
    /// Exploitability of the mixture against history-dependent best responses.
    pub duality_gap: f64,
    /// `max_t |E_{ξ~π_t} r_t(ξ)|`; zero up to rounding.
    pub max_self_reward: f64,
    pub rounds: u64,
    pub query_count: u64,
}

/// Preference between every pair of dynamically feasible trajectories.
struct PreferenceCache {
    support: Vec<usize>,
    /// `code -> position in support`, `usize::MAX` when infeasible.
    position: Vec<usize>,
    matrix: Vec<f64>,
    queries: u64,
}

impl PreferenceCache {
    fn build<O: TrajectoryPreference + ?Sized>(mdp: &TabularMDP, oracle: &mut O) -> Result<Self> {
        let n = mdp.check_enumerable()?;
        let uniform = TabularHistoryPolicy::uniform(mdp)?;
        let support: Vec<usize> = enumerate_trajectory_distribution(mdp, &uniform)?
            .entries
            .iter()
            .map(|e| e.0)
            .collect();
        let k = support.len();
        if (k as u128) * (k as u128) > 50_000_000 {
            return Err(SpoError::EnumerationTooLarge {
                needed: (k as u128) * (k as u128),
                limit: 50_000_000,
            });
        }
        let mut position = vec![usize::MAX; n];
        for (i, &c) in support.iter().enumerate() {
            position[c] = i;
        }
        let trajs: Vec<_> = support.iter().map(|&c| mdp.decode_trajectory(c)).collect();
        let mut matrix = vec![0.0; k * k];
        let mut queries = 0;
        for i in 0..k {
            for j in i + 1..k {
                let v = oracle.compare(&trajs[i], &trajs[j])?.value();
                queries += 1;
                matrix[i * k + j] = v;
                matrix[j * k + i] = -v;
            }
        }
        Ok(Self {
            support,
            position,
            matrix,
            queries,
        })
    }

    fn dense(&self, d: &TrajectoryDistribution) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.support.len()];
        for &(c, p) in &d.entries {
            let i = self.position[c];
            if i == usize::MAX {
                return Err(SpoError::Internal(format!("trajectory {c} outside support")));
            }
            out[i] = p;
        }
        Ok(out)
    }

    /// `r(ξ) = Σ_ξ' d(ξ') P(ξ, ξ')` accumulated in ascending code order.
    fn reward(&self, d: &[f64]) -> Vec<f64> {
        let k = self.support.len();
        (0..k)
            .map(|i| {
                let row = &self.matrix[i * k..(i + 1) * k];
                let mut acc = 0.0;
                for (p, &q) in row.iter().zip(d) {
                    acc += p * q;
                }
                acc
            })
            .collect()
    }

    fn leaf(&self, n: usize, r: &[f64]) -> Vec<f64> {
        let mut leaf = vec![0.0; n];
        for (&c, &v) in self.support.iter().zip(r) {
            leaf[c] = v;
        }
        leaf
    }

    fn gap(&self, mdp: &TabularMDP, d: &[f64]) -> Result<f64> {
        let r = self.reward(d);
        let leaf = self.leaf(mdp.trajectory_count() as usize, &r);
        Ok((2.0 * history_best_response(mdp, &leaf)?.root).max(0.0))
    }
}

/// Exploitability `2 max_π E_{ξ~π, ξ'~d} P(ξ, ξ')` of a trajectory
/// distribution, with the maximum over all history-dependent policies.
pub fn trajectory_duality_gap<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    oracle: &mut O,
    d: &TrajectoryDistribution,
) -> Result<f64> {
    let cache = PreferenceCache::build(mdp, oracle)?;
    let dense = cache.dense(d)?;
    cache.gap(mdp, &dense)
}

/// History-level self-play: each round rewards trajectories by their
/// expected preference against the current policy, evaluates exact
/// history Q-values, and takes an exponential-weights step at every history.
pub fn run_spo_tabular<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    oracle: &mut O,
    cfg: &TabularConfig,
) -> Result<TabularSpoRun> {
    if cfg.rounds == 0 {
        return Err(SpoError::InvalidInput("rounds must be positive".into()));
    }
    let cache = PreferenceCache::build(mdp, oracle)?;
    let n = mdp.trajectory_count() as usize;
    let a_n = mdp.n_actions();
    let mut policy = TabularHistoryPolicy::uniform(mdp)?;
    let mut logits: Vec<Vec<f64>> = (0..mdp.horizon())
        .map(|h| vec![0.0; policy.table(h).len()])
        .collect();
    let mut policies = Vec::new();
    let mut sum = vec![0.0; cache.support.len()];
    let mut max_self = 0.0f64;
    for t in 1..=cfg.rounds {
        if cfg.keep_policies {
            policies.push(policy.clone());
        }
        let d = cache.dense(&enumerate_trajectory_distribution(mdp, &policy)?)?;
        for (s, x) in sum.iter_mut().zip(&d) {
            *s += x;
        }
        let r = cache.reward(&d);
        let self_reward: f64 = d.iter().zip(&r).map(|(p, x)| p * x).sum();
        max_self = max_self.max(self_reward.abs());
        let values = history_policy_values(mdp, &policy, &cache.leaf(n, &r))?;
        let eta = cfg.eta.at(a_n, t);
        for h in 0..mdp.horizon() {
            let (qh, vh) = (&values.q[h], &values.v[h]);
            let lw = &mut logits[h];
            for id in 0..vh.len() {
                let q = &qh[id * a_n..(id + 1) * a_n];
                let loss: Vec<f64> = match cfg.critic {
                    CriticKind::QValue => q.iter().map(|x| -x).collect(),
                    CriticKind::Advantage => q.iter().map(|x| -(x - vh[id])).collect(),
                };
                let row = &mut lw[id * a_n..(id + 1) * a_n];
                log_weight_step(row, eta, &loss);
                policy.set(HistoryIndex { step: h, id }, &softmax(row))?;
            }
        }
    }
    let t = cfg.rounds as f64;
    let avg: Vec<f64> = sum.iter().map(|s| s / t).collect();
    let duality_gap = cache.gap(mdp, &avg)?;
    let average_distribution = TrajectoryDistribution {
        entries: cache
            .support
            .iter()
            .zip(&avg)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&c, &p)| (c, p))
            .collect(),
    };
    Ok(TabularSpoRun {
        final_policy: policy,
        policies,
        average_distribution,
        duality_gap,
        max_self_reward: max_self,
        rounds: cfg.rounds,
        query_count: cache.queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain, collapse_history_policies, cyclic_action_count_preference};
    use crate::game::MixedStrategy;
    use crate::learners::{HedgeState, OnlineLearner};
    use crate::pref::{
        BanditMatrixPreference, FnPreference, MaxRewardPreference, PreferenceMatrix,
        PreferenceValue, Trajectory,
    };
    use crate::spo::{run_selfplay_fullfeedback, RunOptions};

    #[test]
    fn zero_oracle_keeps_uniform() {
        let m = chain(2, 3, 0.1).unwrap();
        let mut zero = FnPreference(|_: &Trajectory, _: &Trajectory| Ok(PreferenceValue::ZERO));
        let run = run_spo_tabular(&m, &mut zero, &TabularConfig::new(&m, 20)).unwrap();
        assert_eq!(run.final_policy, TabularHistoryPolicy::uniform(&m).unwrap());
        assert_eq!(run.duality_gap, 0.0);
    }

    #[test]
    fn markov_reward_concentrates_on_optimum() {
        let m = chain(2, 3, 0.0).unwrap();
        let t = 2000;
        let run = run_spo_tabular(&m, &mut MaxRewardPreference, &TabularConfig::new(&m, t)).unwrap();
        let bound = 8.0 * 3.0 * ((2.0f64).ln() / t as f64).sqrt();
        assert!(run.duality_gap <= bound, "{} > {bound}", run.duality_gap);
        // the optimal trajectory moves right immediately and stays
        let best = m.trajectory_code(&m.make_trajectory(vec![(0, 1), (1, 1), (1, 1)])).unwrap();
        let p_best = run
            .average_distribution
            .entries
            .iter()
            .filter(|e| {
                let t = m.decode_trajectory(e.0);
                t.total_return().unwrap() == 2.0
            })
            .map(|e| e.1)
            .sum::<f64>();
        assert!(p_best > 0.5, "{p_best}");
        assert!(run.average_distribution.entries.iter().any(|e| e.0 == best));
    }

    #[test]
    fn self_reward_vanishes() {
        let m = chain(2, 3, 0.1).unwrap();
        let mut pref = cyclic_action_count_preference();
        let run = run_spo_tabular(&m, &mut pref, &TabularConfig::new(&m, 200)).unwrap();
        assert!(run.max_self_reward <= 1e-9);
    }

    #[test]
    fn single_step_reduces_to_normal_form_hedge() {
        let matrix = PreferenceMatrix::from_rows(vec![
            vec![0.0, 0.4, -1.0],
            vec![-0.4, 0.0, 1.0],
            vec![1.0, -1.0, 0.0],
        ])
        .unwrap();
        let m = TabularMDP::new(1, 3, 1, vec![vec![vec![1.0]; 3]], vec![1.0], None).unwrap();
        let t = 300;
        let mut cfg = TabularConfig::new(&m, t);
        cfg.critic = CriticKind::QValue;
        cfg.keep_policies = true;
        let mut oracle = BanditMatrixPreference {
            matrix: matrix.clone(),
        };
        let run = run_spo_tabular(&m, &mut oracle, &cfg).unwrap();
        let hedge = HedgeState::new(3, cfg.eta).unwrap();
        let nf = run_selfplay_fullfeedback(&matrix, hedge, RunOptions::new(t).keep_iterates())
            .unwrap();
        for (pol, p) in run.policies.iter().zip(&nf.iterates) {
            assert_eq!(pol.table(0), p.probs());
        }
        // advantage critic differs only by a per-history constant
        cfg.critic = CriticKind::Advantage;
        let adv = run_spo_tabular(&m, &mut oracle, &cfg).unwrap();
        for (a, b) in adv.policies.iter().zip(&run.policies) {
            for (x, y) in a.table(0).iter().zip(b.table(0)) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
        let _ = HedgeState::new(3, cfg.eta).unwrap().strategy();
    }

    #[test]
    fn mixture_distribution_matches_collapsed_policy() {
        let m = chain(2, 2, 0.2).unwrap();
        let mut cfg = TabularConfig::new(&m, 30);
        cfg.keep_policies = true;
        let mut pref = cyclic_action_count_preference();
        let run = run_spo_tabular(&m, &mut pref, &cfg).unwrap();
        let w = MixedStrategy::uniform(run.policies.len());
        let collapsed = collapse_history_policies(&m, &run.policies, &w).unwrap();
        let d = enumerate_trajectory_distribution(&m, &collapsed).unwrap();
        assert!(d.l1_distance(&run.average_distribution) < 1e-9);
    }
}
