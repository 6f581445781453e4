use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::ContextualBandit;
use crate::error::{Result, SpoError};
use crate::game::MixedStrategy;
use crate::learners::{mix_with_uniform, HedgeState, LearningRate, OnlineLearner};
use crate::sampling::sample_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextualConfig {
    pub rounds: u64,
    /// Responses sampled per round; every pair is compared.
    pub k: usize,
    pub eta: LearningRate,
    pub gamma: f64,
    pub seed: u64,
}

impl ContextualConfig {
    /// `γ = min(1, sqrt(n) T^{-1/3})`, `η = γ / n` for the widest context.
    pub fn defaults(env: &ContextualBandit, rounds: u64, k: usize, seed: u64) -> Self {
        let n = (0..env.n_contexts()).map(|x| env.n_arms(x)).max().unwrap_or(1);
        let gamma = crate::learners::default_gamma(n, rounds);
        Self {
            rounds,
            k,
            eta: LearningRate::Fixed {
                eta: gamma / n as f64,
            },
            gamma,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualRun {
    pub final_policies: Vec<MixedStrategy>,
    /// Per context, the mean of the exploration-mixed strategies played.
    pub average_policies: Vec<MixedStrategy>,
    pub visits: Vec<u64>,
    pub query_count: u64,
    pub rounds: u64,
}

/// Per-context exponential weights fed with an importance-weighted estimate
/// of each response's mean preference against the other `k - 1` samples.
pub fn run_spo_contextual(env: &ContextualBandit, cfg: &ContextualConfig) -> Result<ContextualRun> {
    if cfg.k < 2 {
        return Err(SpoError::InvalidInput("need at least two samples per round".into()));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma <= 1.0) {
        return Err(SpoError::InvalidInput(format!("gamma={} outside (0, 1]", cfg.gamma)));
    }
    let nx = env.n_contexts();
    let mut learners: Vec<HedgeState> = (0..nx)
        .map(|x| HedgeState::new(env.n_arms(x), cfg.eta))
        .collect::<Result<_>>()?;
    let mut sums: Vec<Vec<f64>> = (0..nx).map(|x| vec![0.0; env.n_arms(x)]).collect();
    let mut visits = vec![0u64; nx];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queries = 0u64;
    let k = cfg.k;
    let mut ys = vec![0usize; k];
    let mut r = vec![0.0; k];
    for _ in 0..cfg.rounds {
        let x = env.sample_context(&mut rng);
        let played = mix_with_uniform(&learners[x].strategy(), cfg.gamma)?;
        visits[x] += 1;
        for (s, p) in sums[x].iter_mut().zip(played.probs()) {
            *s += p;
        }
        for y in ys.iter_mut() {
            *y = sample_index(played.probs(), &mut rng);
        }
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                if j != i {
                    acc += env.preference(x, ys[i], ys[j])?.value();
                }
            }
            r[i] = acc / (k - 1) as f64;
        }
        queries += (k * (k - 1)) as u64;
        let mut gains = vec![0.0; env.n_arms(x)];
        for (&y, &ri) in ys.iter().zip(&r) {
            gains[y] += ri / (k as f64 * played.probs()[y]);
        }
        learners[x].update_gains(&gains)?;
    }
    let average_policies = sums
        .iter()
        .zip(&visits)
        .map(|(s, &v)| {
            if v == 0 {
                Ok(MixedStrategy::uniform(s.len()))
            } else {
                MixedStrategy::normalized(s.iter().map(|x| x / v as f64).collect())
            }
        })
        .collect::<Result<_>>()?;
    Ok(ContextualRun {
        final_policies: learners.iter().map(|l| l.strategy()).collect(),
        average_policies,
        visits,
        query_count: queries,
        rounds: cfg.rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::exact_minimax_winner;
    use crate::pref::{subpopulation_matrix, PreferenceMatrix, SubpopulationSpec};

    fn two_context_env() -> ContextualBandit {
        let a = subpopulation_matrix(&SubpopulationSpec::new(0.5, 0.3, 0.2).unwrap());
        let b = PreferenceMatrix::rock_paper_scissors();
        ContextualBandit::new(vec![a, b], MixedStrategy::new(vec![0.5, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn rejects_single_sample() {
        let env = two_context_env();
        let cfg = ContextualConfig::defaults(&env, 10, 1, 0);
        assert!(run_spo_contextual(&env, &cfg).is_err());
    }

    #[test]
    fn zero_game_stays_uniform() {
        let env = ContextualBandit::new(
            vec![PreferenceMatrix::zeros(4).unwrap()],
            MixedStrategy::uniform(1),
        )
        .unwrap();
        let run = run_spo_contextual(&env, &ContextualConfig::defaults(&env, 200, 3, 1)).unwrap();
        assert_eq!(run.final_policies[0].probs(), &[0.25; 4]);
    }

    #[test]
    fn averages_approach_per_context_minimax_winners() {
        let env = two_context_env();
        let cfg = ContextualConfig::defaults(&env, 200_000, 4, 7);
        let run = run_spo_contextual(&env, &cfg).unwrap();
        assert_eq!(run.visits.iter().sum::<u64>(), 200_000);
        for x in 0..2 {
            let mw = exact_minimax_winner(&env.games[x]).unwrap();
            let d = run.average_policies[x].l1_distance(mw.strategy.probs());
            assert!(d < 0.15, "context {x}: {d}");
        }
    }
}
