use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{rollout_with, split_trajectory_reward, MarkovPolicy, TabularMDP};
use crate::error::{Result, SpoError};
use crate::learners::{log_weight_step, softmax};
use crate::pref::{Trajectory, TrajectoryPreference};
use crate::sampling::splitmix_seed;

/// FIFO of recent trajectories used as the self-play opponent.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryQueue {
    capacity: usize,
    items: VecDeque<Trajectory>,
}

impl TrajectoryQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(SpoError::InvalidInput("queue capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Trajectory) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }

    /// Mean preference of `xi` over the queue contents; 0 when empty.
    pub fn win_rate<O: TrajectoryPreference + ?Sized>(
        &self,
        xi: &Trajectory,
        oracle: &mut O,
    ) -> Result<f64> {
        if self.items.is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for q in &self.items {
            acc += oracle.compare(xi, q)?.value();
        }
        Ok(acc / self.items.len() as f64)
    }
}

/// Source of per-step rewards for the policy-improvement loop.
pub trait Rewarder {
    /// Sees the trajectories sampled from the initial policy before training.
    fn warm_up<O: TrajectoryPreference + ?Sized>(
        &mut self,
        samples: &[Trajectory],
        oracle: &mut O,
        rng: &mut ChaCha8Rng,
    ) -> Result<()>;

    /// `on_policy` is false for exploration episodes, which are scored but
    /// must not enter the opponent pool.
    fn per_step_rewards<O: TrajectoryPreference + ?Sized>(
        &mut self,
        xi: &Trajectory,
        on_policy: bool,
        oracle: &mut O,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>>;

    /// Oracle calls made so far.
    fn queries(&self) -> u64;
}

/// Self-play reward: win rate against the queue, spread evenly over steps.
#[derive(Debug, Clone)]
pub struct QueueWinRate {
    pub queue: TrajectoryQueue,
    queries: u64,
}

impl QueueWinRate {
    pub fn new(capacity: usize) -> Result<Self> {
        Ok(Self {
            queue: TrajectoryQueue::new(capacity)?,
            queries: 0,
        })
    }
}

impl Rewarder for QueueWinRate {
    fn warm_up<O: TrajectoryPreference + ?Sized>(
        &mut self,
        samples: &[Trajectory],
        _oracle: &mut O,
        _rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        for t in samples {
            self.queue.push(t.clone());
        }
        Ok(())
    }

    fn per_step_rewards<O: TrajectoryPreference + ?Sized>(
        &mut self,
        xi: &Trajectory,
        on_policy: bool,
        oracle: &mut O,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let r = self.queue.win_rate(xi, oracle)?;
        self.queries += self.queue.len() as u64;
        if on_policy {
            self.queue.push(xi.clone());
        }
        split_trajectory_reward(xi, r)
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PracticalConfig {
    pub rounds: u64,
    pub queue_size: usize,
    /// Step size of the soft policy-iteration update.
    pub eta: f64,
    /// EMA rate of the per-(h, s, a) reward critic.
    pub critic_rate: f64,
    /// Probability that an episode is sampled from the uniform policy
    /// instead; keeps every critic entry fresh.
    pub exploration: f64,
    /// Entropy weight: logits shrink by `1 - η·entropy` each step, so old
    /// advantages are forgotten and the policy stays soft.
    pub entropy: f64,
    /// Per-step uniform mixing of the behaviour policy, `(1-ε)π + ε/|A|`.
    pub action_noise: f64,
    pub checkpoints: usize,
    /// Monte-Carlo comparisons per checkpoint during selection.
    pub selection_samples: usize,
    pub warm_up: bool,
    pub seed: u64,
}

impl PracticalConfig {
    pub fn new(rounds: u64, seed: u64) -> Self {
        Self {
            rounds,
            queue_size: 64,
            eta: 0.1,
            critic_rate: 0.1,
            exploration: 0.0,
            entropy: 0.0,
            action_noise: 0.0,
            checkpoints: 50,
            selection_samples: 200,
            warm_up: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.checkpoints == 0 || self.queue_size == 0 {
            return Err(SpoError::InvalidInput(
                "rounds, checkpoints and queue size must be positive".into(),
            ));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(SpoError::InvalidInput(format!("step size {}", self.eta)));
        }
        if !(self.critic_rate > 0.0 && self.critic_rate <= 1.0) {
            return Err(SpoError::InvalidInput(format!(
                "critic rate {} outside (0, 1]",
                self.critic_rate
            )));
        }
        if !(self.entropy >= 0.0 && self.eta * self.entropy < 1.0) {
            return Err(SpoError::InvalidInput(format!(
                "entropy {} needs 0 <= eta * entropy < 1",
                self.entropy
            )));
        }
        if !(0.0..=1.0).contains(&self.action_noise) {
            return Err(SpoError::InvalidInput(format!(
                "action noise {} outside [0, 1]",
                self.action_noise
            )));
        }
        if !(0.0..1.0).contains(&self.exploration) {
            return Err(SpoError::InvalidInput(format!(
                "exploration {} outside [0, 1)",
                self.exploration
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: u64,
    pub policy: MarkovPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PracticalRun {
    pub checkpoints: Vec<Checkpoint>,
    /// Selection score of each checkpoint.
    pub scores: Vec<f64>,
    pub selected: usize,
    pub final_policy: MarkovPolicy,
    /// Per-(h, s) average of `π_1..π_T`.
    pub average_policy: MarkovPolicy,
    /// Same average restricted to the last quarter of the rounds.
    pub late_average_policy: MarkovPolicy,
    pub training_queries: u64,
    pub selection_queries: u64,
    pub rounds: u64,
}

impl PracticalRun {
    pub fn selected_policy(&self) -> &MarkovPolicy {
        &self.checkpoints[self.selected].policy
    }
}

/// Exact policy-evaluation on a per-step reward table `[h][s][a]`, followed
/// by `π ← π · exp(η A)` at every `(h, s)`.
fn soft_policy_step(
    mdp: &TabularMDP,
    logits: &mut [f64],
    policy: &mut MarkovPolicy,
    reward: &[f64],
    eta: f64,
    entropy: f64,
) {
    let keep = 1.0 - eta * entropy;
    let (s_n, a_n) = (mdp.n_states(), mdp.n_actions());
    let mut v_next = vec![0.0; s_n];
    let mut q = vec![0.0; a_n];
    let mut loss = vec![0.0; a_n];
    for h in (0..mdp.horizon()).rev() {
        let mut v = vec![0.0; s_n];
        for s in 0..s_n {
            for (a, qa) in q.iter_mut().enumerate() {
                let mut x = reward[(h * s_n + s) * a_n + a];
                if h + 1 < mdp.horizon() {
                    for (p, vn) in mdp.next_state_probs(s, a).iter().zip(&v_next) {
                        x += p * vn;
                    }
                }
                *qa = x;
            }
            let pi = policy.at(h, s);
            let vs: f64 = pi.iter().zip(&q).map(|(p, x)| p * x).sum();
            v[s] = vs;
            for (l, x) in loss.iter_mut().zip(&q) {
                *l = -(x - vs);
            }
            let start = (h * s_n + s) * a_n;
            let row = &mut logits[start..start + a_n];
            if entropy > 0.0 {
                row.iter_mut().for_each(|w| *w *= keep);
            }
            log_weight_step(row, eta, &loss);
            policy.at_mut(h, s).copy_from_slice(&softmax(row));
        }
        v_next = v;
    }
}

/// Mean preference of each checkpoint against the uniform mixture of all
/// checkpoints, estimated with `samples` comparisons each. Returns scores and
/// the number of oracle calls.
pub fn select_checkpoint<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    checkpoints: &[Checkpoint],
    oracle: &mut O,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, Vec<f64>, u64)> {
    if checkpoints.is_empty() {
        return Err(SpoError::InvalidInput("no checkpoints".into()));
    }
    let mut scores = Vec::with_capacity(checkpoints.len());
    for c in checkpoints {
        let mut acc = 0.0;
        for _ in 0..samples {
            let xi = rollout_with(mdp, &c.policy, rng)?;
            let j = rng.gen_range(0..checkpoints.len());
            let other = rollout_with(mdp, &checkpoints[j].policy, rng)?;
            acc += oracle.compare(&xi, &other)?.value();
        }
        scores.push(if samples == 0 { 0.0 } else { acc / samples as f64 });
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok((best, scores, (samples * checkpoints.len()) as u64))
}

/// Sample a trajectory from the current Markov policy, turn the rewarder's
/// per-step signal into an EMA critic, and take a soft policy-iteration step.
/// Checkpoints are stored every `rounds / checkpoints` rounds and the
/// returned selection maximises preference against the checkpoint mixture.
pub fn run_practical_loop<O, R>(
    mdp: &TabularMDP,
    oracle: &mut O,
    rewarder: &mut R,
    cfg: &PracticalConfig,
) -> Result<PracticalRun>
where
    O: TrajectoryPreference + ?Sized,
    R: Rewarder,
{
    cfg.validate()?;
    let (s_n, a_n, hz) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix_seed(cfg.seed, 0));
    let mut policy = MarkovPolicy::uniform(mdp);
    let uniform = policy.clone();
    let mut behaviour = policy.clone();
    let mut logits = vec![0.0; hz * s_n * a_n];
    let mut critic = vec![0.0; hz * s_n * a_n];
    let mut visited = vec![false; hz * s_n * a_n];
    let mut sum = vec![0.0; policy.probs.len()];
    let mut late_sum = vec![0.0; policy.probs.len()];
    let late_start = cfg.rounds - cfg.rounds / 4;
    let every = (cfg.rounds / cfg.checkpoints as u64).max(1);
    let mut checkpoints = Vec::new();

    if cfg.warm_up {
        let warm: Vec<Trajectory> = (0..cfg.queue_size)
            .map(|_| rollout_with(mdp, &policy, &mut rng))
            .collect::<Result<_>>()?;
        rewarder.warm_up(&warm, oracle, &mut rng)?;
    }

    for t in 1..=cfg.rounds {
        for (acc, p) in sum.iter_mut().zip(&policy.probs) {
            *acc += p;
        }
        if t > late_start {
            for (acc, p) in late_sum.iter_mut().zip(&policy.probs) {
                *acc += p;
            }
        }
        let explore = cfg.exploration > 0.0 && rng.gen::<f64>() < cfg.exploration;
        let xi = if explore {
            rollout_with(mdp, &uniform, &mut rng)?
        } else if cfg.action_noise > 0.0 {
            let eps = cfg.action_noise;
            behaviour
                .probs
                .iter_mut()
                .zip(&policy.probs)
                .for_each(|(b, p)| *b = (1.0 - eps) * p + eps / a_n as f64);
            rollout_with(mdp, &behaviour, &mut rng)?
        } else {
            rollout_with(mdp, &policy, &mut rng)?
        };
        let r = rewarder.per_step_rewards(&xi, !explore, oracle, &mut rng)?;
        if r.len() != hz {
            return Err(SpoError::DimensionMismatch {
                expected: hz,
                got: r.len(),
            });
        }
        for (h, (&(s, a), &rh)) in xi.steps.iter().zip(&r).enumerate() {
            let i = (h * s_n + s) * a_n + a;
            if visited[i] {
                critic[i] += cfg.critic_rate * (rh - critic[i]);
            } else {
                critic[i] = rh;
                visited[i] = true;
            }
        }
        soft_policy_step(mdp, &mut logits, &mut policy, &critic, cfg.eta, cfg.entropy);
        if t % every == 0 && checkpoints.len() < cfg.checkpoints {
            checkpoints.push(Checkpoint {
                round: t,
                policy: policy.clone(),
            });
        }
    }

    let training_queries = rewarder.queries();
    let mut sel_rng = ChaCha8Rng::seed_from_u64(splitmix_seed(cfg.seed, 1));
    let (selected, scores, selection_queries) =
        select_checkpoint(mdp, &checkpoints, oracle, cfg.selection_samples, &mut sel_rng)?;
    let average = |s: &[f64], n: u64| MarkovPolicy {
        n_states: s_n,
        n_actions: a_n,
        probs: s.iter().map(|x| x / n as f64).collect(),
    };
    Ok(PracticalRun {
        checkpoints,
        scores,
        selected,
        final_policy: policy,
        average_policy: average(&sum, cfg.rounds),
        late_average_policy: average(&late_sum, cfg.rounds - late_start),
        training_queries,
        selection_queries,
        rounds: cfg.rounds,
    })
}

/// The practical self-play loop with the queue win-rate reward.
pub fn run_spo_practical<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    oracle: &mut O,
    cfg: &PracticalConfig,
) -> Result<PracticalRun> {
    let mut rewarder = QueueWinRate::new(cfg.queue_size)?;
    run_practical_loop(mdp, oracle, &mut rewarder, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{chain, expected_return, markov_optimum};
    use crate::pref::{FnPreference, MaxRewardPreference, PreferenceValue};

    #[test]
    fn queue_is_fifo() {
        let mut q = TrajectoryQueue::new(2).unwrap();
        for a in 0..3 {
            q.push(Trajectory::new(vec![(0, a)]));
        }
        let acts: Vec<usize> = q.iter().map(|t| t.steps[0].1).collect();
        assert_eq!(acts, vec![1, 2]);
    }

    #[test]
    fn win_rate_example() {
        let mut q = TrajectoryQueue::new(4).unwrap();
        for r in [0.0, 1.0, 2.0] {
            q.push(Trajectory::with_rewards(vec![(0, 0)], vec![r]).unwrap());
        }
        let xi = Trajectory::with_rewards(vec![(0, 0)], vec![1.0]).unwrap();
        // beats one, ties one, loses one
        assert_eq!(q.win_rate(&xi, &mut MaxRewardPreference).unwrap(), 0.0);
        let xi = Trajectory::with_rewards(vec![(0, 0)], vec![5.0]).unwrap();
        assert_eq!(q.win_rate(&xi, &mut MaxRewardPreference).unwrap(), 1.0);
    }

    #[test]
    fn zero_oracle_leaves_policy_uniform() {
        let m = chain(3, 3, 0.1).unwrap();
        let mut zero = FnPreference(|_: &Trajectory, _: &Trajectory| Ok(PreferenceValue::ZERO));
        let mut cfg = PracticalConfig::new(50, 3);
        cfg.queue_size = 1;
        cfg.checkpoints = 5;
        let run = run_spo_practical(&m, &mut zero, &cfg).unwrap();
        assert_eq!(run.final_policy, MarkovPolicy::uniform(&m));
        assert_eq!(run.checkpoints.len(), 5);
        assert!(run.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn learns_markov_optimum_on_chain() {
        let m = chain(3, 4, 0.0).unwrap();
        let (opt, _) = markov_optimum(&m).unwrap();
        let cfg = PracticalConfig::new(1500, 11);
        let run = run_spo_practical(&m, &mut MaxRewardPreference, &cfg).unwrap();
        let got = expected_return(&m, run.selected_policy()).unwrap();
        assert!(got >= 0.95 * opt, "{got} vs {opt}");
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let m = chain(2, 3, 0.2).unwrap();
        let cfg = PracticalConfig::new(200, 5);
        let a = run_spo_practical(&m, &mut MaxRewardPreference, &cfg).unwrap();
        let b = run_spo_practical(&m, &mut MaxRewardPreference, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
