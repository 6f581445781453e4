use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::game::MixedStrategy;
use crate::learners::{
    bandit_loss_estimate, default_gamma, minibatch_accumulate, mix_with_uniform,
    BanditFeedbackConfig, HedgeState, LearningRate, LossVector, OnlineLearner,
};
use crate::pref::{matrix_preference, PreferenceMatrix};
use crate::sampling::sample_index;

/// `-P p_t`: loss of each pure option against the current mixture.
pub fn spo_loss(m: &PreferenceMatrix, p: &MixedStrategy) -> Result<LossVector> {
    let pp = m.apply(p.probs())?;
    LossVector::new(pp.into_iter().map(|x| -x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub rounds: u64,
    /// Keep every iterate in memory (needed for exact comparisons).
    pub keep_iterates: bool,
    /// Record a trace point every this many rounds; 0 disables tracing.
    pub trace_every: u64,
}

impl RunOptions {
    pub fn new(rounds: u64) -> Self {
        Self {
            rounds,
            keep_iterates: false,
            trace_every: 0,
        }
    }

    pub fn keep_iterates(mut self) -> Self {
        self.keep_iterates = true;
        self
    }

    pub fn trace_every(mut self, every: u64) -> Self {
        self.trace_every = every;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: u64,
    pub average: Vec<f64>,
    pub regret: f64,
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfPlayRun {
    pub iterates: Vec<MixedStrategy>,
    /// `(p_1 + ... + p_T) / T`.
    pub average: MixedStrategy,
    pub rounds: u64,
    pub query_count: u64,
    /// Realized regret of the learner on the losses it was fed.
    pub regret: f64,
    pub trace: Vec<TracePoint>,
}

struct Accumulator {
    sum: Vec<f64>,
    t: u64,
    iterates: Vec<MixedStrategy>,
    trace: Vec<TracePoint>,
    opts: RunOptions,
}

impl Accumulator {
    fn new(n: usize, opts: RunOptions) -> Self {
        Self {
            sum: vec![0.0; n],
            t: 0,
            iterates: Vec::new(),
            trace: Vec::new(),
            opts,
        }
    }

    fn push(&mut self, p: &MixedStrategy) {
        for (s, x) in self.sum.iter_mut().zip(p.probs()) {
            *s += x;
        }
        self.t += 1;
        if self.opts.keep_iterates {
            self.iterates.push(p.clone());
        }
    }

    fn average(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.sum.iter().map(|s| s / t).collect()
    }

    fn maybe_trace(&mut self, regret: f64, queries: u64) {
        let every = self.opts.trace_every;
        if every > 0 && (self.t % every == 0 || self.t == self.opts.rounds) {
            let average = self.average();
            self.trace.push(TracePoint {
                t: self.t,
                average,
                regret,
                queries,
            });
        }
    }

    fn finish(self, regret: f64, queries: u64) -> Result<SelfPlayRun> {
        let average = MixedStrategy::normalized(self.average())?;
        Ok(SelfPlayRun {
            iterates: self.iterates,
            average,
            rounds: self.t,
            query_count: queries,
            regret,
            trace: self.trace,
        })
    }
}

/// Single-player self-play with exact losses: `p_{t+1}` is the learner's
/// response to `ℓ_s = -P p_s` for `s <= t`. Each round evaluates the full
/// matrix-vector product, counted as `n²` queries.
pub fn run_selfplay_fullfeedback<L: OnlineLearner>(
    m: &PreferenceMatrix,
    mut learner: L,
    opts: RunOptions,
) -> Result<SelfPlayRun> {
    let n = m.n();
    if learner.n() != n {
        return Err(SpoError::DimensionMismatch {
            expected: n,
            got: learner.n(),
        });
    }
    let mut acc = Accumulator::new(n, opts);
    let per_round = (n * n) as u64;
    for t in 1..=opts.rounds {
        let p = learner.strategy();
        let loss = spo_loss(m, &p)?;
        learner.update(&loss)?;
        acc.push(&p);
        acc.maybe_trace(learner.regret(), t * per_round);
    }
    acc.finish(learner.regret(), opts.rounds * per_round)
}

/// Explicit two-player protocol: the row learner sees `-P q_t`, the column
/// learner sees `P^T p_t`. Both must start identical; any divergence between
/// `p_t` and `q_t` is reported as an error naming the round.
pub fn run_selfplay_dueling_check<L, F>(
    m: &PreferenceMatrix,
    factory: F,
    opts: RunOptions,
) -> Result<(SelfPlayRun, SelfPlayRun)>
where
    L: OnlineLearner,
    F: Fn() -> L,
{
    let n = m.n();
    let (mut row, mut col) = (factory(), factory());
    let mut acc_p = Accumulator::new(n, opts);
    let mut acc_q = Accumulator::new(n, opts);
    let per_round = (n * n) as u64;
    for t in 1..=opts.rounds {
        let p = row.strategy();
        let q = col.strategy();
        if p != q {
            return Err(SpoError::Diverged(t as usize));
        }
        let loss_p = spo_loss(m, &q)?;
        let loss_q = LossVector::new(m.apply_transpose(p.probs())?)?;
        row.update(&loss_p)?;
        col.update(&loss_q)?;
        acc_p.push(&p);
        acc_q.push(&q);
        acc_p.maybe_trace(row.regret(), t * per_round);
        acc_q.maybe_trace(col.regret(), t * per_round);
    }
    Ok((
        acc_p.finish(row.regret(), opts.rounds * per_round)?,
        acc_q.finish(col.regret(), opts.rounds * per_round)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditRunConfig {
    pub eta: LearningRate,
    pub feedback: BanditFeedbackConfig,
    /// Estimates averaged per learner update.
    pub batch: usize,
    pub seed: u64,
}

impl BanditRunConfig {
    /// `α = 1/2`, `γ = min(1, √n T^{-1/3})`, `η = γ / n` so that
    /// `η·|ℓ̂| <= 1` for every estimate.
    pub fn defaults(n: usize, rounds: u64, seed: u64) -> Self {
        let gamma = default_gamma(n, rounds);
        Self {
            eta: LearningRate::Fixed {
                eta: gamma / n as f64,
            },
            feedback: BanditFeedbackConfig {
                alpha: 0.5,
                gamma,
            },
            batch: 1,
            seed,
        }
    }
}

/// Self-play from one sampled duel per round: play the `γ`-mixed strategy,
/// draw `(i, j)` from it twice independently, query `P(i, j)`, and feed the
/// importance-weighted estimate to Hedge. The reported iterates are the
/// mixed strategies actually played.
pub fn run_selfplay_bandit(
    m: &PreferenceMatrix,
    cfg: &BanditRunConfig,
    opts: RunOptions,
) -> Result<SelfPlayRun> {
    let n = m.n();
    if !(cfg.feedback.gamma > 0.0) {
        return Err(SpoError::InvalidInput("bandit self-play needs gamma > 0".into()));
    }
    if cfg.batch == 0 {
        return Err(SpoError::InvalidInput("batch size must be positive".into()));
    }
    BanditFeedbackConfig::new(cfg.feedback.alpha, cfg.feedback.gamma)?;
    let mut hedge = HedgeState::new(n, cfg.eta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acc = Accumulator::new(n, opts);
    let mut queries = 0u64;
    let mut batch = Vec::with_capacity(cfg.batch);
    let mut played = mix_with_uniform(&hedge.strategy(), cfg.feedback.gamma)?;
    for _ in 0..opts.rounds {
        let i = sample_index(played.probs(), &mut rng);
        let j = sample_index(played.probs(), &mut rng);
        let obs = matrix_preference(m, i, j)?;
        queries += 1;
        batch.push(bandit_loss_estimate(&cfg.feedback, &played, (i, j), obs)?);
        acc.push(&played);
        if batch.len() == cfg.batch {
            hedge.update(&minibatch_accumulate(&batch)?)?;
            batch.clear();
            played = mix_with_uniform(&hedge.strategy(), cfg.feedback.gamma)?;
        }
        acc.maybe_trace(hedge.regret(), queries);
    }
    acc.finish(hedge.regret(), queries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{exact_minimax_winner, exploitability};
    use crate::learners::{OgdState, StepSchedule};
    use crate::pref::{subpopulation_matrix, SubpopulationSpec};
    use rand::Rng;

    fn random_game(rng: &mut ChaCha8Rng, n: usize) -> PreferenceMatrix {
        PreferenceMatrix::from_upper(n, |_, _| rng.gen_range(-1.0..=1.0)).unwrap()
    }

    #[test]
    fn loss_examples() {
        let rps = subpopulation_matrix(&SubpopulationSpec::new(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap());
        let zero = spo_loss(&rps, &MixedStrategy::uniform(3)).unwrap();
        assert!(zero.values().iter().all(|v| v.abs() < 1e-15));
        let rock = spo_loss(&rps, &MixedStrategy::pure(3, 0)).unwrap();
        // P e_rock = (0, -c, b) with b = c = 1/3
        let third = 1.0 / 3.0;
        assert_eq!(rock.values(), &[0.0, third, -third]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = random_game(&mut rng, 5);
            let p = MixedStrategy::normalized((0..5).map(|_| rng.gen()).collect()).unwrap();
            assert!(spo_loss(&m, &p).unwrap().dot(p.probs()).abs() < 1e-12);
        }
    }

    #[test]
    fn rps_uniform_is_a_fixed_point() {
        let m = PreferenceMatrix::rock_paper_scissors();
        let h = HedgeState::new(3, LearningRate::for_horizon(3, 100)).unwrap();
        let run = run_selfplay_fullfeedback(&m, h, RunOptions::new(100).keep_iterates()).unwrap();
        for p in &run.iterates {
            assert_eq!(p.probs(), &[1.0 / 3.0; 3]);
        }
        assert_eq!(exploitability(&m, &run.average).unwrap(), 0.0);
    }

    #[test]
    fn average_is_mean_of_iterates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_game(&mut rng, 4);
        let h = HedgeState::new(4, LearningRate::Anytime).unwrap();
        let run = run_selfplay_fullfeedback(&m, h, RunOptions::new(300).keep_iterates()).unwrap();
        let mut mean = vec![0.0; 4];
        for p in &run.iterates {
            for (a, b) in mean.iter_mut().zip(p.probs()) {
                *a += b / 300.0;
            }
        }
        assert!(run.average.linf_distance(&mean) < 1e-12);
    }

    #[test]
    fn exploitability_matches_realized_regret() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let m = random_game(&mut rng, 6);
            let t = 2000;
            let h = HedgeState::new(6, LearningRate::for_horizon(6, t)).unwrap();
            let run = run_selfplay_fullfeedback(&m, h, RunOptions::new(t)).unwrap();
            let e = exploitability(&m, &run.average).unwrap();
            assert!(e <= 2.0 * run.regret / t as f64 + 1e-9);
        }
    }

    #[test]
    fn subpopulation_converges() {
        let m = subpopulation_matrix(&SubpopulationSpec::new(0.5, 0.3, 0.2).unwrap());
        let t = 50_000;
        let h = HedgeState::new(3, LearningRate::for_horizon(3, t)).unwrap();
        let run = run_selfplay_fullfeedback(&m, h, RunOptions::new(t)).unwrap();
        assert!(run.average.l1_distance(&[0.5, 0.3, 0.2]) <= 0.05);
    }

    #[test]
    fn dueling_equals_selfplay() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_game(&mut rng, 5);
        let opts = RunOptions::new(100).keep_iterates();
        let factory = || HedgeState::new(5, LearningRate::for_horizon(5, 100)).unwrap();
        let (p, q) = run_selfplay_dueling_check(&m, factory, opts).unwrap();
        assert_eq!(p.iterates, q.iterates);
        let single = run_selfplay_fullfeedback(&m, factory(), opts).unwrap();
        assert_eq!(single.iterates, p.iterates);
        assert_eq!(single.average, p.average);
        let ogd = || OgdState::new(MixedStrategy::uniform(5), StepSchedule::standard(5));
        let (p, q) = run_selfplay_dueling_check(&m, ogd, opts).unwrap();
        assert_eq!(p.iterates, q.iterates);
    }

    #[test]
    fn bandit_queries_once_per_round() {
        let m = PreferenceMatrix::rock_paper_scissors();
        let cfg = BanditRunConfig::defaults(3, 1000, 9);
        let run = run_selfplay_bandit(&m, &cfg, RunOptions::new(1000)).unwrap();
        assert_eq!(run.query_count, 1000);
    }

    #[test]
    fn bandit_full_exploration_plays_uniform() {
        let m = PreferenceMatrix::rock_paper_scissors();
        let mut cfg = BanditRunConfig::defaults(3, 1000, 9);
        cfg.feedback.gamma = 1.0;
        let run = run_selfplay_bandit(&m, &cfg, RunOptions::new(500).keep_iterates()).unwrap();
        assert!(run.iterates.iter().all(|p| p.probs() == [1.0 / 3.0; 3]));
    }

    #[test]
    fn bandit_selfplay_approaches_winner() {
        let m = subpopulation_matrix(&SubpopulationSpec::new(0.5, 0.3, 0.2).unwrap());
        let t = 200_000;
        let run = run_selfplay_bandit(&m, &BanditRunConfig::defaults(3, t, 1), RunOptions::new(t))
            .unwrap();
        let mw = exact_minimax_winner(&m).unwrap();
        assert!(run.average.l1_distance(mw.strategy.probs()) < 0.15);
    }
}
