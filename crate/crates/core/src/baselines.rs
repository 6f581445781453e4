//! Reward-model comparators: Bradley-Terry fitting, the iterative
//! reward-model loop, soft-optimal tilting, and the DPO objective analysis.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::TabularMDP;
use crate::error::{Result, SpoError};
use crate::game::{exact_minimax_winner, MixedStrategy};
use crate::learners::softmax;
use crate::pref::{PreferenceMatrix, Trajectory, TrajectoryPreference};
use crate::spo::{run_practical_loop, PracticalConfig, PracticalRun, Rewarder};

/// Per-(s, a) scores; a bandit is the single-state case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub values: Vec<f64>,
}

impl RewardTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![0.0; n_states * n_actions],
        }
    }

    pub fn bandit(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpoError::NonFinite("reward table"));
        }
        Ok(Self {
            n_states: 1,
            n_actions: values.len(),
            values,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn trajectory_return(&self, t: &Trajectory) -> f64 {
        t.steps.iter().map(|&(s, a)| self.get(s, a)).sum()
    }

    pub fn clip(&mut self, bound: f64) {
        for v in &mut self.values {
            *v = v.clamp(-bound, bound);
        }
    }
}

/// A labelled pair: `label` is the probability the first item wins. Stored
/// as the sparse feature difference `φ(first) - φ(second)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub diff: Vec<(usize, f64)>,
    pub label: f64,
}

impl Comparison {
    pub fn new(first: &[usize], second: &[usize], label: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&label) {
            return Err(SpoError::InvalidInput(format!("label {label} outside [0, 1]")));
        }
        let mut diff: Vec<(usize, f64)> = Vec::with_capacity(first.len() + second.len());
        for (&f, w) in first.iter().map(|f| (f, 1.0)).chain(second.iter().map(|f| (f, -1.0))) {
            match diff.iter_mut().find(|e| e.0 == f) {
                Some(e) => e.1 += w,
                None => diff.push((f, w)),
            }
        }
        diff.retain(|e| e.1 != 0.0);
        diff.sort_by_key(|e| e.0);
        Ok(Self { diff, label })
    }

    /// Two trajectories; features are their `(s, a)` visits.
    pub fn from_trajectories(n_actions: usize, a: &Trajectory, b: &Trajectory, label: f64) -> Result<Self> {
        let fa: Vec<usize> = a.steps.iter().map(|&(s, x)| s * n_actions + x).collect();
        let fb: Vec<usize> = b.steps.iter().map(|&(s, x)| s * n_actions + x).collect();
        Self::new(&fa, &fb, label)
    }

    fn margin(&self, r: &[f64]) -> f64 {
        self.diff.iter().map(|&(i, w)| w * r[i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BTFitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// 0 means full batch with backtracking line search.
    pub batch_size: usize,
    pub regularization: f64,
    pub seed: u64,
}

impl Default for BTFitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 200,
            batch_size: 0,
            regularization: 0.01,
            seed: 0,
        }
    }
}

impl BTFitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.epochs == 0 {
            return Err(SpoError::InvalidInput("need learning rate > 0 and epochs >= 1".into()));
        }
        if !(self.regularization >= 0.0) {
            return Err(SpoError::InvalidInput("regularization must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BTFit {
    pub table: RewardTable,
    /// Full-data objective after each epoch.
    pub loss_history: Vec<f64>,
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bt_objective(comps: &[&Comparison], r: &[f64], lambda: f64) -> f64 {
    let n = comps.len() as f64;
    let data: f64 = comps
        .iter()
        .map(|c| {
            let m = c.margin(r);
            -(c.label * log_sigmoid(m) + (1.0 - c.label) * log_sigmoid(-m))
        })
        .sum::<f64>()
        / n;
    data + lambda * r.iter().map(|x| x * x).sum::<f64>()
}

fn bt_gradient(comps: &[&Comparison], r: &[f64], lambda: f64) -> Vec<f64> {
    let n = comps.len() as f64;
    let mut g: Vec<f64> = r.iter().map(|x| 2.0 * lambda * x).collect();
    for c in comps {
        let coef = (sigmoid(c.margin(r)) - c.label) / n;
        for &(i, w) in &c.diff {
            g[i] += coef * w;
        }
    }
    g
}

/// Gradient descent on the mean Bradley-Terry cross-entropy plus
/// `λ ||r||²`. Full batch uses Armijo backtracking, so the recorded loss is
/// non-increasing.
pub fn fit_bradley_terry(
    comparisons: &[Comparison],
    n_states: usize,
    n_actions: usize,
    cfg: &BTFitConfig,
    init: Option<&RewardTable>,
) -> Result<BTFit> {
    cfg.validate()?;
    if comparisons.is_empty() {
        return Err(SpoError::InvalidInput("no comparisons to fit".into()));
    }
    let dim = n_states * n_actions;
    if comparisons.iter().any(|c| c.diff.iter().any(|e| e.0 >= dim)) {
        return Err(SpoError::InvalidInput("comparison feature out of range".into()));
    }
    let mut r = match init {
        Some(t) if t.values.len() == dim => t.values.clone(),
        Some(t) => {
            return Err(SpoError::DimensionMismatch {
                expected: dim,
                got: t.values.len(),
            })
        }
        None => vec![0.0; dim],
    };
    let all: Vec<&Comparison> = comparisons.iter().collect();
    let lambda = cfg.regularization;
    let mut loss = bt_objective(&all, &r, lambda);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..comparisons.len()).collect();
    for _ in 0..cfg.epochs {
        if cfg.batch_size == 0 || cfg.batch_size >= comparisons.len() {
            let g = bt_gradient(&all, &r, lambda);
            let gg: f64 = g.iter().map(|x| x * x).sum();
            if gg < 1e-24 {
                history.push(loss);
                break;
            }
            let mut step = cfg.learning_rate;
            loop {
                let cand: Vec<f64> = r.iter().zip(&g).map(|(x, d)| x - step * d).collect();
                let l = bt_objective(&all, &cand, lambda);
                if l <= loss - 1e-4 * step * gg {
                    r = cand;
                    loss = l;
                    break;
                }
                step *= 0.5;
                if step < 1e-12 {
                    break;
                }
            }
        } else {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&Comparison> = chunk.iter().map(|&i| &comparisons[i]).collect();
                let g = bt_gradient(&batch, &r, lambda);
                for (x, d) in r.iter_mut().zip(&g) {
                    *x -= cfg.learning_rate * d;
                }
            }
            loss = bt_objective(&all, &r, lambda);
        }
        if !loss.is_finite() || r.iter().any(|x| !x.is_finite()) {
            return Err(SpoError::FitDiverged(format!("objective {loss}")));
        }
        history.push(loss);
    }
    Ok(BTFit {
        table: RewardTable {
            n_states,
            n_actions,
            values: r,
        },
        loss_history: history,
    })
}

/// `π(y) ∝ π_ref(y) exp(r(y) / β)`, evaluated in log space.
pub fn soft_opt_policy(r: &[f64], reference: &MixedStrategy, beta: f64) -> Result<MixedStrategy> {
    if !(beta > 0.0) {
        return Err(SpoError::InvalidInput(format!("beta={beta} must be > 0")));
    }
    if r.len() != reference.len() {
        return Err(SpoError::DimensionMismatch {
            expected: reference.len(),
            got: r.len(),
        });
    }
    let logits: Vec<f64> = reference
        .probs()
        .iter()
        .zip(r)
        .map(|(p, x)| if *p > 0.0 { p.ln() + x / beta } else { f64::NEG_INFINITY })
        .collect();
    MixedStrategy::normalized(softmax(&logits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardModelConfig {
    /// Policy updates between refits.
    pub refit_every: u64,
    /// Most recent comparisons kept for fitting.
    pub max_comparisons: usize,
    /// Past trajectories each new sample may be compared against.
    pub buffer_size: usize,
    pub clip: f64,
    pub fit: BTFitConfig,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            refit_every: 16,
            max_comparisons: 1024,
            buffer_size: 1024,
            clip: 5.0,
            fit: BTFitConfig {
                epochs: 10,
                ..BTFitConfig::default()
            },
        }
    }
}

/// Rewarder that compares each new trajectory against a random earlier one,
/// fits a Bradley-Terry table on the accumulated labels, and returns the
/// fitted per-step scores.
#[derive(Debug, Clone)]
pub struct RewardModelRewarder {
    pub table: RewardTable,
    cfg: RewardModelConfig,
    comparisons: VecDeque<Comparison>,
    buffer: VecDeque<Trajectory>,
    steps: u64,
    queries: u64,
    fits: u64,
}

impl RewardModelRewarder {
    pub fn new(mdp: &TabularMDP, cfg: RewardModelConfig) -> Result<Self> {
        if cfg.refit_every == 0 || cfg.max_comparisons == 0 || cfg.buffer_size == 0 {
            return Err(SpoError::InvalidInput("reward-model cadences must be positive".into()));
        }
        cfg.fit.validate()?;
        Ok(Self {
            table: RewardTable::zeros(mdp.n_states(), mdp.n_actions()),
            cfg,
            comparisons: VecDeque::new(),
            buffer: VecDeque::new(),
            steps: 0,
            queries: 0,
            fits: 0,
        })
    }

    pub fn fits(&self) -> u64 {
        self.fits
    }

    fn remember(&mut self, t: &Trajectory) {
        if self.buffer.len() == self.cfg.buffer_size {
            self.buffer.pop_front();
        }
        self.buffer.push_back(t.clone());
    }

    fn label<O: TrajectoryPreference + ?Sized>(
        &mut self,
        a: &Trajectory,
        b: &Trajectory,
        oracle: &mut O,
    ) -> Result<()> {
        let p = oracle.compare(a, b)?.win_probability();
        self.queries += 1;
        if self.comparisons.len() == self.cfg.max_comparisons {
            self.comparisons.pop_front();
        }
        self.comparisons
            .push_back(Comparison::from_trajectories(self.table.n_actions, a, b, p)?);
        Ok(())
    }

    fn refit(&mut self) -> Result<()> {
        if self.comparisons.is_empty() {
            return Ok(());
        }
        let data: Vec<Comparison> = self.comparisons.iter().cloned().collect();
        let mut fit = fit_bradley_terry(
            &data,
            self.table.n_states,
            self.table.n_actions,
            &self.cfg.fit,
            Some(&self.table),
        )?
        .table;
        fit.clip(self.cfg.clip);
        self.table = fit;
        self.fits += 1;
        Ok(())
    }
}

impl Rewarder for RewardModelRewarder {
    fn warm_up<O: TrajectoryPreference + ?Sized>(
        &mut self,
        samples: &[Trajectory],
        oracle: &mut O,
        _rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        for pair in samples.windows(2) {
            self.label(&pair[0], &pair[1], oracle)?;
        }
        for t in samples {
            self.remember(t);
        }
        self.refit()
    }

    fn per_step_rewards<O: TrajectoryPreference + ?Sized>(
        &mut self,
        xi: &Trajectory,
        on_policy: bool,
        oracle: &mut O,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        if !self.buffer.is_empty() {
            let other = self.buffer[rng.gen_range(0..self.buffer.len())].clone();
            self.label(xi, &other, oracle)?;
        }
        if on_policy {
            self.remember(xi);
        }
        self.steps += 1;
        if self.steps % self.cfg.refit_every == 0 {
            self.refit()?;
        }
        Ok(xi.steps.iter().map(|&(s, a)| self.table.get(s, a)).collect())
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// The practical loop driven by a fitted reward model instead of self-play.
pub fn run_iterative_rm<O: TrajectoryPreference + ?Sized>(
    mdp: &TabularMDP,
    oracle: &mut O,
    cfg: &PracticalConfig,
    rm: &RewardModelConfig,
) -> Result<PracticalRun> {
    let mut rewarder = RewardModelRewarder::new(mdp, *rm)?;
    run_practical_loop(mdp, oracle, &mut rewarder, cfg)
}

/// Three options where `a` narrowly beats `b`, `b` always beats `c`, and `c`
/// always beats `a`. Copeland picks `b`; the minimax winner is
/// `(5/12, 5/12, 1/6)`.
pub fn counterexample_matrix() -> PreferenceMatrix {
    PreferenceMatrix::from_rows(vec![
        vec![0.0, 0.4, -1.0],
        vec![-0.4, 0.0, 1.0],
        vec![1.0, -1.0, 0.0],
    ])
    .expect("constant matrix is anti-symmetric")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoAnalysisConfig {
    pub beta: f64,
    pub reference: MixedStrategy,
}

impl DpoAnalysisConfig {
    pub fn uniform(n: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(SpoError::InvalidInput(format!("beta={beta} must be > 0")));
        }
        Ok(Self {
            beta,
            reference: MixedStrategy::uniform(n),
        })
    }
}

/// Preference-weighted cross-entropy of the implicit DPO preference model:
/// `-Σ_{y1 ≠ y2} (P(y1,y2)+1)/2 · log σ(β log(π(y1)/π_ref(y1)) - β log(π(y2)/π_ref(y2)))`.
/// Each unordered pair contributes total weight 1, so `π = π_ref` scores
/// `log 2` per pair.
pub fn dpo_loss_value(m: &PreferenceMatrix, pi: &MixedStrategy, cfg: &DpoAnalysisConfig) -> Result<f64> {
    let n = m.n();
    for len in [pi.len(), cfg.reference.len()] {
        if len != n {
            return Err(SpoError::DimensionMismatch { expected: n, got: len });
        }
    }
    if !(cfg.beta > 0.0) {
        return Err(SpoError::InvalidInput(format!("beta={} must be > 0", cfg.beta)));
    }
    let logit: Vec<f64> = (0..n)
        .map(|y| {
            let (p, r) = (pi.probs()[y], cfg.reference.probs()[y]);
            if p <= 0.0 {
                return Err(SpoError::ZeroProbability(y));
            }
            if r <= 0.0 {
                return Err(SpoError::ZeroProbability(y));
            }
            Ok(if p == r { 0.0 } else { cfg.beta * (p / r).ln() })
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    for y1 in 0..n {
        for y2 in 0..n {
            if y1 == y2 {
                continue;
            }
            let w = (m.entry(y1, y2) + 1.0) / 2.0;
            if w > 0.0 {
                loss -= w * log_sigmoid(logit[y1] - logit[y2]);
            }
        }
    }
    Ok(loss)
}

/// Minimizer of the DPO loss over strictly positive grid points of the
/// simplex with spacing `resolution` (three options only).
pub fn dpo_grid_argmin(
    m: &PreferenceMatrix,
    cfg: &DpoAnalysisConfig,
    resolution: f64,
) -> Result<(MixedStrategy, f64)> {
    if m.n() != 3 {
        return Err(SpoError::InvalidInput("grid search is over three options".into()));
    }
    if !(resolution > 0.0 && resolution < 0.5) {
        return Err(SpoError::InvalidInput(format!("resolution {resolution}")));
    }
    let k = (1.0 / resolution).round() as usize;
    let mut best: Option<(MixedStrategy, f64)> = None;
    for i in 1..k {
        for j in 1..k - i {
            let l = k - i - j;
            let p = MixedStrategy::normalized(vec![i as f64, j as f64, l as f64])?;
            let v = dpo_loss_value(m, &p, cfg)?;
            if best.as_ref().map_or(true, |b| v < b.1) {
                best = Some((p, v));
            }
        }
    }
    best.ok_or_else(|| SpoError::InvalidInput("grid too coarse".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoAnalysisRow {
    pub beta: f64,
    pub loss_reference: f64,
    pub loss_minimax_winner: f64,
    pub argmin_l1_to_minimax_winner: f64,
}

/// Loss at the reference and at the minimax winner, and how far the grid
/// minimizer lands from the minimax winner, for each β.
pub fn dpo_analysis(m: &PreferenceMatrix, betas: &[f64], resolution: f64) -> Result<Vec<DpoAnalysisRow>> {
    let mw = exact_minimax_winner(m)?.strategy;
    betas
        .iter()
        .map(|&beta| {
            let cfg = DpoAnalysisConfig::uniform(m.n(), beta)?;
            let (argmin, _) = dpo_grid_argmin(m, &cfg, resolution)?;
            Ok(DpoAnalysisRow {
                beta,
                loss_reference: dpo_loss_value(m, &cfg.reference, &cfg)?,
                loss_minimax_winner: dpo_loss_value(m, &mw, &cfg)?,
                argmin_l1_to_minimax_winner: argmin.l1_distance(mw.probs()),
            })
        })
        .collect()
}

pub fn dpo_analysis_csv(rows: &[DpoAnalysisRow]) -> String {
    let mut out = String::from("beta,loss_ref,loss_mw,argmin_l1_to_mw\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            r.beta, r.loss_reference, r.loss_minimax_winner, r.argmin_l1_to_minimax_winner
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{expected_return, MarkovPolicy};
    use crate::pref::{BanditMatrixPreference, FnPreference, PreferenceValue};
    use crate::spo::{run_spo_practical, QueueWinRate};

    fn bandit(n: usize) -> TabularMDP {
        TabularMDP::new(1, n, 1, vec![vec![vec![1.0]; n]], vec![1.0], None).unwrap()
    }

    #[test]
    fn separable_data_pushes_rewards_apart() {
        let comps: Vec<Comparison> = (0..50).map(|_| Comparison::new(&[1], &[0], 1.0).unwrap()).collect();
        let fit = fit_bradley_terry(&comps, 1, 2, &BTFitConfig::default(), None).unwrap();
        assert!(fit.table.values[1] - fit.table.values[0] >= 2.0);
    }

    #[test]
    fn balanced_data_gives_flat_rewards() {
        let mut comps = Vec::new();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            comps.push(Comparison::new(&[i], &[j], 1.0).unwrap());
            comps.push(Comparison::new(&[j], &[i], 1.0).unwrap());
        }
        let fit = fit_bradley_terry(&comps, 1, 3, &BTFitConfig::default(), None).unwrap();
        let v = &fit.table.values;
        assert!((v[0] - v[1]).abs() <= 1e-3 && (v[1] - v[2]).abs() <= 1e-3);
    }

    #[test]
    fn recovers_generating_utilities() {
        let u: [f64; 4] = [0.0, 0.8, -0.5, 1.5];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let comps: Vec<Comparison> = (0..10_000)
            .map(|_| {
                let i = rng.gen_range(0..4);
                let j = (i + rng.gen_range(1..4)) % 4;
                let win = rng.gen::<f64>() < 1.0 / (1.0 + (u[j] - u[i]).exp());
                Comparison::new(&[i], &[j], if win { 1.0 } else { 0.0 }).unwrap()
            })
            .collect();
        let cfg = BTFitConfig {
            regularization: 0.0,
            ..BTFitConfig::default()
        };
        let fit = fit_bradley_terry(&comps, 1, 4, &cfg, None).unwrap();
        for i in 1..4 {
            let got = fit.table.values[i] - fit.table.values[0];
            assert!((got - (u[i] - u[0])).abs() < 0.1, "{i}: {got}");
        }
        // monotone objective
        for w in fit.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn minibatch_fit_moves_toward_winner() {
        let comps: Vec<Comparison> = (0..64).map(|_| Comparison::new(&[0], &[1], 1.0).unwrap()).collect();
        let cfg = BTFitConfig {
            batch_size: 8,
            learning_rate: 0.5,
            epochs: 20,
            ..BTFitConfig::default()
        };
        let fit = fit_bradley_terry(&comps, 1, 2, &cfg, None).unwrap();
        assert!(fit.table.values[0] > fit.table.values[1]);
    }

    #[test]
    fn fit_rejects_empty_and_bad_labels() {
        assert!(fit_bradley_terry(&[], 1, 2, &BTFitConfig::default(), None).is_err());
        assert!(Comparison::new(&[0], &[1], 1.5).is_err());
    }

    #[test]
    fn soft_opt_examples() {
        let u = MixedStrategy::uniform(3);
        for beta in [0.1, 1.0, 10.0] {
            let p = soft_opt_policy(&[0.0, 1.0, 0.0], &u, beta).unwrap();
            assert_eq!(p.probs()[0], p.probs()[2]);
            let e = (1.0 / beta).exp();
            assert!((p.probs()[1] - e / (2.0 + e)).abs() < 1e-12);
        }
        let p = soft_opt_policy(&[0.3, -1.0, 2.0], &u, 1e6).unwrap();
        assert!(p.linf_distance(u.probs()) < 1e-5);
        let r = MixedStrategy::new(vec![0.2, 0.5, 0.3]).unwrap();
        let p = soft_opt_policy(&[0.7; 3], &r, 0.3).unwrap();
        assert!(p.linf_distance(r.probs()) < 1e-15);
    }

    #[test]
    fn dpo_loss_examples() {
        let m = counterexample_matrix();
        let mw = exact_minimax_winner(&m).unwrap().strategy;
        for beta in [0.1, 1.0, 10.0] {
            let cfg = DpoAnalysisConfig::uniform(3, beta).unwrap();
            let at_ref = dpo_loss_value(&m, &cfg.reference, &cfg).unwrap();
            assert!((at_ref - 3.0 * 2f64.ln()).abs() < 1e-12);
            assert!(dpo_loss_value(&m, &mw, &cfg).unwrap() > at_ref);
        }
        let cfg = DpoAnalysisConfig::uniform(3, 1e-6).unwrap();
        assert!((dpo_loss_value(&m, &mw, &cfg).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-5);
        let bad = MixedStrategy::new(vec![0.0, 0.5, 0.5]).unwrap();
        assert!(dpo_loss_value(&m, &bad, &cfg).is_err());
    }

    #[test]
    fn dpo_grid_minimizer_avoids_minimax_winner() {
        let rows = dpo_analysis(&counterexample_matrix(), &[1.0], 0.01).unwrap();
        assert!(rows[0].argmin_l1_to_minimax_winner > 0.05);
        let csv = dpo_analysis_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn rm_on_transitive_game_finds_best_option() {
        let m = PreferenceMatrix::from_upper(3, |i, j| if i < j { -1.0 } else { 1.0 }).unwrap();
        let mdp = bandit(3);
        let cfg = PracticalConfig::new(2000, 3);
        let run = run_iterative_rm(
            &mdp,
            &mut BanditMatrixPreference { matrix: m.clone() },
            &cfg,
            &RewardModelConfig::default(),
        )
        .unwrap();
        // option 2 beats everything
        assert!(run.final_policy.at(0, 0)[2] > 0.9);
        let spo = run_spo_practical(&mdp, &mut BanditMatrixPreference { matrix: m }, &cfg).unwrap();
        assert!(spo.final_policy.at(0, 0)[2] > 0.9);
    }

    #[test]
    fn rm_with_null_oracle_stays_near_reference() {
        let mdp = bandit(3);
        let mut zero = FnPreference(|_: &Trajectory, _: &Trajectory| Ok(PreferenceValue::ZERO));
        let run = run_iterative_rm(&mdp, &mut zero, &PracticalConfig::new(300, 1), &RewardModelConfig::default())
            .unwrap();
        let u = MarkovPolicy::uniform(&mdp);
        for (a, b) in run.final_policy.probs.iter().zip(&u.probs) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn loop_differs_only_in_reward_source() {
        let mdp = crate::envs::chain(2, 3, 0.1).unwrap();
        let cfg = PracticalConfig::new(100, 9);
        let a = run_spo_practical(&mdp, &mut crate::pref::MaxRewardPreference, &cfg).unwrap();
        let mut r = QueueWinRate::new(cfg.queue_size).unwrap();
        let b = run_practical_loop(&mdp, &mut crate::pref::MaxRewardPreference, &mut r, &cfg).unwrap();
        assert_eq!(a, b);
        let c = run_iterative_rm(&mdp, &mut crate::pref::MaxRewardPreference, &cfg, &RewardModelConfig::default())
            .unwrap();
        assert!(expected_return(&mdp, &c.final_policy).is_ok());
    }
}
