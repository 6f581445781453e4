//! No-regret online learners over the probability simplex.
//!
//! Both learners are deterministic functions of the loss sequence they are
//! fed; self-play relies on that to simulate a two-player game with one copy.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::game::MixedStrategy;
use crate::pref::PreferenceValue;

/// Linear loss over options. Full-feedback losses live in `[-1, 1]`;
/// importance-weighted estimates may exceed that range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpoError::NonFinite("loss vector"));
        }
        Ok(Self(values))
    }

    /// Like [`LossVector::new`] but also enforces the `[-1, 1]` range.
    pub fn bounded(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(SpoError::InvalidInput(format!("loss entry {v} outside [-1, 1]")));
        }
        Self::new(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, p: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (l, q) in self.0.iter().zip(p) {
            acc += l * q;
        }
        acc
    }
}

/// Realized-regret bookkeeping shared by the learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTracker {
    pub learner_loss: f64,
    pub arm_losses: Vec<f64>,
}

impl RegretTracker {
    pub fn new(n: usize) -> Self {
        Self {
            learner_loss: 0.0,
            arm_losses: vec![0.0; n],
        }
    }

    fn record(&mut self, played: &[f64], loss: &LossVector) {
        self.learner_loss += loss.dot(played);
        for (a, l) in self.arm_losses.iter_mut().zip(loss.values()) {
            *a += l;
        }
    }

    /// `sum_t <p_t, l_t> - min_i sum_t l_t(i)`.
    pub fn regret(&self) -> f64 {
        let best = self.arm_losses.iter().cloned().fold(f64::MAX, f64::min);
        self.learner_loss - best
    }
}

/// An online learner that plays a mixed strategy and is fed linear losses.
pub trait OnlineLearner {
    fn strategy(&self) -> MixedStrategy;
    fn update(&mut self, loss: &LossVector) -> Result<()>;
    fn rounds(&self) -> u64;
    fn tracker(&self) -> &RegretTracker;

    fn regret(&self) -> f64 {
        self.tracker().regret()
    }

    fn n(&self) -> usize {
        self.tracker().arm_losses.len()
    }
}

/// Hedge learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    Fixed { eta: f64 },
    /// `sqrt(8 ln n / t)` at round `t`.
    Anytime,
}

impl LearningRate {
    pub fn fixed(eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(SpoError::InvalidInput(format!("learning rate {eta} must be > 0")));
        }
        Ok(Self::Fixed { eta })
    }

    /// `sqrt(8 ln n / T)` for a known horizon.
    pub fn for_horizon(n: usize, horizon: u64) -> Self {
        Self::Fixed {
            eta: default_eta(n, horizon),
        }
    }

    pub fn at(&self, n: usize, round: u64) -> f64 {
        match *self {
            Self::Fixed { eta } => eta,
            Self::Anytime => default_eta(n, round.max(1)),
        }
    }
}

pub fn default_eta(n: usize, horizon: u64) -> f64 {
    (8.0 * (n.max(2) as f64).ln() / horizon.max(1) as f64).sqrt()
}

/// Exploration mix `min(1, sqrt(n) T^{-1/3})`.
pub fn default_gamma(n: usize, horizon: u64) -> f64 {
    ((n as f64).sqrt() * (horizon.max(1) as f64).powf(-1.0 / 3.0)).min(1.0)
}

/// Normalized `exp(w - max w)`.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// `w_i -= eta * loss_i`, then shift so the largest log-weight is 0. A zero
/// loss leaves already-shifted weights untouched.
pub fn log_weight_step(log_weights: &mut [f64], eta: f64, loss: &[f64]) {
    for (w, l) in log_weights.iter_mut().zip(loss) {
        *w -= eta * l;
    }
    let max = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for w in log_weights.iter_mut() {
        *w -= max;
    }
}

/// Exponential weights stored as log-weights, renormalized after each update
/// by subtracting the maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub log_weights: Vec<f64>,
    pub eta: LearningRate,
    pub t: u64,
    pub tracker: RegretTracker,
}

impl HedgeState {
    pub fn new(n: usize, eta: LearningRate) -> Result<Self> {
        if n == 0 {
            return Err(SpoError::InvalidInput("hedge needs at least one arm".into()));
        }
        if let LearningRate::Fixed { eta } = eta {
            LearningRate::fixed(eta)?;
        }
        Ok(Self {
            log_weights: vec![0.0; n],
            eta,
            t: 0,
            tracker: RegretTracker::new(n),
        })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.log_weights)
    }

    /// Functional form of [`OnlineLearner::update`].
    pub fn hedge_update(mut self, loss: &LossVector) -> Result<Self> {
        self.update(loss)?;
        Ok(self)
    }

    /// Exponentiated-gradient step with an explicit gain vector; equivalent
    /// to feeding the loss `-gain`.
    pub fn update_gains(&mut self, gains: &[f64]) -> Result<()> {
        let loss = LossVector::new(gains.iter().map(|g| -g).collect())?;
        self.update(&loss)
    }
}

impl OnlineLearner for HedgeState {
    fn strategy(&self) -> MixedStrategy {
        let p = self.probabilities();
        MixedStrategy::new(p.clone())
            .or_else(|_| MixedStrategy::normalized(p))
            .expect("softmax is a distribution")
    }

    fn update(&mut self, loss: &LossVector) -> Result<()> {
        if loss.len() != self.log_weights.len() {
            return Err(SpoError::DimensionMismatch {
                expected: self.log_weights.len(),
                got: loss.len(),
            });
        }
        let played = self.probabilities();
        self.t += 1;
        let eta = self.eta.at(self.log_weights.len(), self.t);
        log_weight_step(&mut self.log_weights, eta, loss.values());
        self.tracker.record(&played, loss);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn tracker(&self) -> &RegretTracker {
        &self.tracker
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Fixed { step: f64 },
    /// `base / sqrt(t)`.
    InverseSqrt { base: f64 },
}

impl StepSchedule {
    /// `D / (G sqrt t)` with simplex diameter `sqrt 2` and gradient bound `sqrt n`.
    pub fn standard(n: usize) -> Self {
        Self::InverseSqrt {
            base: (2.0f64).sqrt() / (n as f64).sqrt(),
        }
    }

    pub fn at(&self, round: u64) -> f64 {
        match *self {
            Self::Fixed { step } => step,
            Self::InverseSqrt { base } => base / (round.max(1) as f64).sqrt(),
        }
    }
}

/// Projected online gradient descent on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OgdState {
    pub point: Vec<f64>,
    pub step: StepSchedule,
    pub t: u64,
    pub tracker: RegretTracker,
}

impl OgdState {
    pub fn new(start: MixedStrategy, step: StepSchedule) -> Self {
        let n = start.len();
        Self {
            point: start.probs().to_vec(),
            step,
            t: 0,
            tracker: RegretTracker::new(n),
        }
    }

    pub fn ogd_update(mut self, loss: &LossVector) -> Result<Self> {
        self.update(loss)?;
        Ok(self)
    }
}

impl OnlineLearner for OgdState {
    fn strategy(&self) -> MixedStrategy {
        MixedStrategy::normalized(self.point.clone()).expect("projection stays on the simplex")
    }

    fn update(&mut self, loss: &LossVector) -> Result<()> {
        if loss.len() != self.point.len() {
            return Err(SpoError::DimensionMismatch {
                expected: self.point.len(),
                got: loss.len(),
            });
        }
        self.t += 1;
        let step = self.step.at(self.t);
        let moved: Vec<f64> = self
            .point
            .iter()
            .zip(loss.values())
            .map(|(x, l)| x - step * l)
            .collect();
        let played = std::mem::replace(&mut self.point, project_to_simplex(&moved));
        self.tracker.record(&played, loss);
        Ok(())
    }

    fn rounds(&self) -> u64 {
        self.t
    }

    fn tracker(&self) -> &RegretTracker {
        &self.tracker
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditFeedbackConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl BanditFeedbackConfig {
    pub fn new(alpha: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("gamma", gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SpoError::InvalidInput(format!("{name}={v} outside [0, 1]")));
            }
        }
        Ok(Self { alpha, gamma })
    }
}

/// Importance-weighted SPO loss from one observed duel `(i, j)` drawn from
/// `p ⊗ p`: `-α obs / p(i)` at `i` plus `(1-α) obs / p(j)` at `j`.
pub fn bandit_loss_estimate(
    cfg: &BanditFeedbackConfig,
    p: &MixedStrategy,
    sampled: (usize, usize),
    observed: PreferenceValue,
) -> Result<LossVector> {
    let (i, j) = sampled;
    let n = p.len();
    for idx in [i, j] {
        if idx >= n {
            return Err(SpoError::IndexOutOfRange { index: idx, len: n });
        }
        if p.probs()[idx] <= 0.0 {
            return Err(SpoError::ZeroProbability(idx));
        }
    }
    let obs = observed.value();
    let mut est = vec![0.0; n];
    est[i] += -cfg.alpha * obs / p.probs()[i];
    est[j] += (1.0 - cfg.alpha) * obs / p.probs()[j];
    LossVector::new(est)
}

/// `(1 - γ) p + γ / n`.
pub fn mix_with_uniform(p: &MixedStrategy, gamma: f64) -> Result<MixedStrategy> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(SpoError::InvalidInput(format!("gamma={gamma} outside [0, 1]")));
    }
    let n = p.len() as f64;
    MixedStrategy::new(
        p.probs()
            .iter()
            .map(|x| (1.0 - gamma) * x + gamma / n)
            .collect(),
    )
}

/// Mean of a batch of loss vectors, fed to the learner as one update.
pub fn minibatch_accumulate(losses: &[LossVector]) -> Result<LossVector> {
    let first = losses
        .first()
        .ok_or_else(|| SpoError::InvalidInput("empty loss batch".into()))?;
    if losses.len() == 1 {
        return Ok(first.clone());
    }
    let n = first.len();
    let mut acc = vec![0.0; n];
    for l in losses {
        if l.len() != n {
            return Err(SpoError::DimensionMismatch {
                expected: n,
                got: l.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(l.values()) {
            *a += v;
        }
    }
    let b = losses.len() as f64;
    LossVector::new(acc.into_iter().map(|a| a / b).collect())
}
