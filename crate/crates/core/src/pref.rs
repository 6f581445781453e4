//! Preference values, preference matrices and trajectory-level preference
//! oracles.
//!
//! A preference function maps a pair of outcomes to `[-1, 1]`, positive when
//! the first is preferred. Every oracle here is anti-symmetric:
//! `P(x, y) = -P(y, x)` and `P(x, x) = 0`. The noisy oracle is the exception
//! per call, since its flip is drawn independently on each query.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};

const ANTISYMMETRY_TOL: f64 = 1e-12;

/// A preference value in `[-1, 1]`; `2 Pr(x > y) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceValue(f64);

impl PreferenceValue {
    pub const ZERO: PreferenceValue = PreferenceValue(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(SpoError::NonFinite("preference value"));
        }
        if !(-1.0..=1.0).contains(&value) {
            return Err(SpoError::InvalidInput(format!(
                "preference value {value} outside [-1, 1]"
            )));
        }
        Ok(Self(value))
    }

    /// From a win probability in `[0, 1]`.
    pub fn from_win_probability(p: f64) -> Result<Self> {
        Self::new(2.0 * p - 1.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn win_probability(self) -> f64 {
        (self.0 + 1.0) / 2.0
    }

    fn sign_of(x: f64) -> Self {
        if x > 0.0 {
            Self(1.0)
        } else if x < 0.0 {
            Self(-1.0)
        } else {
            Self(0.0)
        }
    }
}

impl std::ops::Neg for PreferenceValue {
    type Output = PreferenceValue;
    fn neg(self) -> Self {
        Self(-self.0)
    }
}

/// Anti-symmetric payoff matrix over a finite option set.
///
/// Construction validates anti-symmetry to `1e-12` and then stores the lower
/// triangle as the exact negation of the upper one, so `get(j, i)` is always
/// bitwise `-get(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDoc", into = "MatrixDoc")]
pub struct PreferenceMatrix {
    n: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixDoc {
    n: usize,
    entries: Vec<Vec<f64>>,
}

impl TryFrom<MatrixDoc> for PreferenceMatrix {
    type Error = SpoError;
    fn try_from(doc: MatrixDoc) -> Result<Self> {
        if doc.entries.len() != doc.n {
            return Err(SpoError::DimensionMismatch {
                expected: doc.n,
                got: doc.entries.len(),
            });
        }
        PreferenceMatrix::from_rows(doc.entries)
    }
}

impl From<PreferenceMatrix> for MatrixDoc {
    fn from(m: PreferenceMatrix) -> Self {
        MatrixDoc {
            n: m.n,
            entries: m.rows(),
        }
    }
}

impl PreferenceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(SpoError::InvalidInput("empty preference matrix".into()));
        }
        let mut entries = Vec::with_capacity(n * n);
        for row in &rows {
            if row.len() != n {
                return Err(SpoError::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            for &x in row {
                PreferenceValue::new(x)?;
                entries.push(x);
            }
        }
        for i in 0..n {
            if entries[i * n + i].abs() > ANTISYMMETRY_TOL {
                return Err(SpoError::InvalidInput(format!(
                    "diagonal entry {i} is {}",
                    entries[i * n + i]
                )));
            }
            entries[i * n + i] = 0.0;
            for j in (i + 1)..n {
                let upper = entries[i * n + j];
                let lower = entries[j * n + i];
                if (upper + lower).abs() > ANTISYMMETRY_TOL {
                    return Err(SpoError::InvalidInput(format!(
                        "entries ({i},{j})={upper} and ({j},{i})={lower} are not anti-symmetric"
                    )));
                }
                entries[j * n + i] = -upper;
            }
        }
        Ok(Self { n, entries })
    }

    /// Build from the strict upper triangle given by `upper(i, j)` for `i < j`.
    pub fn from_upper<F: FnMut(usize, usize) -> f64>(n: usize, mut upper: F) -> Result<Self> {
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = upper(i, j);
                rows[i][j] = v;
                rows[j][i] = -v;
            }
        }
        Self::from_rows(rows)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_upper(n, |_, _| 0.0)
    }

    /// Rock-paper-scissors with options ordered (rock, paper, scissors).
    pub fn rock_paper_scissors() -> Self {
        let third = 1.0 / 3.0;
        subpopulation_matrix(&SubpopulationSpec::new(third, third, third).expect("valid"))
            .scaled(3.0)
            .expect("entries stay in range")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Result<PreferenceValue> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(SpoError::IndexOutOfRange {
                    index: idx,
                    len: self.n,
                });
            }
        }
        Ok(PreferenceValue(self.entry(i, j)))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// `P q`, accumulated left to right over columns.
    pub fn apply(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.n {
            return Err(SpoError::DimensionMismatch {
                expected: self.n,
                got: q.len(),
            });
        }
        Ok((0..self.n)
            .map(|i| {
                let mut acc = 0.0;
                for (j, &qj) in q.iter().enumerate() {
                    acc += self.entry(i, j) * qj;
                }
                acc
            })
            .collect())
    }

    /// `P^T p`, accumulated left to right over rows.
    pub fn apply_transpose(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.n {
            return Err(SpoError::DimensionMismatch {
                expected: self.n,
                got: p.len(),
            });
        }
        Ok((0..self.n)
            .map(|j| {
                let mut acc = 0.0;
                for (i, &pi) in p.iter().enumerate() {
                    acc += self.entry(i, j) * pi;
                }
                acc
            })
            .collect())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_rows(
            self.rows()
                .into_iter()
                .map(|r| r.into_iter().map(|x| x * factor).collect())
                .collect(),
        )
    }
}

/// Population weights of three sub-populations, each holding a single
/// pairwise preference among three options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubpopulationSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl SubpopulationSpec {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let spec = Self { a, b, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.a, self.b, self.c];
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SpoError::InvalidInput(format!(
                "sub-population weights must be nonnegative, got {w:?}"
            )));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(SpoError::InvalidInput(format!(
                "sub-population weights must sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }
}

/// Population-average preference: `a` prefers option 1 over 2, `b` prefers 2
/// over 0 and `c` prefers 0 over 1. Its Minimax Winner is `(a, b, c)`.
pub fn subpopulation_matrix(spec: &SubpopulationSpec) -> PreferenceMatrix {
    let SubpopulationSpec { a, b, c } = *spec;
    PreferenceMatrix::from_rows(vec![
        vec![0.0, c, -b],
        vec![-c, 0.0, a],
        vec![b, -a, 0.0],
    ])
    .expect("validated weights give a valid matrix")
}

/// Upper triangle drawn i.i.d. uniform on `[-1, 1]`.
pub fn random_preference_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<PreferenceMatrix> {
    PreferenceMatrix::from_upper(n, |_, _| rng.gen_range(-1.0..=1.0))
}

/// `n` options where option 0 beats every other by `delta` and the rest
/// play a cyclic tournament at strength `delta`: option `i` beats the next
/// `⌊(n-2)/2⌋` options around the cycle of `1..n`. The pure strategy on 0 is
/// the unique minimax winner.
pub fn gap_condition_matrix(n: usize, delta: f64) -> Result<PreferenceMatrix> {
    if n < 2 {
        return Err(SpoError::InvalidInput("gap instance needs at least two options".into()));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(SpoError::InvalidInput(format!("gap {delta} outside (0, 1]")));
    }
    let m = n - 1;
    let reach = (m.saturating_sub(1)) / 2;
    PreferenceMatrix::from_upper(n, |i, j| {
        if i == 0 {
            delta
        } else {
            let d = (j - i) % m;
            if d <= reach {
                delta
            } else if m % 2 == 0 && d == m / 2 {
                0.0
            } else {
                -delta
            }
        }
    })
}

/// Whether `winners` is an isolating set: each winner beats every other
/// option by at least `delta`, winners are within `delta / 2` of each other,
/// and the remaining options are within `delta` of each other.
pub fn satisfies_gap_condition(m: &PreferenceMatrix, winners: &[usize], delta: f64) -> bool {
    let n = m.n();
    let is_w = |i: usize| winners.contains(&i);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = m.entry(i, j);
            let ok = match (is_w(i), is_w(j)) {
                (true, false) => p >= delta,
                (true, true) => p.abs() <= delta / 2.0,
                (false, false) => p.abs() <= delta,
                (false, true) => true,
            };
            if !ok {
                return false;
            }
        }
    }
    !winners.is_empty() && winners.iter().all(|&w| w < n)
}

pub fn matrix_preference(m: &PreferenceMatrix, i: usize, j: usize) -> Result<PreferenceValue> {
    m.get(i, j)
}

/// Sequence of `(state, action)` pairs with optional ground-truth per-step
/// rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_step_reward: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Self {
            steps,
            per_step_reward: None,
        }
    }

    pub fn with_rewards(steps: Vec<(usize, usize)>, rewards: Vec<f64>) -> Result<Self> {
        if rewards.len() != steps.len() {
            return Err(SpoError::DimensionMismatch {
                expected: steps.len(),
                got: rewards.len(),
            });
        }
        Ok(Self {
            steps,
            per_step_reward: Some(rewards),
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn rewards(&self) -> Result<&[f64]> {
        self.per_step_reward
            .as_deref()
            .ok_or(SpoError::MissingReward)
    }

    pub fn total_return(&self) -> Result<f64> {
        Ok(self.rewards()?.iter().sum())
    }
}

/// A (possibly stateful) comparator of trajectory pairs.
pub trait TrajectoryPreference {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue>;
}

impl<T: TrajectoryPreference + ?Sized> TrajectoryPreference for Box<T> {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        (**self).compare(a, b)
    }
}

impl<T: TrajectoryPreference + ?Sized> TrajectoryPreference for &mut T {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        (**self).compare(a, b)
    }
}

/// Wraps a closure as a trajectory preference.
pub struct FnPreference<F>(pub F);

impl<F> TrajectoryPreference for FnPreference<F>
where
    F: FnMut(&Trajectory, &Trajectory) -> Result<PreferenceValue>,
{
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        (self.0)(a, b)
    }
}

/// `sign(r(a) - r(b))` on total ground-truth return; ties give 0.
pub fn max_reward_preference(a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
    let ra = a.total_return()?;
    let rb = b.total_return()?;
    Ok(PreferenceValue::sign_of(ra - rb))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxRewardPreference;

impl TrajectoryPreference for MaxRewardPreference {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        max_reward_preference(a, b)
    }
}

/// Compares single-step trajectories through a matrix indexed by the first
/// action.
#[derive(Debug, Clone)]
pub struct BanditMatrixPreference {
    pub matrix: PreferenceMatrix,
}

impl TrajectoryPreference for BanditMatrixPreference {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        let (Some(&(_, i)), Some(&(_, j))) = (a.steps.first(), b.steps.first()) else {
            return Err(SpoError::InvalidInput("empty trajectory".into()));
        };
        self.matrix.get(i, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub flip_probability: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(flip_probability: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip_probability) {
            return Err(SpoError::InvalidInput(format!(
                "flip probability {flip_probability} outside [0, 1]"
            )));
        }
        Ok(Self {
            flip_probability,
            seed,
        })
    }
}

/// Flips the base oracle's argument order with probability `ε` on every
/// query. Owns its own counter-based stream seeded from the [`NoiseSpec`].
pub struct NoisyPreference<P> {
    base: P,
    flip_probability: f64,
    rng: ChaCha8Rng,
}

impl<P: TrajectoryPreference> NoisyPreference<P> {
    pub fn new(base: P, noise: NoiseSpec) -> Result<Self> {
        NoiseSpec::new(noise.flip_probability, noise.seed)?;
        Ok(Self {
            base,
            flip_probability: noise.flip_probability,
            rng: ChaCha8Rng::seed_from_u64(noise.seed),
        })
    }
}

impl<P: TrajectoryPreference> TrajectoryPreference for NoisyPreference<P> {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        let flip = self.rng.gen::<f64>() < self.flip_probability;
        if flip {
            self.base.compare(b, a)
        } else {
            self.base.compare(a, b)
        }
    }
}

/// One-shot noisy comparison: draws the flip from `rng`.
pub fn noisy_preference<P: TrajectoryPreference + ?Sized, R: Rng + ?Sized>(
    a: &Trajectory,
    b: &Trajectory,
    base: &mut P,
    flip_probability: f64,
    rng: &mut R,
) -> Result<PreferenceValue> {
    if rng.gen::<f64>() < flip_probability {
        base.compare(b, a)
    } else {
        base.compare(a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonMarkovSpec {
    pub threshold_r_max: f64,
    pub split_fraction: f64,
}

impl NonMarkovSpec {
    pub fn new(threshold_r_max: f64, split_fraction: f64) -> Result<Self> {
        if !(split_fraction > 0.0 && split_fraction < 1.0) {
            return Err(SpoError::InvalidInput(format!(
                "split fraction {split_fraction} outside (0, 1)"
            )));
        }
        Ok(Self {
            threshold_r_max,
            split_fraction,
        })
    }

    /// First step index of the tail segment: `floor(split * H)`.
    pub fn split_index(&self, horizon: usize) -> usize {
        (self.split_fraction * horizon as f64).floor() as usize
    }

    /// Return accrued from the split index on.
    pub fn tail_return(&self, t: &Trajectory) -> Result<f64> {
        let r = t.rewards()?;
        Ok(r[self.split_index(r.len()).min(r.len())..].iter().sum())
    }

    pub fn is_feasible(&self, t: &Trajectory) -> Result<bool> {
        Ok(self.tail_return(t)? <= self.threshold_r_max)
    }
}

/// Lexicographic: feasibility of the tail-return constraint first, then total
/// return. Two infeasible trajectories compare by tail return, lower wins.
pub fn nonmarkov_preference(
    a: &Trajectory,
    b: &Trajectory,
    spec: &NonMarkovSpec,
) -> Result<PreferenceValue> {
    let (tail_a, tail_b) = (spec.tail_return(a)?, spec.tail_return(b)?);
    let feas_a = tail_a <= spec.threshold_r_max;
    let feas_b = tail_b <= spec.threshold_r_max;
    Ok(match (feas_a, feas_b) {
        (true, false) => PreferenceValue(1.0),
        (false, true) => PreferenceValue(-1.0),
        (true, true) => PreferenceValue::sign_of(a.total_return()? - b.total_return()?),
        (false, false) => PreferenceValue::sign_of(tail_b - tail_a),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NonMarkovPreference(pub NonMarkovSpec);

impl TrajectoryPreference for NonMarkovPreference {
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        nonmarkov_preference(a, b, &self.0)
    }
}

/// Polar coordinates of an episode endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricEndpoint {
    pub radius: f64,
    pub angle: f64,
}

impl GeometricEndpoint {
    pub fn new(radius: f64, angle: f64) -> Result<Self> {
        if !(radius >= 0.0) || !angle.is_finite() {
            return Err(SpoError::InvalidInput(format!(
                "bad endpoint radius={radius} angle={angle}"
            )));
        }
        Ok(Self {
            radius,
            angle: wrap_angle(angle),
        })
    }

    pub fn from_cartesian(x: f64, y: f64) -> Self {
        Self {
            radius: x.hypot(y),
            angle: wrap_angle(y.atan2(x)),
        }
    }

    /// Octant index `0..8` of the angle. Angles within `1e-9` below an
    /// octant boundary count as on it.
    pub fn octant(&self) -> usize {
        (((self.angle + 1e-9) / (PI / 4.0)).floor() as usize) % 8
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricParams {
    pub dist_weight: f64,
    pub angle_slice: f64,
    pub dist_threshold: f64,
}

impl Default for GeometricParams {
    fn default() -> Self {
        Self {
            dist_weight: 0.3,
            angle_slice: PI / 4.0,
            dist_threshold: 10.0,
        }
    }
}

const SLICE_EDGE_TOL: f64 = 1e-9;

/// One-sided angular win: `p` beats `q` when `q` sits in the slice of width
/// `slice` counter-clockwise of `p`, i.e. `p` is "in front of" `q` when the
/// front is the clockwise direction. The far edge of the slice is inclusive.
fn angular_win(p_angle: f64, q_angle: f64, slice: f64) -> bool {
    let d = (q_angle - p_angle).rem_euclid(2.0 * PI);
    d > SLICE_EDGE_TOL && d <= slice + SLICE_EDGE_TOL
}

fn distance_win(p_radius: f64, q_radius: f64, threshold: f64) -> f64 {
    if p_radius > threshold && q_radius > threshold {
        1.0
    } else if p_radius > q_radius {
        1.0
    } else {
        0.0
    }
}

fn geometric_raw(p: &GeometricEndpoint, q: &GeometricEndpoint, params: &GeometricParams) -> f64 {
    let ang = if angular_win(p.angle, q.angle, params.angle_slice) {
        1.0
    } else {
        0.0
    };
    params.dist_weight * distance_win(p.radius, q.radius, params.dist_threshold)
        + (1.0 - params.dist_weight) * ang
}

/// Radius/angle "pizza slice" preference, anti-symmetrized as
/// `raw(p, q) - raw(q, p)` where `raw` is the weighted one-sided score in
/// `[0, 1]`. A point loses to anything in the slice clockwise of it; within
/// the distance threshold the larger radius wins.
pub fn geometric_preference(
    p: &GeometricEndpoint,
    q: &GeometricEndpoint,
    params: &GeometricParams,
) -> Result<PreferenceValue> {
    if !(params.angle_slice > 0.0 && params.angle_slice < 2.0 * PI) {
        return Err(SpoError::InvalidInput(format!(
            "angle slice {} outside (0, 2pi)",
            params.angle_slice
        )));
    }
    if !(0.0..=1.0).contains(&params.dist_weight) {
        return Err(SpoError::InvalidInput(format!(
            "distance weight {} outside [0, 1]",
            params.dist_weight
        )));
    }
    let v = geometric_raw(p, q, params) - geometric_raw(q, p, params);
    PreferenceValue::new(v.clamp(-1.0, 1.0))
}

/// Geometric preference over trajectories through an endpoint map.
pub struct GeometricTrajectoryPreference<F> {
    pub params: GeometricParams,
    pub endpoint: F,
}

impl<F> TrajectoryPreference for GeometricTrajectoryPreference<F>
where
    F: Fn(&Trajectory) -> GeometricEndpoint,
{
    fn compare(&mut self, a: &Trajectory, b: &Trajectory) -> Result<PreferenceValue> {
        geometric_preference(&(self.endpoint)(a), &(self.endpoint)(b), &self.params)
    }
}
