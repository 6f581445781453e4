//! Exact computations on finite preference games: Minimax Winners by linear
//! programming, Copeland winners, exploitability and mixture collapse.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::pref::PreferenceMatrix;

const SIMPLEX_TOL: f64 = 1e-9;

/// Largest game solved with exact rational pivoting.
pub const EXACT_PIVOT_MAX_N: usize = 12;

/// Probability vector over a finite option set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedStrategy(Vec<f64>);

impl TryFrom<Vec<f64>> for MixedStrategy {
    type Error = SpoError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MixedStrategy::new(v)
    }
}

impl From<MixedStrategy> for Vec<f64> {
    fn from(s: MixedStrategy) -> Self {
        s.0
    }
}

impl MixedStrategy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SpoError::InvalidInput("empty strategy".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(SpoError::NonFinite("strategy"));
        }
        if probs.iter().any(|&p| p < 0.0) {
            return Err(SpoError::InvalidInput(format!(
                "negative probability in {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(SpoError::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Clamp tiny negatives and renormalize; for outputs of numerical routines.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self> {
        for p in probs.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(SpoError::InvalidInput("cannot normalize strategy".into()));
        }
        Self::new(probs.into_iter().map(|p| p / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn pure(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_distance(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn linf_distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSolution {
    pub strategy: MixedStrategy,
    #[serde(rename = "value")]
    pub game_value: f64,
    pub exploitability: f64,
}

/// Duality gap `max_i (P p)_i - min_j (P^T p)_j`; `2 max_i (P p)_i` for an
/// anti-symmetric `P`.
pub fn exploitability(m: &PreferenceMatrix, p: &MixedStrategy) -> Result<f64> {
    let best_row = m.apply(p.probs())?.into_iter().fold(f64::MIN, f64::max);
    let worst_col = m
        .apply_transpose(p.probs())?
        .into_iter()
        .fold(f64::MAX, f64::min);
    Ok((best_row - worst_col).max(0.0))
}

/// All argmax indices of the row sums. Sums within `1e-12` relative of the
/// maximum count as ties.
pub fn copeland_winners(m: &PreferenceMatrix) -> Vec<usize> {
    let sums = m.row_sums();
    let best = sums.iter().cloned().fold(f64::MIN, f64::max);
    let tol = 1e-12 * (1.0 + best.abs());
    sums.iter()
        .enumerate()
        .filter(|(_, &s)| s >= best - tol)
        .map(|(i, _)| i)
        .collect()
}

/// Mixture of strategies over a shared action set.
pub fn collapse_distribution(
    policies: &[MixedStrategy],
    weights: &MixedStrategy,
) -> Result<MixedStrategy> {
    let first = policies
        .first()
        .ok_or_else(|| SpoError::InvalidInput("no policies to collapse".into()))?;
    if weights.len() != policies.len() {
        return Err(SpoError::DimensionMismatch {
            expected: policies.len(),
            got: weights.len(),
        });
    }
    let n = first.len();
    let mut out = vec![0.0; n];
    for (pol, &w) in policies.iter().zip(weights.probs()) {
        if pol.len() != n {
            return Err(SpoError::DimensionMismatch {
                expected: n,
                got: pol.len(),
            });
        }
        for (o, &p) in out.iter_mut().zip(pol.probs()) {
            *o += w * p;
        }
    }
    MixedStrategy::normalized(out)
}

/// Maximin strategy of the row player by linear programming.
///
/// Entries are shifted to be strictly positive, then `max 1·y s.t. A y <= 1,
/// y >= 0` is solved by Bland's-rule simplex. The column strategy is
/// `y / sum(y)`, the row strategy comes from the optimal duals, and the
/// shifted value is `1 / sum(y)`. Games with at most [`EXACT_PIVOT_MAX_N`]
/// options pivot on exact rationals.
pub fn exact_minimax_winner(m: &PreferenceMatrix) -> Result<GameSolution> {
    let n = m.n();
    let (row, value) = if n <= EXACT_PIVOT_MAX_N {
        solve_game::<BigRational>(m)?
    } else {
        solve_game::<f64>(m)?
    };
    let strategy = MixedStrategy::normalized(row)?;
    let expl = exploitability(m, &strategy)?;
    if value.abs() > 1e-8 {
        return Err(SpoError::Internal(format!(
            "anti-symmetric game reported nonzero value {value}"
        )));
    }
    Ok(GameSolution {
        strategy,
        game_value: value,
        exploitability: expl,
    })
}

trait LpScalar: Clone + std::fmt::Debug {
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn is_pos(&self) -> bool;
    fn lt(&self, o: &Self) -> bool;
    fn eq_approx(&self, o: &Self) -> bool;
}

impl LpScalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn is_pos(&self) -> bool {
        *self > 1e-12
    }
    fn lt(&self, o: &Self) -> bool {
        *self < *o - 1e-12
    }
    fn eq_approx(&self, o: &Self) -> bool {
        (self - o).abs() <= 1e-12
    }
}

impl LpScalar for BigRational {
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).unwrap_or_else(|| BigRational::from_integer(BigInt::zero()))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn is_pos(&self) -> bool {
        self.is_positive()
    }
    fn lt(&self, o: &Self) -> bool {
        self < o
    }
    fn eq_approx(&self, o: &Self) -> bool {
        self == o
    }
}

/// Returns the row player's maximin strategy (unnormalized duals are
/// normalized by the caller) and the game value.
fn solve_game<S: LpScalar>(m: &PreferenceMatrix) -> Result<(Vec<f64>, f64)> {
    let n = m.n();
    let min_entry = (0..n)
        .flat_map(|i| m.row(i).iter().cloned())
        .fold(f64::MAX, f64::min);
    let shift = 1.0 - min_entry.min(0.0);
    let shift_s = S::from_f64(shift);
    // Tableau rows: n constraints over columns [y_0..y_{n-1}, s_0..s_{n-1}] | rhs.
    let width = 2 * n + 1;
    let mut tab: Vec<Vec<S>> = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(width);
            for j in 0..n {
                row.push(S::from_f64(m.entry(i, j)).add(&shift_s));
            }
            for k in 0..n {
                row.push(if k == i { S::one() } else { S::zero() });
            }
            row.push(S::one());
            row
        })
        .collect();
    // Reduced costs c_j - z_j; objective value tracked in the last slot.
    let mut reduced: Vec<S> = (0..width)
        .map(|j| if j < n { S::one() } else { S::zero() })
        .collect();
    let mut basis: Vec<usize> = (n..2 * n).collect();

    let max_iters = 50_000;
    for _ in 0..max_iters {
        let Some(enter) = (0..2 * n).find(|&j| reduced[j].is_pos()) else {
            break;
        };
        let mut leave: Option<(usize, S)> = None;
        for (r, row) in tab.iter().enumerate() {
            if row[enter].is_pos() {
                let ratio = row[width - 1].div(&row[enter]);
                let better = match &leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio.lt(best) || (ratio.eq_approx(best) && basis[r] < basis[*lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (pr, _) = leave.ok_or_else(|| SpoError::Internal("unbounded game LP".into()))?;
        let pivot = tab[pr][enter].clone();
        for x in tab[pr].iter_mut() {
            *x = x.div(&pivot);
        }
        let pivot_row = tab[pr].clone();
        for (r, row) in tab.iter_mut().enumerate() {
            if r == pr {
                continue;
            }
            let f = row[enter].clone();
            if f.eq_approx(&S::zero()) {
                continue;
            }
            for (x, p) in row.iter_mut().zip(&pivot_row) {
                *x = x.sub(&f.mul(p));
            }
        }
        let f = reduced[enter].clone();
        for (x, p) in reduced.iter_mut().zip(&pivot_row) {
            *x = x.sub(&f.mul(p));
        }
        basis[pr] = enter;
    }
    if (0..2 * n).any(|j| reduced[j].is_pos()) {
        return Err(SpoError::Internal("simplex iteration limit reached".into()));
    }
    // Duals of the constraints are minus the reduced costs of the slacks.
    let duals: Vec<S> = (0..n)
        .map(|i| S::zero().sub(&reduced[n + i]))
        .collect();
    let mut total = S::zero();
    for d in &duals {
        total = total.add(d);
    }
    if !total.is_pos() {
        return Err(SpoError::Internal("degenerate LP solution".into()));
    }
    let row: Vec<f64> = duals.iter().map(|d| d.div(&total).to_f64()).collect();
    let value = S::one().div(&total).sub(&shift_s).to_f64();
    Ok((row, value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pref::{subpopulation_matrix, SubpopulationSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_antisymmetric(n: usize, rng: &mut ChaCha8Rng) -> PreferenceMatrix {
        PreferenceMatrix::from_upper(n, |_, _| rng.gen_range(-1.0..=1.0)).unwrap()
    }

    fn fig3() -> PreferenceMatrix {
        PreferenceMatrix::from_rows(vec![
            vec![0.0, 1.0, 1.0, -1.0],
            vec![-1.0, 0.0, 1.0, -1.0],
            vec![-1.0, -1.0, 0.0, 1.0],
            vec![1.0, 1.0, -1.0, 0.0],
        ])
        .unwrap()
    }

    fn counterexample() -> PreferenceMatrix {
        PreferenceMatrix::from_rows(vec![
            vec![0.0, 0.4, -1.0],
            vec![-0.4, 0.0, 1.0],
            vec![1.0, -1.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn strategy_validation() {
        assert!(MixedStrategy::new(vec![0.5, 0.6]).is_err());
        assert!(MixedStrategy::new(vec![-0.1, 1.1]).is_err());
        assert!(MixedStrategy::new(vec![]).is_err());
        let s: MixedStrategy = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(s.probs(), &[0.25, 0.75]);
    }

    #[test]
    fn subpopulation_minimax_winner_is_weights() {
        let spec = SubpopulationSpec::new(0.5, 0.3, 0.2).unwrap();
        let sol = exact_minimax_winner(&subpopulation_matrix(&spec)).unwrap();
        assert!(sol.strategy.linf_distance(&[0.5, 0.3, 0.2]) < 1e-12);
        assert!(sol.game_value.abs() < 1e-12);
        assert!(sol.exploitability <= 1e-8);
    }

    #[test]
    fn counterexample_minimax_winner() {
        let sol = exact_minimax_winner(&counterexample()).unwrap();
        let expected = [5.0 / 12.0, 5.0 / 12.0, 1.0 / 6.0];
        assert!(sol.strategy.linf_distance(&expected) < 1e-12, "{:?}", sol);
    }

    #[test]
    fn fig3_minimax_winner_mixes_a_c_d() {
        let m = fig3();
        let sol = exact_minimax_winner(&m).unwrap();
        let third = 1.0 / 3.0;
        assert!(
            sol.strategy.linf_distance(&[third, 0.0, third, third]) < 1e-12,
            "{:?}",
            sol.strategy
        );
        assert_eq!(sol.game_value, 0.0);
    }

    #[test]
    fn copeland_examples() {
        assert_eq!(copeland_winners(&fig3()), vec![0, 3]);
        assert_eq!(copeland_winners(&counterexample()), vec![1]);
        assert_eq!(
            copeland_winners(&PreferenceMatrix::zeros(4).unwrap()),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn exploitability_examples() {
        let rps = PreferenceMatrix::rock_paper_scissors();
        assert_eq!(exploitability(&rps, &MixedStrategy::uniform(3)).unwrap(), 0.0);
        assert_eq!(
            exploitability(&rps, &MixedStrategy::pure(3, 0)).unwrap(),
            2.0
        );
        assert!(matches!(
            exploitability(&rps, &MixedStrategy::uniform(4)),
            Err(SpoError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exploitability_matches_twice_best_response_for_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_antisymmetric(5, &mut rng);
            let raw: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
            let p = MixedStrategy::normalized(raw).unwrap();
            let br = m.apply(p.probs()).unwrap().into_iter().fold(f64::MIN, f64::max);
            assert!((exploitability(&m, &p).unwrap() - 2.0 * br).abs() < 1e-14);
        }
    }

    #[test]
    fn random_games_have_value_zero_and_unexploitable_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..200 {
            let n = 2 + k % 9;
            let m = random_antisymmetric(n, &mut rng);
            let sol = exact_minimax_winner(&m).unwrap();
            assert!(sol.game_value.abs() <= 1e-8);
            assert!(sol.exploitability <= 1e-8);
            let col = m.apply_transpose(sol.strategy.probs()).unwrap();
            assert!(col.iter().all(|&x| x >= -1e-8), "{col:?}");
        }
    }

    #[test]
    fn float_pivoting_agrees_on_large_games() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let m = random_antisymmetric(16, &mut rng);
            let sol = exact_minimax_winner(&m).unwrap();
            assert!(sol.exploitability <= 1e-8, "{}", sol.exploitability);
        }
        let m = random_antisymmetric(7, &mut rng);
        let (row, value) = solve_game::<f64>(&m).unwrap();
        let p = MixedStrategy::normalized(row).unwrap();
        assert!(exploitability(&m, &p).unwrap() <= 1e-8);
        assert!(value.abs() <= 1e-8);
    }

    #[test]
    fn symmetric_pairs_of_solutions_are_equilibria() {
        // Degenerate game with a continuum of MWs: two tied dominant options.
        let m = PreferenceMatrix::from_rows(vec![
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0],
            vec![-1.0, -1.0, 0.0],
        ])
        .unwrap();
        let p = exact_minimax_winner(&m).unwrap().strategy;
        let q = MixedStrategy::new(vec![0.3, 0.7, 0.0]).unwrap();
        for s in [&p, &q] {
            assert!(exploitability(&m, s).unwrap() <= 1e-8);
        }
        // Pair gap of (p, q): best row response to q minus worst column reply to p.
        let br = m.apply(q.probs()).unwrap().into_iter().fold(f64::MIN, f64::max);
        let wc = m
            .apply_transpose(p.probs())
            .unwrap()
            .into_iter()
            .fold(f64::MAX, f64::min);
        assert!(br - wc <= 1e-8);
    }

    #[test]
    fn copeland_invariant_under_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let m = PreferenceMatrix::from_upper(6, |_, _| {
                [-1.0, -0.5, 0.0, 0.5, 1.0][rng.gen_range(0..5)]
            })
            .unwrap();
            let scale = [0.25, 0.5, 0.125][rng.gen_range(0..3)];
            assert_eq!(
                copeland_winners(&m),
                copeland_winners(&m.scaled(scale).unwrap())
            );
        }
    }

    #[test]
    fn collapse_examples() {
        let one = MixedStrategy::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(
            collapse_distribution(&[one.clone()], &MixedStrategy::pure(1, 0)).unwrap(),
            one
        );
        let mixed = collapse_distribution(
            &[MixedStrategy::pure(2, 0), MixedStrategy::pure(2, 1)],
            &MixedStrategy::uniform(2),
        )
        .unwrap();
        assert_eq!(mixed.probs(), &[0.5, 0.5]);
        assert!(collapse_distribution(&[], &MixedStrategy::uniform(1)).is_err());
    }

    #[test]
    fn solution_json_shape() {
        let sol = exact_minimax_winner(&PreferenceMatrix::rock_paper_scissors()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&sol).unwrap();
        assert!(v.get("strategy").unwrap().is_array());
        assert!(v.get("value").is_some());
        assert!(v.get("exploitability").is_some());
    }
}
