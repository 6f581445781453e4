use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    digest, Algorithm, CheckOutcome, LearnerSettings, MatrixSpec, ResolvedConfig, RunContext,
    RunOutput, RunRecord,
};
use crate::baselines::{
    dpo_analysis, dpo_analysis_csv, run_iterative_rm, soft_opt_policy,
    RewardModelConfig,
};
use crate::envs::{
    builtin, cyclic_action_count_preference, expected_return, history_best_response,
    history_policy_values, optimal_action_sets, markov_optimum, random_mdp, rollout_with,
    split_trajectory_reward, Builtin, ContextualBandit, MarkovPolicy, TabularHistoryPolicy,
    TabularMDP,
};
use crate::error::{Result, SpoError};
use crate::game::{exact_minimax_winner, exploitability, MixedStrategy};
use crate::learners::{HedgeState, LearningRate, OgdState, StepSchedule};
use crate::pref::{
    random_preference_matrix, satisfies_gap_condition, subpopulation_matrix,
    BanditMatrixPreference, MaxRewardPreference, NonMarkovPreference, NonMarkovSpec,
    PreferenceMatrix, SubpopulationSpec, TrajectoryPreference,
};
use crate::sampling::splitmix_seed;
use crate::spo::{
    run_selfplay_bandit, run_selfplay_dueling_check, run_selfplay_fullfeedback, run_spo_contextual,
    run_spo_practical, run_spo_tabular, BanditRunConfig, ContextualConfig, PracticalConfig,
    PracticalRun, RunOptions, SelfPlayRun, TabularConfig,
};

/// What a scenario runs when the config leaves a field unset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDefaults {
    pub algorithm: Algorithm,
    /// Zero for scenarios without a round count.
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub env: Option<&'static str>,
    pub matrix: Option<MatrixSpec>,
    pub learner: LearnerSettings,
}

pub struct Scenario {
    pub id: &'static str,
    pub aliases: &'static [&'static str],
    pub description: &'static str,
    pub algorithms: &'static [Algorithm],
    /// Human-readable acceptance check.
    pub check: &'static str,
    pub defaults: fn() -> ScenarioDefaults,
    pub run: fn(&ResolvedConfig, &RunContext) -> Result<RunOutput>,
    pub verdict: fn(&ResolvedConfig, &[RunOutput]) -> CheckOutcome,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario").field("id", &self.id).finish_non_exhaustive()
    }
}

use Algorithm::*;

static REGISTRY: [Scenario; 15] = [
    Scenario {
        id: "subpopulation-mw",
        aliases: &[],
        description: "exact minimax winner of random three-subpopulation matrices",
        algorithms: &[ExactMw],
        check: "max L-inf distance to the closed form (a, b, c) <= 1e-8",
        defaults: subpop_mw_defaults,
        run: subpop_mw_run,
        verdict: subpop_mw_verdict,
    },
    Scenario {
        id: "random-games-hedge",
        aliases: &[],
        description: "full-feedback Hedge self-play on random games with n <= 8",
        algorithms: &[SpoFull],
        check: "exploitability <= 2 regret / T + 1e-9 and <= 8 sqrt(ln n / T) on every game",
        defaults: random_games_defaults,
        run: random_games_run,
        verdict: random_games_verdict,
    },
    Scenario {
        id: "dueling-equivalence",
        aliases: &[],
        description: "single-player self-play against the explicit two-player protocol",
        algorithms: &[SpoFull],
        check: "Hedge and OGD iterates bit-identical in both protocols on every game",
        defaults: dueling_defaults,
        run: dueling_run,
        verdict: dueling_verdict,
    },
    Scenario {
        id: "subpopulation-spo",
        aliases: &["subpopulation"],
        description: "practical self-play on a one-step subpopulation preference",
        algorithms: &[SpoPractical, Rm],
        check: "spo: average strategy L1 <= 0.05 from the minimax winner on every seed; \
                rm: late-average L1 >= 0.2 on every seed of a non-uniform instance",
        defaults: subpop_spo_defaults,
        run: subpop_run,
        verdict: subpop_verdict,
    },
    Scenario {
        id: "subpopulation-rm",
        aliases: &[],
        description: "iterative reward-model baseline on a one-step subpopulation preference",
        algorithms: &[Rm, SpoPractical],
        check: "rm: late-average L1 >= 0.2 on every seed of a non-uniform instance; \
                spo: average strategy L1 <= 0.05",
        defaults: subpop_rm_defaults,
        run: subpop_run,
        verdict: subpop_verdict,
    },
    Scenario {
        id: "dpo-counterexample",
        aliases: &[],
        description: "DPO loss and soft-optimal policies on the three-option counterexample",
        algorithms: &[DpoAnalysis],
        check: "MW = (5/12, 5/12, 1/6) within 1e-8; loss at reference = pairs * ln 2 within 1e-9; \
                loss(MW) > loss(reference) for beta in {0.1, 1, 10}; soft-opt of r = (0, 1, 0) has p(a) = p(c)",
        defaults: dpo_defaults,
        run: dpo_run,
        verdict: dpo_verdict,
    },
    Scenario {
        id: "gap-condition",
        aliases: &[],
        description: "Hedge self-play on a six-option game with a unique winner and margin 0.4",
        algorithms: &[SpoFull],
        check: "exploitability(1e4) <= 5 (1 + 2 n ln T) / (delta T); T * exploitability bounded; \
                sqrt(T) * exploitability decreasing to <= 0.2 of its first value",
        defaults: gap_defaults,
        run: gap_run,
        verdict: gap_verdict,
    },
    Scenario {
        id: "rps-bandit",
        aliases: &["rps-selfplay"],
        description: "bandit-feedback self-play on rock-paper-scissors",
        algorithms: &[SpoBandit, SpoFull],
        check: "mean over seeds of the average strategy's L1 to uniform <= 0.1",
        defaults: rps_defaults,
        run: rps_run,
        verdict: rps_verdict,
    },
    Scenario {
        id: "reward-splitting",
        aliases: &[],
        description: "optimal history policies under whole-trajectory and split rewards",
        algorithms: &[RewardSplit],
        check: "per-history optimal action sets (and brute-force argmax sets where small) identical",
        defaults: split_defaults,
        run: split_run,
        verdict: split_verdict,
    },
    Scenario {
        id: "tabular-spo",
        aliases: &[],
        description: "history-level self-play on a two-state chain with a cyclic preference",
        algorithms: &[SpoTabular],
        check: "duality gap of the mixture <= 8 H sqrt(ln A / T)",
        defaults: tabular_defaults,
        run: tabular_run,
        verdict: tabular_verdict,
    },
    Scenario {
        id: "gridworld-spo",
        aliases: &[],
        description: "practical self-play with a max-reward oracle on a 5x5 gridworld",
        algorithms: &[SpoPractical, Rm],
        check: "selected checkpoint reaches >= 95% of the optimal return on every seed",
        defaults: grid_defaults,
        run: grid_run,
        verdict: grid_verdict,
    },
    Scenario {
        id: "nonmarkov-spo",
        aliases: &[],
        description: "practical self-play with a constrained, non-Markovian preference",
        algorithms: &[SpoPractical, Rm],
        check: "every seed feasible (mean tail <= r_max, >= 95% of rollouts feasible) with total \
                return above the best feasible stationary policy",
        defaults: nonmarkov_spo_defaults,
        run: nonmarkov_run,
        verdict: nonmarkov_verdict,
    },
    Scenario {
        id: "nonmarkov-rm",
        aliases: &[],
        description: "reward-model baseline on the constrained, non-Markovian preference",
        algorithms: &[Rm, SpoPractical],
        check: "rm: at least 70% of seeds infeasible or not above the best feasible stationary policy",
        defaults: nonmarkov_rm_defaults,
        run: nonmarkov_run,
        verdict: nonmarkov_verdict,
    },
    Scenario {
        id: "pointnav-spo",
        aliases: &[],
        description: "practical self-play on point navigation with an angular-slice preference",
        algorithms: &[SpoPractical, Rm],
        check: "late checkpoints: mean endpoint radius >= 0.8 threshold and >= 6 of 8 octants \
                covered, on every seed",
        defaults: pointnav_defaults,
        run: pointnav_run,
        verdict: pointnav_verdict,
    },
    Scenario {
        id: "contextual-spo",
        aliases: &[],
        description: "contextual bandit self-play with k samples per round",
        algorithms: &[SpoContextual],
        check: "per-context average strategy L1 <= 0.15 from the minimax winner on every seed",
        defaults: contextual_defaults,
        run: contextual_run,
        verdict: contextual_verdict,
    },
];

pub fn registry() -> &'static [Scenario] {
    &REGISTRY
}

pub fn find_scenario(id: &str) -> Result<&'static Scenario> {
    REGISTRY
        .iter()
        .find(|s| s.id == id || s.aliases.contains(&id))
        .ok_or_else(|| {
            SpoError::Config(format!(
                "unknown scenario '{id}' (see list-scenarios)"
            ))
        })
}

fn labels(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn defaults(algorithm: Algorithm, rounds: u64, seeds: u64) -> ScenarioDefaults {
    ScenarioDefaults {
        algorithm,
        rounds,
        seeds: labels(seeds),
        env: None,
        matrix: None,
        learner: LearnerSettings::default(),
    }
}

fn outcome(passed: bool, metric: &str, threshold: impl Into<String>, detail: impl Into<String>) -> CheckOutcome {
    CheckOutcome {
        passed,
        metric: metric.to_string(),
        threshold: threshold.into(),
        detail: detail.into(),
    }
}

fn values(runs: &[RunOutput], name: &str) -> Vec<f64> {
    runs.iter().map(|r| r.get(name)).collect()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn rng_for(ctx: &RunContext) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(ctx.seed)
}

fn matrix_for(cfg: &ResolvedConfig, rng: &mut ChaCha8Rng) -> Result<PreferenceMatrix> {
    let spec = cfg
        .matrix
        .as_ref()
        .ok_or_else(|| SpoError::Config("scenario needs a matrix".into()))?;
    match spec {
        MatrixSpec::Random { min_n, max_n } => {
            if *min_n < 2 || min_n > max_n {
                return Err(SpoError::Config(format!("random matrix sizes {min_n}..={max_n}")));
            }
            let n = rng.gen_range(*min_n..=*max_n);
            random_preference_matrix(n, rng)
        }
        other => Ok(other.fixed()?.expect("non-random spec")),
    }
}

fn hedge_rate(cfg: &ResolvedConfig, n: usize) -> Result<LearningRate> {
    match cfg.learner.eta {
        Some(eta) => LearningRate::fixed(eta),
        None => Ok(LearningRate::for_horizon(n, cfg.rounds)),
    }
}

fn trace_every(rounds: u64, points: u64) -> u64 {
    (rounds / points).max(1)
}

/// Records for every trace point of a normal-form run.
fn selfplay_records(
    ctx: &RunContext,
    m: &PreferenceMatrix,
    mw: &MixedStrategy,
    run: &SelfPlayRun,
) -> Result<Vec<RunRecord>> {
    run.trace
        .iter()
        .map(|tp| {
            let avg = MixedStrategy::new(tp.average.clone())?;
            let mut r = RunRecord::new(ctx, tp.t, digest(&tp.average));
            r.exploitability = Some(exploitability(m, &avg)?);
            r.l1_to_mw = Some(avg.l1_distance(mw.probs()));
            r.regret = Some(tp.regret);
            r.queries = Some(tp.queries);
            Ok(r)
        })
        .collect()
}

// ---------------------------------------------------------------- exact MW

fn subpop_mw_defaults() -> ScenarioDefaults {
    defaults(ExactMw, 0, 50)
}

fn subpop_mw_run(_cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let raw: [f64; 3] = [rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)];
    let total: f64 = raw.iter().sum();
    let (a, b) = (raw[0] / total, raw[1] / total);
    let w = [a, b, 1.0 - a - b];
    let m = subpopulation_matrix(&SubpopulationSpec::new(w[0], w[1], w[2])?);
    let sol = exact_minimax_winner(&m)?;
    let mut out = RunOutput::new(ctx);
    let mut r = RunRecord::new(ctx, 0, digest(sol.strategy.probs()));
    r.exploitability = Some(sol.exploitability);
    r.l1_to_mw = Some(sol.strategy.l1_distance(&w));
    out.records.push(r);
    out.metric("linf_error", sol.strategy.linf_distance(&w));
    out.metric("exploitability", sol.exploitability);
    Ok(out)
}

fn subpop_mw_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let worst = max_of(&values(runs, "linf_error"));
    outcome(worst <= 1e-8, "linf_error", "<= 1e-8", format!("worst {worst:e} over {} instances", runs.len()))
}

// ---------------------------------------------------------- random games

fn random_games_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::Random { min_n: 2, max_n: 8 }),
        ..defaults(SpoFull, 10_000, 20)
    }
}

fn random_games_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let n = m.n();
    let mw = exact_minimax_winner(&m)?.strategy;
    let hedge = HedgeState::new(n, hedge_rate(cfg, n)?)?;
    let opts = RunOptions::new(cfg.rounds).trace_every(trace_every(cfg.rounds, 10));
    let run = run_selfplay_fullfeedback(&m, hedge, opts)?;
    let mut out = RunOutput::new(ctx);
    out.records = selfplay_records(ctx, &m, &mw, &run)?;
    let t = cfg.rounds as f64;
    out.metric("n", n as f64);
    out.metric("exploitability", exploitability(&m, &run.average)?);
    out.metric("l1_to_mw", run.average.l1_distance(mw.probs()));
    out.metric("regret", run.regret);
    out.metric("regret_bound", 2.0 * run.regret / t + 1e-9);
    out.metric("worst_case_bound", 8.0 * ((n as f64).ln() / t).sqrt());
    Ok(out)
}

fn random_games_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let bad: Vec<&str> = runs
        .iter()
        .filter(|r| {
            let e = r.get("exploitability");
            !(e <= r.get("regret_bound") && e <= r.get("worst_case_bound"))
        })
        .map(|r| r.run_id.as_str())
        .collect();
    outcome(
        bad.is_empty(),
        "exploitability",
        "<= min(2 regret/T + 1e-9, 8 sqrt(ln n / T))",
        if bad.is_empty() {
            format!("{} games within both bounds", runs.len())
        } else {
            format!("violations: {}", bad.join(", "))
        },
    )
}

// ------------------------------------------------------------- dueling

fn dueling_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::Random { min_n: 2, max_n: 8 }),
        ..defaults(SpoFull, 500, 10)
    }
}

fn bit_mismatches(a: &[MixedStrategy], b: &[MixedStrategy]) -> usize {
    let bits = |p: &MixedStrategy| p.probs().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.iter().zip(b).filter(|(x, y)| bits(x) != bits(y)).count() + a.len().abs_diff(b.len())
}

/// Rounds where single-player and two-player iterates differ in any bit.
fn protocol_mismatches<L, F>(m: &PreferenceMatrix, factory: F, rounds: u64) -> Result<(usize, Vec<MixedStrategy>)>
where
    L: crate::learners::OnlineLearner,
    F: Fn() -> L,
{
    let opts = RunOptions::new(rounds).keep_iterates();
    let single = run_selfplay_fullfeedback(m, factory(), opts)?;
    match run_selfplay_dueling_check(m, &factory, opts) {
        Ok((p, q)) => Ok((
            bit_mismatches(&single.iterates, &p.iterates) + bit_mismatches(&p.iterates, &q.iterates),
            single.iterates,
        )),
        Err(SpoError::Diverged(t)) => Ok((rounds as usize + 1 - t, single.iterates)),
        Err(e) => Err(e),
    }
}

fn dueling_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let n = m.n();
    let rate = hedge_rate(cfg, n)?;
    let (hedge_bad, hedge_iter) =
        protocol_mismatches(&m, || HedgeState::new(n, rate).expect("validated rate"), cfg.rounds)?;
    let (ogd_bad, ogd_iter) = protocol_mismatches(
        &m,
        || OgdState::new(MixedStrategy::uniform(n), StepSchedule::standard(n)),
        cfg.rounds,
    )?;
    let mut out = RunOutput::new(ctx);
    let every = trace_every(cfg.rounds, 10) as usize;
    for (i, (h, o)) in hedge_iter.iter().zip(&ogd_iter).enumerate() {
        if (i + 1) % every == 0 {
            let both: Vec<f64> = h.probs().iter().chain(o.probs()).cloned().collect();
            out.records.push(RunRecord::new(ctx, i as u64 + 1, digest(&both)));
        }
    }
    out.metric("n", n as f64);
    out.metric("hedge_mismatches", hedge_bad as f64);
    out.metric("ogd_mismatches", ogd_bad as f64);
    Ok(out)
}

fn dueling_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let total: f64 = runs
        .iter()
        .map(|r| r.get("hedge_mismatches") + r.get("ogd_mismatches"))
        .sum();
    outcome(total == 0.0, "mismatched rounds", "== 0", format!("{total} mismatched rounds over {} games", runs.len()))
}

// -------------------------------------------------------- practical loop

fn practical_cfg(cfg: &ResolvedConfig, seed: u64) -> PracticalConfig {
    let l = &cfg.learner;
    let mut p = PracticalConfig::new(cfg.rounds, seed);
    p.eta = l.eta.unwrap_or(p.eta);
    p.critic_rate = l.critic_rate.unwrap_or(p.critic_rate);
    p.queue_size = l.batch.unwrap_or(p.queue_size);
    p.exploration = l.exploration.unwrap_or(p.exploration);
    p.entropy = l.entropy.unwrap_or(p.entropy);
    p.action_noise = l.action_noise.unwrap_or(p.action_noise);
    p.checkpoints = l.checkpoints.unwrap_or(p.checkpoints);
    p
}

fn rm_cfg(cfg: &ResolvedConfig) -> RewardModelConfig {
    let mut rm = RewardModelConfig::default();
    rm.refit_every = cfg.learner.refit_every.unwrap_or(rm.refit_every);
    rm
}

fn practical<O: TrajectoryPreference + ?Sized>(
    cfg: &ResolvedConfig,
    ctx: &RunContext,
    mdp: &TabularMDP,
    oracle: &mut O,
) -> Result<PracticalRun> {
    let p = practical_cfg(cfg, ctx.seed);
    match cfg.algorithm {
        Rm => run_iterative_rm(mdp, oracle, &p, &rm_cfg(cfg)),
        _ => run_spo_practical(mdp, oracle, &p),
    }
}

/// One record per checkpoint; `fill` adds the scenario's metrics.
fn checkpoint_records<F>(ctx: &RunContext, run: &PracticalRun, mut fill: F) -> Result<Vec<RunRecord>>
where
    F: FnMut(&MarkovPolicy, &mut RunRecord) -> Result<()>,
{
    run.checkpoints
        .iter()
        .map(|c| {
            let mut r = RunRecord::new(ctx, c.round, digest(&c.policy.probs));
            fill(&c.policy, &mut r)?;
            Ok(r)
        })
        .collect()
}

fn builtin_mdp(cfg: &ResolvedConfig) -> Result<TabularMDP> {
    match builtin(cfg.env.as_deref().unwrap_or("chain"))? {
        Builtin::Mdp(m) => Ok(m),
        Builtin::NonMarkov { mdp, .. } => Ok(mdp),
        Builtin::PointNav(p) => p.mdp(),
    }
}

// ---------------------------------------------------------- subpopulation

fn subpop_base(algorithm: Algorithm) -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::Subpopulation {
            weights: [0.5, 0.3, 0.2],
        }),
        learner: LearnerSettings {
            eta: Some(0.003),
            critic_rate: Some(0.3),
            batch: Some(20),
            exploration: Some(0.1),
            ..LearnerSettings::default()
        },
        ..defaults(algorithm, 100_000, 10)
    }
}

fn subpop_spo_defaults() -> ScenarioDefaults {
    subpop_base(SpoPractical)
}

fn subpop_rm_defaults() -> ScenarioDefaults {
    subpop_base(Rm)
}

/// One state, one step: a trajectory is a single option.
fn bandit_mdp(n: usize) -> Result<TabularMDP> {
    TabularMDP::new(1, n, 1, vec![vec![vec![1.0]; n]], vec![1.0], None)
}

fn subpop_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let mw = exact_minimax_winner(&m)?.strategy;
    let mdp = bandit_mdp(m.n())?;
    let mut oracle = BanditMatrixPreference { matrix: m.clone() };
    let run = practical(cfg, ctx, &mdp, &mut oracle)?;
    let mut out = RunOutput::new(ctx);
    out.records = checkpoint_records(ctx, &run, |pol, r| {
        let p = MixedStrategy::new(pol.at(0, 0).to_vec())?;
        r.exploitability = Some(exploitability(&m, &p)?);
        r.l1_to_mw = Some(p.l1_distance(mw.probs()));
        Ok(())
    })?;
    if let Some(last) = out.records.last_mut() {
        last.queries = Some(run.training_queries + run.selection_queries);
    }
    // spo reports the running average; the baseline its late average
    let reported = match cfg.algorithm {
        Rm => &run.late_average_policy,
        _ => &run.average_policy,
    };
    let p = MixedStrategy::normalized(reported.at(0, 0).to_vec())?;
    out.metric("l1_to_mw", p.l1_distance(mw.probs()));
    out.metric("exploitability", exploitability(&m, &p)?);
    out.metric("mw_nonuniform", (mw.linf_distance(MixedStrategy::uniform(m.n()).probs()) > 1e-9) as u8 as f64);
    out.metric("queries", (run.training_queries + run.selection_queries) as f64);
    Ok(out)
}

fn subpop_verdict(cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let l1 = values(runs, "l1_to_mw");
    match cfg.algorithm {
        Rm => {
            if runs.iter().any(|r| r.get("mw_nonuniform") == 0.0) {
                return outcome(true, "l1_to_mw", "n/a", "uniform minimax winner: no corner requirement");
            }
            let lo = min_of(&l1);
            outcome(lo >= 0.2, "l1_to_mw", ">= 0.2 on every seed", format!("smallest {lo:.4}"))
        }
        _ => {
            let hi = max_of(&l1);
            outcome(hi <= 0.05, "l1_to_mw", "<= 0.05 on every seed", format!("largest {hi:.4}"))
        }
    }
}

// ------------------------------------------------------------------ DPO

const DPO_BETAS: [f64; 3] = [0.1, 1.0, 10.0];

fn dpo_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::Counterexample),
        ..defaults(DpoAnalysis, 0, 1)
    }
}

fn dpo_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let n = m.n();
    let rows = dpo_analysis(&m, &DPO_BETAS, 0.005)?;
    let mut out = RunOutput::new(ctx);
    out.table = Some(dpo_analysis_csv(&rows));
    let mw = exact_minimax_winner(&m)?.strategy;
    if cfg.matrix == Some(MatrixSpec::Counterexample) {
        out.metric("mw_linf_error", mw.linf_distance(&[5.0 / 12.0, 5.0 / 12.0, 1.0 / 6.0]));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let ref_err = rows
        .iter()
        .map(|r| (r.loss_reference - pairs * std::f64::consts::LN_2).abs())
        .fold(0.0, f64::max);
    out.metric("reference_loss_error", ref_err);
    out.metric(
        "min_loss_gap",
        min_of(&rows.iter().map(|r| r.loss_minimax_winner - r.loss_reference).collect::<Vec<_>>()),
    );
    out.metric(
        "max_argmin_l1_to_mw",
        max_of(&rows.iter().map(|r| r.argmin_l1_to_minimax_winner).collect::<Vec<_>>()),
    );
    if n == 3 {
        let mut equal = true;
        for beta in DPO_BETAS {
            let p = soft_opt_policy(&[0.0, 1.0, 0.0], &MixedStrategy::uniform(3), beta)?;
            equal &= p.probs()[0].to_bits() == p.probs()[2].to_bits();
        }
        out.metric("softopt_symmetric", equal as u8 as f64);
    }
    Ok(out)
}

fn dpo_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let r = &runs[0];
    let mw_ok = r.metrics.get("mw_linf_error").map_or(true, |&e| e <= 1e-8);
    let ref_ok = r.get("reference_loss_error") <= 1e-9;
    let gap_ok = r.get("min_loss_gap") > 0.0;
    let soft_ok = r.metrics.get("softopt_symmetric").map_or(true, |&v| v == 1.0);
    outcome(
        mw_ok && ref_ok && gap_ok && soft_ok,
        "mw_linf_error, reference_loss_error, min_loss_gap, softopt_symmetric",
        "<= 1e-8, <= 1e-9, > 0, == 1",
        format!(
            "mw {:e}, ref {:e}, gap {:.6}, soft-opt {}",
            r.metrics.get("mw_linf_error").copied().unwrap_or(f64::NAN),
            r.get("reference_loss_error"),
            r.get("min_loss_gap"),
            r.metrics.get("softopt_symmetric").copied().unwrap_or(f64::NAN)
        ),
    )
}

// --------------------------------------------------------- gap condition

fn gap_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::Gap { n: 6, delta: 0.4 }),
        learner: LearnerSettings {
            eta: Some(1.0),
            ..LearnerSettings::default()
        },
        ..defaults(SpoFull, 100_000, 1)
    }
}

/// Powers of ten from 1e3 up to `rounds`.
fn decades(rounds: u64) -> Vec<u64> {
    std::iter::successors(Some(1000u64), |t| t.checked_mul(10))
        .take_while(|&t| t <= rounds)
        .collect()
}

fn gap_delta(cfg: &ResolvedConfig) -> f64 {
    match cfg.matrix {
        Some(MatrixSpec::Gap { delta, .. }) => delta,
        _ => f64::NAN,
    }
}

fn gap_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let n = m.n();
    let sol = exact_minimax_winner(&m)?;
    let hedge = HedgeState::new(n, hedge_rate(cfg, n)?)?;
    let opts = RunOptions::new(cfg.rounds).trace_every(trace_every(cfg.rounds, 100).min(1000));
    let run = run_selfplay_fullfeedback(&m, hedge, opts)?;
    let mut out = RunOutput::new(ctx);
    out.records = selfplay_records(ctx, &m, &sol.strategy, &run)?;
    let delta = gap_delta(cfg);
    let winners: Vec<usize> = (0..n).filter(|&i| sol.strategy.probs()[i] > 0.5).collect();
    out.metric("gap_condition", satisfies_gap_condition(&m, &winners, delta) as u8 as f64);
    out.metric("n", n as f64);
    for t in decades(cfg.rounds) {
        let Some(r) = out.records.iter().find(|r| r.t == t) else { continue };
        let e = r.exploitability.unwrap_or(f64::NAN);
        let tf = t as f64;
        out.metrics.insert(format!("exploitability_t{t}"), e);
        out.metrics.insert(format!("t_scaled_t{t}"), tf * e);
        out.metrics.insert(format!("sqrt_scaled_t{t}"), tf.sqrt() * e);
        out.metrics
            .insert(format!("bound_t{t}"), 5.0 * (1.0 + 2.0 * n as f64 * tf.ln()) / (delta * tf));
    }
    Ok(out)
}

fn gap_verdict(cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let ds = decades(cfg.rounds);
    if ds.len() < 2 || !ds.contains(&10_000) {
        return outcome(false, "exploitability", "needs rounds >= 1e4", "too few rounds");
    }
    let mut notes = Vec::new();
    let mut ok = true;
    for r in runs {
        ok &= r.get("gap_condition") == 1.0;
        let e4 = r.get("exploitability_t10000");
        let b4 = r.get("bound_t10000");
        ok &= e4 <= b4;
        let scaled: Vec<f64> = ds.iter().map(|t| r.get(&format!("t_scaled_t{t}"))).collect();
        let bounds: Vec<f64> = ds.iter().map(|t| r.get(&format!("bound_t{t}")) * *t as f64).collect();
        ok &= scaled.iter().zip(&bounds).all(|(s, b)| s <= b);
        let root: Vec<f64> = ds.iter().map(|t| r.get(&format!("sqrt_scaled_t{t}"))).collect();
        ok &= root.windows(2).all(|w| w[1] < w[0]);
        ok &= root[root.len() - 1] <= 0.2 * root[0];
        notes.push(format!(
            "expl(1e4) {e4:.3e} vs bound {b4:.3e}; T*expl {scaled:.4?}; sqrt(T)*expl {root:.4?}"
        ));
    }
    outcome(ok, "exploitability", "fast-rate bound and signature", notes.join(" | "))
}

// ------------------------------------------------------------------ RPS

fn rps_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        matrix: Some(MatrixSpec::RockPaperScissors),
        ..defaults(SpoBandit, 1_000_000, 10)
    }
}

fn rps_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let m = matrix_for(cfg, &mut rng)?;
    let n = m.n();
    let mw = exact_minimax_winner(&m)?.strategy;
    let opts = RunOptions::new(cfg.rounds).trace_every(trace_every(cfg.rounds, 10));
    let run = match cfg.algorithm {
        SpoFull => run_selfplay_fullfeedback(&m, HedgeState::new(n, hedge_rate(cfg, n)?)?, opts)?,
        _ => {
            let mut b = BanditRunConfig::defaults(n, cfg.rounds, splitmix_seed(ctx.seed, 1));
            let l = &cfg.learner;
            if let Some(g) = l.gamma {
                b.feedback.gamma = g;
                b.eta = LearningRate::fixed(g / n as f64)?;
            }
            if let Some(eta) = l.eta {
                b.eta = LearningRate::fixed(eta)?;
            }
            b.feedback.alpha = l.alpha.unwrap_or(b.feedback.alpha);
            b.batch = l.batch.unwrap_or(b.batch);
            run_selfplay_bandit(&m, &b, opts)?
        }
    };
    let mut out = RunOutput::new(ctx);
    out.records = selfplay_records(ctx, &m, &mw, &run)?;
    out.metric("l1_to_mw", run.average.l1_distance(mw.probs()));
    out.metric("exploitability", exploitability(&m, &run.average)?);
    out.metric("queries", run.query_count as f64);
    Ok(out)
}

fn rps_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let v = values(runs, "l1_to_mw");
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    outcome(mean <= 0.1, "l1_to_mw", "mean <= 0.1", format!("mean {mean:.4} over {} seeds", v.len()))
}

// ------------------------------------------------------- reward splitting

fn split_defaults() -> ScenarioDefaults {
    defaults(RewardSplit, 0, 20)
}

/// Deterministic history policies are enumerated only up to this many.
const BRUTE_FORCE_LIMIT: u128 = 4096;

fn argmax_set(values: &[f64], tol: f64) -> Vec<usize> {
    let best = max_of(values);
    (0..values.len()).filter(|&i| values[i] >= best - tol).collect()
}

fn split_run(_cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mut rng = rng_for(ctx);
    let s = rng.gen_range(1..=4);
    let a = rng.gen_range(2..=3);
    let h = rng.gen_range(1..=4);
    let mdp = random_mdp(&mut rng, s, a, h)?;
    let n_leaf = mdp.check_enumerable()?;
    let leaf: Vec<f64> = (0..n_leaf).map(|_| rng.gen()).collect();
    // each step receives R / H; the episode return re-adds the pieces
    let split: Vec<f64> = leaf
        .iter()
        .enumerate()
        .map(|(code, &r)| {
            let t = mdp.decode_trajectory(code);
            Ok(split_trajectory_reward(&t, r)?.iter().sum())
        })
        .collect::<Result<_>>()?;
    let tol = 1e-9;
    let whole_sets = optimal_action_sets(&history_best_response(&mdp, &leaf)?, a, tol);
    let split_sets = optimal_action_sets(&history_best_response(&mdp, &split)?, a, tol);
    let mismatched: usize = whole_sets
        .iter()
        .zip(&split_sets)
        .map(|(x, y)| x.iter().zip(y).filter(|(p, q)| p != q).count())
        .sum();
    let histories: u128 = (0..h).map(|k| mdp.history_count(k)).sum();
    let policies = (a as u128).checked_pow(histories as u32).unwrap_or(u128::MAX);
    let mut out = RunOutput::new(ctx);
    let mut brute_mismatch = 0.0;
    if policies <= BRUTE_FORCE_LIMIT {
        let mut whole = Vec::with_capacity(policies as usize);
        let mut pieces = Vec::with_capacity(policies as usize);
        let offsets: Vec<usize> = (0..h)
            .scan(0usize, |acc, k| {
                let o = *acc;
                *acc += mdp.history_count(k) as usize;
                Some(o)
            })
            .collect();
        for code in 0..policies as usize {
            let pol = TabularHistoryPolicy::deterministic(&mdp, |hi| {
                (code / a.pow((offsets[hi.step] + hi.id) as u32)) % a
            })?;
            whole.push(history_policy_values(&mdp, &pol, &leaf)?.root);
            pieces.push(history_policy_values(&mdp, &pol, &split)?.root);
        }
        if argmax_set(&whole, tol) != argmax_set(&pieces, tol) {
            brute_mismatch = 1.0;
        }
        out.metric("brute_force_policies", policies as f64);
    } else {
        out.metric("brute_force_policies", 0.0);
    }
    let mut r = RunRecord::new(ctx, 0, digest(&leaf));
    r.ground_truth_return = Some(history_best_response(&mdp, &leaf)?.root);
    out.records.push(r);
    out.metric("states", s as f64);
    out.metric("actions", a as f64);
    out.metric("horizon", h as f64);
    out.metric("mismatched_histories", mismatched as f64);
    out.metric("brute_force_mismatch", brute_mismatch);
    Ok(out)
}

fn split_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let bad: f64 = runs
        .iter()
        .map(|r| r.get("mismatched_histories") + r.get("brute_force_mismatch"))
        .sum();
    let brute = runs.iter().filter(|r| r.get("brute_force_policies") > 0.0).count();
    outcome(
        bad == 0.0,
        "mismatched optimal sets",
        "== 0",
        format!("{bad} mismatches over {} MDPs ({brute} also brute-forced)", runs.len()),
    )
}

// -------------------------------------------------------------- tabular

fn tabular_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        env: Some("chain"),
        ..defaults(SpoTabular, 2000, 1)
    }
}

fn tabular_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mdp = builtin_mdp(cfg)?;
    let mut tc = TabularConfig::new(&mdp, cfg.rounds);
    if let Some(eta) = cfg.learner.eta {
        tc.eta = LearningRate::fixed(eta)?;
    }
    let mut oracle = cyclic_action_count_preference();
    let run = run_spo_tabular(&mdp, &mut oracle, &tc)?;
    let mut out = RunOutput::new(ctx);
    let mut r = RunRecord::new(ctx, cfg.rounds, digest(&run.average_distribution.dense(mdp.check_enumerable()?)));
    r.exploitability = Some(run.duality_gap);
    r.queries = Some(run.query_count);
    out.records.push(r);
    let bound = 8.0 * mdp.horizon() as f64 * ((mdp.n_actions() as f64).ln() / cfg.rounds as f64).sqrt();
    out.metric("duality_gap", run.duality_gap);
    out.metric("bound", bound);
    out.metric("max_self_reward", run.max_self_reward);
    Ok(out)
}

fn tabular_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let ok = runs.iter().all(|r| r.get("duality_gap") <= r.get("bound"));
    let r = &runs[0];
    outcome(
        ok,
        "duality_gap",
        format!("<= {:.4}", r.get("bound")),
        format!("gap {:.3e}", r.get("duality_gap")),
    )
}

// ------------------------------------------------------------- gridworld

fn grid_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        env: Some("gridworld"),
        learner: LearnerSettings {
            eta: Some(0.1),
            critic_rate: Some(0.5),
            batch: Some(10),
            exploration: Some(0.2),
            ..LearnerSettings::default()
        },
        ..defaults(SpoPractical, 10_000, 10)
    }
}

fn grid_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let mdp = builtin_mdp(cfg)?;
    let (opt, _) = markov_optimum(&mdp)?;
    let run = practical(cfg, ctx, &mdp, &mut MaxRewardPreference)?;
    let mut out = RunOutput::new(ctx);
    out.records = checkpoint_records(ctx, &run, |pol, r| {
        r.ground_truth_return = Some(expected_return(&mdp, pol)?);
        Ok(())
    })?;
    let sel = expected_return(&mdp, run.selected_policy())?;
    out.metric("selected_return", sel);
    out.metric("final_return", expected_return(&mdp, &run.final_policy)?);
    out.metric("optimal_return", opt);
    out.metric("return_ratio", sel / opt);
    Ok(out)
}

fn grid_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let lo = min_of(&values(runs, "return_ratio"));
    outcome(lo >= 0.95, "return_ratio", ">= 0.95 on every seed", format!("smallest {lo:.4}"))
}

// ------------------------------------------------------------ non-Markov

fn nonmarkov_base(algorithm: Algorithm) -> ScenarioDefaults {
    ScenarioDefaults {
        env: Some("nonmarkov-chain"),
        ..grid_defaults()
    }
    .with_algorithm(algorithm)
}

impl ScenarioDefaults {
    fn with_algorithm(mut self, algorithm: Algorithm) -> Self {
        self.algorithm = algorithm;
        self
    }
}

fn nonmarkov_spo_defaults() -> ScenarioDefaults {
    nonmarkov_base(SpoPractical)
}

fn nonmarkov_rm_defaults() -> ScenarioDefaults {
    nonmarkov_base(Rm)
}

const EVAL_ROLLOUTS: usize = 2000;

/// Best total return among stationary deterministic policies whose every
/// trajectory satisfies the tail constraint. Requires deterministic
/// dynamics.
pub fn best_feasible_stationary_return(mdp: &TabularMDP, spec: &NonMarkovSpec) -> Result<f64> {
    let (s_n, a_n) = (mdp.n_states(), mdp.n_actions());
    let count = (a_n as u128).checked_pow(s_n as u32).unwrap_or(u128::MAX);
    if count > 1_000_000 {
        return Err(SpoError::EnumerationTooLarge {
            needed: count,
            limit: 1_000_000,
        });
    }
    let point = |row: &[f64]| row.iter().position(|&p| p == 1.0);
    let start = point(mdp.initial())
        .ok_or_else(|| SpoError::InvalidInput("initial state must be deterministic".into()))?;
    let mut best = f64::NEG_INFINITY;
    for code in 0..count as usize {
        let choice: Vec<usize> = (0..s_n).map(|s| (code / a_n.pow(s as u32)) % a_n).collect();
        let mut s = start;
        let mut steps = Vec::with_capacity(mdp.horizon());
        for _ in 0..mdp.horizon() {
            let a = choice[s];
            steps.push((s, a));
            s = point(mdp.next_state_probs(s, a))
                .ok_or_else(|| SpoError::InvalidInput("dynamics must be deterministic".into()))?;
        }
        let t = mdp.make_trajectory(steps);
        if spec.is_feasible(&t)? {
            best = best.max(t.total_return()?);
        }
    }
    Ok(best)
}

fn nonmarkov_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let (mdp, spec) = match builtin(cfg.env.as_deref().unwrap_or("nonmarkov-chain"))? {
        Builtin::NonMarkov { mdp, spec } => (mdp, spec),
        _ => return Err(SpoError::Config("scenario needs a constrained environment".into())),
    };
    let myopic = best_feasible_stationary_return(&mdp, &spec)?;
    let run = practical(cfg, ctx, &mdp, &mut NonMarkovPreference(spec))?;
    let mut out = RunOutput::new(ctx);
    out.records = checkpoint_records(ctx, &run, |pol, r| {
        r.ground_truth_return = Some(expected_return(&mdp, pol)?);
        Ok(())
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix_seed(ctx.seed, 2));
    let (mut total, mut tail, mut feasible) = (0.0, 0.0, 0usize);
    for _ in 0..EVAL_ROLLOUTS {
        let t = rollout_with(&mdp, run.selected_policy(), &mut rng)?;
        total += t.total_return()?;
        tail += spec.tail_return(&t)?;
        feasible += spec.is_feasible(&t)? as usize;
    }
    let k = EVAL_ROLLOUTS as f64;
    let (total, tail, frac) = (total / k, tail / k, feasible as f64 / k);
    let success = tail <= spec.threshold_r_max && frac >= 0.95 && total > myopic;
    out.metric("total_return", total);
    out.metric("tail_return", tail);
    out.metric("feasible_fraction", frac);
    out.metric("myopic_return", myopic);
    out.metric("success", success as u8 as f64);
    Ok(out)
}

fn nonmarkov_verdict(cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let wins = values(runs, "success").iter().filter(|&&v| v == 1.0).count();
    let n = runs.len();
    match cfg.algorithm {
        Rm => {
            let fails = n - wins;
            let need = (7 * n).div_ceil(10);
            outcome(fails >= need, "failed seeds", format!(">= {need} of {n}"), format!("{fails} of {n} failed"))
        }
        _ => outcome(wins == n, "successful seeds", format!("{n} of {n}"), format!("{wins} of {n} succeeded")),
    }
}

// -------------------------------------------------------------- pointnav

fn pointnav_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        env: Some("pointnav"),
        learner: LearnerSettings {
            eta: Some(1.0),
            critic_rate: Some(0.5),
            batch: Some(100),
            exploration: Some(0.0),
            entropy: Some(0.002),
            action_noise: Some(0.05),
            ..LearnerSettings::default()
        },
        ..defaults(SpoPractical, 10_000, 10)
    }
}

/// Rollouts per late checkpoint, and the share of endpoints an octant needs
/// to count as covered.
const ENDPOINT_SAMPLES: usize = 20;
const OCTANT_SHARE: f64 = 0.05;

fn pointnav_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let env = match builtin(cfg.env.as_deref().unwrap_or("pointnav"))? {
        Builtin::PointNav(p) => p,
        _ => return Err(SpoError::Config("scenario needs the pointnav environment".into())),
    };
    let mdp = env.mdp()?;
    let run = practical(cfg, ctx, &mdp, &mut env.preference())?;
    let mut out = RunOutput::new(ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix_seed(ctx.seed, 2));
    let late = run.checkpoints.len() - run.checkpoints.len() / 4;
    let (mut radius, mut count, mut octants) = (0.0, 0usize, [0usize; 8]);
    for (i, c) in run.checkpoints.iter().enumerate() {
        let mut r = RunRecord::new(ctx, c.round, digest(&c.policy.probs));
        if i >= late {
            let mut sum = 0.0;
            for _ in 0..ENDPOINT_SAMPLES {
                let e = env.endpoint(&rollout_with(&mdp, &c.policy, &mut rng)?);
                sum += e.radius;
                octants[e.octant()] += 1;
            }
            radius += sum;
            count += ENDPOINT_SAMPLES;
            r.ground_truth_return = Some(sum / ENDPOINT_SAMPLES as f64);
        }
        out.records.push(r);
    }
    let covered = octants
        .iter()
        .filter(|&&k| k as f64 >= OCTANT_SHARE * count as f64)
        .count();
    out.metric("mean_radius", radius / count.max(1) as f64);
    out.metric("octants_covered", covered as f64);
    out.metric("dist_threshold", env.params.dist_threshold);
    Ok(out)
}

fn pointnav_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let ok = runs
        .iter()
        .all(|r| r.get("mean_radius") >= 0.8 * r.get("dist_threshold") && r.get("octants_covered") >= 6.0);
    outcome(
        ok,
        "mean_radius, octants_covered",
        ">= 0.8 threshold, >= 6 on every seed",
        format!(
            "radius min {:.3}, octants min {}",
            min_of(&values(runs, "mean_radius")),
            min_of(&values(runs, "octants_covered"))
        ),
    )
}

// ------------------------------------------------------------ contextual

fn contextual_defaults() -> ScenarioDefaults {
    ScenarioDefaults {
        learner: LearnerSettings {
            k: Some(4),
            ..LearnerSettings::default()
        },
        ..defaults(SpoContextual, 200_000, 5)
    }
}

fn contextual_env() -> Result<ContextualBandit> {
    let a = subpopulation_matrix(&SubpopulationSpec::new(0.5, 0.3, 0.2)?);
    let b = PreferenceMatrix::rock_paper_scissors();
    ContextualBandit::new(vec![a, b], MixedStrategy::new(vec![0.5, 0.5])?)
}

fn contextual_run(cfg: &ResolvedConfig, ctx: &RunContext) -> Result<RunOutput> {
    let env = contextual_env()?;
    let l = &cfg.learner;
    let mut cc = ContextualConfig::defaults(&env, cfg.rounds, l.k.unwrap_or(4), ctx.seed);
    if let Some(g) = l.gamma {
        cc.gamma = g;
    }
    if let Some(eta) = l.eta {
        cc.eta = LearningRate::fixed(eta)?;
    }
    let run = run_spo_contextual(&env, &cc)?;
    let mut out = RunOutput::new(ctx);
    let mut worst: f64 = 0.0;
    let mut all = Vec::new();
    for (x, game) in env.games.iter().enumerate() {
        let mw = exact_minimax_winner(game)?.strategy;
        let d = run.average_policies[x].l1_distance(mw.probs());
        worst = worst.max(d);
        out.metrics.insert(format!("l1_to_mw_context{x}"), d);
        all.extend_from_slice(run.average_policies[x].probs());
    }
    let mut r = RunRecord::new(ctx, cfg.rounds, digest(&all));
    r.l1_to_mw = Some(worst);
    r.queries = Some(run.query_count);
    out.records.push(r);
    out.metric("l1_to_mw", worst);
    Ok(out)
}

fn contextual_verdict(_cfg: &ResolvedConfig, runs: &[RunOutput]) -> CheckOutcome {
    let hi = max_of(&values(runs, "l1_to_mw"));
    outcome(hi <= 0.15, "l1_to_mw", "<= 0.15 on every seed", format!("largest {hi:.4}"))
}
