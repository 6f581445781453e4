//! Experiment orchestration: configs, per-seed runs on a bounded worker pool,
//! CSV records and JSON summaries.

mod scenarios;

pub use scenarios::{
    best_feasible_stationary_return, find_scenario, registry, Scenario, ScenarioDefaults,
};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoError};
use crate::pref::{
    gap_condition_matrix, subpopulation_matrix, PreferenceMatrix, SubpopulationSpec,
};
use crate::sampling::splitmix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    SpoFull,
    SpoBandit,
    SpoTabular,
    SpoPractical,
    SpoContextual,
    Rm,
    DpoAnalysis,
    /// Exact LP solve, no learning.
    ExactMw,
    /// Optimal-action comparison under split and unsplit trajectory rewards.
    RewardSplit,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SpoFull => "spo-full",
            Self::SpoBandit => "spo-bandit",
            Self::SpoTabular => "spo-tabular",
            Self::SpoPractical => "spo-practical",
            Self::SpoContextual => "spo-contextual",
            Self::Rm => "rm",
            Self::DpoAnalysis => "dpo-analysis",
            Self::ExactMw => "exact-mw",
            Self::RewardSplit => "reward-split",
        }
    }
}

/// Preference matrix named in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixSpec {
    RockPaperScissors,
    Subpopulation { weights: [f64; 3] },
    Counterexample,
    Gap { n: usize, delta: f64 },
    /// Fresh uniform instance per run, size drawn from `min_n..=max_n`.
    Random { min_n: usize, max_n: usize },
    Explicit { rows: Vec<Vec<f64>> },
}

impl MatrixSpec {
    /// Fixed matrix; `None` for per-run random instances.
    pub fn fixed(&self) -> Result<Option<PreferenceMatrix>> {
        Ok(Some(match self {
            Self::RockPaperScissors => PreferenceMatrix::rock_paper_scissors(),
            Self::Subpopulation { weights } => {
                subpopulation_matrix(&SubpopulationSpec::new(weights[0], weights[1], weights[2])?)
            }
            Self::Counterexample => crate::baselines::counterexample_matrix(),
            Self::Gap { n, delta } => gap_condition_matrix(*n, *delta)?,
            Self::Random { .. } => return Ok(None),
            Self::Explicit { rows } => PreferenceMatrix::from_rows(rows.clone())?,
        }))
    }
}

/// Learner knobs; unset values fall back to the scenario's defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    pub eta: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    /// Minibatch size (bandit) or trajectory-queue size (practical loop).
    pub batch: Option<usize>,
    /// Samples per round for the contextual learner.
    pub k: Option<usize>,
    pub critic_rate: Option<f64>,
    pub exploration: Option<f64>,
    pub entropy: Option<f64>,
    pub action_noise: Option<f64>,
    pub checkpoints: Option<usize>,
    pub refit_every: Option<u64>,
}

impl LearnerSettings {
    /// Fields set in `self` win over `base`.
    pub fn over(self, base: LearnerSettings) -> LearnerSettings {
        LearnerSettings {
            eta: self.eta.or(base.eta),
            gamma: self.gamma.or(base.gamma),
            alpha: self.alpha.or(base.alpha),
            batch: self.batch.or(base.batch),
            k: self.k.or(base.k),
            critic_rate: self.critic_rate.or(base.critic_rate),
            exploration: self.exploration.or(base.exploration),
            entropy: self.entropy.or(base.entropy),
            action_noise: self.action_noise.or(base.action_noise),
            checkpoints: self.checkpoints.or(base.checkpoints),
            refit_every: self.refit_every.or(base.refit_every),
        }
    }
}

/// One experiment as written in a TOML file. Everything except `scenario`
/// is optional and defaults per scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub env: Option<String>,
    pub matrix: Option<MatrixSpec>,
    pub algorithm: Option<Algorithm>,
    pub rounds: Option<u64>,
    /// Run labels; run `i` uses seed `splitmix(master_seed, seeds[i])`.
    pub seeds: Option<Vec<u64>>,
    pub master_seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    /// Fill the wall-time column (breaks byte-reproducibility).
    pub record_wall_time: Option<bool>,
    #[serde(default)]
    pub learner: LearnerSettings,
}

impl ExperimentConfig {
    pub fn for_scenario(id: &str) -> Self {
        Self {
            scenario: id.to_string(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SpoError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Merge with the scenario's defaults and validate.
    pub fn resolved(&self) -> Result<ResolvedConfig> {
        let sc = find_scenario(&self.scenario)?;
        let d = (sc.defaults)();
        let algorithm = self.algorithm.unwrap_or(d.algorithm);
        if !sc.algorithms.contains(&algorithm) {
            return Err(SpoError::Config(format!(
                "scenario '{}' does not run algorithm '{}'",
                sc.id,
                algorithm.as_str()
            )));
        }
        let seeds = self.seeds.clone().unwrap_or(d.seeds);
        if seeds.is_empty() {
            return Err(SpoError::Config("seeds must be nonempty".into()));
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(SpoError::Config("duplicate seed labels".into()));
        }
        let rounds = self.rounds.unwrap_or(d.rounds);
        if rounds == 0 && d.rounds > 0 {
            return Err(SpoError::Config("rounds must be positive".into()));
        }
        if let Some(env) = &self.env {
            if d.env.is_none() {
                return Err(SpoError::Config(format!("scenario '{}' takes no environment", sc.id)));
            }
            crate::envs::builtin(env)?;
        }
        let matrix = match (&self.matrix, d.matrix) {
            (Some(_), None) => {
                return Err(SpoError::Config(format!("scenario '{}' takes no matrix", sc.id)))
            }
            (m, dm) => m.clone().or(dm),
        };
        if let Some(m) = &matrix {
            m.fixed()?;
        }
        let jobs = self.jobs.unwrap_or_else(default_jobs);
        if jobs == 0 {
            return Err(SpoError::Config("jobs must be positive".into()));
        }
        Ok(ResolvedConfig {
            scenario: sc.id.to_string(),
            env: self.env.clone().or(d.env.map(str::to_string)),
            matrix,
            algorithm,
            rounds,
            seeds,
            master_seed: self.master_seed.unwrap_or(0),
            output: self
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(sc.id)),
            jobs,
            record_wall_time: self.record_wall_time.unwrap_or(false),
            learner: self.learner.over(d.learner),
        })
    }
}

/// `SPO_LAB_JOBS` if set and valid, else the available parallelism.
pub fn default_jobs() -> usize {
    std::env::var("SPO_LAB_JOBS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&j: &usize| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub scenario: String,
    pub env: Option<String>,
    pub matrix: Option<MatrixSpec>,
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub output: PathBuf,
    pub jobs: usize,
    pub record_wall_time: bool,
    pub learner: LearnerSettings,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub index: usize,
    pub label: u64,
    pub seed: u64,
    pub run_id: String,
}

/// One CSV row. Optional metrics print as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub t: u64,
    pub digest: String,
    pub exploitability: Option<f64>,
    pub l1_to_mw: Option<f64>,
    pub regret: Option<f64>,
    pub ground_truth_return: Option<f64>,
    pub queries: Option<u64>,
    pub wall_time: Option<f64>,
}

impl RunRecord {
    pub fn new(ctx: &RunContext, t: u64, digest: String) -> Self {
        Self {
            run_id: ctx.run_id.clone(),
            seed: ctx.seed,
            t,
            digest,
            exploitability: None,
            l1_to_mw: None,
            regret: None,
            ground_truth_return: None,
            queries: None,
            wall_time: None,
        }
    }
}

pub const CSV_HEADER: &str =
    "run_id,seed,t,digest,exploitability,l1_to_mw,regret,ground_truth_return,queries,wall_time";

fn float_cell(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.16e}")).unwrap_or_default()
}

pub fn records_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.seed,
            r.t,
            r.digest,
            float_cell(r.exploitability),
            float_cell(r.l1_to_mw),
            float_cell(r.regret),
            float_cell(r.ground_truth_return),
            r.queries.map(|q| q.to_string()).unwrap_or_default(),
            float_cell(r.wall_time),
        );
    }
    out
}

/// FNV-1a over the IEEE bits of a probability vector.
pub fn digest(values: &[f64]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// What one seed produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub run_id: String,
    pub seed: u64,
    pub records: Vec<RunRecord>,
    /// Terminal metrics aggregated across seeds.
    pub metrics: BTreeMap<String, f64>,
    /// Replaces the record CSV for analysis-only scenarios.
    pub table: Option<String>,
}

impl RunOutput {
    pub fn new(ctx: &RunContext) -> Self {
        Self {
            run_id: ctx.run_id.clone(),
            seed: ctx.seed,
            records: Vec::new(),
            metrics: BTreeMap::new(),
            table: None,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn csv(&self) -> String {
        match &self.table {
            Some(t) => t.clone(),
            None => records_csv(&self.records),
        }
    }

    fn check_monotone(&self) -> Result<()> {
        if self.records.windows(2).any(|w| w[0].t >= w[1].t) {
            return Err(SpoError::Internal(format!(
                "{}: record iterations not strictly increasing",
                self.run_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for a single run.
    pub stderr: f64,
    pub n: usize,
}

pub fn mean_stderr(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            stderr: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    MetricSummary { mean, stderr, n }
}

/// Mean and standard error of every terminal metric across runs.
pub fn summarize(runs: &[RunOutput]) -> BTreeMap<String, MetricSummary> {
    let mut by_name: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for (k, &v) in &r.metrics {
            by_name.entry(k.clone()).or_default().push(v);
        }
    }
    by_name.into_iter().map(|(k, v)| (k, mean_stderr(&v))).collect()
}

/// Acceptance verdict of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub metric: String,
    pub threshold: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub rounds: u64,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub runs: Vec<String>,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub check: CheckOutcome,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ResolvedConfig,
    pub runs: Vec<RunOutput>,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

fn contexts(cfg: &ResolvedConfig) -> Vec<RunContext> {
    cfg.seeds
        .iter()
        .enumerate()
        .map(|(index, &label)| RunContext {
            index,
            label,
            seed: splitmix_seed(cfg.master_seed, label),
            run_id: format!("{}-{:04}", cfg.scenario, label),
        })
        .collect()
}

/// Run every seed on a pool of `cfg.jobs` workers, optionally writing each
/// run's CSV from its worker as soon as it finishes.
fn execute(cfg: &ResolvedConfig, out_dir: Option<&Path>) -> Result<Vec<RunOutput>> {
    let sc = find_scenario(&cfg.scenario)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| SpoError::Internal(e.to_string()))?;
    let ctxs = contexts(cfg);
    pool.install(|| {
        ctxs.par_iter()
            .map(|ctx| {
                let wrap = |e: SpoError| SpoError::Run {
                    run_id: ctx.run_id.clone(),
                    source: Box::new(e),
                };
                let start = std::time::Instant::now();
                let mut out = (sc.run)(cfg, ctx).map_err(wrap)?;
                if cfg.record_wall_time {
                    let secs = start.elapsed().as_secs_f64();
                    if let Some(last) = out.records.last_mut() {
                        last.wall_time = Some(secs);
                    }
                }
                out.check_monotone()?;
                if let Some(dir) = out_dir {
                    std::fs::write(dir.join(format!("{}.csv", out.run_id)), out.csv())
                        .map_err(|e| wrap(e.into()))?;
                }
                Ok(out)
            })
            .collect()
    })
}

/// Runs and verdict without touching the filesystem.
pub fn run_in_memory(cfg: &ResolvedConfig) -> Result<(Vec<RunOutput>, Summary)> {
    let runs = execute(cfg, None)?;
    let summary = build_summary(cfg, &runs)?;
    Ok((runs, summary))
}

fn build_summary(cfg: &ResolvedConfig, runs: &[RunOutput]) -> Result<Summary> {
    let sc = find_scenario(&cfg.scenario)?;
    Ok(Summary {
        scenario: cfg.scenario.clone(),
        algorithm: cfg.algorithm,
        rounds: cfg.rounds,
        master_seed: cfg.master_seed,
        seeds: cfg.seeds.clone(),
        runs: runs.iter().map(|r| r.run_id.clone()).collect(),
        metrics: summarize(runs),
        check: (sc.verdict)(cfg, runs),
    })
}

/// Validate, run one task per seed, write `<run_id>.csv` files and
/// `summary.json` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let resolved = cfg.resolved()?;
    std::fs::create_dir_all(&resolved.output)?;
    let runs = execute(&resolved, Some(&resolved.output))?;
    let summary = build_summary(&resolved, &runs)?;
    let mut files: Vec<PathBuf> = runs
        .iter()
        .map(|r| resolved.output.join(format!("{}.csv", r.run_id)))
        .collect();
    let path = resolved.output.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    files.push(path);
    Ok(ExperimentResult {
        config: resolved,
        runs,
        summary,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_has_zero_stderr() {
        let s = mean_stderr(&[0.7]);
        assert_eq!((s.mean, s.stderr, s.n), (0.7, 0.0, 1));
        assert_eq!(mean_stderr(&[2.5; 6]).stderr, 0.0);
    }

    #[test]
    fn stderr_matches_closed_form() {
        // mean 5, sample variance 32/7
        let v = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        let s = mean_stderr(&v);
        assert_eq!(s.mean, 5.0);
        assert!((s.stderr - (32.0 / 7.0 / 8.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_uses_seventeen_significant_digits() {
        let ctx = RunContext {
            index: 0,
            label: 3,
            seed: 42,
            run_id: "x-0003".into(),
        };
        let mut r = RunRecord::new(&ctx, 5, digest(&[0.5, 0.5]));
        r.exploitability = Some(0.1);
        r.queries = Some(9);
        let csv = records_csv(&[r]);
        let line = csv.lines().nth(1).unwrap();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 10);
        assert_eq!(cells[4], "1.0000000000000001e-1");
        assert_eq!(cells[4].parse::<f64>().unwrap(), 0.1);
        assert_eq!(cells[5], "");
        assert_eq!(cells[8], "9");
    }

    #[test]
    fn digest_separates_nearby_vectors() {
        assert_ne!(digest(&[0.5, 0.5]), digest(&[0.5, 0.5000000000000001]));
        assert_eq!(digest(&[]), "cbf29ce484222325");
    }

    #[test]
    fn config_parses_and_merges_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            scenario = "rps-selfplay"
            rounds = 1000
            seeds = [0, 1]
            [learner]
            gamma = 0.2
            "#,
        )
        .unwrap();
        let r = cfg.resolved().unwrap();
        assert_eq!(r.scenario, "rps-bandit");
        assert_eq!(r.algorithm, Algorithm::SpoBandit);
        assert_eq!(r.rounds, 1000);
        assert_eq!(r.learner.gamma, Some(0.2));
        assert!(ExperimentConfig::from_toml("scenario = \"x\"\nbogus = 1").is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ExperimentConfig::for_scenario("nope");
        assert!(cfg.resolved().is_err());
        cfg.scenario = "gap-condition".into();
        cfg.seeds = Some(vec![]);
        assert!(cfg.resolved().is_err());
        cfg.seeds = Some(vec![1, 1]);
        assert!(cfg.resolved().is_err());
        cfg.seeds = None;
        cfg.algorithm = Some(Algorithm::Rm);
        assert!(cfg.resolved().is_err());
    }

    #[test]
    fn matrix_specs_parse() {
        let m: MatrixSpec = toml::from_str("kind = \"subpopulation\"\nweights = [0.5, 0.3, 0.2]").unwrap();
        assert_eq!(m.fixed().unwrap().unwrap().entry(0, 1), 0.5 - 0.3);
        let g: MatrixSpec = toml::from_str("kind = \"gap\"\nn = 6\ndelta = 0.4").unwrap();
        assert_eq!(g.fixed().unwrap().unwrap().n(), 6);
        let r: MatrixSpec = toml::from_str("kind = \"random\"\nmin_n = 2\nmax_n = 8").unwrap();
        assert!(r.fixed().unwrap().is_none());
    }
}
