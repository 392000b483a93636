//! Monte Carlo protocol: burn-in, stationary window, seeded replications,
//! pooled statistics and regime labels, for single scenarios and for
//! `(B̄, σ_D)` phase grids.
//!
//! Every `(cell, replication)` pair draws from its own stream seeded by
//! [`derive_seed`], and results are folded in `(cell, replication)` order,
//! so the thread count never changes the output.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Engine, FieldModel, Params, DEFAULT_FIELD_NOISE_RATIO};
use crate::error::{Error, Result};
use crate::exposure::{ExposureConfig, ExposureProfile};
use crate::ingest::IoTable;
use crate::operators::{OperatorKind, PropagationOperator};
use crate::seeds::derive_seed;

pub const DEFAULT_T_BURN: usize = 50;
pub const DEFAULT_T_STAT: usize = 150;
pub const DEFAULT_SCENARIO_REPLICATIONS: usize = 100;
pub const DEFAULT_GRID_REPLICATIONS: usize = 50;
/// Avalanche-size thresholds reported as `Pr(S ≥ k)`.
pub const EXCEEDANCE_LEVELS: [usize; 3] = [5, 10, 20];

/// Precomputed operator and exposure profile shared by every replication.
#[derive(Debug, Clone)]
pub struct Substrate {
    pub operator: PropagationOperator,
    pub exposure: ExposureProfile,
}

impl Substrate {
    pub fn build(table: &IoTable, kind: OperatorKind, cfg: &ExposureConfig) -> Result<Self> {
        Ok(Substrate {
            operator: PropagationOperator::build(table, kind)?,
            exposure: ExposureProfile::compute(table, cfg, 0.0)?,
        })
    }

    pub fn n(&self) -> usize {
        self.operator.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub b_bar: f64,
    pub sigma_d: f64,
    #[serde(default = "default_t_burn")]
    pub t_burn: usize,
    #[serde(default = "default_t_stat")]
    pub t_stat: usize,
    #[serde(default = "default_scenario_reps")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// `σ_B / B̄`.
    #[serde(default = "default_noise_ratio")]
    pub field_noise_ratio: f64,
}

fn default_t_burn() -> usize {
    DEFAULT_T_BURN
}
fn default_t_stat() -> usize {
    DEFAULT_T_STAT
}
fn default_scenario_reps() -> usize {
    DEFAULT_SCENARIO_REPLICATIONS
}
fn default_noise_ratio() -> f64 {
    DEFAULT_FIELD_NOISE_RATIO
}

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, b_bar: f64, sigma_d: f64) -> Self {
        ScenarioSpec {
            name: name.into(),
            b_bar,
            sigma_d,
            t_burn: DEFAULT_T_BURN,
            t_stat: DEFAULT_T_STAT,
            replications: DEFAULT_SCENARIO_REPLICATIONS,
            master_seed: 0,
            field_noise_ratio: DEFAULT_FIELD_NOISE_RATIO,
        }
    }

    pub fn field(&self) -> FieldModel {
        FieldModel::with_noise_ratio(self.b_bar, self.field_noise_ratio)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_stat == 0 {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: t_stat must be >= 1",
                self.name
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: replications must be >= 1",
                self.name
            )));
        }
        if !(self.sigma_d > 0.0 && self.sigma_d.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: sigma_D must be positive, got {}",
                self.name, self.sigma_d
            )));
        }
        if !(self.field_noise_ratio >= 0.0 && self.field_noise_ratio.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scenario {}: field noise ratio must be >= 0",
                self.name
            )));
        }
        self.field().validate()
    }
}

/// Named `(B̄, σ_D)` presets for the four baseline regimes, in order.
pub fn preset_scenarios() -> Vec<ScenarioSpec> {
    PRESETS
        .iter()
        .map(|(name, b, s)| ScenarioSpec::new(*name, *b, *s))
        .collect()
}

pub const PRESETS: [(&str, f64, f64); 4] = [
    ("stable", 0.45, 0.7),
    ("latent", 0.70, 1.4),
    ("critical", 1.00, 1.8),
    ("avalanche", 1.35, 2.3),
];

pub fn preset(name: &str) -> Option<ScenarioSpec> {
    PRESETS
        .iter()
        .find(|(n, _, _)| *n == name)
        .map(|(n, b, s)| ScenarioSpec::new(*n, *b, *s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Absorption,
    LatentFragility,
    CriticalTransition,
    Avalanche,
}

impl RegimeLabel {
    pub const ALL: [RegimeLabel; 4] = [
        RegimeLabel::Absorption,
        RegimeLabel::LatentFragility,
        RegimeLabel::CriticalTransition,
        RegimeLabel::Avalanche,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::Absorption => "absorption",
            RegimeLabel::LatentFragility => "latent_fragility",
            RegimeLabel::CriticalTransition => "critical_transition",
            RegimeLabel::Avalanche => "avalanche",
        }
    }
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeLabel::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime {s:?}")))
    }
}

/// Lower edges of the latent, critical and avalanche mean-S bands. A value
/// exactly on an edge belongs to the higher regime.
pub const REGIME_EDGES: [f64; 3] = [0.30, 1.5, 5.0];

pub fn regime_for_mean(mean_s: f64) -> RegimeLabel {
    match REGIME_EDGES.iter().filter(|e| mean_s >= **e).count() {
        0 => RegimeLabel::Absorption,
        1 => RegimeLabel::LatentFragility,
        2 => RegimeLabel::CriticalTransition,
        _ => RegimeLabel::Avalanche,
    }
}

pub fn classify_regime(stats: &CellStats) -> RegimeLabel {
    regime_for_mean(stats.mean_s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellStats {
    pub mean_s: f64,
    /// Standard deviation of per-replication means over `√R`.
    pub se_mean_s: f64,
    pub pr_nonzero: f64,
    /// `Pr(S ≥ k)` for each k in [`EXCEEDANCE_LEVELS`].
    pub pr_ge: [f64; 3],
    pub p50: usize,
    pub p95: usize,
    pub p99: usize,
    pub max: usize,
    pub n_obs: usize,
    pub replications: usize,
    pub regime: RegimeLabel,
}

impl CellStats {
    /// Pools per-replication avalanche-size series.
    pub fn from_replications<S: AsRef<[usize]>>(series: &[S]) -> Result<Self> {
        let r = series.len();
        let n_obs: usize = series.iter().map(|s| s.as_ref().len()).sum();
        if r == 0 || n_obs == 0 {
            return Err(Error::InvalidArgument(
                "cell statistics need at least one observation".into(),
            ));
        }
        let mut pooled: Vec<usize> = series
            .iter()
            .flat_map(|s| s.as_ref().iter().copied())
            .collect();
        let total: f64 = pooled.iter().map(|&s| s as f64).sum();
        let mean_s = total / n_obs as f64;

        let rep_means: Vec<f64> = series
            .iter()
            .map(|s| {
                let s = s.as_ref();
                s.iter().map(|&v| v as f64).sum::<f64>() / s.len().max(1) as f64
            })
            .collect();
        let se_mean_s = if r > 1 {
            let m = rep_means.iter().sum::<f64>() / r as f64;
            let var = rep_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (r - 1) as f64;
            (var / r as f64).sqrt()
        } else {
            0.0
        };

        let freq = |k: usize| pooled.iter().filter(|&&s| s >= k).count() as f64 / n_obs as f64;
        let pr_nonzero = freq(1);
        let pr_ge = EXCEEDANCE_LEVELS.map(freq);

        pooled.sort_unstable();
        let pct = |p: f64| nearest_rank(&pooled, p);
        let mut stats = CellStats {
            mean_s,
            se_mean_s,
            pr_nonzero,
            pr_ge,
            p50: pct(50.0),
            p95: pct(95.0),
            p99: pct(99.0),
            max: *pooled.last().unwrap(),
            n_obs,
            replications: r,
            regime: RegimeLabel::Absorption,
        };
        stats.regime = classify_regime(&stats);
        Ok(stats)
    }

    pub fn pr_ge(&self, k: usize) -> Option<f64> {
        EXCEEDANCE_LEVELS
            .iter()
            .position(|&l| l == k)
            .map(|i| self.pr_ge[i])
    }
}

/// Nearest-rank percentile of an ascending, non-empty slice.
pub fn nearest_rank<T: Copy>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// One stationary period of a retained raw series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodRecord {
    pub replication: usize,
    pub period: u64,
    pub size: usize,
    pub b_realised: f64,
    pub relax_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the machine's parallelism.
    pub threads: Option<usize>,
    /// Keep the per-period stationary series.
    pub keep_series: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub spec: ScenarioSpec,
    pub stats: CellStats,
    /// Present when [`RunOptions::keep_series`] is set; ordered by
    /// replication then period.
    pub series: Option<Vec<PeriodRecord>>,
}

impl ScenarioOutcome {
    pub fn sizes(&self) -> Option<Vec<usize>> {
        self.series
            .as_ref()
            .map(|s| s.iter().map(|r| r.size).collect())
    }
}

/// Runs one replication and returns its stationary window.
pub fn run_replication(
    substrate: &Substrate,
    params: &Params,
    spec: &ScenarioSpec,
    seed: u64,
) -> Result<Vec<PeriodRecord>> {
    let field = spec.field();
    let mut engine = Engine::new(
        &substrate.operator,
        &substrate.exposure,
        params,
        spec.sigma_d,
        seed,
    )?;
    for _ in 0..spec.t_burn {
        engine.step(&field)?;
    }
    (0..spec.t_stat)
        .map(|_| {
            engine.step(&field).map(|rec| PeriodRecord {
                replication: 0,
                period: rec.period,
                size: rec.size,
                b_realised: rec.b_realised,
                relax_rounds: rec.relax_rounds,
            })
        })
        .collect()
}

/// Runs a single scenario with seeds drawn from cell index 0.
pub fn run_scenario(
    spec: &ScenarioSpec,
    substrate: &Substrate,
    params: &Params,
    opts: RunOptions,
) -> Result<ScenarioOutcome> {
    let mut out = run_cells(std::slice::from_ref(spec), substrate, params, opts)?;
    Ok(out.remove(0))
}

/// Runs several scenarios; scenario `k` draws its seeds from cell index
/// `k`, so the scenarios are seed-disjoint.
pub fn run_scenarios(
    specs: &[ScenarioSpec],
    substrate: &Substrate,
    params: &Params,
    opts: RunOptions,
) -> Result<Vec<ScenarioOutcome>> {
    run_cells(specs, substrate, params, opts)
}

fn run_cells(
    specs: &[ScenarioSpec],
    substrate: &Substrate,
    params: &Params,
    opts: RunOptions,
) -> Result<Vec<ScenarioOutcome>> {
    params.validate(substrate.n())?;
    for s in specs {
        s.validate()?;
    }
    let tasks: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(c, s)| (0..s.replications).map(move |r| (c, r)))
        .collect();

    let run = |&(c, r): &(usize, usize)| {
        let spec = &specs[c];
        let seed = derive_seed(spec.master_seed, c as u64, r as u64);
        run_replication(substrate, params, spec, seed).map_err(|e| Error::Replication {
            cell: c,
            replication: r,
            source: Box::new(e),
        })
    };
    let results: Vec<Result<Vec<PeriodRecord>>> =
        with_pool(opts.threads, || tasks.par_iter().map(run).collect())?;

    let mut results = results.into_iter();
    let mut outcomes = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut reps: Vec<Vec<PeriodRecord>> = Vec::with_capacity(spec.replications);
        for (r, res) in results.by_ref().take(spec.replications).enumerate() {
            let mut recs = res?;
            recs.iter_mut().for_each(|p| p.replication = r);
            reps.push(recs);
        }
        let sizes: Vec<Vec<usize>> = reps
            .iter()
            .map(|r| r.iter().map(|p| p.size).collect())
            .collect();
        let stats = CellStats::from_replications(&sizes)?;
        outcomes.push(ScenarioOutcome {
            spec: spec.clone(),
            stats,
            series: opts
                .keep_series
                .then(|| reps.into_iter().flatten().collect()),
        });
    }
    Ok(outcomes)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGridSpec {
    pub b_values: Vec<f64>,
    pub sigma_d_values: Vec<f64>,
    /// Per-cell protocol; `name`, `b_bar` and `sigma_d` are overwritten.
    pub template: ScenarioSpec,
}

impl PhaseGridSpec {
    /// 10 × 9 grid: `B̄` evenly spaced over `[0.25, 2.0]`, `σ_D` from 0.5 to
    /// 2.5 in steps of 0.25, 50 replications per cell.
    pub fn default_grid() -> Self {
        PhaseGridSpec {
            b_values: linspace(0.25, 2.0, 10),
            sigma_d_values: linspace(0.5, 2.5, 9),
            template: ScenarioSpec {
                replications: DEFAULT_GRID_REPLICATIONS,
                ..ScenarioSpec::new("cell", 0.0, 1.0)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("B_bar", &self.b_values), ("sigma_D", &self.sigma_d_values)] {
            if g.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} grid is empty")));
            }
            if g.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidArgument(format!(
                    "{name} grid must be strictly ascending"
                )));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.b_values.len() * self.sigma_d_values.len()
    }

    /// Cell specs in row-major order (`B̄` outer, `σ_D` inner).
    pub fn cells(&self) -> Vec<ScenarioSpec> {
        self.b_values
            .iter()
            .flat_map(|&b| {
                self.sigma_d_values.iter().map(move |&s| ScenarioSpec {
                    name: format!("B{b}_sD{s}"),
                    b_bar: b,
                    sigma_d: s,
                    ..self.template.clone()
                })
            })
            .collect()
    }
}

/// `k` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k)
            .map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub b_values: Vec<f64>,
    pub sigma_d_values: Vec<f64>,
    /// Row-major, `B̄` outer.
    pub cells: Vec<CellStats>,
}

impl PhaseGrid {
    pub fn get(&self, b_index: usize, sigma_index: usize) -> &CellStats {
        &self.cells[b_index * self.sigma_d_values.len() + sigma_index]
    }

    /// `(B̄, σ_D, stats)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (f64, f64, &CellStats)> {
        let ns = self.sigma_d_values.len();
        self.cells
            .iter()
            .enumerate()
            .map(move |(k, c)| (self.b_values[k / ns], self.sigma_d_values[k % ns], c))
    }
}

pub fn run_phase_grid(
    spec: &PhaseGridSpec,
    substrate: &Substrate,
    params: &Params,
    opts: RunOptions,
) -> Result<PhaseGrid> {
    spec.validate()?;
    let cells = run_cells(
        &spec.cells(),
        substrate,
        params,
        RunOptions {
            keep_series: false,
            ..opts
        },
    )?;
    Ok(PhaseGrid {
        b_values: spec.b_values.clone(),
        sigma_d_values: spec.sigma_d_values.clone(),
        cells: cells.into_iter().map(|o| o.stats).collect(),
    })
}

/// Bound on `se/mean` in active cells.
pub const ACTIVE_RELATIVE_SE_BOUND: f64 = 0.05;
/// Bound on the absolute SE of absorbing cells.
pub const ABSORBING_SE_BOUND: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub b_bar: f64,
    pub sigma_d: f64,
    pub mean_s: f64,
    pub se_mean_s: f64,
    /// `se/mean`; `None` when the mean is zero.
    pub relative_se: Option<f64>,
    /// `√(p(1−p)/n_obs)` for `Pr(S>0)` then each exceedance level.
    pub binomial_se: [f64; 4],
    pub regime: RegimeLabel,
    /// True when the cell breaks the SE bound for its regime.
    pub flagged: bool,
}

pub fn binomial_se(p: f64, n_obs: usize) -> f64 {
    if n_obs == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n_obs as f64).max(0.0).sqrt()
}

pub fn convergence_row(b_bar: f64, sigma_d: f64, stats: &CellStats) -> ConvergenceRow {
    let relative_se = (stats.mean_s > 0.0).then(|| stats.se_mean_s / stats.mean_s);
    let probs = [
        stats.pr_nonzero,
        stats.pr_ge[0],
        stats.pr_ge[1],
        stats.pr_ge[2],
    ];
    let flagged = match stats.regime {
        RegimeLabel::Absorption => stats.se_mean_s >= ABSORBING_SE_BOUND,
        _ => relative_se.is_some_and(|r| r >= ACTIVE_RELATIVE_SE_BOUND),
    };
    ConvergenceRow {
        b_bar,
        sigma_d,
        mean_s: stats.mean_s,
        se_mean_s: stats.se_mean_s,
        relative_se,
        binomial_se: probs.map(|p| binomial_se(p, stats.n_obs)),
        regime: stats.regime,
        flagged,
    }
}

pub fn convergence_report(grid: &PhaseGrid) -> Vec<ConvergenceRow> {
    grid.iter()
        .map(|(b, s, c)| convergence_row(b, s, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth_substrate;

    fn small_substrate(n: usize, seed: u64) -> Substrate {
        let t = synth_substrate(n, 0.3, seed).unwrap();
        Substrate::build(
            &t,
            OperatorKind::LeakageAdjusted,
            &ExposureConfig::default(),
        )
        .unwrap()
    }

    fn quick(name: &str, b: f64, s: f64, reps: usize) -> ScenarioSpec {
        ScenarioSpec {
            t_burn: 10,
            t_stat: 40,
            replications: reps,
            master_seed: 7,
            ..ScenarioSpec::new(name, b, s)
        }
    }

    #[test]
    fn regime_bands() {
        assert_eq!(regime_for_mean(0.084), RegimeLabel::Absorption);
        assert_eq!(regime_for_mean(2.036), RegimeLabel::CriticalTransition);
        assert_eq!(regime_for_mean(0.30), RegimeLabel::LatentFragility);
        assert_eq!(regime_for_mean(0.489), RegimeLabel::LatentFragility);
        assert_eq!(regime_for_mean(5.0), RegimeLabel::Avalanche);
        assert_eq!(regime_for_mean(0.0), RegimeLabel::Absorption);
        for r in RegimeLabel::ALL {
            assert_eq!(r.as_str().parse::<RegimeLabel>().unwrap(), r);
        }
    }

    #[test]
    fn stats_match_direct_recomputation() {
        let series = vec![
            vec![0, 3, 7, 0, 12],
            vec![1, 1, 25, 5, 0],
            vec![0, 0, 0, 9, 10],
        ];
        let st = CellStats::from_replications(&series).unwrap();
        let pooled: Vec<usize> = series.concat();
        let n = pooled.len() as f64;
        assert_eq!(st.n_obs, 15);
        assert!((st.mean_s - pooled.iter().sum::<usize>() as f64 / n).abs() < 1e-15);
        assert_eq!(st.pr_nonzero, 9.0 / 15.0);
        assert_eq!(st.pr_ge, [6.0 / 15.0, 3.0 / 15.0, 1.0 / 15.0]);
        // Means 4.4, 6.4, 3.8; sample sd of those over √3.
        let m = [4.4, 6.4, 3.8];
        let mu = (4.4 + 6.4 + 3.8) / 3.0;
        let sd = (m.iter().map(|x: &f64| (x - mu).powi(2)).sum::<f64>() / 2.0).sqrt();
        assert!((st.se_mean_s - sd / 3f64.sqrt()).abs() < 1e-12);
        let mut sorted = pooled.clone();
        sorted.sort();
        assert_eq!(st.p50, sorted[7]);
        assert_eq!(st.p95, sorted[14]);
        assert_eq!(st.max, 25);
    }

    #[test]
    fn single_replication_has_zero_se() {
        let st = CellStats::from_replications(&[vec![1, 2, 3]]).unwrap();
        assert_eq!(st.se_mean_s, 0.0);
        assert!(CellStats::from_replications::<Vec<usize>>(&[]).is_err());
    }

    #[test]
    fn nearest_rank_examples() {
        let v: Vec<usize> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 50.0), 50);
        assert_eq!(nearest_rank(&v, 95.0), 95);
        assert_eq!(nearest_rank(&v, 0.0), 1);
        assert_eq!(nearest_rank(&[4], 99.0), 4);
    }

    #[test]
    fn dead_system_scenario() {
        let sub = small_substrate(8, 2);
        let params = Params {
            alpha: 0.0,
            ..Params::default()
        };
        let out = run_scenario(
            &quick("dead", 0.0, 1.0, 4),
            &sub,
            &params,
            RunOptions::default(),
        )
        .unwrap();
        let s = &out.stats;
        assert_eq!(
            (s.mean_s, s.pr_nonzero, s.pr_ge, s.max),
            (0.0, 0.0, [0.0; 3], 0)
        );
        assert_eq!(s.n_obs, 160);
        assert_eq!(s.regime, RegimeLabel::Absorption);
    }

    #[test]
    fn scenario_is_deterministic_across_thread_counts() {
        let sub = small_substrate(12, 3);
        let params = Params::default();
        let spec = quick("x", 1.2, 2.0, 6);
        let keep = |threads| RunOptions {
            threads,
            keep_series: true,
        };
        let a = run_scenario(&spec, &sub, &params, keep(Some(1))).unwrap();
        let b = run_scenario(&spec, &sub, &params, keep(Some(4))).unwrap();
        let c = run_scenario(&spec, &sub, &params, keep(None)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.series.as_ref().unwrap().len(), 6 * 40);
        let sizes = a.sizes().unwrap();
        let per_rep: Vec<Vec<usize>> = sizes.chunks(40).map(|c| c.to_vec()).collect();
        assert_eq!(CellStats::from_replications(&per_rep).unwrap(), a.stats);
    }

    #[test]
    fn single_cell_grid_matches_scenario() {
        let sub = small_substrate(10, 5);
        let params = Params::default();
        let spec = quick("one", 0.9, 1.6, 3);
        let grid = PhaseGridSpec {
            b_values: vec![0.9],
            sigma_d_values: vec![1.6],
            template: spec.clone(),
        };
        let g = run_phase_grid(&grid, &sub, &params, RunOptions::default()).unwrap();
        let s = run_scenario(&spec, &sub, &params, RunOptions::default()).unwrap();
        assert_eq!(g.cells, vec![s.stats]);
    }

    #[test]
    fn grid_layout_and_validation() {
        let g = PhaseGridSpec::default_grid();
        assert_eq!(g.n_cells(), 90);
        assert_eq!(g.b_values.first(), Some(&0.25));
        assert!((g.b_values[9] - 2.0).abs() < 1e-15);
        assert!((g.sigma_d_values[8] - 2.5).abs() < 1e-15);
        assert!(g.validate().is_ok());
        let cells = g.cells();
        assert_eq!(
            (cells[10].b_bar, cells[10].sigma_d),
            (g.b_values[1], g.sigma_d_values[1])
        );
        let bad = PhaseGridSpec {
            b_values: vec![1.0, 1.0],
            ..g.clone()
        };
        assert!(bad.validate().is_err());
        let empty = PhaseGridSpec {
            sigma_d_values: vec![],
            ..g
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn replication_errors_carry_context() {
        let sub = small_substrate(10, 5);
        let params = Params {
            redistribution_fraction: 1.0,
            beta: 5.0,
            max_relax_rounds: Some(1),
            ..Params::default()
        };
        let err = run_scenario(
            &quick("hot", 2.0, 2.5, 2),
            &sub,
            &params,
            RunOptions::default(),
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                Error::Replication {
                    cell: 0,
                    replication: 0,
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.is_runtime());
    }

    #[test]
    fn convergence_examples() {
        let zero = CellStats::from_replications(&[vec![0, 0], vec![0, 0]]).unwrap();
        let row = convergence_row(0.25, 0.5, &zero);
        assert_eq!(row.relative_se, None);
        assert_eq!(row.binomial_se, [0.0; 4]);
        assert!(!row.flagged);

        let series = vec![vec![0, 1, 6, 0], vec![2, 0, 0, 11]];
        let st = CellStats::from_replications(&series).unwrap();
        let row = convergence_row(1.0, 1.0, &st);
        let pooled = series.concat();
        let p5 = pooled.iter().filter(|&&s| s >= 5).count() as f64 / 8.0;
        assert!((row.binomial_se[1] - (p5 * (1.0 - p5) / 8.0).sqrt()).abs() < 1e-15);
        assert!((row.relative_se.unwrap() - st.se_mean_s / st.mean_s).abs() < 1e-15);
    }

    #[test]
    fn presets_in_order() {
        let p = preset_scenarios();
        assert_eq!(p.len(), 4);
        assert!(p
            .windows(2)
            .all(|w| w[0].b_bar < w[1].b_bar && w[0].sigma_d < w[1].sigma_d));
        assert_eq!(preset("critical").unwrap().b_bar, 1.00);
        assert!(preset("unknown").is_none());
    }
}
