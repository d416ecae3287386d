//! Seed sweeps over (instance, learner, H, N) with exact gap measurement.

pub mod events;
pub mod stats;

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::sample_dataset;
use crate::error::{config, Error, Result};
use crate::instances::{
    make_bc_lb, make_fan, make_mixture_sampler, make_mm_lb, make_two_state_uniform, Instance,
    MixtureParams, ResetKind,
};
use crate::learners::{bc_train, mm_train, re_train, ReConfig, ReplayMode};
use crate::mdp::imitation_gap;
use crate::rng::derive_seed;

pub use events::{
    conditional_gap_check, event_probe, ConditionalReport, DatasetEvents, EventCondition,
    EventFrequencies,
};
pub use stats::{aggregate, fit_slope, FitOptions, PointSummary, RowFilter, SlopeFit, XAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    MmLb,
    BcLb,
    TwoState,
    Fan,
    Mixture,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::MmLb => "mm-lb",
            Family::BcLb => "bc-lb",
            Family::TwoState => "two-state",
            Family::Fan => "fan",
            Family::Mixture => "mixture",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| config(format!("unknown instance family '{s}'")))
    }
}

/// Family-specific parameters; unused fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceParams {
    /// Total states of bc-lb (including the bad state).
    pub states: usize,
    pub actions: usize,
    /// bc-lb reset distribution. Defaults to [`ResetKind::Rare`], whose
    /// missing mass decays like `1/N`.
    pub reset: Option<ResetKind>,
    /// Top-row size of the fan.
    pub fan_n: usize,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self {
            states: 20,
            actions: 2,
            reset: None,
            fan_n: 4,
        }
    }
}

impl InstanceParams {
    pub fn bc_reset(&self) -> ResetKind {
        self.reset.clone().unwrap_or(ResetKind::Rare)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub family: Family,
    #[serde(default)]
    pub params: InstanceParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerId {
    Bc,
    Mm,
    Re,
}

impl LearnerId {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerId::Bc => "bc",
            LearnerId::Mm => "mm",
            LearnerId::Re => "re",
        }
    }
}

impl std::str::FromStr for LearnerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(LearnerId::Bc),
            "mm" => Ok(LearnerId::Mm),
            "re" => Ok(LearnerId::Re),
            _ => Err(config(format!(
                "unknown learner '{s}' (expected bc, mm or re)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub id: LearnerId,
    /// Replay estimation settings (ignored by bc and mm). The split and
    /// Monte Carlo seeds are combined with each run's seed.
    #[serde(default)]
    pub params: ReConfig,
}

impl LearnerSpec {
    pub fn new(id: LearnerId) -> Self {
        Self {
            id,
            params: ReConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Learners {
    One(LearnerSpec),
    Many(Vec<LearnerSpec>),
}

impl Learners {
    pub fn as_slice(&self) -> &[LearnerSpec] {
        match self {
            Learners::One(l) => std::slice::from_ref(l),
            Learners::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(rename = "H")]
    pub horizon: Vec<usize>,
    pub n_exp: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub count: usize,
    pub base: u64,
}

/// Experiment description; see the README for the JSON layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub learner: Learners,
    pub grid: Grid,
    pub seeds: Seeds,
    #[serde(default)]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.horizon.is_empty() || self.grid.n_exp.is_empty() {
            return Err(config("grid needs at least one H and one n_exp"));
        }
        if self.seeds.count == 0 {
            return Err(config("seed count must be at least 1"));
        }
        if self.learner.as_slice().is_empty() {
            return Err(config("at least one learner is required"));
        }
        if self.grid.n_exp.contains(&0) || self.grid.horizon.contains(&0) {
            return Err(config("grid values must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid cells in row order: `H` outer, `n_exp` inner.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.grid
            .horizon
            .iter()
            .flat_map(|&h| self.grid.n_exp.iter().map(move |&n| (h, n)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    SolverFailure,
    Error,
}

/// One (cell, seed, learner) outcome. `gap` is exact and NaN on failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instance: String,
    pub learner: String,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    pub n_exp: usize,
    pub seed: u64,
    pub gap: f64,
    pub status: RunStatus,
    pub component: String,
    pub wall_time_ms: f64,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Seed of run `seed_index` in grid cell `cell_index`.
pub fn run_seed(base: u64, cell_index: usize, seed_index: usize) -> u64 {
    derive_seed(base, &[cell_index as u64, seed_index as u64])
}

/// The instance of one run, with the mixture component when applicable.
pub fn build_instance(
    spec: &InstanceSpec,
    horizon: usize,
    n_exp: usize,
    seed: u64,
) -> Result<(Instance, String)> {
    let p = &spec.params;
    let instance_seed = derive_seed(seed, &[1]);
    Ok(match spec.family {
        Family::MmLb => (make_mm_lb(horizon, n_exp)?, String::new()),
        Family::BcLb => {
            let reset = p.bc_reset().resolve(p.states - 1, n_exp)?;
            (
                make_bc_lb(p.states, horizon, p.actions, reset, instance_seed)?,
                String::new(),
            )
        }
        Family::TwoState => (make_two_state_uniform(horizon)?, String::new()),
        Family::Fan => (make_fan(p.fan_n, horizon)?, String::new()),
        Family::Mixture => {
            let params = MixtureParams {
                horizon,
                n_exp,
                bc_states: p.states,
                bc_actions: p.actions,
                bc_reset: p.bc_reset(),
            };
            let draw = make_mixture_sampler(seed, params).draw_with(0, instance_seed)?;
            (draw.instance, draw.component.as_str().to_string())
        }
    })
}

/// RE settings for one run: split and replay seeds are keyed by the run.
pub fn run_re_config(base: &ReConfig, seed: u64) -> ReConfig {
    let mut cfg = base.clone();
    cfg.split.split_seed = derive_seed(base.split.split_seed, &[seed, 3]);
    if let ReplayMode::MonteCarlo { n_replay, seed: s } = base.replay {
        cfg.replay = ReplayMode::MonteCarlo {
            n_replay,
            seed: derive_seed(s, &[seed, 4]),
        };
    }
    cfg
}

fn train_gap(
    learner: &LearnerSpec,
    instance: &Instance,
    dataset: &crate::dataset::Dataset,
    seed: u64,
) -> Result<f64> {
    let mdp = &instance.mdp;
    let policy = match learner.id {
        LearnerId::Bc => bc_train(
            dataset,
            mdp.num_states(),
            mdp.num_actions(),
            mdp.horizon(),
            learner.params.tie_rule,
        )?,
        LearnerId::Mm => mm_train(dataset, mdp)?,
        LearnerId::Re => re_train(dataset, mdp, &run_re_config(&learner.params, seed))?,
    };
    imitation_gap(mdp, &instance.expert, &policy)
}

fn run_one(
    cfg: &ExperimentConfig,
    cell_index: usize,
    horizon: usize,
    n_exp: usize,
    seed_index: usize,
) -> Vec<ResultRow> {
    let seed = run_seed(cfg.seeds.base, cell_index, seed_index);
    let learners = cfg.learner.as_slice();
    let family = cfg.instance.family.as_str().to_string();
    let failed = |learner: &LearnerSpec, status, component: String, s: usize, a: usize| ResultRow {
        instance: family.clone(),
        learner: learner.id.as_str().to_string(),
        horizon,
        num_states: s,
        num_actions: a,
        n_exp,
        seed: seed_index as u64,
        gap: f64::NAN,
        status,
        component,
        wall_time_ms: 0.0,
    };
    let setup = build_instance(&cfg.instance, horizon, n_exp, seed).and_then(|(inst, comp)| {
        let data = sample_dataset(&inst.mdp, &inst.expert, n_exp, derive_seed(seed, &[2]))?;
        Ok((inst, comp, data))
    });
    let (instance, component, dataset) = match setup {
        Ok(x) => x,
        Err(_) => {
            return learners
                .iter()
                .map(|l| failed(l, RunStatus::Error, String::new(), 0, 0))
                .collect()
        }
    };
    let (s, a) = (instance.mdp.num_states(), instance.mdp.num_actions());
    learners
        .iter()
        .map(|learner| {
            let start = Instant::now();
            let result = train_gap(learner, &instance, &dataset, seed);
            let wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
            match result {
                Ok(gap) => ResultRow {
                    instance: family.clone(),
                    learner: learner.id.as_str().to_string(),
                    horizon,
                    num_states: s,
                    num_actions: a,
                    n_exp,
                    seed: seed_index as u64,
                    gap,
                    status: RunStatus::Ok,
                    component: component.clone(),
                    wall_time_ms,
                },
                Err(e) => {
                    let status = if matches!(e, Error::Solver(_)) {
                        RunStatus::SolverFailure
                    } else {
                        RunStatus::Error
                    };
                    let mut row = failed(learner, status, component.clone(), s, a);
                    row.wall_time_ms = wall_time_ms;
                    row
                }
            }
        })
        .collect()
}

/// Runs every (cell, seed) in parallel. All learners of a run see the same
/// instance and dataset. Rows come back sorted by cell, seed and learner
/// order, independent of scheduling; failures are kept as flagged rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize, usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &(h, n))| (0..cfg.seeds.count).map(move |si| (ci, h, n, si)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(ci, h, n, si)| run_one(cfg, ci, h, n, si))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect())
}

/// Column order of the results CSV.
pub const CSV_HEADER: [&str; 11] = [
    "instance",
    "learner",
    "H",
    "S",
    "A",
    "n_exp",
    "seed",
    "gap",
    "status",
    "component",
    "wall_time_ms",
];

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(CSV_HEADER)?;
    }
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(config(format!("unexpected CSV header {header:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_csv_file(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    read_csv(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(
        family: Family,
        learners: Vec<LearnerId>,
        h: Vec<usize>,
        n: Vec<usize>,
        count: usize,
    ) -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSpec {
                family,
                params: InstanceParams {
                    states: 5,
                    ..Default::default()
                },
            },
            learner: Learners::Many(learners.into_iter().map(LearnerSpec::new).collect()),
            grid: Grid {
                horizon: h,
                n_exp: n,
            },
            seeds: Seeds { count, base: 7 },
            output: None,
        }
    }

    #[test]
    fn one_cell_one_seed_gives_one_row() {
        let rows = run_experiment(&cfg(
            Family::MmLb,
            vec![LearnerId::Mm],
            vec![4],
            vec![16],
            1,
        ))
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].is_ok());
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let c = cfg(
            Family::BcLb,
            vec![LearnerId::Bc, LearnerId::Re],
            vec![3],
            vec![16, 32],
            3,
        );
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        let strip = |rows: &[ResultRow]| {
            let mut rows = rows.to_vec();
            rows.iter_mut().for_each(|r| r.wall_time_ms = 0.0);
            let mut out = Vec::new();
            write_csv(&rows, &mut out).unwrap();
            out
        };
        assert_eq!(strip(&a), strip(&b));
        let text = strip(&a);
        assert!(String::from_utf8_lossy(&text)
            .starts_with("instance,learner,H,S,A,n_exp,seed,gap,status,component,wall_time_ms\n"));
        let back = read_csv(&text[..]).unwrap();
        assert_eq!(back.len(), a.len());
        assert_eq!(back[0].gap, a[0].gap);
    }

    #[test]
    fn config_json_schema() {
        let text = r#"{
            "instance": {"family": "mm-lb", "params": {}},
            "learner": {"id": "re", "params": {"replay": {"mode": "monte-carlo", "n_replay": 100, "seed": 1}}},
            "grid": {"H": [4, 8], "n_exp": [64]},
            "seeds": {"count": 2, "base": 1},
            "output": "out.csv"
        }"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.cells(), vec![(4, 64), (8, 64)]);
        assert_eq!(c.learner.as_slice()[0].id, LearnerId::Re);
        let bad = text.replace("\"count\": 2", "\"count\": 0");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn failures_are_flagged() {
        // H = 3 is rejected by mm-lb
        let rows = run_experiment(&cfg(
            Family::MmLb,
            vec![LearnerId::Mm],
            vec![3],
            vec![16],
            2,
        ))
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows
            .iter()
            .all(|r| r.status == RunStatus::Error && r.gap.is_nan()));
    }
}
