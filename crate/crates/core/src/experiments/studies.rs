use super::tables::{initial_final_table, AccuracyTable};
use super::fan_out;
use crate::data::{DatasetSplit, TaskId};
use crate::error::{Error, Result};
use crate::strategies::{run_sequence, StrategyKind, StrategyRun, TaskSequence, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_TEMPERATURES: [f64; 4] = [1.0, 2.0, 5.0, 10.0];

/// One temperature, one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub temperature: f64,
    pub seed: u64,
    /// Task-A test accuracy per epoch over both stages.
    pub trace_a: Vec<(usize, f64)>,
    /// Task-B test accuracy per epoch of the second stage.
    pub trace_b: Vec<(usize, f64)>,
    /// Epochs spent on task A alone.
    pub first_stage_epochs: usize,
    pub table: AccuracyTable,
}

impl SweepRun {
    /// Task-A accuracy after the last epoch.
    pub fn end_accuracy_a(&self) -> f64 {
        self.trace_a.last().map_or(f64::NAN, |&(_, a)| a)
    }

    pub fn first_stage_trace(&self) -> &[(usize, f64)] {
        &self.trace_a[..self.first_stage_epochs.min(self.trace_a.len())]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub pair: (TaskId, TaskId),
    pub values: Vec<f64>,
    pub runs: Vec<SweepRun>,
    /// Temperatures ordered by mean end-of-run task-A accuracy, best first.
    pub ranking: Vec<(f64, f64)>,
}

/// For each temperature and seed: train task A, then add task B with
/// distillation at that temperature, tracing task-A accuracy throughout.
pub fn temperature_sweep(
    data: &DatasetSplit,
    config: &TrainConfig,
    pair: (TaskId, TaskId),
    temperatures: &[f64],
    seeds: &[u64],
) -> Result<SweepResult> {
    if let Some(t) = temperatures.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::Config(format!("temperature must be > 0, got {t}")));
    }
    if pair.0 == pair.1 {
        return Err(Error::Config("temperature sweep needs two distinct tasks".into()));
    }
    let order = TaskSequence::new(vec![pair.0, pair.1])?;
    let jobs: Vec<(f64, u64)> = temperatures
        .iter()
        .flat_map(|&t| seeds.iter().map(move |&s| (t, s)))
        .collect();
    let runs = fan_out(jobs, |(t, seed)| {
        let mut cfg = config.clone();
        cfg.distill.temperature = t;
        let run = run_sequence(StrategyKind::Cldrm, &order, data, &cfg, seed)?;
        let first_stage_epochs = run.epochs.iter().filter(|r| r.stage == 0).count();
        Ok(SweepRun {
            temperature: t,
            seed,
            trace_a: run.trace(pair.0),
            trace_b: run.trace(pair.1),
            first_stage_epochs,
            table: initial_final_table(&run)?,
        })
    })?;
    let mut ranking: Vec<(f64, f64)> = temperatures
        .iter()
        .map(|&t| {
            let ends: Vec<f64> = runs.iter().filter(|r| r.temperature == t).map(SweepRun::end_accuracy_a).collect();
            (t, ends.iter().sum::<f64>() / ends.len().max(1) as f64)
        })
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(SweepResult {
        pair,
        values: temperatures.to_vec(),
        runs,
        ranking,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairKind {
    /// Damage level then spalling: both read crack and blob texture.
    Similar,
    /// Component type then spalling: member geometry versus texture.
    Dissimilar,
}

impl PairKind {
    pub fn tasks(self) -> (TaskId, TaskId) {
        match self {
            Self::Similar => (TaskId::DAMAGE_LEVEL, TaskId::SPALLING),
            Self::Dissimilar => (TaskId::COMPONENT, TaskId::SPALLING),
        }
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "similar" => Ok(Self::Similar),
            "dissimilar" => Ok(Self::Dissimilar),
            other => Err(Error::Config(format!("unknown pair kind '{other}'"))),
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Similar => "similar",
            Self::Dissimilar => "dissimilar",
        })
    }
}

/// Trace data of one strategy on one pair and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTrace {
    pub strategy: StrategyKind,
    pub seed: u64,
    /// Task-A accuracy over both stages.
    pub task_a: Vec<(usize, f64)>,
    /// Task-A accuracy during the second stage only.
    pub task_a_zoom: Vec<(usize, f64)>,
    /// Task-B accuracy during the second stage.
    pub task_b: Vec<(usize, f64)>,
    pub initial_a: f64,
    /// Task-A accuracy measured on the final model.
    pub final_a: f64,
    pub table: AccuracyTable,
}

impl PairTrace {
    /// `Initial − Final` of task A, in percentage points.
    pub fn drop_a(&self) -> f64 {
        self.initial_a - self.final_a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub kind: PairKind,
    pub traces: Vec<PairTrace>,
}

pub(crate) fn pair_trace(run: &StrategyRun, a: TaskId, b: TaskId) -> Result<PairTrace> {
    let outcome = run
        .outcome(a)
        .ok_or_else(|| Error::Data(format!("run has no record for task {a}")))?;
    let second: Vec<usize> = run.epochs.iter().filter(|r| r.stage == 1).map(|r| r.epoch).collect();
    let task_a = run.trace(a);
    Ok(PairTrace {
        strategy: run.strategy,
        seed: run.seed,
        task_a_zoom: task_a.iter().copied().filter(|(e, _)| second.contains(e)).collect(),
        task_a,
        task_b: run.trace(b),
        initial_a: outcome.initial,
        final_a: outcome.final_measured,
        table: initial_final_table(run)?,
    })
}

/// Runs every strategy on the designated pair for every seed.
pub fn pair_experiment(
    data: &DatasetSplit,
    config: &TrainConfig,
    kind: PairKind,
    strategies: &[StrategyKind],
    seeds: &[u64],
) -> Result<PairResult> {
    let (a, b) = kind.tasks();
    let order = TaskSequence::new(vec![a, b])?;
    let jobs: Vec<(StrategyKind, u64)> = strategies
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let traces = fan_out(jobs, |(k, seed)| pair_trace(&run_sequence(k, &order, data, config, seed)?, a, b))?;
    Ok(PairResult { kind, traces })
}

/// The six orders of tasks 1–3 followed by task 4, lexicographic.
pub fn table4_orders() -> Vec<TaskSequence> {
    let [a, b, c] = [TaskId::DAMAGE_LEVEL, TaskId::SPALLING, TaskId::COMPONENT];
    [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
        .into_iter()
        .map(|p| TaskSequence::new(vec![p[0], p[1], p[2], TaskId::DAMAGE_TYPE]).expect("distinct tasks"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderResult {
    pub order: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub table: AccuracyTable,
}

/// Every strategy on every one of the six orders, for every seed.
pub fn order_sweep(
    data: &DatasetSplit,
    config: &TrainConfig,
    strategies: &[StrategyKind],
    seeds: &[u64],
) -> Result<Vec<OrderResult>> {
    let jobs: Vec<(TaskSequence, StrategyKind, u64)> = table4_orders()
        .into_iter()
        .flat_map(|o| {
            strategies
                .iter()
                .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
                .map(move |(k, s)| (o.clone(), k, s))
                .collect::<Vec<_>>()
        })
        .collect();
    fan_out(jobs, |(order, strategy, seed)| {
        let run = run_sequence(strategy, &order, data, config, seed)?;
        Ok(OrderResult {
            order: order.to_string(),
            strategy,
            seed,
            table: initial_final_table(&run)?,
        })
    })
}
