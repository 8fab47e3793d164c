use crate::data::TaskId;
use crate::error::{Error, Result};
use crate::strategies::{StrategyKind, StrategyRun};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub task: TaskId,
    /// Percent.
    pub initial: f64,
    /// Percent.
    pub final_: f64,
}

/// Initial and Final accuracy per task in training order, plus the mean of
/// the Final column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub strategy: StrategyKind,
    pub order: String,
    pub seed: u64,
    pub rows: Vec<TableRow>,
    pub average_final: f64,
}

impl AccuracyTable {
    pub fn row(&self, task: TaskId) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.task == task)
    }

    pub fn recompute_average(&self) -> f64 {
        self.rows.iter().map(|r| r.final_).sum::<f64>() / self.rows.len() as f64
    }

    /// `task,initial,final` lines with two decimals, then the average.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,initial,final\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.2},{:.2}\n", r.task, r.initial, r.final_));
        }
        s.push_str(&format!("average,,{:.2}\n", self.average_final));
        s
    }
}

/// Builds the Initial/Final table of a run. Final equals Initial for the
/// last task of every run and for every task of the strategies where each
/// task keeps its own frozen or separately trained parameters.
pub fn initial_final_table(run: &StrategyRun) -> Result<AccuracyTable> {
    let tasks = run.order.tasks();
    let mut rows = Vec::with_capacity(tasks.len());
    for (i, &task) in tasks.iter().enumerate() {
        let o = run
            .outcome(task)
            .ok_or_else(|| Error::Data(format!("run has no record for task {task}")))?;
        let last = i + 1 == tasks.len();
        let final_ = if last || run.strategy.final_is_initial() {
            o.initial
        } else {
            o.final_measured
        };
        rows.push(TableRow {
            task,
            initial: o.initial,
            final_,
        });
    }
    let average_final = rows.iter().map(|r| r.final_).sum::<f64>() / rows.len() as f64;
    Ok(AccuracyTable {
        strategy: run.strategy,
        order: run.order.to_string(),
        seed: run.seed,
        rows,
        average_final,
    })
}

/// One line of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub run_id: String,
    pub strategy: StrategyKind,
    pub order: String,
    pub temperature: f64,
    pub seed: u64,
    pub epoch: usize,
    pub task: u8,
    pub split: String,
    /// Percent.
    pub accuracy: f64,
}

/// Per-epoch, per-task test accuracies of a run.
pub fn metric_rows(run: &StrategyRun, run_id: &str) -> Vec<MetricRow> {
    run.epochs
        .iter()
        .flat_map(|r| {
            r.accuracies.iter().map(move |&(task, accuracy)| MetricRow {
                run_id: run_id.to_string(),
                strategy: run.strategy,
                order: run.order.to_string(),
                temperature: run.temperature,
                seed: run.seed,
                epoch: r.epoch,
                task: task.get(),
                split: "test".into(),
                accuracy,
            })
        })
        .collect()
}
