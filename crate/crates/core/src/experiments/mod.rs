//! Evaluation metrics, accuracy tables and the four studies: temperature
//! sweep, similar/dissimilar task pairs, learning orders and cost accounting.

mod cost;
mod metrics;
mod studies;
mod tables;

pub use cost::{cost_report, measure_cost, CostRatios, CostReport, StrategyCost};
pub use metrics::{evaluate, ConfusionMatrix, Evaluation};
pub use studies::{
    order_sweep, pair_experiment, table4_orders, temperature_sweep, OrderResult, PairKind, PairResult, PairTrace,
    SweepResult, SweepRun, DEFAULT_TEMPERATURES,
};
pub use tables::{initial_final_table, metric_rows, AccuracyTable, MetricRow, TableRow};

use crate::error::Result;
use std::sync::Mutex;

/// Worker threads for sweeps: `LWF_THREADS` if set, else the machine's
/// available parallelism.
pub fn worker_count() -> usize {
    std::env::var("LWF_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Applies `f` to every job on up to [`worker_count`] threads and returns
/// the results in job order. The first error wins.
pub fn fan_out<J, R, F>(jobs: Vec<J>, f: F) -> Result<Vec<R>>
where
    J: Send,
    R: Send,
    F: Fn(J) -> Result<R> + Sync,
{
    let n = jobs.len();
    let workers = worker_count().min(n).max(1);
    if workers == 1 {
        return jobs.into_iter().map(f).collect();
    }
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>().into_iter());
    let results: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let next = queue.lock().expect("job queue").next();
                let Some((i, job)) = next else { break };
                let r = f(job);
                results.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
