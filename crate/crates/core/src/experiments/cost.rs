use crate::error::{Error, Result};
use crate::strategies::{StrategyKind, StrategyRun};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Counters read from one finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub strategy: StrategyKind,
    pub n_tasks: usize,
    pub total_params: usize,
    pub trunk_params: usize,
    pub head_params: usize,
    /// Training samples read when adding each task, in order.
    pub stored_samples: Vec<usize>,
    /// Trunk evaluations needed to predict every task for one image.
    pub prediction_passes: u64,
}

/// Reads parameter and storage counters from `run` and counts the trunk
/// passes of one all-task prediction on `probe` (a `1×C×H×W` batch).
pub fn measure_cost(run: &StrategyRun, probe: &Tensor) -> Result<StrategyCost> {
    let model = run.model.as_predictor();
    let before = model.trunk_evals();
    let predicted = model.predict_all(probe)?;
    let prediction_passes = model.trunk_evals() - before;
    if predicted.len() != run.order.len() {
        return Err(Error::Data(format!(
            "model predicts {} tasks, run trained {}",
            predicted.len(),
            run.order.len()
        )));
    }
    let (total, trunk) = (model.param_count(), model.trunk_param_count());
    Ok(StrategyCost {
        strategy: run.strategy,
        n_tasks: run.order.len(),
        total_params: total,
        trunk_params: trunk,
        head_params: total - trunk,
        stored_samples: run.storage.iter().map(|s| s.stored_samples).collect(),
        prediction_passes,
    })
}

/// Each counter divided by the CLDRM value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRatios {
    pub strategy: StrategyKind,
    pub total_params: f64,
    pub trunk_params: f64,
    /// Ratio of samples read when adding the last task.
    pub stored_samples: f64,
    pub prediction_passes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub entries: Vec<StrategyCost>,
    pub ratios: Vec<CostRatios>,
}

impl CostReport {
    pub fn entry(&self, strategy: StrategyKind) -> Option<&StrategyCost> {
        self.entries.iter().find(|e| e.strategy == strategy)
    }

    pub fn ratio(&self, strategy: StrategyKind) -> Option<&CostRatios> {
        self.ratios.iter().find(|e| e.strategy == strategy)
    }
}

/// Normalizes the measured costs so that CLDRM = 1.
pub fn cost_report(entries: Vec<StrategyCost>) -> Result<CostReport> {
    let base = entries
        .iter()
        .find(|e| e.strategy == StrategyKind::Cldrm)
        .ok_or_else(|| Error::Data("cost report needs a CLDRM run as reference".into()))?
        .clone();
    let last = |e: &StrategyCost| e.stored_samples.last().copied().unwrap_or(0) as f64;
    let ratios = entries
        .iter()
        .map(|e| CostRatios {
            strategy: e.strategy,
            total_params: e.total_params as f64 / base.total_params as f64,
            trunk_params: e.trunk_params as f64 / base.trunk_params as f64,
            stored_samples: last(e) / last(&base),
            prediction_passes: e.prediction_passes as f64 / base.prediction_passes as f64,
        })
        .collect();
    Ok(CostReport { entries, ratios })
}
