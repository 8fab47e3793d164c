use crate::data::{LabeledSample, TaskId};
use crate::error::{Error, Result};
use crate::strategies::TaskPredictor;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// `k×k` counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Tallies `(truth, prediction)` pairs; either index `>= k` is a data error.
    pub fn from_pairs(k: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Data(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::Data(format!(
                "class pair ({truth}, {predicted}) outside a {k}-class matrix",
                k = self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.k.max(1)).map(|r| r.iter().sum()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub task: TaskId,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn percent(&self) -> f64 {
        100.0 * self.accuracy
    }
}

/// Eval-mode argmax of `task`'s head over `test`, in chunks of `batch` images.
pub fn evaluate(model: &(impl TaskPredictor + ?Sized), task: TaskId, test: &[LabeledSample], batch: usize) -> Result<Evaluation> {
    if !model.tasks().contains(&task) {
        return Err(Error::Contract(format!("no head for task {task}")));
    }
    let k = task.spec().class_count();
    let mut confusion = ConfusionMatrix::new(k);
    for chunk in test.chunks(batch.max(1)) {
        let images = Tensor::stack(&chunk.iter().map(|s| &s.image).collect::<Vec<_>>())?;
        let predicted = model.predict(task, &images)?;
        for (s, p) in chunk.iter().zip(predicted) {
            confusion.record(s.label(task), p)?;
        }
    }
    Ok(Evaluation {
        task,
        accuracy: confusion.accuracy(),
        confusion,
    })
}
