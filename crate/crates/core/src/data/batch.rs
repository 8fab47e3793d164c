use super::{augment, AugmentConfig, AugmentCounters, DatasetSplit, LabeledSample, TaskId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_SIZE: usize = 64;

const AUGMENT_TAG: u64 = 0xA06;

#[derive(Clone, Debug)]
pub struct Batch {
    /// Positions in the task's training list.
    pub indices: Vec<usize>,
    /// `B×3×H×W`
    pub images: Tensor,
    pub labels: Vec<usize>,
    /// `B×k`
    pub onehot: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn collate(samples: &[&LabeledSample], task: TaskId, indices: Vec<usize>) -> Result<Batch> {
    let k = task.spec().class_count();
    let images = Tensor::stack(&samples.iter().map(|s| &s.image).collect::<Vec<_>>())?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label(task)).collect();
    let mut onehot = vec![0.0; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::Data(format!("label {l} out of range for task {task}")));
        }
        onehot[i * k + l] = 1.0;
    }
    Ok(Batch {
        indices,
        images,
        onehot: Tensor::new(vec![labels.len(), k], onehot)?,
        labels,
    })
}

/// One epoch over a task's training set in a shuffled order fixed by
/// `epoch_seed`. The last batch may be short.
pub struct BatchIter<'a> {
    samples: &'a [LabeledSample],
    task: TaskId,
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    augment: Option<AugmentConfig>,
    epoch_seed: u64,
    counters: AugmentCounters,
}

pub fn batch_iter(
    split: &DatasetSplit,
    task: TaskId,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<BatchIter<'_>> {
    BatchIter::over(&split.task(task)?.train, task, batch_size, epoch_seed)
}

impl<'a> BatchIter<'a> {
    pub fn over(samples: &'a [LabeledSample], task: TaskId, batch_size: usize, epoch_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if samples.is_empty() {
            return Err(Error::Data(format!("task {task} has no training samples")));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        SeededRng::new(epoch_seed).shuffle(&mut order);
        Ok(Self {
            samples,
            task,
            order,
            pos: 0,
            batch_size,
            augment: None,
            epoch_seed,
            counters: AugmentCounters::default(),
        })
    }

    /// Augments every sample with a stream derived from the epoch seed and
    /// the sample's position, with rotation removed if the task forbids it.
    pub fn augmented(mut self, config: &AugmentConfig) -> Self {
        self.augment = Some(config.for_task(&self.task.spec()));
        self
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn counters(&self) -> AugmentCounters {
        self.counters
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        let aug_seed = derive_seed(self.epoch_seed, AUGMENT_TAG);
        let owned: Vec<LabeledSample>;
        let refs: Vec<&LabeledSample> = match &self.augment {
            Some(cfg) => {
                owned = (self.pos..end)
                    .zip(&indices)
                    .map(|(p, &i)| {
                        let mut rng = SeededRng::child(aug_seed, p as u64);
                        augment(&self.samples[i], cfg, &mut rng, &mut self.counters)
                    })
                    .collect();
                owned.iter().collect()
            }
            None => indices.iter().map(|&i| &self.samples[i]).collect(),
        };
        self.pos = end;
        Some(collate(&refs, self.task, indices).expect("training samples share one shape"))
    }
}
