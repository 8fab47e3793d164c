//! Procedural four-task image corpus standing in for a structural-damage
//! photo collection, plus augmentation and batching.
//!
//! Every image carries all four attribute labels. The generator draws the
//! attributes first and renders them, so labels are exact by construction.

mod augment;
mod batch;
mod corpus;
mod render;

pub use augment::{augment, hflip, rotate, vflip, AugmentConfig, AugmentCounters};
pub use batch::{batch_iter, collate, Batch, BatchIter, DEFAULT_BATCH_SIZE};
pub use corpus::{
    class_for_index, decode_corpus, encode_corpus, generate_corpus, read_corpus, write_corpus, CorpusSizes,
    DatasetSplit, TaskData,
    CORPUS_MAGIC, CORPUS_VERSION,
};
pub use render::{render, Attributes, Component, DamageLevel, DamageType, RenderParams};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Identifier of one recognition task, 1..=4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId(u8);

impl TaskId {
    pub const DAMAGE_LEVEL: TaskId = TaskId(1);
    pub const SPALLING: TaskId = TaskId(2);
    pub const COMPONENT: TaskId = TaskId(3);
    pub const DAMAGE_TYPE: TaskId = TaskId(4);
    pub const ALL: [TaskId; 4] = [
        Self::DAMAGE_LEVEL,
        Self::SPALLING,
        Self::COMPONENT,
        Self::DAMAGE_TYPE,
    ];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=4).contains(&id) {
            Ok(Self(id))
        } else {
            Err(Error::Config(format!("unknown task id {id} (expected 1..=4)")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Zero-based slot in per-task arrays.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }

    pub fn spec(self) -> TaskSpec {
        TaskSpec::for_task(self)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub name: &'static str,
    pub classes: &'static [&'static str],
    /// Rotating a component photo can turn an inclined beam into a column,
    /// so the component task never rotates.
    pub rotation_allowed: bool,
}

impl TaskSpec {
    pub fn for_task(id: TaskId) -> Self {
        let (name, classes): (&str, &[&str]) = match id.0 {
            1 => ("damage level", &["undamaged", "minor", "heavy"]),
            2 => ("spalling", &["yes", "no"]),
            3 => ("component", &["column", "wall", "beam"]),
            _ => ("damage type", &["shear", "flexural", "ASR", "corrosion"]),
        };
        Self {
            id,
            name,
            classes,
            rotation_allowed: id != TaskId::COMPONENT,
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }
}

/// One image with a label for every task.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// `3×H×W`, values in `[0, 1]`.
    pub image: Tensor,
    /// Indexed by [`TaskId::slot`].
    pub labels: [u8; 4],
}

impl LabeledSample {
    pub fn label(&self, task: TaskId) -> usize {
        self.labels[task.slot()] as usize
    }
}

/// Parses an order string such as `1-2-3-4`.
pub fn parse_order(s: &str) -> Result<Vec<TaskId>> {
    let ids = s
        .split('-')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .map_err(|_| Error::Config(format!("bad task id {p:?} in order {s:?}")))
                .and_then(TaskId::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut seen = ids.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != ids.len() || ids.is_empty() {
        return Err(Error::Config(format!("order {s:?} must list distinct tasks")));
    }
    Ok(ids)
}

pub fn format_order(order: &[TaskId]) -> String {
    order
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join("-")
}
