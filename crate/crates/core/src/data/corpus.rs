use super::render::{render, Attributes, Component, DamageLevel, DamageType};
use super::{LabeledSample, TaskId};
use crate::error::{Error, Result};
use crate::io::{write_atomic, ByteReader};
use crate::rng::{derive_path, SeededRng};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CORPUS_MAGIC: &[u8; 4] = b"CLDS";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSizes {
    /// Training images per task, indexed by task slot.
    pub train: [usize; 4],
    pub test: [usize; 4],
    pub height: usize,
    pub width: usize,
    /// Ratio of the most to the least frequent class of each task's own
    /// label. `1` gives balanced classes.
    pub imbalance: f64,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self::desk()
    }
}

impl CorpusSizes {
    /// 512 train / 128 test per task at 32×32.
    pub fn desk() -> Self {
        Self {
            train: [512; 4],
            test: [128; 4],
            height: 32,
            width: 32,
            imbalance: 1.0,
        }
    }

    /// Per-task image counts of the original photo collection.
    pub fn paper() -> Self {
        Self {
            train: [3776, 4864, 3968, 1728],
            test: [663, 820, 693, 328],
            height: 32,
            width: 32,
            imbalance: 1.0,
        }
    }

    pub fn uniform(train: usize, test: usize, side: usize) -> Self {
        Self {
            train: [train; 4],
            test: [test; 4],
            height: side,
            width: side,
            imbalance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.contains(&0) || self.test.contains(&0) || self.height == 0 || self.width == 0 {
            return Err(Error::Config("corpus sizes must all be positive".into()));
        }
        if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
            return Err(Error::Config(format!("imbalance must be >= 1, got {}", self.imbalance)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub task: TaskId,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Train and test images for each available task.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub height: usize,
    pub width: usize,
    pub tasks: Vec<TaskData>,
}

impl DatasetSplit {
    pub fn task(&self, id: TaskId) -> Result<&TaskData> {
        self.tasks
            .iter()
            .find(|t| t.task == id)
            .ok_or_else(|| Error::Data(format!("no dataset for task {id}")))
    }

    /// The same corpus without the dataset of `id`.
    pub fn without(&self, id: TaskId) -> Self {
        Self {
            height: self.height,
            width: self.width,
            tasks: self.tasks.iter().filter(|t| t.task != id).cloned().collect(),
        }
    }

    pub fn train_size(&self, id: TaskId) -> usize {
        self.task(id).map_or(0, |t| t.train.len())
    }
}

const TRAIN_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

/// Class of sample `index` out of `n`. Balanced classes cycle; otherwise
/// class `c` gets a share proportional to `imbalance^(-c/(k-1))`.
pub fn class_for_index(index: usize, n: usize, k: usize, imbalance: f64) -> usize {
    if imbalance == 1.0 || k < 2 {
        return index % k;
    }
    let weights: Vec<f64> = (0..k)
        .map(|c| imbalance.powf(-(c as f64) / (k - 1) as f64))
        .collect();
    let total: f64 = weights.iter().sum();
    let u = (index as f64 + 0.5) / n as f64 * total;
    let mut acc = 0.0;
    for (c, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return c;
        }
    }
    k - 1
}

/// Attributes for one sample of `task` whose own label is `class`; the other
/// attributes are random. Damage-type images are always heavily damaged so
/// the type is visible.
fn draw_attributes(task: TaskId, class: usize, rng: &mut SeededRng) -> Attributes {
    let mut a = Attributes {
        level: DamageLevel::from_index(rng.below(3)),
        spalling: rng.bernoulli(0.5),
        component: Component::from_index(rng.below(3)),
        damage_type: DamageType::from_index(rng.below(4)),
    };
    match task.get() {
        1 => a.level = DamageLevel::from_index(class),
        2 => a.spalling = class == 0,
        3 => a.component = Component::from_index(class),
        _ => {
            a.damage_type = DamageType::from_index(class);
            a.level = DamageLevel::Heavy;
        }
    }
    a
}

fn generate_split(seed: u64, task: TaskId, tag: u64, n: usize, sizes: &CorpusSizes) -> Vec<LabeledSample> {
    let (h, w, k) = (sizes.height, sizes.width, task.spec().class_count());
    let mut samples: Vec<LabeledSample> = (0..n)
        .map(|i| {
            let mut rng = SeededRng::new(derive_path(seed, &[task.get() as u64, tag, i as u64]));
            let class = class_for_index(i, n, k, sizes.imbalance);
            let attrs = draw_attributes(task, class, &mut rng);
            let (image, _) = render(&attrs, h, w, &mut rng);
            LabeledSample {
                image,
                labels: attrs.labels(),
            }
        })
        .collect();
    SeededRng::new(derive_path(seed, &[task.get() as u64, tag, u64::MAX])).shuffle(&mut samples);
    samples
}

/// Builds the four-task corpus. Each sample is a pure function of
/// `(seed, task, split, index)`.
pub fn generate_corpus(seed: u64, sizes: &CorpusSizes) -> Result<DatasetSplit> {
    sizes.validate()?;
    let tasks = TaskId::ALL
        .iter()
        .map(|&task| TaskData {
            task,
            train: generate_split(seed, task, TRAIN_TAG, sizes.train[task.slot()], sizes),
            test: generate_split(seed, task, TEST_TAG, sizes.test[task.slot()], sizes),
        })
        .collect();
    Ok(DatasetSplit {
        height: sizes.height,
        width: sizes.width,
        tasks,
    })
}

/// Serializes the corpus in the `CLDS` layout (all integers and floats
/// little-endian):
///
/// ```text
/// magic "CLDS" | version u32 | height u32 | width u32 | task_count u32
/// task_count × (task_id u8 | train_count u32 | test_count u32)
/// per task, train then test samples:
///     3·H·W × f64 pixels (channel-major) | 4 × u8 labels
/// ```
pub fn encode_corpus(split: &DatasetSplit) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    for v in [CORPUS_VERSION, split.height as u32, split.width as u32, split.tasks.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in &split.tasks {
        out.push(t.task.get());
        out.extend_from_slice(&(t.train.len() as u32).to_le_bytes());
        out.extend_from_slice(&(t.test.len() as u32).to_le_bytes());
    }
    for t in &split.tasks {
        for s in t.train.iter().chain(&t.test) {
            for v in s.image.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&s.labels);
        }
    }
    out
}

pub fn decode_corpus(bytes: &[u8]) -> Result<DatasetSplit> {
    let mut r = ByteReader::new(bytes, "corpus");
    if r.take(4).map_err(|_| Error::Format("file too short for corpus magic".into()))? != CORPUS_MAGIC {
        return Err(Error::Format("bad magic: not a CLDS corpus file".into()));
    }
    let version = r.u32()?;
    if version != CORPUS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CORPUS_VERSION,
        });
    }
    let (h, w, n_tasks) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut header = Vec::with_capacity(n_tasks);
    for _ in 0..n_tasks {
        let id = TaskId::new(r.u8()?).map_err(|e| Error::Format(e.to_string()))?;
        header.push((id, r.u32()? as usize, r.u32()? as usize));
    }
    let read_samples = |r: &mut ByteReader, n: usize| -> Result<Vec<LabeledSample>> {
        (0..n)
            .map(|_| {
                let data = (0..3 * h * w).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let labels: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
                Ok(LabeledSample {
                    image: Tensor::new(vec![3, h, w], data)?,
                    labels,
                })
            })
            .collect()
    };
    let mut tasks = Vec::with_capacity(n_tasks);
    for (task, n_train, n_test) in header {
        let train = read_samples(&mut r, n_train)?;
        let test = read_samples(&mut r, n_test)?;
        tasks.push(TaskData { task, train, test });
    }
    if !r.is_done() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after corpus",
            r.remaining()
        )));
    }
    Ok(DatasetSplit {
        height: h,
        width: w,
        tasks,
    })
}

pub fn write_corpus(split: &DatasetSplit, path: &Path) -> Result<()> {
    write_atomic(path, &encode_corpus(split))
}

pub fn read_corpus(path: &Path) -> Result<DatasetSplit> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_corpus(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip_and_rejections() {
        let split = generate_corpus(3, &CorpusSizes::uniform(6, 3, 8)).unwrap();
        let bytes = encode_corpus(&split);
        assert_eq!(decode_corpus(&bytes).unwrap(), split);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_corpus(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_corpus(&bad), Err(Error::Version { found: 2, .. })));
        assert!(matches!(decode_corpus(&bytes[..bytes.len() - 3]), Err(Error::Integrity(_))));
    }

    #[test]
    fn zero_size_is_a_config_error() {
        let mut sizes = CorpusSizes::uniform(4, 4, 8);
        sizes.test[2] = 0;
        assert!(matches!(generate_corpus(0, &sizes), Err(Error::Config(_))));
    }
}
