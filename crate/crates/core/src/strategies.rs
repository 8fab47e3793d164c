//! The five ways of adding tasks to a multi-head network: distillation
//! against a frozen teacher (CLDRM), feature extraction, fine-tuning,
//! one duplicated model per task, and joint training on all data.

use crate::data::{
    format_order, parse_order, AugmentConfig, Batch, BatchIter, DatasetSplit, LabeledSample, TaskId,
    DEFAULT_BATCH_SIZE,
};
use crate::error::{contract_err, Error, Result};
use crate::experiments::evaluate;
use crate::losses::{self, DistillConfig, LossReport, SoftTargets};
use crate::nn::{Mode, MultiHeadNet, ParamGroup, TrunkConfig};
use crate::optim::{make_schedule, FreezeMask, Optimizer, OptimizerKind, Phase, Schedule, ScheduleOverrides, SgdConfig};
use crate::rng::{derive_path, SeededRng};
use crate::tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    FeatureExtraction,
    FineTuning,
    DuplicateFineTuning,
    JointTraining,
    Cldrm,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        Self::FeatureExtraction,
        Self::FineTuning,
        Self::DuplicateFineTuning,
        Self::JointTraining,
        Self::Cldrm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FeatureExtraction => "feature-extraction",
            Self::FineTuning => "fine-tuning",
            Self::DuplicateFineTuning => "duplicate",
            Self::JointTraining => "joint",
            Self::Cldrm => "cldrm",
        }
    }

    /// Strategies whose reported Final accuracy is defined to equal Initial.
    pub fn final_is_initial(self) -> bool {
        matches!(
            self,
            Self::FeatureExtraction | Self::DuplicateFineTuning | Self::JointTraining
        )
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .or(match key.as_str() {
                "lwf" => Some(Self::Cldrm),
                "duplicate-fine-tuning" => Some(Self::DuplicateFineTuning),
                "joint-training" => Some(Self::JointTraining),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

/// Ordered, duplicate-free list of tasks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TaskSequence(Vec<TaskId>);

impl TaskSequence {
    pub fn new(tasks: Vec<TaskId>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("task order is empty".into()));
        }
        let unique: BTreeSet<_> = tasks.iter().collect();
        if unique.len() != tasks.len() {
            return Err(Error::Config(format!("task order {} repeats a task", format_order(&tasks))));
        }
        Ok(Self(tasks))
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for TaskSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(parse_order(s)?)
    }
}

impl TryFrom<String> for TaskSequence {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TaskSequence> for String {
    fn from(s: TaskSequence) -> String {
        s.to_string()
    }
}

impl fmt::Display for TaskSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_order(&self.0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    /// Best test accuracy over the epochs in which the task is first trained.
    #[default]
    BestEpoch,
    /// Test accuracy after the last of those epochs.
    LastEpoch,
}

/// Everything a training run needs besides data and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trunk: TrunkConfig,
    pub schedule: Schedule,
    pub sgd: SgdConfig,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub distill: DistillConfig,
    pub initial_mode: InitialMode,
    /// Batch size used when evaluating test sets.
    pub eval_batch: usize,
    /// Loss breakdowns recorded at the start of every distillation or joint phase.
    pub probe_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Desk-scale trunk and the shortened schedule.
    pub fn desk() -> Self {
        Self {
            trunk: TrunkConfig::desk(),
            schedule: make_schedule(&ScheduleOverrides::desk()).expect("desk schedule is valid"),
            sgd: SgdConfig::default(),
            optimizer: OptimizerKind::Sgd,
            batch_size: DEFAULT_BATCH_SIZE,
            augment: AugmentConfig::default(),
            distill: DistillConfig::default(),
            initial_mode: InitialMode::BestEpoch,
            eval_batch: 128,
            probe_steps: 1,
        }
    }

    /// Desk trunk with the full 40 + 60 epoch schedule.
    pub fn paper() -> Self {
        Self {
            schedule: make_schedule(&ScheduleOverrides::default()).expect("paper schedule is valid"),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trunk.validate()?;
        self.schedule.validate()?;
        self.sgd.validate()?;
        self.distill.validate()?;
        if self.schedule.phases.len() < 2 {
            return Err(Error::Config("schedule needs a warm-up and a joint phase".into()));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen copy of the network taken before a new head is appended.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSnapshot {
    net: MultiHeadNet,
}

impl TeacherSnapshot {
    pub fn capture(net: &MultiHeadNet) -> Self {
        Self { net: net.clone() }
    }

    pub fn net(&self) -> &MultiHeadNet {
        &self.net
    }

    pub fn tasks(&self) -> Vec<TaskId> {
        self.net.head_tasks()
    }

    /// Eval-mode softmax rows of every head for `images`.
    pub fn probabilities(&self, images: &Tensor) -> Result<Vec<Tensor>> {
        self.net
            .forward_all_heads(images, Mode::Eval)?
            .iter()
            .map(softmax_value)
            .collect()
    }
}

pub fn softmax_value(logits: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(logits.clone());
    let p = g.softmax_rows(x)?;
    Ok(g.value(p).clone())
}

/// Independently fine-tuned models, one per task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelBank {
    models: Vec<MultiHeadNet>,
}

impl ModelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn models(&self) -> &[MultiHeadNet] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn push(&mut self, net: MultiHeadNet) {
        self.models.push(net);
    }

    pub fn model_for(&self, task: TaskId) -> Option<&MultiHeadNet> {
        self.models.iter().find(|m| m.head_index(task).is_some())
    }
}

/// Uniform inference and accounting interface over single networks and banks.
pub trait TaskPredictor {
    fn tasks(&self) -> Vec<TaskId>;
    fn predict(&self, task: TaskId, images: &Tensor) -> Result<Vec<usize>>;
    /// Predictions for every task on the same images.
    fn predict_all(&self, images: &Tensor) -> Result<Vec<(TaskId, Vec<usize>)>>;
    /// Total trunk forward evaluations performed so far.
    fn trunk_evals(&self) -> u64;
    fn param_count(&self) -> usize;
    fn trunk_param_count(&self) -> usize;
}

impl TaskPredictor for MultiHeadNet {
    fn tasks(&self) -> Vec<TaskId> {
        self.head_tasks()
    }

    fn predict(&self, task: TaskId, images: &Tensor) -> Result<Vec<usize>> {
        MultiHeadNet::predict(self, task, images)
    }

    fn predict_all(&self, images: &Tensor) -> Result<Vec<(TaskId, Vec<usize>)>> {
        let logits = self.forward_all_heads(images, Mode::Eval)?;
        Ok(self
            .head_tasks()
            .into_iter()
            .zip(logits.iter().map(crate::nn::argmax_rows))
            .collect())
    }

    fn trunk_evals(&self) -> u64 {
        MultiHeadNet::trunk_evals(self)
    }

    fn param_count(&self) -> usize {
        MultiHeadNet::param_count(self)
    }

    fn trunk_param_count(&self) -> usize {
        MultiHeadNet::trunk_param_count(self)
    }
}

impl TaskPredictor for ModelBank {
    fn tasks(&self) -> Vec<TaskId> {
        self.models.iter().flat_map(|m| m.head_tasks()).collect()
    }

    fn predict(&self, task: TaskId, images: &Tensor) -> Result<Vec<usize>> {
        self.model_for(task)
            .ok_or_else(|| contract_err!("no model in the bank has a head for task {task}"))?
            .predict(task, images)
    }

    fn predict_all(&self, images: &Tensor) -> Result<Vec<(TaskId, Vec<usize>)>> {
        let mut out = Vec::new();
        for m in &self.models {
            out.extend(TaskPredictor::predict_all(m, images)?);
        }
        Ok(out)
    }

    fn trunk_evals(&self) -> u64 {
        self.models.iter().map(MultiHeadNet::trunk_evals).sum()
    }

    fn param_count(&self) -> usize {
        self.models.iter().map(MultiHeadNet::param_count).sum()
    }

    fn trunk_param_count(&self) -> usize {
        self.models.iter().map(MultiHeadNet::trunk_param_count).sum()
    }
}

/// The trained artefact of a run.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Single(MultiHeadNet),
    Bank(ModelBank),
}

impl TrainedModel {
    pub fn as_predictor(&self) -> &dyn TaskPredictor {
        match self {
            Self::Single(n) => n,
            Self::Bank(b) => b,
        }
    }

    /// The network holding `task`'s head.
    pub fn net_for(&self, task: TaskId) -> Option<&MultiHeadNet> {
        match self {
            Self::Single(n) => n.head_index(task).map(|_| n),
            Self::Bank(b) => b.model_for(task),
        }
    }
}

/// Test accuracies (percent) after one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Position of the task being added within the order.
    pub stage: usize,
    pub task: TaskId,
    pub phase: String,
    /// Epoch index counted from the start of the run.
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracies: Vec<(TaskId, f64)>,
}

impl EpochRecord {
    pub fn accuracy(&self, task: TaskId) -> Option<f64> {
        self.accuracies.iter().find(|(t, _)| *t == task).map(|&(_, a)| a)
    }
}

/// Inputs and outputs of one recorded optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossProbe {
    pub stage: usize,
    pub phase: String,
    /// New-task probabilities and one-hot labels, one pair per batch in the step.
    pub supervised: Vec<(Tensor, Tensor)>,
    /// Teacher and student probabilities of the old heads (distillation only).
    pub targets: SoftTargets,
    pub distill: DistillConfig,
    /// Loss value produced by the training graph.
    pub total: f64,
    pub report: LossReport,
}

/// Storage needed to add one task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStorage {
    pub stage: usize,
    pub task: TaskId,
    /// Tasks whose training sets were read.
    pub tasks_read: Vec<TaskId>,
    pub stored_samples: usize,
}

/// Accuracies (percent) of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: TaskId,
    /// Best (or last, per [`InitialMode`]) test accuracy while first trained.
    pub initial: f64,
    /// Test accuracy after the last epoch of the first training.
    pub last_epoch: f64,
    /// Test accuracy measured on the final model(s).
    pub final_measured: f64,
}

/// Result of one strategy over one task order.
#[derive(Clone, Debug)]
pub struct StrategyRun {
    pub strategy: StrategyKind,
    pub order: TaskSequence,
    pub seed: u64,
    pub temperature: f64,
    pub outcomes: Vec<TaskOutcome>,
    pub epochs: Vec<EpochRecord>,
    pub storage: Vec<StageStorage>,
    pub probes: Vec<LossProbe>,
    pub model: TrainedModel,
}

impl StrategyRun {
    pub fn outcome(&self, task: TaskId) -> Option<&TaskOutcome> {
        self.outcomes.iter().find(|o| o.task == task)
    }

    /// Per-epoch test accuracy of `task`, across all stages in which it has a head.
    pub fn trace(&self, task: TaskId) -> Vec<(usize, f64)> {
        self.epochs
            .iter()
            .filter_map(|r| r.accuracy(task).map(|a| (r.epoch, a)))
            .collect()
    }
}

/// Notification at the end of a training phase.
pub struct PhaseEnd<'a> {
    pub stage: usize,
    pub task: TaskId,
    pub phase: &'a str,
    pub net: &'a MultiHeadNet,
}

/// What one phase optimizes.
enum Objective<'t> {
    /// Cross entropy of the task's own head.
    Supervised,
    /// New-task cross entropy plus distillation to the teacher's heads.
    Distill {
        teacher: &'t TeacherSnapshot,
        config: DistillConfig,
    },
    /// Sum of per-task cross entropies, one batch per task per step.
    Joint(Vec<TaskId>),
}

/// Per-step task visiting order for joint training: every round lists each
/// task exactly once, in the given order.
pub fn round_robin_rounds(tasks: &[TaskId], rounds: usize) -> Vec<Vec<TaskId>> {
    vec![tasks.to_vec(); rounds]
}

const NET_TAG: u64 = 0x4E45;
const HEAD_TAG: u64 = 0x4845;
const EPOCH_TAG: u64 = 0xE0;

/// Drives the per-task training procedures over one corpus and records
/// epochs, probes and storage as it goes.
pub struct Trainer<'a> {
    data: &'a DatasetSplit,
    config: &'a TrainConfig,
    seed: u64,
    epoch: usize,
    stage: usize,
    pub epochs: Vec<EpochRecord>,
    pub probes: Vec<LossProbe>,
    pub storage: Vec<StageStorage>,
    observer: Option<Box<dyn FnMut(PhaseEnd<'_>) + 'a>>,
    /// Accuracies of tasks held by frozen bank models, repeated in every record.
    fixed_accuracies: Vec<(TaskId, f64)>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a DatasetSplit, config: &'a TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            data,
            config,
            seed,
            epoch: 0,
            stage: 0,
            epochs: Vec::new(),
            probes: Vec::new(),
            storage: Vec::new(),
            observer: None,
            fixed_accuracies: Vec::new(),
        })
    }

    /// Calls `f` after every training phase.
    pub fn observe(&mut self, f: impl FnMut(PhaseEnd<'_>) + 'a) {
        self.observer = Some(Box::new(f));
    }

    pub fn config(&self) -> &TrainConfig {
        self.config
    }

    /// Continues stage and epoch numbering as if `stages` tasks had already
    /// been trained, for adding a task to a network loaded from disk.
    pub fn resume_after(&mut self, stages: usize) {
        self.stage = stages;
        self.epoch = stages * self.config.schedule.total_epochs();
    }

    /// Fresh Kaiming-initialized headless network for this run.
    pub fn build_net(&self) -> Result<MultiHeadNet> {
        MultiHeadNet::build(&self.config.trunk, &mut SeededRng::new(derive_path(self.seed, &[NET_TAG])))
    }

    fn head_rng(&self) -> SeededRng {
        SeededRng::new(derive_path(self.seed, &[HEAD_TAG, self.stage as u64]))
    }

    fn append_head(&self, net: &mut MultiHeadNet, task: TaskId) -> Result<()> {
        net.append_head(task, task.spec().class_count(), &mut self.head_rng())
    }

    /// Trains a newly appended head together with every other parameter
    /// through all phases of the schedule.
    pub fn train_first_task(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<TaskOutcome> {
        self.data.task(task)?;
        self.append_head(net, task)?;
        let mask = FreezeMask::none(net.params().len());
        let phases = self.config.schedule.phases.clone();
        let start = self.epochs.len();
        for (i, phase) in phases.iter().enumerate() {
            self.run_phase(net, task, i, phase, &mask, Mode::Train, &Objective::Supervised)?;
        }
        self.finish_stage(net, task, &[task], start)
    }

    fn require_trained(net: &MultiHeadNet) -> Result<()> {
        if net.heads().is_empty() {
            return Err(contract_err!("adding a task requires a network with at least one trained head"));
        }
        Ok(())
    }

    /// Shared prefix of CLDRM and fine-tuning: snapshot, new head, θn warm-up.
    fn warm_up(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<()> {
        self.append_head(net, task)?;
        let mask = FreezeMask::freezing(&net.partition_params()?, &[ParamGroup::Shared, ParamGroup::OldHeads]);
        let phase = self.config.schedule.warmup().clone();
        self.run_phase(net, task, 0, &phase, &mask, Mode::Eval, &Objective::Supervised)
    }

    /// Learning without forgetting. Returns the outcome and the teacher used.
    pub fn cldrm_add_task(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<(TaskOutcome, TeacherSnapshot)> {
        Self::require_trained(net)?;
        self.data.task(task)?;
        let start = self.epochs.len();
        let teacher = TeacherSnapshot::capture(net);
        self.warm_up(net, task)?;
        let mask = FreezeMask::none(net.params().len());
        let objective = Objective::Distill {
            teacher: &teacher,
            config: self.config.distill,
        };
        let joint: Vec<Phase> = self.config.schedule.joint().to_vec();
        for (i, phase) in joint.iter().enumerate() {
            self.run_phase(net, task, i + 1, phase, &mask, Mode::Train, &objective)?;
        }
        let outcome = self.finish_stage(net, task, &[task], start)?;
        Ok((outcome, teacher))
    }

    /// Trains only the new head; the trunk runs in eval mode throughout.
    pub fn feature_extraction_add_task(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<TaskOutcome> {
        Self::require_trained(net)?;
        self.data.task(task)?;
        let start = self.epochs.len();
        self.append_head(net, task)?;
        let mask = FreezeMask::freezing(&net.partition_params()?, &[ParamGroup::Shared, ParamGroup::OldHeads]);
        let phases = self.config.schedule.phases.clone();
        for (i, phase) in phases.iter().enumerate() {
            self.run_phase(net, task, i, phase, &mask, Mode::Eval, &Objective::Supervised)?;
        }
        self.finish_stage(net, task, &[task], start)
    }

    /// θn warm-up, then trunk and new head at the joint-phase rate with the
    /// old heads frozen.
    pub fn fine_tuning_add_task(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<TaskOutcome> {
        Self::require_trained(net)?;
        self.fine_tune(net, task)
    }

    fn fine_tune(&mut self, net: &mut MultiHeadNet, task: TaskId) -> Result<TaskOutcome> {
        self.data.task(task)?;
        let start = self.epochs.len();
        self.warm_up(net, task)?;
        let mask = FreezeMask::freezing(&net.partition_params()?, &[ParamGroup::OldHeads]);
        let joint: Vec<Phase> = self.config.schedule.joint().to_vec();
        for (i, phase) in joint.iter().enumerate() {
            self.run_phase(net, task, i + 1, phase, &mask, Mode::Train, &Objective::Supervised)?;
        }
        self.finish_stage(net, task, &[task], start)
    }

    /// Clones the newest bank model, swaps its heads for one new head,
    /// fine-tunes it and appends it to the bank.
    pub fn duplicate_fine_tune_add_task(&mut self, bank: &mut ModelBank, task: TaskId) -> Result<TaskOutcome> {
        let mut net = bank
            .models
            .last()
            .ok_or_else(|| contract_err!("the model bank is empty"))?
            .clone();
        net.retain_heads(|_| false);
        self.fixed_accuracies = self.bank_accuracies(bank)?;
        let outcome = self.fine_tune(&mut net, task);
        self.fixed_accuracies.clear();
        let outcome = outcome?;
        bank.push(net);
        Ok(outcome)
    }

    fn bank_accuracies(&self, bank: &ModelBank) -> Result<Vec<(TaskId, f64)>> {
        bank.models
            .iter()
            .flat_map(|m| m.head_tasks().into_iter().map(move |t| (m, t)))
            .map(|(m, t)| Ok((t, self.test_accuracy(m, t)?)))
            .collect()
    }

    /// Trains every parameter on the union of `tasks`, appending heads for
    /// any task that lacks one. Each step takes one batch per task.
    pub fn joint_train(&mut self, net: &mut MultiHeadNet, tasks: &[TaskId]) -> Result<TaskOutcome> {
        let new_task = *tasks.last().ok_or_else(|| Error::Config("joint training needs tasks".into()))?;
        for &t in tasks {
            self.data.task(t)?;
        }
        let start = self.epochs.len();
        for &t in tasks {
            if net.head_index(t).is_none() {
                self.append_head(net, t)?;
            }
        }
        let mask = FreezeMask::none(net.params().len());
        let phases = self.config.schedule.phases.clone();
        let objective = Objective::Joint(tasks.to_vec());
        for (i, phase) in phases.iter().enumerate() {
            self.run_phase(net, new_task, i, phase, &mask, Mode::Train, &objective)?;
        }
        self.finish_stage(net, new_task, tasks, start)
    }

    fn finish_stage(&mut self, net: &mut MultiHeadNet, task: TaskId, read: &[TaskId], start: usize) -> Result<TaskOutcome> {
        net.mark_all_old();
        let accs: Vec<f64> = self.epochs[start..].iter().filter_map(|r| r.accuracy(task)).collect();
        let last_epoch = *accs.last().ok_or_else(|| Error::Data(format!("no epochs recorded for task {task}")))?;
        let initial = match self.config.initial_mode {
            InitialMode::BestEpoch => accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            InitialMode::LastEpoch => last_epoch,
        };
        let tasks_read: BTreeSet<TaskId> = read.iter().copied().collect();
        self.storage.push(StageStorage {
            stage: self.stage,
            task,
            stored_samples: tasks_read.iter().map(|&t| self.data.train_size(t)).sum(),
            tasks_read: tasks_read.into_iter().collect(),
        });
        self.stage += 1;
        Ok(TaskOutcome {
            task,
            initial,
            last_epoch,
            final_measured: last_epoch,
        })
    }

    pub fn test_accuracy(&self, model: &dyn TaskPredictor, task: TaskId) -> Result<f64> {
        Ok(evaluate(model, task, &self.data.task(task)?.test, self.config.eval_batch)?.percent())
    }

    fn epoch_seed(&self, phase: usize, epoch: usize, task: TaskId, cycle: usize) -> u64 {
        derive_path(
            self.seed,
            &[EPOCH_TAG, self.stage as u64, phase as u64, epoch as u64, task.get() as u64, cycle as u64],
        )
    }

    fn batches(&self, task: TaskId, phase: usize, epoch: usize, cycle: usize) -> Result<BatchIter<'a>> {
        let samples: &'a [LabeledSample] = &self.data.task(task)?.train;
        Ok(BatchIter::over(samples, task, self.config.batch_size, self.epoch_seed(phase, epoch, task, cycle))?
            .augmented(&self.config.augment))
    }

    #[allow(clippy::too_many_arguments)]
    fn run_phase(
        &mut self,
        net: &mut MultiHeadNet,
        task: TaskId,
        phase_idx: usize,
        phase: &Phase,
        mask: &FreezeMask,
        mode: Mode,
        objective: &Objective<'_>,
    ) -> Result<()> {
        let mut opt = Optimizer::new(self.config.optimizer, self.config.sgd, phase.lr, &net.params())?;
        let mut probes_left = match objective {
            Objective::Supervised => 0,
            _ => self.config.probe_steps,
        };
        for epoch in 0..phase.epochs {
            let (mut loss_sum, mut steps) = (0.0, 0usize);
            match objective {
                Objective::Joint(tasks) => {
                    let mut iters = tasks
                        .iter()
                        .map(|&t| Ok((t, self.batches(t, phase_idx, epoch, 0)?, 0usize)))
                        .collect::<Result<Vec<_>>>()?;
                    let rounds = iters.iter().map(|(_, it, _)| it.batches_per_epoch()).max().unwrap_or(0);
                    for round in round_robin_rounds(tasks, rounds) {
                        let mut step_batches = Vec::with_capacity(round.len());
                        for (t, (_, it, cycle)) in round.iter().zip(iters.iter_mut()) {
                            let b = match it.next() {
                                Some(b) => b,
                                None => {
                                    *cycle += 1;
                                    *it = self.batches(*t, phase_idx, epoch, *cycle)?;
                                    it.next().expect("non-empty training set")
                                }
                            };
                            step_batches.push((*t, b));
                        }
                        loss_sum += self.step(net, &mut opt, mask, mode, &step_batches, objective, &mut probes_left, &phase.name)?;
                        steps += 1;
                    }
                }
                _ => {
                    for b in self.batches(task, phase_idx, epoch, 0)? {
                        loss_sum += self.step(net, &mut opt, mask, mode, &[(task, b)], objective, &mut probes_left, &phase.name)?;
                        steps += 1;
                    }
                }
            }
            let mut accuracies = self.fixed_accuracies.clone();
            for t in net.head_tasks() {
                accuracies.push((t, self.test_accuracy(net, t)?));
            }
            self.epochs.push(EpochRecord {
                stage: self.stage,
                task,
                phase: phase.name.clone(),
                epoch: self.epoch,
                train_loss: loss_sum / steps.max(1) as f64,
                accuracies,
            });
            self.epoch += 1;
        }
        if let Some(obs) = self.observer.as_mut() {
            obs(PhaseEnd {
                stage: self.stage,
                task,
                phase: &phase.name,
                net,
            });
        }
        Ok(())
    }

    /// One optimization step. Returns the step's loss.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        net: &mut MultiHeadNet,
        opt: &mut Optimizer,
        mask: &FreezeMask,
        mode: Mode,
        batches: &[(TaskId, Batch)],
        objective: &Objective<'_>,
        probes_left: &mut usize,
        phase: &str,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let params = net.bind(&mut g, &mask.trainable())?;
        let mut stats = Vec::new();
        let mut total: Option<Var> = None;
        let mut supervised = Vec::new();
        let mut targets = SoftTargets::default();
        let mut report = LossReport::default();
        for (task, batch) in batches {
            let x = g.constant(batch.images.clone());
            let out = net.forward(&mut g, &params, x, mode)?;
            stats.push(out.bn_stats);
            let head = net.head_index(*task).ok_or_else(|| contract_err!("no head for task {task}"))?;
            let probs = g.softmax_rows(out.logits[head])?;
            let ce = losses::cross_entropy_new(&mut g, probs, &batch.onehot)?;
            report.new += g.value(ce).data()[0];
            supervised.push((g.value(probs).clone(), batch.onehot.clone()));
            let term = match objective {
                Objective::Distill { teacher, config, .. } => {
                    let teacher_probs = teacher.probabilities(&batch.images)?;
                    let mut student = Vec::with_capacity(teacher_probs.len());
                    for t in teacher.tasks() {
                        let i = net.head_index(t).ok_or_else(|| contract_err!("student lost head {t}"))?;
                        student.push(g.softmax_rows(out.logits[i])?);
                    }
                    let (l_old, parts) = losses::distillation_loss(&mut g, &teacher_probs, &student, config.temperature)?;
                    report.old = parts.iter().map(|&p| g.value(p).data()[0]).collect();
                    targets.student = student.iter().map(|&s| g.value(s).clone()).collect();
                    targets.teacher = teacher_probs;
                    losses::total_loss(&mut g, ce, l_old, config.lambda)?
                }
                _ => ce,
            };
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let total = total.ok_or_else(|| contract_err!("optimization step without batches"))?;
        let value = g.value(total).data()[0];
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {value}")));
        }
        report.total = value;
        g.backward(total)?;
        {
            let grads: Vec<Option<&Tensor>> = params.iter().map(|&v| g.grad(v)).collect();
            let mut p = net.params_mut();
            opt.step(&mut p, &grads, mask)?;
        }
        if mode == Mode::Train {
            for s in &stats {
                net.apply_batch_stats(s)?;
            }
        }
        if *probes_left > 0 {
            *probes_left -= 1;
            let distill = match objective {
                Objective::Distill { config, .. } => *config,
                _ => DistillConfig::default(),
            };
            self.probes.push(LossProbe {
                stage: self.stage,
                phase: phase.to_string(),
                supervised,
                targets,
                distill,
                total: value,
                report,
            });
        }
        Ok(value)
    }
}

/// Runs `strategy` over `order` from a fresh network and measures every
/// task's accuracy on the final model(s).
pub fn run_sequence(
    strategy: StrategyKind,
    order: &TaskSequence,
    data: &DatasetSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<StrategyRun> {
    let mut trainer = Trainer::new(data, config, seed)?;
    run_with(&mut trainer, strategy, order)
}

/// [`run_sequence`] on a caller-supplied trainer (e.g. one with an observer).
pub fn run_with(trainer: &mut Trainer<'_>, strategy: StrategyKind, order: &TaskSequence) -> Result<StrategyRun> {
    let tasks = order.tasks();
    for &t in tasks {
        trainer.data.task(t)?;
    }
    let mut outcomes = Vec::with_capacity(tasks.len());
    let model = match strategy {
        StrategyKind::DuplicateFineTuning => {
            let mut bank = ModelBank::new();
            let mut net = trainer.build_net()?;
            outcomes.push(trainer.train_first_task(&mut net, tasks[0])?);
            bank.push(net);
            for &t in &tasks[1..] {
                outcomes.push(trainer.duplicate_fine_tune_add_task(&mut bank, t)?);
            }
            TrainedModel::Bank(bank)
        }
        StrategyKind::JointTraining => {
            let mut net = trainer.build_net()?;
            for i in 0..tasks.len() {
                outcomes.push(trainer.joint_train(&mut net, &tasks[..=i])?);
            }
            TrainedModel::Single(net)
        }
        _ => {
            let mut net = trainer.build_net()?;
            outcomes.push(trainer.train_first_task(&mut net, tasks[0])?);
            for &t in &tasks[1..] {
                let o = match strategy {
                    StrategyKind::Cldrm => trainer.cldrm_add_task(&mut net, t)?.0,
                    StrategyKind::FineTuning => trainer.fine_tuning_add_task(&mut net, t)?,
                    _ => trainer.feature_extraction_add_task(&mut net, t)?,
                };
                outcomes.push(o);
            }
            TrainedModel::Single(net)
        }
    };
    for o in &mut outcomes {
        o.final_measured = trainer.test_accuracy(model.as_predictor(), o.task)?;
    }
    Ok(StrategyRun {
        strategy,
        order: order.clone(),
        seed: trainer.seed,
        temperature: trainer.config.distill.temperature,
        outcomes,
        epochs: std::mem::take(&mut trainer.epochs),
        storage: std::mem::take(&mut trainer.storage),
        probes: std::mem::take(&mut trainer.probes),
        model,
    })
}
