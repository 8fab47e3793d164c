//! Residual micro-network with a shared trunk and one classifier head per task.
//!
//! Parameters are addressed through a flat registry (trunk first, then heads
//! in append order). Each entry belongs to exactly one of three groups: the
//! shared trunk, heads of previously learned tasks, or the head of the task
//! currently being added.

use crate::data::TaskId;
use crate::error::{contract_err, shape_err, Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{BatchStats, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrunkConfig {
    /// `(channels, height, width)` of one input image.
    pub input: [usize; 3],
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_channels: usize,
    /// 2×2 max pool after the stem.
    pub stem_pool: bool,
    pub stage_blocks: Vec<usize>,
    pub stage_channels: Vec<usize>,
}

impl Default for TrunkConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrunkConfig {
    /// 3×32×32 input, 3×3 stem, stages `[1, 1]` of widths `[8, 16]`.
    pub fn desk() -> Self {
        Self {
            input: [3, 32, 32],
            stem_kernel: 3,
            stem_stride: 1,
            stem_channels: 8,
            stem_pool: false,
            stage_blocks: vec![1, 1],
            stage_channels: vec![8, 16],
        }
    }

    /// The 34-layer geometry: 7×7/2 stem with pooling, stages `[3, 4, 6, 3]`.
    pub fn resnet34() -> Self {
        Self {
            input: [3, 224, 224],
            stem_kernel: 7,
            stem_stride: 2,
            stem_channels: 64,
            stem_pool: true,
            stage_blocks: vec![3, 4, 6, 3],
            stage_channels: vec![64, 128, 256, 512],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.stage_channels.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_blocks.is_empty() {
            return bad("trunk needs at least one stage".into());
        }
        if self.stage_blocks.len() != self.stage_channels.len() {
            return bad(format!(
                "{} stage block counts but {} stage widths",
                self.stage_blocks.len(),
                self.stage_channels.len()
            ));
        }
        if self.stage_blocks.contains(&0) || self.stage_channels.contains(&0) {
            return bad("stage block counts and widths must be positive".into());
        }
        if self.input.contains(&0) || self.stem_channels == 0 || self.stem_stride == 0 {
            return bad("input dims, stem width and stride must be positive".into());
        }
        if self.stem_kernel % 2 == 0 {
            return bad(format!("stem kernel {} must be odd", self.stem_kernel));
        }
        let spatial = self.spatial_trace()?;
        if spatial.last().is_some_and(|&(h, w)| h == 0 || w == 0) {
            return bad("input too small for this trunk".into());
        }
        Ok(())
    }

    /// Spatial size after the stem and after each stage.
    fn spatial_trace(&self) -> Result<Vec<(usize, usize)>> {
        let step = |n: usize, k: usize, s: usize| -> Result<usize> {
            let pad = k / 2;
            (n + 2 * pad)
                .checked_sub(k)
                .map(|span| span / s + 1)
                .ok_or_else(|| Error::Config(format!("kernel {k} does not fit size {n}")))
        };
        let [_, mut h, mut w] = self.input;
        h = step(h, self.stem_kernel, self.stem_stride)?;
        w = step(w, self.stem_kernel, self.stem_stride)?;
        if self.stem_pool {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::Config(format!("stem pool needs even size, got {h}×{w}")));
            }
            h /= 2;
            w /= 2;
        }
        let mut out = vec![(h, w)];
        for stage in 1..self.stage_blocks.len() {
            let _ = stage;
            h = step(h, 3, 2)?;
            w = step(w, 3, 2)?;
            out.push((h, w));
        }
        Ok(out)
    }
}

/// Kaiming-normal `fan_in × fan_out` matrix: i.i.d. N(0, 2/fan_in).
pub fn kaiming_init(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(contract_err!("kaiming_init needs positive dims, got {fan_in}×{fan_out}"));
    }
    kaiming_tensor(vec![fan_in, fan_out], fan_in, rng)
}

fn kaiming_tensor(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| std * rng.normal()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics; running estimates are reported back, not applied.
    Train,
    /// Running statistics.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl BatchNorm {
    fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    fn fold(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var_unbiased) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Bias-free convolution followed by batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBn {
    pub kernel: Tensor,
    pub stride: usize,
    pub pad: usize,
    pub bn: BatchNorm,
}

impl ConvBn {
    fn new(c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            kernel: kaiming_tensor(vec![c_out, c_in, k, k], c_in * k * k, rng)?,
            stride,
            pad: k / 2,
            bn: BatchNorm::new(c_out),
        })
    }

    fn param_count(&self) -> usize {
        self.kernel.len() + self.bn.gamma.len() + self.bn.beta.len()
    }
}

/// `relu(F(x) + shortcut(x))` with `F = bn∘conv3×3∘relu∘bn∘conv3×3`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    /// 1×1 strided projection when the shape changes, identity otherwise.
    pub projection: Option<ConvBn>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trunk {
    pub config: TrunkConfig,
    pub stem: ConvBn,
    pub blocks: Vec<ResidualBlock>,
}

impl Trunk {
    fn build(config: &TrunkConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let stem = ConvBn::new(
            config.input[0],
            config.stem_channels,
            config.stem_kernel,
            config.stem_stride,
            rng,
        )?;
        let mut blocks = Vec::new();
        let mut c_in = config.stem_channels;
        for (stage, (&n, &width)) in config
            .stage_blocks
            .iter()
            .zip(&config.stage_channels)
            .enumerate()
        {
            for i in 0..n {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                let projection = if stride != 1 || c_in != width {
                    Some(ConvBn::new(c_in, width, 1, stride, rng)?)
                } else {
                    None
                };
                blocks.push(ResidualBlock {
                    conv1: ConvBn::new(c_in, width, 3, stride, rng)?,
                    conv2: ConvBn::new(width, width, 3, 1, rng)?,
                    projection,
                });
                c_in = width;
            }
        }
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
        })
    }

    fn conv_bns(&self) -> Vec<&ConvBn> {
        let mut out = vec![&self.stem];
        for b in &self.blocks {
            out.push(&b.conv1);
            out.push(&b.conv2);
            out.extend(b.projection.as_ref());
        }
        out
    }

    fn conv_bns_mut(&mut self) -> Vec<&mut ConvBn> {
        let mut out = vec![&mut self.stem];
        for b in &mut self.blocks {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
            out.extend(b.projection.as_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.conv_bns().iter().map(|c| c.param_count()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadRole {
    /// θo: a head trained for an earlier task.
    Old,
    /// θn: the most recently appended head.
    New,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub task: TaskId,
    /// `D × k`
    pub weight: Tensor,
    pub bias: Tensor,
    pub role: HeadRole,
}

impl Head {
    pub fn class_count(&self) -> usize {
        self.bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// θs
    Shared,
    /// θo
    OldHeads,
    /// θn
    NewHeads,
}

/// Registry indices of each parameter group.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParamPartition {
    pub shared: Vec<usize>,
    pub old_heads: Vec<usize>,
    pub new_heads: Vec<usize>,
    /// Scalar counts per group, in the order above.
    pub counts: [usize; 3],
}

impl ParamPartition {
    pub fn select(&self, group: ParamGroup) -> &[usize] {
        match group {
            ParamGroup::Shared => &self.shared,
            ParamGroup::OldHeads => &self.old_heads,
            ParamGroup::NewHeads => &self.new_heads,
        }
    }

    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Graph handles of every registry parameter, in registry order.
pub type BoundParams = Vec<Var>;

pub struct NetOutput {
    pub features: Var,
    /// One `B × k_i` logits node per head, in head order.
    pub logits: Vec<Var>,
    /// Training-mode batch statistics per batch-norm layer (empty in eval mode).
    pub bn_stats: Vec<BatchStats>,
}

#[derive(Debug)]
pub struct MultiHeadNet {
    trunk: Trunk,
    heads: Vec<Head>,
    trunk_evals: AtomicU64,
}

impl Clone for MultiHeadNet {
    fn clone(&self) -> Self {
        Self {
            trunk: self.trunk.clone(),
            heads: self.heads.clone(),
            trunk_evals: AtomicU64::new(self.trunk_evals()),
        }
    }
}

impl PartialEq for MultiHeadNet {
    fn eq(&self, other: &Self) -> bool {
        self.trunk == other.trunk && self.heads == other.heads
    }
}

impl MultiHeadNet {
    /// Kaiming-initialized trunk, unit batch-norm scale, zero shift, no heads.
    pub fn build(config: &TrunkConfig, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            trunk: Trunk::build(config, rng)?,
            heads: Vec::new(),
            trunk_evals: AtomicU64::new(0),
        })
    }

    pub(crate) fn from_parts(trunk: Trunk, heads: Vec<Head>) -> Self {
        Self {
            trunk,
            heads,
            trunk_evals: AtomicU64::new(0),
        }
    }

    pub fn trunk(&self) -> &Trunk {
        &self.trunk
    }

    pub fn config(&self) -> &TrunkConfig {
        &self.trunk.config
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.config.feature_dim()
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn head_index(&self, task: TaskId) -> Option<usize> {
        self.heads.iter().position(|h| h.task == task)
    }

    pub fn head(&self, task: TaskId) -> Option<&Head> {
        self.heads.iter().find(|h| h.task == task)
    }

    pub fn head_tasks(&self) -> Vec<TaskId> {
        self.heads.iter().map(|h| h.task).collect()
    }

    /// Appends a Kaiming-initialized head with zero bias, tags it θn and
    /// re-tags every existing head θo. No existing parameter is touched.
    pub fn append_head(&mut self, task: TaskId, class_count: usize, rng: &mut SeededRng) -> Result<()> {
        if class_count < 2 {
            return Err(contract_err!("a head needs at least 2 classes, got {class_count}"));
        }
        if self.head_index(task).is_some() {
            return Err(contract_err!("task {task} already has a head"));
        }
        let d = self.feature_dim();
        let weight = kaiming_init(d, class_count, rng)?;
        for h in &mut self.heads {
            h.role = HeadRole::Old;
        }
        self.heads.push(Head {
            task,
            weight,
            bias: Tensor::zeros(&[class_count]),
            role: HeadRole::New,
        });
        Ok(())
    }

    /// Keeps only the heads whose task satisfies `keep`.
    pub fn retain_heads(&mut self, keep: impl Fn(TaskId) -> bool) {
        self.heads.retain(|h| keep(h.task));
    }

    /// Marks every head as θo (used once a task finishes training).
    pub fn mark_all_old(&mut self) {
        for h in &mut self.heads {
            h.role = HeadRole::Old;
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in self.trunk.conv_bns() {
            out.extend([&c.kernel, &c.bn.gamma, &c.bn.beta]);
        }
        for h in &self.heads {
            out.extend([&h.weight, &h.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in self.trunk.conv_bns_mut() {
            out.push(&mut c.kernel);
            out.push(&mut c.bn.gamma);
            out.push(&mut c.bn.beta);
        }
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Group of each registry entry, aligned with [`MultiHeadNet::params`].
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let trunk = self.trunk.conv_bns().len() * 3;
        let mut out = vec![ParamGroup::Shared; trunk];
        for h in &self.heads {
            let g = match h.role {
                HeadRole::Old => ParamGroup::OldHeads,
                HeadRole::New => ParamGroup::NewHeads,
            };
            out.extend([g, g]);
        }
        out
    }

    /// Registry indices belonging to the head of `task`.
    pub fn head_param_indices(&self, task: TaskId) -> Option<[usize; 2]> {
        let i = self.head_index(task)?;
        let base = self.trunk.conv_bns().len() * 3 + 2 * i;
        Some([base, base + 1])
    }

    /// Batch-norm running statistics, in layer order (mean, var per layer).
    pub fn running_stats(&self) -> Vec<&Tensor> {
        self.trunk
            .conv_bns()
            .into_iter()
            .flat_map(|c| [&c.bn.running_mean, &c.bn.running_var])
            .collect()
    }

    pub(crate) fn running_stats_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in self.trunk.conv_bns_mut() {
            out.push(&mut c.bn.running_mean);
            out.push(&mut c.bn.running_var);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.trunk_param_count() + self.head_param_count()
    }

    pub fn trunk_param_count(&self) -> usize {
        self.trunk.param_count()
    }

    pub fn head_param_count(&self) -> usize {
        self.heads.iter().map(Head::param_count).sum()
    }

    /// All head weight matrices side by side: `D × Σ k_i`, in head order.
    pub fn combined_head_weight(&self) -> Tensor {
        let d = self.feature_dim();
        let total: usize = self.heads.iter().map(Head::class_count).sum();
        let mut data = Vec::with_capacity(d * total);
        for r in 0..d {
            for h in &self.heads {
                let k = h.class_count();
                data.extend_from_slice(&h.weight.data()[r * k..(r + 1) * k]);
            }
        }
        Tensor::new(vec![d, total], data).expect("head widths sum to the column count")
    }

    pub fn partition_params(&self) -> Result<ParamPartition> {
        if self.heads.is_empty() {
            return Err(contract_err!("cannot partition a headless network"));
        }
        let mut p = ParamPartition::default();
        for (i, (g, t)) in self.param_groups().into_iter().zip(self.params()).enumerate() {
            let slot = match g {
                ParamGroup::Shared => 0,
                ParamGroup::OldHeads => 1,
                ParamGroup::NewHeads => 2,
            };
            p.counts[slot] += t.len();
            match g {
                ParamGroup::Shared => p.shared.push(i),
                ParamGroup::OldHeads => p.old_heads.push(i),
                ParamGroup::NewHeads => p.new_heads.push(i),
            }
        }
        Ok(p)
    }

    /// Number of trunk forward evaluations performed so far.
    pub fn trunk_evals(&self) -> u64 {
        self.trunk_evals.load(Ordering::Relaxed)
    }

    /// Places every parameter on `g`; `trainable[i]` decides whether entry
    /// `i` requires a gradient.
    pub fn bind(&self, g: &mut Graph, trainable: &[bool]) -> Result<BoundParams> {
        let params = self.params();
        if trainable.len() != params.len() {
            return Err(contract_err!(
                "trainable mask has {} entries for {} parameters",
                trainable.len(),
                params.len()
            ));
        }
        Ok(params
            .into_iter()
            .zip(trainable)
            .map(|(t, &rg)| g.leaf(t.clone(), rg))
            .collect())
    }

    /// One trunk pass feeding every head.
    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var, mode: Mode) -> Result<NetOutput> {
        let [c, h, w] = self.trunk.config.input;
        let shape = g.value(x).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(shape_err!("batch {:?} does not match trunk input {c}×{h}×{w}", shape));
        }
        if params.len() != self.params().len() {
            return Err(contract_err!("bound parameter list does not match the network"));
        }
        self.trunk_evals.fetch_add(1, Ordering::Relaxed);
        let mut stats = Vec::new();
        let mut slot = 0usize;
        let mut conv_bn = |g: &mut Graph, cb: &ConvBn, input: Var, stats: &mut Vec<BatchStats>| -> Result<Var> {
            let (k, gamma, beta) = (params[slot], params[slot + 1], params[slot + 2]);
            slot += 3;
            let y = g.conv2d(input, k, None, cb.stride, cb.pad)?;
            match mode {
                Mode::Train => {
                    let (z, s) = g.batch_norm_train(y, gamma, beta, BN_EPS)?;
                    stats.push(s);
                    Ok(z)
                }
                Mode::Eval => g.batch_norm_eval(
                    y,
                    gamma,
                    beta,
                    cb.bn.running_mean.data(),
                    cb.bn.running_var.data(),
                    BN_EPS,
                ),
            }
        };
        let stem = conv_bn(g, &self.trunk.stem, x, &mut stats)?;
        let mut act = g.relu(stem);
        if self.trunk.config.stem_pool {
            act = g.max_pool2(act)?;
        }
        for block in &self.trunk.blocks {
            let h1 = conv_bn(g, &block.conv1, act, &mut stats)?;
            let h1 = g.relu(h1);
            let h2 = conv_bn(g, &block.conv2, h1, &mut stats)?;
            let shortcut = match &block.projection {
                Some(p) => conv_bn(g, p, act, &mut stats)?,
                None => act,
            };
            let sum = g.add(h2, shortcut)?;
            act = g.relu(sum);
        }
        let features = g.global_avg_pool(act)?;
        let mut logits = Vec::with_capacity(self.heads.len());
        for _ in &self.heads {
            let (wv, bv) = (params[slot], params[slot + 1]);
            slot += 2;
            let z = g.matmul(features, wv)?;
            logits.push(g.add_row_bias(z, bv)?);
        }
        Ok(NetOutput {
            features,
            logits,
            bn_stats: stats,
        })
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_batch_stats(&mut self, stats: &[BatchStats]) -> Result<()> {
        let mut layers = self.trunk.conv_bns_mut();
        if stats.len() != layers.len() {
            return Err(contract_err!(
                "{} batch statistics for {} batch-norm layers",
                stats.len(),
                layers.len()
            ));
        }
        for (layer, s) in layers.iter_mut().zip(stats) {
            layer.bn.fold(s);
        }
        Ok(())
    }

    /// Logits of every head for `batch` (`B×C×H×W`), without gradients and
    /// without touching running statistics.
    pub fn forward_all_heads(&self, batch: &Tensor, mode: Mode) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, &vec![false; self.params().len()])?;
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, &params, x, mode)?;
        Ok(out.logits.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Eval-mode argmax predictions of the head for `task`.
    pub fn predict(&self, task: TaskId, batch: &Tensor) -> Result<Vec<usize>> {
        let i = self
            .head_index(task)
            .ok_or_else(|| contract_err!("no head for task {task}"))?;
        let logits = self.forward_all_heads(batch, Mode::Eval)?;
        Ok(argmax_rows(&logits[i]))
    }
}

pub fn argmax_rows(m: &Tensor) -> Vec<usize> {
    let k = m.shape()[m.ndim() - 1];
    m.data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiming_target_std_and_determinism() {
        assert_eq!((2.0f64 / 512.0).sqrt(), 0.0625);
        let a = kaiming_init(4, 3, &mut SeededRng::new(1)).unwrap();
        let b = kaiming_init(4, 3, &mut SeededRng::new(1)).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(a.shape(), &[4, 3]);
        assert!(matches!(kaiming_init(0, 3, &mut SeededRng::new(1)), Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        TrunkConfig::desk().validate().unwrap();
        TrunkConfig::resnet34().validate().unwrap();
        let mut c = TrunkConfig::desk();
        c.stage_blocks.clear();
        c.stage_channels.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrunkConfig::desk();
        c.stage_channels.push(32);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn head_roles_follow_appends() {
        let mut rng = SeededRng::new(0);
        let mut net = MultiHeadNet::build(&TrunkConfig::desk(), &mut rng).unwrap();
        assert!(net.partition_params().is_err());
        net.append_head(TaskId::DAMAGE_LEVEL, 3, &mut rng).unwrap();
        assert_eq!(net.heads()[0].role, HeadRole::New);
        net.append_head(TaskId::SPALLING, 2, &mut rng).unwrap();
        assert_eq!(
            net.heads().iter().map(|h| h.role).collect::<Vec<_>>(),
            vec![HeadRole::Old, HeadRole::New]
        );
        assert!(net.append_head(TaskId::SPALLING, 2, &mut rng).is_err());
        assert!(net.append_head(TaskId::COMPONENT, 1, &mut rng).is_err());
    }
}
