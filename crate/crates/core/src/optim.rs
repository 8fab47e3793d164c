//! Heavy-ball SGD with coupled weight decay, Adam, freeze masks and the
//! two-phase learning-rate schedule.

use crate::error::{contract_err, Error, Result};
use crate::nn::{ParamGroup, ParamPartition};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 4e-5,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Per-parameter frozen flags, aligned with the parameter registry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn none(len: usize) -> Self {
        Self { frozen: vec![false; len] }
    }

    pub fn from_flags(frozen: Vec<bool>) -> Self {
        Self { frozen }
    }

    /// Freezes every parameter in the listed groups.
    pub fn freezing(partition: &ParamPartition, groups: &[ParamGroup]) -> Self {
        let len = partition.shared.len() + partition.old_heads.len() + partition.new_heads.len();
        let mut frozen = vec![false; len];
        for &g in groups {
            for &i in partition.select(g) {
                frozen[i] = true;
            }
        }
        Self { frozen }
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// Complement of the mask, as expected by `MultiHeadNet::bind`.
    pub fn trainable(&self) -> Vec<bool> {
        self.frozen.iter().map(|f| !f).collect()
    }
}

fn check_alignment(params: &[&mut Tensor], grads: &[Option<&Tensor>], buffers: &[Tensor], mask: &FreezeMask) -> Result<()> {
    if params.len() != grads.len() || params.len() != buffers.len() || params.len() != mask.len() {
        return Err(contract_err!(
            "{} parameters, {} gradients, {} state buffers, {} mask entries",
            params.len(),
            grads.len(),
            buffers.len(),
            mask.len()
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if buffers[i].shape() != p.shape() {
            return Err(contract_err!("state buffer {i} does not match parameter shape {:?}", p.shape()));
        }
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(contract_err!(
                    "gradient {i} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    pub velocity: Vec<Tensor>,
}

impl SgdState {
    pub fn new(config: SgdConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }
}

/// For each unfrozen parameter: `g = grad + wd·p; v = μ·v + g; p -= lr·v`.
/// A missing gradient counts as zero. Frozen parameters and their velocity
/// are left untouched.
pub fn sgd_momentum_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut SgdState,
    mask: &FreezeMask,
) -> Result<()> {
    check_alignment(params, grads, &state.velocity, mask)?;
    let SgdConfig {
        lr,
        momentum,
        weight_decay,
    } = state.config;
    for (i, p) in params.iter_mut().enumerate() {
        if mask.is_frozen(i) {
            continue;
        }
        let v = state.velocity[i].data_mut();
        let grad = grads[i].map(Tensor::data);
        for (j, (pj, vj)) in p.data_mut().iter_mut().zip(v).enumerate() {
            let g = grad.map_or(0.0, |g| g[j]) + weight_decay * *pj;
            *vj = momentum * *vj + g;
            *pj -= lr * *vj;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Result<Self> {
        let betas_ok = (0.0..1.0).contains(&config.beta1) && (0.0..1.0).contains(&config.beta2);
        if !(config.lr > 0.0) || !betas_ok || !(config.eps > 0.0) || !(config.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid Adam hyperparameters {config:?}")));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        })
    }
}

/// Bias-corrected Adam update on every unfrozen parameter.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
    mask: &FreezeMask,
) -> Result<()> {
    check_alignment(params, grads, &state.m, mask)?;
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (i, p) in params.iter_mut().enumerate() {
        if mask.is_frozen(i) {
            continue;
        }
        let grad = grads[i].map(Tensor::data);
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let g = grad.map_or(0.0, |g| g[j]) + weight_decay * *pj;
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let (mh, vh) = (m[j] / c1, v[j] / c2);
            *pj -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

/// Optimizer state for one training phase.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl Optimizer {
    /// Fresh state for `kind` at learning rate `lr`, with momentum and weight
    /// decay taken from `sgd`.
    pub fn new(kind: OptimizerKind, sgd: SgdConfig, lr: f64, params: &[&Tensor]) -> Result<Self> {
        match kind {
            OptimizerKind::Sgd => Ok(Self::Sgd(SgdState::new(SgdConfig { lr, ..sgd }, params)?)),
            OptimizerKind::Adam => Ok(Self::Adam(AdamState::new(
                AdamConfig {
                    lr,
                    weight_decay: sgd.weight_decay,
                    ..AdamConfig::default()
                },
                params,
            )?)),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<&Tensor>], mask: &FreezeMask) -> Result<()> {
        match self {
            Self::Sgd(s) => sgd_momentum_step(params, grads, s, mask),
            Self::Adam(s) => adam_step(params, grads, s, mask),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub lr: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("schedule has no phases".into()));
        }
        for p in &self.phases {
            if p.epochs == 0 {
                return Err(Error::Config(format!("phase '{}' has zero epochs", p.name)));
            }
            if !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::Config(format!("phase '{}' has non-positive lr {}", p.name, p.lr)));
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// The first phase (θn warm-up).
    pub fn warmup(&self) -> &Phase {
        &self.phases[0]
    }

    /// Every phase after the warm-up.
    pub fn joint(&self) -> &[Phase] {
        &self.phases[1..]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulePreset {
    #[default]
    Paper,
    Desk,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleOverrides {
    pub preset: SchedulePreset,
    pub warmup_lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub joint_lr: Option<f64>,
    pub joint_epochs: Option<usize>,
}

impl ScheduleOverrides {
    pub fn desk() -> Self {
        Self {
            preset: SchedulePreset::Desk,
            ..Self::default()
        }
    }
}

/// Two phases, warm-up then joint. The full-length preset (`Paper`) is 1e-3 for 40 epochs
/// then 1e-4 for 60; the desk preset shortens them to 10 and 20.
pub fn make_schedule(overrides: &ScheduleOverrides) -> Result<Schedule> {
    let (we, je) = match overrides.preset {
        SchedulePreset::Paper => (40, 60),
        SchedulePreset::Desk => (10, 20),
    };
    let schedule = Schedule {
        phases: vec![
            Phase {
                name: "warm-up".into(),
                lr: overrides.warmup_lr.unwrap_or(1e-3),
                epochs: overrides.warmup_epochs.unwrap_or(we),
            },
            Phase {
                name: "joint".into(),
                lr: overrides.joint_lr.unwrap_or(1e-4),
                epochs: overrides.joint_epochs.unwrap_or(je),
            },
        ],
    };
    schedule.validate()?;
    Ok(schedule)
}
