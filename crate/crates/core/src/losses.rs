//! Loss terms for adding a task without its predecessors' data.
//!
//! * `L_new`: batch-mean cross entropy of the new head against ground truth.
//! * temperature transform: `p_j^(1/T) / Σ_j p_j^(1/T)`, applied to already
//!   softmaxed probabilities of both teacher and student.
//! * `L_old = Σ_i H(y'_i, ŷ'_i)`, one cross-entropy term per old head.
//! * `L_total = L_new + λ·L_old`.
//!
//! `L_old` is a sum of cross entropies and therefore nonnegative. There is
//! no `T²` rescaling of the distillation gradient.
//!
//! Each operation exists on the autodiff graph (for training) and as a plain
//! value function (for reporting and checks). The value forms run the same
//! graph code on constants.

use crate::error::{contract_err, Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Added inside every logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

/// Floor applied before the `1/T` power so that underflowed probabilities
/// keep a finite derivative. Far below any value a softmax row carries.
const POWER_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    pub lambda: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            lambda: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Scalar breakdown of one training step's loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub new: f64,
    /// One component per old task, in head order.
    pub old: Vec<f64>,
    pub total: f64,
}

/// Teacher and student probability rows per old task.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoftTargets {
    pub teacher: Vec<Tensor>,
    pub student: Vec<Tensor>,
}

fn check_one_hot(onehot: &Tensor) -> Result<(usize, usize)> {
    let (b, k) = onehot.dims2()?;
    for row in onehot.data().chunks(k) {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != k {
            return Err(contract_err!("label row {row:?} is not one-hot"));
        }
    }
    Ok((b, k))
}

/// `−(1/B) Σ_b Σ_j y_bj · log(ŷ_bj + 1e-12)` for a soft or hard target `y`.
fn soft_cross_entropy(g: &mut Graph, target: &Tensor, probs: Var) -> Result<Var> {
    let b = target.dims2()?.0;
    let shifted = g.add_scalar(probs, PROB_CLAMP);
    let logp = g.log(shifted);
    let y = g.constant(target.clone());
    let weighted = g.mul(logp, y)?;
    let s = g.sum(weighted);
    Ok(g.scale(s, -1.0 / b as f64))
}

/// Cross entropy of the new task's head against one-hot ground truth.
pub fn cross_entropy_new(g: &mut Graph, probs: Var, onehot: &Tensor) -> Result<Var> {
    let (b, k) = check_one_hot(onehot)?;
    if g.value(probs).shape() != [b, k] {
        return Err(contract_err!(
            "probabilities {:?} vs labels {b}×{k}",
            g.value(probs).shape()
        ));
    }
    soft_cross_entropy(g, onehot, probs)
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(contract_err!("temperature must be positive, got {t}"))
    }
}

/// Raises each probability to `1/T` and renormalizes every row.
pub fn temperature_transform(g: &mut Graph, probs: Var, t: f64) -> Result<Var> {
    check_temperature(t)?;
    let (_, k) = g.value(probs).dims2()?;
    if g
        .value(probs)
        .data()
        .chunks(k)
        .any(|row| row.iter().all(|&v| v == 0.0))
    {
        return Err(Error::Numeric("cannot temperature-scale an all-zero row".into()));
    }
    let floored = g.clamp_min(probs, POWER_FLOOR);
    let powered = g.powf(floored, 1.0 / t);
    g.normalize_rows(powered)
}

/// `Σ_i H(y'_i, ŷ'_i)` over old tasks. `teacher[i]` are the frozen teacher's
/// softmax rows for old head `i`, `student[i]` the student's.
/// Returns the sum and the per-task components.
pub fn distillation_loss(
    g: &mut Graph,
    teacher: &[Tensor],
    student: &[Var],
    t: f64,
) -> Result<(Var, Vec<Var>)> {
    check_temperature(t)?;
    if teacher.len() != student.len() {
        return Err(contract_err!(
            "{} teacher outputs but {} student outputs",
            teacher.len(),
            student.len()
        ));
    }
    let mut parts = Vec::with_capacity(teacher.len());
    for (y, &yhat) in teacher.iter().zip(student) {
        if y.shape() != g.value(yhat).shape() {
            return Err(contract_err!(
                "teacher {:?} vs student {:?}",
                y.shape(),
                g.value(yhat).shape()
            ));
        }
        let y_soft = temperature_transform_value(y, t)?;
        let yhat_soft = temperature_transform(g, yhat, t)?;
        parts.push(soft_cross_entropy(g, &y_soft, yhat_soft)?);
    }
    let total = match parts.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &p in rest {
                acc = g.add(acc, p)?;
            }
            acc
        }
    };
    Ok((total, parts))
}

/// `L_new + λ·L_old`.
pub fn total_loss(g: &mut Graph, new: Var, old: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(contract_err!("lambda must be nonnegative, got {lambda}"));
    }
    let (n, o) = (g.value(new).item(), g.value(old).item());
    match (n, o) {
        (Some(n), Some(o)) if n.is_finite() && o.is_finite() => {}
        _ => return Err(Error::Numeric("loss components must be finite scalars".into())),
    }
    let weighted = g.scale(old, lambda);
    g.add(new, weighted)
}

pub fn cross_entropy_value(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let l = cross_entropy_new(&mut g, p, onehot)?;
    Ok(g.value(l).data()[0])
}

pub fn temperature_transform_value(probs: &Tensor, t: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = g.constant(probs.clone());
    let out = temperature_transform(&mut g, p, t)?;
    Ok(g.value(out).clone())
}

/// Value form of [`distillation_loss`]: `(L_old, per-task components)`.
pub fn distillation_value(targets: &SoftTargets, t: f64) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let student: Vec<Var> = targets.student.iter().map(|s| g.constant(s.clone())).collect();
    let (total, parts) = distillation_loss(&mut g, &targets.teacher, &student, t)?;
    Ok((
        g.value(total).data()[0],
        parts.iter().map(|&p| g.value(p).data()[0]).collect(),
    ))
}

pub fn total_value(new: f64, old: f64, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (n, o) = (g.constant(Tensor::scalar(new)), g.constant(Tensor::scalar(old)));
    let t = total_loss(&mut g, n, o, lambda)?;
    Ok(g.value(t).data()[0])
}
