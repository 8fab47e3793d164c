#![allow(dead_code)]

use cldrm_core::rng::SeededRng;
use cldrm_core::{Graph, Result, Tensor, Var};

/// Relative error with a 1e-3 floor on the magnitude, so entries whose true
/// derivative is ~0 are judged on absolute error instead.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn uniform_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap()
}

/// Compares backward() against central differences (eps = 1e-6) for every
/// entry of every input. Returns the worst relative error.
pub fn gradcheck<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eps = 1e-6;
    let mut worst = 0.0f64;
    let mut vals = inputs.to_vec();
    for i in 0..vals.len() {
        for j in 0..vals[i].len() {
            let orig = vals[i].data()[j];
            vals[i].data_mut()[j] = orig + eps;
            let up = eval(&vals);
            vals[i].data_mut()[j] = orig - eps;
            let down = eval(&vals);
            vals[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed random projection so that
/// every output entry carries a distinct weight.
pub fn project(g: &mut Graph, v: Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed);
    let w = uniform_tensor(g.value(v).shape(), &mut rng);
    let wv = g.constant(w);
    let m = g.mul(v, wv)?;
    Ok(g.sum(m))
}

/// Worst finite-difference error of every autodiff op on random inputs drawn from `seed`.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = SeededRng::new(seed);
    let mut u = |s: &[usize]| uniform_tensor(s, &mut rng);
    let (a, b) = (u(&[3, 4]), u(&[3, 4]));
    let checks: Vec<(&str, f64)> = vec![
        ("add", gradcheck(&[a.clone(), b.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 1)
        })),
        ("sub", gradcheck(&[a.clone(), b.clone()], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 2)
        })),
        ("mul", gradcheck(&[a.clone(), b.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 3)
        })),
        ("scale", gradcheck(&[a.clone()], |g, v| {
            let y = g.scale(v[0], -2.5);
            project(g, y, 4)
        })),
        ("matmul", gradcheck(&[a.clone(), u(&[4, 2])], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 5)
        })),
        ("row_bias", gradcheck(&[a.clone(), u(&[4])], |g, v| {
            let y = g.add_row_bias(v[0], v[1])?;
            project(g, y, 6)
        })),
        ("conv2d", gradcheck(&[u(&[2, 2, 5, 5]), u(&[3, 2, 3, 3]), u(&[3])], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            project(g, y, 7)
        })),
        ("relu", gradcheck(&[a.clone()], |g, v| {
            let y = g.relu(v[0]);
            project(g, y, 8)
        })),
        ("gap", gradcheck(&[u(&[2, 3, 4, 4])], |g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, 9)
        })),
        ("maxpool", gradcheck(&[u(&[2, 2, 4, 4])], |g, v| {
            let y = g.max_pool2(v[0])?;
            project(g, y, 10)
        })),
        ("bn_train", gradcheck(&[u(&[3, 2, 3, 3]), u(&[2]), u(&[2])], |g, v| {
            let (y, _) = g.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 11)
        })),
        ("bn_eval", gradcheck(&[u(&[3, 2, 3, 3]), u(&[2]), u(&[2])], |g, v| {
            let y = g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2], &[0.5, 1.5], 1e-5)?;
            project(g, y, 12)
        })),
        ("flatten", gradcheck(&[u(&[2, 2, 2, 2])], |g, v| {
            let y = g.flatten(v[0])?;
            project(g, y, 13)
        })),
        ("log", gradcheck(&[a.map(|x| x.abs() + 0.5)], |g, v| {
            let y = g.log(v[0]);
            project(g, y, 14)
        })),
        ("pow", gradcheck(&[a.map(|x| x.abs() + 0.5)], |g, v| {
            let y = g.powf(v[0], 0.5);
            project(g, y, 15)
        })),
        ("softmax", gradcheck(&[a.clone()], |g, v| {
            let y = g.softmax_rows(v[0])?;
            project(g, y, 16)
        })),
        ("normalize_rows", gradcheck(&[a.map(|x| x.abs() + 0.1)], |g, v| {
            let y = g.normalize_rows(v[0])?;
            project(g, y, 17)
        })),
        ("sum", gradcheck(&[a.clone()], |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        })),
        ("add_scalar", gradcheck(&[a.clone()], |g, v| {
            let y = g.add_scalar(v[0], 0.75);
            project(g, y, 18)
        })),
        ("clamp_min", gradcheck(&[a.clone()], |g, v| {
            let y = g.clamp_min(v[0], 0.05);
            project(g, y, 19)
        })),
        ("reshape", gradcheck(&[a.clone()], |g, v| {
            let y = g.reshape(v[0], vec![2, 6])?;
            project(g, y, 20)
        })),
        ("mean", gradcheck(&[a.clone()], |g, v| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.mean(y))
        })),
    ];
    checks
}

/// Tiny corpus and config that train in well under a second per stage.
pub fn tiny_setup() -> (cldrm_core::data::DatasetSplit, cldrm_core::strategies::TrainConfig) {
    use cldrm_core::data::{generate_corpus, CorpusSizes};
    use cldrm_core::optim::Phase;
    use cldrm_core::strategies::TrainConfig;
    let data = generate_corpus(1, &CorpusSizes::uniform(16, 8, 16)).unwrap();
    let mut cfg = TrainConfig::desk();
    cfg.trunk.input = [3, 16, 16];
    cfg.batch_size = 8;
    cfg.schedule.phases = vec![
        Phase { name: "warmup".into(), lr: 1e-3, epochs: 2 },
        Phase { name: "joint".into(), lr: 1e-4, epochs: 2 },
    ];
    (data, cfg)
}

/// Cross entropy `−(1/B) Σ y·ln(p + 1e-12)` in plain loops.
pub fn oracle_cross_entropy(probs: &Tensor, target: &Tensor) -> f64 {
    let b = probs.shape()[0] as f64;
    -probs
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, y)| y * (p + 1e-12).ln())
        .sum::<f64>()
        / b
}

/// `p^(1/T)` renormalized per row, in plain loops.
pub fn oracle_temperature(probs: &Tensor, t: f64) -> Tensor {
    let k = probs.shape()[1];
    let mut out = Vec::with_capacity(probs.len());
    for row in probs.data().chunks(k) {
        let powered: Vec<f64> = row.iter().map(|p| p.max(1e-300).powf(1.0 / t)).collect();
        let s: f64 = powered.iter().sum();
        out.extend(powered.iter().map(|v| v / s));
    }
    Tensor::new(probs.shape().to_vec(), out).unwrap()
}

/// `L_new + λ Σ_i H(y'_i, ŷ'_i)` recomputed from a recorded step.
pub fn oracle_total(probe: &cldrm_core::strategies::LossProbe) -> f64 {
    let new: f64 = probe.supervised.iter().map(|(p, y)| oracle_cross_entropy(p, y)).sum();
    let t = probe.distill.temperature;
    let old: f64 = probe
        .targets
        .teacher
        .iter()
        .zip(&probe.targets.student)
        .map(|(y, yhat)| oracle_cross_entropy(&oracle_temperature(yhat, t), &oracle_temperature(y, t)))
        .sum();
    new + probe.distill.lambda * old
}

/// Full distillation objective through the desk trunk and three heads
/// (two old, one new) on a batch of two images in training mode.
/// Compares backward() against central differences (eps = 1e-6) on
/// `coords` random entries of every parameter tensor; returns the worst
/// relative error and the number of entries checked.
/// Central differences on sampled coordinates of the full objective. A
/// mismatching coordinate whose differences at ε and ε/2 disagree with each
/// other sits on a ReLU kink and is redrawn; the third value counts redraws.
pub fn cldrm_loss_gradient_error(seed: u64, coords: usize) -> (f64, usize, usize) {
    use cldrm_core::data::TaskId;
    use cldrm_core::losses::{cross_entropy_new, distillation_loss, total_loss, DistillConfig};
    use cldrm_core::nn::{Mode, MultiHeadNet, TrunkConfig};
    use cldrm_core::strategies::TeacherSnapshot;

    let mut rng = SeededRng::new(seed);
    let mut net = MultiHeadNet::build(&TrunkConfig::desk(), &mut rng).unwrap();
    net.append_head(TaskId::DAMAGE_LEVEL, 3, &mut rng).unwrap();
    net.append_head(TaskId::COMPONENT, 3, &mut rng).unwrap();
    let teacher_net = {
        let mut t = net.clone();
        for p in t.params_mut() {
            for v in p.data_mut() {
                *v += 0.05 * rng.normal();
            }
        }
        t
    };
    net.append_head(TaskId::SPALLING, 2, &mut rng).unwrap();
    let images = Tensor::new(vec![2, 3, 32, 32], (0..2 * 3 * 32 * 32).map(|_| rng.range(-1.0, 1.0)).collect()).unwrap();
    let onehot = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let teacher = TeacherSnapshot::capture(&teacher_net).probabilities(&images).unwrap();
    let distill = DistillConfig {
        temperature: rng.range(1.0, 5.0),
        lambda: rng.range(0.5, 2.0),
    };

    let loss = |g: &mut Graph, params: &[Var]| -> Result<Var> {
        let x = g.constant(images.clone());
        let out = net.forward(g, params, x, Mode::Train)?;
        let new = g.softmax_rows(out.logits[2])?;
        let ce = cross_entropy_new(g, new, &onehot)?;
        let student = vec![g.softmax_rows(out.logits[0])?, g.softmax_rows(out.logits[1])?];
        let (old, _) = distillation_loss(g, &teacher, &student, distill.temperature)?;
        total_loss(g, ce, old, distill.lambda)
    };
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let l = loss(&mut g, &vars).unwrap();
        g.value(l).item().unwrap()
    };

    let mut vals: Vec<Tensor> = net.params().into_iter().cloned().collect();
    let mut g = Graph::new();
    let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
    let l = loss(&mut g, &vars).unwrap();
    g.backward(l).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad(v).unwrap().clone()).collect();

    let eps = 1e-6;
    let central = |vals: &mut Vec<Tensor>, i: usize, j: usize, h: f64| -> f64 {
        let orig = vals[i].data()[j];
        vals[i].data_mut()[j] = orig + h;
        let up = eval(vals);
        vals[i].data_mut()[j] = orig - h;
        let down = eval(vals);
        vals[i].data_mut()[j] = orig;
        (up - down) / (2.0 * h)
    };
    let (mut worst, mut checked, mut kinks) = (0.0f64, 0usize, 0usize);
    for i in 0..vals.len() {
        let n = vals[i].len();
        let mut done = 0;
        while done < coords.min(n) {
            let j = rng.below(n);
            let numeric = central(&mut vals, i, j, eps);
            let err = rel_err(analytic[i].data()[j], numeric);
            if err > 1e-5 && kinks < 64 && rel_err(numeric, central(&mut vals, i, j, eps / 2.0)) > 1e-5 {
                kinks += 1;
                continue;
            }
            worst = worst.max(err);
            checked += 1;
            done += 1;
        }
    }
    (worst, checked, kinks)
}

pub fn tensor_bits(tensors: &[&Tensor]) -> Vec<Vec<u64>> {
    tensors.iter().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

/// Outcome of the freeze checks on one task addition.
#[derive(Debug)]
pub struct FreezeReport {
    /// θs, θo and running statistics bitwise equal at the end of the CLDRM warm-up.
    pub cldrm_warmup_frozen: bool,
    /// The CLDRM joint phase did move θs (so the check above is not vacuous).
    pub cldrm_joint_moved_trunk: bool,
    /// θo bitwise equal after the whole fine-tuning addition.
    pub fine_tuning_old_heads_kept: bool,
    pub fine_tuning_moved_trunk: bool,
}

/// Adds `second` to a network that already holds a head for `first`, once
/// with CLDRM and once with fine-tuning, and checks which parameters moved.
/// With `train_first` false the first head keeps its initial weights.
pub fn freeze_contract(
    data: &cldrm_core::data::DatasetSplit,
    config: &cldrm_core::strategies::TrainConfig,
    seed: u64,
    first: cldrm_core::data::TaskId,
    second: cldrm_core::data::TaskId,
    train_first: bool,
) -> FreezeReport {
    use cldrm_core::strategies::Trainer;
    use std::cell::RefCell;
    use std::rc::Rc;

    let mut base = Trainer::new(data, config, seed).unwrap();
    let mut net = base.build_net().unwrap();
    if train_first {
        base.train_first_task(&mut net, first).unwrap();
    } else {
        net.append_head(first, first.spec().class_count(), &mut SeededRng::new(seed)).unwrap();
        net.mark_all_old();
    }
    let n_before = net.params().len();
    let params_before = tensor_bits(&net.params());
    let stats_before = tensor_bits(&net.running_stats());

    let seen: Rc<RefCell<Vec<(String, Vec<Vec<u64>>, Vec<Vec<u64>>)>>> = Rc::default();
    let mut cldrm_net = net.clone();
    {
        let mut trainer = Trainer::new(data, config, seed).unwrap();
        trainer.resume_after(1);
        let sink = Rc::clone(&seen);
        trainer.observe(move |end| {
            let params = tensor_bits(&end.net.params()[..n_before]);
            let stats = tensor_bits(&end.net.running_stats());
            sink.borrow_mut().push((end.phase.to_string(), params, stats));
        });
        trainer.cldrm_add_task(&mut cldrm_net, second).unwrap();
    }
    let seen = seen.borrow();
    let warm = &seen[0];
    let joint = seen.last().unwrap();
    let shared = net.partition_params().unwrap().shared.len();

    let mut ft_net = net.clone();
    let mut trainer = Trainer::new(data, config, seed).unwrap();
    trainer.resume_after(1);
    trainer.fine_tuning_add_task(&mut ft_net, second).unwrap();
    let ft_params = tensor_bits(&ft_net.params()[..n_before]);

    FreezeReport {
        cldrm_warmup_frozen: seen.len() == config.schedule.phases.len()
            && warm.0 == config.schedule.warmup().name
            && warm.1 == params_before
            && warm.2 == stats_before,
        cldrm_joint_moved_trunk: joint.1[..shared] != params_before[..shared],
        fine_tuning_old_heads_kept: ft_params[shared..] == params_before[shared..],
        fine_tuning_moved_trunk: ft_params[..shared] != params_before[..shared],
    }
}

/// Runs each strategy over `1-2-3-4` and measures its cost counters.
pub fn measured_costs(
    data: &cldrm_core::data::DatasetSplit,
    config: &cldrm_core::strategies::TrainConfig,
    strategies: &[cldrm_core::strategies::StrategyKind],
    seed: u64,
) -> cldrm_core::experiments::CostReport {
    use cldrm_core::data::TaskId;
    use cldrm_core::experiments::{cost_report, measure_cost};
    use cldrm_core::strategies::{run_sequence, TaskSequence};
    let order = TaskSequence::new(TaskId::ALL.to_vec()).unwrap();
    let probe = Tensor::stack(&[&data.task(TaskId::DAMAGE_LEVEL).unwrap().test[0].image]).unwrap();
    let entries = strategies
        .iter()
        .map(|&s| measure_cost(&run_sequence(s, &order, data, config, seed).unwrap(), &probe).unwrap())
        .collect();
    cost_report(entries).unwrap()
}

/// Outcome of the persistence checks on one trained run.
#[derive(Debug)]
pub struct PersistenceReport {
    pub metrics_identical: bool,
    pub metrics_bytes: usize,
    pub logits_bit_exact: bool,
    pub newer_version_refused: bool,
}

/// Trains `order` twice with the same seed, compares the metric CSVs,
/// round-trips the first model through a checkpoint file and offers the
/// loader a checkpoint stamped with the next format version.
pub fn persistence_checks(
    data: &cldrm_core::data::DatasetSplit,
    config: &cldrm_core::strategies::TrainConfig,
    order: &str,
    seed: u64,
) -> PersistenceReport {
    use cldrm_core::experiments::metric_rows;
    use cldrm_core::io::*;
    use cldrm_core::nn::Mode;
    use cldrm_core::strategies::{run_sequence, StrategyKind, TrainedModel};
    use cldrm_core::Error;

    let order = order.parse().unwrap();
    let csv = || {
        let run = run_sequence(StrategyKind::Cldrm, &order, data, config, seed).unwrap();
        let bytes = metrics_csv_bytes(&metric_rows(&run, "r")).unwrap();
        (run, bytes)
    };
    let (run, first) = csv();
    let (_, second) = csv();

    let TrainedModel::Single(net) = &run.model else { panic!("cldrm trains one network") };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.clwf");
    save_checkpoint(net, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let images = Tensor::stack(&data.tasks[0].test.iter().map(|s| &s.image).collect::<Vec<_>>()).unwrap();
    let a = net.forward_all_heads(&images, Mode::Eval).unwrap();
    let b = loaded.forward_all_heads(&images, Mode::Eval).unwrap();

    let mut bytes = encode_checkpoint(&Checkpoint::new(net.clone()));
    bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let body = bytes.len() - 32;
    let digest = hex::decode(sha256_hex(&bytes[..body])).unwrap();
    bytes[body..].copy_from_slice(&digest);
    let refused = matches!(
        decode_checkpoint(&bytes),
        Err(Error::Version { found, expected }) if found == CHECKPOINT_VERSION + 1 && expected == CHECKPOINT_VERSION
    );

    PersistenceReport {
        metrics_identical: first == second,
        metrics_bytes: first.len(),
        logits_bit_exact: tensor_bits(&a.iter().collect::<Vec<_>>()) == tensor_bits(&b.iter().collect::<Vec<_>>()),
        newer_version_refused: refused,
    }
}

/// Cheapest trunk whose feature dimension is 512.
pub fn wide_feature_trunk() -> cldrm_core::nn::TrunkConfig {
    cldrm_core::nn::TrunkConfig {
        input: [3, 8, 8],
        stem_channels: 8,
        stage_blocks: vec![1],
        stage_channels: vec![512],
        ..cldrm_core::nn::TrunkConfig::desk()
    }
}

/// Appends an `m`-class head, then an `n`-class head. Returns the parameter
/// count added by the second head, the combined head matrix shape, and
/// whether every earlier parameter stayed bitwise equal.
pub fn head_growth(config: &cldrm_core::nn::TrunkConfig, m: usize, n: usize, seed: u64) -> (usize, Vec<usize>, bool) {
    use cldrm_core::data::TaskId;
    use cldrm_core::nn::MultiHeadNet;
    let mut rng = SeededRng::new(seed);
    let mut net = MultiHeadNet::build(config, &mut rng).unwrap();
    net.append_head(TaskId::DAMAGE_LEVEL, m, &mut rng).unwrap();
    let before = tensor_bits(&net.params());
    let count = net.param_count();
    net.append_head(TaskId::SPALLING, n, &mut rng).unwrap();
    let kept = tensor_bits(&net.params()[..before.len()]) == before;
    (net.param_count() - count, net.combined_head_weight().shape().to_vec(), kept)
}
