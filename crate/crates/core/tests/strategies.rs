mod common;

use cldrm_core::data::TaskId;
use cldrm_core::experiments::initial_final_table;
use cldrm_core::nn::Mode;
use cldrm_core::strategies::*;
use cldrm_core::Error;
use common::*;

fn order(s: &str) -> TaskSequence {
    s.parse().unwrap()
}

#[test]
fn warm_up_freezes_trunk_old_heads_and_statistics() {
    let (data, cfg) = tiny_setup();
    for train_first in [false, true] {
        let r = freeze_contract(&data, &cfg, 3, TaskId::DAMAGE_LEVEL, TaskId::SPALLING, train_first);
        assert!(r.cldrm_warmup_frozen, "{r:?}");
        assert!(r.cldrm_joint_moved_trunk, "{r:?}");
        assert!(r.fine_tuning_old_heads_kept, "{r:?}");
        assert!(r.fine_tuning_moved_trunk, "{r:?}");
    }
}

#[test]
fn feature_extraction_keeps_the_trunk_and_every_old_model() {
    let (data, cfg) = tiny_setup();
    let mut trainer = Trainer::new(&data, &cfg, 4).unwrap();
    let mut net = trainer.build_net().unwrap();
    trainer.train_first_task(&mut net, TaskId::COMPONENT).unwrap();
    let trunk = tensor_bits(&net.params()[..net.partition_params().unwrap().shared.len()]);
    let stats = tensor_bits(&net.running_stats());
    trainer.feature_extraction_add_task(&mut net, TaskId::SPALLING).unwrap();
    trainer.feature_extraction_add_task(&mut net, TaskId::DAMAGE_TYPE).unwrap();
    assert_eq!(tensor_bits(&net.params()[..trunk.len()]), trunk);
    assert_eq!(tensor_bits(&net.running_stats()), stats);

    let run = run_sequence(StrategyKind::FeatureExtraction, &order("3-2-4"), &data, &cfg, 4).unwrap();
    for o in &run.outcomes {
        assert_eq!(o.final_measured, o.last_epoch, "task {}", o.task);
    }
    let table = initial_final_table(&run).unwrap();
    assert!(table.rows.iter().all(|r| r.initial == r.final_));
}

#[test]
fn duplicate_bank_keeps_earlier_predictions_bit_identical() {
    let (data, cfg) = tiny_setup();
    let mut trainer = Trainer::new(&data, &cfg, 5).unwrap();
    let mut net = trainer.build_net().unwrap();
    trainer.train_first_task(&mut net, TaskId::DAMAGE_LEVEL).unwrap();
    let mut bank = ModelBank::new();
    bank.push(net);
    let probe = cldrm_core::Tensor::stack(
        &data.task(TaskId::DAMAGE_LEVEL).unwrap().test.iter().map(|s| &s.image).collect::<Vec<_>>(),
    )
    .unwrap();
    let before = bank.models()[0].forward_all_heads(&probe, Mode::Eval).unwrap();
    trainer.duplicate_fine_tune_add_task(&mut bank, TaskId::SPALLING).unwrap();
    trainer.duplicate_fine_tune_add_task(&mut bank, TaskId::COMPONENT).unwrap();
    let after = bank.models()[0].forward_all_heads(&probe, Mode::Eval).unwrap();
    assert_eq!(tensor_bits(&before.iter().collect::<Vec<_>>()), tensor_bits(&after.iter().collect::<Vec<_>>()));
    assert_eq!(bank.len(), 3);
    assert!(bank.models().iter().all(|m| m.heads().len() == 1));
    assert_eq!(bank.model_for(TaskId::COMPONENT).unwrap().head_tasks(), vec![TaskId::COMPONENT]);
    assert_eq!(bank.trunk_param_count(), 3 * bank.models()[0].trunk_param_count());
}

#[test]
fn joint_training_needs_every_dataset() {
    let (data, cfg) = tiny_setup();
    for missing in [TaskId::DAMAGE_LEVEL, TaskId::SPALLING] {
        let partial = data.without(missing);
        let err = run_sequence(StrategyKind::JointTraining, &order("1-2"), &partial, &cfg, 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
    }
    let run = run_sequence(StrategyKind::JointTraining, &order("1-2"), &data, &cfg, 1).unwrap();
    let last = run.storage.last().unwrap();
    assert_eq!(last.tasks_read, vec![TaskId::DAMAGE_LEVEL, TaskId::SPALLING]);
    assert_eq!(last.stored_samples, data.train_size(TaskId::DAMAGE_LEVEL) + data.train_size(TaskId::SPALLING));
}

#[test]
fn cldrm_reads_only_the_new_task() {
    let (data, cfg) = tiny_setup();
    let run = run_sequence(StrategyKind::Cldrm, &order("2-1-3"), &data, &cfg, 2).unwrap();
    for (s, &t) in run.storage.iter().zip(run.order.tasks()) {
        assert_eq!(s.tasks_read, vec![t]);
        assert_eq!(s.stored_samples, data.train_size(t));
    }
    let err = run_sequence(StrategyKind::Cldrm, &order("1-2"), &data.without(TaskId::SPALLING), &cfg, 2).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn adding_a_task_needs_a_trained_network() {
    let (data, cfg) = tiny_setup();
    let mut trainer = Trainer::new(&data, &cfg, 1).unwrap();
    let mut net = trainer.build_net().unwrap();
    assert!(matches!(trainer.cldrm_add_task(&mut net, TaskId::SPALLING), Err(Error::Contract(_))));
    assert!(matches!(trainer.fine_tuning_add_task(&mut net, TaskId::SPALLING), Err(Error::Contract(_))));
}

#[test]
fn training_lowers_the_loss_and_reruns_are_identical() {
    let (data, mut cfg) = tiny_setup();
    cfg.schedule.phases[0].epochs = 6;
    cfg.schedule.phases[0].lr = 0.05;
    let a = run_sequence(StrategyKind::FineTuning, &order("2"), &data, &cfg, 9).unwrap();
    let first = a.epochs.first().unwrap().train_loss;
    let last = a.epochs.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    let b = run_sequence(StrategyKind::FineTuning, &order("2"), &data, &cfg, 9).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.outcomes, b.outcomes);
}

#[test]
fn every_strategy_reports_one_outcome_per_task() {
    let (data, cfg) = tiny_setup();
    for s in StrategyKind::ALL {
        let run = run_sequence(s, &order("4-1"), &data, &cfg, 6).unwrap();
        assert_eq!(run.outcomes.iter().map(|o| o.task).collect::<Vec<_>>(), vec![TaskId::DAMAGE_TYPE, TaskId::DAMAGE_LEVEL]);
        let predictor = run.model.as_predictor();
        assert_eq!(predictor.tasks().len(), 2);
        assert_eq!(run.epochs.len(), 2 * cfg.schedule.total_epochs());
        assert!(run.epochs.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    }
}
