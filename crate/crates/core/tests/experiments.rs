mod common;

use cldrm_core::data::TaskId;
use cldrm_core::experiments::*;
use cldrm_core::strategies::{run_sequence, StrategyKind, TaskSequence};
use cldrm_core::Error;
use common::*;
use proptest::prelude::*;
use std::collections::HashSet;

#[test]
fn six_orders_end_with_the_damage_type_task() {
    let orders = table4_orders();
    assert_eq!(orders.len(), 6);
    let distinct: HashSet<String> = orders.iter().map(|o| o.to_string()).collect();
    assert_eq!(distinct.len(), 6);
    for o in &orders {
        assert_eq!(o.len(), 4);
        assert_eq!(*o.tasks().last().unwrap(), TaskId::DAMAGE_TYPE);
        let mut head = o.tasks()[..3].to_vec();
        head.sort();
        assert_eq!(head, vec![TaskId::DAMAGE_LEVEL, TaskId::SPALLING, TaskId::COMPONENT]);
    }
    assert_eq!(orders[0].to_string(), "1-2-3-4");
}

#[test]
fn evaluation_confusion_matches_the_test_set() {
    let (data, cfg) = tiny_setup();
    let order: TaskSequence = "4-3".parse().unwrap();
    let run = run_sequence(StrategyKind::Cldrm, &order, &data, &cfg, 2).unwrap();
    for t in [TaskId::DAMAGE_TYPE, TaskId::COMPONENT] {
        let test = &data.task(t).unwrap().test;
        let e = evaluate(run.model.as_predictor(), t, test, 3).unwrap();
        let mut counts = vec![0u64; t.spec().class_count()];
        for s in test {
            counts[s.label(t)] += 1;
        }
        assert_eq!(e.confusion.row_sums(), counts);
        assert_eq!(e.accuracy, e.confusion.trace() as f64 / test.len() as f64);
        assert_eq!(e.percent(), run.outcome(t).unwrap().final_measured);
    }
    let missing = evaluate(run.model.as_predictor(), TaskId::SPALLING, &data.task(TaskId::SPALLING).unwrap().test, 8);
    assert!(matches!(missing, Err(Error::Contract(_))));
}

#[test]
fn temperature_sweep_shares_the_first_stage() {
    let (data, cfg) = tiny_setup();
    let pair = (TaskId::DAMAGE_LEVEL, TaskId::SPALLING);
    let sweep = temperature_sweep(&data, &cfg, pair, &DEFAULT_TEMPERATURES, &[3]).unwrap();
    assert_eq!(sweep.values, vec![1.0, 2.0, 5.0, 10.0]);
    assert_eq!(sweep.runs.len(), 4);
    let first = sweep.runs[0].first_stage_trace();
    assert_eq!(first.len(), cfg.schedule.total_epochs());
    for r in &sweep.runs {
        assert_eq!(r.first_stage_trace(), first);
        assert_eq!(r.trace_b.len(), cfg.schedule.total_epochs());
    }
    let ranked: HashSet<u64> = sweep.ranking.iter().map(|(t, _)| t.to_bits()).collect();
    assert_eq!(ranked.len(), 4);
    assert!(sweep.ranking.windows(2).all(|w| w[0].1 >= w[1].1));
    assert!(matches!(temperature_sweep(&data, &cfg, pair, &[0.0], &[1]), Err(Error::Config(_))));
    assert!(matches!(
        temperature_sweep(&data, &cfg, (TaskId::SPALLING, TaskId::SPALLING), &[2.0], &[1]),
        Err(Error::Config(_))
    ));
}

#[test]
fn pair_experiment_traces_both_tasks() {
    let (data, cfg) = tiny_setup();
    let strategies = [StrategyKind::FineTuning, StrategyKind::Cldrm];
    let result = pair_experiment(&data, &cfg, PairKind::Dissimilar, &strategies, &[1, 2]).unwrap();
    assert_eq!(result.traces.len(), 4);
    let n = cfg.schedule.total_epochs();
    for t in &result.traces {
        assert_eq!(t.task_a.len(), 2 * n);
        assert_eq!(t.task_a_zoom.len(), n);
        assert_eq!(t.task_b.len(), n);
        assert_eq!(t.drop_a(), t.initial_a - t.final_a);
        assert_eq!(t.table.rows[0].task, TaskId::COMPONENT);
    }
    assert_eq!(PairKind::Similar.tasks(), (TaskId::DAMAGE_LEVEL, TaskId::SPALLING));
    assert!("unrelated".parse::<PairKind>().is_err());
}

#[test]
fn order_sweep_covers_every_order() {
    let (data, mut cfg) = tiny_setup();
    cfg.schedule.phases.iter_mut().for_each(|p| p.epochs = 1);
    let results = order_sweep(&data, &cfg, &[StrategyKind::Cldrm], &[1]).unwrap();
    let got: Vec<String> = results.iter().map(|r| r.order.clone()).collect();
    let want: Vec<String> = table4_orders().iter().map(|o| o.to_string()).collect();
    assert_eq!(got, want);
    for r in &results {
        assert_eq!(r.table.rows.len(), 4);
        assert!((r.table.average_final - r.table.recompute_average()).abs() < 1e-12);
        let last = r.table.rows.last().unwrap();
        assert_eq!(last.initial, last.final_);
    }
}

#[test]
fn cost_accounting_is_exact() {
    let (data, mut cfg) = tiny_setup();
    cfg.schedule.phases.iter_mut().for_each(|p| p.epochs = 1);
    let report = measured_costs(&data, &cfg, &[StrategyKind::Cldrm, StrategyKind::DuplicateFineTuning, StrategyKind::JointTraining], 1);
    let cldrm = report.entry(StrategyKind::Cldrm).unwrap();
    let dup = report.entry(StrategyKind::DuplicateFineTuning).unwrap();
    let joint = report.entry(StrategyKind::JointTraining).unwrap();
    assert_eq!(dup.trunk_params, 4 * cldrm.trunk_params);
    assert_eq!(cldrm.head_params, dup.head_params);
    assert_eq!((cldrm.prediction_passes, dup.prediction_passes, joint.prediction_passes), (1, 4, 1));
    assert_eq!(cldrm.stored_samples, vec![16; 4]);
    assert_eq!(joint.stored_samples, vec![16, 32, 48, 64]);
    assert_eq!(report.ratio(StrategyKind::DuplicateFineTuning).unwrap().trunk_params, 4.0);
    assert_eq!(report.ratio(StrategyKind::JointTraining).unwrap().stored_samples, 4.0);
    assert!(cost_report(vec![dup.clone()]).is_err());
}

#[test]
fn fan_out_keeps_job_order_and_reports_errors() {
    let squares = fan_out((0..20u64).collect(), |i| Ok(i * i)).unwrap();
    assert_eq!(squares, (0..20u64).map(|i| i * i).collect::<Vec<_>>());
    let failed = fan_out((0..5u64).collect(), |i| if i == 3 { Err(Error::Data("boom".into())) } else { Ok(i) });
    assert!(matches!(failed, Err(Error::Data(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_rows_sum_to_class_counts(k in 1usize..6, pairs in proptest::collection::vec((0usize..6, 0usize..6), 0..60)) {
        let pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(t, p)| (t % k, p % k)).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = ConfusionMatrix::from_pairs(k, &truth, &pred).unwrap();
        let mut counts = vec![0u64; k];
        for &t in &truth {
            counts[t] += 1;
        }
        prop_assert_eq!(m.row_sums(), counts);
        prop_assert_eq!(m.total(), truth.len() as u64);
        let hits = pairs.iter().filter(|(t, p)| t == p).count() as u64;
        prop_assert_eq!(m.trace(), hits);
        if !pairs.is_empty() {
            prop_assert_eq!(m.accuracy(), hits as f64 / pairs.len() as f64);
        }
        prop_assert!(ConfusionMatrix::from_pairs(k, &[k], &[0]).is_err());
    }
}
