use crate::{Command, Common};
use cldrm_core::data::{generate_corpus, read_corpus, DatasetSplit, TaskId};
use cldrm_core::experiments::{
    cost_report, fan_out, initial_final_table, measure_cost, metric_rows, order_sweep, pair_experiment,
    temperature_sweep, AccuracyTable, MetricRow, PairKind, DEFAULT_TEMPERATURES,
};
use cldrm_core::io::{
    encode_checkpoint, line_chart, load_config, metrics_csv_bytes, read_checkpoint, read_metrics_csv, write_atomic,
    Checkpoint, ExperimentConfig, Manifest, Series, Summary,
};
use cldrm_core::rng::SeededRng;
use cldrm_core::strategies::{
    run_sequence, StrategyKind, StrategyRun, TaskSequence, TrainConfig, TrainedModel, Trainer,
};
use cldrm_core::{Error, Result, Tensor};
use serde_json::json;
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

/// Output directory plus the manifest of everything written into it.
struct Output {
    dir: PathBuf,
    manifest: Manifest,
}

impl Output {
    fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            dir: cfg.out.clone(),
            manifest: Manifest::new(command, cfg),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.manifest.record(name, bytes);
        println!("wrote {}", path.display());
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let path = self.dir.join("manifest.json");
        self.manifest.write(&path)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn resolve_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if common.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(order) = &common.order {
        cfg.order = order.parse()?;
    }
    if let Some(t) = common.temperature {
        cfg.distill.temperature = t;
    }
    if let Some(l) = common.lambda {
        cfg.distill.lambda = l;
    }
    if let Some(s) = &common.strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    match &cfg.corpus.path {
        Some(path) => read_corpus(path),
        None => generate_corpus(cfg.corpus.seed, &cfg.corpus.sizes),
    }
}

fn run_id(strategy: StrategyKind, order: &str, seed: u64) -> String {
    format!("{strategy}-{order}-s{seed}")
}

fn checkpoint_bytes(net: &cldrm_core::nn::MultiHeadNet, cfg: &ExperimentConfig) -> Vec<u8> {
    encode_checkpoint(&Checkpoint {
        net: net.clone(),
        rng: Some(SeededRng::new(cfg.seed).state()),
        config_hash: cfg.hash(),
    })
}

fn write_models(out: &mut Output, run: &StrategyRun, cfg: &ExperimentConfig) -> Result<()> {
    match &run.model {
        TrainedModel::Single(net) => out.write("model.clwf", &checkpoint_bytes(net, cfg)),
        TrainedModel::Bank(bank) => {
            for net in bank.models() {
                let task = net.head_tasks().first().copied().expect("bank models have a head");
                out.write(&format!("model-task{task}.clwf"), &checkpoint_bytes(net, cfg))?;
            }
            Ok(())
        }
    }
}

fn trace_rows(
    run_id: &str,
    strategy: StrategyKind,
    order: &str,
    temperature: f64,
    seed: u64,
    traces: &[(TaskId, &[(usize, f64)])],
) -> Vec<MetricRow> {
    let mut rows: Vec<MetricRow> = traces
        .iter()
        .flat_map(|&(task, trace)| {
            trace.iter().map(move |&(epoch, accuracy)| MetricRow {
                run_id: run_id.into(),
                strategy,
                order: order.into(),
                temperature,
                seed,
                epoch,
                task: task.get(),
                split: "test".into(),
                accuracy,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.epoch, r.task));
    rows
}

fn tables_csv(tables: &[AccuracyTable]) -> String {
    let mut s = String::from("strategy,order,seed,task,initial,final\n");
    for t in tables {
        for r in &t.rows {
            let _ = writeln!(s, "{},{},{},{},{:.2},{:.2}", t.strategy, t.order, t.seed, r.task, r.initial, r.final_);
        }
        let _ = writeln!(s, "{},{},{},average,,{:.2}", t.strategy, t.order, t.seed, t.average_final);
    }
    s
}

fn selected_strategies(common: &Common, cfg: &ExperimentConfig) -> Vec<StrategyKind> {
    if common.strategy.is_some() {
        vec![cfg.strategy]
    } else {
        StrategyKind::ALL.to_vec()
    }
}

fn seeds_or(seeds: &[u64], cfg: &ExperimentConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds.to_vec()
    }
}

pub fn run(common: &Common, command: &Command) -> Result<()> {
    let cfg = resolve_config(common)?;
    let train = cfg.train_config()?;
    match command {
        Command::GenerateData => generate_data(&cfg),
        Command::Train => train_cmd(&cfg, &train),
        Command::AddTask { checkpoint, task } => add_task(&cfg, &train, checkpoint, *task),
        Command::Compare => compare(&cfg, &train),
        Command::SweepTemp { temperatures, seeds } => sweep_temp(&cfg, &train, temperatures, &seeds_or(seeds, &cfg)),
        Command::SweepOrder { seeds } => sweep_order(common, &cfg, &train, &seeds_or(seeds, &cfg)),
        Command::Pair { pair, seeds } => pair_cmd(common, &cfg, &train, pair, &seeds_or(seeds, &cfg)),
        Command::Cost => cost(common, &cfg, &train),
        Command::Report { input } => report(&cfg, input.as_deref().unwrap_or(&cfg.out)),
    }
}

fn generate_data(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = Output::new("generate-data", cfg);
    let data = generate_corpus(cfg.corpus.seed, &cfg.corpus.sizes)?;
    out.write("corpus.clds", &cldrm_core::data::encode_corpus(&data))?;
    out.finish()
}

fn train_cmd(cfg: &ExperimentConfig, train: &TrainConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let mut out = Output::new("train", cfg);
    let run = run_sequence(cfg.strategy, &cfg.order, &data, train, cfg.seed)?;
    let id = run_id(run.strategy, &run.order.to_string(), run.seed);
    out.write("metrics.csv", &metrics_csv_bytes(&metric_rows(&run, &id))?)?;
    let table = initial_final_table(&run)?;
    out.write(&format!("table-{}.csv", run.strategy), table.to_csv().as_bytes())?;
    write_models(&mut out, &run, cfg)?;
    let summary = Summary::new("train", cfg.seed, vec![table], json!({ "run_id": id }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn add_task(cfg: &ExperimentConfig, train: &TrainConfig, checkpoint: &Path, task: u8) -> Result<()> {
    let task = TaskId::new(task).map_err(|e| Error::Config(e.to_string()))?;
    let data = load_data(cfg)?;
    let mut net = read_checkpoint(checkpoint)?.net;
    if net.head_index(task).is_some() {
        return Err(Error::Config(format!("{} already has a head for task {task}", checkpoint.display())));
    }
    if net.heads().is_empty() {
        return Err(Error::Config(format!("{} has no trained task", checkpoint.display())));
    }
    if net.config() != &train.trunk {
        return Err(Error::Config("checkpoint trunk differs from the configured trunk".into()));
    }
    let mut out = Output::new("add-task", cfg);
    let mut trainer = Trainer::new(&data, train, cfg.seed)?;
    trainer.resume_after(net.heads().len());
    let outcome = match cfg.strategy {
        StrategyKind::Cldrm => {
            let (o, teacher) = trainer.cldrm_add_task(&mut net, task)?;
            out.write("teacher.clwf", &checkpoint_bytes(teacher.net(), cfg))?;
            o
        }
        StrategyKind::FineTuning => trainer.fine_tuning_add_task(&mut net, task)?,
        StrategyKind::FeatureExtraction => trainer.feature_extraction_add_task(&mut net, task)?,
        other => {
            return Err(Error::Config(format!(
                "add-task supports cldrm, fine-tuning and feature-extraction, not {other}"
            )))
        }
    };
    let order = TaskSequence::new(net.head_tasks())?;
    let id = run_id(cfg.strategy, &order.to_string(), cfg.seed);
    let mut rows = Vec::new();
    for r in &trainer.epochs {
        for &(t, acc) in &r.accuracies {
            rows.extend(trace_rows(&id, cfg.strategy, &order.to_string(), cfg.distill.temperature, cfg.seed, &[(t, &[(r.epoch, acc)])]));
        }
    }
    out.write("metrics.csv", &metrics_csv_bytes(&rows)?)?;
    out.write("model.clwf", &checkpoint_bytes(&net, cfg))?;
    let summary = Summary::new("add-task", cfg.seed, vec![], json!({ "run_id": id, "outcome": outcome }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn compare(cfg: &ExperimentConfig, train: &TrainConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let mut out = Output::new("compare", cfg);
    let runs = fan_out(StrategyKind::ALL.to_vec(), |k| run_sequence(k, &cfg.order, &data, train, cfg.seed))?;
    let mut rows = Vec::new();
    let mut tables = Vec::new();
    for run in &runs {
        rows.extend(metric_rows(run, &run_id(run.strategy, &run.order.to_string(), run.seed)));
        let table = initial_final_table(run)?;
        out.write(&format!("table-{}.csv", run.strategy), table.to_csv().as_bytes())?;
        tables.push(table);
    }
    out.write("metrics.csv", &metrics_csv_bytes(&rows)?)?;
    out.write("summary.csv", tables_csv(&tables).as_bytes())?;
    let summary = Summary::new("compare", cfg.seed, tables, json!({ "order": cfg.order.to_string() }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn sweep_temp(cfg: &ExperimentConfig, train: &TrainConfig, temperatures: &[f64], seeds: &[u64]) -> Result<()> {
    let tasks = cfg.order.tasks();
    if tasks.len() < 2 {
        return Err(Error::Config("sweep-temp needs an order with at least two tasks".into()));
    }
    let pair = (tasks[0], tasks[1]);
    let temps = if temperatures.is_empty() { DEFAULT_TEMPERATURES.to_vec() } else { temperatures.to_vec() };
    let data = load_data(cfg)?;
    let mut out = Output::new("sweep-temp", cfg);
    let result = temperature_sweep(&data, train, pair, &temps, seeds)?;
    let order = format!("{}-{}", pair.0, pair.1);
    let mut rows = Vec::new();
    for r in &result.runs {
        let id = format!("cldrm-{order}-T{}-s{}", r.temperature, r.seed);
        rows.extend(trace_rows(&id, StrategyKind::Cldrm, &order, r.temperature, r.seed, &[(pair.0, &r.trace_a), (pair.1, &r.trace_b)]));
    }
    out.write("metrics.csv", &metrics_csv_bytes(&rows)?)?;
    out.write("sweep-temp.json", &serde_json::to_vec_pretty(&result)?)?;
    let mut ranking = String::from("temperature,mean_final_task_a\n");
    for (t, acc) in &result.ranking {
        let _ = writeln!(ranking, "{t},{acc:.2}");
    }
    out.write("ranking.csv", ranking.as_bytes())?;
    let tables = result.runs.iter().map(|r| r.table.clone()).collect();
    let summary = Summary::new("sweep-temp", cfg.seed, tables, json!({ "temperatures": temps, "ranking": result.ranking }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn sweep_order(common: &Common, cfg: &ExperimentConfig, train: &TrainConfig, seeds: &[u64]) -> Result<()> {
    let data = load_data(cfg)?;
    let mut out = Output::new("sweep-order", cfg);
    let results = order_sweep(&data, train, &selected_strategies(common, cfg), seeds)?;
    let tables: Vec<AccuracyTable> = results.into_iter().map(|r| r.table).collect();
    out.write("order-sweep.csv", tables_csv(&tables).as_bytes())?;
    let summary = Summary::new("sweep-order", cfg.seed, tables, json!({ "seeds": seeds }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn pair_cmd(common: &Common, cfg: &ExperimentConfig, train: &TrainConfig, pair: &str, seeds: &[u64]) -> Result<()> {
    let kind: PairKind = pair.parse()?;
    let data = load_data(cfg)?;
    let mut out = Output::new("pair", cfg);
    let result = pair_experiment(&data, train, kind, &selected_strategies(common, cfg), seeds)?;
    let (a, b) = kind.tasks();
    let order = format!("{a}-{b}");
    let mut rows = Vec::new();
    for t in &result.traces {
        let id = run_id(t.strategy, &order, t.seed);
        rows.extend(trace_rows(&id, t.strategy, &order, cfg.distill.temperature, t.seed, &[(a, &t.task_a), (b, &t.task_b)]));
    }
    out.write("metrics.csv", &metrics_csv_bytes(&rows)?)?;
    out.write(&format!("pair-{kind}.json"), &serde_json::to_vec_pretty(&result)?)?;
    let mut drops = String::from("strategy,seed,initial_a,final_a,drop_a\n");
    for t in &result.traces {
        let _ = writeln!(drops, "{},{},{:.2},{:.2},{:.2}", t.strategy, t.seed, t.initial_a, t.final_a, t.drop_a());
    }
    out.write("drops.csv", drops.as_bytes())?;
    let tables = result.traces.iter().map(|t| t.table.clone()).collect();
    let summary = Summary::new("pair", cfg.seed, tables, json!({ "pair": kind }));
    out.write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    out.finish()
}

fn cost(common: &Common, cfg: &ExperimentConfig, train: &TrainConfig) -> Result<()> {
    let data = load_data(cfg)?;
    let mut out = Output::new("cost", cfg);
    let mut strategies = selected_strategies(common, cfg);
    if !strategies.contains(&StrategyKind::Cldrm) {
        strategies.insert(0, StrategyKind::Cldrm);
    }
    let first = &data.task(cfg.order.tasks()[0])?.test[0].image;
    let probe = Tensor::new([&[1], first.shape()].concat(), first.data().to_vec())?;
    let entries = fan_out(strategies, |k| measure_cost(&run_sequence(k, &cfg.order, &data, train, cfg.seed)?, &probe))?;
    let report = cost_report(entries)?;
    let mut csv = String::from(
        "strategy,tasks,total_params,trunk_params,head_params,samples_read_last_task,prediction_passes,\
         ratio_total_params,ratio_trunk_params,ratio_samples,ratio_passes\n",
    );
    for (e, r) in report.entries.iter().zip(&report.ratios) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
            e.strategy,
            e.n_tasks,
            e.total_params,
            e.trunk_params,
            e.head_params,
            e.stored_samples.last().copied().unwrap_or(0),
            e.prediction_passes,
            r.total_params,
            r.trunk_params,
            r.stored_samples,
            r.prediction_passes
        );
    }
    out.write("cost.csv", csv.as_bytes())?;
    out.write("cost.json", &serde_json::to_vec_pretty(&report)?)?;
    print!("{csv}");
    out.finish()
}

fn report(cfg: &ExperimentConfig, input: &Path) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::Config(format!("cannot read report input {}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for f in &files {
        if let Ok(r) = read_metrics_csv(f) {
            rows.extend(r);
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("no metric CSVs in {}", input.display())));
    }
    let mut out = Output::new("report", cfg);
    let mut runs: BTreeMap<&str, BTreeMap<u8, Vec<(f64, f64)>>> = BTreeMap::new();
    for r in &rows {
        runs.entry(&r.run_id).or_default().entry(r.task).or_default().push((r.epoch as f64, r.accuracy));
    }
    let mut md = String::from("| run | task | best (%) | last (%) | epochs |\n|---|---|---|---|---|\n");
    for (id, tasks) in &runs {
        let mut series = Vec::new();
        for (task, points) in tasks {
            let best = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let last = points.last().map_or(f64::NAN, |p| p.1);
            let _ = writeln!(md, "| {id} | {task} | {best:.2} | {last:.2} | {} |", points.len());
            series.push(Series {
                label: format!("task {task}"),
                points: points.clone(),
            });
        }
        let svg = line_chart(id, "epoch", "test accuracy (%)", &series);
        out.write(&format!("charts/{id}.svg"), svg.as_bytes())?;
    }
    out.write("report.md", md.as_bytes())?;
    out.finish()
}
