use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use effsys::classifiers::{
    task_accuracy, train_multitask, train_task_centric, train_unified, write_dataset, BinaryEvalMode, Classifier,
    LabeledDataset, TaskSpec,
};
use effsys::numkit::TrainLog;
use effsys::oodkit::{
    one_class_eval, rejection_eval, select_threshold, write_score_dump, Detector, OneClassStatistic, OodScore,
};
use effsys::pipeline::{
    compare_topologies, run, run_live, run_manifest, Batch, CompareInputs, Gate, InferenceItem, RunOutput,
    TaskPipeline, Topology,
};
use effsys::synthdomain::{generate, write_samples, SyntheticSample};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::artifacts::{display, model_path, task_model_name, Artifacts};
use crate::config::{ExperimentConfig, TopologyChoice};
use crate::CliError;

fn runtime(e: effsys::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn test_id(i: usize) -> String {
    format!("test-{i:05}")
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

pub fn synth(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let a = Artifacts::new(cfg, "synth");
    let generator = cfg.generator();
    let g = generate(&generator).map_err(runtime)?;
    let c = a.comments();
    let mut files = vec![
        ("data/train.csv", write_dataset(&g.train, &c)),
        ("data/test.csv", write_dataset(&g.test, &c)),
        ("data/multilabel.csv", write_samples(&g.multilabel, generator.d, &c)),
        ("data/ood.csv", write_samples(&g.ood, generator.d, &c)),
    ];
    if let Some(shifted) = &g.shifted_test {
        files.push(("data/shifted_test.csv", write_dataset(shifted, &c)));
    }
    let mut entries = Vec::new();
    for (rel, text) in &files {
        a.write(rel, text)?;
        entries.push(FileEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
    }
    let labels = g.train.scheme().labels();
    let train_counts = g.train.class_counts();
    let test_counts = g.test.class_counts();
    let mut ood_counts = BTreeMap::new();
    for s in &g.ood {
        *ood_counts.entry(s.origin.clone()).or_insert(0usize) += 1;
    }
    #[derive(Serialize)]
    struct LabelCount<'a> {
        label: &'a str,
        train: usize,
        test: usize,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        labels: Vec<LabelCount<'a>>,
        multilabel: usize,
        ood: BTreeMap<String, usize>,
        generator: &'a effsys::synthdomain::GeneratorConfig,
        files: Vec<FileEntry>,
    }
    let manifest = Manifest {
        labels: labels
            .iter()
            .enumerate()
            .map(|(i, l)| LabelCount {
                label: l,
                train: train_counts[i],
                test: test_counts[i],
            })
            .collect(),
        multilabel: g.multilabel.len(),
        ood: ood_counts.clone(),
        generator: &generator,
        files: entries,
    };
    let path = a.write_json("data/manifest.json", &manifest)?;
    println!(
        "synth: {} labels, {} train, {} test, {} multi-label, {} out-of-domain ({}) -> {}",
        labels.len(),
        g.train.len(),
        g.test.len(),
        g.multilabel.len(),
        g.ood.len(),
        ood_counts
            .iter()
            .map(|(k, v)| format!("{k} {v}"))
            .collect::<Vec<_>>()
            .join(", "),
        display(path.parent().expect("file has a parent")),
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TrainMode {
    Unified,
    Multitask,
    TaskCentric,
}

fn save_model(
    a: &Artifacts,
    name: &str,
    c: &Classifier,
    log: &TrainLog,
    cfg: &ExperimentConfig,
) -> Result<(), CliError> {
    let mut text = a.comment_block();
    text.push_str(&c.save());
    let path = a.write(&model_path(name), &text)?;
    #[derive(Serialize)]
    struct Log<'a> {
        model: &'a str,
        train: effsys::numkit::TrainConfig,
        steps: usize,
        epoch_losses: &'a [f64],
        lr_trace: &'a [f64],
    }
    a.write_json(
        &format!("models/{name}.log.json"),
        &Log {
            model: name,
            train: cfg.train_config(),
            steps: log.lr_trace.len(),
            epoch_losses: &log.epoch_losses,
            lr_trace: &log.lr_trace,
        },
    )?;
    let losses = &log.epoch_losses;
    println!(
        "train {name}: {} epochs, {} steps, loss {:.4} -> {:.4}, lr {} -> {} -> {}",
        losses.len(),
        log.lr_trace.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        log.lr_trace.first().copied().unwrap_or(f64::NAN),
        log.lr_trace.get(log.lr_trace.len() / 2).copied().unwrap_or(f64::NAN),
        log.lr_trace.last().copied().unwrap_or(f64::NAN),
    );
    for (i, l) in losses.iter().enumerate() {
        println!("  epoch {:>3}  loss {l:.6}", i + 1);
    }
    println!("  -> {}", display(&path));
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, mode: TrainMode, only: Option<&str>) -> Result<(), CliError> {
    let a = Artifacts::new(cfg, "train");
    let data = a.dataset("data/train.csv")?;
    let tc = cfg.train_config();
    match mode {
        TrainMode::Unified => {
            let (c, log) = train_unified(&data, &tc).map_err(runtime)?;
            save_model(&a, "unified", &c, &log, cfg)
        }
        TrainMode::Multitask => {
            let heads = cfg.multitask_heads()?;
            let (c, log) = train_multitask(&data, &heads, &tc).map_err(runtime)?;
            save_model(&a, "multitask", &c, &log, cfg)
        }
        TrainMode::TaskCentric => {
            let tasks = cfg.tasks()?;
            let selected: Vec<&TaskSpec> = match only {
                Some(name) => vec![tasks
                    .iter()
                    .find(|t| t.name == name)
                    .ok_or_else(|| CliError::Config(format!("no task named `{name}` in the config")))?],
                None => tasks.iter().collect(),
            };
            for t in selected {
                let (c, log) = train_task_centric(&data, t, &tc).map_err(runtime)?;
                save_model(&a, &task_model_name(&t.name), &c, &log, cfg)?;
            }
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Task,
    Ood,
    Calibration,
}

fn scores(c: &Classifier, detector: Detector, xs: &[&[f64]]) -> Result<Vec<f64>, CliError> {
    xs.iter()
        .map(|x| detector.score(c, x).map(OodScore::value).map_err(runtime))
        .collect()
}

/// Gate calibrated to keep `target_tpr` of the in-distribution training data.
fn calibrated_gate(c: &Classifier, data: &LabeledDataset, target_tpr: f64) -> Result<Gate, CliError> {
    let detector = Detector::for_classifier(c);
    let xs: Vec<&[f64]> = data.samples().iter().map(|s| s.features.as_slice()).collect();
    let threshold = select_threshold(&scores(c, detector, &xs)?, target_tpr).map_err(runtime)?;
    Ok(Gate {
        detector,
        threshold: Some(threshold),
    })
}

fn header(a: &Artifacts, title: &str) -> String {
    let mut out = a.comment_block();
    let _ = writeln!(out, "{title}\n");
    out
}

#[derive(Serialize)]
struct TaskRow {
    task: String,
    method: String,
    accuracy: f64,
    f1: f64,
    samples: usize,
}

fn eval_task(cfg: &ExperimentConfig, a: &Artifacts) -> Result<(), CliError> {
    let test = a.dataset("data/test.csv")?;
    let unified = a.classifier("unified")?;
    let multitask = if a.has(&model_path("multitask")) {
        Some(a.classifier("multitask")?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for task in cfg.tasks()? {
        let eval = test
            .subset(&[task.negative_label.as_str(), task.positive_label.as_str()])
            .map_err(runtime)?;
        let mut methods: Vec<(String, Classifier)> = vec![("unified".into(), unified.clone())];
        let name = task_model_name(&task.name);
        if a.has(&model_path(&name)) {
            methods.push(("task-centric".into(), a.classifier(&name)?));
        }
        if let Some(m) = &multitask {
            methods.push(("multitask".into(), m.clone()));
        }
        for (method, c) in methods {
            let m = task_accuracy(&c, &task, &eval, BinaryEvalMode::MaskedArgmax).map_err(runtime)?;
            rows.push(TaskRow {
                task: task.name.clone(),
                method,
                accuracy: m.accuracy,
                f1: m.f1,
                samples: eval.len(),
            });
        }
    }
    let mut text = header(a, "binary task accuracy (held-out test split)");
    let _ = writeln!(
        text,
        "{:<14} {:<13} {:>9} {:>9} {:>8}",
        "task", "method", "accuracy", "f1", "samples"
    );
    for r in &rows {
        let _ = writeln!(
            text,
            "{:<14} {:<13} {:>9.4} {:>9.4} {:>8}",
            r.task, r.method, r.accuracy, r.f1, r.samples
        );
    }
    a.write("reports/task.txt", &text)?;
    #[derive(Serialize)]
    struct Report {
        rows: Vec<TaskRow>,
    }
    a.write_json("reports/task.json", &Report { rows })?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct OneClassRow {
    target: String,
    method: String,
    statistic: OneClassStatistic,
    auroc: f64,
}

#[derive(Serialize)]
struct RejectionRow {
    ood_label: String,
    detector: Detector,
    model: String,
    auroc: f64,
    threshold: f64,
    ood_rejected: f64,
    in_dist_rejected: f64,
}

fn eval_ood(cfg: &ExperimentConfig, a: &Artifacts) -> Result<(), CliError> {
    let train = a.dataset("data/train.csv")?;
    let test = a.dataset("data/test.csv")?;
    let ood = a.samples("data/ood.csv")?;
    let unified = a.classifier("unified")?;
    let multitask = a.classifier("multitask")?;
    let mut one_class = Vec::new();
    for target in &cfg.eval.one_class_targets {
        for (method, c, stat) in [
            ("unified", &unified, OneClassStatistic::TargetLogit),
            ("multitask", &multitask, OneClassStatistic::KlUniform),
        ] {
            let r = one_class_eval(c, target, &test, stat).map_err(runtime)?;
            one_class.push(OneClassRow {
                target: target.clone(),
                method: method.into(),
                statistic: stat,
                auroc: r.auroc,
            });
        }
    }
    let mut clusters: Vec<String> = ood.iter().map(|s| s.origin.clone()).collect();
    clusters.dedup();
    let in_dist: Vec<Vec<f64>> = test.samples().iter().map(|s| s.features.clone()).collect();
    let in_ids: Vec<String> = (0..test.len()).map(test_id).collect();
    let mut rejection = Vec::new();
    for cluster in &clusters {
        let members: Vec<&SyntheticSample> = ood.iter().filter(|s| &s.origin == cluster).collect();
        let xs: Vec<Vec<f64>> = members.iter().map(|s| s.features.clone()).collect();
        for (model, c) in [("unified", &unified), ("multitask", &multitask)] {
            let detector = Detector::for_classifier(c);
            let roc = rejection_eval(c, &in_dist, &xs, detector).map_err(runtime)?;
            let gate = calibrated_gate(c, &train, cfg.eval.target_tpr)?;
            let tau = gate.threshold.expect("calibrated").tau;
            let in_refs: Vec<&[f64]> = in_dist.iter().map(Vec::as_slice).collect();
            let ood_refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let in_scores = scores(c, detector, &in_refs)?;
            let ood_scores = scores(c, detector, &ood_refs)?;
            let frac_below = |v: &[f64]| v.iter().filter(|s| **s < tau).count() as f64 / v.len() as f64;
            rejection.push(RejectionRow {
                ood_label: cluster.clone(),
                detector,
                model: model.into(),
                auroc: roc.auroc,
                threshold: tau,
                ood_rejected: frac_below(&ood_scores),
                in_dist_rejected: frac_below(&in_scores),
            });
            let mut dump: Vec<(String, f64, bool)> = in_ids
                .iter()
                .cloned()
                .zip(in_scores)
                .map(|(id, s)| (id, s, true))
                .collect();
            dump.extend(members.iter().zip(ood_scores).map(|(m, s)| (m.id.clone(), s, false)));
            let slug = cluster.to_lowercase().replace(' ', "-");
            let mut text = a.comment_block();
            text.push_str(&write_score_dump(&dump));
            a.write(&format!("reports/ood-scores-{}-{slug}.csv", detector.name()), &text)?;
        }
    }
    let mut text = header(a, "one-class recognition AUROC (target vs all other test labels)");
    let _ = writeln!(
        text,
        "{:<12} {:<10} {:<13} {:>8}",
        "target", "model", "statistic", "auroc"
    );
    for r in &one_class {
        let stat = serde_json::to_value(r.statistic).expect("enum serializes");
        let _ = writeln!(
            text,
            "{:<12} {:<10} {:<13} {:>8.4}",
            r.target,
            r.method,
            stat.as_str().unwrap_or(""),
            r.auroc
        );
    }
    let _ = writeln!(
        text,
        "\nout-of-domain rejection (test split vs each cluster; threshold keeps {} of train)",
        cfg.eval.target_tpr
    );
    let _ = writeln!(
        text,
        "{:<12} {:<11} {:<10} {:>8} {:>10} {:>10} {:>10}",
        "ood_label", "detector", "model", "auroc", "threshold", "ood_rej", "in_rej"
    );
    for r in &rejection {
        let _ = writeln!(
            text,
            "{:<12} {:<11} {:<10} {:>8.4} {:>10.4} {:>10.4} {:>10.4}",
            r.ood_label,
            r.detector.name(),
            r.model,
            r.auroc,
            r.threshold,
            r.ood_rejected,
            r.in_dist_rejected
        );
    }
    a.write("reports/ood.txt", &text)?;
    #[derive(Serialize)]
    struct Report {
        one_class: Vec<OneClassRow>,
        rejection: Vec<RejectionRow>,
    }
    a.write_json("reports/ood.json", &Report { one_class, rejection })?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct HistogramRow {
    top: Vec<String>,
    count: usize,
}

fn eval_calibration(cfg: &ExperimentConfig, a: &Artifacts) -> Result<(), CliError> {
    let unified = a.classifier("unified")?;
    let multilabel = a.samples("data/multilabel.csv")?;
    if multilabel.is_empty() {
        return Err(CliError::Runtime("no multi-label samples to calibrate on".into()));
    }
    let n = cfg.eval.top_n;
    let mut histogram: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut by_hits = [0usize; 3];
    for s in &multilabel {
        let top = unified.predict_topn(&s.features, n).map_err(runtime)?;
        let mut labels: Vec<String> = top.iter().map(|r| r.label.clone()).collect();
        let hits = s.true_labels.iter().filter(|l| labels.contains(l)).count().min(2);
        by_hits[hits] += 1;
        labels.sort();
        *histogram.entry(labels).or_default() += 1;
    }
    let mut rows: Vec<HistogramRow> = histogram
        .into_iter()
        .map(|(top, count)| HistogramRow { top, count })
        .collect();
    rows.sort_by(|x, y| y.count.cmp(&x.count).then_with(|| x.top.cmp(&y.top)));
    let total = multilabel.len();
    let rate = by_hits[2] as f64 / total as f64;
    let mut text = header(
        a,
        &format!("top-{n} predictions on multi-label samples (unified model)"),
    );
    let _ = writeln!(text, "{:>6}  top-{n} label set", "count");
    for r in &rows {
        let _ = writeln!(text, "{:>6}  {}", r.count, r.top.join(" + "));
    }
    let _ = writeln!(
        text,
        "\nboth true labels in top-{n}: {}  one: {}  neither: {}  (of {total}; co-prediction rate {rate:.4})",
        by_hits[2], by_hits[1], by_hits[0]
    );
    a.write("reports/calibration.txt", &text)?;
    #[derive(Serialize)]
    struct Report {
        top_n: usize,
        samples: usize,
        both: usize,
        one: usize,
        neither: usize,
        co_prediction_rate: f64,
        histogram: Vec<HistogramRow>,
    }
    a.write_json(
        "reports/calibration.json",
        &Report {
            top_n: n,
            samples: total,
            both: by_hits[2],
            one: by_hits[1],
            neither: by_hits[0],
            co_prediction_rate: rate,
            histogram: rows,
        },
    )?;
    print!("{text}");
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, suite: Suite) -> Result<(), CliError> {
    let a = Artifacts::new(cfg, "eval");
    match suite {
        Suite::Task => eval_task(cfg, &a),
        Suite::Ood => eval_ood(cfg, &a),
        Suite::Calibration => eval_calibration(cfg, &a),
    }
}

fn build_topology(cfg: &ExperimentConfig, a: &Artifacts, choice: TopologyChoice) -> Result<Topology, CliError> {
    let train = a.dataset("data/train.csv")?;
    let gate = |c: &Classifier, data: &LabeledDataset| -> Result<Gate, CliError> {
        if cfg.sim.gate {
            calibrated_gate(c, data, cfg.eval.target_tpr)
        } else {
            Ok(Gate::open(Detector::for_classifier(c)))
        }
    };
    Ok(match choice {
        TopologyChoice::EfficiencyCentric => {
            let classifier = a.classifier("unified")?;
            Topology::EfficiencyCentric {
                gate: gate(&classifier, &train)?,
                classifier,
                top_n: cfg.eval.top_n,
            }
        }
        TopologyChoice::TaskCentric => {
            let mut pipelines = Vec::new();
            for task in cfg.tasks()? {
                let classifier = a.classifier(&task_model_name(&task.name))?;
                let subset = train
                    .subset(&[task.negative_label.as_str(), task.positive_label.as_str()])
                    .map_err(runtime)?;
                pipelines.push(TaskPipeline {
                    gate: gate(&classifier, &subset)?,
                    task,
                    classifier,
                });
            }
            Topology::TaskCentric { pipelines }
        }
    })
}

struct Workload {
    batches: Vec<Batch>,
    multilabel: Vec<SyntheticSample>,
    test: LabeledDataset,
}

fn workload(cfg: &ExperimentConfig, a: &Artifacts) -> Result<Workload, CliError> {
    let test = a.dataset("data/test.csv")?;
    let multilabel = a.samples("data/multilabel.csv")?;
    let ood = a.samples("data/ood.csv")?;
    let mut items: Vec<InferenceItem> = test
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| InferenceItem::new(test_id(i), s.features.clone()))
        .collect();
    if cfg.sim.include_multilabel {
        items.extend(multilabel.iter().map(|s| InferenceItem::new(&s.id, s.features.clone())));
    }
    if cfg.sim.include_ood {
        items.extend(ood.iter().map(|s| InferenceItem::new(&s.id, s.features.clone())));
    }
    let batches = cfg
        .sim
        .triggers
        .iter()
        .map(|&trigger| Batch {
            trigger,
            items: items.clone(),
        })
        .collect();
    Ok(Workload {
        batches,
        multilabel,
        test,
    })
}

fn write_run(
    a: &Artifacts,
    dir: &str,
    topology: &Topology,
    w: &[Batch],
    cfg: &ExperimentConfig,
    out: &RunOutput,
) -> Result<(), CliError> {
    let c = a.comments();
    for t in &out.tables {
        a.write(&format!("{dir}/table-{}.jsonl", t.name), &t.to_jsonl(&c))?;
    }
    a.write(&format!("{dir}/metrics.csv"), &out.metrics.to_csv(&c))?;
    a.write_json(
        &format!("{dir}/manifest.json"),
        &run_manifest(topology, w, &cfg.sim_config()),
    )?;
    let m = &out.metrics;
    let mut text = header(a, &format!("{} run ({})", topology.kind_name(), m.mode));
    for (k, v) in [
        ("ticks", m.ticks.to_string()),
        ("messages published", m.published.to_string()),
        ("model invocations", m.total_inferences.to_string()),
        ("duplicate invocations", m.duplicate_inferences.to_string()),
        ("classified", m.classifications.to_string()),
        ("rejected as out-of-domain", m.rejected.to_string()),
        ("consumer crashes", m.crashes.to_string()),
        ("dead-lettered", m.dead_lettered.to_string()),
        ("result tables", out.tables.len().to_string()),
        ("records", m.records.to_string()),
        (
            "peak replicas",
            m.series.iter().map(|s| s.replicas).max().unwrap_or(0).to_string(),
        ),
    ] {
        let _ = writeln!(text, "{k:<26} {v}");
    }
    a.write(&format!("{dir}/summary.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn execute(cfg: &ExperimentConfig, topology: &Topology, batches: &[Batch]) -> Result<RunOutput, CliError> {
    let sim = cfg.sim_config();
    let result = if cfg.sim.live {
        run_live(topology, batches, &sim, Duration::from_millis(cfg.sim.tick_ms))
    } else {
        run(topology, batches, &sim)
    };
    result.map_err(|e| match e {
        effsys::Error::Timeout { tick, unprocessed, .. } => CliError::Runtime(format!(
            "stopped at tick {tick} with {unprocessed} messages unprocessed (raise sim.max_ticks or sim.policy.max_replicas)"
        )),
        other => runtime(other),
    })
}

fn check_complete(out: &RunOutput) -> Result<(), CliError> {
    if out.metrics.dead_lettered > 0 {
        return Err(CliError::Runtime(format!(
            "{} messages were dead-lettered",
            out.metrics.dead_lettered
        )));
    }
    Ok(())
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let a = Artifacts::new(cfg, "simulate");
    let topology = build_topology(cfg, &a, cfg.sim.topology)?;
    let w = workload(cfg, &a)?;
    let out = execute(cfg, &topology, &w.batches)?;
    write_run(
        &a,
        &format!("runs/{}", cfg.sim.topology.name()),
        &topology,
        &w.batches,
        cfg,
        &out,
    )?;
    check_complete(&out)
}

pub fn compare(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let a = Artifacts::new(cfg, "compare");
    if cfg.sim.live {
        return Err(CliError::Config(
            "compare runs in simulation mode only; unset sim.live".into(),
        ));
    }
    let efficiency = build_topology(cfg, &a, TopologyChoice::EfficiencyCentric)?;
    let task_centric = build_topology(cfg, &a, TopologyChoice::TaskCentric)?;
    let w = workload(cfg, &a)?;
    let sim = cfg.sim_config();
    let report = compare_topologies(&CompareInputs {
        efficiency: &efficiency,
        task_centric: &task_centric,
        workload: &w.batches,
        sim: &sim,
        task_eval: &w.test,
        multilabel: &w.multilabel,
    })
    .map_err(runtime)?;
    let eff_run = report.efficiency_run.as_ref().expect("compare keeps runs");
    let tc_run = report.task_centric_run.as_ref().expect("compare keeps runs");
    write_run(
        &a,
        "runs/compare/efficiency-centric",
        &efficiency,
        &w.batches,
        cfg,
        eff_run,
    )?;
    write_run(&a, "runs/compare/task-centric", &task_centric, &w.batches, cfg, tc_run)?;

    let mut text = header(&a, "task-centric vs efficiency-centric");
    let _ = writeln!(text, "{:<24} {:>18} {:>14}", "", "efficiency-centric", "task-centric");
    let (e, t) = (&report.efficiency, &report.task_centric);
    for (k, x, y) in [
        ("model invocations", e.inferences, t.inferences),
        ("duplicate invocations", e.duplicate_inferences, t.duplicate_inferences),
        ("result tables", e.tables as u64, t.tables as u64),
        ("records", e.records as u64, t.records as u64),
        ("rejected", e.rejected, t.rejected),
        ("ticks to drain", e.ticks, t.ticks),
    ] {
        let _ = writeln!(text, "{k:<24} {x:>18} {y:>14}");
    }
    let _ = writeln!(text, "closed-form duplicates   {:>33}", report.expected_duplicates);
    let _ = writeln!(
        text,
        "\n{:<14} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "task", "eff_acc", "eff_f1", "eff_auc", "tc_acc", "tc_f1", "tc_auc"
    );
    for r in &report.tasks {
        let _ = writeln!(
            text,
            "{:<14} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.task,
            r.efficiency_accuracy,
            r.efficiency_f1,
            r.efficiency_auroc,
            r.task_centric_accuracy,
            r.task_centric_f1,
            r.task_centric_auroc
        );
    }
    match report.co_prediction_rate {
        Some(rate) => {
            let _ = writeln!(
                text,
                "\nmulti-label samples with both labels in the unified top-{}: rate {rate:.4}",
                cfg.eval.top_n
            );
        }
        None => {
            let _ = writeln!(text, "\nno multi-label samples");
        }
    }
    let _ = writeln!(
        text,
        "multi-label samples in the single table: {} ({} rejected by the gate, {} with both labels)",
        report.multilabel_in_table, report.multilabel_rejected_in_table, report.co_predicted_in_table
    );
    a.write("reports/compare.txt", &text)?;
    a.write_json("reports/compare.json", &report)?;
    print!("{text}");
    check_complete(eff_run)?;
    check_complete(tc_run)
}
