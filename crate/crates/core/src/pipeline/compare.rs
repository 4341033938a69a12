//! Side-by-side run of both topologies on the same inference workload.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{run, Batch, RunOutput, SimConfig, Topology, Verdict};
use crate::classifiers::{task_accuracy, BinaryEvalMode, Classifier, LabeledDataset, TaskSpec};
use crate::error::{invalid, Result};
use crate::oodkit::{one_class_eval, OneClassStatistic};
use crate::synthdomain::SyntheticSample;

pub struct CompareInputs<'a> {
    pub efficiency: &'a Topology,
    pub task_centric: &'a Topology,
    pub workload: &'a [Batch],
    pub sim: &'a SimConfig,
    /// Labelled held-out data; each task is scored on its two labels.
    pub task_eval: &'a LabeledDataset,
    /// Samples carrying two true labels. Those present in the workload are
    /// also looked up in the efficiency-centric table.
    pub multilabel: &'a [SyntheticSample],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySummary {
    pub topology: String,
    pub inferences: u64,
    pub duplicate_inferences: u64,
    pub tables: usize,
    pub records: usize,
    pub rejected: u64,
    pub classifications: u64,
    pub ticks: u64,
}

impl TopologySummary {
    fn of(topology: &Topology, out: &RunOutput) -> Self {
        TopologySummary {
            topology: topology.kind_name().into(),
            inferences: out.metrics.total_inferences,
            duplicate_inferences: out.metrics.duplicate_inferences,
            tables: out.tables.len(),
            records: out.metrics.records,
            rejected: out.metrics.rejected,
            classifications: out.metrics.classifications,
            ticks: out.metrics.ticks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskComparison {
    pub task: String,
    pub efficiency_accuracy: f64,
    pub efficiency_f1: f64,
    pub efficiency_auroc: f64,
    pub task_centric_accuracy: f64,
    pub task_centric_f1: f64,
    pub task_centric_auroc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub efficiency: TopologySummary,
    pub task_centric: TopologySummary,
    /// `sum over tasks of routed samples - distinct samples`; equals
    /// `(K - 1) * N` when all N samples go to all K tasks.
    pub expected_duplicates: u64,
    pub tasks: Vec<TaskComparison>,
    /// Share of multi-label samples whose unified top-n holds both true
    /// labels, before any gating.
    pub co_prediction_rate: Option<f64>,
    /// Multi-label samples found in the single efficiency-centric table.
    pub multilabel_in_table: usize,
    pub multilabel_rejected_in_table: usize,
    pub co_predicted_in_table: usize,
    #[serde(skip)]
    pub efficiency_run: Option<RunOutput>,
    #[serde(skip)]
    pub task_centric_run: Option<RunOutput>,
}

fn closed_form_duplicates(workload: &[Batch], tasks: usize) -> u64 {
    let mut routed = 0u64;
    let mut distinct = HashSet::new();
    for b in workload {
        for item in &b.items {
            routed += item.routes.as_ref().map_or(tasks, Vec::len) as u64;
            distinct.insert(item.sample_id.as_str());
        }
    }
    routed.saturating_sub(distinct.len() as u64)
}

fn task_scores(c: &Classifier, task: &TaskSpec, eval: &LabeledDataset) -> Result<(f64, f64, f64)> {
    let subset = eval.subset(&[task.negative_label.as_str(), task.positive_label.as_str()])?;
    let m = task_accuracy(c, task, &subset, BinaryEvalMode::MaskedArgmax)?;
    let auroc = one_class_eval(c, &task.positive_label, &subset, OneClassStatistic::TargetLogit)?.auroc;
    Ok((m.accuracy, m.f1, auroc))
}

pub fn compare_topologies(inputs: &CompareInputs<'_>) -> Result<ComparisonReport> {
    let Topology::EfficiencyCentric {
        classifier: unified,
        top_n,
        ..
    } = inputs.efficiency
    else {
        return Err(invalid("first topology must be efficiency-centric"));
    };
    let Topology::TaskCentric { pipelines } = inputs.task_centric else {
        return Err(invalid("second topology must be task-centric"));
    };
    let eff = run(inputs.efficiency, inputs.workload, inputs.sim)?;
    let tc = run(inputs.task_centric, inputs.workload, inputs.sim)?;

    let mut tasks = Vec::with_capacity(pipelines.len());
    for p in pipelines {
        let (ea, ef, eu) = task_scores(unified, &p.task, inputs.task_eval)?;
        let (ta, tf, tu) = task_scores(&p.classifier, &p.task, inputs.task_eval)?;
        tasks.push(TaskComparison {
            task: p.task.name.clone(),
            efficiency_accuracy: ea,
            efficiency_f1: ef,
            efficiency_auroc: eu,
            task_centric_accuracy: ta,
            task_centric_f1: tf,
            task_centric_auroc: tu,
        });
    }

    let mut model_hits = 0;
    for s in inputs.multilabel {
        let top = unified.predict_topn(&s.features, *top_n)?;
        if s.true_labels.iter().all(|l| top.iter().any(|r| &r.label == l)) {
            model_hits += 1;
        }
    }

    let table = &eff.tables[0];
    let (mut present, mut rejected, mut hits) = (0, 0, 0);
    for s in inputs.multilabel {
        let Some(record) = table.query(&s.id).into_iter().next() else {
            continue;
        };
        present += 1;
        match record.verdict {
            Verdict::Rejected => rejected += 1,
            Verdict::Predicted => {
                if s.true_labels.iter().all(|l| record.top_n.iter().any(|p| &p.label == l)) {
                    hits += 1;
                }
            }
            Verdict::Failed => {}
        }
    }

    Ok(ComparisonReport {
        efficiency: TopologySummary::of(inputs.efficiency, &eff),
        task_centric: TopologySummary::of(inputs.task_centric, &tc),
        expected_duplicates: closed_form_duplicates(inputs.workload, pipelines.len()),
        tasks,
        co_prediction_rate: (!inputs.multilabel.is_empty()).then(|| model_hits as f64 / inputs.multilabel.len() as f64),
        multilabel_in_table: present,
        multilabel_rejected_in_table: rejected,
        co_predicted_in_table: hits,
        efficiency_run: Some(eff),
        task_centric_run: Some(tc),
    })
}
