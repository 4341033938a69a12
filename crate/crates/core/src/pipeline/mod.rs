//! In-process model of the serving deployment: a scheduled producer, a
//! publish/subscribe broker, a queue-driven autoscaler, consumer pools that
//! gate with an OOD detector before classifying, and prediction tables.
//!
//! Two topologies are supported. Efficiency-centric runs one unified model
//! and writes top-n predictions to a single table. Task-centric runs one
//! binary model per task, each behind its own subscription and table, so a
//! sample relevant to several tasks is inferred once per task.

mod autoscale;
mod broker;
mod compare;
mod live;
mod sim;

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use autoscale::{autoscale_step, ScalingPolicy};
pub use broker::{AckId, Broker, BrokerConfig, InferenceItem, Message, QueueCounts, Subscription};
pub use compare::{compare_topologies, CompareInputs, ComparisonReport, TaskComparison, TopologySummary};
pub use live::run_live;
pub use sim::run;

use crate::classifiers::{masked_argmax, Classifier, RankedLabel, TaskSpec};
use crate::error::{invalid, Result};
use crate::numkit::softmax;
use crate::oodkit::{Detector, RejectionThreshold};

/// Detector plus optional rejection threshold. Without a threshold every
/// sample is classified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub detector: Detector,
    pub threshold: Option<RejectionThreshold>,
}

impl Gate {
    pub fn open(detector: Detector) -> Self {
        Gate {
            detector,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskPipeline {
    pub task: TaskSpec,
    pub classifier: Classifier,
    pub gate: Gate,
}

#[derive(Debug, Clone)]
pub enum Topology {
    EfficiencyCentric {
        classifier: Classifier,
        gate: Gate,
        top_n: usize,
    },
    TaskCentric {
        pipelines: Vec<TaskPipeline>,
    },
}

impl Topology {
    pub fn validate(&self) -> Result<()> {
        match self {
            Topology::EfficiencyCentric { classifier, top_n, .. } => {
                if !classifier.is_unified() {
                    return Err(invalid("efficiency-centric serving needs a unified classifier"));
                }
                if *top_n == 0 || *top_n > classifier.scheme().len() {
                    return Err(invalid(format!(
                        "top-n must lie in 1..={}, got {top_n}",
                        classifier.scheme().len()
                    )));
                }
            }
            Topology::TaskCentric { pipelines } => {
                if pipelines.is_empty() {
                    return Err(invalid("task-centric serving needs at least one task"));
                }
                let mut names = HashSet::new();
                for p in pipelines {
                    if !names.insert(p.task.name.as_str()) {
                        return Err(invalid(format!("task `{}` appears twice", p.task.name)));
                    }
                    p.task.validate(p.classifier.scheme())?;
                }
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Topology::EfficiencyCentric { .. } => "efficiency-centric",
            Topology::TaskCentric { .. } => "task-centric",
        }
    }

    /// One consumer pool (subscription, replica pool and result table) per
    /// entry.
    pub fn pool_names(&self) -> Vec<String> {
        match self {
            Topology::EfficiencyCentric { .. } => vec!["unified".to_string()],
            Topology::TaskCentric { pipelines } => pipelines.iter().map(|p| p.task.name.clone()).collect(),
        }
    }

    pub(crate) fn stage(&self, pool: usize) -> Stage<'_> {
        match self {
            Topology::EfficiencyCentric {
                classifier,
                gate,
                top_n,
            } => Stage {
                classifier,
                gate: *gate,
                work: StageWork::TopN(*top_n),
            },
            Topology::TaskCentric { pipelines } => {
                let p = &pipelines[pool];
                Stage {
                    classifier: &p.classifier,
                    gate: p.gate,
                    work: StageWork::Task(&p.task),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum StageWork<'a> {
    TopN(usize),
    Task(&'a TaskSpec),
}

/// What one consumer pool does with a message.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stage<'a> {
    classifier: &'a Classifier,
    gate: Gate,
    work: StageWork<'a>,
}

pub(crate) struct Inference {
    pub score: f64,
    pub verdict: Verdict,
    pub top_n: Vec<LabelProb>,
}

impl Stage<'_> {
    /// One forward pass, then the gate, then (if accepted) the prediction.
    pub(crate) fn infer(&self, features: &[f64]) -> Result<Inference> {
        let logits = self.classifier.logits(features)?;
        let score = self.gate.detector.score_logits(self.classifier, &logits)?;
        if self.gate.threshold.is_some_and(|t| t.rejects(score)) {
            return Ok(Inference {
                score: score.value(),
                verdict: Verdict::Rejected,
                top_n: Vec::new(),
            });
        }
        let top_n = match self.work {
            StageWork::TopN(n) => self
                .classifier
                .topn_from_logits(&logits, n)?
                .into_iter()
                .map(LabelProb::from)
                .collect(),
            StageWork::Task(task) => {
                let scheme = self.classifier.scheme();
                let pos = scheme.require(&task.positive_label)?;
                let neg = scheme.require(&task.negative_label)?;
                let pick = masked_argmax(logits.as_slice(), &[pos, neg]);
                let probs = softmax(logits.as_slice())?;
                vec![LabelProb {
                    label: scheme.labels()[pick].clone(),
                    prob: probs.as_slice()[pick],
                }]
            }
        };
        Ok(Inference {
            score: score.value(),
            verdict: Verdict::Predicted,
            top_n,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Predicted,
    #[serde(rename = "rejected-as-ood")]
    Rejected,
    /// Dead-lettered after exhausting its deliveries.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProb {
    pub label: String,
    pub prob: f64,
}

impl From<RankedLabel> for LabelProb {
    fn from(r: RankedLabel) -> Self {
        LabelProb {
            label: r.label,
            prob: r.prob,
        }
    }
}

/// Field order here is the on-disk field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub message_id: u64,
    pub verdict: Verdict,
    pub top_n: Vec<LabelProb>,
    pub ood_score: Option<f64>,
    pub tick: u64,
    pub replica: String,
}

/// Append-only prediction table. Persisted as JSON lines; lines starting
/// with `#` carry metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub name: String,
    records: Vec<PredictionRecord>,
}

impl ResultTable {
    pub fn new(name: impl Into<String>) -> Self {
        ResultTable {
            name: name.into(),
            records: Vec::new(),
        }
    }

    pub fn append(&mut self, record: PredictionRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records for a sample, newest first. Unknown ids give nothing.
    pub fn query(&self, sample_id: &str) -> Vec<&PredictionRecord> {
        self.records.iter().rev().filter(|r| r.sample_id == sample_id).collect()
    }

    pub fn to_jsonl(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "# table {}", self.name);
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut table = ResultTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                if let Some(name) = meta.trim().strip_prefix("table ") {
                    table.name = name.to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let record: PredictionRecord = serde_json::from_str(line).map_err(|e| crate::Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            table.records.push(record);
        }
        Ok(table)
    }
}

/// Queue and pool state at the end of one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickSample {
    pub tick: u64,
    pub published: usize,
    pub backlog: usize,
    pub in_flight: usize,
    pub acked: usize,
    pub dead_lettered: usize,
    /// Backlog plus in-flight as seen by the autoscaler this tick.
    pub depth_seen: usize,
    pub replicas: usize,
    /// Cumulative forward passes.
    pub inferences: u64,
}

impl TickSample {
    pub fn is_conserved(&self) -> bool {
        self.published == self.backlog + self.in_flight + self.acked + self.dead_lettered
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub name: String,
    pub published: usize,
    /// Forward passes. Every processed message costs one, including those
    /// the gate rejects, since the detector reads the model's logits.
    pub inferences: u64,
    /// Messages that went on to produce a prediction.
    pub classifications: u64,
    pub rejected: u64,
    pub failed_attempts: u64,
    pub dead_lettered: u64,
    pub crashes: u64,
    pub stale_acks: u64,
    pub records: usize,
    pub series: Vec<TickSample>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: String,
    pub ticks: u64,
    pub published: usize,
    pub total_inferences: u64,
    pub distinct_samples_inferred: u64,
    /// Forward passes beyond the first for each sample.
    pub duplicate_inferences: u64,
    pub classifications: u64,
    pub rejected: u64,
    pub failed_attempts: u64,
    pub dead_lettered: u64,
    pub crashes: u64,
    pub stale_acks: u64,
    pub records: usize,
    pub pools: Vec<PoolMetrics>,
    /// Sum over pools, one sample per tick.
    pub series: Vec<TickSample>,
}

impl RunMetrics {
    /// `tick,backlog,in_flight,replicas,inferences` series, then a blank
    /// line and `key,value` summary rows.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("tick,backlog,in_flight,replicas,inferences\n");
        for s in &self.series {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.tick, s.backlog, s.in_flight, s.replicas, s.inferences
            );
        }
        out.push('\n');
        out.push_str("key,value\n");
        let rows: [(&str, String); 13] = [
            ("mode", self.mode.clone()),
            ("ticks", self.ticks.to_string()),
            ("published", self.published.to_string()),
            ("total_inferences", self.total_inferences.to_string()),
            ("distinct_samples_inferred", self.distinct_samples_inferred.to_string()),
            ("duplicate_inferences", self.duplicate_inferences.to_string()),
            ("classifications", self.classifications.to_string()),
            ("rejected", self.rejected.to_string()),
            ("failed_attempts", self.failed_attempts.to_string()),
            ("dead_lettered", self.dead_lettered.to_string()),
            ("crashes", self.crashes.to_string()),
            ("stale_acks", self.stale_acks.to_string()),
            ("records", self.records.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// A batch the scheduled producer publishes at `trigger`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub trigger: u64,
    pub items: Vec<InferenceItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub policy: ScalingPolicy,
    pub broker: BrokerConfig,
    /// Ticks a replica spends on one message.
    pub service_time: u64,
    /// Probability that a replica crashes after pulling a message and
    /// before running inference; the message is neither processed nor acked.
    pub crash_rate: f64,
    pub seed: u64,
    pub max_ticks: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: ScalingPolicy::default(),
            broker: BrokerConfig::default(),
            service_time: 1,
            crash_rate: 0.0,
            seed: 0,
            max_ticks: 100_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        self.broker.validate()?;
        if self.service_time == 0 {
            return Err(invalid("service time must be at least one tick"));
        }
        if !(0.0..1.0).contains(&self.crash_rate) {
            return Err(invalid("crash rate must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Crash decision for one delivery, independent of scheduling order.
pub(crate) fn crashes(cfg: &SimConfig, message: &Message) -> bool {
    if cfg.crash_rate == 0.0 {
        return false;
    }
    let stream = message
        .id
        .wrapping_mul(0x1_0000)
        .wrapping_add(u64::from(message.delivery_count));
    crate::rng::Rng::derive(cfg.seed, stream).bernoulli(cfg.crash_rate)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// One table per pool, in pool order.
    pub tables: Vec<ResultTable>,
}

/// Hex SHA-256 of a classifier checkpoint.
pub fn model_checksum(c: &Classifier) -> String {
    hex::encode(Sha256::digest(c.save().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub name: String,
    pub task: Option<TaskSpec>,
    pub detector: Detector,
    pub threshold: Option<f64>,
    pub model_sha256: String,
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub topology: String,
    pub top_n: Option<usize>,
    pub pipelines: Vec<PipelineManifest>,
    pub sim: SimConfig,
    pub batches: Vec<(u64, usize)>,
}

pub fn run_manifest(topology: &Topology, workload: &[Batch], cfg: &SimConfig) -> RunManifest {
    let pipelines = match topology {
        Topology::EfficiencyCentric { classifier, gate, .. } => vec![PipelineManifest {
            name: "unified".into(),
            task: None,
            detector: gate.detector,
            threshold: gate.threshold.map(|t| t.tau),
            model_sha256: model_checksum(classifier),
        }],
        Topology::TaskCentric { pipelines } => pipelines
            .iter()
            .map(|p| PipelineManifest {
                name: p.task.name.clone(),
                task: Some(p.task.clone()),
                detector: p.gate.detector,
                threshold: p.gate.threshold.map(|t| t.tau),
                model_sha256: model_checksum(&p.classifier),
            })
            .collect(),
    };
    RunManifest {
        topology: topology.kind_name().into(),
        top_n: match topology {
            Topology::EfficiencyCentric { top_n, .. } => Some(*top_n),
            Topology::TaskCentric { .. } => None,
        },
        pipelines,
        sim: cfg.clone(),
        batches: workload.iter().map(|b| (b.trigger, b.items.len())).collect(),
    }
}

#[cfg(test)]
mod tests;
