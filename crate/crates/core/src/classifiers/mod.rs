//! Dataset concatenation and the three classifier families compared by the
//! system: the unified single-head classifier, dedicated per-task
//! classifiers and the shared-trunk multi-head learner.

mod dataset;
mod io;

pub use dataset::{concat_datasets, LabelScheme, LabeledDataset, Sample, TaskSpec};
pub use io::{read_dataset, write_dataset};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numkit::{
    self, fit, softmax, HeadKind, HeadLayout, HeadTarget, LogitVector, MlpModel, TrainConfig, TrainLog,
};

/// Binary heads plus an optional multi-class head over the remaining labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiTaskHeadSpec {
    pub binary_heads: Vec<TaskSpec>,
    pub residual_head: Vec<String>,
}

impl MultiTaskHeadSpec {
    pub fn validate(&self, scheme: &LabelScheme) -> Result<()> {
        if self.binary_heads.is_empty() && self.residual_head.is_empty() {
            return Err(invalid("multi-task model needs at least one head"));
        }
        for task in &self.binary_heads {
            task.validate(scheme)?;
        }
        for label in &self.residual_head {
            scheme.require(label)?;
            if self.binary_heads.iter().any(|t| &t.positive_label == label) {
                return Err(invalid(format!(
                    "residual label `{label}` is already a binary head's positive label"
                )));
            }
        }
        if self.residual_head.len() == 1 {
            return Err(invalid("residual head needs at least two labels"));
        }
        for label in scheme.labels() {
            let covered = self.residual_head.contains(label)
                || self
                    .binary_heads
                    .iter()
                    .any(|t| &t.positive_label == label || &t.negative_label == label);
            if !covered {
                return Err(invalid(format!("label `{label}` is not covered by any head")));
            }
        }
        Ok(())
    }

    pub fn head_layout(&self) -> Result<HeadLayout> {
        let mut heads = vec![HeadKind::Sigmoid; self.binary_heads.len()];
        if !self.residual_head.is_empty() {
            heads.push(HeadKind::Softmax(self.residual_head.len()));
        }
        HeadLayout::new(heads)
    }

    /// Every binary head sees every sample (1 iff the sample carries the
    /// head's positive label); the residual head only sees samples whose
    /// label belongs to it.
    pub fn targets_for(&self, label: &str) -> Vec<HeadTarget> {
        let mut targets: Vec<HeadTarget> = self
            .binary_heads
            .iter()
            .map(|t| HeadTarget::Binary(t.positive_label == label))
            .collect();
        if !self.residual_head.is_empty() {
            targets.push(
                self.residual_head
                    .iter()
                    .position(|l| l == label)
                    .map_or(HeadTarget::Ignore, HeadTarget::Class),
            );
        }
        targets
    }

    fn head_for(&self, task: &TaskSpec) -> Option<usize> {
        self.binary_heads
            .iter()
            .position(|t| t.positive_label == task.positive_label && t.negative_label == task.negative_label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierKind {
    /// One softmax head over the whole scheme.
    Unified,
    MultiTask(MultiTaskHeadSpec),
}

/// A trained network together with the label semantics of its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    scheme: LabelScheme,
    kind: ClassifierKind,
    model: MlpModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub label: String,
    pub index: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub accuracy: f64,
    pub f1: f64,
}

/// How an N-class unified model is reduced to a binary task verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinaryEvalMode {
    /// Argmax over the task's two logits only.
    #[default]
    MaskedArgmax,
    /// Argmax over all logits; off-task predictions count as wrong.
    FullArgmax,
}

impl Classifier {
    pub fn new(scheme: LabelScheme, kind: ClassifierKind, model: MlpModel) -> Result<Self> {
        match &kind {
            ClassifierKind::Unified => {
                if model.heads() != &HeadLayout::unified(scheme.len())? {
                    return Err(invalid("unified classifier needs one softmax head per label"));
                }
            }
            ClassifierKind::MultiTask(spec) => {
                spec.validate(&scheme)?;
                if model.heads() != &spec.head_layout()? {
                    return Err(invalid("model heads do not match the multi-task spec"));
                }
            }
        }
        Ok(Classifier { scheme, kind, model })
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn kind(&self) -> &ClassifierKind {
        &self.kind
    }

    pub fn model(&self) -> &MlpModel {
        &self.model
    }

    pub fn is_unified(&self) -> bool {
        matches!(self.kind, ClassifierKind::Unified)
    }

    pub fn input_width(&self) -> usize {
        self.model.input_width()
    }

    pub fn logits(&self, features: &[f64]) -> Result<LogitVector> {
        self.model.forward(features)
    }

    /// Ranked labels for a unified classifier; ties go to the lower index.
    pub fn predict_topn(&self, features: &[f64], n: usize) -> Result<Vec<RankedLabel>> {
        let logits = self.logits(features)?;
        self.topn_from_logits(&logits, n)
    }

    pub fn topn_from_logits(&self, logits: &LogitVector, n: usize) -> Result<Vec<RankedLabel>> {
        if !self.is_unified() {
            return Err(invalid("top-n ranking needs a unified classifier"));
        }
        rank_topn(self.scheme.labels(), logits, n)
    }

    /// Predicted label (scheme index) for a binary task.
    pub fn predict_task(&self, features: &[f64], task: &TaskSpec, mode: BinaryEvalMode) -> Result<usize> {
        let logits = self.logits(features)?;
        self.task_verdict(&logits, task, mode)
    }

    fn task_verdict(&self, logits: &LogitVector, task: &TaskSpec, mode: BinaryEvalMode) -> Result<usize> {
        let pos = self.scheme.require(&task.positive_label)?;
        let neg = self.scheme.require(&task.negative_label)?;
        match &self.kind {
            ClassifierKind::Unified => Ok(match mode {
                BinaryEvalMode::MaskedArgmax => masked_argmax(logits.as_slice(), &[pos, neg]),
                BinaryEvalMode::FullArgmax => numkit::argmax(logits.as_slice()).expect("logits are nonempty"),
            }),
            ClassifierKind::MultiTask(spec) => {
                let head = spec
                    .head_for(task)
                    .ok_or_else(|| invalid(format!("no head for task `{}` in the multi-task model", task.name)))?;
                Ok(if logits.as_slice()[head] > 0.0 { pos } else { neg })
            }
        }
    }

    pub fn save(&self) -> String {
        io::save_classifier(self)
    }

    pub fn load(text: &str) -> Result<Self> {
        io::load_classifier(text)
    }
}

/// Argmax restricted to `candidates` (scheme indices); lowest index wins ties.
pub fn masked_argmax(logits: &[f64], candidates: &[usize]) -> usize {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let mut best = sorted[0];
    for &c in &sorted[1..] {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    best
}

pub fn rank_topn(labels: &[String], logits: &LogitVector, n: usize) -> Result<Vec<RankedLabel>> {
    if logits.len() != labels.len() {
        return Err(invalid("logit width does not match label count"));
    }
    if n == 0 || n > labels.len() {
        return Err(invalid(format!("n = {n} outside 1..={}", labels.len())));
    }
    let probs = softmax(logits.as_slice())?.into_inner();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    // Stable sort keeps ascending index order among equal probabilities.
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    Ok(order
        .into_iter()
        .take(n)
        .map(|i| RankedLabel {
            label: labels[i].clone(),
            index: i,
            prob: probs[i],
        })
        .collect())
}

fn check_trainable(data: &LabeledDataset) -> Result<()> {
    if data.scheme().len() < 2 {
        return Err(invalid("training needs at least two labels"));
    }
    let counts = data.class_counts();
    if let Some(i) = counts.iter().position(|c| *c == 0) {
        return Err(invalid(format!(
            "label `{}` has no training samples",
            data.scheme().labels()[i]
        )));
    }
    Ok(())
}

/// Unified classifier: one softmax head over every label of `data`.
pub fn train_unified(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Classifier, TrainLog)> {
    cfg.validate()?;
    check_trainable(data)?;
    let heads = HeadLayout::unified(data.scheme().len())?;
    let model = MlpModel::new(data.dim(), &cfg.hidden, heads, cfg.activation, cfg.seed)?;
    let examples: Vec<numkit::Example> = data
        .samples()
        .iter()
        .map(|s| numkit::Example {
            features: s.features.clone(),
            targets: vec![HeadTarget::Class(s.label)],
        })
        .collect();
    let (model, log) = fit(model, &examples, cfg)?;
    Ok((
        Classifier::new(data.scheme().clone(), ClassifierKind::Unified, model)?,
        log,
    ))
}

/// Dedicated classifier for one task, trained on that task's two labels only.
pub fn train_task_centric(data: &LabeledDataset, task: &TaskSpec, cfg: &TrainConfig) -> Result<(Classifier, TrainLog)> {
    task.validate(data.scheme())?;
    let subset = data.subset(&[task.negative_label.as_str(), task.positive_label.as_str()])?;
    train_unified(&subset, cfg)
}

/// Shared trunk with one head per entry of `heads`; the loss is the sum of
/// the per-head losses.
pub fn train_multitask(
    data: &LabeledDataset,
    heads: &MultiTaskHeadSpec,
    cfg: &TrainConfig,
) -> Result<(Classifier, TrainLog)> {
    cfg.validate()?;
    check_trainable(data)?;
    heads.validate(data.scheme())?;
    let layout = heads.head_layout()?;
    let model = MlpModel::new(data.dim(), &cfg.hidden, layout, cfg.activation, cfg.seed)?;
    let examples = multitask_examples(data, heads);
    let (model, log) = fit(model, &examples, cfg)?;
    Ok((
        Classifier::new(data.scheme().clone(), ClassifierKind::MultiTask(heads.clone()), model)?,
        log,
    ))
}

pub fn multitask_examples(data: &LabeledDataset, heads: &MultiTaskHeadSpec) -> Vec<numkit::Example> {
    data.samples()
        .iter()
        .map(|s| numkit::Example {
            features: s.features.clone(),
            targets: heads.targets_for(&data.scheme().labels()[s.label]),
        })
        .collect()
}

/// Accuracy and F1 (task positive label as the positive class) on an eval
/// set holding only the task's two labels.
pub fn task_accuracy(
    classifier: &Classifier,
    task: &TaskSpec,
    eval: &LabeledDataset,
    mode: BinaryEvalMode,
) -> Result<TaskMetrics> {
    if eval.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    let pos = classifier.scheme().require(&task.positive_label)?;
    let neg = classifier.scheme().require(&task.negative_label)?;
    let mut predictions = Vec::with_capacity(eval.len());
    for sample in eval.samples() {
        let name = &eval.scheme().labels()[sample.label];
        let truth = if *name == task.positive_label {
            pos
        } else if *name == task.negative_label {
            neg
        } else {
            return Err(invalid(format!(
                "eval sample labelled `{name}` is outside task `{}`",
                task.name
            )));
        };
        let predicted = classifier.predict_task(&sample.features, task, mode)?;
        predictions.push((truth, predicted));
    }
    Ok(binary_metrics(&predictions, pos))
}

/// `(truth, predicted)` pairs; predictions other than `positive` count as
/// negative for F1, but only exact matches count as correct.
pub fn binary_metrics(pairs: &[(usize, usize)], positive: usize) -> TaskMetrics {
    let mut correct = 0usize;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for &(truth, predicted) in pairs {
        if truth == predicted {
            correct += 1;
        }
        match (truth == positive, predicted == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    TaskMetrics {
        accuracy: correct as f64 / pairs.len() as f64,
        f1: if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        },
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            message: e.to_string(),
        }
    }
}
