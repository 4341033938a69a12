//! Out-of-distribution scoring, threshold rejection and ROC evaluation.
//!
//! Every score follows one orientation: higher means more in-distribution.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{Classifier, ClassifierKind, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::numkit::{kl_divergence, softmax, LogitVector, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct OodScore(f64);

impl OodScore {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid("OOD score must be finite"));
        }
        Ok(OodScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Samples scoring strictly below `tau` are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionThreshold {
    pub tau: f64,
}

impl RejectionThreshold {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() {
            return Err(invalid("threshold must be finite"));
        }
        Ok(RejectionThreshold { tau })
    }

    pub fn rejects(&self, score: OodScore) -> bool {
        score.value() < self.tau
    }

    /// Indices of accepted and rejected scores.
    pub fn partition(&self, scores: &[OodScore]) -> (Vec<usize>, Vec<usize>) {
        (0..scores.len()).partition(|&i| !self.rejects(scores[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auroc: f64,
    /// `(false-positive rate, true-positive rate)` from `(0, 0)` to `(1, 1)`.
    pub curve: Vec<(f64, f64)>,
}

impl RocResult {
    pub fn trapezoid_area(&self) -> f64 {
        self.curve
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

pub fn max_logit_score(z: &LogitVector) -> OodScore {
    let max = z.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    OodScore(max)
}

/// KL divergence between the 1/H-weighted concatenation of the head
/// distributions and the same concatenation of per-head uniforms.
///
/// Zero exactly when every head is maximally uncertain.
pub fn kl_uniform_score(heads: &[ProbVector]) -> Result<OodScore> {
    if heads.is_empty() {
        return Err(invalid("no head outputs to score"));
    }
    let weight = 1.0 / heads.len() as f64;
    let mut q = Vec::new();
    let mut reference = Vec::new();
    for h in heads {
        let width = h.len() as f64;
        q.extend(h.as_slice().iter().map(|p| p * weight));
        reference.extend(std::iter::repeat_n(weight / width, h.len()));
    }
    let q = ProbVector::new(q)?;
    let reference = ProbVector::new(reference)?;
    OodScore::new(kl_divergence(&q, &reference)?)
}

/// Rank-statistic (Mann-Whitney) AUROC with half credit for ties, plus the
/// ROC curve from a sweep over the distinct scores.
pub fn auroc(scores: &[f64], is_positive: &[bool]) -> Result<RocResult> {
    if scores.len() != is_positive.len() {
        return Err(invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite score"));
    }
    let positives = is_positive.iter().filter(|p| **p).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ascending pass: average ranks over tie groups.
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1, mean (i + j + 2) / 2
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| is_positive[k]).count();
        positive_rank_sum += mean_rank * pos_in_group as f64;
        i = j + 1;
    }
    let np = positives as f64;
    let nn = negatives as f64;
    let u = positive_rank_sum - np * (np + 1.0) / 2.0;
    let auc = (u / (np * nn)).clamp(0.0, 1.0);

    // Descending sweep: lower the threshold one distinct score at a time.
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = order.len();
    while k > 0 {
        let value = scores[order[k - 1]];
        while k > 0 && scores[order[k - 1]] == value {
            if is_positive[order[k - 1]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k -= 1;
        }
        curve.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(RocResult { auroc: auc, curve })
}

/// Largest `tau` that keeps at least `target_tpr` of the in-distribution
/// validation scores (`score >= tau`).
pub fn select_threshold(validation: &[f64], target_tpr: f64) -> Result<RejectionThreshold> {
    if validation.is_empty() {
        return Err(invalid("no validation scores"));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(invalid("target rate must lie in (0, 1]"));
    }
    if validation.iter().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite validation score"));
    }
    let mut sorted = validation.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    // Tolerance absorbs products like 0.95 * 100 landing just above 95.
    let keep = ((target_tpr * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    RejectionThreshold::new(sorted[keep - 1])
}

/// Which detector a deployment gates with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detector {
    MaxLogit,
    KlUniform,
}

impl Detector {
    /// Max-logit for single-head classifiers, KL-to-uniform for multi-head ones.
    pub fn for_classifier(c: &Classifier) -> Self {
        if c.is_unified() {
            Detector::MaxLogit
        } else {
            Detector::KlUniform
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Detector::MaxLogit => "max-logit",
            Detector::KlUniform => "kl-uniform",
        }
    }

    pub fn score_logits(self, c: &Classifier, logits: &LogitVector) -> Result<OodScore> {
        match self {
            Detector::MaxLogit => Ok(max_logit_score(logits)),
            Detector::KlUniform => kl_uniform_score(&c.model().head_distributions(logits)?),
        }
    }

    pub fn score(self, c: &Classifier, features: &[f64]) -> Result<OodScore> {
        self.score_logits(c, &c.logits(features)?)
    }
}

/// Statistic used to rank samples in one-vs-all recognition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OneClassStatistic {
    /// Raw logit of the target label (single-head classifiers).
    TargetLogit,
    /// Softmax probability of the target label (single-head classifiers).
    TargetProb,
    /// The multi-head KL-to-uniform confidence.
    KlUniform,
    /// Logit of the binary head whose positive label is the target, or the
    /// target's logit in the residual head (multi-head classifiers).
    TargetHead,
}

impl OneClassStatistic {
    pub fn default_for(c: &Classifier) -> Self {
        if c.is_unified() {
            OneClassStatistic::TargetLogit
        } else {
            OneClassStatistic::KlUniform
        }
    }
}

fn one_class_score(c: &Classifier, target: usize, features: &[f64], stat: OneClassStatistic) -> Result<f64> {
    let logits = c.logits(features)?;
    let z = logits.as_slice();
    match (stat, c.kind()) {
        (OneClassStatistic::TargetLogit, ClassifierKind::Unified) => Ok(z[target]),
        (OneClassStatistic::TargetProb, ClassifierKind::Unified) => Ok(softmax(z)?.as_slice()[target]),
        (OneClassStatistic::KlUniform, _) => Ok(Detector::KlUniform.score_logits(c, &logits)?.value()),
        (OneClassStatistic::TargetHead, ClassifierKind::MultiTask(spec)) => {
            let name = &c.scheme().labels()[target];
            if let Some(h) = spec.binary_heads.iter().position(|t| &t.positive_label == name) {
                return Ok(z[h]);
            }
            if let Some(r) = spec.residual_head.iter().position(|l| l == name) {
                return Ok(z[spec.binary_heads.len() + r]);
            }
            Err(invalid(format!("no head scores label `{name}`")))
        }
        (stat, _) => Err(invalid(format!("statistic {stat:?} does not apply to this classifier"))),
    }
}

/// One-vs-all recognition of `target` over an eval set drawn from all labels.
pub fn one_class_eval(
    c: &Classifier,
    target: &str,
    eval: &LabeledDataset,
    stat: OneClassStatistic,
) -> Result<RocResult> {
    let target_idx = c.scheme().require(target)?;
    let mut scores = Vec::with_capacity(eval.len());
    let mut positive = Vec::with_capacity(eval.len());
    for s in eval.samples() {
        scores.push(one_class_score(c, target_idx, &s.features, stat)?);
        positive.push(eval.label_name(s) == target);
    }
    if !positive.iter().any(|p| *p) {
        return Err(Error::UndefinedMetric(format!("no `{target}` samples in the eval set")));
    }
    auroc(&scores, &positive)
}

/// In-distribution (positive) versus out-of-domain (negative) separation
/// under the classifier's own detector.
pub fn rejection_eval(c: &Classifier, in_dist: &[Vec<f64>], ood: &[Vec<f64>], detector: Detector) -> Result<RocResult> {
    if in_dist.is_empty() || ood.is_empty() {
        return Err(Error::UndefinedMetric("rejection eval needs both sample sets".into()));
    }
    let mut scores = Vec::with_capacity(in_dist.len() + ood.len());
    for x in in_dist.iter().chain(ood) {
        scores.push(detector.score(c, x)?.value());
    }
    let positive: Vec<bool> = (0..scores.len()).map(|i| i < in_dist.len()).collect();
    auroc(&scores, &positive)
}

/// One line per sample: `id,score,1|0` (1 = in-distribution ground truth).
pub fn write_score_dump(rows: &[(String, f64, bool)]) -> String {
    let mut out = String::from("sample_id,score,in_distribution\n");
    for (id, score, truth) in rows {
        let _ = writeln!(out, "{id},{score},{}", u8::from(*truth));
    }
    out
}
