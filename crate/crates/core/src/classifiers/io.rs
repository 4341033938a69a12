//! Text formats for labelled datasets and classifier checkpoints.
//!
//! Dataset file:
//!
//! ```text
//! # free-form comment lines (config hash, seed, ...)
//! 16,*Normal,Defect,Dirt
//! 0.25,-1.5,...,Dirt
//! ```
//!
//! The header holds the feature dimension followed by the label names in
//! scheme order; the shared label carries a `*` prefix. Each sample line
//! holds `d` features and then the label name.

use std::fmt::Write as _;

use super::dataset::{LabelScheme, LabeledDataset, Sample, TaskSpec};
use super::{Classifier, ClassifierKind, MultiTaskHeadSpec};
use crate::error::{Error, Result};
use crate::numkit;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Content lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn write_dataset(data: &LabeledDataset, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let shared = data.scheme().shared_label();
    let names: Vec<String> = data
        .scheme()
        .labels()
        .iter()
        .map(|l| if l == shared { format!("*{l}") } else { l.clone() })
        .collect();
    let _ = writeln!(out, "{},{}", data.dim(), names.join(","));
    for s in data.samples() {
        for v in &s.features {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", data.label_name(s));
    }
    out
}

pub fn read_dataset(text: &str) -> Result<LabeledDataset> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let mut fields = header.split(',');
    let dim: usize = fields
        .next()
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| parse_err(hline, "header must start with the feature dimension"))?;
    let mut labels = Vec::new();
    let mut shared = None;
    for f in fields {
        let f = f.trim();
        match f.strip_prefix('*') {
            Some(name) => {
                if shared.replace(name.to_string()).is_some() {
                    return Err(parse_err(hline, "more than one shared label"));
                }
                labels.push(name.to_string());
            }
            None => labels.push(f.to_string()),
        }
    }
    let shared = shared.ok_or_else(|| parse_err(hline, "no shared label marked with `*`"))?;
    let scheme = LabelScheme::new(labels, shared)?;
    let mut samples = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                n,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        let features = fields[..dim]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(n, format!("bad feature `{f}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let name = fields[dim].trim();
        let label = scheme
            .index_of(name)
            .ok_or_else(|| parse_err(n, format!("unknown label `{name}`")))?;
        samples.push(Sample { features, label });
    }
    LabeledDataset::new(scheme, dim, samples)
}

const CLASSIFIER_MAGIC: &str = "effsys-classifier 1";

pub(super) fn save_classifier(c: &Classifier) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CLASSIFIER_MAGIC}");
    let shared = c.scheme().shared_label();
    let names: Vec<String> = c
        .scheme()
        .labels()
        .iter()
        .map(|l| if l == shared { format!("*{l}") } else { l.clone() })
        .collect();
    let _ = writeln!(out, "labels {}", names.join(","));
    match c.kind() {
        ClassifierKind::Unified => {
            let _ = writeln!(out, "kind unified");
        }
        ClassifierKind::MultiTask(spec) => {
            let _ = writeln!(out, "kind multitask");
            for t in &spec.binary_heads {
                let _ = writeln!(out, "binary_head {},{},{}", t.name, t.positive_label, t.negative_label);
            }
            let _ = writeln!(out, "residual_head {}", spec.residual_head.join(","));
        }
    }
    out.push_str(&numkit::save_model(c.model()));
    out
}

pub(super) fn load_classifier(text: &str) -> Result<Classifier> {
    let model_start = text
        .find("effsys-mlp ")
        .ok_or_else(|| parse_err(1, "checkpoint holds no model block"))?;
    let (head, body) = text.split_at(model_start);
    let mut lines = content_lines(head);
    match lines.next() {
        Some((_, l)) if l == CLASSIFIER_MAGIC => {}
        Some((n, _)) => return Err(parse_err(n, format!("missing `{CLASSIFIER_MAGIC}` header"))),
        None => return Err(parse_err(1, "empty checkpoint")),
    }
    let mut labels = Vec::new();
    let mut shared = None;
    let mut kind = None;
    let mut binary_heads = Vec::new();
    let mut residual_head = Vec::new();
    for (n, line) in lines {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "labels" => {
                for f in value.split(',') {
                    let f = f.trim();
                    if let Some(name) = f.strip_prefix('*') {
                        shared = Some(name.to_string());
                        labels.push(name.to_string());
                    } else {
                        labels.push(f.to_string());
                    }
                }
            }
            "kind" => kind = Some(value.trim().to_string()),
            "binary_head" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let [name, pos, neg] = parts[..] else {
                    return Err(parse_err(n, "binary_head needs name,positive,negative"));
                };
                binary_heads.push(TaskSpec::new(name, pos, neg)?);
            }
            "residual_head" => {
                residual_head = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect();
            }
            other => return Err(parse_err(n, format!("unknown checkpoint key `{other}`"))),
        }
    }
    let shared = shared.ok_or_else(|| parse_err(1, "no shared label marked with `*`"))?;
    let scheme = LabelScheme::new(labels, shared)?;
    let kind = match kind.as_deref() {
        Some("unified") => ClassifierKind::Unified,
        Some("multitask") => ClassifierKind::MultiTask(MultiTaskHeadSpec {
            binary_heads,
            residual_head,
        }),
        other => return Err(parse_err(1, format!("unknown classifier kind {other:?}"))),
    };
    let model = numkit::load_model(body)?;
    Classifier::new(scheme, kind, model)
}
