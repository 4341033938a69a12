//! Plain-text model checkpoints.
//!
//! ```text
//! effsys-mlp 1
//! activation tanh
//! heads sigmoid sigmoid softmax:6
//! layers 2
//! layer 16 64
//! <64 lines of 16 weights>
//! bias <64 values>
//! layer 64 9
//! ...
//! end
//! ```
//!
//! Values are space separated and written with Rust's shortest round-trip
//! float formatting, so `load_model(&save_model(m)) == m` bit for bit.
//! Blank lines and lines starting with `#` are skipped on load.

use std::fmt::Write as _;

use super::mlp::{Activation, Dense, HeadKind, HeadLayout, MlpModel};
use crate::error::{Error, Result};

const MAGIC: &str = "effsys-mlp 1";

pub fn save_model(model: &MlpModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "activation {}", model.activation().name());
    let heads: Vec<String> = model
        .heads()
        .heads()
        .iter()
        .map(|h| match h {
            HeadKind::Sigmoid => "sigmoid".to_string(),
            HeadKind::Softmax(k) => format!("softmax:{k}"),
        })
        .collect();
    let _ = writeln!(out, "heads {}", heads.join(" "));
    let _ = writeln!(out, "layers {}", model.layers().len());
    for layer in model.layers() {
        let _ = writeln!(out, "layer {} {}", layer.inputs, layer.outputs);
        for row in layer.weights.chunks_exact(layer.inputs) {
            let _ = writeln!(out, "{}", join(row));
        }
        let _ = writeln!(out, "bias {}", join(&layer.bias));
    }
    let _ = writeln!(out, "end");
    out
}

fn join(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    parts.join(" ")
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        for (i, raw) in self.inner.by_ref() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            self.line = i + 1;
            return Ok(trimmed);
        }
        Err(Error::Parse {
            line: self.line + 1,
            message: "unexpected end of checkpoint".into(),
        })
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn keyword(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ => Err(self.err(format!("expected `{key} ...`, found `{line}`"))),
        }
    }

    fn floats(&self, text: &str, expected: usize) -> Result<Vec<f64>> {
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| self.err(format!("bad number `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    fn usize(&self, text: &str) -> Result<usize> {
        text.parse()
            .map_err(|_| self.err(format!("expected an integer, found `{text}`")))
    }
}

pub fn load_model(text: &str) -> Result<MlpModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.err(format!("missing `{MAGIC}` header")));
    }
    let act = lines.keyword("activation")?;
    let activation = Activation::parse(act).ok_or_else(|| lines.err(format!("unknown activation `{act}`")))?;
    let heads = lines
        .keyword("heads")?
        .split_whitespace()
        .map(|h| match h {
            "sigmoid" => Ok(HeadKind::Sigmoid),
            _ => h
                .strip_prefix("softmax:")
                .and_then(|k| k.parse().ok())
                .map(HeadKind::Softmax)
                .ok_or_else(|| lines.err(format!("unknown head `{h}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let heads = HeadLayout::new(heads)?;
    let count = lines.keyword("layers")?;
    let count = lines.usize(count)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let dims = lines.keyword("layer")?;
        let (i, o) = dims
            .split_once(' ')
            .ok_or_else(|| lines.err("expected `layer <inputs> <outputs>`"))?;
        let (inputs, outputs) = (lines.usize(i.trim())?, lines.usize(o.trim())?);
        let mut weights = Vec::with_capacity(inputs * outputs);
        for _ in 0..outputs {
            let row = lines.next()?;
            weights.extend(lines.floats(row, inputs)?);
        }
        let bias = lines.keyword("bias")?;
        let bias = lines.floats(bias, outputs)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    MlpModel::from_parts(layers, activation, heads)
}
