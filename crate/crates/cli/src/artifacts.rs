//! On-disk layout under the configured output directory.
//!
//! ```text
//! data/     train.csv test.csv multilabel.csv ood.csv [shifted_test.csv] manifest.json
//! models/   <name>.ckpt <name>.log.json
//! reports/  <suite>.txt <suite>.json ood-scores-*.csv compare.*
//! runs/     <topology>/table-<pool>.jsonl metrics.csv manifest.json summary.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use effsys::classifiers::{read_dataset, Classifier, LabeledDataset};
use effsys::synthdomain::{read_samples, SyntheticSample};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct Artifacts {
    root: PathBuf,
    config_hash: String,
    seed: u64,
    command: String,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig, command: &str) -> Self {
        Artifacts {
            root: cfg.out_dir.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            command: command.to_string(),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Provenance lines for `#`-commented text formats.
    pub fn comments(&self) -> Vec<String> {
        vec![
            format!("effsys {}", self.command),
            format!("config_hash {}", self.config_hash),
            format!("seed {}", self.seed),
        ]
    }

    pub fn comment_block(&self) -> String {
        self.comments().iter().map(|c| format!("# {c}\n")).collect()
    }

    pub fn write(&self, rel: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// Pretty JSON with `config_hash` and `seed` leading the object.
    pub fn write_json(&self, rel: &str, body: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut map = Map::new();
        map.insert("command".into(), Value::from(self.command.clone()));
        map.insert("config_hash".into(), Value::from(self.config_hash.clone()));
        map.insert("seed".into(), Value::from(self.seed));
        match serde_json::to_value(body).map_err(|e| CliError::Runtime(e.to_string()))? {
            Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("data".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("json serializes");
        text.push('\n');
        self.write(rel, &text)
    }

    pub fn read(&self, rel: &str, what: &str) -> Result<String, CliError> {
        let path = self.path(rel);
        fs::read_to_string(&path).map_err(|e| {
            CliError::Runtime(format!(
                "missing {what} at {}: {e} (run the earlier command first)",
                path.display()
            ))
        })
    }

    pub fn dataset(&self, rel: &str) -> Result<LabeledDataset, CliError> {
        read_dataset(&self.read(rel, "dataset")?).map_err(|e| CliError::Runtime(format!("{rel}: {e}")))
    }

    pub fn samples(&self, rel: &str) -> Result<Vec<SyntheticSample>, CliError> {
        read_samples(&self.read(rel, "sample file")?).map_err(|e| CliError::Runtime(format!("{rel}: {e}")))
    }

    pub fn classifier(&self, name: &str) -> Result<Classifier, CliError> {
        let rel = model_path(name);
        Classifier::load(&self.read(&rel, "checkpoint")?).map_err(|e| CliError::Runtime(format!("{rel}: {e}")))
    }

    pub fn has(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }
}

pub fn model_path(name: &str) -> String {
    format!("models/{name}.ckpt")
}

pub fn task_model_name(task: &str) -> String {
    format!("task-{task}")
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
