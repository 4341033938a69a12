//! Experiment configuration: one TOML file plus `--set key=value` overrides.
//!
//! Every section is optional. Generator and training fields left out fall
//! back to the default synthetic domain and training recipe; the top-level
//! `seed` feeds generation, initialization, shuffling and the simulator.

use std::path::{Path, PathBuf};

use effsys::classifiers::{MultiTaskHeadSpec, TaskSpec};
use effsys::numkit::{Activation, TrainConfig};
use effsys::pipeline::{BrokerConfig, ScalingPolicy, SimConfig};
use effsys::synthdomain::{ClusterSpec, GeneratorConfig, OodSpec, PairSpec, ShiftSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub generator: GeneratorSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub multitask: MultitaskSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sim: SimSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("effsys-out")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub d: Option<usize>,
    pub clusters: Option<Vec<ClusterSpec>>,
    pub shared_label: Option<String>,
    pub samples_per_label: Option<usize>,
    pub test_fraction: Option<f64>,
    pub multilabel: Option<Vec<PairSpec>>,
    pub ood: Option<Vec<OodSpec>>,
    pub shift: Option<ShiftSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub min_lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub positive: String,
    pub negative: String,
}

fn default_tasks() -> Vec<TaskEntry> {
    [("defect", "Defect"), ("dirt", "Dirt"), ("bubble-wash", "Bubble Wash")]
        .iter()
        .map(|(name, pos)| TaskEntry {
            name: name.to_string(),
            positive: pos.to_string(),
            negative: "Normal".into(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitaskSection {
    /// Positive labels of the binary heads (each against the shared label).
    /// Defaults to the positives of `tasks`. Every other non-shared label
    /// goes to the residual multi-class head.
    pub binary_heads: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub top_n: usize,
    /// Share of in-distribution training samples the rejection gate keeps.
    pub target_tpr: f64,
    pub one_class_targets: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            top_n: 2,
            target_tpr: 0.95,
            one_class_targets: vec!["Defect".into(), "Dirt".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyChoice {
    EfficiencyCentric,
    TaskCentric,
}

impl TopologyChoice {
    pub fn name(self) -> &'static str {
        match self {
            TopologyChoice::EfficiencyCentric => "efficiency-centric",
            TopologyChoice::TaskCentric => "task-centric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub topology: TopologyChoice,
    pub live: bool,
    /// Wall-clock length of one tick in live mode.
    pub tick_ms: u64,
    /// The producer publishes the whole inference set at each trigger.
    pub triggers: Vec<u64>,
    pub include_multilabel: bool,
    pub include_ood: bool,
    pub gate: bool,
    pub policy: ScalingPolicy,
    pub broker: BrokerConfig,
    pub service_time: u64,
    pub crash_rate: f64,
    pub max_ticks: u64,
}

impl Default for SimSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        SimSection {
            topology: TopologyChoice::EfficiencyCentric,
            live: false,
            tick_ms: 2,
            triggers: vec![0],
            include_multilabel: true,
            include_ood: true,
            gate: true,
            policy: sim.policy,
            broker: sim.broker,
            service_time: sim.service_time,
            crash_rate: sim.crash_rate,
            max_ticks: sim.max_ticks,
        }
    }
}

impl ExperimentConfig {
    pub fn generator(&self) -> GeneratorConfig {
        let g = &self.generator;
        let mut cfg = GeneratorConfig::default_with_seed(self.seed);
        if let Some(v) = g.d {
            cfg.d = v;
        }
        if let Some(v) = &g.clusters {
            cfg.clusters = v.clone();
        }
        if let Some(v) = &g.shared_label {
            cfg.shared_label = v.clone();
        }
        if let Some(v) = g.samples_per_label {
            cfg.samples_per_label = v;
        }
        if let Some(v) = g.test_fraction {
            cfg.test_fraction = v;
        }
        if let Some(v) = &g.multilabel {
            cfg.multilabel = v.clone();
        }
        if let Some(v) = &g.ood {
            cfg.ood = v.clone();
        }
        if g.shift.is_some() {
            cfg.shift = g.shift.clone();
        }
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::default();
        TrainConfig {
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            base_lr: t.base_lr.unwrap_or(d.base_lr),
            min_lr: t.min_lr.unwrap_or(d.min_lr),
            weight_decay: t.weight_decay.unwrap_or(d.weight_decay),
            epochs: t.epochs.unwrap_or(d.epochs),
            seed: self.seed,
            hidden: t.hidden.clone().unwrap_or(d.hidden),
            activation: t.activation.unwrap_or(d.activation),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            policy: s.policy,
            broker: s.broker,
            service_time: s.service_time,
            crash_rate: s.crash_rate,
            seed: self.seed,
            max_ticks: s.max_ticks,
        }
    }

    pub fn tasks(&self) -> Result<Vec<TaskSpec>, CliError> {
        self.tasks
            .iter()
            .map(|t| TaskSpec::new(&t.name, &t.positive, &t.negative).map_err(CliError::config))
            .collect()
    }

    pub fn multitask_heads(&self) -> Result<MultiTaskHeadSpec, CliError> {
        let generator = self.generator();
        let scheme = generator.scheme().map_err(CliError::config)?;
        let shared = scheme.shared_label().to_string();
        let positives: Vec<String> = match &self.multitask.binary_heads {
            Some(p) => p.clone(),
            None => self.tasks.iter().map(|t| t.positive.clone()).collect(),
        };
        let binary_heads = positives
            .iter()
            .map(|p| TaskSpec::new(p.to_lowercase().replace(' ', "-"), p, &shared))
            .collect::<effsys::Result<Vec<_>>>()
            .map_err(CliError::config)?;
        let residual_head = scheme
            .labels()
            .iter()
            .filter(|l| **l != shared && !positives.contains(l))
            .cloned()
            .collect();
        let spec = MultiTaskHeadSpec {
            binary_heads,
            residual_head,
        };
        spec.validate(&scheme).map_err(CliError::config)?;
        Ok(spec)
    }

    /// Reject inconsistent settings before any command touches disk.
    pub fn validate(&self) -> Result<(), CliError> {
        let generator = self.generator();
        generator.validate().map_err(CliError::config)?;
        self.train_config().validate().map_err(CliError::config)?;
        self.sim_config().validate().map_err(CliError::config)?;
        let scheme = generator.scheme().map_err(CliError::config)?;
        for t in self.tasks()? {
            t.validate(&scheme).map_err(CliError::config)?;
        }
        self.multitask_heads()?;
        for target in &self.eval.one_class_targets {
            scheme.require(target).map_err(CliError::config)?;
        }
        if self.eval.top_n == 0 || self.eval.top_n > scheme.len() {
            return Err(CliError::Config(format!("eval.top_n must lie in 1..={}", scheme.len())));
        }
        if !(self.eval.target_tpr > 0.0 && self.eval.target_tpr <= 1.0) {
            return Err(CliError::Config("eval.target_tpr must lie in (0, 1]".into()));
        }
        if self.sim.triggers.is_empty() {
            return Err(CliError::Config("sim.triggers needs at least one trigger time".into()));
        }
        if self.sim.live && self.sim.tick_ms == 0 {
            return Err(CliError::Config("sim.tick_ms must be positive in live mode".into()));
        }
        Ok(())
    }

    /// SHA-256 over the effective configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse a `key.path=value` override. Values are read as TOML and fall
/// back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not KEY=VALUE")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.trim().split('.').collect();
    let (last, parents) = keys.split_last().expect("split yields one item");
    let mut node = table;
    for k in parents {
        let entry = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{k}` in override `{path}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| CliError::Config(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}
