//! Seeded Gaussian-cluster stand-in for the image dataset: one isotropic
//! cluster per label, two-label mixtures, out-of-domain clusters and
//! shifted copies of the test split.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifiers::{LabelScheme, LabeledDataset, Sample};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Label names of the default ten-label scheme, shared label first.
pub const DEFAULT_LABELS: [&str; 10] = [
    "Normal",
    "Defect",
    "Dirt",
    "Bubble Wash",
    "Car Wash Machine",
    "Dashboard",
    "Cup Holder",
    "Glovebox",
    "Washer Fluid",
    "Seat",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub label: String,
    pub mean: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub first: String,
    pub second: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodSpec {
    pub name: String,
    pub mean: Vec<f64>,
    pub scale: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub offset: Vec<f64>,
    pub noise_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub d: usize,
    pub clusters: Vec<ClusterSpec>,
    pub shared_label: String,
    /// Samples drawn per label before the train/test split.
    pub samples_per_label: usize,
    pub test_fraction: f64,
    #[serde(default)]
    pub multilabel: Vec<PairSpec>,
    #[serde(default)]
    pub ood: Vec<OodSpec>,
    #[serde(default)]
    pub shift: Option<ShiftSpec>,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Ten labels in 16 dimensions, means at `separation * e_k`, unit
    /// scale, 250 samples per label split 200/50, 200 Defect+Dirt mixtures
    /// and two 100-sample out-of-domain clusters ("Receipts", "Documents")
    /// sitting exactly `separation` away from every training mean.
    pub fn default_with_seed(seed: u64) -> Self {
        let d = 16;
        let separation = 8.0;
        let labels = DEFAULT_LABELS.len();
        let clusters = DEFAULT_LABELS
            .iter()
            .enumerate()
            .map(|(k, name)| {
                let mut mean = vec![0.0; d];
                mean[k] = separation;
                ClusterSpec {
                    label: name.to_string(),
                    mean,
                    scale: 1.0,
                }
            })
            .collect();
        // beta * sum_k e_k is equidistant from all means; the distance equals
        // `separation` at beta = 0 and at beta = 2 * separation / labels.
        let beta = 2.0 * separation / labels as f64;
        let mut documents = vec![0.0; d];
        documents[..labels].iter_mut().for_each(|v| *v = beta);
        GeneratorConfig {
            d,
            clusters,
            shared_label: "Normal".into(),
            samples_per_label: 250,
            test_fraction: 0.2,
            multilabel: vec![PairSpec {
                first: "Defect".into(),
                second: "Dirt".into(),
                count: 200,
            }],
            ood: vec![
                OodSpec {
                    name: "Receipts".into(),
                    mean: vec![0.0; d],
                    scale: 1.0,
                    count: 100,
                },
                OodSpec {
                    name: "Documents".into(),
                    mean: documents,
                    scale: 1.0,
                    count: 100,
                },
            ],
            shift: None,
            seed,
        }
    }

    pub fn scheme(&self) -> Result<LabelScheme> {
        LabelScheme::new(
            self.clusters.iter().map(|c| c.label.clone()).collect(),
            self.shared_label.clone(),
        )
    }

    pub fn cluster(&self, label: &str) -> Option<&ClusterSpec> {
        self.clusters.iter().find(|c| c.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        self.scheme()?;
        let check_mean = |name: &str, mean: &[f64], scale: f64| -> Result<()> {
            if mean.len() != self.d {
                return Err(invalid(format!(
                    "`{name}` mean has {} entries, expected {}",
                    mean.len(),
                    self.d
                )));
            }
            if mean.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("`{name}` mean is not finite")));
            }
            if !scale.is_finite() || scale < 0.0 {
                return Err(invalid(format!("`{name}` scale must be nonnegative")));
            }
            Ok(())
        };
        for c in &self.clusters {
            check_mean(&c.label, &c.mean, c.scale)?;
        }
        for o in &self.ood {
            check_mean(&o.name, &o.mean, o.scale)?;
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(invalid("test_fraction must lie in [0, 1)"));
        }
        for p in &self.multilabel {
            for l in [&p.first, &p.second] {
                if self.cluster(l).is_none() {
                    return Err(invalid(format!("unknown label `{l}` in multi-label pair")));
                }
            }
            if p.first == p.second {
                return Err(invalid(format!("multi-label pair repeats `{}`", p.first)));
            }
        }
        let mut names = HashSet::new();
        for o in &self.ood {
            if !names.insert(o.name.as_str()) || o.name.contains([',', '+']) || o.name.is_empty() {
                return Err(invalid(format!("unusable or duplicate OOD name `{}`", o.name)));
            }
        }
        if let Some(shift) = &self.shift {
            if shift.offset.len() != self.d {
                return Err(invalid("shift offset dimension mismatch"));
            }
            if shift.noise_multiplier.is_nan() || shift.noise_multiplier < 0.0 {
                return Err(invalid("shift noise multiplier must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// A generated sample that is not part of the labelled splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: String,
    pub features: Vec<f64>,
    /// Empty for out-of-domain samples, two names for mixtures.
    pub true_labels: Vec<String>,
    pub is_ood: bool,
    /// Pair (`A+B`) or OOD cluster name the sample was drawn from.
    pub origin: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub multilabel: Vec<SyntheticSample>,
    pub ood: Vec<SyntheticSample>,
    /// The test split after `cfg.shift`, when one is configured.
    pub shifted_test: Option<LabeledDataset>,
}

fn draw(rng: &mut Rng, mean: &[f64], scale: f64) -> Vec<f64> {
    mean.iter().map(|m| rng.normal(*m, scale)).collect()
}

pub fn generate(cfg: &GeneratorConfig) -> Result<Generated> {
    cfg.validate()?;
    let scheme = cfg.scheme()?;
    let mut rng = Rng::new(cfg.seed);
    let n_test = (cfg.samples_per_label as f64 * cfg.test_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, cluster) in cfg.clusters.iter().enumerate() {
        let mut drawn: Vec<Vec<f64>> = (0..cfg.samples_per_label)
            .map(|_| draw(&mut rng, &cluster.mean, cluster.scale))
            .collect();
        rng.shuffle(&mut drawn);
        for (i, features) in drawn.into_iter().enumerate() {
            let s = Sample { features, label };
            if i < n_test {
                test.push(s);
            } else {
                train.push(s);
            }
        }
    }
    let mut multilabel = Vec::new();
    for pair in &cfg.multilabel {
        let a = cfg.cluster(&pair.first).expect("validated");
        let b = cfg.cluster(&pair.second).expect("validated");
        let mid: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| 0.5 * (x + y)).collect();
        let scale = 0.5 * (a.scale + b.scale);
        let origin = format!("{}+{}", pair.first, pair.second);
        for i in 0..pair.count {
            multilabel.push(SyntheticSample {
                id: format!("ml-{}-{}-{i:05}", slug(&pair.first), slug(&pair.second)),
                features: draw(&mut rng, &mid, scale),
                true_labels: vec![pair.first.clone(), pair.second.clone()],
                is_ood: false,
                origin: origin.clone(),
            });
        }
    }
    let mut ood = Vec::new();
    for spec in &cfg.ood {
        for i in 0..spec.count {
            ood.push(SyntheticSample {
                id: format!("ood-{}-{i:05}", slug(&spec.name)),
                features: draw(&mut rng, &spec.mean, spec.scale),
                true_labels: vec![],
                is_ood: true,
                origin: spec.name.clone(),
            });
        }
    }
    let train = LabeledDataset::new(scheme.clone(), cfg.d, train)?;
    let test = LabeledDataset::new(scheme, cfg.d, test)?;
    let shifted_test = match &cfg.shift {
        Some(shift) => {
            let base = cfg.clusters.iter().map(|c| c.scale).sum::<f64>() / cfg.clusters.len().max(1) as f64;
            Some(apply_shift(
                &test,
                &shift.offset,
                shift.noise_multiplier * base,
                cfg.seed ^ 0x5817,
            )?)
        }
        None => None,
    };
    Ok(Generated {
        train,
        test,
        multilabel,
        ood,
        shifted_test,
    })
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Offset every sample and add fresh isotropic noise of std `noise_std`.
pub fn apply_shift(data: &LabeledDataset, offset: &[f64], noise_std: f64, seed: u64) -> Result<LabeledDataset> {
    if offset.len() != data.dim() {
        return Err(invalid(format!(
            "offset has {} entries, dataset dimension is {}",
            offset.len(),
            data.dim()
        )));
    }
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(invalid("noise std must be nonnegative"));
    }
    let mut rng = Rng::derive(seed, 0x5817);
    let samples = data
        .samples()
        .iter()
        .map(|s| Sample {
            features: s
                .features
                .iter()
                .zip(offset)
                .map(|(v, o)| {
                    if noise_std == 0.0 {
                        v + o
                    } else {
                        v + o + rng.normal(0.0, noise_std)
                    }
                })
                .collect(),
            label: s.label,
        })
        .collect();
    LabeledDataset::new(data.scheme().clone(), data.dim(), samples)
}

pub fn write_samples(samples: &[SyntheticSample], d: usize, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{d},id,origin,labels");
    for s in samples {
        let _ = write!(out, "{},{},", s.id, s.origin);
        for v in &s.features {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", s.true_labels.join("+"));
    }
    out
}

pub fn read_samples(text: &str) -> Result<Vec<SyntheticSample>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hn, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let d: usize = header
        .split(',')
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or(Error::Parse {
            line: hn,
            message: "header must start with the feature dimension".into(),
        })?;
    let mut ids = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(Error::Parse {
                line: n,
                message: format!("expected {} fields, found {}", d + 3, fields.len()),
            });
        }
        let features = fields[2..2 + d]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: n,
                    message: format!("bad feature `{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<String> = fields[2 + d]
            .split('+')
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if !ids.insert(fields[0].to_string()) {
            return Err(Error::Parse {
                line: n,
                message: format!("duplicate sample id `{}`", fields[0]),
            });
        }
        out.push(SyntheticSample {
            id: fields[0].to_string(),
            is_ood: labels.is_empty(),
            true_labels: labels,
            features,
            origin: fields[1].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    fn nearest(cfg: &GeneratorConfig, x: &[f64]) -> usize {
        let d: Vec<f64> = cfg.clusters.iter().map(|c| -dist2(&c.mean, x)).collect();
        crate::numkit::argmax(&d).unwrap()
    }

    #[test]
    fn default_config_shapes() {
        let cfg = GeneratorConfig::default_with_seed(1);
        let g = generate(&cfg).unwrap();
        assert_eq!(g.train.len(), 2000);
        assert_eq!(g.test.len(), 500);
        assert!(g.train.class_counts().iter().all(|c| *c == 200));
        assert!(g.test.class_counts().iter().all(|c| *c == 50));
        assert_eq!(g.multilabel.len(), 200);
        assert_eq!(g.ood.len(), 200);
        assert!(g.shifted_test.is_none());
        assert_eq!(g.train.scheme().shared_label(), "Normal");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = GeneratorConfig::default_with_seed(5);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&GeneratorConfig::default_with_seed(6)).unwrap();
        assert_ne!(generate(&cfg).unwrap().train, other.train);
    }

    #[test]
    fn zero_scale_collapses_to_means() {
        let mut cfg = GeneratorConfig::default_with_seed(2);
        cfg.clusters.iter_mut().for_each(|c| c.scale = 0.0);
        cfg.ood.iter_mut().for_each(|o| o.scale = 0.0);
        let g = generate(&cfg).unwrap();
        for s in g.train.samples().iter().chain(g.test.samples()) {
            assert_eq!(s.features, cfg.clusters[s.label].mean);
        }
        for s in &g.ood {
            let spec = cfg.ood.iter().find(|o| o.name == s.origin).unwrap();
            assert_eq!(s.features, spec.mean);
        }
    }

    #[test]
    fn nearest_mean_oracle_separates_default_test_split() {
        for seed in 0..5 {
            let cfg = GeneratorConfig::default_with_seed(seed);
            let g = generate(&cfg).unwrap();
            let correct = g
                .test
                .samples()
                .iter()
                .filter(|s| nearest(&cfg, &s.features) == s.label)
                .count();
            let acc = correct as f64 / g.test.len() as f64;
            assert!(acc >= 0.95, "seed {seed}: oracle accuracy {acc}");
        }
    }

    #[test]
    fn ood_clusters_sit_eight_scales_from_every_mean() {
        let cfg = GeneratorConfig::default_with_seed(0);
        for o in &cfg.ood {
            for c in &cfg.clusters {
                let d = dist2(&o.mean, &c.mean).sqrt();
                assert!((d - 8.0 * c.scale).abs() < 1e-12, "{} to {}: {d}", o.name, c.label);
            }
        }
    }

    #[test]
    fn mixture_centres_closer_to_parents_than_any_other_mean() {
        let cfg = GeneratorConfig::default_with_seed(0);
        for pair in &cfg.multilabel {
            let a = cfg.cluster(&pair.first).unwrap();
            let b = cfg.cluster(&pair.second).unwrap();
            let mid: Vec<f64> = a.mean.iter().zip(&b.mean).map(|(x, y)| 0.5 * (x + y)).collect();
            let to_parent = dist2(&mid, &a.mean).max(dist2(&mid, &b.mean));
            for c in &cfg.clusters {
                if c.label != a.label && c.label != b.label {
                    assert!(dist2(&mid, &c.mean) > to_parent);
                }
            }
        }
    }

    #[test]
    fn most_mixture_samples_have_their_parents_as_two_nearest_means() {
        let cfg = GeneratorConfig::default_with_seed(3);
        let g = generate(&cfg).unwrap();
        let ok = g
            .multilabel
            .iter()
            .filter(|s| {
                let mut d: Vec<(f64, &str)> = cfg
                    .clusters
                    .iter()
                    .map(|c| (dist2(&c.mean, &s.features), c.label.as_str()))
                    .collect();
                d.sort_by(|x, y| x.0.total_cmp(&y.0));
                let top: HashSet<&str> = d[..2].iter().map(|x| x.1).collect();
                s.true_labels.iter().all(|l| top.contains(l.as_str()))
            })
            .count();
        assert!(ok as f64 / g.multilabel.len() as f64 >= 0.8, "{ok}");
    }

    #[test]
    fn ids_are_unique_and_flags_consistent() {
        let g = generate(&GeneratorConfig::default_with_seed(0)).unwrap();
        let mut ids = HashSet::new();
        for s in g.multilabel.iter().chain(&g.ood) {
            assert!(ids.insert(s.id.clone()), "duplicate id {}", s.id);
            assert_eq!(s.is_ood, s.true_labels.is_empty());
            if !s.is_ood {
                assert_eq!(s.true_labels.len(), 2);
            }
        }
    }

    #[test]
    fn unknown_pair_label_rejected() {
        let mut cfg = GeneratorConfig::default_with_seed(0);
        cfg.multilabel[0].second = "Mud".into();
        assert!(matches!(generate(&cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shift_semantics() {
        let g = generate(&GeneratorConfig::default_with_seed(0)).unwrap();
        let zero = vec![0.0; 16];
        assert_eq!(apply_shift(&g.test, &zero, 0.0, 1).unwrap(), g.test);
        let noisy = apply_shift(&g.test, &zero, 1.0, 1).unwrap();
        assert_ne!(noisy, g.test);
        assert_eq!(noisy.len(), g.test.len());
        assert_eq!(noisy.class_counts(), g.test.class_counts());
        let offset = vec![0.5; 16];
        let moved = apply_shift(&g.test, &offset, 0.0, 1).unwrap();
        for (a, b) in moved.samples().iter().zip(g.test.samples()) {
            assert_eq!(a.label, b.label);
            for (x, y) in a.features.iter().zip(&b.features) {
                assert!((x - y - 0.5).abs() < 1e-12);
            }
        }
        assert!(apply_shift(&g.test, &[0.0; 3], 0.0, 1).is_err());
    }

    #[test]
    fn configured_shift_produces_shifted_test() {
        let mut cfg = GeneratorConfig::default_with_seed(0);
        cfg.shift = Some(ShiftSpec {
            offset: vec![1.0; 16],
            noise_multiplier: 0.5,
        });
        let g = generate(&cfg).unwrap();
        let shifted = g.shifted_test.unwrap();
        assert_eq!(shifted.class_counts(), g.test.class_counts());
    }

    #[test]
    fn sample_file_round_trip() {
        let g = generate(&GeneratorConfig::default_with_seed(0)).unwrap();
        let all: Vec<SyntheticSample> = g.multilabel.iter().chain(&g.ood).cloned().collect();
        let text = write_samples(&all, 16, &["seed=0".into()]);
        assert_eq!(read_samples(&text).unwrap(), all);
    }
}
