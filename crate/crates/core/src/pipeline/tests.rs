use super::*;
use crate::classifiers::{ClassifierKind, LabelScheme};
use crate::numkit::{Activation, Dense, HeadLayout, MlpModel};

/// Linear classifier with `logit_k = 3 * x[k]` over the given labels.
fn linear(labels: &[&str], dims: &[usize], d: usize) -> Classifier {
    let mut weights = vec![0.0; labels.len() * d];
    for (row, &k) in dims.iter().enumerate() {
        weights[row * d + k] = 3.0;
    }
    let layer = Dense {
        inputs: d,
        outputs: labels.len(),
        weights,
        bias: vec![0.0; labels.len()],
    };
    let model = MlpModel::from_parts(
        vec![layer],
        Activation::Tanh,
        HeadLayout::unified(labels.len()).unwrap(),
    )
    .unwrap();
    let scheme = LabelScheme::new(labels.iter().map(|s| s.to_string()).collect(), "Normal").unwrap();
    Classifier::new(scheme, ClassifierKind::Unified, model).unwrap()
}

fn unified() -> Classifier {
    linear(&["Normal", "Defect", "Dirt"], &[0, 1, 2], 3)
}

fn efficiency(tau: Option<f64>, top_n: usize) -> Topology {
    Topology::EfficiencyCentric {
        classifier: unified(),
        gate: Gate {
            detector: Detector::MaxLogit,
            threshold: tau.map(|t| RejectionThreshold::new(t).unwrap()),
        },
        top_n,
    }
}

fn task_centric() -> Topology {
    let pipe = |name: &str, pos: &str, k: usize| TaskPipeline {
        task: TaskSpec::new(name, pos, "Normal").unwrap(),
        classifier: linear(&["Normal", pos], &[0, k], 3),
        gate: Gate::open(Detector::MaxLogit),
    };
    Topology::TaskCentric {
        pipelines: vec![pipe("dirt", "Dirt", 2), pipe("defect", "Defect", 1)],
    }
}

fn sample(i: usize) -> InferenceItem {
    let mut x = vec![0.0; 3];
    x[i % 3] = 2.0;
    x[(i + 1) % 3] = 0.1 * (i % 7) as f64;
    InferenceItem::new(format!("s{i:03}"), x)
}

fn workload(n: usize) -> Vec<Batch> {
    vec![Batch {
        trigger: 0,
        items: (0..n).map(sample).collect(),
    }]
}

#[test]
fn efficiency_processes_each_sample_once() {
    let out = run(&efficiency(None, 2), &workload(100), &SimConfig::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.total_inferences, 100);
    assert_eq!(m.duplicate_inferences, 0);
    assert_eq!(m.records, 100);
    assert_eq!(out.tables.len(), 1);
    for r in out.tables[0].records() {
        assert_eq!(r.verdict, Verdict::Predicted);
        assert_eq!(r.top_n.len(), 2);
        assert!(r.top_n[0].prob >= r.top_n[1].prob);
    }
}

#[test]
fn task_centric_infers_shared_samples_per_task() {
    let out = run(&task_centric(), &workload(100), &SimConfig::default()).unwrap();
    assert_eq!(out.metrics.total_inferences, 200);
    assert_eq!(out.metrics.duplicate_inferences, 100);
    assert_eq!(out.tables.len(), 2);
    for t in &out.tables {
        assert_eq!(t.query("s007").len(), 1);
        assert!(t.records().iter().all(|r| r.top_n.len() == 1));
    }
}

#[test]
fn routes_limit_task_centric_work() {
    let mut w = workload(10);
    for item in w[0].items.iter_mut().take(4) {
        item.routes = Some(vec!["dirt".into()]);
    }
    let out = run(&task_centric(), &w, &SimConfig::default()).unwrap();
    assert_eq!(out.metrics.total_inferences, 16);
    assert_eq!(out.tables[1].len(), 6);
}

#[test]
fn gate_rejects_before_classifying() {
    let mut w = workload(3);
    w[0].items.push(InferenceItem::new("far", vec![0.0, 0.0, 0.0]));
    let out = run(&efficiency(Some(1.0), 2), &w, &SimConfig::default()).unwrap();
    let m = &out.metrics;
    assert_eq!((m.total_inferences, m.classifications, m.rejected), (4, 3, 1));
    let far = out.tables[0].query("far");
    assert_eq!(far.len(), 1);
    assert_eq!(far[0].verdict, Verdict::Rejected);
    assert!(far[0].top_n.is_empty());
    assert_eq!(far[0].ood_score, Some(0.0));
    assert_eq!(m.pools[0].series.last().unwrap().acked, 4);
}

#[test]
fn conservation_and_replica_bounds_every_tick() {
    let cfg = SimConfig {
        crash_rate: 0.1,
        seed: 3,
        ..SimConfig::default()
    };
    let out = run(&task_centric(), &workload(150), &cfg).unwrap();
    assert!(out.metrics.crashes > 0);
    for p in &out.metrics.pools {
        assert_eq!(p.series.len() as u64, out.metrics.ticks);
        for s in &p.series {
            assert!(s.is_conserved(), "{s:?}");
            assert!((cfg.policy.min_replicas..=cfg.policy.max_replicas).contains(&s.replicas));
        }
    }
    assert_eq!(out.metrics.records, out.metrics.published);
}

#[test]
fn replica_trace_follows_the_policy() {
    let cfg = SimConfig {
        policy: ScalingPolicy {
            target_backlog_per_replica: 7,
            min_replicas: 1,
            max_replicas: 6,
            cooldown: 4,
            poll_interval: 2,
        },
        ..SimConfig::default()
    };
    let out = run(&efficiency(None, 1), &workload(120), &cfg).unwrap();
    let series = &out.metrics.pools[0].series;
    let (mut replicas, mut last) = (cfg.policy.min_replicas, 0);
    for s in series {
        if s.tick % cfg.policy.poll_interval == 0 {
            let next = autoscale_step(&cfg.policy, s.depth_seen, replicas, s.tick, last);
            if next != replicas {
                replicas = next;
                last = s.tick;
            }
        }
        assert_eq!(s.replicas, replicas, "tick {}", s.tick);
    }
    let peak = series.iter().map(|s| s.replicas).max().unwrap();
    assert_eq!(peak, 6);
}

#[test]
fn burst_scales_up_then_back_to_min() {
    let cfg = SimConfig::default();
    let w = vec![
        Batch {
            trigger: 0,
            items: (0..200).map(sample).collect(),
        },
        Batch {
            trigger: 60,
            items: (200..203).map(sample).collect(),
        },
    ];
    let out = run(&efficiency(None, 1), &w, &cfg).unwrap();
    let series = &out.metrics.pools[0].series;
    assert_eq!(series[0].replicas, 20);
    let at_59 = &series[59];
    assert_eq!(at_59.replicas, cfg.policy.min_replicas);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let cfg = SimConfig {
        crash_rate: 0.2,
        seed: 11,
        ..SimConfig::default()
    };
    let a = run(&task_centric(), &workload(80), &cfg).unwrap();
    let b = run(&task_centric(), &workload(80), &cfg).unwrap();
    for (x, y) in a.tables.iter().zip(&b.tables) {
        assert_eq!(x.to_jsonl(&[]), y.to_jsonl(&[]));
    }
    assert_eq!(a.metrics.to_csv(&[]), b.metrics.to_csv(&[]));
    let other = run(&task_centric(), &workload(80), &SimConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.metrics.crashes, 0);
    assert_ne!(a.tables[0].to_jsonl(&[]), other.tables[0].to_jsonl(&[]));
}

#[test]
fn bad_payload_is_dead_lettered() {
    let mut w = workload(2);
    w[0].items.push(InferenceItem::new("short", vec![1.0]));
    let out = run(&efficiency(None, 1), &w, &SimConfig::default()).unwrap();
    let m = &out.metrics;
    assert_eq!(m.dead_lettered, 1);
    assert_eq!(m.failed_attempts, 3);
    assert_eq!(m.records, 3);
    assert_eq!(out.tables[0].query("short")[0].verdict, Verdict::Failed);
    // three leases of 30 ticks each
    assert!(m.ticks > 90);
}

#[test]
fn timeout_carries_partial_metrics() {
    let cfg = SimConfig {
        max_ticks: 5,
        policy: ScalingPolicy {
            max_replicas: 1,
            ..ScalingPolicy::default()
        },
        ..SimConfig::default()
    };
    match run(&efficiency(None, 1), &workload(50), &cfg) {
        Err(crate::Error::Timeout {
            tick,
            unprocessed,
            partial,
        }) => {
            assert_eq!(tick, 5);
            assert!(unprocessed > 0);
            assert_eq!(partial.published, 50);
            assert_eq!(partial.series.len(), 6);
        }
        other => panic!("expected a timeout, got {other:?}"),
    }
}

#[test]
fn topology_validation() {
    assert!(run(&efficiency(None, 0), &workload(1), &SimConfig::default()).is_err());
    assert!(run(&efficiency(None, 4), &workload(1), &SimConfig::default()).is_err());
    let empty = Topology::TaskCentric { pipelines: vec![] };
    assert!(run(&empty, &workload(1), &SimConfig::default()).is_err());
}

#[test]
fn table_query_and_round_trip() {
    let mut w = workload(3);
    w.push(Batch {
        trigger: 5,
        items: vec![sample(1)],
    });
    let out = run(&efficiency(None, 2), &w, &SimConfig::default()).unwrap();
    let table = &out.tables[0];
    let hits = table.query("s001");
    assert_eq!(hits.len(), 2);
    assert!(hits[0].tick > hits[1].tick);
    assert!(table.query("nope").is_empty());
    let text = table.to_jsonl(&["seed 0".into()]);
    let back = ResultTable::from_jsonl(&text).unwrap();
    assert_eq!(&back, table);
}

#[test]
fn empty_workload_finishes_immediately() {
    let out = run(&efficiency(None, 1), &[], &SimConfig::default()).unwrap();
    assert_eq!(out.metrics.ticks, 1);
    assert_eq!(out.metrics.records, 0);
}

#[test]
fn live_mode_processes_everything() {
    let cfg = SimConfig {
        crash_rate: 0.1,
        seed: 2,
        broker: BrokerConfig {
            visibility_timeout: 5,
            max_deliveries: 5,
        },
        ..SimConfig::default()
    };
    let out = run_live(
        &task_centric(),
        &workload(60),
        &cfg,
        std::time::Duration::from_millis(2),
    )
    .unwrap();
    let m = &out.metrics;
    assert_eq!(m.published, 120);
    assert_eq!(m.records as u64, m.total_inferences + m.dead_lettered);
    for p in &m.pools {
        assert!(p.series.iter().all(TickSample::is_conserved));
        let last = p.series.last().unwrap();
        assert_eq!(last.acked + last.dead_lettered, 60);
    }
}

#[test]
fn manifest_names_models_by_checksum() {
    let t = task_centric();
    let m = run_manifest(&t, &workload(4), &SimConfig::default());
    assert_eq!(m.pipelines.len(), 2);
    assert_eq!(m.pipelines[0].model_sha256.len(), 64);
    assert_ne!(m.pipelines[0].model_sha256, m.pipelines[1].model_sha256);
    assert_eq!(m.batches, vec![(0, 4)]);
}
