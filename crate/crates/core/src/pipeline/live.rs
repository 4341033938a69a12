//! Concurrent mode: every replica is a thread pulling from one shared broker.
//!
//! A controller thread advances the logical clock once per `tick`, publishes
//! due batches, expires leases and sets how many replicas per pool may pull.
//! Record order depends on thread scheduling; counts and conservation do not.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::sim::{failed_record, finish_metrics, record_inference, sorted_batches, tick_sample};
use super::{autoscale_step, crashes, Batch, Broker, PoolMetrics, ResultTable, RunOutput, SimConfig, Topology};
use crate::error::{Error, Result};

struct Shared {
    broker: Broker,
    tables: Vec<ResultTable>,
    metrics: Vec<PoolMetrics>,
    inferred: HashSet<String>,
}

pub fn run_live(topology: &Topology, workload: &[Batch], cfg: &SimConfig, tick: Duration) -> Result<RunOutput> {
    topology.validate()?;
    cfg.validate()?;
    let names = topology.pool_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let policy = cfg.policy;
    let shared = Mutex::new(Shared {
        broker: Broker::new(cfg.broker, &refs)?,
        tables: names.iter().map(ResultTable::new).collect(),
        metrics: names
            .iter()
            .map(|n| PoolMetrics {
                name: n.clone(),
                ..PoolMetrics::default()
            })
            .collect(),
        inferred: HashSet::new(),
    });
    let active: Vec<AtomicUsize> = names.iter().map(|_| AtomicUsize::new(policy.min_replicas)).collect();
    let clock = AtomicU64::new(0);
    let done = AtomicBool::new(false);
    let batches = sorted_batches(workload);
    let idle = tick / 4;

    let outcome = thread::scope(|scope| {
        for pool in 0..names.len() {
            for k in 0..policy.max_replicas {
                let (shared, active, clock, done) = (&shared, &active, &clock, &done);
                let stage = topology.stage(pool);
                let replica = format!("{}-r{k}", names[pool]);
                scope.spawn(move || {
                    while !done.load(Ordering::Acquire) {
                        if k >= active[pool].load(Ordering::Acquire) {
                            thread::sleep(idle);
                            continue;
                        }
                        let now = clock.load(Ordering::Acquire);
                        let pulled = shared.lock().expect("lock").broker.pull(pool, now);
                        let Some((message, ack)) = pulled else {
                            thread::sleep(idle);
                            continue;
                        };
                        if crashes(cfg, &message) {
                            shared.lock().expect("lock").metrics[pool].crashes += 1;
                            continue;
                        }
                        let result = stage.infer(&message.payload);
                        let now = clock.load(Ordering::Acquire);
                        let mut s = shared.lock().expect("lock");
                        let s = &mut *s;
                        match result {
                            Ok(inference) => {
                                s.inferred.insert(message.sample_id.clone());
                                let record = record_inference(&mut s.metrics[pool], &message, inference, now, &replica);
                                s.tables[pool].append(record);
                                let _ = s.broker.ack(pool, ack);
                            }
                            Err(_) => s.metrics[pool].failed_attempts += 1,
                        }
                    }
                });
            }
        }

        let mut next_batch = 0;
        let mut last_scale = vec![0u64; names.len()];
        let mut now = 0u64;
        let result = loop {
            {
                let mut s = shared.lock().expect("lock");
                let s = &mut *s;
                let mut publish_error = None;
                while next_batch < batches.len() && batches[next_batch].trigger <= now {
                    let b = batches[next_batch];
                    if let Err(e) = s.broker.produce(b.trigger, &b.items) {
                        publish_error = Some(e);
                        break;
                    }
                    next_batch += 1;
                }
                if let Some(e) = publish_error {
                    break Err(e);
                }
                for (sub, message) in s.broker.expire(now) {
                    s.metrics[sub].dead_lettered += 1;
                    s.tables[sub].append(failed_record(&message, now));
                }
                for (i, slot) in active.iter().enumerate() {
                    let current = slot.load(Ordering::Acquire);
                    let depth = s.broker.counts(i).pending();
                    if now.is_multiple_of(policy.poll_interval) {
                        let next = autoscale_step(&policy, depth, current, now, last_scale[i]);
                        if next != current {
                            slot.store(next, Ordering::Release);
                            last_scale[i] = now;
                        }
                    }
                    let sample = tick_sample(
                        now,
                        s.broker.counts(i),
                        depth,
                        slot.load(Ordering::Acquire),
                        s.metrics[i].inferences,
                    );
                    s.metrics[i].series.push(sample);
                }
                if next_batch == batches.len() && s.broker.is_drained() {
                    break Ok(now);
                }
                if now >= cfg.max_ticks {
                    let unpublished: usize = batches[next_batch..].iter().map(|b| b.items.len()).sum();
                    let pending: usize = (0..names.len()).map(|i| s.broker.counts(i).pending()).sum();
                    let partial = finish_metrics("live", now + 1, s.metrics.clone(), &s.tables, &s.broker, &s.inferred);
                    break Err(Error::Timeout {
                        tick: now,
                        unprocessed: unpublished + pending,
                        partial: Box::new(partial),
                    });
                }
            }
            thread::sleep(tick);
            now += 1;
            clock.store(now, Ordering::Release);
        };
        done.store(true, Ordering::Release);
        result
    });

    let last = outcome?;
    let s = shared.into_inner().expect("workers joined");
    let metrics = finish_metrics("live", last + 1, s.metrics, &s.tables, &s.broker, &s.inferred);
    Ok(RunOutput {
        metrics,
        tables: s.tables,
    })
}
