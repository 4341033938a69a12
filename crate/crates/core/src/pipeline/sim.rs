//! Deterministic discrete-event run on a logical clock.
//!
//! Each tick, in order: publish due batches, expire leases, let the
//! autoscaler act (every `poll_interval` ticks), finish due jobs, retire
//! drained replicas, hand backlog to idle replicas, sample the queues.

use std::collections::HashSet;

use super::{
    autoscale_step, crashes, Batch, Broker, Inference, Message, PoolMetrics, PredictionRecord, QueueCounts,
    ResultTable, RunMetrics, RunOutput, SimConfig, TickSample, Topology, Verdict,
};
use crate::error::{Error, Result};

struct Job {
    message: Message,
    ack: super::AckId,
    finish: u64,
}

struct Replica {
    id: String,
    job: Option<Job>,
    draining: bool,
}

struct Pool {
    replicas: Vec<Replica>,
    target: usize,
    last_scale: u64,
    spawned: usize,
    metrics: PoolMetrics,
    table: ResultTable,
}

impl Pool {
    fn new(name: &str, initial: usize) -> Self {
        let mut pool = Pool {
            replicas: Vec::new(),
            target: 0,
            last_scale: 0,
            spawned: 0,
            metrics: PoolMetrics {
                name: name.to_string(),
                ..PoolMetrics::default()
            },
            table: ResultTable::new(name),
        };
        pool.resize(initial);
        pool
    }

    /// Scale-down is graceful: surplus replicas finish their current job
    /// before they leave.
    fn resize(&mut self, target: usize) {
        let mut active = self.replicas.iter().filter(|r| !r.draining).count();
        for r in self.replicas.iter_mut().filter(|r| r.draining) {
            if active >= target {
                break;
            }
            r.draining = false;
            active += 1;
        }
        while active < target {
            self.replicas.push(Replica {
                id: format!("{}-r{}", self.metrics.name, self.spawned),
                job: None,
                draining: false,
            });
            self.spawned += 1;
            active += 1;
        }
        for r in self.replicas.iter_mut().rev().filter(|r| !r.draining) {
            if active <= target {
                break;
            }
            r.draining = true;
            active -= 1;
        }
        self.target = target;
    }
}

pub(super) fn failed_record(message: &Message, tick: u64) -> PredictionRecord {
    PredictionRecord {
        sample_id: message.sample_id.clone(),
        message_id: message.id,
        verdict: Verdict::Failed,
        top_n: Vec::new(),
        ood_score: None,
        tick,
        replica: "dead-letter".into(),
    }
}

pub(super) fn record_inference(
    metrics: &mut PoolMetrics,
    message: &Message,
    inference: Inference,
    tick: u64,
    replica: &str,
) -> PredictionRecord {
    metrics.inferences += 1;
    match inference.verdict {
        Verdict::Rejected => metrics.rejected += 1,
        _ => metrics.classifications += 1,
    }
    PredictionRecord {
        sample_id: message.sample_id.clone(),
        message_id: message.id,
        verdict: inference.verdict,
        top_n: inference.top_n,
        ood_score: Some(inference.score),
        tick,
        replica: replica.to_string(),
    }
}

pub(super) fn tick_sample(
    tick: u64,
    counts: QueueCounts,
    depth_seen: usize,
    replicas: usize,
    inferences: u64,
) -> TickSample {
    TickSample {
        depth_seen,
        tick,
        published: counts.published,
        backlog: counts.backlog,
        in_flight: counts.in_flight,
        acked: counts.acked,
        dead_lettered: counts.dead_lettered,
        replicas,
        inferences,
    }
}

pub(super) fn aggregate(pools: &[PoolMetrics], tick_index: usize) -> TickSample {
    let mut s = TickSample::default();
    for p in pools {
        let t = &p.series[tick_index];
        s.tick = t.tick;
        s.published += t.published;
        s.backlog += t.backlog;
        s.in_flight += t.in_flight;
        s.acked += t.acked;
        s.dead_lettered += t.dead_lettered;
        s.depth_seen += t.depth_seen;
        s.replicas += t.replicas;
        s.inferences += t.inferences;
    }
    s
}

pub(super) fn finish_metrics(
    mode: &str,
    ticks: u64,
    mut pools: Vec<PoolMetrics>,
    tables: &[ResultTable],
    broker: &Broker,
    inferred: &HashSet<String>,
) -> RunMetrics {
    for (i, p) in pools.iter_mut().enumerate() {
        p.published = broker.counts(i).published;
        p.stale_acks = broker.subscriptions()[i].stale_acks();
        p.records = tables[i].len();
    }
    let series = (0..pools.first().map_or(0, |p| p.series.len()))
        .map(|i| aggregate(&pools, i))
        .collect();
    let total: u64 = pools.iter().map(|p| p.inferences).sum();
    let distinct = inferred.len() as u64;
    RunMetrics {
        mode: mode.to_string(),
        ticks,
        published: pools.iter().map(|p| p.published).sum(),
        total_inferences: total,
        distinct_samples_inferred: distinct,
        duplicate_inferences: total - distinct,
        classifications: pools.iter().map(|p| p.classifications).sum(),
        rejected: pools.iter().map(|p| p.rejected).sum(),
        failed_attempts: pools.iter().map(|p| p.failed_attempts).sum(),
        dead_lettered: pools.iter().map(|p| p.dead_lettered).sum(),
        crashes: pools.iter().map(|p| p.crashes).sum(),
        stale_acks: pools.iter().map(|p| p.stale_acks).sum(),
        records: tables.iter().map(ResultTable::len).sum(),
        pools,
        series,
    }
}

pub(super) fn sorted_batches(workload: &[Batch]) -> Vec<&Batch> {
    let mut batches: Vec<&Batch> = workload.iter().collect();
    batches.sort_by_key(|b| b.trigger);
    batches
}

/// Drive the topology over `workload` until every message is acked or
/// dead-lettered.
pub fn run(topology: &Topology, workload: &[Batch], cfg: &SimConfig) -> Result<RunOutput> {
    topology.validate()?;
    cfg.validate()?;
    let names = topology.pool_names();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut broker = Broker::new(cfg.broker, &refs)?;
    let batches = sorted_batches(workload);
    let policy = cfg.policy;
    let mut pools: Vec<Pool> = names.iter().map(|n| Pool::new(n, policy.min_replicas)).collect();
    let stages: Vec<_> = (0..pools.len()).map(|i| topology.stage(i)).collect();
    let mut inferred: HashSet<String> = HashSet::new();
    let mut next_batch = 0;
    let mut now = 0u64;
    loop {
        while next_batch < batches.len() && batches[next_batch].trigger <= now {
            let b = batches[next_batch];
            broker.produce(b.trigger, &b.items)?;
            next_batch += 1;
        }
        for (sub, message) in broker.expire(now) {
            let pool = &mut pools[sub];
            pool.metrics.dead_lettered += 1;
            pool.table.append(failed_record(&message, now));
        }
        let depths: Vec<usize> = (0..pools.len()).map(|i| broker.counts(i).pending()).collect();
        if now.is_multiple_of(policy.poll_interval) {
            for (i, pool) in pools.iter_mut().enumerate() {
                let depth = depths[i];
                let next = autoscale_step(&policy, depth, pool.target, now, pool.last_scale);
                if next != pool.target {
                    pool.resize(next);
                    pool.last_scale = now;
                }
            }
        }
        for (i, pool) in pools.iter_mut().enumerate() {
            let Pool {
                replicas,
                metrics,
                table,
                ..
            } = pool;
            for r in replicas.iter_mut() {
                let Some(job) = r.job.take_if(|j| j.finish <= now) else {
                    continue;
                };
                if crashes(cfg, &job.message) {
                    metrics.crashes += 1;
                    continue;
                }
                match stages[i].infer(&job.message.payload) {
                    Ok(inference) => {
                        inferred.insert(job.message.sample_id.clone());
                        table.append(record_inference(metrics, &job.message, inference, now, &r.id));
                        match broker.ack(i, job.ack) {
                            Ok(()) | Err(Error::StaleAck { .. }) => {}
                            Err(e) => return Err(e),
                        }
                    }
                    Err(_) => metrics.failed_attempts += 1,
                }
            }
            replicas.retain(|r| !(r.draining && r.job.is_none()));
            for r in replicas.iter_mut().filter(|r| !r.draining && r.job.is_none()) {
                let Some((message, ack)) = broker.pull(i, now) else {
                    break;
                };
                r.job = Some(Job {
                    message,
                    ack,
                    finish: now + cfg.service_time,
                });
            }
        }
        for (i, pool) in pools.iter_mut().enumerate() {
            let sample = tick_sample(now, broker.counts(i), depths[i], pool.target, pool.metrics.inferences);
            pool.metrics.series.push(sample);
        }
        let busy = pools.iter().any(|p| p.replicas.iter().any(|r| r.job.is_some()));
        if next_batch == batches.len() && broker.is_drained() && !busy {
            break;
        }
        if now >= cfg.max_ticks {
            let unpublished: usize = batches[next_batch..].iter().map(|b| b.items.len()).sum();
            let pending: usize = (0..pools.len()).map(|i| broker.counts(i).pending()).sum();
            let (metrics, tables) = split(pools);
            let partial = finish_metrics("simulation", now + 1, metrics, &tables, &broker, &inferred);
            return Err(Error::Timeout {
                tick: now,
                unprocessed: unpublished + pending,
                partial: Box::new(partial),
            });
        }
        now += 1;
    }
    let (metrics, tables) = split(pools);
    let metrics = finish_metrics("simulation", now + 1, metrics, &tables, &broker, &inferred);
    Ok(RunOutput { metrics, tables })
}

fn split(pools: Vec<Pool>) -> (Vec<PoolMetrics>, Vec<ResultTable>) {
    pools.into_iter().map(|p| (p.metrics, p.table)).unzip()
}
