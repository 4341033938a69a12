//! Publish/subscribe broker with leases, acknowledgment and dead-lettering.
//!
//! One topic fans out to any number of named subscriptions. Each
//! subscription keeps its own copy of every message routed to it and tracks
//! it through backlog, in-flight, acked or dead-lettered.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: u64,
    pub sample_id: String,
    pub payload: Vec<f64>,
    pub publish_time: u64,
    /// 0 until first pulled; grows by one on every lease expiry.
    pub delivery_count: u32,
}

/// Receipt for one delivery. Acks carrying an outdated delivery are stale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AckId {
    pub message_id: u64,
    pub delivery: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrokerConfig {
    pub visibility_timeout: u64,
    pub max_deliveries: u32,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            visibility_timeout: 30,
            max_deliveries: 3,
        }
    }
}

impl BrokerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.visibility_timeout == 0 {
            return Err(invalid("visibility timeout must be positive"));
        }
        if self.max_deliveries == 0 {
            return Err(invalid("max deliveries must be positive"));
        }
        Ok(())
    }
}

/// One item of an inference batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceItem {
    pub sample_id: String,
    pub features: Vec<f64>,
    /// Subscriptions that receive the item; `None` means all of them.
    pub routes: Option<Vec<String>>,
}

impl InferenceItem {
    pub fn new(sample_id: impl Into<String>, features: Vec<f64>) -> Self {
        InferenceItem {
            sample_id: sample_id.into(),
            features,
            routes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lease {
    deadline: u64,
    delivery: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Subscription {
    name: String,
    messages: BTreeMap<u64, Message>,
    backlog: VecDeque<u64>,
    in_flight: BTreeMap<u64, Lease>,
    acked: BTreeSet<u64>,
    dead: BTreeSet<u64>,
    stale_acks: u64,
}

/// Counts for one subscription at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QueueCounts {
    pub published: usize,
    pub backlog: usize,
    pub in_flight: usize,
    pub acked: usize,
    pub dead_lettered: usize,
}

impl QueueCounts {
    pub fn is_conserved(&self) -> bool {
        self.published == self.backlog + self.in_flight + self.acked + self.dead_lettered
    }

    /// Messages still owed processing.
    pub fn pending(&self) -> usize {
        self.backlog + self.in_flight
    }
}

impl Subscription {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn counts(&self) -> QueueCounts {
        QueueCounts {
            published: self.messages.len(),
            backlog: self.backlog.len(),
            in_flight: self.in_flight.len(),
            acked: self.acked.len(),
            dead_lettered: self.dead.len(),
        }
    }

    pub fn stale_acks(&self) -> u64 {
        self.stale_acks
    }

    pub fn message(&self, id: u64) -> Option<&Message> {
        self.messages.get(&id)
    }

    fn pull(&mut self, now: u64, timeout: u64) -> Option<(Message, AckId)> {
        let id = self.backlog.pop_front()?;
        let msg = self.messages.get_mut(&id).expect("backlog ids are published");
        msg.delivery_count = msg.delivery_count.max(1);
        let delivery = msg.delivery_count;
        self.in_flight.insert(
            id,
            Lease {
                deadline: now + timeout,
                delivery,
            },
        );
        Some((
            msg.clone(),
            AckId {
                message_id: id,
                delivery,
            },
        ))
    }

    fn ack(&mut self, ack: AckId) -> Result<()> {
        match self.in_flight.get(&ack.message_id) {
            Some(lease) if lease.delivery == ack.delivery => {
                self.in_flight.remove(&ack.message_id);
                self.acked.insert(ack.message_id);
                Ok(())
            }
            _ => {
                self.stale_acks += 1;
                Err(Error::StaleAck {
                    message_id: ack.message_id,
                    delivery: ack.delivery,
                })
            }
        }
    }

    /// Returns messages dead-lettered by this sweep.
    fn expire(&mut self, now: u64, max_deliveries: u32) -> Vec<Message> {
        let expired: Vec<u64> = self
            .in_flight
            .iter()
            .filter(|(_, lease)| lease.deadline <= now)
            .map(|(id, _)| *id)
            .collect();
        let mut dead = Vec::new();
        for id in expired {
            self.in_flight.remove(&id);
            let msg = self.messages.get_mut(&id).expect("in-flight ids are published");
            if msg.delivery_count >= max_deliveries {
                self.dead.insert(id);
                dead.push(msg.clone());
            } else {
                msg.delivery_count += 1;
                self.backlog.push_back(id);
            }
        }
        dead
    }
}

#[derive(Debug, Clone)]
pub struct Broker {
    config: BrokerConfig,
    subscriptions: Vec<Subscription>,
    next_id: u64,
    published_keys: HashSet<(u64, String)>,
}

impl Broker {
    pub fn new(config: BrokerConfig, subscriptions: &[&str]) -> Result<Self> {
        config.validate()?;
        if subscriptions.is_empty() {
            return Err(invalid("a broker needs at least one subscription"));
        }
        let mut seen = HashSet::new();
        for s in subscriptions {
            if !seen.insert(*s) {
                return Err(invalid(format!("duplicate subscription `{s}`")));
            }
        }
        Ok(Broker {
            config,
            subscriptions: subscriptions
                .iter()
                .map(|name| Subscription {
                    name: name.to_string(),
                    ..Subscription::default()
                })
                .collect(),
            next_id: 0,
            published_keys: HashSet::new(),
        })
    }

    pub fn config(&self) -> &BrokerConfig {
        &self.config
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }

    pub fn subscription_index(&self, name: &str) -> Option<usize> {
        self.subscriptions.iter().position(|s| s.name == name)
    }

    /// Publish a batch for `trigger`. The batch is all-or-nothing: a sample id
    /// repeated within it, or already published for the same trigger, rejects
    /// the whole batch. Returns the number of messages enqueued across
    /// subscriptions.
    pub fn produce(&mut self, trigger: u64, items: &[InferenceItem]) -> Result<usize> {
        let mut batch_ids = HashSet::new();
        let mut targets = Vec::with_capacity(items.len());
        for item in items {
            let key = (trigger, item.sample_id.clone());
            if !batch_ids.insert(item.sample_id.as_str()) || self.published_keys.contains(&key) {
                return Err(Error::DuplicatePublish {
                    trigger,
                    sample_id: item.sample_id.clone(),
                });
            }
            let subs = match &item.routes {
                None => (0..self.subscriptions.len()).collect(),
                Some(routes) => routes
                    .iter()
                    .map(|r| {
                        self.subscription_index(r).ok_or_else(|| {
                            invalid(format!(
                                "sample `{}` routed to unknown subscription `{r}`",
                                item.sample_id
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            targets.push(subs);
        }
        let mut count = 0;
        for (item, subs) in items.iter().zip(targets) {
            self.published_keys.insert((trigger, item.sample_id.clone()));
            for s in subs {
                let id = self.next_id;
                self.next_id += 1;
                let sub = &mut self.subscriptions[s];
                sub.messages.insert(
                    id,
                    Message {
                        id,
                        sample_id: item.sample_id.clone(),
                        payload: item.features.clone(),
                        publish_time: trigger,
                        delivery_count: 0,
                    },
                );
                sub.backlog.push_back(id);
                count += 1;
            }
        }
        Ok(count)
    }

    pub fn pull(&mut self, sub: usize, now: u64) -> Option<(Message, AckId)> {
        let timeout = self.config.visibility_timeout;
        self.subscriptions[sub].pull(now, timeout)
    }

    pub fn ack(&mut self, sub: usize, ack: AckId) -> Result<()> {
        self.subscriptions[sub].ack(ack)
    }

    /// Return expired leases to the backlog; messages out of deliveries are
    /// dead-lettered and returned with their subscription index.
    pub fn expire(&mut self, now: u64) -> Vec<(usize, Message)> {
        let max = self.config.max_deliveries;
        let mut dead = Vec::new();
        for (i, sub) in self.subscriptions.iter_mut().enumerate() {
            dead.extend(sub.expire(now, max).into_iter().map(|m| (i, m)));
        }
        dead
    }

    pub fn counts(&self, sub: usize) -> QueueCounts {
        self.subscriptions[sub].counts()
    }

    pub fn is_drained(&self) -> bool {
        self.subscriptions.iter().all(|s| s.counts().pending() == 0)
    }

    pub fn stale_acks(&self) -> u64 {
        self.subscriptions.iter().map(|s| s.stale_acks).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn items(n: usize) -> Vec<InferenceItem> {
        (0..n)
            .map(|i| InferenceItem::new(format!("s{i}"), vec![i as f64]))
            .collect()
    }

    fn single() -> Broker {
        Broker::new(BrokerConfig::default(), &["main"]).unwrap()
    }

    #[test]
    fn produce_examples() {
        let mut b = single();
        assert_eq!(b.produce(0, &[]).unwrap(), 0);
        assert_eq!(b.produce(0, &items(5)).unwrap(), 5);
        assert_eq!(b.counts(0).backlog, 5);
        let err = b.produce(0, &items(5)).unwrap_err();
        assert!(matches!(err, Error::DuplicatePublish { trigger: 0, .. }));
        assert_eq!(b.counts(0).backlog, 5);
        // a new trigger may carry the same sample ids
        assert_eq!(b.produce(1, &items(2)).unwrap(), 2);
    }

    #[test]
    fn duplicate_within_batch_rejects_everything() {
        let mut b = single();
        let mut batch = items(3);
        batch.push(InferenceItem::new("s1", vec![0.0]));
        assert!(b.produce(0, &batch).is_err());
        assert_eq!(b.counts(0).published, 0);
    }

    #[test]
    fn fan_out_and_routes() {
        let mut b = Broker::new(BrokerConfig::default(), &["a", "b"]).unwrap();
        let mut batch = items(3);
        batch[2].routes = Some(vec!["b".into()]);
        assert_eq!(b.produce(0, &batch).unwrap(), 5);
        assert_eq!(b.counts(0).backlog, 2);
        assert_eq!(b.counts(1).backlog, 3);
        batch[2].routes = Some(vec!["c".into()]);
        assert!(b.produce(1, &batch).is_err());
        assert_eq!(b.counts(1).published, 3);
    }

    #[test]
    fn pull_and_ack() {
        let mut b = single();
        assert!(b.pull(0, 0).is_none());
        b.produce(0, &items(2)).unwrap();
        let (m, ack) = b.pull(0, 0).unwrap();
        assert_eq!(m.delivery_count, 1);
        assert_eq!(m.sample_id, "s0");
        assert!(b.counts(0).is_conserved());
        b.ack(0, ack).unwrap();
        assert_eq!(b.counts(0).acked, 1);
        assert!(matches!(b.ack(0, ack), Err(Error::StaleAck { .. })));
        assert_eq!(b.stale_acks(), 1);
    }

    #[test]
    fn expiry_redelivers_then_dead_letters() {
        let mut b = single();
        b.produce(0, &items(1)).unwrap();
        let (_, first) = b.pull(0, 0).unwrap();
        assert!(b.expire(29).is_empty());
        assert_eq!(b.counts(0).in_flight, 1);
        assert!(b.expire(30).is_empty());
        assert_eq!(b.counts(0).backlog, 1);
        let (m, second) = b.pull(0, 30).unwrap();
        assert_eq!(m.delivery_count, 2);
        assert!(b.ack(0, first).is_err());
        b.expire(60);
        let (m, _) = b.pull(0, 60).unwrap();
        assert_eq!(m.delivery_count, 3);
        let dead = b.expire(90);
        assert_eq!(dead.len(), 1);
        assert_eq!(b.counts(0).dead_lettered, 1);
        assert!(b.ack(0, second).is_err());
        assert!(b.counts(0).is_conserved());
        assert!(b.is_drained());
    }

    #[test]
    fn config_validation() {
        let bad = BrokerConfig {
            visibility_timeout: 0,
            ..BrokerConfig::default()
        };
        assert!(Broker::new(bad, &["a"]).is_err());
        assert!(Broker::new(BrokerConfig::default(), &[]).is_err());
        assert!(Broker::new(BrokerConfig::default(), &["a", "a"]).is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Produce(usize),
        Pull,
        AckOldest,
        Advance(u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..4).prop_map(Op::Produce),
            Just(Op::Pull),
            Just(Op::AckOldest),
            (0u64..40).prop_map(Op::Advance),
        ]
    }

    proptest! {
        #[test]
        fn conservation_under_random_operations(ops in prop::collection::vec(op(), 1..120)) {
            let mut b = Broker::new(BrokerConfig::default(), &["x", "y"]).unwrap();
            let mut now = 0;
            let mut trigger = 0;
            let mut leases: Vec<(usize, AckId)> = Vec::new();
            for op in ops {
                match op {
                    Op::Produce(n) => {
                        trigger += 1;
                        b.produce(trigger, &items(n)).unwrap();
                    }
                    Op::Pull => {
                        for s in 0..2 {
                            if let Some((_, ack)) = b.pull(s, now) {
                                leases.push((s, ack));
                            }
                        }
                    }
                    Op::AckOldest => {
                        if !leases.is_empty() {
                            let (s, ack) = leases.remove(0);
                            let _ = b.ack(s, ack);
                        }
                    }
                    Op::Advance(dt) => {
                        now += dt;
                        b.expire(now);
                    }
                }
                for s in 0..2 {
                    prop_assert!(b.counts(s).is_conserved());
                }
            }
        }
    }
}
