use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Queue-depth-driven replica policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingPolicy {
    pub target_backlog_per_replica: usize,
    pub min_replicas: usize,
    pub max_replicas: usize,
    /// Ticks that must pass after the last change before scaling down.
    pub cooldown: u64,
    /// The autoscaler looks at the queue every `poll_interval` ticks.
    pub poll_interval: u64,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        ScalingPolicy {
            target_backlog_per_replica: 10,
            min_replicas: 1,
            max_replicas: 20,
            cooldown: 10,
            poll_interval: 1,
        }
    }
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.target_backlog_per_replica == 0 {
            return Err(invalid("target backlog per replica must be at least 1"));
        }
        if self.min_replicas > self.max_replicas {
            return Err(invalid("min replicas exceeds max replicas"));
        }
        if self.max_replicas == 0 {
            return Err(invalid("max replicas must be positive"));
        }
        if self.poll_interval == 0 {
            return Err(invalid("poll interval must be positive"));
        }
        Ok(())
    }

    /// `clamp(ceil(depth / target), min, max)`.
    pub fn desired(&self, depth: usize) -> usize {
        depth
            .div_ceil(self.target_backlog_per_replica)
            .clamp(self.min_replicas, self.max_replicas)
    }
}

/// Replica count after one autoscaler decision. Scale-up is immediate;
/// scale-down waits until `cooldown` ticks have passed since `last_scale`.
pub fn autoscale_step(policy: &ScalingPolicy, depth: usize, current: usize, now: u64, last_scale: u64) -> usize {
    let desired = policy.desired(depth);
    if desired >= current || now.saturating_sub(last_scale) >= policy.cooldown {
        desired
    } else {
        current
    }
}
