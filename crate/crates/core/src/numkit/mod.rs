//! Dense-math core: activations, losses, the learning-rate schedule and a
//! small feed-forward network trained with plain SGD.

mod checkpoint;
mod mlp;

pub use checkpoint::{load_model, save_model};
pub use mlp::{
    fit, train_step, Activation, Dense, Example, Gradients, HeadKind, HeadLayout, HeadTarget, MlpModel, TrainConfig,
    TrainLog,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lower clamp applied to every probability that enters a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Raw, pre-softmax class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_logits(&values)?;
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A normalised distribution over a finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Entries must lie in `[0, 1]` and sum to one within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty probability vector"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(invalid("probability outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(ProbVector(probs))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("uniform over empty support"));
        }
        Ok(ProbVector(vec![1.0 / n as f64; n]))
    }

    /// `[p, 1 - p]` for a sigmoid output.
    pub fn binary(p: f64) -> Result<Self> {
        ProbVector::new(vec![p, 1.0 - p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_logits(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(invalid("empty logit vector"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("non-finite logit at index {i}")));
    }
    Ok(())
}

/// Max-subtracted softmax.
pub fn softmax(z: &[f64]) -> Result<ProbVector> {
    check_logits(z)?;
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    Ok(ProbVector(out))
}

pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn cross_entropy(p: &ProbVector, target: usize) -> Result<f64> {
    let probs = p.as_slice();
    if target >= probs.len() {
        return Err(invalid(format!(
            "target {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[target].max(PROB_FLOOR).ln())
}

/// `p` is clamped to `[1e-12, 1 - 1e-12]` before taking logs.
pub fn binary_cross_entropy(p: f64, y: bool) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `KL(p || q)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid(format!("length mismatch: {} vs {}", p.len(), q.len())));
    }
    if q.as_slice().iter().any(|v| *v <= 0.0) {
        return Err(invalid("reference distribution must be strictly positive"));
    }
    let kl: f64 = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    // Rounding can leave a tiny negative residue when p == q.
    Ok(kl.max(0.0))
}

/// Single-cycle cosine annealing from `base_lr` at `t = 0` to `min_lr` at `t = total`.
pub fn cosine_lr(t: u64, total: u64, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(invalid("cosine schedule needs at least one step"));
    }
    if t > total {
        return Err(invalid(format!("step {t} beyond schedule length {total}")));
    }
    if t == total {
        return Ok(min_lr);
    }
    let phase = std::f64::consts::PI * t as f64 / total as f64;
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + phase.cos()))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p.as_slice() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!(close(p.as_slice()[0], 2.0 / 3.0, 1e-15));
        assert!(close(p.as_slice()[1], 1.0 / 3.0, 1e-15));
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(close(p.as_slice()[0], 1.0, 1e-15));
        assert!(p.as_slice()[1] >= 0.0 && p.as_slice()[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(LogitVector::new(vec![]).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let one_hot = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cross_entropy(&one_hot, 1).unwrap(), 0.0);
        let uniform = ProbVector::uniform(7).unwrap();
        assert!(close(cross_entropy(&uniform, 3).unwrap(), 7f64.ln(), 1e-12));
        let p = ProbVector::new(vec![0.25, 0.75]).unwrap();
        assert!(close(cross_entropy(&p, 1).unwrap(), (4.0f64 / 3.0).ln(), 1e-15));
        assert!(cross_entropy(&p, 2).is_err());
        // Clamped at the floor instead of going infinite.
        assert!(close(cross_entropy(&one_hot, 0).unwrap(), -PROB_FLOOR.ln(), 1e-9));
    }

    #[test]
    fn bce_examples() {
        assert!(close(binary_cross_entropy(0.5, true), 2f64.ln(), 1e-15));
        assert!(close(binary_cross_entropy(0.5, false), 2f64.ln(), 1e-15));
        assert!(binary_cross_entropy(1.0 - 1e-15, true) < 1e-11);
        assert!(binary_cross_entropy(0.0, false) < 1e-11);
        assert!(close(binary_cross_entropy(0.9, false), 10f64.ln(), 1e-12));
        assert!(binary_cross_entropy(0.0, true).is_finite());
    }

    #[test]
    fn kl_examples() {
        let p = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let p = ProbVector::new(vec![1.0, 0.0]).unwrap();
        let q = ProbVector::uniform(2).unwrap();
        assert!(close(kl_divergence(&p, &q).unwrap(), 2f64.ln(), 1e-15));
        assert!(kl_divergence(&p, &ProbVector::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn kl_matches_direct_summation() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let n = 2 + rng.below(8);
            let raw: Vec<f64> = (0..n).map(|_| rng.uniform() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let mut oracle = 0.0;
            for v in &p {
                oracle += v * v.ln() - v * (1.0 / n as f64).ln();
            }
            let got = kl_divergence(&ProbVector::new(p.clone()).unwrap(), &ProbVector::uniform(n).unwrap()).unwrap();
            assert!(close(got, oracle, 1e-12), "{got} vs {oracle}");
        }
    }

    #[test]
    fn kl_to_uniform_zero_only_for_uniform() {
        let u = ProbVector::uniform(4).unwrap();
        assert!(kl_divergence(&u, &u).unwrap() <= 1e-12);
        let p = ProbVector::new(vec![0.25 + 1e-3, 0.25 - 1e-3, 0.25, 0.25]).unwrap();
        assert!(kl_divergence(&p, &u).unwrap() > 1e-12);
    }

    #[test]
    fn cosine_examples() {
        let (base, min) = (2e-3, 1e-5);
        assert_eq!(cosine_lr(0, 100, base, min).unwrap(), base);
        assert_eq!(cosine_lr(100, 100, base, min).unwrap(), min);
        assert!(close(cosine_lr(50, 100, base, min).unwrap(), (base + min) / 2.0, 1e-12));
        assert!(cosine_lr(101, 100, base, min).is_err());
        assert!(cosine_lr(0, 0, base, min).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    proptest! {
        #[test]
        fn softmax_normalised_and_shift_invariant(
            z in prop::collection::vec(-50.0f64..50.0, 1..12),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&z).unwrap();
            let total: f64 = p.as_slice().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_preserves_argmax(z in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&z).unwrap();
            prop_assert_eq!(argmax(p.as_slice()), argmax(&z));
        }

        #[test]
        fn cosine_nonincreasing(total in 1u64..500, base in 1e-4f64..1.0, frac in 0.0f64..1.0) {
            let min = base * frac;
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = cosine_lr(t, total, base, min).unwrap();
                prop_assert!(lr <= prev);
                prev = lr;
            }
        }
    }
}
