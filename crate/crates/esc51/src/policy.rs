//! Softmax (Boltzmann) action selection over Q-values, the linear temperature
//! decay schedule, and the greedy selector used by the QL-C51 backup.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("Q-value vector is empty")]
    EmptyQValues,
    #[error("Q-values must be finite, got {0}")]
    NonFiniteQValue(f64),
    #[error("action probabilities are not a valid distribution (sum {sum})")]
    InvalidDistribution { sum: f64 },
    #[error("invalid schedule: need tau_start >= tau_floor > 0, decay_fraction in (0,1], total_timesteps >= 1")]
    InvalidSchedule,
}

/// Linear decay of the softmax temperature from `tau_start` down to
/// `tau_floor` over the first `decay_fraction` of `total_timesteps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_floor: f64,
    pub decay_fraction: f64,
    pub total_timesteps: u64,
}

impl TemperatureSchedule {
    pub fn new(
        tau_start: f64,
        tau_floor: f64,
        decay_fraction: f64,
        total_timesteps: u64,
    ) -> Result<Self, PolicyError> {
        let ok = tau_floor > 0.0
            && tau_start >= tau_floor
            && tau_start.is_finite()
            && decay_fraction > 0.0
            && decay_fraction <= 1.0
            && total_timesteps >= 1;
        if !ok {
            return Err(PolicyError::InvalidSchedule);
        }
        Ok(Self { tau_start, tau_floor, decay_fraction, total_timesteps })
    }

    /// Defaults: start 1.0, floor 0.01, decay over the first 75% of training.
    pub fn with_defaults(total_timesteps: u64) -> Self {
        Self { tau_start: 1.0, tau_floor: 0.01, decay_fraction: 0.75, total_timesteps }
    }

    /// `max(tau_start · (1 − t / (decay_fraction · T)), tau_floor)`.
    pub fn tau_at(&self, t: u64) -> f64 {
        let horizon = self.decay_fraction * self.total_timesteps as f64;
        (self.tau_start * (1.0 - t as f64 / horizon)).max(self.tau_floor)
    }
}

/// Numerically stable softmax of `q / tau` (max-subtracted before
/// exponentiation so a small `tau` cannot overflow).
pub fn softmax_probs(q_values: &[f64], tau: f64) -> Result<Vec<f64>, PolicyError> {
    if q_values.is_empty() {
        return Err(PolicyError::EmptyQValues);
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(PolicyError::NonPositiveTemperature(tau));
    }
    let mut max_q = f64::NEG_INFINITY;
    for &q in q_values {
        if !q.is_finite() {
            return Err(PolicyError::NonFiniteQValue(q));
        }
        max_q = max_q.max(q);
    }
    let mut probs: Vec<f64> = q_values.iter().map(|&q| ((q - max_q) / tau).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

/// Draws an index with probability `probs[i]` by inverse-CDF sampling.
/// Deterministic given the rng state.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, PolicyError> {
    let mut sum = 0.0;
    for &p in probs {
        if !(p >= 0.0) {
            return Err(PolicyError::InvalidDistribution { sum: f64::NAN });
        }
        sum += p;
    }
    if probs.is_empty() || (sum - 1.0).abs() > 1e-9 {
        return Err(PolicyError::InvalidDistribution { sum });
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding can leave acc fractionally below 1; the draw belongs to the tail.
    Ok(probs.len() - 1)
}

/// Index of the maximum Q-value; ties break toward the lowest index.
pub fn greedy_action(q_values: &[f64]) -> Result<usize, PolicyError> {
    if q_values.is_empty() {
        return Err(PolicyError::EmptyQValues);
    }
    let mut best = 0;
    for (i, &q) in q_values.iter().enumerate() {
        if !q.is_finite() {
            return Err(PolicyError::NonFiniteQValue(q));
        }
        if q > q_values[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> TemperatureSchedule {
        TemperatureSchedule::with_defaults(1_000_000)
    }

    #[test]
    fn tau_at_endpoints() {
        let s = defaults();
        assert_eq!(s.tau_at(0), 1.0);
        let t_end = (0.75 * s.total_timesteps as f64) as u64;
        assert_abs_diff_eq!(s.tau_at(t_end), 0.01, epsilon = 1e-12);
        assert_abs_diff_eq!(s.tau_at(t_end / 2), 0.5, epsilon = 1e-6);
        // Past the horizon the floor holds.
        assert_eq!(s.tau_at(10 * s.total_timesteps), 0.01);
    }

    #[test]
    fn tau_at_is_nonincreasing_and_bounded() {
        let s = defaults();
        let mut prev = s.tau_at(0);
        for k in 0..100 {
            let t = k * s.total_timesteps / 10;
            let tau = s.tau_at(t);
            assert!(tau <= prev + 1e-15);
            assert!((s.tau_floor..=s.tau_start).contains(&tau));
            prev = tau;
        }
    }

    #[test]
    fn schedule_validation() {
        assert!(TemperatureSchedule::new(1.0, 0.01, 0.75, 1000).is_ok());
        assert!(TemperatureSchedule::new(0.005, 0.01, 0.75, 1000).is_err());
        assert!(TemperatureSchedule::new(1.0, 0.0, 0.75, 1000).is_err());
        assert!(TemperatureSchedule::new(1.0, 0.01, 0.0, 1000).is_err());
        assert!(TemperatureSchedule::new(1.0, 0.01, 1.5, 1000).is_err());
        assert!(TemperatureSchedule::new(1.0, 0.01, 0.75, 0).is_err());
    }

    #[test]
    fn softmax_equal_values_are_uniform() {
        let p = softmax_probs(&[1.0, 1.0], 1.0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_unit_gap() {
        // e/(e+1) computed independently.
        let p = softmax_probs(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.2689, epsilon = 1e-4);
    }

    #[test]
    fn softmax_low_temperature_is_nearly_greedy() {
        // gap/tau = 100: loser weight is exp(-100).
        let p = softmax_probs(&[1.0, 0.0], 0.01).unwrap();
        assert!(p[0] >= 1.0 - 1e-10);
        assert!(p[1] <= 1e-10);
    }

    #[test]
    fn softmax_normalization_and_order() {
        let q = [0.3, -1.2, 4.0, 0.3];
        for tau in [0.01, 0.1, 1.0, 10.0] {
            let p = softmax_probs(&q, tau).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            // Softmax preserves ordering of the inputs.
            assert!(p[2] > p[0] && p[0] > p[1]);
            assert_eq!(p[0], p[3]);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let q = [0.5, -2.0, 3.1];
        for c in [-100.0, -1.0, 7.5, 1e6] {
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            let a = softmax_probs(&q, 0.7).unwrap();
            let b = softmax_probs(&shifted, 0.7).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn softmax_argmax_matches_greedy() {
        let q = [0.1, 2.0, -3.0, 1.9];
        for tau in [0.01, 0.5, 1.0, 50.0] {
            let p = softmax_probs(&q, tau).unwrap();
            let arg = greedy_action(&p).unwrap();
            assert_eq!(arg, greedy_action(&q).unwrap());
        }
    }

    #[test]
    fn softmax_rejects_bad_inputs() {
        assert!(softmax_probs(&[], 1.0).is_err());
        assert!(softmax_probs(&[1.0], 0.0).is_err());
        assert!(softmax_probs(&[1.0], -0.5).is_err());
        assert!(softmax_probs(&[f64::NAN], 1.0).is_err());
        assert!(softmax_probs(&[f64::INFINITY, 0.0], 1.0).is_err());
    }

    #[test]
    fn sample_degenerate_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_action(&[1.0, 0.0], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn sample_frequencies_match_probs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 100_000;
        let mut counts = [0usize; 2];
        for _ in 0..n {
            counts[sample_action(&[0.5, 0.5], &mut rng).unwrap()] += 1;
        }
        let f0 = counts[0] as f64 / n as f64;
        assert!((0.49..=0.51).contains(&f0), "f0 = {f0}");

        let probs = [0.2, 0.3, 0.5];
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng).unwrap()] += 1;
        }
        for (c, &p) in counts.iter().zip(&probs) {
            let f = *c as f64 / n as f64;
            assert!((f - p).abs() <= 0.01, "f = {f}, p = {p}");
        }
    }

    #[test]
    fn sample_rejects_invalid_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_action(&[], &mut rng).is_err());
        assert!(sample_action(&[0.6, 0.6], &mut rng).is_err());
        assert!(sample_action(&[-0.5, 1.5], &mut rng).is_err());
    }

    #[test]
    fn greedy_action_examples() {
        assert_eq!(greedy_action(&[1.0, 2.0, 3.0]).unwrap(), 2);
        assert_eq!(greedy_action(&[5.0, 5.0]).unwrap(), 0);
        assert_eq!(greedy_action(&[-1.0]).unwrap(), 0);
        assert!(greedy_action(&[]).is_err());
    }

    #[test]
    fn greedy_probability_closed_form_at_floor() {
        // With a 0.1 gap at tau = 0.01, gap/tau = 10 and the greedy weight is
        // exactly 1/(1 + exp(-10)); the 1 - 1e-4 bound holds from there up.
        let p = softmax_probs(&[0.1, 0.0], 0.01).unwrap();
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-12);
        assert!(p[0] > 1.0 - 1e-4);
        // Just below a gap/tau of 10 the bound is not yet met for this margin.
        let p = softmax_probs(&[0.08, 0.0], 0.01).unwrap();
        assert!(p[0] < 1.0 - 1e-4);
    }
}
