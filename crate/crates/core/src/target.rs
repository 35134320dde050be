//! Group-relative advantages and the Boltzmann soft target over a group.

use crate::categorical::Categorical;
use crate::error::{ApoError, Result};
use crate::scalar::{sum, Scalar};

/// Default stabilizer added to the group reward standard deviation.
pub const DEFAULT_ZSCORE_EPSILON: f64 = 1e-6;

/// Boltzmann distribution over z-scored advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution<T> {
    dist: Categorical<T>,
    advantages: Vec<T>,
    target_temperature: T,
    zscore_epsilon: Option<T>,
}

impl<T: Scalar> TargetDistribution<T> {
    /// Z-scores `rewards` and applies the Boltzmann transform.
    pub fn from_rewards(rewards: &[T], epsilon: T, beta_r: T) -> Result<Self> {
        let advantages = zscore_advantages(rewards, epsilon)?;
        let mut target = boltzmann_target(advantages, beta_r)?;
        target.zscore_epsilon = Some(epsilon);
        Ok(target)
    }

    /// Wraps an explicit distribution, e.g. for divergence checks that do
    /// not start from rewards. Advantages are reported as zero.
    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        let dist = Categorical::from_probs(probs)?;
        let advantages = vec![T::zero(); dist.len()];
        Ok(Self {
            dist,
            advantages,
            target_temperature: T::one(),
            zscore_epsilon: None,
        })
    }

    pub fn probs(&self) -> &[T] {
        self.dist.probs()
    }

    pub fn log_probs(&self) -> &[T] {
        self.dist.log_probs()
    }

    pub fn advantages(&self) -> &[T] {
        &self.advantages
    }

    pub fn target_temperature(&self) -> T {
        self.target_temperature
    }

    pub fn zscore_epsilon(&self) -> Option<T> {
        self.zscore_epsilon
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

impl<T> AsRef<Categorical<T>> for TargetDistribution<T> {
    fn as_ref(&self) -> &Categorical<T> {
        &self.dist
    }
}

/// `A_i = (R_i − R̄) / (σ_R + ε)` with the population standard deviation.
///
/// A group whose rewards are all identical maps to the zero vector exactly.
pub fn zscore_advantages<T: Scalar>(rewards: &[T], epsilon: T) -> Result<Vec<T>> {
    if rewards.len() < 2 {
        return Err(ApoError::Shape(format!(
            "advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    if !(epsilon > T::zero()) {
        return Err(ApoError::domain("epsilon", format!("must be positive, got {epsilon}")));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    let n = T::of_usize(rewards.len());
    let mean = sum(rewards.iter().copied()) / n;
    let variance = sum(rewards.iter().map(|&r| (r - mean) * (r - mean))) / n;
    let scale = variance.sqrt() + epsilon;
    Ok(rewards.iter().map(|&r| (r - mean) / scale).collect())
}

/// `q = softmax(A / β_r)`.
pub fn boltzmann_target<T: Scalar>(advantages: Vec<T>, beta_r: T) -> Result<TargetDistribution<T>> {
    if !(beta_r > T::zero()) || !beta_r.is_finite() {
        return Err(ApoError::domain(
            "beta_r",
            format!("must be positive and finite, got {beta_r}"),
        ));
    }
    let scaled: Vec<T> = advantages.iter().map(|&a| a / beta_r).collect();
    let dist = Categorical::from_logits(&scaled)?;
    Ok(TargetDistribution {
        dist,
        advantages,
        target_temperature: beta_r,
        zscore_epsilon: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_rewards_give_zero_advantages_and_uniform_target() {
        for rewards in [vec![0.0_f64; 5], vec![0.1; 3], vec![-2.5; 8]] {
            let a = zscore_advantages(&rewards, 1e-6).unwrap();
            assert!(a.iter().all(|&x| x == 0.0));
            let q = boltzmann_target(a, 1.0).unwrap();
            let u = 1.0 / rewards.len() as f64;
            assert!(q.probs().iter().all(|&p| (p - u).abs() < 1e-15));
        }
    }

    #[test]
    fn zscore_examples() {
        let a = zscore_advantages(&[1.0_f64, 0.0], 1e-8).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-6 && (a[1] + 1.0).abs() < 1e-6);
        let a = zscore_advantages(&[1.0_f64, 1.0, 0.0, 0.0], 1e-8).unwrap();
        for (got, want) in a.iter().zip([1.0, 1.0, -1.0, -1.0]) {
            assert!((got - want).abs() < 1e-6);
        }
        assert!(zscore_advantages(&[1.0_f64], 1e-8).is_err());
        assert!(zscore_advantages(&[1.0_f64, 2.0], 0.0).is_err());
    }

    #[test]
    fn boltzmann_examples() {
        let q = boltzmann_target(vec![1.0_f64, -1.0], 1.0).unwrap();
        let e2 = (2.0_f64).exp();
        assert!((q.probs()[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((q.probs()[0] - 0.88080).abs() < 1e-5);
        assert!((q.probs()[1] - 0.11920).abs() < 1e-5);

        let sharp = boltzmann_target(vec![1.0_f64, -1.0], 0.01).unwrap();
        assert!(sharp.probs()[0] > 1.0 - 1e-10);
        assert!(sharp.probs()[1] > 0.0);

        assert!(matches!(
            boltzmann_target(vec![1.0_f64, -1.0], 0.0),
            Err(ApoError::Domain { name: "beta_r", .. })
        ));
    }

    #[test]
    fn advantages_are_standardized() {
        let rewards = [0.3_f64, 1.7, -0.4, 2.2, 0.9, 0.0];
        let a = zscore_advantages(&rewards, 1e-12).unwrap();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn from_rewards_records_parameters() {
        let t = TargetDistribution::from_rewards(&[1.0_f64, 0.0, 0.5], 1e-6, 2.0).unwrap();
        assert_eq!(t.zscore_epsilon(), Some(1e-6));
        assert_eq!(t.target_temperature(), 2.0);
        assert!((t.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
