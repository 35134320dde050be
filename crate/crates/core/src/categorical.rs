//! Stable softmax numerics and the strictly positive categorical
//! distribution every candidate-set quantity is expressed in.

use crate::error::{ApoError, Result};
use crate::scalar::{sum, Scalar};

/// `log Σ exp(x_i)` with max-subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar>(logits: &[T]) -> T {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + sum(logits.iter().map(|&x| (x - max).exp())).ln()
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&x| x - lse).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total = sum(exps.iter().copied());
    exps.into_iter().map(|e| e / total).collect()
}

/// Strictly positive distribution over a finite candidate set, carrying both
/// probabilities and log-probabilities so downstream code never takes `ln`
/// of a rounded probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical<T> {
    probs: Vec<T>,
    log_probs: Vec<T>,
}

impl<T: Scalar> Categorical<T> {
    /// Softmax of finite logits.
    pub fn from_logits(logits: &[T]) -> Result<Self> {
        if logits.is_empty() {
            return Err(ApoError::Shape("empty logit vector".into()));
        }
        if let Some(bad) = logits.iter().position(|x| !x.is_finite()) {
            return Err(ApoError::domain("logits", format!("entry {bad} is not finite")));
        }
        let log_probs = log_softmax(logits);
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self { probs, log_probs })
    }

    /// Wraps explicit probabilities; they must be strictly positive and sum
    /// to one within `sqrt(eps)`.
    pub fn from_probs(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ApoError::Shape("empty probability vector".into()));
        }
        if let Some(bad) = probs.iter().position(|&p| !(p > T::zero()) || !p.is_finite()) {
            return Err(ApoError::domain(
                "probs",
                format!("entry {bad} = {} is not strictly positive", probs[bad]),
            ));
        }
        let total = sum(probs.iter().copied());
        if (total - T::one()).abs() > T::epsilon().sqrt() {
            return Err(ApoError::domain("probs", format!("sum is {total}, expected 1")));
        }
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self { probs, log_probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[T] {
        &self.log_probs
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> T {
        -sum(self.probs.iter().zip(&self.log_probs).map(|(&p, &l)| p * l))
    }

    pub fn max_prob(&self) -> T {
        self.probs.iter().copied().fold(T::zero(), T::max)
    }
}

impl<T> AsRef<Categorical<T>> for Categorical<T> {
    fn as_ref(&self) -> &Categorical<T> {
        self
    }
}

pub(crate) fn ensure_same_len<T>(a: &Categorical<T>, b: &Categorical<T>) -> Result<()> {
    if a.probs.len() != b.probs.len() {
        return Err(ApoError::Shape(format!(
            "distributions have lengths {} and {}",
            a.probs.len(),
            b.probs.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1.0e4_f64, 0.0, -1.0e4]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
        let lse = log_sum_exp(&[1.0e4_f64, 1.0e4]);
        assert!((lse - (1.0e4 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn from_probs_rejects_zero_and_unnormalized() {
        assert!(Categorical::from_probs(vec![1.0_f64, 0.0]).is_err());
        assert!(Categorical::from_probs(vec![0.6_f64, 0.6]).is_err());
        assert!(Categorical::from_probs(Vec::<f64>::new()).is_err());
        assert!(Categorical::from_probs(vec![0.25_f32; 4]).is_ok());
    }

    #[test]
    fn entropy_of_uniform_is_log_len() {
        let d = Categorical::from_logits(&[0.0_f64; 8]).unwrap();
        assert!((d.entropy() - 8f64.ln()).abs() < 1e-12);
    }
}
