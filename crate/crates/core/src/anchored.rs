//! Anchored distribution over a sampled candidate set.
//!
//! The student and anchor sequence log-probabilities of each candidate are
//! turned into anchored logits `u_i = (ℓ_i − ℓ_i^ref) / τ_anc`, and the
//! candidate-set distribution is `softmax(u)`. Log-probabilities are consumed
//! as given and are never renormalized over a vocabulary.

use crate::categorical::Categorical;
use crate::error::{ApoError, Result};
use crate::matrix::SquareMatrix;
use crate::scalar::{sum, Scalar};

/// One prompt's sampled candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup<T> {
    student_logprobs: Vec<T>,
    anchor_logprobs: Vec<T>,
    rewards: Vec<T>,
}

impl<T: Scalar> CandidateGroup<T> {
    pub fn new(student_logprobs: Vec<T>, anchor_logprobs: Vec<T>, rewards: Vec<T>) -> Result<Self> {
        let size = student_logprobs.len();
        if anchor_logprobs.len() != size || rewards.len() != size {
            return Err(ApoError::Shape(format!(
                "candidate group vectors have lengths {}, {}, {}",
                size,
                anchor_logprobs.len(),
                rewards.len()
            )));
        }
        if size < 2 {
            return Err(ApoError::Shape(format!(
                "candidate group needs at least 2 members, got {size}"
            )));
        }
        let all_finite = |v: &[T]| v.iter().all(|x| x.is_finite());
        if !all_finite(&student_logprobs) || !all_finite(&anchor_logprobs) {
            return Err(ApoError::domain("logprobs", "log-probabilities must be finite"));
        }
        if !all_finite(&rewards) {
            return Err(ApoError::domain("rewards", "rewards must be finite"));
        }
        Ok(Self {
            student_logprobs,
            anchor_logprobs,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn student_logprobs(&self) -> &[T] {
        &self.student_logprobs
    }

    pub fn anchor_logprobs(&self) -> &[T] {
        &self.anchor_logprobs
    }

    pub fn rewards(&self) -> &[T] {
        &self.rewards
    }

    pub fn mean_reward(&self) -> T {
        sum(self.rewards.iter().copied()) / T::of_usize(self.len())
    }
}

/// Temperature-scaled softmax over a candidate group.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchoredDistribution<T> {
    anchored_logits: Vec<T>,
    dist: Categorical<T>,
    anchor_temperature: T,
}

impl<T: Scalar> AnchoredDistribution<T> {
    /// Builds the distribution directly from anchored logits `u`.
    pub fn from_anchored_logits(anchored_logits: Vec<T>, anchor_temperature: T) -> Result<Self> {
        check_temperature(anchor_temperature)?;
        let dist = Categorical::from_logits(&anchored_logits)?;
        Ok(Self {
            anchored_logits,
            dist,
            anchor_temperature,
        })
    }

    pub fn anchored_logits(&self) -> &[T] {
        &self.anchored_logits
    }

    pub fn probs(&self) -> &[T] {
        self.dist.probs()
    }

    pub fn log_probs(&self) -> &[T] {
        self.dist.log_probs()
    }

    pub fn anchor_temperature(&self) -> T {
        self.anchor_temperature
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn distribution(&self) -> &Categorical<T> {
        &self.dist
    }
}

impl<T> AsRef<Categorical<T>> for AnchoredDistribution<T> {
    fn as_ref(&self) -> &Categorical<T> {
        &self.dist
    }
}

fn check_temperature<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(ApoError::domain(
            "tau_anc",
            format!("must be positive and finite, got {tau}"),
        ));
    }
    Ok(())
}

pub fn build_anchored_distribution<T: Scalar>(
    group: &CandidateGroup<T>,
    tau_anc: T,
) -> Result<AnchoredDistribution<T>> {
    check_temperature(tau_anc)?;
    let logits = group
        .student_logprobs
        .iter()
        .zip(&group.anchor_logprobs)
        .map(|(&l, &l_ref)| (l - l_ref) / tau_anc)
        .collect();
    AnchoredDistribution::from_anchored_logits(logits, tau_anc)
}

/// `H(p) / log P`, in `[0, 1]`.
pub fn normalized_entropy<T: Scalar>(dist: &AnchoredDistribution<T>) -> T {
    let max_entropy = T::of_usize(dist.len()).ln();
    clamp_unit(dist.dist.entropy() / max_entropy)
}

/// `1 − H(p) / log P`.
pub fn confidence<T: Scalar>(dist: &AnchoredDistribution<T>) -> T {
    T::one() - normalized_entropy(dist)
}

/// Batch normalized entropy: the mean entropy across groups divided by the
/// mean `log P`. Equal to the per-group average when every group has the
/// same size.
pub fn batch_normalized_entropy<T: Scalar>(dists: &[AnchoredDistribution<T>]) -> Result<T> {
    if dists.is_empty() {
        return Err(ApoError::Shape("batch confidence needs at least one group".into()));
    }
    let n = T::of_usize(dists.len());
    let mean_entropy = sum(dists.iter().map(|d| d.dist.entropy())) / n;
    let mean_log_size = sum(dists.iter().map(|d| T::of_usize(d.len()).ln())) / n;
    Ok(clamp_unit(mean_entropy / mean_log_size))
}

pub fn batch_confidence<T: Scalar>(dists: &[AnchoredDistribution<T>]) -> Result<T> {
    Ok(T::one() - batch_normalized_entropy(dists)?)
}

/// Fisher information of the candidate-set softmax, `Diag(p) − p pᵀ`.
pub fn fisher_matrix<T: Scalar>(dist: &impl AsRef<Categorical<T>>) -> SquareMatrix<T> {
    let p = dist.as_ref().probs();
    SquareMatrix::from_fn(p.len(), |i, j| {
        let diag = if i == j { p[i] } else { T::zero() };
        diag - p[i] * p[j]
    })
}

fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(student: &[f64], anchor: &[f64]) -> CandidateGroup<f64> {
        CandidateGroup::new(student.to_vec(), anchor.to_vec(), vec![0.0; student.len()]).unwrap()
    }

    #[test]
    fn identical_logprobs_give_uniform() {
        let g = group(&[-3.0, -1.5, -7.25, -0.1], &[-3.0, -1.5, -7.25, -0.1]);
        let d = build_anchored_distribution(&g, 0.8).unwrap();
        assert!(d.anchored_logits().iter().all(|&u| u == 0.0));
        assert!(d.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert!((normalized_entropy(&d) - 1.0).abs() < 1e-12);
        assert!(confidence(&d).abs() < 1e-12);
    }

    #[test]
    fn two_candidate_example() {
        let g = group(&[-1.2, -3.0], &[-2.0, -3.0]);
        let d = build_anchored_distribution(&g, 0.8).unwrap();
        assert!((d.anchored_logits()[0] - 1.0).abs() < 1e-12);
        assert_eq!(d.anchored_logits()[1], 0.0);
        let e = std::f64::consts::E;
        assert!((d.probs()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((d.probs()[0] - 0.73106).abs() < 1e-5);
        assert!((d.probs()[1] - 0.26894).abs() < 1e-5);
        // H ≈ 0.58220 nats, normalized ≈ 0.83995
        assert!((d.distribution().entropy() - 0.58220).abs() < 1e-5);
        assert!((normalized_entropy(&d) - 0.83995).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        let g = group(&[0.0, 1.0], &[0.0, 0.0]);
        assert!(matches!(
            build_anchored_distribution(&g, 0.0),
            Err(ApoError::Domain { name: "tau_anc", .. })
        ));
        assert!(build_anchored_distribution(&g, -1.0).is_err());
        assert!(matches!(
            CandidateGroup::new(vec![0.0, 1.0], vec![0.0], vec![0.0, 0.0]),
            Err(ApoError::Shape(_))
        ));
        assert!(CandidateGroup::new(vec![0.0], vec![0.0], vec![0.0]).is_err());
        assert!(CandidateGroup::new(vec![f64::NAN, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let g = group(&[8000.0, -8000.0, 0.0], &[0.0, 0.0, 0.0]);
        let d = build_anchored_distribution(&g, 0.8).unwrap();
        assert!(d.probs().iter().all(|p| p.is_finite() && *p >= 0.0));
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_one_hot_has_full_confidence() {
        let eps = 1e-12_f64;
        let mut probs = [eps; 8];
        probs[0] = 1.0 - 7.0 * eps;
        let logits: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        let d = AnchoredDistribution::from_anchored_logits(logits, 1.0).unwrap();
        assert!(normalized_entropy(&d) < 1e-9);
        assert!(confidence(&d) >= 1.0 - 1e-9);
    }

    #[test]
    fn batch_confidence_averages_entropy() {
        let mut sharp = vec![-1.0e4_f64; 4];
        sharp[2] = 0.0;
        let peaked = AnchoredDistribution::from_anchored_logits(sharp, 1.0).unwrap();
        let flat = AnchoredDistribution::from_anchored_logits(vec![0.0; 4], 1.0).unwrap();
        let c = batch_confidence(&[peaked, flat]).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
        assert!(batch_confidence::<f64>(&[]).is_err());
    }

    #[test]
    fn fisher_examples() {
        let half = Categorical::from_probs(vec![0.5_f64, 0.5]).unwrap();
        let f = fisher_matrix(&half);
        assert_eq!(f.row(0), &[0.25, -0.25]);
        assert_eq!(f.row(1), &[-0.25, 0.25]);

        let skew = Categorical::from_probs(vec![0.8_f64, 0.2]).unwrap();
        let f = fisher_matrix(&skew);
        for (got, want) in f.row(0).iter().zip([0.16, -0.16]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in f.row(1).iter().zip([-0.16, 0.16]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(f.mul_vec(&[1.0, 1.0]).iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn works_in_single_precision() {
        let g = CandidateGroup::new(vec![-1.2_f32, -3.0], vec![-2.0, -3.0], vec![1.0, 0.0]).unwrap();
        let d = build_anchored_distribution(&g, 0.8).unwrap();
        assert!((d.probs()[0] - 0.731_06).abs() < 1e-5);
    }
}
