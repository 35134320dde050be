//! Csiszár α-divergence between the Boltzmann target `q` and the anchored
//! distribution `p`, its closed-form gradient in anchored-logit coordinates,
//! the two KL limits, importance-weight clipping and effective sample size.
//!
//! Every ratio power `r^α = (q/p)^α` is evaluated as `exp(α (log q − log p))`
//! from the stored log-probabilities.

use crate::categorical::{ensure_same_len, Categorical};
use crate::error::{ApoError, Result};
use crate::scalar::{sum, Scalar};

/// Half-width of the excluded band at each end of `(0, 1)`.
pub const ALPHA_EPS: f64 = 1e-4;

/// Checks `α ∈ [ALPHA_EPS, 1 − ALPHA_EPS]`.
pub fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    let lo = T::of(ALPHA_EPS);
    let hi = T::one() - lo;
    if !(alpha >= lo && alpha <= hi) {
        return Err(ApoError::domain(
            "alpha",
            format!("must lie in [{ALPHA_EPS}, {}], got {alpha}", 1.0 - ALPHA_EPS),
        ));
    }
    Ok(())
}

/// Importance-weight clipping bounds, applied inside the gradient only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig<T> {
    pub w_min: T,
    pub w_max: T,
    pub enabled: bool,
}

impl<T: Scalar> ClipConfig<T> {
    pub fn new(w_min: T, w_max: T, enabled: bool) -> Result<Self> {
        if !(w_min > T::zero() && w_min <= T::one()) {
            return Err(ApoError::domain("w_min", format!("must lie in (0, 1], got {w_min}")));
        }
        if !(w_max >= T::one()) || !w_max.is_finite() {
            return Err(ApoError::domain(
                "w_max",
                format!("must be finite and >= 1, got {w_max}"),
            ));
        }
        Ok(Self { w_min, w_max, enabled })
    }

    pub fn disabled() -> Self {
        Self {
            w_min: T::of(0.2),
            w_max: T::of(5.0),
            enabled: false,
        }
    }
}

impl<T: Scalar> Default for ClipConfig<T> {
    fn default() -> Self {
        Self::disabled()
    }
}

/// Value and anchored-logit gradient of `D_α(q‖p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceResult<T> {
    pub value: T,
    pub grad_u: Vec<T>,
    /// `r^α` before clipping.
    pub weights: Vec<T>,
    /// True when at least one weight was changed by clipping.
    pub clipped: bool,
}

fn log_ratios<T: Scalar>(q: &Categorical<T>, p: &Categorical<T>) -> Vec<T> {
    q.log_probs()
        .iter()
        .zip(p.log_probs())
        .map(|(&lq, &lp)| lq - lp)
        .collect()
}

/// `D_α(q‖p) = (1 − Σ q^α p^{1−α}) / (α(1−α))`.
///
/// Evaluated as `−Σ p · expm1(α log r) / (α(1−α))`, which is the same
/// quantity since `Σ p = 1` but keeps full precision near the KL limits.
pub fn alpha_divergence_value<T: Scalar>(
    q: &impl AsRef<Categorical<T>>,
    p: &impl AsRef<Categorical<T>>,
    alpha: T,
) -> Result<T> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    check_alpha(alpha)?;
    Ok(value_unchecked(q, p, alpha))
}

fn value_unchecked<T: Scalar>(q: &Categorical<T>, p: &Categorical<T>, alpha: T) -> T {
    let deficit = -sum(p
        .probs()
        .iter()
        .zip(log_ratios(q, p))
        .map(|(&pi, lr)| pi * (alpha * lr).exp_m1()));
    let value = deficit / (alpha * (T::one() - alpha));
    value.max(T::zero())
}

/// Value plus `∂D_α/∂u_j = −(1/α) p_j (w_j − Σ_k p_k w_k)` with `w = r^α`,
/// optionally clipped. Chaining to raw log-probabilities divides by `τ_anc`.
pub fn alpha_divergence_grad_u<T: Scalar>(
    q: &impl AsRef<Categorical<T>>,
    p: &impl AsRef<Categorical<T>>,
    alpha: T,
    clip: &ClipConfig<T>,
) -> Result<DivergenceResult<T>> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    check_alpha(alpha)?;
    let probs = p.probs();
    let scaled: Vec<T> = log_ratios(q, p).into_iter().map(|lr| alpha * lr).collect();
    let weights: Vec<T> = scaled.iter().map(|s| s.exp()).collect();

    // Centering uses expm1 in the unclipped case so that w ≈ 1 loses no digits.
    let (shifted, clipped) = if clip.enabled {
        let clipped_w = clip_weights(&weights, clip);
        let changed = clipped_w.iter().zip(&weights).any(|(a, b)| a != b);
        (clipped_w, changed)
    } else {
        (scaled.iter().map(|s| s.exp_m1()).collect(), false)
    };
    let mean = sum(probs.iter().zip(&shifted).map(|(&pi, &w)| pi * w));
    let inv_alpha = alpha.recip();
    let grad_u = probs
        .iter()
        .zip(&shifted)
        .map(|(&pi, &w)| -inv_alpha * pi * (w - mean))
        .collect();
    Ok(DivergenceResult {
        value: value_unchecked(q, p, alpha),
        grad_u,
        weights,
        clipped,
    })
}

/// `KL(q‖p) = Σ q log(q/p)`; the `α → 1` limit.
pub fn forward_kl<T: Scalar>(q: &impl AsRef<Categorical<T>>, p: &impl AsRef<Categorical<T>>) -> Result<T> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    let kl = sum(q.probs().iter().zip(log_ratios(q, p)).map(|(&qi, lr)| qi * lr));
    Ok(kl.max(T::zero()))
}

/// `KL(p‖q) = Σ p log(p/q)`; the `α → 0` limit.
pub fn reverse_kl<T: Scalar>(q: &impl AsRef<Categorical<T>>, p: &impl AsRef<Categorical<T>>) -> Result<T> {
    forward_kl(p, q)
}

/// Anchored-logit gradient of `KL(q‖p)`: `p − q`.
pub fn forward_kl_grad_u<T: Scalar>(q: &impl AsRef<Categorical<T>>, p: &impl AsRef<Categorical<T>>) -> Result<Vec<T>> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    Ok(p.probs().iter().zip(q.probs()).map(|(&pi, &qi)| pi - qi).collect())
}

/// Anchored-logit gradient of `KL(p‖q)`:
/// `p_j ((log p_j − log q_j) − Σ_k p_k (log p_k − log q_k))`.
pub fn reverse_kl_grad_u<T: Scalar>(q: &impl AsRef<Categorical<T>>, p: &impl AsRef<Categorical<T>>) -> Result<Vec<T>> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    let log_excess: Vec<T> = log_ratios(q, p).into_iter().map(|lr| -lr).collect();
    let mean = sum(p.probs().iter().zip(&log_excess).map(|(&pi, &d)| pi * d));
    Ok(p.probs()
        .iter()
        .zip(&log_excess)
        .map(|(&pi, &d)| pi * (d - mean))
        .collect())
}

/// Elementwise clamp to `[w_min, w_max]`; identity when disabled.
pub fn clip_weights<T: Scalar>(weights: &[T], clip: &ClipConfig<T>) -> Vec<T> {
    if !clip.enabled {
        return weights.to_vec();
    }
    weights.iter().map(|&w| w.max(clip.w_min).min(clip.w_max)).collect()
}

/// How per-candidate weights are formed before normalizing for ESS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EssWeighting {
    /// `w_i ∝ q_i^α p_i^{1−α}`.
    #[default]
    Geometric,
    /// `w_i ∝ r_i^α`.
    RatioPower,
}

/// `1 / Σ w̄_i²` for `w_i ∝ q_i^α p_i^{1−α}`. `α` may be 0 or 1.
pub fn effective_sample_size<T: Scalar>(
    q: &impl AsRef<Categorical<T>>,
    p: &impl AsRef<Categorical<T>>,
    alpha: T,
) -> Result<T> {
    effective_sample_size_with(q, p, alpha, EssWeighting::Geometric)
}

pub fn effective_sample_size_with<T: Scalar>(
    q: &impl AsRef<Categorical<T>>,
    p: &impl AsRef<Categorical<T>>,
    alpha: T,
    weighting: EssWeighting,
) -> Result<T> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(ApoError::domain(
            "alpha",
            format!("ESS needs alpha in [0, 1], got {alpha}"),
        ));
    }
    let log_w: Vec<T> = match weighting {
        EssWeighting::Geometric => q
            .log_probs()
            .iter()
            .zip(p.log_probs())
            .map(|(&lq, &lp)| alpha * lq + (T::one() - alpha) * lp)
            .collect(),
        EssWeighting::RatioPower => log_ratios(q, p).into_iter().map(|lr| alpha * lr).collect(),
    };
    let normalized = crate::categorical::softmax(&log_w);
    Ok(sum(normalized.iter().map(|&w| w * w)).recip())
}

/// `E_p[r^{2α}] − (E_p[r^α])²`, the importance-weight variance surrogate for
/// the score-function estimator at a given `α`.
pub fn ratio_power_variance<T: Scalar>(
    q: &impl AsRef<Categorical<T>>,
    p: &impl AsRef<Categorical<T>>,
    alpha: T,
) -> Result<T> {
    let (q, p) = (q.as_ref(), p.as_ref());
    ensure_same_len(q, p)?;
    let lr = log_ratios(q, p);
    let first = sum(p.probs().iter().zip(&lr).map(|(&pi, &l)| pi * (alpha * l).exp()));
    let second = sum(p.probs().iter().zip(&lr).map(|(&pi, &l)| pi * (alpha * (l + l)).exp()));
    Ok((second - first * first).max(T::zero()))
}
