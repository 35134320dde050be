//! Alpha-divergence preference optimization on anchored candidate sets.
//!
//! The numerical modules ([`anchored`], [`target`], [`divergence`],
//! [`scheduler`]) are generic over [`Scalar`] (`f32` or `f64`); the toy
//! [`trainer`] runs in `f64`.

// `!(x > 0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchored;
pub mod categorical;
pub mod divergence;
pub mod error;
pub mod matrix;
pub mod numdiff;
pub mod report;
pub mod scalar;
pub mod scheduler;
pub mod target;
pub mod trainer;

pub use anchored::{
    batch_confidence, build_anchored_distribution, confidence, fisher_matrix, normalized_entropy, AnchoredDistribution,
    CandidateGroup,
};
pub use categorical::Categorical;
pub use divergence::{
    alpha_divergence_grad_u, alpha_divergence_value, clip_weights, effective_sample_size, forward_kl,
    forward_kl_grad_u, ratio_power_variance, reverse_kl, reverse_kl_grad_u, ClipConfig, DivergenceResult, EssWeighting,
};
pub use error::{ApoError, Result};
pub use scalar::Scalar;
pub use scheduler::{
    fixed_alpha, solve_alpha_for_ess, AlphaPolicy, AlphaScheduler, EssTargetConfig, GuardedParams, SchedulerState,
};
pub use target::{boltzmann_target, zscore_advantages, TargetDistribution};

pub type AnchoredDistributionF64 = AnchoredDistribution<f64>;
pub type AnchoredDistributionF32 = AnchoredDistribution<f32>;
pub type TargetDistributionF64 = TargetDistribution<f64>;
pub type TargetDistributionF32 = TargetDistribution<f32>;
pub type CategoricalF64 = Categorical<f64>;
pub type CategoricalF32 = Categorical<f32>;
pub type SchedulerStateF64 = SchedulerState<f64>;
pub type ClipConfigF64 = ClipConfig<f64>;
