//! α controllers: a fixed value, the reward + confidence guarded schedule,
//! and an effective-sample-size targeting solver.

use crate::categorical::Categorical;
use crate::divergence::{effective_sample_size, ALPHA_EPS};
use crate::error::{ApoError, Result};
use crate::scalar::{sum, Scalar};

/// Number of grid points scanned by the ESS solver.
pub const ESS_GRID_POINTS: usize = 64;

/// Hyperparameters of the guarded schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardedParams<T> {
    pub alpha_min: T,
    pub alpha_max: T,
    /// EMA rate of the reward baseline (λ).
    pub baseline_ema_rate: T,
    /// EMA rate of α itself (ρ).
    pub alpha_ema_rate: T,
    pub reward_scale_init: T,
    pub reward_scale_floor: T,
    pub baseline_init: T,
    /// Steps during which the improvement gate is forced to zero.
    pub warmup_steps: u64,
}

impl<T: Scalar> Default for GuardedParams<T> {
    fn default() -> Self {
        Self {
            alpha_min: T::of(0.35),
            alpha_max: T::of(0.9),
            baseline_ema_rate: T::of(0.1),
            alpha_ema_rate: T::of(0.1),
            reward_scale_init: T::of(0.5),
            reward_scale_floor: T::of(0.05),
            baseline_init: T::zero(),
            warmup_steps: 5,
        }
    }
}

impl<T: Scalar> GuardedParams<T> {
    pub fn validate(&self) -> Result<()> {
        let lo = T::of(ALPHA_EPS);
        let hi = T::one() - lo;
        if !(self.alpha_min >= lo && self.alpha_min < self.alpha_max && self.alpha_max <= hi) {
            return Err(ApoError::domain(
                "alpha_min",
                format!(
                    "need {ALPHA_EPS} <= alpha_min < alpha_max <= {}, got {} and {}",
                    1.0 - ALPHA_EPS,
                    self.alpha_min,
                    self.alpha_max
                ),
            ));
        }
        for (name, rate) in [("lambda", self.baseline_ema_rate), ("rho", self.alpha_ema_rate)] {
            if !(rate > T::zero() && rate <= T::one()) {
                return Err(ApoError::domain(
                    name,
                    format!("EMA rate must lie in (0, 1], got {rate}"),
                ));
            }
        }
        if !(self.reward_scale_init > T::zero()) || !self.reward_scale_init.is_finite() {
            return Err(ApoError::domain(
                "s_r_init",
                format!("must be positive, got {}", self.reward_scale_init),
            ));
        }
        if !(self.reward_scale_floor > T::zero()) {
            return Err(ApoError::domain(
                "s_r_floor",
                format!("must be positive, got {}", self.reward_scale_floor),
            ));
        }
        if !self.baseline_init.is_finite() {
            return Err(ApoError::domain("baseline_init", "must be finite"));
        }
        Ok(())
    }
}

/// Welford accumulator over the per-step batch mean rewards.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct RunningMoments<T> {
    count: u64,
    mean: T,
    m2: T,
}

impl<T: Scalar> RunningMoments<T> {
    fn push(&mut self, x: T) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean = self.mean + delta / T::of(self.count as f64);
        self.m2 = self.m2 + delta * (x - self.mean);
    }

    fn population_std(&self) -> Option<T> {
        (self.count >= 2).then(|| (self.m2 / T::of(self.count as f64)).max(T::zero()).sqrt())
    }
}

/// Mutable state of the α controller. One update per training step.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerState<T> {
    params: GuardedParams<T>,
    alpha_current: T,
    reward_baseline: T,
    reward_scale: T,
    step_index: u64,
    moments: RunningMoments<T>,
}

impl<T: Scalar> SchedulerState<T> {
    /// Starts at `α_0 = α_max` with the configured baseline and reward scale.
    pub fn new(params: GuardedParams<T>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            alpha_current: params.alpha_max,
            reward_baseline: params.baseline_init,
            reward_scale: params.reward_scale_init,
            step_index: 0,
            moments: RunningMoments::default(),
            params,
        })
    }

    pub fn params(&self) -> &GuardedParams<T> {
        &self.params
    }

    pub fn alpha_min(&self) -> T {
        self.params.alpha_min
    }

    pub fn alpha_max(&self) -> T {
        self.params.alpha_max
    }

    pub fn alpha_current(&self) -> T {
        self.alpha_current
    }

    pub fn reward_baseline(&self) -> T {
        self.reward_baseline
    }

    pub fn reward_scale(&self) -> T {
        self.reward_scale
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    /// Overrides the smoothed α; clamped into the bounds.
    pub fn set_alpha_current(&mut self, alpha: T) {
        self.alpha_current = alpha.max(self.params.alpha_min).min(self.params.alpha_max);
    }

    /// Overrides the baseline `b_{t-1}` and reward scale, mainly for tests and replays.
    pub fn set_reward_signals(&mut self, baseline: T, scale: T) {
        self.reward_baseline = baseline;
        self.reward_scale = scale;
    }

    /// `p_t = max(0, tanh((R̄_t − b_{t−1}) / s_R))`, evaluated against the
    /// pre-update baseline and scale. Afterwards the baseline EMA and the
    /// running reward scale absorb `R̄_t`.
    pub fn improvement_gate(&mut self, mean_reward: T) -> T {
        let gate = if self.step_index < self.params.warmup_steps {
            T::zero()
        } else {
            ((mean_reward - self.reward_baseline) / self.reward_scale)
                .tanh()
                .max(T::zero())
        };
        let lambda = self.params.baseline_ema_rate;
        self.reward_baseline = (T::one() - lambda) * self.reward_baseline + lambda * mean_reward;
        self.moments.push(mean_reward);
        if let Some(std) = self.moments.population_std() {
            self.reward_scale = std.max(self.params.reward_scale_floor);
        }
        gate
    }

    /// Raw `α_max − (α_max − α_min)·c·p`, EMA-smoothed with rate ρ and clamped.
    pub fn guarded_alpha(&mut self, confidence: T, gate: T) -> T {
        let (lo, hi) = (self.params.alpha_min, self.params.alpha_max);
        let signal = confidence.max(T::zero()).min(T::one()) * gate.max(T::zero()).min(T::one());
        let raw = hi - (hi - lo) * signal;
        let rho = self.params.alpha_ema_rate;
        let smoothed = (T::one() - rho) * self.alpha_current + rho * raw;
        self.set_alpha_current(smoothed);
        self.alpha_current
    }

    /// Marks the end of a training step.
    pub fn advance(&mut self) {
        self.step_index += 1;
    }
}

/// A constant α.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedAlpha<T>(T);

impl<T: Scalar> FixedAlpha<T> {
    pub fn value(&self) -> T {
        self.0
    }
}

/// Fixed-α policy; the value must lie strictly inside the divergence band.
pub fn fixed_alpha<T: Scalar>(value: T) -> Result<FixedAlpha<T>> {
    let lo = T::of(ALPHA_EPS);
    if !(value > lo && value < T::one() - lo) {
        return Err(ApoError::domain(
            "alpha",
            format!(
                "fixed alpha must lie strictly inside ({ALPHA_EPS}, {}), got {value}",
                1.0 - ALPHA_EPS
            ),
        ));
    }
    Ok(FixedAlpha(value))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssTargetConfig<T> {
    /// γ: target ESS as a fraction of the group size.
    pub target_fraction: T,
    pub group_size: usize,
    /// Bisection stops once the bracket is narrower than this (in α units).
    pub solver_tolerance: T,
    /// Maximum bisection steps after the grid scan.
    pub max_iterations: usize,
}

impl<T: Scalar> EssTargetConfig<T> {
    pub fn new(target_fraction: T, group_size: usize) -> Result<Self> {
        let cfg = Self {
            target_fraction,
            group_size,
            solver_tolerance: T::of(1e-6),
            max_iterations: 30,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let target = self.target_ess();
        if !(target > T::one() && target < T::of_usize(self.group_size)) {
            return Err(ApoError::domain(
                "gamma",
                format!("target ESS gamma*P = {target} must lie in (1, {})", self.group_size),
            ));
        }
        if !(self.solver_tolerance > T::zero()) || self.max_iterations == 0 {
            return Err(ApoError::domain(
                "solver_tolerance",
                "tolerance and iteration budget must be positive",
            ));
        }
        Ok(())
    }

    pub fn target_ess(&self) -> T {
        self.target_fraction * T::of_usize(self.group_size)
    }
}

fn mean_ess<T: Scalar, Q, P>(groups: &[(Q, P)], alpha: T) -> Result<T>
where
    Q: AsRef<Categorical<T>>,
    P: AsRef<Categorical<T>>,
{
    let total = groups
        .iter()
        .map(|(q, p)| effective_sample_size(q, p, alpha))
        .collect::<Result<Vec<T>>>()?;
    Ok(sum(total) / T::of_usize(groups.len()))
}

/// α in `bounds` whose batch-mean ESS is closest to `γP`.
pub fn solve_alpha_for_ess<T: Scalar, Q, P>(groups: &[(Q, P)], config: &EssTargetConfig<T>, bounds: (T, T)) -> Result<T>
where
    Q: AsRef<Categorical<T>>,
    P: AsRef<Categorical<T>>,
{
    solve_alpha_for_target(
        groups,
        config.target_ess(),
        bounds,
        config.solver_tolerance,
        config.max_iterations,
    )
}

/// Grid scan over `bounds` followed by bisection on the sign change adjacent
/// to the grid minimizer of `|meanESS(α) − target|`. Falls back to the grid
/// argmin when no sign change brackets it.
pub fn solve_alpha_for_target<T: Scalar, Q, P>(
    groups: &[(Q, P)],
    target: T,
    bounds: (T, T),
    tolerance: T,
    max_iterations: usize,
) -> Result<T>
where
    Q: AsRef<Categorical<T>>,
    P: AsRef<Categorical<T>>,
{
    if groups.is_empty() {
        return Err(ApoError::Shape("ESS solver needs at least one group".into()));
    }
    let (lo, hi) = bounds;
    if !(lo >= T::zero() && lo < hi && hi <= T::one()) {
        return Err(ApoError::domain(
            "bounds",
            format!("need 0 <= lo < hi <= 1, got ({lo}, {hi})"),
        ));
    }
    let step = (hi - lo) / T::of_usize(ESS_GRID_POINTS - 1);
    let grid: Vec<T> = (0..ESS_GRID_POINTS)
        .map(|k| {
            if k + 1 == ESS_GRID_POINTS {
                hi
            } else {
                lo + step * T::of_usize(k)
            }
        })
        .collect();
    let residual = grid
        .iter()
        .map(|&a| Ok(mean_ess(groups, a)? - target))
        .collect::<Result<Vec<T>>>()?;
    let best = (0..grid.len())
        .min_by(|&a, &b| residual[a].abs().partial_cmp(&residual[b].abs()).expect("finite ESS"))
        .expect("non-empty grid");

    let changes_sign = |k: usize| residual[k] == T::zero() || residual[k].signum() != residual[best].signum();
    let neighbour = [best.checked_sub(1), (best + 1 < grid.len()).then_some(best + 1)]
        .into_iter()
        .flatten()
        .find(|&k| changes_sign(k));
    let Some(other) = neighbour else {
        return Ok(grid[best]);
    };
    if residual[best] == T::zero() {
        return Ok(grid[best]);
    }

    let (mut a, mut b) = (grid[best], grid[other]);
    let mut fa = residual[best];
    let mut best_alpha = grid[best];
    let mut best_abs = fa.abs();
    for _ in 0..max_iterations {
        if (b - a).abs() <= tolerance {
            break;
        }
        let mid = (a + b) / T::of(2.0);
        let fm = mean_ess(groups, mid)? - target;
        if fm.abs() < best_abs {
            best_abs = fm.abs();
            best_alpha = mid;
        }
        if fm == T::zero() {
            break;
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(best_alpha.max(lo).min(hi))
}

/// Which controller produces α each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy<T> {
    Fixed(FixedAlpha<T>),
    Guarded,
    Ess(EssTargetConfig<T>),
}

/// Per-step monitoring signals fed to the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignals<T> {
    pub mean_reward: T,
    pub confidence: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaDecision<T> {
    pub alpha: T,
    pub gate: T,
    /// Baseline after absorbing this step's mean reward.
    pub baseline: T,
}

/// Couples a policy with the state it reads and writes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaScheduler<T> {
    policy: AlphaPolicy<T>,
    state: SchedulerState<T>,
}

impl<T: Scalar> AlphaScheduler<T> {
    pub fn new(policy: AlphaPolicy<T>, params: GuardedParams<T>) -> Result<Self> {
        if let AlphaPolicy::Ess(cfg) = &policy {
            cfg.validate()?;
        }
        Ok(Self {
            policy,
            state: SchedulerState::new(params)?,
        })
    }

    pub fn policy(&self) -> &AlphaPolicy<T> {
        &self.policy
    }

    pub fn state(&self) -> &SchedulerState<T> {
        &self.state
    }

    /// Produces α for the current step. The reward gate and baseline are
    /// tracked for every policy so they can be logged; only the guarded
    /// policy feeds them back into α. The ESS policy reads `groups` only.
    pub fn step<Q, P>(&mut self, signals: StepSignals<T>, groups: &[(Q, P)]) -> Result<AlphaDecision<T>>
    where
        Q: AsRef<Categorical<T>>,
        P: AsRef<Categorical<T>>,
    {
        let gate = self.state.improvement_gate(signals.mean_reward);
        let alpha = match &self.policy {
            AlphaPolicy::Fixed(fixed) => {
                self.state.alpha_current = fixed.value();
                fixed.value()
            }
            AlphaPolicy::Guarded => self.state.guarded_alpha(signals.confidence, gate),
            AlphaPolicy::Ess(cfg) => {
                let bounds = (self.state.alpha_min(), self.state.alpha_max());
                let alpha = solve_alpha_for_ess(groups, cfg, bounds)?;
                self.state.set_alpha_current(alpha);
                self.state.alpha_current
            }
        };
        self.state.advance();
        Ok(AlphaDecision {
            alpha,
            gate,
            baseline: self.state.reward_baseline,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_with(rho: f64) -> SchedulerState<f64> {
        SchedulerState::new(GuardedParams {
            alpha_ema_rate: rho,
            warmup_steps: 0,
            ..GuardedParams::default()
        })
        .unwrap()
    }

    #[test]
    fn gate_examples() {
        let mut s = state_with(1.0);
        s.set_reward_signals(0.4, 0.5);
        assert_eq!(s.clone().improvement_gate(0.4), 0.0);
        assert_eq!(s.clone().improvement_gate(0.1), 0.0);
        let gate = s.improvement_gate(0.9);
        assert!((gate - 1f64.tanh()).abs() < 1e-15);
        assert!((gate - 0.761594).abs() < 1e-6);
        assert!((s.reward_baseline() - 0.45).abs() < 1e-15);
    }

    #[test]
    fn warmup_forces_zero_gate() {
        let mut s = SchedulerState::<f64>::new(GuardedParams::default()).unwrap();
        for _ in 0..5 {
            assert_eq!(s.improvement_gate(1.0), 0.0);
            s.advance();
        }
        assert!(s.improvement_gate(1.0) > 0.0);
    }

    #[test]
    fn reward_scale_tracks_running_std_with_floor() {
        let mut s = state_with(1.0);
        s.improvement_gate(0.3);
        assert_eq!(s.reward_scale(), 0.5);
        s.improvement_gate(0.3);
        assert_eq!(s.reward_scale(), 0.05);
        s.improvement_gate(1.3);
        // population std of (0.3, 0.3, 1.3)
        let expected = (2.0_f64 / 9.0).sqrt();
        assert!((s.reward_scale() - expected).abs() < 1e-12);
    }

    #[test]
    fn guarded_examples() {
        let mut s = state_with(1.0);
        assert_eq!(s.guarded_alpha(0.0, 0.7), 0.9);
        assert!((s.guarded_alpha(1.0, 1.0) - 0.35).abs() < 1e-15);

        let mut s = state_with(0.1);
        assert_eq!(s.alpha_current(), 0.9);
        assert!((s.guarded_alpha(1.0, 1.0) - 0.845).abs() < 1e-15);
    }

    #[test]
    fn confident_but_stuck_returns_alpha_max() {
        let mut s = state_with(1.0);
        s.set_alpha_current(0.4);
        assert_eq!(s.guarded_alpha(1.0, 0.0), 0.9);
    }

    #[test]
    fn fixed_alpha_domain() {
        assert_eq!(fixed_alpha(0.6).unwrap().value(), 0.6);
        assert!(fixed_alpha(0.9999).is_err());
        assert!(fixed_alpha(0.0001).is_err());
        assert!(fixed_alpha(1.2).is_err());
    }

    #[test]
    fn fixed_policy_is_constant() {
        let mut sched =
            AlphaScheduler::new(AlphaPolicy::Fixed(fixed_alpha(0.35).unwrap()), GuardedParams::default()).unwrap();
        let none: &[(Categorical<f64>, Categorical<f64>)] = &[];
        for t in 0..1000 {
            let d = sched
                .step(
                    StepSignals {
                        mean_reward: (t as f64 * 0.37).sin(),
                        confidence: (t % 7) as f64 / 7.0,
                    },
                    none,
                )
                .unwrap();
            assert_eq!(d.alpha, 0.35);
        }
    }

    #[test]
    fn ess_config_validation() {
        assert!(EssTargetConfig::new(0.5, 8).is_ok());
        assert!(EssTargetConfig::new(1.0, 8).is_err());
        assert!(EssTargetConfig::new(0.1, 8).is_err());
    }

    #[test]
    fn ess_solver_examples() {
        let q = Categorical::from_probs(vec![0.8_f64, 0.2]).unwrap();
        let p = Categorical::from_probs(vec![0.5, 0.5]).unwrap();
        let groups = [(q.clone(), p.clone())];
        let alpha = solve_alpha_for_target(&groups, 1.8, (0.05, 0.95), 1e-9, 30).unwrap();
        assert!((alpha - 0.5).abs() < 1e-3, "alpha {alpha}");

        // ESS(α) is constant when q = p: grid argmin (first grid point wins ties).
        let flat = [(p.clone(), p.clone())];
        let alpha = solve_alpha_for_target(&flat, 1.5, (0.05, 0.95), 1e-9, 30).unwrap();
        assert_eq!(alpha, 0.05);

        // Unreachable target: ESS is maximal at the lower bound.
        let alpha = solve_alpha_for_target(&groups, 2.0, (0.05, 0.95), 1e-9, 30).unwrap();
        assert_eq!(alpha, 0.05);

        let empty: &[(Categorical<f64>, Categorical<f64>)] = &[];
        assert!(matches!(
            solve_alpha_for_target(empty, 1.0, (0.05, 0.95), 1e-9, 30),
            Err(ApoError::Shape(_))
        ));
    }
}
