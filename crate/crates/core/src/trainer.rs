//! Toy group-RLHF trainer.
//!
//! Each context owns a tabular softmax policy over `M` candidate responses.
//! A training step snapshots the policy as the anchor, samples a group of
//! candidates per context from the snapshot, builds the Boltzmann target
//! from their rewards and the anchored distribution from live-minus-anchor
//! log-probabilities, picks α, and takes one gradient step on the batch-mean
//! α-divergence.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::anchored::{batch_normalized_entropy, build_anchored_distribution, AnchoredDistribution, CandidateGroup};
use crate::categorical::{log_softmax, softmax};
use crate::divergence::{alpha_divergence_grad_u, alpha_divergence_value, effective_sample_size, ClipConfig};
use crate::error::{ApoError, Result};
use crate::scheduler::{AlphaScheduler, StepSignals};
use crate::target::TargetDistribution;

const TRAINING_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// One best candidate per context (reward 1), the rest in `[0, 0.6)`.
    Unimodal,
    /// Two equally good candidates per context (reward 1), the rest in `[0, 0.2)`.
    Bimodal,
    /// One or two correct candidates with reward 1, everything else 0.
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub num_contexts: usize,
    pub candidates_per_context: usize,
    pub reward_mode: RewardMode,
    pub noise_std: f64,
    pub seed: u64,
}

/// Reward table plus the index clusters that count as reward modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnvironment {
    reward_table: Vec<Vec<f64>>,
    noise_std: f64,
    modes: Vec<Vec<Vec<usize>>>,
    reward_mode: RewardMode,
}

impl ToyEnvironment {
    pub fn generate(config: &EnvironmentConfig) -> Result<Self> {
        let m = config.candidates_per_context;
        if config.num_contexts == 0 {
            return Err(ApoError::Config("num_contexts must be positive".into()));
        }
        if m < 2 {
            return Err(ApoError::Config(format!(
                "candidates_per_context must be >= 2, got {m}"
            )));
        }
        if !(config.noise_std >= 0.0) || !config.noise_std.is_finite() {
            return Err(ApoError::Config(format!(
                "noise_std must be >= 0, got {}",
                config.noise_std
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut reward_table = Vec::with_capacity(config.num_contexts);
        let mut modes = Vec::with_capacity(config.num_contexts);
        for _ in 0..config.num_contexts {
            let (row, ctx_modes) = match config.reward_mode {
                RewardMode::Unimodal => {
                    let mut row: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.6)).collect();
                    let best = rng.random_range(0..m);
                    row[best] = 1.0;
                    (row, vec![vec![best]])
                }
                RewardMode::Bimodal => {
                    let mut row: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..0.2)).collect();
                    let picks = sample_indices(&mut rng, m, 2).into_vec();
                    for &i in &picks {
                        row[i] = 1.0;
                    }
                    (row, picks.into_iter().map(|i| vec![i]).collect())
                }
                RewardMode::Binary => {
                    let correct = if m > 2 { rng.random_range(1..=2) } else { 1 };
                    let picks = sample_indices(&mut rng, m, correct).into_vec();
                    let mut row = vec![0.0; m];
                    for &i in &picks {
                        row[i] = 1.0;
                    }
                    (row, picks.into_iter().map(|i| vec![i]).collect())
                }
            };
            reward_table.push(row);
            modes.push(ctx_modes);
        }
        Ok(Self {
            reward_table,
            noise_std: config.noise_std,
            modes,
            reward_mode: config.reward_mode,
        })
    }

    /// Builds an environment from an explicit table; every context gets its
    /// argmax entries as a single mode.
    pub fn from_table(reward_table: Vec<Vec<f64>>, noise_std: f64) -> Result<Self> {
        let m = reward_table.first().map_or(0, Vec::len);
        if m < 2 || reward_table.iter().any(|row| row.len() != m) {
            return Err(ApoError::Config(
                "reward table must be rectangular with >= 2 columns".into(),
            ));
        }
        if reward_table.iter().flatten().any(|r| !r.is_finite()) {
            return Err(ApoError::Config("reward table entries must be finite".into()));
        }
        let modes = reward_table
            .iter()
            .map(|row| {
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                vec![(0..m).filter(|&i| row[i] == best).collect()]
            })
            .collect();
        Ok(Self {
            reward_table,
            noise_std,
            modes,
            reward_mode: RewardMode::Unimodal,
        })
    }

    pub fn num_contexts(&self) -> usize {
        self.reward_table.len()
    }

    pub fn candidates_per_context(&self) -> usize {
        self.reward_table[0].len()
    }

    pub fn reward_table(&self) -> &[Vec<f64>] {
        &self.reward_table
    }

    pub fn reward_mode(&self) -> RewardMode {
        self.reward_mode
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Reward-mode clusters for `context`.
    pub fn modes(&self, context: usize) -> &[Vec<usize>] {
        &self.modes[context]
    }

    pub fn is_multimodal(&self, context: usize) -> bool {
        self.modes[context].len() >= 2
    }

    /// Mean over contexts of the best achievable expected reward.
    pub fn optimum(&self) -> f64 {
        let total: f64 = self
            .reward_table
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        total / self.num_contexts() as f64
    }
}

/// Tabular logits per context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits: Vec<Vec<f64>>,
    pub learning_rate: f64,
}

impl ToyPolicy {
    pub fn uniform(num_contexts: usize, candidates: usize, learning_rate: f64) -> Self {
        Self {
            logits: vec![vec![0.0; candidates]; num_contexts],
            learning_rate,
        }
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        softmax(&self.logits[context])
    }

    pub fn log_probs(&self, context: usize) -> Vec<f64> {
        log_softmax(&self.logits[context])
    }
}

/// A group sampled from the anchor snapshot. Student log-probabilities are
/// re-read from the live policy whenever the group is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGroup {
    pub context: usize,
    pub indices: Vec<usize>,
    pub anchor_logprobs: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl SampledGroup {
    pub fn candidate_group(&self, live: &ToyPolicy) -> Result<CandidateGroup<f64>> {
        let log_probs = live.log_probs(self.context);
        let student = self.indices.iter().map(|&i| log_probs[i]).collect();
        CandidateGroup::new(student, self.anchor_logprobs.clone(), self.rewards.clone())
    }
}

/// Draws `group_size` candidates with replacement from the snapshot policy.
pub fn sample_group<R: Rng + ?Sized>(
    env: &ToyEnvironment,
    snapshot: &ToyPolicy,
    context: usize,
    group_size: usize,
    rng: &mut R,
) -> Result<SampledGroup> {
    let m = env.candidates_per_context();
    if group_size > m {
        return Err(ApoError::Config(format!(
            "group size {group_size} exceeds the {m} candidates per context"
        )));
    }
    if group_size < 2 {
        return Err(ApoError::Config(format!("group size must be >= 2, got {group_size}")));
    }
    let probs = snapshot.probs(context);
    let log_probs = snapshot.log_probs(context);
    let sampler =
        WeightedIndex::new(&probs).map_err(|e| ApoError::Config(format!("cannot sample context {context}: {e}")))?;
    let indices: Vec<usize> = (0..group_size).map(|_| sampler.sample(rng)).collect();
    let noise = (env.noise_std > 0.0).then(|| Normal::new(0.0, env.noise_std).expect("validated noise std"));
    let rewards = indices
        .iter()
        .map(|&i| {
            let base = env.reward_table[context][i];
            match &noise {
                Some(n) => base + n.sample(rng),
                None => base,
            }
        })
        .collect();
    Ok(SampledGroup {
        context,
        anchor_logprobs: indices.iter().map(|&i| log_probs[i]).collect(),
        indices,
        rewards,
    })
}

/// Where the confidence signal reads its entropy from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceSource {
    /// The anchored candidate-set distribution.
    #[default]
    Anchored,
    /// The full per-context policy of each sampled context, normalized by `log M`.
    Policy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub group_size: usize,
    pub learning_rate: f64,
    pub tau_anc: f64,
    pub beta_r: f64,
    pub zscore_epsilon: f64,
    pub clip: ClipConfig<f64>,
    /// Refresh the anchor every this many steps; 1 is strict on-policy anchoring.
    pub anchor_refresh: usize,
    pub confidence_source: ConfidenceSource,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            group_size: 8,
            learning_rate: 0.1,
            tau_anc: 0.8,
            beta_r: 1.0,
            zscore_epsilon: crate::target::DEFAULT_ZSCORE_EPSILON,
            clip: ClipConfig::disabled(),
            anchor_refresh: 1,
            confidence_source: ConfidenceSource::Anchored,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, env: &ToyEnvironment) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ApoError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("tau_anc", self.tau_anc)?;
        positive("beta_r", self.beta_r)?;
        positive("zscore_epsilon", self.zscore_epsilon)?;
        if self.batch_size == 0 || self.batch_size > env.num_contexts() {
            return Err(ApoError::Config(format!(
                "batch size must lie in [1, {}], got {}",
                env.num_contexts(),
                self.batch_size
            )));
        }
        if self.group_size < 2 || self.group_size > env.candidates_per_context() {
            return Err(ApoError::Config(format!(
                "group size must lie in [2, {}], got {}",
                env.candidates_per_context(),
                self.group_size
            )));
        }
        if self.anchor_refresh == 0 {
            return Err(ApoError::Config("anchor_refresh must be >= 1".into()));
        }
        Ok(())
    }
}

/// Quantities logged once per training step, measured before the parameter
/// update except `baseline`, which is post-update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    pub confidence: f64,
    pub gate: f64,
    pub alpha: f64,
    pub loss: f64,
    pub ess_mean: f64,
    pub grad_norm: f64,
    pub entropy_norm: f64,
    pub baseline: f64,
    /// Largest |u_i| over the batch when the groups were built.
    #[serde(skip)]
    pub max_abs_anchored_logit: f64,
}

/// Batch-mean loss and its dense gradient with respect to the policy logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    pub ess_mean: f64,
}

/// Builds the anchored distribution of every group against `live`.
pub fn anchored_batch(
    live: &ToyPolicy,
    batch: &[SampledGroup],
    tau_anc: f64,
) -> Result<Vec<AnchoredDistribution<f64>>> {
    batch
        .iter()
        .map(|g| build_anchored_distribution(&g.candidate_group(live)?, tau_anc))
        .collect()
}

/// Loss and exact logit gradient for a batch. `∂ℓ_j/∂θ = e_{y_j} − π`, and
/// the `π` term vanishes because `grad_u` sums to zero, so each group's
/// gradient is scattered onto the sampled entries only.
pub fn batch_loss_and_gradient(
    live: &ToyPolicy,
    batch: &[SampledGroup],
    targets: &[TargetDistribution<f64>],
    anchored: &[AnchoredDistribution<f64>],
    alpha: f64,
    clip: &ClipConfig<f64>,
) -> Result<BatchGradient> {
    if batch.is_empty() || batch.len() != targets.len() || batch.len() != anchored.len() {
        return Err(ApoError::Shape("batch, targets and anchored groups must align".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad: Vec<Vec<f64>> = live.logits.iter().map(|row| vec![0.0; row.len()]).collect();
    let mut loss = 0.0;
    let mut ess = 0.0;
    for ((group, target), dist) in batch.iter().zip(targets).zip(anchored) {
        let result = alpha_divergence_grad_u(target, dist, alpha, clip)?;
        loss += result.value;
        ess += effective_sample_size(target, dist, alpha)?;
        let chain = scale / dist.anchor_temperature();
        for (&idx, &g) in group.indices.iter().zip(&result.grad_u) {
            grad[group.context][idx] += g * chain;
        }
    }
    Ok(BatchGradient {
        loss: loss * scale,
        grad,
        ess_mean: ess * scale,
    })
}

/// Batch-mean loss only, for finite-difference checks.
pub fn batch_loss(
    live: &ToyPolicy,
    batch: &[SampledGroup],
    targets: &[TargetDistribution<f64>],
    alpha: f64,
    tau_anc: f64,
) -> Result<f64> {
    let anchored = anchored_batch(live, batch, tau_anc)?;
    let total = targets
        .iter()
        .zip(&anchored)
        .map(|(q, p)| alpha_divergence_value(q, p, alpha))
        .sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}

pub struct Trainer {
    env: ToyEnvironment,
    policy: ToyPolicy,
    snapshot: ToyPolicy,
    scheduler: AlphaScheduler<f64>,
    config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(env: ToyEnvironment, config: TrainConfig, scheduler: AlphaScheduler<f64>) -> Result<Self> {
        config.validate(&env)?;
        let policy = ToyPolicy::uniform(env.num_contexts(), env.candidates_per_context(), config.learning_rate);
        Self::with_policy(env, config, scheduler, policy)
    }

    pub fn with_policy(
        env: ToyEnvironment,
        config: TrainConfig,
        scheduler: AlphaScheduler<f64>,
        policy: ToyPolicy,
    ) -> Result<Self> {
        config.validate(&env)?;
        if policy.logits.len() != env.num_contexts()
            || policy
                .logits
                .iter()
                .any(|row| row.len() != env.candidates_per_context())
        {
            return Err(ApoError::Shape("policy table does not match the environment".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAINING_STREAM);
        Ok(Self {
            snapshot: policy.clone(),
            policy,
            env,
            scheduler,
            config,
            rng,
            step: 0,
        })
    }

    pub fn policy(&self) -> &ToyPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> ToyPolicy {
        self.policy
    }

    pub fn environment(&self) -> &ToyEnvironment {
        &self.env
    }

    pub fn scheduler(&self) -> &AlphaScheduler<f64> {
        &self.scheduler
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let cfg = &self.config;
        if self.step.is_multiple_of(cfg.anchor_refresh) {
            self.snapshot = self.policy.clone();
        }
        let mut contexts = sample_indices(&mut self.rng, self.env.num_contexts(), cfg.batch_size).into_vec();
        contexts.sort_unstable();

        let mut batch = Vec::with_capacity(contexts.len());
        for &ctx in &contexts {
            batch.push(sample_group(
                &self.env,
                &self.snapshot,
                ctx,
                cfg.group_size,
                &mut self.rng,
            )?);
        }
        let targets = batch
            .iter()
            .map(|g| TargetDistribution::from_rewards(&g.rewards, cfg.zscore_epsilon, cfg.beta_r))
            .collect::<Result<Vec<_>>>()?;
        let anchored = anchored_batch(&self.policy, &batch, cfg.tau_anc)?;
        let max_abs_anchored_logit = anchored
            .iter()
            .flat_map(|d| d.anchored_logits().iter().map(|u| u.abs()))
            .fold(0.0, f64::max);

        let entropy_norm = match cfg.confidence_source {
            ConfidenceSource::Anchored => batch_normalized_entropy(&anchored)?,
            ConfidenceSource::Policy => {
                let log_m = (self.env.candidates_per_context() as f64).ln();
                let total: f64 = contexts
                    .iter()
                    .map(|&c| {
                        let lp = self.policy.log_probs(c);
                        -lp.iter().map(|l| l.exp() * l).sum::<f64>()
                    })
                    .sum();
                (total / contexts.len() as f64 / log_m).clamp(0.0, 1.0)
            }
        };
        let confidence = 1.0 - entropy_norm;
        let mean_reward =
            batch.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / (batch.len() * cfg.group_size) as f64;

        let pairs: Vec<(&TargetDistribution<f64>, &AnchoredDistribution<f64>)> =
            targets.iter().zip(&anchored).collect();
        let decision = self.scheduler.step(
            StepSignals {
                mean_reward,
                confidence,
            },
            &pairs,
        )?;

        let bg = batch_loss_and_gradient(&self.policy, &batch, &targets, &anchored, decision.alpha, &cfg.clip)?;
        let lr = self.policy.learning_rate;
        let mut sq = 0.0;
        for (row, grow) in self.policy.logits.iter_mut().zip(&bg.grad) {
            for (theta, &g) in row.iter_mut().zip(grow) {
                *theta -= lr * g;
                sq += g * g;
            }
        }

        let metrics = StepMetrics {
            step: self.step,
            mean_reward,
            confidence,
            gate: decision.gate,
            alpha: decision.alpha,
            loss: bg.loss,
            ess_mean: bg.ess_mean,
            grad_norm: sq.sqrt(),
            entropy_norm,
            baseline: decision.baseline,
            max_abs_anchored_logit,
        };
        self.step += 1;
        Ok(metrics)
    }

    /// Runs the configured number of steps.
    pub fn run(&mut self) -> Result<Vec<StepMetrics>> {
        (0..self.config.steps).map(|_| self.step()).collect()
    }
}

/// Expected reward of `policy`, averaged over contexts.
pub fn expected_reward(env: &ToyEnvironment, policy: &ToyPolicy) -> f64 {
    let total: f64 = (0..env.num_contexts())
        .map(|c| {
            policy
                .probs(c)
                .iter()
                .zip(&env.reward_table[c])
                .map(|(p, r)| p * r)
                .sum::<f64>()
        })
        .sum();
    total / env.num_contexts() as f64
}

/// Probability mass the policy puts on each reward mode of `context`.
pub fn mode_masses(env: &ToyEnvironment, policy: &ToyPolicy, context: usize) -> Vec<f64> {
    let probs = policy.probs(context);
    env.modes(context)
        .iter()
        .map(|cluster| cluster.iter().map(|&i| probs[i]).sum())
        .collect()
}

fn multimodal_fraction(env: &ToyEnvironment, policy: &ToyPolicy, pred: impl Fn(&[f64]) -> bool) -> f64 {
    let contexts: Vec<usize> = (0..env.num_contexts()).filter(|&c| env.is_multimodal(c)).collect();
    if contexts.is_empty() {
        return 0.0;
    }
    let hits = contexts.iter().filter(|&&c| pred(&mode_masses(env, policy, c))).count();
    hits as f64 / contexts.len() as f64
}

/// Fraction of multimodal contexts where every mode holds at least `min_mass`.
pub fn coverage_fraction(env: &ToyEnvironment, policy: &ToyPolicy, min_mass: f64) -> f64 {
    multimodal_fraction(env, policy, |m| m.iter().all(|&x| x >= min_mass))
}

/// Fraction of multimodal contexts where a single mode holds at least `min_mass`.
pub fn concentration_fraction(env: &ToyEnvironment, policy: &ToyPolicy, min_mass: f64) -> f64 {
    multimodal_fraction(env, policy, |m| m.iter().any(|&x| x >= min_mass))
}

/// Largest per-context probability, averaged over contexts.
pub fn mean_max_probability(policy: &ToyPolicy) -> f64 {
    let total: f64 = (0..policy.logits.len())
        .map(|c| policy.probs(c).into_iter().fold(0.0, f64::max))
        .sum();
    total / policy.logits.len() as f64
}

/// `1 − H(π(·|x)) / log M`, averaged over contexts.
pub fn mean_policy_confidence(policy: &ToyPolicy) -> f64 {
    let total: f64 = (0..policy.logits.len())
        .map(|c| {
            let lp = policy.log_probs(c);
            let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
            1.0 - h / (lp.len() as f64).ln()
        })
        .sum();
    total / policy.logits.len() as f64
}
