//! Finite-difference audit of every analytic gradient used in training.

use apo_core::categorical::Categorical;
use apo_core::divergence::{
    alpha_divergence_grad_u, alpha_divergence_value, forward_kl, forward_kl_grad_u, reverse_kl, reverse_kl_grad_u,
    ClipConfig,
};
use apo_core::numdiff::{central_gradient, max_relative_error};
use apo_core::trainer::{
    anchored_batch, batch_loss, batch_loss_and_gradient, sample_group, EnvironmentConfig, RewardMode, ToyEnvironment,
    ToyPolicy,
};
use apo_core::TargetDistribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

pub const TOLERANCE: f64 = 1e-5;
pub const ALPHA_GRID: [f64; 6] = [0.05, 0.35, 0.5, 0.6, 0.9, 0.95];
const STEP: f64 = 1e-6;
const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub sizes: Vec<usize>,
    pub instances: usize,
    /// Negative control: scales every analytic gradient by 1.001.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: vec![2, 4, 8, 16],
            instances: 20,
            corrupt: false,
        }
    }
}

/// Worst instance seen by one named check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub worst: String,
}

impl CheckReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            max_rel_err: 0.0,
            worst: String::new(),
        }
    }

    fn record(&mut self, err: f64, describe: impl FnOnce() -> String) {
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = err;
            self.worst = describe();
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

fn random_logits(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn corrupted(mut g: Vec<f64>, corrupt: bool) -> Vec<f64> {
    if corrupt {
        g.iter_mut().for_each(|x| *x *= 1.001);
    }
    g
}

fn describe(q: &Categorical<f64>, p: &Categorical<f64>, alpha: Option<f64>) -> String {
    let alpha = alpha.map_or(String::new(), |a| format!(" alpha={a}"));
    format!("q={:?} p={:?}{alpha}", q.probs(), p.probs())
}

pub fn run_checks(opts: &GradCheckOptions) -> Result<Vec<CheckReport>> {
    if opts.sizes.iter().any(|&s| s < 2) || opts.sizes.is_empty() {
        return Err(CliError::Usage("--sizes needs entries >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut alpha_rep = CheckReport::new("alpha_divergence grad_u");
    let mut fwd_rep = CheckReport::new("forward_kl grad_u");
    let mut rev_rep = CheckReport::new("reverse_kl grad_u");
    let clip = ClipConfig::disabled();

    for &len in &opts.sizes {
        for _ in 0..opts.instances {
            let q = Categorical::from_logits(&random_logits(&mut rng, len))?;
            let u = random_logits(&mut rng, len);
            let p = Categorical::from_logits(&u)?;
            let through = |f: &dyn Fn(&Categorical<f64>) -> f64| {
                central_gradient(|x: &[f64]| f(&Categorical::from_logits(x).unwrap()), &u, STEP)
            };
            for alpha in ALPHA_GRID {
                let analytic = corrupted(alpha_divergence_grad_u(&q, &p, alpha, &clip)?.grad_u, opts.corrupt);
                let numeric = through(&|pp| alpha_divergence_value(&q, pp, alpha).unwrap());
                let err = max_relative_error(&analytic, &numeric, FLOOR);
                alpha_rep.record(err, || describe(&q, &p, Some(alpha)));
            }
            let analytic = corrupted(forward_kl_grad_u(&q, &p)?, opts.corrupt);
            let err = max_relative_error(&analytic, &through(&|pp| forward_kl(&q, pp).unwrap()), FLOOR);
            fwd_rep.record(err, || describe(&q, &p, None));
            let analytic = corrupted(reverse_kl_grad_u(&q, &p)?, opts.corrupt);
            let err = max_relative_error(&analytic, &through(&|pp| reverse_kl(&q, pp).unwrap()), FLOOR);
            rev_rep.record(err, || describe(&q, &p, None));
        }
    }

    let scatter = scatter_check(&mut rng, opts)?;
    Ok(vec![alpha_rep, fwd_rep, rev_rep, scatter])
}

/// Chains the anchored-logit gradient through the tabular policy and compares
/// it with finite differences of the batch loss over every logit.
fn scatter_check(rng: &mut ChaCha8Rng, opts: &GradCheckOptions) -> Result<CheckReport> {
    let mut report = CheckReport::new("trainer gradient scatter");
    let m = *opts.sizes.iter().max().expect("sizes is non-empty");
    let tau = 0.8;
    for &group_size in &opts.sizes {
        for instance in 0..opts.instances.div_ceil(4) {
            let env = ToyEnvironment::generate(&EnvironmentConfig {
                num_contexts: 3,
                candidates_per_context: m,
                reward_mode: RewardMode::Unimodal,
                noise_std: 0.0,
                seed: opts.seed.wrapping_add(instance as u64),
            })?;
            let mut snapshot = ToyPolicy::uniform(3, m, 0.1);
            snapshot.logits = (0..3).map(|_| random_logits(rng, m)).collect();
            let mut live = snapshot.clone();
            live.logits
                .iter_mut()
                .flatten()
                .for_each(|x| *x += rng.random_range(-0.5..0.5));
            let batch = (0..3)
                .map(|ctx| sample_group(&env, &snapshot, ctx, group_size, rng))
                .collect::<apo_core::Result<Vec<_>>>()?;
            let targets = batch
                .iter()
                .map(|g| TargetDistribution::from_rewards(&g.rewards, 1e-6, 1.0))
                .collect::<apo_core::Result<Vec<_>>>()?;
            let anchored = anchored_batch(&live, &batch, tau)?;
            for alpha in ALPHA_GRID {
                let grad = batch_loss_and_gradient(&live, &batch, &targets, &anchored, alpha, &ClipConfig::disabled())?;
                let analytic = corrupted(grad.grad.concat(), opts.corrupt);
                let flat = live.logits.concat();
                let numeric = central_gradient(
                    |x: &[f64]| {
                        let mut probe = live.clone();
                        probe.logits = x.chunks(m).map(<[f64]>::to_vec).collect();
                        batch_loss(&probe, &batch, &targets, alpha, tau).unwrap()
                    },
                    &flat,
                    STEP,
                );
                let err = max_relative_error(&analytic, &numeric, FLOOR);
                report.record(err, || {
                    describe(targets[0].as_ref(), anchored[0].distribution(), Some(alpha))
                });
            }
        }
    }
    Ok(report)
}

pub fn cmd_gradcheck(opts: &GradCheckOptions) -> Result<()> {
    let reports = run_checks(opts)?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<28} max rel err {:.3e}  [{status}]", r.name, r.max_rel_err);
        if !r.passed() {
            println!("  worst instance: {}", r.worst);
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::GradCheck(format!(
            "{} exceeded tolerance {TOLERANCE:e}",
            failed.join(", ")
        )))
    }
}
