mod common;

use apo_core::anchored::{fisher_matrix, normalized_entropy};
use apo_core::categorical::softmax;
use apo_core::divergence::*;
use apo_core::numdiff::{central_gradient, directional_curvature, max_relative_error};
use apo_core::target::{boltzmann_target, zscore_advantages};
use apo_core::{AnchoredDistribution, Categorical};
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_through_softmax(q: &Categorical<f64>, alpha: f64) -> impl Fn(&[f64]) -> f64 + '_ {
    move |u: &[f64]| {
        let p = Categorical::from_logits(u).unwrap();
        alpha_divergence_value(q, &p, alpha).unwrap()
    }
}

#[test]
fn example_gradient_matches_finite_differences() {
    let q = Categorical::from_probs(vec![0.8, 0.2]).unwrap();
    let u = [0.0, 0.0];
    let p = Categorical::from_logits(&u).unwrap();
    let analytic = alpha_divergence_grad_u(&q, &p, 0.5, &ClipConfig::disabled()).unwrap();
    let numeric = central_gradient(value_through_softmax(&q, 0.5), &u, 1e-6);
    assert!((numeric[0] + 0.316228).abs() < 1e-6);
    assert!(max_relative_error(&analytic.grad_u, &numeric, 1e-8) < 1e-5);
}

#[test]
fn gradient_matches_fd_over_alpha_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &alpha in &[0.05, 0.35, 0.5, 0.6, 0.9, 0.95] {
        for len in 2..=16 {
            let q = random_categorical(&mut rng, len, 1.0);
            let u = random_logits(&mut rng, len, 1.0);
            let p = Categorical::from_logits(&u).unwrap();
            let analytic = alpha_divergence_grad_u(&q, &p, alpha, &ClipConfig::disabled()).unwrap();
            let numeric = central_gradient(value_through_softmax(&q, alpha), &u, 1e-6);
            let err = max_relative_error(&analytic.grad_u, &numeric, 1e-8);
            assert!(err <= 1e-5, "alpha {alpha} len {len}: rel err {err}");
            assert!(analytic.grad_u.iter().sum::<f64>().abs() < 1e-10);
        }
    }
}

#[test]
fn reverse_kl_gradient_matches_fd() {
    let q = Categorical::from_probs(vec![0.8, 0.2]).unwrap();
    let u = [0.3, -0.4];
    let p = Categorical::from_logits(&u).unwrap();
    let numeric = central_gradient(
        |v: &[f64]| reverse_kl(&q, &Categorical::from_logits(v).unwrap()).unwrap(),
        &u,
        1e-6,
    );
    let analytic = reverse_kl_grad_u(&q, &p).unwrap();
    assert!(max_relative_error(&analytic, &numeric, 1e-8) < 1e-6);
}

#[test]
fn limits_match_kl_oracles() {
    let q = Categorical::from_probs(vec![0.8, 0.2]).unwrap();
    let p = Categorical::from_probs(vec![0.5, 0.5]).unwrap();
    let hi = 1.0 - ALPHA_EPS;
    let grad_hi = alpha_divergence_grad_u(&q, &p, hi, &ClipConfig::disabled()).unwrap();
    for (g, (qi, pi)) in grad_hi.grad_u.iter().zip(q.probs().iter().zip(p.probs())) {
        assert!((g + (qi - pi)).abs() < 1e-3);
    }
    let grad_lo = alpha_divergence_grad_u(&q, &p, ALPHA_EPS, &ClipConfig::disabled()).unwrap();
    let rev = reverse_kl_grad_u(&q, &p).unwrap();
    for (a, b) in grad_lo.grad_u.iter().zip(&rev) {
        assert!((a - b).abs() < 1e-3);
    }
    assert!((alpha_divergence_value(&q, &p, hi).unwrap() - kl_oracle(q.probs(), p.probs())).abs() < 1e-3);
    assert!((alpha_divergence_value(&q, &p, ALPHA_EPS).unwrap() - kl_oracle(p.probs(), q.probs())).abs() < 1e-3);
}

#[test]
fn limit_gap_shrinks_linearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let q = random_categorical(&mut rng, 6, 1.0);
        let p = random_categorical(&mut rng, 6, 1.0);
        let fwd = forward_kl(&q, &p).unwrap();
        let rev = reverse_kl(&q, &p).unwrap();
        let gaps_hi: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|e| (alpha_divergence_value(&q, &p, 1.0 - e).unwrap() - fwd).abs())
            .collect();
        let gaps_lo: Vec<f64> = [4e-3, 2e-3, 1e-3]
            .iter()
            .map(|&e| (alpha_divergence_value(&q, &p, e).unwrap() - rev).abs())
            .collect();
        for gaps in [gaps_hi, gaps_lo] {
            assert!(gaps[0] / gaps[1] >= 1.8, "{gaps:?}");
            assert!(gaps[1] / gaps[2] >= 1.8, "{gaps:?}");
        }
    }
}

#[test]
fn value_agrees_with_plain_power_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let q = random_categorical(&mut rng, 7, 1.5);
        let p = random_categorical(&mut rng, 7, 1.5);
        for alpha in [0.1, 0.5, 0.8] {
            let fast = alpha_divergence_value(&q, &p, alpha).unwrap();
            let oracle = alpha_div_oracle(q.probs(), p.probs(), alpha);
            assert!((fast - oracle).abs() < 1e-12 * (1.0 + oracle));
        }
    }
}

#[test]
fn variance_surrogate_grows_with_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    while checked < 50 {
        let q = random_categorical(&mut rng, 8, 1.2);
        let p = random_categorical(&mut rng, 8, 1.2);
        if q == p {
            continue;
        }
        let v: Vec<f64> = (1..=9)
            .map(|k| ratio_power_variance(&q, &p, k as f64 / 10.0).unwrap())
            .collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]), "{v:?}");
        checked += 1;
    }
}

#[test]
fn hessian_at_optimum_is_proportional_to_fisher() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for alpha in [0.35, 0.6, 0.9] {
        let u_star = random_logits(&mut rng, 6, 1.0);
        let q = Categorical::from_logits(&u_star).unwrap();
        let fisher = fisher_matrix(&q);
        let ratios: Vec<f64> = (0..20)
            .map(|_| {
                let d = random_tangent(&mut rng, 6);
                let curv = directional_curvature(value_through_softmax(&q, alpha), &u_star, &d, 1e-4);
                curv / fisher.quadratic_form(&d)
            })
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!(ratios.iter().all(|r| (r / mean - 1.0).abs() < 0.01), "{ratios:?}");
    }
}

#[test]
fn ess_is_non_increasing_when_target_is_sharper() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let rewards: Vec<f64> = (0..8).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let q = boltzmann_target(zscore_advantages(&rewards, 1e-6).unwrap(), 1.0).unwrap();
        let p = Categorical::from_logits(&[0.0; 8]).unwrap();
        let ess: Vec<f64> = (0..=20)
            .map(|k| effective_sample_size(&q, &p, k as f64 / 20.0).unwrap())
            .collect();
        assert!(ess.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{ess:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn divergence_is_nonnegative_and_zero_on_diagonal(
        lq in prop::collection::vec(-4.0f64..4.0, 2..12),
        shift in prop::collection::vec(-4.0f64..4.0, 12),
        alpha in 1e-4f64..(1.0 - 1e-4),
    ) {
        let q = Categorical::from_logits(&lq).unwrap();
        let lp: Vec<f64> = lq.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let p = Categorical::from_logits(&lp).unwrap();
        prop_assert!(alpha_divergence_value(&q, &p, alpha).unwrap() >= -1e-12);
        prop_assert!(alpha_divergence_value(&q, &q, alpha).unwrap() <= 1e-12);
    }

    #[test]
    fn gradient_is_zero_sum(
        lq in prop::collection::vec(-5.0f64..5.0, 2..16),
        seed in any::<u64>(),
        alpha in 0.01f64..0.99,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Categorical::from_logits(&lq).unwrap();
        let p = random_categorical(&mut rng, lq.len(), 2.0);
        let r = alpha_divergence_grad_u(&q, &p, alpha, &ClipConfig::disabled()).unwrap();
        prop_assert!(r.grad_u.iter().sum::<f64>().abs() < 1e-10);
    }

    #[test]
    fn softmax_is_shift_invariant(u in prop::collection::vec(-50.0f64..50.0, 2..10), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = u.iter().map(|x| x + c).collect();
        for (a, b) in softmax(&u).iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lower_anchor_temperature_sharpens(diff in prop::collection::vec(-3.0f64..3.0, 2..8), tau in 0.2f64..2.0) {
        prop_assume!(diff.iter().any(|&d| (d - diff[0]).abs() > 1e-3));
        let at = |t: f64| {
            let u: Vec<f64> = diff.iter().map(|d| d / t).collect();
            AnchoredDistribution::from_anchored_logits(u, t).unwrap().distribution().max_prob()
        };
        prop_assert!(at(tau * 0.5) > at(tau));
    }

    #[test]
    fn fisher_is_psd_with_zero_row_sums(
        logits in prop::collection::vec(-4.0f64..4.0, 2..10),
        v in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let p = Categorical::from_logits(&logits).unwrap();
        let f = fisher_matrix(&p);
        let n = logits.len();
        prop_assert!(f.quadratic_form(&v[..n]) >= -1e-10);
        prop_assert!(f.mul_vec(&vec![1.0; n]).iter().all(|x| x.abs() < 1e-12));
        prop_assert!(f.is_symmetric(0.0));
    }

    #[test]
    fn normalized_entropy_in_unit_interval(logits in prop::collection::vec(-20.0f64..20.0, 2..10)) {
        let d = AnchoredDistribution::from_anchored_logits(logits.clone(), 1.0).unwrap();
        let h = normalized_entropy(&d);
        prop_assert!((0.0..=1.0).contains(&h));
        let uniform = logits.iter().all(|&x| (x - logits[0]).abs() < 1e-12);
        if !uniform && logits.iter().any(|&x| (x - logits[0]).abs() > 1e-3) {
            prop_assert!(h < 1.0 - 1e-9);
        }
    }

    #[test]
    fn target_is_invariant_to_affine_rewards(
        rewards in prop::collection::vec(-5.0f64..5.0, 2..12),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let n = rewards.len() as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let sigma = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        let eps = 1e-6;
        prop_assume!(sigma.min(a * sigma) >= 1e3 * eps);
        let moved: Vec<f64> = rewards.iter().map(|r| a * r + b).collect();
        let q = |r: &[f64], e: f64| boltzmann_target(zscore_advantages(r, e).unwrap(), 1.0).unwrap();
        // The stabilizer perturbs advantages by a relative ε/σ.
        let bound = 4.0 * eps / sigma.min(a * sigma) + 1e-12;
        for (x, y) in q(&rewards, eps).probs().iter().zip(q(&moved, eps).probs()) {
            prop_assert!((x - y).abs() <= bound, "{x} vs {y}");
        }
        // With a negligible stabilizer the cancellation is exact to 1e-9.
        for (x, y) in q(&rewards, 1e-15).probs().iter().zip(q(&moved, 1e-15).probs()) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn target_preserves_reward_order(rewards in prop::collection::vec(-5.0f64..5.0, 2..12), beta in 0.05f64..5.0) {
        let q = boltzmann_target(zscore_advantages(&rewards, 1e-6).unwrap(), beta).unwrap();
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] > rewards[j] {
                    prop_assert!(q.probs()[i] > q.probs()[j]);
                }
            }
        }
    }

    #[test]
    fn smaller_beta_concentrates(rewards in prop::collection::vec(-5.0f64..5.0, 2..12), beta in 0.1f64..5.0) {
        let adv = zscore_advantages(&rewards, 1e-6).unwrap();
        let wide = boltzmann_target(adv.clone(), beta).unwrap();
        let sharp = boltzmann_target(adv, beta * 0.5).unwrap();
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        prop_assert!(max(sharp.probs()) >= max(wide.probs()) - 1e-15);
    }
}
