#![allow(dead_code)]

use apo_core::categorical::softmax;
use apo_core::Categorical;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Random strictly positive distribution: softmax of Gaussian logits with
/// the given spread.
pub fn random_categorical<R: Rng>(rng: &mut R, len: usize, spread: f64) -> Categorical<f64> {
    let logits: Vec<f64> = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spread * z
        })
        .collect();
    Categorical::from_logits(&logits).unwrap()
}

pub fn random_logits<R: Rng>(rng: &mut R, len: usize, spread: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            spread * z
        })
        .collect::<Vec<f64>>()
}

/// Random direction orthogonal to the ones vector, unit length.
pub fn random_tangent<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let mean = raw.iter().sum::<f64>() / len as f64;
    let centred: Vec<f64> = raw.iter().map(|x| x - mean).collect();
    let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
    centred.iter().map(|x| x / norm).collect()
}

/// Independent KL oracle written from the definition with raw probabilities.
pub fn kl_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * (x / y).ln()).sum()
}

/// Plain-power α-divergence oracle from the definition.
pub fn alpha_div_oracle(q: &[f64], p: &[f64], alpha: f64) -> f64 {
    let s: f64 = q.iter().zip(p).map(|(a, b)| a.powf(alpha) * b.powf(1.0 - alpha)).sum();
    (1.0 - s) / (alpha * (1.0 - alpha))
}

pub fn softmax_of(u: &[f64]) -> Vec<f64> {
    softmax(u)
}
