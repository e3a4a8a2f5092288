//! Seeded synthetic inputs: uniform information tensors and softmax attention
//! bundles with random gradients.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::info_tensor::{AggregationMode, AttentionBundle, InfoTensor};
use crate::tensor::DenseTensor;

/// Information tensor `[layers, tokens, tokens]` with entries drawn from
/// uniform(0, 1), zero excluded.
pub fn uniform_info_tensor(seed: u64, layers: usize, tokens: usize) -> Result<InfoTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..layers * tokens * tokens)
        .map(|_| loop {
            let v: f32 = rng.gen();
            if v > 0.0 {
                break v;
            }
        })
        .collect();
    InfoTensor::new(
        DenseTensor::new("info", alloc::vec![layers, tokens, tokens], data)?,
        AggregationMode::Af,
    )
}

/// Attention bundle `[layers, heads, tokens, tokens]`: every row is a softmax
/// of standard-ish random logits, and gradients are uniform(-1, 1).
pub fn random_bundle(seed: u64, layers: usize, heads: usize, tokens: usize) -> Result<AttentionBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = layers * heads * tokens;
    let mut weights = Vec::with_capacity(rows * tokens);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..tokens).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|x| libm::exp(x - max)).collect();
        let sum: f64 = exp.iter().sum();
        weights.extend(exp.iter().map(|e| (e / sum) as f32));
    }
    let grads = (0..rows * tokens)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    let shape = alloc::vec![layers, heads, tokens, tokens];
    AttentionBundle::new(
        DenseTensor::new("A", shape.clone(), weights)?,
        Some(DenseTensor::new("gradA", shape, grads)?),
    )
}
