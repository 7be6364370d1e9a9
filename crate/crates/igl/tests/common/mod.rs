//! Shared helpers for the integration suites.

use igl::env::{collect, Dataset, FeedbackSpec, NoiseType, Sample, SyntheticEnv, UniformPolicy};
use igl::tensor::{Mlp, Tensor};

/// Flatten parameters of several networks into one vector.
pub fn flatten_params(nets: &[&Mlp]) -> Vec<f64> {
    let mut flat = Vec::new();
    for net in nets {
        for p in net.params() {
            flat.extend_from_slice(p.data());
        }
    }
    flat
}

/// Write a flat vector back into the networks, in [`flatten_params`] order.
pub fn unflatten_params(nets: &mut [&mut Mlp], flat: &[f64]) {
    let mut offset = 0;
    for net in nets.iter_mut() {
        for p in net.params_mut() {
            let n = p.numel();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
    assert_eq!(offset, flat.len(), "flat vector length mismatch");
}

/// Concatenate per-network gradient lists into one flat vector.
pub fn flatten_grads(grad_groups: &[Vec<Tensor>]) -> Vec<f64> {
    let mut flat = Vec::new();
    for group in grad_groups {
        for g in group {
            flat.extend_from_slice(g.data());
        }
    }
    flat
}

/// A small noiseless realizable environment and a dataset collected on it.
pub fn small_synthetic(
    contexts: usize,
    actions: usize,
    noise: NoiseType,
    level: f64,
    k: usize,
    seed: u64,
) -> (SyntheticEnv, Dataset) {
    let spec = FeedbackSpec::new(noise, level).unwrap();
    let env = SyntheticEnv::new(contexts, actions, 6, spec, 7).unwrap();
    let behavior = UniformPolicy { num_actions: actions };
    let data = collect(&env, &behavior, k, seed).unwrap();
    (env, data)
}

/// Fraction of rows where the decoder's hard decision matches the hidden
/// reward.
pub fn decoded_accuracy(decoder: &dyn igl::trainer::DecodesReward, data: &Dataset) -> f64 {
    let refs: Vec<&Sample> = data.samples().iter().collect();
    let probs = decoder.probs(&refs);
    let hits = probs
        .iter()
        .zip(data.eval_rewards())
        .filter(|(&p, &r)| (p > 0.5) == r)
        .count();
    hits as f64 / data.len() as f64
}
