//! Sample augmentation and mini-batch construction for the two bounds.
//!
//! Each base row is augmented with `n` Bernoulli draws of the decoded
//! reward. The hard draws build the class pools used to resample feedback
//! from the empirical class-conditional and to sample the decoded-reward
//! marginal. The differentiable loss path does not consume the hard draws
//! directly: it enumerates both reward values per base row and weights them
//! by the decoder's probabilities, which is the importance-weighted
//! empirical objective and carries the decoder's gradient.

use rand::{Rng, RngCore};

use super::{DecodesReward, TrainError};
use crate::env::Sample;

/// One hard draw of a decoded reward for a base row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentedRow {
    pub base: usize,
    pub r: bool,
}

/// A mini-batch with `n` decoded-reward draws per base row.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    /// Decoder probability of reward 1, one entry per base row.
    pub psi: Vec<f64>,
    /// `base_count * n` hard draws.
    pub rows: Vec<AugmentedRow>,
    pub n: usize,
}

impl AugmentedBatch {
    pub fn base_count(&self) -> usize {
        self.psi.len()
    }

    /// The decoder probability of the row's drawn class.
    pub fn psi_of_row(&self, row: AugmentedRow) -> f64 {
        if row.r {
            self.psi[row.base]
        } else {
            1.0 - self.psi[row.base]
        }
    }
}

/// Replicate each sample with `n` decoded-reward draws.
pub fn augment(
    samples: &[&Sample],
    decoder: &dyn DecodesReward,
    n: usize,
    rng: &mut dyn RngCore,
) -> AugmentedBatch {
    assert!(n >= 1, "augmentation count must be >= 1");
    let psi = decoder.probs(samples);
    redraw(&psi, n, rng)
}

/// Redraw the hard rows for already-computed decoder probabilities.
pub fn redraw(psi: &[f64], n: usize, rng: &mut dyn RngCore) -> AugmentedBatch {
    let mut rows = Vec::with_capacity(psi.len() * n);
    for (base, &p) in psi.iter().enumerate() {
        for _ in 0..n {
            rows.push(AugmentedRow { base, r: rng.random::<f64>() < p });
        }
    }
    AugmentedBatch { psi: psi.to_vec(), rows, n }
}

/// Joint and product mini-batches for one optimization step.
#[derive(Debug, Clone)]
pub struct ProductBatches {
    /// Conditionally resampled feedback source per base row, for the
    /// decoded-class-1 side: entry `k` pairs `(x_k, a_k, r=1)` with the
    /// feedback of base row `ytilde_r1[k]`, drawn uniformly from the hard
    /// pool of class 1.
    pub ytilde_r1: Vec<usize>,
    /// Same for the decoded-class-0 side.
    pub ytilde_r0: Vec<usize>,
    /// Per base row, a decoded reward drawn from the batch-empirical
    /// marginal of the hard draws (a sample of the product of marginals;
    /// the loss itself uses the analytic marginal).
    pub marginal_r: Vec<bool>,
    /// Hard-draw base indices by decoded class, with multiplicity.
    pub pools: [Vec<usize>; 2],
}

/// Build the resampling structures from an augmented batch.
///
/// Fails with a class-starvation error when some decoded class received no
/// hard draws; the trainer reacts by redrawing once and then skipping the
/// batch.
pub fn build_product_batches(
    aug: &AugmentedBatch,
    rng: &mut dyn RngCore,
) -> Result<ProductBatches, TrainError> {
    if aug.rows.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for row in &aug.rows {
        pools[row.r as usize].push(row.base);
    }
    for class in 0..2 {
        if pools[class].is_empty() {
            return Err(TrainError::ClassStarvation { class: class as u8 });
        }
    }
    let k = aug.base_count();
    let mut draw = |pool: &[usize]| pool[rng.random_range(0..pool.len())];
    let ytilde_r1: Vec<usize> = (0..k).map(|_| draw(&pools[1])).collect();
    let ytilde_r0: Vec<usize> = (0..k).map(|_| draw(&pools[0])).collect();
    let marginal_r: Vec<bool> = (0..k)
        .map(|_| aug.rows[rng.random_range(0..aug.rows.len())].r)
        .collect();
    Ok(ProductBatches { ytilde_r1, ytilde_r0, marginal_r, pools })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::DecodesReward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ConstDecoder(f64);

    impl DecodesReward for ConstDecoder {
        fn prob_r1(&self, _: &[f64], _: usize, _: &[f64]) -> f64 {
            self.0
        }
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample { x: vec![i as f64], a: 0, y: vec![i as f64] }).collect()
    }

    #[test]
    fn near_certain_decoder_draws_mostly_ones() {
        let data = samples(2000);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let aug = augment(&refs, &ConstDecoder(0.99), 5, &mut rng);
        assert_eq!(aug.rows.len(), 10_000);
        let ones = aug.rows.iter().filter(|r| r.r).count() as f64 / aug.rows.len() as f64;
        assert!((ones - 0.99).abs() < 0.01, "empirical mean {ones}");
        for row in aug.rows.iter().take(50) {
            assert_eq!(aug.psi_of_row(*row), if row.r { 0.99 } else { 0.01 });
        }
    }

    #[test]
    fn balanced_decoder_balances_classes() {
        let data = samples(2000);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let aug = augment(&refs, &ConstDecoder(0.5), 5, &mut rng);
        let ones = aug.rows.iter().filter(|r| r.r).count() as f64 / aug.rows.len() as f64;
        assert!((ones - 0.5).abs() < 0.02, "empirical mean {ones}");
    }

    #[test]
    fn fixed_seed_reproduces_augmentation() {
        let data = samples(100);
        let refs: Vec<&Sample> = data.iter().collect();
        let a = augment(&refs, &ConstDecoder(0.3), 5, &mut ChaCha8Rng::seed_from_u64(7));
        let b = augment(&refs, &ConstDecoder(0.3), 5, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn degenerate_feedback_pool_returns_that_feedback() {
        // All base rows share one feedback vector, so every resampled
        // feedback equals it regardless of indices.
        let data: Vec<Sample> =
            (0..20).map(|i| Sample { x: vec![i as f64], a: 0, y: vec![42.0] }).collect();
        let refs: Vec<&Sample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let aug = augment(&refs, &ConstDecoder(0.5), 5, &mut rng);
        let batches = build_product_batches(&aug, &mut rng).unwrap();
        for &src in batches.ytilde_r1.iter().chain(&batches.ytilde_r0) {
            assert_eq!(data[src].y, vec![42.0]);
        }
    }

    #[test]
    fn marginal_tracks_decoder_probability() {
        let data = samples(3000);
        let refs: Vec<&Sample> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let aug = augment(&refs, &ConstDecoder(0.5), 5, &mut rng);
        let batches = build_product_batches(&aug, &mut rng).unwrap();
        let ones =
            batches.marginal_r.iter().filter(|&&r| r).count() as f64 / batches.marginal_r.len() as f64;
        assert!((ones - 0.5).abs() < 0.03, "marginal {ones}");
    }

    #[test]
    fn starvation_is_reported() {
        // Hand-built batch where every draw landed in class 1.
        let aug = AugmentedBatch {
            psi: vec![0.99; 4],
            rows: (0..4).map(|base| AugmentedRow { base, r: true }).collect(),
            n: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        match build_product_batches(&aug, &mut rng) {
            Err(TrainError::ClassStarvation { class: 0 }) => {}
            other => panic!("expected starvation, got {other:?}"),
        }
    }
}
