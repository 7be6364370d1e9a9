//! Reward-decoder training by variational min-max optimization.
//!
//! The outer loop descends a reward decoder on the regularized conditional
//! dependence objective while two critic networks ascend their variational
//! bounds on the two information terms. A symmetry-breaking pass at the end
//! chooses between the learned decoder and its opposite.

mod batches;
mod checkpoint;
mod objective;
mod train;

pub use batches::{
    augment, build_product_batches, redraw, AugmentedBatch, AugmentedRow, ProductBatches,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use objective::{objective_estimate, ObjectiveConfig, ObjectiveNodes};
pub use train::{train, EpochLog, TrainConfig, TrainOutput, TrainState, UpdateMode};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::env::Sample;
use crate::fdiv::FdivError;
use crate::tensor::{Activation, Mlp, MlpHandle, NodeId, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Fdiv(#[from] FdivError),

    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("decoded class {class} has no augmented members")]
    ClassStarvation { class: u8 },

    #[error("non-finite objective {value} at epoch {epoch}")]
    NonFinite { epoch: usize, value: f64 },

    #[error("empty dataset or mini-batch")]
    EmptyBatch,
}

/// What the reward decoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Feedback only.
    #[default]
    Y,
    /// Concatenated context, one-hot action, and feedback.
    Xay,
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputMode::Y => write!(f, "y"),
            InputMode::Xay => write!(f, "xay"),
        }
    }
}

impl FromStr for InputMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "y" => Ok(InputMode::Y),
            "xay" => Ok(InputMode::Xay),
            other => Err(TrainError::Config(format!(
                "unknown input mode `{other}` (expected y or xay)"
            ))),
        }
    }
}

/// Anything that maps an interaction to a probability that the latent
/// reward was 1. Implemented by the learned decoder, its flipped wrapper,
/// and by table decoders in tests.
pub trait DecodesReward {
    fn prob_r1(&self, x: &[f64], a: usize, y: &[f64]) -> f64;

    fn probs(&self, samples: &[&Sample]) -> Vec<f64> {
        samples.iter().map(|s| self.prob_r1(&s.x, s.a, &s.y)).collect()
    }
}

/// Parameterized decoder: an MLP ending in a sigmoid, squashed into
/// `[c, 1-c]` so both decoded classes always keep probability mass.
#[derive(Debug, Clone)]
pub struct RewardDecoder {
    net: Mlp,
    input_mode: InputMode,
    clamp_c: f64,
    context_dim: usize,
    num_actions: usize,
    feedback_dim: usize,
}

impl RewardDecoder {
    pub fn new<R: Rng + ?Sized>(
        input_mode: InputMode,
        context_dim: usize,
        num_actions: usize,
        feedback_dim: usize,
        hidden: usize,
        clamp_c: f64,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        if !(0.0..0.5).contains(&clamp_c) || clamp_c == 0.0 {
            return Err(TrainError::Config(format!("clamp c = {clamp_c} outside (0, 0.5)")));
        }
        let input_dim = match input_mode {
            InputMode::Y => feedback_dim,
            InputMode::Xay => context_dim + num_actions + feedback_dim,
        };
        let net = Mlp::new(
            &[input_dim, hidden, 1],
            &[Activation::Relu, Activation::Sigmoid],
            rng,
        )?;
        Ok(RewardDecoder { net, input_mode, clamp_c, context_dim, num_actions, feedback_dim })
    }

    pub fn from_parts(
        net: Mlp,
        input_mode: InputMode,
        clamp_c: f64,
        context_dim: usize,
        num_actions: usize,
        feedback_dim: usize,
    ) -> Self {
        RewardDecoder { net, input_mode, clamp_c, context_dim, num_actions, feedback_dim }
    }

    pub fn input_mode(&self) -> InputMode {
        self.input_mode
    }

    pub fn clamp_c(&self) -> f64 {
        self.clamp_c
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn feedback_dim(&self) -> usize {
        self.feedback_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// One input row per sample, laid out for this decoder's mode.
    pub fn build_inputs(&self, samples: &[&Sample]) -> Tensor {
        let dim = self.net.input_dim();
        let mut data = Vec::with_capacity(samples.len() * dim);
        for s in samples {
            match self.input_mode {
                InputMode::Y => data.extend_from_slice(&s.y),
                InputMode::Xay => {
                    data.extend_from_slice(&s.x);
                    let mut onehot = vec![0.0; self.num_actions];
                    onehot[s.a] = 1.0;
                    data.extend_from_slice(&onehot);
                    data.extend_from_slice(&s.y);
                }
            }
        }
        Tensor::matrix(samples.len(), dim, data).expect("row layout matches input dim")
    }

    /// Decoded probabilities on a tape: sigmoid output mapped affinely into
    /// `[c, 1-c]`, which keeps gradients alive everywhere.
    pub fn forward(
        &self,
        tape: &mut Tape,
        handle: &MlpHandle,
        inputs: NodeId,
    ) -> Result<NodeId, TrainError> {
        let raw = self.net.forward(tape, handle, inputs)?;
        Ok(tape.affine(raw, 1.0 - 2.0 * self.clamp_c, self.clamp_c))
    }

    fn infer_probs(&self, inputs: &Tensor) -> Vec<f64> {
        let raw = self.net.infer(inputs).expect("input layout matches decoder");
        raw.data()
            .iter()
            .map(|&s| self.clamp_c + (1.0 - 2.0 * self.clamp_c) * s)
            .collect()
    }
}

impl DecodesReward for RewardDecoder {
    fn prob_r1(&self, x: &[f64], a: usize, y: &[f64]) -> f64 {
        let sample = Sample { x: x.to_vec(), a, y: y.to_vec() };
        self.infer_probs(&self.build_inputs(&[&sample]))[0]
    }

    fn probs(&self, samples: &[&Sample]) -> Vec<f64> {
        if samples.is_empty() {
            return Vec::new();
        }
        self.infer_probs(&self.build_inputs(samples))
    }
}

/// Which information term a critic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticRole {
    /// `G(x, a, y, r)`: bounds the conditional dependence term.
    ConditionalMi,
    /// `T(x, a, r)`: bounds the reward-marginal regularizer term.
    MarginalMi,
}

/// Scalar critic with a tanh-limited head so every evaluation lands in
/// `(-bound, bound)`.
#[derive(Debug, Clone)]
pub struct VariationalCritic {
    net: Mlp,
    role: CriticRole,
    bound: f64,
    context_dim: usize,
    num_actions: usize,
    feedback_dim: usize,
}

impl VariationalCritic {
    pub fn new<R: Rng + ?Sized>(
        role: CriticRole,
        context_dim: usize,
        num_actions: usize,
        feedback_dim: usize,
        hidden: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        if bound <= 0.0 {
            return Err(TrainError::Config(format!("critic bound {bound} must be positive")));
        }
        let input_dim = match role {
            CriticRole::ConditionalMi => context_dim + num_actions + feedback_dim + 1,
            CriticRole::MarginalMi => context_dim + num_actions + 1,
        };
        let net = Mlp::new(
            &[input_dim, hidden, 1],
            &[Activation::Relu, Activation::Identity],
            rng,
        )?;
        Ok(VariationalCritic { net, role, bound, context_dim, num_actions, feedback_dim })
    }

    pub fn from_parts(
        net: Mlp,
        role: CriticRole,
        bound: f64,
        context_dim: usize,
        num_actions: usize,
        feedback_dim: usize,
    ) -> Self {
        VariationalCritic { net, role, bound, context_dim, num_actions, feedback_dim }
    }

    pub fn role(&self) -> CriticRole {
        self.role
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// Input rows `(x, onehot a, [y,] r)` with a fixed reward column.
    pub fn build_inputs(&self, samples: &[&Sample], r: f64, feedback_from: Option<&[usize]>) -> Tensor {
        let dim = self.net.input_dim();
        let mut data = Vec::with_capacity(samples.len() * dim);
        for (i, s) in samples.iter().enumerate() {
            data.extend_from_slice(&s.x);
            let mut onehot = vec![0.0; self.num_actions];
            onehot[s.a] = 1.0;
            data.extend_from_slice(&onehot);
            if self.role == CriticRole::ConditionalMi {
                let y = match feedback_from {
                    Some(sources) => &samples[sources[i]].y,
                    None => &s.y,
                };
                data.extend_from_slice(y);
            }
            data.push(r);
        }
        Tensor::matrix(samples.len(), dim, data).expect("row layout matches input dim")
    }

    /// Forward with the scaled-tanh output clamp applied.
    pub fn forward_clamped(
        &self,
        tape: &mut Tape,
        handle: &MlpHandle,
        inputs: NodeId,
    ) -> Result<NodeId, TrainError> {
        let raw = self.net.forward(tape, handle, inputs)?;
        Ok(crate::fdiv::clamp_critic(tape, raw, self.bound))
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn feedback_dim(&self) -> usize {
        self.feedback_dim
    }
}

/// A decoder together with the symmetry-breaking decision.
#[derive(Debug, Clone)]
pub struct Selected<D> {
    pub decoder: D,
    pub flipped: bool,
}

impl<D: DecodesReward> DecodesReward for Selected<D> {
    fn prob_r1(&self, x: &[f64], a: usize, y: &[f64]) -> f64 {
        let p = self.decoder.prob_r1(x, a, y);
        if self.flipped {
            1.0 - p
        } else {
            p
        }
    }

    fn probs(&self, samples: &[&Sample]) -> Vec<f64> {
        let mut p = self.decoder.probs(samples);
        if self.flipped {
            p.iter_mut().for_each(|v| *v = 1.0 - *v);
        }
        p
    }
}

/// Choose between the decoder and its opposite so that the behavior
/// policy's decoded return on its own log stays below one half. Returns the
/// selection and the unflipped decoded return.
///
/// A decoded return of exactly 0.5 keeps the original and logs a warning.
pub fn select_decoder<D: DecodesReward>(decoder: D, samples: &[Sample]) -> (Selected<D>, f64) {
    let refs: Vec<&Sample> = samples.iter().collect();
    let probs = decoder.probs(&refs);
    let mean = if probs.is_empty() {
        0.5
    } else {
        probs.iter().sum::<f64>() / probs.len() as f64
    };
    if mean == 0.5 {
        log::warn!("decoded return of the behavior policy is exactly 0.5; keeping the decoder");
    }
    (Selected { decoder, flipped: mean > 0.5 }, mean)
}
