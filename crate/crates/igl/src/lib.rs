//! Interaction-grounded learning with a latent binary reward.
//!
//! The learner observes only context-action-feedback tuples. A reward
//! decoder is trained by minimizing the conditional dependence between
//! feedback and context-action given the decoded reward, regularized by the
//! dependence between the decoded reward and the context-action pair; both
//! information terms are estimated through variational lower bounds driven
//! by critic networks, giving an alternating min-max loop. The decoded
//! rewards then feed an offline contextual-bandit step that trains the
//! output policy.
//!
//! Modules:
//! - [`tensor`]: dense arrays, reverse-mode autodiff, MLPs, optimizers.
//! - [`fdiv`]: f-divergence generators, conjugates, variational bounds.
//! - [`env`]: number-guessing environments (MNIST and synthetic), IDX
//!   parsing, offline collection.
//! - [`trainer`]: decoder/critic networks, augmentation, the min-max loop,
//!   decoder symmetry-breaking, checkpoints.
//! - [`bandit`]: the offline contextual-bandit oracle and evaluation.
//! - [`oracle`]: exact brute-force information quantities on enumerable
//!   instances and the finite-difference gradient checker.
//! - [`cli`]: experiment runner, config parsing, CSV emission.

pub mod bandit;
pub mod cli;
pub mod env;
pub mod fdiv;
pub mod oracle;
pub mod tensor;
pub mod trainer;

pub use bandit::{LinearPolicy, PolicyReport};
pub use env::{Dataset, FeedbackSpec, MnistEnv, NoiseType, Sample, SyntheticEnv};
pub use fdiv::{DvForm, FDivergence};
pub use oracle::DiscreteJoint;
pub use tensor::{Mlp, Tape, Tensor};
pub use trainer::{RewardDecoder, TrainConfig, VariationalCritic};
