//! The alternating min-max training loop.
//!
//! One epoch draws a mini-batch, augments it under the current decoder,
//! builds the resampling structures, evaluates the objective once, and
//! backpropagates once. Both critics take ascent steps on their bounds;
//! the decoder takes a descent step on the full objective. The critic
//! bounding the regularizer follows the ascent form `w2 <- w2 + lr * dI`,
//! which for plain gradients equals the descent form `w2 <- w2 - (lr/beta)`
//! on the full objective since its objective gradient is `-beta * dI`.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batches::{build_product_batches, redraw};
use super::objective::{objective_estimate, ObjectiveConfig};
use super::{CriticRole, DecodesReward, InputMode, RewardDecoder, TrainError, VariationalCritic};
use crate::env::{Dataset, Sample};
use crate::fdiv::{DvForm, FDivergence, DEFAULT_CRITIC_BOUND};
use crate::tensor::{clip_grad_norm, Direction, EmaShadow, Optimizer, Tape, Tensor};

/// Whether all parameter groups move every epoch or the critics and the
/// decoder alternate in phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Simultaneous,
    Alternate { phase_epochs: usize },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub beta: f64,
    pub f1: FDivergence,
    pub f2: FDivergence,
    pub dv_form: DvForm,
    /// Bernoulli draws per base row.
    pub n_augment: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ema_rate: f64,
    pub clip_norm: f64,
    pub clamp_c: f64,
    pub critic_bound: f64,
    pub input_mode: InputMode,
    pub decoder_hidden: usize,
    pub critic_hidden: usize,
    pub update_mode: UpdateMode,
    /// Evaluate with the EMA shadow of the decoder parameters.
    pub eval_with_ema: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 10.0,
            f1: FDivergence::Kl,
            f2: FDivergence::Kl,
            dv_form: DvForm::Nwj,
            n_augment: 5,
            learning_rate: 1e-3,
            epochs: 1000,
            batch_size: 600,
            seed: 0,
            ema_rate: 0.99,
            clip_norm: 1.0,
            clamp_c: 0.01,
            critic_bound: DEFAULT_CRITIC_BOUND,
            input_mode: InputMode::Y,
            decoder_hidden: 64,
            critic_hidden: 64,
            update_mode: UpdateMode::Alternate { phase_epochs: 1 },
            eval_with_ema: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.n_augment < 1 {
            return Err(TrainError::Config("n_augment must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(TrainError::Config(format!("beta {} must be >= 0", self.beta)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be >= 1".into()));
        }
        if let UpdateMode::Alternate { phase_epochs: 0 } = self.update_mode {
            return Err(TrainError::Config("phase length must be >= 1".into()));
        }
        Ok(())
    }

    fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig { f1: self.f1, f2: self.f2, dv_form: self.dv_form, beta: self.beta }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub objective: f64,
    pub cond_mi: f64,
    pub reg_mi: f64,
    /// Mean decoded probability of the mini-batch: the behavior policy's
    /// decoded return estimate.
    pub decoded_return_behavior: f64,
    pub wall_ms: f64,
    /// True when the batch was skipped after repeated class starvation.
    pub skipped: bool,
}

/// Mutable training state: the three networks, their optimizers, and the
/// decoder's EMA shadow.
pub struct TrainState {
    pub decoder: RewardDecoder,
    pub critic_g: VariationalCritic,
    pub critic_t: VariationalCritic,
    opt_decoder: Optimizer,
    opt_g: Optimizer,
    opt_t: Optimizer,
    ema: EmaShadow,
    cfg: TrainConfig,
    epoch: usize,
}

impl TrainState {
    pub fn new(
        cfg: &TrainConfig,
        context_dim: usize,
        num_actions: usize,
        feedback_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let decoder = RewardDecoder::new(
            cfg.input_mode,
            context_dim,
            num_actions,
            feedback_dim,
            cfg.decoder_hidden,
            cfg.clamp_c,
            rng,
        )?;
        let critic_g = VariationalCritic::new(
            CriticRole::ConditionalMi,
            context_dim,
            num_actions,
            feedback_dim,
            cfg.critic_hidden,
            cfg.critic_bound,
            rng,
        )?;
        let critic_t = VariationalCritic::new(
            CriticRole::MarginalMi,
            context_dim,
            num_actions,
            feedback_dim,
            cfg.critic_hidden,
            cfg.critic_bound,
            rng,
        )?;
        let ema = EmaShadow::new(&decoder.net().params(), cfg.ema_rate)?;
        Ok(TrainState {
            decoder,
            critic_g,
            critic_t,
            opt_decoder: Optimizer::adam(cfg.learning_rate),
            opt_g: Optimizer::adam(cfg.learning_rate),
            opt_t: Optimizer::adam(cfg.learning_rate),
            ema,
            cfg: cfg.clone(),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn phases(&self) -> (bool, bool) {
        match self.cfg.update_mode {
            UpdateMode::Simultaneous => (true, true),
            UpdateMode::Alternate { phase_epochs } => {
                // Critic phase first, then decoder phase.
                let critic = (self.epoch / phase_epochs) % 2 == 0;
                (critic, !critic)
            }
        }
    }

    /// One optimization step on a mini-batch.
    pub fn train_epoch(
        &mut self,
        minibatch: &[&Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<EpochLog, TrainError> {
        let t0 = Instant::now();
        let epoch = self.epoch;
        let (critic_phase, decoder_phase) = self.phases();
        self.epoch += 1;

        // Augment; on class starvation redraw once, then skip the batch.
        let probs = self.decoder.probs(minibatch);
        let mut aug = redraw(&probs, self.cfg.n_augment, rng);
        let batches = match build_product_batches(&aug, rng) {
            Ok(b) => b,
            Err(TrainError::ClassStarvation { .. }) => {
                aug = redraw(&probs, self.cfg.n_augment, rng);
                match build_product_batches(&aug, rng) {
                    Ok(b) => b,
                    Err(TrainError::ClassStarvation { class }) => {
                        log::warn!(
                            "epoch {epoch}: decoded class {class} starved twice, skipping batch"
                        );
                        return Ok(EpochLog {
                            epoch,
                            objective: f64::NAN,
                            cond_mi: f64::NAN,
                            reg_mi: f64::NAN,
                            decoded_return_behavior: mean(&probs),
                            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                            skipped: true,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(e) => return Err(e),
        };

        let mut tape = Tape::new();
        let nodes = objective_estimate(
            &mut tape,
            minibatch,
            &batches,
            &self.decoder,
            &self.critic_g,
            &self.critic_t,
            &self.cfg.objective(),
        )?;
        let objective = tape.value(nodes.total).item();
        let cond_mi = tape.value(nodes.cond_mi).item();
        let reg_mi = tape.value(nodes.reg_mi).item();
        let mean_psi = tape.value(nodes.mean_psi).item();
        if !objective.is_finite() {
            return Err(TrainError::NonFinite { epoch, value: objective });
        }
        tape.backward(nodes.total)?;

        if critic_phase {
            let mut g_grads = nodes.critic_g_handle.grads(&tape);
            clip_grad_norm(&mut g_grads, self.cfg.clip_norm);
            self.opt_g.step(&mut self.critic_g.net_mut().params_mut(), &g_grads, Direction::Ascent);

            if self.cfg.beta > 0.0 {
                // dL/dw2 = -beta * d(bound)/dw2; rescale to the bound's own
                // ascent gradient before clipping.
                let mut t_grads: Vec<Tensor> = nodes
                    .critic_t_handle
                    .grads(&tape)
                    .into_iter()
                    .map(|mut g| {
                        g.data_mut().iter_mut().for_each(|v| *v /= -self.cfg.beta);
                        g
                    })
                    .collect();
                clip_grad_norm(&mut t_grads, self.cfg.clip_norm);
                self.opt_t.step(
                    &mut self.critic_t.net_mut().params_mut(),
                    &t_grads,
                    Direction::Ascent,
                );
            }
        }
        if decoder_phase {
            let mut d_grads = nodes.decoder_handle.grads(&tape);
            clip_grad_norm(&mut d_grads, self.cfg.clip_norm);
            self.opt_decoder.step(
                &mut self.decoder.net_mut().params_mut(),
                &d_grads,
                Direction::Descent,
            );
            self.ema.update(&self.decoder.net().params());
        }

        Ok(EpochLog {
            epoch,
            objective,
            cond_mi,
            reg_mi,
            decoded_return_behavior: mean_psi,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            skipped: false,
        })
    }

    /// The decoder used for evaluation: EMA shadow parameters by default,
    /// last-iterate parameters when disabled.
    pub fn eval_decoder(&self) -> RewardDecoder {
        let mut decoder = self.decoder.clone();
        if self.cfg.eval_with_ema {
            self.ema.write_to(&mut decoder.net_mut().params_mut());
        }
        decoder
    }

    pub fn raw_decoder(&self) -> &RewardDecoder {
        &self.decoder
    }
}

/// Result of a full training run.
pub struct TrainOutput {
    /// Decoder for downstream use (EMA shadow unless disabled).
    pub decoder: RewardDecoder,
    /// Last-iterate decoder parameters.
    pub raw_decoder: RewardDecoder,
    pub log: Vec<EpochLog>,
}

/// Run the full training loop over an offline dataset.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState::new(
        cfg,
        dataset.meta.context_dim,
        dataset.meta.num_actions,
        dataset.meta.feedback_dim,
        &mut rng,
    )?;
    let samples = dataset.samples();
    let batch = cfg.batch_size.min(samples.len());
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let picks = sample_indices(&mut rng, samples.len(), batch);
        let minibatch: Vec<&Sample> = picks.iter().map(|i| &samples[i]).collect();
        log.push(state.train_epoch(&minibatch, &mut rng)?);
    }
    Ok(TrainOutput {
        decoder: state.eval_decoder(),
        raw_decoder: state.decoder.clone(),
        log,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
