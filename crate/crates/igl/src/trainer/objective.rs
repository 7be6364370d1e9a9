//! Assembly of the estimated objective on a tape.
//!
//! The estimate follows the importance-weighted empirical objective: every
//! base row contributes both decoded-reward values, weighted on-tape by the
//! decoder probabilities, so one backward pass yields gradients for the
//! decoder and both critics. Feedback for the conditional-product side
//! comes from the augmented hard-draw pools.

use super::batches::ProductBatches;
use super::{RewardDecoder, TrainError, VariationalCritic};
use crate::env::Sample;
use crate::fdiv::{conditional_mi_loss, mi_loss, DvForm, FDivergence};
use crate::tensor::{MlpHandle, NodeId, Tape};

#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub f1: FDivergence,
    pub f2: FDivergence,
    pub dv_form: DvForm,
    pub beta: f64,
}

/// Tape nodes of one objective evaluation.
pub struct ObjectiveNodes {
    /// The full estimate: conditional bound minus `beta` times the
    /// regularizer bound.
    pub total: NodeId,
    /// Variational bound on the conditional dependence term.
    pub cond_mi: NodeId,
    /// Variational bound on the reward-marginal term.
    pub reg_mi: NodeId,
    /// Mean decoded probability over the batch: the behavior policy's
    /// decoded return on this mini-batch.
    pub mean_psi: NodeId,
    pub decoder_handle: MlpHandle,
    pub critic_g_handle: MlpHandle,
    pub critic_t_handle: MlpHandle,
}

/// Build the estimated objective for one mini-batch.
pub fn objective_estimate(
    tape: &mut Tape,
    samples: &[&Sample],
    batches: &ProductBatches,
    decoder: &RewardDecoder,
    critic_g: &VariationalCritic,
    critic_t: &VariationalCritic,
    cfg: &ObjectiveConfig,
) -> Result<ObjectiveNodes, TrainError> {
    let k = samples.len();
    if k == 0 {
        return Err(TrainError::EmptyBatch);
    }

    // Decoder probabilities and the per-row class weights psi_r / K.
    let dec_inputs = tape.constant(decoder.build_inputs(samples));
    let decoder_handle = decoder.net().bind(tape);
    let psi = decoder.forward(tape, &decoder_handle, dec_inputs)?;
    let inv_k = 1.0 / k as f64;
    let w1 = tape.affine(psi, inv_k, 0.0);
    let w0 = tape.affine(psi, -inv_k, inv_k);

    // Conditional bound: critic on the joint rows and on rows whose
    // feedback was resampled from the matching decoded class.
    let critic_g_handle = critic_g.net().bind(tape);
    let g_out = |tape: &mut Tape, r: f64, ytilde: Option<&[usize]>| -> Result<NodeId, TrainError> {
        let inputs = tape.constant(critic_g.build_inputs(samples, r, ytilde));
        critic_g.forward_clamped(tape, &critic_g_handle, inputs)
    };
    let g_joint_1 = g_out(tape, 1.0, None)?;
    let g_joint_0 = g_out(tape, 0.0, None)?;
    let g_cond_1 = g_out(tape, 1.0, Some(&batches.ytilde_r1))?;
    let g_cond_0 = g_out(tape, 0.0, Some(&batches.ytilde_r0))?;
    let bound_1 =
        conditional_mi_loss(tape, cfg.f1, cfg.dv_form, g_joint_1, g_cond_1, Some(w1), Some(w1))?;
    let bound_0 =
        conditional_mi_loss(tape, cfg.f1, cfg.dv_form, g_joint_0, g_cond_0, Some(w0), Some(w0))?;
    let cond_mi = tape.add(bound_1, bound_0);

    // Regularizer bound: the product side pairs the same (x, a) rows with
    // the analytic decoded-reward marginal p(r) = mean psi_r.
    let critic_t_handle = critic_t.net().bind(tape);
    let t_in_1 = tape.constant(critic_t.build_inputs(samples, 1.0, None));
    let t_in_0 = tape.constant(critic_t.build_inputs(samples, 0.0, None));
    let t_out_1 = critic_t.forward_clamped(tape, &critic_t_handle, t_in_1)?;
    let t_out_0 = critic_t.forward_clamped(tape, &critic_t_handle, t_in_0)?;
    let p1 = tape.sum(w1);
    let p0 = tape.affine(p1, -1.0, 1.0);
    let wm1 = make_marginal_weights(tape, p1, k);
    let wm0 = make_marginal_weights(tape, p0, k);
    let reg_1 = mi_loss(tape, cfg.f2, cfg.dv_form, t_out_1, t_out_1, Some(w1), Some(wm1))?;
    let reg_0 = mi_loss(tape, cfg.f2, cfg.dv_form, t_out_0, t_out_0, Some(w0), Some(wm0))?;
    let reg_mi = tape.add(reg_1, reg_0);

    let scaled_reg = tape.affine(reg_mi, cfg.beta, 0.0);
    let total = tape.sub(cond_mi, scaled_reg);

    Ok(ObjectiveNodes {
        total,
        cond_mi,
        reg_mi,
        mean_psi: p1,
        decoder_handle,
        critic_g_handle,
        critic_t_handle,
    })
}

/// Expand a scalar class-marginal node into per-row weights `p(r) / K`:
/// a constant `K x 1` column of `1/K` matmul'd with the scalar as `1 x 1`.
fn make_marginal_weights(tape: &mut Tape, p: NodeId, k: usize) -> NodeId {
    let column = tape.constant(crate::tensor::Tensor::column(vec![1.0 / k as f64; k]));
    let scalar = tape.reshape(p, vec![1, 1]);
    tape.matmul(column, scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn marginal_weights_sum_to_p() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::matrix(1, 1, vec![0.35]).unwrap());
        let w = make_marginal_weights(&mut tape, p, 7);
        let total: f64 = tape.value(w).data().iter().sum();
        assert!((total - 0.35).abs() < 1e-12);
        assert_eq!(tape.value(w).rows(), 7);
    }
}
