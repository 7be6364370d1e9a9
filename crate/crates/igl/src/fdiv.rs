//! f-divergence generators, Fenchel conjugates, and the variational
//! lower-bound losses used to estimate (conditional) f-mutual information
//! from critic evaluations.
//!
//! A bound has the shape `E_P[T] - E_Q[f*(T)]`. For KL two conjugate forms
//! ship: the tight Fenchel conjugate `exp(t - 1)` of `u log u` (default) and
//! the plain `exp(t)` form ([`DvForm::Paper`]); the two differ by a constant
//! offset at the optimum and select the same critics. For chi-squared the
//! conjugate is `t + t^2/4`, valid on `t >= -2`, so critic outputs on the
//! conjugate side are floored there.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::tensor::{NodeId, Tape};

/// Default clamp on critic outputs; keeps `exp(t - 1)` finite.
pub const DEFAULT_CRITIC_BOUND: f64 = 10.0;

#[derive(Debug, Error)]
pub enum FdivError {
    #[error("empty batch passed to a variational bound")]
    EmptyBatch,

    #[error("bound sides disagree: {0} joint rows vs {1} product rows")]
    SideMismatch(usize, usize),

    #[error("unknown divergence tag `{0}` (expected kl or chi2)")]
    UnknownDivergence(String),

    #[error("unknown bound form `{0}` (expected nwj or paper)")]
    UnknownForm(String),
}

/// A convex generator `f` with `f(1) = 0` and its Fenchel conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FDivergence {
    /// `f(u) = u log u`.
    Kl,
    /// Pearson chi-squared, `f(u) = (u - 1)^2`.
    Chi2,
}

/// Which exponential form the KL bound uses on the conjugate side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DvForm {
    /// `exp(t - 1)`: the Fenchel conjugate of `u log u`; the bound is tight.
    #[default]
    Nwj,
    /// `exp(t)`: peaks at `D_KL - 1` but selects the same critics.
    Paper,
}

impl FDivergence {
    /// `f(u)` for `u >= 0`, with `f(0)` taken as the limit value.
    pub fn generator(&self, u: f64) -> f64 {
        debug_assert!(u >= 0.0, "generator domain is nonnegative, got {u}");
        match self {
            FDivergence::Kl => {
                if u == 0.0 {
                    0.0
                } else {
                    u * u.ln()
                }
            }
            FDivergence::Chi2 => (u - 1.0) * (u - 1.0),
        }
    }

    /// `f'(u)`, used to pick the Fenchel-Young equality point.
    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            FDivergence::Kl => u.ln() + 1.0,
            FDivergence::Chi2 => 2.0 * (u - 1.0),
        }
    }

    /// The Fenchel conjugate `f*(t) = sup_{u >= 0} {u t - f(u)}`.
    ///
    /// KL: `exp(t - 1)`. Chi-squared: `t + t^2/4` for `t >= -2`, and `-1`
    /// below (the supremum sits at `u = 0` there).
    pub fn conjugate(&self, t: f64) -> f64 {
        match self {
            FDivergence::Kl => (t - 1.0).exp(),
            FDivergence::Chi2 => {
                let t = t.max(-2.0);
                t + t * t / 4.0
            }
        }
    }

    /// Conjugate value under a bound-form switch; [`DvForm::Paper`] only
    /// affects KL.
    pub fn conjugate_with_form(&self, form: DvForm, t: f64) -> f64 {
        match (self, form) {
            (FDivergence::Kl, DvForm::Paper) => t.exp(),
            _ => self.conjugate(t),
        }
    }

    /// Tape version of [`FDivergence::conjugate_with_form`].
    pub fn conjugate_node(&self, tape: &mut Tape, form: DvForm, t: NodeId) -> NodeId {
        match (self, form) {
            (FDivergence::Kl, DvForm::Nwj) => {
                let shifted = tape.affine(t, 1.0, -1.0);
                tape.exp(shifted)
            }
            (FDivergence::Kl, DvForm::Paper) => tape.exp(t),
            (FDivergence::Chi2, _) => {
                // max(t, -2) = relu(t + 2) - 2
                let shifted = tape.affine(t, 1.0, 2.0);
                let pos = tape.relu(shifted);
                let floored = tape.affine(pos, 1.0, -2.0);
                let sq = tape.mul(floored, floored);
                let quarter = tape.affine(sq, 0.25, 0.0);
                tape.add(floored, quarter)
            }
        }
    }
}

impl fmt::Display for FDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FDivergence::Kl => write!(f, "kl"),
            FDivergence::Chi2 => write!(f, "chi2"),
        }
    }
}

impl FromStr for FDivergence {
    type Err = FdivError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(FDivergence::Kl),
            "chi2" => Ok(FDivergence::Chi2),
            other => Err(FdivError::UnknownDivergence(other.to_string())),
        }
    }
}

impl fmt::Display for DvForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DvForm::Nwj => write!(f, "nwj"),
            DvForm::Paper => write!(f, "paper"),
        }
    }
}

impl FromStr for DvForm {
    type Err = FdivError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "nwj" => Ok(DvForm::Nwj),
            "paper" => Ok(DvForm::Paper),
            other => Err(FdivError::UnknownForm(other.to_string())),
        }
    }
}

/// Clamp a raw critic head into `(-bound, bound)` with a scaled tanh.
pub fn clamp_critic(tape: &mut Tape, raw: NodeId, bound: f64) -> NodeId {
    debug_assert!(bound > 0.0);
    let scaled = tape.affine(raw, 1.0 / bound, 0.0);
    let squashed = tape.tanh(scaled);
    tape.affine(squashed, bound, 0.0)
}

/// Average a column of per-row terms, optionally under probability weights.
///
/// Weighted rows are expected to carry weights summing to one, so the term
/// is `sum(w .* vals)`; unweighted rows use the plain mean.
fn batch_expectation(tape: &mut Tape, vals: NodeId, weights: Option<NodeId>) -> NodeId {
    match weights {
        Some(w) => {
            let prod = tape.mul(w, vals);
            tape.sum(prod)
        }
        None => tape.mean(vals),
    }
}

/// The variational lower bound `E_P[T] - E_Q[f*(T)]` over two batches of
/// clamped critic evaluations (`n x 1` columns).
///
/// `weights_p` / `weights_q` are optional per-row probability weights (each
/// summing to one); they carry the decoder's differentiable path when the
/// batches were built by reward augmentation.
pub fn variational_div_lower_bound(
    tape: &mut Tape,
    f: FDivergence,
    form: DvForm,
    critic_on_p: NodeId,
    critic_on_q: NodeId,
    weights_p: Option<NodeId>,
    weights_q: Option<NodeId>,
) -> Result<NodeId, FdivError> {
    if tape.value(critic_on_p).numel() == 0 || tape.value(critic_on_q).numel() == 0 {
        return Err(FdivError::EmptyBatch);
    }
    let ep = batch_expectation(tape, critic_on_p, weights_p);
    let conj = f.conjugate_node(tape, form, critic_on_q);
    let eq = batch_expectation(tape, conj, weights_q);
    Ok(tape.sub(ep, eq))
}

/// Lower bound on `I_f(Z1; Z2)` from critic evaluations on a joint batch and
/// on a product-of-marginals batch. Construction of the two batches is the
/// trainer's job.
pub fn mi_loss(
    tape: &mut Tape,
    f: FDivergence,
    form: DvForm,
    critic_on_joint: NodeId,
    critic_on_product: NodeId,
    weights_joint: Option<NodeId>,
    weights_product: Option<NodeId>,
) -> Result<NodeId, FdivError> {
    variational_div_lower_bound(
        tape,
        f,
        form,
        critic_on_joint,
        critic_on_product,
        weights_joint,
        weights_product,
    )
}

/// Lower bound on `I_f(Y; X,A | R)` from critic evaluations on the joint
/// batch over `(x, a, y, r)` and on the conditionally-resampled batch over
/// `(x, a, y~, r)`.
pub fn conditional_mi_loss(
    tape: &mut Tape,
    f: FDivergence,
    form: DvForm,
    critic_on_joint: NodeId,
    critic_on_cond_product: NodeId,
    weights_joint: Option<NodeId>,
    weights_cond_product: Option<NodeId>,
) -> Result<NodeId, FdivError> {
    variational_div_lower_bound(
        tape,
        f,
        form,
        critic_on_joint,
        critic_on_cond_product,
        weights_joint,
        weights_cond_product,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// Numeric `sup_u {u t - f(u)}` over a dense grid, the independent
    /// check for the closed-form conjugates.
    fn numeric_conjugate(f: FDivergence, t: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut u = 0.0;
        while u <= 60.0 {
            best = best.max(u * t - f.generator(u));
            u += 1e-4;
        }
        best
    }

    #[test]
    fn kl_conjugate_at_one_is_one() {
        assert!((FDivergence::Kl.conjugate(1.0) - 1.0).abs() < 1e-15);
        assert!((numeric_conjugate(FDivergence::Kl, 1.0) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn chi2_conjugate_closed_form() {
        assert_eq!(FDivergence::Chi2.conjugate(0.0), 0.0);
        assert_eq!(FDivergence::Chi2.conjugate(2.0), 3.0);
        assert!((numeric_conjugate(FDivergence::Chi2, 0.0) - 0.0).abs() < 1e-7);
        assert!((numeric_conjugate(FDivergence::Chi2, 2.0) - 3.0).abs() < 1e-7);
        // Below the floor the supremum sits at u = 0.
        assert_eq!(FDivergence::Chi2.conjugate(-5.0), -1.0);
        assert!((numeric_conjugate(FDivergence::Chi2, -5.0) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn fenchel_young_holds_on_grid_with_equality_at_derivative() {
        for f in [FDivergence::Kl, FDivergence::Chi2] {
            let mut u = 0.1;
            while u <= 10.0 {
                let mut t = -DEFAULT_CRITIC_BOUND;
                while t <= DEFAULT_CRITIC_BOUND {
                    assert!(
                        f.conjugate(t) >= u * t - f.generator(u) - 1e-12,
                        "{f} FY violated at u={u} t={t}"
                    );
                    t += 0.25;
                }
                let tstar = f.derivative(u);
                let gap = f.conjugate(tstar) - (u * tstar - f.generator(u));
                assert!(gap.abs() < 1e-9, "{f} FY equality gap {gap} at u={u}");
                u += 0.1;
            }
        }
    }

    #[test]
    fn constant_zero_critic_kl_bound() {
        let mut tape = Tape::new();
        let on_p = tape.constant(Tensor::column(vec![0.0; 8]));
        let on_q = tape.constant(Tensor::column(vec![0.0; 8]));
        let bound = variational_div_lower_bound(
            &mut tape,
            FDivergence::Kl,
            DvForm::Nwj,
            on_p,
            on_q,
            None,
            None,
        )
        .unwrap();
        let expect = -(-1.0f64).exp();
        assert!((tape.value(bound).item() - expect).abs() < 1e-15);
    }

    #[test]
    fn constant_critic_bound_peaks_at_one_when_p_equals_q() {
        // With P = Q a constant critic c gives c - exp(c - 1); the best
        // constant is c = 1 and recovers D_KL(P || P) = 0.
        let value = |c: f64| c - (c - 1.0f64).exp();
        let mut best_c = f64::NAN;
        let mut best = f64::NEG_INFINITY;
        let mut c = -3.0;
        while c <= 3.0 {
            if value(c) > best {
                best = value(c);
                best_c = c;
            }
            c += 1e-4;
        }
        assert!((best_c - 1.0).abs() < 1e-3);
        assert!(best.abs() < 1e-7);

        let mut tape = Tape::new();
        let on_p = tape.constant(Tensor::column(vec![1.0; 4]));
        let on_q = tape.constant(Tensor::column(vec![1.0; 4]));
        let bound = variational_div_lower_bound(
            &mut tape,
            FDivergence::Kl,
            DvForm::Nwj,
            on_p,
            on_q,
            None,
            None,
        )
        .unwrap();
        assert!(tape.value(bound).item().abs() < 1e-15);
    }

    #[test]
    fn pointwise_optimal_critic_recovers_exact_kl() {
        // Two-state P, Q with critic log(dP/dQ) + 1 evaluated pointwise and
        // exact expectations as weights: the NWJ bound equals D_KL(P || Q).
        let p = [0.8f64, 0.2];
        let q = [0.35f64, 0.65];
        let exact: f64 = p
            .iter()
            .zip(&q)
            .map(|(&pi, &qi)| pi * (pi / qi).ln())
            .sum();

        let critic: Vec<f64> = p.iter().zip(&q).map(|(&pi, &qi)| (pi / qi).ln() + 1.0).collect();
        let mut tape = Tape::new();
        let on_p = tape.constant(Tensor::column(critic.clone()));
        let on_q = tape.constant(Tensor::column(critic));
        let wp = tape.constant(Tensor::column(p.to_vec()));
        let wq = tape.constant(Tensor::column(q.to_vec()));
        let bound = variational_div_lower_bound(
            &mut tape,
            FDivergence::Kl,
            DvForm::Nwj,
            on_p,
            on_q,
            Some(wp),
            Some(wq),
        )
        .unwrap();
        assert!((tape.value(bound).item() - exact).abs() < 1e-9);
    }

    #[test]
    fn constant_one_critic_conditional_bound_is_zero() {
        let mut tape = Tape::new();
        let on_p = tape.constant(Tensor::column(vec![1.0; 6]));
        let on_q = tape.constant(Tensor::column(vec![1.0; 6]));
        let bound = conditional_mi_loss(
            &mut tape,
            FDivergence::Kl,
            DvForm::Nwj,
            on_p,
            on_q,
            None,
            None,
        )
        .unwrap();
        assert_eq!(tape.value(bound).item(), 0.0);
    }

    #[test]
    fn clamp_keeps_outputs_in_band() {
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::column(vec![-1e6, -3.0, 0.0, 3.0, 1e6]));
        let clamped = clamp_critic(&mut tape, raw, DEFAULT_CRITIC_BOUND);
        for &v in tape.value(clamped).data() {
            assert!(v.abs() <= DEFAULT_CRITIC_BOUND);
        }
        // exp(t - 1) stays finite under the clamp.
        let conj = FDivergence::Kl.conjugate_node(&mut tape, DvForm::Nwj, clamped);
        for &v in tape.value(conj).data() {
            assert!(v.is_finite() && v <= (DEFAULT_CRITIC_BOUND - 1.0).exp());
        }
    }

    #[test]
    fn tag_parsing_round_trips() {
        assert_eq!("kl".parse::<FDivergence>().unwrap(), FDivergence::Kl);
        assert_eq!("chi2".parse::<FDivergence>().unwrap(), FDivergence::Chi2);
        assert!("js".parse::<FDivergence>().is_err());
        assert_eq!("nwj".parse::<DvForm>().unwrap(), DvForm::Nwj);
        assert_eq!("paper".parse::<DvForm>().unwrap(), DvForm::Paper);
        assert!("dv".parse::<DvForm>().is_err());
    }
}
