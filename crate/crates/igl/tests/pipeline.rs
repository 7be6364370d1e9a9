//! Integration checks of the training machinery: gradient fidelity of the
//! composite objective, estimator convergence against the exact oracle,
//! end-to-end decoder learning, and batch-construction statistics.

mod common;

use common::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use igl::env::{NoiseType, Sample};
use igl::fdiv::{mi_loss, clamp_critic, DvForm, FDivergence};
use igl::oracle::{exact_f_mi, finite_diff_gradcheck, Joint2};
use igl::tensor::{Activation, Direction, Mlp, Optimizer, Tape, Tensor};
use igl::trainer::{
    build_product_batches, objective_estimate, redraw, select_decoder, train, DecodesReward,
    ObjectiveConfig, TrainConfig, TrainState, UpdateMode,
};

/// Evaluate the composite objective for fixed resampling structures.
fn objective_value(
    samples: &[&Sample],
    batches: &igl::trainer::ProductBatches,
    decoder: &igl::trainer::RewardDecoder,
    critic_g: &igl::trainer::VariationalCritic,
    critic_t: &igl::trainer::VariationalCritic,
    cfg: &ObjectiveConfig,
) -> f64 {
    let mut tape = Tape::new();
    let nodes =
        objective_estimate(&mut tape, samples, batches, decoder, critic_g, critic_t, cfg).unwrap();
    tape.value(nodes.total).item()
}

#[test]
fn composite_objective_gradients_match_finite_differences() {
    let (_env, data) = small_synthetic(3, 3, NoiseType::Context, 0.3, 64, 42);
    let samples: Vec<&Sample> = data.samples().iter().collect();

    let train_cfg = TrainConfig {
        decoder_hidden: 6,
        critic_hidden: 6,
        seed: 5,
        ..TrainConfig::default()
    };
    let obj_cfg = ObjectiveConfig {
        f1: FDivergence::Kl,
        f2: FDivergence::Chi2,
        dv_form: DvForm::Nwj,
        beta: 3.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut state = TrainState::new(&train_cfg, 3, 3, 6, &mut rng).unwrap();

    // Fixed augmentation structures: the check differentiates the
    // estimator for a frozen mini-batch.
    let refs: Vec<&Sample> = samples.clone();
    let probs = state.decoder.probs(&refs);
    let aug = redraw(&probs, 5, &mut rng);
    let batches = build_product_batches(&aug, &mut rng).unwrap();

    // Autodiff gradients at the initial point.
    let mut tape = Tape::new();
    let nodes = objective_estimate(
        &mut tape,
        &samples,
        &batches,
        &state.decoder,
        &state.critic_g,
        &state.critic_t,
        &obj_cfg,
    )
    .unwrap();
    tape.backward(nodes.total).unwrap();
    let grads = flatten_grads(&[
        nodes.decoder_handle.grads(&tape),
        nodes.critic_g_handle.grads(&tape),
        nodes.critic_t_handle.grads(&tape),
    ]);

    let point = flatten_params(&[
        state.decoder.net(),
        state.critic_g.net(),
        state.critic_t.net(),
    ]);
    assert_eq!(point.len(), grads.len());

    // Finite differences over the same frozen structures.
    let samples_owned: Vec<Sample> = samples.iter().map(|s| (*s).clone()).collect();
    let f = |flat: &[f64]| {
        let mut decoder = state.decoder.clone();
        let mut critic_g = state.critic_g.clone();
        let mut critic_t = state.critic_t.clone();
        unflatten_params(
            &mut [decoder.net_mut(), critic_g.net_mut(), critic_t.net_mut()],
            flat,
        );
        let refs: Vec<&Sample> = samples_owned.iter().collect();
        objective_value(&refs, &batches, &decoder, &critic_g, &critic_t, &obj_cfg)
    };
    let report = finite_diff_gradcheck(f, &point, 1e-5, &grads).unwrap();
    assert!(
        report.max_rel < 1e-4 && report.max_abs_small < 1e-6,
        "gradcheck failed: rel {} abs {} at coord {}",
        report.max_rel,
        report.max_abs_small,
        report.worst_coord
    );
}

#[test]
fn trained_critic_recovers_exact_mi_on_2x2_joint() {
    // Exact-expectation training: the four cells of the joint and of the
    // product of marginals enter as probability weights.
    let p = vec![0.4, 0.1, 0.1, 0.4];
    let joint = Joint2::new(2, 2, p.clone()).unwrap();
    let exact = exact_f_mi(&joint, FDivergence::Kl);

    let q: Vec<f64> = {
        let m1 = [p[0] + p[1], p[2] + p[3]];
        let m2 = [p[0] + p[2], p[1] + p[3]];
        vec![m1[0] * m2[0], m1[0] * m2[1], m1[1] * m2[0], m1[1] * m2[1]]
    };
    // One-hot encoded cell inputs.
    let inputs = Tensor::matrix(
        4,
        4,
        vec![
            1.0, 0.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 1.0, 0.0, //
            0.0, 1.0, 0.0, 1.0,
        ],
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut critic = Mlp::new(&[4, 16, 1], &[Activation::Relu, Activation::Identity], &mut rng)
        .unwrap();
    let mut opt = Optimizer::adam(1e-2);
    let mut bound_value = f64::NEG_INFINITY;
    for _ in 0..5000 {
        let mut tape = Tape::new();
        let x = tape.constant(inputs.clone());
        let wp = tape.constant(Tensor::column(p.clone()));
        let wq = tape.constant(Tensor::column(q.clone()));
        let handle = critic.bind(&mut tape);
        let raw = critic.forward(&mut tape, &handle, x).unwrap();
        let t = clamp_critic(&mut tape, raw, 10.0);
        let bound =
            mi_loss(&mut tape, FDivergence::Kl, DvForm::Nwj, t, t, Some(wp), Some(wq)).unwrap();
        bound_value = tape.value(bound).item();
        tape.backward(bound).unwrap();
        let grads = handle.grads(&tape);
        opt.step(&mut critic.params_mut(), &grads, Direction::Ascent);
    }
    let rel = (bound_value - exact).abs() / exact;
    assert!(
        rel < 0.05 && bound_value <= exact + 1e-9,
        "bound {bound_value} vs exact {exact} (rel {rel})"
    );
}

#[test]
fn constant_one_critics_zero_the_objective() {
    // Final layers rigged so the clamped head outputs exactly tanh-inverse
    // composed to 1; with the exp(t-1) form both bounds cancel to zero.
    let (_env, data) = small_synthetic(2, 2, NoiseType::None, 0.0, 32, 1);
    let samples: Vec<&Sample> = data.samples().iter().collect();
    let cfg = TrainConfig {
        decoder_hidden: 4,
        critic_hidden: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut state = TrainState::new(&cfg, 2, 2, 6, &mut rng).unwrap();

    let b = cfg.critic_bound;
    let z = b * (1.0f64 / b).atanh();
    for critic in [state.critic_g.net_mut(), state.critic_t.net_mut()] {
        let mut params = critic.params_mut();
        // zero the final weight, set the final bias to the preimage of 1.
        let last_w = params.len() - 2;
        params[last_w].data_mut().iter_mut().for_each(|v| *v = 0.0);
        params[last_w + 1].data_mut()[0] = z;
    }

    let probs = state.decoder.probs(&samples);
    let aug = redraw(&probs, 5, &mut rng);
    let batches = build_product_batches(&aug, &mut rng).unwrap();
    let obj = ObjectiveConfig {
        f1: FDivergence::Kl,
        f2: FDivergence::Kl,
        dv_form: DvForm::Nwj,
        beta: 10.0,
    };
    let value = {
        let mut tape = Tape::new();
        let nodes = objective_estimate(
            &mut tape,
            &samples,
            &batches,
            &state.decoder,
            &state.critic_g,
            &state.critic_t,
            &obj,
        )
        .unwrap();
        tape.value(nodes.total).item()
    };
    assert!(value.abs() < 1e-9, "objective {value}");
}

#[test]
fn regularizer_critic_update_forms_agree() {
    // The objective gradient for the regularizer critic is -beta times the
    // gradient of its own bound, so the descent form with rate lr/beta and
    // the ascent form with rate lr take identical SGD steps.
    let (_env, data) = small_synthetic(3, 3, NoiseType::Action, 0.2, 48, 9);
    let samples: Vec<&Sample> = data.samples().iter().collect();
    let beta = 10.0;
    let cfg = TrainConfig {
        decoder_hidden: 6,
        critic_hidden: 6,
        beta,
        seed: 11,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let state = TrainState::new(&cfg, 3, 3, 6, &mut rng).unwrap();
    let probs = state.decoder.probs(&samples);
    let aug = redraw(&probs, 5, &mut rng);
    let batches = build_product_batches(&aug, &mut rng).unwrap();
    let obj = ObjectiveConfig {
        f1: FDivergence::Kl,
        f2: FDivergence::Kl,
        dv_form: DvForm::Nwj,
        beta,
    };

    // Gradient of the full objective w.r.t. the regularizer critic.
    let full_grads = {
        let mut tape = Tape::new();
        let nodes = objective_estimate(
            &mut tape,
            &samples,
            &batches,
            &state.decoder,
            &state.critic_g,
            &state.critic_t,
            &obj,
        )
        .unwrap();
        tape.backward(nodes.total).unwrap();
        nodes.critic_t_handle.grads(&tape)
    };
    // Gradient of the bound alone.
    let bound_grads = {
        let mut tape = Tape::new();
        let nodes = objective_estimate(
            &mut tape,
            &samples,
            &batches,
            &state.decoder,
            &state.critic_g,
            &state.critic_t,
            &obj,
        )
        .unwrap();
        tape.backward(nodes.reg_mi).unwrap();
        nodes.critic_t_handle.grads(&tape)
    };

    let mut worst: f64 = 0.0;
    for (f, b) in full_grads.iter().zip(&bound_grads) {
        for (&fv, &bv) in f.data().iter().zip(b.data()) {
            worst = worst.max((fv + beta * bv).abs());
        }
    }
    assert!(worst < 1e-10, "gradient identity residual {worst}");

    // Identical SGD steps through the two formulations.
    let lr = 0.05;
    let params0: Vec<f64> = flatten_params(&[state.critic_t.net()]);
    let mut via_objective = state.critic_t.clone();
    let mut desc = Optimizer::sgd(lr / beta);
    desc.step(&mut via_objective.net_mut().params_mut(), &full_grads, Direction::Descent);

    let mut via_bound = state.critic_t.clone();
    let mut asc = Optimizer::sgd(lr);
    asc.step(&mut via_bound.net_mut().params_mut(), &bound_grads, Direction::Ascent);

    let a = flatten_params(&[via_objective.net()]);
    let b = flatten_params(&[via_bound.net()]);
    for ((&ai, &bi), &p0) in a.iter().zip(&b).zip(&params0) {
        assert!((ai - bi).abs() < 1e-12, "updates diverge: {ai} vs {bi} (from {p0})");
    }
}

#[test]
fn two_context_realizable_training_decodes_rewards() {
    let (_env, data) = small_synthetic(2, 2, NoiseType::None, 0.0, 2000, 21);
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 256,
        decoder_hidden: 16,
        critic_hidden: 32,
        learning_rate: 1e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg).unwrap();
    let (selected, _) = select_decoder(out.decoder, data.samples());
    let acc = decoded_accuracy(&selected, &data);
    assert!(acc > 0.95, "decoded-reward accuracy {acc}");
}

#[test]
fn training_is_deterministic_for_fixed_seed() {
    let (_env, data) = small_synthetic(3, 3, NoiseType::Context, 0.1, 500, 33);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 128,
        decoder_hidden: 8,
        critic_hidden: 8,
        seed: 77,
        ..TrainConfig::default()
    };
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    let fa = flatten_params(&[a.raw_decoder.net()]);
    let fb = flatten_params(&[b.raw_decoder.net()]);
    assert_eq!(fa, fb, "same seed must give bit-identical parameters");
    for (la, lb) in a.log.iter().zip(&b.log) {
        assert_eq!(la.objective.to_bits(), lb.objective.to_bits());
    }
}

#[test]
fn flipped_table_decoder_is_repaired_by_selection() {
    // A decoder that is perfect but inverted: selection must flip it back,
    // and the downstream policy then solves the task.
    let (env, data) = small_synthetic(4, 4, NoiseType::None, 0.0, 4000, 55);

    struct AntiOracle<'e>(&'e igl::env::SyntheticEnv);
    impl DecodesReward for AntiOracle<'_> {
        fn prob_r1(&self, _x: &[f64], _a: usize, y: &[f64]) -> f64 {
            if self.0.classify_feedback(y) == 1 {
                0.01
            } else {
                0.99
            }
        }
    }

    let (selected, behavior_return) = select_decoder(AntiOracle(&env), data.samples());
    assert!(selected.flipped, "behavior return {behavior_return} should exceed 0.5");

    let behavior = igl::env::UniformPolicy { num_actions: 4 };
    let policy_cfg = igl::bandit::PolicyConfig { epochs: 30, hidden: 16, ..Default::default() };
    let policy = igl::bandit::train_policy(&data, &selected, &behavior, &policy_cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pool: Vec<igl::env::Context> =
        (0..1000).map(|_| igl::env::IglEnv::draw_test_context(&env, &mut rng)).collect();
    let report = igl::bandit::evaluate(&policy, &pool, 0.0);
    assert!(report.accuracy > 0.95, "accuracy {}", report.accuracy);
}

#[test]
fn condprod_resampling_converges_to_exact_conditional() {
    // Empirical frequency of (class of y~, x, a, r) under the resampling
    // procedure vs the exact product P(Y|R_psi=r) x P(X,A,R_psi), on the
    // enumerable environment with a class-constant decoder.
    let (env, data) = small_synthetic(2, 2, NoiseType::Action, 0.4, 6400, 77);
    let samples: Vec<&Sample> = data.samples().iter().collect();

    struct TableDecoder<'e>(&'e igl::env::SyntheticEnv, Vec<f64>);
    impl DecodesReward for TableDecoder<'_> {
        fn prob_r1(&self, _x: &[f64], _a: usize, y: &[f64]) -> f64 {
            self.1[self.0.classify_feedback(y)]
        }
    }
    let table = vec![0.2, 0.7, 0.4, 0.6]; // one entry per feedback class
    let decoder = TableDecoder(&env, table.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let probs = decoder.probs(&samples);
    let aug = redraw(&probs, 5, &mut rng);
    let batches = build_product_batches(&aug, &mut rng).unwrap();

    // Exact reference from the enumerated joint extended by the decoder.
    let joint = env.enumerate_joint_uniform();
    let dec_table = igl::oracle::DecoderTable::feedback_dependent(table);
    let extended = joint.with_decoder(&dec_table).unwrap();
    let ny = env.num_feedback_classes();
    let (nx, na) = (2usize, 2usize);

    // P(yclass | r) and P(x, a, r) under the decoded-reward joint.
    let mut p_y_given_r = vec![vec![0.0; ny]; 2];
    let mut p_xar = vec![0.0; nx * na * 2];
    for x in 0..nx {
        for a in 0..na {
            for r in 0..2 {
                for y in 0..ny {
                    let v = extended.prob(x, a, r, y);
                    p_y_given_r[r][y] += v;
                    p_xar[(x * na + a) * 2 + r] += v;
                }
            }
        }
    }
    for r in 0..2 {
        let z: f64 = p_y_given_r[r].iter().sum();
        p_y_given_r[r].iter_mut().for_each(|v| *v /= z);
    }

    // Empirical frequency over the weighted enumerated rows: weight
    // psi_r(y_k)/K on (x_k, a_k, r, class(ytilde)).
    let k = samples.len() as f64;
    let mut freq = vec![0.0; nx * na * 2 * ny];
    for (idx, s) in samples.iter().enumerate() {
        let x = s.x.iter().position(|&v| v == 1.0).unwrap();
        for (r, ytilde) in [(1usize, &batches.ytilde_r1), (0, &batches.ytilde_r0)] {
            let w = if r == 1 { probs[idx] } else { 1.0 - probs[idx] } / k;
            let cls = env.classify_feedback(&samples[ytilde[idx]].y);
            freq[((x * na + s.a) * 2 + r) * ny + cls] += w;
        }
    }

    let mut tv = 0.0;
    for x in 0..nx {
        for a in 0..na {
            for r in 0..2 {
                for y in 0..ny {
                    let exact = p_xar[(x * na + a) * 2 + r] * p_y_given_r[r][y];
                    let emp = freq[((x * na + a) * 2 + r) * ny + y];
                    tv += 0.5 * (exact - emp).abs();
                }
            }
        }
    }
    assert!(tv < 0.05, "total variation {tv}");
}
