//! Command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use igl::bandit::{decoded_return, evaluate, train_policy};
use igl::cli::{
    build_env, oracle_checks, run, sweep, write_train_log, CliError, ExperimentConfig, SweepAxis,
};
use igl::env::{collect, Context, UniformPolicy};
use igl::trainer::{load_checkpoint, save_checkpoint, select_decoder, train};

#[derive(Parser)]
#[command(
    name = "igl",
    about = "Interaction-grounded learning: decode latent rewards from feedback, then train a policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every verb; each one overrides the matching config-file
/// key of the same name.
#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Flat key=value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: synthetic or mnist.
    #[arg(long)]
    env: Option<String>,
    /// Directory with the four uncompressed MNIST IDX files.
    #[arg(long)]
    mnist: Option<PathBuf>,
    /// Directory with EMNIST-Letters IDX files (letter images for noise I).
    #[arg(long)]
    emnist: Option<PathBuf>,
    /// Noise channel: none, I, A, C, or CA.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long = "noise-level")]
    noise_level: Option<f64>,
    /// Regularization weight.
    #[arg(long)]
    beta: Option<f64>,
    /// Divergence for the conditional term: kl or chi2.
    #[arg(long)]
    f1: Option<String>,
    /// Divergence for the regularizer term: kl or chi2.
    #[arg(long)]
    f2: Option<String>,
    /// Decoder input: y or xay.
    #[arg(long = "input-mode")]
    input_mode: Option<String>,
    /// KL conjugate form: nwj (exp(t-1)) or paper (exp(t)).
    #[arg(long = "dv-form")]
    dv_form: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Output directory (or file, for collect).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Offline dataset size per trial.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "test-pool")]
    test_pool: Option<usize>,
    /// Synthetic environment: number of contexts.
    #[arg(long)]
    contexts: Option<usize>,
    /// Synthetic environment: number of actions.
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long = "feedback-dim")]
    feedback_dim: Option<usize>,
    #[arg(long = "env-seed")]
    env_seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "n-augment")]
    n_augment: Option<usize>,
    #[arg(long = "decoder-hidden")]
    decoder_hidden: Option<usize>,
    #[arg(long = "critic-hidden")]
    critic_hidden: Option<usize>,
    /// Alternation phase length in epochs; 0 updates everything each epoch.
    #[arg(long)]
    phase: Option<usize>,
    /// EMA rate for the decoder shadow.
    #[arg(long)]
    ema: Option<f64>,
    /// Evaluate with EMA shadow parameters (true/false).
    #[arg(long = "ema-eval")]
    ema_eval: Option<bool>,
    /// Gradient-norm clip threshold.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long = "clamp-c")]
    clamp_c: Option<f64>,
    #[arg(long = "critic-bound")]
    critic_bound: Option<f64>,
    #[arg(long = "policy-epochs")]
    policy_epochs: Option<usize>,
    #[arg(long = "policy-lr")]
    policy_lr: Option<f64>,
    #[arg(long = "policy-hidden")]
    policy_hidden: Option<usize>,
}

impl CommonFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        push("env", self.env.clone());
        push("mnist", self.mnist.as_ref().map(|p| p.display().to_string()));
        push("emnist", self.emnist.as_ref().map(|p| p.display().to_string()));
        push("noise", self.noise.clone());
        push("noise-level", self.noise_level.map(|v| v.to_string()));
        push("beta", self.beta.map(|v| v.to_string()));
        push("f1", self.f1.clone());
        push("f2", self.f2.clone());
        push("input-mode", self.input_mode.clone());
        push("dv-form", self.dv_form.clone());
        push("trials", self.trials.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch", self.batch.map(|v| v.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        push("k", self.k.map(|v| v.to_string()));
        push("test-pool", self.test_pool.map(|v| v.to_string()));
        push("contexts", self.contexts.map(|v| v.to_string()));
        push("actions", self.actions.map(|v| v.to_string()));
        push("feedback-dim", self.feedback_dim.map(|v| v.to_string()));
        push("env-seed", self.env_seed.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("n-augment", self.n_augment.map(|v| v.to_string()));
        push("decoder-hidden", self.decoder_hidden.map(|v| v.to_string()));
        push("critic-hidden", self.critic_hidden.map(|v| v.to_string()));
        push("phase", self.phase.map(|v| v.to_string()));
        push("ema", self.ema.map(|v| v.to_string()));
        push("ema-eval", self.ema_eval.map(|v| v.to_string()));
        push("clip", self.clip.map(|v| v.to_string()));
        push("clamp-c", self.clamp_c.map(|v| v.to_string()));
        push("critic-bound", self.critic_bound.map(|v| v.to_string()));
        push("policy-epochs", self.policy_epochs.map(|v| v.to_string()));
        push("policy-lr", self.policy_lr.map(|v| v.to_string()));
        push("policy-hidden", self.policy_hidden.map(|v| v.to_string()));
        out
    }

    fn config(&self) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::build(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Collect an offline dataset and write it as CSV.
    Collect {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Train a reward decoder on a collected dataset.
    Train {
        #[command(flatten)]
        flags: CommonFlags,
        /// Dataset CSV produced by `collect`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a decoder checkpoint: bandit policy training plus held-out
    /// accuracy.
    Eval {
        #[command(flatten)]
        flags: CommonFlags,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV used for policy training and decoded returns.
        #[arg(long)]
        data: PathBuf,
    },
    /// Full pipeline: collect, train, select, policy, evaluate, per trial.
    Run {
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// One run per value along a config axis.
    Sweep {
        #[command(flatten)]
        flags: CommonFlags,
        /// One of: beta, noise-level, f-pair, input-mode.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values (f-pair entries look like kl-chi2).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Run the exact-oracle self-checks.
    OracleCheck,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode, CliError> {
    match Cli::parse().command {
        Command::Collect { flags } => {
            let cfg = flags.config()?;
            let env = build_env(&cfg)?;
            let behavior = UniformPolicy { num_actions: env.num_actions() };
            let dataset = collect(env.as_ref(), &behavior, cfg.k, cfg.seed)?;
            let out = if cfg.out.extension().is_some() {
                cfg.out.clone()
            } else {
                std::fs::create_dir_all(&cfg.out)
                    .map_err(|e| CliError::Io { path: cfg.out.clone(), source: e })?;
                cfg.out.join("dataset.csv")
            };
            dataset.save_csv(&out)?;
            println!("collected {} samples -> {}", dataset.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { flags, data } => {
            let cfg = flags.config()?;
            let dataset = igl::env::Dataset::load_csv(&data)?;
            std::fs::create_dir_all(&cfg.out)
                .map_err(|e| CliError::Io { path: cfg.out.clone(), source: e })?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = cfg.seed;
            let output = train(&dataset, &train_cfg)?;
            write_train_log(&cfg.out.join("train_log.csv"), &output.log)?;
            let (selected, behavior_return) = select_decoder(output.decoder, dataset.samples());
            let ckpt = cfg.out.join("checkpoint.bin");
            save_checkpoint(&ckpt, &selected, None)?;
            println!(
                "trained decoder: behavior decoded return {behavior_return:.4}, flipped: {} -> {}",
                selected.flipped,
                ckpt.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { flags, checkpoint, data } => {
            let cfg = flags.config()?;
            let dataset = igl::env::Dataset::load_csv(&data)?;
            let loaded = load_checkpoint(&checkpoint)?;
            let env = build_env(&cfg)?;
            let behavior = UniformPolicy { num_actions: env.num_actions() };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(u64::MAX);
            let pool: Vec<Context> =
                (0..cfg.test_pool).map(|_| env.draw_test_context(&mut rng)).collect();
            let mut policy_cfg = cfg.policy.clone();
            policy_cfg.seed = rng.random();
            let policy = train_policy(&dataset, &loaded.decoder, &behavior, &policy_cfg)?;
            let dec_return = decoded_return(&policy, &dataset, &loaded.decoder, &behavior);
            let report = evaluate(&policy, &pool, dec_return);
            println!(
                "accuracy {:.4} decoded_return {:.4} true_return {:.4}",
                report.accuracy, report.decoded_return, report.true_return
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { flags } => {
            let cfg = flags.config()?;
            let summary = run(&cfg)?;
            println!(
                "{}: mean accuracy {:.4} +- {:.4} (std err, {} trials, {} excluded)",
                summary.label,
                summary.mean_accuracy,
                summary.std_err,
                summary.trials.len(),
                summary.excluded
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { flags, axis, values } => {
            let cfg = flags.config()?;
            let axis = parse_axis(&axis, &values)?;
            let summaries = sweep(&cfg, &axis)?;
            for s in &summaries {
                println!(
                    "{}: mean accuracy {:.4} +- {:.4} (std err, {} excluded)",
                    s.label, s.mean_accuracy, s.std_err, s.excluded
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck => {
            let mut all_ok = true;
            for check in oracle_checks() {
                let status = if check.passed { "PASS" } else { "FAIL" };
                all_ok &= check.passed;
                println!("{status} {name}: {detail}", name = check.name, detail = check.detail);
            }
            Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn parse_axis(axis: &str, values: &[String]) -> Result<SweepAxis, CliError> {
    let bad = |e: String| CliError::Config(e);
    match axis {
        "beta" => {
            let v: Result<Vec<f64>, _> = values.iter().map(|s| s.parse()).collect();
            Ok(SweepAxis::Beta(v.map_err(|e| bad(format!("beta values: {e}")))?))
        }
        "noise-level" => {
            let v: Result<Vec<f64>, _> = values.iter().map(|s| s.parse()).collect();
            Ok(SweepAxis::NoiseLevel(v.map_err(|e| bad(format!("noise levels: {e}")))?))
        }
        "f-pair" => {
            let mut pairs = Vec::new();
            for s in values {
                let (a, b) = s
                    .split_once('-')
                    .ok_or_else(|| bad(format!("f-pair `{s}` should look like kl-chi2")))?;
                pairs.push((
                    a.parse().map_err(|e| bad(format!("{e}")))?,
                    b.parse().map_err(|e| bad(format!("{e}")))?,
                ));
            }
            Ok(SweepAxis::FPair(pairs))
        }
        "input-mode" => {
            let mut modes = Vec::new();
            for s in values {
                modes.push(s.parse().map_err(|e| bad(format!("{e}")))?);
            }
            Ok(SweepAxis::InputMode(modes))
        }
        other => Err(bad(format!(
            "unknown sweep axis `{other}` (expected beta, noise-level, f-pair, or input-mode)"
        ))),
    }
}
