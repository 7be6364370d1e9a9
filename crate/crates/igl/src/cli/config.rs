//! Experiment configuration: defaults, flat `key=value` config files, and
//! flag-style overrides. Every file key has the same spelling as its CLI
//! flag, so a config file line and a command-line flag are interchangeable.

use std::fs;
use std::path::{Path, PathBuf};

use super::CliError;
use crate::bandit::PolicyConfig;
use crate::env::NoiseType;
use crate::trainer::{TrainConfig, UpdateMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvChoice {
    Synthetic,
    Mnist,
}

impl std::fmt::Display for EnvChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvChoice::Synthetic => write!(f, "synthetic"),
            EnvChoice::Mnist => write!(f, "mnist"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    pub mnist_dir: Option<PathBuf>,
    pub emnist_dir: Option<PathBuf>,
    pub noise: NoiseType,
    pub noise_level: f64,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Offline dataset size per trial.
    pub k: usize,
    /// Held-out evaluation pool size.
    pub test_pool: usize,
    // Synthetic environment dimensions.
    pub contexts: usize,
    pub actions: usize,
    pub feedback_dim: usize,
    pub env_seed: u64,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvChoice::Synthetic,
            mnist_dir: None,
            emnist_dir: None,
            noise: NoiseType::None,
            noise_level: 0.1,
            trials: 16,
            seed: 0,
            out: PathBuf::from("out"),
            k: 4000,
            test_pool: 1000,
            contexts: 4,
            actions: 4,
            feedback_dim: 6,
            env_seed: 7,
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Defaults, then the config file (when given), then the overrides, in
    /// that order.
    pub fn build(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = file {
            for (key, value) in ConfigMap::from_file(path)?.0 {
                cfg.apply(&key, &value)?;
            }
        }
        for (key, value) in overrides {
            cfg.apply(key, value)?;
        }
        if cfg.env == EnvChoice::Mnist && cfg.mnist_dir.is_none() {
            return Err(CliError::Config("mnist env needs --mnist <dir>".into()));
        }
        if cfg.trials == 0 {
            return Err(CliError::Config("trials must be >= 1".into()));
        }
        Ok(cfg)
    }

    /// Apply one `key=value` setting. Keys use the CLI flag spellings.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |e: String| CliError::Config(format!("key `{key}`: {e}"));
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| bad(e.to_string()));
        match key {
            "env" => {
                self.env = match value {
                    "synthetic" => EnvChoice::Synthetic,
                    "mnist" => EnvChoice::Mnist,
                    other => return Err(bad(format!("unknown env `{other}`"))),
                }
            }
            "mnist" => self.mnist_dir = Some(PathBuf::from(value)),
            "emnist" => self.emnist_dir = Some(PathBuf::from(value)),
            "noise" => self.noise = value.parse().map_err(|e| bad(format!("{e}")))?,
            "noise-level" => self.noise_level = parse_f64(value)?,
            "beta" => self.train.beta = parse_f64(value)?,
            "f1" => self.train.f1 = value.parse().map_err(|e| bad(format!("{e}")))?,
            "f2" => self.train.f2 = value.parse().map_err(|e| bad(format!("{e}")))?,
            "input-mode" => {
                self.train.input_mode = value.parse().map_err(|e| bad(format!("{e}")))?
            }
            "dv-form" => self.train.dv_form = value.parse().map_err(|e| bad(format!("{e}")))?,
            "trials" => self.trials = parse_usize(value)?,
            "seed" => self.seed = parse_u64(value)?,
            "epochs" => self.train.epochs = parse_usize(value)?,
            "batch" => self.train.batch_size = parse_usize(value)?,
            "out" => self.out = PathBuf::from(value),
            "k" => self.k = parse_usize(value)?,
            "test-pool" => self.test_pool = parse_usize(value)?,
            "contexts" => self.contexts = parse_usize(value)?,
            "actions" => self.actions = parse_usize(value)?,
            "feedback-dim" => self.feedback_dim = parse_usize(value)?,
            "env-seed" => self.env_seed = parse_u64(value)?,
            "lr" => self.train.learning_rate = parse_f64(value)?,
            "n-augment" => self.train.n_augment = parse_usize(value)?,
            "decoder-hidden" => self.train.decoder_hidden = parse_usize(value)?,
            "critic-hidden" => self.train.critic_hidden = parse_usize(value)?,
            "phase" => {
                let n = parse_usize(value)?;
                self.train.update_mode = if n == 0 {
                    UpdateMode::Simultaneous
                } else {
                    UpdateMode::Alternate { phase_epochs: n }
                };
            }
            "ema" => self.train.ema_rate = parse_f64(value)?,
            "ema-eval" => {
                self.train.eval_with_ema = value
                    .parse::<bool>()
                    .map_err(|e| bad(e.to_string()))?
            }
            "clip" => self.train.clip_norm = parse_f64(value)?,
            "clamp-c" => self.train.clamp_c = parse_f64(value)?,
            "critic-bound" => self.train.critic_bound = parse_f64(value)?,
            "policy-epochs" => self.policy.epochs = parse_usize(value)?,
            "policy-lr" => self.policy.learning_rate = parse_f64(value)?,
            "policy-hidden" => self.policy.hidden = parse_usize(value)?,
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Short label for metrics rows.
    pub fn label(&self) -> String {
        format!(
            "{}-{}-p{}-b{}-{}-{}-{}",
            self.env,
            self.noise,
            self.noise_level,
            self.train.beta,
            self.train.f1,
            self.train.f2,
            self.train.input_mode
        )
    }
}

/// Ordered key=value pairs from a flat config file. `#` starts a comment;
/// blank lines are skipped.
pub struct ConfigMap(pub Vec<(String, String)>);

impl ConfigMap {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Io { path: path.into(), source: e })?;
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{} line {}: expected key=value", path.display(), i + 1))
            })?;
            pairs.push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(ConfigMap(pairs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiv::FDivergence;
    use tempfile::tempdir;

    #[test]
    fn file_then_override_precedence() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "beta=5\nnoise=C\nnoise-level=0.2 # comment\n\n# full line comment\n")
            .unwrap();
        let cfg = ExperimentConfig::build(
            Some(&path),
            &[("beta".to_string(), "15".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.train.beta, 15.0);
        assert_eq!(cfg.noise, NoiseType::Context);
        assert_eq!(cfg.noise_level, 0.2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply("no-such-key", "1").is_err());
    }

    #[test]
    fn f_pair_and_phase_parse() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply("f1", "chi2").unwrap();
        cfg.apply("f2", "kl").unwrap();
        cfg.apply("phase", "0").unwrap();
        assert_eq!(cfg.train.f1, FDivergence::Chi2);
        assert_eq!(cfg.train.f2, FDivergence::Kl);
        assert_eq!(cfg.train.update_mode, UpdateMode::Simultaneous);
        cfg.apply("phase", "500").unwrap();
        assert_eq!(cfg.train.update_mode, UpdateMode::Alternate { phase_epochs: 500 });
    }

    #[test]
    fn mnist_requires_directory() {
        assert!(ExperimentConfig::build(
            None,
            &[("env".to_string(), "mnist".to_string())]
        )
        .is_err());
    }
}
