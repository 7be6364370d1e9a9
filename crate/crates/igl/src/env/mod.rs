//! Interaction-grounded learning environments and offline data collection.
//!
//! An environment reveals a context, accepts an action, draws a hidden
//! binary reward, and returns only a feedback vector. The learner-facing
//! [`Sample`] carries `(x, a, y)`; the hidden rewards live in a separate
//! evaluation-only column of [`Dataset`].

mod idx;
mod mnist;
mod synthetic;

pub use idx::{load_idx, load_idx_images, load_idx_labels, write_idx_images, write_idx_labels};
pub use mnist::MnistEnv;
pub use synthetic::SyntheticEnv;

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad IDX data at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },

    #[error("invalid environment configuration: {0}")]
    Config(String),

    #[error("action {action} out of range for {num_actions} actions")]
    ActionOutOfRange { action: usize, num_actions: usize },

    #[error("dataset file {path} line {line}: {detail}")]
    DatasetFormat { path: PathBuf, line: usize, detail: String },
}

/// Which channel corrupts the feedback when the noise branch fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseType {
    #[default]
    None,
    /// Letter image t/f depending only on the reward.
    Independent,
    /// Digit `(a + 6r - 3) mod 10`.
    Action,
    /// Digit `(l_x + 6r - 3) mod 10`.
    Context,
    /// Digit `(l_x + a + 6r - 3) mod 10`.
    ContextAction,
}

impl fmt::Display for NoiseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseType::None => "none",
            NoiseType::Independent => "I",
            NoiseType::Action => "A",
            NoiseType::Context => "C",
            NoiseType::ContextAction => "CA",
        };
        write!(f, "{s}")
    }
}

impl FromStr for NoiseType {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "N" | "n" => Ok(NoiseType::None),
            "I" | "i" => Ok(NoiseType::Independent),
            "A" | "a" => Ok(NoiseType::Action),
            "C" | "c" => Ok(NoiseType::Context),
            "CA" | "ca" | "C-A" => Ok(NoiseType::ContextAction),
            other => Err(EnvError::Config(format!(
                "unknown noise type `{other}` (expected none, I, A, C, or CA)"
            ))),
        }
    }
}

/// Noise channel plus firing probability.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeedbackSpec {
    pub noise: NoiseType,
    pub level: f64,
}

impl FeedbackSpec {
    pub fn new(noise: NoiseType, level: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&level) {
            return Err(EnvError::Config(format!("noise level {level} outside [0, 1]")));
        }
        Ok(FeedbackSpec { noise, level })
    }

    pub const fn noiseless() -> Self {
        FeedbackSpec { noise: NoiseType::None, level: 0.0 }
    }

    /// Probability that the noisy branch fires.
    pub fn firing_probability(&self) -> f64 {
        match self.noise {
            NoiseType::None => 0.0,
            _ => self.level,
        }
    }
}

/// The feedback image class an interaction produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackClass {
    /// A digit in `0..num_digit_classes`.
    Digit(usize),
    /// Letter f (reward 0) or t (reward 1).
    Letter(bool),
}

/// Class of the noisy replacement feedback for one interaction.
pub(crate) fn noisy_class(
    noise: NoiseType,
    label: usize,
    action: usize,
    reward: bool,
    num_digit_classes: usize,
) -> FeedbackClass {
    let r = reward as i64;
    let modulus = num_digit_classes as i64;
    let digit = |v: i64| FeedbackClass::Digit(v.rem_euclid(modulus) as usize);
    match noise {
        NoiseType::None => FeedbackClass::Digit(reward as usize),
        NoiseType::Independent => FeedbackClass::Letter(reward),
        NoiseType::Action => digit(action as i64 + 6 * r - 3),
        NoiseType::Context => digit(label as i64 + 6 * r - 3),
        NoiseType::ContextAction => digit(label as i64 + action as i64 + 6 * r - 3),
    }
}

/// A revealed context: feature vector plus the class label that defines the
/// hidden reward. Policies must only look at `features`.
#[derive(Debug, Clone)]
pub struct Context {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Hidden reward and revealed feedback of one interaction.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: bool,
    pub feedback: Vec<f64>,
}

/// One learner-facing interaction tuple. The hidden reward is deliberately
/// not part of this type; see [`Dataset::eval_rewards`].
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: Vec<f64>,
    pub a: usize,
    pub y: Vec<f64>,
}

pub trait IglEnv {
    fn context_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn feedback_dim(&self) -> usize;
    fn feedback_spec(&self) -> FeedbackSpec;
    /// Draw a context from the training pool.
    fn draw_context(&self, rng: &mut dyn RngCore) -> Context;
    /// Draw a context from the held-out evaluation pool.
    fn draw_test_context(&self, rng: &mut dyn RngCore) -> Context;
    fn step(&self, ctx: &Context, action: usize, rng: &mut dyn RngCore)
        -> Result<StepOutcome, EnvError>;
}

/// A logging policy with known propensities.
pub trait BehaviorPolicy {
    fn sample(&self, ctx: &Context, rng: &mut dyn RngCore) -> usize;
    fn propensity(&self, ctx: &Context, action: usize) -> f64;
    fn tag(&self) -> &'static str;
}

/// Uniform over the action set; the logging policy used throughout.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub num_actions: usize,
}

impl BehaviorPolicy for UniformPolicy {
    fn sample(&self, _ctx: &Context, rng: &mut dyn RngCore) -> usize {
        rng.random_range(0..self.num_actions)
    }

    fn propensity(&self, _ctx: &Context, _action: usize) -> f64 {
        1.0 / self.num_actions as f64
    }

    fn tag(&self) -> &'static str {
        "uniform"
    }
}

/// Provenance of a collected dataset.
#[derive(Debug, Clone)]
pub struct CollectionMeta {
    pub policy: String,
    pub seed: u64,
    pub k: usize,
    pub spec: FeedbackSpec,
    pub context_dim: usize,
    pub feedback_dim: usize,
    pub num_actions: usize,
}

/// An offline dataset of interactions. Learner code consumes
/// [`Dataset::samples`]; the hidden rewards are reachable only through the
/// evaluation interface.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    rewards_eval: Vec<bool>,
    pub meta: CollectionMeta,
}

impl Dataset {
    /// Assemble a dataset from already-collected parts.
    pub fn from_parts(
        samples: Vec<Sample>,
        rewards_eval: Vec<bool>,
        meta: CollectionMeta,
    ) -> Result<Self, EnvError> {
        if samples.len() != rewards_eval.len() {
            return Err(EnvError::Config(format!(
                "{} samples but {} rewards",
                samples.len(),
                rewards_eval.len()
            )));
        }
        Ok(Dataset { samples, rewards_eval, meta })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Evaluation-only view of the hidden rewards, aligned with
    /// [`Dataset::samples`].
    pub fn eval_rewards(&self) -> &[bool] {
        &self.rewards_eval
    }

    /// One row per sample: flattened x, a, flattened y, hidden r, after a
    /// comment header recording dims and collection metadata.
    pub fn save_csv(&self, path: &Path) -> Result<(), EnvError> {
        let file = File::create(path).map_err(|e| EnvError::Io { path: path.into(), source: e })?;
        let mut w = BufWriter::new(file);
        let io_err = |e| EnvError::Io { path: path.into(), source: e };
        writeln!(w, "# igl-dataset v1").map_err(io_err)?;
        writeln!(
            w,
            "# policy={} seed={} k={} noise={} noise_level={} x_dim={} y_dim={} num_actions={}",
            self.meta.policy,
            self.meta.seed,
            self.meta.k,
            self.meta.spec.noise,
            self.meta.spec.level,
            self.meta.context_dim,
            self.meta.feedback_dim,
            self.meta.num_actions
        )
        .map_err(io_err)?;
        for (s, &r) in self.samples.iter().zip(&self.rewards_eval) {
            let mut row = String::new();
            for v in &s.x {
                row.push_str(&format!("{v},"));
            }
            row.push_str(&format!("{},", s.a));
            for v in &s.y {
                row.push_str(&format!("{v},"));
            }
            row.push_str(if r { "1" } else { "0" });
            writeln!(w, "{row}").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Dataset, EnvError> {
        let file = File::open(path).map_err(|e| EnvError::Io { path: path.into(), source: e })?;
        let reader = BufReader::new(file);
        let bad = |line: usize, detail: String| EnvError::DatasetFormat {
            path: path.into(),
            line,
            detail,
        };

        let mut meta: Option<CollectionMeta> = None;
        let mut samples = Vec::new();
        let mut rewards = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| EnvError::Io { path: path.into(), source: e })?;
            let lineno = idx + 1;
            if line.starts_with("# igl-dataset") || line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                meta = Some(parse_meta(rest).map_err(|d| bad(lineno, d))?);
                continue;
            }
            let meta = meta
                .as_ref()
                .ok_or_else(|| bad(lineno, "data row before metadata header".into()))?;
            let fields: Vec<&str> = line.split(',').collect();
            let expect = meta.context_dim + 1 + meta.feedback_dim + 1;
            if fields.len() != expect {
                return Err(bad(lineno, format!("{} fields, expected {expect}", fields.len())));
            }
            let parse =
                |s: &str| s.parse::<f64>().map_err(|e| bad(lineno, format!("bad number: {e}")));
            let mut x = Vec::with_capacity(meta.context_dim);
            for f in &fields[..meta.context_dim] {
                x.push(parse(f)?);
            }
            let a: usize = fields[meta.context_dim]
                .parse()
                .map_err(|e| bad(lineno, format!("bad action: {e}")))?;
            let mut y = Vec::with_capacity(meta.feedback_dim);
            for f in &fields[meta.context_dim + 1..meta.context_dim + 1 + meta.feedback_dim] {
                y.push(parse(f)?);
            }
            let r = match *fields.last().unwrap() {
                "0" => false,
                "1" => true,
                other => return Err(bad(lineno, format!("bad reward flag `{other}`"))),
            };
            samples.push(Sample { x, a, y });
            rewards.push(r);
        }
        let meta = meta.ok_or_else(|| bad(0, "missing metadata header".into()))?;
        Ok(Dataset { samples, rewards_eval: rewards, meta })
    }
}

fn parse_meta(line: &str) -> Result<CollectionMeta, String> {
    let mut policy = String::new();
    let mut seed = 0u64;
    let mut k = 0usize;
    let mut noise = NoiseType::None;
    let mut level = 0.0f64;
    let mut x_dim = None;
    let mut y_dim = None;
    let mut num_actions = None;
    for tok in line.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| format!("bad meta token `{tok}`"))?;
        match key {
            "policy" => policy = value.to_string(),
            "seed" => seed = value.parse().map_err(|e| format!("seed: {e}"))?,
            "k" => k = value.parse().map_err(|e| format!("k: {e}"))?,
            "noise" => noise = value.parse().map_err(|e| format!("{e}"))?,
            "noise_level" => level = value.parse().map_err(|e| format!("noise_level: {e}"))?,
            "x_dim" => x_dim = Some(value.parse().map_err(|e| format!("x_dim: {e}"))?),
            "y_dim" => y_dim = Some(value.parse().map_err(|e| format!("y_dim: {e}"))?),
            "num_actions" => {
                num_actions = Some(value.parse().map_err(|e| format!("num_actions: {e}"))?)
            }
            other => return Err(format!("unknown meta key `{other}`")),
        }
    }
    let spec = FeedbackSpec::new(noise, level).map_err(|e| e.to_string())?;
    Ok(CollectionMeta {
        policy,
        seed,
        k,
        spec,
        context_dim: x_dim.ok_or("missing x_dim")?,
        feedback_dim: y_dim.ok_or("missing y_dim")?,
        num_actions: num_actions.ok_or("missing num_actions")?,
    })
}

/// Collect `k` i.i.d. interactions under a behavior policy.
pub fn collect<E: IglEnv + ?Sized>(
    env: &E,
    policy: &dyn BehaviorPolicy,
    k: usize,
    seed: u64,
) -> Result<Dataset, EnvError> {
    if k == 0 {
        return Err(EnvError::Config("collect needs k >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(k);
    for _ in 0..k {
        let ctx = env.draw_context(&mut rng);
        let a = policy.sample(&ctx, &mut rng);
        let out = env.step(&ctx, a, &mut rng)?;
        samples.push(Sample { x: ctx.features, a, y: out.feedback });
        rewards.push(out.reward);
    }
    let meta = CollectionMeta {
        policy: policy.tag().to_string(),
        seed,
        k,
        spec: env.feedback_spec(),
        context_dim: env.context_dim(),
        feedback_dim: env.feedback_dim(),
        num_actions: env.num_actions(),
    };
    Ok(Dataset { samples, rewards_eval: rewards, meta })
}
