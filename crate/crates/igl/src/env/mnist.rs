//! The MNIST number-guessing environment.
//!
//! Contexts come from the train split, evaluation contexts from the test
//! split, and feedback images are drawn uniformly from the train pool of
//! the designated digit class. Letter feedback for the independent noise
//! channel uses EMNIST-Letters t/f images when a directory is supplied and
//! falls back to two reserved synthetic stripe patterns otherwise.

use std::path::Path;

use rand::{Rng, RngCore};

use super::{
    load_idx, noisy_class, Context, EnvError, FeedbackClass, FeedbackSpec, IglEnv, NoiseType,
    StepOutcome,
};

const DIGITS: usize = 10;
const EMNIST_T: u8 = 20;
const EMNIST_F: u8 = 6;

#[derive(Debug, Clone)]
pub struct MnistEnv {
    train_images: Vec<Vec<f64>>,
    train_labels: Vec<u8>,
    test_images: Vec<Vec<f64>>,
    test_labels: Vec<u8>,
    by_digit: Vec<Vec<usize>>,
    /// `[f images, t images]`, indexed by reward.
    letters: Option<[Vec<Vec<f64>>; 2]>,
    fallback_letters: [Vec<f64>; 2],
    spec: FeedbackSpec,
    dim: usize,
}

impl MnistEnv {
    /// Load train/test IDX files from `mnist_dir` (standard file names,
    /// uncompressed) and optionally EMNIST-Letters from `emnist_dir`.
    pub fn load(
        mnist_dir: &Path,
        emnist_dir: Option<&Path>,
        spec: FeedbackSpec,
    ) -> Result<Self, EnvError> {
        let (train_images, train_labels) = load_idx(
            &mnist_dir.join("train-images-idx3-ubyte"),
            &mnist_dir.join("train-labels-idx1-ubyte"),
        )?;
        let (test_images, test_labels) = load_idx(
            &mnist_dir.join("t10k-images-idx3-ubyte"),
            &mnist_dir.join("t10k-labels-idx1-ubyte"),
        )?;
        let letters = match emnist_dir {
            Some(dir) => Some(load_letters(dir)?),
            None => None,
        };
        Self::from_parts(train_images, train_labels, test_images, test_labels, letters, spec)
    }

    /// Build from already-loaded pools; the test fixtures use this.
    pub fn from_parts(
        train_images: Vec<Vec<f64>>,
        train_labels: Vec<u8>,
        test_images: Vec<Vec<f64>>,
        test_labels: Vec<u8>,
        letters: Option<[Vec<Vec<f64>>; 2]>,
        spec: FeedbackSpec,
    ) -> Result<Self, EnvError> {
        if train_images.is_empty() || test_images.is_empty() {
            return Err(EnvError::Config("empty image pool".into()));
        }
        let dim = train_images[0].len();
        let mut by_digit = vec![Vec::new(); DIGITS];
        for (i, &label) in train_labels.iter().enumerate() {
            if label as usize >= DIGITS {
                return Err(EnvError::Config(format!("train label {label} out of digit range")));
            }
            by_digit[label as usize].push(i);
        }
        if by_digit.iter().any(|pool| pool.is_empty()) {
            return Err(EnvError::Config("some digit class has no feedback images".into()));
        }
        if let Some(ls) = &letters {
            if ls[0].is_empty() || ls[1].is_empty() {
                return Err(EnvError::Config("letter pools must be non-empty".into()));
            }
        }
        let fallback_letters = [stripe_pattern(dim, false), stripe_pattern(dim, true)];
        Ok(MnistEnv {
            train_images,
            train_labels,
            test_images,
            test_labels,
            by_digit,
            letters,
            fallback_letters,
            spec,
            dim,
        })
    }

    pub fn train_len(&self) -> usize {
        self.train_images.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_images.len()
    }

    /// The full held-out evaluation pool.
    pub fn test_contexts(&self) -> Vec<Context> {
        self.test_images
            .iter()
            .zip(&self.test_labels)
            .map(|(img, &l)| Context { features: img.clone(), label: l as usize })
            .collect()
    }

    fn feedback_image(&self, class: FeedbackClass, rng: &mut dyn RngCore) -> Vec<f64> {
        match class {
            FeedbackClass::Digit(d) => {
                let pool = &self.by_digit[d];
                self.train_images[pool[rng.random_range(0..pool.len())]].clone()
            }
            FeedbackClass::Letter(r) => match &self.letters {
                Some(pools) => {
                    let pool = &pools[r as usize];
                    pool[rng.random_range(0..pool.len())].clone()
                }
                None => self.fallback_letters[r as usize].clone(),
            },
        }
    }
}

fn load_letters(dir: &Path) -> Result<[Vec<Vec<f64>>; 2], EnvError> {
    let (images, labels) = load_idx(
        &dir.join("emnist-letters-train-images-idx3-ubyte"),
        &dir.join("emnist-letters-train-labels-idx1-ubyte"),
    )?;
    let mut f_pool = Vec::new();
    let mut t_pool = Vec::new();
    for (img, &label) in images.iter().zip(&labels) {
        match label {
            EMNIST_F => f_pool.push(img.clone()),
            EMNIST_T => t_pool.push(img.clone()),
            _ => {}
        }
    }
    if f_pool.is_empty() || t_pool.is_empty() {
        return Err(EnvError::Config("EMNIST letters t/f classes missing".into()));
    }
    Ok([f_pool, t_pool])
}

/// Deterministic stand-in letter images: vertical stripes for f, horizontal
/// for t, on the usual 28x28 grid when the dimension allows.
fn stripe_pattern(dim: usize, horizontal: bool) -> Vec<f64> {
    let side = (dim as f64).sqrt().round() as usize;
    (0..dim)
        .map(|i| {
            let coord = if side * side == dim {
                if horizontal {
                    i / side
                } else {
                    i % side
                }
            } else {
                i
            };
            if coord % 4 < 2 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

impl IglEnv for MnistEnv {
    fn context_dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        DIGITS
    }

    fn feedback_dim(&self) -> usize {
        self.dim
    }

    fn feedback_spec(&self) -> FeedbackSpec {
        self.spec
    }

    fn draw_context(&self, rng: &mut dyn RngCore) -> Context {
        let i = rng.random_range(0..self.train_images.len());
        Context { features: self.train_images[i].clone(), label: self.train_labels[i] as usize }
    }

    fn draw_test_context(&self, rng: &mut dyn RngCore) -> Context {
        let i = rng.random_range(0..self.test_images.len());
        Context { features: self.test_images[i].clone(), label: self.test_labels[i] as usize }
    }

    fn step(
        &self,
        ctx: &Context,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome, EnvError> {
        if action >= DIGITS {
            return Err(EnvError::ActionOutOfRange { action, num_actions: DIGITS });
        }
        let reward = action == ctx.label;
        let class = if self.spec.noise != NoiseType::None
            && rng.random::<f64>() < self.spec.level
        {
            noisy_class(self.spec.noise, ctx.label, action, reward, DIGITS)
        } else {
            FeedbackClass::Digit(reward as usize)
        };
        Ok(StepOutcome { reward, feedback: self.feedback_image(class, rng) })
    }
}
