//! A small synthetic number-guessing environment whose joint distribution
//! is exactly enumerable.
//!
//! Contexts are one-hot coded integers; the hidden reward is `a == label`.
//! Feedback is a fixed prototype vector per feedback class plus small
//! Gaussian jitter, mirroring the image semantics: class `r` when clean,
//! the noise-channel class otherwise. Reserved prototypes past the digit
//! range stand in for the letter images of the independent channel.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    noisy_class, Context, EnvError, FeedbackClass, FeedbackSpec, IglEnv, NoiseType, StepOutcome,
};
use crate::oracle::DiscreteJoint;

const JITTER_SIGMA: f64 = 0.05;
/// Minimum pairwise prototype distance; keeps nearest-prototype
/// classification essentially exact under the jitter.
const MIN_PROTO_DISTANCE: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SyntheticEnv {
    num_contexts: usize,
    num_actions: usize,
    feedback_dim: usize,
    spec: FeedbackSpec,
    /// `num_actions + 2` rows: digit classes, then letters f and t.
    prototypes: Vec<Vec<f64>>,
}

impl SyntheticEnv {
    pub fn new(
        num_contexts: usize,
        num_actions: usize,
        feedback_dim: usize,
        spec: FeedbackSpec,
        seed: u64,
    ) -> Result<Self, EnvError> {
        for (name, v) in [
            ("num_contexts", num_contexts),
            ("num_actions", num_actions),
            ("feedback_dim", feedback_dim),
        ] {
            if v < 2 {
                return Err(EnvError::Config(format!("{name} must be >= 2, got {v}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f3759df);
        let count = num_actions + 2;
        'outer: for _attempt in 0..1000 {
            let prototypes: Vec<Vec<f64>> = (0..count)
                .map(|_| (0..feedback_dim).map(|_| rng.random::<f64>()).collect())
                .collect();
            for i in 0..count {
                for j in 0..i {
                    if l2(&prototypes[i], &prototypes[j]) < MIN_PROTO_DISTANCE {
                        continue 'outer;
                    }
                }
            }
            return Ok(SyntheticEnv { num_contexts, num_actions, feedback_dim, spec, prototypes });
        }
        Err(EnvError::Config(format!(
            "could not place {count} separated prototypes in {feedback_dim} dims; \
             increase feedback_dim"
        )))
    }

    /// Label that makes the reward attainable for every context.
    pub fn label_of(&self, context_id: usize) -> usize {
        context_id % self.num_actions
    }

    pub fn context(&self, context_id: usize) -> Context {
        let mut features = vec![0.0; self.num_contexts];
        features[context_id] = 1.0;
        Context { features, label: self.label_of(context_id) }
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    /// Digit classes plus the two reserved letter classes.
    pub fn num_feedback_classes(&self) -> usize {
        self.num_actions + 2
    }

    pub fn prototype(&self, class: usize) -> &[f64] {
        &self.prototypes[class]
    }

    fn class_index(&self, class: FeedbackClass) -> usize {
        match class {
            FeedbackClass::Digit(d) => d,
            FeedbackClass::Letter(r) => self.num_actions + r as usize,
        }
    }

    /// Nearest prototype; essentially exact under the jitter scale.
    pub fn classify_feedback(&self, y: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, proto) in self.prototypes.iter().enumerate() {
            let d = l2(proto, y);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Feedback class distribution for one `(label, action, reward)` cell.
    fn class_distribution(&self, label: usize, action: usize, reward: bool) -> Vec<f64> {
        let mut p = vec![0.0; self.num_feedback_classes()];
        let fire = self.spec.firing_probability();
        p[reward as usize] += 1.0 - fire;
        if fire > 0.0 {
            let idx = self
                .class_index(noisy_class(self.spec.noise, label, action, reward, self.num_actions));
            p[idx] += fire;
        }
        p
    }

    /// The exact joint `p(x, a, r, y_class)` under an explicit policy
    /// (`pi[x][a]`), with the feedback axis at class granularity.
    pub fn enumerate_joint(&self, pi: &[Vec<f64>]) -> Result<DiscreteJoint, EnvError> {
        if pi.len() != self.num_contexts || pi.iter().any(|row| row.len() != self.num_actions) {
            return Err(EnvError::Config(format!(
                "policy table must be {}x{}",
                self.num_contexts, self.num_actions
            )));
        }
        let (nx, na, ny) = (self.num_contexts, self.num_actions, self.num_feedback_classes());
        let mut p = vec![0.0; nx * na * 2 * ny];
        let d0 = 1.0 / nx as f64;
        for x in 0..nx {
            let label = self.label_of(x);
            for a in 0..na {
                let r = a == label;
                let class_p = self.class_distribution(label, a, r);
                for (y, &py) in class_p.iter().enumerate() {
                    p[((x * na + a) * 2 + r as usize) * ny + y] = d0 * pi[x][a] * py;
                }
            }
        }
        DiscreteJoint::new(nx, na, ny, p)
            .map_err(|e| EnvError::Config(format!("enumeration produced an invalid joint: {e}")))
    }

    /// [`SyntheticEnv::enumerate_joint`] under the uniform behavior policy.
    pub fn enumerate_joint_uniform(&self) -> DiscreteJoint {
        let pi = vec![vec![1.0 / self.num_actions as f64; self.num_actions]; self.num_contexts];
        self.enumerate_joint(&pi).expect("uniform policy table is always valid")
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl IglEnv for SyntheticEnv {
    fn context_dim(&self) -> usize {
        self.num_contexts
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn feedback_dim(&self) -> usize {
        self.feedback_dim
    }

    fn feedback_spec(&self) -> FeedbackSpec {
        self.spec
    }

    fn draw_context(&self, rng: &mut dyn RngCore) -> Context {
        self.context(rng.random_range(0..self.num_contexts))
    }

    fn draw_test_context(&self, rng: &mut dyn RngCore) -> Context {
        // The context space is tiny and fully enumerable; train and test
        // pools share the same uniform distribution.
        self.draw_context(rng)
    }

    fn step(
        &self,
        ctx: &Context,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<StepOutcome, EnvError> {
        if action >= self.num_actions {
            return Err(EnvError::ActionOutOfRange { action, num_actions: self.num_actions });
        }
        let reward = action == ctx.label;
        let class = if self.spec.noise != NoiseType::None
            && rng.random::<f64>() < self.spec.level
        {
            self.class_index(noisy_class(self.spec.noise, ctx.label, action, reward, self.num_actions))
        } else {
            reward as usize
        };
        let normal = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
        let feedback = self.prototypes[class]
            .iter()
            .map(|&v| v + normal.sample(rng))
            .collect();
        Ok(StepOutcome { reward, feedback })
    }
}
