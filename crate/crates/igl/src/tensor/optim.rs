//! First-order parameter updates: SGD, Adam, global-norm gradient clipping,
//! and exponential-moving-average shadows.

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

#[derive(Debug, Clone, Copy)]
enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer for one parameter group. Moment buffers are allocated on the
/// first step and must keep matching shapes afterwards.
#[derive(Debug)]
pub struct Optimizer {
    method: Method,
    lr: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer { method: Method::Sgd, lr, step_count: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            method: Method::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            lr,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Move parameters by `-lr * g` (descent) or `+lr * g` (ascent), with
    /// Adam preconditioning when configured.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], direction: Direction) {
        assert_eq!(params.len(), grads.len(), "param/grad group size mismatch");
        for (p, g) in params.iter().zip(grads) {
            assert_eq!(p.shape(), g.shape(), "param/grad shape mismatch");
        }
        let sign = match direction {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        };
        self.step_count += 1;
        match self.method {
            Method::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv += sign * self.lr * gv;
                    }
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
                    self.v = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
                }
                let bc1 = 1.0 - beta1.powi(self.step_count as i32);
                let bc2 = 1.0 - beta2.powi(self.step_count as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    assert_eq!(self.m[i].len(), g.numel(), "moment buffer shape drift");
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gv;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gv * gv;
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        *pv += sign * self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Scale all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Exponential moving average of a parameter group:
/// `shadow <- rate * shadow + (1 - rate) * param`.
#[derive(Debug, Clone)]
pub struct EmaShadow {
    rate: f64,
    shadow: Vec<Tensor>,
}

impl EmaShadow {
    pub fn new(params: &[&Tensor], rate: f64) -> Result<Self, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Config(format!("ema rate {rate} outside [0, 1)")));
        }
        Ok(EmaShadow {
            rate,
            shadow: params.iter().map(|p| (*p).clone()).collect(),
        })
    }

    pub fn update(&mut self, params: &[&Tensor]) {
        assert_eq!(params.len(), self.shadow.len(), "ema group size mismatch");
        for (s, p) in self.shadow.iter_mut().zip(params) {
            assert_eq!(s.shape(), p.shape(), "ema shape mismatch");
            for (sv, pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = self.rate * *sv + (1.0 - self.rate) * pv;
            }
        }
    }

    pub fn shadow(&self) -> &[Tensor] {
        &self.shadow
    }

    /// Copy the shadow values into a parameter group.
    pub fn write_to(&self, params: &mut [&mut Tensor]) {
        assert_eq!(params.len(), self.shadow.len(), "ema group size mismatch");
        for (p, s) in params.iter_mut().zip(&self.shadow) {
            p.data_mut().copy_from_slice(s.data());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_pair(p: f64, g: f64) -> (Tensor, Tensor) {
        (Tensor::scalar(p), Tensor::scalar(g))
    }

    #[test]
    fn sgd_descent_and_ascent() {
        let (mut p, g) = scalar_pair(1.0, 2.0);
        Optimizer::sgd(0.1).step(&mut [&mut p], &[g.clone()], Direction::Descent);
        assert!((p.item() - 0.8).abs() < 1e-15);

        let (mut p, _) = scalar_pair(1.0, 2.0);
        Optimizer::sgd(0.1).step(&mut [&mut p], &[g], Direction::Ascent);
        assert!((p.item() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // At t=1, mhat = g and vhat = g^2, so |update| = lr * |g| / (|g| + eps).
        for &g in &[1e-3, 1.0, 250.0] {
            let (mut p, grad) = scalar_pair(0.0, g);
            let mut opt = Optimizer::adam(0.05);
            opt.step(&mut [&mut p], &[grad], Direction::Descent);
            let expect = 0.05 * g / (g + 1e-8);
            assert!(
                (p.item() + expect).abs() < 1e-12,
                "grad {g}: step {} vs -{expect}",
                p.item()
            );
        }
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut p = Tensor::column(vec![0.3, -0.7]);
        let before = p.clone();
        let zeros = Tensor::zeros(vec![2, 1]);
        let mut opt = Optimizer::adam(0.1);
        opt.step(&mut [&mut p], &[zeros.clone()], Direction::Descent);
        opt.step(&mut [&mut p], &[zeros], Direction::Ascent);
        assert_eq!(p, before);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = vec![Tensor::column(vec![0.3, 0.4])];
        let norm = clip_grad_norm(&mut grads, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(grads[0].data(), &[0.3, 0.4]);
    }

    #[test]
    fn clip_rescales_to_unit_norm() {
        let mut grads = vec![Tensor::column(vec![3.0, 4.0])];
        clip_grad_norm(&mut grads, 1.0);
        assert!((grads[0].data()[0] - 0.6).abs() < 1e-15);
        assert!((grads[0].data()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ema_rate_zero_copies_params() {
        let p = Tensor::scalar(7.0);
        let mut ema = EmaShadow::new(&[&Tensor::scalar(0.0)], 0.0).unwrap();
        ema.update(&[&p]);
        assert_eq!(ema.shadow()[0].item(), 7.0);
    }

    #[test]
    fn ema_single_step_arithmetic() {
        let mut ema = EmaShadow::new(&[&Tensor::scalar(0.0)], 0.99).unwrap();
        ema.update(&[&Tensor::scalar(1.0)]);
        assert!((ema.shadow()[0].item() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically_to_constant_params() {
        let target = Tensor::scalar(2.0);
        let mut ema = EmaShadow::new(&[&Tensor::scalar(0.0)], 0.9).unwrap();
        let mut prev_gap = 2.0;
        for _ in 0..100 {
            ema.update(&[&target]);
            let gap = (ema.shadow()[0].item() - 2.0).abs();
            assert!((gap - 0.9 * prev_gap).abs() < 1e-12);
            prev_gap = gap;
        }
        assert!(prev_gap < 1e-4);
    }

    #[test]
    fn ema_rejects_rate_out_of_range() {
        assert!(EmaShadow::new(&[&Tensor::scalar(0.0)], 1.0).is_err());
        assert!(EmaShadow::new(&[&Tensor::scalar(0.0)], -0.1).is_err());
    }
}
