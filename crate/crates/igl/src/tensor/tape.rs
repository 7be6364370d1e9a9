//! Per-batch computation tape.
//!
//! Nodes are appended in topological order, so backward is a single reverse
//! sweep. Shape violations inside tape ops are programmer errors and panic;
//! the typed-error boundary is [`crate::tensor::Mlp::forward`], which
//! validates its input before touching the tape.

use super::{Tensor, TensorError};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    /// `x + b` with `b` broadcast across rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `scale * x + shift`, elementwise.
    Affine { x: NodeId, scale: f64 },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    /// Sum of all entries, yields a `[1]` tensor.
    Sum(NodeId),
    /// Sum over columns: `[n, m] -> [n, 1]`.
    RowSum(NodeId),
    /// Same data, different shape.
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that accumulates a gradient during backward.
    pub fn param(&mut self, value: &Tensor) -> NodeId {
        self.push(value.clone(), Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward pass, `None` for non-grad nodes.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad, grad: None });
        id
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape.len(), 2, "matmul lhs must be 2-D, got {:?}", va.shape);
        assert_eq!(vb.shape.len(), 2, "matmul rhs must be 2-D, got {:?}", vb.shape);
        let (n, k) = (va.shape[0], va.shape[1]);
        let (k2, m) = (vb.shape[0], vb.shape[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for p in 0..k {
                let aip = va.data[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &vb.data[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let needs = self.any_grad(&[a, b]);
        self.push(Tensor { shape: vec![n, m], data: out }, Op::Matmul(a, b), needs)
    }

    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (vx, vb) = (&self.nodes[x].value, &self.nodes[b].value);
        let (n, m) = (vx.rows(), vx.cols());
        assert_eq!(vb.numel(), m, "bias length {} vs {} columns", vb.numel(), m);
        let mut out = vx.data.clone();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] += vb.data[j];
            }
        }
        let needs = self.any_grad(&[x, b]);
        self.push(Tensor { shape: vx.shape.clone(), data: out }, Op::AddBias(x, b), needs)
    }

    fn binary_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape, vb.shape, "elementwise op on shapes {:?} vs {:?}", va.shape, vb.shape);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape.clone();
        let needs = self.any_grad(&[a, b]);
        self.push(Tensor { shape, data }, op, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary_elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let vx = &self.nodes[x].value;
        let data = vx.data.iter().map(|&v| scale * v + shift).collect();
        let shape = vx.shape.clone();
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor { shape, data }, Op::Affine { x, scale }, needs)
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let vx = &self.nodes[x].value;
        let data = vx.data.iter().map(|&v| f(v)).collect();
        let shape = vx.shape.clone();
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor { shape, data }, op, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.nodes[x].value.data.iter().sum();
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor::scalar(total), Op::Sum(x), needs)
    }

    /// Mean of all entries, yields a `[1]` tensor.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.numel().max(1);
        let s = self.sum(x);
        self.affine(s, 1.0 / n as f64, 0.0)
    }

    pub fn row_sum(&mut self, x: NodeId) -> NodeId {
        let vx = &self.nodes[x].value;
        let (n, m) = (vx.rows(), vx.cols());
        let mut out = vec![0.0; n];
        for i in 0..n {
            out[i] = vx.data[i * m..(i + 1) * m].iter().sum();
        }
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor { shape: vec![n, 1], data: out }, Op::RowSum(x), needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> NodeId {
        let vx = &self.nodes[x].value;
        let numel: usize = shape.iter().product();
        assert_eq!(numel, vx.numel(), "reshape {:?} -> {shape:?}", vx.shape);
        let data = vx.data.clone();
        let needs = self.nodes[x].needs_grad;
        self.push(Tensor { shape, data }, Op::Reshape(x), needs)
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// node with `needs_grad`; read them with [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let loss_shape = self.nodes[loss].value.shape.clone();
        if self.nodes[loss].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        for node in &mut self.nodes {
            node.grad = if node.needs_grad {
                Some(vec![0.0; node.value.numel()])
            } else {
                None
            };
        }
        if let Some(g) = self.nodes[loss].grad.as_mut() {
            g[0] = 1.0;
        } else {
            // Loss does not depend on any parameter; nothing to do.
            return Ok(());
        }

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let out_grad = match self.nodes[id].grad.clone() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (n, k) = {
                        let va = &self.nodes[a].value;
                        (va.shape[0], va.shape[1])
                    };
                    let m = self.nodes[b].value.shape[1];
                    if self.nodes[a].needs_grad {
                        // dA = dC @ B^T
                        let vb = self.nodes[b].value.data.clone();
                        let ga = self.nodes[a].grad.as_mut().unwrap();
                        for i in 0..n {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..m {
                                    s += out_grad[i * m + j] * vb[p * m + j];
                                }
                                ga[i * k + p] += s;
                            }
                        }
                    }
                    if self.nodes[b].needs_grad {
                        // dB = A^T @ dC
                        let va = self.nodes[a].value.data.clone();
                        let gb = self.nodes[b].grad.as_mut().unwrap();
                        for p in 0..k {
                            for i in 0..n {
                                let aip = va[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                for j in 0..m {
                                    gb[p * m + j] += aip * out_grad[i * m + j];
                                }
                            }
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    let (n, m) = {
                        let vx = &self.nodes[x].value;
                        (vx.rows(), vx.cols())
                    };
                    if self.nodes[x].needs_grad {
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for (g, og) in gx.iter_mut().zip(&out_grad) {
                            *g += og;
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let gb = self.nodes[b].grad.as_mut().unwrap();
                        for i in 0..n {
                            for j in 0..m {
                                gb[j] += out_grad[i * m + j];
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for side in [a, b] {
                        if self.nodes[side].needs_grad {
                            let g = self.nodes[side].grad.as_mut().unwrap();
                            for (gi, og) in g.iter_mut().zip(&out_grad) {
                                *gi += og;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[a].needs_grad {
                        let g = self.nodes[a].grad.as_mut().unwrap();
                        for (gi, og) in g.iter_mut().zip(&out_grad) {
                            *gi += og;
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let g = self.nodes[b].grad.as_mut().unwrap();
                        for (gi, og) in g.iter_mut().zip(&out_grad) {
                            *gi -= og;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.nodes[a].needs_grad {
                        let vb = self.nodes[b].value.data.clone();
                        let ga = self.nodes[a].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            ga[i] += out_grad[i] * vb[i];
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let va = self.nodes[a].value.data.clone();
                        let gb = self.nodes[b].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            gb[i] += out_grad[i] * va[i];
                        }
                    }
                }
                Op::Affine { x, scale } => {
                    if self.nodes[x].needs_grad {
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for (g, og) in gx.iter_mut().zip(&out_grad) {
                            *g += scale * og;
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.nodes[x].needs_grad {
                        let vin = self.nodes[x].value.data.clone();
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            if vin[i] > 0.0 {
                                gx[i] += out_grad[i];
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    if self.nodes[x].needs_grad {
                        let vout = self.nodes[id].value.data.clone();
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            gx[i] += out_grad[i] * vout[i] * (1.0 - vout[i]);
                        }
                    }
                }
                Op::Tanh(x) => {
                    if self.nodes[x].needs_grad {
                        let vout = self.nodes[id].value.data.clone();
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            gx[i] += out_grad[i] * (1.0 - vout[i] * vout[i]);
                        }
                    }
                }
                Op::Exp(x) => {
                    if self.nodes[x].needs_grad {
                        let vout = self.nodes[id].value.data.clone();
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for i in 0..out_grad.len() {
                            gx[i] += out_grad[i] * vout[i];
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.nodes[x].needs_grad {
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for g in gx.iter_mut() {
                            *g += out_grad[0];
                        }
                    }
                }
                Op::RowSum(x) => {
                    if self.nodes[x].needs_grad {
                        let m = self.nodes[x].value.cols();
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for (i, og) in out_grad.iter().enumerate() {
                            for g in gx[i * m..(i + 1) * m].iter_mut() {
                                *g += og;
                            }
                        }
                    }
                }
                Op::Reshape(x) => {
                    if self.nodes[x].needs_grad {
                        let gx = self.nodes[x].grad.as_mut().unwrap();
                        for (g, og) in gx.iter_mut().zip(&out_grad) {
                            *g += og;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
