use std::sync::atomic::{AtomicU64, Ordering};

use super::{
    add, channel_shuffle, concat_channels, conv2d, conv2d_backward, ensure_finite, mul, pixel_shuffle, pixel_unshuffle,
    relu, scale, sigmoid, split_channels, sum, upsample_bilinear, upsample_bilinear_backward, ConvSpec, Scalar, Shape,
    Tensor,
};
use crate::error::{Error, Result};
use crate::imaging::resize::{resize_tensor, resize_tensor_adjoint};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        spec: ConvSpec,
    },
    PixelShuffle(usize, usize),
    ChannelShuffle(usize, usize),
    UpsampleBilinear(usize),
    ResizeBicubic(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleBy {
        input: usize,
        gate: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Concat(usize, usize),
    Sum(usize),
    L1 {
        pred: usize,
        target: usize,
    },
    Mse {
        pred: usize,
        target: usize,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => std::iter::once(input)
                .chain(std::iter::once(weight))
                .chain(bias)
                .collect(),
            Op::PixelShuffle(a, _)
            | Op::ChannelShuffle(a, _)
            | Op::UpsampleBilinear(a)
            | Op::ResizeBicubic(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Sum(a) => vec![a],
            Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![a, b],
            Op::ScaleBy { input, gate } => vec![input, gate],
            Op::L1 { pred, target } | Op::Mse { pred, target } => vec![pred, target],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Summary of one recorded node, used for memory instrumentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub is_leaf: bool,
    pub inputs: Vec<usize>,
    pub shape: Shape,
}

/// Records operators as they execute so gradients can be replayed in
/// reverse.
///
/// A tape is single-owner. Values stay alive until the tape is dropped;
/// gradient buffers of intermediate nodes are released as soon as backward
/// has propagated them. Leaves created with `requires_grad` receive their
/// gradient in the tensor's grad slot.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Graph(format!("{v:?} is not recorded on this tape")));
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.idx(v)?].value)
    }

    /// Gradient of the last backward pass for a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Result<Option<&[T]>> {
        Ok(self.nodes[self.idx(v)?].value.grad())
    }

    pub fn take_grad(&mut self, v: Var) -> Result<Option<Vec<T>>> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].value.take_grad())
    }

    /// Structure of every node recorded so far, in execution order.
    pub fn records(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .map(|n| NodeRecord {
                is_leaf: matches!(n.op, Op::Leaf),
                inputs: n.op.inputs(),
                shape: n.value.shape(),
            })
            .collect()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let out = conv2d(
            &self.nodes[xi].value,
            &self.nodes[wi].value,
            bi.map(|i| &self.nodes[i].value),
            spec,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input: xi,
                weight: wi,
                bias: bi,
                spec: *spec,
            },
        ))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let out = pixel_shuffle(&self.nodes[i].value, r)?;
        Ok(self.push(out, Op::PixelShuffle(i, r)))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let out = channel_shuffle(&self.nodes[i].value, groups)?;
        Ok(self.push(out, Op::ChannelShuffle(i, groups)))
    }

    pub fn upsample_bilinear(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let out = upsample_bilinear(&self.nodes[i].value, h, w)?;
        Ok(self.push(out, Op::UpsampleBilinear(i)))
    }

    pub fn resize_bicubic(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let i = self.idx(x)?;
        let out = resize_tensor(&self.nodes[i].value, h, w)?;
        Ok(self.push(out, Op::ResizeBicubic(i)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let out = add(&self.nodes[ai].value, &self.nodes[bi].value)?;
        Ok(self.push(out, Op::Add(ai, bi)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let out = mul(&self.nodes[ai].value, &self.nodes[bi].value)?;
        Ok(self.push(out, Op::Mul(ai, bi)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let i = self.idx(x)?;
        let out = scale(&self.nodes[i].value, T::from_f64(factor))?;
        Ok(self.push(out, Op::Scale(i, factor)))
    }

    /// Multiplies `x` by the single value held in `gate`.
    pub fn scale_by(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (xi, gi) = (self.idx(x)?, self.idx(gate)?);
        let g = self.nodes[gi].value.item()?;
        let out = scale(&self.nodes[xi].value, g)?;
        Ok(self.push(out, Op::ScaleBy { input: xi, gate: gi }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = relu(&self.nodes[i].value)?;
        Ok(self.push(out, Op::Relu(i)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = sigmoid(&self.nodes[i].value)?;
        Ok(self.push(out, Op::Sigmoid(i)))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let out = concat_channels(&self.nodes[ai].value, &self.nodes[bi].value)?;
        Ok(self.push(out, Op::Concat(ai, bi)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let i = self.idx(x)?;
        let out = sum(&self.nodes[i].value)?;
        Ok(self.push(out, Op::Sum(i)))
    }

    /// Mean absolute error. The subgradient at exact ties is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (&self.nodes[pi].value, &self.nodes[ti].value);
        super::same_shape("l1_loss", p, t)?;
        let total = p
            .data()
            .iter()
            .zip(t.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        let out = super::checked("l1_loss", Tensor::scalar(total / T::from_f64(p.numel() as f64)))?;
        Ok(self.push(out, Op::L1 { pred: pi, target: ti }))
    }

    /// Mean squared error.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (pi, ti) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (&self.nodes[pi].value, &self.nodes[ti].value);
        super::same_shape("mse_loss", p, t)?;
        let total = p.data().iter().zip(t.data()).fold(T::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + d * d
        });
        let out = super::checked("mse_loss", Tensor::scalar(total / T::from_f64(p.numel() as f64)))?;
        Ok(self.push(out, Op::Mse { pred: pi, target: ti }))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every `requires_grad` leaf
    /// reachable from `loss` ends up with `d loss / d leaf` in its grad slot
    /// (zeros when unreachable); previous leaf gradients are overwritten.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be a scalar, got {}",
                self.nodes[li].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; li + 1];
        grads[li] = Some(vec![T::one()]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                ensure_finite("backward", &g)?;
                self.nodes[i].value.set_grad(g)?;
                continue;
            }
            let shape = self.nodes[i].value.shape();
            let g = Tensor::from_parts(shape, g);
            for (input, contribution) in self.node_backward(i, &g)? {
                accumulate(&mut grads[input], contribution.into_data());
            }
        }
        for node in &mut self.nodes {
            if matches!(node.op, Op::Leaf) && node.requires_grad && node.value.grad().is_none() {
                let zeros = vec![T::zero(); node.value.numel()];
                node.value.set_grad(zeros)?;
            }
        }
        Ok(())
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Gradient contributions of node `i` to its inputs.
    fn node_backward(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>> {
        let val = |k: usize| &self.nodes[k].value;
        let mut out = Vec::new();
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                ref spec,
            } => {
                let grads = conv2d_backward(val(input), val(weight), g, spec, self.wants(input))?;
                if let Some(gi) = grads.input {
                    out.push((input, gi));
                }
                if self.wants(weight) {
                    out.push((weight, grads.weight));
                }
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    if self.wants(b) {
                        out.push((b, gb));
                    }
                }
            }
            Op::PixelShuffle(a, r) => out.push((a, pixel_unshuffle(g, r)?)),
            Op::ChannelShuffle(a, groups) => out.push((a, channel_shuffle(g, val(a).shape().c / groups)?)),
            Op::UpsampleBilinear(a) => out.push((a, upsample_bilinear_backward(g, val(a).shape())?)),
            Op::ResizeBicubic(a) => out.push((a, resize_tensor_adjoint(g, val(a).shape())?)),
            Op::Add(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    out.push((a, mul(g, val(b))?));
                }
                if self.wants(b) {
                    out.push((b, mul(g, val(a))?));
                }
            }
            Op::Scale(a, factor) => out.push((a, scale(g, T::from_f64(factor))?)),
            Op::ScaleBy { input, gate } => {
                if self.wants(input) {
                    out.push((input, scale(g, val(gate).item()?)?));
                }
                if self.wants(gate) {
                    let dot = g
                        .data()
                        .iter()
                        .zip(val(input).data())
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                    out.push((gate, Tensor::from_parts(val(gate).shape(), vec![dot])));
                }
            }
            Op::Relu(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(val(a).data())
                    .map(|(&gv, &x)| if x > T::zero() { gv } else { T::zero() })
                    .collect();
                out.push((a, Tensor::from_parts(g.shape(), data)));
            }
            Op::Sigmoid(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                out.push((a, Tensor::from_parts(g.shape(), data)));
            }
            Op::Concat(a, b) => {
                let (ga, gb) = split_channels(g, val(a).shape().c)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Sum(a) => {
                let s = g.item()?;
                out.push((a, Tensor::full(val(a).shape(), s)));
            }
            Op::L1 { pred, target } => {
                let (p, t) = (val(pred), val(target));
                let k = g.item()? / T::from_f64(p.numel() as f64);
                let data: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                if self.wants(target) {
                    let neg = data.iter().map(|&v| -v).collect();
                    out.push((target, Tensor::from_parts(t.shape(), neg)));
                }
                out.push((pred, Tensor::from_parts(p.shape(), data)));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (val(pred), val(target));
                let k = g.item()? * T::from_f64(2.0 / p.numel() as f64);
                let data: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| k * (a - b)).collect();
                if self.wants(target) {
                    let neg = data.iter().map(|&v| -v).collect();
                    out.push((target, Tensor::from_parts(t.shape(), neg)));
                }
                out.push((pred, Tensor::from_parts(p.shape(), data)));
            }
        }
        out.retain(|(k, _)| self.wants(*k));
        Ok(out)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
        None => *slot = Some(g),
    }
}
