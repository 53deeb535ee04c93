//! Adam and AdamP.
//!
//! Both use the bias-corrected form
//! `p -= lr / (1 - b1^t) * m / (sqrt(v) / sqrt(1 - b2^t) + eps)`.
//! AdamP additionally removes the radial component of the update for
//! tensors whose gradient is nearly orthogonal to the weights (the
//! signature of scale invariance), per Heo et al., "AdamP: Slowing Down the
//! Slowdown for Momentum Optimizers on Scale-invariant Weights".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ensure_finite, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    #[default]
    Adamp,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "adamp" => Ok(OptimizerKind::Adamp),
            _ => Err(Error::Config(format!("unknown optimizer {s}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Cosine threshold numerator of the scale-invariance test.
pub const ADAMP_DELTA: f64 = 0.1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    fn prepare(&mut self, params: &[&mut Tensor<T>]) -> Result<()> {
        if self.m.is_empty() && self.step == 0 {
            self.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || params.iter().zip(&self.m).any(|(p, m)| p.numel() != m.len()) {
            return Err(Error::shape("optimizer", "state does not match the parameter list"));
        }
        Ok(())
    }
}

/// Moves every gradient out of its tensor, or fails without touching any.
fn take_grads<T: Scalar>(params: &mut [&mut Tensor<T>]) -> Result<Vec<Vec<T>>> {
    if params.iter().any(|p| p.grad().is_none()) {
        return Err(Error::Graph("parameter has no gradient".into()));
    }
    Ok(params
        .iter_mut()
        .map(|p| p.take_grad().expect("checked above"))
        .collect())
}

/// Updates the moments and returns the bias-corrected step direction.
fn moments<T: Scalar>(m: &mut [T], v: &mut [T], g: &[T], h: &AdamHyper, step: u64) -> Vec<T> {
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let one = T::one();
    let bc1 = T::from_f64(1.0 - h.beta1.powi(step as i32));
    let bc2 = T::from_f64(1.0 - h.beta2.powi(step as i32)).sqrt();
    let eps = T::from_f64(h.eps);
    m.iter_mut()
        .zip(v.iter_mut())
        .zip(g)
        .map(|((m, v), &g)| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            (*m / bc1) / (v.sqrt() / bc2 + eps)
        })
        .collect()
}

fn apply<T: Scalar>(p: &mut Tensor<T>, update: &[T], lr: f64) -> Result<()> {
    let lr = T::from_f64(lr);
    for (x, u) in p.data_mut().iter_mut().zip(update) {
        *x = *x - lr * *u;
    }
    ensure_finite("optimizer step", p.data())
}

pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], state: &mut OptimizerState<T>, h: &AdamHyper) -> Result<()> {
    adamp_step(params, &vec![false; params.len()], state, h)
}

/// AdamP; tensors flagged in `projected` are candidates for projection.
/// With no flags set this is exactly [`adam_step`].
pub fn adamp_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    projected: &[bool],
    state: &mut OptimizerState<T>,
    h: &AdamHyper,
) -> Result<()> {
    if projected.len() != params.len() {
        return Err(Error::shape(
            "adamp",
            "projection flags do not match the parameter list",
        ));
    }
    state.prepare(params)?;
    let grads = take_grads(params)?;
    state.step += 1;
    for (i, p) in params.iter_mut().enumerate() {
        let mut update = moments(&mut state.m[i], &mut state.v[i], &grads[i], h, state.step);
        if projected[i] {
            adamp_projection(p.data(), &grads[i], &mut update, p.shape().n, ADAMP_DELTA, h.eps);
        }
        apply(p, &update, h.lr)?;
    }
    Ok(())
}

fn cosine<T: Scalar>(a: &[T], b: &[T], eps: f64) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (dot / (na.sqrt() * nb.sqrt()).max(eps)).abs()
}

/// Removes from `update` its component along `weight`, independently for
/// each of `rows` equal-length rows.
pub fn project_radial<T: Scalar>(weight: &[T], update: &mut [T], rows: usize, eps: f64) {
    let len = weight.len() / rows;
    for (w, u) in weight.chunks(len).zip(update.chunks_mut(len)) {
        let norm = w.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt() + eps;
        let dot: f64 = w
            .iter()
            .zip(u.iter())
            .map(|(a, b)| a.as_f64() / norm * b.as_f64())
            .sum();
        for (x, a) in u.iter_mut().zip(w) {
            *x = *x - T::from_f64(a.as_f64() / norm * dot);
        }
    }
}

/// Tries the per-output-channel view, then the whole-tensor view; projects
/// with the first whose maximum cosine between gradient and weight falls
/// below `delta / sqrt(row length)`. Returns whether a projection happened.
pub fn adamp_projection<T: Scalar>(
    weight: &[T],
    grad: &[T],
    update: &mut [T],
    out_channels: usize,
    delta: f64,
    eps: f64,
) -> bool {
    for rows in [out_channels, 1] {
        let len = weight.len() / rows;
        let max_cos = weight
            .chunks(len)
            .zip(grad.chunks(len))
            .map(|(w, g)| cosine(g, w, eps))
            .fold(0.0, f64::max);
        if max_cos < delta / (len as f64).sqrt() {
            project_radial(weight, update, rows, eps);
            return true;
        }
    }
    false
}
