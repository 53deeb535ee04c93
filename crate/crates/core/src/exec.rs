//! Execution back-ends for the network graph.
//!
//! The blocks and the full network are written once against [`Executor`].
//! [`Eager`] computes values and drops intermediates as soon as they go out
//! of scope, [`TapeExec`] records onto an autodiff [`Tape`], and
//! [`ShapeExec`] only propagates shapes, collecting parameter declarations
//! and a per-node trace for complexity accounting.

use std::collections::HashMap;
use std::ops::Deref;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, ConvSpec, Scalar, Shape, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Convolution kernel.
    Weight,
    Bias,
    /// Trainable scalar multiplier.
    Gate,
}

/// Declaration of a parameter by the graph that uses it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSpec {
    pub shape: Shape,
    pub kind: ParamKind,
    /// Kernel fan-in for weights; gate initial value is carried in `init`.
    pub fan_in: usize,
    pub init: f64,
}

impl ParamSpec {
    pub fn weight(conv: &ConvSpec) -> Self {
        ParamSpec {
            shape: conv.weight_shape(),
            kind: ParamKind::Weight,
            fan_in: conv.fan_in(),
            init: 0.0,
        }
    }

    pub fn bias(conv: &ConvSpec) -> Self {
        ParamSpec {
            shape: conv.bias_shape(),
            kind: ParamKind::Bias,
            fan_in: 0,
            init: 0.0,
        }
    }

    pub fn gate(init: f64) -> Self {
        ParamSpec {
            shape: Shape::scalar(),
            kind: ParamKind::Gate,
            fan_in: 0,
            init,
        }
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Ordered, uniquely-named parameter set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param { name, kind, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Operator interface the network graph is written against.
pub trait Executor<T: Scalar> {
    type Value: Clone;

    fn param(&mut self, name: &str, spec: &ParamSpec) -> Result<Self::Value>;
    fn shape_of(&self, v: &Self::Value) -> Shape;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        spec: &ConvSpec,
    ) -> Result<Self::Value>;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;
    fn channel_shuffle(&mut self, x: &Self::Value, groups: usize) -> Result<Self::Value>;
    fn upsample_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
    fn resize_bicubic(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale_by(&mut self, x: &Self::Value, gate: &Self::Value) -> Result<Self::Value>;
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

/// Declares `{name}.weight` / `{name}.bias` and applies the convolution.
pub fn conv_layer<T: Scalar, E: Executor<T>>(
    exec: &mut E,
    name: &str,
    x: &E::Value,
    spec: &ConvSpec,
) -> Result<E::Value> {
    let w = exec.param(&format!("{name}.weight"), &ParamSpec::weight(spec))?;
    let b = if spec.has_bias {
        Some(exec.param(&format!("{name}.bias"), &ParamSpec::bias(spec))?)
    } else {
        None
    };
    exec.conv2d(x, &w, b.as_ref(), spec)
}

fn lookup<'a, T: Scalar>(params: &'a ParamStore<T>, name: &str, spec: &ParamSpec) -> Result<&'a Tensor<T>> {
    let p = params
        .get(name)
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
    if p.tensor.shape() != spec.shape {
        return Err(Error::shape(
            "param",
            format!("{name} is {} but the graph needs {}", p.tensor.shape(), spec.shape),
        ));
    }
    Ok(&p.tensor)
}

/// Value held by the eager executor: a borrowed parameter or a computed
/// tensor.
#[derive(Clone, Debug)]
pub enum EagerValue<'a, T> {
    Param(&'a Tensor<T>),
    Owned(Rc<Tensor<T>>),
}

impl<T> Deref for EagerValue<'_, T> {
    type Target = Tensor<T>;
    fn deref(&self) -> &Tensor<T> {
        match self {
            EagerValue::Param(t) => t,
            EagerValue::Owned(t) => t,
        }
    }
}

impl<T: Scalar> EagerValue<'_, T> {
    pub fn into_tensor(self) -> Tensor<T> {
        match self {
            EagerValue::Param(t) => t.clone(),
            EagerValue::Owned(t) => Rc::try_unwrap(t).unwrap_or_else(|rc| (*rc).clone()),
        }
    }
}

/// Direct evaluation against a parameter store.
pub struct Eager<'a, T> {
    params: &'a ParamStore<T>,
}

impl<'a, T: Scalar> Eager<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Eager { params }
    }

    pub fn input(&self, t: Tensor<T>) -> EagerValue<'a, T> {
        EagerValue::Owned(Rc::new(t))
    }
}

fn owned<'a, T>(t: Result<Tensor<T>>) -> Result<EagerValue<'a, T>> {
    t.map(|t| EagerValue::Owned(Rc::new(t)))
}

impl<'a, T: Scalar> Executor<T> for Eager<'a, T> {
    type Value = EagerValue<'a, T>;

    fn param(&mut self, name: &str, spec: &ParamSpec) -> Result<Self::Value> {
        lookup(self.params, name, spec).map(EagerValue::Param)
    }

    fn shape_of(&self, v: &Self::Value) -> Shape {
        v.shape()
    }

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        spec: &ConvSpec,
    ) -> Result<Self::Value> {
        owned(tensor::conv2d(x, w, b.map(|b| &**b), spec))
    }

    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value> {
        owned(tensor::pixel_shuffle(x, r))
    }

    fn channel_shuffle(&mut self, x: &Self::Value, groups: usize) -> Result<Self::Value> {
        owned(tensor::channel_shuffle(x, groups))
    }

    fn upsample_bilinear(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value> {
        owned(tensor::upsample_bilinear(x, h, w))
    }

    fn resize_bicubic(&mut self, x: &Self::Value, h: usize, w: usize) -> Result<Self::Value> {
        owned(crate::imaging::resize::resize_tensor(x, h, w))
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        owned(tensor::add(a, b))
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        owned(tensor::mul(a, b))
    }

    fn scale_by(&mut self, x: &Self::Value, gate: &Self::Value) -> Result<Self::Value> {
        owned(tensor::scale(x, gate.item()?))
    }

    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        owned(tensor::relu(x))
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value> {
        owned(tensor::sigmoid(x))
    }

    fn concat_channels(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        owned(tensor::concat_channels(a, b))
    }
}

/// Records the graph on a tape. Parameters become leaves; with
/// `trainable` set they require gradients.
pub struct TapeExec<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    trainable: bool,
    vars: Vec<(String, Var)>,
}

impl<'a, T: Scalar> TapeExec<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, trainable: bool) -> Self {
        TapeExec {
            tape,
            params,
            trainable,
            vars: Vec::new(),
        }
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }

    /// Parameter leaves created so far, in first-use order.
    pub fn into_param_vars(self) -> Vec<(String, Var)> {
        self.vars
    }
}

impl<T: Scalar> Executor<T> for TapeExec<'_, T> {
    type Value = Var;

    fn param(&mut self, name: &str, spec: &ParamSpec) -> Result<Var> {
        if let Some((_, v)) = self.vars.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = lookup(self.params, name, spec)?.clone();
        let v = self.tape.leaf(t, self.trainable);
        self.vars.push((name.to_string(), v));
        Ok(v)
    }

    fn shape_of(&self, v: &Var) -> Shape {
        self.tape
            .value(*v)
            .map(|t| t.shape())
            .expect("var recorded by this executor")
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, spec: &ConvSpec) -> Result<Var> {
        self.tape.conv2d(*x, *w, b.copied(), spec)
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        self.tape.pixel_shuffle(*x, r)
    }

    fn channel_shuffle(&mut self, x: &Var, groups: usize) -> Result<Var> {
        self.tape.channel_shuffle(*x, groups)
    }

    fn upsample_bilinear(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        self.tape.upsample_bilinear(*x, h, w)
    }

    fn resize_bicubic(&mut self, x: &Var, h: usize, w: usize) -> Result<Var> {
        self.tape.resize_bicubic(*x, h, w)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn scale_by(&mut self, x: &Var, gate: &Var) -> Result<Var> {
        self.tape.scale_by(*x, *gate)
    }

    fn relu(&mut self, x: &Var) -> Result<Var> {
        self.tape.relu(*x)
    }

    fn sigmoid(&mut self, x: &Var) -> Result<Var> {
        self.tape.sigmoid(*x)
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.concat_channels(*a, *b)
    }
}

/// Kind of a traced node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceOp {
    Input,
    Param(ParamKind),
    Conv2d(ConvSpec),
    PixelShuffle,
    ChannelShuffle,
    UpsampleBilinear,
    ResizeBicubic,
    Add,
    Mul,
    ScaleBy,
    Relu,
    Sigmoid,
    Concat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceNode {
    pub op: TraceOp,
    pub inputs: Vec<usize>,
    pub shape: Shape,
    /// Parameter name for parameter nodes, layer name for convolutions.
    pub name: Option<String>,
}

impl TraceNode {
    pub fn is_param(&self) -> bool {
        matches!(self.op, TraceOp::Param(_))
    }
}

/// Shape-only execution. Validates every operator's shape contract and
/// records the graph.
#[derive(Clone, Debug, Default)]
pub struct ShapeExec {
    nodes: Vec<TraceNode>,
    params: Vec<(String, ParamSpec)>,
}

impl ShapeExec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, shape: Shape) -> usize {
        self.push(TraceOp::Input, vec![], shape, None)
    }

    pub fn nodes(&self) -> &[TraceNode] {
        &self.nodes
    }

    pub fn params(&self) -> &[(String, ParamSpec)] {
        &self.params
    }

    pub fn into_parts(self) -> (Vec<TraceNode>, Vec<(String, ParamSpec)>) {
        (self.nodes, self.params)
    }

    fn push(&mut self, op: TraceOp, inputs: Vec<usize>, shape: Shape, name: Option<String>) -> usize {
        self.nodes.push(TraceNode {
            op,
            inputs,
            shape,
            name,
        });
        self.nodes.len() - 1
    }

    fn shape(&self, v: usize) -> Shape {
        self.nodes[v].shape
    }

    fn same(&self, op: &'static str, a: usize, b: usize) -> Result<Shape> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, format!("{sa} vs {sb}")));
        }
        Ok(sa)
    }
}

impl<T: Scalar> Executor<T> for ShapeExec {
    type Value = usize;

    fn param(&mut self, name: &str, spec: &ParamSpec) -> Result<usize> {
        if let Some(i) = self
            .nodes
            .iter()
            .position(|n| n.is_param() && n.name.as_deref() == Some(name))
        {
            return Ok(i);
        }
        self.params.push((name.to_string(), *spec));
        Ok(self.push(TraceOp::Param(spec.kind), vec![], spec.shape, Some(name.to_string())))
    }

    fn shape_of(&self, v: &usize) -> Shape {
        self.shape(*v)
    }

    fn conv2d(&mut self, x: &usize, w: &usize, b: Option<&usize>, spec: &ConvSpec) -> Result<usize> {
        let out = spec.output_shape(self.shape(*x))?;
        if self.shape(*w) != spec.weight_shape() {
            return Err(Error::shape("conv2d", "weight shape"));
        }
        let layer = self.nodes[*w]
            .name
            .as_deref()
            .map(|n| n.strip_suffix(".weight").unwrap_or(n).to_string());
        let inputs = std::iter::once(*x)
            .chain(std::iter::once(*w))
            .chain(b.copied())
            .collect();
        Ok(self.push(TraceOp::Conv2d(*spec), inputs, out, layer))
    }

    fn pixel_shuffle(&mut self, x: &usize, r: usize) -> Result<usize> {
        let s = self.shape(*x);
        if r == 0 || !s.c.is_multiple_of(r * r) {
            return Err(Error::shape("pixel_shuffle", format!("{} channels, r={r}", s.c)));
        }
        let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
        Ok(self.push(TraceOp::PixelShuffle, vec![*x], out, None))
    }

    fn channel_shuffle(&mut self, x: &usize, groups: usize) -> Result<usize> {
        let s = self.shape(*x);
        if groups == 0 || !s.c.is_multiple_of(groups) {
            return Err(Error::shape(
                "channel_shuffle",
                format!("{} channels, {groups} groups", s.c),
            ));
        }
        Ok(self.push(TraceOp::ChannelShuffle, vec![*x], s, None))
    }

    fn upsample_bilinear(&mut self, x: &usize, h: usize, w: usize) -> Result<usize> {
        let s = self.shape(*x);
        if h == 0 || w == 0 {
            return Err(Error::shape("upsample_bilinear", "zero target extent"));
        }
        Ok(self.push(TraceOp::UpsampleBilinear, vec![*x], Shape::new(s.n, s.c, h, w), None))
    }

    fn resize_bicubic(&mut self, x: &usize, h: usize, w: usize) -> Result<usize> {
        let s = self.shape(*x);
        if h == 0 || w == 0 {
            return Err(Error::shape("resize_bicubic", "zero target extent"));
        }
        Ok(self.push(TraceOp::ResizeBicubic, vec![*x], Shape::new(s.n, s.c, h, w), None))
    }

    fn add(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let s = self.same("add", *a, *b)?;
        Ok(self.push(TraceOp::Add, vec![*a, *b], s, None))
    }

    fn mul(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let s = self.same("mul", *a, *b)?;
        Ok(self.push(TraceOp::Mul, vec![*a, *b], s, None))
    }

    fn scale_by(&mut self, x: &usize, gate: &usize) -> Result<usize> {
        if self.shape(*gate).numel() != 1 {
            return Err(Error::shape("scale_by", "gate is not a scalar"));
        }
        let s = self.shape(*x);
        Ok(self.push(TraceOp::ScaleBy, vec![*x, *gate], s, None))
    }

    fn relu(&mut self, x: &usize) -> Result<usize> {
        let s = self.shape(*x);
        Ok(self.push(TraceOp::Relu, vec![*x], s, None))
    }

    fn sigmoid(&mut self, x: &usize) -> Result<usize> {
        let s = self.shape(*x);
        Ok(self.push(TraceOp::Sigmoid, vec![*x], s, None))
    }

    fn concat_channels(&mut self, a: &usize, b: &usize) -> Result<usize> {
        let (sa, sb) = (self.shape(*a), self.shape(*b));
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
        }
        let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
        Ok(self.push(TraceOp::Concat, vec![*a, *b], out, None))
    }
}
