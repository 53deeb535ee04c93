//! Parameter, multi-add and activation-memory accounting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::blocks::counts;
use crate::error::{Error, Result};
use crate::exec::{ShapeExec, TraceNode, TraceOp};
use crate::model::{forward_graph, NetConfig, RECON_KERNELS};
use crate::tensor::Shape;

pub const CONVENTION: &str = "multi_adds: one multiply-accumulate per kernel tap of every convolution \
(kh*kw*cin/groups*cout*h_out*w_out), batch 1, LR input = HR/scale; biases, activations, elementwise ops, \
sigmoid, shuffles and interpolation are not counted. peak_activation_bytes: forward pass only, \
4 bytes per element, every tensor freed after its last use, parameters excluded.";

pub const BYTES_PER_ELEMENT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const HD720: Resolution = Resolution {
        width: 1280,
        height: 720,
    };

    pub fn new(width: usize, height: usize) -> Self {
        Resolution { width, height }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("expected WIDTHxHEIGHT, got {s:?}"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width = w.trim().parse().map_err(|_| bad())?;
        let height = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Resolution { width, height })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub params: u64,
    pub multi_adds: u64,
    pub output_shape: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub params: u64,
    pub multi_adds: u64,
    pub hr: Resolution,
    pub peak_activation_bytes: u64,
    pub convention: String,
    pub per_layer: Vec<LayerReport>,
}

/// Closed-form parameter count, gates included.
pub fn count_params(cfg: &NetConfig) -> Result<u64> {
    cfg.validate()?;
    let c = cfg.channels() as u64;
    let colors = cfg.colors as u64;
    let shallow = 9 * colors * c + c;
    let out = colors * (cfg.scale * cfg.scale) as u64;
    let recon: u64 = RECON_KERNELS.iter().map(|&k| (k * k) as u64 * c * out + out).sum();
    let ffgs = cfg.n_ffg as u64 * counts::ffg(&cfg.mab, &cfg.ffg);
    Ok(shallow + ffgs + recon + cfg.gate_count() as u64)
}

fn lr_shape(cfg: &NetConfig, hr: Resolution) -> Result<Shape> {
    let s = cfg.scale;
    if !hr.width.is_multiple_of(s) || !hr.height.is_multiple_of(s) {
        return Err(Error::Config(format!("HR size {hr} is not divisible by scale {s}")));
    }
    Ok(Shape::new(1, cfg.colors, hr.height / s, hr.width / s))
}

/// Runs the graph symbolically. Returns the trace and the output node.
pub fn trace(cfg: &NetConfig, input: Shape) -> Result<(Vec<TraceNode>, usize)> {
    cfg.validate()?;
    let mut ex = ShapeExec::new();
    let x = ex.input(input);
    let y = forward_graph::<f32, _>(cfg, &mut ex, &x)?;
    Ok((ex.into_parts().0, y))
}

fn layers(nodes: &[TraceNode]) -> Vec<LayerReport> {
    nodes
        .iter()
        .filter_map(|n| match &n.op {
            TraceOp::Conv2d(spec) => Some(LayerReport {
                name: n.name.clone().unwrap_or_default(),
                params: spec.param_count() as u64,
                multi_adds: (spec.macs_per_pixel() * n.shape.h * n.shape.w * n.shape.n) as u64,
                output_shape: n.shape.dims(),
            }),
            _ => None,
        })
        .collect()
}

pub fn count_multi_adds(cfg: &NetConfig, hr: Resolution) -> Result<u64> {
    let (nodes, _) = trace(cfg, lr_shape(cfg, hr)?)?;
    Ok(layers(&nodes).iter().map(|l| l.multi_adds).sum())
}

/// Maximum live activation bytes over a node sequence when each tensor is
/// allocated as it is produced and freed right after its last consumer.
/// `nodes` yields (element count, inputs, is_parameter); parameters never
/// count. The output node is kept alive to the end.
pub fn simulate_peak<'a, I>(nodes: I, output: usize) -> u64
where
    I: IntoIterator<Item = (usize, &'a [usize], bool)>,
{
    let nodes: Vec<_> = nodes.into_iter().collect();
    let mut last_use: Vec<Option<usize>> = vec![None; nodes.len()];
    for (k, (_, inputs, _)) in nodes.iter().enumerate() {
        for &i in inputs.iter() {
            last_use[i] = Some(k);
        }
    }
    let bytes = |i: usize| nodes[i].0 as u64 * BYTES_PER_ELEMENT;
    let (mut live, mut peak) = (0u64, 0u64);
    for (k, (_, inputs, is_param)) in nodes.iter().enumerate() {
        if *is_param {
            continue;
        }
        live += bytes(k);
        peak = peak.max(live);
        let mut freed: Vec<usize> = inputs
            .iter()
            .copied()
            .filter(|&i| !nodes[i].2 && i != output && last_use[i] == Some(k))
            .collect();
        freed.dedup();
        for i in freed {
            live -= bytes(i);
        }
        if last_use[k].is_none() && k != output {
            live -= bytes(k);
        }
    }
    peak
}

pub fn peak_activation_memory(cfg: &NetConfig, input: Shape) -> Result<u64> {
    let (nodes, out) = trace(cfg, input)?;
    Ok(simulate_peak(
        nodes
            .iter()
            .map(|n| (n.shape.numel(), n.inputs.as_slice(), n.is_param())),
        out,
    ))
}

pub fn analyze(cfg: &NetConfig, hr: Resolution) -> Result<ComplexityReport> {
    let input = lr_shape(cfg, hr)?;
    let (nodes, out) = trace(cfg, input)?;
    let per_layer = layers(&nodes);
    let peak = simulate_peak(
        nodes
            .iter()
            .map(|n| (n.shape.numel(), n.inputs.as_slice(), n.is_param())),
        out,
    );
    Ok(ComplexityReport {
        params: count_params(cfg)?,
        multi_adds: per_layer.iter().map(|l| l.multi_adds).sum(),
        hr,
        peak_activation_bytes: peak,
        convention: CONVENTION.to_string(),
        per_layer,
    })
}
