//! Network-level gradient check against central finite differences, in f64.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::l2_loss;
use crate::error::{Error, Result};
use crate::exec::ParamKind;
use crate::model::{NetConfig, Network};
use crate::tensor::{Shape, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub eps: f64,
    pub seed: u64,
    /// LR input is 1 x colors x input_size x input_size.
    pub input_size: usize,
    pub zero_input: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            samples: 64,
            eps: 1e-6,
            seed: 0,
            input_size: 9,
            zero_input: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub eps: f64,
    pub gates_checked: usize,
    /// Every analytic gradient element of every parameter is finite.
    pub all_finite: bool,
    pub entries: Vec<GradcheckEntry>,
}

/// Denominator floor of the relative error, for gradients that vanish.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

pub fn gradcheck_network(cfg: &NetConfig, samples: usize, eps: f64, seed: u64) -> Result<GradcheckReport> {
    gradcheck_network_with(
        cfg,
        &GradcheckOptions {
            samples,
            eps,
            seed,
            ..GradcheckOptions::default()
        },
    )
}

/// Loss is MSE against a random target. Biases get small random values so
/// that no unit sits exactly at a ReLU kink. All gates are always sampled.
pub fn gradcheck_network_with(cfg: &NetConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.eps <= 0.0 || !opts.eps.is_finite() {
        return Err(Error::Config("eps must be positive".into()));
    }
    let mut net = Network::<f64>::build(cfg, opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    for p in net.params_mut().iter_mut() {
        if p.kind == ParamKind::Bias {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }

    let s = opts.input_size;
    let in_shape = Shape::new(1, cfg.colors, s, s);
    let input = if opts.zero_input {
        Tensor::zeros(in_shape)
    } else {
        Tensor::from_fn(in_shape, |_, _, _, _| rng.random_range(0.0..1.0))
    };
    let out_shape = Shape::new(1, cfg.colors, s * cfg.scale, s * cfg.scale);
    let target = Tensor::from_fn(out_shape, |_, _, _, _| rng.random_range(0.0..1.0));

    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let t = tape.leaf(target.clone(), false);
    let (y, vars) = net.forward_tape(&mut tape, x, true)?;
    let loss = tape.mse_loss(y, t)?;
    tape.backward(loss)?;
    let mut analytic = Vec::with_capacity(vars.len());
    for (name, v) in &vars {
        let g = tape
            .take_grad(*v)?
            .ok_or_else(|| Error::Graph(format!("no gradient for {name}")))?;
        analytic.push((name.clone(), g));
    }
    drop(tape);
    let all_finite = analytic.iter().all(|(_, g)| g.iter().all(|v| v.is_finite()));

    let mut picks: Vec<(usize, usize)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, p) in net.params().iter().enumerate() {
        if p.kind == ParamKind::Gate {
            picks.push((i, 0));
            seen.insert((i, 0));
        }
    }
    let gates_checked = picks.len();
    let total: usize = net.params().element_count();
    let wanted = opts.samples.max(gates_checked).min(total);
    while picks.len() < wanted {
        let i = rng.random_range(0..net.params().len());
        let n = net.params().iter().nth(i).expect("index in range").tensor.numel();
        let k = rng.random_range(0..n);
        if seen.insert((i, k)) {
            picks.push((i, k));
        }
    }

    let mut entries = Vec::with_capacity(picks.len());
    for (i, k) in picks {
        let name = net.params().iter().nth(i).expect("index in range").name.clone();
        let a = analytic
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g[k])
            .ok_or_else(|| Error::Graph(format!("{name} was not used by the graph")))?;
        let mut eval = |delta: f64| -> Result<f64> {
            let p = net.params_mut().get_mut(&name).expect("known parameter");
            let orig = p.tensor.data()[k];
            p.tensor.data_mut()[k] = orig + delta;
            let out = net.forward(&input);
            net.params_mut()
                .get_mut(&name)
                .expect("known parameter")
                .tensor
                .data_mut()[k] = orig;
            l2_loss(&out?, &target)
        };
        let n = (eval(opts.eps)? - eval(-opts.eps)?) / (2.0 * opts.eps);
        entries.push(GradcheckEntry {
            name,
            index: k,
            analytic: a,
            numeric: n,
            rel_error: rel_error(a, n),
        });
    }

    Ok(GradcheckReport {
        max_rel_error: entries.iter().map(|e| e.rel_error).fold(0.0, f64::max),
        eps: opts.eps,
        gates_checked,
        all_finite,
        entries,
    })
}
