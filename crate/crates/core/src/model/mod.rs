//! The full network: shallow feature extraction, a chain of FFGs, and a
//! two-branch sub-pixel reconstruction on top of a bicubic upsample.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{ffg_forward, FfgConfig, Fusion, MabConfig};
use crate::error::{Error, Result};
use crate::exec::{conv_layer, Eager, Executor, ParamKind, ParamSpec, ParamStore, ShapeExec, TapeExec};
use crate::imaging::Image;
use crate::tensor::{ConvSpec, Scalar, Shape, Tape, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};

/// Kernel sizes of the two reconstruction convolutions.
pub const RECON_KERNELS: [usize; 2] = [5, 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ConfigFile", try_from = "ConfigFile")]
pub struct NetConfig {
    pub scale: usize,
    pub n_ffg: usize,
    pub colors: usize,
    pub mab: MabConfig,
    pub ffg: FfgConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig::maffsrn(2)
    }
}

impl NetConfig {
    pub fn maffsrn(scale: usize) -> Self {
        NetConfig {
            scale,
            n_ffg: 4,
            colors: 3,
            mab: MabConfig::default(),
            ffg: FfgConfig::default(),
        }
    }

    pub fn maffsrn_l(scale: usize) -> Self {
        NetConfig {
            n_ffg: 8,
            ..NetConfig::maffsrn(scale)
        }
    }

    pub fn channels(&self) -> usize {
        self.mab.channels
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.scale) {
            return Err(Error::Config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.n_ffg == 0 {
            return Err(Error::Config("n_ffg must be at least 1".into()));
        }
        if self.colors == 0 {
            return Err(Error::Config("colors must be at least 1".into()));
        }
        self.mab.validate()?;
        self.ffg.validate(self.mab.channels)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: NetConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn gate_count(&self) -> usize {
        2 * self.n_ffg + 2
    }
}

/// Flat on-disk form of [`NetConfig`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    scale: usize,
    n_ffg: usize,
    m_mab: usize,
    channels: usize,
    reduction: usize,
    attn_stride: usize,
    dilations: Vec<usize>,
    branch_kernels: Vec<usize>,
    body_convs: usize,
    cea_enabled: bool,
    dw_kernel: usize,
    fusion: Fusion,
    channel_shuffle: bool,
    shuffle_groups: usize,
    lambda_init: f64,
    colors: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        NetConfig::default().into()
    }
}

impl From<NetConfig> for ConfigFile {
    fn from(c: NetConfig) -> Self {
        ConfigFile {
            scale: c.scale,
            n_ffg: c.n_ffg,
            m_mab: c.ffg.m,
            channels: c.mab.channels,
            reduction: c.mab.reduction,
            attn_stride: c.mab.attn_stride,
            dilations: c.mab.dilations,
            branch_kernels: c.mab.branch_kernels,
            body_convs: c.mab.body_convs,
            cea_enabled: c.mab.cea_enabled,
            dw_kernel: c.mab.dw_kernel,
            fusion: c.ffg.fusion,
            channel_shuffle: c.ffg.channel_shuffle,
            shuffle_groups: c.ffg.shuffle_groups,
            lambda_init: c.ffg.lambda_init,
            colors: c.colors,
        }
    }
}

impl TryFrom<ConfigFile> for NetConfig {
    type Error = Error;
    fn try_from(f: ConfigFile) -> Result<Self> {
        let cfg = NetConfig {
            scale: f.scale,
            n_ffg: f.n_ffg,
            colors: f.colors,
            mab: MabConfig {
                channels: f.channels,
                reduction: f.reduction,
                attn_stride: f.attn_stride,
                dilations: f.dilations,
                branch_kernels: f.branch_kernels,
                body_convs: f.body_convs,
                cea_enabled: f.cea_enabled,
                dw_kernel: f.dw_kernel,
            },
            ffg: FfgConfig {
                m: f.m_mab,
                fusion: f.fusion,
                channel_shuffle: f.channel_shuffle,
                shuffle_groups: f.shuffle_groups,
                lambda_init: f.lambda_init,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The network graph, written once for every executor.
pub fn forward_graph<T: Scalar, E: Executor<T>>(cfg: &NetConfig, exec: &mut E, lr: &E::Value) -> Result<E::Value> {
    let shape = exec.shape_of(lr);
    if shape.c != cfg.colors {
        return Err(Error::shape(
            "forward",
            format!("expected {} colour channels, got {}", cfg.colors, shape.c),
        ));
    }
    if shape.h < 3 || shape.w < 3 {
        return Err(Error::shape(
            "forward",
            format!("input {}x{} is below 3x3", shape.h, shape.w),
        ));
    }
    let (c, s) = (cfg.channels(), cfg.scale);

    let mut x = conv_layer(exec, "sfe", lr, &ConvSpec::new(cfg.colors, c, 3))?;
    for i in 0..cfg.n_ffg {
        x = ffg_forward(exec, &format!("ffg.{i}"), &x, &cfg.mab, &cfg.ffg)?;
    }

    let out_c = cfg.colors * s * s;
    let mut sr: Option<E::Value> = None;
    for (k, kernel) in RECON_KERNELS.into_iter().enumerate() {
        let y = conv_layer(exec, &format!("recon.k{kernel}"), &x, &ConvSpec::new(c, out_c, kernel))?;
        let gate = exec.param(&format!("lambda0.{}", k + 1), &ParamSpec::gate(cfg.ffg.lambda_init))?;
        let y = exec.scale_by(&y, &gate)?;
        let y = exec.pixel_shuffle(&y, s)?;
        sr = Some(match sr {
            None => y,
            Some(acc) => exec.add(&acc, &y)?,
        });
    }
    drop(x);
    let up = exec.resize_bicubic(lr, shape.h * s, shape.w * s)?;
    exec.add(&sr.expect("two reconstruction branches"), &up)
}

/// Parameter declarations in forward order.
pub fn param_specs(cfg: &NetConfig) -> Result<Vec<(String, ParamSpec)>> {
    cfg.validate()?;
    let mut ex = ShapeExec::new();
    let x = ex.input(Shape::new(1, cfg.colors, 3, 3));
    forward_graph::<f32, _>(cfg, &mut ex, &x)?;
    Ok(ex.into_parts().1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: NetConfig,
    params: ParamStore<T>,
}

impl<T: Scalar> Network<T> {
    /// Uniform(±√(6/fan_in)) conv weights, zero biases, gates at
    /// `lambda_init`. Samples are drawn in f64 in declaration order.
    pub fn build(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(cfg, |spec| match spec.kind {
            ParamKind::Weight => {
                let bound = (6.0 / spec.fan_in as f64).sqrt();
                Tensor::from_fn(spec.shape, |_, _, _, _| T::from_f64(rng.random_range(-bound..bound)))
            }
            ParamKind::Bias => Tensor::zeros(spec.shape),
            ParamKind::Gate => Tensor::full(spec.shape, T::from_f64(spec.init)),
        })
    }

    /// All convolution weights and biases zero; gates at `lambda_init`.
    /// Its output is the bicubic upsample of the input.
    pub fn zeroed(cfg: &NetConfig) -> Result<Self> {
        Self::init_with(cfg, |spec| match spec.kind {
            ParamKind::Gate => Tensor::full(spec.shape, T::from_f64(spec.init)),
            _ => Tensor::zeros(spec.shape),
        })
    }

    fn init_with(cfg: &NetConfig, mut init: impl FnMut(&ParamSpec) -> Tensor<T>) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, spec) in param_specs(cfg)? {
            let t = init(&spec);
            params.insert(name, spec.kind, t)?;
        }
        Ok(Network {
            config: cfg.clone(),
            params,
        })
    }

    /// Wraps an existing parameter set after checking it against the graph.
    pub fn from_params(cfg: &NetConfig, params: ParamStore<T>) -> Result<Self> {
        let specs = param_specs(cfg)?;
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "graph declares {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, spec) in &specs {
            let p = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if p.tensor.shape() != spec.shape || p.kind != spec.kind {
                return Err(Error::Config(format!("parameter {name} has the wrong shape or kind")));
            }
        }
        Ok(Network {
            config: cfg.clone(),
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.element_count()
    }

    pub fn gate_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Gate).count()
    }

    pub fn forward(&self, lr: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ex = Eager::new(&self.params);
        let x = ex.input(lr.clone());
        Ok(forward_graph(&self.config, &mut ex, &x)?.into_tensor())
    }

    /// Records the forward pass on `tape`. Returns the output and the
    /// parameter leaves by name.
    pub fn forward_tape(&self, tape: &mut Tape<T>, lr: Var, trainable: bool) -> Result<(Var, Vec<(String, Var)>)> {
        let mut ex = TapeExec::new(tape, &self.params, trainable);
        let y = forward_graph(&self.config, &mut ex, &lr)?;
        Ok((y, ex.into_param_vars()))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Super-resolves an 8-bit image.
    pub fn upscale(&self, img: &Image) -> Result<Image> {
        let out = self.forward(&img.to_tensor::<T>())?;
        Image::from_tensor(&out)
    }
}
