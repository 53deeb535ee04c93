//! CEA, MAB and FFG building blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{conv_layer, Executor, ParamSpec};
use crate::tensor::{ConvSpec, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MabConfig {
    pub channels: usize,
    pub reduction: usize,
    pub attn_stride: usize,
    pub dilations: Vec<usize>,
    pub branch_kernels: Vec<usize>,
    pub body_convs: usize,
    pub cea_enabled: bool,
    pub dw_kernel: usize,
}

impl Default for MabConfig {
    fn default() -> Self {
        MabConfig {
            channels: 32,
            reduction: 4,
            attn_stride: 3,
            dilations: vec![1, 2],
            branch_kernels: vec![3, 3],
            body_convs: 2,
            cea_enabled: true,
            dw_kernel: 5,
        }
    }
}

impl MabConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return bad(format!(
                "channels ({}) must be a positive multiple of reduction ({})",
                self.channels, self.reduction
            ));
        }
        if self.attn_stride == 0 {
            return bad("attn_stride must be at least 1".into());
        }
        if self.dilations.is_empty() || self.dilations.len() != self.branch_kernels.len() {
            return bad(format!(
                "dilations ({}) and branch_kernels ({}) need the same non-zero length",
                self.dilations.len(),
                self.branch_kernels.len()
            ));
        }
        if self.dilations.contains(&0) {
            return bad("dilations must be at least 1".into());
        }
        if self.branch_kernels.iter().any(|&k| k % 2 == 0) {
            return bad("branch kernels must be odd".into());
        }
        if self.body_convs == 0 {
            return bad("body_convs must be at least 1".into());
        }
        if self.cea_enabled && self.dw_kernel.is_multiple_of(2) {
            return bad("dw_kernel must be odd".into());
        }
        Ok(())
    }

    pub fn reduced(&self) -> usize {
        self.channels / self.reduction
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Hff,
    Bff,
    Mbff,
}

impl std::str::FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "hff" => Ok(Fusion::Hff),
            "bff" => Ok(Fusion::Bff),
            "mbff" => Ok(Fusion::Mbff),
            _ => Err(Error::Config(format!("unknown fusion mode {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfgConfig {
    pub m: usize,
    pub fusion: Fusion,
    pub channel_shuffle: bool,
    pub shuffle_groups: usize,
    pub lambda_init: f64,
}

impl Default for FfgConfig {
    fn default() -> Self {
        FfgConfig {
            m: 4,
            fusion: Fusion::Mbff,
            channel_shuffle: true,
            shuffle_groups: 2,
            lambda_init: 0.5,
        }
    }
}

impl FfgConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.m == 0 {
            return bad("an FFG needs at least one MAB".into());
        }
        match self.fusion {
            Fusion::Mbff | Fusion::Bff if self.m < 2 => {
                return bad(format!("{:?} fusion needs m >= 2, got {}", self.fusion, self.m));
            }
            Fusion::Bff if !self.m.is_power_of_two() => {
                return bad(format!("BFF fusion needs m to be a power of two, got {}", self.m));
            }
            _ => {}
        }
        if self.channel_shuffle {
            let (width, groups) = match self.fusion {
                Fusion::Hff => (self.m * channels, self.m),
                _ => (2 * channels, self.shuffle_groups),
            };
            if groups == 0 || width % groups != 0 {
                return bad(format!("cannot shuffle {width} channels into {groups} groups"));
            }
        }
        if !self.lambda_init.is_finite() {
            return bad("lambda_init must be finite".into());
        }
        Ok(())
    }
}

/// `x + dw(pw(x))`.
pub fn cea_forward<T: Scalar, E: Executor<T>>(
    exec: &mut E,
    prefix: &str,
    x: &E::Value,
    cfg: &MabConfig,
) -> Result<E::Value> {
    let c = cfg.channels;
    let got = exec.shape_of(x).c;
    if got != c {
        return Err(Error::shape("cea", format!("expected {c} channels, got {got}")));
    }
    let pw = conv_layer(exec, &format!("{prefix}.pw"), x, &ConvSpec::new(c, c, 1))?;
    let dw = conv_layer(
        exec,
        &format!("{prefix}.dw"),
        &pw,
        &ConvSpec::new(c, c, cfg.dw_kernel).groups(c),
    )?;
    exec.add(x, &dw)
}

pub fn mab_forward<T: Scalar, E: Executor<T>>(
    exec: &mut E,
    prefix: &str,
    x: &E::Value,
    cfg: &MabConfig,
) -> Result<E::Value> {
    let shape = exec.shape_of(x);
    let c = cfg.channels;
    if shape.c != c {
        return Err(Error::shape("mab", format!("expected {c} channels, got {}", shape.c)));
    }
    if shape.h < 3 || shape.w < 3 {
        return Err(Error::shape(
            "mab",
            format!("spatial extent {}x{} is below 3x3", shape.h, shape.w),
        ));
    }

    let mut f = if cfg.cea_enabled {
        cea_forward(exec, &format!("{prefix}.cea"), x, cfg)?
    } else {
        x.clone()
    };
    for k in 0..cfg.body_convs {
        if k > 0 {
            f = exec.relu(&f)?;
        }
        f = conv_layer(exec, &format!("{prefix}.body.{k}"), &f, &ConvSpec::new(c, c, 3))?;
    }

    let cr = cfg.reduced();
    let attn = format!("{prefix}.attn");
    let a = conv_layer(exec, &format!("{attn}.reduce"), &f, &ConvSpec::new(c, cr, 1))?;
    let s = conv_layer(
        exec,
        &format!("{attn}.stride"),
        &a,
        &ConvSpec::new(cr, cr, 3).stride(cfg.attn_stride).padding(1),
    )?;
    let s = exec.relu(&s)?;
    let mut b: Option<E::Value> = None;
    for (k, (&kernel, &d)) in cfg.branch_kernels.iter().zip(&cfg.dilations).enumerate() {
        let y = conv_layer(
            exec,
            &format!("{attn}.branch.{k}"),
            &s,
            &ConvSpec::new(cr, cr, kernel).dilation(d),
        )?;
        b = Some(match b {
            None => y,
            Some(acc) => exec.add(&acc, &y)?,
        });
    }
    let b = exec.relu(&b.expect("at least one branch"))?;
    let up = exec.upsample_bilinear(&b, shape.h, shape.w)?;
    let u = exec.add(&up, &a)?;
    let logits = conv_layer(exec, &format!("{attn}.expand"), &u, &ConvSpec::new(cr, c, 1))?;
    let mask = exec.sigmoid(&logits)?;
    exec.mul(&f, &mask)
}

/// Concatenate, optionally shuffle, and reduce back to `c` channels.
fn fuse_pair<T: Scalar, E: Executor<T>>(
    exec: &mut E,
    name: &str,
    left: &E::Value,
    right: &E::Value,
    c: usize,
    cfg: &FfgConfig,
) -> Result<E::Value> {
    let mut cat = exec.concat_channels(left, right)?;
    if cfg.channel_shuffle {
        cat = exec.channel_shuffle(&cat, cfg.shuffle_groups)?;
    }
    conv_layer(exec, name, &cat, &ConvSpec::new(2 * c, c, 1))
}

pub fn ffg_forward<T: Scalar, E: Executor<T>>(
    exec: &mut E,
    prefix: &str,
    x: &E::Value,
    mab: &MabConfig,
    cfg: &FfgConfig,
) -> Result<E::Value> {
    cfg.validate(mab.channels)?;
    let c = mab.channels;

    let mut feats = Vec::with_capacity(cfg.m);
    for j in 0..cfg.m {
        let input = feats.last().unwrap_or(x);
        let f = mab_forward(exec, &format!("{prefix}.mab.{j}"), input, mab)?;
        feats.push(f);
    }

    let fused = match cfg.fusion {
        Fusion::Mbff => {
            let mut acc = feats[0].clone();
            for (k, f) in feats[1..].iter().enumerate() {
                acc = fuse_pair(exec, &format!("{prefix}.fuse.{k}"), &acc, f, c, cfg)?;
            }
            acc
        }
        Fusion::Bff => {
            let mut level = feats;
            let mut k = 0;
            while level.len() > 1 {
                let mut next = Vec::with_capacity(level.len() / 2);
                for pair in level.chunks(2) {
                    next.push(fuse_pair(
                        exec,
                        &format!("{prefix}.fuse.{k}"),
                        &pair[0],
                        &pair[1],
                        c,
                        cfg,
                    )?);
                    k += 1;
                }
                level = next;
            }
            level.pop().expect("non-empty tree")
        }
        Fusion::Hff => {
            let mut cat = feats[0].clone();
            for f in &feats[1..] {
                cat = exec.concat_channels(&cat, f)?;
            }
            if cfg.channel_shuffle {
                cat = exec.channel_shuffle(&cat, cfg.m)?;
            }
            conv_layer(exec, &format!("{prefix}.fuse.0"), &cat, &ConvSpec::new(cfg.m * c, c, 1))?
        }
    };

    let l1 = exec.param(&format!("{prefix}.lambda.1"), &ParamSpec::gate(cfg.lambda_init))?;
    let l2 = exec.param(&format!("{prefix}.lambda.2"), &ParamSpec::gate(cfg.lambda_init))?;
    let skip = exec.scale_by(x, &l1)?;
    let fused = exec.scale_by(&fused, &l2)?;
    exec.add(&skip, &fused)
}

/// Closed-form parameter counts, independent of the graph code.
pub mod counts {
    use super::{FfgConfig, Fusion, MabConfig};

    fn conv(cin: usize, cout: usize, k: usize, groups: usize) -> u64 {
        (k * k * (cin / groups) * cout + cout) as u64
    }

    pub fn cea(cfg: &MabConfig) -> u64 {
        let c = cfg.channels;
        conv(c, c, 1, 1) + conv(c, c, cfg.dw_kernel, c)
    }

    pub fn mab_body(cfg: &MabConfig) -> u64 {
        cfg.body_convs as u64 * conv(cfg.channels, cfg.channels, 3, 1)
    }

    pub fn mab_attention(cfg: &MabConfig) -> u64 {
        let (c, cr) = (cfg.channels, cfg.reduced());
        let branches: u64 = cfg.branch_kernels.iter().map(|&k| conv(cr, cr, k, 1)).sum();
        conv(c, cr, 1, 1) + conv(cr, cr, 3, 1) + branches + conv(cr, c, 1, 1)
    }

    pub fn mab(cfg: &MabConfig) -> u64 {
        let cea = if cfg.cea_enabled { cea(cfg) } else { 0 };
        cea + mab_body(cfg) + mab_attention(cfg)
    }

    pub fn fusion(c: usize, cfg: &FfgConfig) -> u64 {
        match cfg.fusion {
            Fusion::Hff => conv(cfg.m * c, c, 1, 1),
            // both a chain and a binary tree over m leaves have m - 1 joins
            Fusion::Mbff | Fusion::Bff => (cfg.m as u64 - 1) * conv(2 * c, c, 1, 1),
        }
    }

    /// Convolution parameters of one FFG, excluding its two gates.
    pub fn ffg(mab_cfg: &MabConfig, cfg: &FfgConfig) -> u64 {
        cfg.m as u64 * mab(mab_cfg) + fusion(mab_cfg.channels, cfg)
    }
}
