//! Single-patch overfitting run used as a training smoke test.

use serde::{Deserialize, Serialize};

use super::{train, EpochStats, NoReport, OptimizerKind, TrainConfig};
use crate::error::Result;
use crate::imaging::{make_pair, Dataset, Image};
use crate::model::{NetConfig, Network};

pub const SMOKE_ITERATIONS: usize = 200;
pub const SMOKE_PATCH: usize = 48;

/// Tiny network: one FFG of two MABs.
pub fn smoke_net_config() -> NetConfig {
    let mut cfg = NetConfig::maffsrn(2);
    cfg.n_ffg = 1;
    cfg.ffg.m = 2;
    cfg
}

/// One 48x48 patch per iteration from a single pair, no augmentation, Adam.
pub fn smoke_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr0: 2e-4,
        batch: 1,
        patch: SMOKE_PATCH,
        epochs: SMOKE_ITERATIONS,
        optimizer: OptimizerKind::Adam,
        seed,
        augment: false,
        ..TrainConfig::default()
    }
}

/// Deterministic 96x96 RGB test card with smooth shading, stripes and
/// hard edges.
pub fn smoke_image() -> Image {
    let n = 2 * SMOKE_PATCH;
    Image::from_fn(n, n, 3, |x, y, c| {
        let (fx, fy) = (x as f64, y as f64);
        let v = match c {
            0 => 128.0 + 90.0 * (fx / 3.1).sin() * (fy / 4.7).cos(),
            1 => {
                if (x / 12 + y / 16) % 2 == 0 {
                    200.0
                } else {
                    50.0
                }
            }
            _ => 255.0 * ((fx - 48.0).hypot(fy - 40.0) / 68.0).min(1.0),
        };
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("valid image")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub ratio: f64,
    pub curve: Vec<EpochStats>,
}

pub fn run_smoke(seed: u64) -> Result<SmokeReport> {
    let cfg = smoke_net_config();
    let pair = make_pair(&smoke_image(), cfg.scale)?;
    let data = Dataset::from_pairs(vec!["smoke".into()], vec![pair], cfg.scale);
    let mut net = Network::<f32>::build(&cfg, seed)?;
    let curve = train(&mut net, &data, &smoke_train_config(seed), &mut NoReport)?;
    let initial_loss = curve.first().map_or(f64::NAN, |s| s.loss);
    let final_loss = curve.last().map_or(f64::NAN, |s| s.loss);
    Ok(SmokeReport {
        initial_loss,
        final_loss,
        ratio: final_loss / initial_loss,
        curve,
    })
}
