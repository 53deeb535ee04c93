use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{same_shape, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

impl std::str::FromStr for LossKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "l2" | "mse" => Ok(LossKind::L2),
            _ => Err(crate::error::Error::Config(format!("unknown loss {s}"))),
        }
    }
}

impl LossKind {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
        match self {
            LossKind::L1 => tape.l1_loss(pred, target),
            LossKind::L2 => tape.mse_loss(pred, target),
        }
    }

    pub fn eval<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        match self {
            LossKind::L1 => l1_loss(pred, target),
            LossKind::L2 => l2_loss(pred, target),
        }
    }
}

/// Mean absolute error, accumulated in f64.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape("l1_loss", pred, target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(total / pred.numel() as f64)
}

/// Mean squared error, accumulated in f64.
pub fn l2_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    same_shape("l2_loss", pred, target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(total / pred.numel() as f64)
}
