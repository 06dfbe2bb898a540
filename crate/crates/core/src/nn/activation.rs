use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Negative-side slope used by LeakyReLU unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Sigmoid,
    /// Applied per row.
    Softmax,
    Identity,
}

impl Activation {
    /// One-byte tag used by the model container.
    pub fn tag(self) -> u8 {
        match self {
            Activation::LeakyRelu => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softmax => 3,
            Activation::Identity => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Activation::LeakyRelu,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softmax,
            4 => Activation::Identity,
            other => {
                return Err(Error::InvalidArgument(format!("unknown activation tag {other}")))
            }
        })
    }

    /// True when He initialization suits the layer (rectifier family).
    pub fn is_rectifier(self) -> bool {
        matches!(self, Activation::LeakyRelu | Activation::Relu)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Applies `kind` to `x`. `leaky_slope` is only read for LeakyReLU.
pub fn apply_activation(kind: Activation, x: &Matrix, leaky_slope: f64) -> Matrix {
    match kind {
        Activation::LeakyRelu => x.map(|v| if v >= 0.0 { v } else { leaky_slope * v }),
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Identity => x.clone(),
        Activation::Softmax => {
            let mut out = x.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradient w.r.t. the pre-activation given the upstream gradient.
///
/// `pre` is the layer input to the activation and `out` its output.
pub fn activation_backward(
    kind: Activation,
    pre: &Matrix,
    out: &Matrix,
    grad_out: &Matrix,
    leaky_slope: f64,
) -> Result<Matrix> {
    match kind {
        Activation::LeakyRelu => {
            pre.zip_map(grad_out, |z, g| if z >= 0.0 { g } else { leaky_slope * g })
        }
        Activation::Relu => pre.zip_map(grad_out, |z, g| if z > 0.0 { g } else { 0.0 }),
        Activation::Sigmoid => out.zip_map(grad_out, |y, g| g * y * (1.0 - y)),
        Activation::Identity => Ok(grad_out.clone()),
        Activation::Softmax => {
            if out.shape() != grad_out.shape() {
                return Err(Error::dim(
                    "softmax backward",
                    format!("{:?}", out.shape()),
                    format!("{:?}", grad_out.shape()),
                ));
            }
            let mut dz = Matrix::zeros(out.rows(), out.cols());
            for r in 0..out.rows() {
                let y = out.row(r);
                let g = grad_out.row(r);
                let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
                for (d, (&yi, &gi)) in dz.row_mut(r).iter_mut().zip(y.iter().zip(g)) {
                    *d = yi * (gi - dot);
                }
            }
            Ok(dz)
        }
    }
}
