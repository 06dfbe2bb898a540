//! Training objectives as pure functions of network outputs.
//!
//! Expectations are minibatch means. Each loss has a plain value form and, where
//! training needs it, a `*_grad` form returning gradients w.r.t. its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the reconstruction loss in the generator objective.
    pub reconstruction: f64,
    /// Weight of the mean feature matching loss.
    pub feature_matching: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 1.0,
            feature_matching: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.reconstruction) || !ok(self.feature_matching) {
            return Err(Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// KL divergence of `N(mean, exp(logvar))` from `N(0, I)`, summed over latent
/// dimensions and averaged over rows.
pub fn kl_loss(mean: &Matrix, logvar: &Matrix) -> Result<f64> {
    Ok(kl_loss_grad(mean, logvar)?.0)
}

/// Returns `(value, d/dmean, d/dlogvar)`.
pub fn kl_loss_grad(mean: &Matrix, logvar: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    same_shape("kl_loss", mean, logvar)?;
    let b = mean.rows().max(1) as f64;
    let value = mean
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&mu, &lv)| mu * mu + lv.exp() - lv - 1.0)
        .sum::<f64>()
        * 0.5
        / b;
    let g_mean = mean.scale(1.0 / b);
    let g_logvar = logvar.map(|lv| 0.5 * (lv.exp() - 1.0) / b);
    Ok((value, g_mean, g_logvar))
}

#[derive(Debug, Clone)]
pub struct ReconLossGrad {
    pub value: f64,
    /// Gradient w.r.t. the synthesized features.
    pub grad_fake: Matrix,
    /// Gradient w.r.t. the discriminator features of the synthesized batch.
    pub grad_fd_fake: Matrix,
}

/// Feature-space plus discriminator-hidden-space squared error, batch averaged.
pub fn recon_loss(
    x_real: &Matrix,
    x_fake: &Matrix,
    fd_real: &Matrix,
    fd_fake: &Matrix,
) -> Result<f64> {
    Ok(recon_loss_grad(x_real, x_fake, fd_real, fd_fake)?.value)
}

pub fn recon_loss_grad(
    x_real: &Matrix,
    x_fake: &Matrix,
    fd_real: &Matrix,
    fd_fake: &Matrix,
) -> Result<ReconLossGrad> {
    same_shape("recon_loss", x_real, x_fake)?;
    same_shape("recon_loss", fd_real, fd_fake)?;
    if x_real.rows() != fd_real.rows() {
        return Err(Error::dim("recon_loss", x_real.rows(), fd_real.rows()));
    }
    let b = x_real.rows().max(1) as f64;
    let dx = x_fake.sub(x_real)?;
    let dfd = fd_fake.sub(fd_real)?;
    let value = (dx.squared_norm() + dfd.squared_norm()) / b;
    Ok(ReconLossGrad {
        value,
        grad_fake: dx.scale(2.0 / b),
        grad_fd_fake: dfd.scale(2.0 / b),
    })
}

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c == p)
}

fn mean_neg_log(probs: &[f64], real: bool) -> (f64, Vec<f64>) {
    let n = probs.len().max(1) as f64;
    let mut value = 0.0;
    let grad = probs
        .iter()
        .map(|&p| {
            let (c, inside) = clamp_prob(p);
            if real {
                value -= c.ln();
                if inside {
                    -1.0 / (c * n)
                } else {
                    0.0
                }
            } else {
                value -= (1.0 - c).ln();
                if inside {
                    1.0 / ((1.0 - c) * n)
                } else {
                    0.0
                }
            }
        })
        .collect();
    (value / n, grad)
}

/// Three-term discriminator cross-entropy: real batch against both synthetic batches.
pub fn disc_loss(p_real: &[f64], p_fake_e: &[f64], p_fake_r: &[f64]) -> f64 {
    disc_loss_grad(p_real, &[p_fake_e, p_fake_r]).value
}

#[derive(Debug, Clone)]
pub struct DiscLossGrad {
    pub value: f64,
    pub grad_real: Vec<f64>,
    pub grad_fakes: Vec<Vec<f64>>,
}

/// `-E[log p_real] - sum_k E[log(1 - p_fake_k)]`, each term averaged over its batch.
pub fn disc_loss_grad(p_real: &[f64], fakes: &[&[f64]]) -> DiscLossGrad {
    let (mut value, grad_real) = mean_neg_log(p_real, true);
    let mut grad_fakes = Vec::with_capacity(fakes.len());
    for fake in fakes {
        let (v, g) = mean_neg_log(fake, false);
        value += v;
        grad_fakes.push(g);
    }
    DiscLossGrad {
        value,
        grad_real,
        grad_fakes,
    }
}

#[derive(Debug, Clone)]
pub struct FeatureMatchingGrad {
    pub value: f64,
    /// One gradient per synthetic batch, w.r.t. that batch's hidden features.
    pub grad_fakes: Vec<Matrix>,
}

/// Squared distance between the real batch-mean hidden features and each synthetic one.
pub fn mean_feature_matching_loss(fd_real: &Matrix, fd_e: &Matrix, fd_r: &Matrix) -> Result<f64> {
    Ok(mean_feature_matching_grad(fd_real, &[fd_e, fd_r])?.value)
}

pub fn mean_feature_matching_grad(
    fd_real: &Matrix,
    fakes: &[&Matrix],
) -> Result<FeatureMatchingGrad> {
    if fd_real.rows() == 0 || fakes.iter().any(|f| f.rows() == 0) {
        return Err(Error::InvalidArgument(
            "feature matching needs non-empty batches".into(),
        ));
    }
    let real_mean = fd_real.col_means();
    let mut value = 0.0;
    let mut grad_fakes = Vec::with_capacity(fakes.len());
    for fake in fakes {
        if fake.cols() != fd_real.cols() {
            return Err(Error::dim("mean_feature_matching", fd_real.cols(), fake.cols()));
        }
        let fake_mean = fake.col_means();
        let diff: Vec<f64> = fake_mean.iter().zip(&real_mean).map(|(f, r)| f - r).collect();
        value += diff.iter().map(|d| d * d).sum::<f64>();
        let n = fake.rows() as f64;
        let row: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        let mut g = Matrix::zeros(fake.rows(), fake.cols());
        for r in 0..fake.rows() {
            g.row_mut(r).copy_from_slice(&row);
        }
        grad_fakes.push(g);
    }
    Ok(FeatureMatchingGrad { value, grad_fakes })
}

/// Weighted generator objective.
pub fn generator_loss(recon: f64, feature_matching: f64, weights: LossWeights) -> f64 {
    weights.reconstruction * recon + weights.feature_matching * feature_matching
}

/// Mean negative log-probability of the true class.
pub fn cross_entropy_loss(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(cross_entropy_grad(probs, labels)?.0)
}

/// Returns the loss and its gradient w.r.t. `probs`.
pub fn cross_entropy_grad(probs: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if probs.rows() != labels.len() {
        return Err(Error::dim("cross_entropy", probs.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {} classes",
            probs.cols()
        )));
    }
    let n = labels.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    for (r, &y) in labels.iter().enumerate() {
        let (c, inside) = clamp_prob(probs.get(r, y));
        value -= c.ln();
        if inside {
            grad.set(r, y, -1.0 / (c * n));
        }
    }
    Ok((value / n, grad))
}
