//! Dense numerical substrate: matrices, layers, manual backprop and Adam.

mod activation;
mod adam;
mod layer;
mod matrix;

pub use activation::{
    activation_backward, apply_activation, sigmoid, Activation, DEFAULT_LEAKY_SLOPE,
};
pub use adam::{AdamConfig, AdamState};
pub use layer::{grad_blocks, DenseLayer, GradientTape, LayerCache, LayerGrad, Mlp};
pub use matrix::Matrix;

/// Uniform access to a network's trainable parameters as flat blocks.
///
/// Block order is stable and matches the order of the gradients each network's
/// `backward` produces, so the two can be zipped into an [`AdamState`] step.
pub trait Parameters {
    fn param_blocks(&self) -> Vec<&[f64]>;
    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|b| b.len()).sum()
    }
}

impl Parameters for Mlp {
    fn param_blocks(&self) -> Vec<&[f64]> {
        Mlp::param_blocks(self)
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        Mlp::param_blocks_mut(self)
    }
}

impl Parameters for DenseLayer {
    fn param_blocks(&self) -> Vec<&[f64]> {
        DenseLayer::param_blocks(self).to_vec()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        DenseLayer::param_blocks_mut(self).into_iter().collect()
    }
}
