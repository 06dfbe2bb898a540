//! Fully connected layers, MLP stacks and the recording tape used for backprop.
//!
//! A layer computes `y = act(x W + b)` with `W` stored as `in_dim x out_dim`, so a
//! batch of row vectors multiplies straight through.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::activation::{activation_backward, apply_activation, Activation, DEFAULT_LEAKY_SLOPE};
use super::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub leaky_slope: f64,
}

/// Forward intermediates of one layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Matrix,
    pub pre: Matrix,
    pub output: Matrix,
}

/// Parameter gradients of one layer, shaped like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.in_dim(), layer.out_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn accumulate(&mut self, other: &LayerGrad) -> Result<()> {
        self.weights.add_assign(&other.weights)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&[f64]; 2] {
        [self.weights.data(), &self.bias]
    }
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
            activation,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// He-uniform weights for rectifiers, Xavier-uniform otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "layer dims must be positive, got {in_dim}x{out_dim}"
            )));
        }
        let limit = if activation.is_rectifier() {
            (6.0 / in_dim as f64).sqrt()
        } else {
            (6.0 / (in_dim + out_dim) as f64).sqrt()
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            weights: Matrix::from_vec(in_dim, out_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
            leaky_slope,
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim("dense forward", self.in_dim(), x.cols()));
        }
        let mut z = x.matmul(&self.weights)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let z = self.pre_activation(x)?;
        Ok(apply_activation(self.activation, &z, self.leaky_slope))
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<LayerCache> {
        let pre = self.pre_activation(x)?;
        let output = apply_activation(self.activation, &pre, self.leaky_slope);
        Ok(LayerCache {
            input: x.clone(),
            pre,
            output,
        })
    }

    /// Returns the parameter gradient and the gradient w.r.t. the layer input.
    pub fn backward(&self, cache: &LayerCache, grad_out: &Matrix) -> Result<(LayerGrad, Matrix)> {
        if grad_out.shape() != cache.output.shape() {
            return Err(Error::dim(
                "dense backward",
                format!("{:?}", cache.output.shape()),
                format!("{:?}", grad_out.shape()),
            ));
        }
        let dz = activation_backward(
            self.activation,
            &cache.pre,
            &cache.output,
            grad_out,
            self.leaky_slope,
        )?;
        let weights = cache.input.t_matmul(&dz)?;
        let bias = dz.col_sums();
        let grad_in = dz.matmul_t(&self.weights)?;
        Ok((LayerGrad { weights, bias }, grad_in))
    }

    pub fn param_blocks(&self) -> [&[f64]; 2] {
        [self.weights.data(), &self.bias]
    }

    pub fn param_blocks_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weights.data_mut(), &mut self.bias]
    }
}

/// Sequential stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Forward intermediates of an [`Mlp`] pass; one cache per layer.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    caches: Vec<LayerCache>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }

    pub fn clear(&mut self) {
        self.caches.clear();
    }

    /// Output of the layer at `index` as recorded during the forward pass.
    pub fn layer_output(&self, index: usize) -> Option<&Matrix> {
        self.caches.get(index).map(|c| &c.output)
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    "Mlp::new",
                    format!("layer {} in_dim {}", i + 1, pair[0].out_dim()),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Builds and initializes a stack with widths `in_dim -> widths[0] -> ...`.
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        spec: &[(usize, Activation)],
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(spec.len());
        let mut d = in_dim;
        for &(width, act) in spec {
            layers.push(DenseLayer::init(d, width, act, leaky_slope, rng)?);
            d = width;
        }
        Self::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Runs the stack; when `tape` is given it is cleared and then filled.
    pub fn forward(&self, x: &Matrix, tape: Option<&mut GradientTape>) -> Result<Matrix> {
        match tape {
            None => {
                let mut h = self.layers[0].forward(x)?;
                for layer in &self.layers[1..] {
                    h = layer.forward(&h)?;
                }
                Ok(h)
            }
            Some(tape) => {
                tape.caches.clear();
                let mut h = x.clone();
                for layer in &self.layers {
                    let cache = layer.forward_cached(&h)?;
                    h = cache.output.clone();
                    tape.caches.push(cache);
                }
                Ok(h)
            }
        }
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. the network output).
    ///
    /// Returns per-layer parameter gradients and the gradient w.r.t. the input.
    pub fn backward(
        &self,
        tape: &GradientTape,
        loss_grad: &Matrix,
    ) -> Result<(Vec<LayerGrad>, Matrix)> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::Usage(format!(
                "backward needs a tape recorded by forward on this network ({} layers, tape has {})",
                self.layers.len(),
                tape.caches.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = loss_grad.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (lg, gin) = layer.backward(cache, &g)?;
            grads.push(lg);
            g = gin;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_blocks()).collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.param_blocks_mut()).collect()
    }
}

/// Flattens layer gradients into the block order used by `param_blocks`.
pub fn grad_blocks(grads: &[LayerGrad]) -> Vec<&[f64]> {
    grads.iter().flat_map(|g| g.blocks()).collect()
}
