//! Encoder, visual-semantic fusion, generator, discriminator and classifier nets.
//!
//! Every network owns plain [`DenseLayer`]s and exposes a cached forward pass plus
//! a `backward` that returns parameter gradients in [`Parameters`] block order and
//! the gradient with respect to the network input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    Activation, DenseLayer, GradientTape, LayerCache, LayerGrad, Matrix, Mlp, Parameters,
    DEFAULT_LEAKY_SLOPE,
};

/// Feature widths: visual `d_v`, semantic `d_s`, tactile `d_x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub d_v: usize,
    pub d_s: usize,
    pub d_x: usize,
}

/// Which auxiliary modalities condition the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Multimodal,
    VisualOnly,
    SemanticOnly,
}

impl Modality {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "multimodal" | "vs" | "both" => Some(Modality::Multimodal),
            "visual" | "visual_only" | "v" => Some(Modality::VisualOnly),
            "semantic" | "semantic_only" | "s" => Some(Modality::SemanticOnly),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Multimodal => "multimodal",
            Modality::VisualOnly => "visual",
            Modality::SemanticOnly => "semantic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: FeatureDims,
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub fusion_hidden: [usize; 2],
    pub generator_hidden: usize,
    pub discriminator_hidden: usize,
    pub leaky_slope: f64,
    pub use_encoder: bool,
    pub use_fusion: bool,
    pub modality: Modality,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-size networks: 2048-d ResNet features and 24 attributes.
    pub fn paper() -> Self {
        Self {
            dims: FeatureDims {
                d_v: 2048,
                d_s: 24,
                d_x: 2048,
            },
            latent_dim: 2048,
            encoder_hidden: 2048,
            fusion_hidden: [512, 256],
            generator_hidden: 2048,
            discriminator_hidden: 512,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            use_encoder: true,
            use_fusion: true,
            modality: Modality::Multimodal,
        }
    }

    /// Small networks for the synthetic benchmark (d_v=32, d_s=16, d_x=24).
    pub fn desk() -> Self {
        Self {
            dims: FeatureDims {
                d_v: 32,
                d_s: 16,
                d_x: 24,
            },
            latent_dim: 16,
            encoder_hidden: 64,
            fusion_hidden: [32, 16],
            generator_hidden: 64,
            discriminator_hidden: 32,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            use_encoder: true,
            use_fusion: true,
            modality: Modality::Multimodal,
        }
    }

    /// Width of the conditioning vector `f` handed to fusion and generator.
    pub fn condition_dim(&self) -> usize {
        match self.modality {
            Modality::Multimodal => self.dims.d_v + self.dims.d_s,
            Modality::VisualOnly => self.dims.d_v,
            Modality::SemanticOnly => self.dims.d_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let FeatureDims { d_v, d_s, d_x } = self.dims;
        let widths = [
            ("d_v", d_v),
            ("d_s", d_s),
            ("d_x", d_x),
            ("latent_dim", self.latent_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("fusion_hidden[0]", self.fusion_hidden[0]),
            ("fusion_hidden[1]", self.fusion_hidden[1]),
            ("generator_hidden", self.generator_hidden),
            ("discriminator_hidden", self.discriminator_hidden),
        ];
        if let Some((name, _)) = widths.iter().find(|(_, w)| *w == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::InvalidConfig("leaky_slope must be finite and >= 0".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Encoder

/// Trunk plus two heads reading the trunk output: mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    pub trunk: DenseLayer,
    pub mean_head: DenseLayer,
    pub logvar_head: DenseLayer,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    trunk: LayerCache,
    mean: LayerCache,
    logvar: LayerCache,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentParams {
    pub mean: Matrix,
    pub logvar: Matrix,
}

impl EncoderNet {
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: usize,
        latent_dim: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let act = Activation::LeakyRelu;
        Ok(Self {
            trunk: DenseLayer::init(in_dim, hidden, act, leaky_slope, rng)?,
            mean_head: DenseLayer::init(hidden, latent_dim, act, leaky_slope, rng)?,
            logvar_head: DenseLayer::init(hidden, latent_dim, act, leaky_slope, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mean_head.out_dim()
    }

    /// Encodes the concatenation `[x ; v ; s]`.
    pub fn encode(&self, x: &Matrix, v: &Matrix, s: &Matrix) -> Result<LatentParams> {
        let input = Matrix::hstack(&[x, v, s])?;
        Ok(self.forward(&input)?.0)
    }

    pub fn forward(&self, input: &Matrix) -> Result<(LatentParams, EncoderCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim("encode", self.in_dim(), input.cols()));
        }
        let trunk = self.trunk.forward_cached(input)?;
        let mean = self.mean_head.forward_cached(&trunk.output)?;
        let logvar = self.logvar_head.forward_cached(&trunk.output)?;
        let out = LatentParams {
            mean: mean.output.clone(),
            logvar: logvar.output.clone(),
        };
        Ok((out, EncoderCache { trunk, mean, logvar }))
    }

    pub fn backward(
        &self,
        cache: &EncoderCache,
        grad_mean: &Matrix,
        grad_logvar: &Matrix,
    ) -> Result<(Vec<LayerGrad>, Matrix)> {
        let (g_mean, h_from_mean) = self.mean_head.backward(&cache.mean, grad_mean)?;
        let (g_logvar, h_from_logvar) = self.logvar_head.backward(&cache.logvar, grad_logvar)?;
        let grad_h = h_from_mean.add(&h_from_logvar)?;
        let (g_trunk, grad_in) = self.trunk.backward(&cache.trunk, &grad_h)?;
        Ok((vec![g_trunk, g_mean, g_logvar], grad_in))
    }

    pub fn layers(&self) -> [&DenseLayer; 3] {
        [&self.trunk, &self.mean_head, &self.logvar_head]
    }
}

impl Parameters for EncoderNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers().into_iter().flat_map(|l| l.param_blocks()).collect()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(6);
        out.extend(self.trunk.param_blocks_mut());
        out.extend(self.mean_head.param_blocks_mut());
        out.extend(self.logvar_head.param_blocks_mut());
        out
    }
}

/// `z = mean + exp(logvar / 2) * eps` with `eps` drawn from `rng`.
///
/// Returns the sample and the noise used so callers can backpropagate.
pub fn reparameterize<R: Rng + ?Sized>(
    mean: &Matrix,
    logvar: &Matrix,
    rng: &mut R,
) -> Result<(Matrix, Matrix)> {
    let eps = Matrix::randn(mean.rows(), mean.cols(), rng);
    let z = reparameterize_with(mean, logvar, &eps)?;
    Ok((z, eps))
}

pub fn reparameterize_with(mean: &Matrix, logvar: &Matrix, eps: &Matrix) -> Result<Matrix> {
    let std = logvar.map(|lv| (0.5 * lv).exp());
    mean.add(&std.hadamard(eps)?)
}

// ---------------------------------------------------------------------------
// Visual-semantic fusion

/// Elementwise sigmoid gate over the conditioning vector: `m = f * gate(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub gate: Mlp,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    f: Matrix,
    gate_out: Matrix,
    tape: GradientTape,
}

impl FusionCache {
    pub fn gate(&self) -> &Matrix {
        &self.gate_out
    }
}

impl FusionNet {
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: [usize; 2],
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let gate = Mlp::init(
            in_dim,
            &[
                (hidden[0], Activation::Relu),
                (hidden[1], Activation::Relu),
                (in_dim, Activation::Sigmoid),
            ],
            leaky_slope,
            rng,
        )?;
        Ok(Self { gate })
    }

    pub fn in_dim(&self) -> usize {
        self.gate.in_dim()
    }

    /// Gates the concatenation `[v ; s]`.
    pub fn fuse(&self, v: &Matrix, s: &Matrix) -> Result<Matrix> {
        let f = Matrix::hstack(&[v, s])?;
        Ok(self.forward(&f)?.0)
    }

    pub fn forward(&self, f: &Matrix) -> Result<(Matrix, FusionCache)> {
        if f.cols() != self.in_dim() {
            return Err(Error::dim("fuse", self.in_dim(), f.cols()));
        }
        let mut tape = GradientTape::new();
        let gate_out = self.gate.forward(f, Some(&mut tape))?;
        let m = f.hadamard(&gate_out)?;
        Ok((
            m,
            FusionCache {
                f: f.clone(),
                gate_out,
                tape,
            },
        ))
    }

    /// Returns gate parameter gradients and the gradient w.r.t. `f`.
    pub fn backward(&self, cache: &FusionCache, grad_m: &Matrix) -> Result<(Vec<LayerGrad>, Matrix)> {
        let grad_gate = grad_m.hadamard(&cache.f)?;
        let (grads, through_gate) = self.gate.backward(&cache.tape, &grad_gate)?;
        let direct = grad_m.hadamard(&cache.gate_out)?;
        Ok((grads, direct.add(&through_gate)?))
    }
}

impl Parameters for FusionNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.gate.param_blocks()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.gate.param_blocks_mut()
    }
}

// ---------------------------------------------------------------------------
// Generator

/// Maps `[z ; m]` to a tactile feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub mlp: Mlp,
    pub latent_dim: usize,
}

impl GeneratorNet {
    pub fn init<R: Rng + ?Sized>(
        latent_dim: usize,
        condition_dim: usize,
        hidden: usize,
        d_x: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::init(
            latent_dim + condition_dim,
            &[(hidden, Activation::LeakyRelu), (d_x, Activation::LeakyRelu)],
            leaky_slope,
            rng,
        )?;
        Ok(Self { mlp, latent_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn generate(&self, z: &Matrix, m: &Matrix) -> Result<Matrix> {
        self.check_inputs(z, m)?;
        self.mlp.forward(&Matrix::hstack(&[z, m])?, None)
    }

    pub fn generate_cached(&self, z: &Matrix, m: &Matrix) -> Result<(Matrix, GradientTape)> {
        self.check_inputs(z, m)?;
        let mut tape = GradientTape::new();
        let x = self.mlp.forward(&Matrix::hstack(&[z, m])?, Some(&mut tape))?;
        Ok((x, tape))
    }

    fn check_inputs(&self, z: &Matrix, m: &Matrix) -> Result<()> {
        if z.cols() != self.latent_dim || z.cols() + m.cols() != self.in_dim() {
            return Err(Error::dim(
                "generate",
                format!("z of {} + m of {}", self.latent_dim, self.in_dim() - self.latent_dim),
                format!("z of {} + m of {}", z.cols(), m.cols()),
            ));
        }
        Ok(())
    }

    /// Returns parameter gradients and input gradients split into `(dz, dm)`.
    pub fn backward(
        &self,
        tape: &GradientTape,
        grad_x: &Matrix,
    ) -> Result<(Vec<LayerGrad>, Matrix, Matrix)> {
        let (grads, gin) = self.mlp.backward(tape, grad_x)?;
        let (gz, gm) = gin.split_cols(self.latent_dim)?;
        Ok((grads, gz, gm))
    }
}

impl Parameters for GeneratorNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.mlp.param_blocks()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.param_blocks_mut()
    }
}

// ---------------------------------------------------------------------------
// Discriminator

/// One LeakyReLU hidden layer (exposed as `f_D`) and a single sigmoid unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrimination {
    /// Probability that each row is real.
    pub prob: Vec<f64>,
    /// Last hidden layer activations, one row per input.
    pub features: Matrix,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorCache {
    hidden: LayerCache,
    output: LayerCache,
}

impl DiscriminatorNet {
    pub fn init<R: Rng + ?Sized>(
        d_x: usize,
        hidden: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: DenseLayer::init(d_x, hidden, Activation::LeakyRelu, leaky_slope, rng)?,
            output: DenseLayer::init(hidden, 1, Activation::Sigmoid, leaky_slope, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden.out_dim()
    }

    pub fn discriminate(&self, x: &Matrix) -> Result<Discrimination> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Discrimination, DiscriminatorCache)> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim("discriminate", self.in_dim(), x.cols()));
        }
        let hidden = self.hidden.forward_cached(x)?;
        let output = self.output.forward_cached(&hidden.output)?;
        let out = Discrimination {
            prob: output.output.data().to_vec(),
            features: hidden.output.clone(),
        };
        Ok((out, DiscriminatorCache { hidden, output }))
    }

    /// Backpropagates gradients w.r.t. the probability and (optionally) `f_D`.
    pub fn backward(
        &self,
        cache: &DiscriminatorCache,
        grad_prob: &[f64],
        grad_features: Option<&Matrix>,
    ) -> Result<(Vec<LayerGrad>, Matrix)> {
        let n = cache.output.output.rows();
        if grad_prob.len() != n {
            return Err(Error::dim("discriminator backward", n, grad_prob.len()));
        }
        let gp = Matrix::from_vec(n, 1, grad_prob.to_vec())?;
        let (g_out, mut grad_h) = self.output.backward(&cache.output, &gp)?;
        if let Some(gf) = grad_features {
            grad_h.add_assign(gf)?;
        }
        let (g_hidden, grad_x) = self.hidden.backward(&cache.hidden, &grad_h)?;
        Ok((vec![g_hidden, g_out], grad_x))
    }
}

impl Parameters for DiscriminatorNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        let mut out = self.hidden.param_blocks().to_vec();
        out.extend(self.output.param_blocks());
        out
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.hidden.param_blocks_mut().into_iter().collect();
        out.extend(self.output.param_blocks_mut());
        out
    }
}

// ---------------------------------------------------------------------------
// Classifier

/// Two LeakyReLU layers and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierNet {
    pub mlp: Mlp,
}

impl ClassifierNet {
    pub fn init<R: Rng + ?Sized>(
        d_x: usize,
        hidden: [usize; 2],
        n_classes: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mlp = Mlp::init(
            d_x,
            &[
                (hidden[0], Activation::LeakyRelu),
                (hidden[1], Activation::LeakyRelu),
                (n_classes, Activation::Softmax),
            ],
            leaky_slope,
            rng,
        )?;
        Ok(Self { mlp })
    }

    pub fn n_classes(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    /// Class probabilities, one row per input.
    pub fn classify(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::dim("classify", self.in_dim(), x.cols()));
        }
        self.mlp.forward(x, None)
    }
}

impl Parameters for ClassifierNet {
    fn param_blocks(&self) -> Vec<&[f64]> {
        self.mlp.param_blocks()
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.mlp.param_blocks_mut()
    }
}

// ---------------------------------------------------------------------------
// Full generative model

/// Encoder, fusion, generator and discriminator with their shared configuration.
///
/// `encoder` is absent for the GAN-only ablation and `fusion` is absent when the
/// conditioning vector is used as a plain concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeGanModel {
    pub config: ModelConfig,
    pub encoder: Option<EncoderNet>,
    pub fusion: Option<FusionNet>,
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub iterations_trained: u64,
}

impl VaeGanModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.condition_dim();
        let d_x = config.dims.d_x;
        let a = config.leaky_slope;
        let encoder = if config.use_encoder {
            Some(EncoderNet::init(
                d_x + c,
                config.encoder_hidden,
                config.latent_dim,
                a,
                &mut rng,
            )?)
        } else {
            None
        };
        let fusion = if config.use_fusion {
            Some(FusionNet::init(c, config.fusion_hidden, a, &mut rng)?)
        } else {
            None
        };
        let generator =
            GeneratorNet::init(config.latent_dim, c, config.generator_hidden, d_x, a, &mut rng)?;
        let discriminator = DiscriminatorNet::init(d_x, config.discriminator_hidden, a, &mut rng)?;
        Ok(Self {
            config,
            encoder,
            fusion,
            generator,
            discriminator,
            iterations_trained: 0,
        })
    }

    pub fn dims(&self) -> FeatureDims {
        self.config.dims
    }

    /// Builds the conditioning vector `f` from visual and semantic rows.
    pub fn condition(&self, v: &Matrix, s: &Matrix) -> Result<Matrix> {
        let FeatureDims { d_v, d_s, .. } = self.config.dims;
        if v.cols() != d_v || s.cols() != d_s || v.rows() != s.rows() {
            return Err(Error::dim(
                "condition",
                format!("v of {d_v}, s of {d_s}, equal rows"),
                format!("v {}x{}, s {}x{}", v.rows(), v.cols(), s.rows(), s.cols()),
            ));
        }
        match self.config.modality {
            Modality::Multimodal => Matrix::hstack(&[v, s]),
            Modality::VisualOnly => Ok(v.clone()),
            Modality::SemanticOnly => Ok(s.clone()),
        }
    }

    /// Fused conditioning `m`; plain `f` when fusion is disabled.
    pub fn fused_condition(&self, v: &Matrix, s: &Matrix) -> Result<Matrix> {
        let f = self.condition(v, s)?;
        match &self.fusion {
            Some(net) => Ok(net.forward(&f)?.0),
            None => Ok(f),
        }
    }

    /// Generates tactile rows from explicit latent codes.
    pub fn generate_from(&self, z: &Matrix, v: &Matrix, s: &Matrix) -> Result<Matrix> {
        let m = self.fused_condition(v, s)?;
        self.generator.generate(z, &m)
    }

    /// Generates tactile rows with `z ~ N(0, latent_scale^2 I)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        v: &Matrix,
        s: &Matrix,
        latent_scale: f64,
        rng: &mut R,
    ) -> Result<Matrix> {
        let mut z = Matrix::zeros(v.rows(), self.config.latent_dim);
        for val in z.data_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *val = latent_scale * e;
        }
        self.generate_from(&z, v, s)
    }

    /// Networks in container order: (name, layers).
    pub fn named_layers(&self) -> Vec<(&'static str, Vec<&DenseLayer>)> {
        let mut out = Vec::new();
        if let Some(e) = &self.encoder {
            out.push(("encoder", e.layers().to_vec()));
        }
        if let Some(f) = &self.fusion {
            out.push(("fusion", f.gate.layers.iter().collect()));
        }
        out.push(("generator", self.generator.mlp.layers.iter().collect()));
        out.push((
            "discriminator",
            vec![&self.discriminator.hidden, &self.discriminator.output],
        ));
        out
    }
}
