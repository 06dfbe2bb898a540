//! Three-way optimization of encoder, generator (with fusion) and discriminator.
//!
//! Each iteration samples one minibatch with replacement, runs a single forward
//! pass, and derives three gradients from it at the parameters the iteration
//! started with:
//!
//! - encoder: `L_KL + L_rec`, generator and discriminator frozen;
//! - generator and fusion: `L_G = λ₁ L_rec + λ₂ L_GD`, encoder and discriminator frozen;
//! - discriminator: `L_D`, generated features treated as constants.
//!
//! The updates are then applied in the order E, G, D, each with its own Adam state.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{TouchedBatch, TouchedSet};
use crate::error::{Error, Result};
use crate::losses::{
    disc_loss_grad, generator_loss, kl_loss_grad, mean_feature_matching_grad, recon_loss_grad,
    LossWeights,
};
use crate::networks::{
    reparameterize_with, DiscriminatorCache, EncoderCache, FusionCache, VaeGanModel,
};
use crate::nn::{AdamConfig, AdamState, GradientTape, LayerGrad, Matrix, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub weights: LossWeights,
    /// Decoupled decay on the generator's input-layer weights, scaled by
    /// `lr_generator`. Directions of `[z; m]` that no touched condition spans
    /// keep their random initial weights otherwise, and those dominate the
    /// output for unseen conditions.
    pub generator_input_decay: f64,
    pub seed: u64,
    /// Snapshot cadence in iterations; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 64,
            lr_encoder: 1e-3,
            lr_generator: 1e-3,
            lr_discriminator: 1e-4,
            weights: LossWeights::default(),
            generator_input_decay: 3.0,
            seed: 0,
            snapshot_every: 0,
        }
    }
}

impl TrainConfig {
    /// Published learning rates and no input decay. The default uses ten times
    /// these rates for the short desk schedule.
    pub fn paper() -> Self {
        Self {
            lr_encoder: 1e-4,
            lr_generator: 1e-4,
            lr_discriminator: 1e-5,
            generator_input_decay: 0.0,
            ..Self::default()
        }
    }

    /// Learning rates may be zero (a frozen network) but not negative.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 2 for batch means".into(),
            ));
        }
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        let shrink = self.lr_generator * self.generator_input_decay;
        if !(self.generator_input_decay.is_finite() && self.generator_input_decay >= 0.0 && shrink < 1.0) {
            return Err(Error::InvalidConfig(
                "generator_input_decay must be >= 0 with lr_generator * decay < 1".into(),
            ));
        }
        self.weights.validate()
    }
}

/// Loss values of one iteration, evaluated before that iteration's updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub kl: f64,
    pub rec: f64,
    pub gd: f64,
    pub g: f64,
    pub d: f64,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        [self.kl, self.rec, self.gd, self.g, self.d]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Objective the encoder descends: `L_KL + L_rec`.
    pub fn encoder_objective(&self) -> f64 {
        self.kl + self.rec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
    /// Iterations at which a snapshot was taken.
    pub snapshots: Vec<u64>,
    /// Wall-clock seconds for the whole run; excluded from the CSV.
    pub elapsed_secs: f64,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iteration,L_KL,L_rec,L_GD,L_G,L_D";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.iteration, r.kl, r.rec, r.gd, r.g, r.d
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Mean of `L_rec` over the 1-based inclusive iteration range.
    pub fn mean_rec(&self, first: u64, last: u64) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.iteration >= first && r.iteration <= last)
            .map(|r| r.rec)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Random draws consumed by one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepNoise {
    /// Reparameterization noise; absent without an encoder.
    pub eps: Option<Matrix>,
    /// Prior latent codes `z_r`.
    pub z_r: Matrix,
}

impl StepNoise {
    pub fn sample<R: rand::Rng + ?Sized>(model: &VaeGanModel, rows: usize, rng: &mut R) -> Self {
        let k = model.config.latent_dim;
        let eps = model.encoder.as_ref().map(|_| Matrix::randn(rows, k, rng));
        let z_r = Matrix::randn(rows, k, rng);
        Self { eps, z_r }
    }
}

/// Parameter gradients of one iteration, in each network's block order.
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub losses: LossRecord,
    pub encoder: Vec<LayerGrad>,
    pub fusion: Vec<LayerGrad>,
    pub generator: Vec<LayerGrad>,
    pub discriminator: Vec<LayerGrad>,
}

fn flatten(grads: &[LayerGrad]) -> Vec<&[f64]> {
    grads.iter().flat_map(|g| g.blocks()).collect()
}

impl StepGradients {
    pub fn encoder_blocks(&self) -> Vec<&[f64]> {
        flatten(&self.encoder)
    }

    /// Generator blocks followed by fusion blocks.
    pub fn generator_blocks(&self) -> Vec<&[f64]> {
        let mut out = flatten(&self.generator);
        out.extend(flatten(&self.fusion));
        out
    }

    pub fn discriminator_blocks(&self) -> Vec<&[f64]> {
        flatten(&self.discriminator)
    }
}

struct Forward {
    fusion: Option<FusionCache>,
    encoder: Option<(EncoderCache, Matrix, Matrix)>, // cache, logvar, eps
    tape_e: Option<GradientTape>,
    tape_r: GradientTape,
    d_t: DiscriminatorCache,
    d_e: Option<DiscriminatorCache>,
    d_r: DiscriminatorCache,
    p_t: Vec<f64>,
    p_e: Option<Vec<f64>>,
    p_r: Vec<f64>,
    fd_t: Matrix,
    fd_e: Option<Matrix>,
    fd_r: Matrix,
    x_e: Option<Matrix>,
    x_r: Matrix,
    mean: Option<Matrix>,
}

fn forward(model: &VaeGanModel, batch: &TouchedBatch, noise: &StepNoise) -> Result<Forward> {
    let n = batch.tactile.rows();
    if n == 0 || batch.visual.rows() != n || batch.semantic.rows() != n {
        return Err(Error::InvalidArgument("batch rows must agree and be non-empty".into()));
    }
    if batch.tactile.cols() != model.config.dims.d_x {
        return Err(Error::dim("train batch", model.config.dims.d_x, batch.tactile.cols()));
    }
    if noise.z_r.shape() != (n, model.config.latent_dim) {
        return Err(Error::dim(
            "train noise",
            format!("{n}x{}", model.config.latent_dim),
            format!("{:?}", noise.z_r.shape()),
        ));
    }
    let f = model.condition(&batch.visual, &batch.semantic)?;
    let (m, fusion) = match &model.fusion {
        Some(net) => {
            let (m, cache) = net.forward(&f)?;
            (m, Some(cache))
        }
        None => (f.clone(), None),
    };

    let (encoder, tape_e, x_e, mean) = match &model.encoder {
        Some(enc) => {
            let eps = noise
                .eps
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("encoder step needs eps noise".into()))?;
            let input = Matrix::hstack(&[&batch.tactile, &f])?;
            let (lat, cache) = enc.forward(&input)?;
            if eps.shape() != lat.mean.shape() {
                return Err(Error::dim(
                    "train noise",
                    format!("{:?}", lat.mean.shape()),
                    format!("{:?}", eps.shape()),
                ));
            }
            let z_e = reparameterize_with(&lat.mean, &lat.logvar, eps)?;
            let (x_e, tape) = model.generator.generate_cached(&z_e, &m)?;
            (
                Some((cache, lat.logvar, eps.clone())),
                Some(tape),
                Some(x_e),
                Some(lat.mean),
            )
        }
        None => (None, None, None, None),
    };
    let (x_r, tape_r) = model.generator.generate_cached(&noise.z_r, &m)?;

    let disc = &model.discriminator;
    let (out_t, d_t) = disc.forward(&batch.tactile)?;
    let (out_r, d_r) = disc.forward(&x_r)?;
    let (p_e, fd_e, d_e) = match &x_e {
        Some(x) => {
            let (out, cache) = disc.forward(x)?;
            (Some(out.prob), Some(out.features), Some(cache))
        }
        None => (None, None, None),
    };
    Ok(Forward {
        fusion,
        encoder,
        tape_e,
        tape_r,
        d_t,
        d_e,
        d_r,
        p_t: out_t.prob,
        p_e,
        p_r: out_r.prob,
        fd_t: out_t.features,
        fd_e,
        fd_r: out_r.features,
        x_e,
        x_r,
        mean,
    })
}

/// Loss values only; the objectives the three gradients descend.
pub fn step_losses(
    model: &VaeGanModel,
    batch: &TouchedBatch,
    noise: &StepNoise,
    weights: LossWeights,
) -> Result<LossRecord> {
    Ok(compute_gradients(model, batch, noise, weights)?.losses)
}

/// Forward pass plus the three parameter gradients at the current parameters.
pub fn compute_gradients(
    model: &VaeGanModel,
    batch: &TouchedBatch,
    noise: &StepNoise,
    weights: LossWeights,
) -> Result<StepGradients> {
    let fw = forward(model, batch, noise)?;
    let disc = &model.discriminator;
    let n = batch.tactile.rows();
    let zeros = vec![0.0; n];

    // The reconstructed sample is x_e with an encoder and x_r without one.
    let (x_rec, fd_rec, d_rec) = match (&fw.x_e, &fw.fd_e, &fw.d_e) {
        (Some(x), Some(fd), Some(c)) => (x, fd, c),
        _ => (&fw.x_r, &fw.fd_r, &fw.d_r),
    };
    let rec = recon_loss_grad(&batch.tactile, x_rec, &fw.fd_t, fd_rec)?;
    let fakes: Vec<&Matrix> = fw.fd_e.iter().chain(std::iter::once(&fw.fd_r)).collect();
    let gd = mean_feature_matching_grad(&fw.fd_t, &fakes)?;
    let p_fakes: Vec<&[f64]> = fw
        .p_e
        .iter()
        .map(Vec::as_slice)
        .chain(std::iter::once(fw.p_r.as_slice()))
        .collect();
    let dl = disc_loss_grad(&fw.p_t, &p_fakes);

    // dL_rec/dx_rec through the frozen discriminator's feature layer.
    let (_, rec_through_d) = disc.backward(d_rec, &zeros, Some(&rec.grad_fd_fake))?;
    let grad_rec_x = rec.grad_fake.add(&rec_through_d)?;

    // Encoder: L_KL + L_rec via x_e -> z_e -> (mean, logvar).
    let mut kl_value = 0.0;
    let mut encoder_grads = Vec::new();
    if let (Some(enc), Some((cache, logvar, eps)), Some(tape_e), Some(mean)) =
        (&model.encoder, &fw.encoder, &fw.tape_e, &fw.mean)
    {
        let (kl, g_mean_kl, g_logvar_kl) = kl_loss_grad(mean, logvar)?;
        kl_value = kl;
        let (_, gz, _) = model.generator.backward(tape_e, &grad_rec_x)?;
        let g_mean = gz.add(&g_mean_kl)?;
        let dz_dlv = logvar.zip_map(eps, |lv, e| 0.5 * (0.5 * lv).exp() * e)?;
        let g_logvar = gz.hadamard(&dz_dlv)?.add(&g_logvar_kl)?;
        encoder_grads = enc.backward(cache, &g_mean, &g_logvar)?.0;
    }

    // Generator and fusion: λ₁ L_rec + λ₂ L_GD.
    let lam_rec = weights.reconstruction;
    let lam_gd = weights.feature_matching;
    let mut grad_x_e = None;
    if let Some(c) = &fw.d_e {
        let (_, through) = disc.backward(c, &zeros, Some(&gd.grad_fakes[0]))?;
        grad_x_e = Some(grad_rec_x.scale(lam_rec).add(&through.scale(lam_gd))?);
    }
    let g_r = gd.grad_fakes.last().expect("x_r feature-matching term");
    let (_, through_r) = disc.backward(&fw.d_r, &zeros, Some(g_r))?;
    let mut grad_x_r = through_r.scale(lam_gd);
    if model.encoder.is_none() {
        grad_x_r.add_assign(&grad_rec_x.scale(lam_rec))?;
    }

    let (mut gen_grads, _, mut grad_m) = model.generator.backward(&fw.tape_r, &grad_x_r)?;
    if let (Some(tape_e), Some(gx)) = (&fw.tape_e, &grad_x_e) {
        let (ge, _, gm_e) = model.generator.backward(tape_e, gx)?;
        for (a, b) in gen_grads.iter_mut().zip(&ge) {
            a.accumulate(b)?;
        }
        grad_m.add_assign(&gm_e)?;
    }
    let fusion_grads = match (&model.fusion, &fw.fusion) {
        (Some(net), Some(cache)) => net.backward(cache, &grad_m)?.0,
        _ => Vec::new(),
    };

    // Discriminator: L_D with generated samples held fixed.
    let (mut disc_grads, _) = disc.backward(&fw.d_t, &dl.grad_real, None)?;
    let fake_caches: Vec<&DiscriminatorCache> =
        fw.d_e.iter().chain(std::iter::once(&fw.d_r)).collect();
    for (cache, gp) in fake_caches.into_iter().zip(&dl.grad_fakes) {
        let (g, _) = disc.backward(cache, gp, None)?;
        for (a, b) in disc_grads.iter_mut().zip(&g) {
            a.accumulate(b)?;
        }
    }

    let losses = LossRecord {
        iteration: model.iterations_trained + 1,
        kl: kl_value,
        rec: rec.value,
        gd: gd.value,
        g: generator_loss(rec.value, gd.value, weights),
        d: dl.value,
    };
    Ok(StepGradients {
        losses,
        encoder: encoder_grads,
        fusion: fusion_grads,
        generator: gen_grads,
        discriminator: disc_grads,
    })
}

/// Owns the optimizer states and sampling stream for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    adam_encoder: AdamState,
    adam_generator: AdamState,
    adam_discriminator: AdamState,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam_encoder: AdamState::new(AdamConfig::with_learning_rate(config.lr_encoder)),
            adam_generator: AdamState::new(AdamConfig::with_learning_rate(config.lr_generator)),
            adam_discriminator: AdamState::new(AdamConfig::with_learning_rate(
                config.lr_discriminator,
            )),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Samples a minibatch with replacement and runs one iteration.
    pub fn train_step(&mut self, model: &mut VaeGanModel, set: &TouchedSet) -> Result<LossRecord> {
        if set.is_empty() {
            return Err(Error::Data("touched split is empty".into()));
        }
        let dist = Uniform::new(0, set.len());
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| dist.sample(&mut self.rng))
            .collect();
        let batch = set.batch(&idx);
        self.step_on_batch(model, &batch)
    }

    /// One iteration on an explicit batch; noise comes from the trainer's stream.
    pub fn step_on_batch(
        &mut self,
        model: &mut VaeGanModel,
        batch: &TouchedBatch,
    ) -> Result<LossRecord> {
        let noise = StepNoise::sample(model, batch.tactile.rows(), &mut self.rng);
        let grads = compute_gradients(model, batch, &noise, self.config.weights)?;
        let rec = grads.losses;
        if !rec.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {}: L_KL={} L_rec={} L_GD={} L_G={} L_D={}",
                rec.iteration, rec.kl, rec.rec, rec.gd, rec.g, rec.d
            )));
        }

        if let Some(enc) = model.encoder.as_mut() {
            self.adam_encoder
                .step(&mut enc.param_blocks_mut(), &grads.encoder_blocks())?;
        }
        {
            let mut params = model.generator.param_blocks_mut();
            if let Some(fusion) = model.fusion.as_mut() {
                params.extend(fusion.param_blocks_mut());
            }
            self.adam_generator
                .step(&mut params, &grads.generator_blocks())?;
        }
        let shrink = 1.0 - self.config.lr_generator * self.config.generator_input_decay;
        if shrink < 1.0 {
            for w in model.generator.mlp.layers[0].weights.data_mut() {
                *w *= shrink;
            }
        }
        self.adam_discriminator.step(
            &mut model.discriminator.param_blocks_mut(),
            &grads.discriminator_blocks(),
        )?;
        model.iterations_trained += 1;
        Ok(rec)
    }
}

/// Runs `config.iterations` iterations on the touched set.
pub fn train(model: &mut VaeGanModel, set: &TouchedSet, config: &TrainConfig) -> Result<TrainLog> {
    train_with_snapshots(model, set, config, |_, _| Ok(()))
}

/// Like [`train`], calling `snapshot(model, iteration)` every `snapshot_every` iterations.
pub fn train_with_snapshots<F>(
    model: &mut VaeGanModel,
    set: &TouchedSet,
    config: &TrainConfig,
    mut snapshot: F,
) -> Result<TrainLog>
where
    F: FnMut(&VaeGanModel, u64) -> Result<()>,
{
    if set.is_empty() {
        return Err(Error::Data("touched split is empty".into()));
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(config.clone())?;
    let mut log = TrainLog::default();
    for i in 1..=config.iterations {
        let rec = trainer.train_step(model, set)?;
        log.records.push(rec);
        if config.snapshot_every > 0 && i % config.snapshot_every == 0 {
            snapshot(model, model.iterations_trained)?;
            log.snapshots.push(model.iterations_trained);
        }
        if i % 500 == 0 {
            log::debug!(
                "iteration {i}: L_rec={:.4} L_GD={:.4} L_D={:.4}",
                rec.rec,
                rec.gd,
                rec.d
            );
        }
    }
    log.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(log)
}
