//! Central finite-difference gradient checks shared by the gradient suite and
//! the acceptance target.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tactile_zsl::data::{ClassInfo, Dataset, DatasetMeta, Split, TouchedBatch};
use tactile_zsl::losses::{
    cross_entropy_grad, disc_loss_grad, generator_loss, kl_loss_grad, mean_feature_matching_grad,
    recon_loss_grad, LossWeights,
};
use tactile_zsl::networks::{
    ClassifierNet, DiscriminatorNet, EncoderNet, FeatureDims, FusionNet, GeneratorNet, Modality,
    ModelConfig, VaeGanModel,
};
use tactile_zsl::nn::{grad_blocks, GradientTape, Matrix, Parameters, DEFAULT_LEAKY_SLOPE};
use tactile_zsl::trainer::{compute_gradients, step_losses, StepNoise};

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;
/// One-sided slopes differing by more than this (relative) mark a point where a
/// rectifier changes state inside the stencil; such points are not differentiable.
pub const KINK_TOL: f64 = 1e-4;
/// Largest tolerated share of stencils that straddle a kink.
pub const MAX_KINK_SHARE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct GradStats {
    pub name: &'static str,
    pub checked: usize,
    pub kinks: usize,
    pub max_rel: f64,
    pub worst: String,
    /// The function has no rectifiers, so no stencil is excused as a kink.
    pub smooth: bool,
}

impl GradStats {
    pub fn new(name: &'static str) -> Self {
        Self {
            name,
            checked: 0,
            kinks: 0,
            max_rel: 0.0,
            worst: String::new(),
            smooth: false,
        }
    }

    pub fn kink_share(&self) -> f64 {
        self.kinks as f64 / (self.checked + self.kinks).max(1) as f64
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel < MAX_REL_ERR && self.kink_share() <= MAX_KINK_SHARE
    }

    pub fn merge(&mut self, other: &GradStats) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst.clone();
        }
    }

    /// Compares one analytic partial with central differences of `f` around `f0`.
    pub fn record(&mut self, analytic: f64, f_plus: f64, f_minus: f64, f0: f64, at: impl FnOnce() -> String) {
        let fwd = (f_plus - f0) / STEP;
        let bwd = (f0 - f_minus) / STEP;
        let central = (f_plus - f_minus) / (2.0 * STEP);
        let scale = fwd.abs().max(bwd.abs()).max(REL_FLOOR);
        if !self.smooth && (fwd - bwd).abs() > KINK_TOL * scale {
            self.kinks += 1;
            return;
        }
        self.checked += 1;
        let rel = (analytic - central).abs() / analytic.abs().max(central.abs()).max(REL_FLOOR);
        if rel > self.max_rel || rel.is_nan() {
            self.max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            self.worst = format!("{} analytic {analytic:e} numeric {central:e}", at());
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} partials, max rel err {:.2e}, {} kink stencils ({:.2}%)",
            self.name,
            self.checked,
            self.max_rel,
            self.kinks,
            100.0 * self.kink_share()
        )
    }
}

/// Checks `analytic` against central differences of `f` with respect to `x`.
pub fn check_vector(stats: &mut GradStats, x: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
    assert_eq!(x.len(), analytic.len());
    let f0 = f(x);
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + STEP;
        let fp = f(&probe);
        probe[i] = x[i] - STEP;
        let fm = f(&probe);
        probe[i] = x[i];
        stats.record(analytic[i], fp, fm, f0, || format!("input {i}"));
    }
}

/// Checks parameter gradients of `model` (blocks in `blocks` order) against `f`.
pub fn check_params<M: Clone>(
    stats: &mut GradStats,
    model: &M,
    blocks: fn(&mut M) -> Vec<&mut [f64]>,
    analytic: &[&[f64]],
    f: impl Fn(&M) -> f64,
) {
    let f0 = f(model);
    let mut probe = model.clone();
    let lens: Vec<usize> = blocks(&mut probe).iter().map(|b| b.len()).collect();
    assert_eq!(lens.len(), analytic.len(), "block count");
    for (b, &len) in lens.iter().enumerate() {
        assert_eq!(len, analytic[b].len(), "block {b} length");
        for (i, &a) in analytic[b].iter().enumerate() {
            let orig = blocks(&mut probe)[b][i];
            blocks(&mut probe)[b][i] = orig + STEP;
            let fp = f(&probe);
            blocks(&mut probe)[b][i] = orig - STEP;
            let fm = f(&probe);
            blocks(&mut probe)[b][i] = orig;
            stats.record(a, fp, fm, f0, || format!("block {b} index {i}"));
        }
    }
}

pub fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::randn(rows, cols, rng)
}

fn weighted_sum(c: &Matrix, m: &Matrix) -> f64 {
    c.data().iter().zip(m.data()).map(|(a, b)| a * b).sum()
}

pub const SEEDS: u64 = 100;
const BATCH: usize = 6;

pub fn check_encoder(seed: u64, stats: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_in, hidden, latent) = (11, 8, 4);
    let net = EncoderNet::init(d_in, hidden, latent, DEFAULT_LEAKY_SLOPE, &mut rng).unwrap();
    let input = randn(BATCH, d_in, &mut rng);
    let cm = randn(BATCH, latent, &mut rng);
    let cl = randn(BATCH, latent, &mut rng);
    let loss = |net: &EncoderNet, x: &Matrix| {
        let (p, _) = net.forward(x).unwrap();
        weighted_sum(&cm, &p.mean) + weighted_sum(&cl, &p.logvar)
    };
    let (_, cache) = net.forward(&input).unwrap();
    let (grads, g_in) = net.backward(&cache, &cm, &cl).unwrap();
    check_params(stats, &net, |n| n.param_blocks_mut(), &grad_blocks(&grads), |n| loss(n, &input));
    check_vector(stats, input.data(), g_in.data(), |x| {
        loss(&net, &Matrix::from_vec(BATCH, d_in, x.to_vec()).unwrap())
    });
}

pub fn check_fusion(seed: u64, stats: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 12;
    let net = FusionNet::init(d, [8, 4], DEFAULT_LEAKY_SLOPE, &mut rng).unwrap();
    let f = randn(BATCH, d, &mut rng);
    let c = randn(BATCH, d, &mut rng);
    let loss = |net: &FusionNet, f: &Matrix| weighted_sum(&c, &net.forward(f).unwrap().0);
    let (_, cache) = net.forward(&f).unwrap();
    let (grads, g_f) = net.backward(&cache, &c).unwrap();
    check_params(stats, &net, |n| n.gate.param_blocks_mut(), &grad_blocks(&grads), |n| loss(n, &f));
    check_vector(stats, f.data(), g_f.data(), |x| {
        loss(&net, &Matrix::from_vec(BATCH, d, x.to_vec()).unwrap())
    });
}

pub fn check_generator(seed: u64, stats: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (latent, cond, hidden, d_x) = (4, 12, 8, 5);
    let net = GeneratorNet::init(latent, cond, hidden, d_x, DEFAULT_LEAKY_SLOPE, &mut rng).unwrap();
    let z = randn(BATCH, latent, &mut rng);
    let m = randn(BATCH, cond, &mut rng);
    let c = randn(BATCH, d_x, &mut rng);
    let loss = |net: &GeneratorNet, z: &Matrix, m: &Matrix| weighted_sum(&c, &net.generate(z, m).unwrap());
    let (_, tape) = net.generate_cached(&z, &m).unwrap();
    let (grads, gz, gm) = net.backward(&tape, &c).unwrap();
    check_params(stats, &net, |n| n.mlp.param_blocks_mut(), &grad_blocks(&grads), |n| loss(n, &z, &m));
    check_vector(stats, z.data(), gz.data(), |x| {
        loss(&net, &Matrix::from_vec(BATCH, latent, x.to_vec()).unwrap(), &m)
    });
    check_vector(stats, m.data(), gm.data(), |x| {
        loss(&net, &z, &Matrix::from_vec(BATCH, cond, x.to_vec()).unwrap())
    });
}

pub fn check_discriminator(seed: u64, stats: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_x, hidden) = (5, 6);
    let net = DiscriminatorNet::init(d_x, hidden, DEFAULT_LEAKY_SLOPE, &mut rng).unwrap();
    let x = randn(BATCH, d_x, &mut rng);
    let cp: Vec<f64> = (0..BATCH).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cf = randn(BATCH, hidden, &mut rng);
    let loss = |net: &DiscriminatorNet, x: &Matrix| {
        let d = net.discriminate(x).unwrap();
        d.prob.iter().zip(&cp).map(|(p, c)| p * c).sum::<f64>() + weighted_sum(&cf, &d.features)
    };
    let (_, cache) = net.forward(&x).unwrap();
    let (grads, g_x) = net.backward(&cache, &cp, Some(&cf)).unwrap();
    check_params(stats, &net, |n| n.param_blocks_mut(), &grad_blocks(&grads), |n| loss(n, &x));
    check_vector(stats, x.data(), g_x.data(), |v| {
        loss(&net, &Matrix::from_vec(BATCH, d_x, v.to_vec()).unwrap())
    });
}

pub fn check_classifier(seed: u64, stats: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_x, k) = (5, 3);
    let net = ClassifierNet::init(d_x, [8, 8], k, DEFAULT_LEAKY_SLOPE, &mut rng).unwrap();
    let x = randn(BATCH, d_x, &mut rng);
    let y: Vec<usize> = (0..BATCH).map(|_| rng.gen_range(0..k)).collect();
    let loss = |net: &ClassifierNet, x: &Matrix| {
        cross_entropy_grad(&net.classify(x).unwrap(), &y).unwrap().0
    };
    let mut tape = GradientTape::new();
    let probs = net.mlp.forward(&x, Some(&mut tape)).unwrap();
    let (_, g_probs) = cross_entropy_grad(&probs, &y).unwrap();
    let (grads, g_x) = net.mlp.backward(&tape, &g_probs).unwrap();
    check_params(stats, &net, |n| n.mlp.param_blocks_mut(), &grad_blocks(&grads), |n| loss(n, &x));
    check_vector(stats, x.data(), g_x.data(), |v| {
        loss(&net, &Matrix::from_vec(BATCH, d_x, v.to_vec()).unwrap())
    });
}

fn probs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.05..0.95)).collect()
}

/// Every loss with respect to its direct inputs.
pub fn check_losses(seed: u64, stats: &mut GradStats) {
    stats.smooth = true;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k, d, h) = (BATCH, 4, 5, 6);

    let mean = randn(n, k, &mut rng);
    let logvar = randn(n, k, &mut rng);
    let (_, g_mean, g_logvar) = kl_loss_grad(&mean, &logvar).unwrap();
    check_vector(stats, mean.data(), g_mean.data(), |v| {
        kl_loss_grad(&Matrix::from_vec(n, k, v.to_vec()).unwrap(), &logvar).unwrap().0
    });
    check_vector(stats, logvar.data(), g_logvar.data(), |v| {
        kl_loss_grad(&mean, &Matrix::from_vec(n, k, v.to_vec()).unwrap()).unwrap().0
    });

    let (xr, xf) = (randn(n, d, &mut rng), randn(n, d, &mut rng));
    let (fr, ff) = (randn(n, h, &mut rng), randn(n, h, &mut rng));
    let g = recon_loss_grad(&xr, &xf, &fr, &ff).unwrap();
    check_vector(stats, xf.data(), g.grad_fake.data(), |v| {
        recon_loss_grad(&xr, &Matrix::from_vec(n, d, v.to_vec()).unwrap(), &fr, &ff).unwrap().value
    });
    check_vector(stats, ff.data(), g.grad_fd_fake.data(), |v| {
        recon_loss_grad(&xr, &xf, &fr, &Matrix::from_vec(n, h, v.to_vec()).unwrap()).unwrap().value
    });

    let (pr, pe, pz) = (probs(n, &mut rng), probs(n, &mut rng), probs(n, &mut rng));
    let g = disc_loss_grad(&pr, &[&pe, &pz]);
    check_vector(stats, &pr, &g.grad_real, |v| disc_loss_grad(v, &[&pe, &pz]).value);
    check_vector(stats, &pe, &g.grad_fakes[0], |v| disc_loss_grad(&pr, &[v, &pz]).value);
    check_vector(stats, &pz, &g.grad_fakes[1], |v| disc_loss_grad(&pr, &[&pe, v]).value);

    let (fe, fz) = (randn(n, h, &mut rng), randn(n, h, &mut rng));
    let g = mean_feature_matching_grad(&fr, &[&fe, &fz]).unwrap();
    check_vector(stats, fe.data(), g.grad_fakes[0].data(), |v| {
        let m = Matrix::from_vec(n, h, v.to_vec()).unwrap();
        mean_feature_matching_grad(&fr, &[&m, &fz]).unwrap().value
    });
    check_vector(stats, fz.data(), g.grad_fakes[1].data(), |v| {
        let m = Matrix::from_vec(n, h, v.to_vec()).unwrap();
        mean_feature_matching_grad(&fr, &[&fe, &m]).unwrap().value
    });

    let w = LossWeights::default();
    let (a, b) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
    check_vector(
        stats,
        &[a, b],
        &[w.reconstruction, w.feature_matching],
        |v| generator_loss(v[0], v[1], w),
    );

    let logits = randn(n, 3, &mut rng);
    let sm: Vec<f64> = logits
        .iter_rows()
        .flat_map(|r| {
            let s: f64 = r.iter().map(|v| v.exp()).sum();
            r.iter().map(move |v| v.exp() / s).collect::<Vec<_>>()
        })
        .collect();
    let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let p = Matrix::from_vec(n, 3, sm).unwrap();
    let (_, g_p) = cross_entropy_grad(&p, &y).unwrap();
    check_vector(stats, p.data(), g_p.data(), |v| {
        cross_entropy_grad(&Matrix::from_vec(n, 3, v.to_vec()).unwrap(), &y).unwrap().0
    });
}

/// Small model configuration; the variant rotates with the seed so every
/// encoder/fusion/modality combination is exercised.
pub fn small_model(seed: u64) -> VaeGanModel {
    let modality = match seed % 3 {
        0 => Modality::Multimodal,
        1 => Modality::VisualOnly,
        _ => Modality::SemanticOnly,
    };
    let cfg = ModelConfig {
        dims: FeatureDims { d_v: 6, d_s: 6, d_x: 5 },
        latent_dim: 4,
        encoder_hidden: 8,
        fusion_hidden: [8, 4],
        generator_hidden: 8,
        discriminator_hidden: 6,
        use_encoder: seed % 4 != 1,
        use_fusion: seed % 4 != 2,
        modality,
        ..ModelConfig::desk()
    };
    VaeGanModel::new(cfg, seed).unwrap()
}

/// Encoder, generator(+fusion) and discriminator gradients of one training step.
pub fn check_step(seed: u64, stats: &mut GradStats) {
    let model = small_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let batch = TouchedBatch {
        tactile: randn(BATCH, 5, &mut rng),
        visual: randn(BATCH, 6, &mut rng),
        semantic: Matrix::from_vec(
            BATCH,
            6,
            (0..BATCH * 6).map(|_| f64::from(rng.gen_range(0..2u8))).collect(),
        )
        .unwrap(),
    };
    let noise = StepNoise::sample(&model, BATCH, &mut rng);
    let w = LossWeights::default();
    let grads = compute_gradients(&model, &batch, &noise, w).unwrap();
    let losses = |m: &VaeGanModel| step_losses(m, &batch, &noise, w).unwrap();

    if model.encoder.is_some() {
        check_params(
            stats,
            &model,
            |m| m.encoder.as_mut().unwrap().param_blocks_mut(),
            &grads.encoder_blocks(),
            |m| losses(m).encoder_objective(),
        );
    }
    check_params(
        stats,
        &model,
        |m| {
            let mut b = m.generator.param_blocks_mut();
            if let Some(f) = m.fusion.as_mut() {
                b.extend(f.param_blocks_mut());
            }
            b
        },
        &grads.generator_blocks(),
        |m| losses(m).g,
    );
    check_params(
        stats,
        &model,
        |m| m.discriminator.param_blocks_mut(),
        &grads.discriminator_blocks(),
        |m| losses(m).d,
    );
}

pub type Check = fn(u64, &mut GradStats);

pub const CHECKS: [(&str, Check); 7] = [
    ("encoder", check_encoder),
    ("fusion", check_fusion),
    ("generator", check_generator),
    ("discriminator", check_discriminator),
    ("classifier", check_classifier),
    ("losses", check_losses),
    ("training step", check_step),
];

pub fn run_check(name: &'static str, check: Check, seeds: u64) -> GradStats {
    let mut stats = GradStats::new(name);
    for seed in 0..seeds {
        check(seed, &mut stats);
    }
    stats
}

// ---------------------------------------------------------------------------
// Random datasets for format round trips

fn f32_value(rng: &mut ChaCha8Rng) -> f64 {
    let v: f32 = match rng.gen_range(0..10) {
        0 => f32::MAX,
        1 => -f32::MIN_POSITIVE,
        2 => f32::from_bits(1),
        3 => -0.0,
        4 => rng.gen_range(-1e30..1e30),
        _ => rng.gen_range(-4.0..4.0),
    };
    f64::from(v)
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| f32_value(rng)).collect()).unwrap()
}

/// A dataset of random shape whose values are all representable as `f32`,
/// including extremes, subnormals and negative zero.
pub fn random_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = FeatureDims {
        d_v: rng.gen_range(1..9),
        d_s: rng.gen_range(1..9),
        d_x: rng.gen_range(1..9),
    };
    let n_classes = rng.gen_range(1..7);
    let classes: Vec<ClassInfo> = (0..n_classes)
        .map(|i| ClassInfo {
            name: format!("c{i}_{}", rng.gen::<u16>()),
            id: i * 3 + rng.gen_range(0..3),
            split: [Split::Touched, Split::Validation, Split::Untouched][rng.gen_range(0..3)],
        })
        .collect();
    let rows = rng.gen_range(1..40);
    let labels: Vec<usize> = (0..rows).map(|_| classes[rng.gen_range(0..n_classes)].id).collect();
    let semantic = Matrix::from_vec(
        rows,
        dims.d_s,
        (0..rows * dims.d_s).map(|_| f64::from(rng.gen_range(0..2u8))).collect(),
    )
    .unwrap();
    let visual = random_matrix(rows, dims.d_v, &mut rng);
    let tactile = rng.gen_bool(0.8).then(|| random_matrix(rows, dims.d_x, &mut rng));
    let mut ds = Dataset::new(DatasetMeta { dims, classes }, visual, semantic, tactile, labels).unwrap();
    if rng.gen_bool(0.5) {
        ds.locations = Some((0..rows).map(|_| rng.gen_range(0..225)).collect());
    }
    ds
}


fn bits(m: &Matrix) -> Vec<u64> {
    m.data().iter().map(|v| v.to_bits()).collect()
}

/// True when both datasets hold the same metadata, labels and bit patterns.
pub fn bit_identical(a: &Dataset, b: &Dataset) -> bool {
    a.meta == b.meta
        && a.labels == b.labels
        && a.locations == b.locations
        && a.visual.shape() == b.visual.shape()
        && bits(&a.visual) == bits(&b.visual)
        && bits(&a.semantic) == bits(&b.semantic)
        && a.tactile.as_ref().map(bits) == b.tactile.as_ref().map(bits)
}
