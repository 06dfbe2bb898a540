//! Feature synthesis for untouched classes, softmax classifiers and the Gaussian
//! novelty gate that routes generalized zero-shot predictions.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ClassDescriptor, LabeledFeatures};
use crate::error::{Error, Result};
use crate::losses::cross_entropy_grad;
use crate::networks::{ClassifierNet, VaeGanModel};
use crate::nn::{grad_blocks, AdamConfig, AdamState, GradientTape, Matrix, Parameters};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_PER_CLASS_COUNT: usize = 200;

// ---------------------------------------------------------------------------
// Synthesis

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub per_class_count: usize,
    pub classes: Vec<ClassDescriptor>,
    pub seed: u64,
    /// Standard deviation of the latent prior; 1 for `N(0, I)`.
    pub latent_scale: f64,
}

impl SynthesisRequest {
    pub fn new(classes: Vec<ClassDescriptor>, seed: u64) -> Self {
        Self {
            per_class_count: DEFAULT_PER_CLASS_COUNT,
            classes,
            seed,
            latent_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_class_count == 0 {
            return Err(Error::InvalidArgument("per_class_count must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("no classes to synthesize".into()));
        }
        if let Some(c) = self.classes.iter().find(|c| c.visual.rows() == 0) {
            return Err(Error::InvalidArgument(format!(
                "class {} has no visual/semantic exemplar",
                c.label
            )));
        }
        if !(self.latent_scale.is_finite() && self.latent_scale >= 0.0) {
            return Err(Error::InvalidArgument("latent_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Generates `per_class_count` tactile rows per requested class, cycling through
/// each class's (visual, semantic) exemplars. Labels are the descriptors' labels.
pub fn synthesize_features(model: &VaeGanModel, req: &SynthesisRequest) -> Result<LabeledFeatures> {
    req.validate()?;
    if model.iterations_trained == 0 {
        return Err(Error::Untrained);
    }
    let k = req.per_class_count;
    let mut visual_parts = Vec::with_capacity(req.classes.len());
    let mut semantic_parts = Vec::with_capacity(req.classes.len());
    let mut labels = Vec::with_capacity(k * req.classes.len());
    for class in &req.classes {
        let idx: Vec<usize> = (0..k).map(|j| j % class.visual.rows()).collect();
        visual_parts.push(class.visual.select_rows(&idx));
        semantic_parts.push(class.semantic.select_rows(&idx));
        labels.extend(std::iter::repeat_n(class.label, k));
    }
    let v = Matrix::vstack(&visual_parts.iter().collect::<Vec<_>>())?;
    let s = Matrix::vstack(&semantic_parts.iter().collect::<Vec<_>>())?;
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let features = model.sample(&v, &s, req.latent_scale, &mut rng)?;
    Ok(LabeledFeatures { features, labels })
}

/// Maps arbitrary class ids to dense indices in the order given.
pub fn dense_labels(labels: &[usize], class_order: &[usize]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|y| {
            class_order
                .iter()
                .position(|c| c == y)
                .ok_or_else(|| Error::InvalidArgument(format!("label {y} not in class list")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Classifiers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub leaky_slope: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 64],
            iterations: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            leaky_slope: crate::nn::DEFAULT_LEAKY_SLOPE,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Full-size hidden widths (512-512).
    pub fn paper() -> Self {
        Self {
            hidden: [512, 512],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig("classifier widths and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("classifier learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub net: ClassifierNet,
    /// Cross-entropy of each minibatch, in iteration order.
    pub losses: Vec<f64>,
}

/// Trains a softmax classifier by Adam on minibatches sampled with replacement.
pub fn train_classifier(
    features: &Matrix,
    labels: &[usize],
    n_classes: usize,
    config: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    config.validate()?;
    if features.rows() != labels.len() {
        return Err(Error::dim("train_classifier", features.rows(), labels.len()));
    }
    if features.rows() == 0 || n_classes == 0 {
        return Err(Error::InvalidArgument("classifier needs data and classes".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = ClassifierNet::init(
        features.cols(),
        config.hidden,
        n_classes,
        config.leaky_slope,
        &mut rng,
    )?;
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(config.learning_rate));
    let dist = Uniform::new(0, features.rows());
    let mut losses = Vec::with_capacity(config.iterations);
    let mut tape = GradientTape::new();
    for it in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| dist.sample(&mut rng)).collect();
        let x = features.select_rows(&idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        tape.clear();
        let probs = net.mlp.forward(&x, Some(&mut tape))?;
        let (loss, grad) = cross_entropy_grad(&probs, &y)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite classifier loss at iteration {}",
                it + 1
            )));
        }
        losses.push(loss);
        let (grads, _) = net.mlp.backward(&tape, &grad)?;
        adam.step(&mut net.param_blocks_mut(), &grad_blocks(&grads))?;
    }
    Ok(TrainedClassifier { net, losses })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Conventional zero-shot prediction: argmax over the untouched classes.
pub fn predict_zsl(cls_u: &ClassifierNet, x: &Matrix) -> Result<Vec<usize>> {
    let probs = cls_u.classify(x)?;
    Ok(probs.iter_rows().map(argmax).collect())
}

// ---------------------------------------------------------------------------
// Gaussian novelty gate

/// Diagonal Gaussian over touched tactile features plus the routing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianGate {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub threshold: Option<f64>,
}

impl GaussianGate {
    pub fn from_parts(mean: Vec<f64>, var: Vec<f64>, threshold: Option<f64>) -> Result<Self> {
        if mean.len() != var.len() || mean.is_empty() {
            return Err(Error::InvalidArgument(
                "gate mean and variance must be non-empty and equally long".into(),
            ));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("gate mean must be finite".into()));
        }
        if var.iter().any(|v| !(v.is_finite() && *v >= VARIANCE_FLOOR)) {
            return Err(Error::InvalidArgument(format!(
                "gate variances must be finite and >= {VARIANCE_FLOOR}"
            )));
        }
        if threshold.is_some_and(f64::is_nan) {
            return Err(Error::InvalidArgument("gate threshold is NaN".into()));
        }
        Ok(Self {
            mean,
            var,
            threshold,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_threshold(mut self, beta: f64) -> Self {
        self.threshold = Some(beta);
        self
    }

    /// `log p(x) = -1/2 Σ_j [ln(2π σ_j²) + (x_j − μ_j)² / σ_j²]`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("log_density", self.dim(), x.len()));
        }
        let tau = 2.0 * std::f64::consts::PI;
        Ok(-0.5
            * x.iter()
                .zip(&self.mean)
                .zip(&self.var)
                .map(|((&xi, &m), &v)| (tau * v).ln() + (xi - m) * (xi - m) / v)
                .sum::<f64>())
    }

    pub fn log_densities(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.log_density(r)).collect()
    }

    /// `true` routes to the touched classifier (`log p > β`, strictly).
    pub fn route(&self, x: &Matrix) -> Result<Vec<bool>> {
        let beta = self
            .threshold
            .ok_or_else(|| Error::InvalidArgument("gate threshold is unset".into()))?;
        Ok(self.log_densities(x)?.into_iter().map(|lp| lp > beta).collect())
    }
}

/// Maximum-likelihood diagonal Gaussian: sample mean and population variance,
/// the variance floored at [`VARIANCE_FLOOR`]. The threshold is left unset.
pub fn fit_gaussian(x: &Matrix) -> Result<GaussianGate> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fit_gaussian needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let n = x.rows() as f64;
    let mean = x.col_means();
    let mut var = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    for v in &mut var {
        *v = (*v / n).max(VARIANCE_FLOOR);
    }
    GaussianGate::from_parts(mean, var, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub beta: f64,
    pub score: f64,
    /// `(candidate β, score)` in ascending β order.
    pub curve: Vec<(f64, f64)>,
}

impl ThresholdSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("beta,score\n");
        for (b, s) in &self.curve {
            out.push_str(&format!("{b},{s}\n"));
        }
        out
    }
}

/// `½·frac(touched > β) + ½·frac(validation ≤ β)` by direct counting.
pub fn threshold_score(touched: &[f64], validation: &[f64], beta: f64) -> f64 {
    let above = touched.iter().filter(|&&t| t > beta).count() as f64 / touched.len() as f64;
    let below = validation.iter().filter(|&&v| v <= beta).count() as f64 / validation.len() as f64;
    0.5 * above + 0.5 * below
}

/// Picks β maximizing [`threshold_score`] over the distinct log-densities of both
/// sets plus ±∞; the smallest maximizing β wins ties.
pub fn tune_threshold_from_densities(touched: &[f64], validation: &[f64]) -> Result<ThresholdSweep> {
    if touched.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("threshold tuning needs non-empty sets".into()));
    }
    if touched.iter().chain(validation).any(|v| v.is_nan()) {
        return Err(Error::Numerical("NaN log-density during threshold tuning".into()));
    }
    let mut t = touched.to_vec();
    let mut v = validation.to_vec();
    t.sort_by(f64::total_cmp);
    v.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = t.iter().chain(&v).copied().collect();
    candidates.push(f64::NEG_INFINITY);
    candidates.push(f64::INFINITY);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let (nt, nv) = (t.len() as f64, v.len() as f64);
    let mut curve = Vec::with_capacity(candidates.len());
    let (mut best_beta, mut best_score) = (candidates[0], f64::NEG_INFINITY);
    for beta in candidates {
        let above = t.len() - t.partition_point(|&x| x <= beta);
        let below = v.partition_point(|&x| x <= beta);
        let score = 0.5 * above as f64 / nt + 0.5 * below as f64 / nv;
        if score > best_score {
            best_score = score;
            best_beta = beta;
        }
        curve.push((beta, score));
    }
    Ok(ThresholdSweep {
        beta: best_beta,
        score: best_score,
        curve,
    })
}

/// Tunes the gate threshold on touched and validation tactile features.
pub fn tune_threshold(gate: &GaussianGate, touched: &Matrix, validation: &Matrix) -> Result<ThresholdSweep> {
    let lt = gate.log_densities(touched)?;
    let lv = gate.log_densities(validation)?;
    tune_threshold_from_densities(&lt, &lv)
}

/// Generalized zero-shot prediction. Labels `0..n_t` are touched classes and
/// `n_t + j` is untouched class `j`.
pub fn predict_gzsl(
    gate: &GaussianGate,
    cls_t: &ClassifierNet,
    cls_u: &ClassifierNet,
    x: &Matrix,
) -> Result<Vec<usize>> {
    let routes = gate.route(x)?;
    let pt = cls_t.classify(x)?;
    let pu = cls_u.classify(x)?;
    let n_t = cls_t.n_classes();
    Ok(routes
        .iter()
        .enumerate()
        .map(|(i, &touched)| {
            if touched {
                argmax(pt.row(i))
            } else {
                n_t + argmax(pu.row(i))
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Mlp};

    fn uniform_classifier(d: usize, n: usize) -> ClassifierNet {
        ClassifierNet {
            mlp: Mlp::new(vec![
                DenseLayer::zeros(d, 2, Activation::LeakyRelu),
                DenseLayer::zeros(2, 2, Activation::LeakyRelu),
                DenseLayer::zeros(2, n, Activation::Softmax),
            ])
            .unwrap(),
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn uniform_classifier_predicts_zero() {
        let c = uniform_classifier(3, 4);
        assert_eq!(predict_zsl(&c, &Matrix::filled(5, 3, 0.7)).unwrap(), vec![0; 5]);
        assert!(predict_zsl(&c, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn gaussian_two_point_fit() {
        let x = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let g = fit_gaussian(&x).unwrap();
        assert_eq!(g.mean, vec![1.0]);
        assert_eq!(g.var, vec![1.0]);
        assert!(g.threshold.is_none());
    }

    #[test]
    fn constant_rows_hit_floor() {
        let g = fit_gaussian(&Matrix::filled(4, 3, 2.5)).unwrap();
        assert_eq!(g.var, vec![VARIANCE_FLOOR; 3]);
        assert!(g.log_density(&[2.5; 3]).unwrap().is_finite());
        assert!(fit_gaussian(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn density_peaks_at_mean() {
        let g = GaussianGate::from_parts(vec![1.0, -1.0], vec![4.0, 0.25], None).unwrap();
        let at_mean = g.log_density(&[1.0, -1.0]).unwrap();
        let off = g.log_density(&[1.0 + 6.0, -1.0 + 1.5]).unwrap();
        assert!(at_mean > off);
        let expected = -0.5 * ((2.0 * std::f64::consts::PI * 4.0).ln() + (2.0 * std::f64::consts::PI * 0.25).ln());
        assert!((at_mean - expected).abs() < 1e-12);
    }

    #[test]
    fn separated_sets_pick_smallest_perfect_beta() {
        let s = tune_threshold_from_densities(&[10.0, 11.0], &[-5.0, -4.0]).unwrap();
        assert_eq!(s.score, 1.0);
        assert_eq!(s.beta, -4.0);
    }

    #[test]
    fn singleton_sets() {
        let s = tune_threshold_from_densities(&[1.0], &[0.0]).unwrap();
        assert_eq!(s.score, 1.0);
        assert!((0.0..1.0).contains(&s.beta));
    }

    #[test]
    fn identical_sets_score_half() {
        let d = [0.3, -1.2, 4.0];
        let s = tune_threshold_from_densities(&d, &d).unwrap();
        assert_eq!(s.score, 0.5);
        assert_eq!(s.beta, f64::NEG_INFINITY);
        assert!(tune_threshold_from_densities(&[], &d).is_err());
    }

    #[test]
    fn boundary_routes_untouched() {
        let g = GaussianGate::from_parts(vec![0.0], vec![1.0], None).unwrap();
        let lp = g.log_density(&[0.5]).unwrap();
        let x = Matrix::from_rows(&[[0.5]]).unwrap();
        assert!(g.route(&x).is_err());
        let g = g.with_threshold(lp);
        assert_eq!(g.route(&x).unwrap(), vec![false]);
        let cls_t = uniform_classifier(1, 3);
        let cls_u = uniform_classifier(1, 2);
        assert_eq!(predict_gzsl(&g, &cls_t, &cls_u, &x).unwrap(), vec![3]);
        let at_mean = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(predict_gzsl(&g, &cls_t, &cls_u, &at_mean).unwrap(), vec![0]);
    }

    #[test]
    fn separable_clusters_train_to_full_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = Matrix::randn(200, 2, &mut rng).scale(0.3);
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        for (i, &y) in labels.iter().enumerate() {
            let shift = if y == 0 { -2.0 } else { 2.0 };
            x.set(i, 0, x.get(i, 0) + shift);
        }
        let cfg = ClassifierConfig {
            iterations: 500,
            ..ClassifierConfig::default()
        };
        let fit = train_classifier(&x, &labels, 2, &cfg).unwrap();
        let pred = predict_zsl(&fit.net, &x).unwrap();
        let acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(acc >= 0.99, "accuracy {acc}");
        assert_eq!(fit.losses.len(), 500);
    }

    #[test]
    fn classifier_rejects_bad_labels() {
        let x = Matrix::zeros(3, 2);
        assert!(train_classifier(&x, &[0, 1, 2], 2, &ClassifierConfig::default()).is_err());
    }

    #[test]
    fn dense_label_mapping() {
        assert_eq!(dense_labels(&[7, 3, 7], &[3, 7]).unwrap(), vec![1, 0, 1]);
        assert!(dense_labels(&[1], &[3]).is_err());
    }
}
