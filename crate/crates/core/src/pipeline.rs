//! End-to-end runs: training, conventional and generalized zero-shot evaluation,
//! diagnostics and the component ablation suite.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{Dataset, LabeledFeatures, Split, TouchedPart};
use crate::error::{Error, Result};
use crate::metrics::{
    average_accuracy, confusion_matrix, harmonic_mean, mean_cosine_similarity, pca_2d,
    sliced_wasserstein, ConfusionMatrix, EvalReport, Pca2d,
};
use crate::networks::{ClassifierNet, ModelConfig, VaeGanModel};
use crate::nn::Matrix;
use crate::trainer::{train, TrainLog};
use crate::zsl::{
    dense_labels, fit_gaussian, predict_gzsl, predict_zsl, synthesize_features, train_classifier,
    tune_threshold, GaussianGate, SynthesisRequest, ThresholdSweep,
};

fn check_dims(model: &VaeGanModel, ds: &Dataset) -> Result<()> {
    if model.config.dims != ds.meta.dims {
        return Err(Error::Data(format!(
            "model dims {:?} differ from dataset dims {:?}",
            model.config.dims, ds.meta.dims
        )));
    }
    Ok(())
}

fn class_name(ds: &Dataset, id: usize) -> String {
    ds.meta
        .classes
        .iter()
        .find(|c| c.id == id)
        .map(|c| c.name.clone())
        .unwrap_or_else(|| id.to_string())
}

/// Builds a model sized for `ds` and trains it on the touched training rows.
pub fn train_model(ds: &Dataset, cfg: &RunConfig) -> Result<(VaeGanModel, TrainLog)> {
    let mut cfg = cfg.clone();
    cfg.adopt_dims(ds.meta.dims);
    cfg.validate()?;
    let set = ds.touched(TouchedPart::Train {
        stride: cfg.holdout_stride,
    })?;
    let mut model = VaeGanModel::new(cfg.model.clone(), cfg.seed)?;
    let log = train(&mut model, &set, &cfg.train)?;
    Ok((model, log))
}

/// Synthesized features for every untouched class of `ds`.
pub fn synthesize_untouched(model: &VaeGanModel, ds: &Dataset, cfg: &RunConfig) -> Result<LabeledFeatures> {
    check_dims(model, ds)?;
    let mut req = SynthesisRequest::new(ds.untouched_descriptors()?, cfg.seed);
    req.per_class_count = cfg.per_class_count;
    synthesize_features(model, &req)
}

#[derive(Debug, Clone)]
pub struct ZslOutcome {
    pub report: EvalReport,
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
    pub synthetic: LabeledFeatures,
    pub classifier: ClassifierNet,
}

/// Conventional zero-shot evaluation on the real untouched rows.
pub fn run_zsl(model: &VaeGanModel, ds: &Dataset, cfg: &RunConfig) -> Result<ZslOutcome> {
    let synthetic = synthesize_untouched(model, ds, cfg)?;
    let ids = ds.meta.class_ids(Split::Untouched);
    let y_syn = dense_labels(&synthetic.labels, &ids)?;
    let fit = train_classifier(&synthetic.features, &y_syn, ids.len(), &cfg.classifier)?;

    let truth = ds.untouched_ground_truth()?;
    let y_true = dense_labels(&truth.labels, &ids)?;
    let pred = predict_zsl(&fit.net, &truth.features)?;
    let acc = average_accuracy(&pred, &y_true)?;
    let confusion = confusion_matrix(&pred, &y_true, ids.len())?;
    let class_names: Vec<String> = ids.iter().map(|&id| class_name(ds, id)).collect();

    let wasserstein = sliced_wasserstein(&synthetic.features, &truth.features, cfg.projections, cfg.seed)?;
    let mean_cosine = mean_cosine_similarity(
        &synthetic.features,
        &synthetic.labels,
        &truth.features,
        &truth.labels,
        cfg.cosine_mode,
    )?;
    let report = EvalReport {
        mode: "zsl".into(),
        per_class_accuracy: acc
            .per_class
            .iter()
            .map(|(&c, &a)| (class_names[c].clone(), a))
            .collect(),
        average_accuracy: acc.average,
        confusion: confusion.counts.clone(),
        wasserstein: Some(wasserstein),
        mean_cosine: Some(mean_cosine),
        ..EvalReport::default()
    };
    Ok(ZslOutcome {
        report,
        confusion,
        class_names,
        synthetic,
        classifier: fit.net,
    })
}

#[derive(Debug, Clone)]
pub struct GzslOutcome {
    pub report: EvalReport,
    pub confusion: ConfusionMatrix,
    pub class_names: Vec<String>,
    pub gate: GaussianGate,
    pub sweep: ThresholdSweep,
}

/// Generalized zero-shot evaluation. Test rows are the touched holdout plus all
/// untouched rows; labels are touched classes first, then untouched.
pub fn run_gzsl(model: &VaeGanModel, ds: &Dataset, cfg: &RunConfig) -> Result<GzslOutcome> {
    check_dims(model, ds)?;
    let touched_ids = ds.meta.class_ids(Split::Touched);
    let untouched_ids = ds.meta.class_ids(Split::Untouched);
    let n_t = touched_ids.len();

    let train_set = ds.touched(TouchedPart::Train {
        stride: cfg.holdout_stride,
    })?;
    let test_set = ds.touched(TouchedPart::Test {
        stride: cfg.holdout_stride,
    })?;
    let y_train = dense_labels(train_set.labels(), &touched_ids)?;
    let cls_t = train_classifier(train_set.tactile(), &y_train, n_t, &cfg.classifier)?.net;

    let zsl = run_zsl(model, ds, cfg)?;
    let cls_u = zsl.classifier;

    let gate = fit_gaussian(train_set.tactile())?;
    let validation = ds.validation_tactile()?;
    let sweep = tune_threshold(&gate, train_set.tactile(), &validation.features)?;
    let gate = gate.with_threshold(sweep.beta);

    let y_t_test = dense_labels(test_set.labels(), &touched_ids)?;
    let pred_t = predict_gzsl(&gate, &cls_t, &cls_u, test_set.tactile())?;
    let truth_u = ds.untouched_ground_truth()?;
    let y_u_test: Vec<usize> = dense_labels(&truth_u.labels, &untouched_ids)?
        .into_iter()
        .map(|y| n_t + y)
        .collect();
    let pred_u = predict_gzsl(&gate, &cls_t, &cls_u, &truth_u.features)?;

    let acc_t = average_accuracy(&pred_t, &y_t_test)?;
    let acc_u = average_accuracy(&pred_u, &y_u_test)?;
    let h = harmonic_mean(acc_t.average, acc_u.average);

    let all_pred: Vec<usize> = pred_t.iter().chain(&pred_u).copied().collect();
    let all_true: Vec<usize> = y_t_test.iter().chain(&y_u_test).copied().collect();
    let n = n_t + untouched_ids.len();
    let confusion = confusion_matrix(&all_pred, &all_true, n)?;
    let class_names: Vec<String> = touched_ids
        .iter()
        .chain(&untouched_ids)
        .map(|&id| class_name(ds, id))
        .collect();
    let overall = average_accuracy(&all_pred, &all_true)?;

    let report = EvalReport {
        mode: "gzsl".into(),
        per_class_accuracy: overall
            .per_class
            .iter()
            .map(|(&c, &a)| (class_names[c].clone(), a))
            .collect(),
        average_accuracy: overall.average,
        acc_t: Some(acc_t.average),
        acc_u: Some(acc_u.average),
        h: Some(h),
        gate_score: Some(sweep.score),
        threshold: Some(sweep.beta),
        confusion: confusion.counts.clone(),
        wasserstein: zsl.report.wasserstein,
        mean_cosine: zsl.report.mean_cosine,
    };
    Ok(GzslOutcome {
        report,
        confusion,
        class_names,
        gate,
        sweep,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub wasserstein: f64,
    pub mean_cosine: f64,
    pub projections: usize,
    pub seed: u64,
    pub explained_variance: [f64; 2],
}

/// Class id and synthetic flag of each PCA row.
pub type RowTags = Vec<(usize, bool)>;

/// Wasserstein, cosine and a shared PCA of real and synthesized untouched features.
///
/// The PCA rows are the real rows first, then the synthesized rows; the returned
/// tags mark each row (`false` real, `true` synthetic) alongside its class id.
pub fn diagnostics(
    model: &VaeGanModel,
    ds: &Dataset,
    cfg: &RunConfig,
) -> Result<(Diagnostics, Pca2d, RowTags)> {
    let synthetic = synthesize_untouched(model, ds, cfg)?;
    let truth = ds.untouched_ground_truth()?;
    let wasserstein = sliced_wasserstein(&synthetic.features, &truth.features, cfg.projections, cfg.seed)?;
    let mean_cosine = mean_cosine_similarity(
        &synthetic.features,
        &synthetic.labels,
        &truth.features,
        &truth.labels,
        cfg.cosine_mode,
    )?;
    let stacked = Matrix::vstack(&[&truth.features, &synthetic.features])?;
    let pca = pca_2d(&stacked)?;
    let tags = truth
        .labels
        .iter()
        .map(|&y| (y, false))
        .chain(synthetic.labels.iter().map(|&y| (y, true)))
        .collect();
    Ok((
        Diagnostics {
            wasserstein,
            mean_cosine,
            projections: cfg.projections,
            seed: cfg.seed,
            explained_variance: pca.explained,
        },
        pca,
        tags,
    ))
}

/// The four encoder/fusion combinations compared in the ablation suite.
pub const ABLATIONS: [(&str, bool, bool); 4] = [
    ("baseline", false, false),
    ("encoder_only", true, false),
    ("fusion_only", false, true),
    ("full", true, true),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_encoder: bool,
    pub use_fusion: bool,
    pub seed: u64,
    pub accuracy: f64,
    pub wasserstein: f64,
    pub mean_cosine: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    /// Mean accuracy per variant.
    pub mean_accuracy: BTreeMap<String, f64>,
    /// Mean sliced Wasserstein per variant.
    pub mean_wasserstein: BTreeMap<String, f64>,
    /// Seeds on which `full` had the lowest Wasserstein among all variants.
    pub full_lowest_wasserstein_seeds: usize,
}

impl AblationSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,use_encoder,use_fusion,seed,accuracy,wasserstein,mean_cosine\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.variant, r.use_encoder, r.use_fusion, r.seed, r.accuracy, r.wasserstein, r.mean_cosine
            ));
        }
        out
    }
}

/// Trains and evaluates one ablation variant on `ds`.
pub fn run_variant(ds: &Dataset, cfg: &RunConfig, use_encoder: bool, use_fusion: bool) -> Result<ZslOutcome> {
    let mut cfg = cfg.clone();
    cfg.model = ModelConfig {
        use_encoder,
        use_fusion,
        ..cfg.model
    };
    let (model, _) = train_model(ds, &cfg)?;
    run_zsl(&model, ds, &cfg)
}

/// Runs every ablation variant for each seed. `dataset_for(seed)` supplies the
/// data, so callers choose whether data varies with the seed.
pub fn ablation_suite<F>(cfg: &RunConfig, seeds: &[u64], mut dataset_for: F) -> Result<AblationSummary>
where
    F: FnMut(u64) -> Result<Dataset>,
{
    let mut summary = AblationSummary::default();
    for &seed in seeds {
        let ds = dataset_for(seed)?;
        let run_cfg = cfg.clone().with_seed(seed);
        let mut best: Option<(String, f64)> = None;
        for (name, enc, fus) in ABLATIONS {
            let out = run_variant(&ds, &run_cfg, enc, fus)?;
            let w = out.report.wasserstein.unwrap_or(f64::NAN);
            log::info!(
                "ablation seed {seed} {name}: accuracy {:.4} wasserstein {:.4}",
                out.report.average_accuracy,
                w
            );
            if best.as_ref().is_none_or(|(_, bw)| w < *bw) {
                best = Some((name.to_string(), w));
            }
            summary.rows.push(AblationRow {
                variant: name.into(),
                use_encoder: enc,
                use_fusion: fus,
                seed,
                accuracy: out.report.average_accuracy,
                wasserstein: w,
                mean_cosine: out.report.mean_cosine.unwrap_or(f64::NAN),
            });
        }
        if best.is_some_and(|(n, _)| n == "full") {
            summary.full_lowest_wasserstein_seeds += 1;
        }
    }
    for (name, _, _) in ABLATIONS {
        let rows: Vec<&AblationRow> = summary.rows.iter().filter(|r| r.variant == name).collect();
        let k = rows.len().max(1) as f64;
        summary
            .mean_accuracy
            .insert(name.into(), rows.iter().map(|r| r.accuracy).sum::<f64>() / k);
        summary
            .mean_wasserstein
            .insert(name.into(), rows.iter().map(|r| r.wasserstein).sum::<f64>() / k);
    }
    Ok(summary)
}
