//! Multimodal dataset model, class splits and the synthetic data generator.
//!
//! Tactile rows of untouched classes may be present (as evaluation ground truth),
//! but the accessors used for training never hand them out: the generator and the
//! touched-class classifier only ever see a [`TouchedSet`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::FeatureDims;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Touched,
    Validation,
    Untouched,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dims: FeatureDims,
    pub classes: Vec<ClassInfo>,
}

impl DatasetMeta {
    /// Checks that class ids are unique, so no class sits in two splits.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for c in &self.classes {
            if let Some(prev) = seen.insert(c.id, c.split) {
                return Err(Error::Data(format!(
                    "class id {} listed twice ({prev:?} and {:?})",
                    c.id, c.split
                )));
            }
        }
        Ok(())
    }

    pub fn split_of(&self, id: usize) -> Option<Split> {
        self.classes.iter().find(|c| c.id == id).map(|c| c.split)
    }

    /// Class ids of one split in ascending order.
    pub fn class_ids(&self, split: Split) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .classes
            .iter()
            .filter(|c| c.split == split)
            .map(|c| c.id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Features with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Visual and semantic exemplars describing one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDescriptor {
    pub label: usize,
    pub visual: Matrix,
    pub semantic: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub visual: Matrix,
    pub semantic: Matrix,
    pub tactile: Option<Matrix>,
    pub labels: Vec<usize>,
    /// Optional acquisition position per row; carried through files, unused otherwise.
    pub locations: Option<Vec<u32>>,
}

/// Which touched rows to take. Every `stride`-th row of each class (the last of
/// each group of `stride`) is held out for touched-class testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TouchedPart {
    All,
    Train { stride: usize },
    Test { stride: usize },
}

impl TouchedPart {
    fn keeps(self, ordinal: usize) -> bool {
        match self {
            TouchedPart::All => true,
            TouchedPart::Train { stride } => stride < 2 || ordinal % stride != stride - 1,
            TouchedPart::Test { stride } => stride >= 2 && ordinal % stride == stride - 1,
        }
    }
}

/// Training data from touched classes only.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchedSet {
    tactile: Matrix,
    visual: Matrix,
    semantic: Matrix,
    labels: Vec<usize>,
}

impl TouchedSet {
    /// Validates that every label belongs to a touched class of `meta`.
    pub fn new(
        meta: &DatasetMeta,
        tactile: Matrix,
        visual: Matrix,
        semantic: Matrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if tactile.rows() != n || visual.rows() != n || semantic.rows() != n {
            return Err(Error::Data("touched set rows disagree".into()));
        }
        let FeatureDims { d_v, d_s, d_x } = meta.dims;
        if tactile.cols() != d_x || visual.cols() != d_v || semantic.cols() != d_s {
            return Err(Error::dim(
                "TouchedSet::new",
                format!("d_x={d_x} d_v={d_v} d_s={d_s}"),
                format!("{} {} {}", tactile.cols(), visual.cols(), semantic.cols()),
            ));
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&y| meta.split_of(y) != Some(Split::Touched))
        {
            return Err(Error::Data(format!(
                "label {bad} is not a touched class; untouched data may not enter training"
            )));
        }
        Ok(Self {
            tactile,
            visual,
            semantic,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tactile(&self) -> &Matrix {
        &self.tactile
    }

    pub fn visual(&self) -> &Matrix {
        &self.visual
    }

    pub fn semantic(&self) -> &Matrix {
        &self.semantic
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self, indices: &[usize]) -> TouchedBatch {
        TouchedBatch {
            tactile: self.tactile.select_rows(indices),
            visual: self.visual.select_rows(indices),
            semantic: self.semantic.select_rows(indices),
        }
    }
}

/// One minibatch of paired touched samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TouchedBatch {
    pub tactile: Matrix,
    pub visual: Matrix,
    pub semantic: Matrix,
}

impl Dataset {
    pub fn new(
        meta: DatasetMeta,
        visual: Matrix,
        semantic: Matrix,
        tactile: Option<Matrix>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let ds = Self {
            meta,
            visual,
            semantic,
            tactile,
            labels,
            locations: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let n = self.labels.len();
        let FeatureDims { d_v, d_s, d_x } = self.meta.dims;
        let check = |what: &str, m: &Matrix, cols: usize| -> Result<()> {
            if m.rows() != n || m.cols() != cols {
                return Err(Error::Data(format!(
                    "{what} matrix is {}x{}, expected {n}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            if !m.is_finite() {
                return Err(Error::Data(format!("{what} matrix has non-finite values")));
            }
            Ok(())
        };
        check("visual", &self.visual, d_v)?;
        check("semantic", &self.semantic, d_s)?;
        if let Some(t) = &self.tactile {
            check("tactile", t, d_x)?;
        }
        if self.semantic.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data("semantic entries must be 0 or 1".into()));
        }
        let known: BTreeSet<usize> = self.meta.classes.iter().map(|c| c.id).collect();
        if let Some(bad) = self.labels.iter().find(|y| !known.contains(y)) {
            return Err(Error::Data(format!("label {bad} has no class entry")));
        }
        if let Some(loc) = &self.locations {
            if loc.len() != n {
                return Err(Error::Data("locations length differs from row count".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn rows_where(&self, keep: impl Fn(usize, usize) -> bool) -> Vec<usize> {
        // keep(label, ordinal within class)
        let mut ordinal: BTreeMap<usize, usize> = BTreeMap::new();
        let mut out = Vec::new();
        for (i, &y) in self.labels.iter().enumerate() {
            let k = ordinal.entry(y).or_insert(0);
            if keep(y, *k) {
                out.push(i);
            }
            *k += 1;
        }
        out
    }

    fn split_rows(&self, split: Split) -> Vec<usize> {
        self.rows_where(|y, _| self.meta.split_of(y) == Some(split))
    }

    fn tactile_or_err(&self) -> Result<&Matrix> {
        self.tactile
            .as_ref()
            .ok_or_else(|| Error::Data("dataset has no tactile features".into()))
    }

    /// Touched-class rows for training or touched-class testing.
    pub fn touched(&self, part: TouchedPart) -> Result<TouchedSet> {
        let rows = self.rows_where(|y, k| {
            self.meta.split_of(y) == Some(Split::Touched) && part.keeps(k)
        });
        if rows.is_empty() {
            return Err(Error::Data("touched split is empty".into()));
        }
        let tactile = self.tactile_or_err()?;
        TouchedSet::new(
            &self.meta,
            tactile.select_rows(&rows),
            self.visual.select_rows(&rows),
            self.semantic.select_rows(&rows),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Tactile rows of the validation classes, used to tune the novelty threshold.
    pub fn validation_tactile(&self) -> Result<LabeledFeatures> {
        let rows = self.split_rows(Split::Validation);
        if rows.is_empty() {
            return Err(Error::Data("validation split is empty".into()));
        }
        Ok(LabeledFeatures {
            features: self.tactile_or_err()?.select_rows(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// Visual and semantic exemplars of every untouched class, without tactile data.
    pub fn untouched_descriptors(&self) -> Result<Vec<ClassDescriptor>> {
        let ids = self.meta.class_ids(Split::Untouched);
        if ids.is_empty() {
            return Err(Error::Data("untouched split is empty".into()));
        }
        ids.into_iter()
            .map(|id| {
                let rows = self.rows_where(|y, _| y == id);
                if rows.is_empty() {
                    return Err(Error::Data(format!("untouched class {id} has no rows")));
                }
                Ok(ClassDescriptor {
                    label: id,
                    visual: self.visual.select_rows(&rows),
                    semantic: self.semantic.select_rows(&rows),
                })
            })
            .collect()
    }

    /// Real tactile rows of untouched classes. Evaluation only.
    pub fn untouched_ground_truth(&self) -> Result<LabeledFeatures> {
        let rows = self.split_rows(Split::Untouched);
        if rows.is_empty() {
            return Err(Error::Data("untouched split is empty".into()));
        }
        Ok(LabeledFeatures {
            features: self.tactile_or_err()?.select_rows(&rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Semantic attributes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub names: Vec<String>,
    /// Index pairs of which at most one attribute may be true.
    pub exclusive_pairs: Vec<(usize, usize)>,
}

const FABRIC_ATTRIBUTES: [&str; 24] = [
    "stiff",
    "soft",
    "rough",
    "smooth",
    "thick",
    "thin",
    "cool",
    "warm",
    "fluffy",
    "heavy",
    "delicate",
    "durable",
    "stretchable",
    "absorbent",
    "holey",
    "flat",
    "bumpy",
    "patterned",
    "striped",
    "shiny",
    "hairy",
    "embroidered",
    "jacquard",
    "pigment printed",
];

impl AttributeSchema {
    pub fn new(names: Vec<String>, exclusive_pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut used = BTreeSet::new();
        for &(a, b) in &exclusive_pairs {
            if a == b || a >= names.len() || b >= names.len() {
                return Err(Error::InvalidConfig(format!("bad exclusive pair ({a}, {b})")));
            }
            if !used.insert(a) || !used.insert(b) {
                return Err(Error::InvalidConfig("exclusive pairs must be disjoint".into()));
            }
        }
        Ok(Self {
            names,
            exclusive_pairs,
        })
    }

    /// The 24 fabric attributes; stiff/soft, rough/smooth and thick/thin exclude each other.
    pub fn fabric() -> Self {
        Self {
            names: FABRIC_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            exclusive_pairs: vec![(0, 1), (2, 3), (4, 5)],
        }
    }

    /// Anonymous schema of `len` attributes with the first `pairs` pairs exclusive.
    pub fn generic(len: usize, pairs: usize) -> Result<Self> {
        if 2 * pairs > len {
            return Err(Error::InvalidConfig(format!(
                "{pairs} exclusive pairs do not fit in {len} attributes"
            )));
        }
        Self::new(
            (0..len).map(|i| format!("attr{i}")).collect(),
            (0..pairs).map(|k| (2 * k, 2 * k + 1)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Binary semantic vector: true becomes 1, false 0, position by position.
pub fn one_hot_encode(attributes: &[bool], schema: &AttributeSchema) -> Result<Vec<f64>> {
    if attributes.len() != schema.len() {
        return Err(Error::dim("one_hot_encode", schema.len(), attributes.len()));
    }
    for &(a, b) in &schema.exclusive_pairs {
        if attributes[a] && attributes[b] {
            return Err(Error::InvalidArgument(format!(
                "attributes '{}' and '{}' are mutually exclusive",
                schema.names[a], schema.names[b]
            )));
        }
    }
    Ok(attributes.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect())
}

// ---------------------------------------------------------------------------
// Class splits

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub touched: Vec<usize>,
    pub validation: Vec<usize>,
    pub untouched: Vec<usize>,
}

impl SplitAssignment {
    pub fn split_of(&self, id: usize) -> Option<Split> {
        if self.touched.contains(&id) {
            Some(Split::Touched)
        } else if self.validation.contains(&id) {
            Some(Split::Validation)
        } else if self.untouched.contains(&id) {
            Some(Split::Untouched)
        } else {
            None
        }
    }
}

/// Split sizes for `n` classes by `ratios` (largest-remainder rounding, each split >= 1).
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 classes to fill touched/validation/untouched, got {n}"
        )));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument("split ratios must be positive".into()));
    }
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut counts: [usize; 3] = [0; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    for i in 0..3 {
        if counts[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    Ok(counts)
}

/// Seeded uniform random partition of `class_ids` into the three splits.
pub fn split_classes(class_ids: &[usize], ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    let counts = split_counts(class_ids.len(), ratios)?;
    partition_by_counts(class_ids, counts, seed)
}

pub(crate) fn partition_by_counts(
    class_ids: &[usize],
    counts: [usize; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if counts.iter().sum::<usize>() != class_ids.len() {
        return Err(Error::InvalidArgument("split counts do not cover all classes".into()));
    }
    let mut ids = class_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut touched = ids[..counts[0]].to_vec();
    let mut validation = ids[counts[0]..counts[0] + counts[1]].to_vec();
    let mut untouched = ids[counts[0] + counts[1]..].to_vec();
    touched.sort_unstable();
    validation.sort_unstable();
    untouched.sort_unstable();
    Ok(SplitAssignment {
        touched,
        validation,
        untouched,
    })
}

// ---------------------------------------------------------------------------
// Synthetic multimodal data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub touched: usize,
    pub validation: usize,
    pub untouched: usize,
    pub dims: FeatureDims,
    pub samples_per_class: usize,
    pub noise: f64,
    pub exclusive_pairs: usize,
    /// Gives the second untouched class the semantic vector of the first.
    pub shared_untouched_semantics: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            touched: 10,
            validation: 2,
            untouched: 3,
            dims: FeatureDims {
                d_v: 32,
                d_s: 16,
                d_x: 24,
            },
            samples_per_class: 60,
            noise: 0.1,
            exclusive_pairs: 3,
            shared_untouched_semantics: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.touched == 0 || self.validation == 0 || self.untouched == 0 {
            return Err(Error::InvalidConfig("every split needs at least one class".into()));
        }
        let FeatureDims { d_v, d_s, d_x } = self.dims;
        if d_v == 0 || d_s == 0 || d_x == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("dimensions and sample counts must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::InvalidConfig("noise must be finite and >= 0".into()));
        }
        if 2 * self.exclusive_pairs > d_s {
            return Err(Error::InvalidConfig("exclusive pairs exceed d_s".into()));
        }
        if self.shared_untouched_semantics && self.untouched < 2 {
            return Err(Error::InvalidConfig(
                "shared untouched semantics needs two untouched classes".into(),
            ));
        }
        Ok(())
    }
}

/// Rounds to the nearest `f32` so values survive the on-disk format unchanged.
#[inline]
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// Generates a dataset with a shared smooth map from (visual, semantic) class
/// prototypes to tactile prototypes.
///
/// Per class: a semantic vector with one true attribute per exclusive pair and
/// fair coin flips elsewhere, a visual prototype `p ~ N(0, I)`, and a tactile
/// prototype `q = tanh(A [p ; s] + b)` where `A`, `b` are drawn once for all
/// classes. Rows are `v = p + noise`, `x = q + noise`, `s` exact.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let FeatureDims { d_v, d_s, d_x } = cfg.dims;
    let n_classes = cfg.touched + cfg.validation + cfg.untouched;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let d_in = d_v + d_s;
    let a_scale = 1.0 / (d_in as f64).sqrt();
    let map = Matrix::randn(d_in, d_x, &mut rng).scale(a_scale);
    let offset: Vec<f64> = (0..d_x)
        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let ids: Vec<usize> = (0..n_classes).collect();
    let assign = partition_by_counts(
        &ids,
        [cfg.touched, cfg.validation, cfg.untouched],
        rng.gen(),
    )?;

    let mut semantics = Vec::with_capacity(n_classes);
    let mut visual_protos = Vec::with_capacity(n_classes);
    for _ in 0..n_classes {
        let mut s = vec![0.0; d_s];
        for k in 0..cfg.exclusive_pairs {
            let pick = if rng.gen_bool(0.5) { 2 * k } else { 2 * k + 1 };
            s[pick] = 1.0;
        }
        for v in s.iter_mut().skip(2 * cfg.exclusive_pairs) {
            *v = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        }
        semantics.push(s);
        visual_protos.push(
            (0..d_v)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>(),
        );
    }
    if cfg.shared_untouched_semantics {
        let (a, b) = (assign.untouched[0], assign.untouched[1]);
        semantics[b] = semantics[a].clone();
    }

    let n = n_classes * cfg.samples_per_class;
    let mut visual = Matrix::zeros(n, d_v);
    let mut semantic = Matrix::zeros(n, d_s);
    let mut tactile = Matrix::zeros(n, d_x);
    let mut labels = Vec::with_capacity(n);
    for c in 0..n_classes {
        let z: Vec<f64> = visual_protos[c].iter().chain(&semantics[c]).copied().collect();
        let pre = Matrix::row_vector(&z).matmul(&map)?;
        let proto: Vec<f64> = pre
            .data()
            .iter()
            .zip(&offset)
            .map(|(p, b)| (p + b).tanh())
            .collect();
        for i in 0..cfg.samples_per_class {
            let r = c * cfg.samples_per_class + i;
            for (dst, &p) in visual.row_mut(r).iter_mut().zip(&visual_protos[c]) {
                let e: f64 = rng.sample(StandardNormal);
                *dst = f32_exact(p + cfg.noise * e);
            }
            semantic.row_mut(r).copy_from_slice(&semantics[c]);
            for (dst, &q) in tactile.row_mut(r).iter_mut().zip(&proto) {
                let e: f64 = rng.sample(StandardNormal);
                *dst = f32_exact(q + cfg.noise * e);
            }
            labels.push(c);
        }
    }

    let classes = ids
        .iter()
        .map(|&id| ClassInfo {
            name: format!("class_{id:02}"),
            id,
            split: assign.split_of(id).expect("every class is assigned"),
        })
        .collect();
    Dataset::new(
        DatasetMeta {
            dims: cfg.dims,
            classes,
        },
        visual,
        semantic,
        Some(tactile),
        labels,
    )
}
