//! Binary and JSON file formats.
//!
//! Feature matrix (`.vszt`): `b"VSZT"`, u32 LE version (1), u32 LE rows,
//! u32 LE cols, then `rows * cols` f32 LE values row-major. Values are widened
//! to f64 on load and narrowed to f32 on save.
//!
//! Labels: one u32 LE per row, no header.
//!
//! Model container (`.bin`): `b"VSZM"`, u32 LE version (1), u32 LE network
//! count, then per network: u32 name length, name bytes, u32 layer count and per
//! layer u32 in_dim, u32 out_dim, u8 activation tag, in_dim*out_dim f64 LE
//! weights row-major, out_dim f64 LE bias. After the networks: u32 section count,
//! then per section u32 name length, name bytes, u64 payload length, payload.
//! Sections: `META` (JSON model configuration) and optionally `GATE`
//! (u32 dim, dim f64 means, dim f64 variances, f64 threshold or NaN when unset).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClassInfo, Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::networks::{
    DiscriminatorNet, EncoderNet, FeatureDims, FusionNet, GeneratorNet, ModelConfig, VaeGanModel,
};
use crate::nn::{Activation, DenseLayer, Matrix, Mlp};
use crate::zsl::GaussianGate;

pub const MATRIX_MAGIC: [u8; 4] = *b"VSZT";
pub const MODEL_MAGIC: [u8; 4] = *b"VSZM";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Bounds-checked little-endian reader over a byte slice.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(
                self.path,
                format!("truncated: need {n} bytes at offset {}", self.pos),
            )),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("name is not UTF-8"))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(&expected)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Feature matrices and labels

pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::InvalidArgument("too many rows".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::InvalidArgument("too many cols".into()))?;
    let mut out = Vec::with_capacity(16 + 4 * m.data().len());
    out.extend_from_slice(&MATRIX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let mut r = Reader::new(bytes, path);
    r.magic(MATRIX_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| r.err("size overflow"))?;
    let data = r
        .take(n)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    r.finish()?;
    Matrix::from_vec(rows, cols, data)
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_file(path, &encode_matrix(m)?)
}

pub fn load_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&read_file(path)?, path)
}

pub fn encode_u32s(values: &[u32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_u32s(bytes: &[u8], path: &Path) -> Result<Vec<u32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::format(path, "truncated: length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let v: Vec<u32> = labels
        .iter()
        .map(|&l| u32::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} too large"))))
        .collect::<Result<_>>()?;
    write_file(path, &encode_u32s(&v))
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    Ok(decode_u32s(&read_file(path)?, path)?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

// ---------------------------------------------------------------------------
// Dataset manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub visual: String,
    pub semantic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tactile: Option<String>,
    pub labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locations: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dims: FeatureDims,
    pub classes: Vec<ClassInfo>,
    pub files: ManifestFiles,
}

/// Writes the dataset as a manifest plus matrix files into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = ManifestFiles {
        visual: "visual.vszt".into(),
        semantic: "semantic.vszt".into(),
        tactile: ds.tactile.as_ref().map(|_| "tactile.vszt".into()),
        labels: "labels.u32".into(),
        locations: ds.locations.as_ref().map(|_| "locations.u32".into()),
    };
    save_matrix(&dir.join(&files.visual), &ds.visual)?;
    save_matrix(&dir.join(&files.semantic), &ds.semantic)?;
    if let (Some(t), Some(name)) = (&ds.tactile, &files.tactile) {
        save_matrix(&dir.join(name), t)?;
    }
    save_labels(&dir.join(&files.labels), &ds.labels)?;
    if let (Some(loc), Some(name)) = (&ds.locations, &files.locations) {
        write_file(&dir.join(name), &encode_u32s(loc))?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        dims: ds.meta.dims,
        classes: ds.meta.classes.clone(),
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(path)
}

/// Loads a dataset from a manifest file or a directory containing one.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let text = read_file(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&text)
        .map_err(|e| Error::format(&manifest_path, format!("bad manifest: {e}")))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let visual = load_matrix(&dir.join(&manifest.files.visual))?;
    let semantic = load_matrix(&dir.join(&manifest.files.semantic))?;
    let tactile = manifest
        .files
        .tactile
        .as_ref()
        .map(|f| load_matrix(&dir.join(f)))
        .transpose()?;
    let labels = load_labels(&dir.join(&manifest.files.labels))?;
    let locations = manifest
        .files
        .locations
        .as_ref()
        .map(|f| {
            let p = dir.join(f);
            decode_u32s(&read_file(&p)?, &p)
        })
        .transpose()?;
    let mut ds = Dataset {
        meta: DatasetMeta {
            dims: manifest.dims,
            classes: manifest.classes,
        },
        visual,
        semantic,
        tactile,
        labels,
        locations,
    };
    ds.validate().map_err(|e| match e {
        Error::Data(reason) => Error::format(&manifest_path, reason),
        other => other,
    })?;
    ds.locations = ds.locations.take();
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Model container

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    iterations_trained: u64,
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    push_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_gate(gate: &GaussianGate) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    push_u32(&mut out, gate.mean.len())?;
    push_f64s(&mut out, &gate.mean);
    push_f64s(&mut out, &gate.var);
    out.extend_from_slice(&gate.threshold.unwrap_or(f64::NAN).to_le_bytes());
    Ok(out)
}

fn decode_gate(bytes: &[u8], path: &Path) -> Result<GaussianGate> {
    let mut r = Reader::new(bytes, path);
    let dim = r.u32()? as usize;
    let mean = r.f64s(dim)?;
    let var = r.f64s(dim)?;
    let beta = r.f64()?;
    r.finish()?;
    GaussianGate::from_parts(mean, var, if beta.is_nan() { None } else { Some(beta) })
        .map_err(|e| Error::format(path, format!("bad GATE section: {e}")))
}

pub fn encode_model(model: &VaeGanModel, gate: Option<&GaussianGate>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let nets = model.named_layers();
    push_u32(&mut out, nets.len())?;
    for (name, layers) in &nets {
        push_name(&mut out, name)?;
        push_u32(&mut out, layers.len())?;
        for layer in layers {
            push_u32(&mut out, layer.in_dim())?;
            push_u32(&mut out, layer.out_dim())?;
            out.push(layer.activation.tag());
            push_f64s(&mut out, layer.weights.data());
            push_f64s(&mut out, &layer.bias);
        }
    }
    let meta = serde_json::to_vec(&ModelMeta {
        config: model.config.clone(),
        iterations_trained: model.iterations_trained,
    })?;
    let mut sections: Vec<(&str, Vec<u8>)> = vec![("META", meta)];
    if let Some(g) = gate {
        sections.push(("GATE", encode_gate(g)?));
    }
    push_u32(&mut out, sections.len())?;
    for (name, payload) in sections {
        push_name(&mut out, name)?;
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    Ok(out)
}

type Layout = Vec<(usize, usize, Activation)>;

/// Layer shapes the configuration implies, per network name.
fn expected_layout(cfg: &ModelConfig) -> BTreeMap<&'static str, Layout> {
    use Activation::*;
    let c = cfg.condition_dim();
    let d_x = cfg.dims.d_x;
    let mut out = BTreeMap::new();
    if cfg.use_encoder {
        let h = cfg.encoder_hidden;
        out.insert(
            "encoder",
            vec![
                (d_x + c, h, LeakyRelu),
                (h, cfg.latent_dim, LeakyRelu),
                (h, cfg.latent_dim, LeakyRelu),
            ],
        );
    }
    if cfg.use_fusion {
        let [a, b] = cfg.fusion_hidden;
        out.insert("fusion", vec![(c, a, Relu), (a, b, Relu), (b, c, Sigmoid)]);
    }
    let g = cfg.generator_hidden;
    out.insert(
        "generator",
        vec![(cfg.latent_dim + c, g, LeakyRelu), (g, d_x, LeakyRelu)],
    );
    let h = cfg.discriminator_hidden;
    out.insert("discriminator", vec![(d_x, h, LeakyRelu), (h, 1, Sigmoid)]);
    out
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<(VaeGanModel, Option<GaussianGate>)> {
    let mut r = Reader::new(bytes, path);
    r.magic(MODEL_MAGIC)?;
    let n_nets = r.u32()? as usize;
    let mut nets: BTreeMap<String, Vec<DenseLayer>> = BTreeMap::new();
    for _ in 0..n_nets {
        let name = r.string()?;
        let n_layers = r.u32()? as usize;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let activation = Activation::from_tag(r.u8()?).map_err(|e| r.err(e.to_string()))?;
            let n = in_dim.checked_mul(out_dim).ok_or_else(|| r.err("size overflow"))?;
            let weights = Matrix::from_vec(in_dim, out_dim, r.f64s(n)?)?;
            let bias = r.f64s(out_dim)?;
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
                leaky_slope: 0.0,
            });
        }
        if nets.insert(name.clone(), layers).is_some() {
            return Err(r.err(format!("network '{name}' appears twice")));
        }
    }
    let n_sections = r.u32()? as usize;
    let mut sections: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for _ in 0..n_sections {
        let name = r.string()?;
        let len = usize::try_from(r.u64()?).map_err(|_| r.err("section too large"))?;
        sections.insert(name, r.take(len)?.to_vec());
    }
    r.finish()?;

    let meta: ModelMeta = serde_json::from_slice(
        sections
            .get("META")
            .ok_or_else(|| Error::format(path, "missing META section"))?,
    )
    .map_err(|e| Error::format(path, format!("bad META section: {e}")))?;
    let cfg = meta.config;
    cfg.validate()
        .map_err(|e| Error::format(path, e.to_string()))?;

    let layout = expected_layout(&cfg);
    if nets.len() != layout.len() || nets.keys().any(|k| !layout.contains_key(k.as_str())) {
        return Err(Error::format(
            path,
            format!(
                "networks {:?} do not match configuration {:?}",
                nets.keys().collect::<Vec<_>>(),
                layout.keys().collect::<Vec<_>>()
            ),
        ));
    }
    for (name, layers) in nets.iter_mut() {
        let expected = &layout[name.as_str()];
        let got: Layout = layers
            .iter()
            .map(|l| (l.in_dim(), l.out_dim(), l.activation))
            .collect();
        if &got != expected {
            return Err(Error::format(
                path,
                format!("network '{name}' has layers {got:?}, expected {expected:?}"),
            ));
        }
        for l in layers.iter_mut() {
            l.leaky_slope = cfg.leaky_slope;
        }
    }

    let mut take = |name: &str| nets.remove(name).unwrap_or_default();
    let encoder = if cfg.use_encoder {
        let mut l = take("encoder").into_iter();
        Some(EncoderNet {
            trunk: l.next().unwrap(),
            mean_head: l.next().unwrap(),
            logvar_head: l.next().unwrap(),
        })
    } else {
        None
    };
    let fusion = if cfg.use_fusion {
        Some(FusionNet {
            gate: Mlp::new(take("fusion"))?,
        })
    } else {
        None
    };
    let generator = GeneratorNet {
        mlp: Mlp::new(take("generator"))?,
        latent_dim: cfg.latent_dim,
    };
    let mut d = take("discriminator").into_iter();
    let discriminator = DiscriminatorNet {
        hidden: d.next().unwrap(),
        output: d.next().unwrap(),
    };
    let gate = sections
        .get("GATE")
        .map(|b| decode_gate(b, path))
        .transpose()?;
    if let Some(g) = &gate {
        if g.mean.len() != cfg.dims.d_x {
            return Err(Error::format(path, "GATE dimension differs from d_x"));
        }
    }
    let model = VaeGanModel {
        config: cfg,
        encoder,
        fusion,
        generator,
        discriminator,
        iterations_trained: meta.iterations_trained,
    };
    Ok((model, gate))
}

pub fn save_model(path: &Path, model: &VaeGanModel, gate: Option<&GaussianGate>) -> Result<()> {
    write_file(path, &encode_model(model, gate)?)
}

pub fn load_model(path: &Path) -> Result<(VaeGanModel, Option<GaussianGate>)> {
    decode_model(&read_file(path)?, path)
}
