//! File formats. Binary files are one JSON header line followed by a
//! little-endian payload; result tables are CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering_metrics::{BinRange, HistogramSpec, OutOfRange};
use crate::error::{Error, Result};
use crate::noisy_net::{
    spiral_dataset, synthetic_binary12, Activation, ActivationSet, CheckpointSchedule, LabeledDataset, Labels, Layer, Loss,
    NoisyNet, TrainConfig,
};
use crate::rng::{derive_seed, TAG_DATA, TAG_INIT, TAG_TRAIN, TAG_UNCOND};

const DUMP_FORMAT: &str = "infoflow-activations";
const DATASET_FORMAT: &str = "infoflow-dataset";
const CHECKPOINT_FORMAT: &str = "infoflow-checkpoint";
const DTYPE: &str = "f64le";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses the first line as a JSON header whose `format` field must equal
/// `format`. Returns the header and the payload offset.
fn read_header<H: DeserializeOwned>(bytes: &[u8], format: &str) -> Result<(H, usize)> {
    if bytes.first() != Some(&b'{') {
        return Err(Error::parse(0, format!("bad magic: expected a '{format}' JSON header line")));
    }
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(bytes.len() as u64, "header line is not newline-terminated"))?;
    let line = &bytes[..end];
    let value: serde_json::Value =
        serde_json::from_slice(line).map_err(|e| Error::parse(e.column().saturating_sub(1) as u64, format!("bad header: {e}")))?;
    let found = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if found != format {
        return Err(Error::parse(0, format!("bad magic: format is '{found}', expected '{format}'")));
    }
    if value.get("version").and_then(|v| v.as_u64()) != Some(1) {
        return Err(Error::parse(0, "unsupported format version"));
    }
    if let Some(dtype) = value.get("dtype").and_then(|v| v.as_str()) {
        if dtype != DTYPE {
            return Err(Error::parse(0, format!("unsupported dtype '{dtype}', expected '{DTYPE}'")));
        }
    }
    let header = serde_json::from_value(value).map_err(|e| Error::parse(0, format!("bad header: {e}")))?;
    Ok((header, end + 1))
}

fn header_line<H: Serialize>(header: &H) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out
}

fn need(bytes: &[u8], offset: usize, len: usize, what: &str) -> Result<()> {
    if bytes.len() < offset + len {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "{what} truncated: expected {len} bytes from offset {offset}, file ends after {} bytes",
                bytes.len() - offset.min(bytes.len())
            ),
        ));
    }
    Ok(())
}

fn read_f64s(bytes: &[u8], offset: usize, count: usize, what: &str) -> Result<Vec<f64>> {
    need(bytes, offset, 8 * count, what)?;
    bytes[offset..offset + 8 * count]
        .chunks_exact(8)
        .enumerate()
        .map(|(k, c)| {
            let v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse((offset + 8 * k) as u64, format!("non-finite value in {what}")))
            }
        })
        .collect()
}

fn read_i32s(bytes: &[u8], offset: usize, count: usize, what: &str) -> Result<Vec<i32>> {
    need(bytes, offset, 4 * count, what)?;
    Ok(bytes[offset..offset + 4 * count]
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

fn no_trailing(bytes: &[u8], end: usize) -> Result<()> {
    if bytes.len() > end {
        return Err(Error::parse(end as u64, format!("{} trailing bytes after payload", bytes.len() - end)));
    }
    Ok(())
}

fn push_f64s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DumpHeader {
    format: String,
    version: u32,
    n: usize,
    d: usize,
    dtype: String,
    layer: usize,
    epoch: usize,
    has_labels: bool,
    noisy: bool,
}

pub fn activation_dump_bytes(set: &ActivationSet) -> Vec<u8> {
    let (n, d) = set.values.dim();
    let mut out = header_line(&DumpHeader {
        format: DUMP_FORMAT.into(),
        version: 1,
        n,
        d,
        dtype: DTYPE.into(),
        layer: set.layer,
        epoch: set.epoch,
        has_labels: set.labels.is_some(),
        noisy: set.noisy,
    });
    out.reserve(8 * n * d + 4 * n);
    push_f64s(&mut out, set.values.iter());
    if let Some(labels) = &set.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    out
}

pub fn parse_activation_dump(bytes: &[u8]) -> Result<ActivationSet> {
    let (h, start): (DumpHeader, usize) = read_header(bytes, DUMP_FORMAT)?;
    let nd = h
        .n
        .checked_mul(h.d)
        .filter(|v| *v <= usize::MAX / 16)
        .ok_or_else(|| Error::parse(0, "header n*d overflows"))?;
    let values = read_f64s(bytes, start, nd, "activation payload")?;
    let mut end = start + 8 * nd;
    let labels = if h.has_labels {
        let l = read_i32s(bytes, end, h.n, "label payload")?;
        end += 4 * h.n;
        Some(l)
    } else {
        None
    };
    no_trailing(bytes, end)?;
    let values = Array2::from_shape_vec((h.n, h.d), values).expect("length checked");
    ActivationSet::new(values, labels, h.layer, h.epoch, h.noisy)
}

pub fn write_activation_dump(path: &Path, set: &ActivationSet) -> Result<()> {
    write_file(path, &activation_dump_bytes(set))
}

pub fn read_activation_dump(path: &Path) -> Result<ActivationSet> {
    parse_activation_dump(&read_file(path)?).map_err(|e| e.with_path(path))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LabelKind {
    Class,
    Scalar,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    n: usize,
    d: usize,
    dtype: String,
    labels: LabelKind,
    name: String,
}

/// Inputs as `n·d` f64, then `n` labels (i32 for classes, f64 for scalars).
pub fn write_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    let (n, d) = data.inputs.dim();
    let mut out = header_line(&DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: 1,
        n,
        d,
        dtype: DTYPE.into(),
        labels: match data.labels {
            Labels::Class(_) => LabelKind::Class,
            Labels::Scalar(_) => LabelKind::Scalar,
        },
        name: data.name.clone(),
    });
    push_f64s(&mut out, data.inputs.iter());
    match &data.labels {
        Labels::Class(c) => c.iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes())),
        Labels::Scalar(s) => push_f64s(&mut out, s),
    }
    write_file(path, &out)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let (h, start): (DatasetHeader, usize) = read_header(bytes, DATASET_FORMAT)?;
    let nd = h
        .n
        .checked_mul(h.d)
        .filter(|v| *v <= usize::MAX / 16)
        .ok_or_else(|| Error::parse(0, "header n*d overflows"))?;
    let inputs = read_f64s(bytes, start, nd, "input payload")?;
    let off = start + 8 * nd;
    let (labels, end) = match h.labels {
        LabelKind::Class => (Labels::Class(read_i32s(bytes, off, h.n, "label payload")?), off + 4 * h.n),
        LabelKind::Scalar => (Labels::Scalar(read_f64s(bytes, off, h.n, "label payload")?), off + 8 * h.n),
    };
    no_trailing(bytes, end)?;
    let inputs = Array2::from_shape_vec((h.n, h.d), inputs).expect("length checked");
    LabeledDataset::new(inputs, labels, h.name)
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    parse_dataset(&read_file(path)?).map_err(|e| e.with_path(path))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointLayer {
    activation: Activation,
    beta: f64,
    rows: usize,
    cols: usize,
    /// File name relative to the manifest; holds `W` row-major then `b`.
    blob: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    version: u32,
    dtype: String,
    epoch: usize,
    dims: Vec<usize>,
    layers: Vec<CheckpointLayer>,
}

pub fn checkpoint_manifest_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:06}.json"))
}

/// Writes the manifest and one blob per layer; returns the files written.
pub fn write_checkpoint(dir: &Path, epoch: usize, net: &NoisyNet) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let mut layers = Vec::new();
    for (k, l) in net.layers().iter().enumerate() {
        let blob = format!("epoch_{epoch:06}.layer{}.bin", k + 1);
        let mut bytes = Vec::with_capacity(8 * (l.weights.len() + l.bias.len()));
        push_f64s(&mut bytes, l.weights.iter());
        push_f64s(&mut bytes, l.bias.iter());
        let path = dir.join(&blob);
        write_file(&path, &bytes)?;
        files.push(path);
        layers.push(CheckpointLayer {
            activation: l.activation,
            beta: l.beta,
            rows: l.out_dim(),
            cols: l.in_dim(),
            blob,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        dtype: DTYPE.into(),
        epoch,
        dims: net.dims(),
        layers,
    };
    let path = checkpoint_manifest_path(dir, epoch);
    write_file(&path, &header_line(&manifest))?;
    files.push(path);
    Ok(files)
}

pub fn read_checkpoint(dir: &Path, epoch: usize) -> Result<NoisyNet> {
    let path = checkpoint_manifest_path(dir, epoch);
    if !path.is_file() {
        return Err(Error::MissingCheckpoint {
            epoch,
            dir: dir.to_path_buf(),
        });
    }
    let bytes = read_file(&path)?;
    let (m, _): (CheckpointManifest, usize) = read_header(&bytes, CHECKPOINT_FORMAT).map_err(|e| e.with_path(&path))?;
    if m.epoch != epoch {
        return Err(Error::parse(0, format!("manifest is for epoch {}, expected {epoch}", m.epoch)).with_path(&path));
    }
    let mut layers = Vec::with_capacity(m.layers.len());
    for l in &m.layers {
        let blob_path = dir.join(&l.blob);
        let blob = read_file(&blob_path)?;
        let parse = || -> Result<Layer> {
            let n_w = l.rows.checked_mul(l.cols).ok_or_else(|| Error::parse(0, "layer shape overflows"))?;
            let w = read_f64s(&blob, 0, n_w, "weights")?;
            let b = read_f64s(&blob, 8 * n_w, l.rows, "bias")?;
            no_trailing(&blob, 8 * (n_w + l.rows))?;
            Ok(Layer {
                weights: Array2::from_shape_vec((l.rows, l.cols), w).expect("length checked"),
                bias: Array1::from(b),
                activation: l.activation,
                beta: l.beta,
            })
        };
        layers.push(parse().map_err(|e| e.with_path(&blob_path))?);
    }
    let net = NoisyNet::new(layers)?;
    if net.dims() != m.dims {
        return Err(Error::parse(0, "manifest dims disagree with layer shapes").with_path(&path));
    }
    Ok(net)
}

/// Epochs with a manifest in `dir`, ascending.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("epoch_")?.strip_suffix(".json")?.parse().ok()
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed,
/// independent of locale.
pub fn fmt_sig(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-5..9).contains(&exp) {
        format!("{}e{exp}", trim(mant))
    } else {
        trim(&format!("{:.*}", (8 - exp) as usize, v))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

pub const RESULT_COLUMNS: [&str; 11] = [
    "epoch",
    "layer",
    "i_sp",
    "h_uncond",
    "h_cond_mean",
    "lb",
    "ub",
    "mc_se",
    "binned_entropy",
    "train_loss",
    "test_loss",
];

/// One `(epoch, layer)` line of the results table. Missing values are
/// written as empty cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultRow {
    pub epoch: usize,
    pub layer: usize,
    pub i_sp: Option<f64>,
    pub h_uncond: Option<f64>,
    pub h_cond_mean: Option<f64>,
    pub lb: Option<f64>,
    pub ub: Option<f64>,
    pub mc_se: Option<f64>,
    pub binned_entropy: Option<f64>,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
}

/// Writes a CSV from preformatted cells.
pub fn csv_string(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_file(path, csv_string(header, rows).as_bytes())
}

pub fn results_csv_string(rows: &[ResultRow]) -> String {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.epoch, r.layer));
    let cells: Vec<Vec<String>> = sorted
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.layer.to_string(),
                opt(r.i_sp),
                opt(r.h_uncond),
                opt(r.h_cond_mean),
                opt(r.lb),
                opt(r.ub),
                opt(r.mc_se),
                opt(r.binned_entropy),
                opt(r.train_loss),
                opt(r.test_loss),
            ]
        })
        .collect();
    csv_string(&RESULT_COLUMNS, &cells)
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_file(path, results_csv_string(rows).as_bytes())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let text = String::from_utf8(read_file(path)?).map_err(|e| Error::parse(e.utf8_error().valid_up_to() as u64, "not UTF-8").with_path(path))?;
    parse_results_csv(&text).map_err(|e| e.with_path(path))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().unwrap_or("");
    if header.trim_end() != RESULT_COLUMNS.join(",") {
        return Err(Error::parse(0, "unexpected results header"));
    }
    let mut offset = header.len();
    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.trim_end().split(',').collect();
        if cells.len() != RESULT_COLUMNS.len() {
            return Err(Error::parse(offset as u64, format!("expected {} cells", RESULT_COLUMNS.len())));
        }
        let bad = |k: usize| Error::parse(offset as u64, format!("bad value in column {}", RESULT_COLUMNS[k]));
        let f = |k: usize| -> Result<Option<f64>> {
            if cells[k].is_empty() {
                Ok(None)
            } else {
                cells[k].parse().map(Some).map_err(|_| bad(k))
            }
        };
        rows.push(ResultRow {
            epoch: cells[0].parse().map_err(|_| bad(0))?,
            layer: cells[1].parse().map_err(|_| bad(1))?,
            i_sp: f(2)?,
            h_uncond: f(3)?,
            h_cond_mean: f(4)?,
            lb: f(5)?,
            ub: f(6)?,
            mc_se: f(7)?,
            binned_entropy: f(8)?,
            train_loss: f(9)?,
            test_loss: f(10)?,
        });
        offset += line.len();
    }
    Ok(rows)
}

/// Network architecture of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    /// Hidden layers share `activation` and `beta`; the last layer uses
    /// `output_activation` and `output_beta`.
    Stacked {
        dims: Vec<usize>,
        activation: Activation,
        beta: f64,
        #[serde(default = "linear")]
        output_activation: Activation,
        #[serde(default)]
        output_beta: f64,
    },
    /// One linear layer with `W = I`, `b = 0`.
    Identity { dim: usize, beta: f64 },
}

fn linear() -> Activation {
    Activation::Linear
}

impl NetworkSpec {
    pub fn build(&self, seed: u64) -> Result<NoisyNet> {
        match self {
            NetworkSpec::Stacked {
                dims,
                activation,
                beta,
                output_activation,
                output_beta,
            } => {
                let l = dims.len().saturating_sub(1);
                let mut acts = vec![*activation; l];
                let mut betas = vec![*beta; l];
                if l > 0 {
                    acts[l - 1] = *output_activation;
                    betas[l - 1] = *output_beta;
                }
                NoisyNet::init(dims, &acts, &betas, seed)
            }
            NetworkSpec::Identity { dim, beta } => NoisyNet::new(vec![Layer {
                weights: Array2::eye(*dim),
                bias: Array1::zeros(*dim),
                activation: Activation::Linear,
                beta: *beta,
            }]),
        }
    }

    fn input_dim(&self) -> Option<usize> {
        match self {
            NetworkSpec::Stacked { dims, .. } => dims.first().copied(),
            NetworkSpec::Identity { dim, .. } => Some(*dim),
        }
    }

    fn validate(&self, errs: &mut Vec<String>) {
        let beta_ok = |b: f64| b.is_finite() && b >= 0.0;
        match self {
            NetworkSpec::Stacked {
                dims,
                beta,
                output_beta,
                ..
            } => {
                if dims.len() < 2 {
                    errs.push(format!("network.dims needs at least 2 entries, got {}", dims.len()));
                }
                if dims.contains(&0) {
                    errs.push("network.dims entries must be >= 1".into());
                }
                if !beta_ok(*beta) {
                    errs.push(format!("network.beta must be finite and >= 0, got {beta}"));
                }
                if !beta_ok(*output_beta) {
                    errs.push(format!("network.output_beta must be finite and >= 0, got {output_beta}"));
                }
            }
            NetworkSpec::Identity { dim, beta } => {
                if *dim == 0 {
                    errs.push("network.dim must be >= 1".into());
                }
                if !beta_ok(*beta) {
                    errs.push(format!("network.beta must be finite and >= 0, got {beta}"));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Spiral {
        n_per_class: usize,
        #[serde(default)]
        noise_std: f64,
        #[serde(default = "one")]
        turns: f64,
    },
    /// All 4096 vectors of `{-1, 1}^12` with seeded quadratic-form labels.
    SyntheticBinary12,
    /// Inline rows with either class or scalar labels.
    Points {
        inputs: Vec<Vec<f64>>,
        #[serde(default)]
        classes: Option<Vec<i32>>,
        #[serde(default)]
        targets: Option<Vec<f64>>,
    },
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<LabeledDataset> {
        match self {
            DatasetSource::Spiral {
                n_per_class,
                noise_std,
                turns,
            } => spiral_dataset(*n_per_class, *noise_std, *turns, seed),
            DatasetSource::SyntheticBinary12 => Ok(synthetic_binary12(seed)),
            DatasetSource::Points {
                inputs,
                classes,
                targets,
            } => {
                let d = inputs.first().map_or(0, Vec::len);
                if inputs.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidParameter("dataset.inputs rows differ in length".into()));
                }
                let x = Array2::from_shape_vec((inputs.len(), d), inputs.concat()).expect("rectangular");
                let labels = match (classes, targets) {
                    (Some(c), None) => Labels::Class(c.clone()),
                    (None, Some(t)) => Labels::Scalar(t.clone()),
                    _ => return Err(Error::InvalidParameter("dataset needs exactly one of classes or targets".into())),
                };
                LabeledDataset::new(x, labels, "points")
            }
            DatasetSource::File { path } => read_dataset(path),
        }
    }

    fn validate(&self, what: &str, input_dim: Option<usize>, errs: &mut Vec<String>) {
        match self {
            DatasetSource::Spiral {
                n_per_class,
                noise_std,
                turns,
            } => {
                if *n_per_class == 0 {
                    errs.push(format!("{what}.n_per_class must be >= 1"));
                }
                if !(noise_std.is_finite() && *noise_std >= 0.0) {
                    errs.push(format!("{what}.noise_std must be finite and >= 0"));
                }
                if !(turns.is_finite() && *turns > 0.0) {
                    errs.push(format!("{what}.turns must be > 0"));
                }
                if input_dim.is_some_and(|d| d != 2) {
                    errs.push(format!("{what} is 2-dimensional but the network expects {} inputs", input_dim.unwrap_or(0)));
                }
            }
            DatasetSource::SyntheticBinary12 => {
                if input_dim.is_some_and(|d| d != 12) {
                    errs.push(format!("{what} is 12-dimensional but the network expects {} inputs", input_dim.unwrap_or(0)));
                }
            }
            DatasetSource::Points {
                inputs,
                classes,
                targets,
            } => {
                if inputs.is_empty() {
                    errs.push(format!("{what}.inputs must not be empty"));
                }
                let d = inputs.first().map_or(0, Vec::len);
                if inputs.iter().any(|r| r.len() != d) {
                    errs.push(format!("{what}.inputs rows differ in length"));
                } else if input_dim.is_some_and(|e| e != d) {
                    errs.push(format!("{what} rows have {d} entries but the network expects {}", input_dim.unwrap_or(0)));
                }
                if inputs.iter().flatten().any(|v| !v.is_finite()) {
                    errs.push(format!("{what}.inputs must be finite"));
                }
                match (classes, targets) {
                    (Some(c), None) if c.len() != inputs.len() => {
                        errs.push(format!("{what}.classes has {} entries for {} inputs", c.len(), inputs.len()))
                    }
                    (None, Some(t)) if t.len() != inputs.len() => {
                        errs.push(format!("{what}.targets has {} entries for {} inputs", t.len(), inputs.len()))
                    }
                    (Some(_), None) | (None, Some(_)) => {}
                    _ => errs.push(format!("{what} needs exactly one of classes or targets")),
                }
            }
            DatasetSource::File { path } => {
                if !path.is_file() {
                    errs.push(format!("{what}.path {} does not exist", path.display()));
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: Loss,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub ortho_alpha: f64,
    #[serde(default = "yes")]
    pub noise_during_training: bool,
    pub checkpoints: CheckpointSchedule,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    /// Whether to estimate `I(X;T)` at all.
    pub mi: bool,
    pub n: usize,
    pub n_x: usize,
    pub n_mc: usize,
    pub cutoff: Option<f64>,
    pub beta_override: Option<f64>,
    /// Layers for MI; defaults to every layer with `beta > 0`.
    pub mi_layers: Option<Vec<usize>>,
    /// Layers for binned metrics; defaults to every layer.
    pub bin_layers: Option<Vec<usize>>,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            mi: true,
            n: 1000,
            n_x: 1000,
            n_mc: 1000,
            cutoff: None,
            beta_override: None,
            mi_layers: None,
            bin_layers: None,
        }
    }
}

/// Binning of noise-free activations. Without a `range`, tanh layers use
/// `[-1, 1]`, sigmoid `[0, 1]`, ReLU `[0, max]` and other layers the observed
/// `[min, max]`. Without a `bin_size`, `10·beta` of the layer (or 0.05 when
/// `beta = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    pub bin_size: Option<f64>,
    pub range: Option<BinRange>,
    pub out_of_range: OutOfRange,
    pub per_unit: bool,
}

/// Per-consumer seeds; each missing one is derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SeedOverrides {
    pub init: Option<u64>,
    pub data: Option<u64>,
    pub train: Option<u64>,
    pub estimate: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub train: u64,
    pub estimate: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSpec,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub test_dataset: Option<DatasetSource>,
    pub train: TrainSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub binning: BinningSection,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seeds: SeedOverrides,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("line {}, column {}: {e}", e.line(), e.column())]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(vec![format!("{} is not UTF-8", path.display())]))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(v) => Error::Config(v.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every problem found, so they can be reported together.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        self.network.validate(&mut errs);
        let input_dim = self.network.input_dim();
        self.dataset.validate("dataset", input_dim, &mut errs);
        if let Some(t) = &self.test_dataset {
            t.validate("test_dataset", input_dim, &mut errs);
        }
        let train = self.train_config(0);
        errs.extend(train.validate().into_iter().map(|e| format!("train.{e}")));
        if let CheckpointSchedule::Every(0) | CheckpointSchedule::Geometric(0) = self.train.checkpoints {
            errs.push("train.checkpoints needs a positive count".into());
        }
        let depth = match &self.network {
            NetworkSpec::Stacked { dims, .. } => dims.len().saturating_sub(1),
            NetworkSpec::Identity { .. } => 1,
        };
        let e = &self.estimator;
        for (name, v) in [("n", e.n), ("n_x", e.n_x), ("n_mc", e.n_mc)] {
            if v == 0 {
                errs.push(format!("estimator.{name} must be >= 1"));
            }
        }
        if let Some(c) = e.cutoff {
            if !(c.is_finite() && c > 0.0) {
                errs.push(format!("estimator.cutoff must be > 0, got {c}"));
            }
        }
        if let Some(b) = e.beta_override {
            if !(b.is_finite() && b >= 0.0) {
                errs.push(format!("estimator.beta_override must be >= 0, got {b}"));
            }
        }
        for (name, layers) in [("mi_layers", &e.mi_layers), ("bin_layers", &e.bin_layers)] {
            for &l in layers.iter().flatten() {
                if l == 0 || l > depth {
                    errs.push(format!("estimator.{name} entry {l} is outside 1..={depth}"));
                }
            }
        }
        if let Some(b) = self.binning.bin_size {
            if !(b.is_finite() && b > 0.0) {
                errs.push(format!("binning.bin_size must be > 0, got {b}"));
            }
        }
        if let Some(h) = &self.histogram {
            if h.n_bins == 0 {
                errs.push("histogram.n_bins must be >= 1".into());
            }
            if h.pair_cap == 0 {
                errs.push("histogram.pair_cap must be >= 1".into());
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            errs.push("output_dir must not be empty".into());
        }
        errs
    }

    pub fn seeds(&self) -> Seeds {
        let s = &self.seeds;
        Seeds {
            init: s.init.unwrap_or_else(|| derive_seed(self.seed, TAG_INIT)),
            data: s.data.unwrap_or_else(|| derive_seed(self.seed, TAG_DATA)),
            train: s.train.unwrap_or_else(|| derive_seed(self.seed, TAG_TRAIN)),
            estimate: s.estimate.unwrap_or_else(|| derive_seed(self.seed, TAG_UNCOND)),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            loss: t.loss,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            ortho_alpha: t.ortho_alpha,
            noise_during_training: t.noise_during_training,
            seed,
            checkpoints: t.checkpoints.clone(),
        }
    }

    /// SHA-256 of the canonical JSON form, without `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Human-readable list of config problems, one per line.
pub fn describe_errors(errs: &[String]) -> String {
    let mut s = String::new();
    for e in errs {
        let _ = writeln!(s, "  - {e}");
    }
    s
}
