//! Checkpoint file: a JSON header line, then one record per array.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig};
use crate::autodiff::{Scalar, Tensor};
use crate::corpus::Vocabulary;
use crate::encoders::{param_layout, Hyperparams, ModelParams};

pub const FORMAT_VERSION: u32 = 1;

const M_PREFIX: &str = "adam.m:";
const V_PREFIX: &str = "adam.v:";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error("{path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// 1-based epoch the parameters come from; 0 for an untrained model.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ema: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub hyperparams: Hyperparams,
    pub vocab: Vocabulary,
    pub params: ModelParams<T>,
    pub optimizer: Option<Adam<T>>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    precision: String,
    hyperparams: Hyperparams,
    vocab_hash: String,
    vocab: Vec<String>,
    metrics: TrainingMeta,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    name: String,
    shape: [usize; 2],
    /// Values widened to f64, which is exact for f32 and keeps the text
    /// round trip free of double rounding.
    data: Vec<f64>,
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptFile(msg.into())
}

fn push_record<T: Scalar>(out: &mut String, name: &str, t: &Tensor<T>) {
    let rec = Record {
        name: name.to_string(),
        shape: t.shape(),
        data: t.data().iter().map(|x| x.as_f64()).collect(),
    };
    out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
    out.push('\n');
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_text(&self) -> String {
        let header = Header {
            format_version: FORMAT_VERSION,
            precision: T::NAME.to_string(),
            hyperparams: self.hyperparams.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.tokens().to_vec(),
            metrics: self.meta.clone(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                step: o.t,
                config: o.cfg.clone(),
            }),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (name, t) in self.params.iter() {
            push_record(&mut out, name, t);
        }
        if let Some(opt) = &self.optimizer {
            for (name, (m, v)) in self.params.names().iter().zip(opt.m.iter().zip(&opt.v)) {
                push_record(&mut out, &format!("{M_PREFIX}{name}"), m);
                push_record(&mut out, &format!("{V_PREFIX}{name}"), v);
            }
        }
        out
    }

    /// Parses a checkpoint; parameter names and shapes must match the layout
    /// of `expected` when given, else of the stored hyperparameters.
    pub fn from_text(text: &str, expected: Option<&Hyperparams>) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| corrupt("empty file"))?;
        let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| corrupt(format!("header: {e}")))?;
        let found = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| corrupt("header has no format_version"))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(CheckpointError::VersionMismatch {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.precision != T::NAME {
            return Err(corrupt(format!(
                "stored precision {}, requested {}",
                header.precision,
                T::NAME
            )));
        }
        let mut vocab_text = header.vocab.join("\n");
        vocab_text.push('\n');
        let vocab = Vocabulary::from_text(&vocab_text).map_err(|e| corrupt(e.to_string()))?;
        if vocab.hash() != header.vocab_hash {
            return Err(corrupt("vocabulary hash does not match"));
        }
        let hp = header.hyperparams;
        hp.validate().map_err(|e| corrupt(e.to_string()))?;
        if hp.vocab_size != vocab.len() {
            return Err(corrupt(format!(
                "vocab_size {} but {} vocabulary tokens",
                hp.vocab_size,
                vocab.len()
            )));
        }

        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let rec: Record = serde_json::from_str(line).map_err(|e| corrupt(format!("record {}: {e}", i + 1)))?;
            if rec.shape[0].checked_mul(rec.shape[1]) != Some(rec.data.len()) || rec.data.is_empty() {
                return Err(corrupt(format!(
                    "{}: data does not fill shape {:?}",
                    rec.name, rec.shape
                )));
            }
            records.push(rec);
        }

        let layout = param_layout(&hp);
        if let Some(want) = expected {
            for (w, s) in param_layout(want).iter().zip(&layout) {
                if w.name != s.name || [w.rows, w.cols] != [s.rows, s.cols] {
                    return Err(CheckpointError::ShapeMismatch(format!(
                        "{}: stored {:?}, expected {} {:?}",
                        s.name,
                        [s.rows, s.cols],
                        w.name,
                        [w.rows, w.cols]
                    )));
                }
            }
            if param_layout(want).len() != layout.len() {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "stored {} arrays, expected {}",
                    layout.len(),
                    param_layout(want).len()
                )));
            }
        }
        let per_param = if header.optimizer.is_some() { 3 } else { 1 };
        if records.len() != layout.len() * per_param {
            return Err(corrupt(format!(
                "expected {} records, found {}",
                layout.len() * per_param,
                records.len()
            )));
        }
        let mut recs = records.into_iter();
        let mut named = Vec::with_capacity(layout.len());
        let mut take = |name: &str, shape: [usize; 2]| -> Result<Tensor<T>, CheckpointError> {
            let r = recs.next().expect("record count checked");
            if r.name != name {
                return Err(corrupt(format!("expected record {name}, found {}", r.name)));
            }
            if r.shape != shape {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "{name}: stored {:?}, layout {:?}",
                    r.shape, shape
                )));
            }
            let data = r
                .data
                .iter()
                .map(|&x| T::from_f64(x).filter(|v| v.is_finite()))
                .collect::<Option<Vec<T>>>()
                .ok_or_else(|| corrupt(format!("{name}: value out of range")))?;
            Tensor::new(shape[0], shape[1], data).map_err(|e| corrupt(e.to_string()))
        };
        for s in &layout {
            named.push((s.name.clone(), take(&s.name, [s.rows, s.cols])?));
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for s in &layout {
                    m.push(take(&format!("{M_PREFIX}{}", s.name), [s.rows, s.cols])?);
                    v.push(take(&format!("{V_PREFIX}{}", s.name), [s.rows, s.cols])?);
                }
                Some(Adam {
                    cfg: o.config,
                    t: o.step,
                    m,
                    v,
                })
            }
        };
        Ok(Self {
            hyperparams: hp,
            vocab,
            params: ModelParams::from_named(named),
            optimizer,
            meta: header.metrics,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&Hyperparams>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let text = String::from_utf8(bytes).map_err(|_| corrupt("not UTF-8"))?;
        Self::from_text(&text, expected)
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    ckpt.save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>, CheckpointError> {
    Checkpoint::load(path, None)
}
