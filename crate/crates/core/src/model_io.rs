//! JSON model files.
//!
//! ```json
//! {
//!   "format_version": "1",
//!   "stream": { "rows": 4, "cols": 3 },
//!   "layernorm": { "enabled": true, "epsilon": 1e-5, "normalized_width": 3 },
//!   "sublayers": [
//!     { "type": "attention", "heads": [ { "w_qk": M, "w_ov": M, "mask": M } ] },
//!     { "type": "mlp", "v1": M, "v2": M, "a1": 1.0, "a2": 1.0 }
//!   ]
//! }
//! ```
//!
//! where each `M` is `{ "rows": r, "cols": c, "data": [row-major numbers] }`.
//! An MLP may name a fixed activation (`"activation": "gelu"`) instead of
//! giving `a1`/`a2`. Written files use 17 significant digits, masks are
//! written as integers, and key order is fixed, so saving is byte-for-byte
//! reproducible.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::activations::{GeneralizedSilu, ReferenceActivation};
use crate::analysis::format_sig17;
use crate::matrix::{MaskMatrix, Matrix};
use crate::nn::{AttentionHead, LayerNormConfig, Mlp, MlpActivation, Sublayer, TransformerSpec};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed model file: {0}")]
    Parse(String),
    #[error("unsupported format_version {0:?}, expected \"1\"")]
    Version(String),
    #[error("invalid model at `{path}`: {message}")]
    Validation { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl ToString) -> ModelError {
    ModelError::Validation {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelIn {
    #[allow(dead_code)]
    format_version: String,
    stream: StreamIn,
    layernorm: LayerNormIn,
    sublayers: Vec<SublayerIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamIn {
    rows: usize,
    cols: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerNormIn {
    enabled: bool,
    epsilon: f64,
    normalized_width: usize,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum SublayerIn {
    Attention {
        heads: Vec<HeadIn>,
    },
    Mlp {
        v1: MatrixIn,
        v2: MatrixIn,
        #[serde(default)]
        a1: Option<f64>,
        #[serde(default)]
        a2: Option<f64>,
        #[serde(default)]
        activation: Option<String>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadIn {
    w_qk: MatrixIn,
    w_ov: MatrixIn,
    mask: MatrixIn,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixIn {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixIn {
    fn into_matrix(self, path: &str) -> Result<Matrix<f64>, ModelError> {
        Matrix::new(self.rows, self.cols, self.data).map_err(|e| invalid(path, e))
    }

    fn into_mask(self, path: &str) -> Result<MaskMatrix, ModelError> {
        let m = self.into_matrix(path)?;
        MaskMatrix::from_matrix(&m).map_err(|e| invalid(path, e))
    }
}

fn expect_shape(path: &str, got: (usize, usize), want: (usize, usize)) -> Result<(), ModelError> {
    if got != want {
        return Err(invalid(
            path,
            format!("shape is {}x{}, expected {}x{}", got.0, got.1, want.0, want.1),
        ));
    }
    Ok(())
}

fn parse_json(text: &str) -> Result<serde_json::Value, ModelError> {
    serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
}

fn deserialize<T: for<'de> Deserialize<'de>>(value: serde_json::Value) -> Result<T, ModelError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        invalid(path, e.into_inner())
    })
}

/// Parses and validates model text.
pub fn parse_model(text: &str) -> Result<TransformerSpec<f64>, ModelError> {
    let value = parse_json(text)?;
    match value.get("format_version") {
        Some(serde_json::Value::String(v)) if v == FORMAT_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(ModelError::Version(v.clone())),
        Some(other) => return Err(ModelError::Version(other.to_string())),
        None if value.is_object() => return Err(invalid("format_version", "missing field")),
        None => return Err(invalid(".", "top level must be an object")),
    }
    let raw: ModelIn = deserialize(value)?;
    build_spec(raw)
}

fn build_spec(raw: ModelIn) -> Result<TransformerSpec<f64>, ModelError> {
    let (n, d) = (raw.stream.rows, raw.stream.cols);
    if n == 0 || d == 0 {
        return Err(invalid("stream", format!("shape {n}x{d} must be positive")));
    }
    let ln = raw.layernorm;
    if ln.normalized_width == 0 || ln.normalized_width > d {
        return Err(invalid(
            "layernorm.normalized_width",
            format!("{} is outside 1..={d}", ln.normalized_width),
        ));
    }
    if !(ln.epsilon >= 0.0) {
        return Err(invalid("layernorm.epsilon", "must be >= 0"));
    }

    let mut sublayers = Vec::with_capacity(raw.sublayers.len());
    for (s, sub) in raw.sublayers.into_iter().enumerate() {
        let base = format!("sublayers[{s}]");
        match sub {
            SublayerIn::Attention { heads } => {
                if heads.is_empty() {
                    return Err(invalid(format!("{base}.heads"), "attention sublayer has no heads"));
                }
                let mut built = Vec::with_capacity(heads.len());
                for (h, head) in heads.into_iter().enumerate() {
                    let hp = format!("{base}.heads[{h}]");
                    let w_qk = head.w_qk.into_matrix(&format!("{hp}.w_qk"))?;
                    expect_shape(&format!("{hp}.w_qk"), w_qk.shape(), (d, d))?;
                    let w_ov = head.w_ov.into_matrix(&format!("{hp}.w_ov"))?;
                    expect_shape(&format!("{hp}.w_ov"), w_ov.shape(), (d, d))?;
                    let mask = head.mask.into_mask(&format!("{hp}.mask"))?;
                    expect_shape(&format!("{hp}.mask"), mask.shape(), (n, n))?;
                    built.push(AttentionHead::new(w_qk, w_ov, mask).map_err(|e| invalid(&hp, e))?);
                }
                sublayers.push(Sublayer::Attention(built));
            }
            SublayerIn::Mlp {
                v1,
                v2,
                a1,
                a2,
                activation,
            } => {
                let v1 = v1.into_matrix(&format!("{base}.v1"))?;
                if v1.rows() != d {
                    return Err(invalid(
                        format!("{base}.v1"),
                        format!("has {} rows, expected stream width {d}", v1.rows()),
                    ));
                }
                let v2 = v2.into_matrix(&format!("{base}.v2"))?;
                expect_shape(&format!("{base}.v2"), v2.shape(), (v1.cols(), d))?;
                let act: MlpActivation<f64> = match (a1, a2, activation) {
                    (Some(a1), Some(a2), None) => GeneralizedSilu::new(a1, a2)
                        .map_err(|e| invalid(format!("{base}.a1"), e))?
                        .into(),
                    (None, None, Some(name)) => name
                        .parse::<ReferenceActivation>()
                        .map_err(|e| invalid(format!("{base}.activation"), e))?
                        .into(),
                    _ => {
                        return Err(invalid(
                            &base,
                            "mlp needs either both a1 and a2, or an activation name",
                        ))
                    }
                };
                sublayers.push(Sublayer::Mlp(Mlp::new(v1, v2, act).map_err(|e| invalid(&base, e))?));
            }
        }
    }
    let cfg = LayerNormConfig {
        enabled: ln.enabled,
        epsilon: ln.epsilon,
        normalized_width: ln.normalized_width,
    };
    TransformerSpec::new(n, d, sublayers, cfg).map_err(|e| invalid("sublayers", e))
}

struct Sig17(f64);

impl Serialize for Sig17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(format_sig17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

#[derive(Serialize)]
struct MatrixOut {
    rows: usize,
    cols: usize,
    data: Vec<Sig17>,
}

impl From<&Matrix<f64>> for MatrixOut {
    fn from(m: &Matrix<f64>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.data().iter().map(|&x| Sig17(x)).collect(),
        }
    }
}

#[derive(Serialize)]
struct MaskOut {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl From<&MaskMatrix> for MaskOut {
    fn from(m: &MaskMatrix) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.bits().iter().map(|&b| u8::from(b)).collect(),
        }
    }
}

#[derive(Serialize)]
struct HeadOut {
    w_qk: MatrixOut,
    w_ov: MatrixOut,
    mask: MaskOut,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum SublayerOut {
    Attention {
        heads: Vec<HeadOut>,
    },
    Mlp {
        v1: MatrixOut,
        v2: MatrixOut,
        #[serde(skip_serializing_if = "Option::is_none")]
        a1: Option<Sig17>,
        #[serde(skip_serializing_if = "Option::is_none")]
        a2: Option<Sig17>,
        #[serde(skip_serializing_if = "Option::is_none")]
        activation: Option<&'static str>,
    },
}

#[derive(Serialize)]
struct StreamOut {
    rows: usize,
    cols: usize,
}

#[derive(Serialize)]
struct LayerNormOut {
    enabled: bool,
    epsilon: Sig17,
    normalized_width: usize,
}

#[derive(Serialize)]
struct ModelOut {
    format_version: &'static str,
    stream: StreamOut,
    layernorm: LayerNormOut,
    sublayers: Vec<SublayerOut>,
}

/// Canonical text for a model, newline-terminated.
pub fn render_model(spec: &TransformerSpec<f64>) -> String {
    let ln = spec.layernorm();
    let out = ModelOut {
        format_version: FORMAT_VERSION,
        stream: StreamOut {
            rows: spec.n(),
            cols: spec.d(),
        },
        layernorm: LayerNormOut {
            enabled: ln.enabled,
            epsilon: Sig17(ln.epsilon),
            normalized_width: ln.normalized_width,
        },
        sublayers: spec
            .sublayers()
            .iter()
            .map(|sub| match sub {
                Sublayer::Attention(heads) => SublayerOut::Attention {
                    heads: heads
                        .iter()
                        .map(|h| HeadOut {
                            w_qk: h.w_qk().into(),
                            w_ov: h.w_ov().into(),
                            mask: h.mask().into(),
                        })
                        .collect(),
                },
                Sublayer::Mlp(f) => {
                    let (a1, a2, activation) = match *f.activation() {
                        MlpActivation::Silu(g) => (Some(Sig17(g.a1)), Some(Sig17(g.a2)), None),
                        MlpActivation::Reference(r) => (None, None, Some(r.name())),
                    };
                    SublayerOut::Mlp {
                        v1: f.v1().into(),
                        v2: f.v2().into(),
                        a1,
                        a2,
                        activation,
                    }
                }
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&out).expect("model serializes");
    text.push('\n');
    text
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TransformerSpec<f64>, ModelError> {
    parse_model(&read(path.as_ref())?)
}

pub fn save_model(spec: &TransformerSpec<f64>, path: impl AsRef<Path>) -> Result<(), ModelError> {
    write(path.as_ref(), &render_model(spec))
}

/// Parses a standalone mask file: `{ "rows": r, "cols": c, "data": [...] }`.
pub fn parse_mask(text: &str) -> Result<MaskMatrix, ModelError> {
    let raw: MatrixIn = deserialize(parse_json(text)?)?;
    raw.into_mask("mask")
}

pub fn render_mask(mask: &MaskMatrix) -> String {
    let mut text = serde_json::to_string_pretty(&MaskOut::from(mask)).expect("mask serializes");
    text.push('\n');
    text
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskMatrix, ModelError> {
    parse_mask(&read(path.as_ref())?)
}

pub fn save_mask(mask: &MaskMatrix, path: impl AsRef<Path>) -> Result<(), ModelError> {
    write(path.as_ref(), &render_mask(mask))
}

fn read(path: &Path) -> Result<String, ModelError> {
    fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), ModelError> {
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}
