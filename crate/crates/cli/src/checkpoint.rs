//! Versioned model checkpoints: a JSON header (hyperparameters plus named
//! segment offsets) followed by the flat parameter payload as little-endian
//! 64-bit floats. The header is plain text, so a checkpoint is inspectable
//! with `head -c` and a JSON pretty-printer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use softmoe_core::training::{Head, HeadKind, Model, ModelConfig};
use softmoe_core::RngStream;

const MAGIC: &[u8; 4] = b"SMOE";
const VERSION: u32 = 1;

/// Loading failures, one variant per corruption class.
#[derive(Clone, Debug, PartialEq)]
pub enum CheckpointError {
    /// Not a checkpoint file at all.
    BadMagic,
    /// A checkpoint from an unrecognized format version.
    UnsupportedVersion { got: u32 },
    /// Header present but unreadable.
    HeaderCorrupt { detail: String },
    /// Payload shorter or longer than the header promises.
    PayloadCorrupt { expected_floats: usize, got_floats: usize },
    /// Header hyperparameters imply a different parameter count than stated.
    ShapeMismatch { implied: usize, stated: usize },
    Io { message: String },
}

impl std::fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint (bad magic)"),
            CheckpointError::UnsupportedVersion { got } => {
                write!(f, "unsupported checkpoint version {got} (expected {VERSION})")
            }
            CheckpointError::HeaderCorrupt { detail } => {
                write!(f, "corrupt checkpoint header: {detail}")
            }
            CheckpointError::PayloadCorrupt {
                expected_floats,
                got_floats,
            } => write!(
                f,
                "corrupt checkpoint payload: expected {expected_floats} floats, got {got_floats}"
            ),
            CheckpointError::ShapeMismatch { implied, stated } => write!(
                f,
                "checkpoint shape mismatch: hyperparameters imply {implied} parameters, header states {stated}"
            ),
            CheckpointError::Io { message } => write!(f, "checkpoint I/O error: {message}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io {
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HeaderHead {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HeaderHyper {
    layers: usize,
    tokens: usize,
    token_dim: usize,
    experts: usize,
    hidden_budget: usize,
    head: HeaderHead,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Segment {
    name: String,
    /// Offset into the payload, in f64 units.
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    hyper: HeaderHyper,
    param_count: usize,
    segments: Vec<Segment>,
}

fn segments_for(model: &Model) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut offset = 0;
    let mut push = |name: String, len: usize, offset: &mut usize| {
        segments.push(Segment {
            name,
            offset: *offset,
            len,
        });
        *offset += len;
    };
    for (l, layer) in model.layers.iter().enumerate() {
        push(format!("layer{l}.phi"), layer.router.phi.data().len(), &mut offset);
        for (j, e) in layer.bank.experts.iter().enumerate() {
            push(format!("layer{l}.expert{j}.w1"), e.w1.data().len(), &mut offset);
            push(format!("layer{l}.expert{j}.b1"), e.b1.len(), &mut offset);
            push(format!("layer{l}.expert{j}.w2"), e.w2.data().len(), &mut offset);
            push(format!("layer{l}.expert{j}.b2"), e.b2.len(), &mut offset);
        }
    }
    if let Head::Linear(h) = &model.head {
        push("head.w".to_string(), h.w.data().len(), &mut offset);
        push("head.b".to_string(), h.b.len(), &mut offset);
    }
    segments
}

/// Serialize a model to `path`.
pub fn save_model(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    let cfg = model.config();
    let header = Header {
        version: VERSION,
        hyper: HeaderHyper {
            layers: cfg.layers,
            tokens: cfg.tokens,
            token_dim: cfg.token_dim,
            experts: cfg.experts,
            hidden_budget: cfg.hidden_budget,
            head: match cfg.head {
                HeadKind::Summation => HeaderHead {
                    kind: "summation".to_string(),
                    classes: None,
                },
                HeadKind::Linear { classes } => HeaderHead {
                    kind: "linear".to_string(),
                    classes: Some(classes),
                },
            },
        },
        param_count: model.param_count(),
        segments: segments_for(model),
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| CheckpointError::Io {
        message: e.to_string(),
    })?;

    let params = model.collect_params();
    let mut bytes = Vec::with_capacity(8 + header_json.len() + 8 * params.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in &params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Deserialize a model from `path`, rebuilding the architecture from the
/// header and overwriting every parameter from the payload.
pub fn load_model(path: &Path) -> Result<Model, CheckpointError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let header_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let header_end = 8 + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::HeaderCorrupt {
            detail: "file shorter than the declared header".to_string(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..header_end]).map_err(|e| CheckpointError::HeaderCorrupt {
            detail: e.to_string(),
        })?;
    if header.version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            got: header.version,
        });
    }

    let head = match header.hyper.head.kind.as_str() {
        "summation" => HeadKind::Summation,
        "linear" => HeadKind::Linear {
            classes: header.hyper.head.classes.ok_or(CheckpointError::HeaderCorrupt {
                detail: "linear head without a class count".to_string(),
            })?,
        },
        other => {
            return Err(CheckpointError::HeaderCorrupt {
                detail: format!("unknown head kind `{other}`"),
            })
        }
    };
    let cfg = ModelConfig {
        tokens: header.hyper.tokens,
        token_dim: header.hyper.token_dim,
        layers: header.hyper.layers,
        experts: header.hyper.experts,
        hidden_budget: header.hyper.hidden_budget,
        head,
        output_bias_init: 0.0,
    };
    let mut model = Model::init(&cfg, &mut RngStream::new(0, "checkpoint-load"))
        .map_err(|e| CheckpointError::HeaderCorrupt {
            detail: e.to_string(),
        })?;
    if model.param_count() != header.param_count {
        return Err(CheckpointError::ShapeMismatch {
            implied: model.param_count(),
            stated: header.param_count,
        });
    }

    let payload = &bytes[header_end..];
    if payload.len() != 8 * header.param_count {
        return Err(CheckpointError::PayloadCorrupt {
            expected_floats: header.param_count,
            got_floats: payload.len() / 8,
        });
    }
    let params: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect();
    model.set_params(&params).map_err(|e| CheckpointError::PayloadCorrupt {
        expected_floats: header.param_count,
        got_floats: match e {
            softmoe_core::Error::LengthMismatch { got, .. } => got,
            _ => params.len(),
        },
    })?;
    Ok(model)
}
