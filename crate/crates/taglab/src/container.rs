//! Versioned model persistence.
//!
//! CRF and neural models use the `TAGLAB` container: a self-describing text
//! header (magic + version, model kind, one JSON metadata line) followed by
//! one block per named parameter carrying its shape and raw little-endian
//! f64 payload. Scalars round-trip bit-exactly. Baseline models keep their
//! own plain-text format; loading sniffs the first line.
//!
//! ```text
//! TAGLAB 1
//! kind neural
//! meta {...}
//! param word_emb 2 153 100 122400
//! <raw bytes>
//! ...
//! end
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Baseline;
use crate::corpus::Vocabulary;
use crate::crf::{CrfModel, FeatureIndex};
use crate::error::{Error, Result};
use crate::neural::{NeuralConfig, TaggerModel};
use crate::tensor::{ParamStore, Tensor};

pub const MAGIC: &str = "TAGLAB";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Major,
    Memo,
    Crf,
    Neural,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::Major => "major",
            ModelKind::Memo => "memo",
            ModelKind::Crf => "crf",
            ModelKind::Neural => "neural",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "major" => Ok(ModelKind::Major),
            "memo" => Ok(ModelKind::Memo),
            "crf" => Ok(ModelKind::Crf),
            "neural" => Ok(ModelKind::Neural),
            other => Err(Error::InvalidInput(format!(
                "unknown model kind {other:?} (expected major|memo|crf|neural)"
            ))),
        }
    }
}

/// Any trained tagger.
#[derive(Debug, Clone)]
pub enum AnyModel {
    Baseline(Baseline),
    Crf(CrfModel),
    Neural(TaggerModel),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Baseline(b) => match b {
                Baseline::Major(_) => ModelKind::Major,
                Baseline::Memo(_) => ModelKind::Memo,
            },
            AnyModel::Crf(_) => ModelKind::Crf,
            AnyModel::Neural(_) => ModelKind::Neural,
        }
    }

    /// Predict tag symbols for one token sequence.
    pub fn tag(&self, tokens: &[String]) -> Result<Vec<String>> {
        match self {
            AnyModel::Baseline(b) => Ok(b.predict(tokens)),
            AnyModel::Crf(m) => m.tag(tokens),
            AnyModel::Neural(m) => m.tag(tokens),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CrfMeta {
    window: usize,
    l2: f64,
    tags: Vec<String>,
    features: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NeuralMeta {
    config: NeuralConfig,
    vocab: Vocabulary,
}

fn push_params(out: &mut Vec<u8>, params: &ParamStore) {
    for (name, tensor) in params.iter() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        let header = format!(
            "param {name} {} {} {}\n",
            tensor.shape().len(),
            dims.join(" "),
            tensor.len() * 8
        );
        out.extend_from_slice(header.as_bytes());
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(b'\n');
    }
}

/// Serialize a model to bytes.
pub fn to_bytes(model: &AnyModel) -> Result<Vec<u8>> {
    if let AnyModel::Baseline(b) = model {
        return Ok(b.to_text().into_bytes());
    }
    let mut out = Vec::new();
    out.extend_from_slice(format!("{MAGIC} {FORMAT_VERSION}\n").as_bytes());
    out.extend_from_slice(format!("kind {}\n", model.kind()).as_bytes());
    match model {
        AnyModel::Crf(m) => {
            let meta = CrfMeta {
                window: m.window,
                l2: m.l2,
                tags: m.tags().to_vec(),
                features: m.feature_index().names().to_vec(),
            };
            let json = serde_json::to_string(&meta)
                .map_err(|e| Error::Format(format!("meta serialization failed: {e}")))?;
            out.extend_from_slice(format!("meta {json}\n").as_bytes());
            push_params(&mut out, m.params());
        }
        AnyModel::Neural(m) => {
            let meta = NeuralMeta {
                config: m.config.clone(),
                vocab: m.vocab.clone(),
            };
            let json = serde_json::to_string(&meta)
                .map_err(|e| Error::Format(format!("meta serialization failed: {e}")))?;
            out.extend_from_slice(format!("meta {json}\n").as_bytes());
            push_params(&mut out, m.params());
        }
        AnyModel::Baseline(_) => unreachable!(),
    }
    out.extend_from_slice(b"end\n");
    Ok(out)
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("truncated model file: missing newline".into()))?;
        self.pos += nl + 1;
        std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Format("model header is not UTF-8".into()))
    }

    fn payload(&mut self, nbytes: usize) -> Result<&'a [u8]> {
        if self.pos + nbytes + 1 > self.bytes.len() {
            return Err(Error::Format("truncated parameter payload".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + nbytes];
        self.pos += nbytes;
        if self.bytes[self.pos] != b'\n' {
            return Err(Error::Format("parameter payload not newline-terminated".into()));
        }
        self.pos += 1;
        Ok(slice)
    }
}

fn read_params(cur: &mut Cursor) -> Result<Vec<(String, Tensor)>> {
    let mut tensors = Vec::new();
    loop {
        let line = cur.line()?;
        if line == "end" {
            return Ok(tensors);
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < 4 || fields[0] != "param" {
            return Err(Error::Format(format!("bad parameter header {line:?}")));
        }
        let name = fields[1].to_string();
        let ndim: usize = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("bad rank in {line:?}")))?;
        if fields.len() != 4 + ndim {
            return Err(Error::Format(format!("bad parameter header {line:?}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for d in &fields[3..3 + ndim] {
            shape.push(
                d.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad dimension in {line:?}")))?,
            );
        }
        let nbytes: usize = fields[3 + ndim]
            .parse()
            .map_err(|_| Error::Format(format!("bad byte count in {line:?}")))?;
        let numel: usize = shape.iter().product();
        if nbytes != numel * 8 {
            return Err(Error::Format(format!(
                "payload size {nbytes} does not match shape {shape:?}"
            )));
        }
        let raw = cur.payload(nbytes)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::from_data(&shape, data)?));
    }
}

fn restore_into(store: &mut ParamStore, tensors: Vec<(String, Tensor)>) -> Result<()> {
    let mut seen = 0;
    for (name, tensor) in tensors {
        let id = store
            .id(&name)
            .map_err(|_| Error::Format(format!("unexpected parameter {name:?}")))?;
        let existing = store.get_mut(id);
        if existing.shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "parameter {name:?} has shape {:?}, expected {:?}",
                tensor.shape(),
                existing.shape()
            )));
        }
        existing.data_mut().copy_from_slice(tensor.data());
        seen += 1;
    }
    if seen != store.len() {
        return Err(Error::Format(format!(
            "model file provides {seen} parameters, expected {}",
            store.len()
        )));
    }
    Ok(())
}

/// Deserialize a model from bytes, checking magic and version.
pub fn from_bytes(bytes: &[u8]) -> Result<AnyModel> {
    // Baseline plain-text formats sniff on the first token.
    if bytes.starts_with(b"MAJOR ") || bytes.starts_with(b"MEMO ") || bytes.starts_with(b"MEMO\n") {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Format("baseline model is not UTF-8".into()))?;
        return Ok(AnyModel::Baseline(Baseline::from_text(text)?));
    }

    let mut cur = Cursor { bytes, pos: 0 };
    let magic_line = cur.line()?;
    let mut parts = magic_line.split(' ');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(MAGIC), Some(v), None) => {
            let version: u32 = v
                .parse()
                .map_err(|_| Error::Format(format!("bad version field {v:?}")))?;
            if version != FORMAT_VERSION {
                return Err(Error::Version(version, FORMAT_VERSION));
            }
        }
        _ => {
            return Err(Error::Format(format!(
                "not a {MAGIC} model file (header {magic_line:?})"
            )))
        }
    }

    let kind_line = cur.line()?;
    let kind: ModelKind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| Error::Format(format!("expected kind line, got {kind_line:?}")))?
        .parse()?;
    let meta_line = cur.line()?;
    let meta_json = meta_line
        .strip_prefix("meta ")
        .ok_or_else(|| Error::Format(format!("expected meta line, got {meta_line:?}")))?;

    match kind {
        ModelKind::Crf => {
            let meta: CrfMeta = serde_json::from_str(meta_json)
                .map_err(|e| Error::Format(format!("bad crf metadata: {e}")))?;
            let mut model = CrfModel::new(
                meta.window,
                meta.l2,
                FeatureIndex::from_names(meta.features),
                meta.tags,
            )?;
            restore_into(model.params_mut(), read_params(&mut cur)?)?;
            Ok(AnyModel::Crf(model))
        }
        ModelKind::Neural => {
            let meta: NeuralMeta = serde_json::from_str(meta_json)
                .map_err(|e| Error::Format(format!("bad neural metadata: {e}")))?;
            let mut model = TaggerModel::new(meta.config.clone(), meta.vocab, 0)?;
            restore_into(model.params_mut(), read_params(&mut cur)?)?;
            Ok(AnyModel::Neural(model))
        }
        other => Err(Error::Format(format!(
            "container cannot hold baseline kind {other}"
        ))),
    }
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path)?;
    from_bytes(&bytes)
}

/// Load and require a specific model kind.
pub fn load_model_expecting(path: &Path, expected: Option<ModelKind>) -> Result<AnyModel> {
    let model = load_model(path)?;
    if let Some(kind) = expected {
        if model.kind() != kind {
            return Err(Error::Format(format!(
                "model kind mismatch: file holds {}, expected {kind}",
                model.kind()
            )));
        }
    }
    Ok(model)
}
