//! Corpus manifests and the `EMB1` embedding file format.
//!
//! Embedding files are little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       4     u32 n_layers
//! 8       4     u32 n_frames
//! 12      4     u32 dim
//! 16      ...   f32 payload, layer-major, then frame, then dim
//! ```
//!
//! Layers are numbered 1..=12 in the public API so that layer groups read
//! like `1-3 .. 10-12`; on disk layer `l` is stored at index `l - 1`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const HEADER_LEN: usize = 16;
pub const N_LAYERS: usize = 12;
pub const EMBED_DIM: usize = 768;
pub const MANIFEST_VERSION: u32 = 1;

/// Binary class label. `Pathologic` is the positive class (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Control = 0,
    Pathologic = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Control),
            1 => Some(Label::Pathologic),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// +1 for pathologic, -1 for control.
    pub fn sign(self) -> f64 {
        match self {
            Label::Control => -1.0,
            Label::Pathologic => 1.0,
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_u8(v).ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

/// What kind of corpus a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// Pathologic speakers, possibly together with matched controls.
    Pathologic,
    /// Healthy speakers only; every utterance must carry label 0.
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub label: Label,
    /// `None` when the corpus carries no age metadata. Never encoded as 0.
    #[serde(default)]
    pub age_years: Option<f64>,
    pub content_tag: String,
    pub condition_tag: String,
    /// Relative paths are resolved against the manifest's directory.
    pub embedding_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub manifest_version: u32,
    pub corpus_id: String,
    pub label_scheme: LabelScheme,
    pub utterances: Vec<UtteranceRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn new(corpus_id: impl Into<String>, label_scheme: LabelScheme, utterances: Vec<UtteranceRecord>) -> Self {
        CorpusManifest {
            manifest_version: MANIFEST_VERSION,
            corpus_id: corpus_id.into(),
            label_scheme,
            utterances,
            base_dir: PathBuf::new(),
        }
    }

    pub fn resolve(&self, rec: &UtteranceRecord) -> PathBuf {
        if rec.embedding_path.is_absolute() {
            rec.embedding_path.clone()
        } else {
            self.base_dir.join(&rec.embedding_path)
        }
    }

    /// Speaker id -> label, ordered by speaker id.
    pub fn speakers(&self) -> BTreeMap<&str, Label> {
        self.utterances
            .iter()
            .map(|u| (u.speaker_id.as_str(), u.label))
            .collect()
    }

    /// Checks every structural invariant that does not need the filesystem.
    pub fn check(&self) -> Result<()> {
        if self.manifest_version != MANIFEST_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported manifest_version {}",
                self.manifest_version
            )));
        }
        if self.corpus_id.trim().is_empty() {
            return Err(Error::MissingField("corpus_id".into()));
        }
        let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
        let mut ids = HashSet::new();
        for u in &self.utterances {
            if u.utterance_id.is_empty() {
                return Err(Error::MissingField("utterance_id".into()));
            }
            if u.speaker_id.is_empty() {
                return Err(Error::MissingField("speaker_id".into()));
            }
            if u.embedding_path.as_os_str().is_empty() {
                return Err(Error::MissingField("embedding_path".into()));
            }
            if !ids.insert(u.utterance_id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate utterance_id {}", u.utterance_id)));
            }
            if let Some(age) = u.age_years {
                if !(0.0..=120.0).contains(&age) {
                    return Err(Error::AgeOutOfRange(age));
                }
            }
            if self.label_scheme == LabelScheme::Control && u.label != Label::Control {
                return Err(Error::InvalidInput(format!(
                    "utterance {} is labeled pathologic in a control corpus",
                    u.utterance_id
                )));
            }
            match labels.insert(u.speaker_id.as_str(), u.label) {
                Some(prev) if prev != u.label => return Err(Error::ConflictingLabel(u.speaker_id.clone())),
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<CorpusManifest> {
    let mut manifest: CorpusManifest = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `") {
            Some(rest) => Error::MissingField(rest.split('`').next().unwrap_or_default().to_string()),
            None => Error::Parse {
                path: path.to_path_buf(),
                message: msg,
            },
        }
    })?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.check()?;
    Ok(manifest)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn save_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.check()?;
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Header-described tensor of any shape. The embedding format with a fixed
/// 12 x frames x 768 shape is a restriction of this.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub n_layers: usize,
    pub n_frames: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let expected = self.n_layers * self.n_frames * self.dim;
        if self.data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: self.data.len(),
            });
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * expected);
        out.extend_from_slice(&MAGIC);
        for v in [self.n_layers, self.n_frames, self.dim] {
            let v = u32::try_from(v).map_err(|_| Error::InvalidInput(format!("shape value {v} exceeds u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<RawTensor> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (n_layers, n_frames, dim) = (word(1), word(2), word(3));
        let count = n_layers
            .checked_mul(n_frames)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::InvalidInput("declared shape overflows".into()))?;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::InvalidInput(format!(
                "{} trailing bytes after payload",
                bytes.len() - expected
            )));
        }
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite(i));
            }
            data.push(v);
        }
        Ok(RawTensor {
            n_layers,
            n_frames,
            dim,
            data,
        })
    }
}

pub fn write_raw(tensor: &RawTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawTensor::decode(&bytes)
}

/// Per-utterance hidden states: 12 layers x n_frames x 768.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    n_frames: usize,
    data: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(n_frames: usize, data: Vec<f32>) -> Result<Self> {
        if n_frames == 0 {
            return Err(Error::ZeroFrames);
        }
        let expected = N_LAYERS * n_frames * EMBED_DIM;
        if data.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(EmbeddingTensor { n_frames, data })
    }

    pub fn zeros(n_frames: usize) -> Self {
        EmbeddingTensor {
            n_frames,
            data: vec![0.0; N_LAYERS * n_frames * EMBED_DIM],
        }
    }

    /// Builds a tensor from `f(layer, frame, d)` with 1-based `layer`.
    pub fn from_fn(n_frames: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(N_LAYERS * n_frames * EMBED_DIM);
        for l in 1..=N_LAYERS {
            for t in 0..n_frames {
                for d in 0..EMBED_DIM {
                    data.push(f(l, t, d));
                }
            }
        }
        Self::new(n_frames, data)
    }

    pub fn n_layers(&self) -> usize {
        N_LAYERS
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        EMBED_DIM
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// One frame of one layer; `layer` is 1-based.
    pub fn frame(&self, layer: usize, frame: usize) -> &[f32] {
        assert!((1..=N_LAYERS).contains(&layer), "layer index {layer} outside 1..=12");
        assert!(frame < self.n_frames);
        let start = ((layer - 1) * self.n_frames + frame) * EMBED_DIM;
        &self.data[start..start + EMBED_DIM]
    }

    pub fn into_raw(self) -> RawTensor {
        RawTensor {
            n_layers: N_LAYERS,
            n_frames: self.n_frames,
            dim: EMBED_DIM,
            data: self.data,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        RawTensor {
            n_layers: N_LAYERS,
            n_frames: self.n_frames,
            dim: EMBED_DIM,
            data: self.data.clone(),
        }
        .encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawTensor::decode(bytes)?;
        Self::try_from(raw)
    }
}

impl TryFrom<RawTensor> for EmbeddingTensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        if raw.n_layers != N_LAYERS {
            return Err(Error::LayerCount(raw.n_layers as u32));
        }
        if raw.dim != EMBED_DIM {
            return Err(Error::DimMismatch {
                expected: EMBED_DIM,
                found: raw.dim,
            });
        }
        EmbeddingTensor::new(raw.n_frames, raw.data)
    }
}

/// Expected on-disk size for an embedding with `n_frames` frames.
pub fn embedding_file_len(n_frames: usize) -> usize {
    HEADER_LEN + 4 * N_LAYERS * n_frames * EMBED_DIM
}

pub fn write_embedding(tensor: &EmbeddingTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = tensor.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTensor::from_bytes(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileStatus {
    Ok,
    Missing,
    BadMagic,
    LayerCount,
    DimMismatch,
    Truncated,
    NonFinite,
    Unreadable,
}

impl FileStatus {
    fn of(err: &Error) -> FileStatus {
        match err {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => FileStatus::Missing,
            Error::BadMagic(_) => FileStatus::BadMagic,
            Error::LayerCount(_) => FileStatus::LayerCount,
            Error::DimMismatch { .. } => FileStatus::DimMismatch,
            Error::Truncated { .. } => FileStatus::Truncated,
            Error::NonFinite(_) | Error::ZeroFrames => FileStatus::NonFinite,
            _ => FileStatus::Unreadable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileCheck {
    pub utterance_id: String,
    pub path: PathBuf,
    pub status: FileStatus,
    /// First error encountered for this file, if any.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub corpus_id: String,
    pub utterances: usize,
    pub speakers: usize,
    pub failures: usize,
    pub pass: bool,
    pub files: Vec<FileCheck>,
}

impl ValidationReport {
    pub fn failed(&self) -> impl Iterator<Item = &FileCheck> {
        self.files.iter().filter(|f| f.status != FileStatus::Ok)
    }
}

/// Opens every embedding file of the corpus; failures are reported, not
/// returned as errors.
pub fn validate_corpus(manifest: &CorpusManifest) -> ValidationReport {
    let structural = manifest.check().err().map(|e| e.to_string());
    let files: Vec<FileCheck> = manifest
        .utterances
        .par_iter()
        .map(|rec| {
            let path = manifest.resolve(rec);
            let (status, error) = if !path.exists() {
                (FileStatus::Missing, Some(format!("missing: {}", path.display())))
            } else {
                match read_embedding(&path) {
                    Ok(_) => (FileStatus::Ok, None),
                    Err(e) => (FileStatus::of(&e), Some(e.to_string())),
                }
            };
            FileCheck {
                utterance_id: rec.utterance_id.clone(),
                path: rec.embedding_path.clone(),
                status,
                error,
            }
        })
        .collect();
    let failures = files.iter().filter(|f| f.status != FileStatus::Ok).count();
    ValidationReport {
        corpus_id: manifest.corpus_id.clone(),
        utterances: manifest.utterances.len(),
        speakers: manifest.speakers().len(),
        failures,
        pass: failures == 0 && structural.is_none() && !manifest.utterances.is_empty(),
        files,
    }
}
