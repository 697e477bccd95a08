//! Time, layer-group and speaker pooling of hidden-state tensors into
//! classifier-ready feature rows. Every pool is an arithmetic mean.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_store::{
    read_embedding, validate_corpus, write_raw, CorpusManifest, EmbeddingTensor, Label, RawTensor, EMBED_DIM, N_LAYERS,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerGroup {
    #[serde(rename = "1-3")]
    L1_3,
    #[serde(rename = "4-6")]
    L4_6,
    #[serde(rename = "7-9")]
    L7_9,
    #[serde(rename = "10-12")]
    L10_12,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 4] = [LayerGroup::L1_3, LayerGroup::L4_6, LayerGroup::L7_9, LayerGroup::L10_12];

    /// 1-based member layers.
    pub fn members(self) -> [usize; 3] {
        let first = 3 * self.index() + 1;
        [first, first + 1, first + 2]
    }

    /// Position in `ALL`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerGroup::L1_3 => "1-3",
            LayerGroup::L4_6 => "4-6",
            LayerGroup::L7_9 => "7-9",
            LayerGroup::L10_12 => "10-12",
        }
    }
}

impl fmt::Display for LayerGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown layer group {s:?} (expected 1-3, 4-6, 7-9 or 10-12)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Utterance,
    Speaker,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Utterance => "utterance",
            Level::Speaker => "speaker",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utterance" => Ok(Level::Utterance),
            "speaker" => Ok(Level::Speaker),
            _ => Err(Error::InvalidInput(format!("unknown level {s:?}"))),
        }
    }
}

/// Per-layer time means, 12 rows of 768 values; row 0 is layer 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMeans(pub Vec<Vec<f64>>);

impl LayerMeans {
    /// Layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.0[l - 1]
    }
}

/// Elementwise mean of equally sized rows.
pub fn mean_of<'a, I>(rows: I) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = rows.into_iter();
    let mut acc = iter.next()?.to_vec();
    let mut n = 1usize;
    for row in iter {
        assert_eq!(row.len(), acc.len(), "rows differ in length");
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        n += 1;
    }
    let n = n as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}

pub fn time_pool(tensor: &EmbeddingTensor) -> Result<LayerMeans> {
    let frames = tensor.n_frames();
    if frames == 0 {
        return Err(Error::ZeroFrames);
    }
    let layers = (1..=N_LAYERS)
        .map(|l| {
            let mut acc = vec![0.0f64; EMBED_DIM];
            for t in 0..frames {
                for (a, &v) in acc.iter_mut().zip(tensor.frame(l, t)) {
                    *a += f64::from(v);
                }
            }
            acc.iter_mut().for_each(|a| *a /= frames as f64);
            acc
        })
        .collect();
    Ok(LayerMeans(layers))
}

pub fn layer_group_pool(means: &LayerMeans, group: LayerGroup) -> Vec<f64> {
    mean_of(group.members().iter().map(|&l| means.layer(l))).expect("group has three members")
}

pub fn speaker_pool(utterances: &[Vec<f64>]) -> Result<Vec<f64>> {
    mean_of(utterances.iter().map(Vec::as_slice)).ok_or(Error::Empty("speaker has no utterances"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub unit_id: String,
    /// Equal to `unit_id` for speaker-level rows.
    pub speaker_id: String,
    pub label: Label,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub source_corpus: String,
    pub group: LayerGroup,
    pub level: Level,
    pub rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn new(source_corpus: impl Into<String>, group: LayerGroup, level: Level, rows: Vec<FeatureRow>) -> Result<Self> {
        let m = FeatureMatrix {
            source_corpus: source_corpus.into(),
            group,
            level,
            rows,
        };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        let dim = self.dim();
        for row in &self.rows {
            if row.x.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.x.len(),
                });
            }
            if row.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite feature in row {}", row.unit_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.x.len())
    }

    /// (controls, pathologic) row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.rows.iter().filter(|r| r.label == Label::Pathologic).count();
        (self.rows.len() - pos, pos)
    }

    /// Errors unless both classes are present.
    pub fn require_both_classes(&self) -> Result<()> {
        match self.class_counts() {
            (0, 0) => Err(Error::Empty("feature matrix")),
            (0, _) => Err(Error::SingleClass(1)),
            (_, 0) => Err(Error::SingleClass(0)),
            _ => Ok(()),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            source_corpus: self.source_corpus.clone(),
            group: self.group,
            level: self.level,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn features(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.x.as_slice()).collect()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Tab-separated export: `#key=value` metadata lines, then one row per
    /// unit as `unit_id, label, x_1 .. x_dim`; utterance-level rows carry
    /// `speaker_id` after `unit_id`. Values are written in the shortest form
    /// that parses back to the same `f64`.
    pub fn write_tsv(&self, path: impl AsRef<Path>, extra_meta: &[(String, String)]) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        out.push_str(&format!("#corpus={}\n#group={}\n#level={}\n", self.source_corpus, self.group, self.level));
        for (k, v) in extra_meta {
            out.push_str(&format!("#{k}={v}\n"));
        }
        for row in &self.rows {
            out.push_str(&row.unit_id);
            out.push('\t');
            if self.level == Level::Utterance {
                out.push_str(&row.speaker_id);
                out.push('\t');
            }
            out.push_str(&row.label.as_u8().to_string());
            for v in &row.x {
                out.push('\t');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut meta = BTreeMap::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line[1..].split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::MissingField(k.to_string()));
        let group: LayerGroup = get("group")?.parse()?;
        let level: Level = get("level")?.parse()?;
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let unit_id = fields.next().unwrap_or_default().to_string();
            let speaker_id = match level {
                Level::Utterance => fields
                    .next()
                    .map(str::to_string)
                    .ok_or_else(|| parse_err(format!("line {}: missing speaker id", lineno + 1)))?,
                Level::Speaker => unit_id.clone(),
            };
            let label = fields
                .next()
                .and_then(|s| s.parse::<u8>().ok())
                .and_then(Label::from_u8)
                .ok_or_else(|| parse_err(format!("line {}: bad label", lineno + 1)))?;
            let x = fields
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("line {}: {e}", lineno + 1)))?;
            rows.push(FeatureRow {
                unit_id,
                speaker_id,
                label,
                x,
            });
        }
        FeatureMatrix::new(get("corpus")?, group, level, rows)
    }

    /// Writes each row as a 1 x 1 x dim tensor file named `<unit_id>.emb`.
    pub fn write_binary_rows(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for row in &self.rows {
            let t = RawTensor {
                n_layers: 1,
                n_frames: 1,
                dim: row.x.len(),
                data: row.x.iter().map(|&v| v as f32).collect(),
            };
            write_raw(&t, dir.join(format!("{}.emb", row.unit_id)))?;
        }
        Ok(())
    }
}

/// Utterance-level pooled vectors for every layer group, read once per file.
fn pooled_utterances(manifest: &CorpusManifest) -> Result<Vec<[Vec<f64>; 4]>> {
    manifest
        .utterances
        .par_iter()
        .map(|rec| {
            let path = manifest.resolve(rec);
            let tensor = read_embedding(&path).map_err(|e| e.context(format!("utterance {}", rec.utterance_id)))?;
            let means = time_pool(&tensor)?;
            Ok(LayerGroup::ALL.map(|g| layer_group_pool(&means, g)))
        })
        .collect()
}

/// Builds feature matrices for all four layer groups with a single pass
/// over the embedding files. Rows are ordered by unit id.
pub fn build_all_groups(manifest: &CorpusManifest, level: Level) -> Result<[FeatureMatrix; 4]> {
    let report = validate_corpus(manifest);
    if !report.pass {
        let first = report
            .failed()
            .next()
            .map(|f| format!("{}: {}", f.utterance_id, f.error.clone().unwrap_or_default()))
            .unwrap_or_else(|| "corpus is empty or malformed".into());
        return Err(Error::Validation(format!("{} ({} failures) first: {first}", manifest.corpus_id, report.failures)));
    }
    if manifest.utterances.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let pooled = pooled_utterances(manifest)?;

    let mut per_group: [Vec<FeatureRow>; 4] = Default::default();
    match level {
        Level::Utterance => {
            for (rec, vecs) in manifest.utterances.iter().zip(pooled) {
                for (g, x) in vecs.into_iter().enumerate() {
                    per_group[g].push(FeatureRow {
                        unit_id: rec.utterance_id.clone(),
                        speaker_id: rec.speaker_id.clone(),
                        label: rec.label,
                        x,
                    });
                }
            }
        }
        Level::Speaker => {
            // speaker -> (label, [(utterance_id, vectors)])
            let mut speakers: BTreeMap<&str, (Label, Vec<(&str, &[Vec<f64>; 4])>)> = BTreeMap::new();
            for (rec, vecs) in manifest.utterances.iter().zip(&pooled) {
                speakers
                    .entry(rec.speaker_id.as_str())
                    .or_insert_with(|| (rec.label, Vec::new()))
                    .1
                    .push((rec.utterance_id.as_str(), vecs));
            }
            for (speaker, (label, mut utts)) in speakers {
                utts.sort_by(|a, b| a.0.cmp(b.0));
                for (g, rows) in per_group.iter_mut().enumerate() {
                    let x = mean_of(utts.iter().map(|(_, v)| v[g].as_slice())).expect("speaker has utterances");
                    rows.push(FeatureRow {
                        unit_id: speaker.to_string(),
                        speaker_id: speaker.to_string(),
                        label,
                        x,
                    });
                }
            }
        }
    }
    let mut out = Vec::with_capacity(4);
    for (g, mut rows) in per_group.into_iter().enumerate() {
        rows.sort_by(|a, b| a.unit_id.cmp(&b.unit_id));
        out.push(FeatureMatrix::new(manifest.corpus_id.clone(), LayerGroup::ALL[g], level, rows)?);
    }
    Ok(out.try_into().expect("four groups"))
}

pub fn build_dataset(manifest: &CorpusManifest, group: LayerGroup, level: Level) -> Result<FeatureMatrix> {
    let [a, b, c, d] = build_all_groups(manifest, level)?;
    Ok([a, b, c, d].into_iter().nth(group.index()).unwrap())
}
