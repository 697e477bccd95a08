//! Synthetic embedding corpora with controllable confounds.
//!
//! Every utterance vector in layer group `g` is, in units of `noise_std`,
//!
//! ```text
//! label[g]     * (+/- separation / 2) * e_label
//! + condition[g] * condition offset
//! + age[g]       * age_scale * (age - mid_age) * e_age
//! + content[g]   * content center of the utterance
//! + speaker noise (low-rank subspace containing e_label, plus isotropic residual)
//! + utterance noise
//! ```
//!
//! where `label`, `condition`, `age` and `content` are the per-group
//! weights of the [`LayerProfile`]. The three layers of a group and the
//! frames of an utterance carry zero-sum perturbations, so pooling
//! recovers the group vector exactly (up to f32 storage).
//!
//! All covariate directions are orthogonal to `e_label`. Shifted variants
//! move the condition or the content along a direction whose cosine with
//! `e_label` is `shift_coupling`, i.e. recording condition and spoken
//! content partially mimic the pathology direction.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_store::{
    save_manifest, write_embedding, CorpusManifest, EmbeddingTensor, Label, LabelScheme, UtteranceRecord, EMBED_DIM,
};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Per-layer-group expression weights of each factor, indexed like
/// `LayerGroup::ALL` (1-3, 4-6, 7-9, 10-12).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub label: [f64; 4],
    pub condition: [f64; 4],
    pub age: [f64; 4],
    pub content: [f64; 4],
}

impl Default for LayerProfile {
    /// Acoustic condition and age dominate the lower groups, spoken content
    /// the middle ones.
    fn default() -> Self {
        LayerProfile {
            label: [1.0, 1.0, 1.0, 1.0],
            condition: [1.0, 0.5, 0.1, 0.0],
            age: [1.0, 0.6, 0.2, 0.0],
            content: [0.0, 1.0, 1.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Condition,
    Age,
    Content,
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftKind::Condition => "condition",
            ShiftKind::Age => "age",
            ShiftKind::Content => "content",
        })
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "condition" => Ok(ShiftKind::Condition),
            "age" => Ok(ShiftKind::Age),
            "content" => Ok(ShiftKind::Content),
            _ => Err(Error::InvalidInput(format!(
                "unknown shift {s:?} (expected condition, age or content)"
            ))),
        }
    }
}

/// Covariate shift applied to a healthy-only variant. `magnitude` is in
/// units of `noise_std` for condition and content, in years for age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub kind: ShiftKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub corpus_id: String,
    pub n_speakers_per_class: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    /// Distance between class means along the label axis, in noise_std.
    pub label_separation: f64,
    pub noise_std: f64,
    /// Dimension of the speaker-variability subspace.
    pub noise_rank: usize,
    /// Isotropic per-dimension noise, in noise_std.
    pub residual_std: f64,
    /// Utterance-level noise relative to speaker-level noise.
    pub utterance_noise: f64,
    /// Recording-condition offset shared by every utterance, in noise_std.
    pub condition_offset: f64,
    pub condition_tag: String,
    /// Feature displacement per year of age, in noise_std.
    pub age_scale: f64,
    pub age_range: [f64; 2],
    pub content_clusters: usize,
    /// Norm of each content center, in noise_std.
    pub content_spread: f64,
    /// Cosine between shift directions and the label axis.
    pub shift_coupling: f64,
    pub layer_profile: LayerProfile,
    /// Only set for healthy-only shifted variants.
    pub shift: Option<Shift>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            corpus_id: "synth".into(),
            n_speakers_per_class: 100,
            utterances_per_speaker: 3,
            frames_per_utterance: 2,
            label_separation: 6.0,
            noise_std: 1.0,
            noise_rank: 16,
            residual_std: 0.1,
            utterance_noise: 0.3,
            condition_offset: 2.0,
            condition_tag: "clinic".into(),
            age_scale: 0.3,
            age_range: [4.0, 14.0],
            content_clusters: 4,
            content_spread: 3.0,
            shift_coupling: 0.7,
            layer_profile: LayerProfile::default(),
            shift: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("synth spec: {m}")));
        if self.corpus_id.trim().is_empty() {
            return bad("corpus_id is empty");
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be positive");
        }
        if self.n_speakers_per_class == 0 || self.utterances_per_speaker == 0 || self.frames_per_utterance == 0 {
            return bad("speaker, utterance and frame counts must be positive");
        }
        if !(6..=EMBED_DIM).contains(&self.noise_rank) {
            return bad("noise_rank must lie in [6, 768]");
        }
        if self.content_clusters == 0 {
            return bad("content_clusters must be at least 1");
        }
        if self.label_separation < 0.0 || self.residual_std < 0.0 || self.utterance_noise < 0.0 {
            return bad("separation and noise levels must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.shift_coupling) {
            return bad("shift_coupling must lie in [0, 1]");
        }
        let [lo, hi] = self.age_range;
        if !(0.0 <= lo && lo <= hi && hi <= 120.0) {
            return bad("age_range must satisfy 0 <= min <= max <= 120");
        }
        let p = &self.layer_profile;
        if [p.label, p.condition, p.age, p.content].iter().flatten().any(|w| !(*w >= 0.0)) {
            return bad("layer_profile weights must be nonnegative");
        }
        if let Some(s) = self.shift {
            if !s.magnitude.is_finite() {
                return bad("shift magnitude must be finite");
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Fixed directions of a spec, derived from its seed only, so that a base
/// corpus and all of its shifted variants share them.
#[derive(Debug, Clone)]
pub struct SynthBasis {
    pub label_axis: Vec<f64>,
    pub condition_axis: Vec<f64>,
    pub age_axis: Vec<f64>,
    pub content_shift_axis: Vec<f64>,
    /// Orthonormal basis of the speaker-variability subspace; entry 0 is
    /// the label axis.
    pub subspace: Vec<Vec<f64>>,
    /// Content centers, each of norm `content_spread` (noise_std units).
    pub content_centers: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

impl SynthBasis {
    pub fn new(spec: &SynthSpec) -> SynthBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth-basis"));
        let mut subspace: Vec<Vec<f64>> = Vec::with_capacity(spec.noise_rank);
        while subspace.len() < spec.noise_rank {
            let mut v = gaussian_vec(&mut rng, EMBED_DIM);
            for b in &subspace {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            if dot(&v, &v) < 1e-6 {
                continue;
            }
            normalize(&mut v);
            subspace.push(v);
        }
        let content_centers = (0..spec.content_clusters)
            .map(|_| {
                let coefs = gaussian_vec(&mut rng, spec.noise_rank - 4);
                let mut c = vec![0.0; EMBED_DIM];
                for (w, b) in coefs.iter().zip(&subspace[4..]) {
                    c.iter_mut().zip(b).for_each(|(x, y)| *x += w * y);
                }
                normalize(&mut c);
                c.iter_mut().for_each(|x| *x *= spec.content_spread);
                c
            })
            .collect();
        SynthBasis {
            label_axis: subspace[0].clone(),
            condition_axis: subspace[1].clone(),
            age_axis: subspace[2].clone(),
            content_shift_axis: subspace[3].clone(),
            subspace,
            content_centers,
        }
    }

    /// Direction of a condition or content shift: `coupling` along the
    /// label axis, the remainder along the covariate's own axis.
    pub fn shift_direction(&self, kind: ShiftKind, coupling: f64) -> Vec<f64> {
        let own = match kind {
            ShiftKind::Condition => &self.condition_axis,
            ShiftKind::Content => &self.content_shift_axis,
            ShiftKind::Age => return self.age_axis.clone(),
        };
        let ortho = (1.0 - coupling * coupling).max(0.0).sqrt();
        self.label_axis.iter().zip(own).map(|(l, o)| coupling * l + ortho * o).collect()
    }
}

struct SpeakerPlan {
    id: String,
    label: Label,
    age: f64,
}

fn speaker_plans(spec: &SynthSpec) -> Vec<SpeakerPlan> {
    let healthy_only = spec.shift.is_some();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("{}#ages", spec.corpus_id)));
    let [lo, hi] = spec.age_range;
    let age_shift = match spec.shift {
        Some(Shift {
            kind: ShiftKind::Age,
            magnitude,
        }) => magnitude,
        _ => 0.0,
    };
    let mut plans = Vec::new();
    let classes: &[(Label, &str)] = if healthy_only {
        &[(Label::Control, "c")]
    } else {
        &[(Label::Control, "c"), (Label::Pathologic, "p")]
    };
    for &(label, tag) in classes {
        for i in 0..spec.n_speakers_per_class {
            let base_age = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            plans.push(SpeakerPlan {
                id: format!("{}-{tag}{i:04}", spec.corpus_id),
                label,
                age: (base_age + age_shift).clamp(0.0, 120.0),
            });
        }
    }
    plans
}

/// Group vectors (noise_std = 1 units before final scaling) of every
/// utterance of one speaker.
fn speaker_vectors(spec: &SynthSpec, basis: &SynthBasis, plan: &SpeakerPlan) -> Vec<(usize, [Vec<f64>; 4])> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &plan.id));
    let u = spec.utterances_per_speaker as f64;
    // speaker-level noise variance along the subspace is 1 after averaging
    // over utterances
    let speaker_scale = (1.0 - spec.utterance_noise.powi(2) / u).max(0.0).sqrt();
    let mut speaker_noise = vec![0.0; EMBED_DIM];
    for b in &basis.subspace {
        let z: f64 = StandardNormal.sample(&mut rng);
        speaker_noise.iter_mut().zip(b).for_each(|(x, y)| *x += speaker_scale * z * y);
    }
    for x in speaker_noise.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += spec.residual_std * z;
    }

    let label_coord = plan.label.sign() * spec.label_separation / 2.0;
    let mid_age = (spec.age_range[0] + spec.age_range[1]) / 2.0;
    let age_coord = spec.age_scale * (plan.age - mid_age);

    let mut condition = basis.condition_axis.iter().map(|v| v * spec.condition_offset).collect::<Vec<_>>();
    let mut content_offset = vec![0.0; EMBED_DIM];
    if let Some(shift) = spec.shift {
        let dir = basis.shift_direction(shift.kind, spec.shift_coupling);
        match shift.kind {
            ShiftKind::Condition => condition.iter_mut().zip(&dir).for_each(|(c, d)| *c += shift.magnitude * d),
            ShiftKind::Content => content_offset.iter_mut().zip(&dir).for_each(|(c, d)| *c += shift.magnitude * d),
            ShiftKind::Age => {}
        }
    }

    let p = &spec.layer_profile;
    (0..spec.utterances_per_speaker)
        .map(|_| {
            let content = rng.random_range(0..spec.content_clusters);
            let mut utt_noise = vec![0.0; EMBED_DIM];
            for b in &basis.subspace {
                let z: f64 = StandardNormal.sample(&mut rng);
                utt_noise.iter_mut().zip(b).for_each(|(x, y)| *x += spec.utterance_noise * z * y);
            }
            let groups = std::array::from_fn(|g| {
                (0..EMBED_DIM)
                    .map(|d| {
                        let v = p.label[g] * label_coord * basis.label_axis[d]
                            + p.condition[g] * condition[d]
                            + p.age[g] * age_coord * basis.age_axis[d]
                            + p.content[g] * (basis.content_centers[content][d] + content_offset[d])
                            + speaker_noise[d]
                            + utt_noise[d];
                        v * spec.noise_std
                    })
                    .collect()
            });
            (content, groups)
        })
        .collect()
}

/// Zero-sum perturbations of length `n` (rows) x `EMBED_DIM`.
fn zero_sum_jitter(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![0.0; EMBED_DIM]];
    }
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..EMBED_DIM).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>())
        .collect();
    for d in 0..EMBED_DIM {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n as f64;
        rows.iter_mut().for_each(|r| r[d] -= mean);
    }
    rows
}

fn utterance_tensor(spec: &SynthSpec, groups: &[Vec<f64>; 4], seed: u64) -> Result<EmbeddingTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = spec.frames_per_utterance;
    let jitter = 0.1 * spec.noise_std;
    // layer l (1-based) of group g gets group vector + layer jitter;
    // frames add frame jitter
    let mut layers: Vec<Vec<f64>> = Vec::with_capacity(12);
    for g in groups {
        for j in zero_sum_jitter(&mut rng, 3, jitter) {
            layers.push(g.iter().zip(&j).map(|(a, b)| a + b).collect());
        }
    }
    let frame_jitter: Vec<Vec<Vec<f64>>> = (0..12).map(|_| zero_sum_jitter(&mut rng, frames, jitter)).collect();
    EmbeddingTensor::from_fn(frames, |l, t, d| (layers[l - 1][d] + frame_jitter[l - 1][t][d]) as f32)
}

/// Writes `manifest.json` and `emb/*.emb` under `out_dir`.
pub fn gen_corpus(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let emb_dir = out_dir.join("emb");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let basis = SynthBasis::new(spec);
    let plans = speaker_plans(spec);

    let records: Vec<Vec<UtteranceRecord>> = plans
        .par_iter()
        .map(|plan| {
            speaker_vectors(spec, &basis, plan)
                .into_iter()
                .enumerate()
                .map(|(j, (content, groups))| {
                    let utterance_id = format!("{}-u{j:02}", plan.id);
                    let tensor = utterance_tensor(spec, &groups, derive_seed(spec.seed, &utterance_id))?;
                    let rel = PathBuf::from("emb").join(format!("{utterance_id}.emb"));
                    write_embedding(&tensor, out_dir.join(&rel))?;
                    Ok(UtteranceRecord {
                        utterance_id,
                        speaker_id: plan.id.clone(),
                        label: plan.label,
                        age_years: Some((plan.age * 10.0).round() / 10.0),
                        content_tag: format!("content-{content}"),
                        condition_tag: match spec.shift {
                            Some(Shift {
                                kind: ShiftKind::Condition,
                                ..
                            }) => format!("{}-shifted", spec.condition_tag),
                            _ => spec.condition_tag.clone(),
                        },
                        embedding_path: rel,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let scheme = if spec.shift.is_some() {
        LabelScheme::Control
    } else {
        LabelScheme::Pathologic
    };
    let mut manifest = CorpusManifest::new(spec.corpus_id.clone(), scheme, records.into_iter().flatten().collect());
    manifest.base_dir = out_dir.to_path_buf();
    save_manifest(&manifest, out_dir.join("manifest.json"))?;
    let mut spec_text = serde_json::to_string_pretty(spec).expect("spec serializes");
    spec_text.push('\n');
    let spec_path = out_dir.join("synth_spec.json");
    fs::write(&spec_path, spec_text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

/// Spec of a healthy-only corpus drawn from the base control distribution
/// plus one covariate shift.
pub fn shifted_variant_spec(base: &SynthSpec, kind: ShiftKind, magnitude: f64) -> SynthSpec {
    SynthSpec {
        corpus_id: format!("{}-{kind}-{magnitude}", base.corpus_id),
        shift: Some(Shift { kind, magnitude }),
        ..base.clone()
    }
}

pub fn gen_shifted_variant(
    base: &SynthSpec,
    kind: ShiftKind,
    magnitude: f64,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest> {
    gen_corpus(&shifted_variant_spec(base, kind, magnitude), out_dir)
}
