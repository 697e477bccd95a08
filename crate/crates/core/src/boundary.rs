//! Approximate decision-boundary maps for high-dimensional classifiers.
//!
//! 1. Keypoints: bisection for `p = 0.5` on segments joining a
//!    pathologic and a control sample.
//! 2. Refinement along segments joining pairs of keypoints, scanned at
//!    `PROBES_PER_SEGMENT` interior probes for sign changes of `p - 0.5`.
//! 3. Refinement on hyperspheres around each keypoint (radius = distance
//!    to the nearest other keypoint), bisecting radially on sign changes.
//!
//! The resulting cloud, the data and the support vectors are embedded
//! together with t-SNE.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::FeatureMatrix;
use crate::corpus_store::Label;
use crate::error::{Error, Result};
use crate::model::{Classifier, ProbabilisticClassifier};
use crate::seed::derive_seed;
use crate::tsne::{tsne_embed, TsneConfig};

pub const DEFAULT_TOL: f64 = 0.01;
pub const DEFAULT_PAIRS: usize = 200;
pub const DEFAULT_LINES: usize = 100;
pub const DEFAULT_SPHERE_SAMPLES: usize = 20;
pub const PROBES_PER_SEGMENT: usize = 32;
pub const MAX_BISECTION_STEPS: usize = 60;
/// Bisection stops early once `|p - 0.5|` falls below this.
const EXACT_HALF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generation {
    Segment,
    KeypointLine,
    Hypersphere,
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generation::Segment => "segment",
            Generation::KeypointLine => "keypoint_line",
            Generation::Hypersphere => "hypersphere",
        })
    }
}

impl FromStr for Generation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Generation::Segment),
            "keypoint_line" => Ok(Generation::KeypointLine),
            "hypersphere" => Ok(Generation::Hypersphere),
            _ => Err(Error::InvalidInput(format!("unknown generation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub x: Vec<f64>,
    pub p: f64,
    pub generation: Generation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledVector {
    pub x: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCloud {
    pub points: Vec<BoundaryPoint>,
    pub support_vectors: Vec<LabeledVector>,
    pub tol: f64,
}

impl BoundaryCloud {
    pub fn count(&self, generation: Generation) -> usize {
        self.points.iter().filter(|p| p.generation == generation).count()
    }

    /// Rows of `x_1 .. x_dim, p, generation`, tab separated.
    pub fn to_tsv(&self) -> String {
        let dim = self.points.first().map_or(0, |p| p.x.len());
        let mut out = String::new();
        for d in 1..=dim {
            out.push_str(&format!("x{d}\t"));
        }
        out.push_str("p\tgeneration\n");
        for pt in &self.points {
            for v in &pt.x {
                out.push_str(&v.to_string());
                out.push('\t');
            }
            out.push_str(&format!("{}\t{}\n", pt.p, pt.generation));
        }
        out
    }

    /// Reads the points of a file written from `to_tsv`, skipping `#` lines.
    /// Support vectors are not part of the text form.
    pub fn read_points_tsv(path: impl AsRef<Path>) -> Result<Vec<BoundaryPoint>> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, m: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {line}: {m}"),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
        let header_len = match lines.next() {
            Some((_, h)) => h.split('\t').count(),
            None => return Err(parse_err(1, "missing header".into())),
        };
        lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, line)| {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != header_len || fields.len() < 2 {
                    return Err(parse_err(i + 1, format!("expected {header_len} fields, found {}", fields.len())));
                }
                let nums = fields[..fields.len() - 1]
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string())))
                    .collect::<Result<Vec<f64>>>()?;
                let (p, x) = nums.split_last().expect("at least one number");
                Ok(BoundaryPoint {
                    x: x.to_vec(),
                    p: *p,
                    generation: fields[fields.len() - 1].parse().map_err(|e: Error| parse_err(i + 1, e.to_string()))?,
                })
            })
            .collect()
    }
}

fn probability<M: ProbabilisticClassifier + ?Sized>(model: &M, x: &[f64]) -> Result<f64> {
    let p = model.predict_proba(x)?;
    if !p.is_finite() {
        return Err(Error::Degenerate("classifier returned a non-finite probability".into()));
    }
    Ok(p)
}

fn side(p: f64) -> bool {
    p >= 0.5
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(u, v)| u + t * (v - u)).collect()
}

/// Bisection on `[a, b]` for `p = 0.5`. Returns the best point found and
/// its probability when the segment changes side and the best point lies
/// within `tol`; a zero-length segment at `p ~ 0.5` returns `a`.
pub fn find_crossing<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    a: &[f64],
    b: &[f64],
    tol: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let pa = probability(model, a)?;
    if a == b {
        return Ok(((pa - 0.5).abs() <= tol).then(|| (a.to_vec(), pa)));
    }
    let pb = probability(model, b)?;
    crossing_between(model, a, b, pa, pb, tol)
}

fn crossing_between<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    a: &[f64],
    b: &[f64],
    pa: f64,
    pb: f64,
    tol: f64,
) -> Result<Option<(Vec<f64>, f64)>> {
    let side_a = side(pa);
    if side_a == side(pb) {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = if (pa - 0.5).abs() <= (pb - 0.5).abs() { (0.0, pa) } else { (1.0, pb) };
    for _ in 0..MAX_BISECTION_STEPS {
        if (best.1 - 0.5).abs() < EXACT_HALF {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let pm = probability(model, &lerp(a, b, mid))?;
        if (pm - 0.5).abs() < (best.1 - 0.5).abs() {
            best = (mid, pm);
        }
        if side(pm) == side_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(((best.1 - 0.5).abs() <= tol).then(|| (lerp(a, b, best.0), best.1)))
}

/// Pairs `(i, j)` with `i < n_a`, `j < n_b`: all of them if there are at
/// most `k`, otherwise `k` drawn without replacement, in index order.
fn sample_pairs(n_a: usize, n_b: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let total = n_a * n_b;
    let mut flat: Vec<usize> = if total <= k {
        (0..total).collect()
    } else {
        sample(rng, total, k).into_vec()
    };
    flat.sort_unstable();
    flat.into_iter().map(|f| (f / n_b, f % n_b)).collect()
}

pub fn generate_keypoints<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    pos: &[&[f64]],
    neg: &[&[f64]],
    n_pairs: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<BoundaryPoint>> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("keypoint sample set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sample_pairs(pos.len(), neg.len(), n_pairs, &mut rng);
    let hits: Vec<Option<(Vec<f64>, f64)>> = pairs
        .par_iter()
        .map(|&(i, j)| find_crossing(model, pos[i], neg[j], tol))
        .collect::<Result<_>>()?;
    let points: Vec<BoundaryPoint> = hits
        .into_iter()
        .flatten()
        .map(|(x, p)| BoundaryPoint {
            x,
            p,
            generation: Generation::Segment,
        })
        .collect();
    if points.is_empty() {
        log::warn!("no decision-boundary crossings among {} sample pairs", pairs.len());
    }
    Ok(points)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Probe parameters strictly inside a segment.
fn probe_ts() -> impl Iterator<Item = f64> {
    (1..=PROBES_PER_SEGMENT).map(|m| m as f64 / (PROBES_PER_SEGMENT + 1) as f64)
}

fn scan_segment<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    a: &[f64],
    b: &[f64],
    tol: f64,
) -> Result<Vec<BoundaryPoint>> {
    let probes: Vec<(Vec<f64>, f64)> = probe_ts()
        .map(|t| {
            let x = lerp(a, b, t);
            probability(model, &x).map(|p| (x, p))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for w in probes.windows(2) {
        let ((xa, pa), (xb, pb)) = (&w[0], &w[1]);
        if let Some((x, p)) = crossing_between(model, xa, xb, *pa, *pb, tol)? {
            out.push(BoundaryPoint {
                x,
                p,
                generation: Generation::KeypointLine,
            });
        }
    }
    Ok(out)
}

fn probe_sphere<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    center: &[f64],
    radius: f64,
    samples: usize,
    tol: f64,
    seed: u64,
) -> Result<Vec<BoundaryPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let inner_r = radius / PROBES_PER_SEGMENT as f64;
    for _ in 0..samples {
        let mut u: Vec<f64> = (0..center.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        u.iter_mut().for_each(|v| *v /= norm);
        let outer: Vec<f64> = center.iter().zip(&u).map(|(c, d)| c + radius * d).collect();
        let inner: Vec<f64> = center.iter().zip(&u).map(|(c, d)| c + inner_r * d).collect();
        let (po, pi) = (probability(model, &outer)?, probability(model, &inner)?);
        if let Some((x, p)) = crossing_between(model, &outer, &inner, po, pi, tol)? {
            out.push(BoundaryPoint {
                x,
                p,
                generation: Generation::Hypersphere,
            });
        }
    }
    Ok(out)
}

/// Number of points `refine_keypoints` may add at most.
pub fn refinement_bound(n_keypoints: usize, n_lines: usize, n_sphere_samples: usize) -> usize {
    let pairs = (n_keypoints * n_keypoints.saturating_sub(1) / 2).min(n_lines);
    pairs * PROBES_PER_SEGMENT + n_keypoints * n_sphere_samples
}

/// Returns the keypoints followed by the line and sphere refinements, in
/// (generation, probe index) order.
pub fn refine_keypoints<M: ProbabilisticClassifier + ?Sized>(
    model: &M,
    keypoints: &[BoundaryPoint],
    n_lines: usize,
    n_sphere_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<BoundaryCloud> {
    let k = keypoints.len();
    if k < 2 {
        return Err(Error::TooFewRows(format!("refinement needs at least 2 keypoints, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "keypoint-lines"));
    let all_pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let chosen: Vec<(usize, usize)> = if all_pairs.len() <= n_lines {
        all_pairs
    } else {
        let mut idx = sample(&mut rng, all_pairs.len(), n_lines).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| all_pairs[i]).collect()
    };
    let line_points: Vec<Vec<BoundaryPoint>> = chosen
        .par_iter()
        .map(|&(i, j)| scan_segment(model, &keypoints[i].x, &keypoints[j].x, tol))
        .collect::<Result<_>>()?;

    let sphere_points: Vec<Vec<BoundaryPoint>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let radius = (0..k)
                .filter(|&j| j != i)
                .map(|j| distance(&keypoints[i].x, &keypoints[j].x))
                .filter(|&d| d > 0.0)
                .fold(f64::INFINITY, f64::min);
            if !radius.is_finite() {
                return Ok(Vec::new());
            }
            probe_sphere(
                model,
                &keypoints[i].x,
                radius,
                n_sphere_samples,
                tol,
                derive_seed(seed, &format!("sphere#{i}")),
            )
        })
        .collect::<Result<_>>()?;

    let mut points = keypoints.to_vec();
    points.extend(line_points.into_iter().flatten());
    points.extend(sphere_points.into_iter().flatten());
    Ok(BoundaryCloud {
        points,
        support_vectors: Vec::new(),
        tol,
    })
}

/// Support vectors split by class. Non-SVM models have none; the second
/// value carries a notice in that case.
pub fn export_support_vectors(model: &Classifier) -> (Vec<LabeledVector>, Option<String>) {
    match model {
        Classifier::Svm(svm) => {
            let vectors = svm
                .support_vectors
                .iter()
                .zip(svm.support_labels())
                .map(|(x, label)| LabeledVector { x: x.clone(), label })
                .collect();
            (vectors, None)
        }
        Classifier::Ffn(_) => (Vec::new(), Some("feedforward models have no support vectors".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointTag {
    #[serde(rename = "data-pos")]
    DataPos,
    #[serde(rename = "data-neg")]
    DataNeg,
    #[serde(rename = "boundary")]
    Boundary,
    #[serde(rename = "sv-pos")]
    SvPos,
    #[serde(rename = "sv-neg")]
    SvNeg,
}

impl fmt::Display for PointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointTag::DataPos => "data-pos",
            PointTag::DataNeg => "data-neg",
            PointTag::Boundary => "boundary",
            PointTag::SvPos => "sv-pos",
            PointTag::SvNeg => "sv-neg",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub tag: PointTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub points: Vec<ProjectedPoint>,
    pub kl_final: f64,
}

impl Projection {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tx\ty\ttag\n");
        for p in &self.points {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", p.id, p.x, p.y, p.tag));
        }
        out
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Tagged inputs for one joint projection: data rows, then boundary
/// points, then support vectors.
pub fn projection_inputs(data: &FeatureMatrix, cloud: &BoundaryCloud) -> Vec<(String, Vec<f64>, PointTag)> {
    let mut inputs = Vec::with_capacity(data.len() + cloud.points.len() + cloud.support_vectors.len());
    for row in &data.rows {
        let tag = match row.label {
            Label::Pathologic => PointTag::DataPos,
            Label::Control => PointTag::DataNeg,
        };
        inputs.push((row.unit_id.clone(), row.x.clone(), tag));
    }
    for (i, p) in cloud.points.iter().enumerate() {
        inputs.push((format!("boundary-{i}"), p.x.clone(), PointTag::Boundary));
    }
    for (i, sv) in cloud.support_vectors.iter().enumerate() {
        let tag = match sv.label {
            Label::Pathologic => PointTag::SvPos,
            Label::Control => PointTag::SvNeg,
        };
        inputs.push((format!("sv-{i}"), sv.x.clone(), tag));
    }
    inputs
}

/// One joint t-SNE run over data, boundary cloud and support vectors.
pub fn project_boundary(data: &FeatureMatrix, cloud: &BoundaryCloud, perplexity: f64, seed: u64) -> Result<Projection> {
    let inputs = projection_inputs(data, cloud);
    let x: Vec<Vec<f64>> = inputs.iter().map(|(_, v, _)| v.clone()).collect();
    let result = tsne_embed(&x, &TsneConfig::new(perplexity, seed))?;
    let points = inputs
        .into_iter()
        .zip(&result.coords)
        .map(|((id, _, tag), c)| ProjectedPoint {
            id,
            x: c[0],
            y: c[1],
            tag,
        })
        .collect();
    Ok(Projection {
        points,
        kl_final: *result.kl_trace.last().unwrap_or(&f64::NAN),
    })
}
