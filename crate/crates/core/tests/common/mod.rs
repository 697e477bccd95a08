//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pathoprobe::aggregate::{FeatureMatrix, FeatureRow, LayerGroup, Level};
use pathoprobe::corpus_store::Label;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Dense solve with partial pivoting; `None` when (near) singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Maximized SVM dual `e'a - 1/2 a'Qa`, `Q_ij = y_i y_j K_ij`.
pub fn dual_value(alpha: &[f64], k: &[f64], y: &[f64]) -> f64 {
    let n = alpha.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * k[i * n + j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Exact SVM dual optimum by enumerating every assignment of each
/// coefficient to {0, C, free} and solving the equality-constrained
/// stationarity system on the free set. Exponential; n <= 8 only.
pub fn brute_force_dual(k: &[f64], y: &[f64], c: f64) -> (Vec<f64>, f64) {
    let n = y.len();
    assert!(n <= 10);
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut best: Option<(Vec<f64>, f64)> = None;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut rest = code;
        for s in state.iter_mut() {
            *s = (rest % 3) as u8;
            rest /= 3;
        }
        let mut alpha = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        for i in 0..n {
            if state[i] == 1 {
                alpha[i] = c;
            }
        }
        let fixed_sum: f64 = (0..n).filter(|&i| state[i] != 2).map(|i| y[i] * alpha[i]).sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            // [Q_FF y_F; y_F' 0] [a_F; lambda] = [1 - Q_FB a_B; -y_B' a_B]
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut b = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[r][s] = q(i, j);
                }
                a[r][m] = y[i];
                a[m][r] = y[i];
                b[r] = 1.0 - (0..n).filter(|&j| state[j] != 2).map(|j| q(i, j) * alpha[j]).sum::<f64>();
            }
            b[m] = -fixed_sum;
            let Some(sol) = gauss_solve(a, b) else {
                continue;
            };
            if sol[..m].iter().any(|&v| v < -1e-12 || v > c + 1e-12) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r].clamp(0.0, c);
            }
        }
        let v = dual_value(&alpha, k, y);
        if best.as_ref().is_none_or(|(_, bv)| v > *bv) {
            best = Some((alpha, v));
        }
    }
    best.expect("alpha = 0 is always feasible")
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean silhouette of a labelled 2-D point set.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += dist(p, q);
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        let a = if counts[own] > 0 { sums[own] / counts[own] as f64 } else { 0.0 };
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

/// Two isotropic Gaussian blobs at `-offset` and `+offset` along axis 0.
pub fn blobs(n_per_class: usize, dim: usize, offset: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Label>) {
    let mut r = rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (label, sign) in [(Label::Control, -1.0), (Label::Pathologic, 1.0)] {
        for _ in 0..n_per_class {
            let mut v = gaussian(&mut r, dim);
            v[0] += sign * offset;
            x.push(v);
            y.push(label);
        }
    }
    (x, y)
}

pub fn matrix(x: &[Vec<f64>], y: &[Label], group: LayerGroup) -> FeatureMatrix {
    let rows = x
        .iter()
        .zip(y)
        .enumerate()
        .map(|(i, (v, &label))| FeatureRow {
            unit_id: format!("u{i:04}"),
            speaker_id: format!("u{i:04}"),
            label,
            x: v.clone(),
        })
        .collect();
    FeatureMatrix::new("fixture", group, Level::Speaker, rows).unwrap()
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return y;
        }
    }
}

/// Runs the built binary inside `ws` with relative paths only, so that two
/// workspaces produce comparable artifacts.
pub fn cli(ws: &std::path::Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_pathoprobe"))
        .current_dir(ws)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn cli_ok(ws: &std::path::Path, args: &[&str]) -> String {
    let out = cli(ws, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub const GROUPS: [&str; 4] = ["1-3", "4-6", "7-9", "10-12"];

/// synth -> validate -> aggregate -> train -> eval -> crosseval -> boundary
/// -> project -> report on a small corpus. `ffn_group` additionally trains
/// a short-budget network on that group.
/// `jobs` sets the worker count.
pub fn small_pipeline(ws: &std::path::Path, seed: u64, jobs: u64, ffn_group: Option<&str>) {
    let seed = seed.to_string();
    let jobs = jobs.to_string();
    let spec = r#"{"corpus_id": "mini", "n_speakers_per_class": 15}"#;
    std::fs::write(ws.join("mini.json"), spec).unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--workspace", ".", "--seed", seed.as_str(), "--jobs", jobs.as_str()];
        full.extend_from_slice(args);
        cli_ok(ws, &full)
    };
    run(&["synth", "--spec", "mini.json"]);
    run(&["synth", "--spec", "mini.json", "--shift", "condition", "--magnitude", "8"]);
    run(&["synth", "--spec", "mini.json", "--shift", "content", "--magnitude", "8"]);
    let corpora = ["mini", "mini-condition-8", "mini-content-8"];
    for c in corpora {
        let manifest = format!("corpora/{c}/manifest.json");
        run(&["validate", "--manifest", &manifest]);
        run(&["aggregate", "--manifest", &manifest]);
    }
    let mut models = Vec::new();
    for g in GROUPS {
        let features = format!("features/mini/{g}.speaker.tsv");
        run(&["train", "--features", &features, "--estimator", "svm"]);
        let model = format!("models/mini.{g}.speaker.svm.json");
        run(&["eval", "--model", &model, "--features", &features, "--split", "test"]);
        models.push(model);
    }
    if let Some(g) = ffn_group {
        let features = format!("features/mini/{g}.speaker.tsv");
        run(&["train", "--features", &features, "--estimator", "ffn", "--max-epochs", "8"]);
    }
    let mut args = vec!["crosseval", "--models"];
    args.extend(models.iter().map(String::as_str));
    args.push("--corpora");
    args.extend(corpora);
    run(&args);

    let model = "models/mini.1-3.speaker.svm.json";
    let features = "features/mini/1-3.speaker.tsv";
    run(&["boundary", "--model", model, "--features", features, "--pairs", "30", "--lines", "10", "--sphere-samples", "2"]);
    run(&["project", "--model", model, "--features", features, "--perplexity", "10"]);
    run(&["report"]);
}

/// Relative path -> bytes for every file under `dir`.
pub fn tree(dir: &std::path::Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(root: &std::path::Path, dir: &std::path::Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn random_net(
    seed: u64,
    hidden_layers: usize,
    activation: pathoprobe::ffn::Activation,
) -> (pathoprobe::ffn::FfnModel, ndarray::Array2<f64>, ndarray::Array1<f64>) {
    let mut r = rng(seed);
    let input = r.random_range(3..=6);
    let mut sizes = vec![input];
    sizes.extend((0..hidden_layers).map(|_| r.random_range(3..=8)));
    sizes.push(1);
    let mut model = pathoprobe::ffn::FfnModel::with_architecture(sizes, activation, seed).unwrap();
    for p in model.params.iter_mut() {
        *p += 0.3 * gaussian(&mut r, 1)[0];
    }
    let x = ndarray::Array2::from_shape_fn((5, input), |_| gaussian(&mut r, 1)[0]);
    let y = ndarray::Array1::from_shape_fn(5, |_| if r.random_bool(0.5) { 1.0 } else { 0.0 });
    (model, x, y)
}

/// Two 25-point blobs, 10-d, centers 20 apart.
pub fn blob_fixture() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(2024);
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for _ in 0..25 {
            let mut v = gaussian(&mut r, 10);
            v[0] += 20.0 * c as f64;
            x.push(v);
            labels.push(c);
        }
    }
    (x, labels)
}
