//! Command-line front end. Every command reads and writes under a
//! workspace directory:
//!
//! ```text
//! corpora/<corpus>/manifest.json, emb/*.emb
//! features/<corpus>/<group>.<level>.tsv
//! models/<model_id>.json
//! reports/*.tsv, *.json, runs/<command>.<stem>.json
//! plots/boundary.<model_id>.tsv, projection.<model_id>.tsv
//! ```
//!
//! Failures print one JSON object on stderr,
//! `{"error":{"category":..,"message":..}}`, and exit with 2 (missing
//! input), 3 (validation) or 4 (computation).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::aggregate::{build_all_groups, FeatureMatrix, LayerGroup, Level};
use crate::boundary::{
    export_support_vectors, generate_keypoints, project_boundary, refine_keypoints, BoundaryCloud, DEFAULT_LINES,
    DEFAULT_PAIRS, DEFAULT_SPHERE_SAMPLES, DEFAULT_TOL,
};
use crate::corpus_store::{load_manifest, validate_corpus, Label};
use crate::cross_eval::eval_matrix;
use crate::error::{Error, Result};
use crate::model::{Estimator, TrainedModel};
use crate::model_selection::{
    correct_count, fit_config, grid_search_cv, significance_test, split_train_test, GridSpec, TrainSettings,
    DEFAULT_FOLDS, TRAIN_RATIO,
};
use crate::seed::derive_seed;
use crate::synth::{shifted_variant_spec, gen_corpus, ShiftKind, SynthSpec};

pub const TOOL: &str = "pathoprobe";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "pathoprobe", version, about = "Layer-wise probing of speech embeddings for pathology detection")]
pub struct Cli {
    /// Workspace root.
    #[arg(long, global = true, default_value = ".")]
    pub workspace: PathBuf,
    /// Global seed; every random choice is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus manifest and its embedding files.
    Validate(ValidateArgs),
    /// Pool embeddings into per-group feature matrices.
    Aggregate(AggregateArgs),
    /// Split, grid-search, fit and test one classifier.
    Train(TrainArgs),
    /// Accuracy and significance of a model on a feature matrix.
    Eval(EvalArgs),
    /// Percent classified pathologic for corpora x layer groups.
    Crosseval(CrossevalArgs),
    /// Sample points on a model's decision boundary.
    Boundary(BoundaryArgs),
    /// Joint t-SNE of data, boundary cloud and support vectors.
    Project(ProjectArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Collect training summaries into an accuracy table.
    Report,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// One layer group; all four when omitted.
    #[arg(long)]
    pub group: Option<LayerGroup>,
    #[arg(long, default_value = "speaker")]
    pub level: Level,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum)]
    pub estimator: EstimatorArg,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// SMO stopping tolerance.
    #[arg(long, default_value_t = crate::svm::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = crate::ffn::FfnConfig::default().max_epochs)]
    pub max_epochs: usize,
    /// Model file; defaults to models/<model_id>.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EstimatorArg {
    Svm,
    Ffn,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Svm => Estimator::Svm,
            EstimatorArg::Ffn => Estimator::Ffn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// Every row.
    All,
    /// Only the rows held out when the model was trained.
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: Split,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossevalArgs {
    /// One model per layer group (column order).
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Corpus ids with aggregated features in the workspace (row order).
    #[arg(long, num_args = 1.., required = true)]
    pub corpora: Vec<String>,
    #[arg(long, default_value = "speaker")]
    pub level: Level,
    /// Report name under reports/.
    #[arg(long, default_value = "crosseval")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: Split,
    /// Accepted distance of p from 0.5.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_PAIRS)]
    pub pairs: usize,
    #[arg(long, default_value_t = DEFAULT_LINES)]
    pub lines: usize,
    #[arg(long, default_value_t = DEFAULT_SPHERE_SAMPLES)]
    pub sphere_samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: Split,
    /// Boundary cloud; defaults to plots/boundary.<model_id>.tsv.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON spec; missing fields take their defaults. The global --seed
    /// replaces the spec's seed.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub corpus_id: Option<String>,
    /// Generate a healthy-only variant with this covariate shift.
    #[arg(long)]
    pub shift: Option<ShiftKind>,
    #[arg(long, default_value_t = 0.0, requires = "shift")]
    pub magnitude: f64,
    /// Output directory; defaults to corpora/<corpus_id>.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    MissingInput,
    Validation,
    Computation,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::MissingInput => "missing-input",
            ErrorCategory::Validation => "validation",
            ErrorCategory::Computation => "computation",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::MissingInput => 2,
            ErrorCategory::Validation => 3,
            ErrorCategory::Computation => 4,
        }
    }
}

pub fn categorize(err: &Error) -> ErrorCategory {
    match err.root() {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorCategory::MissingInput,
        Error::Io { .. } | Error::NoConvergence { .. } | Error::Degenerate(_) | Error::NonFiniteLoss { .. } => {
            ErrorCategory::Computation
        }
        _ => ErrorCategory::Validation,
    }
}

/// Fixed directory layout under one root.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub const DIRS: [&'static str; 5] = ["corpora", "features", "models", "reports", "plots"];

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn init(&self) -> Result<()> {
        for d in Self::DIRS.iter().map(|d| self.root.join(d)).chain([self.root.join("reports/runs")]) {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }

    pub fn corpus_dir(&self, corpus: &str) -> PathBuf {
        self.root.join("corpora").join(corpus)
    }

    pub fn features_path(&self, corpus: &str, group: LayerGroup, level: Level) -> PathBuf {
        self.root.join("features").join(corpus).join(format!("{group}.{level}.tsv"))
    }

    pub fn model_path(&self, model_id: &str) -> PathBuf {
        self.root.join("models").join(format!("{model_id}.json"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn plot_path(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(name)
    }

    fn run_log_path(&self, command: &str, stem: &str) -> PathBuf {
        self.root.join("reports/runs").join(format!("{command}.{stem}.json"))
    }
}

pub fn model_id(corpus: &str, group: LayerGroup, level: Level, estimator: Estimator) -> String {
    format!("{corpus}.{group}.{level}.{estimator}")
}

struct Ctx<'a> {
    ws: Workspace,
    seed: u64,
    command: &'a str,
}

impl Ctx<'_> {
    fn provenance(&self, params: Value) -> Value {
        json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "seed": self.seed,
            "params": params,
        })
    }

    /// `#key=value` lines for delimited outputs.
    fn meta_lines(&self, params: &Value) -> String {
        let mut out = format!("#tool={TOOL} {VERSION}\n#command={}\n#seed={}\n", self.command, self.seed);
        if let Value::Object(map) = params {
            for (k, v) in map {
                let v = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                out.push_str(&format!("#{k}={v}\n"));
            }
        }
        out
    }

    fn run_log(&self, stem: &str, params: Value, outputs: &[&Path]) -> Result<()> {
        let outputs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
        let mut log = self.provenance(params);
        log["outputs"] = json!(outputs);
        write_json(&self.ws.run_log_path(self.command, stem), &log)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn test_ids(model: &TrainedModel) -> Result<Vec<String>> {
    model.provenance["split"]["test_ids"]
        .as_array()
        .map(|ids| ids.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .ok_or_else(|| Error::MissingField(format!("model {} records no test split", model.model_id)))
}

fn select_split(features: FeatureMatrix, model: &TrainedModel, split: Split) -> Result<FeatureMatrix> {
    if split == Split::All {
        return Ok(features);
    }
    let ids = test_ids(model)?;
    let keep: Vec<usize> = (0..features.len())
        .filter(|&i| ids.binary_search(&features.rows[i].unit_id).is_ok())
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("test split rows in feature matrix"));
    }
    Ok(features.subset(&keep))
}

/// Parses arguments, runs the command and maps errors to exit codes.
pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let category = categorize(&e);
            eprintln!("{}", json!({"error": {"category": category.as_str(), "message": e.to_string()}}));
            category.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let jobs = match cli.jobs {
        Some(j) => j as usize,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let ws = Workspace::new(&cli.workspace);
    ws.init()?;
    let command = match &cli.command {
        Command::Validate(_) => "validate",
        Command::Aggregate(_) => "aggregate",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Crosseval(_) => "crosseval",
        Command::Boundary(_) => "boundary",
        Command::Project(_) => "project",
        Command::Synth(_) => "synth",
        Command::Report => "report",
    };
    let ctx = Ctx {
        ws,
        seed: cli.seed,
        command,
    };
    match &cli.command {
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Aggregate(a) => cmd_aggregate(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Crosseval(a) => cmd_crosseval(&ctx, a),
        Command::Boundary(a) => cmd_boundary(&ctx, a),
        Command::Project(a) => cmd_project(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Report => cmd_report(&ctx),
    }
}

fn cmd_validate(ctx: &Ctx, args: &ValidateArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let report = validate_corpus(&manifest);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| ctx.ws.report_path(&format!("validate.{}.json", manifest.corpus_id)));
    let params = json!({"manifest": path_str(&args.manifest)});
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc["provenance"] = ctx.provenance(params.clone());
    write_json(&out, &doc)?;
    ctx.run_log(&manifest.corpus_id, params, &[&out])?;
    println!(
        "{}: {} utterances, {} speakers, {} failures",
        manifest.corpus_id, report.utterances, report.speakers, report.failures
    );
    if !report.pass {
        return Err(Error::Validation(format!(
            "corpus {} has {} failing files (see {})",
            manifest.corpus_id,
            report.failures,
            out.display()
        )));
    }
    Ok(())
}

fn cmd_aggregate(ctx: &Ctx, args: &AggregateArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let matrices = build_all_groups(&manifest, args.level)?;
    let params = json!({"manifest": path_str(&args.manifest), "level": args.level.to_string()});
    let meta: Vec<(String, String)> = ctx
        .meta_lines(&params)
        .lines()
        .filter_map(|l| l.strip_prefix('#')?.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .filter(|(k, _)| k != "level")
        .collect();
    let mut outputs = Vec::new();
    for m in matrices.iter().filter(|m| args.group.is_none_or(|g| g == m.group)) {
        let path = ctx.ws.features_path(&manifest.corpus_id, m.group, args.level);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        m.write_tsv(&path, &meta)?;
        println!("{}: {} rows -> {}", m.group, m.len(), path.display());
        outputs.push(path);
    }
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.run_log(&format!("{}.{}", manifest.corpus_id, args.level), params, &refs)
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let data = FeatureMatrix::read_tsv(&args.features)?;
    let estimator = Estimator::from(args.estimator);
    let id = model_id(&data.source_corpus, data.group, data.level, estimator);
    let mut settings = TrainSettings {
        svm_tol: args.tol,
        ..TrainSettings::default()
    };
    settings.ffn.max_epochs = args.max_epochs;

    let (train, test) = split_train_test(&data, TRAIN_RATIO, derive_seed(ctx.seed, "split"))?;
    let spec = GridSpec::for_estimator(estimator);
    let cv = grid_search_cv(&train, &spec, args.folds, derive_seed(ctx.seed, "cv"), &settings)?;
    let best = *cv.best_config();
    let classifier = fit_config(&train, &best, &settings, derive_seed(ctx.seed, "final"))?;
    let (correct, n) = correct_count(&classifier, &test)?;
    let p_value = significance_test(correct as u64, n as u64, 0.5)?;
    let accuracy = correct as f64 / n as f64;

    let params = json!({
        "features": path_str(&args.features),
        "estimator": estimator.to_string(),
        "folds": args.folds,
        "train_ratio": TRAIN_RATIO,
        "settings": settings,
    });
    let ids = |m: &FeatureMatrix| m.rows.iter().map(|r| r.unit_id.clone()).collect::<Vec<_>>();
    let mut provenance = ctx.provenance(params.clone());
    provenance["level"] = json!(data.level.to_string());
    provenance["best_config"] = json!(best);
    provenance["split"] = json!({"train_ids": ids(&train), "test_ids": ids(&test)});
    let model = TrainedModel {
        model_id: id.clone(),
        group: data.group,
        train_corpus: data.source_corpus.clone(),
        classifier,
        provenance: provenance.clone(),
    };
    let model_path = args.out.clone().unwrap_or_else(|| ctx.ws.model_path(&id));
    if let Some(dir) = model_path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    model.save(&model_path)?;

    let cv_path = ctx.ws.report_path(&format!("cv.{id}.tsv"));
    write_text(&cv_path, &(ctx.meta_lines(&params) + &cv.to_tsv()))?;
    let summary_path = ctx.ws.report_path(&format!("train.{id}.json"));
    let best_cell = cv.best_cell();
    write_json(
        &summary_path,
        &json!({
            "model_id": id,
            "corpus": data.source_corpus,
            "group": data.group,
            "level": data.level.to_string(),
            "estimator": estimator.to_string(),
            "best_config": best,
            "cv_mean": best_cell.mean,
            "cv_std": best_cell.std,
            "configs_evaluated": cv.cells.len(),
            "folds": cv.folds,
            "test": {
                "n": n,
                "correct": correct,
                "accuracy": accuracy,
                "p_value": p_value,
                "significance_test": "exact one-sided binomial against 0.5 chance, alpha 0.05",
            },
            "provenance": provenance,
        }),
    )?;
    ctx.run_log(&id, params, &[&model_path, &cv_path, &summary_path])?;
    println!(
        "{id}: best {best} (cv {:.3}), test accuracy {:.3} ({correct}/{n}, p = {p_value:.3e})",
        best_cell.mean, accuracy
    );
    Ok(())
}

fn cmd_eval(ctx: &Ctx, args: &EvalArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let data = FeatureMatrix::read_tsv(&args.features)?;
    if data.group != model.group {
        return Err(Error::GroupMismatch {
            model: model.group.to_string(),
            features: data.group.to_string(),
        });
    }
    let data = select_split(data, &model, args.split)?;
    let (correct, n) = correct_count(&model, &data)?;
    let p_value = significance_test(correct as u64, n as u64, 0.5)?;
    let split = format!("{:?}", args.split).to_lowercase();
    let params = json!({"model": path_str(&args.model), "features": path_str(&args.features), "split": split});
    let stem = format!("{}.{}.{split}", model.model_id, data.source_corpus);
    let out = args.out.clone().unwrap_or_else(|| ctx.ws.report_path(&format!("eval.{stem}.json")));
    write_json(
        &out,
        &json!({
            "model_id": model.model_id,
            "corpus": data.source_corpus,
            "n": n,
            "correct": correct,
            "accuracy": correct as f64 / n as f64,
            "p_value": p_value,
            "provenance": ctx.provenance(params.clone()),
        }),
    )?;
    ctx.run_log(&stem, params, &[&out])?;
    println!("{stem}: accuracy {:.3} ({correct}/{n}, p = {p_value:.3e})", correct as f64 / n as f64);
    Ok(())
}

fn cmd_crosseval(ctx: &Ctx, args: &CrossevalArgs) -> Result<()> {
    let models = args.models.iter().map(TrainedModel::load).collect::<Result<Vec<_>>>()?;
    let corpora = args
        .corpora
        .iter()
        .map(|c| {
            let feats = models
                .iter()
                .map(|m| FeatureMatrix::read_tsv(ctx.ws.features_path(c, m.group, args.level)))
                .collect::<Result<Vec<_>>>()?;
            Ok((c.clone(), feats))
        })
        .collect::<Result<Vec<_>>>()?;
    let matrix = eval_matrix(&models, &corpora)?;
    let params = json!({
        "models": args.models.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
        "corpora": args.corpora,
        "level": args.level.to_string(),
    });
    let tsv = ctx.ws.report_path(&format!("crosseval.{}.tsv", args.name));
    write_text(&tsv, &(ctx.meta_lines(&params) + &matrix.to_tsv()))?;
    let doc_path = ctx.ws.report_path(&format!("crosseval.{}.json", args.name));
    let mut doc = serde_json::to_value(&matrix).expect("matrix serializes");
    doc["measure"] = json!("percent classified pathologic");
    doc["provenance"] = ctx.provenance(params.clone());
    write_json(&doc_path, &doc)?;
    ctx.run_log(&args.name, params, &[&tsv, &doc_path])?;
    print!("{}", matrix.to_tsv());
    Ok(())
}

fn cmd_boundary(ctx: &Ctx, args: &BoundaryArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let data = FeatureMatrix::read_tsv(&args.features)?;
    if data.group != model.group {
        return Err(Error::GroupMismatch {
            model: model.group.to_string(),
            features: data.group.to_string(),
        });
    }
    let data = select_split(data, &model, args.split)?;
    let pick = |label: Label| -> Vec<&[f64]> {
        data.rows.iter().filter(|r| r.label == label).map(|r| r.x.as_slice()).collect()
    };
    let (pos, neg) = (pick(Label::Pathologic), pick(Label::Control));
    let keypoints = generate_keypoints(&model, &pos, &neg, args.pairs, args.tol, derive_seed(ctx.seed, "keypoints"))?;
    if keypoints.is_empty() {
        log::warn!("no keypoints found for {}", model.model_id);
    }
    let mut cloud = refine_keypoints(
        &model,
        &keypoints,
        args.lines,
        args.sphere_samples,
        args.tol,
        derive_seed(ctx.seed, "refine"),
    )?;
    let (svs, notice) = export_support_vectors(&model.classifier);
    if let Some(n) = notice {
        log::info!("{n}");
    }
    cloud.support_vectors = svs;

    let params = json!({
        "model": path_str(&args.model),
        "features": path_str(&args.features),
        "tol": args.tol,
        "pairs": args.pairs,
        "lines": args.lines,
        "sphere_samples": args.sphere_samples,
    });
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| ctx.ws.plot_path(&format!("boundary.{}.tsv", model.model_id)));
    write_text(&out, &(ctx.meta_lines(&params) + &cloud.to_tsv()))?;
    let sv_path = ctx.ws.plot_path(&format!("support_vectors.{}.tsv", model.model_id));
    let mut sv_text = ctx.meta_lines(&params);
    sv_text.push_str("label");
    for d in 1..=data.dim() {
        sv_text.push_str(&format!("\tx{d}"));
    }
    sv_text.push('\n');
    for sv in &cloud.support_vectors {
        sv_text.push_str(&sv.label.as_u8().to_string());
        for v in &sv.x {
            sv_text.push('\t');
            sv_text.push_str(&v.to_string());
        }
        sv_text.push('\n');
    }
    write_text(&sv_path, &sv_text)?;
    ctx.run_log(&model.model_id, params, &[&out, &sv_path])?;
    println!(
        "{}: {} boundary points ({} keypoints), {} support vectors",
        model.model_id,
        cloud.points.len(),
        keypoints.len(),
        cloud.support_vectors.len()
    );
    Ok(())
}

fn cmd_project(ctx: &Ctx, args: &ProjectArgs) -> Result<()> {
    let model = TrainedModel::load(&args.model)?;
    let data = FeatureMatrix::read_tsv(&args.features)?;
    let data = select_split(data, &model, args.split)?;
    let cloud_path = args
        .cloud
        .clone()
        .unwrap_or_else(|| ctx.ws.plot_path(&format!("boundary.{}.tsv", model.model_id)));
    let cloud = BoundaryCloud {
        points: BoundaryCloud::read_points_tsv(&cloud_path)?,
        support_vectors: export_support_vectors(&model.classifier).0,
        tol: f64::NAN,
    };
    let projection = project_boundary(&data, &cloud, args.perplexity, derive_seed(ctx.seed, "projection"))?;
    let params = json!({
        "model": path_str(&args.model),
        "features": path_str(&args.features),
        "cloud": path_str(&cloud_path),
        "perplexity": args.perplexity,
        "kl_final": projection.kl_final,
    });
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| ctx.ws.plot_path(&format!("projection.{}.tsv", model.model_id)));
    write_text(&out, &(ctx.meta_lines(&params) + &projection.to_tsv()))?;
    ctx.run_log(&model.model_id, params, &[&out])?;
    println!("{}: {} points projected, KL {:.4}", model.model_id, projection.points.len(), projection.kl_final);
    Ok(())
}

fn cmd_synth(ctx: &Ctx, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    spec.seed = ctx.seed;
    if let Some(id) = &args.corpus_id {
        spec.corpus_id = id.clone();
    }
    if let Some(kind) = args.shift {
        spec = shifted_variant_spec(&spec, kind, args.magnitude);
    }
    let out = args.out.clone().unwrap_or_else(|| ctx.ws.corpus_dir(&spec.corpus_id));
    let manifest = gen_corpus(&spec, &out)?;
    let params = json!({"spec": serde_json::to_value(&spec).expect("spec serializes")});
    let manifest_path = out.join("manifest.json");
    ctx.run_log(&spec.corpus_id, params, &[&manifest_path])?;
    println!(
        "{}: {} utterances from {} speakers -> {}",
        spec.corpus_id,
        manifest.utterances.len(),
        manifest.speakers().len(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let dir = ctx.ws.root.join("reports");
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    names.sort();

    // (corpus, level, estimator) -> group -> (accuracy, p)
    let mut rows: BTreeMap<(String, String, String), BTreeMap<LayerGroup, (f64, f64)>> = BTreeMap::new();
    let mut crosseval = BTreeMap::new();
    for path in &names {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let read = || -> Result<Value> {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })
        };
        if name.starts_with("train.") && name.ends_with(".json") {
            let doc = read()?;
            let field = |k: &str| doc[k].as_str().unwrap_or_default().to_string();
            let group: LayerGroup = field("group").parse()?;
            let acc = doc["test"]["accuracy"].as_f64().unwrap_or(f64::NAN);
            let p = doc["test"]["p_value"].as_f64().unwrap_or(f64::NAN);
            rows.entry((field("corpus"), field("level"), field("estimator")))
                .or_default()
                .insert(group, (acc, p));
        } else if name.starts_with("crosseval.") && name.ends_with(".json") {
            let mut doc = read()?;
            if let Value::Object(map) = &mut doc {
                map.remove("provenance");
            }
            crosseval.insert(name.trim_end_matches(".json").to_string(), doc);
        }
    }

    let mut table = String::from("corpus\tlevel\testimator");
    for g in LayerGroup::ALL {
        table.push_str(&format!("\t{g}"));
    }
    table.push('\n');
    let mut json_rows = Vec::new();
    for ((corpus, level, est), cells) in &rows {
        table.push_str(&format!("{corpus}\t{level}\t{est}"));
        for g in LayerGroup::ALL {
            match cells.get(&g) {
                Some((acc, p)) => {
                    let mark = if *p < 0.05 { "*" } else { "" };
                    table.push_str(&format!("\t{:.1}{mark}", acc * 100.0));
                }
                None => table.push_str("\t-"),
            }
        }
        table.push('\n');
        json_rows.push(json!({
            "corpus": corpus,
            "level": level,
            "estimator": est,
            "accuracy_percent": cells.iter().map(|(g, (a, _))| (g.to_string(), a * 100.0)).collect::<BTreeMap<_, _>>(),
            "p_value": cells.iter().map(|(g, (_, p))| (g.to_string(), *p)).collect::<BTreeMap<_, _>>(),
        }));
    }
    let params = json!({"workspace": path_str(&ctx.ws.root)});
    let tsv = ctx.ws.report_path("report.tsv");
    let note = "#cells=test accuracy in percent; * marks p < 0.05 (exact one-sided binomial against 0.5)\n";
    write_text(&tsv, &(ctx.meta_lines(&params) + note + &table))?;
    let doc_path = ctx.ws.report_path("report.json");
    write_json(
        &doc_path,
        &json!({
            "accuracy": json_rows,
            "crosseval": crosseval,
            "provenance": ctx.provenance(params.clone()),
        }),
    )?;
    ctx.run_log("workspace", params, &[&tsv, &doc_path])?;
    print!("{table}");
    for (name, doc) in &crosseval {
        println!("{name}: {} corpora", doc["corpora"].as_array().map_or(0, Vec::len));
    }
    Ok(())
}
