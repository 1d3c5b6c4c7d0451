//! `vaeood` — command-line driver for likelihood-based outlier detection with
//! small convolutional VAEs: dataset ingestion, training, categorical
//! correction tables, batch scoring, grid evaluation, perturbation probes,
//! and simulated intensity/contrast sweeps.
//!
//! Every subcommand writes its artifacts into a run directory together with a
//! `manifest.json` recording the invocation, the resolved configuration and
//! dataset specs, seeds, and the crate version — everything needed to re-run
//! lives inside the directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use vaeood::data::{self, Dataset, Preprocessing};
use vaeood::dists::{build_cat_correction, CatCorrectionTable};
use vaeood::error::{Error, Result};
use vaeood::eval::{build_grid, perturb_probe, GridColumn, Transform};
use vaeood::scoring::{self, Ensemble, ScoreKind, ScoreRequest, Scorer};
use vaeood::vae::{train, VaeConfig, VaeModel, Visible};
use vaeood::TrainScalar;

/// Likelihood-based outlier detection with small convolutional VAEs.
#[derive(Parser)]
#[command(name = "vaeood", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset spec, apply preprocessing, and report summary statistics.
    Ingest(IngestArgs),
    /// Train a model (or an ensemble) and write checkpoints plus training logs.
    Train(TrainArgs),
    /// Build a categorical model's 256-way correction table over its training set.
    BuildCorrection(BuildCorrectionArgs),
    /// Score every sample of a dataset, streaming records to LDJSON and CSV.
    Score(ScoreArgs),
    /// Run the all-vs-all train × test × score grid and write the report.
    Evaluate(EvaluateArgs),
    /// Compare scores before and after a geometric transform (paired seeds).
    Probe(ProbeArgs),
    /// Emit likelihood curves over simulated intensity or contrast levels.
    Sweep(SweepArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Train(a) => cmd_train(a),
        Command::BuildCorrection(a) => cmd_build_correction(a),
        Command::Score(a) => cmd_score(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

// --------------------------------------------------------------- dataset specs

/// A dataset description consumed from JSON: where the samples come from,
/// which preprocessing to apply, and an optional name override.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct DatasetSpec {
    #[serde(flatten)]
    source: SourceSpec,
    #[serde(default = "default_preprocessing")]
    preprocessing: Preprocessing,
    /// Overrides the derived dataset name (file stem or generator name).
    #[serde(default)]
    name: Option<String>,
}

fn default_preprocessing() -> Preprocessing {
    Preprocessing::None
}

/// Where a dataset's samples come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum SourceSpec {
    /// IDX binary file (big-endian dims, unsigned-byte pixels).
    Idx { path: PathBuf },
    /// Directory of PNG/PPM/JPEG images, resized to 32×32.
    ImageDir { path: PathBuf, nc: usize },
    /// Generated grayscale blob silhouettes.
    Silhouettes { n: usize, seed: u64 },
    /// Generated grayscale stroke doodles.
    Strokes { n: usize, seed: u64 },
    /// Generated bright/dark wedge scenes (orientation-sensitive).
    FixedAsymmetric { n: usize, seed: u64 },
    /// Uniform pixel noise.
    Noise { n: usize, nc: usize, seed: u64 },
}

fn stem_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
}

fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let mut ds = match &spec.source {
        SourceSpec::Idx { path } => data::load_idx(path, stem_name(path))?,
        SourceSpec::ImageDir { path, nc } => data::load_image_dir(path, *nc, stem_name(path))?,
        SourceSpec::Silhouettes { n, seed } => data::gen_silhouettes(*n, *seed)?,
        SourceSpec::Strokes { n, seed } => data::gen_strokes(*n, *seed)?,
        SourceSpec::FixedAsymmetric { n, seed } => data::gen_fixed_asymmetric(*n, *seed)?,
        SourceSpec::Noise { n, nc, seed } => data::gen_noise(*n, *nc, *seed)?,
    };
    if let Some(name) = &spec.name {
        ds.name.clone_from(name);
    }
    match spec.preprocessing {
        Preprocessing::None => Ok(ds),
        Preprocessing::ContrastStretch => ds.contrast_stretched(),
        Preprocessing::HistEq => ds.hist_equalized(),
    }
}

// -------------------------------------------------------------------- helpers

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Missing(format!("cannot read {what} '{}': {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{what} '{}': {e}", path.display())))
}

fn write_pretty_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Records the invocation next to its artifacts so the run directory alone
/// suffices to reproduce it.
fn write_manifest(out: &Path, command: &str, inputs: serde_json::Value) -> Result<()> {
    fs::create_dir_all(out)?;
    let manifest = json!({
        "command": command,
        "crate_version": env!("CARGO_PKG_VERSION"),
        "unix_time_seconds": unix_time(),
        "inputs": inputs,
    });
    write_pretty_json(&out.join("manifest.json"), &manifest)
}

fn unix_time() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Checkpoints in a run directory, ordered by member index.
fn member_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(idx) = name.strip_prefix("member_").and_then(|r| r.strip_suffix(".vaec")) {
            if let Ok(i) = idx.parse::<usize>() {
                found.push((i, path));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::Missing(format!(
            "no member_*.vaec checkpoints in '{}' (train writes member_0.vaec, member_1.vaec, ...)",
            dir.display()
        )));
    }
    found.sort_by_key(|&(i, _)| i);
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// A model source on disk: one `.vaec` checkpoint, or a run directory whose
/// `member_*.vaec` checkpoints form an ensemble when there are two or more.
enum LoadedScorer {
    Single(Box<VaeModel<TrainScalar>>),
    Ensemble(Ensemble<TrainScalar>),
}

impl LoadedScorer {
    fn load(path: &Path) -> Result<Self> {
        let models: Vec<VaeModel<TrainScalar>> = if path.is_dir() {
            member_paths(path)?
                .iter()
                .map(|p| VaeModel::load(p))
                .collect::<Result<_>>()?
        } else if path.is_file() {
            vec![VaeModel::load(path)?]
        } else {
            return Err(Error::Missing(format!(
                "model path '{}' does not exist",
                path.display()
            )));
        };
        if models.len() == 1 {
            let only = models.into_iter().next().expect("length checked");
            Ok(LoadedScorer::Single(Box::new(only)))
        } else {
            Ok(LoadedScorer::Ensemble(Ensemble::new(models)?))
        }
    }

    fn scorer(&self) -> Scorer<'_, TrainScalar> {
        match self {
            LoadedScorer::Single(m) => Scorer::Single(m),
            LoadedScorer::Ensemble(e) => Scorer::Ensemble(e),
        }
    }

    /// The model single-model scores come from (member 0 of an ensemble).
    fn reference(&self) -> &VaeModel<TrainScalar> {
        match self {
            LoadedScorer::Single(m) => m,
            LoadedScorer::Ensemble(e) => &e.members()[0],
        }
    }

    fn member_count(&self) -> usize {
        match self {
            LoadedScorer::Single(_) => 1,
            LoadedScorer::Ensemble(e) => e.len(),
        }
    }
}

fn load_table(path: Option<&PathBuf>) -> Result<Option<CatCorrectionTable>> {
    path.map(|p| CatCorrectionTable::load(p)).transpose()
}

// --------------------------------------------------------------------- ingest

#[derive(Args, Serialize)]
struct IngestArgs {
    /// Dataset spec (JSON): {"kind": "idx", "path": ...}, {"kind": "silhouettes", ...}, ...
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the summary and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Fraction of samples the summary routes to the validation split.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Seed for the split shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let spec: DatasetSpec = read_json(&args.data, "dataset spec")?;
    let dataset = build_dataset(&spec)?;
    if dataset.is_empty() {
        return Err(Error::Config(format!("dataset '{}' is empty", dataset.name)));
    }
    let (train_split, val_split) = data::split(&dataset, args.val_fraction, args.seed)?;
    let (mut lo, mut hi, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for s in &dataset.samples {
        for &v in s.as_slice() {
            let v = f64::from(v);
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
            count += 1;
        }
    }
    let summary = json!({
        "name": dataset.name,
        "preprocessing": dataset.preprocessing,
        "samples": dataset.len(),
        "channels": dataset.nc(),
        "train_samples": train_split.len(),
        "val_samples": val_split.len(),
        "pixel_min": lo,
        "pixel_max": hi,
        "pixel_mean": sum / count as f64,
    });
    fs::create_dir_all(&args.out)?;
    write_pretty_json(&args.out.join("ingest_summary.json"), &summary)?;
    println!(
        "{}: {} samples ({} train / {} val), {} channel(s), preprocessing {}",
        dataset.name,
        dataset.len(),
        train_split.len(),
        val_split.len(),
        dataset.nc(),
        dataset.preprocessing,
    );
    write_manifest(&args.out, "ingest", json!({ "args": &args, "data_spec": spec }))
}

// ---------------------------------------------------------------------- train

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Model configuration (JSON): nz, nf, nc, visible, epochs, batch_size, ...
    #[arg(long)]
    config: PathBuf,
    /// Dataset spec (JSON) for the training distribution.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for checkpoints, logs, config snapshot, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Ensemble members to train; member i uses seed config.seed + i.
    #[arg(long, default_value_t = 1)]
    members: usize,
    /// Fraction of the data held out for validation checkpointing.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    if args.members == 0 {
        return Err(Error::Config("--members must be ≥ 1".into()));
    }
    let config: VaeConfig = read_json(&args.config, "model config")?;
    config.validate()?;
    let spec: DatasetSpec = read_json(&args.data, "dataset spec")?;
    let dataset = build_dataset(&spec)?;
    if config.nc != dataset.nc() {
        return Err(Error::Config(format!(
            "config expects {} channel(s), dataset '{}' has {}",
            config.nc,
            dataset.name,
            dataset.nc()
        )));
    }
    // One split shared by the whole ensemble: members differ only by seed.
    let (train_split, val_split) = data::split(&dataset, args.val_fraction, config.seed)?;
    fs::create_dir_all(&args.out)?;
    write_pretty_json(&args.out.join("config.json"), &config)?;
    let mut member_seeds = Vec::with_capacity(args.members);
    for i in 0..args.members {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(i as u64);
        member_seeds.push(cfg.seed);
        let mut log_file = fs::File::create(args.out.join(format!("train_log_member_{i}.ldjson")))?;
        let model = train::<TrainScalar>(&cfg, &train_split, &val_split, Some(&mut log_file))?;
        let ckpt = args.out.join(format!("member_{i}.vaec"));
        model.save(&ckpt)?;
        let nll = model
            .meta
            .best_val_nll
            .map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        let epoch = model
            .meta
            .best_epoch
            .map_or_else(|| "n/a".to_string(), |e| e.to_string());
        println!("member {i}: best val NLL {nll} at epoch {epoch} -> {}", ckpt.display());
        if let Some(reason) = &model.meta.diverged {
            log::warn!("member {i} training aborted on divergence: {reason}");
        }
    }
    write_manifest(
        &args.out,
        "train",
        json!({
            "args": &args,
            "config": config,
            "data_spec": spec,
            "dataset": {
                "name": dataset.name,
                "samples": dataset.len(),
                "preprocessing": dataset.preprocessing,
            },
            "split_seed": config.seed,
            "member_seeds": member_seeds,
        }),
    )
}

// ----------------------------------------------------------- build-correction

#[derive(Args, Serialize)]
struct BuildCorrectionArgs {
    /// Categorical model: a .vaec checkpoint or a run directory (member 0 is used).
    #[arg(long)]
    model: PathBuf,
    /// Dataset spec (JSON) — the table averages decoder probabilities over it.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for the table (binary + CSV dump) and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Build the table even if model and data preprocessing disagree.
    #[arg(long)]
    override_provenance: bool,
}

fn cmd_build_correction(args: BuildCorrectionArgs) -> Result<()> {
    let loaded = LoadedScorer::load(&args.model)?;
    let model = loaded.reference();
    if model.config.visible != Visible::Categorical {
        return Err(Error::Config(format!(
            "correction tables only apply to categorical models, this one is {}",
            model.config.visible
        )));
    }
    let spec: DatasetSpec = read_json(&args.data, "dataset spec")?;
    let dataset = build_dataset(&spec)?;
    if dataset.is_empty() {
        return Err(Error::Config(format!(
            "dataset '{}' is empty; the table averages decoder probabilities over training samples",
            dataset.name
        )));
    }
    if model.meta.preprocessing != dataset.preprocessing && !args.override_provenance {
        return Err(Error::Provenance(format!(
            "model trained on {} data, dataset '{}' is {}",
            model.meta.preprocessing, dataset.name, dataset.preprocessing
        )));
    }
    if model.config.nc != dataset.nc() {
        return Err(Error::Config(format!(
            "model has {} channel(s), dataset '{}' has {}",
            model.config.nc,
            dataset.name,
            dataset.nc()
        )));
    }
    let table = build_cat_correction(
        (0..dataset.len()).map(|i| dataset.batch(&[i]).and_then(|x| model.cat_pixel_probs(&x))),
        model.config.nc,
    )?;
    fs::create_dir_all(&args.out)?;
    let table_path = args.out.join("correction_table.cct");
    table.save(&table_path)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    fs::write(args.out.join("correction_table.csv"), csv)?;
    println!("correction table over {} samples -> {}", dataset.len(), table_path.display());
    write_manifest(
        &args.out,
        "build-correction",
        json!({
            "args": &args,
            "data_spec": spec,
            "model_config": model.config,
            "samples": dataset.len(),
        }),
    )
}

// ---------------------------------------------------------------------- score

/// Score selector (mirrors the record fields).
#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScoreKindArg {
    #[value(name = "ll")]
    Ll,
    #[value(name = "bc-ll")]
    BcLl,
    #[value(name = "ev-ll")]
    EvLl,
    #[value(name = "waic")]
    Waic,
    #[value(name = "ic")]
    Ic,
}

#[derive(Args, Serialize)]
struct ScoreArgs {
    /// Model: a .vaec checkpoint or a run directory (all members load as an ensemble).
    #[arg(long)]
    model: PathBuf,
    /// Dataset spec (JSON) to score.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for scores.ldjson / scores.csv / manifest.
    #[arg(long)]
    out: PathBuf,
    /// Scores to compute (comma-separated): ll, bc-ll, ev-ll, waic, ic.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ll,bc-ll")]
    scores: Vec<ScoreKindArg>,
    /// Importance samples per likelihood estimate.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Base estimator seed; ensemble member i scores with seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Correction table (required when bias-correcting a categorical model).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Score even if model and data preprocessing disagree (ablations only).
    #[arg(long)]
    override_provenance: bool,
    /// Compute ensemble variance / WAIC on raw member LLs instead of BC-LLs.
    #[arg(long)]
    ev_on_raw: bool,
    /// Flip the IC sign convention (add the complexity term instead).
    #[arg(long)]
    ic_flip_sign: bool,
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let loaded = LoadedScorer::load(&args.model)?;
    let spec: DatasetSpec = read_json(&args.data, "dataset spec")?;
    let dataset = build_dataset(&spec)?;
    let table = load_table(args.table.as_ref())?;
    let request = ScoreRequest {
        ll: args.scores.contains(&ScoreKindArg::Ll),
        bc_ll: args.scores.contains(&ScoreKindArg::BcLl),
        ev_ll: args.scores.contains(&ScoreKindArg::EvLl),
        waic: args.scores.contains(&ScoreKindArg::Waic),
        ic: args.scores.contains(&ScoreKindArg::Ic),
        k: args.k,
        seed: args.seed,
        ev_on_raw: args.ev_on_raw,
        ic_flip_sign: args.ic_flip_sign,
    };
    fs::create_dir_all(&args.out)?;
    let ldjson = args.out.join("scores.ldjson");
    let records = scoring::score_batch(
        &loaded.scorer(),
        &dataset,
        &request,
        table.as_ref(),
        &ldjson,
        args.override_provenance,
    )?;
    scoring::export_csv(&records, &args.out.join("scores.csv"))?;
    println!(
        "{} records from {} member(s) -> {}",
        records.len(),
        loaded.member_count(),
        ldjson.display()
    );
    write_manifest(
        &args.out,
        "score",
        json!({
            "args": &args,
            "data_spec": spec,
            "model_config": loaded.reference().config,
            "members": loaded.member_count(),
        }),
    )
}

// ------------------------------------------------------------------- evaluate

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Grid manifest (JSON): train columns, test-set specs, scores, k, seed.
    #[arg(long)]
    grid: PathBuf,
    /// Run directory for report.json / report.csv / manifest.
    #[arg(long)]
    out: PathBuf,
}

/// The evaluation grid: which ensembles form the columns, which test sets
/// form the rows, and which scores fill the cells.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridManifest {
    /// Train columns; each name must match one test set below (the inlier side).
    trains: Vec<TrainColumnSpec>,
    test_sets: Vec<DatasetSpec>,
    scores: Vec<ScoreKind>,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    seed: u64,
}

fn default_k() -> usize {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainColumnSpec {
    name: String,
    /// Run directory holding two or more member_*.vaec checkpoints.
    model: PathBuf,
    /// Correction table for categorical columns.
    #[serde(default)]
    table: Option<PathBuf>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let manifest: GridManifest = read_json(&args.grid, "grid manifest")?;
    let mut columns: Vec<(String, Ensemble<TrainScalar>, Option<CatCorrectionTable>)> = Vec::new();
    for t in &manifest.trains {
        if columns.iter().any(|(n, _, _)| n == &t.name) {
            return Err(Error::Config(format!("duplicate train column '{}'", t.name)));
        }
        let ensemble = match LoadedScorer::load(&t.model)? {
            LoadedScorer::Ensemble(e) => e,
            LoadedScorer::Single(_) => {
                return Err(Error::Config(format!(
                    "train column '{}' needs an ensemble: two or more member_*.vaec in '{}'",
                    t.name,
                    t.model.display()
                )));
            }
        };
        let table = load_table(t.table.as_ref())?;
        columns.push((t.name.clone(), ensemble, table));
    }
    let test_sets: Vec<Dataset> = manifest.test_sets.iter().map(build_dataset).collect::<Result<_>>()?;
    let grid_columns: BTreeMap<String, GridColumn<'_, TrainScalar>> = columns
        .iter()
        .map(|(n, e, t)| (n.clone(), GridColumn { ensemble: e, table: t.as_ref() }))
        .collect();
    let trains: Vec<String> = manifest.trains.iter().map(|t| t.name.clone()).collect();
    let report = build_grid(
        &grid_columns,
        &trains,
        &test_sets,
        &manifest.scores,
        manifest.k,
        manifest.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    let mut text = report.to_json()?;
    text.push('\n');
    fs::write(args.out.join("report.json"), text)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    fs::write(args.out.join("report.csv"), csv)?;
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    println!(
        "{} cells ({} failed) -> {}",
        report.cells.len(),
        failed,
        args.out.join("report.csv").display()
    );
    write_manifest(&args.out, "evaluate", json!({ "args": &args, "grid": manifest }))
}

// ---------------------------------------------------------------------- probe

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum TransformArg {
    #[value(name = "identity")]
    Identity,
    #[value(name = "translate")]
    Translate,
    #[value(name = "vflip")]
    Vflip,
    #[value(name = "rot90")]
    Rot90,
}

#[derive(Args, Serialize)]
struct ProbeArgs {
    /// Model: a .vaec checkpoint or a run directory.
    #[arg(long)]
    model: PathBuf,
    /// Dataset spec (JSON) whose samples are transformed.
    #[arg(long)]
    data: PathBuf,
    /// Run directory for probe.json / probe.csv / manifest.
    #[arg(long)]
    out: PathBuf,
    /// Geometric transform to probe.
    #[arg(long, value_enum)]
    transform: TransformArg,
    /// Largest wrap-around shift per axis for --transform translate (0..=10).
    #[arg(long, default_value_t = 10)]
    max_shift: usize,
    /// Importance samples per likelihood estimate.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Base seed for shift draws and the paired per-sample estimator seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Correction table for categorical models.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let loaded = LoadedScorer::load(&args.model)?;
    let spec: DatasetSpec = read_json(&args.data, "dataset spec")?;
    let dataset = build_dataset(&spec)?;
    let table = load_table(args.table.as_ref())?;
    let transform = match args.transform {
        TransformArg::Identity => Transform::Identity,
        TransformArg::Translate => Transform::Translate { max_shift: args.max_shift },
        TransformArg::Vflip => Transform::Vflip,
        TransformArg::Rot90 => Transform::Rot90,
    };
    let result = perturb_probe(
        &loaded.scorer(),
        &dataset,
        transform,
        table.as_ref(),
        args.k,
        args.seed,
    )?;
    fs::create_dir_all(&args.out)?;
    write_pretty_json(&args.out.join("probe.json"), &result)?;
    let mut csv = String::from("sample,original,transformed\n");
    for (i, (o, t)) in result.original.iter().zip(&result.transformed).enumerate() {
        csv.push_str(&format!("{i},{o},{t}\n"));
    }
    fs::write(args.out.join("probe.csv"), csv)?;
    println!(
        "{}: AUROC(original vs transformed) = {:.4} over {} samples",
        result.transform,
        result.auroc,
        result.original.len()
    );
    write_manifest(
        &args.out,
        "probe",
        json!({
            "args": &args,
            "data_spec": spec,
            "model_config": loaded.reference().config,
            "transform": result.transform,
        }),
    )
}

// ---------------------------------------------------------------------- sweep

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum SweepMode {
    Intensity,
    Contrast,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    /// Which simulated family to sweep.
    #[arg(long, value_enum)]
    mode: SweepMode,
    /// Model: a .vaec checkpoint or a run directory (the first member is used).
    #[arg(long)]
    model: PathBuf,
    /// Run directory for sweep.csv and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Number of levels along the sweep axis.
    #[arg(long, default_value_t = 21)]
    levels: usize,
    /// Importance samples per likelihood estimate.
    #[arg(long, default_value_t = 100)]
    k: usize,
    /// Estimator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset spec whose first sample anchors the contrast sweep.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Correction table for categorical models.
    #[arg(long)]
    table: Option<PathBuf>,
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let loaded = LoadedScorer::load(&args.model)?;
    let model = loaded.reference();
    let table = load_table(args.table.as_ref())?;
    let (levels, dataset, base_spec) = match args.mode {
        SweepMode::Intensity => (
            data::intensity_levels(args.levels),
            data::simulate_intensity_sweep(args.levels, model.config.nc)?,
            None,
        ),
        SweepMode::Contrast => {
            let spec_path = args.base.as_ref().ok_or_else(|| {
                Error::Config(
                    "contrast sweeps rescale a real image: pass --base <dataset-spec.json> \
                     (its first sample anchors the sweep)"
                        .into(),
                )
            })?;
            let spec: DatasetSpec = read_json(spec_path, "base dataset spec")?;
            let base = build_dataset(&spec)?;
            if base.is_empty() {
                return Err(Error::Config(format!("base dataset '{}' is empty", base.name)));
            }
            let first = base.batch(&[0])?;
            if first.channels() != model.config.nc {
                return Err(Error::Config(format!(
                    "model has {} channel(s), base sample has {}",
                    model.config.nc,
                    first.channels()
                )));
            }
            (
                data::contrast_levels(args.levels),
                data::simulate_contrast_sweep(&first, args.levels)?,
                Some(spec),
            )
        }
    };
    // Simulated sweeps are diagnostics and deliberately skip the provenance
    // gate: the curve shows how the model treats raw synthetic images.
    let mut csv = String::from("level,ll,bc_ll\n");
    for (i, &level) in levels.iter().enumerate() {
        let x = dataset.batch(&[i])?;
        let ll = scoring::score_ll(model, &x, args.k, args.seed)?;
        let bc = scoring::score_bc_ll(model, &x, args.k, args.seed, table.as_ref())?;
        csv.push_str(&format!("{level},{ll},{bc}\n"));
    }
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("sweep.csv"), csv)?;
    println!("{} levels -> {}", levels.len(), args.out.join("sweep.csv").display());
    write_manifest(
        &args.out,
        "sweep",
        json!({
            "args": &args,
            "base_spec": base_spec,
            "model_config": model.config,
        }),
    )
}
