//! Command-line front end.
//!
//! Every command reads an optional TOML `--config`, applies flag overrides
//! and writes its outputs plus a `manifest.txt` into `--out`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::evaluation::{
    area_percentile_csv, area_percentile_experiment, confidence_bins_csv,
    confidence_bins_experiment, confusion, feature_subset_csv, feature_subset_experiment,
    metrics, threshold_csv, threshold_table, RunManifest, DEFAULT_BIN_EDGES,
    DEFAULT_FEATURE_SUBSETS, DEFAULT_PERCENTILES,
};
use crate::features::{FeatureConfig, FEATURE_NAMES};
use crate::geometry::{
    parse_feature_collection, to_feature_collection, LabeledPolygon, SplitFractions, SplitTag,
    DEFAULT_SPLIT_CELL_M,
};
use crate::models::{load_model, model_to_json, Dataset, ModelKind, ModelSpec, TrainedModel};
use crate::pipeline::{extract_rows, split_regions};
use crate::raster::{load_raster, RasterGrid};
use crate::synth::{generate_scene, SynthConfig};
use crate::table::{load_table, to_dataset, write_table, FeatureRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub cell_size_m: f64,
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            cell_size_m: DEFAULT_SPLIT_CELL_M,
            fractions: SplitFractions::default().0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Lower area percentiles of the area-percentile table.
    pub percentiles: Vec<f64>,
    pub feature_subsets: Vec<Vec<String>>,
    pub bin_edges: Vec<f64>,
    /// Model kinds evaluated by `eval`.
    pub models: Vec<ModelKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            percentiles: DEFAULT_PERCENTILES.to_vec(),
            feature_subsets: DEFAULT_FEATURE_SUBSETS
                .iter()
                .map(|s| s.iter().map(|f| f.to_string()).collect())
                .collect(),
            bin_edges: DEFAULT_BIN_EDGES.to_vec(),
            models: ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygons: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Full run configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
    /// Feature subset used by `train` and `predict`.
    pub features: Vec<String>,
    pub paths: PathConfig,
    pub feature_extraction: FeatureConfig,
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub experiments: ExperimentConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 0,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            paths: PathConfig::default(),
            feature_extraction: FeatureConfig::default(),
            split: SplitConfig::default(),
            model: ModelSpec::default(),
            experiments: ExperimentConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Forest naturalness from canopy height models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Geographic train/validation/test split of labeled polygons.
    Split(SplitArgs),
    /// Per-polygon feature table.
    Extract(ExtractArgs),
    /// Train one classifier on a feature table.
    Train(TrainArgs),
    /// Threshold, area-percentile, feature-subset and confidence tables.
    Eval(EvalArgs),
    /// Score polygons with a trained model.
    Predict(PredictArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
    /// Print the effective configuration as TOML.
    ShowConfig(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Minimum tree height in decimeters.
    #[arg(long)]
    pub h_min: Option<i32>,
    /// Minimum treetop distance in meters.
    #[arg(long)]
    pub d_min: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Comma-separated feature subset.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_leaf: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub feature: FeatureArgs,
    #[arg(long)]
    pub raster: Option<PathBuf>,
    #[arg(long)]
    pub polygons: Option<PathBuf>,
    /// Split grid cell size in meters.
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Train, validation and test fractions, comma-separated.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub fractions: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub feature: FeatureArgs,
    #[arg(long)]
    pub raster: Option<PathBuf>,
    /// Polygon files; each yields `<stem>.csv` in the output directory.
    #[arg(long, num_args = 1..)]
    pub polygons: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training feature table.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation feature table for perceptron early stopping.
    #[arg(long)]
    pub valid: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub feature: FeatureArgs,
    /// Trained model file.
    #[arg(long)]
    pub model_file: PathBuf,
    /// Feature table to score.
    #[arg(long, conflicts_with_all = ["raster", "polygons"])]
    pub table: Option<PathBuf>,
    #[arg(long, requires = "polygons")]
    pub raster: Option<PathBuf>,
    #[arg(long, requires = "raster")]
    pub polygons: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Polygons per class.
    #[arg(long)]
    pub polygons_per_class: Option<usize>,
    /// Scene side in meters.
    #[arg(long)]
    pub extent: Option<f64>,
    /// Label-flip probability for the smallest stands.
    #[arg(long)]
    pub label_noise: Option<f64>,
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.split.seed = s;
        cfg.model.perceptron.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    Ok(cfg)
}

fn apply_feature_args(cfg: &mut RunConfig, a: &FeatureArgs) {
    if let Some(h) = a.h_min {
        cfg.feature_extraction.h_min_dm = h;
    }
    if let Some(d) = a.d_min {
        cfg.feature_extraction.d_min_m = d;
    }
}

fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) {
    if let Some(k) = a.model {
        cfg.model.kind = k;
        cfg.experiments.models = vec![k];
    }
    if let Some(f) = &a.features {
        cfg.features = f.iter().map(|s| s.trim().to_ascii_lowercase()).collect();
    }
    let m = &mut cfg.model;
    if let Some(v) = a.eta {
        m.perceptron.eta = v;
    }
    if let Some(v) = a.epochs {
        m.perceptron.max_epochs = v;
    }
    if let Some(v) = a.patience {
        m.perceptron.patience = v;
    }
    if let Some(v) = a.lambda {
        m.logistic.lambda = v;
    }
    if let Some(v) = a.max_depth {
        m.tree.max_depth = v;
    }
    if let Some(v) = a.min_samples_leaf {
        m.tree.min_samples_leaf = v;
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.paths.out.clone().context("missing --out directory")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn required(path: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = path.with_context(|| format!("missing --{flag}"))?;
    if !p.exists() {
        bail!("--{flag}: {} does not exist", p.display());
    }
    Ok(p)
}

/// Writes outputs and records their hashes in the manifest.
struct Outputs {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Outputs {
    fn new(dir: PathBuf, command: &str, seed: Option<u64>, cfg: &RunConfig) -> Self {
        let mut recorded = cfg.clone();
        recorded.paths.out = None;
        Self {
            dir,
            manifest: RunManifest::new(command, seed, recorded.to_toml()),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest
            .add_input(path)
            .with_context(|| format!("hashing {}", path.display()))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.add_output(name, bytes);
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let path = self.dir.join("manifest.txt");
        fs::write(&path, self.manifest.to_text()).with_context(|| format!("writing {}", path.display()))
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

fn read_polygons(path: &Path) -> Result<Vec<LabeledPolygon>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_feature_collection(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_raster(path: &Path) -> Result<RasterGrid> {
    load_raster(path).with_context(|| format!("reading {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let rows = load_table(path).with_context(|| format!("reading {}", path.display()))?;
    to_dataset(&rows).with_context(|| format!("loading {}", path.display()))
}

fn table_bytes(rows: &[FeatureRow]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_table(rows, &mut buf)?;
    Ok(buf)
}

fn jsonl(events: impl IntoIterator<Item = serde_json::Value>) -> Vec<u8> {
    let mut out = Vec::new();
    for e in events {
        out.extend(serde_json::to_vec(&e).expect("json value serializes"));
        out.push(b'\n');
    }
    out
}

pub fn cmd_split(args: SplitArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_feature_args(&mut cfg, &args.feature);
    if let Some(p) = args.raster {
        cfg.paths.raster = Some(p);
    }
    if let Some(p) = args.polygons {
        cfg.paths.polygons = Some(p);
    }
    if let Some(c) = args.cell_size {
        cfg.split.cell_size_m = c;
    }
    if let Some(f) = args.fractions {
        cfg.split.fractions = [f[0], f[1], f[2]];
    }
    let raster_path = required(cfg.paths.raster.clone(), "raster")?;
    let poly_path = required(cfg.paths.polygons.clone(), "polygons")?;
    let out = out_dir(&cfg)?;
    let raster = read_raster(&raster_path)?;
    let polygons = read_polygons(&poly_path)?;
    let fractions = SplitFractions(cfg.split.fractions);
    let outcome = split_regions(
        &polygons,
        &raster,
        cfg.split.cell_size_m,
        cfg.split.seed,
        fractions,
        &cfg.feature_extraction,
    )?;
    for (tag, f) in SplitTag::ALL.iter().zip(cfg.split.fractions) {
        if f > 0.0 && outcome.get(*tag).is_empty() {
            bail!("split `{}` is empty after filtering", tag.name());
        }
    }

    let mut o = Outputs::new(out, "split", Some(cfg.split.seed), &cfg);
    o.input(&raster_path)?;
    o.input(&poly_path)?;
    for tag in SplitTag::ALL {
        let fc = to_feature_collection(outcome.get(tag), Some(("split", tag.name())));
        o.write(&format!("{}.geojson", tag.name()), fc.as_bytes())?;
    }
    let mut cells = String::from("cell_x,cell_y,min_x,min_y,split\n");
    for (&cell, tag) in &outcome.split.mapping {
        let r = outcome.split.cell_rect(cell);
        cells.push_str(&format!("{},{},{},{},{}\n", cell.0, cell.1, r.min_x, r.min_y, tag.name()));
    }
    o.write("split_cells.csv", cells.as_bytes())?;
    let report = serde_json::to_string_pretty(&outcome.report)? + "\n";
    o.write("split_report.json", report.as_bytes())?;
    log::info!("split kept {:?}", outcome.report.kept);
    o.finish()
}

pub fn cmd_extract(args: ExtractArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_feature_args(&mut cfg, &args.feature);
    if let Some(p) = args.raster {
        cfg.paths.raster = Some(p);
    }
    let mut inputs = args.polygons;
    if inputs.is_empty() {
        inputs.extend(cfg.paths.polygons.clone());
    }
    if inputs.is_empty() {
        bail!("missing --polygons");
    }
    let raster_path = required(cfg.paths.raster.clone(), "raster")?;
    for p in &inputs {
        required(Some(p.clone()), "polygons")?;
    }
    let out = out_dir(&cfg)?;
    let raster = read_raster(&raster_path)?;
    cfg.feature_extraction.validate(raster.cell_size())?;

    let mut o = Outputs::new(out, "extract", None, &cfg);
    o.input(&raster_path)?;
    let mut stems = BTreeMap::new();
    for path in &inputs {
        o.input(path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("polygons")
            .to_string();
        if stems.insert(stem.clone(), path.clone()).is_some() {
            bail!("two polygon files share the name `{stem}`");
        }
        let polygons = read_polygons(path)?;
        let (rows, failures) = with_pool(cfg.jobs, || extract_rows(&polygons, &raster, &cfg.feature_extraction))?;
        for f in &failures {
            log::warn!("{}: {} skipped: {}", stem, f.source_id, f.reason);
        }
        o.write(&format!("{stem}.csv"), &table_bytes(&rows)?)?;
        let events = failures.iter().map(|f| {
            json!({"event": "extract_failed", "file": stem, "index": f.index, "source_id": f.source_id, "reason": f.reason})
        });
        let summary = json!({"event": "extract_done", "file": stem, "polygons": polygons.len(), "rows": rows.len(), "failed": failures.len()});
        o.write(&format!("{stem}.log.jsonl"), &jsonl(events.chain([summary])))?;
    }
    o.finish()
}

fn select(data: &Dataset, features: &[String]) -> Result<Dataset> {
    Ok(data.select(features)?)
}

fn report_json(model: &TrainedModel, sets: &[(&str, &Dataset)]) -> Result<String> {
    let mut obj = serde_json::Map::new();
    obj.insert("kind".into(), json!(model.kind().name()));
    obj.insert("features".into(), json!(model.feature_names));
    for (name, data) in sets {
        if data.is_empty() {
            continue;
        }
        let c = confusion(model, data)?;
        obj.insert(
            (*name).into(),
            json!({"rows": data.len(), "confusion": c, "metrics": metrics(&c)?}),
        );
    }
    Ok(serde_json::to_string_pretty(&obj)? + "\n")
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_model_args(&mut cfg, &args.model);
    let train_path = required(Some(args.train), "train")?;
    let valid_path = args.valid.map(|p| required(Some(p), "valid")).transpose()?;
    let out = out_dir(&cfg)?;
    let train = select(&read_dataset(&train_path)?, &cfg.features)?;
    let valid = valid_path
        .as_deref()
        .map(|p| read_dataset(p).and_then(|d| select(&d, &cfg.features)))
        .transpose()?;
    let model = cfg.model.fit(&train, valid.as_ref())?;

    let mut o = Outputs::new(out, "train", Some(cfg.model.perceptron.seed), &cfg);
    o.input(&train_path)?;
    if let Some(p) = &valid_path {
        o.input(p)?;
    }
    o.write("model.json", (model_to_json(&model) + "\n").as_bytes())?;
    let mut sets = vec![("train", &train)];
    if let Some(v) = &valid {
        sets.push(("validation", v));
    }
    o.write("train_report.json", report_json(&model, &sets)?.as_bytes())?;
    o.finish()
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_model_args(&mut cfg, &args.model);
    let paths = [
        required(Some(args.train), "train")?,
        required(Some(args.valid), "valid")?,
        required(Some(args.test), "test")?,
    ];
    let out = out_dir(&cfg)?;
    let [train, valid, test] = [
        read_dataset(&paths[0])?,
        read_dataset(&paths[1])?,
        read_dataset(&paths[2])?,
    ];
    let specs: Vec<ModelSpec> = cfg
        .experiments
        .models
        .iter()
        .map(|&k| ModelSpec { kind: k, ..cfg.model.clone() })
        .collect();
    let ex = &cfg.experiments;

    let mut o = Outputs::new(out, "eval", Some(cfg.model.perceptron.seed), &cfg);
    for p in &paths {
        o.input(p)?;
    }
    let result = with_pool(cfg.jobs, || -> Result<()> {
        let thresholds = threshold_table(&train, Some(&valid), &cfg.features)?;
        o.write("thresholds.csv", threshold_csv(&thresholds)?.as_bytes())?;

        let (tr, va, te) = (select(&train, &cfg.features)?, select(&valid, &cfg.features)?, select(&test, &cfg.features)?);
        let mut area = String::new();
        let mut bins = String::new();
        let mut summary = String::from("model,accuracy,precision,recall,f1,balanced_accuracy\n");
        for (i, spec) in specs.iter().enumerate() {
            let rows = area_percentile_experiment(&tr, &va, &te, &ex.percentiles, spec)?;
            let csv = area_percentile_csv(spec.kind.name(), &rows)?;
            area.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
            let model = spec.fit(&tr, Some(&va))?;
            let b = confidence_bins_experiment(&model, &te, &ex.bin_edges)?;
            let csv = confidence_bins_csv(spec.kind.name(), &b)?;
            bins.push_str(if i == 0 { &csv } else { csv.split_once('\n').map_or("", |x| x.1) });
            let m = metrics(&confusion(&model, &te)?)?;
            summary.push_str(&format!(
                "{},{},{},{},{},{}\n",
                spec.kind.name(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                m.balanced_accuracy
            ));
        }
        o.write("test_metrics.csv", summary.as_bytes())?;
        o.write("area_percentiles.csv", area.as_bytes())?;
        o.write("confidence_bins.csv", bins.as_bytes())?;
        let subsets = feature_subset_experiment(&train, &valid, &test, &ex.feature_subsets, &specs)?;
        o.write("feature_subsets.csv", feature_subset_csv(&subsets)?.as_bytes())?;
        Ok(())
    })?;
    result?;
    o.finish()
}

pub fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    apply_feature_args(&mut cfg, &args.feature);
    let model_path = required(Some(args.model_file), "model-file")?;
    let out = out_dir(&cfg)?;
    let model = load_model(&model_path).with_context(|| format!("loading {}", model_path.display()))?;
    let mut o = Outputs::new(out, "predict", None, &cfg);
    o.input(&model_path)?;

    let mut failures = Vec::new();
    let rows = match (args.table, args.raster, args.polygons) {
        (Some(t), _, _) => {
            let t = required(Some(t), "table")?;
            o.input(&t)?;
            load_table(&t)?
        }
        (None, Some(r), Some(p)) => {
            let (r, p) = (required(Some(r), "raster")?, required(Some(p), "polygons")?);
            o.input(&r)?;
            o.input(&p)?;
            let raster = read_raster(&r)?;
            let polygons = read_polygons(&p)?;
            let (rows, f) = with_pool(cfg.jobs, || extract_rows(&polygons, &raster, &cfg.feature_extraction))?;
            failures = f;
            rows
        }
        _ => bail!("give either --table or --raster with --polygons"),
    };
    let idx: Vec<usize> = model
        .feature_names
        .iter()
        .map(|n| crate::features::feature_index(n).with_context(|| format!("model uses unknown feature `{n}`")))
        .collect::<Result<_>>()?;
    let mut csv = String::from("source_id,label,p_high,class\n");
    for r in &rows {
        let all = r.features.to_array();
        let x: Vec<f64> = idx.iter().map(|&j| all[j]).collect();
        let p = model.predict_proba(&x)?;
        let label = r.label.map(|l| l.as_u8().to_string()).unwrap_or_default();
        let id = if r.source_id.contains([',', '"', '\n']) {
            format!("\"{}\"", r.source_id.replace('"', "\"\""))
        } else {
            r.source_id.clone()
        };
        csv.push_str(&format!("{id},{label},{p},{}\n", u8::from(p >= 0.5)));
    }
    o.write("predictions.csv", csv.as_bytes())?;
    let events = failures.iter().map(|f| {
        json!({"event": "extract_failed", "index": f.index, "source_id": f.source_id, "reason": f.reason})
    });
    o.write("predict.log.jsonl", &jsonl(events))?;
    o.finish()
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(n) = args.polygons_per_class {
        cfg.synth.polygons_per_class = n;
    }
    if let Some(e) = args.extent {
        cfg.synth.extent_m = e;
    }
    if let Some(n) = args.label_noise {
        cfg.synth.small_stand_label_noise = n;
    }
    let out = out_dir(&cfg)?;
    let scene = generate_scene(&cfg.synth)?;
    let mut o = Outputs::new(out, "synth", Some(cfg.synth.seed), &cfg);
    o.write("chm.asc", scene.raster.to_ascii_grid().as_bytes())?;
    o.write("polygons.geojson", to_feature_collection(&scene.polygons, None).as_bytes())?;
    let mut stands = String::from("source_id,kind,label,label_flipped,planted_trees\n");
    for s in &scene.stands {
        let kind = match s.kind {
            crate::synth::StandKind::Plantation => "plantation",
            crate::synth::StandKind::Natural => "natural",
        };
        stands.push_str(&format!("{},{kind},{},{},{}\n", s.source_id, s.label.name(), s.label_flipped, s.trees.len()));
    }
    o.write("stands.csv", stands.as_bytes())?;
    o.finish()
}

pub fn cmd_show_config(args: CommonArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    print!("{}", cfg.to_toml());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ShowConfig(a) => cmd_show_config(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_and_unknown_keys() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[model]\nkind = \"tree\"\n[model.tree]\nmax_depth = 3\n").unwrap();
        assert_eq!(cfg.model.kind, ModelKind::Tree);
        assert_eq!(cfg.model.tree.max_depth, 3);
        assert_eq!(cfg.model.tree.min_samples_leaf, 5);
        assert!(toml::from_str::<RunConfig>("sede = 3\n").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "canopy", "train", "--train", "t.csv", "--model", "perceptron", "--features", "ttd,tthm", "--eta", "0.5",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        let mut cfg = RunConfig::default();
        apply_model_args(&mut cfg, &a.model);
        assert_eq!(cfg.model.kind, ModelKind::Perceptron);
        assert_eq!(cfg.features, vec!["ttd", "tthm"]);
        assert_eq!(cfg.model.perceptron.eta, 0.5);
        assert!(Cli::try_parse_from(["canopy", "split", "--fractions", "1,0"]).is_err());
    }
}
