//! File-based pipeline stages behind the CLI.
//!
//! Each stage reads the artifacts of earlier stages from the output
//! directory, writes its own artifacts atomically, and records input and
//! output hashes in `manifest.json`.
//!
//! Layout of the output directory:
//!
//! ```text
//! edges.csv                         ingest | synth
//! ids.csv, split.json               split
//! split/{train,validation,test}.graph
//! features/{train,validation,test}.csv, standardizer.json
//!                                   featurize
//! models/<name>.json                train
//! results.csv                       evaluate
//! stats/*.csv, stats/summary.json   stats
//! report.txt                        report
//! manifest.json                     every stage
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::features::{
    apply_standardizer, featurize, fit_standardizer, graph_pairs, CentralityConfig, FeatureContext, FeatureMatrix,
    PageRankConfig, Standardizer,
};
use crate::fusion::{self, EmbeddingTable};
use crate::graph::{self, BipartiteGraph};
use crate::ingest::{self, IdMap, ReviewEdge, Timestamp};
use crate::matrix::Matrix;
use crate::models::{self, Hyperparameters, ModelFile, ModelKind, Validation};
use crate::netstats::{self, RatingMode, Side, TimeBin};
use crate::synth::{self, SynthConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Synth,
    Split,
    Featurize,
    Train,
    Evaluate,
    Stats,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Synth,
        Stage::Split,
        Stage::Featurize,
        Stage::Train,
        Stage::Evaluate,
        Stage::Stats,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::Split => "split",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Stats => "stats",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Settings of one run, parsed from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    /// Reviews before this instant are discarded at ingest.
    pub cutoff: Option<Timestamp>,
    /// Keep only the first N edges in canonical order.
    pub limit: Option<usize>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub models: Vec<ModelKind>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub embeddings: Option<PathBuf>,
    pub pagerank: PageRankConfig,
    pub centrality: CentralityConfig,
    pub synth: SynthConfig,
    pub hyper: Hyperparameters,
    /// Every key as written in the file, for the manifest.
    pub entries: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("out"),
            inputs: Vec::new(),
            cutoff: None,
            limit: None,
            train_frac: 0.8,
            val_frac: 0.1,
            models: vec![
                ModelKind::Baseline,
                ModelKind::Linear,
                ModelKind::Ridge,
                ModelKind::Bayesian,
                ModelKind::Mlp,
                ModelKind::Forest,
            ],
            seed: None,
            workers: None,
            embeddings: None,
            pagerank: PageRankConfig::default(),
            centrality: CentralityConfig::default(),
            synth: SynthConfig::default(),
            hyper: Hyperparameters::default(),
            entries: BTreeMap::new(),
        }
    }
}

fn parse_list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, ()> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| ()))
        .collect()
}

pub fn parse_models(value: &str) -> Result<Vec<ModelKind>> {
    let models: Vec<ModelKind> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if models.is_empty() {
        return Err(Error::Config("model list is empty".into()));
    }
    Ok(models)
}

impl PipelineConfig {
    /// Parses the config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if cfg.entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!("line {line_no}: field `{key}` is set twice")));
            }
            cfg.set(key, value, base)
                .map_err(|why| Error::Config(format!("line {line_no}: field `{key}`: {why}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value `{v}`"))
        }
        let path = |v: &str| base.join(v);
        let date = |v: &str| ingest::parse_date(v).ok_or_else(|| format!("invalid date `{v}`"));
        match key {
            "output_dir" => self.output_dir = path(value),
            "inputs" => self.inputs = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(path).collect(),
            "cutoff" => self.cutoff = Some(date(value)?),
            "limit" => self.limit = Some(num(value)?),
            "train_frac" => self.train_frac = num(value)?,
            "val_frac" => self.val_frac = num(value)?,
            "models" => self.models = parse_models(value).map_err(|e| e.to_string())?,
            "seed" => self.seed = Some(num(value)?),
            "workers" => self.workers = Some(num(value)?),
            "embeddings" => self.embeddings = Some(path(value)),
            "features.pagerank_damping" => self.pagerank.damping = num(value)?,
            "features.pagerank_tol" => self.pagerank.tol = num(value)?,
            "features.pagerank_max_iter" => self.pagerank.max_iter = num(value)?,
            "features.centrality_tol" => self.centrality.tol = num(value)?,
            "features.centrality_max_iter" => self.centrality.max_iter = num(value)?,
            "synth.n_users" => self.synth.n_users = num(value)?,
            "synth.n_businesses" => self.synth.n_businesses = num(value)?,
            "synth.n_edges" => self.synth.n_edges = num(value)?,
            "synth.gamma" => self.synth.gamma = num(value)?,
            "synth.ratings" => {
                let p: Vec<f64> = parse_list(value).map_err(|_| format!("invalid list `{value}`"))?;
                self.synth.rating_probs = p.try_into().map_err(|_| "expected five probabilities".to_string())?;
            }
            "synth.start" => self.synth.ts_start = date(value)?,
            "synth.end" => self.synth.ts_end = date(value)?,
            "ridge.alpha" => self.hyper.ridge_alpha = num(value)?,
            "bayesian.max_iter" => self.hyper.bayesian.max_iter = num(value)?,
            "bayesian.tol" => self.hyper.bayesian.tol = num(value)?,
            "mlp.epochs" => self.hyper.mlp.epochs = num(value)?,
            "mlp.patience" => self.hyper.mlp.patience = num(value)?,
            "mlp.learning_rate" => self.hyper.mlp.learning_rate = num(value)?,
            "mlp.batch_size" => self.hyper.mlp.batch_size = num(value)?,
            "mlp.l2" => self.hyper.mlp.l2 = num(value)?,
            "mlp.hidden" => self.hyper.mlp.hidden = parse_list(value).map_err(|_| format!("invalid list `{value}`"))?,
            "forest.n_trees" => self.hyper.forest.n_trees = num(value)?,
            "forest.max_depth" => self.hyper.forest.max_depth = Some(num(value)?),
            "forest.min_samples_leaf" => self.hyper.forest.min_samples_leaf = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(Error::Config(format!(
                "field `train_frac`/`val_frac`: ({}, {}) must be positive with sum < 1",
                self.train_frac, self.val_frac
            )));
        }
        if self.hyper.ridge_alpha < 0.0 {
            return Err(Error::Config("field `ridge.alpha`: must be non-negative".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("field `workers`: must be positive".into()));
        }
        if self.hyper.forest.n_trees == 0 || self.hyper.forest.min_samples_leaf == 0 {
            return Err(Error::Config("field `forest.*`: counts must be positive".into()));
        }
        self.hyper.mlp.validate()
    }

    fn require_seed(&self, stage: Stage) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(format!("field `seed` is required by the `{stage}` stage")))
    }

    /// Config with the seed propagated into every stochastic component.
    fn seeded(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.synth.seed = seed;
        cfg.hyper.mlp.seed = seed;
        cfg.hyper.forest.seed = seed;
        cfg
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.output_dir.join(rel)
    }
}

const EDGES: &str = "edges.csv";
const IDS: &str = "ids.csv";
const SPLIT_SUMMARY: &str = "split.json";
const STANDARDIZER: &str = "standardizer.json";
const RESULTS: &str = "results.csv";
const REPORT: &str = "report.txt";
const MANIFEST: &str = "manifest.json";
pub const DATASETS: [&str; 3] = ["train", "validation", "test"];

fn split_path(name: &str) -> String {
    format!("split/{name}.graph")
}

fn features_path(name: &str) -> String {
    format!("features/{name}.csv")
}

fn model_path(kind: ModelKind) -> String {
    format!("models/{}.json", kind.name())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so readers never see a partial artifact.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    std::io::copy(&mut File::open(path)?, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Run record: engine version, config, seed and per-stage file hashes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Tracks the files a stage touches.
struct StageRun<'a> {
    cfg: &'a PipelineConfig,
    stage: Stage,
    record: StageRecord,
}

impl<'a> StageRun<'a> {
    fn new(cfg: &'a PipelineConfig, stage: Stage) -> Self {
        StageRun {
            cfg,
            stage,
            record: StageRecord::default(),
        }
    }

    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.cfg.output_dir)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }

    /// Resolves an artifact of an earlier stage, failing with a dependency
    /// error that names that stage.
    fn need(&mut self, rel: &str, producer: &'static str) -> Result<PathBuf> {
        let path = self.cfg.out(rel);
        if !path.is_file() {
            return Err(Error::Dependency { stage: producer, path });
        }
        self.record.inputs.insert(rel.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    fn external(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Config(format!("input `{}` does not exist", path.display())));
        }
        let key = self.key(path);
        self.record.inputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    fn write<F>(&mut self, rel: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.cfg.out(rel);
        write_atomic(&path, body)?;
        self.record.outputs.insert(rel.to_string(), sha256_file(&path)?);
        Ok(path)
    }

    fn finish(self) -> Result<StageRecord> {
        let path = self.cfg.out(MANIFEST);
        let mut manifest: Manifest = if path.is_file() {
            serde_json::from_reader(BufReader::new(File::open(&path)?))?
        } else {
            Manifest::default()
        };
        manifest.version = VERSION.to_string();
        manifest.config = self.cfg.entries.clone();
        manifest.seed = self.cfg.seed;
        manifest.stages.insert(self.stage.name().to_string(), self.record.clone());
        write_atomic(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            writeln!(w)?;
            Ok(())
        })?;
        Ok(self.record)
    }
}

/// Runs one stage on the current thread pool.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageRecord> {
    info!("stage {stage}: output {}", cfg.output_dir.display());
    fs::create_dir_all(&cfg.output_dir)?;
    let mut run = StageRun::new(cfg, stage);
    match stage {
        Stage::Ingest => ingest_stage(&mut run)?,
        Stage::Synth => synth_stage(&mut run)?,
        Stage::Split => split_stage(&mut run)?,
        Stage::Featurize => featurize_stage(&mut run)?,
        Stage::Train => train_stage(&mut run)?,
        Stage::Evaluate => evaluate_stage(&mut run)?,
        Stage::Stats => stats_stage(&mut run)?,
        Stage::Report => {
            report_stage(&mut run)?;
        }
    }
    run.finish()
}

/// Runs one stage on a pool of `workers` threads, or the global pool.
pub fn run_stage_with_workers(stage: Stage, cfg: &PipelineConfig) -> Result<StageRecord> {
    match cfg.workers {
        None => run_stage(stage, cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("field `workers`: {e}")))?
            .install(|| run_stage(stage, cfg)),
    }
}

fn finalize_edges(mut edges: Vec<ReviewEdge>, limit: Option<usize>) -> Vec<ReviewEdge> {
    edges = ingest::dedupe_edges(edges);
    ingest::sort_edges(&mut edges);
    if let Some(n) = limit {
        edges.truncate(n);
    }
    edges
}

fn ingest_stage(run: &mut StageRun<'_>) -> Result<()> {
    let cfg = run.cfg;
    if cfg.inputs.is_empty() {
        return Err(Error::Config("field `inputs` is required by the `ingest` stage".into()));
    }
    for p in &cfg.inputs {
        run.external(p)?;
    }
    let cutoff = cfg.cutoff.unwrap_or(Timestamp::MIN);
    let mut ids = IdMap::new();
    let mut edges = Vec::new();
    for file in ingest::load_records(&cfg.inputs)? {
        edges.extend(file.iter().filter(|r| r.timestamp >= cutoff).map(|r| r.intern(&mut ids)));
    }
    let edges = finalize_edges(edges, cfg.limit);
    info!("ingest: {} edges", edges.len());
    run.write(EDGES, |w| ingest::write_interchange(w, &edges, &ids))?;
    Ok(())
}

fn synth_stage(run: &mut StageRun<'_>) -> Result<()> {
    let seed = run.cfg.require_seed(Stage::Synth)?;
    let cfg = run.cfg.seeded(seed);
    let data = synth::generate(&cfg.synth)?;
    let edges = finalize_edges(data.edges, cfg.limit);
    info!("synth: {} edges", edges.len());
    run.write(EDGES, |w| ingest::write_interchange(w, &edges, &data.ids))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n_edges: usize,
    pub n_users: usize,
    pub n_businesses: usize,
    pub cut1: Timestamp,
    pub cut2: Timestamp,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub dropped_validation: usize,
    pub dropped_test: usize,
}

fn load_edges(run: &mut StageRun<'_>) -> Result<(Vec<ReviewEdge>, IdMap)> {
    let path = run.need(EDGES, "ingest` or `synth")?;
    let mut ids = IdMap::new();
    let edges = ingest::read_interchange(BufReader::new(File::open(&path)?), &mut ids)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    Ok((edges, ids))
}

fn split_stage(run: &mut StageRun<'_>) -> Result<()> {
    let (edges, ids) = load_edges(run)?;
    let g = BipartiteGraph::with_id_space(edges, ids.n_users(), ids.n_businesses())?;
    let split = graph::temporal_split(&g, run.cfg.train_frac, run.cfg.val_frac)?;
    run.write(IDS, |w| ids.write_to(w))?;
    for (name, part) in DATASETS.iter().zip([&split.train, &split.validation, &split.test]) {
        run.write(&split_path(name), |w| graph::write_snapshot(w, part, Some(split.cuts)))?;
    }
    let summary = SplitSummary {
        n_edges: g.n_edges(),
        n_users: g.n_users(),
        n_businesses: g.n_businesses(),
        cut1: split.cuts.0,
        cut2: split.cuts.1,
        train: split.train.n_edges(),
        validation: split.validation.n_edges(),
        test: split.test.n_edges(),
        dropped_validation: split.dropped_validation,
        dropped_test: split.dropped_test,
    };
    info!("split: {summary:?}");
    run.write(SPLIT_SUMMARY, |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

fn load_snapshot(run: &mut StageRun<'_>, name: &str) -> Result<BipartiteGraph> {
    let path = run.need(&split_path(name), "split")?;
    let (g, _) = graph::read_snapshot(BufReader::new(File::open(&path)?)).map_err(|e| Error::format(&path, e.to_string()))?;
    Ok(g)
}

fn load_ids(run: &mut StageRun<'_>) -> Result<IdMap> {
    let path = run.need(IDS, "split")?;
    IdMap::load(&path).map_err(|e| Error::format(&path, e.to_string()))
}

fn featurize_stage(run: &mut StageRun<'_>) -> Result<()> {
    let ids = load_ids(run)?;
    let graphs: Vec<BipartiteGraph> = DATASETS.iter().map(|n| load_snapshot(run, n)).collect::<Result<_>>()?;
    let ctx = FeatureContext::with_configs(&graphs[0], &run.cfg.pagerank, &run.cfg.centrality)?;
    let mut train_features = None;
    for (name, g) in DATASETS.iter().zip(&graphs) {
        let fm = featurize(&ctx, &graph_pairs(g))?;
        run.write(&features_path(name), |w| fm.write_csv(w, &ids))?;
        if train_features.is_none() {
            train_features = Some(fm);
        }
    }
    let s = fit_standardizer(train_features.as_ref().expect("train is featurized first"))?;
    run.write(STANDARDIZER, |w| {
        serde_json::to_writer_pretty(&mut *w, &s)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

fn load_features(run: &mut StageRun<'_>, name: &str, ids: &IdMap) -> Result<FeatureMatrix> {
    let path = run.need(&features_path(name), "featurize")?;
    FeatureMatrix::read_csv(BufReader::new(File::open(&path)?), ids).map_err(|e| Error::format(&path, e.to_string()))
}

fn load_standardizer(run: &mut StageRun<'_>) -> Result<Standardizer> {
    let path = run.need(STANDARDIZER, "featurize")?;
    Ok(serde_json::from_reader(BufReader::new(File::open(&path)?)).map_err(|e| Error::format(&path, e.to_string()))?)
}

fn load_embedding_table(run: &mut StageRun<'_>) -> Result<EmbeddingTable> {
    let path = run
        .cfg
        .embeddings
        .clone()
        .ok_or_else(|| Error::Config("field `embeddings` is required by the `fused_mlp` model".into()))?;
    run.external(&path)?;
    fusion::load_embeddings(&path).map_err(|e| Error::format(&path, e.to_string()))
}

/// Standardized design matrix for one model family; fused models get the
/// embedding columns in front.
fn design(kind: ModelKind, fm: &FeatureMatrix, table: Option<&EmbeddingTable>, ids: &IdMap) -> Result<Matrix> {
    match (kind, table) {
        (ModelKind::FusedMlp, Some(t)) => Ok(fusion::fuse(fm, t, ids)?.0),
        (ModelKind::FusedMlp, None) => Err(Error::Config("fused model without embeddings".into())),
        _ => Ok(fm.design()),
    }
}

fn train_stage(run: &mut StageRun<'_>) -> Result<()> {
    let stochastic = run
        .cfg
        .models
        .iter()
        .any(|k| matches!(k, ModelKind::Mlp | ModelKind::FusedMlp | ModelKind::Forest));
    let cfg = match stochastic {
        true => run.cfg.seeded(run.cfg.require_seed(Stage::Train)?),
        false => run.cfg.clone(),
    };
    let ids = load_ids(run)?;
    let s = load_standardizer(run)?;
    let train = apply_standardizer(&s, &load_features(run, "train", &ids)?)?;
    let val = apply_standardizer(&s, &load_features(run, "validation", &ids)?)?;
    let table = match cfg.models.contains(&ModelKind::FusedMlp) {
        true => Some(load_embedding_table(run)?),
        false => None,
    };
    let y = train.targets();
    let vy = val.targets();
    for &kind in &cfg.models {
        info!("train: {kind} on {} rows", train.len());
        let x = design(kind, &train, table.as_ref(), &ids)?;
        let vx = design(kind, &val, table.as_ref(), &ids)?;
        let validation = (!vy.is_empty()).then_some(Validation { x: &vx, y: &vy });
        let model = models::train(kind, &x, &y, &cfg.hyper, validation)?;
        let file = ModelFile::new(kind, cfg.hyper.clone(), Some(s.clone()), model);
        run.write(&model_path(kind), |w| {
            w.write_all(file.to_json()?.as_bytes())?;
            Ok(())
        })?;
    }
    Ok(())
}

fn evaluate_stage(run: &mut StageRun<'_>) -> Result<()> {
    let files: Vec<ModelFile> = run
        .cfg
        .models
        .clone()
        .into_iter()
        .map(|k| {
            let path = run.need(&model_path(k), "train")?;
            ModelFile::load(&path).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect::<Result<_>>()?;
    let ids = load_ids(run)?;
    let table = match run.cfg.models.contains(&ModelKind::FusedMlp) {
        true => Some(load_embedding_table(run)?),
        false => None,
    };
    let data: Vec<FeatureMatrix> = DATASETS.iter().map(|n| load_features(run, n, &ids)).collect::<Result<_>>()?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (name, fm) in DATASETS.iter().zip(&data) {
        if fm.is_empty() {
            log::warn!("evaluate: {name} set is empty, skipping");
            continue;
        }
        let y = fm.targets();
        for file in &files {
            let raw = match file.kind {
                ModelKind::FusedMlp => {
                    // embeddings are never standardized; the model file's
                    // standardizer only touches the trailing graph columns
                    design(file.kind, fm, table.as_ref(), &ids)?
                }
                _ => fm.design(),
            };
            let pred = file.predict_raw(&raw)?;
            reports.push(eval::evaluate(file.kind.display_name(), name, &pred, &y)?);
        }
    }
    run.write(RESULTS, |w| eval::write_results(w, &reports))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub n_edges: usize,
    pub n_users: usize,
    pub n_businesses: usize,
    pub density: f64,
    pub train_components: usize,
    pub largest_train_component: usize,
    pub monthly_review_cv: f64,
    pub user_degree_slope: Option<f64>,
    pub business_degree_slope: Option<f64>,
}

/// Bins with fewer observations are left out of the log-log degree fits.
pub const SLOPE_MIN_COUNT: u64 = 5;

fn stats_stage(run: &mut StageRun<'_>) -> Result<()> {
    let (edges, ids) = load_edges(run)?;
    let g = BipartiteGraph::with_id_space(edges, ids.n_users(), ids.n_businesses())?;
    let train = load_snapshot(run, "train")?;

    let mut csv = |rel: &str, h: &netstats::Histogram| run.write(&format!("stats/{rel}.csv"), |w| h.write_csv(w));
    let users = netstats::degree_histogram(&g, Side::User)?;
    let businesses = netstats::degree_histogram(&g, Side::Business)?;
    csv("user_degree", &users)?;
    csv("business_degree", &businesses)?;
    csv("rating_per_edge", &netstats::rating_histogram(&g, RatingMode::PerEdge)?)?;
    csv("rating_per_user", &netstats::rating_histogram(&g, RatingMode::PerUserAverage)?)?;
    csv("rating_per_business", &netstats::rating_histogram(&g, RatingMode::PerBusinessAverage)?)?;
    csv("train_user_degree", &netstats::degree_histogram(&train, Side::User)?)?;
    csv("train_business_degree", &netstats::degree_histogram(&train, Side::Business)?)?;
    let monthly = netstats::reviews_over_time(g.edges(), TimeBin::Month)?;
    csv("reviews_per_day", &netstats::reviews_over_time(g.edges(), TimeBin::Day)?)?;
    csv("reviews_per_month", &monthly)?;
    let components = netstats::component_sizes(&train)?;
    run.write("stats/train_components.csv", |w| netstats::write_components_csv(w, &components))?;

    let summary = StatsSummary {
        n_edges: g.n_edges(),
        n_users: g.n_users(),
        n_businesses: g.n_businesses(),
        density: g.density(),
        train_components: components.len(),
        largest_train_component: components.first().copied().unwrap_or(0),
        monthly_review_cv: netstats::coefficient_of_variation(&monthly)?,
        user_degree_slope: netstats::loglog_slope(&users, SLOPE_MIN_COUNT).ok(),
        business_degree_slope: netstats::loglog_slope(&businesses, SLOPE_MIN_COUNT).ok(),
    };
    run.write("stats/summary.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        writeln!(w)?;
        Ok(())
    })?;
    Ok(())
}

fn report_stage(run: &mut StageRun<'_>) -> Result<String> {
    let path = run.need(RESULTS, "evaluate")?;
    let reports = eval::read_results(BufReader::new(File::open(&path)?)).map_err(|e| Error::format(&path, e.to_string()))?;
    let text = eval::render_tables(&reports);
    run.write(REPORT, |w| {
        w.write_all(text.as_bytes())?;
        Ok(())
    })?;
    Ok(text)
}

/// Stages from `synth` (or `ingest` when inputs are configured) through
/// `report`, in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    let source = if cfg.inputs.is_empty() { Stage::Synth } else { Stage::Ingest };
    for stage in [source, Stage::Split, Stage::Featurize, Stage::Train, Stage::Evaluate, Stage::Stats, Stage::Report] {
        run_stage_with_workers(stage, cfg)?;
    }
    Ok(())
}

/// Path of the rendered report inside `cfg.output_dir`.
pub fn report_path(cfg: &PipelineConfig) -> PathBuf {
    cfg.out(REPORT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_config() {
        let text = "# run\noutput_dir = out\nseed = 7\nmodels = baseline, linear\nsynth.ratings = 0.2,0.2,0.2,0.2,0.2\ncutoff = 2016-08-24\n";
        let cfg = PipelineConfig::parse(text, Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x/out"));
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.models, vec![ModelKind::Baseline, ModelKind::Linear]);
        assert_eq!(cfg.synth.rating_probs, [0.2; 5]);
        assert_eq!(cfg.cutoff, Some(1_471_996_800));
        assert_eq!(cfg.entries.len(), 5);
    }

    #[test]
    fn config_errors_name_line_and_field() {
        let check = |text: &str, needle: &str| match PipelineConfig::parse(text, Path::new(".")) {
            Err(Error::Config(m)) => assert!(m.contains(needle), "{m}"),
            other => panic!("{other:?}"),
        };
        check("seed = 1\nmlp.epochs = many\n", "line 2: field `mlp.epochs`");
        check("colour = red\n", "line 1: field `colour`: unknown key");
        check("seed = 1\nseed = 2\n", "line 2: field `seed` is set twice");
        check("just words\n", "line 1");
        check("models = baseline,gbm\n", "unknown model `gbm`");
        check("train_frac = 0.95\n", "train_frac");
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"one")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"two")?)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn failed_write_leaves_no_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let r = write_atomic(&p, |_| Err(Error::Input("boom".into())));
        assert!(r.is_err());
        assert!(!p.exists());
    }
}
