//! Pipeline stages. Each reads its inputs from files under the output
//! directory, writes its artifacts there and records them in
//! `run_manifest.json`.
//!
//! ```text
//! <out>/input/             synthetic city (synth)
//! <out>/features/          per-fold region tables + schema sidecars
//! <out>/dataset/           grid.csv, folds.json
//! <out>/train/             test-split scores per (model, classifier)
//! <out>/eval/              eval_report.json
//! <out>/report/            report_table3.*, report_table4.*
//! <out>/run_manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crimelab::dataset::{build_grid, make_folds, FoldSpec, Grid};
use crimelab::eval::{
    fold_cells, fold_tables, render_report, report_from_scores, score_matrix, tune, Classifier, EvalReport, FoldScores,
    ModelSpec, PreparedFold, ReportFormat,
};
use crimelab::features::binning::SeasonMap;
use crimelab::features::{CityIndex, MonthWindow, RegionTable, TableSidecar, YearMonth};
use crimelab::ingest::{load_city, CityData, IngestSummary};
use crimelab::learn::{EpochMetrics, HyperParams};
use crimelab::seed;
use crimelab::synth::generate;

use crate::config::RunConfig;
use crate::error::CliError;

pub const ARTIFACT_VERSION: u32 = 1;
pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const INPUT_DIR: &str = "input";
pub const FEATURES_INDEX: &str = "features/folds.json";
pub const GRID_FILE: &str = "dataset/grid.csv";
pub const FOLDS_FILE: &str = "dataset/folds.json";
pub const SCORES_INDEX: &str = "train/scores.json";
pub const EVAL_REPORT: &str = "eval/eval_report.json";
pub const REPORT_DIR: &str = "report";

const SYNTH_STREAM: u64 = 1;
const DATASET_STREAM: u64 = 2;
const TRAIN_STREAM: u64 = 3;
const SEARCH_STREAM: u64 = 4;

type Result<T> = std::result::Result<T, CliError>;

/// Seeds of every random stream, all derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub synth: u64,
    pub undersample: u64,
    pub fit: u64,
    pub search: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            synth: seed::derive(master, &[SYNTH_STREAM]),
            undersample: seed::derive(master, &[DATASET_STREAM]),
            fit: seed::derive(master, &[TRAIN_STREAM]),
            search: seed::derive(master, &[SEARCH_STREAM]),
        }
    }
}

/// A validated config bound to its output directory.
pub struct Context {
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: Seeds,
}

impl Context {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        // Thread count and output location do not change any result.
        let hashed = RunConfig { jobs: None, out: None, ..config.clone() };
        let json = serde_json::to_vec(&hashed).map_err(|e| CliError::Internal(e.to_string()))?;
        let config_hash = hex::encode(Sha256::digest(&json));
        let seeds = Seeds::new(config.seed);
        Ok(Self { config, config_hash, seeds })
    }

    pub fn out(&self) -> &Path {
        self.config.out_dir()
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out().join(rel)
    }

    fn seasons(&self) -> SeasonMap {
        self.config.binning.seasons.map(SeasonMap::from_months).unwrap_or_default()
    }

    fn require(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { path: p, hint: format!("run `crimelab {stage}` first") })
        }
    }

    fn load_city(&self) -> Result<(CityData, IngestSummary, CityIndex)> {
        let paths = self
            .config
            .input_paths(&self.path(INPUT_DIR))
            .ok_or_else(|| CliError::Config("no input files configured".into()))?;
        for p in paths.all() {
            if !p.is_file() {
                let hint =
                    if self.config.synth.is_some() { "run `crimelab synth` first" } else { "input file not found" };
                return Err(CliError::MissingArtifact { path: p.to_path_buf(), hint: hint.into() });
            }
        }
        let binning = self.config.binning()?;
        let (city, summary) = load_city(&paths, &binning).map_err(CliError::data)?;
        let index = CityIndex::build(&city, &binning).map_err(CliError::data)?;
        Ok((city, summary, index))
    }

    /// Study years: configured, the synthetic city's, or the span of crime
    /// years.
    fn years(&self, city: &CityData) -> Result<Vec<i32>> {
        let study = &self.config.study;
        if let Some(start) = study.start_year {
            let last = match study.n_years {
                Some(n) => start + n as i32 - 1,
                None => city.crimes.iter().map(|c| c.bin.year).max().unwrap_or(start).max(start),
            };
            return Ok((start..=last).collect());
        }
        if let Some(s) = &self.config.synth {
            return Ok(s.years());
        }
        let years = city.crimes.iter().map(|c| c.bin.year);
        match (years.clone().min(), years.max()) {
            (Some(a), Some(b)) => Ok((a..=b).collect()),
            _ => Err(CliError::Data("no crime records to infer the study period from".into())),
        }
    }

    fn folds(&self, years: &[i32]) -> Result<Vec<FoldSpec>> {
        let start = YearMonth::new(years[0], 1).ok_or_else(|| CliError::Data(format!("bad year {}", years[0])))?;
        make_folds(start, 12 * years.len(), self.config.study.n_folds).map_err(CliError::data)
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(fs::File::open(path).map_err(|e| CliError::io(path, e))?);
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json_as(path, value, true)
}

fn write_json_as<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<()> {
    let mut w = create(path)?;
    let written =
        if pretty { serde_json::to_writer_pretty(&mut w, value) } else { serde_json::to_writer(&mut w, value) };
    written.map_err(|e| CliError::Internal(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn check_version(found: u32, path: &Path) -> Result<()> {
    if found == ARTIFACT_VERSION {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}: format version {found}, expected {ARTIFACT_VERSION}", path.display())))
    }
}

/// One stage's entry in the run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// SHA-256 of every written artifact, keyed by path relative to the
    /// output directory.
    pub artifacts: BTreeMap<String, String>,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub flags: crimelab::eval::EvalFlags,
    pub stages: BTreeMap<String, StageEntry>,
}

impl Context {
    /// Replaces `stage`'s entry. Entries from a run with another config
    /// are dropped.
    fn record(&self, stage: &str, files: &[PathBuf], details: serde_json::Value) -> Result<()> {
        let path = self.path(RUN_MANIFEST);
        let mut manifest = match read_json::<RunManifest>(&path) {
            Ok(m) if m.config_sha256 == self.config_hash && m.format_version == ARTIFACT_VERSION => m,
            _ => RunManifest {
                format_version: ARTIFACT_VERSION,
                config_sha256: self.config_hash.clone(),
                seeds: self.seeds,
                flags: self.config.flags,
                stages: BTreeMap::new(),
            },
        };
        let mut artifacts = BTreeMap::new();
        for f in files {
            let rel = f.strip_prefix(self.out()).unwrap_or(f).to_string_lossy().replace('\\', "/");
            artifacts.insert(rel, sha256_file(f)?);
        }
        manifest.stages.insert(stage.to_string(), StageEntry { artifacts, details });
        write_json(&path, &manifest)
    }
}

/// Generates the configured synthetic city under `<out>/input`.
pub fn cmd_synth(ctx: &Context) -> Result<()> {
    let mut cfg =
        ctx.config.synth.clone().ok_or_else(|| CliError::Config("`crimelab synth` needs a [synth] section".into()))?;
    cfg.seed = ctx.seeds.synth;
    let city = generate(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = ctx.path(INPUT_DIR);
    let paths = city.write(&dir).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut files: Vec<PathBuf> = paths.all().iter().map(|p| p.to_path_buf()).collect();
    files.push(dir.join(crimelab::synth::TRUTH_MANIFEST));
    eprintln!("synth: {} regions, {} crimes", city.city.regions.len(), city.manifest.crime_count);
    ctx.record(
        "synth",
        &files,
        serde_json::json!({ "seed": cfg.seed, "regions": city.city.regions.len(), "crimes": city.manifest.crime_count }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    pub format_version: u32,
    pub paper_mode: bool,
    pub years: Vec<i32>,
    pub folds: Vec<FoldSpec>,
    /// Table and sidecar file of each fold, relative to `features/`.
    pub tables: Vec<(String, String)>,
}

/// Region feature tables for every fold.
pub fn cmd_features(ctx: &Context) -> Result<()> {
    let (city, summary, index) = ctx.load_city()?;
    let years = ctx.years(&city)?;
    let folds = ctx.folds(&years)?;
    let period = MonthWindow::years(years[0], years.len() as i32);
    let paper_mode = ctx.config.flags.paper_mode;
    let tables = fold_tables(&city, &index, &folds, period, ctx.config.features, paper_mode).map_err(CliError::data)?;

    let mut files = Vec::new();
    let mut names = Vec::new();
    for (f, table) in folds.iter().zip(&tables) {
        let (csv_name, side_name) = (format!("fold_{:02}.csv", f.index), format!("fold_{:02}.schema.json", f.index));
        let csv_path = ctx.path(&format!("features/{csv_name}"));
        let mut w = create(&csv_path)?;
        table.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&csv_path, e))?;
        let side_path = ctx.path(&format!("features/{side_name}"));
        write_json(&side_path, &table.sidecar())?;
        files.extend([csv_path, side_path]);
        names.push((csv_name, side_name));
    }
    let idx = FeatureIndex { format_version: ARTIFACT_VERSION, paper_mode, years, folds, tables: names };
    let idx_path = ctx.path(FEATURES_INDEX);
    write_json(&idx_path, &idx)?;
    files.push(idx_path);
    eprintln!("features: {} fold tables over {} regions", tables.len(), city.regions.len());
    ctx.record(
        "features",
        &files,
        serde_json::json!({ "ingest": summary, "unassigned_crimes": index.unassigned_crimes }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFold {
    pub spec: FoldSpec,
    /// Grid row indices of the (under-sampled) train split.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format_version: u32,
    pub paper_mode: bool,
    pub undersample_ratio: f64,
    pub undersample_seed: u64,
    pub years: Vec<i32>,
    pub folds: Vec<DatasetFold>,
}

/// The cell grid and every fold's train and test cells.
pub fn cmd_dataset(ctx: &Context) -> Result<()> {
    let (city, _, index) = ctx.load_city()?;
    let years = ctx.years(&city)?;
    let folds = ctx.folds(&years)?;
    let ids: Vec<String> = city.regions.iter().map(|r| r.id().to_string()).collect();
    let crimes: Vec<(&str, _)> =
        city.crimes.iter().zip(&index.crime_region).filter_map(|(c, r)| r.map(|r| (ids[r].as_str(), c.bin))).collect();
    let grid = build_grid(&crimes, &ids, &years).map_err(CliError::data)?;
    let flags = ctx.config.flags;
    let cells = fold_cells(&grid, &folds, &flags, ctx.seeds.undersample).map_err(CliError::data)?;

    let grid_path = ctx.path(GRID_FILE);
    let mut w = create(&grid_path)?;
    grid.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&grid_path, e))?;
    let idx = DatasetIndex {
        format_version: ARTIFACT_VERSION,
        paper_mode: flags.paper_mode,
        undersample_ratio: flags.undersample_ratio,
        undersample_seed: ctx.seeds.undersample,
        years,
        folds: folds.iter().zip(cells).map(|(f, (train, test))| DatasetFold { spec: *f, train, test }).collect(),
    };
    let folds_path = ctx.path(FOLDS_FILE);
    // Cell index lists run to millions of entries; keep them on one line.
    write_json_as(&folds_path, &idx, false)?;
    eprintln!("dataset: {} cells, {} with crime", grid.cells.len(), grid.positives());
    ctx.record(
        "dataset",
        &[grid_path, folds_path],
        serde_json::json!({ "cells": grid.cells.len(), "positives": grid.positives(), "regions": grid.region_ids.len() }),
    )
}

fn read_grid(ctx: &Context) -> Result<(Grid, DatasetIndex)> {
    let grid_path = ctx.require(GRID_FILE, "dataset")?;
    let folds_path = ctx.require(FOLDS_FILE, "dataset")?;
    let f = fs::File::open(&grid_path).map_err(|e| CliError::io(&grid_path, e))?;
    let grid =
        Grid::read_csv(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", grid_path.display())))?;
    let idx: DatasetIndex = read_json(&folds_path)?;
    check_version(idx.format_version, &folds_path)?;
    if idx.paper_mode != ctx.config.flags.paper_mode {
        return Err(CliError::Data("dataset was built with a different paper_mode; rerun `crimelab dataset`".into()));
    }
    let n = grid.cells.len();
    if idx.folds.iter().flat_map(|f| f.train.iter().chain(&f.test)).any(|&i| i >= n) {
        return Err(CliError::Data(format!("{}: cell index outside the grid", folds_path.display())));
    }
    Ok((grid, idx))
}

fn read_features(ctx: &Context, dataset: &DatasetIndex) -> Result<Vec<RegionTable>> {
    let idx_path = ctx.require(FEATURES_INDEX, "features")?;
    let idx: FeatureIndex = read_json(&idx_path)?;
    check_version(idx.format_version, &idx_path)?;
    let specs: Vec<FoldSpec> = dataset.folds.iter().map(|f| f.spec).collect();
    if idx.folds != specs || idx.paper_mode != dataset.paper_mode {
        return Err(CliError::Data("feature tables and dataset folds disagree; rerun both stages".into()));
    }
    idx.tables
        .iter()
        .map(|(csv_name, side_name)| {
            let side: TableSidecar = read_json(&ctx.require(&format!("features/{side_name}"), "features")?)?;
            let csv_path = ctx.require(&format!("features/{csv_name}"), "features")?;
            let f = fs::File::open(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
            RegionTable::read_csv(BufReader::new(f), &side)
                .map_err(|e| CliError::Data(format!("{}: {e}", csv_path.display())))
        })
        .collect()
}

/// One trained (model, classifier) pair in the scores index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub model: ModelSpec,
    pub classifier: Classifier,
    /// Little-endian f64 test scores, folds concatenated, relative to
    /// `train/`.
    pub scores_file: String,
    pub trace_file: Option<String>,
    pub folds: Vec<ScoredFold>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredFold {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub classifier: Classifier,
    pub model: ModelSpec,
    pub fold: usize,
    pub candidates: Vec<HyperParams>,
    /// `(candidate index, validation F-score)` in evaluation order.
    pub evaluated: Vec<(usize, f64)>,
    pub best_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoresIndex {
    pub format_version: u32,
    pub fit_seed: u64,
    pub params: HyperParams,
    pub search: Vec<SearchOutcome>,
    pub pairs: Vec<ScoredPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FoldTrace {
    fold: usize,
    best_epoch: Option<usize>,
    trace: Vec<EpochMetrics>,
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut w = create(path)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::Data(format!("{}: truncated score file", path.display())));
    }
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk"))).collect())
}

fn prepared_folds(grid_idx: &DatasetIndex, tables: Vec<RegionTable>) -> Vec<PreparedFold> {
    grid_idx
        .folds
        .iter()
        .zip(tables)
        .map(|(f, table)| PreparedFold { fold: f.spec, table, train: f.train.clone(), test: f.test.clone() })
        .collect()
}

/// Tunes each classifier in the matrix when a search is configured.
fn search_params(
    ctx: &Context,
    grid: &Grid,
    folds: &[PreparedFold],
    classifiers: &[Classifier],
) -> Result<(HyperParams, Vec<SearchOutcome>)> {
    let mut params = ctx.config.params.clone();
    let Some(s) = &ctx.config.search else { return Ok((params, Vec::new())) };
    let model: ModelSpec = s.model.parse().map_err(|e: crimelab::eval::EvalError| CliError::Config(e.to_string()))?;
    let fold = folds.get(s.fold).ok_or_else(|| CliError::Config(format!("search.fold {} does not exist", s.fold)))?;
    let mut outcomes = Vec::new();
    for &c in classifiers {
        let candidates = s.grid.candidates(&ctx.config.params, c);
        let seed = seed::derive(ctx.seeds.search, &[c as u64]);
        let r = tune(grid, fold, &model, c, &candidates, s.n_samples, &ctx.config.flags, &ctx.seasons(), seed)
            .map_err(CliError::data)?;
        match c {
            Classifier::Forest => params.forest = r.best.forest,
            Classifier::Gbm => params.gbm = r.best.gbm,
            Classifier::Mlp => params.mlp = r.best.mlp.clone(),
        }
        outcomes.push(SearchOutcome {
            classifier: c,
            model: model.clone(),
            fold: s.fold,
            candidates,
            evaluated: r.evaluated,
            best_index: r.best_index,
        });
    }
    Ok((params, outcomes))
}

fn pair_stem(model: &ModelSpec, classifier: Classifier) -> String {
    format!("{}-{}", classifier.label(), model.name)
}

/// Fits every configured pair on every fold and stores test-split scores.
pub fn cmd_train(ctx: &Context) -> Result<()> {
    let (grid, dataset) = read_grid(ctx)?;
    let tables = read_features(ctx, &dataset)?;
    let folds = prepared_folds(&dataset, tables);
    let pairs = ctx.config.matrix.pairs()?;
    let mut classifiers: Vec<Classifier> = pairs.iter().map(|p| p.1).collect();
    classifiers.sort_by_key(|c| *c as u8);
    classifiers.dedup();
    let (params, search) = search_params(ctx, &grid, &folds, &classifiers)?;
    let scores = score_matrix(&grid, &folds, &pairs, &params, &ctx.seasons(), ctx.seeds.fit).map_err(CliError::data)?;

    let mut files = Vec::new();
    let mut scored = Vec::new();
    for ((model, classifier), fold_scores) in pairs.iter().zip(&scores) {
        let stem = pair_stem(model, *classifier);
        let scores_file = format!("{stem}.scores");
        let path = ctx.path(&format!("train/{scores_file}"));
        write_f64s(&path, fold_scores.iter().flat_map(|s| s.scores.iter().copied()))?;
        files.push(path);
        let trace_file = if *classifier == Classifier::Mlp {
            let name = format!("{stem}.trace.json");
            let traces: Vec<FoldTrace> = fold_scores
                .iter()
                .map(|s| FoldTrace { fold: s.fold, best_epoch: s.best_epoch, trace: s.trace.clone() })
                .collect();
            let path = ctx.path(&format!("train/{name}"));
            write_json(&path, &traces)?;
            files.push(path);
            Some(name)
        } else {
            None
        };
        scored.push(ScoredPair {
            model: model.clone(),
            classifier: *classifier,
            scores_file,
            trace_file,
            folds: fold_scores
                .iter()
                .map(|s| ScoredFold {
                    fold: s.fold,
                    n_train: s.n_train,
                    n_test: s.scores.len(),
                    best_epoch: s.best_epoch,
                })
                .collect(),
        });
    }
    let idx = ScoresIndex { format_version: ARTIFACT_VERSION, fit_seed: ctx.seeds.fit, params, search, pairs: scored };
    let idx_path = ctx.path(SCORES_INDEX);
    write_json(&idx_path, &idx)?;
    files.push(idx_path);
    eprintln!("train: {} pairs x {} folds", pairs.len(), folds.len());
    ctx.record(
        "train",
        &files,
        serde_json::json!({ "pairs": pairs.len(), "folds": folds.len(), "fit_seed": ctx.seeds.fit }),
    )
}

/// Scores every trained pair against the grid labels.
pub fn cmd_eval(ctx: &Context) -> Result<()> {
    let (grid, dataset) = read_grid(ctx)?;
    let idx_path = ctx.require(SCORES_INDEX, "train")?;
    let idx: ScoresIndex = read_json(&idx_path)?;
    check_version(idx.format_version, &idx_path)?;
    let mut pairs = Vec::new();
    let mut all = Vec::new();
    for p in &idx.pairs {
        let values = read_f64s(&ctx.require(&format!("train/{}", p.scores_file), "train")?)?;
        let mut offset = 0;
        let mut folds = Vec::new();
        for f in &p.folds {
            let test = &dataset
                .folds
                .get(f.fold)
                .ok_or_else(|| CliError::Data(format!("scores reference missing fold {}", f.fold)))?
                .test;
            if test.len() != f.n_test || offset + f.n_test > values.len() {
                return Err(CliError::Data(format!("{}: scores do not match the dataset folds", p.scores_file)));
            }
            folds.push(FoldScores {
                fold: f.fold,
                n_train: f.n_train,
                labels: test.iter().map(|&i| grid.cells[i].label).collect(),
                scores: values[offset..offset + f.n_test].to_vec(),
                best_epoch: f.best_epoch,
                trace: Vec::new(),
            });
            offset += f.n_test;
        }
        if offset != values.len() {
            return Err(CliError::Data(format!("{}: trailing scores", p.scores_file)));
        }
        pairs.push((p.model.clone(), p.classifier));
        all.push(folds);
    }
    let report = report_from_scores(&pairs, &all, &ctx.config.flags, ctx.config.seed).map_err(CliError::data)?;
    let path = ctx.path(EVAL_REPORT);
    write_json(&path, &report)?;
    eprintln!("eval: {} report rows", report.rows.len());
    ctx.record("eval", &[path], serde_json::json!({ "rows": report.rows.len(), "n_folds": report.n_folds }))
}

/// Renders the evaluation report in each requested format.
pub fn cmd_report(ctx: &Context, formats: Option<&[ReportFormat]>) -> Result<Vec<PathBuf>> {
    let path = ctx.require(EVAL_REPORT, "eval")?;
    let report: EvalReport = read_json(&path)?;
    let mut files = Vec::new();
    for &format in formats.unwrap_or(&ctx.config.report.formats) {
        let r = render_report(&report, format);
        for (name, body) in [("report_table3", &r.table3), ("report_table4", &r.table4)] {
            let p = ctx.path(&format!("{REPORT_DIR}/{name}.{}", format.extension()));
            let mut w = create(&p)?;
            w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(&p, e))?;
            files.push(p);
        }
    }
    eprintln!("report: wrote {} files", files.len());
    ctx.record("report", &files, serde_json::Value::Null)?;
    Ok(files)
}

/// Every stage in order; synth only when configured.
pub fn cmd_pipeline(ctx: &Context) -> Result<()> {
    if ctx.config.synth.is_some() {
        cmd_synth(ctx)?;
    }
    cmd_features(ctx)?;
    cmd_dataset(ctx)?;
    cmd_train(ctx)?;
    cmd_eval(ctx)?;
    cmd_report(ctx, None).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_streams() {
        let s = Seeds::new(7);
        let all = [s.synth, s.undersample, s.fit, s.search];
        for (i, a) in all.iter().enumerate() {
            assert!(all[i + 1..].iter().all(|b| a != b));
        }
        assert_eq!(s, Seeds::new(7));
        assert_ne!(s.fit, Seeds::new(8).fit);
    }

    #[test]
    fn f64_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.scores");
        let v = [0.0, -1.5, f64::MIN_POSITIVE, 1.0 / 3.0];
        write_f64s(&p, v.iter().copied()).unwrap();
        assert_eq!(read_f64s(&p).unwrap(), v);
        fs::write(&p, [0u8; 9]).unwrap();
        assert!(matches!(read_f64s(&p), Err(CliError::Data(_))));
    }

    #[test]
    fn config_hash_ignores_jobs_and_out() {
        let base = RunConfig::parse("out = \"a\"\n[synth]\ngrid_size = 2").unwrap();
        let other = RunConfig { jobs: Some(3), out: Some("b".into()), ..base.clone() };
        assert_eq!(Context::new(base.clone()).unwrap().config_hash, Context::new(other).unwrap().config_hash);
        let seeded = RunConfig { seed: 1, ..base.clone() };
        assert_ne!(Context::new(base).unwrap().config_hash, Context::new(seeded).unwrap().config_hash);
    }
}
