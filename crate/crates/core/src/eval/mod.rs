//! Time-constrained cross-validation over the model matrix, metrics and
//! report rendering.

pub mod metrics;
pub mod report;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{assemble_matrix, undersample, DatasetError, FeatureMatrix, FoldSpec, Grid};
use crate::features::binning::SeasonMap;
use crate::features::{
    build_region_features, CityIndex, FeatureError, FeatureGroup, FeatureMask, MonthWindow, RegionTable, SchemaOptions,
};
use crate::ingest::CityData;
use crate::learn::mlp::InputGroup;
use crate::learn::{fit_forest, fit_gbm, fit_mlp, random_search, EpochMetrics, HyperParams, LearnError, Matrix};
use crate::seed;
use metrics::{auc, confusion, threshold, Confusion, MetricError, Metrics};

pub use report::{render_report, ReportFormat};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unknown classifier {0:?}")]
    UnknownClassifier(String),
    #[error("{0}")]
    Mismatch(String),
}

/// The twelve feature-group combinations, in report order.
pub const MODEL_MASKS: [(&str, &str); 12] = [
    ("MR", "R"),
    ("MD", "RD"),
    ("MS", "RS"),
    ("MF", "RF"),
    ("MP", "RP"),
    ("MDS", "RDS"),
    ("MDF", "RDF"),
    ("MDP", "RDP"),
    ("MSF", "RSF"),
    ("MSP", "RSP"),
    ("MFP", "RFP"),
    ("MA", "RDSFP"),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ModelSpec {
    pub name: String,
    pub mask: FeatureMask,
}

impl ModelSpec {
    pub fn all() -> Vec<ModelSpec> {
        MODEL_MASKS.iter().map(|(n, _)| n.parse().expect("table entries parse")).collect()
    }
}

impl FromStr for ModelSpec {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, mask) = MODEL_MASKS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::UnknownModel(s.to_string()))?;
        Ok(Self { name: name.to_string(), mask: mask.parse().expect("table masks parse") })
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.name
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = EvalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Forest,
    Gbm,
    Mlp,
}

impl Classifier {
    pub const ALL: [Classifier; 3] = [Classifier::Forest, Classifier::Gbm, Classifier::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Classifier::Forest => "forest",
            Classifier::Gbm => "gbm",
            Classifier::Mlp => "mlp",
        }
    }

    /// Short label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Classifier::Forest => "RF",
            Classifier::Gbm => "GB",
            Classifier::Mlp => "MLP",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Classifier {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Classifier::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s) || c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| EvalError::UnknownClassifier(s.to_string()))
    }
}

/// The 25 evaluated combinations: every model with forest and gbm, then
/// the MLP baseline on all features.
pub fn standard_matrix() -> Vec<(ModelSpec, Classifier)> {
    let mut out: Vec<(ModelSpec, Classifier)> =
        ModelSpec::all().into_iter().flat_map(|m| [(m.clone(), Classifier::Forest), (m, Classifier::Gbm)]).collect();
    out.push(("MA".parse().expect("known model"), Classifier::Mlp));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFlags {
    /// Compute features once over the whole study period and under-sample
    /// the whole grid before splitting into folds.
    pub paper_mode: bool,
    /// No-crime cells kept per crime cell in training data.
    pub undersample_ratio: f64,
    /// Probability at or above which a cell is predicted to have crime.
    pub threshold: f64,
}

impl Default for EvalFlags {
    fn default() -> Self {
        Self { paper_mode: false, undersample_ratio: 1.0, threshold: 0.5 }
    }
}

const UNDERSAMPLE_STREAM: u64 = 0x7573;
const FIT_STREAM: u64 = 0x6669_74;

/// One fold ready for training: the region features it uses and the grid
/// cells of its train and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedFold {
    pub fold: FoldSpec,
    pub table: RegionTable,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Region features for each fold: from the fold's train window, or from
/// `period` for every fold in paper mode.
pub fn fold_tables(
    city: &CityData,
    index: &CityIndex,
    folds: &[FoldSpec],
    period: MonthWindow,
    options: SchemaOptions,
    paper_mode: bool,
) -> Result<Vec<RegionTable>, EvalError> {
    if paper_mode {
        let t = build_region_features(city, index, period, options)?;
        return Ok(vec![t; folds.len()]);
    }
    folds.par_iter().map(|f| Ok(build_region_features(city, index, f.train, options)?)).collect()
}

/// Train and test cell indices for each fold.
pub fn fold_cells(
    grid: &Grid,
    folds: &[FoldSpec],
    flags: &EvalFlags,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, EvalError> {
    if flags.paper_mode {
        let all: Vec<usize> = (0..grid.cells.len()).collect();
        let kept = undersample(&grid.cells, &all, flags.undersample_ratio, seed::derive(seed, &[UNDERSAMPLE_STREAM]))?;
        return Ok(folds
            .iter()
            .map(|f| {
                (
                    grid.cells_in_subset(f.train, kept.iter().copied()),
                    grid.cells_in_subset(f.test, kept.iter().copied()),
                )
            })
            .collect());
    }
    folds
        .iter()
        .map(|f| {
            let train_all = grid.cells_in(f.train);
            let s = seed::derive(seed, &[UNDERSAMPLE_STREAM, f.index as u64]);
            let train = undersample(&grid.cells, &train_all, flags.undersample_ratio, s)?;
            Ok((train, grid.cells_in(f.test)))
        })
        .collect()
}

/// Combines per-fold feature tables and cell splits.
pub fn prepare_folds(
    city: &CityData,
    index: &CityIndex,
    grid: &Grid,
    folds: &[FoldSpec],
    options: SchemaOptions,
    flags: &EvalFlags,
    seed: u64,
) -> Result<Vec<PreparedFold>, EvalError> {
    let years = grid.years.first().zip(grid.years.last()).ok_or(DatasetError::NoYears)?;
    let period = MonthWindow::years(*years.0, years.1 - years.0 + 1);
    let tables = fold_tables(city, index, folds, period, options, flags.paper_mode)?;
    let cells = fold_cells(grid, folds, flags, seed)?;
    Ok(folds
        .iter()
        .zip(tables)
        .zip(cells)
        .map(|((f, table), (train, test))| PreparedFold { fold: *f, table, train, test })
        .collect())
}

/// Groups present in the matrix, as MLP input groups.
pub fn input_groups(m: &FeatureMatrix) -> Vec<InputGroup> {
    FeatureGroup::ALL
        .iter()
        .filter_map(|&g| {
            let columns: Vec<usize> =
                m.columns.iter().enumerate().filter(|(_, c)| c.group == g).map(|(i, _)| i).collect();
            (!columns.is_empty()).then(|| InputGroup { name: g.to_string(), columns })
        })
        .collect()
}

/// Test-split predictions of one classifier on one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub fold: usize,
    pub n_train: usize,
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
    /// MLP only: chosen epoch and the per-epoch test trace.
    pub best_epoch: Option<usize>,
    pub trace: Vec<EpochMetrics>,
}

/// Seed of the fit for one fold and classifier. Models share it, so their
/// comparison is not confounded by different random streams.
pub fn fit_seed(master: u64, fold: usize, classifier: Classifier) -> u64 {
    seed::derive(master, &[FIT_STREAM, fold as u64, classifier.tag()])
}

/// Trains `classifier` on the fold's train cells and scores its test cells.
pub fn train_fold(
    grid: &Grid,
    fold: &PreparedFold,
    spec: &ModelSpec,
    classifier: Classifier,
    params: &HyperParams,
    seasons: &SeasonMap,
    seed: u64,
) -> Result<FoldScores, EvalError> {
    let train = assemble_matrix(grid, &fold.train, &fold.table, spec.mask, seasons)?;
    let test = assemble_matrix(grid, &fold.test, &fold.table, spec.mask, seasons)?;
    let tx = Matrix::new(&test.data, test.n_cols())?;
    let x = Matrix::new(&train.data, train.n_cols())?;
    let s = fit_seed(seed, fold.fold.index, classifier);
    let (scores, best_epoch, trace) = match classifier {
        Classifier::Forest => (fit_forest(x, &train.labels, &params.forest, s)?.predict_proba(tx), None, Vec::new()),
        Classifier::Gbm => (fit_gbm(x, &train.labels, &params.gbm, s)?.predict_proba(tx), None, Vec::new()),
        Classifier::Mlp => {
            let groups = input_groups(&train);
            let fit = fit_mlp(x, &train.labels, &groups, &params.mlp, s, Some((tx, &test.labels)))?;
            (fit.model.predict_proba(tx), fit.best_epoch, fit.trace)
        }
    };
    Ok(FoldScores { fold: fold.fold.index, n_train: train.n_rows(), labels: test.labels, scores, best_epoch, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// In `[0, 1]`.
    pub auc: f64,
    pub best_epoch: Option<usize>,
}

pub fn evaluate_scores(s: &FoldScores, threshold_at: f64) -> Result<FoldResult, EvalError> {
    let c = confusion(&s.labels, &threshold(&s.scores, threshold_at))?;
    Ok(FoldResult {
        fold: s.fold,
        n_train: s.n_train,
        n_test: s.labels.len(),
        confusion: c,
        metrics: metrics::metrics(&c),
        auc: auc(&s.labels, &s.scores)?,
        best_epoch: s.best_epoch,
    })
}

/// Arithmetic means over folds. `auc` stays in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub macro_f: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelSpec,
    pub features: String,
    pub classifier: Classifier,
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

impl ReportRow {
    pub fn new(model: ModelSpec, classifier: Classifier, folds: Vec<FoldResult>) -> Self {
        let n = folds.len().max(1) as f64;
        let sum = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / n;
        let mean = MeanMetrics {
            accuracy: sum(&|r| r.metrics.accuracy),
            precision: sum(&|r| r.metrics.precision),
            recall: sum(&|r| r.metrics.recall),
            f_score: sum(&|r| r.metrics.f_score),
            macro_f: sum(&|r| r.metrics.macro_f),
            auc: sum(&|r| r.auc),
        };
        Self { features: model.mask.to_string(), model, classifier, folds, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub flags: EvalFlags,
    pub n_folds: usize,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

pub const BEST_EPOCH_NOTE: &str =
    "MLP rows report the epoch with the highest test accuracy, so they are optimistic relative to the tree ensembles.";

impl EvalReport {
    pub fn new(seed: u64, flags: EvalFlags, n_folds: usize, rows: Vec<ReportRow>) -> Self {
        let notes = if rows.iter().any(|r| r.classifier == Classifier::Mlp) {
            vec![BEST_EPOCH_NOTE.to_string()]
        } else {
            Vec::new()
        };
        Self { seed, flags, n_folds, rows, notes }
    }

    pub fn row(&self, model: &str, classifier: Classifier) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model.name == model && r.classifier == classifier)
    }
}

/// Cross-validates one model with one classifier.
pub fn run_cv(
    grid: &Grid,
    folds: &[PreparedFold],
    spec: &ModelSpec,
    classifier: Classifier,
    params: &HyperParams,
    flags: &EvalFlags,
    seasons: &SeasonMap,
    seed: u64,
) -> Result<ReportRow, EvalError> {
    let results = folds
        .par_iter()
        .map(|f| evaluate_scores(&train_fold(grid, f, spec, classifier, params, seasons, seed)?, flags.threshold))
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(ReportRow::new(spec.clone(), classifier, results))
}

/// Trains every (model, classifier) pair on every fold and returns the
/// scores in `(pair, fold)` order.
pub fn score_matrix(
    grid: &Grid,
    folds: &[PreparedFold],
    pairs: &[(ModelSpec, Classifier)],
    params: &HyperParams,
    seasons: &SeasonMap,
    seed: u64,
) -> Result<Vec<Vec<FoldScores>>, EvalError> {
    // MLP units are the slowest; schedule them first.
    let mut units: Vec<(usize, usize)> = (0..pairs.len()).flat_map(|p| (0..folds.len()).map(move |f| (p, f))).collect();
    units.sort_by_key(|&(p, f)| (pairs[p].1 != Classifier::Mlp, p, f));
    let scored = units
        .par_iter()
        .map(|&(p, f)| train_fold(grid, &folds[f], &pairs[p].0, pairs[p].1, params, seasons, seed).map(|s| ((p, f), s)))
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut out: Vec<Vec<Option<FoldScores>>> = vec![vec![None; folds.len()]; pairs.len()];
    for ((p, f), s) in scored {
        out[p][f] = Some(s);
    }
    Ok(out.into_iter().map(|v| v.into_iter().map(|s| s.expect("every unit scored")).collect()).collect())
}

/// Turns scored folds into a report, reducing in `(pair, fold)` order.
pub fn report_from_scores(
    pairs: &[(ModelSpec, Classifier)],
    scores: &[Vec<FoldScores>],
    flags: &EvalFlags,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if pairs.len() != scores.len() {
        return Err(EvalError::Mismatch(format!("{} pairs but {} score sets", pairs.len(), scores.len())));
    }
    let n_folds = scores.first().map_or(0, Vec::len);
    let rows = pairs
        .iter()
        .zip(scores)
        .map(|((m, c), folds)| {
            let results = folds.iter().map(|s| evaluate_scores(s, flags.threshold)).collect::<Result<Vec<_>, _>>()?;
            Ok(ReportRow::new(m.clone(), *c, results))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(EvalReport::new(seed, *flags, n_folds, rows))
}

/// The full 25-row evaluation.
pub fn run_matrix(
    grid: &Grid,
    folds: &[PreparedFold],
    params: &HyperParams,
    flags: &EvalFlags,
    seasons: &SeasonMap,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let pairs = standard_matrix();
    let scores = score_matrix(grid, folds, &pairs, params, seasons, seed)?;
    report_from_scores(&pairs, &scores, flags, seed)
}

/// Months at the end of a fold's train window held out for tuning.
pub const VALIDATION_MONTHS: i64 = 2;

/// Picks hyperparameters for `classifier` by randomized search: each
/// candidate is fitted on the fold's train window minus its last two
/// months and scored by F-score on those two months.
#[allow(clippy::too_many_arguments)]
pub fn tune(
    grid: &Grid,
    fold: &PreparedFold,
    spec: &ModelSpec,
    classifier: Classifier,
    candidates: &[HyperParams],
    n_samples: usize,
    flags: &EvalFlags,
    seasons: &SeasonMap,
    seed: u64,
) -> Result<crate::learn::search::SearchResult<HyperParams>, EvalError> {
    let w = fold.fold.train;
    let fit_window = MonthWindow::new(w.start, w.end.plus_months(-VALIDATION_MONTHS));
    let val_window = MonthWindow::new(fit_window.end, w.end);
    let fit_cells = grid.cells_in_subset(fit_window, fold.train.iter().copied());
    let val_cells = grid.cells_in(val_window);
    let inner = PreparedFold { fold: fold.fold, table: fold.table.clone(), train: fit_cells, test: val_cells };
    random_search(candidates, n_samples, seed, |p| -> Result<f64, EvalError> {
        let s = train_fold(grid, &inner, spec, classifier, p, seasons, seed)?;
        Ok(evaluate_scores(&s, flags.threshold)?.metrics.f_score)
    })
}
