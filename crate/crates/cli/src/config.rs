//! Run configuration, read from one TOML file.
//!
//! ```toml
//! seed = 7
//! out = "run"
//!
//! [input]
//! dir = "data/halifax"
//!
//! [binning]
//! timezone = "America/Halifax"
//!
//! [flags]
//! paper_mode = false
//!
//! [params.gbm]
//! n_rounds = 200
//! ```
//!
//! Every section is optional. A `[synth]` section makes the pipeline
//! generate a synthetic city under `<out>/input` instead of reading
//! `[input]`; the city's seed is then derived from the master seed.
//! Relative paths in the file are resolved against the file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use crimelab::eval::{Classifier, EvalFlags, ModelSpec, ReportFormat, MODEL_MASKS};
use crimelab::features::binning::SeasonMap;
use crimelab::features::{SchemaOptions, Season, TimeBinning};
use crimelab::ingest::InputPaths;
use crimelab::learn::HyperParams;
use crimelab::synth::CityConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub input: InputConfig,
    pub synth: Option<CityConfig>,
    pub binning: BinningConfig,
    pub study: StudyConfig,
    pub features: SchemaOptions,
    pub flags: EvalFlags,
    pub params: HyperParams,
    pub matrix: MatrixConfig,
    pub search: Option<SearchConfig>,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            out: None,
            input: InputConfig::default(),
            synth: None,
            binning: BinningConfig::default(),
            study: StudyConfig::default(),
            features: SchemaOptions::default(),
            flags: EvalFlags::default(),
            params: HyperParams::default(),
            matrix: MatrixConfig::default(),
            search: None,
            report: ReportConfig::default(),
        }
    }
}

/// Dataset file locations. `dir` supplies the standard file names; any
/// file given explicitly overrides it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub dir: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub crimes: Option<PathBuf>,
    pub streetlights: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub checkins: Option<PathBuf>,
    pub demographics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinningConfig {
    /// IANA name of the city's local timezone.
    pub timezone: String,
    /// Season of each month, January first. Meteorological by default.
    pub seasons: Option<[Season; 12]>,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self { timezone: "UTC".into(), seasons: None }
    }
}

/// Study period. Without `start_year`, the period is the synthetic city's
/// years or else the span of years with crime records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub start_year: Option<i32>,
    pub n_years: Option<u32>,
    pub n_folds: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { start_year: None, n_years: None, n_folds: 10 }
    }
}

/// Which (model, classifier) pairs to evaluate. The default is every model
/// with the two tree ensembles plus the MLP on all features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixConfig {
    pub models: Vec<String>,
    pub classifiers: Vec<String>,
    pub mlp_baseline: bool,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            models: MODEL_MASKS.iter().map(|(m, _)| m.to_string()).collect(),
            classifiers: vec!["forest".into(), "gbm".into()],
            mlp_baseline: true,
        }
    }
}

impl MatrixConfig {
    pub fn pairs(&self) -> Result<Vec<(ModelSpec, Classifier)>, CliError> {
        let models = self
            .models
            .iter()
            .map(|m| m.parse::<ModelSpec>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let classifiers = self
            .classifiers
            .iter()
            .map(|c| c.parse::<Classifier>().map_err(|e| CliError::Config(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out: Vec<(ModelSpec, Classifier)> =
            models.iter().flat_map(|m| classifiers.iter().map(move |&c| (m.clone(), c))).collect();
        if self.mlp_baseline {
            let ma: ModelSpec = "MA".parse().expect("known model");
            if !out.iter().any(|(m, c)| *m == ma && *c == Classifier::Mlp) {
                out.push((ma, Classifier::Mlp));
            }
        }
        let distinct: BTreeSet<(String, &str)> = out.iter().map(|(m, c)| (m.name.clone(), c.name())).collect();
        if distinct.len() != out.len() {
            return Err(CliError::Config("model matrix lists a pair twice".into()));
        }
        if out.is_empty() {
            return Err(CliError::Config("model matrix is empty".into()));
        }
        Ok(out)
    }
}

/// Randomized hyperparameter search, run once per classifier on one model
/// and fold; the winner is used for every model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub n_samples: usize,
    pub model: String,
    pub fold: usize,
    pub grid: SearchGrid,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { n_samples: 8, model: "MA".into(), fold: 0, grid: SearchGrid::default() }
    }
}

/// Candidate values per hyperparameter. Empty lists keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchGrid {
    pub forest_n_trees: Vec<usize>,
    pub forest_max_depth: Vec<usize>,
    pub forest_max_features: Vec<usize>,
    pub gbm_n_rounds: Vec<usize>,
    pub gbm_learning_rate: Vec<f64>,
    pub gbm_max_depth: Vec<usize>,
    pub mlp_learning_rate: Vec<f64>,
    pub mlp_momentum: Vec<f64>,
    pub mlp_batch_size: Vec<usize>,
    pub mlp_epochs: Vec<usize>,
}

fn expand<T: Clone>(base: Vec<HyperParams>, values: &[T], set: impl Fn(&mut HyperParams, T)) -> Vec<HyperParams> {
    if values.is_empty() {
        return base;
    }
    base.iter()
        .flat_map(|p| {
            values.iter().map(|v| {
                let mut q = p.clone();
                set(&mut q, v.clone());
                q
            })
        })
        .collect()
}

impl SearchGrid {
    /// Cartesian product of the classifier's lists over `base`.
    pub fn candidates(&self, base: &HyperParams, classifier: Classifier) -> Vec<HyperParams> {
        let mut c = vec![base.clone()];
        match classifier {
            Classifier::Forest => {
                c = expand(c, &self.forest_n_trees, |p, v| p.forest.n_trees = v);
                c = expand(c, &self.forest_max_depth, |p, v| p.forest.max_depth = v);
                c = expand(c, &self.forest_max_features, |p, v| p.forest.max_features = Some(v));
            }
            Classifier::Gbm => {
                c = expand(c, &self.gbm_n_rounds, |p, v| p.gbm.n_rounds = v);
                c = expand(c, &self.gbm_learning_rate, |p, v| p.gbm.learning_rate = v);
                c = expand(c, &self.gbm_max_depth, |p, v| p.gbm.max_depth = v);
            }
            Classifier::Mlp => {
                c = expand(c, &self.mlp_learning_rate, |p, v| p.mlp.learning_rate = v);
                c = expand(c, &self.mlp_momentum, |p, v| p.mlp.momentum = v);
                c = expand(c, &self.mlp_batch_size, |p, v| p.mlp.batch_size = v);
                c = expand(c, &self.mlp_epochs, |p, v| p.mlp.epochs = v);
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { formats: vec![ReportFormat::Csv, ReportFormat::Markdown] }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub paper_mode: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let i = &mut self.input;
        for p in [
            &mut i.dir,
            &mut i.regions,
            &mut i.crimes,
            &mut i.streetlights,
            &mut i.pois,
            &mut i.checkins,
            &mut i.demographics,
        ] {
            fix(p);
        }
        fix(&mut self.out);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.jobs.is_some() {
            self.jobs = o.jobs;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.paper_mode {
            self.flags.paper_mode = true;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        if self.out.is_none() {
            return bad("no output directory: set `out` or pass --out".into());
        }
        self.timezone()?;
        if let Some(s) = &self.synth {
            s.validate().map_err(|e| CliError::Config(e.to_string()))?;
        } else if self.input_paths(Path::new("")).is_none() {
            return bad("no input: set [input] dir or files, or add a [synth] section".into());
        }
        if self.study.n_folds == 0 {
            return bad("study.n_folds must be positive".into());
        }
        if self.study.n_years == Some(0) {
            return bad("study.n_years must be positive".into());
        }
        if self.study.n_years.is_some() && self.study.start_year.is_none() {
            return bad("study.n_years needs study.start_year".into());
        }
        let f = &self.flags;
        if !(f.undersample_ratio.is_finite() && f.undersample_ratio >= 1.0) {
            return bad(format!("flags.undersample_ratio must be at least 1, got {}", f.undersample_ratio));
        }
        if !(0.0..=1.0).contains(&f.threshold) {
            return bad(format!("flags.threshold must lie in [0, 1], got {}", f.threshold));
        }
        self.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.matrix.pairs()?;
        if let Some(s) = &self.search {
            if s.n_samples == 0 {
                return bad("search.n_samples must be positive".into());
            }
            s.model.parse::<ModelSpec>().map_err(|e| CliError::Config(e.to_string()))?;
            if s.fold >= self.study.n_folds {
                return bad(format!("search.fold {} is outside {} folds", s.fold, self.study.n_folds));
            }
            for c in Classifier::ALL {
                for p in s.grid.candidates(&self.params, c) {
                    p.validate().map_err(|e| CliError::Config(format!("search grid: {e}")))?;
                }
            }
        }
        if self.report.formats.is_empty() {
            return bad("report.formats is empty".into());
        }
        Ok(())
    }

    pub fn timezone(&self) -> Result<Tz, CliError> {
        Tz::from_str(&self.binning.timezone)
            .map_err(|_| CliError::Config(format!("unknown timezone {:?}", self.binning.timezone)))
    }

    pub fn binning(&self) -> Result<TimeBinning, CliError> {
        let seasons = self.binning.seasons.map(SeasonMap::from_months).unwrap_or_default();
        Ok(TimeBinning::new(self.timezone()?, seasons))
    }

    pub fn out_dir(&self) -> &Path {
        self.out.as_deref().expect("validated config has an output directory")
    }

    /// Input files. A synthetic city is read from `synth_dir`.
    pub fn input_paths(&self, synth_dir: &Path) -> Option<InputPaths> {
        if self.synth.is_some() {
            return Some(InputPaths::in_dir(synth_dir));
        }
        let i = &self.input;
        let base = i.dir.as_deref().map(InputPaths::in_dir);
        let pick = |own: &Option<PathBuf>, from: fn(&InputPaths) -> &PathBuf| {
            own.clone().or_else(|| base.as_ref().map(|b| from(b).clone()))
        };
        Some(InputPaths {
            regions: pick(&i.regions, |b| &b.regions)?,
            crimes: pick(&i.crimes, |b| &b.crimes)?,
            streetlights: pick(&i.streetlights, |b| &b.streetlights)?,
            pois: pick(&i.pois, |b| &b.pois)?,
            checkins: pick(&i.checkins, |b| &b.checkins)?,
            demographics: pick(&i.demographics, |b| &b.demographics)?,
        })
    }
}
