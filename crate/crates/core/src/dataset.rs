//! Labelled region × (year, month, weekday, interval) grid, random
//! under-sampling, sliding fold windows and feature-matrix assembly.

use std::io::{self, Write};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::binning::{SeasonMap, TimeBin, YearMonth, INTERVALS};
use crate::features::{CellTime, FeatureColumn, FeatureGroup, FeatureMask, MonthWindow, RegionTable};
use crate::seed;

pub const MONTHS: usize = 12;
pub const WEEKDAYS: usize = 7;
/// Cells per region per year.
pub const CELLS_PER_REGION_YEAR: usize = MONTHS * WEEKDAYS * INTERVALS;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("no years given")]
    NoYears,
    #[error("no regions given")]
    NoRegions,
    #[error("region ids must be unique and sorted; offending id {0:?}")]
    UnsortedRegions(String),
    #[error("crime assigned to unknown region {0:?}")]
    UnknownRegion(String),
    #[error("the {0} class is absent")]
    MissingClass(&'static str),
    #[error("under-sampling ratio must be a finite value >= 1, got {0}")]
    BadRatio(f64),
    #[error("{available} months available, sliding folds need {needed}")]
    InsufficientMonths { available: usize, needed: usize },
    #[error("feature mask is empty")]
    EmptyMask,
    #[error("feature mask {0} lacks the raw group R")]
    MaskWithoutRaw(FeatureMask),
    #[error("no features for region {0:?}")]
    MissingRegionFeatures(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    /// Index into [`Grid::region_ids`].
    pub region: u32,
    pub year: i32,
    pub month: u8,
    pub weekday: u8,
    pub interval: u8,
}

impl CellKey {
    pub fn year_month(&self) -> YearMonth {
        YearMonth { year: self.year, month: self.month }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridCell {
    pub key: CellKey,
    /// 1 when at least one crime fell in the cell.
    pub label: u8,
    pub crime_count: u32,
}

/// Every cell of the study period, ordered by [`CellKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub region_ids: Vec<String>,
    pub years: Vec<i32>,
    pub cells: Vec<GridCell>,
}

impl Grid {
    pub fn positives(&self) -> usize {
        self.cells.iter().filter(|c| c.label == 1).count()
    }

    /// Indices of cells whose (year, month) lies in `window`.
    pub fn cells_in(&self, window: MonthWindow) -> Vec<usize> {
        self.cells_in_subset(window, 0..self.cells.len())
    }

    pub fn cells_in_subset(&self, window: MonthWindow, subset: impl IntoIterator<Item = usize>) -> Vec<usize> {
        subset.into_iter().filter(|&i| window.contains(self.cells[i].key.year_month())).collect()
    }

    pub fn region_id(&self, key: &CellKey) -> &str {
        &self.region_ids[key.region as usize]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["region_id", "year", "month", "weekday", "interval", "crime_count", "label"])
            .map_err(io::Error::other)?;
        for c in &self.cells {
            let k = c.key;
            w.write_record([
                self.region_id(&k).to_string(),
                k.year.to_string(),
                k.month.to_string(),
                k.weekday.to_string(),
                k.interval.to_string(),
                c.crime_count.to_string(),
                c.label.to_string(),
            ])
            .map_err(io::Error::other)?;
        }
        w.flush()
    }

    /// Reads back a grid written by [`Grid::write_csv`].
    pub fn read_csv<R: io::Read>(source: R) -> Result<Self, String> {
        let mut r = csv::Reader::from_reader(source);
        let mut region_ids: Vec<String> = Vec::new();
        let mut years: Vec<i32> = Vec::new();
        let mut cells = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let field = |i: usize| rec.get(i).ok_or_else(|| format!("short row {rec:?}"));
            let id = field(0)?;
            if region_ids.last().map(String::as_str) != Some(id) {
                region_ids.push(id.to_string());
            }
            let num = |i: usize| -> Result<i64, String> { field(i)?.parse().map_err(|_| format!("bad field {i}")) };
            let year = num(1)? as i32;
            if !years.contains(&year) {
                years.push(year);
            }
            let key = CellKey {
                region: (region_ids.len() - 1) as u32,
                year,
                month: num(2)? as u8,
                weekday: num(3)? as u8,
                interval: num(4)? as u8,
            };
            cells.push(GridCell { key, crime_count: num(5)? as u32, label: num(6)? as u8 });
        }
        years.sort_unstable();
        let grid = Grid { region_ids, years, cells };
        let expected = grid.region_ids.len() * grid.years.len() * CELLS_PER_REGION_YEAR;
        if grid.cells.len() != expected || grid.cells.windows(2).any(|w| w[0].key >= w[1].key) {
            return Err("grid file is not a complete, sorted grid".into());
        }
        Ok(grid)
    }
}

/// Builds the full grid: one cell per region, year, month, weekday and
/// interval. `crimes` pairs each assigned crime's region id with its bin;
/// crimes in years outside `years` are ignored.
pub fn build_grid(crimes: &[(&str, TimeBin)], region_ids: &[String], years: &[i32]) -> Result<Grid, DatasetError> {
    if years.is_empty() {
        return Err(DatasetError::NoYears);
    }
    if region_ids.is_empty() {
        return Err(DatasetError::NoRegions);
    }
    if let Some(w) = region_ids.windows(2).find(|w| w[0] >= w[1]) {
        return Err(DatasetError::UnsortedRegions(w[1].clone()));
    }
    let mut years = years.to_vec();
    years.sort_unstable();
    years.dedup();
    let ny = years.len();

    let mut cells = Vec::with_capacity(region_ids.len() * ny * CELLS_PER_REGION_YEAR);
    for r in 0..region_ids.len() {
        for &year in &years {
            for month in 1..=MONTHS as u8 {
                for weekday in 0..WEEKDAYS as u8 {
                    for interval in 0..INTERVALS as u8 {
                        let key = CellKey { region: r as u32, year, month, weekday, interval };
                        cells.push(GridCell { key, label: 0, crime_count: 0 });
                    }
                }
            }
        }
    }
    for (id, bin) in crimes {
        let r = region_ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| DatasetError::UnknownRegion((*id).to_string()))?;
        let Ok(y) = years.binary_search(&bin.year) else {
            continue;
        };
        let idx = (((r * ny + y) * MONTHS + usize::from(bin.month) - 1) * WEEKDAYS + usize::from(bin.weekday))
            * INTERVALS
            + usize::from(bin.interval);
        let cell = &mut cells[idx];
        cell.crime_count += 1;
        cell.label = 1;
    }
    Ok(Grid { region_ids: region_ids.to_vec(), years, cells })
}

/// Keeps every crime cell among `subset` and a random `floor(ratio * n_crime)`
/// of its no-crime cells (all of them if fewer exist). Returns ascending
/// cell indices.
pub fn undersample(cells: &[GridCell], subset: &[usize], ratio: f64, seed: u64) -> Result<Vec<usize>, DatasetError> {
    if !(ratio.is_finite() && ratio >= 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let (crime, quiet): (Vec<usize>, Vec<usize>) = subset.iter().partition(|&&i| cells[i].label == 1);
    if crime.is_empty() {
        return Err(DatasetError::MissingClass("crime"));
    }
    if quiet.is_empty() {
        return Err(DatasetError::MissingClass("no-crime"));
    }
    let keep = ((ratio * crime.len() as f64).floor() as usize).min(quiet.len());
    let mut rng = seed::rng(seed, &[0x756e_6465_72]);
    let mut retained = crime;
    retained.extend(sample(&mut rng, quiet.len(), keep).into_iter().map(|j| quiet[j]));
    retained.sort_unstable();
    Ok(retained)
}

/// Train and test month windows of one sliding fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub index: usize,
    pub train: MonthWindow,
    pub test: MonthWindow,
}

pub const TRAIN_MONTHS: usize = 12;
pub const TEST_MONTHS: usize = 12;

/// Fold `i` trains on months `[i, i + 12)` and tests on `[i + 12, i + 24)`,
/// counted from `start`.
pub fn make_folds(start: YearMonth, months_available: usize, n_folds: usize) -> Result<Vec<FoldSpec>, DatasetError> {
    let needed = n_folds + TRAIN_MONTHS + TEST_MONTHS - 1;
    if months_available < needed || n_folds == 0 {
        return Err(DatasetError::InsufficientMonths { available: months_available, needed });
    }
    Ok((0..n_folds)
        .map(|i| {
            let train_start = start.plus_months(i as i64);
            let test_start = train_start.plus_months(TRAIN_MONTHS as i64);
            FoldSpec {
                index: i,
                train: MonthWindow::months(train_start, TRAIN_MONTHS as i64),
                test: MonthWindow::months(test_start, TEST_MONTHS as i64),
            }
        })
        .collect())
}

/// Dense row-major feature matrix with labels and cell keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub columns: Vec<FeatureColumn>,
    pub data: Vec<f64>,
    pub labels: Vec<u8>,
    pub keys: Vec<CellKey>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn groups(&self) -> Vec<FeatureGroup> {
        self.columns.iter().map(|c| c.group).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W, region_ids: &[String]) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["region_id", "year", "month", "weekday", "interval", "label"].iter().map(|s| s.to_string()).collect();
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(io::Error::other)?;
        for i in 0..self.n_rows() {
            let k = self.keys[i];
            let mut rec = vec![
                region_ids[k.region as usize].clone(),
                k.year.to_string(),
                k.month.to_string(),
                k.weekday.to_string(),
                k.interval.to_string(),
                self.labels[i].to_string(),
            ];
            rec.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(io::Error::other)?;
        }
        w.flush()
    }
}

pub fn check_mask(mask: FeatureMask) -> Result<(), DatasetError> {
    if mask.is_empty() {
        return Err(DatasetError::EmptyMask);
    }
    if !mask.contains(FeatureGroup::R) {
        return Err(DatasetError::MaskWithoutRaw(mask));
    }
    Ok(())
}

/// Joins region features onto the selected cells, keeping only columns
/// whose group is in `mask`. Indexed columns resolve against the cell's
/// season and interval.
pub fn assemble_matrix(
    grid: &Grid,
    cells: &[usize],
    table: &RegionTable,
    mask: FeatureMask,
    seasons: &SeasonMap,
) -> Result<FeatureMatrix, DatasetError> {
    check_mask(mask)?;
    let schema = table.schema();
    let columns: Vec<FeatureColumn> = schema.columns.into_iter().filter(|c| mask.contains(c.group)).collect();
    let region_rows = grid
        .region_ids
        .iter()
        .map(|id| table.get(id).ok_or_else(|| DatasetError::MissingRegionFeatures(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut data = Vec::with_capacity(cells.len() * columns.len());
    let mut labels = Vec::with_capacity(cells.len());
    let mut keys = Vec::with_capacity(cells.len());
    for &i in cells {
        let cell = &grid.cells[i];
        let k = cell.key;
        let rf = region_rows[k.region as usize];
        let t = CellTime { month: k.month, weekday: k.weekday, interval: k.interval, season: seasons.season(k.month) };
        data.extend(columns.iter().map(|c| rf.value(c.source, t)));
        labels.push(cell.label);
        keys.push(k);
    }
    Ok(FeatureMatrix { columns, data, labels, keys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{RegionFeatures, SchemaOptions, Season};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i:03}")).collect()
    }

    fn bin(year: i32, month: u8, weekday: u8, interval: u8) -> TimeBin {
        TimeBin { year, month, weekday, interval, season: SeasonMap::default().season(month) }
    }

    #[test]
    fn grid_sizes() {
        let g = build_grid(&[], &ids(1), &[2012]).unwrap();
        assert_eq!(g.cells.len(), 672);
        assert!(g.cells.iter().all(|c| c.label == 0));
        assert!(g.cells.windows(2).all(|w| w[0].key < w[1].key));
        let g = build_grid(&[], &ids(3), &[2013, 2012]).unwrap();
        assert_eq!(g.cells.len(), 3 * 2 * 672);
        assert_eq!(g.years, vec![2012, 2013]);
    }

    #[test]
    fn grid_single_crime() {
        let region_ids = ids(2);
        let crimes = [("r001", bin(2013, 7, 2, 5)), ("r001", bin(2011, 7, 2, 5))];
        let g = build_grid(&crimes, &region_ids, &[2012, 2013]).unwrap();
        let hits: Vec<&GridCell> = g.cells.iter().filter(|c| c.label == 1).collect();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].crime_count, 1);
        assert_eq!(hits[0].key, CellKey { region: 1, year: 2013, month: 7, weekday: 2, interval: 5 });
        let err = build_grid(&[("zzz", bin(2013, 1, 0, 0))], &region_ids, &[2013]).unwrap_err();
        assert_eq!(err, DatasetError::UnknownRegion("zzz".into()));
        assert_eq!(build_grid(&[], &region_ids, &[]).unwrap_err(), DatasetError::NoYears);
    }

    #[test]
    fn grid_csv_round_trip() {
        let crimes = [("r000", bin(2012, 3, 1, 1)), ("r000", bin(2012, 3, 1, 1))];
        let g = build_grid(&crimes, &ids(2), &[2012]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(Grid::read_csv(buf.as_slice()).unwrap(), g);
    }

    fn labelled(n_crime: usize, n_quiet: usize) -> Vec<GridCell> {
        (0..n_crime + n_quiet)
            .map(|i| GridCell {
                key: CellKey { region: i as u32, year: 2012, month: 1, weekday: 0, interval: 0 },
                label: u8::from(i % 10 == 0 && i / 10 < n_crime),
                crime_count: 0,
            })
            .collect()
    }

    #[test]
    fn undersampling_counts() {
        let cells = labelled(100, 900);
        let all: Vec<usize> = (0..cells.len()).collect();
        let kept = undersample(&cells, &all, 1.0, 7).unwrap();
        let crime = kept.iter().filter(|&&i| cells[i].label == 1).count();
        assert_eq!((crime, kept.len() - crime), (100, 100));
        let kept2 = undersample(&cells, &all, 2.0, 7).unwrap();
        assert_eq!(kept2.len(), 300);
        assert_eq!(undersample(&cells, &all, 1.0, 7).unwrap(), kept);
        assert_ne!(undersample(&cells, &all, 1.0, 8).unwrap(), kept);
        assert_eq!(undersample(&cells, &all, 100.0, 7).unwrap().len(), 1000);
    }

    #[test]
    fn undersampling_errors() {
        let cells = labelled(0, 10);
        let all: Vec<usize> = (0..10).collect();
        assert_eq!(undersample(&cells, &all, 1.0, 0).unwrap_err(), DatasetError::MissingClass("crime"));
        assert_eq!(undersample(&cells, &all, 0.5, 0).unwrap_err(), DatasetError::BadRatio(0.5));
        let mut cells = labelled(10, 0);
        cells.iter_mut().for_each(|c| c.label = 1);
        assert_eq!(undersample(&cells, &all, 1.0, 0).unwrap_err(), DatasetError::MissingClass("no-crime"));
    }

    #[test]
    fn fold_windows() {
        let start = YearMonth::new(2012, 1).unwrap();
        let folds = make_folds(start, 36, 10).unwrap();
        assert_eq!(folds.len(), 10);
        let ym = |y, m| YearMonth::new(y, m).unwrap();
        assert_eq!(folds[0].train, MonthWindow::new(ym(2012, 1), ym(2013, 1)));
        assert_eq!(folds[0].test, MonthWindow::new(ym(2013, 1), ym(2014, 1)));
        assert_eq!(folds[1].train, MonthWindow::new(ym(2012, 2), ym(2013, 2)));
        assert_eq!(folds[1].test, MonthWindow::new(ym(2013, 2), ym(2014, 2)));
        assert_eq!(folds[9].train, MonthWindow::new(ym(2012, 10), ym(2013, 10)));
        assert_eq!(folds[9].test, MonthWindow::new(ym(2013, 10), ym(2014, 10)));
        assert_eq!(
            make_folds(start, 32, 10).unwrap_err(),
            DatasetError::InsufficientMonths { available: 32, needed: 33 }
        );
        assert!(make_folds(start, 33, 10).is_ok());
    }

    fn table(region_ids: &[String]) -> RegionTable {
        let rows = region_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let mut rf = RegionFeatures { region_id: id.clone(), ..Default::default() };
                rf.crime_frequency = i as f64;
                rf.season_share = [0.1, 0.2, 0.3, 0.4];
                rf.checkins = std::array::from_fn(|t| (10 * i + t) as f64);
                rf
            })
            .collect();
        RegionTable { options: SchemaOptions::default(), rows }
    }

    #[test]
    fn assemble_masks() {
        let region_ids = ids(2);
        let grid = build_grid(&[("r001", bin(2012, 7, 3, 6))], &region_ids, &[2012]).unwrap();
        let t = table(&region_ids);
        let all: Vec<usize> = (0..grid.cells.len()).collect();
        let seasons = SeasonMap::default();
        let mr = assemble_matrix(&grid, &all, &t, "R".parse().unwrap(), &seasons).unwrap();
        assert_eq!(mr.n_cols(), 8);
        assert_eq!(mr.n_rows(), grid.cells.len());
        let ma = assemble_matrix(&grid, &all, &t, FeatureMask::all(), &seasons).unwrap();
        assert_eq!(ma.n_cols(), 65);
        let mds = assemble_matrix(&grid, &all, &t, "RDS".parse().unwrap(), &seasons).unwrap();
        let md = assemble_matrix(&grid, &all, &t, "RD".parse().unwrap(), &seasons).unwrap();
        assert_eq!(mds.n_cols() - md.n_cols(), 2);

        // The crime cell: region 1, July (summer), interval 6.
        let i = grid.cells.iter().position(|c| c.label == 1).unwrap();
        let row = ma.row(i);
        let col = |name: &str| ma.columns.iter().position(|c| c.name == name).unwrap();
        assert_eq!(row[col("month")], 7.0);
        assert_eq!(row[col("season")], Season::Summer.index() as f64);
        assert_eq!(row[col("crime_season_share")], 0.3);
        assert_eq!(row[col("checkins")], 16.0);
        assert_eq!(ma.labels[i], 1);

        assert_eq!(
            assemble_matrix(&grid, &all, &t, FeatureMask::empty(), &seasons).unwrap_err(),
            DatasetError::EmptyMask
        );
        assert!(matches!(
            assemble_matrix(&grid, &all, &t, "DS".parse().unwrap(), &seasons).unwrap_err(),
            DatasetError::MaskWithoutRaw(_)
        ));
    }
}
