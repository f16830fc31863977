//! Flat-file parsers for the six input datasets.
//!
//! Tabular inputs are UTF-8 CSV with a mandatory header; regions are a GeoJSON
//! `FeatureCollection`. Bad rows are skipped and counted rather than aborting
//! the parse. Each parser has a matching canonical writer so that parsed data
//! can be written back out and re-read unchanged.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::features::binning::{format_timestamp, parse_timestamp, TimeBin, TimeBinning};
use crate::geodata::{GeoError, GeoPoint, Region};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: missing required column {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: invalid GeoJSON: {reason}")]
    GeoJson { path: PathBuf, reason: String },
    #[error("{path}: feature {feature}: {reason}")]
    Feature { path: PathBuf, feature: String, reason: String },
    #[error("{path}: duplicate region id {id:?}")]
    DuplicateRegion { path: PathBuf, id: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IngestError + '_ {
    move |source| IngestError::Csv { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrimeRecord {
    pub location: GeoPoint,
    pub timestamp: DateTime<Utc>,
    /// Calendar decomposition in local time.
    pub bin: TimeBin,
    pub ucr_code: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreetlightPole {
    pub location: GeoPoint,
}

/// The ten top-level venue categories of the check-in network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoiCategory {
    Food,
    ArtsEntertainment,
    CollegeUniversity,
    Nightlife,
    OutdoorsRecreation,
    ProfessionalOther,
    Residence,
    ShopService,
    TravelTransport,
    Event,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 10] = [
        PoiCategory::Food,
        PoiCategory::ArtsEntertainment,
        PoiCategory::CollegeUniversity,
        PoiCategory::Nightlife,
        PoiCategory::OutdoorsRecreation,
        PoiCategory::ProfessionalOther,
        PoiCategory::Residence,
        PoiCategory::ShopService,
        PoiCategory::TravelTransport,
        PoiCategory::Event,
    ];

    /// The nine categories that get their own feature columns.
    pub const REPORTED: [PoiCategory; 9] = [
        PoiCategory::Food,
        PoiCategory::ArtsEntertainment,
        PoiCategory::CollegeUniversity,
        PoiCategory::Nightlife,
        PoiCategory::OutdoorsRecreation,
        PoiCategory::ProfessionalOther,
        PoiCategory::Residence,
        PoiCategory::ShopService,
        PoiCategory::TravelTransport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PoiCategory::Food => "food",
            PoiCategory::ArtsEntertainment => "arts_entertainment",
            PoiCategory::CollegeUniversity => "college_university",
            PoiCategory::Nightlife => "nightlife",
            PoiCategory::OutdoorsRecreation => "outdoors_recreation",
            PoiCategory::ProfessionalOther => "professional_other",
            PoiCategory::Residence => "residence",
            PoiCategory::ShopService => "shop_service",
            PoiCategory::TravelTransport => "travel_transport",
            PoiCategory::Event => "event",
        }
    }

    /// Index into [`Self::REPORTED`]; events fold into professional/other.
    pub fn reported_index(self) -> usize {
        match self {
            PoiCategory::Event => PoiCategory::ProfessionalOther as usize,
            c => c as usize,
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoiCategory {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoiCategory::ALL.into_iter().find(|c| c.name() == s.trim()).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiVenue {
    pub id: String,
    pub location: GeoPoint,
    pub category: PoiCategory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckinRecord {
    pub user_id: String,
    pub venue_id: String,
    pub timestamp: DateTime<Utc>,
}

/// Canonical demographic columns, in file order.
pub const DEMOGRAPHIC_COLUMNS: [&str; 32] = [
    "population",
    "population_density",
    "dwell_single_detached",
    "dwell_semi_detached",
    "dwell_row_house",
    "dwell_apartment_duplex",
    "dwell_apartment_low_rise",
    "dwell_apartment_high_rise",
    "dwell_movable",
    "dwell_owned",
    "dwell_rented",
    "dwell_major_repairs",
    "dwell_avg_household_size",
    "mobility_movers",
    "mobility_non_movers",
    "mobility_migrants",
    "mobility_non_migrants",
    "aboriginal_visible_minority",
    "commute_car",
    "commute_public_transit",
    "commute_walk",
    "commute_bicycle",
    "commute_other",
    "leave_05_06",
    "leave_06_07",
    "leave_07_08",
    "leave_08_09",
    "leave_09_12",
    "low_income_lim_at",
    "low_income_age_0_17",
    "low_income_age_18_64",
    "age_sex_median_age",
];

pub const DEMOGRAPHIC_COUNT: usize = DEMOGRAPHIC_COLUMNS.len();

pub fn demographic_index(name: &str) -> Option<usize> {
    DEMOGRAPHIC_COLUMNS.iter().position(|c| *c == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemographicProfile {
    pub region_id: String,
    pub values: [f64; DEMOGRAPHIC_COUNT],
    /// Bit `i` set when column `i` was imputed.
    pub imputed_mask: u32,
}

/// Records accepted by a parser plus the number of skipped data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub rejected: usize,
}

impl<T> Parsed<T> {
    pub fn total_rows(&self) -> usize {
        self.records.len() + self.rejected
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCheckins {
    pub records: Vec<CheckinRecord>,
    pub rejected_invalid: usize,
    /// Rows referencing a venue absent from the POI table.
    pub rejected_orphan: usize,
}

impl ParsedCheckins {
    pub fn rejected(&self) -> usize {
        self.rejected_invalid + self.rejected_orphan
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDemographics {
    pub records: Vec<DemographicProfile>,
    pub rejected: usize,
    pub imputed_cells: usize,
}

fn open(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path).map(BufReader::new).map_err(io_err(path))
}

/// CSV reader with header lookup by column name.
struct Table<R: Read> {
    path: PathBuf,
    reader: csv::Reader<R>,
    columns: Vec<usize>,
}

impl<R: Read> Table<R> {
    fn new(path: &Path, source: R, required: &[&str]) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(source);
        let headers = reader.headers().map_err(csv_err(path))?.clone();
        let columns = required
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == *name)
                    .ok_or_else(|| IngestError::MissingColumn { path: path.to_path_buf(), column: (*name).to_string() })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { path: path.to_path_buf(), reader, columns })
    }

    /// Calls `row` with the required fields of each data row; `None` from a
    /// malformed row or from `row` counts as a rejection.
    fn for_each<F>(&mut self, mut row: F) -> Result<usize, IngestError>
    where
        F: FnMut(&[&str]) -> bool,
    {
        let mut rejected = 0;
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) if e.is_io_error() => return Err(csv_err(&self.path)(e)),
                Err(_) => {
                    rejected += 1;
                    continue;
                }
            }
            let mut fields: Vec<&str> = Vec::with_capacity(self.columns.len());
            let mut complete = true;
            for &c in &self.columns {
                match record.get(c) {
                    Some(v) => fields.push(v),
                    None => complete = false,
                }
            }
            if !complete || !row(&fields) {
                rejected += 1;
            }
        }
        Ok(rejected)
    }
}

fn parse_point(lat: &str, lon: &str) -> Option<GeoPoint> {
    let lat: f64 = lat.parse().ok()?;
    let lon: f64 = lon.parse().ok()?;
    GeoPoint::new(lat, lon).ok()
}

pub fn parse_crimes(path: &Path, binning: &TimeBinning) -> Result<Parsed<CrimeRecord>, IngestError> {
    read_crimes(path, open(path)?, binning)
}

pub fn read_crimes<R: Read>(path: &Path, source: R, binning: &TimeBinning) -> Result<Parsed<CrimeRecord>, IngestError> {
    let mut table = Table::new(path, source, &["lat", "lon", "timestamp", "ucr_code"])?;
    let mut records = Vec::new();
    let rejected = table.for_each(|f| {
        let (Some(location), Some(timestamp)) = (parse_point(f[0], f[1]), parse_timestamp(f[2])) else {
            return false;
        };
        records.push(CrimeRecord { location, timestamp, bin: binning.bin_utc(timestamp), ucr_code: f[3].to_string() });
        true
    })?;
    Ok(Parsed { records, rejected })
}

pub fn parse_streetlights(path: &Path) -> Result<Parsed<StreetlightPole>, IngestError> {
    read_streetlights(path, open(path)?)
}

pub fn read_streetlights<R: Read>(path: &Path, source: R) -> Result<Parsed<StreetlightPole>, IngestError> {
    let mut table = Table::new(path, source, &["lat", "lon"])?;
    let mut records = Vec::new();
    let rejected = table.for_each(|f| match parse_point(f[0], f[1]) {
        Some(location) => {
            records.push(StreetlightPole { location });
            true
        }
        None => false,
    })?;
    Ok(Parsed { records, rejected })
}

/// Duplicate venue ids are rejected after the first occurrence.
pub fn parse_pois(path: &Path) -> Result<Parsed<PoiVenue>, IngestError> {
    read_pois(path, open(path)?)
}

pub fn read_pois<R: Read>(path: &Path, source: R) -> Result<Parsed<PoiVenue>, IngestError> {
    let mut table = Table::new(path, source, &["id", "lat", "lon", "category"])?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let rejected = table.for_each(|f| {
        let (Some(location), Ok(category)) = (parse_point(f[1], f[2]), f[3].parse::<PoiCategory>()) else {
            return false;
        };
        if f[0].is_empty() || !seen.insert(f[0].to_string()) {
            return false;
        }
        records.push(PoiVenue { id: f[0].to_string(), location, category });
        true
    })?;
    Ok(Parsed { records, rejected })
}

pub fn parse_checkins(path: &Path, venues: &[PoiVenue]) -> Result<ParsedCheckins, IngestError> {
    read_checkins(path, open(path)?, venues)
}

pub fn read_checkins<R: Read>(path: &Path, source: R, venues: &[PoiVenue]) -> Result<ParsedCheckins, IngestError> {
    let known: HashSet<&str> = venues.iter().map(|v| v.id.as_str()).collect();
    let mut table = Table::new(path, source, &["user_id", "venue_id", "timestamp"])?;
    let mut records = Vec::new();
    let mut rejected_orphan = 0;
    let rejected_invalid = table.for_each(|f| {
        let Some(timestamp) = parse_timestamp(f[2]) else {
            return false;
        };
        if f[0].is_empty() || f[1].is_empty() {
            return false;
        }
        if !known.contains(f[1]) {
            rejected_orphan += 1;
            return true;
        }
        records.push(CheckinRecord { user_id: f[0].to_string(), venue_id: f[1].to_string(), timestamp });
        true
    })?;
    Ok(ParsedCheckins { records, rejected_invalid, rejected_orphan })
}

/// Empty cells are imputed with the column median over accepted rows and
/// flagged; unparseable or negative cells and duplicate ids reject the row.
pub fn parse_demographics(path: &Path) -> Result<ParsedDemographics, IngestError> {
    read_demographics(path, open(path)?)
}

pub fn read_demographics<R: Read>(path: &Path, source: R) -> Result<ParsedDemographics, IngestError> {
    let mut required = vec!["region_id"];
    required.extend(DEMOGRAPHIC_COLUMNS);
    let mut table = Table::new(path, source, &required)?;
    let mut rows: Vec<(String, [Option<f64>; DEMOGRAPHIC_COUNT])> = Vec::new();
    let mut seen = HashSet::new();
    let rejected = table.for_each(|f| {
        let id = f[0];
        if id.is_empty() || seen.contains(id) {
            return false;
        }
        let mut values = [None; DEMOGRAPHIC_COUNT];
        for (slot, cell) in values.iter_mut().zip(&f[1..]) {
            if cell.is_empty() {
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => *slot = Some(v),
                _ => return false,
            }
        }
        seen.insert(id.to_string());
        rows.push((id.to_string(), values));
        true
    })?;

    let medians: Vec<f64> =
        (0..DEMOGRAPHIC_COUNT).map(|c| median(rows.iter().filter_map(|(_, v)| v[c]).collect())).collect();
    let mut imputed_cells = 0;
    let records = rows
        .into_iter()
        .map(|(region_id, cells)| {
            let mut imputed_mask = 0u32;
            let values = std::array::from_fn(|c| {
                cells[c].unwrap_or_else(|| {
                    imputed_mask |= 1 << c;
                    imputed_cells += 1;
                    medians[c]
                })
            });
            DemographicProfile { region_id, values, imputed_mask }
        })
        .collect();
    Ok(ParsedDemographics { records, rejected, imputed_cells })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Reads a GeoJSON `FeatureCollection` of `Polygon` (or single-part
/// `MultiPolygon`) features with `id`, `population` and optional `area_km2`
/// properties. Holes are ignored.
pub fn parse_regions(path: &Path) -> Result<Vec<Region>, IngestError> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(io_err(path))?;
    read_regions(path, &text)
}

pub fn read_regions(path: &Path, text: &str) -> Result<Vec<Region>, IngestError> {
    let gj_err = |reason: String| IngestError::GeoJson { path: path.to_path_buf(), reason };
    let doc: Value = serde_json::from_str(text).map_err(|e| gj_err(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(gj_err("top-level object is not a FeatureCollection".into()));
    }
    let features =
        doc.get("features").and_then(Value::as_array).ok_or_else(|| gj_err("missing features array".into()))?;

    let mut regions = Vec::with_capacity(features.len());
    let mut ids = HashSet::new();
    for (i, feature) in features.iter().enumerate() {
        let props = feature.get("properties").unwrap_or(&Value::Null);
        let id = match props.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => format!("#{i}"),
        };
        let bad = |reason: String| IngestError::Feature { path: path.to_path_buf(), feature: id.clone(), reason };
        if props.get("id").is_none() {
            return Err(bad("missing id property".into()));
        }
        let population = props
            .get("population")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("population must be a non-negative integer".into()))?;
        let area = match props.get("area_km2") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| bad("area_km2 must be a number".into()))?),
        };
        let ring = exterior_ring(feature.get("geometry")).map_err(bad)?;
        let region = Region::new(id.clone(), ring, area, population).map_err(|e: GeoError| bad(e.to_string()))?;
        if !ids.insert(id.clone()) {
            return Err(IngestError::DuplicateRegion { path: path.to_path_buf(), id });
        }
        regions.push(region);
    }
    Ok(regions)
}

fn exterior_ring(geometry: Option<&Value>) -> Result<Vec<GeoPoint>, String> {
    let geometry = geometry.ok_or("missing geometry")?;
    let coords = geometry.get("coordinates").ok_or("geometry has no coordinates")?;
    let rings = match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => coords,
        Some("MultiPolygon") => match coords.as_array().map(Vec::as_slice) {
            Some([single]) => single,
            _ => return Err("only single-part MultiPolygons are supported".into()),
        },
        other => return Err(format!("unsupported geometry type {other:?}")),
    };
    let exterior = rings.as_array().and_then(|r| r.first()).and_then(Value::as_array).ok_or("polygon has no rings")?;
    exterior
        .iter()
        .map(|pos| {
            let pair = pos.as_array().filter(|p| p.len() >= 2).ok_or("position is not [lon, lat]")?;
            let (lon, lat) = (pair[0].as_f64(), pair[1].as_f64());
            match (lat, lon) {
                (Some(lat), Some(lon)) => GeoPoint::new(lat, lon).map_err(|e| e.to_string()),
                _ => Err("non-numeric coordinate".into()),
            }
        })
        .collect()
}

/// Tallies of venues per category, in [`PoiCategory::ALL`] order.
pub fn category_histogram(venues: &[PoiVenue]) -> [usize; 10] {
    let mut h = [0; 10];
    for v in venues {
        h[v.category as usize] += 1;
    }
    h
}

pub fn write_regions<W: Write>(mut out: W, regions: &[Region]) -> io::Result<()> {
    let features: Vec<Value> = regions
        .iter()
        .map(|r| {
            let mut ring: Vec<Value> = r.ring().iter().map(|p| serde_json::json!([p.lon(), p.lat()])).collect();
            ring.push(ring[0].clone());
            serde_json::json!({
                "type": "Feature",
                "properties": { "id": r.id(), "population": r.population(), "area_km2": r.area_km2() },
                "geometry": { "type": "Polygon", "coordinates": [ring] },
            })
        })
        .collect();
    let doc = serde_json::json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out)
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> io::Result<()> {
    w.flush()
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_crimes<W: Write>(out: W, crimes: &[CrimeRecord]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["lat", "lon", "timestamp", "ucr_code"]).map_err(to_io)?;
    for c in crimes {
        w.write_record([
            c.location.lat().to_string(),
            c.location.lon().to_string(),
            format_timestamp(c.timestamp),
            c.ucr_code.clone(),
        ])
        .map_err(to_io)?;
    }
    finish(w)
}

pub fn write_streetlights<W: Write>(out: W, poles: &[StreetlightPole]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["lat", "lon"]).map_err(to_io)?;
    for p in poles {
        w.write_record([p.location.lat().to_string(), p.location.lon().to_string()]).map_err(to_io)?;
    }
    finish(w)
}

pub fn write_pois<W: Write>(out: W, venues: &[PoiVenue]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["id", "lat", "lon", "category"]).map_err(to_io)?;
    for v in venues {
        w.write_record([
            v.id.clone(),
            v.location.lat().to_string(),
            v.location.lon().to_string(),
            v.category.name().to_string(),
        ])
        .map_err(to_io)?;
    }
    finish(w)
}

pub fn write_checkins<W: Write>(out: W, checkins: &[CheckinRecord]) -> io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["user_id", "venue_id", "timestamp"]).map_err(to_io)?;
    for c in checkins {
        w.write_record([c.user_id.as_str(), c.venue_id.as_str(), &format_timestamp(c.timestamp)]).map_err(to_io)?;
    }
    finish(w)
}

pub fn write_demographics<W: Write>(out: W, profiles: &[DemographicProfile]) -> io::Result<()> {
    let mut w = csv_writer(out);
    let mut header = vec!["region_id"];
    header.extend(DEMOGRAPHIC_COLUMNS);
    w.write_record(&header).map_err(to_io)?;
    for p in profiles {
        let mut row = vec![p.region_id.clone()];
        row.extend(p.values.iter().map(f64::to_string));
        w.write_record(&row).map_err(to_io)?;
    }
    finish(w)
}

/// Every parsed input of one city.
#[derive(Debug, Clone)]
pub struct CityData {
    pub regions: Vec<Region>,
    pub crimes: Vec<CrimeRecord>,
    pub streetlights: Vec<StreetlightPole>,
    pub pois: Vec<PoiVenue>,
    pub checkins: Vec<CheckinRecord>,
    pub demographics: Vec<DemographicProfile>,
}

/// Rejection tallies from [`load_city`], keyed by dataset name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub accepted: std::collections::BTreeMap<String, usize>,
    pub rejected: std::collections::BTreeMap<String, usize>,
    pub orphan_checkins: usize,
    pub imputed_demographic_cells: usize,
}

/// Locations of the six dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub regions: PathBuf,
    pub crimes: PathBuf,
    pub streetlights: PathBuf,
    pub pois: PathBuf,
    pub checkins: PathBuf,
    pub demographics: PathBuf,
}

impl InputPaths {
    /// Standard file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            regions: dir.join("regions.geojson"),
            crimes: dir.join("crimes.csv"),
            streetlights: dir.join("streetlights.csv"),
            pois: dir.join("pois.csv"),
            checkins: dir.join("checkins.csv"),
            demographics: dir.join("demographics.csv"),
        }
    }

    pub fn all(&self) -> [&Path; 6] {
        [&self.regions, &self.crimes, &self.streetlights, &self.pois, &self.checkins, &self.demographics]
    }
}

/// Parses all six files. Regions come back sorted by id.
pub fn load_city(paths: &InputPaths, binning: &TimeBinning) -> Result<(CityData, IngestSummary), IngestError> {
    let mut regions = parse_regions(&paths.regions)?;
    regions.sort_by(|a, b| a.id().cmp(b.id()));
    let crimes = parse_crimes(&paths.crimes, binning)?;
    let lights = parse_streetlights(&paths.streetlights)?;
    let pois = parse_pois(&paths.pois)?;
    let checkins = parse_checkins(&paths.checkins, &pois.records)?;
    let demo = parse_demographics(&paths.demographics)?;

    let mut summary = IngestSummary::default();
    let mut note = |name: &str, ok: usize, bad: usize| {
        summary.accepted.insert(name.to_string(), ok);
        summary.rejected.insert(name.to_string(), bad);
    };
    note("regions", regions.len(), 0);
    note("crimes", crimes.records.len(), crimes.rejected);
    note("streetlights", lights.records.len(), lights.rejected);
    note("pois", pois.records.len(), pois.rejected);
    note("checkins", checkins.records.len(), checkins.rejected());
    note("demographics", demo.records.len(), demo.rejected);
    summary.orphan_checkins = checkins.rejected_orphan;
    summary.imputed_demographic_cells = demo.imputed_cells;

    let city = CityData {
        regions,
        crimes: crimes.records,
        streetlights: lights.records,
        pois: pois.records,
        checkins: checkins.records,
        demographics: demo.records,
    };
    Ok((city, summary))
}

/// Demographic profiles keyed by region id.
pub fn demographics_by_region(profiles: &[DemographicProfile]) -> HashMap<&str, &DemographicProfile> {
    profiles.iter().map(|p| (p.region_id.as_str(), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    #[test]
    fn crimes_valid_and_rejected_rows() {
        let text = "lat,lon,timestamp,ucr_code\n\
                    44.65,-63.57,2013-01-07T02:59:00Z,1430\n\
                    ,-63.57,2013-01-07T03:00:00Z,1430\n\
                    44.66,-63.58,2013-07-15T21:00:00Z,2120\n\
                    44.66,-63.58,not-a-time,2120\n\
                    95.0,-63.58,2013-07-15T21:00:00Z,2120\n\
                    44.66,-63.58\n";
        let parsed = read_crimes(p(), text.as_bytes(), &TimeBinning::default()).unwrap();
        assert_eq!(parsed.records.len(), 2);
        assert_eq!(parsed.rejected, 4);
        assert_eq!(parsed.total_rows(), 6);
        let b = parsed.records[0].bin;
        assert_eq!((b.year, b.month, b.weekday, b.interval), (2013, 1, 0, 0));
        assert_eq!(parsed.records[1].bin.interval, 7);
    }

    #[test]
    fn missing_header_column_is_fatal() {
        let err = read_crimes(p(), "lat,lon,when\n1,2,3\n".as_bytes(), &TimeBinning::default()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn { ref column, .. } if column == "timestamp"), "{err}");
    }

    #[test]
    fn unreadable_file_is_an_error() {
        let err = parse_streetlights(Path::new("/definitely/not/here.csv")).unwrap_err();
        assert!(matches!(err, IngestError::Io { .. }));
    }

    #[test]
    fn pois_histogram_and_rejects() {
        let mut text = String::from("id,lat,lon,category\n");
        for (i, c) in PoiCategory::ALL.iter().enumerate() {
            text.push_str(&format!("v{i},44.6,-63.5,{}\n", c.name()));
        }
        text.push_str("v0,44.6,-63.5,food\n"); // duplicate id
        text.push_str("v99,44.6,-63.5,casino\n"); // unknown category
        let parsed = read_pois(p(), text.as_bytes()).unwrap();
        assert_eq!(category_histogram(&parsed.records), [1; 10]);
        assert_eq!(parsed.rejected, 2);
    }

    #[test]
    fn orphan_checkins_counted_separately() {
        let venues = vec![PoiVenue {
            id: "v1".into(),
            location: GeoPoint::new(44.6, -63.5).unwrap(),
            category: PoiCategory::Food,
        }];
        let text = "user_id,venue_id,timestamp\nu1,v1,2013-01-01T10:00Z\nu2,ghost,2013-01-01T10:00Z\nu3,v1,never\n";
        let parsed = read_checkins(p(), text.as_bytes(), &venues).unwrap();
        assert_eq!(parsed.records.len(), 1);
        assert_eq!(parsed.rejected_orphan, 1);
        assert_eq!(parsed.rejected_invalid, 1);
    }

    fn demo_header() -> String {
        let mut h = String::from("region_id");
        for c in DEMOGRAPHIC_COLUMNS {
            h.push(',');
            h.push_str(c);
        }
        h.push('\n');
        h
    }

    #[test]
    fn demographics_impute_median() {
        let mut text = demo_header();
        for (id, v) in [("a", 1.0), ("b", 2.0), ("c", 10.0)] {
            text.push_str(id);
            for _ in 0..DEMOGRAPHIC_COUNT {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        }
        // Row d misses column 5.
        text.push('d');
        for c in 0..DEMOGRAPHIC_COUNT {
            if c == 5 {
                text.push(',');
            } else {
                text.push_str(",4");
            }
        }
        text.push('\n');
        text.push_str("e,-1");
        text.push_str(&",1".repeat(DEMOGRAPHIC_COUNT - 1));
        text.push('\n');

        let parsed = read_demographics(p(), text.as_bytes()).unwrap();
        assert_eq!(parsed.records.len(), 4);
        assert_eq!(parsed.rejected, 1);
        assert_eq!(parsed.imputed_cells, 1);
        let d = &parsed.records[3];
        assert_eq!(d.imputed_mask, 1 << 5);
        assert_eq!(d.values[5], 2.0); // median of 1, 2, 10
        assert_eq!(d.values[4], 4.0);
    }

    const TWO_SQUARES: &str = r#"{"type":"FeatureCollection","features":[
      {"type":"Feature","properties":{"id":"A","population":500},
       "geometry":{"type":"Polygon","coordinates":[[[0,0],[0.01,0],[0.01,0.01],[0,0.01],[0,0]]]}},
      {"type":"Feature","properties":{"id":"B","population":20,"area_km2":2.5},
       "geometry":{"type":"Polygon","coordinates":[[[0.01,0],[0.02,0],[0.02,0.01],[0.01,0.01],[0.01,0]]]}}
    ]}"#;

    #[test]
    fn regions_from_geojson() {
        let regions = read_regions(p(), TWO_SQUARES).unwrap();
        assert_eq!(regions.len(), 2);
        assert!((regions[0].area_km2() - 1.2364).abs() < 1e-3);
        assert_eq!(regions[0].ring().len(), 4);
        assert_eq!(regions[1].area_km2(), 2.5);
        assert_eq!(regions[0].population(), 500);
    }

    #[test]
    fn region_errors_name_the_feature() {
        let dup = TWO_SQUARES.replace("\"id\":\"B\"", "\"id\":\"A\"");
        match read_regions(p(), &dup).unwrap_err() {
            IngestError::DuplicateRegion { id, .. } => assert_eq!(id, "A"),
            e => panic!("{e}"),
        }
        let neg = TWO_SQUARES.replace("2.5", "-2.5");
        let err = read_regions(p(), &neg).unwrap_err();
        assert!(matches!(err, IngestError::Feature { ref feature, .. } if feature == "B"), "{err}");
        let line = TWO_SQUARES.replace("[0.01,0],[0.01,0.01],[0,0.01]", "[0.01,0.01],[0.02,0.02],[0.03,0.03]");
        let err = read_regions(p(), &line).unwrap_err();
        assert!(matches!(err, IngestError::Feature { ref feature, .. } if feature == "A"), "{err}");
        assert!(matches!(read_regions(p(), "{}").unwrap_err(), IngestError::GeoJson { .. }));
    }

    #[test]
    fn crimes_round_trip_through_canonical_csv() {
        let text = "lat,lon,timestamp,ucr_code\n44.651234567,-63.57,2013-01-07T02:59:00Z,1430\n0.1,-0.2,2014-12-31T23:59:00Z,x\n";
        let b = TimeBinning::default();
        let first = read_crimes(p(), text.as_bytes(), &b).unwrap();
        let mut buf = Vec::new();
        write_crimes(&mut buf, &first.records).unwrap();
        let second = read_crimes(p(), buf.as_slice(), &b).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn regions_round_trip() {
        let regions = read_regions(p(), TWO_SQUARES).unwrap();
        let mut buf = Vec::new();
        write_regions(&mut buf, &regions).unwrap();
        let again = read_regions(p(), std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(regions, again);
    }
}
