//! Feature groups, the selected-column schema, and the region feature table
//! with its CSV + sidecar export.

use std::fmt;
use std::io::{self, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::binning::{Season, INTERVALS, SEASONS};
use super::FeatureError;
use crate::ingest::{PoiCategory, DEMOGRAPHIC_COLUMNS, DEMOGRAPHIC_COUNT};

/// Feature group tags: raw temporal/historical, demographic, streetlight,
/// check-in dynamics and POI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureGroup {
    R,
    D,
    S,
    F,
    P,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] =
        [FeatureGroup::R, FeatureGroup::D, FeatureGroup::S, FeatureGroup::F, FeatureGroup::P];

    pub fn tag(self) -> char {
        match self {
            FeatureGroup::R => 'R',
            FeatureGroup::D => 'D',
            FeatureGroup::S => 'S',
            FeatureGroup::F => 'F',
            FeatureGroup::P => 'P',
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// A subset of feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FeatureMask(u8);

impl FeatureMask {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn all() -> Self {
        FeatureGroup::ALL.into_iter().collect()
    }

    pub fn contains(self, g: FeatureGroup) -> bool {
        self.0 & g.bit() != 0
    }

    pub fn with(self, g: FeatureGroup) -> Self {
        Self(self.0 | g.bit())
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn groups(self) -> impl Iterator<Item = FeatureGroup> {
        FeatureGroup::ALL.into_iter().filter(move |g| self.contains(*g))
    }
}

impl FromIterator<FeatureGroup> for FeatureMask {
    fn from_iter<I: IntoIterator<Item = FeatureGroup>>(iter: I) -> Self {
        iter.into_iter().fold(Self::empty(), Self::with)
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in self.groups() {
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c.to_ascii_uppercase() {
                'R' => Ok(FeatureGroup::R),
                'D' => Ok(FeatureGroup::D),
                'S' => Ok(FeatureGroup::S),
                'F' => Ok(FeatureGroup::F),
                'P' => Ok(FeatureGroup::P),
                other => Err(format!("unknown feature group {other:?}")),
            })
            .collect()
    }
}

/// Where a cell-level column takes its value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSource {
    Month,
    Weekday,
    Interval,
    Season,
    CrimeFrequency,
    CrimeDensityPop,
    CrimeDensityArea,
    /// Share of the region's crimes in the cell's season.
    SeasonShare,
    Demographic(usize),
    StreetlightCount,
    StreetlightDensity,
    LightDistance,
    PoiTotal,
    PoiCount(usize),
    PoiShare(usize),
    /// Check-in families indexed by the cell's interval.
    Checkins,
    CheckinDensity,
    Visitors,
    Popularity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureColumn {
    pub name: String,
    pub group: FeatureGroup,
    pub source: ColumnSource,
}

/// Schema switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaOptions {
    /// Adds the average crime-to-pole distance as a third streetlight column.
    pub light_distance: bool,
}

/// Ordered list of cell-level feature columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    pub columns: Vec<FeatureColumn>,
    pub options: SchemaOptions,
}

impl FeatureSchema {
    /// The 65 selected columns (66 with the light-distance column).
    pub fn standard(options: SchemaOptions) -> Self {
        use ColumnSource as C;
        use FeatureGroup::*;
        let mut columns = Vec::new();
        let mut push = |name: String, group, source| columns.push(FeatureColumn { name, group, source });
        for (name, src) in [
            ("month", C::Month),
            ("weekday", C::Weekday),
            ("interval", C::Interval),
            ("season", C::Season),
            ("crime_frequency", C::CrimeFrequency),
            ("crime_density_pop", C::CrimeDensityPop),
            ("crime_density_area", C::CrimeDensityArea),
            ("crime_season_share", C::SeasonShare),
        ] {
            push(name.to_string(), R, src);
        }
        for (i, name) in DEMOGRAPHIC_COLUMNS.iter().enumerate() {
            push(format!("demo_{name}"), D, C::Demographic(i));
        }
        push("streetlight_count".into(), S, C::StreetlightCount);
        push("streetlight_density".into(), S, C::StreetlightDensity);
        if options.light_distance {
            push("avg_min_light_distance_km".into(), S, C::LightDistance);
        }
        for (name, src) in [
            ("checkins", C::Checkins),
            ("checkin_density", C::CheckinDensity),
            ("visitor_count", C::Visitors),
            ("region_popularity", C::Popularity),
        ] {
            push(name.to_string(), F, src);
        }
        push("poi_total".into(), P, C::PoiTotal);
        for (i, c) in PoiCategory::REPORTED.iter().enumerate() {
            push(format!("poi_count_{}", c.name()), P, C::PoiCount(i));
        }
        for (i, c) in PoiCategory::REPORTED.iter().enumerate() {
            push(format!("poi_share_{}", c.name()), P, C::PoiShare(i));
        }
        Self { columns, options }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn count(&self, group: FeatureGroup) -> usize {
        self.columns.iter().filter(|c| c.group == group).count()
    }
}

/// Calendar position of a grid cell, as needed to resolve indexed columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellTime {
    pub month: u8,
    pub weekday: u8,
    pub interval: u8,
    pub season: Season,
}

/// Every feature of one region, before expansion over cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegionFeatures {
    pub region_id: String,
    pub crime_frequency: f64,
    pub crime_density_pop: f64,
    pub crime_density_area: f64,
    pub season_share: [f64; SEASONS],
    pub demographics: [f64; DEMOGRAPHIC_COUNT],
    pub streetlight_count: f64,
    pub streetlight_density: f64,
    pub avg_min_light_distance: f64,
    pub poi_total: f64,
    pub poi_counts: [f64; 9],
    pub poi_shares: [f64; 9],
    pub checkins: [f64; INTERVALS],
    pub checkin_density: [f64; INTERVALS],
    pub visitors: [f64; INTERVALS],
    pub popularity: [f64; INTERVALS],
}

impl RegionFeatures {
    pub fn value(&self, source: ColumnSource, cell: CellTime) -> f64 {
        use ColumnSource as C;
        let t = usize::from(cell.interval);
        match source {
            C::Month => f64::from(cell.month),
            C::Weekday => f64::from(cell.weekday),
            C::Interval => f64::from(cell.interval),
            C::Season => cell.season.index() as f64,
            C::CrimeFrequency => self.crime_frequency,
            C::CrimeDensityPop => self.crime_density_pop,
            C::CrimeDensityArea => self.crime_density_area,
            C::SeasonShare => self.season_share[cell.season.index()],
            C::Demographic(i) => self.demographics[i],
            C::StreetlightCount => self.streetlight_count,
            C::StreetlightDensity => self.streetlight_density,
            C::LightDistance => self.avg_min_light_distance,
            C::PoiTotal => self.poi_total,
            C::PoiCount(i) => self.poi_counts[i],
            C::PoiShare(i) => self.poi_shares[i],
            C::Checkins => self.checkins[t],
            C::CheckinDensity => self.checkin_density[t],
            C::Visitors => self.visitors[t],
            C::Popularity => self.popularity[t],
        }
    }

    /// Per-category POI count over region area (computed, not selected).
    pub fn poi_area_density(&self, category: usize, area_km2: f64) -> f64 {
        ratio(self.poi_counts[category], area_km2)
    }

    /// Check-ins in an interval over region area (computed, not selected).
    pub fn checkin_area_density(&self, interval: usize, area_km2: f64) -> f64 {
        ratio(self.checkins[interval], area_km2)
    }

    /// Flat region-level values in [`region_columns`] order.
    fn flatten(&self, options: SchemaOptions) -> Vec<f64> {
        let mut v = vec![self.crime_frequency, self.crime_density_pop, self.crime_density_area];
        v.extend(self.season_share);
        v.extend(self.demographics);
        v.push(self.streetlight_count);
        v.push(self.streetlight_density);
        if options.light_distance {
            v.push(self.avg_min_light_distance);
        }
        for family in [&self.checkins, &self.checkin_density, &self.visitors, &self.popularity] {
            v.extend(family.iter());
        }
        v.push(self.poi_total);
        v.extend(self.poi_counts);
        v.extend(self.poi_shares);
        v
    }

    fn unflatten(region_id: String, v: &[f64], options: SchemaOptions) -> Self {
        let mut it = v.iter().copied();
        let mut next = || it.next().unwrap_or(0.0);
        let mut rf = RegionFeatures { region_id, ..Default::default() };
        rf.crime_frequency = next();
        rf.crime_density_pop = next();
        rf.crime_density_area = next();
        rf.season_share = std::array::from_fn(|_| next());
        rf.demographics = std::array::from_fn(|_| next());
        rf.streetlight_count = next();
        rf.streetlight_density = next();
        if options.light_distance {
            rf.avg_min_light_distance = next();
        }
        rf.checkins = std::array::from_fn(|_| next());
        rf.checkin_density = std::array::from_fn(|_| next());
        rf.visitors = std::array::from_fn(|_| next());
        rf.popularity = std::array::from_fn(|_| next());
        rf.poi_total = next();
        rf.poi_counts = std::array::from_fn(|_| next());
        rf.poi_shares = std::array::from_fn(|_| next());
        rf
    }
}

/// `num / den`, or 0 when either is 0.
pub fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 || den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Region-level export column names and group tags, matching
/// [`RegionFeatures`] field order with indexed families expanded.
pub fn region_columns(options: SchemaOptions) -> Vec<(String, FeatureGroup)> {
    use FeatureGroup::*;
    let mut cols: Vec<(String, FeatureGroup)> =
        vec![("crime_frequency".into(), R), ("crime_density_pop".into(), R), ("crime_density_area".into(), R)];
    cols.extend(Season::ALL.iter().map(|s| (format!("crime_season_share_{}", s.name()), R)));
    cols.extend(DEMOGRAPHIC_COLUMNS.iter().map(|c| (format!("demo_{c}"), D)));
    cols.push(("streetlight_count".into(), S));
    cols.push(("streetlight_density".into(), S));
    if options.light_distance {
        cols.push(("avg_min_light_distance_km".into(), S));
    }
    for family in ["checkins", "checkin_density", "visitor_count", "region_popularity"] {
        cols.extend((0..INTERVALS).map(|t| (format!("{family}_t{t}"), F)));
    }
    cols.push(("poi_total".into(), P));
    cols.extend(PoiCategory::REPORTED.iter().map(|c| (format!("poi_count_{}", c.name()), P)));
    cols.extend(PoiCategory::REPORTED.iter().map(|c| (format!("poi_share_{}", c.name()), P)));
    cols
}

/// Sidecar describing a region feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSidecar {
    pub format_version: u32,
    pub options: SchemaOptions,
    pub columns: Vec<SidecarColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarColumn {
    pub name: String,
    pub group: FeatureGroup,
}

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Per-region features for one observation window, sorted by region id.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTable {
    pub options: SchemaOptions,
    pub rows: Vec<RegionFeatures>,
}

impl RegionTable {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::standard(self.options)
    }

    pub fn get(&self, region_id: &str) -> Option<&RegionFeatures> {
        self.rows.binary_search_by(|r| r.region_id.as_str().cmp(region_id)).ok().map(|i| &self.rows[i])
    }

    pub fn sidecar(&self) -> TableSidecar {
        TableSidecar {
            format_version: TABLE_FORMAT_VERSION,
            options: self.options,
            columns: region_columns(self.options)
                .into_iter()
                .map(|(name, group)| SidecarColumn { name, group })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["region_id".to_string()];
        header.extend(region_columns(self.options).into_iter().map(|(n, _)| n));
        w.write_record(&header).map_err(io::Error::other)?;
        for row in &self.rows {
            let mut rec = vec![row.region_id.clone()];
            rec.extend(row.flatten(self.options).iter().map(f64::to_string));
            w.write_record(&rec).map_err(io::Error::other)?;
        }
        w.flush()
    }

    pub fn read_csv<R: Read>(source: R, sidecar: &TableSidecar) -> Result<Self, FeatureError> {
        let options = sidecar.options;
        let expected = region_columns(options);
        let sidecar_cols: Vec<(String, FeatureGroup)> =
            sidecar.columns.iter().map(|c| (c.name.clone(), c.group)).collect();
        if sidecar.format_version != TABLE_FORMAT_VERSION || sidecar_cols != expected {
            return Err(FeatureError::SchemaMismatch("sidecar does not match the feature schema".into()));
        }
        let mut r = csv::Reader::from_reader(source);
        let headers = r.headers().map_err(|e| FeatureError::SchemaMismatch(e.to_string()))?;
        let names: Vec<&str> = headers.iter().skip(1).collect();
        if headers.get(0) != Some("region_id") || names != expected.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>()
        {
            return Err(FeatureError::SchemaMismatch("feature table header does not match sidecar".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| FeatureError::SchemaMismatch(e.to_string()))?;
            if rec.len() != expected.len() + 1 {
                return Err(FeatureError::SchemaMismatch(format!("row has {} fields", rec.len())));
            }
            let values = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|_| FeatureError::SchemaMismatch(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(RegionFeatures::unflatten(rec[0].to_string(), &values, options));
        }
        if rows.windows(2).any(|w| w[0].region_id >= w[1].region_id) {
            return Err(FeatureError::SchemaMismatch("region ids not strictly sorted".into()));
        }
        Ok(Self { options, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_schema_counts() {
        let s = FeatureSchema::standard(SchemaOptions::default());
        assert_eq!(s.len(), 65);
        let counts: Vec<usize> = FeatureGroup::ALL.iter().map(|g| s.count(*g)).collect();
        assert_eq!(counts, vec![8, 32, 2, 4, 19]);
        let with = FeatureSchema::standard(SchemaOptions { light_distance: true });
        assert_eq!(with.len(), 66);
        assert_eq!(with.count(FeatureGroup::S), 3);
    }

    #[test]
    fn column_names_unique() {
        let s = FeatureSchema::standard(SchemaOptions { light_distance: true });
        let mut names: Vec<&str> = s.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), s.len());
    }

    #[test]
    fn mask_parse_and_display() {
        let m: FeatureMask = "RDS".parse().unwrap();
        assert!(m.contains(FeatureGroup::D) && !m.contains(FeatureGroup::F));
        assert_eq!(m.to_string(), "RDS");
        assert_eq!(FeatureMask::all().to_string(), "RDSFP");
        assert!("RX".parse::<FeatureMask>().is_err());
    }

    #[test]
    fn zero_ratio_rule() {
        assert_eq!(ratio(0.0, 0.0), 0.0);
        assert_eq!(ratio(3.0, 0.0), 0.0);
        assert_eq!(ratio(0.0, 5.0), 0.0);
        assert_eq!(ratio(10.0, 2.0), 5.0);
    }

    #[test]
    fn table_round_trip() {
        let options = SchemaOptions { light_distance: true };
        let mut a = RegionFeatures { region_id: "a".into(), ..Default::default() };
        a.crime_frequency = 3.0;
        a.season_share = [0.1, 0.2, 0.3, 0.4];
        a.demographics[31] = 37.5;
        a.avg_min_light_distance = 0.123456789;
        a.popularity[7] = 1.0 / 3.0;
        a.poi_shares[8] = 0.5;
        let b = RegionFeatures { region_id: "b".into(), ..Default::default() };
        let table = RegionTable { options, rows: vec![a, b] };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = RegionTable::read_csv(buf.as_slice(), &table.sidecar()).unwrap();
        assert_eq!(back, table);
        let wrong = RegionTable { options: SchemaOptions::default(), rows: vec![] }.sidecar();
        assert!(RegionTable::read_csv(buf.as_slice(), &wrong).is_err());
    }
}
