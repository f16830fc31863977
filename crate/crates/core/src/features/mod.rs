//! Per-region feature extraction over an observation window.
//!
//! Every count-based feature only sees records whose local (year, month) lies
//! inside the window, so features for a training fold can be computed without
//! looking at the test period. Ratios with a zero numerator or denominator
//! are 0.

pub mod binning;
pub mod schema;

use std::collections::HashSet;

use thiserror::Error;

pub use binning::{MonthWindow, Season, TimeBin, TimeBinning, YearMonth, INTERVALS, SEASONS};
pub use schema::{
    ratio, CellTime, ColumnSource, FeatureColumn, FeatureGroup, FeatureMask, FeatureSchema, RegionFeatures,
    RegionTable, SchemaOptions, TableSidecar,
};

use crate::geodata::{assign_events, GeoError, GeoPoint, NearestIndex, Region};
use crate::ingest::{demographics_by_region, CheckinRecord, CityData, CrimeRecord, PoiVenue, StreetlightPole};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("observation window {0} is empty")]
    EmptyWindow(MonthWindow),
    #[error("no demographic profile for region {0:?}")]
    MissingDemographics(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

/// Region assignment of every geolocated record of a city, computed once.
#[derive(Debug, Clone)]
pub struct CityIndex {
    pub crime_region: Vec<Option<usize>>,
    pub light_region: Vec<Option<usize>>,
    pub poi_region: Vec<Option<usize>>,
    pub checkin_region: Vec<Option<usize>>,
    /// Local calendar bin of every check-in.
    pub checkin_bin: Vec<TimeBin>,
    pub unassigned_crimes: usize,
}

impl CityIndex {
    pub fn build(city: &CityData, binning: &TimeBinning) -> Result<Self, FeatureError> {
        let regions = &city.regions;
        let crimes = assign_events(&city.crimes.iter().map(|c| c.location).collect::<Vec<_>>(), regions)?;
        let lights = assign_events(&city.streetlights.iter().map(|l| l.location).collect::<Vec<_>>(), regions)?;
        let pois = assign_events(&city.pois.iter().map(|p| p.location).collect::<Vec<_>>(), regions)?;
        let venue_region: std::collections::HashMap<&str, Option<usize>> =
            city.pois.iter().zip(&pois.region_index).map(|(p, r)| (p.id.as_str(), *r)).collect();
        let checkin_region =
            city.checkins.iter().map(|c| venue_region.get(c.venue_id.as_str()).copied().flatten()).collect();
        let checkin_bin = city.checkins.iter().map(|c| binning.bin_utc(c.timestamp)).collect();
        Ok(Self {
            crime_region: crimes.region_index,
            light_region: lights.region_index,
            poi_region: pois.region_index,
            checkin_region,
            checkin_bin,
            unassigned_crimes: crimes.unassigned_count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CrimeHistory {
    pub frequency: f64,
    /// Crimes per resident.
    pub density_pop: f64,
    /// Crimes per km².
    pub density_area: f64,
    /// Seasonal count over the region total.
    pub season_share: [f64; SEASONS],
}

pub fn crime_history_features(
    crimes: &[CrimeRecord],
    crime_region: &[Option<usize>],
    regions: &[Region],
    window: MonthWindow,
) -> Result<Vec<CrimeHistory>, FeatureError> {
    if window.is_empty() {
        return Err(FeatureError::EmptyWindow(window));
    }
    let mut counts = vec![0u64; regions.len()];
    let mut seasonal = vec![[0u64; SEASONS]; regions.len()];
    for (c, r) in crimes.iter().zip(crime_region) {
        if let Some(r) = *r {
            if window.contains(c.bin.year_month()) {
                counts[r] += 1;
                seasonal[r][c.bin.season.index()] += 1;
            }
        }
    }
    Ok(regions
        .iter()
        .enumerate()
        .map(|(i, region)| {
            let n = counts[i] as f64;
            CrimeHistory {
                frequency: n,
                density_pop: ratio(n, region.population() as f64),
                density_area: ratio(n, region.area_km2()),
                season_share: std::array::from_fn(|s| ratio(seasonal[i][s] as f64, n)),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreetlightStats {
    pub count: f64,
    pub density: f64,
    /// Mean distance from the region's in-window crimes to their nearest
    /// pole (any region); 0 when disabled or when either side is empty.
    pub avg_min_distance_km: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn streetlight_features(
    lights: &[StreetlightPole],
    light_region: &[Option<usize>],
    crimes: &[CrimeRecord],
    crime_region: &[Option<usize>],
    regions: &[Region],
    window: MonthWindow,
    with_distance: bool,
) -> Vec<StreetlightStats> {
    let mut counts = vec![0u64; regions.len()];
    for r in light_region.iter().flatten() {
        counts[*r] += 1;
    }
    let mut distance = vec![0.0; regions.len()];
    if with_distance && !lights.is_empty() {
        let poles: Vec<GeoPoint> = lights.iter().map(|l| l.location).collect();
        let index = NearestIndex::new(&poles);
        let mut sum = vec![0.0; regions.len()];
        let mut n = vec![0u64; regions.len()];
        for (c, r) in crimes.iter().zip(crime_region) {
            if let Some(r) = *r {
                if window.contains(c.bin.year_month()) {
                    sum[r] += index.nearest_km(c.location);
                    n[r] += 1;
                }
            }
        }
        for i in 0..regions.len() {
            distance[i] = ratio(sum[i], n[i] as f64);
        }
    }
    regions
        .iter()
        .enumerate()
        .map(|(i, region)| StreetlightStats {
            count: counts[i] as f64,
            density: ratio(counts[i] as f64, region.area_km2()),
            avg_min_distance_km: distance[i],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoiStats {
    pub total: f64,
    /// Per reported category; events count under professional/other.
    pub counts: [f64; 9],
    /// Category count over the region's POI total.
    pub shares: [f64; 9],
    /// Category count over region area.
    pub area_density: [f64; 9],
}

pub fn poi_features(pois: &[PoiVenue], poi_region: &[Option<usize>], regions: &[Region]) -> Vec<PoiStats> {
    let mut counts = vec![[0u64; 9]; regions.len()];
    for (p, r) in pois.iter().zip(poi_region) {
        if let Some(r) = *r {
            counts[r][p.category.reported_index()] += 1;
        }
    }
    regions
        .iter()
        .enumerate()
        .map(|(i, region)| {
            let c = counts[i].map(|v| v as f64);
            let total: f64 = c.iter().sum();
            PoiStats {
                total,
                counts: c,
                shares: c.map(|v| ratio(v, total)),
                area_density: c.map(|v| ratio(v, region.area_km2())),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicStats {
    /// Check-ins per interval.
    pub checkins: [f64; INTERVALS],
    /// Interval count over the region's total check-ins.
    pub density: [f64; INTERVALS],
    /// Interval count over region area.
    pub area_density: [f64; INTERVALS],
    /// Distinct users per interval.
    pub visitors: [f64; INTERVALS],
    /// Interval count over all regions' check-ins in that interval.
    pub popularity: [f64; INTERVALS],
}

pub fn dynamic_features(
    checkins: &[CheckinRecord],
    checkin_region: &[Option<usize>],
    checkin_bin: &[TimeBin],
    regions: &[Region],
    window: MonthWindow,
) -> Vec<DynamicStats> {
    let mut counts = vec![[0u64; INTERVALS]; regions.len()];
    let mut users: Vec<[HashSet<&str>; INTERVALS]> = (0..regions.len()).map(|_| Default::default()).collect();
    let mut per_interval = [0u64; INTERVALS];
    for ((c, r), bin) in checkins.iter().zip(checkin_region).zip(checkin_bin) {
        let Some(r) = *r else { continue };
        if !window.contains(bin.year_month()) {
            continue;
        }
        let t = usize::from(bin.interval);
        counts[r][t] += 1;
        per_interval[t] += 1;
        users[r][t].insert(c.user_id.as_str());
    }
    regions
        .iter()
        .enumerate()
        .map(|(i, region)| {
            let ck = counts[i].map(|v| v as f64);
            let total: f64 = ck.iter().sum();
            DynamicStats {
                checkins: ck,
                density: ck.map(|v| ratio(v, total)),
                area_density: ck.map(|v| ratio(v, region.area_km2())),
                visitors: std::array::from_fn(|t| users[i][t].len() as f64),
                popularity: std::array::from_fn(|t| ratio(ck[t], per_interval[t] as f64)),
            }
        })
        .collect()
}

/// Assembles every feature group for every region, sorted by region id.
pub fn build_region_features(
    city: &CityData,
    index: &CityIndex,
    window: MonthWindow,
    options: SchemaOptions,
) -> Result<RegionTable, FeatureError> {
    let regions = &city.regions;
    let history = crime_history_features(&city.crimes, &index.crime_region, regions, window)?;
    let lights = streetlight_features(
        &city.streetlights,
        &index.light_region,
        &city.crimes,
        &index.crime_region,
        regions,
        window,
        options.light_distance,
    );
    let pois = poi_features(&city.pois, &index.poi_region, regions);
    let dynamic = dynamic_features(&city.checkins, &index.checkin_region, &index.checkin_bin, regions, window);
    let demo = demographics_by_region(&city.demographics);

    let mut rows = Vec::with_capacity(regions.len());
    for (i, region) in regions.iter().enumerate() {
        let profile = demo.get(region.id()).ok_or_else(|| FeatureError::MissingDemographics(region.id().into()))?;
        let (h, s, p, d) = (&history[i], &lights[i], &pois[i], &dynamic[i]);
        rows.push(RegionFeatures {
            region_id: region.id().to_string(),
            crime_frequency: h.frequency,
            crime_density_pop: h.density_pop,
            crime_density_area: h.density_area,
            season_share: h.season_share,
            demographics: profile.values,
            streetlight_count: s.count,
            streetlight_density: s.density,
            avg_min_light_distance: s.avg_min_distance_km,
            poi_total: p.total,
            poi_counts: p.counts,
            poi_shares: p.shares,
            checkins: d.checkins,
            checkin_density: d.density,
            visitors: d.visitors,
            popularity: d.popularity,
        });
    }
    rows.sort_by(|a, b| a.region_id.cmp(&b.region_id));
    Ok(RegionTable { options, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::binning::parse_timestamp;
    use crate::ingest::PoiCategory;

    fn square(id: &str, lon: f64, pop: u64, area: f64) -> Region {
        let p = |lat, lon| GeoPoint::new(lat, lon).unwrap();
        Region::new(id, vec![p(0.0, lon), p(0.0, lon + 0.01), p(0.01, lon + 0.01), p(0.01, lon)], Some(area), pop)
            .unwrap()
    }

    fn crime(ts: &str) -> CrimeRecord {
        let timestamp = parse_timestamp(ts).unwrap();
        CrimeRecord {
            location: GeoPoint::new(0.005, 0.005).unwrap(),
            timestamp,
            bin: TimeBinning::default().bin_utc(timestamp),
            ucr_code: "x".into(),
        }
    }

    #[test]
    fn crime_history_arithmetic() {
        let regions = vec![square("a", 0.0, 500, 2.0), square("b", 0.01, 0, 1.0)];
        let crimes: Vec<CrimeRecord> = (0..10).map(|d| crime(&format!("2012-03-{:02}T10:00", d + 1))).collect();
        let assign = vec![Some(0); 10];
        let h = crime_history_features(&crimes, &assign, &regions, MonthWindow::years(2012, 1)).unwrap();
        assert_eq!(h[0].frequency, 10.0);
        assert_eq!(h[0].density_pop, 0.02);
        assert_eq!(h[0].density_area, 5.0);
        assert_eq!(h[0].season_share, [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(h[1], CrimeHistory::default());
        // Outside the window nothing counts.
        let h = crime_history_features(&crimes, &assign, &regions, MonthWindow::years(2013, 1)).unwrap();
        assert_eq!(h[0].frequency, 0.0);
        let empty = MonthWindow::months(YearMonth::new(2012, 1).unwrap(), 0);
        assert!(matches!(crime_history_features(&crimes, &assign, &regions, empty), Err(FeatureError::EmptyWindow(_))));
    }

    #[test]
    fn one_crime_per_season() {
        let regions = vec![square("a", 0.0, 10, 1.0)];
        let crimes: Vec<_> = ["2012-01-10T00:00", "2012-04-10T00:00", "2012-07-10T00:00", "2012-10-10T00:00"]
            .iter()
            .map(|t| crime(t))
            .collect();
        let h = crime_history_features(&crimes, &[Some(0); 4], &regions, MonthWindow::years(2012, 1)).unwrap();
        assert_eq!(h[0].season_share, [0.25; 4]);
    }

    #[test]
    fn streetlight_density() {
        let regions = vec![square("a", 0.0, 10, 2.0), square("b", 0.01, 10, 1.0)];
        let lights = vec![StreetlightPole { location: GeoPoint::new(0.005, 0.005).unwrap() }; 10];
        let s = streetlight_features(&lights, &[Some(0); 10], &[], &[], &regions, MonthWindow::years(2012, 1), false);
        assert_eq!((s[0].count, s[0].density), (10.0, 5.0));
        assert_eq!((s[1].count, s[1].density), (0.0, 0.0));
    }

    #[test]
    fn poi_shares() {
        let regions = vec![square("a", 0.0, 10, 2.0), square("b", 0.01, 10, 1.0)];
        let loc = GeoPoint::new(0.005, 0.005).unwrap();
        let mut pois = Vec::new();
        for i in 0..12 {
            let category = match i {
                0..=2 => PoiCategory::Food,
                3 => PoiCategory::Event,
                _ => PoiCategory::ShopService,
            };
            pois.push(PoiVenue { id: format!("v{i}"), location: loc, category });
        }
        let p = poi_features(&pois, &[Some(0); 12], &regions);
        assert_eq!(p[0].total, 12.0);
        assert_eq!(p[0].shares[0], 0.25);
        assert_eq!(p[0].counts[PoiCategory::ProfessionalOther as usize], 1.0);
        assert!((p[0].shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0].area_density[0], 1.5);
        assert_eq!(p[1], PoiStats::default());
    }

    #[test]
    fn dynamic_ratios() {
        let regions = vec![square("a", 0.0, 10, 1.0), square("b", 0.01, 10, 1.0), square("c", 0.02, 10, 1.0)];
        let ts = parse_timestamp("2012-05-01T10:00").unwrap(); // interval 3
        let ts_other = parse_timestamp("2012-05-01T22:00").unwrap(); // interval 7
        let mut checkins = Vec::new();
        let mut region = Vec::new();
        // a: 5 at t=3 (users u0,u1), 15 at t=7; b: 45 at t=3.
        for i in 0..5 {
            checkins.push(CheckinRecord { user_id: format!("u{}", i % 2), venue_id: "v".into(), timestamp: ts });
            region.push(Some(0));
        }
        for _ in 0..15 {
            checkins.push(CheckinRecord { user_id: "u9".into(), venue_id: "v".into(), timestamp: ts_other });
            region.push(Some(0));
        }
        for _ in 0..45 {
            checkins.push(CheckinRecord { user_id: "w".into(), venue_id: "v".into(), timestamp: ts });
            region.push(Some(1));
        }
        let b = TimeBinning::default();
        let bins: Vec<_> = checkins.iter().map(|c| b.bin_utc(c.timestamp)).collect();
        let d = dynamic_features(&checkins, &region, &bins, &regions, MonthWindow::years(2012, 1));
        assert_eq!(d[0].checkins[3], 5.0);
        assert_eq!(d[0].density[3], 0.25);
        assert_eq!(d[0].popularity[3], 0.1);
        assert_eq!(d[0].visitors[3], 2.0);
        assert_eq!(d[0].popularity[7], 1.0);
        assert_eq!(d[2], DynamicStats::default());
        for t in [3, 7] {
            let s: f64 = d.iter().map(|x| x.popularity[t]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
