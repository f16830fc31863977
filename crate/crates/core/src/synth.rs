//! Synthetic cities with planted, known crime dependencies.
//!
//! Regions are `G × G` squares. A latent factor `u(r) ~ N(0, 1)` drives the
//! demographic columns, and streetlight counts are Poisson with an
//! intensity tied to the low-income share. POIs and check-ins concentrate
//! toward the south-west ("downtown") corner and do not depend on `u`.
//!
//! Each grid cell holds at most one crime, drawn from a Bernoulli with
//! logit
//!
//! ```text
//! b0 + T(month, weekday, interval)
//!    + w_inc d(r) + w_light s(r) + w_poi q(r) + e(r)
//!    + (v_inc d(r) + v_light s(r)) h(interval)
//! ```
//!
//! where `d`, `s` and `q` are the standardized low-income share,
//! streetlight density and POI density of the region, `e(r)` is nuisance
//! noise, `T` is a sum of cosine harmonics and `h` is 1 for the night
//! intervals (21:00–06:00) and 0 otherwise. `b0` is solved so the mean
//! cell probability equals the configured base rate. Each region's night
//! term is offset by a constant so that it only redistributes expected crime
//! between night and day: region totals depend on the main weights and `e`
//! alone.

use std::fs;
use std::io;
use std::path::Path;

use chrono::{Datelike, NaiveDate, TimeZone, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{MONTHS, WEEKDAYS};
use crate::features::binning::{bin_timestamp, TimeBinning};
use crate::features::binning::{HOURS_PER_INTERVAL, INTERVALS};
use crate::geodata::{GeoError, GeoPoint, Region};
use crate::ingest::{
    demographic_index, write_checkins, write_crimes, write_demographics, write_pois, write_regions, write_streetlights,
    CheckinRecord, CityData, CrimeRecord, DemographicProfile, InputPaths, PoiCategory, PoiVenue, StreetlightPole,
    DEMOGRAPHIC_COUNT,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid city config: {0}")]
    Config(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coefficients of the crime logit. `*_night` terms are multiplied by the
/// night profile `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedWeights {
    pub low_income: f64,
    pub low_income_night: f64,
    pub streetlight_density: f64,
    pub streetlight_density_night: f64,
    pub poi_density: f64,
    pub month_harmonic: f64,
    pub weekday_harmonic: f64,
    pub interval_harmonic: f64,
}

impl Default for PlantedWeights {
    fn default() -> Self {
        Self {
            low_income: 0.1,
            low_income_night: 3.5,
            streetlight_density: -0.1,
            streetlight_density_night: -3.5,
            poi_density: 0.1,
            month_harmonic: 0.2,
            weekday_harmonic: 0.15,
            interval_harmonic: 0.3,
        }
    }
}

impl PlantedWeights {
    pub fn zero() -> Self {
        Self {
            low_income: 0.0,
            low_income_night: 0.0,
            streetlight_density: 0.0,
            streetlight_density_night: 0.0,
            poi_density: 0.0,
            month_harmonic: 0.0,
            weekday_harmonic: 0.0,
            interval_harmonic: 0.0,
        }
    }

    fn values(&self) -> [f64; 8] {
        [
            self.low_income,
            self.low_income_night,
            self.streetlight_density,
            self.streetlight_density_night,
            self.poi_density,
            self.month_harmonic,
            self.weekday_harmonic,
            self.interval_harmonic,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub grid_size: usize,
    pub start_year: i32,
    pub n_years: u32,
    pub seed: u64,
    /// South-west corner of the grid.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Side of one square region, in degrees.
    pub cell_deg: f64,
    /// Target mean probability that a cell holds a crime.
    pub base_rate: f64,
    pub weights: PlantedWeights,
    /// Standard deviation of the per-region nuisance term `e(r)`.
    pub noise: f64,
    /// Mean streetlight count of a region with average low income.
    pub lights_per_region: f64,
    /// Log-intensity change of streetlights per standard deviation of the
    /// low-income share.
    pub light_income_loading: f64,
    /// Mean POI count of the downtown region.
    pub pois_per_region: f64,
    /// Distance, in regions, over which POI density falls by a factor e.
    pub downtown_scale: f64,
    /// Mean check-ins per venue per year.
    pub checkins_per_venue: f64,
    pub users: usize,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            grid_size: 8,
            start_year: 2012,
            n_years: 3,
            seed: 7,
            origin_lat: 44.60,
            origin_lon: -63.65,
            cell_deg: 0.01,
            base_rate: 0.12,
            weights: PlantedWeights::default(),
            noise: 0.6,
            lights_per_region: 60.0,
            light_income_loading: -0.5,
            pois_per_region: 30.0,
            downtown_scale: 3.0,
            checkins_per_venue: 12.0,
            users: 400,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.grid_size < 2 {
            return bad(format!("grid_size must be at least 2, got {}", self.grid_size));
        }
        if self.n_years == 0 {
            return bad("n_years must be positive".into());
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad(format!("base_rate must lie in (0, 1), got {}", self.base_rate));
        }
        let reals = [
            self.origin_lat,
            self.origin_lon,
            self.cell_deg,
            self.noise,
            self.lights_per_region,
            self.light_income_loading,
            self.pois_per_region,
            self.downtown_scale,
            self.checkins_per_venue,
        ];
        if reals.iter().chain(self.weights.values().iter()).any(|v| !v.is_finite()) {
            return bad("all rates and weights must be finite".into());
        }
        if self.cell_deg <= 0.0 || self.downtown_scale <= 0.0 {
            return bad("cell_deg and downtown_scale must be positive".into());
        }
        if self.noise < 0.0
            || self.lights_per_region < 0.0
            || self.pois_per_region < 0.0
            || self.checkins_per_venue < 0.0
        {
            return bad("noise and intensities must be non-negative".into());
        }
        if self.users == 0 {
            return bad("users must be positive".into());
        }
        let top = self.origin_lat + self.cell_deg * self.grid_size as f64;
        let right = self.origin_lon + self.cell_deg * self.grid_size as f64;
        if self.origin_lat < -90.0 || top > 90.0 || self.origin_lon < -180.0 || right > 180.0 {
            return bad("grid does not fit in valid coordinates".into());
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.n_years as i32).map(|y| self.start_year + y).collect()
    }
}

/// Night intervals, where `h = 1`.
pub const NIGHT_INTERVALS: [u8; 4] = [0, 1, 6, 7];

pub fn night_profile(interval: u8) -> f64 {
    if NIGHT_INTERVALS.contains(&interval) {
        1.0
    } else {
        0.0
    }
}

/// Expected association of one region-level quantity with crime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub quantity: String,
    pub group: String,
    pub main_weight: f64,
    pub night_weight: f64,
    /// Sign of the association with a region's total crime count:
    /// "positive", "negative" or "none".
    pub direction: String,
    /// Sign of the association with the share of a region's crime at night.
    pub night_direction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub id: String,
    pub latent: f64,
    pub low_income_z: f64,
    pub streetlight_density_z: f64,
    pub poi_density_z: f64,
    pub nuisance: f64,
    /// Logit shift that keeps the region's expected total unchanged by the
    /// night term.
    pub night_shift: f64,
    pub crime_count: u64,
}

/// Ground truth written next to the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub config: CityConfig,
    pub intercept: f64,
    pub night_intervals: Vec<u8>,
    pub effects: Vec<PlantedEffect>,
    pub n_cells: u64,
    pub crime_count: u64,
    pub crime_rate: f64,
    pub regions: Vec<RegionTruth>,
}

pub struct SyntheticCity {
    pub city: CityData,
    pub manifest: TruthManifest,
}

impl SyntheticCity {
    /// Writes the six input files under their standard names plus
    /// `truth_manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<InputPaths, SynthError> {
        fs::create_dir_all(dir)?;
        let paths = InputPaths::in_dir(dir);
        let c = &self.city;
        write_regions(io::BufWriter::new(fs::File::create(&paths.regions)?), &c.regions)?;
        write_crimes(io::BufWriter::new(fs::File::create(&paths.crimes)?), &c.crimes)?;
        write_streetlights(io::BufWriter::new(fs::File::create(&paths.streetlights)?), &c.streetlights)?;
        write_pois(io::BufWriter::new(fs::File::create(&paths.pois)?), &c.pois)?;
        write_checkins(io::BufWriter::new(fs::File::create(&paths.checkins)?), &c.checkins)?;
        write_demographics(io::BufWriter::new(fs::File::create(&paths.demographics)?), &c.demographics)?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest has finite values");
        fs::write(dir.join(TRUTH_MANIFEST), manifest + "\n")?;
        Ok(paths)
    }
}

pub const TRUTH_MANIFEST: &str = "truth_manifest.json";

/// Demographic column recipe: mean, loading on the latent factor, noise.
const DEMOGRAPHIC_RECIPE: [(&str, f64, f64, f64); 30] = [
    ("dwell_single_detached", 45.0, -10.0, 2.0),
    ("dwell_semi_detached", 8.0, 0.0, 1.0),
    ("dwell_row_house", 6.0, 1.0, 1.0),
    ("dwell_apartment_duplex", 8.0, 2.0, 1.0),
    ("dwell_apartment_low_rise", 20.0, 6.0, 2.0),
    ("dwell_apartment_high_rise", 8.0, 3.0, 1.5),
    ("dwell_movable", 1.0, 0.0, 0.3),
    ("dwell_owned", 60.0, -12.0, 2.0),
    ("dwell_rented", 40.0, 12.0, 2.0),
    ("dwell_major_repairs", 7.0, 2.0, 1.0),
    ("dwell_avg_household_size", 2.4, -0.2, 0.1),
    ("mobility_movers", 15.0, 4.0, 1.0),
    ("mobility_non_movers", 85.0, -4.0, 1.0),
    ("mobility_migrants", 7.0, 2.0, 1.0),
    ("mobility_non_migrants", 93.0, -2.0, 1.0),
    ("aboriginal_visible_minority", 12.0, 5.0, 2.0),
    ("commute_car", 70.0, -10.0, 2.0),
    ("commute_public_transit", 12.0, 6.0, 1.5),
    ("commute_walk", 10.0, 3.0, 1.5),
    ("commute_bicycle", 2.0, 0.5, 0.5),
    ("commute_other", 2.0, 0.0, 0.5),
    ("leave_05_06", 8.0, 0.0, 1.0),
    ("leave_06_07", 18.0, 0.0, 1.5),
    ("leave_07_08", 30.0, -2.0, 1.5),
    ("leave_08_09", 25.0, 1.0, 1.5),
    ("leave_09_12", 19.0, 1.0, 1.5),
    ("low_income_lim_at", 15.0, 8.0, 1.0),
    ("low_income_age_0_17", 20.0, 9.0, 2.0),
    ("low_income_age_18_64", 14.0, 7.0, 1.5),
    ("age_sex_median_age", 40.0, -4.0, 1.5),
];

/// Category weights and hourly check-in profile shape of each category.
const CATEGORY_WEIGHTS: [(PoiCategory, f64); 10] = [
    (PoiCategory::Food, 0.22),
    (PoiCategory::ArtsEntertainment, 0.06),
    (PoiCategory::CollegeUniversity, 0.05),
    (PoiCategory::Nightlife, 0.10),
    (PoiCategory::OutdoorsRecreation, 0.08),
    (PoiCategory::ProfessionalOther, 0.14),
    (PoiCategory::Residence, 0.08),
    (PoiCategory::ShopService, 0.17),
    (PoiCategory::TravelTransport, 0.08),
    (PoiCategory::Event, 0.02),
];

fn hour_weights(c: PoiCategory) -> [f64; 24] {
    std::array::from_fn(|h| {
        let h = h as f64;
        let bump = |centre: f64, width: f64| (-((h - centre) / width).powi(2)).exp();
        0.02 + match c {
            PoiCategory::Nightlife => bump(22.0, 2.5) + bump(0.5, 1.5),
            PoiCategory::Food => bump(12.5, 1.5) + bump(18.5, 2.0),
            PoiCategory::Residence => bump(20.0, 3.0) + bump(7.0, 1.5),
            PoiCategory::TravelTransport => bump(8.0, 1.5) + bump(17.0, 1.5),
            _ => bump(14.0, 3.5),
        }
    })
}

const UCR_CODES: [&str; 6] = ["1210", "1420", "1430", "2120", "2130", "1460"];

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { 0.0 }).collect()
}

fn direction(w: f64) -> String {
    if w > 0.0 {
        "positive"
    } else if w < 0.0 {
        "negative"
    } else {
        "none"
    }
    .to_string()
}

fn stream(cfg: &CityConfig, tag: u64) -> ChaCha8Rng {
    seed::rng(cfg.seed, &[0x7379_6e74, tag])
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
    }
}

fn point_in_square(rng: &mut ChaCha8Rng, lat0: f64, lon0: f64, side: f64) -> GeoPoint {
    // Keep clear of edges so every point has exactly one containing region.
    let a = 0.001 + 0.998 * rng.gen::<f64>();
    let b = 0.001 + 0.998 * rng.gen::<f64>();
    GeoPoint::new(lat0 + a * side, lon0 + b * side).expect("grid validated")
}

/// Days of `year`/`month` falling on `weekday` (Monday = 0).
fn matching_days(year: i32, month: u8, weekday: u8) -> Vec<NaiveDate> {
    let first = NaiveDate::from_ymd_opt(year, u32::from(month), 1).expect("valid month");
    first
        .iter_days()
        .take_while(|d| d.month() == u32::from(month))
        .filter(|d| d.weekday().num_days_from_monday() == u32::from(weekday))
        .collect()
}

/// Deterministic synthetic city for `cfg`.
pub fn generate(cfg: &CityConfig) -> Result<SyntheticCity, SynthError> {
    cfg.validate()?;
    let g = cfg.grid_size;
    let n_regions = g * g;
    let side = cfg.cell_deg;
    let corner = |r: usize| (cfg.origin_lat + (r / g) as f64 * side, cfg.origin_lon + (r % g) as f64 * side);
    let ids: Vec<String> = (0..n_regions).map(|r| format!("DA{:02}{:02}", r / g, r % g)).collect();

    // Latent factor and demographics.
    let mut rng = stream(cfg, 1);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let latent: Vec<f64> = (0..n_regions).map(|_| std_normal.sample(&mut rng)).collect();
    let mut regions = Vec::with_capacity(n_regions);
    let mut demographics = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let population = (450.0 + 120.0 * std_normal.sample(&mut rng)).round().max(50.0);
        let (lat0, lon0) = corner(r);
        let ring = vec![
            GeoPoint::new(lat0, lon0)?,
            GeoPoint::new(lat0, lon0 + side)?,
            GeoPoint::new(lat0 + side, lon0 + side)?,
            GeoPoint::new(lat0 + side, lon0)?,
        ];
        let region = Region::new(ids[r].clone(), ring, None, population as u64)?;
        let mut values = [0.0; DEMOGRAPHIC_COUNT];
        values[0] = population;
        values[1] = round2(population / region.area_km2());
        for (name, mean, loading, noise) in DEMOGRAPHIC_RECIPE {
            let v = mean + loading * latent[r] + noise * std_normal.sample(&mut rng);
            let cap = if name == "dwell_avg_household_size" { f64::INFINITY } else { 100.0 };
            values[demographic_index(name).expect("recipe uses known columns")] = round2(v.clamp(0.0, cap));
        }
        regions.push(region);
        demographics.push(DemographicProfile { region_id: ids[r].clone(), values, imputed_mask: 0 });
    }
    let income_col = demographic_index("low_income_lim_at").expect("known column");
    let income: Vec<f64> = demographics.iter().map(|d| d.values[income_col]).collect();
    let income_z = standardize(&income);

    // Streetlights: Poisson count tied to the low-income share.
    let mut rng = stream(cfg, 2);
    let mut streetlights = Vec::new();
    let mut light_density = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let n = poisson(&mut rng, cfg.lights_per_region * (cfg.light_income_loading * income_z[r]).exp());
        let (lat0, lon0) = corner(r);
        for _ in 0..n {
            streetlights.push(StreetlightPole { location: point_in_square(&mut rng, lat0, lon0, side) });
        }
        light_density.push(n as f64 / regions[r].area_km2());
    }
    let light_z = standardize(&light_density);

    // POIs, denser toward the south-west corner.
    let mut rng = stream(cfg, 3);
    let categories = WeightedIndex::new(CATEGORY_WEIGHTS.iter().map(|c| c.1)).expect("positive weights");
    let mut pois = Vec::new();
    let mut poi_density = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let dist = (((r / g) * (r / g) + (r % g) * (r % g)) as f64).sqrt();
        let n = poisson(&mut rng, cfg.pois_per_region * (-dist / cfg.downtown_scale).exp());
        let (lat0, lon0) = corner(r);
        for _ in 0..n {
            let category = CATEGORY_WEIGHTS[categories.sample(&mut rng)].0;
            let location = point_in_square(&mut rng, lat0, lon0, side);
            pois.push(PoiVenue { id: format!("V{:06}", pois.len()), location, category });
        }
        poi_density.push(n as f64 / regions[r].area_km2());
    }
    let poi_z = standardize(&poi_density);

    // Check-ins over the whole study period.
    let mut rng = stream(cfg, 4);
    let first_day = NaiveDate::from_ymd_opt(cfg.start_year, 1, 1).expect("valid year");
    let last_day = NaiveDate::from_ymd_opt(cfg.start_year + cfg.n_years as i32, 1, 1).expect("valid year");
    let n_days = (last_day - first_day).num_days();
    let hour_tables: Vec<WeightedIndex<f64>> =
        PoiCategory::ALL.iter().map(|&c| WeightedIndex::new(hour_weights(c)).expect("positive weights")).collect();
    let mut checkins = Vec::new();
    for v in &pois {
        let n = poisson(&mut rng, cfg.checkins_per_venue * f64::from(cfg.n_years));
        for _ in 0..n {
            let day = first_day + chrono::Duration::days(rng.gen_range(0..n_days));
            let hour = hour_tables[v.category as usize].sample(&mut rng) as u32;
            let t = day.and_hms_opt(hour, rng.gen_range(0..60), rng.gen_range(0..60)).expect("valid time");
            checkins.push(CheckinRecord {
                user_id: format!("U{:04}", rng.gen_range(0..cfg.users)),
                venue_id: v.id.clone(),
                timestamp: Utc.from_utc_datetime(&t),
            });
        }
    }
    checkins.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.venue_id.cmp(&b.venue_id)));

    // Crime logits.
    let mut rng = stream(cfg, 5);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let nuisance: Vec<f64> = (0..n_regions).map(|_| cfg.noise * noise.sample(&mut rng)).collect();
    let w = cfg.weights;
    let region_main: Vec<f64> = (0..n_regions)
        .map(|r| {
            w.low_income * income_z[r] + w.streetlight_density * light_z[r] + w.poi_density * poi_z[r] + nuisance[r]
        })
        .collect();
    let region_night: Vec<f64> =
        (0..n_regions).map(|r| w.low_income_night * income_z[r] + w.streetlight_density_night * light_z[r]).collect();
    let tau = std::f64::consts::TAU;
    let temporal = |month: u8, weekday: u8, interval: u8| {
        w.month_harmonic * (tau * (f64::from(month) - 7.0) / 12.0).cos()
            + w.weekday_harmonic * (tau * (f64::from(weekday) - 5.0) / 7.0).cos()
            + w.interval_harmonic * (tau * (f64::from(interval) - 7.0) / 8.0).cos()
    };
    let years = cfg.years();
    let block = years.len() * MONTHS * WEEKDAYS * INTERVALS;
    let mut offsets = Vec::with_capacity(n_regions * block);
    for r in 0..n_regions {
        for _ in &years {
            for month in 1..=MONTHS as u8 {
                for weekday in 0..WEEKDAYS as u8 {
                    for interval in 0..INTERVALS as u8 {
                        offsets.push(temporal(month, weekday, interval) + region_main[r]);
                    }
                }
            }
        }
    }
    let intercept = solve_intercept(&offsets, cfg.base_rate);
    // The night term moves crime between intervals of a region; a per-region
    // shift keeps the region's expected total at its value without it.
    let mut night_shift = vec![0.0; n_regions];
    for (r, cells) in offsets.chunks_mut(block).enumerate() {
        if region_night[r] == 0.0 {
            continue;
        }
        let target = cells.iter().map(|o| crate::learn::sigmoid(intercept + o)).sum::<f64>() / block as f64;
        for (k, o) in cells.iter_mut().enumerate() {
            *o += intercept + region_night[r] * night_profile((k % INTERVALS) as u8);
        }
        night_shift[r] = solve_intercept(cells, target);
        for o in cells.iter_mut() {
            *o += night_shift[r] - intercept;
        }
    }

    let binning = TimeBinning::default();
    let mut crimes = Vec::new();
    let mut per_region = vec![0u64; n_regions];
    let mut k = 0;
    for r in 0..n_regions {
        let (lat0, lon0) = corner(r);
        for &year in &years {
            for month in 1..=MONTHS as u8 {
                for weekday in 0..WEEKDAYS as u8 {
                    let days = matching_days(year, month, weekday);
                    for interval in 0..INTERVALS as u8 {
                        let p = crate::learn::sigmoid(intercept + offsets[k]);
                        k += 1;
                        if rng.gen::<f64>() >= p {
                            continue;
                        }
                        let day = days[rng.gen_range(0..days.len())];
                        let hour = u32::from(interval) * HOURS_PER_INTERVAL + rng.gen_range(0..HOURS_PER_INTERVAL);
                        let t = day.and_hms_opt(hour, rng.gen_range(0..60), rng.gen_range(0..60)).expect("valid time");
                        let timestamp = Utc.from_utc_datetime(&t);
                        crimes.push(CrimeRecord {
                            location: point_in_square(&mut rng, lat0, lon0, side),
                            timestamp,
                            bin: bin_timestamp(t, &binning),
                            ucr_code: UCR_CODES[rng.gen_range(0..UCR_CODES.len())].to_string(),
                        });
                        per_region[r] += 1;
                    }
                }
            }
        }
    }
    crimes.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.location.lat().total_cmp(&b.location.lat())));

    let effects = vec![
        PlantedEffect {
            quantity: "low_income_lim_at".into(),
            group: "D".into(),
            main_weight: w.low_income,
            night_weight: w.low_income_night,
            direction: direction(w.low_income),
            night_direction: direction(w.low_income_night),
        },
        PlantedEffect {
            quantity: "streetlight_density".into(),
            group: "S".into(),
            main_weight: w.streetlight_density,
            night_weight: w.streetlight_density_night,
            direction: direction(w.streetlight_density),
            night_direction: direction(w.streetlight_density_night),
        },
        PlantedEffect {
            quantity: "poi_density".into(),
            group: "P".into(),
            main_weight: w.poi_density,
            night_weight: 0.0,
            direction: direction(w.poi_density),
            night_direction: direction(0.0),
        },
    ];
    let n_cells = offsets.len() as u64;
    let crime_count = crimes.len() as u64;
    let truth = (0..n_regions)
        .map(|r| RegionTruth {
            id: ids[r].clone(),
            latent: latent[r],
            low_income_z: income_z[r],
            streetlight_density_z: light_z[r],
            poi_density_z: poi_z[r],
            nuisance: nuisance[r],
            night_shift: night_shift[r],
            crime_count: per_region[r],
        })
        .collect();
    let manifest = TruthManifest {
        config: cfg.clone(),
        intercept,
        night_intervals: NIGHT_INTERVALS.to_vec(),
        effects,
        n_cells,
        crime_count,
        crime_rate: crime_count as f64 / n_cells as f64,
        regions: truth,
    };
    let city = CityData { regions, crimes, streetlights, pois, checkins, demographics };
    Ok(SyntheticCity { city, manifest })
}

/// Intercept `b0` with `mean(sigmoid(b0 + offset)) = rate`, by bisection.
fn solve_intercept(offsets: &[f64], rate: f64) -> f64 {
    let mean_p = |b: f64| offsets.iter().map(|o| crate::learn::sigmoid(b + o)).sum::<f64>() / offsets.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = (lo + hi) / 2.0;
        if mean_p(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo + hi) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CityConfig {
        CityConfig { grid_size: 3, n_years: 1, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(CityConfig::default().validate().is_ok());
        assert!(CityConfig { grid_size: 1, ..Default::default() }.validate().is_err());
        assert!(CityConfig { base_rate: 1.0, ..Default::default() }.validate().is_err());
        let mut c = CityConfig::default();
        c.weights.low_income = f64::NAN;
        assert!(c.validate().is_err());
    }

    #[test]
    fn manifest_counts_match() {
        let s = generate(&small()).unwrap();
        assert_eq!(s.manifest.crime_count, s.city.crimes.len() as u64);
        assert_eq!(s.manifest.n_cells, 9 * 672);
        assert_eq!(s.manifest.regions.iter().map(|r| r.crime_count).sum::<u64>(), s.manifest.crime_count);
        assert!((s.manifest.crime_rate - 0.12).abs() < 0.03);
        assert_eq!(s.city.regions.len(), 9);
    }

    #[test]
    fn intercept_hits_the_rate() {
        let offsets = [-1.0, 0.0, 2.0];
        let b = solve_intercept(&offsets, 0.3);
        let m: f64 = offsets.iter().map(|o| crate::learn::sigmoid(b + o)).sum::<f64>() / 3.0;
        assert!((m - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crimes_fall_in_their_cell() {
        let s = generate(&small()).unwrap();
        for c in &s.city.crimes {
            assert!(c.bin.year == 2012);
        }
        let days = matching_days(2013, 2, 4);
        assert_eq!(days.len(), 4);
        assert!(days.iter().all(|d| d.weekday() == chrono::Weekday::Fri));
    }
}
