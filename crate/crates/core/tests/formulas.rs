//! Region features against a brute-force recount over raw records.

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crimelab::features::binning::{bin_timestamp, SeasonMap};
use crimelab::features::{build_region_features, CityIndex, MonthWindow, SchemaOptions, TimeBinning, YearMonth};
use crimelab::geodata::{GeoPoint, Region};
use crimelab::ingest::{
    CheckinRecord, CityData, CrimeRecord, DemographicProfile, PoiCategory, PoiVenue, StreetlightPole, DEMOGRAPHIC_COUNT,
};

const SIDE: f64 = 0.01;

struct Fixture {
    city: CityData,
    /// Region index of every crime, light, POI and check-in, by construction.
    crime_region: Vec<usize>,
    light_region: Vec<usize>,
    poi_region: Vec<usize>,
    window: MonthWindow,
}

fn point_in(rng: &mut ChaCha8Rng, k: usize) -> GeoPoint {
    let lat = 10.0 + SIDE * rng.gen_range(0.05..0.95);
    let lon = 20.0 + SIDE * (k as f64 + rng.gen_range(0.05..0.95));
    GeoPoint::new(lat, lon).unwrap()
}

fn random_time(rng: &mut ChaCha8Rng) -> chrono::DateTime<Utc> {
    let day = NaiveDate::from_ymd_opt(2012, 1, 1).unwrap() + chrono::Duration::days(rng.gen_range(0..3 * 365));
    Utc.from_utc_datetime(&day.and_hms_opt(rng.gen_range(0..24), rng.gen_range(0..60), 0).unwrap())
}

fn fixture(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=5);
    let regions: Vec<Region> = (0..n)
        .map(|k| {
            let (lat, lon) = (10.0, 20.0 + SIDE * k as f64);
            let ring = [(lat, lon), (lat, lon + SIDE), (lat + SIDE, lon + SIDE), (lat + SIDE, lon)]
                .iter()
                .map(|&(a, b)| GeoPoint::new(a, b).unwrap())
                .collect();
            let population = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..2000) };
            Region::new(format!("R{k}"), ring, Some(rng.gen_range(0.3..5.0)), population).unwrap()
        })
        .collect();
    let binning = TimeBinning::default();

    let crime_region: Vec<usize> = (0..rng.gen_range(0..80)).map(|_| rng.gen_range(0..n)).collect();
    let crimes = crime_region
        .iter()
        .map(|&k| {
            let timestamp = random_time(&mut rng);
            CrimeRecord {
                location: point_in(&mut rng, k),
                timestamp,
                bin: bin_timestamp(timestamp.naive_utc(), &binning),
                ucr_code: "1430".into(),
            }
        })
        .collect();
    let light_region: Vec<usize> = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(0..n)).collect();
    let streetlights = light_region.iter().map(|&k| StreetlightPole { location: point_in(&mut rng, k) }).collect();
    let poi_region: Vec<usize> = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(0..n)).collect();
    let pois: Vec<PoiVenue> = poi_region
        .iter()
        .enumerate()
        .map(|(i, &k)| PoiVenue {
            id: format!("V{i}"),
            location: point_in(&mut rng, k),
            category: PoiCategory::ALL[rng.gen_range(0..10)],
        })
        .collect();
    let checkins = if pois.is_empty() {
        Vec::new()
    } else {
        (0..rng.gen_range(0..300))
            .map(|_| CheckinRecord {
                user_id: format!("u{}", rng.gen_range(0..10)),
                venue_id: format!("V{}", rng.gen_range(0..pois.len())),
                timestamp: random_time(&mut rng),
            })
            .collect()
    };
    let demographics = regions
        .iter()
        .map(|r| DemographicProfile {
            region_id: r.id().to_string(),
            values: std::array::from_fn(|_| rng.gen_range(0.0..100.0)),
            imputed_mask: 0,
        })
        .collect();
    let start = YearMonth::new(2012, 1).unwrap().plus_months(rng.gen_range(0..36));
    let window = MonthWindow::months(start, rng.gen_range(1..=36));
    Fixture {
        city: CityData { regions, crimes, streetlights, pois, checkins, demographics },
        crime_region,
        light_region,
        poi_region,
        window,
    }
}

fn div(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a / b
    }
}

#[track_caller]
fn close(got: f64, want: f64, what: &str) {
    let scale = got.abs().max(want.abs());
    assert!((got - want).abs() <= 1e-12 * scale, "{what}: got {got}, want {want}");
}

fn in_window(w: MonthWindow, year: i32, month: u32) -> bool {
    w.contains(YearMonth::new(year, month as u8).unwrap())
}

fn season_of(month: u32) -> usize {
    // Dec-Feb, Mar-May, Jun-Aug, Sep-Nov.
    match month {
        12 | 1 | 2 => 0,
        3..=5 => 1,
        6..=8 => 2,
        _ => 3,
    }
}

#[test]
fn features_match_a_naive_recount_on_random_fixtures() {
    for seed in 0..100 {
        check_fixture(seed);
    }
}

/// Builds fixture `seed` and panics on the first feature that disagrees
/// with the recount.
pub fn check_fixture(seed: u64) {
    assert_eq!(SeasonMap::default(), SeasonMap::meteorological());
    let fx = fixture(seed);
    let city = &fx.city;
    let index = CityIndex::build(city, &TimeBinning::default()).unwrap();
    let table = build_region_features(city, &index, fx.window, SchemaOptions::default()).unwrap();
    let n = city.regions.len();
    assert_eq!(table.rows.len(), n);

    // Check-ins per interval across all regions, inside the window.
    let venue_region = |id: &str| fx.poi_region[id[1..].parse::<usize>().unwrap()];
    let live: Vec<&CheckinRecord> =
        city.checkins.iter().filter(|c| in_window(fx.window, c.timestamp.year(), c.timestamp.month())).collect();
    let mut ck_t = [0usize; 8];
    for c in &live {
        ck_t[(c.timestamp.hour() / 3) as usize] += 1;
    }

    for (k, region) in city.regions.iter().enumerate() {
        let row = &table.rows[k];
        let ctx = |what: &str| format!("seed {seed} region {k} {what}");
        assert_eq!(row.region_id, region.id());
        let area = region.area_km2();

        // Crime history.
        let crimes: Vec<&CrimeRecord> = city
            .crimes
            .iter()
            .zip(&fx.crime_region)
            .filter(|(c, &r)| r == k && in_window(fx.window, c.timestamp.year(), c.timestamp.month()))
            .map(|(c, _)| c)
            .collect();
        let cr = crimes.len() as f64;
        assert_eq!(row.crime_frequency, cr, "{}", ctx("CR"));
        close(row.crime_density_pop, div(cr, region.population() as f64), &ctx("crimes per resident"));
        close(row.crime_density_area, div(cr, area), &ctx("crimes per km2"));
        for s in 0..4 {
            let in_season = crimes.iter().filter(|c| season_of(c.timestamp.month()) == s).count() as f64;
            close(row.season_share[s], div(in_season, cr), &ctx("season share"));
        }

        // Streetlights.
        let st = fx.light_region.iter().filter(|&&r| r == k).count() as f64;
        assert_eq!(row.streetlight_count, st, "{}", ctx("St"));
        close(row.streetlight_density, div(st, area), &ctx("streetlights per km2"));

        // POIs; the event category is folded into professional_other.
        let venues: Vec<&PoiVenue> =
            city.pois.iter().zip(&fx.poi_region).filter(|(_, &r)| r == k).map(|(v, _)| v).collect();
        let total = venues.len() as f64;
        assert_eq!(row.poi_total, total, "{}", ctx("N"));
        for (c, cat) in PoiCategory::REPORTED.iter().enumerate() {
            let count = venues
                .iter()
                .filter(|v| {
                    v.category == *cat || (*cat == PoiCategory::ProfessionalOther && v.category == PoiCategory::Event)
                })
                .count() as f64;
            assert_eq!(row.poi_counts[c], count, "{}", ctx("N_c"));
            close(row.poi_shares[c], div(count, total), &ctx("POI share"));
            close(row.poi_area_density(c, area), div(count, area), &ctx("POIs per km2"));
        }
        assert_eq!(row.poi_counts.iter().sum::<f64>(), total);

        // Check-ins.
        let mine: Vec<&&CheckinRecord> = live.iter().filter(|c| venue_region(&c.venue_id) == k).collect();
        let ck_r = mine.len() as f64;
        for t in 0..8 {
            let at: Vec<&&&CheckinRecord> = mine.iter().filter(|c| c.timestamp.hour() / 3 == t as u32).collect();
            let ck_rt = at.len() as f64;
            let users: BTreeSet<&str> = at.iter().map(|c| c.user_id.as_str()).collect();
            assert_eq!(row.checkins[t], ck_rt, "{}", ctx("Ck(r,t)"));
            close(row.checkin_density[t], div(ck_rt, ck_r), &ctx("check-in share of region"));
            close(row.checkin_area_density(t, area), div(ck_rt, area), &ctx("check-ins per km2"));
            assert_eq!(row.visitors[t], users.len() as f64, "{}", ctx("visitors"));
            close(row.popularity[t], div(ck_rt, ck_t[t] as f64), &ctx("popularity"));
        }

        // Demographics pass through unchanged.
        let demo = &city.demographics[k];
        assert_eq!(row.demographics[..], demo.values[..DEMOGRAPHIC_COUNT]);
    }

    for t in 0..8 {
        if ck_t[t] > 0 {
            let sum: f64 = table.rows.iter().map(|r| r.popularity[t]).sum();
            assert!((sum - 1.0).abs() < 1e-12, "seed {seed}: popularity sums to {sum}");
        }
    }
}
