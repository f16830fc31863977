use std::fs;

use crimelab::features::binning::TimeBinning;
use crimelab::geodata::{assign_events, EARTH_RADIUS_KM};
use crimelab::ingest::load_city;
use crimelab::synth::{generate, CityConfig, PlantedWeights, TRUTH_MANIFEST};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn null_city(seed: u64) -> CityConfig {
    CityConfig { grid_size: 2, n_years: 1, seed, weights: PlantedWeights::zero(), noise: 0.0, ..Default::default() }
}

/// Pearson chi-square test of equal crime rates across regions, on the
/// regions × {crime, no crime} table.
fn homogeneity_p(counts: &[u64], cells_per_region: u64) -> f64 {
    let k = counts.len() as f64;
    let total: u64 = counts.iter().sum();
    let rate = total as f64 / (k * cells_per_region as f64);
    let (e1, e0) = (rate * cells_per_region as f64, (1.0 - rate) * cells_per_region as f64);
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let (o1, o0) = (c as f64, (cells_per_region - c) as f64);
            (o1 - e1).powi(2) / e1 + (o0 - e0).powi(2) / e0
        })
        .sum();
    1.0 - ChiSquared::new(k - 1.0).unwrap().cdf(stat)
}

#[test]
fn null_city_has_uniform_crime_rate() {
    for seed in 0..20 {
        let s = generate(&null_city(seed)).unwrap();
        let counts: Vec<u64> = s.manifest.regions.iter().map(|r| r.crime_count).collect();
        let p = homogeneity_p(&counts, 672);
        assert!(p > 0.01, "seed {seed}: counts {counts:?}, p = {p}");
    }
}

#[test]
fn fixed_seed_gives_identical_files() {
    let cfg = CityConfig { grid_size: 3, n_years: 1, ..Default::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&cfg).unwrap().write(a.path()).unwrap();
    generate(&cfg).unwrap().write(b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 7);
    for n in &names {
        assert_eq!(fs::read(a.path().join(n)).unwrap(), fs::read(b.path().join(n)).unwrap(), "{n:?}");
    }
    let other = generate(&CityConfig { seed: cfg.seed + 1, ..cfg }).unwrap();
    assert_ne!(other.manifest.crime_count, 0);
    assert_ne!(other.city.crimes, generate(&cfg).unwrap().city.crimes);
}

#[test]
fn emitted_files_ingest_cleanly_and_match_the_manifest() {
    let cfg = CityConfig { grid_size: 4, n_years: 1, ..Default::default() };
    let s = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = s.write(dir.path()).unwrap();
    let (city, summary) = load_city(&paths, &TimeBinning::default()).unwrap();
    assert!(summary.rejected.values().all(|&r| r == 0), "{summary:?}");
    assert_eq!(summary.orphan_checkins, 0);
    assert_eq!(summary.imputed_demographic_cells, 0);
    assert_eq!(city.crimes.len() as u64, s.manifest.crime_count);
    assert_eq!(city.regions.len(), 16);
    assert_eq!(city.crimes, s.city.crimes);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(TRUTH_MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["crime_count"].as_u64().unwrap(), s.manifest.crime_count);
    assert_eq!(manifest["config"]["weights"]["streetlight_density_night"].as_f64().unwrap(), -3.5);

    // Every emitted crime lands in the region the generator placed it in.
    let points: Vec<_> = city.crimes.iter().map(|c| c.location).collect();
    let assigned = assign_events(&points, &city.regions).unwrap();
    assert_eq!(assigned.unassigned_count, 0);
    let mut per_region = vec![0u64; 16];
    for r in assigned.region_index {
        per_region[r.unwrap()] += 1;
    }
    let expected: Vec<u64> = s.manifest.regions.iter().map(|r| r.crime_count).collect();
    assert_eq!(per_region, expected);
}

#[test]
fn square_areas_match_the_spherical_formula() {
    let cfg = CityConfig { grid_size: 3, n_years: 1, ..Default::default() };
    let s = generate(&cfg).unwrap();
    for (i, region) in s.city.regions.iter().enumerate() {
        let lat0 = (cfg.origin_lat + (i / 3) as f64 * cfg.cell_deg).to_radians();
        let lat1 = lat0 + cfg.cell_deg.to_radians();
        let exact = EARTH_RADIUS_KM.powi(2) * cfg.cell_deg.to_radians() * (lat1.sin() - lat0.sin());
        let rel = (region.area_km2() - exact).abs() / exact;
        assert!(rel < 0.01, "region {} area {} vs {exact}", region.id(), region.area_km2());
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn streetlight_correlation_sign_matches_the_manifest() {
    let weights = PlantedWeights { streetlight_density: -0.8, ..PlantedWeights::zero() };
    let cfg = CityConfig { grid_size: 6, n_years: 1, weights, noise: 0.0, ..Default::default() };
    let s = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = s.write(dir.path()).unwrap();
    let (city, _) = load_city(&paths, &TimeBinning::default()).unwrap();

    let n = city.regions.len();
    let mut lights = vec![0.0; n];
    for r in assign_events(&city.streetlights.iter().map(|l| l.location).collect::<Vec<_>>(), &city.regions)
        .unwrap()
        .region_index
    {
        lights[r.unwrap()] += 1.0;
    }
    let density: Vec<f64> = lights.iter().zip(&city.regions).map(|(c, r)| c / r.area_km2()).collect();
    let mut crimes = vec![0.0; n];
    for r in
        assign_events(&city.crimes.iter().map(|c| c.location).collect::<Vec<_>>(), &city.regions).unwrap().region_index
    {
        crimes[r.unwrap()] += 1.0;
    }
    let rho = pearson(&density, &crimes);
    let effect = s.manifest.effects.iter().find(|e| e.quantity == "streetlight_density").unwrap();
    assert_eq!(effect.direction, "negative");
    assert!(rho < 0.0, "correlation {rho}");
}

#[test]
fn night_share_follows_the_planted_interaction() {
    let weights = PlantedWeights { low_income_night: 2.0, ..PlantedWeights::zero() };
    let cfg = CityConfig { grid_size: 6, n_years: 1, weights, noise: 0.0, ..Default::default() };
    let s = generate(&cfg).unwrap();
    let ids: Vec<&str> = s.city.regions.iter().map(|r| r.id()).collect();
    let region_of = |c: &crimelab::ingest::CrimeRecord| {
        let a = assign_events(&[c.location], &s.city.regions).unwrap();
        a.region_index[0].unwrap()
    };
    let mut night = vec![0.0; ids.len()];
    let mut total = vec![0.0; ids.len()];
    for c in &s.city.crimes {
        let r = region_of(c);
        total[r] += 1.0;
        if crimelab::synth::NIGHT_INTERVALS.contains(&c.bin.interval) {
            night[r] += 1.0;
        }
    }
    let share: Vec<f64> = night.iter().zip(&total).map(|(a, b)| a / b).collect();
    let z: Vec<f64> = s.manifest.regions.iter().map(|r| r.low_income_z).collect();
    assert!(pearson(&z, &share) > 0.5);
    // The night term alone leaves region totals statistically flat.
    let counts: Vec<u64> = total.iter().map(|&t| t as u64).collect();
    assert!(homogeneity_p(&counts, 672) > 0.001);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate(&CityConfig { grid_size: 1, ..Default::default() }).is_err());
    assert!(generate(&CityConfig { noise: f64::INFINITY, ..Default::default() }).is_err());
    assert!(generate(&CityConfig { origin_lat: 89.99, ..Default::default() }).is_err());
    let parsed: Result<CityConfig, _> = serde_json::from_str(r#"{"grid_size": 4, "colour": 1}"#);
    assert!(parsed.is_err());
}
