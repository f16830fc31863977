//! Geometry primitives over WGS84 lat/lon coordinates.
//!
//! Distances are great-circle (haversine) on a sphere of radius
//! [`EARTH_RADIUS_KM`]. Polygon areas use an equirectangular projection
//! about the ring centroid, which is accurate to well under 1% at city scale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Bucket size of the nearest-neighbour index, in degrees.
const BUCKET_DEG: f64 = 0.01;

/// Below this many targets a brute-force scan is used directly.
const BRUTE_FORCE_TARGETS: usize = 32;

/// Give up on ring expansion after this many rings and scan everything.
const MAX_RINGS: i64 = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("ring needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
    #[error("ring encloses zero area")]
    ZeroArea,
    #[error("region area must be positive and finite, got {0}")]
    BadArea(f64),
    #[error("region list is empty")]
    NoRegions,
    #[error("point list is empty")]
    NoPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::Latitude(lat));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// A census region: a simple polygon with an identity, area and population.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    id: String,
    ring: Vec<GeoPoint>,
    area_km2: f64,
    population: u64,
    bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BBox {
    min_lat: f64,
    max_lat: f64,
    min_lon: f64,
    max_lon: f64,
}

impl BBox {
    fn of(ring: &[GeoPoint]) -> Self {
        let mut b = BBox {
            min_lat: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            min_lon: f64::INFINITY,
            max_lon: f64::NEG_INFINITY,
        };
        for p in ring {
            b.min_lat = b.min_lat.min(p.lat);
            b.max_lat = b.max_lat.max(p.lat);
            b.min_lon = b.min_lon.min(p.lon);
            b.max_lon = b.max_lon.max(p.lon);
        }
        b
    }

    fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

impl Region {
    /// Builds a region. A closing vertex equal to the first is dropped. When
    /// `area_km2` is `None` the area is computed with [`polygon_area_km2`].
    pub fn new(
        id: impl Into<String>,
        mut ring: Vec<GeoPoint>,
        area_km2: Option<f64>,
        population: u64,
    ) -> Result<Self, GeoError> {
        if ring.len() > 1 && ring.first() == ring.last() {
            ring.pop();
        }
        let distinct = count_distinct(&ring);
        if distinct < 3 {
            return Err(GeoError::TooFewVertices(distinct));
        }
        let area_km2 = match area_km2 {
            Some(a) => a,
            None => polygon_area_km2(&ring)?,
        };
        if !(area_km2.is_finite() && area_km2 > 0.0) {
            return Err(GeoError::BadArea(area_km2));
        }
        let bbox = BBox::of(&ring);
        Ok(Self { id: id.into(), ring, area_km2, population, bbox })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn ring(&self) -> &[GeoPoint] {
        &self.ring
    }

    pub fn area_km2(&self) -> f64 {
        self.area_km2
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    /// Arithmetic mean of the ring vertices.
    pub fn vertex_centroid(&self) -> GeoPoint {
        let n = self.ring.len() as f64;
        let lat = self.ring.iter().map(|p| p.lat).sum::<f64>() / n;
        let lon = self.ring.iter().map(|p| p.lon).sum::<f64>() / n;
        GeoPoint { lat, lon }
    }
}

fn count_distinct(ring: &[GeoPoint]) -> usize {
    let mut seen: Vec<(u64, u64)> = ring.iter().map(|p| (p.lat.to_bits(), p.lon.to_bits())).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Even-odd ray casting in lat/lon space. Points on an edge or vertex are inside.
pub fn point_in_region(p: GeoPoint, region: &Region) -> bool {
    if !region.bbox.contains(p) {
        return false;
    }
    point_in_ring(p, &region.ring)
}

fn point_in_ring(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let (x, y) = (p.lon, p.lat);
    let n = ring.len();
    let mut inside = false;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        if on_segment(x, y, a.lon, a.lat, b.lon, b.lat) {
            return true;
        }
        if (a.lat > y) != (b.lat > y) {
            let x_cross = a.lon + (y - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_segment(x: f64, y: f64, ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    if x < ax.min(bx) || x > ax.max(bx) || y < ay.min(by) || y > ay.max(by) {
        return false;
    }
    let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
    let scale = (bx - ax).abs().max((by - ay).abs()).max(1e-300);
    cross.abs() <= 1e-12 * scale
}

/// Result of mapping points onto regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Per input point, the index into the region slice it was assigned to.
    pub region_index: Vec<Option<usize>>,
    pub unassigned_count: usize,
}

impl Assignment {
    pub fn ids<'a>(&self, regions: &'a [Region]) -> Vec<Option<&'a str>> {
        self.region_index.iter().map(|i| i.map(|i| regions[i].id())).collect()
    }
}

/// Maps every point to the region containing it. A point inside several
/// regions (shared borders) goes to the lexicographically smallest id.
pub fn assign_events(points: &[GeoPoint], regions: &[Region]) -> Result<Assignment, GeoError> {
    if regions.is_empty() {
        return Err(GeoError::NoRegions);
    }
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| regions[a].id.cmp(&regions[b].id));

    let mut region_index = Vec::with_capacity(points.len());
    let mut unassigned_count = 0;
    for &p in points {
        // `order` is id-sorted, so the first hit is the smallest id.
        let hit = order.iter().copied().find(|&i| point_in_region(p, &regions[i]));
        if hit.is_none() {
            unassigned_count += 1;
        }
        region_index.push(hit);
    }
    Ok(Assignment { region_index, unassigned_count })
}

/// Area of a simple polygon in km², via equirectangular projection about the
/// vertex centroid followed by the shoelace formula.
pub fn polygon_area_km2(ring: &[GeoPoint]) -> Result<f64, GeoError> {
    let mut ring = ring;
    if ring.len() > 1 && ring.first() == ring.last() {
        ring = &ring[..ring.len() - 1];
    }
    if ring.len() < 3 {
        return Err(GeoError::TooFewVertices(ring.len()));
    }
    let n = ring.len() as f64;
    let lat0 = ring.iter().map(|p| p.lat).sum::<f64>() / n;
    let lon0 = ring.iter().map(|p| p.lon).sum::<f64>() / n;
    let kx = EARTH_RADIUS_KM * lat0.to_radians().cos();
    let project = |p: &GeoPoint| (kx * (p.lon - lon0).to_radians(), EARTH_RADIUS_KM * (p.lat - lat0).to_radians());
    let mut twice = 0.0;
    let mut extent: f64 = 0.0;
    for i in 0..ring.len() {
        let (x1, y1) = project(&ring[i]);
        let (x2, y2) = project(&ring[(i + 1) % ring.len()]);
        twice += x1 * y2 - x2 * y1;
        extent = extent.max(x1.abs()).max(y1.abs());
    }
    let area = twice.abs() / 2.0;
    if area <= 1e-12 * extent * extent || area == 0.0 {
        return Err(GeoError::ZeroArea);
    }
    Ok(area)
}

/// Mean over `sources` of the haversine distance to the nearest target.
pub fn avg_min_distance_km(sources: &[GeoPoint], targets: &[GeoPoint]) -> Result<f64, GeoError> {
    if sources.is_empty() || targets.is_empty() {
        return Err(GeoError::NoPoints);
    }
    let index = NearestIndex::new(targets);
    let total: f64 = sources.iter().map(|&s| index.nearest_km(s)).sum();
    Ok(total / sources.len() as f64)
}

/// Bucket grid over target points for nearest-neighbour queries.
pub struct NearestIndex<'a> {
    targets: &'a [GeoPoint],
    buckets: HashMap<(i64, i64), Vec<usize>>,
    lo: (i64, i64),
    hi: (i64, i64),
    brute: bool,
}

fn bucket_of(p: GeoPoint) -> (i64, i64) {
    ((p.lat / BUCKET_DEG).floor() as i64, (p.lon / BUCKET_DEG).floor() as i64)
}

impl<'a> NearestIndex<'a> {
    pub fn new(targets: &'a [GeoPoint]) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN);
        let mut min_lon = f64::INFINITY;
        let mut max_lon = f64::NEG_INFINITY;
        for (i, &t) in targets.iter().enumerate() {
            let b = bucket_of(t);
            lo = (lo.0.min(b.0), lo.1.min(b.1));
            hi = (hi.0.max(b.0), hi.1.max(b.1));
            min_lon = min_lon.min(t.lon);
            max_lon = max_lon.max(t.lon);
            buckets.entry(b).or_default().push(i);
        }
        // Ring bounds assume no antimeridian wrap.
        let brute = targets.len() < BRUTE_FORCE_TARGETS || max_lon - min_lon > 90.0;
        Self { targets, buckets, lo, hi, brute }
    }

    fn brute_force(&self, s: GeoPoint) -> f64 {
        self.targets.iter().map(|&t| haversine_km(s, t)).fold(f64::INFINITY, f64::min)
    }

    pub fn nearest_km(&self, s: GeoPoint) -> f64 {
        if self.brute || s.lon.abs() > 179.0 || s.lat.abs() > 89.0 {
            return self.brute_force(s);
        }
        let (bi, bj) = bucket_of(s);
        // Number of rings after which every bucket has been visited.
        let k_max = [bi - self.lo.0, self.hi.0 - bi, bj - self.lo.1, self.hi.1 - bj]
            .into_iter()
            .map(i64::abs)
            .max()
            .unwrap_or(0);
        if k_max > MAX_RINGS {
            return self.brute_force(s);
        }
        let mut best = f64::INFINITY;
        for k in 0..=k_max {
            if best.is_finite() && ring_lower_bound_km(s, k) > best {
                break;
            }
            for (di, dj) in ring_offsets(k) {
                if let Some(idx) = self.buckets.get(&(bi + di, bj + dj)) {
                    for &t in idx {
                        best = best.min(haversine_km(s, self.targets[t]));
                    }
                }
            }
        }
        best
    }
}

/// Lower bound on the distance from `s` to any point in a bucket at
/// Chebyshev ring `k` around the bucket holding `s`.
fn ring_lower_bound_km(s: GeoPoint, k: i64) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    let gap = ((k - 1) as f64 * BUCKET_DEG).to_radians();
    let phi_max = (s.lat.abs() + (k + 1) as f64 * BUCKET_DEG).min(90.0).to_radians();
    // hav(d) >= cos^2(phi_max) * hav(dlambda), and hav(d) >= hav(dphi)
    let lon_bound = 2.0 * (phi_max.cos() * (gap / 2.0).sin()).clamp(0.0, 1.0).asin();
    EARTH_RADIUS_KM * lon_bound.min(gap)
}

fn ring_offsets(k: i64) -> Vec<(i64, i64)> {
    if k == 0 {
        return vec![(0, 0)];
    }
    let mut out = Vec::with_capacity((8 * k) as usize);
    for d in -k..=k {
        out.push((-k, d));
        out.push((k, d));
    }
    for d in (-k + 1)..k {
        out.push((d, -k));
        out.push((d, k));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn square(id: &str, lat: f64, lon: f64, size: f64) -> Region {
        let ring = vec![pt(lat, lon), pt(lat, lon + size), pt(lat + size, lon + size), pt(lat + size, lon)];
        Region::new(id, ring, None, 100).unwrap()
    }

    #[test]
    fn rejects_out_of_range_points() {
        assert_eq!(GeoPoint::new(90.5, 0.0), Err(GeoError::Latitude(90.5)));
        assert_eq!(GeoPoint::new(0.0, -181.0), Err(GeoError::Longitude(-181.0)));
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn haversine_identity_and_antipode() {
        let a = pt(44.65, -63.57);
        assert_eq!(haversine_km(a, a), 0.0);
        let d = haversine_km(pt(0.0, 0.0), pt(0.0, 180.0));
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((d - 20015.1).abs() < 0.1);
    }

    #[test]
    fn haversine_halifax_pair() {
        // Value from an independent haversine calculator (Python, math module).
        let d = haversine_km(pt(44.6488, -63.5752), pt(44.8808, -63.5086));
        assert!((d - 26.327_645_700_657_378).abs() < 1e-9, "{d}");
    }

    #[test]
    fn point_in_square() {
        let r = square("a", 0.0, 0.0, 1.0);
        assert!(point_in_region(pt(0.5, 0.5), &r));
        assert!(!point_in_region(pt(11.0, 0.5), &r));
        // Edge, vertex.
        assert!(point_in_region(pt(0.0, 0.5), &r));
        assert!(point_in_region(pt(0.5, 1.0), &r));
        assert!(point_in_region(pt(1.0, 1.0), &r));
        assert!(!point_in_region(pt(1.0 + 1e-9, 0.5), &r));
    }

    #[test]
    fn region_drops_closing_vertex_and_rejects_degenerate() {
        let ring = vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(1.0, 1.0), pt(0.0, 0.0)];
        let r = Region::new("t", ring, None, 0).unwrap();
        assert_eq!(r.ring().len(), 3);
        let bad = vec![pt(0.0, 0.0), pt(0.0, 0.0), pt(1.0, 1.0)];
        assert_eq!(Region::new("t", bad, None, 0).unwrap_err(), GeoError::TooFewVertices(2));
        let sq = vec![pt(0.0, 0.0), pt(0.0, 1.0), pt(1.0, 1.0), pt(1.0, 0.0)];
        assert_eq!(Region::new("t", sq, Some(-1.0), 0).unwrap_err(), GeoError::BadArea(-1.0));
    }

    #[test]
    fn assignment_basic_cases() {
        let regions = vec![square("X", 0.0, 0.0, 1.0)];
        let a = assign_events(&[pt(0.5, 0.5)], &regions).unwrap();
        assert_eq!(a.ids(&regions), vec![Some("X")]);
        assert_eq!(a.unassigned_count, 0);
        let a = assign_events(&[pt(5.0, 5.0)], &regions).unwrap();
        assert_eq!(a.ids(&regions), vec![None]);
        assert_eq!(a.unassigned_count, 1);
        assert_eq!(assign_events(&[pt(0.0, 0.0)], &[]).unwrap_err(), GeoError::NoRegions);
    }

    #[test]
    fn shared_border_goes_to_smallest_id() {
        // "0402" listed first, sharing the lon=1 edge with "0401".
        let regions = vec![square("0402", 0.0, 1.0, 1.0), square("0401", 0.0, 0.0, 1.0)];
        let probes = [pt(0.5, 1.0), pt(0.0, 1.0), pt(1.0, 1.0)];
        let a = assign_events(&probes, &regions).unwrap();
        assert_eq!(a.ids(&regions), vec![Some("0401"); 3]);
        // Exhaustive check over the fixture: off-border points go to their own square.
        for i in 0..=20 {
            for j in 0..=40 {
                let p = pt(i as f64 * 0.05, j as f64 * 0.05);
                let got = assign_events(&[p], &regions).unwrap().ids(&regions)[0];
                let want = if p.lon() <= 1.0 { "0401" } else { "0402" };
                assert_eq!(got, Some(want), "{p:?}");
            }
        }
    }

    #[test]
    fn equator_square_area() {
        let ring = vec![pt(0.0, 0.0), pt(0.0, 0.01), pt(0.01, 0.01), pt(0.01, 0.0)];
        let a = polygon_area_km2(&ring).unwrap();
        assert!((a - 1.237).abs() / 1.237 < 0.01, "{a}");
        let mut cw = ring.clone();
        cw.reverse();
        assert_eq!(polygon_area_km2(&cw).unwrap(), a);
    }

    #[test]
    fn degenerate_ring_area() {
        let tri = vec![pt(0.0, 0.0), pt(0.0, 0.0), pt(1.0, 1.0)];
        assert_eq!(polygon_area_km2(&tri), Err(GeoError::ZeroArea));
        let line = vec![pt(0.0, 0.0), pt(0.5, 0.5), pt(1.0, 1.0)];
        assert_eq!(polygon_area_km2(&line), Err(GeoError::ZeroArea));
    }

    #[test]
    fn avg_min_distance_cases() {
        let pts = vec![pt(44.6, -63.6), pt(44.7, -63.5), pt(44.65, -63.55)];
        assert_eq!(avg_min_distance_km(&pts, &pts).unwrap(), 0.0);
        let s = pt(44.6, -63.6);
        let near = pt(44.61, -63.6);
        let far = pt(44.7, -63.6);
        let d1 = haversine_km(s, near);
        assert_eq!(avg_min_distance_km(&[s], &[far, near]).unwrap(), d1);
        assert_eq!(avg_min_distance_km(&[], &pts), Err(GeoError::NoPoints));
        assert_eq!(avg_min_distance_km(&pts, &[]), Err(GeoError::NoPoints));
    }

    #[test]
    fn bucket_index_matches_brute_force_on_dense_targets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let targets: Vec<GeoPoint> =
            (0..500).map(|_| pt(44.6 + rng.gen::<f64>() * 0.3, -63.7 + rng.gen::<f64>() * 0.3)).collect();
        let index = NearestIndex::new(&targets);
        assert!(!index.brute);
        for _ in 0..300 {
            let s = pt(44.4 + rng.gen::<f64>() * 0.7, -63.9 + rng.gen::<f64>() * 0.7);
            assert_eq!(index.nearest_km(s), index.brute_force(s));
        }
    }
}
