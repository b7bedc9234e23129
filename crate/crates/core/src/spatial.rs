//! Single-linkage threshold clustering of AP locations for map display.
//!
//! Two APs are linked when their great-circle distance is at most the
//! radius; clusters are the connected components of that graph. Small inputs
//! are paired exhaustively. Larger inputs bucket points into a lat/lon grid
//! whose cells are at least one radius wide, so only neighbouring cells need
//! comparing. The grid only prunes candidate pairs: every link is still
//! decided by [`haversine_m`], so both paths give identical partitions.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::model::{AccessPoint, Bbox, GeoPoint, ModelError};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const MIN_ZOOM: u8 = 1;
pub const MAX_ZOOM: u8 = 20;
/// Inputs larger than this use the grid index.
pub const NAIVE_PAIRING_LIMIT: usize = 5_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpatialError {
    #[error(transparent)]
    InvalidBbox(#[from] ModelError),
    #[error("zoom {0} outside [{MIN_ZOOM}, {MAX_ZOOM}]")]
    InvalidZoom(i64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    /// Smallest member ap_id.
    pub cluster_id: String,
    pub centroid: GeoPoint,
    pub member_ap_ids: BTreeSet<String>,
    pub size: usize,
}

/// Great-circle distance in meters.
pub fn haversine_m(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Radius used at a given map zoom: 40,000 km / 2^(zoom+3), halving per level.
pub fn zoom_radius_m(zoom: u8) -> f64 {
    40_000_000.0 / 2f64.powi(i32::from(zoom) + 3)
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

fn link_naive(points: &[GeoPoint], radius_m: f64, sets: &mut DisjointSet) {
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if haversine_m(&points[i], &points[j]) <= radius_m {
                sets.union(i, j);
            }
        }
    }
}

/// Cell dimensions (degrees) such that any two points within `radius_m`
/// land in the same or adjacent cells. `None` when no useful bound exists
/// (huge radius, or points close enough to a pole that longitude spans
/// become unbounded).
fn grid_geometry(points: &[GeoPoint], radius_m: f64) -> Option<(f64, f64, i64)> {
    let angle = radius_m / EARTH_RADIUS_M;
    if angle >= std::f64::consts::FRAC_PI_2 {
        return None;
    }
    // Inflate slightly so rounding in the bounds never drops a pair.
    let slack = 1.0 + 1e-9;
    let lat_cell = angle.to_degrees() * slack;
    let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0f64, f64::max);
    // sin²(d/2R) ≥ cos φ1 cos φ2 sin²(Δλ/2) ≥ cos²φmax sin²(Δλ/2)
    let s = (angle / 2.0).sin() / max_abs_lat.to_radians().cos();
    if s.is_nan() || s >= 1.0 {
        return None;
    }
    let lon_span = (2.0 * s.asin()).to_degrees() * slack;
    let lon_cells = (360.0 / lon_span).floor() as i64;
    if lon_cells < 3 {
        return None;
    }
    // Equal-width cells tiling the full circle, each at least `lon_span`.
    Some((lat_cell, 360.0 / lon_cells as f64, lon_cells))
}

fn link_grid(points: &[GeoPoint], radius_m: f64, sets: &mut DisjointSet) -> bool {
    let Some((lat_cell, lon_cell, lon_cells)) = grid_geometry(points, radius_m) else {
        return false;
    };
    let cell_of = |p: &GeoPoint| -> (i64, i64) {
        let row = ((p.lat + 90.0) / lat_cell).floor() as i64;
        let col = (((p.lon + 180.0) / lon_cell).floor() as i64).rem_euclid(lon_cells);
        (row, col)
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p)).or_default().push(i);
    }
    for (i, p) in points.iter().enumerate() {
        let (row, col) = cell_of(p);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let key = (row + dr, (col + dc).rem_euclid(lon_cells));
                let Some(bucket) = grid.get(&key) else { continue };
                for &j in bucket {
                    if j > i && haversine_m(p, &points[j]) <= radius_m {
                        sets.union(i, j);
                    }
                }
            }
        }
    }
    true
}

/// Connected components of the "within `radius_m`" graph over AP locations,
/// sorted by cluster id. A non-positive radius links only coincident points.
pub fn cluster_aps(aps: &[AccessPoint], radius_m: f64) -> Vec<Cluster> {
    let points: Vec<GeoPoint> = aps.iter().map(|ap| ap.location).collect();
    let mut sets = DisjointSet::new(points.len());
    if points.len() <= NAIVE_PAIRING_LIMIT || !link_grid(&points, radius_m, &mut sets) {
        link_naive(&points, radius_m, &mut sets);
    }

    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..points.len() {
        groups.entry(sets.find(i)).or_default().push(i);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_values()
        .map(|members| {
            let mut ordered: Vec<(&str, GeoPoint)> =
                members.iter().map(|&i| (aps[i].ap_id.as_str(), points[i])).collect();
            // Sum in id order so the centroid does not depend on input order.
            ordered.sort_by(|a, b| a.0.cmp(b.0).then(a.1.lat.total_cmp(&b.1.lat)));
            let n = ordered.len() as f64;
            let lat = ordered.iter().map(|(_, p)| p.lat).sum::<f64>() / n;
            let lon = ordered.iter().map(|(_, p)| p.lon).sum::<f64>() / n;
            let member_ap_ids: BTreeSet<String> = ordered.iter().map(|(id, _)| id.to_string()).collect();
            Cluster {
                cluster_id: ordered[0].0.to_string(),
                centroid: GeoPoint { lat, lon },
                size: member_ap_ids.len(),
                member_ap_ids,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    clusters
}

pub fn clusters_for_viewport(aps: &[AccessPoint], bbox: &Bbox, zoom: i64) -> Result<Vec<Cluster>, SpatialError> {
    bbox.validate()?;
    let zoom = u8::try_from(zoom)
        .ok()
        .filter(|z| (MIN_ZOOM..=MAX_ZOOM).contains(z))
        .ok_or(SpatialError::InvalidZoom(zoom))?;
    let visible: Vec<AccessPoint> = aps.iter().filter(|ap| bbox.contains(&ap.location)).cloned().collect();
    Ok(cluster_aps(&visible, zoom_radius_m(zoom)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ApSource;
    use proptest::prelude::*;

    fn ap(id: &str, lat: f64, lon: f64) -> AccessPoint {
        AccessPoint {
            ap_id: format!("ext:{id}"),
            bssid: None,
            ssid: id.to_string(),
            location: GeoPoint { lat, lon },
            place: None,
            source: ApSource::External,
        }
    }

    /// Degrees of longitude spanning `m` meters along the equator.
    fn eq_deg(m: f64) -> f64 {
        (m / EARTH_RADIUS_M).to_degrees()
    }

    /// Brute-force partition: union-find over every pair, as sorted id sets.
    fn oracle(aps: &[AccessPoint], radius: f64) -> Vec<Vec<String>> {
        let n = aps.len();
        let mut label: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n {
                if haversine_m(&aps[i].location, &aps[j].location) <= radius {
                    let (from, to) = (label[j], label[i]);
                    if from != to {
                        for l in label.iter_mut() {
                            if *l == from {
                                *l = to;
                            }
                        }
                    }
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
        for (i, l) in label.iter().enumerate() {
            groups.entry(*l).or_default().push(aps[i].ap_id.clone());
        }
        let mut out: Vec<Vec<String>> = groups
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        out.sort();
        out
    }

    fn partition(clusters: &[Cluster]) -> Vec<Vec<String>> {
        let mut out: Vec<Vec<String>> = clusters.iter().map(|c| c.member_ap_ids.iter().cloned().collect()).collect();
        out.sort();
        out
    }

    #[test]
    fn haversine_examples() {
        let a = GeoPoint { lat: 1.3521, lon: 103.8198 };
        assert_eq!(haversine_m(&a, &a), 0.0);
        let b = GeoPoint { lat: 1.3521, lon: 103.8298 };
        assert!((haversine_m(&a, &b) - 1112.0).abs() <= 1.0, "{}", haversine_m(&a, &b));
        let half = haversine_m(&GeoPoint { lat: 0.0, lon: 0.0 }, &GeoPoint { lat: 0.0, lon: 180.0 });
        assert!((half - 20_015_087.0).abs() <= 10.0, "{half}");
    }

    #[test]
    fn empty_input() {
        assert!(cluster_aps(&[], 100.0).is_empty());
    }

    #[test]
    fn chain_links_transitively() {
        let aps = [ap("a", 0.0, 0.0), ap("b", 0.0, eq_deg(50.0)), ap("c", 0.0, eq_deg(100.0))];
        let clusters = cluster_aps(&aps, 60.0);
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].size, 3);
        assert_eq!(clusters[0].cluster_id, "ext:a");
    }

    #[test]
    fn distant_pair_stays_apart() {
        let aps = [ap("a", 0.0, 0.0), ap("b", 0.0, eq_deg(500.0))];
        let clusters = cluster_aps(&aps, 100.0);
        assert_eq!(clusters.len(), 2);
        assert!(clusters.iter().all(|c| c.size == 1));
    }

    #[test]
    fn centroid_is_mean_of_members() {
        let aps = [ap("a", 1.0, 2.0), ap("b", 1.0002, 2.0004)];
        let c = &cluster_aps(&aps, 1_000.0)[0];
        assert!((c.centroid.lat - 1.0001).abs() < 1e-12);
        assert!((c.centroid.lon - 2.0002).abs() < 1e-12);
    }

    #[test]
    fn zoom_radius_halves() {
        assert!((zoom_radius_m(16) - 76.293_945_312_5).abs() < 1e-9);
        assert_eq!(zoom_radius_m(1) / 2.0, zoom_radius_m(2));
    }

    #[test]
    fn viewport_filters_and_validates() {
        let aps = [ap("in", 1.30, 103.80), ap("out", 1.50, 104.50)];
        let bbox = Bbox::new(1.2, 103.7, 1.4, 103.9).unwrap();
        let empty = Bbox::new(10.0, 10.0, 11.0, 11.0).unwrap();
        assert!(clusters_for_viewport(&aps, &empty, 12).unwrap().is_empty());
        for zoom in [1, 10, 20] {
            let c = clusters_for_viewport(&aps, &bbox, zoom).unwrap();
            assert_eq!(c.len(), 1);
            assert_eq!(c[0].cluster_id, "ext:in");
        }
        assert!(matches!(clusters_for_viewport(&aps, &bbox, 0), Err(SpatialError::InvalidZoom(0))));
        assert!(matches!(clusters_for_viewport(&aps, &bbox, 21), Err(SpatialError::InvalidZoom(21))));
        let inverted = Bbox { min_lat: 2.0, ..bbox };
        assert!(matches!(clusters_for_viewport(&aps, &inverted, 12), Err(SpatialError::InvalidBbox(_))));
    }

    /// Ten APs around a city block; offsets in meters east/north of a corner.
    pub(crate) fn ten_ap_fixture() -> Vec<AccessPoint> {
        let origin: (f64, f64) = (1.2800, 103.8500);
        let m_lat = 1.0 / 111_194.926_644_558_7;
        let m_lon = m_lat / origin.0.to_radians().cos();
        [
            (0.0, 0.0),
            (40.0, 10.0),
            (80.0, 0.0),
            (300.0, 300.0),
            (330.0, 340.0),
            (600.0, 0.0),
            (600.0, 75.0),
            (600.0, 160.0),
            (1000.0, 1000.0),
            (1070.0, 1010.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, (e, n))| ap(&format!("f{i}"), origin.0 + n * m_lat, origin.1 + e * m_lon))
        .collect()
    }

    #[test]
    fn ten_ap_fixture_at_zoom_16() {
        let aps = ten_ap_fixture();
        let bbox = Bbox::new(1.27, 103.84, 1.30, 103.87).unwrap();
        let clusters = clusters_for_viewport(&aps, &bbox, 16).unwrap();
        assert_eq!(partition(&clusters), oracle(&aps, zoom_radius_m(16)));
        let sizes: Vec<usize> = clusters.iter().map(|c| c.size).collect();
        // {f0,f1,f2} {f3,f4} {f5,f6} {f7} {f8,f9}
        assert_eq!(sizes, vec![3, 2, 2, 1, 2]);
    }

    #[test]
    fn grid_matches_naive_above_the_limit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let aps: Vec<AccessPoint> = (0..NAIVE_PAIRING_LIMIT + 500)
            .map(|i| ap(&format!("{i:05}"), rng.random_range(1.2..1.3), rng.random_range(103.7..103.8)))
            .collect();
        let points: Vec<GeoPoint> = aps.iter().map(|a| a.location).collect();
        let mut naive = DisjointSet::new(points.len());
        link_naive(&points, 150.0, &mut naive);
        let mut grid = DisjointSet::new(points.len());
        assert!(link_grid(&points, 150.0, &mut grid));
        for i in 0..points.len() {
            for j in [0, i / 2, points.len() - 1] {
                assert_eq!(naive.find(i) == naive.find(j), grid.find(i) == grid.find(j));
            }
        }
    }

    #[test]
    fn grid_handles_antimeridian_neighbours() {
        let points = vec![GeoPoint { lat: 10.0, lon: 179.9999 }, GeoPoint { lat: 10.0, lon: -179.9999 }];
        let mut grid = DisjointSet::new(2);
        assert!(link_grid(&points, 100.0, &mut grid));
        assert_eq!(grid.find(0), grid.find(1));
    }

    fn arb_points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((1.25f64..1.26, 103.80f64..103.81), 0..max)
    }

    fn to_aps(pts: &[(f64, f64)]) -> Vec<AccessPoint> {
        pts.iter().enumerate().map(|(i, (la, lo))| ap(&format!("{i:03}"), *la, *lo)).collect()
    }

    proptest! {
        #[test]
        fn matches_union_find_oracle(pts in arb_points(60), radius in 1.0f64..600.0) {
            let aps = to_aps(&pts);
            prop_assert_eq!(partition(&cluster_aps(&aps, radius)), oracle(&aps, radius));
        }

        #[test]
        fn clusters_partition_the_input(pts in arb_points(60), radius in 1.0f64..600.0) {
            let aps = to_aps(&pts);
            let clusters = cluster_aps(&aps, radius);
            prop_assert_eq!(clusters.iter().map(|c| c.size).sum::<usize>(), aps.len());
            let all: BTreeSet<&String> = clusters.iter().flat_map(|c| c.member_ap_ids.iter()).collect();
            prop_assert_eq!(all.len(), aps.len());
            for c in &clusters {
                prop_assert!(c.size >= 1);
                prop_assert_eq!(&c.cluster_id, c.member_ap_ids.iter().next().unwrap());
                let members: Vec<&AccessPoint> = aps.iter().filter(|a| c.member_ap_ids.contains(&a.ap_id)).collect();
                let min_lat = members.iter().map(|a| a.location.lat).fold(f64::INFINITY, f64::min);
                let max_lat = members.iter().map(|a| a.location.lat).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(c.centroid.lat >= min_lat - 1e-12 && c.centroid.lat <= max_lat + 1e-12);
            }
        }

        #[test]
        fn larger_radius_never_adds_clusters(pts in arb_points(60), r in 1.0f64..300.0, extra in 0.0f64..300.0) {
            let aps = to_aps(&pts);
            prop_assert!(cluster_aps(&aps, r + extra).len() <= cluster_aps(&aps, r).len());
        }

        #[test]
        fn input_order_is_irrelevant(pts in arb_points(40), radius in 1.0f64..600.0, seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let aps = to_aps(&pts);
            let mut shuffled = aps.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(cluster_aps(&aps, radius), cluster_aps(&shuffled, radius));
        }

        #[test]
        fn haversine_symmetric_non_negative(a in (-90.0f64..90.0, -179.9f64..180.0), b in (-90.0f64..90.0, -179.9f64..180.0)) {
            let (p, q) = (GeoPoint { lat: a.0, lon: a.1 }, GeoPoint { lat: b.0, lon: b.1 });
            prop_assert!(haversine_m(&p, &q) >= 0.0);
            prop_assert_eq!(haversine_m(&p, &q), haversine_m(&q, &p));
        }
    }
}
