//! Great-circle distance and a grid-based spatial index.
//!
//! The index is purely an accelerator: every query is defined by (and
//! tested against) exhaustive linear-scan semantics, with ties broken by
//! the caller-supplied key.

use crate::error::{Error, Result};

/// Spherical earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude on the sphere.
pub const M_PER_DEG_LAT: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Beyond this latitude the grid-ring distance bounds degrade; queries
/// fall back to a linear scan.
const GRID_LAT_LIMIT: f64 = 85.0;

/// Haversine distance in meters between two (lon, lat) points in degrees.
///
/// Symmetric, zero only for identical points. Errors on out-of-range
/// coordinates.
pub fn great_circle(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_coords(a)?;
    check_coords(b)?;
    Ok(great_circle_unchecked(a, b))
}

/// Haversine distance without range validation, for hot loops over
/// already-validated coordinates.
pub fn great_circle_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

pub fn check_coords((lon, lat): (f64, f64)) -> Result<()> {
    if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
        return Err(Error::validation(format!(
            "coordinates ({lon}, {lat}) out of range"
        )));
    }
    Ok(())
}

/// Uniform-cell spatial hash over (lon, lat) points.
///
/// Cell size defaults to roughly one kilometer of latitude. Point
/// coordinates stay with the owner; the index stores only positions into
/// the owner's slice, so `nearest` and `within_radius` take the
/// coordinate slice again on every call.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_deg: f64,
    cells: std::collections::HashMap<(i32, i32), Vec<u32>>,
    cell_min: (i32, i32),
    cell_max: (i32, i32),
    max_abs_lat: f64,
    near_antimeridian: bool,
    len: usize,
}

/// ~1 km of latitude per cell.
pub const DEFAULT_CELL_DEG: f64 = 0.009;

impl GridIndex {
    pub fn build(points: &[(f64, f64)], cell_deg: f64) -> GridIndex {
        let mut cells: std::collections::HashMap<(i32, i32), Vec<u32>> =
            std::collections::HashMap::new();
        let mut cell_min = (i32::MAX, i32::MAX);
        let mut cell_max = (i32::MIN, i32::MIN);
        let mut max_abs_lat: f64 = 0.0;
        for (i, &(lon, lat)) in points.iter().enumerate() {
            let c = cell_of(lon, lat, cell_deg);
            cell_min = (cell_min.0.min(c.0), cell_min.1.min(c.1));
            cell_max = (cell_max.0.max(c.0), cell_max.1.max(c.1));
            max_abs_lat = max_abs_lat.max(lat.abs());
            cells.entry(c).or_default().push(i as u32);
        }
        // Cell arithmetic does not wrap at +/-180; data near the seam
        // falls back to linear scans.
        let near_antimeridian = points
            .iter()
            .any(|&(lon, _)| lon < -179.0 || lon > 179.0);
        GridIndex {
            cell_deg,
            cells,
            cell_min,
            cell_max,
            max_abs_lat,
            near_antimeridian,
            len: points.len(),
        }
    }

    fn must_scan(&self, query: (f64, f64)) -> bool {
        self.max_abs_lat > GRID_LAT_LIMIT
            || query.1.abs() > GRID_LAT_LIMIT
            || self.near_antimeridian
            || query.0 < -179.0
            || query.0 > 179.0
    }

    /// Nearest point to `query` with ties broken by the smallest `key`.
    /// Result is identical to a linear scan minimizing `(distance, key)`.
    pub fn nearest<K: Ord + Copy>(
        &self,
        query: (f64, f64),
        points: &[(f64, f64)],
        keys: &[K],
    ) -> Option<(u32, f64)> {
        if self.len == 0 {
            return None;
        }
        if self.must_scan(query) {
            return linear_nearest(query, points, keys);
        }

        let qc = cell_of(query.0, query.1, self.cell_deg);
        // Farthest occupied cell, in rings; no point lies beyond it.
        let ring_cap = chebyshev_to_bbox(qc, self.cell_min, self.cell_max);

        let mut best: Option<(f64, K, u32)> = None;
        let mut ring = 0i32;
        let mut stop_ring = ring_cap;
        while ring <= stop_ring {
            for cell in ring_cells(qc, ring) {
                let Some(members) = self.cells.get(&cell) else {
                    continue;
                };
                for &i in members {
                    let d = great_circle_unchecked(query, points[i as usize]);
                    let cand = (d, keys[i as usize], i);
                    if best.map_or(true, |b| (cand.0, cand.1) < (b.0, b.1)) {
                        best = Some(cand);
                    }
                }
            }
            if let Some((bd, _, _)) = best {
                // A ring can still hold a point at distance <= bd while
                // (ring - 1) * cell span <= bd in either axis; equality
                // matters for deterministic tie-breaking.
                let lat_step = self.cell_deg * M_PER_DEG_LAT;
                let lon_factor = (EARTH_RADIUS_M / 90.0)
                    * (query.1.to_radians().cos() * self.max_abs_lat.to_radians().cos())
                        .max(0.0)
                        .sqrt();
                let lon_step = self.cell_deg * lon_factor;
                let r_lat = (bd / lat_step).floor() as i32 + 1;
                let r_lon = if lon_step > 0.0 {
                    (bd / lon_step).floor() as i32 + 1
                } else {
                    ring_cap
                };
                stop_ring = r_lat.max(r_lon).min(ring_cap);
            }
            ring += 1;
        }
        best.map(|(d, _, i)| (i, d))
    }

    /// Indices of all points with great-circle distance <= `radius_m`
    /// from `query`. Unordered.
    pub fn within_radius(
        &self,
        query: (f64, f64),
        radius_m: f64,
        points: &[(f64, f64)],
    ) -> Vec<u32> {
        if self.len == 0 {
            return Vec::new();
        }
        if self.must_scan(query) {
            return linear_within(query, radius_m, points);
        }
        let dlat_deg = radius_m / M_PER_DEG_LAT;
        let lon_factor = (EARTH_RADIUS_M / 90.0)
            * (query.1.to_radians().cos() * self.max_abs_lat.to_radians().cos())
                .max(0.0)
                .sqrt();
        if lon_factor <= 0.0 {
            return linear_within(query, radius_m, points);
        }
        let dlon_deg = radius_m / lon_factor;

        let lo = cell_of(query.0 - dlon_deg, query.1 - dlat_deg, self.cell_deg);
        let hi = cell_of(query.0 + dlon_deg, query.1 + dlat_deg, self.cell_deg);
        let mut out = Vec::new();
        for cx in lo.0.max(self.cell_min.0)..=hi.0.min(self.cell_max.0) {
            for cy in lo.1.max(self.cell_min.1)..=hi.1.min(self.cell_max.1) {
                if let Some(members) = self.cells.get(&(cx, cy)) {
                    for &i in members {
                        if great_circle_unchecked(query, points[i as usize]) <= radius_m {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out
    }
}

fn cell_of(lon: f64, lat: f64, cell_deg: f64) -> (i32, i32) {
    ((lon / cell_deg).floor() as i32, (lat / cell_deg).floor() as i32)
}

fn chebyshev_to_bbox(q: (i32, i32), min: (i32, i32), max: (i32, i32)) -> i32 {
    let dx = (q.0 - min.0).abs().max((q.0 - max.0).abs());
    let dy = (q.1 - min.1).abs().max((q.1 - max.1).abs());
    dx.max(dy)
}

fn ring_cells(center: (i32, i32), r: i32) -> Vec<(i32, i32)> {
    if r == 0 {
        return vec![center];
    }
    let mut cells = Vec::with_capacity(8 * r as usize);
    for dx in -r..=r {
        cells.push((center.0 + dx, center.1 - r));
        cells.push((center.0 + dx, center.1 + r));
    }
    for dy in (-r + 1)..r {
        cells.push((center.0 - r, center.1 + dy));
        cells.push((center.0 + r, center.1 + dy));
    }
    cells
}

fn linear_nearest<K: Ord + Copy>(
    query: (f64, f64),
    points: &[(f64, f64)],
    keys: &[K],
) -> Option<(u32, f64)> {
    let mut best: Option<(f64, K, u32)> = None;
    for (i, &p) in points.iter().enumerate() {
        let d = great_circle_unchecked(query, p);
        let cand = (d, keys[i], i as u32);
        if best.map_or(true, |b| (cand.0, cand.1) < (b.0, b.1)) {
            best = Some(cand);
        }
    }
    best.map(|(d, _, i)| (i, d))
}

fn linear_within(query: (f64, f64), radius_m: f64, points: &[(f64, f64)]) -> Vec<u32> {
    points
        .iter()
        .enumerate()
        .filter(|(_, &p)| great_circle_unchecked(query, p) <= radius_m)
        .map(|(i, _)| i as u32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_points_are_zero() {
        assert_eq!(great_circle((12.5, 48.1), (12.5, 48.1)).unwrap(), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        let d = great_circle((0.0, 0.0), (0.0, 1.0)).unwrap();
        assert!((d - 111_195.0).abs() < 10.0, "got {d}");
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(great_circle((181.0, 0.0), (0.0, 0.0)).is_err());
        assert!(great_circle((0.0, 0.0), (0.0, 91.0)).is_err());
    }

    #[test]
    fn symmetric_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a = (rng.gen_range(-180.0..180.0), rng.gen_range(-89.0..89.0));
            let b = (rng.gen_range(-180.0..180.0), rng.gen_range(-89.0..89.0));
            assert_eq!(
                great_circle(a, b).unwrap(),
                great_circle(b, a).unwrap(),
                "asymmetric for {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn grid_nearest_matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let points: Vec<(f64, f64)> = (0..800)
            .map(|_| (rng.gen_range(-122.6..-121.6), rng.gen_range(37.0..38.0)))
            .collect();
        // Shuffled keys so index order differs from key order.
        let keys: Vec<u64> = (0..800u64).map(|i| (i * 7919) % 800).collect();
        let idx = GridIndex::build(&points, DEFAULT_CELL_DEG);
        for _ in 0..500 {
            let q = (rng.gen_range(-122.7..-121.5), rng.gen_range(36.9..38.1));
            let got = idx.nearest(q, &points, &keys).unwrap();
            let want = linear_nearest(q, &points, &keys).unwrap();
            assert_eq!(got, want, "query {q:?}");
        }
    }

    #[test]
    fn grid_within_radius_matches_linear_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let points: Vec<(f64, f64)> = (0..500)
            .map(|_| (rng.gen_range(-122.6..-121.6), rng.gen_range(37.0..38.0)))
            .collect();
        let idx = GridIndex::build(&points, DEFAULT_CELL_DEG);
        for _ in 0..200 {
            let q = (rng.gen_range(-122.6..-121.6), rng.gen_range(37.0..38.0));
            let r = rng.gen_range(100.0..5000.0);
            let mut got = idx.within_radius(q, r, &points);
            let mut want = linear_within(q, r, &points);
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
        }
    }
}
