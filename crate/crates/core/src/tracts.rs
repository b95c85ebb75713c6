//! Census tracts: GeoJSON loading, validation, and point-in-polygon
//! assignment.
//!
//! Tracts are (multi)polygons with demographic properties. Containment
//! uses even-odd ray casting over all rings, so holes are respected;
//! points on a shared boundary resolve to the tract with the smaller
//! geoid because candidates are tested in geoid order.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec::{self, Workers};

/// One polygon as rings of (lon, lat): first ring is the outer boundary,
/// the rest are holes. Rings are closed (first vertex == last).
pub type Rings = Vec<Vec<(f64, f64)>>;

#[derive(Debug, Clone)]
pub struct TractRecord {
    pub geoid: String,
    /// One or more polygons (islands supported).
    pub polygons: Vec<Rings>,
    pub population: u64,
    pub pct_hispanic: f64,
    pub pct_white: f64,
    pub pct_black: f64,
    pub pct_asian: f64,
    /// Median household income; absent values are dropped (and counted)
    /// by downstream regressions.
    pub median_income: Option<f64>,
    /// Percentage of households in structures of 2 or more units.
    pub pct_mud: f64,
    bbox: (f64, f64, f64, f64),
}

impl TractRecord {
    pub fn new(
        geoid: String,
        polygons: Vec<Rings>,
        population: u64,
        pct_hispanic: f64,
        pct_white: f64,
        pct_black: f64,
        pct_asian: f64,
        median_income: Option<f64>,
        pct_mud: f64,
    ) -> Result<TractRecord> {
        if polygons.is_empty() {
            return Err(Error::validation(format!("tract {geoid}: no geometry")));
        }
        for rings in &polygons {
            if rings.is_empty() {
                return Err(Error::validation(format!("tract {geoid}: empty polygon")));
            }
            for ring in rings {
                if ring.len() < 4 {
                    return Err(Error::validation(format!(
                        "tract {geoid}: ring with fewer than 4 vertices"
                    )));
                }
                if ring.first() != ring.last() {
                    return Err(Error::validation(format!(
                        "tract {geoid}: unclosed ring"
                    )));
                }
            }
        }
        for (name, v) in [
            ("pct_hispanic", pct_hispanic),
            ("pct_white", pct_white),
            ("pct_black", pct_black),
            ("pct_asian", pct_asian),
            ("pct_mud", pct_mud),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::validation(format!(
                    "tract {geoid}: {name} = {v} outside [0, 100]"
                )));
            }
        }
        if let Some(i) = median_income {
            if !(i > 0.0) {
                return Err(Error::validation(format!(
                    "tract {geoid}: median_income must be positive"
                )));
            }
        }
        let mut bbox = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for rings in &polygons {
            for ring in rings {
                for &(x, y) in ring {
                    bbox.0 = bbox.0.min(x);
                    bbox.1 = bbox.1.min(y);
                    bbox.2 = bbox.2.max(x);
                    bbox.3 = bbox.3.max(y);
                }
            }
        }
        Ok(TractRecord {
            geoid,
            polygons,
            population,
            pct_hispanic,
            pct_white,
            pct_black,
            pct_asian,
            median_income,
            pct_mud,
            bbox,
        })
    }

    /// Even-odd containment over all rings of all polygons.
    pub fn contains(&self, point: (f64, f64)) -> bool {
        let (x, y) = point;
        if x < self.bbox.0 || y < self.bbox.1 || x > self.bbox.2 || y > self.bbox.3 {
            return false;
        }
        self.polygons.iter().any(|rings| {
            let mut inside = false;
            for ring in rings {
                for seg in ring.windows(2) {
                    let (x1, y1) = seg[0];
                    let (x2, y2) = seg[1];
                    if (y1 > y) != (y2 > y) {
                        let x_cross = x1 + (y - y1) / (y2 - y1) * (x2 - x1);
                        if x < x_cross {
                            inside = !inside;
                        }
                    }
                }
            }
            inside
        })
    }
}

/// Geoid of the tract containing the point, or `None`. Tracts must be
/// sorted by geoid (as [`load_tracts`] guarantees) so that boundary ties
/// resolve to the smaller geoid.
pub fn assign_tract<'a>(point: (f64, f64), tracts: &'a [TractRecord]) -> Option<&'a str> {
    tracts
        .iter()
        .find(|t| t.contains(point))
        .map(|t| t.geoid.as_str())
}

/// Assign many points in parallel, preserving input order.
pub fn assign_all(
    points: &[(f64, f64)],
    tracts: &[TractRecord],
    workers: Workers,
) -> Vec<Option<String>> {
    exec::map_ordered(points, workers, |&p| {
        assign_tract(p, tracts).map(str::to_string)
    })
}

fn f64_prop(props: &Value, key: &str) -> Result<f64> {
    props
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::validation(format!("tract property `{key}` missing or not a number")))
}

/// Load a GeoJSON FeatureCollection of tracts. Features need Polygon or
/// MultiPolygon geometry and properties `geoid, population, pct_hispanic,
/// pct_white, pct_black, pct_asian, median_income, pct_mud`
/// (`median_income` may be null). Output is sorted by geoid.
pub fn load_tracts(path: &Path) -> Result<Vec<TractRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::validation(format!(
            "{}: expected a GeoJSON FeatureCollection",
            path.display()
        )));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation(format!("{}: missing features", path.display())))?;

    let mut tracts = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let props = feat
            .get("properties")
            .ok_or_else(|| Error::validation(format!("feature {i}: missing properties")))?;
        let geoid = props
            .get("geoid")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::validation(format!("feature {i}: missing geoid")))?
            .to_string();
        let geom = feat
            .get("geometry")
            .ok_or_else(|| Error::validation(format!("tract {geoid}: missing geometry")))?;
        let polygons = parse_geometry(geom)
            .map_err(|e| Error::validation(format!("tract {geoid}: {e}")))?;
        let population = props
            .get("population")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::validation(format!("tract {geoid}: missing population")))?;
        let median_income = match props.get("median_income") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| {
                Error::validation(format!("tract {geoid}: median_income not a number"))
            })?),
        };
        tracts.push(TractRecord::new(
            geoid,
            polygons,
            population,
            f64_prop(props, "pct_hispanic")?,
            f64_prop(props, "pct_white")?,
            f64_prop(props, "pct_black")?,
            f64_prop(props, "pct_asian")?,
            median_income,
            f64_prop(props, "pct_mud")?,
        )?);
    }
    tracts.sort_by(|a, b| a.geoid.cmp(&b.geoid));
    for pair in tracts.windows(2) {
        if pair[0].geoid == pair[1].geoid {
            return Err(Error::validation(format!(
                "duplicate tract geoid {}",
                pair[0].geoid
            )));
        }
    }
    Ok(tracts)
}

fn parse_geometry(geom: &Value) -> std::result::Result<Vec<Rings>, String> {
    let gtype = geom
        .get("type")
        .and_then(Value::as_str)
        .ok_or("geometry without type")?;
    let coords = geom.get("coordinates").ok_or("geometry without coordinates")?;
    match gtype {
        "Polygon" => Ok(vec![parse_rings(coords)?]),
        "MultiPolygon" => coords
            .as_array()
            .ok_or("MultiPolygon coordinates must be an array")?
            .iter()
            .map(parse_rings)
            .collect(),
        other => Err(format!("unsupported geometry type {other}")),
    }
}

fn parse_rings(v: &Value) -> std::result::Result<Rings, String> {
    v.as_array()
        .ok_or("polygon must be an array of rings")?
        .iter()
        .map(|ring| {
            ring.as_array()
                .ok_or("ring must be an array")?
                .iter()
                .map(|pt| {
                    let pair = pt.as_array().ok_or("vertex must be [lon, lat]")?;
                    if pair.len() < 2 {
                        return Err("vertex must be [lon, lat]".to_string());
                    }
                    Ok((
                        pair[0].as_f64().ok_or("lon not a number")?,
                        pair[1].as_f64().ok_or("lat not a number")?,
                    ))
                })
                .collect()
        })
        .collect()
}

/// Write tracts as a GeoJSON FeatureCollection in geoid order.
pub fn write_tracts(path: &Path, tracts: &[TractRecord]) -> Result<()> {
    let features: Vec<Value> = tracts
        .iter()
        .map(|t| {
            let coords: Vec<Value> = t
                .polygons
                .iter()
                .map(|rings| {
                    json!(rings
                        .iter()
                        .map(|ring| ring.iter().map(|&(x, y)| json!([x, y])).collect::<Vec<_>>())
                        .collect::<Vec<_>>())
                })
                .collect();
            let geometry = if coords.len() == 1 {
                json!({"type": "Polygon", "coordinates": coords[0]})
            } else {
                json!({"type": "MultiPolygon", "coordinates": coords})
            };
            json!({
                "type": "Feature",
                "geometry": geometry,
                "properties": {
                    "geoid": t.geoid,
                    "population": t.population,
                    "pct_hispanic": t.pct_hispanic,
                    "pct_white": t.pct_white,
                    "pct_black": t.pct_black,
                    "pct_asian": t.pct_asian,
                    "median_income": t.median_income,
                    "pct_mud": t.pct_mud,
                }
            })
        })
        .collect();
    let doc = json!({"type": "FeatureCollection", "features": features});
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(geoid: &str, x0: f64, y0: f64, size: f64) -> TractRecord {
        let ring = vec![
            (x0, y0),
            (x0 + size, y0),
            (x0 + size, y0 + size),
            (x0, y0 + size),
            (x0, y0),
        ];
        TractRecord::new(
            geoid.to_string(),
            vec![vec![ring]],
            3000,
            25.0,
            25.0,
            25.0,
            25.0,
            Some(90_000.0),
            60.0,
        )
        .unwrap()
    }

    #[test]
    fn centroid_maps_to_its_tract() {
        let tracts = vec![square("A", 0.0, 0.0, 1.0), square("B", 1.0, 0.0, 1.0)];
        assert_eq!(assign_tract((0.5, 0.5), &tracts), Some("A"));
        assert_eq!(assign_tract((1.5, 0.5), &tracts), Some("B"));
    }

    #[test]
    fn outside_is_unassigned() {
        let tracts = vec![square("A", 0.0, 0.0, 1.0)];
        assert_eq!(assign_tract((5.0, 5.0), &tracts), None);
    }

    #[test]
    fn hole_is_excluded() {
        let outer = vec![(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (0.0, 0.0)];
        let hole = vec![(1.0, 1.0), (3.0, 1.0), (3.0, 3.0), (1.0, 3.0), (1.0, 1.0)];
        let t = TractRecord::new(
            "H".into(),
            vec![vec![outer, hole]],
            3000,
            25.0,
            25.0,
            25.0,
            25.0,
            None,
            50.0,
        )
        .unwrap();
        assert!(t.contains((0.5, 0.5)));
        assert!(!t.contains((2.0, 2.0)), "point in hole");
    }

    #[test]
    fn unclosed_ring_rejected() {
        let open_ring = vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let err = TractRecord::new(
            "X".into(),
            vec![vec![open_ring]],
            1,
            0.0,
            0.0,
            0.0,
            0.0,
            None,
            0.0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unclosed"), "{err}");
    }

    #[test]
    fn geojson_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracts.geojson");
        let tracts = vec![square("A", 0.0, 0.0, 1.0), square("B", 1.0, 0.0, 1.0)];
        write_tracts(&path, &tracts).unwrap();
        let back = load_tracts(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].geoid, "A");
        assert_eq!(back[0].polygons, tracts[0].polygons);
        assert_eq!(back[0].median_income, Some(90_000.0));
    }

    /// Winding-number containment, used as an independent oracle.
    fn winding_contains(rings: &Rings, p: (f64, f64)) -> bool {
        // Non-zero winding over the outer ring minus holes is not what we
        // implement; this oracle mirrors even-odd semantics by counting
        // winding parity per ring.
        let mut parity = false;
        for ring in rings {
            let mut winding = 0i32;
            for seg in ring.windows(2) {
                let (_, y1) = seg[0];
                let (_, y2) = seg[1];
                if y1 <= p.1 {
                    if y2 > p.1 && cross(seg[0], seg[1], p) > 0.0 {
                        winding += 1;
                    }
                } else if y2 <= p.1 && cross(seg[0], seg[1], p) < 0.0 {
                    winding -= 1;
                }
            }
            if winding != 0 {
                parity = !parity;
            }
        }
        parity
    }

    fn cross(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
        (b.0 - a.0) * (p.1 - a.1) - (p.0 - a.0) * (b.1 - a.1)
    }

    #[test]
    fn matches_winding_number_oracle_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        // A 4x4 grid of square tracts plus one tract with a hole.
        let mut tracts = Vec::new();
        for r in 0..4 {
            for c in 0..4 {
                tracts.push(square(&format!("T{r}{c}"), c as f64, r as f64, 1.0));
            }
        }
        let outer = vec![(5.0, 5.0), (7.0, 5.0), (7.0, 7.0), (5.0, 7.0), (5.0, 5.0)];
        let hole = vec![(5.5, 5.5), (6.5, 5.5), (6.5, 6.5), (5.5, 6.5), (5.5, 5.5)];
        tracts.push(
            TractRecord::new(
                "ZH".into(),
                vec![vec![outer, hole]],
                100,
                10.0,
                10.0,
                10.0,
                10.0,
                None,
                10.0,
            )
            .unwrap(),
        );
        for _ in 0..10_000 {
            let p = (rng.gen_range(-0.5..7.5), rng.gen_range(-0.5..7.5));
            for t in &tracts {
                let want = t.polygons.iter().any(|rings| winding_contains(rings, p));
                assert_eq!(t.contains(p), want, "tract {} point {p:?}", t.geoid);
            }
        }
    }

    #[test]
    fn interior_points_map_to_exactly_one_tract() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut tracts = Vec::new();
        for r in 0..3 {
            for c in 0..3 {
                tracts.push(square(&format!("T{r}{c}"), c as f64, r as f64, 1.0));
            }
        }
        for _ in 0..5_000 {
            let p = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
            let hits: Vec<&str> = tracts
                .iter()
                .filter(|t| t.contains(p))
                .map(|t| t.geoid.as_str())
                .collect();
            assert_eq!(hits.len(), 1, "point {p:?} hit {hits:?}");
        }
    }
}
