//! Deterministic synthetic scenario generator.
//!
//! Emits a mutually consistent input set — grid road network, charging
//! stations with open dates, raw slot-format stay records, and a tract
//! grid with planted demographics — fully determined by the seed and
//! parameters, so regeneration is byte-identical.

use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::geo::M_PER_DEG_LAT;
use crate::trajectory::SLOTS_PER_WEEK;

#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub seed: u64,
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub edge_len_m: f64,
    pub speed_kmh: f64,
    pub station_count: u32,
    pub open_start: NaiveDate,
    pub open_end: NaiveDate,
    pub person_count: u32,
    /// Fraction of persons with no regular workplace.
    pub non_commuter_fraction: f64,
    /// Mean of the per-day Poisson draw for casual stops.
    pub other_stops_per_day_mean: f64,
    /// Per-day probability of a far excursion squeezed into a tight slot
    /// window (exercises the stay-duration repair).
    pub far_trip_fraction: f64,
    /// Fraction of far excursions placed so far away that donation alone
    /// cannot repair them.
    pub extreme_far_fraction: f64,
    pub tract_rows: u32,
    pub tract_cols: u32,
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Fraction of tracts with no dominant group planted.
    pub no_dominant_fraction: f64,
    /// Fraction of tracts with missing median income.
    pub missing_income_fraction: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        SyntheticScenario {
            seed: 1,
            grid_rows: 60,
            grid_cols: 60,
            edge_len_m: 500.0,
            speed_kmh: 40.0,
            station_count: 120,
            open_start: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            open_end: NaiveDate::from_ymd_opt(2024, 6, 30).unwrap(),
            person_count: 500,
            non_commuter_fraction: 0.4,
            other_stops_per_day_mean: 1.2,
            far_trip_fraction: 0.02,
            extreme_far_fraction: 0.05,
            tract_rows: 6,
            tract_cols: 6,
            origin_lon: -122.4,
            origin_lat: 37.2,
            no_dominant_fraction: 0.2,
            missing_income_fraction: 0.03,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub network_prefix: PathBuf,
    pub stations: PathBuf,
    pub trajectories: PathBuf,
    pub tracts: PathBuf,
    pub config: PathBuf,
}

impl SyntheticScenario {
    fn validate(&self) -> Result<()> {
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return Err(Error::validation("grid must be at least 2x2"));
        }
        if !(self.edge_len_m > 0.0) || !(self.speed_kmh > 0.0) {
            return Err(Error::validation("edge length and speed must be positive"));
        }
        if self.open_start > self.open_end {
            return Err(Error::validation("open_start must not exceed open_end"));
        }
        for (name, v) in [
            ("non_commuter_fraction", self.non_commuter_fraction),
            ("far_trip_fraction", self.far_trip_fraction),
            ("extreme_far_fraction", self.extreme_far_fraction),
            ("no_dominant_fraction", self.no_dominant_fraction),
            ("missing_income_fraction", self.missing_income_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must be in [0, 1]")));
            }
        }
        if self.tract_rows == 0 || self.tract_cols == 0 {
            return Err(Error::validation("tract grid must be nonempty"));
        }
        Ok(())
    }

    fn dlat(&self) -> f64 {
        self.edge_len_m / M_PER_DEG_LAT
    }

    fn dlon(&self) -> f64 {
        self.edge_len_m / (M_PER_DEG_LAT * self.origin_lat.to_radians().cos())
    }

    fn node_id(&self, r: u32, c: u32) -> u64 {
        (r as u64) * (self.grid_cols as u64) + c as u64
    }

    fn node_lonlat(&self, r: u32, c: u32) -> (f64, f64) {
        (
            self.origin_lon + c as f64 * self.dlon(),
            self.origin_lat + r as f64 * self.dlat(),
        )
    }

    /// Evenly spread annual snapshot cutoffs over the open-date range,
    /// ending exactly at `open_end`.
    pub fn default_cutoffs(&self, count: usize) -> Vec<NaiveDate> {
        let count = count.max(1);
        let y0 = chrono::Datelike::year(&self.open_start);
        let y1 = chrono::Datelike::year(&self.open_end);
        let mut out = Vec::with_capacity(count);
        for i in 0..count.saturating_sub(1) {
            let y = y0 + ((y1 - y0) as f64 * (i as f64 + 1.0) / count as f64).round() as i32;
            out.push(NaiveDate::from_ymd_opt(y, 12, 31).unwrap());
        }
        out.push(self.open_end);
        out.sort();
        out.dedup();
        out
    }
}

/// Generate all scenario files under `out_dir` plus a ready-to-run
/// pipeline config. Running twice with the same parameters produces
/// byte-identical files.
pub fn synth(scn: &SyntheticScenario, out_dir: &Path) -> Result<SynthPaths> {
    scn.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);

    let paths = SynthPaths {
        nodes: out_dir.join("net.nodes.csv"),
        edges: out_dir.join("net.edges.csv"),
        network_prefix: out_dir.join("net"),
        stations: out_dir.join("stations.csv"),
        trajectories: out_dir.join("trajectories.csv"),
        tracts: out_dir.join("tracts.geojson"),
        config: out_dir.join("run.conf"),
    };

    write_network(scn, &paths)?;
    write_stations(scn, &mut rng, &paths)?;
    write_trajectories(scn, &mut rng, &paths)?;
    write_tracts_grid(scn, &mut rng, &paths)?;
    write_config(scn, &paths)?;
    Ok(paths)
}

fn write_network(scn: &SyntheticScenario, paths: &SynthPaths) -> Result<()> {
    let travel_time_s = scn.edge_len_m / (scn.speed_kmh / 3.6);
    let mut nodes = String::from("node_id,lon,lat\n");
    let mut edges = String::from("from,to,length_m,travel_time_s\n");
    for r in 0..scn.grid_rows {
        for c in 0..scn.grid_cols {
            let (lon, lat) = scn.node_lonlat(r, c);
            nodes.push_str(&format!("{},{lon},{lat}\n", scn.node_id(r, c)));
            // Both directions for every segment.
            if c + 1 < scn.grid_cols {
                let (a, b) = (scn.node_id(r, c), scn.node_id(r, c + 1));
                edges.push_str(&format!("{a},{b},{},{travel_time_s}\n", scn.edge_len_m));
                edges.push_str(&format!("{b},{a},{},{travel_time_s}\n", scn.edge_len_m));
            }
            if r + 1 < scn.grid_rows {
                let (a, b) = (scn.node_id(r, c), scn.node_id(r + 1, c));
                edges.push_str(&format!("{a},{b},{},{travel_time_s}\n", scn.edge_len_m));
                edges.push_str(&format!("{b},{a},{},{travel_time_s}\n", scn.edge_len_m));
            }
        }
    }
    write_text(&paths.nodes, &nodes)?;
    write_text(&paths.edges, &edges)
}

fn write_stations(
    scn: &SyntheticScenario,
    rng: &mut ChaCha8Rng,
    paths: &SynthPaths,
) -> Result<()> {
    let day_span = (scn.open_end - scn.open_start).num_days().max(0);
    let mut out = String::from("station_id,lon,lat,open_date,l2_ports,dcfc_ports\n");
    for i in 0..scn.station_count {
        let r = rng.gen_range(0..scn.grid_rows);
        let c = rng.gen_range(0..scn.grid_cols);
        let (lon, lat) = scn.node_lonlat(r, c);
        // Jitter below half a cell keeps the intended snap node.
        let lon = lon + rng.gen_range(-0.3..0.3) * scn.dlon();
        let lat = lat + rng.gen_range(-0.3..0.3) * scn.dlat();
        let open = scn.open_start + chrono::Duration::days(rng.gen_range(0..=day_span));
        let mut l2: u32 = if rng.gen_bool(0.8) { rng.gen_range(1..=8) } else { 0 };
        let dcfc: u32 = if rng.gen_bool(0.4) { rng.gen_range(1..=4) } else { 0 };
        if l2 + dcfc == 0 {
            l2 = 1;
        }
        out.push_str(&format!("s{i:05},{lon},{lat},{open},{l2},{dcfc}\n"));
    }
    write_text(&paths.stations, &out)
}

struct PersonPlan {
    home: (u32, u32),
    work: Option<(u32, u32)>,
}

fn write_trajectories(
    scn: &SyntheticScenario,
    rng: &mut ChaCha8Rng,
    paths: &SynthPaths,
) -> Result<()> {
    let file = std::fs::File::create(&paths.trajectories)
        .map_err(|e| Error::io(&paths.trajectories, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(b"person_id,slot,kind,lon,lat\n")
        .map_err(|e| Error::io(&paths.trajectories, e))?;

    let poisson = if scn.other_stops_per_day_mean > 0.0 {
        Some(Poisson::new(scn.other_stops_per_day_mean).map_err(|e| {
            Error::validation(format!("other_stops_per_day_mean: {e}"))
        })?)
    } else {
        None
    };

    for i in 0..scn.person_count {
        let pid = format!("p{i:06}");
        let home = (rng.gen_range(0..scn.grid_rows), rng.gen_range(0..scn.grid_cols));
        let plan = PersonPlan {
            home,
            work: if rng.gen_bool(1.0 - scn.non_commuter_fraction) {
                Some(cell_near(scn, rng, home, 4, 20))
            } else {
                None
            },
        };
        let stays = person_week(scn, rng, &plan, poisson.as_ref());
        for (slot, kind, cell) in stays {
            let (lon, lat) = scn.node_lonlat(cell.0, cell.1);
            let lon = lon + rng.gen_range(-0.15..0.15) * scn.dlon();
            let lat = lat + rng.gen_range(-0.15..0.15) * scn.dlat();
            writeln!(w, "{pid},{slot},{kind},{lon},{lat}")
                .map_err(|e| Error::io(&paths.trajectories, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&paths.trajectories, e))
}

/// A cell at Chebyshev distance in [lo, hi] from `around`, clamped to
/// the grid.
fn cell_near(
    scn: &SyntheticScenario,
    rng: &mut ChaCha8Rng,
    around: (u32, u32),
    lo: i64,
    hi: i64,
) -> (u32, u32) {
    let (r0, c0) = (around.0 as i64, around.1 as i64);
    for _ in 0..16 {
        let dr = rng.gen_range(-hi..=hi);
        let dc = rng.gen_range(-hi..=hi);
        if dr.abs().max(dc.abs()) < lo {
            continue;
        }
        let r = r0 + dr;
        let c = c0 + dc;
        if r >= 0 && c >= 0 && (r as u32) < scn.grid_rows && (c as u32) < scn.grid_cols {
            return (r as u32, c as u32);
        }
    }
    // Dense fallback near the grid center.
    (
        (scn.grid_rows / 2 + (rng.gen_range(0..scn.grid_rows) % 3)).min(scn.grid_rows - 1),
        (scn.grid_cols / 2 + (rng.gen_range(0..scn.grid_cols) % 3)).min(scn.grid_cols - 1),
    )
}

/// One simulated week in raw slot records: (slot, kind, cell).
fn person_week(
    scn: &SyntheticScenario,
    rng: &mut ChaCha8Rng,
    plan: &PersonPlan,
    poisson: Option<&Poisson<f64>>,
) -> Vec<(u32, &'static str, (u32, u32))> {
    let mut stays: Vec<(u32, &'static str, (u32, u32))> = vec![(1, "home", plan.home)];
    let push = |stays: &mut Vec<(u32, &'static str, (u32, u32))>,
                    slot: u32,
                    kind: &'static str,
                    cell: (u32, u32)| {
        let slot = slot.max(stays.last().map(|s| s.0 + 1).unwrap_or(1));
        if slot <= SLOTS_PER_WEEK - 2 {
            stays.push((slot, kind, cell));
            true
        } else {
            false
        }
    };

    for day in 0..7u32 {
        let base = day * 144;
        let weekday = day < 5;
        let mut cursor = base + rng.gen_range(44..=54); // depart ~7:20-9:00

        if weekday {
            if let Some(work) = plan.work {
                if push(&mut stays, cursor, "work", work) {
                    cursor = stays.last().unwrap().0 + rng.gen_range(42..=54); // 7-9 h shift
                }
            }
        }

        let n_other: u32 = poisson
            .map(|p| p.sample(rng) as u32)
            .unwrap_or(0)
            .min(4);
        for _ in 0..n_other {
            if cursor >= base + 126 {
                break;
            }
            let cell = cell_near(scn, rng, plan.home, 1, 6);
            if push(&mut stays, cursor, "other", cell) {
                cursor = stays.last().unwrap().0 + rng.gen_range(3..=12);
            }
        }

        if rng.gen_bool(scn.far_trip_fraction) && cursor < base + 120 {
            let extreme = rng.gen_bool(scn.extreme_far_fraction);
            let (lo, hi, window) = if extreme {
                (60, 90, 1) // donation alone cannot cover the deficit
            } else {
                (18, 30, 2)
            };
            let cell = cell_near(scn, rng, plan.home, lo, hi);
            if push(&mut stays, cursor, "other", cell) {
                cursor = stays.last().unwrap().0 + window;
            }
        }

        // Evening return home.
        let return_slot = cursor.max(base + rng.gen_range(100..=138));
        push(&mut stays, return_slot, "home", plan.home);
    }
    stays
}

fn write_tracts_grid(
    scn: &SyntheticScenario,
    rng: &mut ChaCha8Rng,
    paths: &SynthPaths,
) -> Result<()> {
    // One cell of margin so jittered edge homes stay covered.
    let lon_min = scn.origin_lon - scn.dlon();
    let lat_min = scn.origin_lat - scn.dlat();
    let lon_max = scn.origin_lon + (scn.grid_cols as f64) * scn.dlon();
    let lat_max = scn.origin_lat + (scn.grid_rows as f64) * scn.dlat();
    let step_lon = (lon_max - lon_min) / scn.tract_cols as f64;
    let step_lat = (lat_max - lat_min) / scn.tract_rows as f64;

    let mut tracts = Vec::new();
    for tr in 0..scn.tract_rows {
        for tc in 0..scn.tract_cols {
            let x0 = lon_min + tc as f64 * step_lon;
            let y0 = lat_min + tr as f64 * step_lat;
            let ring = vec![
                (x0, y0),
                (x0 + step_lon, y0),
                (x0 + step_lon, y0 + step_lat),
                (x0, y0 + step_lat),
                (x0, y0),
            ];

            // Share order: [white, black, asian, hispanic].
            let dominant = if rng.gen_bool(scn.no_dominant_fraction) {
                None
            } else {
                Some(rng.gen_range(0..4))
            };
            let shares: [f64; 4] = match dominant {
                None => {
                    // Every share stays below the dominance threshold.
                    let mut s = [0.0f64; 4];
                    for v in s.iter_mut() {
                        *v = rng.gen_range(15.0..35.0);
                    }
                    s
                }
                Some(g) => {
                    let top: f64 = rng.gen_range(42.0..70.0);
                    let mut s = [0.0f64; 4];
                    let mut rest: f64 = 100.0 - top;
                    for (i, v) in s.iter_mut().enumerate() {
                        if i == g {
                            *v = top;
                        } else {
                            let part = rng.gen_range(0.0..rest.min(30.0));
                            *v = part;
                            rest -= part;
                        }
                    }
                    s
                }
            };
            let median_income = if rng.gen_bool(scn.missing_income_fraction) {
                None
            } else {
                Some((rng.gen_range(40_000.0..200_000.0f64) / 100.0).round() * 100.0)
            };
            tracts.push(
                crate::tracts::TractRecord::new(
                    format!("T{tr:03}{tc:03}"),
                    vec![vec![ring]],
                    rng.gen_range(2500..8000),
                    round2(shares[3]),
                    round2(shares[0]),
                    round2(shares[1]),
                    round2(shares[2]),
                    median_income,
                    round2(rng.gen_range(30.0..95.0)),
                )?,
            );
        }
    }
    crate::tracts::write_tracts(&paths.tracts, &tracts)
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn write_config(scn: &SyntheticScenario, paths: &SynthPaths) -> Result<()> {
    let cutoffs: Vec<String> = scn
        .default_cutoffs(5)
        .into_iter()
        .map(|d| d.to_string())
        .collect();
    let text = format!(
        "# generated scenario configuration (seed {seed})\n\
         network = {net}\n\
         stations = {stations}\n\
         trajectories = {trajs}\n\
         tracts = {tracts}\n\
         cutoffs = {cutoffs}\n\
         thresholds = 500,1000,2000,3000\n\
         port_types = l2,dcfc\n\
         radius_m = 3000\n\
         workers = 0\n",
        seed = scn.seed,
        net = paths.network_prefix.display(),
        stations = paths.stations.display(),
        trajs = paths.trajectories.display(),
        tracts = paths.tracts.display(),
        cutoffs = cutoffs.join(","),
    );
    write_text(&paths.config, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
