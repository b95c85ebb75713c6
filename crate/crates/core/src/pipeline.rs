//! End-to-end pipeline orchestration behind the CLI: load inputs, build
//! snapshots and the proximity table (cacheable), route and repair
//! trajectories, run the batch metric evaluation, aggregate to tracts,
//! and emit statistics and plot-data bundles plus a run manifest.
//!
//! Everything after scenario synthesis is deterministic: identical
//! config and inputs produce byte-identical artifacts regardless of the
//! worker count. The manifest records wall-clock timings and is the one
//! file excluded from that guarantee.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::access::{
    batch_compute_with_norm, AccessResult, PortsNorm, SegmentSpec, TouPeriod, TouSchedule,
};
use crate::error::{Error, Result};
use crate::exec::Workers;
use crate::network::{load_network, RoadNetwork};
use crate::stations::{
    build_proximity_table, build_snapshot, load_stations, PortType, ProximityTable, Snapshot,
};
use crate::stats::{
    aggregate_by_tract, disparity_regression, dominant_group, gini, quantile_sorted, TractStats,
};
use crate::tracts::{assign_all, load_tracts, TractRecord};
use crate::trajectory::{ingest_raw, process_corpus, write_processed, Trajectory};

pub const STANDARD_THRESHOLDS: [f64; 4] = [500.0, 1000.0, 2000.0, 3000.0];
pub const DEFAULT_RADIUS_M: f64 = 3000.0;
pub const DEFAULT_PRIMARY_THRESHOLD_M: f64 = 1000.0;

/// Full configuration of a pipeline run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Road network path prefix: `<prefix>.nodes.csv` and
    /// `<prefix>.edges.csv`.
    pub network_prefix: PathBuf,
    pub stations: PathBuf,
    pub trajectories: PathBuf,
    pub tracts: PathBuf,
    pub out_dir: PathBuf,
    /// Optional proximity-table cache: loaded when present, written after
    /// a fresh build otherwise.
    pub table_cache: Option<PathBuf>,
    pub cutoffs: Vec<NaiveDate>,
    pub thresholds: Vec<f64>,
    pub port_types: Vec<PortType>,
    /// Segment tokens: `all`, a stay kind, or a period name.
    pub segments: Vec<String>,
    pub tou: TouSchedule,
    pub radius_m: f64,
    pub allow_custom_threshold: bool,
    pub workers: Workers,
    /// Polynomial degree of the log-income control; `None` skips the
    /// disparity regression.
    pub regress_degree: Option<usize>,
    pub primary_threshold_m: f64,
    /// Normalize the ports variant by matched stay time instead of the
    /// horizon (fixture mode).
    pub toy_ports_norm: bool,
}

impl RunConfig {
    pub fn default_segments(tou: &TouSchedule) -> Vec<String> {
        let mut seg = vec!["all".to_string(), "home".into(), "work".into(), "other".into()];
        seg.extend(tou.period_names().map(str::to_string));
        seg
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() {
            return Err(Error::validation("at least one snapshot cutoff is required"));
        }
        if self.thresholds.is_empty() {
            return Err(Error::validation("at least one distance threshold is required"));
        }
        for &d in &self.thresholds {
            if !self.allow_custom_threshold && !STANDARD_THRESHOLDS.contains(&d) {
                return Err(Error::validation(format!(
                    "threshold {d} m is not one of {STANDARD_THRESHOLDS:?}; \
                     pass allow_custom_threshold to override"
                )));
            }
            if d > self.radius_m {
                return Err(Error::validation(format!(
                    "threshold {d} m exceeds the proximity build radius {} m",
                    self.radius_m
                )));
            }
        }
        if self.port_types.is_empty() {
            return Err(Error::validation("at least one port type is required"));
        }
        if self.segments.is_empty() {
            return Err(Error::validation("at least one segment is required"));
        }
        if let Some(deg) = self.regress_degree {
            if deg > 4 {
                return Err(Error::validation("regress_degree must be 0..=4"));
            }
        }
        Ok(())
    }

    /// Resolve segment tokens against the schedule.
    pub fn segment_specs(&self) -> Result<Vec<SegmentSpec>> {
        self.segments
            .iter()
            .map(|token| parse_segment(token, &self.tou))
            .collect()
    }
}

fn parse_segment(token: &str, tou: &TouSchedule) -> Result<SegmentSpec> {
    let t = token.trim();
    if t.eq_ignore_ascii_case("all") {
        return Ok(SegmentSpec::all());
    }
    if let Ok(kind) = crate::trajectory::StayKind::parse(t) {
        return Ok(SegmentSpec::for_kind(kind));
    }
    if tou.period_index(t).is_some() {
        return Ok(SegmentSpec::for_tou(t));
    }
    Err(Error::validation(format!(
        "unknown segment `{t}` (expected all, a stay kind, or a period name)"
    )))
}

/// Parse a simple `key = value` config file: one pair per line, `#`
/// comments, later keys override earlier ones.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::parse(path, (i + 1) as u64, "expected `key = value`"));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Known configuration keys, shared by the file parser and CLI overrides.
const CONFIG_KEYS: [&str; 15] = [
    "network",
    "stations",
    "trajectories",
    "tracts",
    "out_dir",
    "table_cache",
    "cutoffs",
    "thresholds",
    "port_types",
    "segments",
    "tou",
    "radius_m",
    "allow_custom_threshold",
    "workers",
    "regress_degree",
];
const CONFIG_KEYS_EXTRA: [&str; 2] = ["primary_threshold_m", "toy_ports_norm"];

/// Build a [`RunConfig`] from a config map (file contents merged with
/// CLI overrides, overrides winning).
pub fn build_run_config(map: &BTreeMap<String, String>) -> Result<RunConfig> {
    for key in map.keys() {
        if !CONFIG_KEYS.contains(&key.as_str()) && !CONFIG_KEYS_EXTRA.contains(&key.as_str()) {
            return Err(Error::validation(format!("unknown config key `{key}`")));
        }
    }
    let need = |key: &str| -> Result<&String> {
        map.get(key)
            .ok_or_else(|| Error::validation(format!("missing config key `{key}`")))
    };
    let tou = match map.get("tou") {
        Some(spec) => parse_tou_spec(spec)?,
        None => TouSchedule::default_tou(),
    };
    let segments = match map.get("segments") {
        Some(s) => split_list(s),
        None => RunConfig::default_segments(&tou),
    };
    let cfg = RunConfig {
        network_prefix: PathBuf::from(need("network")?),
        stations: PathBuf::from(need("stations")?),
        trajectories: PathBuf::from(need("trajectories")?),
        tracts: PathBuf::from(need("tracts")?),
        out_dir: PathBuf::from(need("out_dir")?),
        table_cache: map.get("table_cache").map(PathBuf::from),
        cutoffs: split_list(need("cutoffs")?)
            .iter()
            .map(|s| parse_date(s))
            .collect::<Result<_>>()?,
        thresholds: match map.get("thresholds") {
            Some(s) => split_list(s)
                .iter()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::validation(format!("threshold `{v}`: {e}")))
                })
                .collect::<Result<_>>()?,
            None => STANDARD_THRESHOLDS.to_vec(),
        },
        port_types: match map.get("port_types") {
            Some(s) => split_list(s)
                .iter()
                .map(|v| PortType::parse(v))
                .collect::<Result<_>>()?,
            None => PortType::ALL.to_vec(),
        },
        segments,
        tou,
        radius_m: parse_or(map, "radius_m", DEFAULT_RADIUS_M)?,
        allow_custom_threshold: parse_or(map, "allow_custom_threshold", false)?,
        workers: crate::exec::resolve_workers(None, parse_opt(map, "workers")?),
        regress_degree: match map.get("regress_degree").map(String::as_str) {
            None => Some(1),
            Some("none") => None,
            Some(v) => Some(v.parse::<usize>().map_err(|e| {
                Error::validation(format!("regress_degree `{v}`: {e}"))
            })?),
        },
        primary_threshold_m: parse_or(map, "primary_threshold_m", DEFAULT_PRIMARY_THRESHOLD_M)?,
        toy_ports_norm: parse_or(map, "toy_ports_norm", false)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::validation(format!("bad date `{s}`: {e}")))
}

fn parse_or<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse::<T>()
            .map_err(|e| Error::validation(format!("config `{key}` = `{v}`: {e}"))),
    }
}

fn parse_opt<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|e| Error::validation(format!("config `{key}` = `{v}`: {e}"))),
    }
}

/// Parse `name:HH:MM-HH:MM[,HH:MM-HH:MM];name:...` into a schedule.
pub fn parse_tou_spec(spec: &str) -> Result<TouSchedule> {
    let mut periods = Vec::new();
    for part in spec.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, windows_str) = part
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("bad period spec `{part}`")))?;
        let mut windows = Vec::new();
        for w in windows_str.split(',') {
            let (a, b) = w
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::validation(format!("bad window `{w}`")))?;
            windows.push((parse_clock(a)?, parse_clock(b)?));
        }
        periods.push(TouPeriod {
            name: name.trim().to_string(),
            windows,
        });
    }
    TouSchedule::new(periods)
}

fn parse_clock(s: &str) -> Result<u32> {
    let s = s.trim();
    let (h, m) = s
        .split_once(':')
        .ok_or_else(|| Error::validation(format!("bad clock time `{s}`")))?;
    let h: u32 = h
        .parse()
        .map_err(|e| Error::validation(format!("bad clock time `{s}`: {e}")))?;
    let m: u32 = m
        .parse()
        .map_err(|e| Error::validation(format!("bad clock time `{s}`: {e}")))?;
    if h > 24 || m > 59 || (h == 24 && m != 0) {
        return Err(Error::validation(format!("bad clock time `{s}`")));
    }
    Ok(h * 60 + m)
}

/// Tracks files written by a run so a failed stage can remove partial
/// output.
struct Artifacts {
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn new() -> Self {
        Artifacts { written: Vec::new() }
    }

    fn track(&mut self, path: &Path) {
        self.written.push(path.to_path_buf());
    }

    fn discard_all(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// (path, sha256) of every artifact, manifest excluded.
    pub outputs: Vec<(PathBuf, String)>,
    pub timings: Vec<(String, f64)>,
    pub persons: usize,
    pub unassigned_persons: usize,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Execute the full pipeline. On stage failure, partial outputs are
/// removed and the error names the stage.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut artifacts = Artifacts::new();
    let mut timings: Vec<(String, f64)> = Vec::new();
    match run_stages(cfg, &mut artifacts, &mut timings) {
        Ok(summary) => Ok(summary),
        Err(e) => {
            artifacts.discard_all();
            Err(e)
        }
    }
}

fn run_stages(
    cfg: &RunConfig,
    artifacts: &mut Artifacts,
    timings: &mut Vec<(String, f64)>,
) -> Result<RunSummary> {
    let segments = cfg.segment_specs()?;
    let nodes_path = network_file(&cfg.network_prefix, "nodes");
    let edges_path = network_file(&cfg.network_prefix, "edges");

    let net = stage("load_network", timings, || {
        load_network(&nodes_path, &edges_path)
    })?;
    let stations = stage("load_stations", timings, || {
        load_stations(&cfg.stations, &net)
    })?;
    let records = stage("ingest", timings, || ingest_raw(&cfg.trajectories, &net))?;

    let processed_path = cfg.out_dir.join("processed_trajectories.csv");
    let report_path = cfg.out_dir.join("repair_report.json");
    let (trajectories, routing, repair) = stage("route_repair", timings, || {
        let out = process_corpus(&net, &records, cfg.workers)?;
        write_processed(&processed_path, &out.0)?;
        Ok(out)
    })?;
    artifacts.track(&processed_path);
    write_json(
        &report_path,
        &json!({
            "persons": trajectories.len(),
            "routing": routing,
            "repair": repair,
        }),
    )?;
    artifacts.track(&report_path);

    let snapshots: Vec<Snapshot> = stage("snapshots", timings, || {
        Ok(cfg
            .cutoffs
            .iter()
            .map(|&c| build_snapshot(&stations, c))
            .collect())
    })?;

    let table_path = cfg.out_dir.join("proximity_table.csv");
    let table = stage("proximity_table", timings, || {
        let table = obtain_table(cfg, &net, &trajectories, &stations)?;
        table.write_csv(&table_path)?;
        Ok(table)
    })?;
    artifacts.track(&table_path);

    let results_path = cfg.out_dir.join("results.csv");
    let results = stage("access", timings, || {
        let norm = if cfg.toy_ports_norm {
            PortsNorm::StayTime
        } else {
            PortsNorm::Horizon
        };
        let results = batch_compute_with_norm(
            &trajectories,
            &table,
            &snapshots,
            &cfg.port_types,
            &cfg.thresholds,
            &segments,
            &cfg.tou,
            norm,
            cfg.workers,
        )?;
        write_results_csv(&results_path, &results)?;
        Ok(results)
    })?;
    artifacts.track(&results_path);

    let tracts = stage("load_tracts", timings, || load_tracts(&cfg.tracts))?;

    let homes_path = cfg.out_dir.join("home_tracts.csv");
    let home_map = stage("assign_tracts", timings, || {
        let points: Vec<(f64, f64)> = trajectories.iter().map(|t| t.home).collect();
        let assigned = assign_all(&points, &tracts, cfg.workers);
        let map: BTreeMap<String, Option<String>> = trajectories
            .iter()
            .zip(assigned)
            .map(|(t, a)| (t.person_id.clone(), a))
            .collect();
        write_homes_csv(&homes_path, &map)?;
        Ok(map)
    })?;
    artifacts.track(&homes_path);

    let tract_stats_path = cfg.out_dir.join("tract_stats.csv");
    let (tract_stats, unassigned) = stage("aggregate", timings, || {
        let out = aggregate_by_tract(&results, &home_map)?;
        write_tract_stats_csv(&tract_stats_path, &out.0)?;
        Ok(out)
    })?;
    artifacts.track(&tract_stats_path);

    let plot_files = stage("stats", timings, || {
        emit_plot_data(
            &cfg.out_dir,
            &tract_stats,
            &tracts,
            cfg.primary_threshold_m,
            cfg.regress_degree,
        )
    })?;
    for p in &plot_files {
        artifacts.track(p);
    }

    // Manifest: hash inputs and every artifact written above.
    let mut outputs = Vec::new();
    for p in &artifacts.written {
        outputs.push((p.clone(), file_sha256(p)?));
    }
    let inputs = [
        nodes_path.clone(),
        edges_path.clone(),
        cfg.stations.clone(),
        cfg.trajectories.clone(),
        cfg.tracts.clone(),
    ];
    let mut input_hashes = Vec::new();
    for p in &inputs {
        input_hashes.push(json!({"path": p.display().to_string(), "sha256": file_sha256(p)?}));
    }
    let manifest_path = cfg.out_dir.join("run_manifest.json");
    write_json(
        &manifest_path,
        &json!({
            "tool": "tiacs",
            "config": config_echo(cfg),
            "inputs": input_hashes,
            "outputs": outputs
                .iter()
                .map(|(p, h)| json!({"path": p.display().to_string(), "sha256": h}))
                .collect::<Vec<_>>(),
            "stages": timings
                .iter()
                .map(|(name, secs)| json!({"name": name, "seconds": secs}))
                .collect::<Vec<_>>(),
            "persons": trajectories.len(),
            "unassigned_persons": unassigned,
        }),
    )?;

    Ok(RunSummary {
        out_dir: cfg.out_dir.clone(),
        outputs,
        timings: timings.clone(),
        persons: trajectories.len(),
        unassigned_persons: unassigned,
    })
}

pub fn network_file(prefix: &Path, part: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    name.push('.');
    name.push_str(part);
    name.push_str(".csv");
    prefix.with_file_name(name)
}

fn obtain_table(
    cfg: &RunConfig,
    net: &RoadNetwork,
    trajectories: &[Trajectory],
    stations: &[crate::stations::ChargingStation],
) -> Result<ProximityTable> {
    let stay_nodes: std::collections::BTreeSet<_> = trajectories
        .iter()
        .flat_map(|t| t.stays.iter().map(|s| s.node))
        .collect();
    if let Some(cache) = &cfg.table_cache {
        if cache.exists() {
            log::info!("loading proximity table from cache {}", cache.display());
            return ProximityTable::read_csv(cache, stations, cfg.radius_m);
        }
    }
    let table = build_proximity_table(net, &stay_nodes, stations, cfg.radius_m, true, cfg.workers)?;
    if let Some(cache) = &cfg.table_cache {
        table.write_csv(cache)?;
    }
    Ok(table)
}

fn stage<T>(
    name: &'static str,
    timings: &mut Vec<(String, f64)>,
    f: impl FnOnce() -> Result<T>,
) -> Result<T> {
    let t0 = Instant::now();
    let result = f().map_err(|e| e.in_stage(name));
    let secs = t0.elapsed().as_secs_f64();
    timings.push((name.to_string(), secs));
    log::info!("stage {name}: {secs:.2}s");
    result
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    json!({
        "network": cfg.network_prefix.display().to_string(),
        "stations": cfg.stations.display().to_string(),
        "trajectories": cfg.trajectories.display().to_string(),
        "tracts": cfg.tracts.display().to_string(),
        "out_dir": cfg.out_dir.display().to_string(),
        "table_cache": cfg.table_cache.as_ref().map(|p| p.display().to_string()),
        "cutoffs": cfg.cutoffs.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
        "thresholds": cfg.thresholds.clone(),
        "port_types": cfg.port_types.iter().map(|p| p.label()).collect::<Vec<_>>(),
        "segments": cfg.segments.clone(),
        "radius_m": cfg.radius_m,
        "workers": cfg.workers,
        "regress_degree": cfg.regress_degree,
        "primary_threshold_m": cfg.primary_threshold_m,
        "toy_ports_norm": cfg.toy_ports_norm,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_results_csv(path: &Path, results: &[AccessResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    w.write_record([
        "person_id",
        "port_type",
        "d_m",
        "cutoff",
        "kind_filter",
        "tou_filter",
        "hours_per_day",
        "ports_avg",
    ])
    .map_err(|e| Error::validation(e.to_string()))?;
    for r in results {
        w.write_record([
            r.person_id.as_ref(),
            r.port_type.label(),
            &format!("{}", r.threshold_m),
            &r.cutoff.to_string(),
            r.kind_filter.as_ref(),
            r.tou_filter.as_ref(),
            &format!("{}", r.hours_per_day),
            &format!("{}", r.ports_avg),
        ])
        .map_err(|e| Error::validation(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_homes_csv(path: &Path, homes: &BTreeMap<String, Option<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    w.write_record(["person_id", "geoid"])
        .map_err(|e| Error::validation(e.to_string()))?;
    for (pid, geoid) in homes {
        w.write_record([pid.as_str(), geoid.as_deref().unwrap_or("")])
            .map_err(|e| Error::validation(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_tract_stats_csv(path: &Path, stats: &[TractStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    w.write_record([
        "geoid",
        "port_type",
        "d_m",
        "cutoff",
        "kind_filter",
        "tou_filter",
        "n",
        "mean_hours",
        "mean_ports",
    ])
    .map_err(|e| Error::validation(e.to_string()))?;
    for s in stats {
        w.write_record([
            s.geoid.as_str(),
            s.port_type.label(),
            &format!("{}", s.threshold_m),
            &s.cutoff.to_string(),
            s.kind_filter.as_str(),
            s.tou_filter.as_str(),
            &s.n_residents.to_string(),
            &format!("{}", s.mean_hours),
            &format!("{}", s.mean_ports),
        ])
        .map_err(|e| Error::validation(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read tract stats back (the `stats` and `regress` subcommands work
/// from the aggregate artifact).
pub fn read_tract_stats_csv(path: &Path) -> Result<Vec<TractStats>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = (i + 2) as u64;
        let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if rec.len() != 9 {
            return Err(Error::parse(path, line, "expected 9 fields"));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::parse(path, line, e.to_string()))
        };
        out.push(TractStats {
            geoid: rec[0].to_string(),
            port_type: PortType::parse(&rec[1]).map_err(|e| {
                Error::parse(path, line, e.to_string())
            })?,
            threshold_m: parse_f(&rec[2])?,
            cutoff: parse_date(&rec[3]).map_err(|e| Error::parse(path, line, e.to_string()))?,
            kind_filter: rec[4].to_string(),
            tou_filter: rec[5].to_string(),
            n_residents: rec[6]
                .parse::<u64>()
                .map_err(|e| Error::parse(path, line, e.to_string()))?,
            mean_hours: parse_f(&rec[7])?,
            mean_ports: parse_f(&rec[8])?,
        });
    }
    Ok(out)
}

/// Write the plot-data bundles from tract-level statistics:
/// choropleth table, segment breakdown with quartiles, Gini trends,
/// per-group CDFs on the multi-unit-dwelling subset, and (optionally)
/// the disparity regression coefficient table. Returns the files
/// written.
pub fn emit_plot_data(
    out_dir: &Path,
    tract_stats: &[TractStats],
    tracts: &[TractRecord],
    primary_threshold_m: f64,
    regress_degree: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let mut written = emit_stats_bundles(out_dir, tract_stats, tracts, primary_threshold_m)?;
    if let Some(degree) = regress_degree {
        written.push(emit_regression(
            &out_dir.join("regression.csv"),
            tract_stats,
            tracts,
            primary_threshold_m,
            degree,
        )?);
    }
    Ok(written)
}

/// The non-regression plot bundles: choropleth, breakdown, Gini trend,
/// per-group CDFs.
pub fn emit_stats_bundles(
    out_dir: &Path,
    tract_stats: &[TractStats],
    tracts: &[TractRecord],
    primary_threshold_m: f64,
) -> Result<Vec<PathBuf>> {
    if tract_stats.is_empty() {
        return Err(Error::validation(
            "no tract statistics; run aggregation first",
        ));
    }
    let mut written = Vec::new();
    let population: BTreeMap<&str, f64> = tracts
        .iter()
        .map(|t| (t.geoid.as_str(), t.population as f64))
        .collect();

    // Choropleth: per-tract means for the unrestricted segment.
    let choropleth = out_dir.join("choropleth.csv");
    {
        let mut w = csv::Writer::from_path(&choropleth)
            .map_err(|e| Error::validation(format!("{}: {e}", choropleth.display())))?;
        w.write_record(["geoid", "port_type", "d_m", "cutoff", "mean_hours", "mean_ports"])
            .map_err(|e| Error::validation(e.to_string()))?;
        for s in tract_stats.iter().filter(|s| s.kind_filter == "all" && s.tou_filter == "all") {
            w.write_record([
                s.geoid.as_str(),
                s.port_type.label(),
                &format!("{}", s.threshold_m),
                &s.cutoff.to_string(),
                &format!("{}", s.mean_hours),
                &format!("{}", s.mean_ports),
            ])
            .map_err(|e| Error::validation(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&choropleth, e))?;
    }
    written.push(choropleth);

    // Group rows by metric cell (type, d, cutoff, segment).
    type CellKey = (u8, u64, NaiveDate, String, String);
    let mut cells: BTreeMap<CellKey, Vec<&TractStats>> = BTreeMap::new();
    for s in tract_stats {
        let key = (
            match s.port_type {
                PortType::L2 => 0,
                PortType::Dcfc => 1,
            },
            s.threshold_m.to_bits(),
            s.cutoff,
            s.kind_filter.clone(),
            s.tou_filter.clone(),
        );
        cells.entry(key).or_default().push(s);
    }

    let breakdown = out_dir.join("breakdown.csv");
    let gini_trend = out_dir.join("gini_trend.csv");
    {
        let mut wb = csv::Writer::from_path(&breakdown)
            .map_err(|e| Error::validation(format!("{}: {e}", breakdown.display())))?;
        wb.write_record([
            "port_type",
            "d_m",
            "cutoff",
            "kind_filter",
            "tou_filter",
            "n_tracts",
            "mean_hours",
            "weighted_mean_hours",
            "q25",
            "q50",
            "q75",
        ])
        .map_err(|e| Error::validation(e.to_string()))?;
        let mut wg = csv::Writer::from_path(&gini_trend)
            .map_err(|e| Error::validation(format!("{}: {e}", gini_trend.display())))?;
        wg.write_record(["port_type", "d_m", "cutoff", "kind_filter", "tou_filter", "gini_hours"])
            .map_err(|e| Error::validation(e.to_string()))?;

        for ((pt, dbits, cutoff, kind, tou), rows) in &cells {
            let label = if *pt == 0 { "l2" } else { "dcfc" };
            let d = f64::from_bits(*dbits);
            let values: Vec<f64> = rows.iter().map(|s| s.mean_hours).collect();
            let weights: Vec<f64> = rows
                .iter()
                .map(|s| population.get(s.geoid.as_str()).copied().unwrap_or(0.0))
                .collect();
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let wsum: f64 = weights.iter().sum();
            let wmean = if wsum > 0.0 {
                values.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / wsum
            } else {
                mean
            };
            wb.write_record([
                label,
                &format!("{d}"),
                &cutoff.to_string(),
                kind,
                tou,
                &rows.len().to_string(),
                &format!("{mean}"),
                &format!("{wmean}"),
                &format!("{}", quantile_sorted(&sorted, 0.25)),
                &format!("{}", quantile_sorted(&sorted, 0.50)),
                &format!("{}", quantile_sorted(&sorted, 0.75)),
            ])
            .map_err(|e| Error::validation(e.to_string()))?;
            wg.write_record([
                label,
                &format!("{d}"),
                &cutoff.to_string(),
                kind,
                tou,
                &format!("{}", gini(&values)?),
            ])
            .map_err(|e| Error::validation(e.to_string()))?;
        }
        wb.flush().map_err(|e| Error::io(&breakdown, e))?;
        wg.flush().map_err(|e| Error::io(&gini_trend, e))?;
    }
    written.push(breakdown);
    written.push(gini_trend);

    // Per-group CDFs: latest cutoff, primary threshold, unrestricted
    // segment, restricted to the multi-unit-dwelling tract subset.
    let latest = tract_stats.iter().map(|s| s.cutoff).max().unwrap();
    let mud: BTreeMap<&str, &TractRecord> = crate::stats::mud_filter(tracts)
        .into_iter()
        .map(|t| (t.geoid.as_str(), t))
        .collect();
    let cdf_path = out_dir.join("cdf_groups.csv");
    {
        let mut w = csv::Writer::from_path(&cdf_path)
            .map_err(|e| Error::validation(format!("{}: {e}", cdf_path.display())))?;
        w.write_record(["port_type", "group", "value", "cum_frac"])
            .map_err(|e| Error::validation(e.to_string()))?;
        for pt in [PortType::L2, PortType::Dcfc] {
            let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for s in tract_stats {
                if s.port_type != pt
                    || s.cutoff != latest
                    || s.threshold_m != primary_threshold_m
                    || s.kind_filter != "all"
                    || s.tou_filter != "all"
                {
                    continue;
                }
                let Some(tract) = mud.get(s.geoid.as_str()) else {
                    continue;
                };
                let group = dominant_group(tract).map(|g| g.label()).unwrap_or("none");
                by_group.entry(group).or_default().push(s.mean_hours);
            }
            for (group, mut values) in by_group {
                values.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = values.len() as f64;
                for (i, v) in values.iter().enumerate() {
                    w.write_record([
                        pt.label(),
                        group,
                        &format!("{v}"),
                        &format!("{}", (i as f64 + 1.0) / n),
                    ])
                    .map_err(|e| Error::validation(e.to_string()))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(&cdf_path, e))?;
    }
    written.push(cdf_path);

    Ok(written)
}

/// Per-(port type, cutoff) disparity regression of the tract-mean hours
/// metric at the primary threshold, on the multi-unit-dwelling subset.
/// Significance is flagged at p < .05 two-sided.
pub fn emit_regression(
    out_path: &Path,
    tract_stats: &[TractStats],
    tracts: &[TractRecord],
    primary_threshold_m: f64,
    degree: usize,
) -> Result<PathBuf> {
    let mud_tracts: Vec<TractRecord> =
        crate::stats::mud_filter(tracts).into_iter().cloned().collect();
    let mut w = csv::Writer::from_path(out_path)
        .map_err(|e| Error::validation(format!("{}: {e}", out_path.display())))?;
    w.write_record([
        "port_type", "cutoff", "term", "beta", "se", "ci_lo", "ci_hi", "p", "significant",
    ])
    .map_err(|e| Error::validation(e.to_string()))?;
    let cutoffs: std::collections::BTreeSet<NaiveDate> =
        tract_stats.iter().map(|s| s.cutoff).collect();
    for pt in [PortType::L2, PortType::Dcfc] {
        for &cutoff in &cutoffs {
            let metrics: Vec<(String, f64)> = tract_stats
                .iter()
                .filter(|s| {
                    s.port_type == pt
                        && s.cutoff == cutoff
                        && s.threshold_m == primary_threshold_m
                        && s.kind_filter == "all"
                        && s.tou_filter == "all"
                })
                .map(|s| (s.geoid.clone(), s.mean_hours))
                .collect();
            if metrics.is_empty() {
                continue;
            }
            let outcome = disparity_regression(&metrics, &mud_tracts, degree)?;
            let r = &outcome.result;
            for i in 0..r.terms.len() {
                w.write_record([
                    pt.label(),
                    &cutoff.to_string(),
                    r.terms[i].as_str(),
                    &format!("{}", r.beta[i]),
                    &format!("{}", r.se[i]),
                    &format!("{}", r.ci_lo[i]),
                    &format!("{}", r.ci_hi[i]),
                    &format!("{}", r.p_value[i]),
                    if r.p_value[i] < 0.05 { "1" } else { "0" },
                ])
                .map_err(|e| Error::validation(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(out_path.to_path_buf())
}

/// One verification check outcome.
#[derive(Debug, Clone)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Run the oracle-equivalence suite on a freshly generated sample
/// scenario: interval evaluation vs the minute-resolution oracle,
/// segment additivity, monotonicity in threshold and cutoff, and
/// great-circle prefilter losslessness.
pub fn verify_sample(
    seed: u64,
    persons: u32,
    workers: Workers,
    work_dir: &Path,
) -> Result<Vec<VerifyCheck>> {
    use crate::access::{ti_acs, ti_acs_oracle};
    use crate::synth::{synth, SyntheticScenario};

    let scn = SyntheticScenario {
        seed,
        person_count: persons,
        grid_rows: 24,
        grid_cols: 24,
        station_count: 60,
        far_trip_fraction: 0.15,
        ..Default::default()
    };
    let paths = synth(&scn, work_dir)?;
    let net = load_network(&paths.nodes, &paths.edges)?;
    let stations = load_stations(&paths.stations, &net)?;
    let records = ingest_raw(&paths.trajectories, &net)?;
    let (trajectories, _, _) = process_corpus(&net, &records, workers)?;
    let stay_nodes: std::collections::BTreeSet<_> = trajectories
        .iter()
        .flat_map(|t| t.stays.iter().map(|s| s.node))
        .collect();

    let with_pf =
        build_proximity_table(&net, &stay_nodes, &stations, DEFAULT_RADIUS_M, true, workers)?;
    let without_pf =
        build_proximity_table(&net, &stay_nodes, &stations, DEFAULT_RADIUS_M, false, workers)?;

    let sched = TouSchedule::default_tou();
    let mut segments = vec![SegmentSpec::all()];
    segments.extend(crate::trajectory::StayKind::ALL.map(SegmentSpec::for_kind));
    segments.extend(sched.period_names().map(SegmentSpec::for_tou).collect::<Vec<_>>());
    let cutoffs = scn.default_cutoffs(3);
    let snapshots: Vec<Snapshot> = cutoffs.iter().map(|&c| build_snapshot(&stations, c)).collect();

    let mut checks = Vec::new();
    checks.push(VerifyCheck {
        name: "prefilter_lossless",
        passed: with_pf == without_pf,
        detail: format!(
            "{} entries with prefilter, {} without",
            with_pf.entry_count(),
            without_pf.entry_count()
        ),
    });

    let mut oracle_mismatches = 0usize;
    let mut additivity_violations = 0usize;
    let mut monotonicity_violations = 0usize;
    let mut cells = 0usize;
    for traj in &trajectories {
        for snap in &snapshots {
            for pt in PortType::ALL {
                let mut prev_hours = -1.0f64;
                let mut prev_ports = -1.0f64;
                for d in STANDARD_THRESHOLDS {
                    let mut by_segment = Vec::new();
                    for seg in &segments {
                        let fast = ti_acs(traj, &with_pf, snap, pt, d, seg, &sched)?;
                        let slow = ti_acs_oracle(traj, &with_pf, snap, pt, d, seg, &sched)?;
                        cells += 1;
                        if fast != slow {
                            oracle_mismatches += 1;
                        }
                        by_segment.push(fast);
                    }
                    let all = by_segment[0].hours_per_day;
                    let kind_sum: f64 = by_segment[1..4].iter().map(|r| r.hours_per_day).sum();
                    let tou_sum: f64 = by_segment[4..7].iter().map(|r| r.hours_per_day).sum();
                    if (kind_sum - all).abs() > 1e-9 || (tou_sum - all).abs() > 1e-9 {
                        additivity_violations += 1;
                    }
                    if all < prev_hours || by_segment[0].ports_avg < prev_ports {
                        monotonicity_violations += 1;
                    }
                    prev_hours = all;
                    prev_ports = by_segment[0].ports_avg;
                }
            }
        }
    }
    // Monotonicity across snapshot cutoffs at the primary threshold.
    for traj in &trajectories {
        for pt in PortType::ALL {
            let mut prev = -1.0f64;
            for snap in &snapshots {
                let r = ti_acs(
                    traj,
                    &with_pf,
                    snap,
                    pt,
                    DEFAULT_PRIMARY_THRESHOLD_M,
                    &segments[0],
                    &sched,
                )?;
                if r.hours_per_day < prev {
                    monotonicity_violations += 1;
                }
                prev = r.hours_per_day;
            }
        }
    }

    checks.push(VerifyCheck {
        name: "oracle_equivalence",
        passed: oracle_mismatches == 0,
        detail: format!("{oracle_mismatches} mismatches over {cells} cells"),
    });
    checks.push(VerifyCheck {
        name: "segment_additivity",
        passed: additivity_violations == 0,
        detail: format!("{additivity_violations} violations"),
    });
    checks.push(VerifyCheck {
        name: "monotonicity",
        passed: monotonicity_violations == 0,
        detail: format!("{monotonicity_violations} violations"),
    });
    Ok(checks)
}
