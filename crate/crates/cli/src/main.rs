//! `tiacs`: trajectory-integrated accessibility of public EV charging
//! infrastructure.
//!
//! Exit codes: 0 success, 2 validation / input error, 3 stage failure.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tiacs_core::access::TouSchedule;
use tiacs_core::error::Error;
use tiacs_core::network::load_network;
use tiacs_core::pipeline::{
    self, build_run_config, emit_regression, emit_stats_bundles, network_file, parse_config_file,
    parse_date, read_tract_stats_csv, DEFAULT_PRIMARY_THRESHOLD_M, DEFAULT_RADIUS_M,
};
use tiacs_core::stations::{build_proximity_table, load_stations, PortType, ProximityTable};
use tiacs_core::stats::aggregate_by_tract;
use tiacs_core::synth::{synth, SyntheticScenario};
use tiacs_core::tracts::{assign_all, load_tracts};
use tiacs_core::trajectory::{ingest_raw, process_corpus, read_processed, write_processed};

#[derive(Parser)]
#[command(
    name = "tiacs",
    about = "Trajectory-integrated accessibility of public EV charging stations",
    version
)]
struct Cli {
    /// Worker count for parallel stages (0 = all cores). The
    /// TIACS_WORKERS environment variable applies when the flag is
    /// absent.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario (network, stations, trajectories,
    /// tracts) plus a ready-to-run config.
    Synth(SynthArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
    /// Build (or rebuild) the stay-node / charger proximity table.
    BuildTable(BuildTableArgs),
    /// Route travel times and repair stay durations.
    Repair(RepairArgs),
    /// Batch-evaluate the accessibility metrics.
    Compute(ComputeArgs),
    /// Aggregate per-person results to census tracts.
    Aggregate(AggregateArgs),
    /// Emit distribution statistics and plot-data bundles.
    Stats(StatsArgs),
    /// Run the group-disparity regression.
    Regress(RegressArgs),
    /// Run the oracle-equivalence suite on a generated sample.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    persons: u32,
    #[arg(long, default_value_t = 60)]
    grid_rows: u32,
    #[arg(long, default_value_t = 60)]
    grid_cols: u32,
    #[arg(long, default_value_t = 120)]
    stations: u32,
    #[arg(long, default_value_t = 500.0)]
    edge_len_m: f64,
    #[arg(long, default_value_t = 40.0)]
    speed_kmh: f64,
    #[arg(long, default_value_t = 0.4)]
    non_commuter_fraction: f64,
    #[arg(long, default_value_t = 1.2)]
    other_stops_mean: f64,
    #[arg(long, default_value_t = 0.02)]
    far_trip_fraction: f64,
    #[arg(long, default_value_t = 0.05)]
    extreme_far_fraction: f64,
    #[arg(long, default_value_t = 6)]
    tract_rows: u32,
    #[arg(long, default_value_t = 6)]
    tract_cols: u32,
}

#[derive(Args)]
struct RunArgs {
    /// Config file (`key = value` lines). Flags and --set pairs win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override any config key, e.g. --set thresholds=500,1000.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct BuildTableArgs {
    /// Network path prefix (expects <prefix>.nodes.csv / <prefix>.edges.csv).
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    /// Raw trajectory CSV; its snapped stay nodes define the table rows.
    #[arg(long)]
    trajectories: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS_M)]
    radius_m: f64,
    /// Disable the great-circle prefilter (results are identical; this
    /// exists to measure and test the optimization).
    #[arg(long)]
    no_prefilter: bool,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    trajectories: PathBuf,
    /// Output CSV of repaired, timed stays.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON report of routing and repair statistics.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ComputeArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    /// Processed (repaired) trajectory CSV.
    #[arg(long)]
    processed: PathBuf,
    /// Proximity table CSV built by build-table.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated snapshot cutoff dates (YYYY-MM-DD).
    #[arg(long)]
    cutoffs: String,
    #[arg(long, default_value = "500,1000,2000,3000")]
    thresholds: String,
    #[arg(long, default_value = "l2,dcfc")]
    port_types: String,
    /// Comma-separated segments: all, stay kinds, or period names.
    #[arg(long)]
    segments: Option<String>,
    #[arg(long, default_value_t = DEFAULT_RADIUS_M)]
    radius_m: f64,
    #[arg(long)]
    allow_custom_threshold: bool,
    /// Normalize the ports variant by stay time (fixture mode).
    #[arg(long)]
    toy_ports: bool,
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    processed: PathBuf,
    #[arg(long)]
    tracts: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    tract_stats: PathBuf,
    #[arg(long)]
    tracts: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRIMARY_THRESHOLD_M)]
    primary_threshold_m: f64,
}

#[derive(Args)]
struct RegressArgs {
    #[arg(long)]
    tract_stats: PathBuf,
    #[arg(long)]
    tracts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Polynomial degree of the log-income control (0 = none).
    #[arg(long, default_value_t = 1)]
    degree: usize,
    #[arg(long, default_value_t = DEFAULT_PRIMARY_THRESHOLD_M)]
    primary_threshold_m: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    persons: u32,
    /// Scratch directory for the generated sample (defaults to a
    /// seed-specific directory under the system temp dir).
    #[arg(long)]
    work_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let workers = tiacs_core::exec::resolve_workers(cli.workers, None);
    match dispatch(cli.command, workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = std::error::Error::source(&e);
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn dispatch(cmd: Command, workers: usize) -> Result<(), Error> {
    match cmd {
        Command::Synth(a) => {
            let scn = SyntheticScenario {
                seed: a.seed,
                grid_rows: a.grid_rows,
                grid_cols: a.grid_cols,
                edge_len_m: a.edge_len_m,
                speed_kmh: a.speed_kmh,
                station_count: a.stations,
                person_count: a.persons,
                non_commuter_fraction: a.non_commuter_fraction,
                other_stops_per_day_mean: a.other_stops_mean,
                far_trip_fraction: a.far_trip_fraction,
                extreme_far_fraction: a.extreme_far_fraction,
                tract_rows: a.tract_rows,
                tract_cols: a.tract_cols,
                ..Default::default()
            };
            let paths = synth(&scn, &a.out)?;
            println!("scenario written to {}", a.out.display());
            println!("run it with: tiacs run --config {}", paths.config.display());
            Ok(())
        }
        Command::Run(a) => {
            let mut map = match &a.config {
                Some(path) => parse_config_file(path)?,
                None => BTreeMap::new(),
            };
            for pair in &a.sets {
                let Some((k, v)) = pair.split_once('=') else {
                    return Err(Error::validation(format!("--set `{pair}`: expected KEY=VALUE")));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            if let Some(out) = &a.out_dir {
                map.insert("out_dir".into(), out.display().to_string());
            }
            map.insert("workers".into(), workers.to_string());
            let cfg = build_run_config(&map)?;
            let summary = pipeline::run(&cfg)?;
            println!(
                "run complete: {} persons ({} without a home tract), {} artifacts in {}",
                summary.persons,
                summary.unassigned_persons,
                summary.outputs.len() + 1,
                summary.out_dir.display()
            );
            Ok(())
        }
        Command::BuildTable(a) => {
            let net = load_network(&network_file(&a.network, "nodes"), &network_file(&a.network, "edges"))?;
            let stations = load_stations(&a.stations, &net)?;
            let records = ingest_raw(&a.trajectories, &net)?;
            let stay_nodes: std::collections::BTreeSet<_> = records
                .iter()
                .flat_map(|r| r.stays.iter().map(|s| s.node))
                .collect();
            let table = build_proximity_table(
                &net,
                &stay_nodes,
                &stations,
                a.radius_m,
                !a.no_prefilter,
                workers,
            )?;
            table.write_csv(&a.out)?;
            println!(
                "proximity table: {} stay nodes, {} entries -> {}",
                table.node_count(),
                table.entry_count(),
                a.out.display()
            );
            Ok(())
        }
        Command::Repair(a) => {
            let net = load_network(&network_file(&a.network, "nodes"), &network_file(&a.network, "edges"))?;
            let records = ingest_raw(&a.trajectories, &net)?;
            let (trajectories, routing, repair) = process_corpus(&net, &records, workers)?;
            write_processed(&a.out, &trajectories)?;
            if let Some(report) = &a.report {
                let body = serde_json_report(&routing, &repair, trajectories.len());
                std::fs::write(report, body).map_err(|e| Error::io(report, e))?;
            }
            println!(
                "repaired {} persons: {} deficient stays, {} by donation, {} by travel shortening",
                trajectories.len(),
                repair.deficient,
                repair.resolved_by_donation,
                repair.resolved_by_shortening
            );
            Ok(())
        }
        Command::Compute(a) => {
            let net = load_network(&network_file(&a.network, "nodes"), &network_file(&a.network, "edges"))?;
            let stations = load_stations(&a.stations, &net)?;
            let trajectories = read_processed(&a.processed)?;
            let table = ProximityTable::read_csv(&a.table, &stations, a.radius_m)?;
            let tou = TouSchedule::default_tou();

            let cutoffs = split(&a.cutoffs)
                .iter()
                .map(|s| parse_date(s))
                .collect::<Result<Vec<_>, _>>()?;
            let thresholds = split(&a.thresholds)
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::validation(format!("threshold `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if !a.allow_custom_threshold {
                for d in &thresholds {
                    if !pipeline::STANDARD_THRESHOLDS.contains(d) {
                        return Err(Error::validation(format!(
                            "threshold {d} m is not standard; pass --allow-custom-threshold"
                        )));
                    }
                }
            }
            let port_types = split(&a.port_types)
                .iter()
                .map(|s| PortType::parse(s))
                .collect::<Result<Vec<_>, _>>()?;
            let segment_tokens = a
                .segments
                .map(|s| split(&s))
                .unwrap_or_else(|| pipeline::RunConfig::default_segments(&tou));

            // Reuse the pipeline's segment resolution through a RunConfig.
            let snapshots: Vec<_> = cutoffs
                .iter()
                .map(|&c| tiacs_core::stations::build_snapshot(&stations, c))
                .collect();
            let segments = segment_tokens
                .iter()
                .map(|t| parse_segment_token(t, &tou))
                .collect::<Result<Vec<_>, _>>()?;
            let norm = if a.toy_ports {
                tiacs_core::access::PortsNorm::StayTime
            } else {
                tiacs_core::access::PortsNorm::Horizon
            };
            let results = tiacs_core::access::batch_compute_with_norm(
                &trajectories,
                &table,
                &snapshots,
                &port_types,
                &thresholds,
                &segments,
                &tou,
                norm,
                workers,
            )?;
            pipeline::write_results_csv_public(&a.out, &results)?;
            println!("{} result rows -> {}", results.len(), a.out.display());
            Ok(())
        }
        Command::Aggregate(a) => {
            let results = pipeline::read_results_csv(&a.results)?;
            let trajectories = read_processed(&a.processed)?;
            let tracts = load_tracts(&a.tracts)?;
            let points: Vec<(f64, f64)> = trajectories.iter().map(|t| t.home).collect();
            let assigned = assign_all(&points, &tracts, workers);
            let homes: BTreeMap<String, Option<String>> = trajectories
                .iter()
                .zip(assigned)
                .map(|(t, g)| (t.person_id.clone(), g))
                .collect();
            let (stats, unassigned) = aggregate_by_tract(&results, &homes)?;
            pipeline::write_tract_stats_csv_public(&a.out, &stats)?;
            println!(
                "{} tract-cells ({} persons without a tract) -> {}",
                stats.len(),
                unassigned,
                a.out.display()
            );
            Ok(())
        }
        Command::Stats(a) => {
            let stats = read_tract_stats_csv(&a.tract_stats)?;
            let tracts = load_tracts(&a.tracts)?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
            let files = emit_stats_bundles(&a.out_dir, &stats, &tracts, a.primary_threshold_m)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Regress(a) => {
            let stats = read_tract_stats_csv(&a.tract_stats)?;
            let tracts = load_tracts(&a.tracts)?;
            let path = emit_regression(&a.out, &stats, &tracts, a.primary_threshold_m, a.degree)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Verify(a) => {
            let work_dir = a
                .work_dir
                .unwrap_or_else(|| std::env::temp_dir().join(format!("tiacs-verify-{}", a.seed)));
            std::fs::create_dir_all(&work_dir).map_err(|e| Error::io(&work_dir, e))?;
            let checks = pipeline::verify_sample(a.seed, a.persons, workers, &work_dir)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Internal("verification failed".into()))
            }
        }
    }
}

fn split(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_segment_token(
    token: &str,
    tou: &TouSchedule,
) -> Result<tiacs_core::access::SegmentSpec, Error> {
    use tiacs_core::access::SegmentSpec;
    let t = token.trim();
    if t.eq_ignore_ascii_case("all") {
        return Ok(SegmentSpec::all());
    }
    if let Ok(kind) = tiacs_core::trajectory::StayKind::parse(t) {
        return Ok(SegmentSpec::for_kind(kind));
    }
    if tou.period_index(t).is_some() {
        return Ok(SegmentSpec::for_tou(t));
    }
    Err(Error::validation(format!("unknown segment `{t}`")))
}

fn serde_json_report(
    routing: &tiacs_core::trajectory::RoutingStats,
    repair: &tiacs_core::trajectory::RepairReport,
    persons: usize,
) -> String {
    format!(
        "{{\n  \"persons\": {persons},\n  \"routing\": {{\"routed_trips\": {}, \"unrouted_trips\": {}, \"detour_factor\": {}, \"speed_m_per_min\": {}}},\n  \"repair\": {{\"deficient\": {}, \"resolved_by_donation\": {}, \"resolved_by_shortening\": {}}}\n}}\n",
        routing.routed_trips,
        routing.unrouted_trips,
        routing.detour_factor,
        routing.speed_m_per_min,
        repair.deficient,
        repair.resolved_by_donation,
        repair.resolved_by_shortening,
    )
}
