//! Week-long stay trajectories: ingestion of raw 10-minute-slot stay
//! sequences, routed travel-time insertion, and repair of infeasible stay
//! durations.
//!
//! Raw records give one row per stay as `(slot, kind, lon, lat)` with
//! `slot` in 1..=1008 indexing 10-minute intervals over one week. A slot
//! marks the moment the person departs from their previous stay, so a
//! stay's arrival is its slot start plus the travel time from the
//! previous location, and its departure is the next stay's slot start.
//! The first stay starts at minute 0 and the last ends at minute 10080.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Workers};
use crate::geo;
use crate::network::{NodeId, RoadNetwork};

pub const WEEK_MINUTES: i64 = 10_080;
pub const SLOT_MINUTES: i64 = 10;
pub const SLOTS_PER_WEEK: u32 = 1_008;

/// Minimum feasible stay duration in minutes; shorter (or negative)
/// durations are repaired.
pub const MIN_STAY_MINUTES: i64 = 5;

/// Fixed buffer added to every routed travel time for starting, stopping
/// and parking the vehicle.
pub const TRAVEL_BUFFER_MINUTES: i64 = 6;

const REPAIR_PASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StayKind {
    Home,
    Work,
    Other,
}

impl StayKind {
    pub const ALL: [StayKind; 3] = [StayKind::Home, StayKind::Work, StayKind::Other];

    pub fn label(self) -> &'static str {
        match self {
            StayKind::Home => "home",
            StayKind::Work => "work",
            StayKind::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<StayKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "home" => Ok(StayKind::Home),
            "work" => Ok(StayKind::Work),
            "other" => Ok(StayKind::Other),
            other => Err(Error::validation(format!("unknown stay kind `{other}`"))),
        }
    }
}

/// One raw stay, snapped to its nearest network node.
#[derive(Debug, Clone)]
pub struct RawStay {
    pub slot: u32,
    pub kind: StayKind,
    pub lon: f64,
    pub lat: f64,
    pub node: NodeId,
    pub snap_m: f64,
}

/// One person's raw week of stays, in slot order.
#[derive(Debug, Clone)]
pub struct PersonRecord {
    pub person_id: String,
    pub stays: Vec<RawStay>,
}

/// A timed, typed, geolocated stop. `start_min`/`end_min` are minutes
/// into the week; durations below [`MIN_STAY_MINUTES`] only occur before
/// repair.
#[derive(Debug, Clone, PartialEq)]
pub struct Stay {
    pub start_min: i64,
    pub end_min: i64,
    pub kind: StayKind,
    pub node: NodeId,
    pub lon: f64,
    pub lat: f64,
}

impl Stay {
    pub fn duration_min(&self) -> i64 {
        self.end_min - self.start_min
    }
}

/// A person's week: ordered stays separated by recorded travel times.
/// `travel_min[k]` is the gap between stays k and k+1, so
/// `stays[k+1].start_min == stays[k].end_min + travel_min[k]` always.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub person_id: String,
    /// Home coordinates: the first home-kind stay, or the first stay if
    /// the record has no home stay.
    pub home: (f64, f64),
    pub stays: Vec<Stay>,
    pub travel_min: Vec<i64>,
}

impl Trajectory {
    pub fn validate_repaired(&self) -> Result<()> {
        if self.stays.is_empty() {
            return Err(Error::validation(format!(
                "{}: empty trajectory",
                self.person_id
            )));
        }
        if self.stays[0].start_min != 0 {
            return Err(Error::validation(format!(
                "{}: first stay must start at minute 0",
                self.person_id
            )));
        }
        if self.stays.last().unwrap().end_min != WEEK_MINUTES {
            return Err(Error::validation(format!(
                "{}: last stay must end at minute {WEEK_MINUTES}",
                self.person_id
            )));
        }
        for (k, stay) in self.stays.iter().enumerate() {
            if stay.duration_min() < MIN_STAY_MINUTES {
                return Err(Error::validation(format!(
                    "{}: stay {k} lasts {} min",
                    self.person_id,
                    stay.duration_min()
                )));
            }
            if k + 1 < self.stays.len() {
                let gap = self.stays[k + 1].start_min - stay.end_min;
                if gap != self.travel_min[k] || gap < 0 {
                    return Err(Error::validation(format!(
                        "{}: travel gap mismatch after stay {k}",
                        self.person_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRow {
    person_id: String,
    slot: u32,
    kind: String,
    lon: f64,
    lat: f64,
}

/// Ingest raw stays (`person_id,slot,kind,lon,lat`), snap each stay to
/// its nearest network node, and validate per-person slot ordering.
/// Persons are returned sorted by id.
pub fn ingest_raw(path: &Path, net: &RoadNetwork) -> Result<Vec<PersonRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let mut persons: BTreeMap<String, Vec<(u32, StayKind, f64, f64)>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<RawRow>().enumerate() {
        let line = (i + 2) as u64;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        if row.slot < 1 || row.slot > SLOTS_PER_WEEK {
            return Err(Error::parse(
                path,
                line,
                format!("slot {} outside 1..={SLOTS_PER_WEEK}", row.slot),
            ));
        }
        let kind =
            StayKind::parse(&row.kind).map_err(|e| Error::parse(path, line, e.to_string()))?;
        geo::check_coords((row.lon, row.lat))
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        persons
            .entry(row.person_id)
            .or_default()
            .push((row.slot, kind, row.lon, row.lat));
    }

    let entries: Vec<(String, Vec<(u32, StayKind, f64, f64)>)> = persons.into_iter().collect();
    let snapped: Vec<Result<PersonRecord>> = exec::map_ordered(&entries, 0, |(pid, stays)| {
        let mut prev_slot = 0u32;
        let mut out = Vec::with_capacity(stays.len());
        for &(slot, kind, lon, lat) in stays {
            if slot <= prev_slot {
                return Err(Error::validation(format!(
                    "person {pid}: slots not strictly increasing at slot {slot}"
                )));
            }
            prev_slot = slot;
            let (node, snap_m) = net.nearest_node(lon, lat)?;
            out.push(RawStay {
                slot,
                kind,
                lon,
                lat,
                node,
                snap_m,
            });
        }
        Ok(PersonRecord {
            person_id: pid.clone(),
            stays: out,
        })
    });
    snapped.into_iter().collect()
}

/// Travel-time fallback parameters for origin-destination pairs the
/// network cannot route, estimated from the routed trips of the same run.
#[derive(Debug, Clone, Copy)]
pub struct TravelFallback {
    /// Median of (network length / great-circle distance) over routed
    /// trips with distinct endpoints.
    pub detour_factor: f64,
    /// Median network speed of routed trips, meters per minute.
    pub speed_m_per_min: f64,
}

impl Default for TravelFallback {
    /// Used only when a run contains no routed trips at all: a 1.3 road
    /// detour at 30 km/h.
    fn default() -> Self {
        TravelFallback {
            detour_factor: 1.3,
            speed_m_per_min: 30_000.0 / 60.0,
        }
    }
}

/// Per-run routing statistics, reported alongside the trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct RoutingStats {
    pub routed_trips: usize,
    pub unrouted_trips: usize,
    pub detour_factor: f64,
    pub speed_m_per_min: f64,
}

#[derive(Debug, Clone, Copy)]
enum TripTime {
    Routed { time_s: f64, length_m: f64 },
    Unrouted { gc_m: f64 },
}

fn route_person_trips(net: &RoadNetwork, rec: &PersonRecord) -> Result<Vec<TripTime>> {
    let mut cache: HashMap<(NodeId, NodeId), Option<(f64, f64)>> = HashMap::new();
    let mut trips = Vec::with_capacity(rec.stays.len().saturating_sub(1));
    for pair in rec.stays.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let key = (a.node, b.node);
        let routed = match cache.get(&key) {
            Some(&r) => r,
            None => {
                let r = net.route(a.node, b.node)?;
                cache.insert(key, r);
                r
            }
        };
        trips.push(match routed {
            Some((time_s, length_m)) => TripTime::Routed { time_s, length_m },
            None => TripTime::Unrouted {
                gc_m: geo::great_circle_unchecked((a.lon, a.lat), (b.lon, b.lat)),
            },
        });
    }
    Ok(trips)
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Travel time in whole minutes for a routed trip: seconds rounded half
/// up to minutes, plus the parking buffer.
fn routed_minutes(time_s: f64) -> i64 {
    (time_s / 60.0).round() as i64 + TRAVEL_BUFFER_MINUTES
}

/// Fallback travel time for an unroutable pair: great-circle distance
/// inflated by the run's detour factor at the run's median speed, rounded
/// half up, plus the parking buffer.
fn fallback_minutes(gc_m: f64, fb: &TravelFallback) -> i64 {
    (gc_m * fb.detour_factor / fb.speed_m_per_min).round() as i64 + TRAVEL_BUFFER_MINUTES
}

/// Build the timed (pre-repair) trajectory for one person, using `fb`
/// for pairs the network cannot route.
pub fn route_travel(net: &RoadNetwork, rec: &PersonRecord, fb: &TravelFallback) -> Result<Trajectory> {
    let trips = route_person_trips(net, rec)?;
    Ok(assemble(rec, &trips, fb))
}

fn assemble(rec: &PersonRecord, trips: &[TripTime], fb: &TravelFallback) -> Trajectory {
    let travel_min: Vec<i64> = trips
        .iter()
        .map(|t| match *t {
            TripTime::Routed { time_s, .. } => routed_minutes(time_s),
            TripTime::Unrouted { gc_m } => fallback_minutes(gc_m, fb),
        })
        .collect();

    let n = rec.stays.len();
    let mut stays = Vec::with_capacity(n);
    for (k, raw) in rec.stays.iter().enumerate() {
        let start_min = if k == 0 {
            0
        } else {
            // Slot start of this stay is the departure from the previous
            // one; arrival adds the travel time.
            slot_start(raw.slot) + travel_min[k - 1]
        };
        let end_min = if k + 1 < n {
            slot_start(rec.stays[k + 1].slot)
        } else {
            WEEK_MINUTES
        };
        stays.push(Stay {
            start_min,
            end_min,
            kind: raw.kind,
            node: raw.node,
            lon: raw.lon,
            lat: raw.lat,
        });
    }
    let home = stays
        .iter()
        .find(|s| s.kind == StayKind::Home)
        .map(|s| (s.lon, s.lat))
        .unwrap_or((stays[0].lon, stays[0].lat));
    Trajectory {
        person_id: rec.person_id.clone(),
        home,
        stays,
        travel_min,
    }
}

fn slot_start(slot: u32) -> i64 {
    SLOT_MINUTES * (slot as i64 - 1)
}

/// Route every person: first pass routes all consecutive stay pairs and
/// collects run-level statistics, second pass fills unroutable pairs with
/// the fallback estimate. Trajectories come back in input (person id)
/// order.
pub fn route_all(
    net: &RoadNetwork,
    records: &[PersonRecord],
    workers: Workers,
) -> Result<(Vec<Trajectory>, RoutingStats)> {
    let per_person: Vec<Result<Vec<TripTime>>> =
        exec::map_ordered(records, workers, |rec| route_person_trips(net, rec));
    let per_person = per_person.into_iter().collect::<Result<Vec<_>>>()?;

    let mut speeds = Vec::new();
    let mut detours = Vec::new();
    let mut routed = 0usize;
    let mut unrouted = 0usize;
    for (rec, trips) in records.iter().zip(&per_person) {
        for (k, trip) in trips.iter().enumerate() {
            match *trip {
                TripTime::Routed { time_s, length_m } => {
                    routed += 1;
                    if time_s > 0.0 {
                        speeds.push(length_m / (time_s / 60.0));
                    }
                    let a = &rec.stays[k];
                    let b = &rec.stays[k + 1];
                    let gc = geo::great_circle_unchecked((a.lon, a.lat), (b.lon, b.lat));
                    if gc > 1.0 {
                        detours.push(length_m / gc);
                    }
                }
                TripTime::Unrouted { .. } => unrouted += 1,
            }
        }
    }
    let default_fb = TravelFallback::default();
    let fb = TravelFallback {
        detour_factor: median(detours).unwrap_or(default_fb.detour_factor),
        speed_m_per_min: median(speeds).unwrap_or(default_fb.speed_m_per_min),
    };

    let trajectories = records
        .iter()
        .zip(&per_person)
        .map(|(rec, trips)| assemble(rec, trips, &fb))
        .collect();
    Ok((
        trajectories,
        RoutingStats {
            routed_trips: routed,
            unrouted_trips: unrouted,
            detour_factor: fb.detour_factor,
            speed_m_per_min: fb.speed_m_per_min,
        },
    ))
}

/// How the repair resolved the deficient stays of one trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RepairReport {
    /// Stays with duration below the minimum after routing.
    pub deficient: usize,
    /// Deficient stays fixed purely by borrowing time from neighbors.
    pub resolved_by_donation: usize,
    /// Deficient stays that needed travel times shortened.
    pub resolved_by_shortening: usize,
    /// Individual 5-minute donations taken from the previous stay.
    pub donations_from_prev: usize,
    /// Individual 5-minute donations taken from the next stay.
    pub donations_from_next: usize,
    /// Total minutes removed from travel times.
    pub travel_minutes_removed: i64,
}

impl RepairReport {
    pub fn merge(&mut self, other: &RepairReport) {
        self.deficient += other.deficient;
        self.resolved_by_donation += other.resolved_by_donation;
        self.resolved_by_shortening += other.resolved_by_shortening;
        self.donations_from_prev += other.donations_from_prev;
        self.donations_from_next += other.donations_from_next;
        self.travel_minutes_removed += other.travel_minutes_removed;
    }
}

/// Repair stays shorter than [`MIN_STAY_MINUTES`].
///
/// Up to ten chronological passes move time in 5-minute steps: a
/// deficient stay first advances its arrival by taking 5 minutes from the
/// previous stay (allowed only if the donor keeps at least 5 minutes),
/// else delays its departure by taking from the next stay under the same
/// condition. Whatever remains deficient afterwards is fixed by
/// shortening the adjacent travel times, never below zero. Kinds,
/// locations and the number of stays are untouched; repairing an
/// already-valid trajectory returns it unchanged.
pub fn repair_stays(traj: &Trajectory) -> Result<(Trajectory, RepairReport)> {
    let n = traj.stays.len();
    if n == 0 {
        return Err(Error::validation(format!(
            "{}: empty trajectory",
            traj.person_id
        )));
    }
    if (n as i64) * MIN_STAY_MINUTES > WEEK_MINUTES {
        return Err(Error::validation(format!(
            "{}: {n} stays cannot all reach {MIN_STAY_MINUTES} minutes in one week",
            traj.person_id
        )));
    }

    let mut t = traj.clone();
    let mut report = RepairReport::default();
    let deficient_at_start: Vec<usize> = (0..n)
        .filter(|&k| t.stays[k].duration_min() < MIN_STAY_MINUTES)
        .collect();
    report.deficient = deficient_at_start.len();
    if report.deficient == 0 {
        return Ok((t, report));
    }

    for _pass in 0..REPAIR_PASSES {
        let mut changed = false;
        for k in 0..n {
            if t.stays[k].duration_min() >= MIN_STAY_MINUTES {
                continue;
            }
            // Try the previous stay first, then the next.
            if k > 0 && t.stays[k - 1].duration_min() - 5 >= MIN_STAY_MINUTES {
                t.stays[k - 1].end_min -= 5;
                t.stays[k].start_min -= 5;
                report.donations_from_prev += 1;
                changed = true;
            } else if k + 1 < n && t.stays[k + 1].duration_min() - 5 >= MIN_STAY_MINUTES {
                t.stays[k].end_min += 5;
                t.stays[k + 1].start_min += 5;
                report.donations_from_next += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        if (0..n).all(|k| t.stays[k].duration_min() >= MIN_STAY_MINUTES) {
            break;
        }
    }

    // Travel shortening for whatever the passes could not fix: pull the
    // arrival earlier by cutting the inbound travel, then push the
    // departure later by cutting the outbound travel.
    for k in 0..n {
        let mut deficit = MIN_STAY_MINUTES - t.stays[k].duration_min();
        if deficit <= 0 {
            continue;
        }
        report.resolved_by_shortening += 1;
        if k > 0 {
            let cut = deficit.min(t.travel_min[k - 1]);
            if cut > 0 {
                t.travel_min[k - 1] -= cut;
                t.stays[k].start_min -= cut;
                report.travel_minutes_removed += cut;
                deficit -= cut;
            }
        }
        if deficit > 0 && k + 1 < n {
            let cut = deficit.min(t.travel_min[k]);
            if cut > 0 {
                t.travel_min[k] -= cut;
                t.stays[k].end_min += cut;
                // Shift the next arrival back: the travel after stay k
                // shrinks while the next stay's start is pinned to its
                // own slot-plus-travel time.
                report.travel_minutes_removed += cut;
                deficit -= cut;
            }
        }
        if deficit > 0 {
            return Err(Error::Internal(format!(
                "{}: stay {k} still {deficit} min short after repair",
                traj.person_id
            )));
        }
    }
    report.resolved_by_donation = report.deficient - report.resolved_by_shortening;

    t.validate_repaired()?;
    Ok((t, report))
}

/// Route and repair a whole corpus in parallel, returning trajectories in
/// person-id order plus aggregate routing and repair reports.
pub fn process_corpus(
    net: &RoadNetwork,
    records: &[PersonRecord],
    workers: Workers,
) -> Result<(Vec<Trajectory>, RoutingStats, RepairReport)> {
    let (routed, routing_stats) = route_all(net, records, workers)?;
    let repaired: Vec<Result<(Trajectory, RepairReport)>> =
        exec::map_ordered(&routed, workers, repair_stays);
    let mut out = Vec::with_capacity(routed.len());
    let mut total = RepairReport::default();
    for r in repaired {
        let (t, rep) = r?;
        total.merge(&rep);
        out.push(t);
    }
    Ok((out, routing_stats, total))
}

#[derive(Debug, Deserialize, Serialize)]
struct ProcessedRow {
    person_id: String,
    start_min: i64,
    end_min: i64,
    kind: String,
    node_id: u64,
    lon: f64,
    lat: f64,
}

/// Write repaired trajectories as `person_id,start_min,end_min,kind,node_id,lon,lat`.
pub fn write_processed(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    for t in trajectories {
        for s in &t.stays {
            w.serialize(ProcessedRow {
                person_id: t.person_id.clone(),
                start_min: s.start_min,
                end_min: s.end_min,
                kind: s.kind.label().to_string(),
                node_id: s.node.0,
                lon: s.lon,
                lat: s.lat,
            })
            .map_err(|e| Error::validation(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read processed trajectories back; travel times are the gaps between
/// consecutive stays.
pub fn read_processed(path: &Path) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let mut persons: BTreeMap<String, Vec<Stay>> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<ProcessedRow>().enumerate() {
        let line = (i + 2) as u64;
        let row = row.map_err(|e| Error::parse(path, line, e.to_string()))?;
        let kind =
            StayKind::parse(&row.kind).map_err(|e| Error::parse(path, line, e.to_string()))?;
        persons.entry(row.person_id).or_default().push(Stay {
            start_min: row.start_min,
            end_min: row.end_min,
            kind,
            node: NodeId(row.node_id),
            lon: row.lon,
            lat: row.lat,
        });
    }
    let mut out = Vec::with_capacity(persons.len());
    for (person_id, stays) in persons {
        let travel_min = stays
            .windows(2)
            .map(|p| p[1].start_min - p[0].end_min)
            .collect();
        let home = stays
            .iter()
            .find(|s| s.kind == StayKind::Home)
            .map(|s| (s.lon, s.lat))
            .unwrap_or((stays[0].lon, stays[0].lat));
        let t = Trajectory {
            person_id,
            home,
            stays,
            travel_min,
        };
        t.validate_repaired()?;
        out.push(t);
    }
    Ok(out)
}
