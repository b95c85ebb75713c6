//! The trajectory-integrated accessibility metrics.
//!
//! For a person's week of stays, the `hours` variant is the total
//! duration (reported per day) during which at least one in-range port
//! exists, and the `ports` variant is the stay-duration-weighted port
//! count normalized by the horizon duration. Both can be restricted to a
//! segment: a subset of stay kinds and/or time-of-use periods. Travel
//! intervals never contribute.
//!
//! All stay boundaries are integer minutes, so the interval evaluation in
//! [`ti_acs`] and the minute-by-minute oracle [`ti_acs_oracle`] accumulate
//! identical integer sums and agree exactly.

use std::collections::BTreeSet;
use std::sync::Arc;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::exec::{self, Workers};
use crate::stations::{PortType, ProximityTable, Snapshot};
use crate::trajectory::{StayKind, Trajectory, WEEK_MINUTES};

pub const DAY_MINUTES: u32 = 1440;

/// One named time-of-use period: a set of daily clock windows in
/// minutes-of-day, half-open `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TouPeriod {
    pub name: String,
    pub windows: Vec<(u32, u32)>,
}

/// A time-of-use tariff schedule whose periods partition the 24-hour day
/// exactly (no gap, no overlap).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TouSchedule {
    periods: Vec<TouPeriod>,
    /// Maximal runs covering [0, 1440), sorted: (start, end, period index).
    segments: Vec<(u32, u32, u8)>,
}

impl TouSchedule {
    pub fn new(periods: Vec<TouPeriod>) -> Result<TouSchedule> {
        if periods.is_empty() || periods.len() > u8::MAX as usize {
            return Err(Error::validation("schedule needs 1..=255 periods"));
        }
        let mut names = BTreeSet::new();
        let mut segments: Vec<(u32, u32, u8)> = Vec::new();
        for (i, p) in periods.iter().enumerate() {
            if !names.insert(p.name.as_str()) {
                return Err(Error::validation(format!("duplicate period `{}`", p.name)));
            }
            if p.windows.is_empty() {
                return Err(Error::validation(format!("period `{}` has no windows", p.name)));
            }
            for &(s, e) in &p.windows {
                if s >= e || e > DAY_MINUTES {
                    return Err(Error::validation(format!(
                        "period `{}` window [{s}, {e}) is invalid",
                        p.name
                    )));
                }
                segments.push((s, e, i as u8));
            }
        }
        segments.sort_unstable();
        let mut cursor = 0;
        for &(s, e, idx) in &segments {
            if s != cursor {
                return Err(Error::validation(format!(
                    "periods must partition the day: {} at minute {}",
                    if s > cursor { "gap" } else { "overlap" },
                    cursor.min(s),
                )));
            }
            cursor = e;
            let _ = idx;
        }
        if cursor != DAY_MINUTES {
            return Err(Error::validation(format!(
                "periods must partition the day: gap at minute {cursor}"
            )));
        }
        Ok(TouSchedule { periods, segments })
    }

    /// PG&E-style business EV default: super off-peak 9:00-14:00,
    /// off-peak 21:00-24:00, 0:00-9:00 and 14:00-16:00, peak 16:00-21:00
    /// (5 h / 14 h / 5 h per day).
    pub fn default_tou() -> TouSchedule {
        TouSchedule::new(vec![
            TouPeriod {
                name: "super_off_peak".into(),
                windows: vec![(9 * 60, 14 * 60)],
            },
            TouPeriod {
                name: "off_peak".into(),
                windows: vec![(0, 9 * 60), (14 * 60, 16 * 60), (21 * 60, 24 * 60)],
            },
            TouPeriod {
                name: "peak".into(),
                windows: vec![(16 * 60, 21 * 60)],
            },
        ])
        .expect("default schedule is a valid partition")
    }

    pub fn period_names(&self) -> impl Iterator<Item = &str> {
        self.periods.iter().map(|p| p.name.as_str())
    }

    pub fn period_index(&self, name: &str) -> Option<u8> {
        self.periods.iter().position(|p| p.name == name).map(|i| i as u8)
    }

    /// Total daily minutes of one period.
    pub fn daily_minutes(&self, index: u8) -> u32 {
        self.periods[index as usize]
            .windows
            .iter()
            .map(|&(s, e)| e - s)
            .sum()
    }

    /// Period index at a minute of day.
    pub fn period_at(&self, minute_of_day: u32) -> u8 {
        debug_assert!(minute_of_day < DAY_MINUTES);
        let i = self
            .segments
            .partition_point(|&(s, _, _)| s <= minute_of_day)
            .saturating_sub(1);
        self.segments[i].2
    }

    /// Split an absolute interval `[start, end)` (minutes into the week)
    /// into maximal fragments each inside a single period, in order.
    fn fragments(&self, start: i64, end: i64) -> Vec<(i64, i64, u8)> {
        let mut out = Vec::new();
        let mut t = start;
        while t < end {
            let day_min = (t.rem_euclid(DAY_MINUTES as i64)) as u32;
            let i = self
                .segments
                .partition_point(|&(s, _, _)| s <= day_min)
                .saturating_sub(1);
            let (_, seg_end, period) = self.segments[i];
            let frag_end = (t - day_min as i64 + seg_end as i64).min(end);
            out.push((t, frag_end, period));
            t = frag_end;
        }
        out
    }
}

/// Split a stay into labeled time-of-use fragments. The returned
/// intervals partition `[start_min, end_min)` exactly, handling stays
/// that cross midnight or span several days.
pub fn split_stay_by_tou<'a>(
    stay: &crate::trajectory::Stay,
    sched: &'a TouSchedule,
) -> Vec<((i64, i64), &'a str)> {
    sched
        .fragments(stay.start_min, stay.end_min)
        .into_iter()
        .map(|(s, e, p)| ((s, e), sched.periods[p as usize].name.as_str()))
        .collect()
}

/// A restriction of the metric to a subset of stay kinds and/or
/// time-of-use periods. `None` means unrestricted; explicit empty sets
/// are rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    kinds: Option<BTreeSet<StayKind>>,
    tou: Option<BTreeSet<String>>,
    kind_label: Arc<str>,
    tou_label: Arc<str>,
}

impl SegmentSpec {
    pub fn new(
        kinds: Option<BTreeSet<StayKind>>,
        tou: Option<BTreeSet<String>>,
    ) -> Result<SegmentSpec> {
        if let Some(k) = &kinds {
            if k.is_empty() {
                return Err(Error::validation("empty stay-kind filter"));
            }
        }
        if let Some(t) = &tou {
            if t.is_empty() {
                return Err(Error::validation("empty time-of-use filter"));
            }
        }
        let kind_label: Arc<str> = match &kinds {
            None => "all".into(),
            Some(set) => set
                .iter()
                .map(|k| k.label())
                .collect::<Vec<_>>()
                .join("+")
                .into(),
        };
        let tou_label: Arc<str> = match &tou {
            None => "all".into(),
            Some(set) => set.iter().map(String::as_str).collect::<Vec<_>>().join("+").into(),
        };
        Ok(SegmentSpec {
            kinds,
            tou,
            kind_label,
            tou_label,
        })
    }

    pub fn all() -> SegmentSpec {
        SegmentSpec::new(None, None).unwrap()
    }

    pub fn for_kind(kind: StayKind) -> SegmentSpec {
        SegmentSpec::new(Some([kind].into()), None).unwrap()
    }

    pub fn for_tou(period: &str) -> SegmentSpec {
        SegmentSpec::new(None, Some([period.to_string()].into())).unwrap()
    }

    pub fn kind_label(&self) -> &Arc<str> {
        &self.kind_label
    }

    pub fn tou_label(&self) -> &Arc<str> {
        &self.tou_label
    }

    fn matches_kind(&self, kind: StayKind) -> bool {
        self.kinds.as_ref().map_or(true, |set| set.contains(&kind))
    }

    /// Per-period-index inclusion mask under `sched`.
    fn tou_mask(&self, sched: &TouSchedule) -> Result<Vec<bool>> {
        match &self.tou {
            None => Ok(vec![true; sched.periods.len()]),
            Some(set) => {
                let mut mask = vec![false; sched.periods.len()];
                for name in set {
                    let idx = sched.period_index(name).ok_or_else(|| {
                        Error::validation(format!("unknown time-of-use period `{name}`"))
                    })?;
                    mask[idx as usize] = true;
                }
                Ok(mask)
            }
        }
    }

    /// The segment's weekly horizon in minutes: the full week when the
    /// time-of-use filter is unrestricted, otherwise seven times the
    /// daily duration of the selected periods. Stay-kind filters restrict
    /// contributions, not the horizon.
    fn weekly_horizon_minutes(&self, sched: &TouSchedule) -> Result<u64> {
        match &self.tou {
            None => Ok(WEEK_MINUTES as u64),
            Some(set) => {
                let mut daily = 0u64;
                for name in set {
                    let idx = sched.period_index(name).ok_or_else(|| {
                        Error::validation(format!("unknown time-of-use period `{name}`"))
                    })?;
                    daily += sched.daily_minutes(idx) as u64;
                }
                Ok(daily * 7)
            }
        }
    }
}

/// One evaluated metric cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessResult {
    pub person_id: Arc<str>,
    pub port_type: PortType,
    pub threshold_m: f64,
    pub cutoff: NaiveDate,
    pub kind_filter: Arc<str>,
    pub tou_filter: Arc<str>,
    /// Accessible hours per day (weekly total / 7).
    pub hours_per_day: f64,
    /// Duration-weighted average in-range ports over the segment horizon.
    pub ports_avg: f64,
}

impl AccessResult {
    pub fn sort_key(&self) -> (Arc<str>, u8, u64, NaiveDate, Arc<str>, Arc<str>) {
        (
            self.person_id.clone(),
            match self.port_type {
                PortType::L2 => 0,
                PortType::Dcfc => 1,
            },
            self.threshold_m.to_bits(),
            self.cutoff,
            self.kind_filter.clone(),
            self.tou_filter.clone(),
        )
    }
}

fn ports_per_stay(
    traj: &Trajectory,
    table: &ProximityTable,
    snapshot: &Snapshot,
    port_type: PortType,
    d: f64,
) -> Result<Vec<u32>> {
    traj.stays
        .iter()
        .map(|s| table.ports_within(snapshot, s.node, d, port_type))
        .collect()
}

/// Normalization of the `ports` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortsNorm {
    /// Divide by the segment's horizon duration (travel time included).
    Horizon,
    /// Divide by the matched stay time only; fixture mode.
    StayTime,
}

/// Integer accumulators shared by the interval and minute evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RawAccess {
    indicator_min: u64,
    port_min: u64,
    matched_min: u64,
}

fn finish(
    raw: RawAccess,
    horizon_min: u64,
    ports_norm: PortsNorm,
    traj: &Trajectory,
    port_type: PortType,
    d: f64,
    cutoff: NaiveDate,
    segment: &SegmentSpec,
) -> AccessResult {
    let denominator = match ports_norm {
        PortsNorm::Horizon => horizon_min,
        PortsNorm::StayTime => raw.matched_min,
    };
    AccessResult {
        person_id: traj.person_id.as_str().into(),
        port_type,
        threshold_m: d,
        cutoff,
        kind_filter: segment.kind_label.clone(),
        tou_filter: segment.tou_label.clone(),
        hours_per_day: raw.indicator_min as f64 / 60.0 / 7.0,
        ports_avg: if denominator == 0 {
            0.0
        } else {
            raw.port_min as f64 / denominator as f64
        },
    }
}

fn accumulate_intervals(
    traj: &Trajectory,
    ports: &[u32],
    segment: &SegmentSpec,
    tou_mask: &[bool],
    sched: &TouSchedule,
) -> RawAccess {
    let mut raw = RawAccess::default();
    for (stay, &p) in traj.stays.iter().zip(ports) {
        if !segment.matches_kind(stay.kind) {
            continue;
        }
        for (fs, fe, period) in sched.fragments(stay.start_min, stay.end_min) {
            if !tou_mask[period as usize] {
                continue;
            }
            let dur = (fe - fs) as u64;
            raw.matched_min += dur;
            if p >= 1 {
                raw.indicator_min += dur;
            }
            raw.port_min += dur * p as u64;
        }
    }
    raw
}

/// Evaluate both metric variants for one person over one configuration.
pub fn ti_acs(
    traj: &Trajectory,
    table: &ProximityTable,
    snapshot: &Snapshot,
    port_type: PortType,
    d: f64,
    segment: &SegmentSpec,
    sched: &TouSchedule,
) -> Result<AccessResult> {
    let ports = ports_per_stay(traj, table, snapshot, port_type, d)?;
    let tou_mask = segment.tou_mask(sched)?;
    let raw = accumulate_intervals(traj, &ports, segment, &tou_mask, sched);
    let horizon = segment.weekly_horizon_minutes(sched)?;
    Ok(finish(
        raw,
        horizon,
        PortsNorm::Horizon,
        traj,
        port_type,
        d,
        snapshot.cutoff,
        segment,
    ))
}

/// Brute-force reference: walk the week minute by minute, evaluating the
/// location state, segment membership and in-range ports at each step.
/// Same contract as [`ti_acs`]; O(week) per call, intended for tests.
pub fn ti_acs_oracle(
    traj: &Trajectory,
    table: &ProximityTable,
    snapshot: &Snapshot,
    port_type: PortType,
    d: f64,
    segment: &SegmentSpec,
    sched: &TouSchedule,
) -> Result<AccessResult> {
    let ports = ports_per_stay(traj, table, snapshot, port_type, d)?;
    let tou_mask = segment.tou_mask(sched)?;
    let mut raw = RawAccess::default();
    let mut k = 0usize;
    for t in 0..WEEK_MINUTES {
        while k < traj.stays.len() && traj.stays[k].end_min <= t {
            k += 1;
        }
        if k >= traj.stays.len() {
            break;
        }
        let stay = &traj.stays[k];
        if stay.start_min > t {
            continue; // in motion
        }
        if !segment.matches_kind(stay.kind) {
            continue;
        }
        let period = sched.period_at((t % DAY_MINUTES as i64) as u32);
        if !tou_mask[period as usize] {
            continue;
        }
        raw.matched_min += 1;
        if ports[k] >= 1 {
            raw.indicator_min += 1;
        }
        raw.port_min += ports[k] as u64;
    }
    let horizon = segment.weekly_horizon_minutes(sched)?;
    Ok(finish(
        raw,
        horizon,
        PortsNorm::Horizon,
        traj,
        port_type,
        d,
        snapshot.cutoff,
        segment,
    ))
}

/// Fixture-style evaluation over an arbitrary horizon: total accessible
/// hours (not per day) and the port average normalized by total stay
/// time instead of the horizon.
pub fn ti_acs_toy(
    traj: &Trajectory,
    table: &ProximityTable,
    snapshot: &Snapshot,
    port_type: PortType,
    d: f64,
) -> Result<(f64, f64)> {
    let ports = ports_per_stay(traj, table, snapshot, port_type, d)?;
    let sched = TouSchedule::default_tou();
    let segment = SegmentSpec::all();
    let mask = segment.tou_mask(&sched)?;
    let raw = accumulate_intervals(traj, &ports, &segment, &mask, &sched);
    if raw.matched_min == 0 {
        return Err(Error::validation("trajectory has no stay time"));
    }
    Ok((
        raw.indicator_min as f64 / 60.0,
        raw.port_min as f64 / raw.matched_min as f64,
    ))
}

/// Full cartesian evaluation: every trajectory against every snapshot,
/// port type, threshold and segment. Ports per stay are computed once per
/// (snapshot, type, threshold) and reused across segments. Output is
/// sorted by person id, then parameters.
#[allow(clippy::too_many_arguments)]
pub fn batch_compute(
    trajs: &[Trajectory],
    table: &ProximityTable,
    snapshots: &[Snapshot],
    port_types: &[PortType],
    thresholds: &[f64],
    segments: &[SegmentSpec],
    sched: &TouSchedule,
    workers: Workers,
) -> Result<Vec<AccessResult>> {
    batch_compute_with_norm(
        trajs,
        table,
        snapshots,
        port_types,
        thresholds,
        segments,
        sched,
        PortsNorm::Horizon,
        workers,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn batch_compute_with_norm(
    trajs: &[Trajectory],
    table: &ProximityTable,
    snapshots: &[Snapshot],
    port_types: &[PortType],
    thresholds: &[f64],
    segments: &[SegmentSpec],
    sched: &TouSchedule,
    ports_norm: PortsNorm,
    workers: Workers,
) -> Result<Vec<AccessResult>> {
    for &d in thresholds {
        if d > table.radius_m() {
            return Err(Error::validation(format!(
                "threshold {d} m exceeds proximity table radius {} m",
                table.radius_m()
            )));
        }
    }
    let masks = segments
        .iter()
        .map(|s| s.tou_mask(sched))
        .collect::<Result<Vec<_>>>()?;
    let horizons = segments
        .iter()
        .map(|s| s.weekly_horizon_minutes(sched))
        .collect::<Result<Vec<_>>>()?;

    let per_person: Vec<Result<Vec<AccessResult>>> = exec::map_ordered(trajs, workers, |traj| {
        let mut out =
            Vec::with_capacity(snapshots.len() * port_types.len() * thresholds.len() * segments.len());
        for snapshot in snapshots {
            for &port_type in port_types {
                for &d in thresholds {
                    let ports = ports_per_stay(traj, table, snapshot, port_type, d)?;
                    for (seg_i, segment) in segments.iter().enumerate() {
                        let raw =
                            accumulate_intervals(traj, &ports, segment, &masks[seg_i], sched);
                        out.push(finish(
                            raw,
                            horizons[seg_i],
                            ports_norm,
                            traj,
                            port_type,
                            d,
                            snapshot.cutoff,
                            segment,
                        ));
                    }
                }
            }
        }
        Ok(out)
    });

    let mut results = Vec::new();
    for r in per_person {
        results.extend(r?);
    }
    results.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(results)
}
