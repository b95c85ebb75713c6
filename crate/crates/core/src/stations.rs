//! Charging-station inventory, date-based snapshots, and the
//! network-distance proximity table between stay nodes and charger nodes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Workers};
use crate::network::{NodeId, RoadNetwork};

/// Opaque station identifier. Ordering (lexicographic) is used for all
/// deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StationId(pub String);

impl std::fmt::Display for StationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Charging port class: L2 (~6 kW AC) or DCFC (>=50 kW DC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PortType {
    L2,
    Dcfc,
}

impl PortType {
    pub const ALL: [PortType; 2] = [PortType::L2, PortType::Dcfc];

    pub fn label(self) -> &'static str {
        match self {
            PortType::L2 => "l2",
            PortType::Dcfc => "dcfc",
        }
    }

    pub fn parse(s: &str) -> Result<PortType> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(PortType::L2),
            "dcfc" => Ok(PortType::Dcfc),
            other => Err(Error::validation(format!("unknown port type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChargingStation {
    pub id: StationId,
    pub lon: f64,
    pub lat: f64,
    pub open_date: NaiveDate,
    pub l2_ports: u32,
    pub dcfc_ports: u32,
    /// Nearest network node, assigned by snapping at load.
    pub node: NodeId,
    /// Great-circle snapping error in meters, kept for auditing.
    pub snap_m: f64,
}

impl ChargingStation {
    pub fn ports(&self, port_type: PortType) -> u32 {
        match port_type {
            PortType::L2 => self.l2_ports,
            PortType::Dcfc => self.dcfc_ports,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct StationRow {
    station_id: String,
    lon: f64,
    lat: f64,
    open_date: String,
    l2_ports: i64,
    dcfc_ports: i64,
}

const OPEN_DATE_MIN: &str = "1990-01-01";
const OPEN_DATE_MAX: &str = "2100-01-01";

/// Load stations from CSV (`station_id,lon,lat,open_date,l2_ports,dcfc_ports`)
/// and snap each to its nearest network node.
///
/// Row-level problems (negative port counts, zero total ports, bad dates,
/// bad coordinates) are collected and reported together.
pub fn load_stations(path: &Path, net: &RoadNetwork) -> Result<Vec<ChargingStation>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);

    let date_min = NaiveDate::parse_from_str(OPEN_DATE_MIN, "%Y-%m-%d").unwrap();
    let date_max = NaiveDate::parse_from_str(OPEN_DATE_MAX, "%Y-%m-%d").unwrap();

    let mut stations = Vec::new();
    let mut row_errors: Vec<String> = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    for (i, row) in rdr.deserialize::<StationRow>().enumerate() {
        let line = (i + 2) as u64;
        let mut fail = |msg: String| row_errors.push(format!("line {line}: {msg}"));
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        if !seen_ids.insert(row.station_id.clone()) {
            fail(format!("duplicate station_id {}", row.station_id));
            continue;
        }
        if row.l2_ports < 0 || row.dcfc_ports < 0 {
            fail(format!("negative port count for {}", row.station_id));
            continue;
        }
        if row.l2_ports + row.dcfc_ports < 1 {
            fail(format!("station {} has no ports", row.station_id));
            continue;
        }
        let open_date = match NaiveDate::parse_from_str(&row.open_date, "%Y-%m-%d") {
            Ok(d) if (date_min..=date_max).contains(&d) => d,
            Ok(d) => {
                fail(format!(
                    "open_date {d} outside [{OPEN_DATE_MIN}, {OPEN_DATE_MAX}]"
                ));
                continue;
            }
            Err(e) => {
                fail(format!("bad open_date `{}`: {e}", row.open_date));
                continue;
            }
        };
        let (node, snap_m) = match net.nearest_node(row.lon, row.lat) {
            Ok(x) => x,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        stations.push(ChargingStation {
            id: StationId(row.station_id),
            lon: row.lon,
            lat: row.lat,
            open_date,
            l2_ports: row.l2_ports as u32,
            dcfc_ports: row.dcfc_ports as u32,
            node,
            snap_m,
        });
    }
    if !row_errors.is_empty() {
        let shown: Vec<_> = row_errors.iter().take(10).cloned().collect();
        return Err(Error::validation(format!(
            "{} bad station row(s) in {}: {}",
            row_errors.len(),
            path.display(),
            shown.join("; ")
        )));
    }
    if !stations.is_empty() {
        let max_snap = stations.iter().map(|s| s.snap_m).fold(0.0, f64::max);
        let mean_snap: f64 =
            stations.iter().map(|s| s.snap_m).sum::<f64>() / stations.len() as f64;
        log::info!(
            "snapped {} stations (snap distance mean {:.1} m, max {:.1} m)",
            stations.len(),
            mean_snap,
            max_snap
        );
    }
    Ok(stations)
}

/// The subset of an inventory open as of a cutoff date, stored as a
/// per-station port vector aligned with the inventory order (stations not
/// yet open contribute zero ports).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub cutoff: NaiveDate,
    included: Vec<bool>,
    l2: Vec<u32>,
    dcfc: Vec<u32>,
}

pub fn build_snapshot(inventory: &[ChargingStation], cutoff: NaiveDate) -> Snapshot {
    let included: Vec<bool> = inventory.iter().map(|s| s.open_date <= cutoff).collect();
    let l2 = inventory
        .iter()
        .zip(&included)
        .map(|(s, &inc)| if inc { s.l2_ports } else { 0 })
        .collect();
    let dcfc = inventory
        .iter()
        .zip(&included)
        .map(|(s, &inc)| if inc { s.dcfc_ports } else { 0 })
        .collect();
    Snapshot {
        cutoff,
        included,
        l2,
        dcfc,
    }
}

impl Snapshot {
    pub fn station_count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, station_index: usize) -> bool {
        self.included.get(station_index).copied().unwrap_or(false)
    }

    fn ports(&self, station_index: usize, port_type: PortType) -> u32 {
        match port_type {
            PortType::L2 => self.l2[station_index],
            PortType::Dcfc => self.dcfc[station_index],
        }
    }

    pub fn inventory_len(&self) -> usize {
        self.included.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TableEntry {
    station: u32,
    distance_m: f64,
}

/// Precomputed (stay node, station, network distance) triples within the
/// build radius. Entry lists are sorted ascending by (distance,
/// station id) and the whole structure is immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityTable {
    radius_m: f64,
    station_ids: Vec<StationId>,
    entries: BTreeMap<NodeId, Vec<TableEntry>>,
}

impl ProximityTable {
    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    pub fn node_count(&self) -> usize {
        self.entries.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// All (stay node, station id, network distance) triples, in
    /// serialization order.
    pub fn iter_entries(&self) -> impl Iterator<Item = (NodeId, &StationId, f64)> + '_ {
        self.entries.iter().flat_map(move |(&node, list)| {
            list.iter()
                .map(move |e| (node, &self.station_ids[e.station as usize], e.distance_m))
        })
    }

    /// Total ports of `port_type` on snapshot stations within `d` meters
    /// of `stay_node`. A station with k ports contributes k. Nodes absent
    /// from the table have zero ports in range.
    pub fn ports_within(
        &self,
        snapshot: &Snapshot,
        stay_node: NodeId,
        d: f64,
        port_type: PortType,
    ) -> Result<u32> {
        if d > self.radius_m {
            return Err(Error::validation(format!(
                "query distance {d} m exceeds table build radius {} m",
                self.radius_m
            )));
        }
        if snapshot.inventory_len() != self.station_ids.len() {
            return Err(Error::validation(
                "snapshot was built from a different inventory than the proximity table",
            ));
        }
        let Some(list) = self.entries.get(&stay_node) else {
            return Ok(0);
        };
        let mut total = 0u32;
        for e in list {
            if e.distance_m > d {
                break;
            }
            total += snapshot.ports(e.station as usize, port_type);
        }
        Ok(total)
    }

    /// Write as CSV `stay_node,station_id,distance_m`, sorted by
    /// (stay_node, distance, station_id). Distances use the shortest
    /// round-trip float representation so rebuilds are byte-identical.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        w.write_record(["stay_node", "station_id", "distance_m"])
            .map_err(|e| Error::validation(e.to_string()))?;
        for (node, id, dist) in self.iter_entries() {
            w.write_record([node.to_string(), id.0.clone(), format!("{dist}")])
                .map_err(|e| Error::validation(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a table back, re-linking station ids against `inventory`.
    /// `radius_m` must be the radius the table was built with; every
    /// stored distance is validated against it.
    pub fn read_csv(path: &Path, inventory: &[ChargingStation], radius_m: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let station_ids: Vec<StationId> = inventory.iter().map(|s| s.id.clone()).collect();
        let index_of: BTreeMap<&StationId, u32> = station_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id, i as u32))
            .collect();
        let mut entries: BTreeMap<NodeId, Vec<TableEntry>> = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = (i + 2) as u64;
            let rec = rec.map_err(|e| Error::parse(path, line, e.to_string()))?;
            if rec.len() != 3 {
                return Err(Error::parse(path, line, "expected 3 fields"));
            }
            let node = NodeId(
                rec[0]
                    .parse::<u64>()
                    .map_err(|e| Error::parse(path, line, e.to_string()))?,
            );
            let sid = StationId(rec[1].to_string());
            let station = *index_of
                .get(&sid)
                .ok_or_else(|| Error::parse(path, line, format!("unknown station {sid}")))?;
            let distance_m = rec[2]
                .parse::<f64>()
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
            if distance_m > radius_m {
                return Err(Error::parse(
                    path,
                    line,
                    format!("distance {distance_m} exceeds table radius {radius_m}"),
                ));
            }
            entries.entry(node).or_default().push(TableEntry {
                station,
                distance_m,
            });
        }
        let mut table = ProximityTable {
            radius_m,
            station_ids,
            entries,
        };
        table.sort_entries();
        Ok(table)
    }

    fn sort_entries(&mut self) {
        let ids = &self.station_ids;
        for list in self.entries.values_mut() {
            list.sort_by(|a, b| {
                a.distance_m
                    .partial_cmp(&b.distance_m)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| ids[a.station as usize].cmp(&ids[b.station as usize]))
            });
        }
    }
}

/// Build the proximity table by running one bounded shortest-path search
/// from each charger node and recording the stay nodes it reaches within
/// `radius_m`.
///
/// `use_gc_prefilter` skips chargers with no stay node inside the
/// great-circle radius before routing; because network distance is never
/// below great-circle distance, the result is identical either way.
pub fn build_proximity_table(
    net: &RoadNetwork,
    stay_nodes: &BTreeSet<NodeId>,
    stations: &[ChargingStation],
    radius_m: f64,
    use_gc_prefilter: bool,
    workers: Workers,
) -> Result<ProximityTable> {
    if !(radius_m > 0.0) {
        return Err(Error::validation("proximity radius must be positive"));
    }
    for s in stations {
        if !net.contains(s.node) {
            return Err(Error::validation(format!(
                "station {} snapped to unknown node {}",
                s.id, s.node
            )));
        }
    }
    for &n in stay_nodes {
        if !net.contains(n) {
            return Err(Error::validation(format!("unknown stay node {n}")));
        }
    }

    let per_station: Vec<Vec<(NodeId, f64)>> = exec::map_ordered(stations, workers, |station| {
        if use_gc_prefilter {
            // Network distance dominates great-circle distance, so a
            // charger node with no stay node in the great-circle ball
            // cannot reach one within the network radius either.
            let (node_lon, node_lat) = net.coords(station.node).unwrap();
            let any_candidate = net
                .nodes_within_gc(node_lon, node_lat, radius_m)
                .iter()
                .any(|n| stay_nodes.contains(n));
            if !any_candidate {
                return Vec::new();
            }
        }
        let reached = net
            .bounded_distance_search(station.node, radius_m)
            .expect("station node validated above");
        let mut hits: Vec<(NodeId, f64)> = reached
            .into_iter()
            .filter(|(n, _)| stay_nodes.contains(n))
            .collect();
        hits.sort_by_key(|(n, _)| *n);
        hits
    });

    let mut entries: BTreeMap<NodeId, Vec<TableEntry>> = BTreeMap::new();
    for (si, hits) in per_station.iter().enumerate() {
        for &(node, dist) in hits {
            entries.entry(node).or_default().push(TableEntry {
                station: si as u32,
                distance_m: dist,
            });
        }
    }
    let mut table = ProximityTable {
        radius_m,
        station_ids: stations.iter().map(|s| s.id.clone()).collect(),
        entries,
    };
    table.sort_entries();
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::PathBuf;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    fn line_net(dir: &Path) -> RoadNetwork {
        let nodes = write_file(
            dir,
            "n.csv",
            "node_id,lon,lat\n0,0.0,0.0\n1,0.005,0.0\n2,0.01,0.0\n",
        );
        let edges = write_file(
            dir,
            "e.csv",
            "from,to,length_m,travel_time_s\n0,1,600,50\n1,0,600,50\n1,2,600,50\n2,1,600,50\n",
        );
        crate::network::load_network(&nodes, &edges).unwrap()
    }

    #[test]
    fn station_at_node_snaps_with_zero_distance() {
        let dir = tempfile::tempdir().unwrap();
        let net = line_net(dir.path());
        let csv = write_file(
            dir.path(),
            "s.csv",
            "station_id,lon,lat,open_date,l2_ports,dcfc_ports\na,0.005,0.0,2020-01-01,2,1\n",
        );
        let stations = load_stations(&csv, &net).unwrap();
        assert_eq!(stations[0].node, NodeId(1));
        assert_eq!(stations[0].snap_m, 0.0);
    }

    #[test]
    fn zero_port_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let net = line_net(dir.path());
        let csv = write_file(
            dir.path(),
            "s.csv",
            "station_id,lon,lat,open_date,l2_ports,dcfc_ports\na,0.0,0.0,2020-01-01,0,0\n",
        );
        let err = load_stations(&csv, &net).unwrap_err();
        assert!(err.to_string().contains("no ports"), "{err}");
    }

    #[test]
    fn bad_date_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let net = line_net(dir.path());
        let csv = write_file(
            dir.path(),
            "s.csv",
            "station_id,lon,lat,open_date,l2_ports,dcfc_ports\na,0.0,0.0,not-a-date,1,0\n",
        );
        let err = load_stations(&csv, &net).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    fn fake_station(id: &str, node: u64, open: &str, l2: u32, dcfc: u32) -> ChargingStation {
        ChargingStation {
            id: StationId(id.to_string()),
            lon: 0.0,
            lat: 0.0,
            open_date: date(open),
            l2_ports: l2,
            dcfc_ports: dcfc,
            node: NodeId(node),
            snap_m: 0.0,
        }
    }

    #[test]
    fn snapshot_cutoffs() {
        let inv = vec![
            fake_station("a", 0, "2015-06-01", 2, 0),
            fake_station("b", 1, "2018-06-01", 0, 1),
            fake_station("c", 2, "2021-06-01", 4, 2),
        ];
        assert_eq!(build_snapshot(&inv, date("2014-12-31")).station_count(), 0);
        assert_eq!(build_snapshot(&inv, date("2021-06-01")).station_count(), 3);
        let mut prev = 0;
        for y in 2012..=2024 {
            let snap = build_snapshot(&inv, date(&format!("{y}-12-31")));
            assert!(snap.station_count() >= prev);
            prev = snap.station_count();
        }
    }

    #[test]
    fn snapshot_monotone_subset() {
        let inv = vec![
            fake_station("a", 0, "2015-06-01", 2, 0),
            fake_station("b", 1, "2018-06-01", 0, 1),
        ];
        let early = build_snapshot(&inv, date("2016-01-01"));
        let late = build_snapshot(&inv, date("2019-01-01"));
        for i in 0..inv.len() {
            assert!(!early.contains(i) || late.contains(i));
        }
    }

    #[test]
    fn single_charger_single_stay() {
        let dir = tempfile::tempdir().unwrap();
        let net = line_net(dir.path());
        // Charger at node 1, stay at node 0: network distance 600 m.
        let stations = vec![fake_station("a", 1, "2020-01-01", 1, 0)];
        let stays: BTreeSet<NodeId> = [NodeId(0)].into();
        let table = build_proximity_table(&net, &stays, &stations, 3000.0, true, 1).unwrap();
        let rows: Vec<_> = table.iter_entries().collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, NodeId(0));
        assert_eq!(rows[0].2, 600.0);

        let snap = build_snapshot(&stations, date("2020-06-01"));
        assert_eq!(
            table
                .ports_within(&snap, NodeId(0), 1000.0, PortType::L2)
                .unwrap(),
            1
        );
        assert_eq!(
            table
                .ports_within(&snap, NodeId(2), 1000.0, PortType::L2)
                .unwrap(),
            0,
            "node absent from table"
        );
        assert!(table
            .ports_within(&snap, NodeId(0), 4000.0, PortType::L2)
            .is_err());
    }

    #[test]
    fn network_longer_than_gc_is_excluded() {
        // Two nodes 555 m apart great-circle but 3100 m by road: inside
        // the gc prefilter radius yet outside the network radius.
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(
            dir.path(),
            "n.csv",
            "node_id,lon,lat\n0,0.0,0.0\n1,0.005,0.0\n",
        );
        let edges = write_file(
            dir.path(),
            "e.csv",
            "from,to,length_m,travel_time_s\n0,1,3100,100\n1,0,3100,100\n",
        );
        let net = crate::network::load_network(&nodes, &edges).unwrap();
        let stations = vec![fake_station("a", 1, "2020-01-01", 1, 0)];
        let stays: BTreeSet<NodeId> = [NodeId(0)].into();
        for prefilter in [true, false] {
            let table =
                build_proximity_table(&net, &stays, &stations, 3000.0, prefilter, 1).unwrap();
            assert_eq!(table.entry_count(), 0);
        }
    }

    #[test]
    fn table_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let net = line_net(dir.path());
        let stations = vec![
            fake_station("b", 1, "2020-01-01", 1, 0),
            fake_station("a", 2, "2020-01-01", 2, 1),
        ];
        let stays: BTreeSet<NodeId> = [NodeId(0), NodeId(1), NodeId(2)].into();
        let table = build_proximity_table(&net, &stays, &stations, 3000.0, true, 1).unwrap();
        let p1 = dir.path().join("t1.csv");
        table.write_csv(&p1).unwrap();
        let reread = ProximityTable::read_csv(&p1, &stations, 3000.0).unwrap();
        assert_eq!(table, reread);
        let p2 = dir.path().join("t2.csv");
        reread.write_csv(&p2).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "serialization not byte-stable"
        );
    }
}
