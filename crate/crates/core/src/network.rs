//! Routable road graph: CSV loading, coordinate snapping, and bounded
//! shortest-path queries by length and by travel time.
//!
//! The graph is directed and immutable after load; queries share no
//! mutable state, so searches from distinct sources can run in parallel.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{self, GridIndex};

/// Opaque road-network node identifier, as given in the node file.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId(pub u64);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy)]
struct EdgeTo {
    to: u32,
    length_m: f64,
    travel_time_s: f64,
}

/// Directed road graph with per-edge length (meters) and travel time
/// (seconds).
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    ids: Vec<NodeId>,
    lonlat: Vec<(f64, f64)>,
    index_of: HashMap<NodeId, u32>,
    out_edges: Vec<Vec<EdgeTo>>,
    edge_count: usize,
    grid: GridIndex,
}

#[derive(Debug, Deserialize, Serialize)]
struct NodeRow {
    node_id: u64,
    lon: f64,
    lat: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct EdgeRow {
    from: u64,
    to: u64,
    length_m: f64,
    travel_time_s: f64,
}

/// Load a network from the node CSV (`node_id,lon,lat`) and edge CSV
/// (`from,to,length_m,travel_time_s`).
///
/// Duplicate edges are permitted (parallel roads); self-loops are
/// rejected. Every edge must join existing nodes and carry positive
/// length and travel time. Edges shorter than the great-circle distance
/// between their endpoints (beyond 1% slack for coordinate rounding) are
/// reported as warnings, not errors.
pub fn load_network(nodes_path: &Path, edges_path: &Path) -> Result<RoadNetwork> {
    let mut ids = Vec::new();
    let mut lonlat = Vec::new();
    let mut index_of: HashMap<NodeId, u32> = HashMap::new();

    let mut rdr = open_csv(nodes_path)?;
    for (i, row) in rdr.deserialize::<NodeRow>().enumerate() {
        let line = (i + 2) as u64;
        let row = row.map_err(|e| Error::parse(nodes_path, line, e.to_string()))?;
        geo::check_coords((row.lon, row.lat))
            .map_err(|e| Error::parse(nodes_path, line, e.to_string()))?;
        let id = NodeId(row.node_id);
        if index_of.insert(id, ids.len() as u32).is_some() {
            return Err(Error::parse(
                nodes_path,
                line,
                format!("duplicate node_id {id}"),
            ));
        }
        ids.push(id);
        lonlat.push((row.lon, row.lat));
    }

    let mut out_edges = vec![Vec::new(); ids.len()];
    let mut edge_count = 0usize;
    let mut dangling: Vec<String> = Vec::new();
    let mut undershoot = 0usize;

    let mut rdr = open_csv(edges_path)?;
    for (i, row) in rdr.deserialize::<EdgeRow>().enumerate() {
        let line = (i + 2) as u64;
        let row = row.map_err(|e| Error::parse(edges_path, line, e.to_string()))?;
        if row.from == row.to {
            return Err(Error::parse(
                edges_path,
                line,
                format!("self-loop on node {}", row.from),
            ));
        }
        if !(row.length_m > 0.0) || !(row.travel_time_s > 0.0) {
            return Err(Error::parse(
                edges_path,
                line,
                format!(
                    "edge {}->{} must have positive length and travel time",
                    row.from, row.to
                ),
            ));
        }
        let (from, to) = (NodeId(row.from), NodeId(row.to));
        let (fi, ti) = match (index_of.get(&from), index_of.get(&to)) {
            (Some(&f), Some(&t)) => (f, t),
            (f, t) => {
                if f.is_none() {
                    dangling.push(format!("line {line}: edge references missing node {from}"));
                }
                if t.is_none() {
                    dangling.push(format!("line {line}: edge references missing node {to}"));
                }
                continue;
            }
        };
        let gc = geo::great_circle_unchecked(lonlat[fi as usize], lonlat[ti as usize]);
        if row.length_m < gc * 0.99 {
            undershoot += 1;
        }
        out_edges[fi as usize].push(EdgeTo {
            to: ti,
            length_m: row.length_m,
            travel_time_s: row.travel_time_s,
        });
        edge_count += 1;
    }

    if !dangling.is_empty() {
        let shown = dangling.iter().take(10).cloned().collect::<Vec<_>>();
        return Err(Error::validation(format!(
            "{} dangling edge endpoint(s) in {}: {}",
            dangling.len(),
            edges_path.display(),
            shown.join("; ")
        )));
    }
    if undershoot > 0 {
        log::warn!(
            "{undershoot} edge(s) in {} are shorter than the great-circle \
             distance between their endpoints (beyond 1% slack)",
            edges_path.display()
        );
    }

    let grid = GridIndex::build(&lonlat, geo::DEFAULT_CELL_DEG);
    Ok(RoadNetwork {
        ids,
        lonlat,
        index_of,
        out_edges,
        edge_count,
        grid,
    })
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

impl RoadNetwork {
    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index_of.contains_key(&node)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().copied()
    }

    pub fn coords(&self, node: NodeId) -> Option<(f64, f64)> {
        self.index_of.get(&node).map(|&i| self.lonlat[i as usize])
    }

    fn idx(&self, node: NodeId) -> Result<u32> {
        self.index_of
            .get(&node)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown node {node}")))
    }

    /// Node minimizing great-circle distance to the query point, with the
    /// snapping distance in meters. Ties go to the smallest node id.
    pub fn nearest_node(&self, lon: f64, lat: f64) -> Result<(NodeId, f64)> {
        geo::check_coords((lon, lat))?;
        let (i, d) = self
            .grid
            .nearest((lon, lat), &self.lonlat, &self.ids)
            .ok_or_else(|| Error::validation("nearest_node on empty network"))?;
        Ok((self.ids[i as usize], d))
    }

    /// Network node ids within great-circle `radius_m` of a point.
    pub fn nodes_within_gc(&self, lon: f64, lat: f64, radius_m: f64) -> Vec<NodeId> {
        self.grid
            .within_radius((lon, lat), radius_m, &self.lonlat)
            .into_iter()
            .map(|i| self.ids[i as usize])
            .collect()
    }

    /// Edge-length-weighted shortest-path distance from `source` to every
    /// node reachable within `max_dist` meters, inclusive.
    pub fn bounded_distance_search(
        &self,
        source: NodeId,
        max_dist: f64,
    ) -> Result<HashMap<NodeId, f64>> {
        if !(max_dist > 0.0) {
            return Err(Error::validation("max_dist must be positive"));
        }
        let src = self.idx(source)?;
        let mut settled: HashMap<u32, f64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        heap.push(HeapEntry { cost: 0.0, node: src });
        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if settled.contains_key(&node) {
                continue;
            }
            settled.insert(node, cost);
            for e in &self.out_edges[node as usize] {
                let next = cost + e.length_m;
                if next <= max_dist && !settled.contains_key(&e.to) {
                    heap.push(HeapEntry {
                        cost: next,
                        node: e.to,
                    });
                }
            }
        }
        Ok(settled
            .into_iter()
            .map(|(i, d)| (self.ids[i as usize], d))
            .collect())
    }

    /// Minimal travel time in seconds, or `None` when no path exists.
    pub fn shortest_travel_time(&self, origin: NodeId, dest: NodeId) -> Result<Option<f64>> {
        Ok(self.route(origin, dest)?.map(|(t, _)| t))
    }

    /// Travel-time-optimal route, returning `(seconds, meters)`: the
    /// minimal travel time and the length of that route.
    pub fn route(&self, origin: NodeId, dest: NodeId) -> Result<Option<(f64, f64)>> {
        let src = self.idx(origin)?;
        let dst = self.idx(dest)?;
        if src == dst {
            return Ok(Some((0.0, 0.0)));
        }
        let mut settled: HashMap<u32, (f64, f64)> = HashMap::new();
        let mut heap = BinaryHeap::new();
        heap.push(TimedEntry {
            cost: 0.0,
            length: 0.0,
            node: src,
        });
        while let Some(TimedEntry { cost, length, node }) = heap.pop() {
            if settled.contains_key(&node) {
                continue;
            }
            settled.insert(node, (cost, length));
            if node == dst {
                return Ok(Some((cost, length)));
            }
            for e in &self.out_edges[node as usize] {
                if !settled.contains_key(&e.to) {
                    heap.push(TimedEntry {
                        cost: cost + e.travel_time_s,
                        length: length + e.length_m,
                        node: e.to,
                    });
                }
            }
        }
        Ok(None)
    }

    /// Write the graph back out in the load format. Floats use the
    /// shortest round-trip representation, so load(write(net)) == net.
    pub fn write_csv(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(nodes_path).map_err(csv_io(nodes_path))?;
        for (i, &id) in self.ids.iter().enumerate() {
            let (lon, lat) = self.lonlat[i];
            w.serialize(NodeRow {
                node_id: id.0,
                lon,
                lat,
            })
            .map_err(csv_io(nodes_path))?;
        }
        w.flush().map_err(|e| Error::io(nodes_path, e))?;

        let mut w = csv::Writer::from_path(edges_path).map_err(csv_io(edges_path))?;
        for (fi, edges) in self.out_edges.iter().enumerate() {
            for e in edges {
                w.serialize(EdgeRow {
                    from: self.ids[fi].0,
                    to: self.ids[e.to as usize].0,
                    length_m: e.length_m,
                    travel_time_s: e.travel_time_s,
                })
                .map_err(csv_io(edges_path))?;
            }
        }
        w.flush().map_err(|e| Error::io(edges_path, e))?;
        Ok(())
    }

    /// Logical equality: same nodes with same coordinates and the same
    /// multiset of edges per node.
    pub fn same_graph(&self, other: &RoadNetwork) -> bool {
        if self.ids != other.ids || self.lonlat != other.lonlat {
            return false;
        }
        for (a, b) in self.out_edges.iter().zip(&other.out_edges) {
            let key = |e: &EdgeTo| (e.to, e.length_m.to_bits(), e.travel_time_s.to_bits());
            let mut ka: Vec<_> = a.iter().map(key).collect();
            let mut kb: Vec<_> = b.iter().map(key).collect();
            ka.sort_unstable();
            kb.sort_unstable();
            if ka != kb {
                return false;
            }
        }
        true
    }
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::validation(format!("{}: {other:?}", path.display())),
    }
}

/// Min-heap entry ordered by (cost, node index) so pop order, and thus
/// float summation order, is deterministic.
#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(PartialEq)]
struct TimedEntry {
    cost: f64,
    length: f64,
    node: u32,
}

impl Eq for TimedEntry {}

impl Ord for TimedEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for TimedEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use std::path::PathBuf;

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        p
    }

    /// 2x2 grid, all adjacent pairs connected both ways.
    fn square_grid(dir: &Path) -> RoadNetwork {
        let nodes = write_file(
            dir,
            "nodes.csv",
            "node_id,lon,lat\n0,0.0,0.0\n1,0.01,0.0\n2,0.0,0.01\n3,0.01,0.01\n",
        );
        let edges = write_file(
            dir,
            "edges.csv",
            "from,to,length_m,travel_time_s\n\
             0,1,1200,100\n1,0,1200,100\n\
             0,2,1200,100\n2,0,1200,100\n\
             1,3,1200,100\n3,1,1200,100\n\
             2,3,1200,100\n3,2,1200,100\n",
        );
        load_network(&nodes, &edges).unwrap()
    }

    #[test]
    fn loads_square_grid() {
        let dir = tempfile::tempdir().unwrap();
        let net = square_grid(dir.path());
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.edge_count(), 8);
    }

    #[test]
    fn dangling_edge_names_missing_node() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(dir.path(), "n.csv", "node_id,lon,lat\n1,0.0,0.0\n");
        let edges = write_file(
            dir.path(),
            "e.csv",
            "from,to,length_m,travel_time_s\n1,99,10,1\n",
        );
        let err = load_network(&nodes, &edges).unwrap_err();
        assert!(err.to_string().contains("99"), "{err}");
    }

    #[test]
    fn self_loop_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(dir.path(), "n.csv", "node_id,lon,lat\n1,0.0,0.0\n");
        let edges = write_file(
            dir.path(),
            "e.csv",
            "from,to,length_m,travel_time_s\n1,1,10,1\n",
        );
        assert!(load_network(&nodes, &edges).is_err());
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(dir.path(), "n.csv", "node_id,lon,lat\n1,0.0,0.0\nx,y,z\n");
        let edges = write_file(dir.path(), "e.csv", "from,to,length_m,travel_time_s\n");
        let err = load_network(&nodes, &edges).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
    }

    #[test]
    fn snap_at_node_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let net = square_grid(dir.path());
        let (id, d) = net.nearest_node(0.01, 0.0).unwrap();
        assert_eq!(id, NodeId(1));
        assert_eq!(d, 0.0);
    }

    #[test]
    fn snap_tie_takes_smaller_id() {
        // Query on the midpoint of nodes 0 and 1 (same latitude).
        let dir = tempfile::tempdir().unwrap();
        let net = square_grid(dir.path());
        let (id, _) = net.nearest_node(0.005, 0.0).unwrap();
        assert_eq!(id, NodeId(0));
    }

    #[test]
    fn bounded_search_line_graph() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(
            dir.path(),
            "n.csv",
            "node_id,lon,lat\n10,0.0,0.0\n11,0.01,0.0\n12,0.02,0.0\n",
        );
        let edges = write_file(
            dir.path(),
            "e.csv",
            "from,to,length_m,travel_time_s\n10,11,1000,60\n11,12,1000,60\n",
        );
        let net = load_network(&nodes, &edges).unwrap();

        let got = net.bounded_distance_search(NodeId(10), 1500.0).unwrap();
        let want: HashMap<_, _> = [(NodeId(10), 0.0), (NodeId(11), 1000.0)].into();
        assert_eq!(got, want);

        let got = net.bounded_distance_search(NodeId(10), 2000.0).unwrap();
        let want: HashMap<_, _> =
            [(NodeId(10), 0.0), (NodeId(11), 1000.0), (NodeId(12), 2000.0)].into();
        assert_eq!(got, want, "cutoff is inclusive");
    }

    #[test]
    fn travel_time_identity_and_disconnection() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = write_file(
            dir.path(),
            "n.csv",
            "node_id,lon,lat\n1,0.0,0.0\n2,0.01,0.0\n3,0.5,0.5\n4,0.51,0.5\n",
        );
        let edges = write_file(
            dir.path(),
            "e.csv",
            "from,to,length_m,travel_time_s\n1,2,1200,90\n2,1,1200,90\n3,4,1200,90\n4,3,1200,90\n",
        );
        let net = load_network(&nodes, &edges).unwrap();
        assert_eq!(net.shortest_travel_time(NodeId(1), NodeId(1)).unwrap(), Some(0.0));
        assert_eq!(net.shortest_travel_time(NodeId(1), NodeId(3)).unwrap(), None);
        assert!(net.shortest_travel_time(NodeId(1), NodeId(42)).is_err());
    }

    #[test]
    fn write_then_reload_same_graph() {
        let dir = tempfile::tempdir().unwrap();
        let net = square_grid(dir.path());
        let n2 = dir.path().join("out_nodes.csv");
        let e2 = dir.path().join("out_edges.csv");
        net.write_csv(&n2, &e2).unwrap();
        let reloaded = load_network(&n2, &e2).unwrap();
        assert!(net.same_graph(&reloaded));
    }
}
