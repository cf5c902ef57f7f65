//! Grid topology, line-graph conversion and the double-hop operator.
//!
//! A transmission grid is an undirected simple graph of buses joined by
//! lines. Forecasting runs on its line graph, where every line becomes a
//! node and two nodes are adjacent when their lines share a bus. Node
//! features of the line graph are the two endpoint bus feature vectors
//! followed by the line's own features, so every row has the same width
//! regardless of bus degree.
//!
//! The double-hop adjacency keeps only pairs at shortest-path distance
//! exactly two in the line graph. Such lines never share a bus, so
//! aggregating over them never sums the same bus feature twice.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BusId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub u32);

impl std::fmt::Display for BusId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::fmt::Display for LineId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: LineId,
    pub from: BusId,
    pub to: BusId,
    pub length_km: f64,
}

impl Line {
    fn key(&self) -> (BusId, BusId) {
        if self.from <= self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

/// On-disk topology document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyFile {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

/// Validated grid: unique ids, no self-loops, no parallel lines.
#[derive(Debug, Clone)]
pub struct Grid {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    bus_index: BTreeMap<BusId, usize>,
}

impl Grid {
    pub fn new(buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self> {
        let mut bus_index = BTreeMap::new();
        for (i, b) in buses.iter().enumerate() {
            if !(b.lat.is_finite() && b.lon.is_finite()) {
                return Err(Error::InvalidGrid(format!("bus {} has non-finite coordinates", b.id)));
            }
            if bus_index.insert(b.id, i).is_some() {
                return Err(Error::InvalidGrid(format!("duplicate bus id {}", b.id)));
            }
        }
        let mut line_ids = HashSet::new();
        let mut pairs = HashSet::new();
        for l in &lines {
            if !line_ids.insert(l.id) {
                return Err(Error::InvalidGrid(format!("duplicate line id {}", l.id)));
            }
            if l.from == l.to {
                return Err(Error::InvalidGrid(format!(
                    "line {} is a self-loop at bus {}",
                    l.id, l.from
                )));
            }
            for end in [l.from, l.to] {
                if !bus_index.contains_key(&end) {
                    return Err(Error::InvalidGrid(format!(
                        "line {} references unknown bus {end}",
                        l.id
                    )));
                }
            }
            if !(l.length_km.is_finite() && l.length_km > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "line {} has invalid length {}",
                    l.id, l.length_km
                )));
            }
            if !pairs.insert(l.key()) {
                let (a, b) = l.key();
                return Err(Error::InvalidGrid(format!(
                    "line {} is parallel to another line between buses {a} and {b}",
                    l.id
                )));
            }
        }
        Ok(Grid {
            buses,
            lines,
            bus_index,
        })
    }

    /// Builds a grid keeping only the first line of every group of parallel
    /// lines. Returns the ids of the dropped lines.
    pub fn dedup_parallel(buses: Vec<Bus>, lines: Vec<Line>) -> Result<(Self, Vec<LineId>)> {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(lines.len());
        let mut dropped = Vec::new();
        for l in lines {
            if l.from != l.to && !seen.insert(l.key()) {
                dropped.push(l.id);
            } else {
                kept.push(l);
            }
        }
        Ok((Grid::new(buses, kept)?, dropped))
    }

    pub fn from_topology(file: TopologyFile) -> Result<Self> {
        Grid::new(file.buses, file.lines)
    }

    pub fn to_topology(&self) -> TopologyFile {
        TopologyFile {
            buses: self.buses.clone(),
            lines: self.lines.clone(),
        }
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file: TopologyFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        Grid::from_topology(file)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(&mut f, &self.to_topology())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_position(&self, id: BusId) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn line_position(&self, id: LineId) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// Bus positions of a line's endpoints, ordered by ascending bus id.
    pub fn endpoints(&self, line: usize) -> (usize, usize) {
        let (a, b) = self.lines[line].key();
        (self.bus_index[&a], self.bus_index[&b])
    }

    /// Initial bearing in degrees `[0, 360)` from the lower-id endpoint to
    /// the higher-id endpoint.
    pub fn line_azimuth(&self, line: usize) -> f64 {
        let (a, b) = self.endpoints(line);
        let (a, b) = (&self.buses[a], &self.buses[b]);
        bearing_deg(a.lat, a.lon, b.lat, b.lon)
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    const EARTH_RADIUS_KM: f64 = 6371.0;
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

fn bearing_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon2 - lon1).to_radians();
    let y = dl.sin() * p2.cos();
    let x = p1.cos() * p2.sin() - p1.sin() * p2.cos() * dl.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Line graph of a [`Grid`] together with the graph operators the models use.
#[derive(Debug, Clone)]
pub struct LineGraphIndex {
    pub node_origin: Vec<LineId>,
    /// Endpoint bus ids per line-graph node, ascending.
    pub endpoints: Vec<(BusId, BusId)>,
    pub adj1: Matrix,
    pub adj2: Matrix,
    pub a_tilde: Matrix,
}

impl LineGraphIndex {
    pub fn node_count(&self) -> usize {
        self.node_origin.len()
    }

    /// Normalized single-hop operator `D^{-1/2}(A + I)D^{-1/2}`.
    pub fn single_hop_operator(&self) -> Matrix {
        normalize_operator(&self.adj1)
    }
}

/// Converts a grid to its line graph; node `i` is `grid.lines()[i]`.
pub fn to_line_graph(grid: &Grid) -> LineGraphIndex {
    let n = grid.line_count();
    let mut incident: BTreeMap<BusId, Vec<usize>> = BTreeMap::new();
    for (i, l) in grid.lines().iter().enumerate() {
        incident.entry(l.from).or_default().push(i);
        incident.entry(l.to).or_default().push(i);
    }
    let mut adj1 = Matrix::zeros(n, n);
    for lines in incident.values() {
        for (k, &i) in lines.iter().enumerate() {
            for &j in &lines[k + 1..] {
                adj1[(i, j)] = 1.0;
                adj1[(j, i)] = 1.0;
            }
        }
    }
    let adj2 = double_hop_adjacency(&adj1);
    let a_tilde = normalize_operator(&adj2);
    LineGraphIndex {
        node_origin: grid.lines().iter().map(|l| l.id).collect(),
        endpoints: grid.lines().iter().map(Line::key).collect(),
        adj1,
        adj2,
        a_tilde,
    }
}

/// Pairs at shortest-path distance exactly two: reachable through one
/// intermediate node, not themselves adjacent, and distinct.
pub fn double_hop_adjacency(adj1: &Matrix) -> Matrix {
    let n = adj1.rows();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| adj1[(i, j)] != 0.0).collect())
        .collect();
    let mut adj2 = Matrix::zeros(n, n);
    for i in 0..n {
        for &j in &neighbors[i] {
            for &k in &neighbors[j] {
                if k != i && adj1[(i, k)] == 0.0 {
                    adj2[(i, k)] = 1.0;
                }
            }
        }
    }
    adj2
}

/// Symmetric degree normalization of `adj + I`.
pub fn normalize_operator(adj: &Matrix) -> Matrix {
    let n = adj.rows();
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let deg = 1.0 + adj.row(i).iter().sum::<f64>();
            1.0 / deg.sqrt()
        })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let a = adj[(i, j)] + if i == j { 1.0 } else { 0.0 };
        if a == 0.0 {
            0.0
        } else {
            inv_sqrt_deg[i] * a * inv_sqrt_deg[j]
        }
    })
}

/// Shortest-path hop counts from `source` (`usize::MAX` if unreachable).
pub fn bfs_distances(adj: &Matrix, source: usize) -> Vec<usize> {
    let n = adj.rows();
    let mut dist = vec![usize::MAX; n];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if adj[(u, v)] != 0.0 && dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Widths of the per-bus and per-line feature blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeFeatureSchema {
    pub node_dim: usize,
    pub edge_dim: usize,
}

impl EdgeFeatureSchema {
    pub fn total_dim(&self) -> usize {
        2 * self.node_dim + self.edge_dim
    }
}

/// Line-graph feature matrix for one time step.
///
/// `node_feats` has one row per bus (grid order) and `edge_feats` one row
/// per line. Row `e` of the result is `f(lower-id endpoint) ‖ f(higher-id
/// endpoint) ‖ f(e)`.
pub fn assemble_line_features(
    grid: &Grid,
    schema: EdgeFeatureSchema,
    node_feats: &Matrix,
    edge_feats: &Matrix,
) -> Result<Matrix> {
    if node_feats.shape() != (grid.bus_count(), schema.node_dim) {
        return shape_err(
            "assemble_line_features",
            format!(
                "bus features {:?}, expected ({}, {})",
                node_feats.shape(),
                grid.bus_count(),
                schema.node_dim
            ),
        );
    }
    if edge_feats.shape() != (grid.line_count(), schema.edge_dim) {
        return shape_err(
            "assemble_line_features",
            format!(
                "line features {:?}, expected ({}, {})",
                edge_feats.shape(),
                grid.line_count(),
                schema.edge_dim
            ),
        );
    }
    let mut out = Matrix::zeros(grid.line_count(), schema.total_dim());
    let nv = schema.node_dim;
    for e in 0..grid.line_count() {
        let (a, b) = grid.endpoints(e);
        let row = out.row_mut(e);
        row[..nv].copy_from_slice(node_feats.row(a));
        row[nv..2 * nv].copy_from_slice(node_feats.row(b));
        row[2 * nv..].copy_from_slice(edge_feats.row(e));
    }
    Ok(out)
}

/// Writes a matrix as CSV with line ids as row and column labels.
pub fn write_adjacency_csv(path: &Path, labels: &[LineId], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["line_id".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    w.write_record(&header)?;
    for (i, l) in labels.iter().enumerate() {
        let mut rec = vec![l.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Bus ids shared by two lines.
pub fn shared_buses(a: (BusId, BusId), b: (BusId, BusId)) -> usize {
    let sa: BTreeSet<BusId> = [a.0, a.1].into();
    [b.0, b.1].iter().filter(|x| sa.contains(x)).count()
}
