//! Random geometric transmission topologies.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{haversine_km, Bus, BusId, Line, LineId, TopologyFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticGridConfig {
    pub buses: usize,
    /// Distinct corridors (lines after parallel-line removal).
    pub lines: usize,
    /// Extra circuits duplicating existing corridors.
    #[serde(default)]
    pub parallel_lines: usize,
    pub lat_range: [f64; 2],
    pub lon_range: [f64; 2],
}

impl SyntheticGridConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.buses;
        if n < 2 {
            return Err(Error::InvalidInput("a synthetic grid needs at least 2 buses".into()));
        }
        if self.lines + 1 < n || self.lines > n * (n - 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "{} lines cannot form a connected simple graph on {n} buses",
                self.lines
            )));
        }
        if self.lat_range[0] >= self.lat_range[1] || self.lon_range[0] >= self.lon_range[1] {
            return Err(Error::InvalidInput("empty coordinate box".into()));
        }
        Ok(())
    }
}

/// Detour factor between straight-line distance and conductor length.
const ROUTING_FACTOR: f64 = 1.15;

/// Connected random topology: a minimum spanning tree over uniformly placed
/// buses plus short extra corridors, followed by parallel circuits.
pub fn synthetic_topology(cfg: &SyntheticGridConfig, seed: u64) -> Result<TopologyFile> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.buses;
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: BusId(i as u32 + 1),
            lat: round4(rng.random_range(cfg.lat_range[0]..cfg.lat_range[1])),
            lon: round4(rng.random_range(cfg.lon_range[0]..cfg.lon_range[1])),
        })
        .collect();
    let dist = |i: usize, j: usize| haversine_km(buses[i].lat, buses[i].lon, buses[j].lat, buses[j].lon);

    // Prim's algorithm
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(cfg.lines);
    in_tree[0] = true;
    for (j, b) in best.iter_mut().enumerate().skip(1) {
        *b = (dist(0, j), 0);
    }
    for _ in 1..n {
        let next = (0..n)
            .filter(|&j| !in_tree[j])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
            .expect("unvisited bus");
        in_tree[next] = true;
        edges.push((best[next].1.min(next), best[next].1.max(next)));
        for j in 0..n {
            if !in_tree[j] {
                let d = dist(next, j);
                if d < best[j].0 {
                    best[j] = (d, next);
                }
            }
        }
    }

    let mut candidates: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|p| !edges.contains(p))
        .map(|(i, j)| (dist(i, j), i, j))
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    while edges.len() < cfg.lines {
        let before = edges.len();
        let mut rest = Vec::with_capacity(candidates.len());
        for c in candidates {
            if edges.len() < cfg.lines && rng.random_bool(0.5) {
                edges.push((c.1, c.2));
            } else {
                rest.push(c);
            }
        }
        candidates = rest;
        if edges.len() == before && candidates.is_empty() {
            break;
        }
    }

    let mut lines: Vec<Line> = edges
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| Line {
            id: LineId(k as u32 + 1),
            from: buses[i].id,
            to: buses[j].id,
            length_km: (dist(i, j) * ROUTING_FACTOR * 10.0).round().max(1.0) / 10.0,
        })
        .collect();
    let mut picks: Vec<usize> = (0..lines.len()).collect();
    picks.shuffle(&mut rng);
    for (k, &p) in picks.iter().cycle().take(cfg.parallel_lines).enumerate() {
        let src = lines[p].clone();
        let (from, to) = if k % 2 == 0 {
            (src.to, src.from)
        } else {
            (src.from, src.to)
        };
        lines.push(Line {
            id: LineId((cfg.lines + k) as u32 + 1),
            from,
            to,
            length_km: src.length_km,
        });
    }
    Ok(TopologyFile { buses, lines })
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}
