use std::collections::VecDeque;

use dlr_core::graph::{double_hop_adjacency, normalize_operator, to_line_graph, Bus, BusId, Grid, Line, LineId};
use dlr_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected simple grid with at most `max_lines` lines.
fn random_grid(rng: &mut ChaCha8Rng, max_lines: usize) -> Grid {
    let n = rng.random_range(2..=12usize);
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: BusId(100 + 3 * i as u32),
            lat: rng.random_range(29.0..33.0),
            lon: rng.random_range(-100.0..-95.0),
        })
        .collect();
    let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
    let max_extra = (n * (n - 1) / 2).min(max_lines) - pairs.len();
    let extra = rng.random_range(0..=max_extra);
    while pairs.len() < n - 1 + extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && !pairs.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            pairs.push((a, b));
        }
    }
    let lines = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| Line {
            id: LineId(7 + k as u32),
            from: buses[a].id,
            to: buses[b].id,
            length_km: 1.0,
        })
        .collect();
    Grid::new(buses, lines).unwrap()
}

fn shares_bus(a: &Line, b: &Line) -> bool {
    a.from == b.from || a.from == b.to || a.to == b.from || a.to == b.to
}

fn bfs(adj: &[Vec<bool>], src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[src] = Some(0);
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for v in 0..adj.len() {
            if adj[u][v] && dist[v].is_none() {
                dist[v] = Some(dist[u].unwrap() + 1);
                q.push_back(v);
            }
        }
    }
    dist
}

#[test]
fn line_graph_matches_oracles_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..200 {
        let grid = random_grid(&mut rng, 20);
        let lines = grid.lines();
        let m = lines.len();
        assert!(m <= 20);
        let lg = to_line_graph(&grid);

        let oracle1: Vec<Vec<bool>> = (0..m)
            .map(|i| (0..m).map(|j| i != j && shares_bus(&lines[i], &lines[j])).collect())
            .collect();
        for (i, row) in oracle1.iter().enumerate() {
            for (j, &adjacent) in row.iter().enumerate() {
                assert_eq!(lg.adj1[(i, j)] == 1.0, adjacent, "adj1 ({i},{j})");
                assert!(lg.adj1[(i, j)] == 0.0 || lg.adj1[(i, j)] == 1.0);
            }
        }
        for i in 0..m {
            let dist = bfs(&oracle1, i);
            for j in 0..m {
                assert_eq!(lg.adj2[(i, j)] == 1.0, dist[j] == Some(2), "adj2 ({i},{j})");
                if lg.adj2[(i, j)] == 1.0 {
                    assert!(!shares_bus(&lines[i], &lines[j]), "double-hop pair shares a bus");
                }
            }
        }
    }
}

#[test]
fn operator_is_symmetrically_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let lg = to_line_graph(&random_grid(&mut rng, 20));
        let n = lg.node_count();
        let deg: Vec<f64> = (0..n)
            .map(|i| 1.0 + (0..n).map(|j| lg.adj2[(i, j)]).sum::<f64>())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let a = lg.adj2[(i, j)] + if i == j { 1.0 } else { 0.0 };
                let want = a / (deg[i] * deg[j]).sqrt();
                assert!((lg.a_tilde[(i, j)] - want).abs() < 1e-15);
                assert_eq!(lg.a_tilde[(i, j)], lg.a_tilde[(j, i)]);
            }
        }
    }
}

fn adjacency(n: usize, edges: &[(usize, usize)]) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for &(i, j) in edges {
        if i % n != j % n {
            a[(i % n, j % n)] = 1.0;
            a[(j % n, i % n)] = 1.0;
        }
    }
    a
}

proptest! {
    #[test]
    fn double_hop_is_symmetric_and_disjoint(n in 1usize..14, edges in prop::collection::vec((0usize..14, 0usize..14), 0..40)) {
        let a1 = adjacency(n, &edges);
        let a2 = double_hop_adjacency(&a1);
        for i in 0..n {
            prop_assert_eq!(a2[(i, i)], 0.0);
            for j in 0..n {
                prop_assert_eq!(a2[(i, j)], a2[(j, i)]);
                prop_assert!(!(a1[(i, j)] == 1.0 && a2[(i, j)] == 1.0));
            }
        }
    }

    #[test]
    fn normalized_operator_has_unit_spectral_bound(n in 1usize..10, edges in prop::collection::vec((0usize..10, 0usize..10), 0..30)) {
        // D^{-1/2}(A+I)D^{-1/2} has spectral radius 1, so power iteration
        // from a positive vector never grows.
        let op = normalize_operator(&adjacency(n, &edges));
        let mut v = Matrix::filled(n, 1, 1.0);
        let start = v.frobenius_sq().sqrt();
        for _ in 0..20 {
            v = op.matmul(&v).unwrap();
        }
        prop_assert!(v.frobenius_sq().sqrt() <= start * (1.0 + 1e-9));
    }
}
