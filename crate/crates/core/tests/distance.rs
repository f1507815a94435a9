mod common;

use proptest::prelude::*;

use common::{bus, grid, line};
use lvse_core::grid::{BusKind, GridTopology};

/// Minimum |Z| over every simple path, by exhaustive enumeration.
fn brute_force_distance(g: &GridTopology, from: usize, to: usize) -> f64 {
    fn walk(g: &GridTopology, at: usize, to: usize, seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if at == to {
            *best = best.min(acc);
            return;
        }
        for l in &g.lines {
            let (a, b) = (g.bus_idx(&l.from_bus).unwrap(), g.bus_idx(&l.to_bus).unwrap());
            let next = if a == at { b } else if b == at { a } else { continue };
            if !seen[next] {
                seen[next] = true;
                walk(g, next, to, seen, acc + l.impedance_magnitude(), best);
                seen[next] = false;
            }
        }
    }
    let mut seen = vec![false; g.buses.len()];
    seen[from] = true;
    let mut best = f64::INFINITY;
    walk(g, from, to, &mut seen, 0.0, &mut best);
    best
}

/// Random connected grid: a random spanning tree plus a few chords.
fn arb_grid() -> impl Strategy<Value = GridTopology> {
    (3usize..8).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let imps = proptest::collection::vec((0.01f64..1.0, 0.0f64..1.0), n - 1 + 3);
        let chords = proptest::collection::vec((0..n, 0..n), 0..4);
        (Just(n), parents, imps, chords).prop_map(|(n, parents, imps, chords)| {
            let mut buses = vec![bus("B0", BusKind::SlackCoupling)];
            buses.extend((1..n).map(|i| bus(&format!("B{i}"), BusKind::Junction)));
            let mut lines = Vec::new();
            for (i, p) in parents.into_iter().enumerate() {
                let (r, x) = imps[i];
                lines.push(line(&format!("T{}", i + 1), &format!("B{p}"), &format!("B{}", i + 1), r, x));
            }
            for (k, (a, b)) in chords.into_iter().enumerate() {
                if a != b {
                    let (r, x) = imps[n - 1 + k % 3];
                    lines.push(line(&format!("C{k}"), &format!("B{a}"), &format!("B{b}"), r, x));
                }
            }
            grid(buses, lines, vec![], vec![])
        })
    })
}

proptest! {
    #[test]
    fn dijkstra_matches_path_enumeration(g in arb_grid()) {
        let n = g.buses.len();
        for a in 0..n {
            let d = g.distances_from(a);
            for b in 0..n {
                let oracle = brute_force_distance(&g, a, b);
                prop_assert!((d[b] - oracle).abs() <= 1e-12 * oracle.max(1.0), "{a}->{b}: {} vs {oracle}", d[b]);
            }
        }
    }

    #[test]
    fn distance_is_a_metric(g in arb_grid()) {
        let n = g.buses.len();
        let d: Vec<Vec<f64>> = (0..n).map(|a| g.distances_from(a)).collect();
        for a in 0..n {
            prop_assert_eq!(d[a][a], 0.0);
            for b in 0..n {
                prop_assert!((d[a][b] - d[b][a]).abs() < 1e-12);
                if a != b {
                    prop_assert!(d[a][b] > 0.0);
                }
                for c in 0..n {
                    prop_assert!(d[a][c] <= d[a][b] + d[b][c] + 1e-12);
                }
            }
        }
    }
}

#[test]
fn parallel_paths_take_the_cheaper_one() {
    let g = grid(
        vec![bus("A", BusKind::SlackCoupling), bus("B", BusKind::Junction), bus("C", BusKind::Junction)],
        vec![line("L1", "A", "B", 0.3, 0.4), line("L2", "B", "C", 0.3, 0.4), line("L3", "A", "C", 0.6, 0.8)],
        vec![],
        vec![],
    );
    assert!((g.electrical_distance("A", "C").unwrap() - 1.0).abs() < 1e-12);
    assert!((g.electrical_distance("C", "B").unwrap() - 0.5).abs() < 1e-12);
    assert!(g.electrical_distance("A", "Z").is_err());
}
