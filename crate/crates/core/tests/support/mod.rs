//! Brute-force connectivity oracle: exhaustive simple-path enumeration,
//! independent of the library's breadth-first classifier. Only viable on
//! small graphs, which is exactly what the acceptance checks use it for.

use std::collections::BTreeSet;

use rand::Rng;
use photonbox::topology::{PassCondition, PassageEdge};
use photonbox::{ConnectivityClass, Partition, Polarization, RegionGraph};

fn edge_passes(condition: PassCondition, pol: Polarization) -> bool {
    match condition {
        PassCondition::Open => true,
        PassCondition::PolarizedOnly(axis) => axis == pol,
        PassCondition::Closed => false,
    }
}

fn edge_open_to_any(condition: PassCondition) -> bool {
    !matches!(condition, PassCondition::Closed)
}

/// True when some simple path joins `from` and `to` using only passages
/// accepted by `usable`. Recursive backtracking over all simple paths.
fn some_path<F>(graph: &RegionGraph, from: &str, to: &str, usable: &F) -> bool
where
    F: Fn(&PassageEdge) -> bool,
{
    fn explore<F>(
        graph: &RegionGraph,
        here: &str,
        to: &str,
        visited: &mut Vec<String>,
        usable: &F,
    ) -> bool
    where
        F: Fn(&PassageEdge) -> bool,
    {
        if here == to {
            return true;
        }
        for p in graph.passages() {
            if !usable(p) {
                continue;
            }
            let next = if p.a == here {
                &p.b
            } else if p.b == here {
                &p.a
            } else {
                continue;
            };
            if visited.iter().any(|v| v == next) {
                continue;
            }
            visited.push(next.clone());
            if explore(graph, next, to, visited, usable) {
                return true;
            }
            visited.pop();
        }
        false
    }
    let mut visited = vec![from.to_string()];
    explore(graph, from, to, &mut visited, usable)
}

/// Reference classifier built on path enumeration.
pub fn classify_oracle(
    graph: &RegionGraph,
    a: &str,
    b: &str,
    pol: Polarization,
) -> ConnectivityClass {
    if some_path(graph, a, b, &|p| edge_passes(p.condition, pol)) {
        ConnectivityClass::Connected
    } else if some_path(graph, a, b, &|p| edge_open_to_any(p.condition)) {
        ConnectivityClass::WeaklyDisconnected
    } else {
        ConnectivityClass::StronglyDisconnected
    }
}

fn partition_by_reachability<F>(graph: &RegionGraph, usable: &F) -> Partition
where
    F: Fn(&PassageEdge) -> bool,
{
    let mut blocks: Vec<Vec<String>> = Vec::new();
    let mut placed: BTreeSet<String> = BTreeSet::new();
    for region in graph.regions() {
        if placed.contains(region) {
            continue;
        }
        let block: Vec<String> = graph
            .regions()
            .iter()
            .filter(|other| some_path(graph, region, other, usable))
            .cloned()
            .collect();
        placed.extend(block.iter().cloned());
        blocks.push(block);
    }
    Partition::new(blocks).expect("reachability classes are disjoint")
}

/// Reference strong partition: mutual reachability ignoring only closed
/// passages.
pub fn strong_partition_oracle(graph: &RegionGraph) -> Partition {
    partition_by_reachability(graph, &|p| edge_open_to_any(p.condition))
}

/// Reference weak partition at a fixed polarization.
pub fn weak_partition_oracle(graph: &RegionGraph, pol: Polarization) -> Partition {
    partition_by_reachability(graph, &|p| edge_passes(p.condition, pol))
}

/// Random graph with at most six regions, random pass conditions, and a
/// random rotator subset.
pub fn random_graph(rng: &mut impl Rng) -> RegionGraph {
    let n = rng.random_range(1..=6usize);
    let regions: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
    let mut passages = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(0.6) {
                let condition = match rng.random_range(0..4) {
                    0 => PassCondition::Open,
                    1 => PassCondition::PolarizedOnly(Polarization::H),
                    2 => PassCondition::PolarizedOnly(Polarization::V),
                    _ => PassCondition::Closed,
                };
                passages.push(PassageEdge {
                    a: regions[i].clone(),
                    b: regions[j].clone(),
                    condition,
                });
            }
        }
    }
    let rotators: Vec<String> = regions
        .iter()
        .filter(|_| rng.random_bool(0.3))
        .cloned()
        .collect();
    RegionGraph::new(regions, passages, rotators).expect("generated graph is well formed")
}
