//! Spatial connectivity of the bench.
//!
//! The bench is abstracted as an undirected graph of regions. Each passage
//! between two regions carries a [`PassCondition`]: open, polarization
//! selective, or closed. Some regions additionally host an internal-state
//! manipulation (a Pockels cell or equivalent); those are the graph's
//! rotator set.
//!
//! Two regions are *connected* for a packet when a path exists that the
//! packet can traverse at its fixed polarization. They are *strongly
//! disconnected* when no path exists even if the polarization could be
//! flipped at will, i.e. when removing only the closed passages already
//! separates them. Everything in between is *weak* disconnectivity: the
//! packet is trapped as it is, but an internal-state manipulation would
//! free it. Collapse policies hang off exactly this distinction.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use crate::error::{Error, Result};
use crate::qstate::Polarization;

/// Traversability of one passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassCondition {
    /// Passable by any polarization.
    Open,
    /// Passable only by the matching polarization.
    PolarizedOnly(Polarization),
    /// Passable by nothing (a closed shutter).
    Closed,
}

impl PassCondition {
    fn passes(self, pol: Polarization) -> bool {
        match self {
            PassCondition::Open => true,
            PassCondition::PolarizedOnly(axis) => axis == pol,
            PassCondition::Closed => false,
        }
    }

    fn passes_some_polarization(self) -> bool {
        !matches!(self, PassCondition::Closed)
    }
}

/// Relation between two regions for a packet at fixed polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectivityClass {
    /// A fixed-polarization path exists.
    Connected,
    /// No fixed-polarization path, but polarization manipulation would
    /// open one.
    WeaklyDisconnected,
    /// No path exists under any polarization history.
    StronglyDisconnected,
}

impl fmt::Display for ConnectivityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConnectivityClass::Connected => write!(f, "connected"),
            ConnectivityClass::WeaklyDisconnected => write!(f, "weakly-disconnected"),
            ConnectivityClass::StronglyDisconnected => {
                write!(f, "strongly-disconnected")
            }
        }
    }
}

/// One passage between two regions.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageEdge {
    pub a: String,
    pub b: String,
    pub condition: PassCondition,
}

/// Undirected region graph with pass conditions and rotator regions.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    regions: BTreeSet<String>,
    passages: Vec<PassageEdge>,
    rotators: BTreeSet<String>,
}

impl RegionGraph {
    pub fn new(
        regions: impl IntoIterator<Item = String>,
        passages: Vec<PassageEdge>,
        rotators: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let regions: BTreeSet<String> = regions.into_iter().collect();
        if regions.is_empty() {
            return Err(Error::Config("region graph needs at least one region".into()));
        }
        for p in &passages {
            if !regions.contains(&p.a) || !regions.contains(&p.b) {
                return Err(Error::Config(format!(
                    "passage {}--{} references an unknown region",
                    p.a, p.b
                )));
            }
            if p.a == p.b {
                return Err(Error::Config(format!(
                    "passage {}--{} is a self-loop",
                    p.a, p.b
                )));
            }
        }
        let rotators: BTreeSet<String> = rotators.into_iter().collect();
        for r in &rotators {
            if !regions.contains(r) {
                return Err(Error::Config(format!(
                    "rotator region `{r}` is not a region"
                )));
            }
        }
        Ok(RegionGraph {
            regions,
            passages,
            rotators,
        })
    }

    pub fn regions(&self) -> &BTreeSet<String> {
        &self.regions
    }

    pub fn passages(&self) -> &[PassageEdge] {
        &self.passages
    }

    pub fn rotators(&self) -> &BTreeSet<String> {
        &self.rotators
    }

    /// Copy of the graph with the condition of the passage joining `a` and
    /// `b` replaced. Errors if no such passage exists.
    pub fn with_condition(
        &self,
        a: &str,
        b: &str,
        condition: PassCondition,
    ) -> Result<Self> {
        let mut out = self.clone();
        let edge = out
            .passages
            .iter_mut()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .ok_or_else(|| {
                Error::Config(format!("no passage joins `{a}` and `{b}`"))
            })?;
        edge.condition = condition;
        Ok(out)
    }

    fn require_region(&self, r: &str) -> Result<()> {
        if self.regions.contains(r) {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown region `{r}`")))
        }
    }

    /// Breadth-first reachability under an edge filter.
    fn reachable_from<F>(&self, start: &str, passable: F) -> BTreeSet<String>
    where
        F: Fn(&PassageEdge) -> bool,
    {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(start.to_string());
        queue.push_back(start.to_string());
        while let Some(cur) = queue.pop_front() {
            for p in &self.passages {
                if !passable(p) {
                    continue;
                }
                let next = if p.a == cur {
                    &p.b
                } else if p.b == cur {
                    &p.a
                } else {
                    continue;
                };
                if seen.insert(next.clone()) {
                    queue.push_back(next.clone());
                }
            }
        }
        seen
    }

    fn components<F>(&self, passable: F) -> Partition
    where
        F: Fn(&PassageEdge) -> bool + Copy,
    {
        let mut assigned: BTreeSet<String> = BTreeSet::new();
        let mut blocks = Vec::new();
        // Iterating a BTreeSet visits regions in identifier order, so each
        // block is discovered from its smallest member.
        for r in &self.regions {
            if assigned.contains(r) {
                continue;
            }
            let comp = self.reachable_from(r, passable);
            assigned.extend(comp.iter().cloned());
            blocks.push(comp.into_iter().collect());
        }
        Partition { blocks }
    }

    /// How regions `a` and `b` relate for a packet polarized along `pol`.
    pub fn classify(
        &self,
        a: &str,
        b: &str,
        pol: Polarization,
    ) -> Result<ConnectivityClass> {
        self.require_region(a)?;
        self.require_region(b)?;
        let fixed = self.reachable_from(a, |p| p.condition.passes(pol));
        if fixed.contains(b) {
            return Ok(ConnectivityClass::Connected);
        }
        let any = self.reachable_from(a, |p| p.condition.passes_some_polarization());
        if any.contains(b) {
            Ok(ConnectivityClass::WeaklyDisconnected)
        } else {
            Ok(ConnectivityClass::StronglyDisconnected)
        }
    }

    /// Partition into maximal blocks no packet can leave under any
    /// polarization history: components once closed passages are removed.
    pub fn strong_partition(&self) -> Partition {
        self.components(|p| p.condition.passes_some_polarization())
    }

    /// Partition into maximal blocks a packet at fixed polarization `pol`
    /// cannot leave without an internal-state manipulation.
    pub fn weak_partition(&self, pol: Polarization) -> Partition {
        self.components(|p| p.condition.passes(pol))
    }
}

/// Disjoint blocks of regions. Blocks are ordered by their smallest member
/// and each block lists its members in identifier order, so equal
/// partitions compare equal structurally.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    blocks: Vec<Vec<String>>,
}

impl Partition {
    /// Normalizes and checks disjointness.
    pub fn new(blocks: Vec<Vec<String>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut normalized: Vec<Vec<String>> = Vec::with_capacity(blocks.len());
        for mut block in blocks {
            if block.is_empty() {
                continue;
            }
            block.sort();
            block.dedup();
            for r in &block {
                if !seen.insert(r.clone()) {
                    return Err(Error::Config(format!(
                        "region `{r}` appears in more than one block"
                    )));
                }
            }
            normalized.push(block);
        }
        normalized.sort_by(|x, y| x[0].cmp(&y[0]));
        Ok(Partition { blocks: normalized })
    }

    pub fn blocks(&self) -> &[Vec<String>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Index of the block containing `region`.
    pub fn block_of(&self, region: &str) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.iter().any(|r| r == region))
    }

    /// True when every block of `self` lies inside one block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.blocks.iter().all(|block| {
            let Some(target) = coarser.block_of(&block[0]) else {
                return false;
            };
            block.iter().all(|r| coarser.block_of(r) == Some(target))
        })
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rendered: Vec<String> = self
            .blocks
            .iter()
            .map(|b| format!("{{{}}}", b.join(", ")))
            .collect();
        write!(f, "{}", rendered.join(" | "))
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive simple-path enumeration, deliberately independent of the
    /// BFS used by the implementation.
    fn oracle_path_exists<F>(g: &RegionGraph, a: &str, b: &str, passable: &F) -> bool
    where
        F: Fn(&PassageEdge) -> bool,
    {
        fn dfs<F>(
            g: &RegionGraph,
            cur: &str,
            goal: &str,
            visited: &mut Vec<String>,
            passable: &F,
        ) -> bool
        where
            F: Fn(&PassageEdge) -> bool,
        {
            if cur == goal {
                return true;
            }
            for p in g.passages() {
                if !passable(p) {
                    continue;
                }
                let next = if p.a == cur {
                    &p.b
                } else if p.b == cur {
                    &p.a
                } else {
                    continue;
                };
                if visited.iter().any(|v| v == next) {
                    continue;
                }
                visited.push(next.clone());
                if dfs(g, next, goal, visited, passable) {
                    return true;
                }
                visited.pop();
            }
            false
        }
        let mut visited = vec![a.to_string()];
        dfs(g, a, b, &mut visited, passable)
    }

    fn oracle_classify(
        g: &RegionGraph,
        a: &str,
        b: &str,
        pol: Polarization,
    ) -> ConnectivityClass {
        let fixed = oracle_path_exists(g, a, b, &|p: &PassageEdge| match p.condition {
            PassCondition::Open => true,
            PassCondition::PolarizedOnly(axis) => axis == pol,
            PassCondition::Closed => false,
        });
        if fixed {
            return ConnectivityClass::Connected;
        }
        let any = oracle_path_exists(g, a, b, &|p: &PassageEdge| {
            !matches!(p.condition, PassCondition::Closed)
        });
        if any {
            ConnectivityClass::WeaklyDisconnected
        } else {
            ConnectivityClass::StronglyDisconnected
        }
    }

    prop_compose! {
        fn arb_graph()(n in 2usize..=6)(
            n in Just(n),
            conds in proptest::collection::vec(0u8..=3, n * (n - 1) / 2),
            rot_mask in 0u8..64,
        ) -> RegionGraph {
            let regions: Vec<String> = (0..n).map(|i| format!("r{i}")).collect();
            let mut passages = Vec::new();
            let mut k = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let cond = match conds[k] {
                        0 => None,
                        1 => Some(PassCondition::Open),
                        2 => Some(PassCondition::PolarizedOnly(Polarization::V)),
                        _ => Some(PassCondition::Closed),
                    };
                    if let Some(condition) = cond {
                        passages.push(PassageEdge {
                            a: regions[i].clone(),
                            b: regions[j].clone(),
                            condition,
                        });
                    }
                    k += 1;
                }
            }
            let rotators: Vec<String> = (0..n)
                .filter(|i| rot_mask & (1 << i) != 0)
                .map(|i| format!("r{i}"))
                .collect();
            RegionGraph::new(regions, passages, rotators).unwrap()
        }
    }

    proptest! {
        #[test]
        fn classify_matches_path_enumeration(g in arb_graph(), ai in 0usize..6, bi in 0usize..6) {
            let regions: Vec<&String> = g.regions().iter().collect();
            let a = regions[ai % regions.len()].clone();
            let b = regions[bi % regions.len()].clone();
            for pol in [Polarization::H, Polarization::V] {
                let got = g.classify(&a, &b, pol).unwrap();
                let want = oracle_classify(&g, &a, &b, pol);
                prop_assert_eq!(got, want, "pair {} {} pol {}", a, b, pol);
            }
        }

        #[test]
        fn classify_is_symmetric(g in arb_graph(), ai in 0usize..6, bi in 0usize..6) {
            let regions: Vec<&String> = g.regions().iter().collect();
            let a = regions[ai % regions.len()].clone();
            let b = regions[bi % regions.len()].clone();
            let fwd = g.classify(&a, &b, Polarization::V).unwrap();
            let rev = g.classify(&b, &a, Polarization::V).unwrap();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn weak_blocks_refine_strong_blocks(g in arb_graph()) {
            let strong = g.strong_partition();
            for pol in [Polarization::H, Polarization::V] {
                let weak = g.weak_partition(pol);
                prop_assert!(weak.refines(&strong));
            }
        }

        #[test]
        fn classify_agrees_with_partitions(g in arb_graph(), ai in 0usize..6, bi in 0usize..6) {
            let regions: Vec<&String> = g.regions().iter().collect();
            let a = regions[ai % regions.len()].clone();
            let b = regions[bi % regions.len()].clone();
            let strong = g.strong_partition();
            for pol in [Polarization::H, Polarization::V] {
                let weak = g.weak_partition(pol);
                let class = g.classify(&a, &b, pol).unwrap();
                let same_weak = weak.block_of(&a) == weak.block_of(&b);
                let same_strong = strong.block_of(&a) == strong.block_of(&b);
                prop_assert_eq!(class == ConnectivityClass::Connected, same_weak);
                prop_assert_eq!(
                    class == ConnectivityClass::StronglyDisconnected,
                    !same_strong
                );
            }
        }

        #[test]
        fn closing_edges_never_improves_connectivity(g in arb_graph(), which in 0usize..16) {
            fn rank(c: ConnectivityClass) -> u8 {
                match c {
                    ConnectivityClass::Connected => 0,
                    ConnectivityClass::WeaklyDisconnected => 1,
                    ConnectivityClass::StronglyDisconnected => 2,
                }
            }
            if g.passages().is_empty() {
                return Ok(());
            }
            let edge = g.passages()[which % g.passages().len()].clone();
            let closed = g.with_condition(&edge.a, &edge.b, PassCondition::Closed).unwrap();
            let regions: Vec<&String> = g.regions().iter().collect();
            for a in &regions {
                for b in &regions {
                    let before = g.classify(a, b, Polarization::V).unwrap();
                    let after = closed.classify(a, b, Polarization::V).unwrap();
                    prop_assert!(rank(after) >= rank(before));
                }
            }
        }
    }
}
