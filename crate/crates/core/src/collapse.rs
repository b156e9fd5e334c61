//! Rival state-update rules applied at topology changes.
//!
//! Whenever the bench's connectivity changes (a shutter closes or opens, a
//! polarization rotation fires inside a polarizer-bounded pocket), the
//! simulation asks the active [`CollapsePolicy`] what happens to the state:
//!
//! * [`CollapsePolicy::PoV1`]: nothing. Evolution stays unitary and any
//!   coherence survives until the packets meet again.
//! * [`CollapsePolicy::PoV2Strong`]: coherence between regions that are now
//!   strongly disconnected (separated by closed passages) is erased. The
//!   superposition becomes a classical mixture over the sealed blocks.
//! * [`CollapsePolicy::PoV2Weak`]: already weak disconnectivity erases
//!   coherence. Blocks live at mode level: two modes stay coherent only if
//!   they carry the same polarization and their regions are mutually
//!   reachable at that polarization.
//!
//! All three rules are trace-preserving, Hermiticity-preserving, and
//! positive; dephasing writes exact zeros, so "no coherence" means bitwise
//! zero, not merely small.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::qstate::{DensityMatrix, ModeBasis};
use crate::topology::{Partition, RegionGraph};

/// Which state-update rule the simulation runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CollapsePolicy {
    /// Ordinary unitary evolution; disconnection has no effect.
    PoV1,
    /// Collapse on strong disconnection (closed passages only).
    PoV2Strong,
    /// Collapse already on weak disconnection (polarization-selective
    /// trapping counts).
    PoV2Weak,
}

impl CollapsePolicy {
    pub const ALL: [CollapsePolicy; 3] = [
        CollapsePolicy::PoV1,
        CollapsePolicy::PoV2Strong,
        CollapsePolicy::PoV2Weak,
    ];

    /// Stable label used in CSV output and on the command line.
    pub fn label(self) -> &'static str {
        match self {
            CollapsePolicy::PoV1 => "pov1",
            CollapsePolicy::PoV2Strong => "pov2-strong",
            CollapsePolicy::PoV2Weak => "pov2-weak",
        }
    }
}

impl fmt::Display for CollapsePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CollapsePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pov1" => Ok(CollapsePolicy::PoV1),
            "pov2-strong" => Ok(CollapsePolicy::PoV2Strong),
            "pov2-weak" => Ok(CollapsePolicy::PoV2Weak),
            other => Err(format!(
                "unknown policy `{other}` (expected pov1, pov2-strong, or pov2-weak)"
            )),
        }
    }
}

/// Zeroes every off-diagonal element joining modes in different blocks.
///
/// `blocks[i]` is the block id of basis mode `i`; ids only matter up to
/// equality. Diagonal entries and within-block coherences are copied
/// bit-identically, crossed entries become exact zero.
pub fn mode_dephase(rho: &DensityMatrix, blocks: &[usize]) -> Result<DensityMatrix> {
    let n = rho.dim();
    if blocks.len() != n {
        return Err(Error::Config(format!(
            "block assignment covers {} modes for a {}-mode state",
            blocks.len(),
            n
        )));
    }
    let mut m = rho.matrix().clone();
    for i in 0..n {
        for j in 0..n {
            if blocks[i] != blocks[j] {
                m[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
    }
    DensityMatrix::new(rho.basis().clone(), m, rho.norm_deficit())
}

/// Dephases across a region partition: modes whose regions fall in
/// different blocks lose their mutual coherence.
pub fn block_dephase(rho: &DensityMatrix, partition: &Partition) -> Result<DensityMatrix> {
    let blocks: Vec<usize> = rho
        .basis()
        .modes()
        .iter()
        .map(|mode| {
            partition.block_of(&mode.region).ok_or_else(|| {
                Error::Config(format!(
                    "mode `{mode}` lies in a region missing from the partition"
                ))
            })
        })
        .collect::<Result<_>>()?;
    mode_dephase(rho, &blocks)
}

/// Mode-level block ids for weak collapse.
///
/// Each mode's block is keyed by its polarization together with the
/// connected component its region occupies when only passages passable at
/// that polarization are kept. Orthogonally polarized packets never share
/// a block: a trapped component stays trapped precisely because its
/// polarization does not fit the surrounding passages.
pub fn weak_mode_blocks(basis: &ModeBasis, graph: &RegionGraph) -> Result<Vec<usize>> {
    let mut partitions = BTreeMap::new();
    let mut ids: BTreeMap<(crate::qstate::Polarization, usize), usize> = BTreeMap::new();
    let mut blocks = Vec::with_capacity(basis.len());
    for mode in basis.modes() {
        let partition = partitions
            .entry(mode.pol)
            .or_insert_with(|| graph.weak_partition(mode.pol));
        let region_block = partition.block_of(&mode.region).ok_or_else(|| {
            Error::Config(format!(
                "mode `{mode}` lies in a region missing from the graph"
            ))
        })?;
        let next = ids.len();
        let id = *ids.entry((mode.pol, region_block)).or_insert(next);
        blocks.push(id);
    }
    Ok(blocks)
}

/// Applies the active policy to the state given the bench's current
/// connectivity. Called once after every topology-changing event.
pub fn apply_policy(
    rho: &DensityMatrix,
    policy: CollapsePolicy,
    graph: &RegionGraph,
) -> Result<DensityMatrix> {
    match policy {
        CollapsePolicy::PoV1 => Ok(rho.clone()),
        CollapsePolicy::PoV2Strong => block_dephase(rho, &graph.strong_partition()),
        CollapsePolicy::PoV2Weak => {
            let blocks = weak_mode_blocks(rho.basis(), graph)?;
            mode_dephase(rho, &blocks)
        }
    }
}

/// Single-polarization variant of [`apply_policy`] for states whose
/// occupied modes all share one polarization: the weak policy dephases
/// across the region-level weak partition at `pol`. Agrees with
/// [`apply_policy`] on every such state; [`apply_policy`] additionally
/// handles mixed-polarization superpositions.
pub fn on_topology_event(
    rho: &DensityMatrix,
    policy: CollapsePolicy,
    graph: &RegionGraph,
    pol: crate::qstate::Polarization,
) -> Result<DensityMatrix> {
    match policy {
        CollapsePolicy::PoV1 => Ok(rho.clone()),
        CollapsePolicy::PoV2Strong => block_dephase(rho, &graph.strong_partition()),
        CollapsePolicy::PoV2Weak => block_dephase(rho, &graph.weak_partition(pol)),
    }
}
