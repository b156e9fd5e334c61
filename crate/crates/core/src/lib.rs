//! Discrete-event simulation of single-photon interferometry under two rival
//! evolution rules: plain unitary propagation, and wave-packet reduction that
//! fires whenever the optical bench splits into disconnected spatial pockets.
//!
//! The crate is organised around eight modules:
//!
//! * [`qstate`]: modes, pure states, density matrices, unitaries.
//! * [`optics`]: component actions (beam splitters, phase shifters, Pockels
//!   cells, polarizers).
//! * [`topology`]: region graphs, pass conditions, connectivity classes.
//! * [`collapse`]: block dephasing and the per-policy collapse hook.
//! * [`timeline`]: event scheduling, contact/ordering validation, execution.
//! * [`scenedsl`]: the `.scene` text format (parse, serialize, validate).
//! * [`experiments`]: bench presets and closed-form predictions.
//! * [`montecarlo`]: seeded trial batches and histogram statistics.

pub mod collapse;
pub mod error;
pub mod experiments;
pub mod montecarlo;
pub mod optics;
pub mod qstate;
pub mod scenedsl;
pub mod timeline;
pub mod topology;

pub use collapse::CollapsePolicy;
pub use error::{Error, Result};
pub use experiments::{Preset, PresetParams};
pub use montecarlo::{ExperimentResult, Outcome, RunConfig};
pub use qstate::{DensityMatrix, Mode, ModeBasis, Polarization, PureState};
pub use scenedsl::SceneDoc;
pub use timeline::{Evolution, Timeline};
pub use topology::{ConnectivityClass, Partition, RegionGraph};
