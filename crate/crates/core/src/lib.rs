//! Simulation of a quantum memory that stores a single polarization photon
//! in two pairs of entangled atomic ensembles.
//!
//! The crate is layered: [`fock`] provides sparse bosonic states,
//! [`elements`] the passive linear optics, [`detection`] projective photon
//! counting with loss and dark counts, [`protocol`] the preparation,
//! storage and readout stages, and [`analysis`] exact and sampled
//! statistics.

pub mod analysis;
pub mod config;
pub mod detection;
pub mod elements;
pub mod error;
pub mod fock;
pub mod protocol;

pub use analysis::{aggregate, chi_square_test, exact_report, fidelity, ExactReport, RunStatistics};
pub use detection::{ClickPattern, DetectorModel};
pub use elements::{LinearModeMap, PolPair};
pub use error::{Error, Result};
pub use fock::{MixedState, ModeKind, ModeLabel, OccupationConfig, PureState};
pub use num_complex::Complex64 as C64;
pub use protocol::{MemorySource, PatternClass, ProtocolConfig, Simulator, TrialRecord};
