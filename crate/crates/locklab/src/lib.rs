//! Simulator and library for multiparty information locking with GHZ-type
//! orthogonal state sets.
//!
//! A referee encodes an N-level message into one of N pairwise-orthogonal
//! m-qubit states and hands one qubit to each of m parties. The built-in
//! family keeps the message locked against every coalition of up to m−1
//! parties operating by local measurements and classical communication,
//! yet the full message is recoverable once the parties spend a small
//! number of shared Bell pairs on teleportation merges — fewer than a set
//! locked across every bipartition would require, and the gap grows
//! linearly with m.
//!
//! The crate is organized around that task:
//!
//! - [`qstate`]: exact state-vector mechanics — superpositions, block-local
//!   projective measurement, product Z/X measurement, Schmidt analysis,
//!   and teleportation-circuit validation.
//! - [`sets`]: the locked state families, their invariants, and the text
//!   serialization format.
//! - [`partitions`]: set-partition algebra over party indices — coalitions,
//!   refinement order, pairings, exhaustive enumeration.
//! - [`certify`]: machine-checkable lock certificates (three Bell-like
//!   states across a one-vs-rest cut) and the three-valued lock status of
//!   a partition.
//! - [`protocols`]: measurement-tree discrimination protocols, generators
//!   for the constructive peel protocols, exact branch evaluation, and
//!   seeded sampling.
//! - [`resources`]: distinguishability profiles, Bell-pair cost accounting,
//!   teleportation extraction plans, and the even/odd resource gap.
//! - [`netharness`]: a deterministic end-to-end harness — distribution,
//!   coalition attacks, entanglement-assisted extraction, and replayable
//!   event logs.

pub mod certify;
pub mod netharness;
pub mod partitions;
pub mod protocols;
pub mod qstate;
pub mod resources;
pub mod sets;

pub use certify::{BellTripleCertificate, LockEvidence, LockStatus, OpenRegistry};
pub use partitions::{Coalition, Partition};
pub use protocols::{EvaluationReport, ProtocolTree};
pub use qstate::{Bitstring, StateVector};
pub use resources::{ExtractionPlan, Profile, Verdict};
pub use sets::StateSet;
