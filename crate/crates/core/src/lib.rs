//! Exact tree topology reconstruction for networks of bi-directionally
//! coupled linear dynamical systems.
//!
//! The pipeline runs in three stages:
//!
//! 1. [`wiener`]: multivariate Wiener filters computed from the cross power
//!    spectral density field ([`spectral`]) give the kin graph, which is the
//!    true tree plus every two-hop pair.
//! 2. [`prune::prune_nonleaf`]: a kin edge joins two non-leaf nodes iff its
//!    endpoints separate the kin graph. This confirms the backbone and
//!    classifies the leaves.
//! 3. [`prune::prune_leaf`]: each leaf keeps its unique true parent, found
//!    from two-hop structure.
//!
//! [`dynamics`] provides a swing-equation grid simulator with an exact output
//! spectrum oracle. [`harness`] chains everything together and carries the
//! bundled IEEE 39-bus tree case.

pub mod dynamics;
pub mod graph;
pub mod harness;
pub mod prune;
pub mod spectral;
pub mod wiener;
