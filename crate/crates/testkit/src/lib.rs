//! Procedural fixtures and deliberately naive reference implementations.
//!
//! Everything here exists to test the main crate from the outside: random
//! small models for oracle-equivalence checks, a mirror-symmetric humanoid
//! for the fitting and mirroring harnesses, scalar re-implementations of the
//! mesh generator and closest-point search, and fixture-set writers for the
//! CLI.

pub mod fixtures;
pub mod humanoid;
pub mod oracle;
pub mod random_model;
pub mod rig;
