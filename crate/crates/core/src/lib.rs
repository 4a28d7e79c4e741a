//! Simulator and protocol library for checkpointed longest-chain consensus.
//!
//! Proof-of-work style block production follows the longest chain that
//! contains the latest checkpoint; a committee of checkpointers runs a
//! multi-iteration Byzantine agreement to certify checkpoints. Clients pick
//! between two confirmation rules: everything up to the last checkpoint, or
//! everything but the last k′ blocks.

pub mod adversary;
pub mod analytics;
pub mod ba;
pub mod chain;
pub mod library;
pub mod net;
pub mod node;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod trace;
