//! Fault-aware non-collective communicator creation and repair, modelled on a
//! deterministic message-passing simulator.

pub mod cli;
pub mod error;
pub mod lda;
pub mod metrics;
pub mod ncops;
pub mod sim;
pub mod topology;
