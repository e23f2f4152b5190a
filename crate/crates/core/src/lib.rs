//! Decentralized strongly convex optimization over time-varying networks:
//! gossip schedules, the ADOM+ method with multi-consensus, the matching
//! lower-bound construction, and an experiment harness.

pub mod adomplus;
pub mod dvector;
pub mod error;
pub mod harness;
pub mod lowerbound;
pub mod netmodel;
pub mod oracle;

pub use error::{Error, Result};
