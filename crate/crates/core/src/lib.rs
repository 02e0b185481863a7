//! Adversarial RPKI repository testbed.
//!
//! The crate generates hostile Certificate Authority / Publication Point
//! scenarios, serves them over an SNI-routed HTTPS endpoint plus an
//! rsync-materialized directory tree, and evaluates relying-party
//! robustness with a built-in budget-enforcing mini relying party.

pub mod cert;
pub mod decode;
pub mod der;
pub mod keys;
pub mod harness;
pub mod manifest;
pub mod materialize;
pub mod oid;
pub mod resources;
pub mod roa;
pub mod rp;
pub mod scenario;
pub mod server;
pub mod sigobj;
pub mod tal;
