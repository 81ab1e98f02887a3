//! Knowledge-graph indexed biography generation.
//!
//! Offline: [`corpus`] chunks documents, [`extraction`] turns chunks into
//! triples, [`kg`] builds and persists the graph ([`indexer`] wires these).
//! Online: [`pipeline`] retrieves references, generates one sentence at a
//! time through the [`gateway`], checks each with the [`verifier`] and hands
//! failures to [`remediation`]. [`eval`] holds the metrics and [`synth`] the
//! seeded fixture generator.

pub mod corpus;
pub mod extraction;
pub mod gateway;
pub mod text;
pub mod kg;
pub mod remediation;
pub mod verifier;
pub mod pipeline;
pub mod eval;
pub mod synth;
pub mod config;
pub mod indexer;
