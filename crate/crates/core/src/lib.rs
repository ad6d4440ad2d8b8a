//! Corpus-driven keyboard layout construction.
//!
//! The pipeline goes: bigram counts from a word-frequency list ([`corpus`]),
//! a letter Markov chain with its stationary distribution ([`markov`]),
//! a learned distance matrix over the alphabet ([`metric_opt`]), a planar
//! embedding of that metric ([`embed`]), and an injective snap onto a key
//! grid ([`layout`]). Two-handed layouts additionally split the alphabet
//! into two clusters ([`cluster`]). The [`curvature`] module computes
//! discrete Ricci/Gauss curvature diagnostics over the learned metric,
//! the [`bench`] module scores layouts on real text against QWERTY
//! references, and [`multilang`] averages transition models across
//! languages with Wasserstein barycenters.
//!
//! [`bench`]: mod@crate::bench

pub mod bench;
pub mod cluster;
pub mod corpus;
pub mod curvature;
pub mod embed;
pub mod error;
pub mod layout;
pub mod markov;
pub mod matrix;
pub mod metric_opt;
pub mod multilang;
pub mod render;
pub mod transport;

pub use corpus::Alphabet;
pub use error::{Error, Result};
