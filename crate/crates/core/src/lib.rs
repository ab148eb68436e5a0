//! Dependability toolkit for physician–device–patient digital twins.
//!
//! Stochastic hybrid automata ([`sha`]) model the physician/device and the
//! patient. On top of them sit signal labeling, automata learning,
//! statistical model checking, model-space exploration, failure triage,
//! strategy synthesis, a small physiology simulator and the online
//! alignment runtime.

pub mod domain;
pub mod eval;
pub mod explorer;
pub mod kv;
pub mod labeling;
pub mod learner;
pub mod models;
pub mod physio;
pub mod runtime;
pub mod scalar;
pub mod sha;
pub mod smc;
pub mod stats;
pub mod synth;
pub mod triage;

pub use scalar::Scalar;
pub use sha::network::{compose_network, Configuration, Flags, Resolver, ShaNetwork};
pub use sha::sim::{derive_seed, Run};
pub use sha::{validate_sha, Sha, ShaError};

/// Affine dynamics fitted by the learner, in `f64`.
pub type Dynamics = learner::FittedDynamics<f64>;
/// Pairwise distances between failure feature vectors, in `f64`.
pub type Distances = triage::DistanceMatrix<f64>;
/// UPGMA dendrogram over `f64` distances.
pub type Dendrogram = triage::Dendrogram<f64>;
/// Flat clustering chosen by silhouette, in `f64`.
pub type Clustering = triage::Clustering<f64>;
/// Mann–Whitney result in `f64`.
pub type MannWhitney = stats::MannWhitney<f64>;
