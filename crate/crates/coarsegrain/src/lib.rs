//! A numerical laboratory for studying what collapsing class labels does to
//! statistical efficiency, and for exercising split-background training on a
//! synthetic segmentation benchmark.
//!
//! The crate is organized around the chain of claims it verifies:
//!
//! * [`model`] - softmax classifiers (linear and one-hidden-layer), label
//!   coarsening maps, and likelihoods.
//! * [`info`] - score functions and expected Fisher information in closed
//!   form, the coarsening decomposition, and exhaustive-expectation oracles.
//! * [`mle`] - a Monte-Carlo maximum-likelihood laboratory comparing
//!   multiclass and collapsed-binary estimators under compute parity.
//! * [`grid`], [`metrics`] - image grids plus Dice / HD-95 / NSD evaluation.
//! * [`segbench`] - a desk-scale synthetic segmentation benchmark comparing
//!   binary labeling against split-background labeling schemes.
//! * [`checks`] - seeded verification suites used by the CLI and the
//!   acceptance tests.
//!
//! Everything is deterministic given a master seed; see [`rng`] for the
//! derivation scheme.

pub mod checks;
pub mod grid;
pub mod info;
pub mod metrics;
pub mod mle;
pub mod model;
pub mod rng;
pub mod segbench;

pub use info::{InfoKind, InfoMatrix, LoewnerVerdict};
pub use model::{
    softmax, Architecture, ClassProbabilities, CoarseningMap, Dataset, LikelihoodMode,
    SoftmaxModel,
};
