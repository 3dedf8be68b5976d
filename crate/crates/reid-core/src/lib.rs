//! Desk-scale metric embedding learning.
//!
//! The crate trains a small feedforward embedder with a stack of
//! discriminative and metric losses -- temperature-scaled softmax with an
//! additive angular margin, per-attribute two-way margin classifiers,
//! batch-hard triplet mining over PK batches, and weighted joint
//! combinations of the three -- and evaluates the learned embedding with
//! the standard cross-camera retrieval protocol (CMC and mAP).
//!
//! Every loss ships its analytic gradient, and every gradient is checked
//! against a central finite-difference oracle (see [`gradcheck`]).
//! All arithmetic is `f64` and all randomness flows through the seeded
//! generator in [`rng`], so runs are bit-reproducible.

// gradient kernels walk several parallel arrays by index
#![allow(clippy::needless_range_loop)]

pub mod benchmark;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod sampler;
pub mod trainer;
