//! Simulation of continuum k-tree evolutions: interval partition kernels,
//! killed, non-resampling and resampling k-tree evolutions, projections and
//! de-Poissonization.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod compound;
pub mod depoisson;
pub mod error;
pub mod evolution;
pub mod partition;
pub mod primitives;
pub mod rng;
pub mod shape;
pub mod stats;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
pub use evolution::{EvolutionConfig, Terminal, Trajectory};
pub use partition::{IntervalPartition, Prefix, Type1State, Type2State};
pub use rng::RandomSource;
pub use shape::{Edge, TreeShape};
pub use tree::{BlockRef, KTree};
