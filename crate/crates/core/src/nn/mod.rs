//! Minimal neural-network machinery: a reverse-mode tape over `f64`
//! matrices, a named parameter store with blob serialization, and an
//! AdamW-style optimizer with a linear learning-rate schedule.
//!
//! Everything here is deliberately small and deterministic: no threads, no
//! SIMD dispatch, plain `ndarray` matrix products. That keeps training
//! trajectories bit-reproducible for a given seed, which the experiment
//! protocol relies on.

mod optim;
mod params;
mod tape;

pub use optim::AdamW;
pub use params::{ParamId, ParamLeaves, ParamSet, WeightBlob};
pub use tape::{Gradients, NodeId, Tape};
