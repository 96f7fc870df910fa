//! Relativistic charged particles in Gaussian random electromagnetic fields,
//! their diffusion limits, and the statistical harness comparing the two.

#![allow(clippy::needless_range_loop, clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod dynamics;
pub mod field;
pub mod harness;
pub mod kubo;
pub mod minkowski;
pub mod quad;
pub mod rng;
