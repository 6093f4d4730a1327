//! Software model of a Transformer accelerator for N:M structured sparsity.
//!
//! The crate covers the full toolchain:
//!
//! * [`nm`] packs N:M sparse weights into a bitmap format and compares its
//!   storage cost with coordinate formats.
//! * [`prune`] generates group-wise magnitude masks and runs inherited
//!   dynamic pruning over a decreasing N schedule.
//! * [`compiler`] builds MHA/FFN residual-block IR from a model configuration
//!   and lowers it to load/store, MatMul and fused-vector instructions.
//! * [`dmme`] is a cycle-stepped model of the H x R x C MatMul engine with
//!   unified dense/sparse processing elements.
//! * [`softmax`] is a bit-accurate model of the LUT/Taylor softmax unit with
//!   its pipelined shift-subtract divider.
//! * [`sim`] executes compiled programs on the engine models and produces
//!   reports.

pub mod compiler;
pub mod dmme;
pub mod error;
pub mod fixed;
pub mod matrix;
pub mod nm;
pub mod par;
pub mod prune;
pub mod rng;
pub mod sim;
pub mod softmax;

pub use matrix::{DenseMatrix, Matrix};
pub use nm::{CompressedMatrix, GroupMask, NmConfig};
pub use par::Exec;
