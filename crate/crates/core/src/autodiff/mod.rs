//! Reverse-mode differentiation over the fixed operation set the networks need.

pub mod gradcheck;
pub mod kernels;
mod tape;

pub use tape::{BatchMoments, BnMode, CustomOp, Tape, Var, BN_EPS};
