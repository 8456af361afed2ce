//! Contrastive pretraining for cross-subject ERP detection.
//!
//! A small reverse-mode autodiff tape drives an Inception encoder, a
//! nonlinear projector trained with NT-Xent over subject pairs, and a
//! frozen-encoder classifier. Synthetic oddball EEG, the ERPD/ERPW file
//! formats and an evaluation harness make every piece testable on a laptop.

pub mod autodiff;
pub mod cli;
pub mod contrastive;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
