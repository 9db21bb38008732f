//! Parametric texture synthesis and discrimination with single-layer
//! convolutional networks.
//!
//! A texture is summarized by the Gram matrix of the rectified responses of
//! a filter bank. Synthesis finds an image whose Gram matrix matches the
//! reference; discrimination compares Gram matrices of random patches.

pub mod conv;
pub mod error;
pub mod evaluation;
pub mod filterbank;
pub mod gram;
pub mod image;
pub mod optimizer;
pub mod rng;
pub mod synthesis;

pub use error::{Error, ErrorClass, Result};
