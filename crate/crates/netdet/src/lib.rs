//! Scale-aware single-shot object detection with neighbor erasing and
//! transferring feature reconfiguration, a from-scratch f64 tensor/autodiff
//! core, a procedural synthetic-scene benchmark, and a detection error
//! analysis toolkit.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod scenes;
pub mod netm;
pub mod nnfm;
pub mod nnops;
pub mod pyramid;
pub mod tape;
pub mod tensor;

pub use error::{NetError, Result};

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
