//! From-scratch inference, loss, and complexity analysis for a lightweight
//! two-branch image matting network.
//!
//! The first branch segments each pixel into background, foreground, or
//! unknown at three scales; the second refines the unknown band into a
//! full alpha matte, helped by a grouped two-stage attention module over
//! image features. Everything here is deterministic CPU code with no
//! external numeric dependencies: tensors, octave convolutions, the
//! attention stages, parameter initialization, losses, evaluation metrics,
//! an analytic FLOP/parameter ledger, binary and image formats, and a
//! built-in oracle suite.

pub mod arch;
pub mod attention;
pub mod config;
pub mod costmodel;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod octave;
pub mod params;
pub mod selftest;
pub mod tensor;

pub use config::NetConfig;
pub use error::{Error, Result};
pub use network::{Model, SegLogits};
pub use params::ParamSet;
pub use tensor::Tensor;
