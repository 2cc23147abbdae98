//! Line segment matching with learned descriptors, graph convolution and
//! optimal transport.
//!
//! Pipeline stages:
//! 1. [`backbone`]: small strided CNN producing shallow and deep feature maps.
//! 2. [`descriptor`]: Gaussian-weighted line pooling over both maps, plus
//!    descriptor-similarity exclusion and the learned unmatched sink row.
//! 3. [`graphnet`]: learned adjacency via mutual top-k relation pooling and
//!    intra/cross graph convolution blocks.
//! 4. [`transport`]: entropy-regularized assignment between the two line
//!    sets (log-domain Sinkhorn) and discrete match extraction.
//! 5. [`losses`]: angular-margin descriptor loss and assignment likelihood.
//! 6. [`trainer`]: Adam optimization over the full differentiable pipeline.
//! 7. [`datagen`] / [`eval`]: synthetic pair generation, depth-based
//!    labeling, metrics, robustness sweeps and ablations.
//!
//! All numerics are `f64` on [`ndarray`] arrays; gradients come from the
//! tape in [`autodiff`].

pub mod autodiff;
pub mod backbone;
pub mod config;
pub mod datagen;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod imgio;
pub mod graphnet;
pub mod losses;
pub mod trainer;
pub mod transport;
pub mod types;
pub mod viz;

pub use error::{Error, Result};
