//! Multi-modal multi-kernel graph learning for population-level disease
//! classification and gradient-based biomarker discovery.
//!
//! The pipeline, end to end:
//!
//! 1. **Graph embedding** ([`graph`]) — one adaptive similarity graph per
//!    continuous modality (learned projection + cosine), attribute-match
//!    graphs for discrete modalities, fused by a Hadamard product of the
//!    modality means, regularized against a label-supervision graph and a
//!    raw-feature function graph.
//! 2. **Attention denoising** ([`attention`]) — multi-head relational
//!    attention rewrites the fused adjacency into a row-stochastic graph.
//! 3. **Spectral filtering** ([`spectral`], [`network`]) — parallel
//!    Chebyshev-polynomial branches with different receptive-field orders
//!    classify every subject; branch outputs are fused through a
//!    cross-kernel tensor and a final fully connected head.
//! 4. **Training and evaluation** ([`train`]) — combined-loss gradient
//!    descent, stratified K-fold cross-validation, ACC/AUC/SEN/SPE, and a
//!    finite-difference gradient audit.
//! 5. **Biomarker saliency** ([`saliency`]) — input-gradient scores over
//!    the dominant modality, exported as ranked top-K reports.
//!
//! Everything differentiable is built on the reverse-mode tape in
//! [`autodiff`], and every gradient path is checkable against central
//! finite differences ([`autodiff::check`]).

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod network;
pub mod rng;
pub mod saliency;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
