//! Certified polytopic reachability for discrete-time affine systems in
//! feedback with ReLU network controllers.
//!
//! The closed loop `x⁺ = A x + B f(x) + e` is rewritten as a skip-free ReLU
//! network, unrolled over the horizon, and every facet offset of an adaptive
//! template polytope is computed by input-splitting branch and bound with
//! symbolic (DeepPoly-style) linear bound propagation.
//!
//! Module map:
//! - [`linalg`]: SVD, pseudoinverse, numerical rank, cosine similarity.
//! - [`network`]: controller networks, closed-loop systems, the equivalent
//!   sequential network and its unrolling.
//! - [`bounds`]: symbolic linear bound propagation over boxes.
//! - [`bnb`]: branch and bound for `max cᵀ net(x)` over a box.
//! - [`templates`]: SVD-driven template direction synthesis.
//! - [`reach`]: the horizon loop assembling the polytope sequence.
//! - [`oracle`]: exact small-instance solvers and trajectory simulation.
//! - [`io`]: config/weights/result files and 2-D projections.

pub mod bnb;
pub mod bounds;
pub mod error;
pub mod io;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod reach;
pub mod templates;

pub use error::{Error, Result};

/// Dense real matrix, row-major.
pub type Matrix = ndarray::Array2<f64>;
/// Dense real vector.
pub type Vector = ndarray::Array1<f64>;
