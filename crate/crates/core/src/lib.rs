//! Design and evaluation of orthonormal transform codebooks for adaptive
//! transform coding.
//!
//! A codebook holds a few `k×k` orthonormal transforms; each stationary block
//! of a non-stationary vector source is coded with whichever codeword gives
//! the lowest distortion. [`designer::design_codebook`] learns the codebook
//! from training covariances by alternating a nearest-codeword partition with
//! per-cell minimization over the orthogonal group
//! ([`manifold::minimize_on_ok`]), driven by one of the MSE models in
//! [`objectives`]. [`codec`] measures the result operationally.

pub mod codec;
pub mod data;
pub mod designer;
pub mod error;
pub mod io;
pub mod manifold;
pub mod objectives;
pub mod quantizer;
pub mod types;

pub use error::{Error, ErrorClass, Result};
pub use types::{
    coefficient_variances, dct2d_nonseparable, dct_matrix, default_dct, klt, validate_covariance, CovarianceMatrix,
    ModelTag, QuantizerSpec, StationaryBlock, TransformCodebook, TransformMatrix,
};
