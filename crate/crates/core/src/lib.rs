//! Approximate binary instance masks by sums of isotropic Gaussian disks.
//!
//! A [`DiskSet`] renders to a scalar field; thresholding the field gives a
//! mask. [`fitter::fit`] recovers disks for a ground-truth mask by gradient
//! descent on a Dice or cross-entropy loss, and the remaining modules cover
//! post-processing, evaluation, file formats and a synthetic test suite.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fitter;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod postprocess;
pub mod projection;
pub mod synth;
pub mod types;

pub use error::{Error, ParseError, Result};
pub use fitter::{fit, FitResult};
pub use types::{
    association, AssocKind, BinaryMask, DiskSet, FitConfig, LossKind, Point, Polyline, ScalarField,
};
