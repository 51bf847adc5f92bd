//! Ptychographic x-ray speckle tracking.
//!
//! A scan of near-field projection images is modelled as
//! `I[n,i,j] = W[i,j] * I_ref[u0[i,j] - di[n], u1[i,j] - dj[n]]`, where `W` is the
//! whitefield, `I_ref` a virtual reference image of the sample and `u` the
//! pixel map encoding the wavefront phase gradient. [`recon`] recovers `u`,
//! `I_ref` and the translations by alternating minimisation; [`analysis`]
//! turns the pixel map into a phase, aberration coefficients, a focus profile
//! and a sample thickness.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod defocus;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod integrate;
pub mod interp;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod recon;
pub mod sim;

pub use error::{Error, ErrorClass, Result};
pub use model::*;
