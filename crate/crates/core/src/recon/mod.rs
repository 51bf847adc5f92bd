//! Alternating minimisation of the speckle-tracking target
//! `sum (I - W * I_ref(u - d))^2 / var`.
//!
//! Every step reads the scan through a [`ReconInput`], which fixes the
//! whitefield, the effective pixel mask (mask and ROI combined), the good
//! frames and the reference-grid sampling.

mod driver;
mod metrics;
mod pixel_map;
mod reference;
mod refine;
mod smooth;
mod translations;

pub use driver::{default_schedule, run_main_loop, IterationOptions, LoopOptions, LoopProgress, LoopResult};
pub use metrics::{calc_error, variance_floor};
pub(crate) use pixel_map::update_pixel_map_with;
pub use pixel_map::{irrotational_projection, update_pixel_map, PixelMapUpdate, SearchWindow, UpdateOptions};
pub use reference::{make_reference, reference_coordinate};
pub use refine::quadratic_subpixel_refine;
pub use smooth::{gaussian_filter, masked_gaussian_filter};
pub use translations::update_translations;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::interp::Sampler;
use crate::model::{PixelMask, ReferenceImage, Roi, ScanData, Whitefield};

/// Borrowed scan plus the fixed quantities every reconstruction step needs.
#[derive(Debug, Clone)]
pub struct ReconInput<'a> {
    pub scan: &'a ScanData,
    pub whitefield: &'a Array2<f64>,
    /// Good pixels inside the ROI.
    pub mask: Array2<bool>,
    pub good_frames: Vec<usize>,
    pub du: f64,
    pub dv: f64,
}

impl<'a> ReconInput<'a> {
    pub fn new(scan: &'a ScanData, whitefield: &'a Whitefield, mask: &PixelMask, roi: &Roi) -> Result<Self> {
        let shape = scan.frame_shape();
        if whitefield.w.dim() != shape {
            return Err(Error::shape("whitefield", shape, whitefield.w.shape()));
        }
        if mask.mask.dim() != shape {
            return Err(Error::shape("mask", shape, mask.mask.shape()));
        }
        if scan.good_frames.len() != scan.n_frames() {
            return Err(Error::shape("good_frames", scan.n_frames(), scan.good_frames.len()));
        }
        let mask = mask.within(roi);
        let good_frames = scan.good_frame_indices();
        if good_frames.is_empty() {
            return Err(Error::invalid("no good frames"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::invalid("no good pixels inside the region of interest"));
        }
        Ok(Self {
            scan,
            whitefield: &whitefield.w,
            mask,
            good_frames,
            du: scan.x_pixel_size,
            dv: scan.y_pixel_size,
        })
    }

    /// Sets the reference-grid sampling recorded in reference images.
    pub fn with_sampling(mut self, du: f64, dv: f64) -> Self {
        self.du = du;
        self.dv = dv;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.dim()
    }

    /// Same input with a different frame selection.
    pub fn with_good_frames(&self, good_frames: Vec<usize>) -> Self {
        Self { good_frames, ..self.clone() }
    }

    /// Counts of the good frames at pixel `(i, j)`.
    fn series(&self, i: usize, j: usize) -> Vec<f64> {
        self.good_frames.iter().map(|&n| self.scan.frames[[n, i, j]]).collect()
    }
}

/// Masked bilinear reader of a reference image.
pub(crate) fn reference_sampler(r: &ReferenceImage) -> Result<Sampler<'_>> {
    let (rows, cols) = r.shape();
    if !r.valid.iter().any(|&v| v) {
        return Err(Error::invalid("reference image has no valid cells"));
    }
    let data = r.i_ref.as_slice().ok_or_else(|| Error::invalid("reference image must be contiguous"))?;
    let valid = r.valid.as_slice().ok_or_else(|| Error::invalid("reference mask must be contiguous"))?;
    Ok(Sampler::from_slices(data, Some(valid), rows, cols))
}

/// Residual of one observation against the reference: `I - W * I_ref(x, y)`,
/// or `I - W` when the reference cannot be sampled there.
#[inline]
pub(crate) fn residual(sampler: &Sampler, intensity: f64, w: f64, x: f64, y: f64) -> f64 {
    match sampler.sample(x, y) {
        Some(r) => intensity - w * r,
        None => intensity - w,
    }
}

pub(crate) fn max_masked(a: &ArrayView2<f64>, mask: &Array2<bool>) -> f64 {
    a.iter().zip(mask.iter()).filter(|(_, &m)| m).map(|(v, _)| *v).fold(0.0, f64::max)
}
