use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::integrate::{project_gradient, CgOptions};
use crate::interp::Sampler;
use crate::model::{PixelMap, PixelTranslations, ReferenceImage};

use super::reference::reference_coordinate;
use super::refine::quadratic_subpixel_refine;
use super::smooth::masked_gaussian_filter;
use super::{reference_sampler, residual, ReconInput};

/// Brute-force search region around the current estimate, in reference pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchWindow {
    pub half_ss: usize,
    pub half_fs: usize,
    /// Search a fractional grid with this step instead of integer offsets.
    pub subpixel_grid: Option<f64>,
}

impl SearchWindow {
    pub fn new(half_ss: usize, half_fs: usize) -> Self {
        Self { half_ss, half_fs, subpixel_grid: None }
    }

    pub fn square(half: usize) -> Self {
        Self::new(half, half)
    }

    pub fn with_subpixel_grid(mut self, step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::invalid(format!("subpixel grid step must be in (0, 1], got {step}")));
        }
        self.subpixel_grid = Some(step);
        Ok(self)
    }

    pub fn is_zero(&self) -> bool {
        self.half_ss == 0 && self.half_fs == 0
    }

    /// Candidate offsets as a row-major grid; the centre is `(0, 0)`.
    pub(crate) fn grid(&self) -> CandidateGrid {
        let step = self.subpixel_grid.unwrap_or(1.0);
        let k = |h: usize| (h as f64 / step + 1e-9).floor() as usize;
        CandidateGrid { k_ss: k(self.half_ss), k_fs: k(self.half_fs), step }
    }
}

pub(crate) struct CandidateGrid {
    pub k_ss: usize,
    pub k_fs: usize,
    pub step: f64,
}

impl CandidateGrid {
    pub fn dims(&self) -> (usize, usize) {
        (2 * self.k_ss + 1, 2 * self.k_fs + 1)
    }

    pub fn len(&self) -> usize {
        let (a, b) = self.dims();
        a * b
    }

    pub fn centre(&self) -> usize {
        self.k_ss * (2 * self.k_fs + 1) + self.k_fs
    }

    pub fn index(&self, a: isize, b: isize) -> Option<usize> {
        let (na, nb) = self.dims();
        (a >= 0 && b >= 0 && (a as usize) < na && (b as usize) < nb).then(|| a as usize * nb + b as usize)
    }

    pub fn offset(&self, k: usize) -> (f64, f64) {
        let nb = 2 * self.k_fs + 1;
        let a = (k / nb) as f64 - self.k_ss as f64;
        let b = (k % nb) as f64 - self.k_fs as f64;
        (a * self.step, b * self.step)
    }
}

/// Grid search with optional paraboloid refinement. `eval(o0, o1)` returns the
/// error at offset `(o0, o1)` and the value to store; the incumbent (offset 0)
/// is always a candidate and is only replaced by a strictly smaller error.
pub(crate) fn search<F>(grid: &CandidateGrid, quadratic: bool, mut eval: F) -> ((f64, f64), f64)
where
    F: FnMut(f64, f64) -> f64,
{
    let errs: Vec<f64> = (0..grid.len())
        .map(|k| {
            let (a, b) = grid.offset(k);
            eval(a, b)
        })
        .collect();
    let mut best = grid.centre();
    for (k, &e) in errs.iter().enumerate() {
        if e < errs[best] {
            best = k;
        }
    }
    let mut best_off = grid.offset(best);
    let mut best_err = errs[best];
    if quadratic && grid.step == 1.0 {
        let nb = 2 * grid.k_fs + 1;
        let (ba, bb) = ((best / nb) as isize, (best % nb) as isize);
        let mut patch = [[0.0; 3]; 3];
        for (da, row) in patch.iter_mut().enumerate() {
            for (db, v) in row.iter_mut().enumerate() {
                let (a, b) = (ba + da as isize - 1, bb + db as isize - 1);
                *v = match grid.index(a, b) {
                    Some(k) => errs[k],
                    None => eval(best_off.0 + da as f64 - 1.0, best_off.1 + db as f64 - 1.0),
                };
            }
        }
        let (s0, s1) = quadratic_subpixel_refine(&patch);
        if s0 != 0.0 || s1 != 0.0 {
            let off = (best_off.0 + s0, best_off.1 + s1);
            let e = eval(off.0, off.1);
            if e < best_err {
                best_off = off;
                best_err = e;
            }
        }
    }
    (best_off, best_err)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOptions {
    pub quadratic_refinement: bool,
    /// Project the updated map onto gradient fields.
    pub integrate: bool,
    /// Gaussian width in detector pixels applied to the displacement; 0 disables.
    pub sigma: f64,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self { quadratic_refinement: true, integrate: true, sigma: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct PixelMapUpdate {
    pub pixel_map: PixelMap,
    /// Normalised error of the selected candidate at every good pixel, before
    /// smoothing and projection.
    pub error: Array2<f64>,
}

struct PixelContext<'a> {
    sampler: Sampler<'a>,
    origin: (f64, f64),
}

impl PixelContext<'_> {
    /// `sum (I - W I_ref(u - d))^2` over observations `(I, d_ss, d_fs)` at
    /// pixel-map value `(u0, u1)`.
    #[inline]
    fn error(&self, obs: &[(f64, f64, f64)], w: f64, u0: f64, u1: f64) -> f64 {
        let mut s = 0.0;
        for &(intensity, di, dj) in obs {
            let x = reference_coordinate(u0, di, self.origin.0);
            let y = reference_coordinate(u1, dj, self.origin.1);
            let r = residual(&self.sampler, intensity, w, x, y);
            s += r * r;
        }
        s
    }
}

/// Selects which `(frame, ss, fs)` samples take part in an update.
pub(crate) type SampleFilter<'f> = &'f (dyn Fn(usize, usize, usize) -> bool + Sync);

/// Per-pixel search for the pixel-map value that best explains the pixel's
/// counts across the good frames, followed by the optional regularisation.
///
/// The error at a candidate is `sum_n (I - W I_ref(u - d_n))^2 / var` with
/// `var = max(sum_n (I - W)^2, floor)`; observations mapped outside the valid
/// reference contribute `(I - W)^2`.
pub fn update_pixel_map(
    input: &ReconInput,
    reference: &ReferenceImage,
    u: &PixelMap,
    t: &PixelTranslations,
    window: &SearchWindow,
    opts: &UpdateOptions,
) -> Result<PixelMapUpdate> {
    update_pixel_map_with(input, reference, u, t, window, opts, None)
}

/// [`update_pixel_map`] restricted to the samples accepted by `filter`.
/// Pixels left without samples keep their value and get zero error.
pub(crate) fn update_pixel_map_with(
    input: &ReconInput,
    reference: &ReferenceImage,
    u: &PixelMap,
    t: &PixelTranslations,
    window: &SearchWindow,
    opts: &UpdateOptions,
    filter: Option<SampleFilter>,
) -> Result<PixelMapUpdate> {
    let shape = input.shape();
    if u.shape() != shape {
        return Err(Error::shape("pixel map", shape, u.shape()));
    }
    if t.len() != input.scan.n_frames() {
        return Err(Error::shape("translations", input.scan.n_frames(), t.len()));
    }
    if opts.sigma < 0.0 {
        return Err(Error::invalid("sigma must be >= 0"));
    }
    let ctx = PixelContext { sampler: reference_sampler(reference)?, origin: reference.origin };
    let grid = window.grid();
    let floor = super::variance_floor(input);
    let w = input.whitefield;

    let rows: Vec<Vec<(f64, f64, f64)>> = (0..shape.0)
        .into_par_iter()
        .map(|i| {
            let mut obs = Vec::with_capacity(input.good_frames.len());
            (0..shape.1)
                .map(|j| {
                    let (u0, u1) = (u.u[[0, i, j]], u.u[[1, i, j]]);
                    if !input.mask[[i, j]] {
                        return (u0, u1, 0.0);
                    }
                    obs.clear();
                    for &n in &input.good_frames {
                        if filter.is_none_or(|f| f(n, i, j)) {
                            obs.push((input.scan.frames[[n, i, j]], t.di[n], t.dj[n]));
                        }
                    }
                    if obs.is_empty() {
                        return (u0, u1, 0.0);
                    }
                    let wij = w[[i, j]];
                    let var = obs.iter().map(|o| (o.0 - wij).powi(2)).sum::<f64>().max(floor);
                    let (off, err) = search(&grid, opts.quadratic_refinement, |a, b| {
                        ctx.error(&obs, wij, u0 + a, u1 + b)
                    });
                    (u0 + off.0, u1 + off.1, err / var)
                })
                .collect()
        })
        .collect();

    let mut out = u.clone();
    let mut error = Array2::zeros(shape);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, (a, b, e)) in row.into_iter().enumerate() {
            out.u[[0, i, j]] = a;
            out.u[[1, i, j]] = b;
            error[[i, j]] = e;
        }
    }

    if opts.sigma > 0.0 {
        let (d0, d1) = out.displacement();
        let s0 = masked_gaussian_filter(&d0, &input.mask, opts.sigma);
        let s1 = masked_gaussian_filter(&d1, &input.mask, opts.sigma);
        out = PixelMap::from_displacement(&s0, &s1);
    }
    if opts.integrate {
        out = irrotational_projection(&out, &input.mask);
    }
    Ok(PixelMapUpdate { pixel_map: out, error })
}

/// Replaces the displacement `u - identity` on the good pixels by the closest
/// gradient field in the least-squares sense. Pixels outside `mask` are kept.
pub fn irrotational_projection(u: &PixelMap, mask: &Array2<bool>) -> PixelMap {
    let (d0, d1) = u.displacement();
    let (p0, p1, sol) = project_gradient(&d0, &d1, mask, CgOptions::default());
    if !sol.converged {
        log::warn!(
            "irrotational projection stopped after {} iterations, relative residual {:.3e}",
            sol.iterations,
            sol.relative_residual
        );
    }
    let mut out = PixelMap::from_displacement(&p0, &p1);
    // Keep pixels outside the mask bit-identical.
    for c in 0..2 {
        let src = u.u.index_axis(Axis(0), c);
        let mut dst = out.u.index_axis_mut(Axis(0), c);
        ndarray::Zip::from(&mut dst).and(&src).and(mask).for_each(|d, &s, &m| {
            if !m {
                *d = s;
            }
        });
    }
    out
}
