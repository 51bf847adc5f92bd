use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{PixelMap, PixelTranslations, ReferenceImage};

use super::pixel_map::{search, SearchWindow};
use super::reference::reference_coordinate;
use super::{reference_sampler, residual, ReconInput};

/// Re-estimates each good frame's translation by searching shifts of
/// `(di, dj)` that minimise the frame's error against the reference, with a
/// paraboloid refinement around the best integer shift. Frames are
/// independent; bad frames keep their input values. A zero window returns the
/// input unchanged.
pub fn update_translations(
    input: &ReconInput,
    reference: &ReferenceImage,
    u: &PixelMap,
    t: &PixelTranslations,
    window: &SearchWindow,
) -> Result<PixelTranslations> {
    let shape = input.shape();
    if u.shape() != shape {
        return Err(Error::shape("pixel map", shape, u.shape()));
    }
    if t.len() != input.scan.n_frames() {
        return Err(Error::shape("translations", input.scan.n_frames(), t.len()));
    }
    if window.is_zero() && window.subpixel_grid.is_none() {
        return Ok(t.clone());
    }
    let sampler = reference_sampler(reference)?;
    let origin = reference.origin;
    let pixels: Vec<(usize, usize)> = input.mask.indexed_iter().filter(|(_, &m)| m).map(|(p, _)| p).collect();
    let grid = window.grid();
    let w = input.whitefield;

    let updated: Vec<(usize, f64, f64)> = input
        .good_frames
        .par_iter()
        .map(|&n| {
            let frame = input.scan.frame(n);
            let (di, dj) = (t.di[n], t.dj[n]);
            let eval = |a: f64, b: f64| {
                let (si, sj) = (di + a, dj + b);
                let mut s = 0.0;
                for &(i, j) in &pixels {
                    let x = reference_coordinate(u.u[[0, i, j]], si, origin.0);
                    let y = reference_coordinate(u.u[[1, i, j]], sj, origin.1);
                    let r = residual(&sampler, frame[[i, j]], w[[i, j]], x, y);
                    s += r * r;
                }
                s
            };
            let (off, _) = search(&grid, true, eval);
            (n, di + off.0, dj + off.1)
        })
        .collect();

    let mut out = t.clone();
    for (n, a, b) in updated {
        out.di[n] = a;
        out.dj[n] = b;
    }
    Ok(out)
}
