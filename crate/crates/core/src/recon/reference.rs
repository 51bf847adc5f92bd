use crate::error::{Error, Result};
use crate::interp::WeightedAccumulator;
use crate::model::{PixelMap, PixelTranslations, ReferenceImage};

use super::ReconInput;

/// Position on a reference grid with the given origin of the pixel-map value
/// `u` seen from a frame shifted by `shift`. Shared by the simulator and every
/// reconstruction step so that both evaluate identical coordinates.
#[inline]
pub fn reference_coordinate(u: f64, shift: f64, origin: f64) -> f64 {
    (u - shift) - origin
}

/// Merges the good frames into a reference image:
/// `I_ref = sum W I / sum W^2`, splatted at `u - d` for every good pixel.
///
/// The grid origin is the floor of the smallest `u - d`; the grid is just
/// large enough to hold the largest one. Accumulation is serial, so the
/// result does not depend on the thread count.
pub fn make_reference(input: &ReconInput, u: &PixelMap, t: &PixelTranslations) -> Result<ReferenceImage> {
    let shape = input.shape();
    if u.shape() != shape {
        return Err(Error::shape("pixel map", shape, u.shape()));
    }
    if t.len() != input.scan.n_frames() {
        return Err(Error::shape("translations", input.scan.n_frames(), t.len()));
    }

    let (mut umin, mut umax) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for ((i, j), &m) in input.mask.indexed_iter() {
        if m {
            for c in 0..2 {
                let v = u.u[[c, i, j]];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("pixel map is not finite at ({i}, {j})")));
                }
                umin[c] = umin[c].min(v);
                umax[c] = umax[c].max(v);
            }
        }
    }
    let (mut dmin, mut dmax) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &n in &input.good_frames {
        for (c, d) in [t.di[n], t.dj[n]].into_iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::invalid(format!("translation of frame {n} is not finite")));
            }
            dmin[c] = dmin[c].min(d);
            dmax[c] = dmax[c].max(d);
        }
    }
    // Rounding is monotone, so these bound every (u - d) evaluated below.
    let origin = [(umin[0] - dmax[0]).floor(), (umin[1] - dmax[1]).floor()];
    let extent = [
        reference_coordinate(umax[0], dmin[0], origin[0]),
        reference_coordinate(umax[1], dmin[1], origin[1]),
    ];
    let grid = (extent[0].ceil() as usize + 1, extent[1].ceil() as usize + 1);

    let mut acc = WeightedAccumulator::new(grid);
    let w = input.whitefield;
    for &n in &input.good_frames {
        let frame = input.scan.frame(n);
        for ((i, j), &m) in input.mask.indexed_iter() {
            let wij = w[[i, j]];
            if !m || wij == 0.0 {
                continue;
            }
            let x = reference_coordinate(u.u[[0, i, j]], t.di[n], origin[0]);
            let y = reference_coordinate(u.u[[1, i, j]], t.dj[n], origin[1]);
            acc.accumulate(x, y, wij * frame[[i, j]], wij * wij);
        }
    }
    let (i_ref, valid) = acc.normalize();
    Ok(ReferenceImage {
        i_ref,
        wsum: acc.weights,
        valid,
        origin: (origin[0], origin[1]),
        du: input.du,
        dv: input.dv,
    })
}
