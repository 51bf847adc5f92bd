use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interp::WeightedAccumulator;
use crate::model::{ErrorMetrics, PixelMap, PixelTranslations, ReferenceImage};

use super::reference::reference_coordinate;
use super::{max_masked, reference_sampler, residual, ReconInput};

/// Lower bound on per-pixel variances: `1e-8 * max(W^2)` over good pixels.
pub fn variance_floor(input: &ReconInput) -> f64 {
    let wmax = max_masked(&input.whitefield.view(), &input.mask);
    let f = 1e-8 * wmax * wmax;
    if f > 0.0 {
        f
    } else {
        f64::MIN_POSITIVE
    }
}

/// Decomposes the normalised target `sum M (I - W I_ref(u - d))^2 / var_I`.
///
/// `var_I` is the population variance of each pixel over the good frames,
/// floored by [`variance_floor`]. The reference-plane map splats each
/// observation's error through the same mapping used to form the reference
/// and normalises by the splatted weights.
pub fn calc_error(
    input: &ReconInput,
    reference: &ReferenceImage,
    u: &PixelMap,
    t: &PixelTranslations,
) -> Result<ErrorMetrics> {
    let shape = input.shape();
    if u.shape() != shape {
        return Err(Error::shape("pixel map", shape, u.shape()));
    }
    let sampler = reference_sampler(reference)?;
    let origin = reference.origin;
    let floor = variance_floor(input);
    let n_frames = input.scan.n_frames();
    let nf = input.good_frames.len() as f64;
    let w = input.whitefield;

    // Per row: variances, per-pixel errors and per-frame partial sums.
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..shape.0)
        .into_par_iter()
        .map(|i| {
            let mut var_row = vec![0.0; shape.1];
            let mut err_row = vec![0.0; shape.1];
            let mut frame_part = vec![0.0; input.good_frames.len()];
            for j in 0..shape.1 {
                if !input.mask[[i, j]] {
                    continue;
                }
                let series = input.series(i, j);
                let mean = series.iter().sum::<f64>() / nf;
                let var = (series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / nf).max(floor);
                var_row[j] = var;
                let mut s = 0.0;
                for (k, (&n, &intensity)) in input.good_frames.iter().zip(&series).enumerate() {
                    let x = reference_coordinate(u.u[[0, i, j]], t.di[n], origin.0);
                    let y = reference_coordinate(u.u[[1, i, j]], t.dj[n], origin.1);
                    let r = residual(&sampler, intensity, w[[i, j]], x, y);
                    let e = r * r / var;
                    s += e;
                    frame_part[k] += e;
                }
                err_row[j] = s;
            }
            (var_row, err_row, frame_part)
        })
        .collect();

    let mut variance = Array2::zeros(shape);
    let mut per_pixel = Array2::zeros(shape);
    let mut per_frame = Array1::zeros(n_frames);
    for (i, (var_row, err_row, frame_part)) in rows.into_iter().enumerate() {
        for j in 0..shape.1 {
            variance[[i, j]] = var_row[j];
            per_pixel[[i, j]] = err_row[j];
        }
        for (k, &n) in input.good_frames.iter().enumerate() {
            per_frame[n] += frame_part[k];
        }
    }
    let total = per_frame.sum();

    let mut acc = WeightedAccumulator::new(reference.shape());
    for &n in &input.good_frames {
        let frame = input.scan.frame(n);
        for ((i, j), &m) in input.mask.indexed_iter() {
            if !m {
                continue;
            }
            let x = reference_coordinate(u.u[[0, i, j]], t.di[n], origin.0);
            let y = reference_coordinate(u.u[[1, i, j]], t.dj[n], origin.1);
            let r = residual(&sampler, frame[[i, j]], w[[i, j]], x, y);
            acc.scatter(x, y, r * r / variance[[i, j]], 1.0);
        }
    }
    let (reference_plane, _) = acc.normalize();

    Ok(ErrorMetrics { total, per_frame, per_pixel, reference_plane, variance })
}
