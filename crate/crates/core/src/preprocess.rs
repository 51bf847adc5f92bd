//! Mask, white-field and region-of-interest estimation from raw frames.

use log::warn;
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{PixelMask, Roi, ScanData, Whitefield};

/// Lower-middle order statistic: element `(len - 1) / 2` of the sorted values.
/// Reorders `values`. Returns NaN for an empty slice.
pub fn lower_median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let k = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *m
}

/// Per-pixel median over the good frames (lower-middle element for an even
/// count). Masked pixels are set to zero when a mask is given.
pub fn make_whitefield(scan: &ScanData, mask: Option<&PixelMask>) -> Result<Whitefield> {
    let good = scan.good_frame_indices();
    if good.is_empty() {
        return Err(Error::invalid("make_whitefield needs at least one good frame"));
    }
    let (ss, fs) = scan.frame_shape();
    let mut w = Array2::<f64>::zeros((ss, fs));
    w.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mut buf = vec![0.0; good.len()];
            for j in 0..fs {
                for (b, &n) in buf.iter_mut().zip(&good) {
                    *b = scan.frames[[n, i, j]];
                }
                row[j] = lower_median(&mut buf);
            }
        });
    if let Some(m) = mask {
        ndarray::Zip::from(&mut w).and(&m.mask).for_each(|w, &g| {
            if !g {
                *w = 0.0;
            }
        });
    }
    Ok(Whitefield { w })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskOptions {
    /// Threshold on the robust deviation score.
    pub kappa: f64,
    /// Floor added to the neighbourhood MAD.
    pub floor: f64,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self { kappa: 10.0, floor: 1.0 }
    }
}

/// Median of the 8-neighbourhood of every pixel (centre excluded).
fn neighbour_median(a: &Array2<f64>) -> Array2<f64> {
    let (ss, fs) = a.dim();
    let mut out = Array2::zeros((ss, fs));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mut buf = Vec::with_capacity(8);
            for j in 0..fs {
                buf.clear();
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if ii >= 0 && jj >= 0 && (ii as usize) < ss && (jj as usize) < fs {
                            buf.push(a[[ii as usize, jj as usize]]);
                        }
                    }
                }
                row[j] = if buf.is_empty() { a[[i, j]] } else { lower_median(&mut buf) };
            }
        });
    out
}

/// Flags pixels whose time series deviates from the neighbourhood statistics.
///
/// For each pixel the temporal median `m` and median absolute deviation
/// `mad` are formed over the good frames. The 8-neighbour spatial medians of
/// those maps give `m_nb` and `mad_nb`, and a pixel is bad when
/// `median_n |I[n] - m_nb| / (mad_nb + floor) > kappa`.
pub fn make_mask(scan: &ScanData, opts: MaskOptions) -> PixelMask {
    let shape = scan.frame_shape();
    let good = scan.good_frame_indices();
    if good.len() < 3 {
        warn!("make_mask: fewer than 3 good frames, returning an all-good mask");
        return PixelMask::all_good(shape);
    }
    let (ss, fs) = shape;
    let series = |i: usize, j: usize| -> Vec<f64> { good.iter().map(|&n| scan.frames[[n, i, j]]).collect() };

    let mut med = Array2::zeros(shape);
    let mut mad = Array2::zeros(shape);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..ss)
        .into_par_iter()
        .map(|i| {
            let mut mr = Vec::with_capacity(fs);
            let mut ar = Vec::with_capacity(fs);
            for j in 0..fs {
                let mut s = series(i, j);
                let m = lower_median(&mut s);
                let mut dev: Vec<f64> = s.iter().map(|x| (x - m).abs()).collect();
                mr.push(m);
                ar.push(lower_median(&mut dev));
            }
            (mr, ar)
        })
        .collect();
    for (i, (mr, ar)) in rows.into_iter().enumerate() {
        for j in 0..fs {
            med[[i, j]] = mr[j];
            mad[[i, j]] = ar[j];
        }
    }

    let med_nb = neighbour_median(&med);
    let mad_nb = neighbour_median(&mad);
    let mut mask = Array2::from_elem(shape, true);
    mask.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..fs {
                let mut dev: Vec<f64> = series(i, j).iter().map(|x| (x - med_nb[[i, j]]).abs()).collect();
                let score = lower_median(&mut dev) / (mad_nb[[i, j]] + opts.floor);
                row[j] = !(score > opts.kappa);
            }
        });
    PixelMask { mask }
}

/// Shortest window `[a, b)` of `marginal` holding at least `target`; ties
/// go to the larger captured sum, then to the smaller start.
fn shortest_window(marginal: &[f64], target: f64) -> (usize, usize) {
    let n = marginal.len();
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + marginal[k];
    }
    let mut best: Option<(usize, f64, usize)> = None;
    let mut b = 0;
    for a in 0..n {
        if b < a {
            b = a;
        }
        while b < n && prefix[b] - prefix[a] < target {
            b += 1;
        }
        let sum = prefix[b] - prefix[a];
        if sum < target {
            break;
        }
        let len = b - a;
        let better = match best {
            None => true,
            Some((bl, bs, _)) => len < bl || (len == bl && sum > bs),
        };
        if better {
            best = Some((len, sum, a));
        }
    }
    let (len, _, a) = best.unwrap_or((n, 0.0, 0));
    (a, a + len)
}

/// Rectangle holding at least `fraction` of the white-field signal along each
/// axis, found independently on the two marginal sums.
pub fn guess_roi(w: &Whitefield, fraction: f64) -> Result<Roi> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("roi fraction {fraction} outside (0, 1]")));
    }
    let total: f64 = w.w.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("guess_roi: white-field is all zero"));
    }
    let clip = |v: &f64| v.max(0.0);
    let ss_marg: Vec<f64> = w.w.axis_iter(Axis(0)).map(|r| r.iter().map(clip).sum()).collect();
    let fs_marg: Vec<f64> = w.w.axis_iter(Axis(1)).map(|c| c.iter().map(clip).sum()).collect();
    let (s0, s1) = shortest_window(&ss_marg, fraction * ss_marg.iter().sum::<f64>());
    let (f0, f1) = shortest_window(&fs_marg, fraction * fs_marg.iter().sum::<f64>());
    Roi::new(s0, s1, f0, f1, w.w.dim())
}
