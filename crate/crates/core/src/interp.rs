//! Masked bilinear interpolation.
//!
//! `gather` reads a 2-D array at a fractional coordinate, renormalising the
//! corner weights over the unmasked corners. `WeightedAccumulator` is the
//! transpose: values are splatted onto the four neighbouring cells with the
//! same weights and the weights are kept for a later normalisation.
//!
//! Coordinates are `(x, y)` = (slow-scan, fast-scan) in array index units.
//! Points outside `[0, SS-1] x [0, FS-1]` are invalid for `gather` and dropped
//! by `scatter`; nothing is clamped.

use ndarray::{Array2, ArrayView2};

/// Corner indices and bilinear weights of a point. Corners that fall off the
/// grid always carry zero weight and are reported as `None`.
#[inline]
fn corners(rows: usize, cols: usize, x: f64, y: f64) -> Option<[(usize, usize, f64); 4]> {
    // Written so that NaN coordinates fail the test.
    if !(x >= 0.0 && y >= 0.0 && x <= (rows - 1) as f64 && y <= (cols - 1) as f64) {
        return None;
    }
    let i0 = x.floor() as usize;
    let j0 = y.floor() as usize;
    let fx = x - i0 as f64;
    let fy = y - j0 as f64;
    Some([
        (i0, j0, (1.0 - fx) * (1.0 - fy)),
        (i0, j0 + 1, (1.0 - fx) * fy),
        (i0 + 1, j0, fx * (1.0 - fy)),
        (i0 + 1, j0 + 1, fx * fy),
    ])
}

/// Borrowed row-major grid with an optional validity mask; the hot-loop form
/// of [`gather`].
#[derive(Clone, Copy)]
pub struct Sampler<'a> {
    data: &'a [f64],
    mask: Option<&'a [bool]>,
    rows: usize,
    cols: usize,
}

impl<'a> Sampler<'a> {
    /// # Panics
    /// If the views are not in standard (C) layout or shapes differ.
    pub fn new(f: &'a ArrayView2<'a, f64>, mask: Option<&'a ArrayView2<'a, bool>>) -> Self {
        let (rows, cols) = f.dim();
        let data = f.as_slice().expect("sampler requires a contiguous array");
        let mask = mask.map(|m| {
            assert_eq!(m.dim(), (rows, cols), "mask shape must match data");
            m.as_slice().expect("sampler requires a contiguous mask")
        });
        Self { data, mask, rows, cols }
    }

    pub fn from_slices(data: &'a [f64], mask: Option<&'a [bool]>, rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        if let Some(m) = mask {
            assert_eq!(m.len(), rows * cols);
        }
        Self { data, mask, rows, cols }
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if self.rows == 0 || self.cols == 0 {
            return None;
        }
        let cs = corners(self.rows, self.cols, x, y)?;
        blend(cs.into_iter().filter_map(|(i, j, w)| {
            let k = i * self.cols + j;
            (w != 0.0 && !self.mask.is_some_and(|m| !m[k])).then(|| (self.data[k], w))
        }))
    }
}

/// Masked bilinear value of `f` at `(x, y)`; `None` when the point is outside
/// the grid or every contributing corner is masked.
pub fn gather(f: &ArrayView2<f64>, mask: Option<&ArrayView2<bool>>, x: f64, y: f64) -> Option<f64> {
    let (rows, cols) = f.dim();
    if rows == 0 || cols == 0 {
        return None;
    }
    let cs = corners(rows, cols, x, y)?;
    blend(
        cs.into_iter()
            .filter(|&(i, j, w)| w != 0.0 && !mask.is_some_and(|m| !m[[i, j]]))
            .map(|(i, j, w)| (f[[i, j]], w)),
    )
}

/// Normalised weighted mean of `(value, weight)` pairs, accumulated as
/// offsets from the first value so that equal values come back unchanged.
#[inline]
fn blend(taps: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let mut base = None;
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, w) in taps {
        let b = *base.get_or_insert(v);
        num += (v - b) * w;
        den += w;
    }
    let b = base?;
    (den > 0.0).then(|| b + num / den)
}

/// [`gather`] over a list of points.
pub fn gather_points(f: &ArrayView2<f64>, mask: Option<&ArrayView2<bool>>, points: &[(f64, f64)]) -> Vec<Option<f64>> {
    points.iter().map(|&(x, y)| gather(f, mask, x, y)).collect()
}

/// Weighted splat target.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAccumulator {
    pub values: Array2<f64>,
    pub weights: Array2<f64>,
    dropped: usize,
}

impl WeightedAccumulator {
    pub fn new(shape: (usize, usize)) -> Self {
        Self { values: Array2::zeros(shape), weights: Array2::zeros(shape), dropped: 0 }
    }

    /// Adds `value * weight` (and `weight`) to the cells around `(x, y)`.
    /// Returns `false` and counts the point as dropped when it lies outside the grid.
    pub fn scatter(&mut self, x: f64, y: f64, value: f64, weight: f64) -> bool {
        let (rows, cols) = self.values.dim();
        let cs = match (rows > 0 && cols > 0).then(|| corners(rows, cols, x, y)).flatten() {
            Some(cs) => cs,
            None => {
                self.dropped += 1;
                return false;
            }
        };
        for (i, j, w) in cs {
            if w == 0.0 {
                continue;
            }
            self.values[[i, j]] += value * weight * w;
            self.weights[[i, j]] += weight * w;
        }
        true
    }

    /// Adds `numerator * w` to values and `weight * w` to weights for each
    /// corner weight `w`. `scatter` is the special case `numerator = value * weight`.
    pub fn accumulate(&mut self, x: f64, y: f64, numerator: f64, weight: f64) -> bool {
        let (rows, cols) = self.values.dim();
        let cs = match (rows > 0 && cols > 0).then(|| corners(rows, cols, x, y)).flatten() {
            Some(cs) => cs,
            None => {
                self.dropped += 1;
                return false;
            }
        };
        for (i, j, w) in cs {
            if w == 0.0 {
                continue;
            }
            self.values[[i, j]] += numerator * w;
            self.weights[[i, j]] += weight * w;
        }
        true
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// `values / weights` where the weight is positive; cells with zero
    /// weight are 0 and flagged invalid.
    pub fn normalize(&self) -> (Array2<f64>, Array2<bool>) {
        let valid = self.weights.mapv(|w| w > 0.0);
        let mut out = Array2::zeros(self.values.dim());
        ndarray::Zip::from(&mut out)
            .and(&self.values)
            .and(&self.weights)
            .for_each(|o, &v, &w| {
                if w > 0.0 {
                    *o = v / w;
                }
            });
        (out, valid)
    }
}
