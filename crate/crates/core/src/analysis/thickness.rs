//! Single-material thickness from the reference image (Paganin filter).

use std::collections::VecDeque;
use std::f64::consts::PI;

use ndarray::{s, Array2};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, fft2_real, FrequencyGrid};
use crate::model::ReferenceImage;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThicknessParams {
    /// Refractive-index decrement.
    pub delta: f64,
    /// Linear attenuation coefficient, 1/m.
    pub mu: f64,
    /// Effective propagation distance, meters.
    pub distance: f64,
    /// Reference-grid sampling `(ss, fs)`, meters.
    pub pixel_size: (f64, f64),
    /// Width in cells of the border ring used for the flat-field level.
    pub border: usize,
}

impl ThicknessParams {
    /// Parameters sampled like `reference` at effective distance `distance`.
    pub fn for_reference(reference: &ReferenceImage, delta: f64, mu: f64, distance: f64) -> Self {
        Self { delta, mu, distance, pixel_size: (reference.du, reference.dv), border: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct Thickness {
    /// Thickness in meters on the reference grid; zero where invalid.
    pub thickness: Array2<f64>,
    pub valid: Array2<bool>,
    /// Flat-field level used to normalise the reference.
    pub flat: f64,
    /// Cells whose filtered intensity was not positive and got clipped.
    pub clipped: usize,
}

/// `T = -ln(F^-1[F[I/I0] / (1 + z delta (2 pi q)^2 / mu)]) / mu` over the
/// bounding box of the valid reference cells.
pub fn calculate_sample_thickness(reference: &ReferenceImage, params: &ThicknessParams) -> Result<Thickness> {
    if !(params.mu > 0.0) || !(params.delta >= 0.0) || !(params.distance >= 0.0) {
        return Err(Error::invalid("thickness parameters need mu > 0, delta >= 0 and distance >= 0"));
    }
    if !(params.pixel_size.0 > 0.0 && params.pixel_size.1 > 0.0) {
        return Err(Error::invalid("pixel size must be > 0"));
    }
    let shape = reference.shape();
    let (r0, r1, c0, c1) = bounding_box(&reference.valid).ok_or_else(|| Error::invalid("reference has no valid cells"))?;
    let valid = reference.valid.slice(s![r0..r1, c0..c1]).to_owned();
    let filled = fill_nearest(&reference.i_ref.slice(s![r0..r1, c0..c1]).to_owned(), &valid);
    let flat = border_mean(&filled, &valid, params.border);
    if !(flat > 0.0) {
        return Err(Error::Numerical(format!("flat-field level {flat} is not positive")));
    }

    let crop = filled.dim();
    let q2 = FrequencyGrid::new(crop, params.pixel_size.0, params.pixel_size.1).q2();
    let mut f: Array2<Complex64> = fft2_real(&filled.mapv(|v| v / flat));
    let k = params.distance * params.delta / params.mu;
    ndarray::Zip::from(&mut f).and(&q2).for_each(|v, &q| *v /= 1.0 + k * 4.0 * PI * PI * q);
    fft2_inplace(&mut f, true);

    let eps = 1e-12;
    let mut clipped = 0;
    let mut thickness = Array2::zeros(shape);
    let mut out_valid = Array2::from_elem(shape, false);
    for ((i, j), v) in f.indexed_iter() {
        if !valid[[i, j]] {
            continue;
        }
        let mut x = v.re;
        if !(x > eps) {
            clipped += 1;
            x = eps;
        }
        thickness[[r0 + i, c0 + j]] = -x.ln() / params.mu;
        out_valid[[r0 + i, c0 + j]] = true;
    }
    if clipped > 0 {
        log::warn!("{clipped} filtered intensities were not positive and were clipped");
    }
    Ok(Thickness { thickness, valid: out_valid, flat, clipped })
}

fn bounding_box(valid: &Array2<bool>) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for ((i, j), &v) in valid.indexed_iter() {
        if v {
            b = Some(match b {
                None => (i, i + 1, j, j + 1),
                Some((a0, a1, b0, b1)) => (a0.min(i), a1.max(i + 1), b0.min(j), b1.max(j + 1)),
            });
        }
    }
    b
}

/// Copies every invalid cell from its nearest valid cell (breadth-first, 4-connected).
fn fill_nearest(a: &Array2<f64>, valid: &Array2<bool>) -> Array2<f64> {
    let (n, m) = a.dim();
    let mut out = a.clone();
    let mut seen = valid.clone();
    let mut queue: VecDeque<(usize, usize)> = valid.indexed_iter().filter(|(_, &v)| v).map(|(p, _)| p).collect();
    while let Some((i, j)) = queue.pop_front() {
        let v = out[[i, j]];
        let neighbours = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
        for (a, b) in neighbours {
            if a < n && b < m && !seen[[a, b]] {
                seen[[a, b]] = true;
                out[[a, b]] = v;
                queue.push_back((a, b));
            }
        }
    }
    out
}

/// Mean of the valid cells within `width` of the crop edge, or of all valid
/// cells when the ring holds none.
fn border_mean(a: &Array2<f64>, valid: &Array2<bool>, width: usize) -> f64 {
    let (n, m) = a.dim();
    let w = width.max(1);
    let ring = |i: usize, j: usize| i < w || j < w || i + w >= n || j + w >= m;
    let mean = |f: &dyn Fn(usize, usize) -> bool| {
        let (s, c) = a
            .indexed_iter()
            .filter(|((i, j), _)| valid[[*i, *j]] && f(*i, *j))
            .fold((0.0, 0usize), |(s, c), (_, &v)| (s + v, c + 1));
        (c > 0).then(|| s / c as f64)
    };
    mean(&ring).or_else(|| mean(&|_, _| true)).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(i_ref: Array2<f64>) -> ReferenceImage {
        let shape = i_ref.dim();
        ReferenceImage {
            i_ref,
            wsum: Array2::ones(shape),
            valid: Array2::from_elem(shape, true),
            origin: (0.0, 0.0),
            du: 1e-7,
            dv: 1e-7,
        }
    }

    fn params() -> ThicknessParams {
        ThicknessParams { delta: 1e-6, mu: 1e4, distance: 0.5, pixel_size: (1e-7, 1e-7), border: 2 }
    }

    #[test]
    fn uniform_reference_is_zero_thickness() {
        let t = calculate_sample_thickness(&reference(Array2::from_elem((16, 20), 3.5)), &params()).unwrap();
        assert!(t.thickness.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(t.flat, 3.5);
    }

    #[test]
    fn no_phase_reduces_to_beer_lambert() {
        let i_ref = Array2::from_shape_fn((12, 14), |(i, j)| {
            if (3..9).contains(&i) && (4..10).contains(&j) {
                0.5 + 0.01 * (i + j) as f64
            } else {
                1.0
            }
        });
        let p = ThicknessParams { delta: 0.0, ..params() };
        let t = calculate_sample_thickness(&reference(i_ref.clone()), &p).unwrap();
        for ((i, j), &v) in t.thickness.indexed_iter() {
            let expected = -i_ref[[i, j]].ln() / p.mu;
            assert!((v - expected).abs() < 1e-12 * expected.abs().max(1e-4), "{v} {expected}");
        }
    }

    #[test]
    fn invariant_to_intensity_scale() {
        let i_ref = Array2::from_shape_fn((16, 16), |(i, j)| 1.0 - 0.3 * (-(((i as f64 - 8.0).powi(2) + (j as f64 - 8.0).powi(2)) / 8.0)).exp());
        let a = calculate_sample_thickness(&reference(i_ref.clone()), &params()).unwrap();
        let b = calculate_sample_thickness(&reference(i_ref.mapv(|v| v * 7.0)), &params()).unwrap();
        for (x, y) in a.thickness.iter().zip(b.thickness.iter()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-9));
        }
    }

    #[test]
    fn invalid_cells_stay_flagged() {
        let mut r = reference(Array2::from_elem((10, 10), 2.0));
        r.valid[[4, 4]] = false;
        r.i_ref[[4, 4]] = f64::NAN;
        for i in 0..10 {
            r.valid[[i, 9]] = false;
        }
        let t = calculate_sample_thickness(&r, &params()).unwrap();
        assert!(!t.valid[[4, 4]] && !t.valid[[0, 9]] && t.valid[[0, 0]]);
        assert!(t.thickness.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fill_uses_nearest_cell() {
        let a = Array2::from_shape_fn((1, 5), |(_, j)| j as f64);
        let mut v = Array2::from_elem((1, 5), false);
        v[[0, 0]] = true;
        v[[0, 4]] = true;
        let f = fill_nearest(&a, &v);
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 0.0, 4.0, 4.0]);
    }
}
