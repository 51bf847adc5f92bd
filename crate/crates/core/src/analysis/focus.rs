//! Beam intensity near the focal plane.
//!
//! The detector field `sqrt(W) exp(i (Phi + pi x^2 / (lambda R)))` is carried
//! back to a plane `R` upstream with a single Fresnel (scaled Fourier)
//! transform, where `R` is the mean radius of curvature. Each requested slice
//! is then reached with angular-spectrum propagation on a grid zero-padded by
//! two and cropped back. Without curvature the detector field is propagated
//! directly and `z` is measured from the detector.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, Array3, Axis};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, FrequencyGrid};
use crate::model::{Geometry, Whitefield};

use super::phase::Phase;

const PAD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZRange {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
}

impl ZRange {
    pub fn values(&self) -> Array1<f64> {
        if self.nz == 1 {
            return Array1::from_elem(1, self.z_min);
        }
        Array1::linspace(self.z_min, self.z_max, self.nz)
    }
}

#[derive(Debug, Clone)]
pub struct FocusVolume {
    /// `[nz, ss, fs]` intensities on the cropped grid.
    pub intensities: Array3<f64>,
    /// Slice positions in meters from the nominal focus (downstream positive).
    pub z_values: Array1<f64>,
    /// Transverse sampling `(ss, fs)` in meters.
    pub pixel_size: (f64, f64),
    /// Power of every slice over the full padded grid.
    pub slice_power: Array1<f64>,
    /// Power of the detector-plane field.
    pub input_power: f64,
}

/// Propagates the wavefront described by `phase` and `whitefield` to the
/// planes in `z`. The ideal defocus is taken from `geom`.
pub fn focus_profile(
    phase: &Phase,
    whitefield: &Whitefield,
    geom: &Geometry,
    wavelength: f64,
    x_pixel_size: f64,
    y_pixel_size: f64,
    z: ZRange,
) -> Result<FocusVolume> {
    let shape = phase.phi.dim();
    if whitefield.w.dim() != shape {
        return Err(Error::shape("whitefield", shape, whitefield.w.dim()));
    }
    if z.nz == 0 || !(z.z_max >= z.z_min) {
        return Err(Error::invalid("z range must hold at least one plane with z_max >= z_min"));
    }
    if !(wavelength > 0.0 && x_pixel_size > 0.0 && y_pixel_size > 0.0) {
        return Err(Error::invalid("wavelength and pixel sizes must be > 0"));
    }
    let (r_ss, r_fs) = (geom.z1_ss + geom.distance, geom.z1_fs + geom.distance);
    let curved = r_ss.is_finite() && r_fs.is_finite();
    let r = 0.5 * (r_ss + r_fs);

    // Residual phase after removing the mean curvature.
    let c = ((shape.0 / 2) as f64, (shape.1 / 2) as f64);
    let residual = Array2::from_shape_fn(shape, |(i, j)| {
        if !phase.mask[[i, j]] {
            return 0.0;
        }
        let mut v = phase.phi[[i, j]];
        if curved {
            let x = (i as f64 - c.0) * x_pixel_size;
            let y = (j as f64 - c.1) * y_pixel_size;
            v += PI / wavelength * (x * x * (1.0 / r_ss - 1.0 / r) + y * y * (1.0 / r_fs - 1.0 / r));
        }
        v
    });
    let field = Array2::from_shape_fn(shape, |(i, j)| {
        if phase.mask[[i, j]] {
            Complex64::from_polar(whitefield.w[[i, j]].max(0.0).sqrt(), residual[[i, j]])
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let input_power: f64 = field.iter().map(|v| v.norm_sqr()).sum();

    let (start, pixel_size) = if curved {
        let d = (wavelength * r / (shape.0 as f64 * x_pixel_size), wavelength * r / (shape.1 as f64 * y_pixel_size));
        (fresnel_to_focus(&field, wavelength, r, d), d)
    } else {
        (field, (x_pixel_size, y_pixel_size))
    };
    let z_values = z.values();
    check_sampling(phase, &residual, wavelength, x_pixel_size, y_pixel_size, curved.then_some(r), pixel_size, &z_values)?;

    let padded_shape = (PAD * shape.0, PAD * shape.1);
    let off = ((padded_shape.0 - shape.0) / 2, (padded_shape.1 - shape.1) / 2);
    let mut spectrum = Array2::zeros(padded_shape);
    spectrum.slice_mut(s![off.0..off.0 + shape.0, off.1..off.1 + shape.1]).assign(&start);
    fft2_inplace(&mut spectrum, false);
    let q2 = FrequencyGrid::new(padded_shape, pixel_size.0, pixel_size.1).q2();

    let mut intensities = Array3::zeros((z.nz, shape.0, shape.1));
    let mut slice_power = Array1::zeros(z.nz);
    for (k, &zk) in z_values.iter().enumerate() {
        let mut f = Array2::from_shape_fn(padded_shape, |(i, j)| {
            // exp(i 2 pi z (sqrt(1/lambda^2 - q^2) - 1/lambda)), written to
            // avoid cancellation.
            let a = wavelength * wavelength * q2[[i, j]];
            let kz = -q2[[i, j]] * wavelength / (1.0 + (1.0 - a).sqrt());
            spectrum[[i, j]] * Complex64::from_polar(1.0, 2.0 * PI * zk * kz)
        });
        fft2_inplace(&mut f, true);
        slice_power[k] = f.iter().map(|v| v.norm_sqr()).sum();
        intensities
            .index_axis_mut(Axis(0), k)
            .assign(&f.slice(s![off.0..off.0 + shape.0, off.1..off.1 + shape.1]).mapv(|v| v.norm_sqr()));
    }
    Ok(FocusVolume { intensities, z_values, pixel_size, slice_power, input_power })
}

/// Unitary Fresnel transform of `field` (mean curvature already removed)
/// back over the distance `r`, sampled at `d` in the focal plane. Index
/// `len / 2` is the optical axis on both grids.
fn fresnel_to_focus(field: &Array2<Complex64>, wavelength: f64, r: f64, d: (f64, f64)) -> Array2<Complex64> {
    let (n, m) = field.dim();
    let (hn, hm) = ((n / 2) as isize, (m / 2) as isize);
    let mut f = roll(field, -hn, -hm);
    fft2_inplace(&mut f, true);
    let mut f = roll(&f, hn, hm);
    let norm = ((n * m) as f64).sqrt();
    for ((i, j), v) in f.indexed_iter_mut() {
        let x = (i as f64 - hn as f64) * d.0;
        let y = (j as f64 - hm as f64) * d.1;
        *v *= norm * Complex64::from_polar(1.0, -PI * (x * x + y * y) / (wavelength * r));
    }
    f
}

fn roll(a: &Array2<Complex64>, di: isize, dj: isize) -> Array2<Complex64> {
    let (n, m) = a.dim();
    Array2::from_shape_fn((n, m), |(i, j)| {
        let si = (i as isize - di).rem_euclid(n as isize) as usize;
        let sj = (j as isize - dj).rem_euclid(m as isize) as usize;
        a[[si, sj]]
    })
}

/// Fails when a ray leaves the padded grid somewhere in the z range, or when
/// the residual phase is undersampled on the detector.
#[allow(clippy::too_many_arguments)]
fn check_sampling(
    phase: &Phase,
    residual: &Array2<f64>,
    wavelength: f64,
    x_pixel_size: f64,
    y_pixel_size: f64,
    r: Option<f64>,
    pixel_size: (f64, f64),
    z_values: &Array1<f64>,
) -> Result<()> {
    let (n, m) = residual.dim();
    if wavelength / (2.0 * pixel_size.0.min(pixel_size.1)) >= 1.0 {
        return Err(Error::SamplingViolation("transverse sampling finer than half a wavelength".into()));
    }
    let half = (PAD as f64 * n as f64 * pixel_size.0 / 2.0, PAD as f64 * m as f64 * pixel_size.1 / 2.0);
    let c = ((n / 2) as f64, (m / 2) as f64);
    let (zlo, zhi) = (z_values[0], z_values[z_values.len() - 1]);
    for ((i, j), &ok) in phase.mask.indexed_iter() {
        if !ok {
            continue;
        }
        let g0 = central(residual, &phase.mask, i, j, 0);
        let g1 = central(residual, &phase.mask, i, j, 1);
        if g0.abs() > PI || g1.abs() > PI {
            return Err(Error::SamplingViolation(format!(
                "phase gradient of {:.3} rad/pixel at ({i}, {j}) exceeds the Nyquist limit",
                g0.abs().max(g1.abs())
            )));
        }
        // Ray angle and position in the starting plane, per axis.
        let ray = |g: f64, p: f64, x: f64, h: f64, axis: &str| -> Result<()> {
            let angle_extra = wavelength * g / (2.0 * PI * p);
            let (pos, angle) = match r {
                Some(r) => (-angle_extra * r, x / r + angle_extra),
                None => (x, angle_extra),
            };
            for zz in [zlo, zhi] {
                let at = pos + angle * zz;
                if at.abs() > h {
                    return Err(Error::SamplingViolation(format!(
                        "ray from pixel ({i}, {j}) reaches {at:.3e} m along {axis} at z = {zz:.3e} m, outside the padded grid (+-{h:.3e} m)"
                    )));
                }
            }
            Ok(())
        };
        ray(g0, x_pixel_size, (i as f64 - c.0) * x_pixel_size, half.0, "ss")?;
        ray(g1, y_pixel_size, (j as f64 - c.1) * y_pixel_size, half.1, "fs")?;
    }
    Ok(())
}

fn central(a: &Array2<f64>, mask: &Array2<bool>, i: usize, j: usize, axis: usize) -> f64 {
    let (n, m) = a.dim();
    let at = |di: isize| -> Option<f64> {
        let (ii, jj) = if axis == 0 { (i as isize + di, j as isize) } else { (i as isize, j as isize + di) };
        (ii >= 0 && jj >= 0 && (ii as usize) < n && (jj as usize) < m && mask[[ii as usize, jj as usize]])
            .then(|| a[[ii as usize, jj as usize]])
    };
    match (at(-1), at(1)) {
        (Some(l), Some(r)) => 0.5 * (r - l),
        (None, Some(r)) => r - a[[i, j]],
        (Some(l), None) => a[[i, j]] - l,
        (None, None) => 0.0,
    }
}
