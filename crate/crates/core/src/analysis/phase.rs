//! Wavefront phase from the pixel map.
//!
//! With `u(x) = x - lambda z / (2 pi) grad Phi(x)` and the identity map
//! standing for the ideal defocus, the displacement `d = u - identity` (in
//! reference pixels) gives the aberration gradient in radians per detector
//! pixel:
//!
//! `dPhi/di = -2 pi du dx / (lambda z) * d0`, `dPhi/dj = -2 pi dv dy / (lambda z) * d1`.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::integrate::{CgOptions, GradientOperator};
use crate::model::{Geometry, PixelMap};

#[derive(Debug, Clone)]
pub struct Phase {
    /// Aberration phase at the detector plane in radians, zero at the first
    /// good pixel. The ideal defocus is excluded; see `curvature`.
    pub phi: Array2<f64>,
    pub mask: Array2<bool>,
    /// Radii of curvature `(z1_ss + z, z1_fs + z)` of the removed defocus term.
    pub curvature: (f64, f64),
    pub converged: bool,
    /// RMS of `G phi - g` over the good pixels, radians per pixel.
    pub gradient_residual_rms: f64,
}

/// Radians per reference pixel of displacement along each axis.
pub fn displacement_to_gradient(geom: &Geometry, wavelength: f64, x_pixel_size: f64, y_pixel_size: f64) -> (f64, f64) {
    let k = 2.0 * std::f64::consts::PI / (wavelength * geom.distance);
    (-k * geom.du * x_pixel_size, -k * geom.dv * y_pixel_size)
}

/// Phase gradient in radians per detector pixel implied by `u`.
pub fn phase_gradient(
    u: &PixelMap,
    geom: &Geometry,
    wavelength: f64,
    x_pixel_size: f64,
    y_pixel_size: f64,
) -> (Array2<f64>, Array2<f64>) {
    let (c0, c1) = displacement_to_gradient(geom, wavelength, x_pixel_size, y_pixel_size);
    let (d0, d1) = u.displacement();
    (d0.mapv(|v| c0 * v), d1.mapv(|v| c1 * v))
}

/// Least-squares integral of the phase gradient implied by `u` over `mask`.
pub fn calculate_phase(
    u: &PixelMap,
    geom: &Geometry,
    wavelength: f64,
    x_pixel_size: f64,
    y_pixel_size: f64,
    mask: &Array2<bool>,
) -> Result<Phase> {
    if u.shape() != mask.dim() {
        return Err(Error::shape("mask", u.shape(), mask.dim()));
    }
    if !(wavelength > 0.0) {
        return Err(Error::invalid("wavelength must be > 0"));
    }
    let (g0, g1) = phase_gradient(u, geom, wavelength, x_pixel_size, y_pixel_size);
    let op = GradientOperator::new(mask);
    let sol = op.integrate(&g0, &g1, CgOptions::default());
    if !sol.converged {
        log::warn!("phase integration stopped after {} iterations", sol.iterations);
    }
    let (r0, r1) = op.gradient(&sol.phi);
    let mut s = 0.0;
    let mut n = 0usize;
    Zip::from(mask).and(&r0).and(&r1).and(&g0).and(&g1).for_each(|&m, a, b, x, y| {
        if m {
            s += (a - x).powi(2) + (b - y).powi(2);
            n += 1;
        }
    });
    Ok(Phase {
        phi: sol.phi,
        mask: mask.clone(),
        curvature: (geom.z1_ss + geom.distance, geom.z1_fs + geom.distance),
        converged: sol.converged,
        gradient_residual_rms: (s / n.max(1) as f64).sqrt(),
    })
}

/// Subtracts the least-squares plane `a + b i + c j` over `mask`
/// (piston and tilt). Pixels outside the mask are set to zero.
pub fn remove_tilt(phi: &Array2<f64>, mask: &Array2<bool>) -> Array2<f64> {
    // Normal equations of the 3-parameter fit, centred for conditioning.
    let pts: Vec<(f64, f64, f64)> = phi
        .indexed_iter()
        .filter(|((i, j), _)| mask[[*i, *j]])
        .map(|((i, j), &v)| (i as f64, j as f64, v))
        .collect();
    if pts.is_empty() {
        return Array2::zeros(phi.dim());
    }
    let n = pts.len() as f64;
    let (mi, mj, mv) = pts.iter().fold((0.0, 0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n, a.2 + p.2 / n));
    let (mut sii, mut sjj, mut sij, mut siv, mut sjv) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j, v) in &pts {
        let (a, b, c) = (i - mi, j - mj, v - mv);
        sii += a * a;
        sjj += b * b;
        sij += a * b;
        siv += a * c;
        sjv += b * c;
    }
    let det = sii * sjj - sij * sij;
    let (bi, bj) = if det.abs() > 0.0 {
        ((siv * sjj - sjv * sij) / det, (sjv * sii - siv * sij) / det)
    } else if sii > 0.0 {
        (siv / sii, 0.0)
    } else if sjj > 0.0 {
        (0.0, sjv / sjj)
    } else {
        (0.0, 0.0)
    };
    Array2::from_shape_fn(phi.dim(), |(i, j)| {
        if mask[[i, j]] {
            phi[[i, j]] - mv - bi * (i as f64 - mi) - bj * (j as f64 - mj)
        } else {
            0.0
        }
    })
}
