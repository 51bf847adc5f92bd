//! Defocus geometry, the initial pixel map and translation units.
//!
//! The defocus estimators live in [`crate::defocus`].

use crate::error::{Error, Result};
use crate::model::{Geometry, PixelMap, PixelTranslations, ScanData};

/// Geometry for a focus-to-sample distance per detector axis. An infinite
/// `z1` describes plane-wave illumination (unit magnification).
pub fn make_geometry(z1_ss: f64, z1_fs: f64, scan: &ScanData) -> Result<Geometry> {
    geometry_from_parts(z1_ss, z1_fs, scan.distance, scan.x_pixel_size, scan.y_pixel_size)
}

pub fn geometry_from_parts(z1_ss: f64, z1_fs: f64, distance: f64, x_pixel_size: f64, y_pixel_size: f64) -> Result<Geometry> {
    for (name, z1) in [("z1_ss", z1_ss), ("z1_fs", z1_fs)] {
        if !(z1 > 0.0) {
            return Err(Error::invalid(format!("{name} must be > 0, got {z1}")));
        }
    }
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(Error::invalid(format!("distance must be > 0, got {distance}")));
    }
    let mag = |z1: f64| if z1.is_infinite() { 1.0 } else { (z1 + distance) / z1 };
    let mag_ss = mag(z1_ss);
    let mag_fs = mag(z1_fs);
    Ok(Geometry {
        z1_ss,
        z1_fs,
        distance,
        mag_ss,
        mag_fs,
        du: x_pixel_size / mag_ss,
        dv: y_pixel_size / mag_fs,
        zbar_ss: distance / mag_ss,
        zbar_fs: distance / mag_fs,
    })
}

/// The initial pixel map: the identity in reference-grid units. Defocus and
/// astigmatism are carried by `du`, `dv`, so this holds for any geometry.
pub fn generate_pixel_map(shape: (usize, usize)) -> PixelMap {
    PixelMap::identity(shape)
}

/// Sample translations in reference-grid pixels. The transverse lab
/// translation is projected on the detector slow and fast axes, so for an
/// axis-aligned detector `di = x / du` and `dj = y / dv`.
pub fn translations_to_pixels(scan: &ScanData, geom: &Geometry) -> PixelTranslations {
    let (e_ss, e_fs) = scan.detector_axes();
    let n = scan.n_frames();
    let mut t = PixelTranslations::zeros(n);
    for k in 0..n {
        // Only the transverse components enter the model.
        let p = [scan.translations[[k, 0]], scan.translations[[k, 1]]];
        t.di[k] = (p[0] * e_ss[0] + p[1] * e_ss[1]) / geom.du;
        t.dj[k] = (p[0] * e_fs[0] + p[1] * e_fs[1]) / geom.dv;
    }
    t
}
