//! Forward-model scan generator.
//!
//! Frames are rendered as `I[n,i,j] = W[i,j] * I_ref(u[i,j] - d[n])` with the
//! same coordinate helper and masked bilinear reader the reconstruction
//! uses, so the ground truth reproduces the frames exactly in the noiseless
//! case.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::analysis::phase::displacement_to_gradient;
use crate::analysis::zernike::{zernike_phase, Pupil};
use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, FrequencyGrid};
use crate::geometry::make_geometry;
use crate::integrate::gradient;
use crate::interp::Sampler;
use crate::model::{GroundTruth, PixelMap, PixelTranslations, ReferenceImage, ScanData, Whitefield};
use crate::recon::{gaussian_filter, reference_coordinate};

#[derive(Debug, Clone, PartialEq)]
pub enum WhitefieldModel {
    Flat { counts: f64 },
    /// Gaussian beam with widths given as fractions of the detector extent.
    Gaussian { peak: f64, width_ss: f64, width_fs: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Texture {
    /// Smoothed random blobs with the given correlation length (reference
    /// pixels) and relative standard deviation.
    Blobs { sigma: f64, contrast: f64 },
    /// Siemens-star spokes.
    Spokes { count: usize, contrast: f64 },
    /// Near-field hologram of a random pure-phase object propagated over the
    /// effective distance. `sigma` is the correlation length of the phase in
    /// reference pixels and `amplitude` its standard deviation in radians.
    Hologram { sigma: f64, amplitude: f64 },
    /// User image resampled onto the reference grid (nearest neighbour,
    /// periodic).
    Image(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Positions {
    /// `rows x cols` raster with `step` reference pixels between points.
    Raster { rows: usize, cols: usize, step: f64 },
    /// Fermat spiral of `count` points with mean spacing `step`.
    Spiral { count: usize, step: f64 },
}

impl Positions {
    /// `(di, dj)` in reference pixels, centred on zero.
    pub fn generate(&self) -> Vec<(f64, f64)> {
        let mut p: Vec<(f64, f64)> = match *self {
            Positions::Raster { rows, cols, step } => (0..rows)
                .flat_map(|a| (0..cols).map(move |b| (a as f64 * step, b as f64 * step)))
                .collect(),
            Positions::Spiral { count, step } => {
                let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
                (0..count)
                    .map(|k| {
                        let r = step * (k as f64 / std::f64::consts::PI).sqrt();
                        let t = k as f64 * golden;
                        (r * t.cos(), r * t.sin())
                    })
                    .collect()
            }
        };
        if !p.is_empty() {
            let n = p.len() as f64;
            let (m0, m1) = p.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0 / n, a.1 + q.1 / n));
            // Centre on whole pixels so that integer-valued rasters stay integral.
            let (m0, m1) = (m0.round(), m1.round());
            for q in &mut p {
                q.0 -= m0;
                q.1 -= m1;
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub shape: (usize, usize),
    pub wavelength: f64,
    pub distance: f64,
    pub z1_ss: f64,
    pub z1_fs: f64,
    pub x_pixel_size: f64,
    pub y_pixel_size: f64,
    /// Aberrations as `(Noll index, radians)` on the full-frame pupil.
    pub zernike: Vec<(usize, f64)>,
    pub whitefield: WhitefieldModel,
    pub texture: Texture,
    pub positions: Positions,
    pub poisson_noise: bool,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            shape: (128, 128),
            wavelength: 1e-10,
            distance: 1.0,
            z1_ss: 1e-3,
            z1_fs: 1e-3,
            x_pixel_size: 55e-6,
            y_pixel_size: 55e-6,
            zernike: Vec::new(),
            whitefield: WhitefieldModel::Flat { counts: 1000.0 },
            texture: Texture::Blobs { sigma: 2.0, contrast: 0.3 },
            positions: Positions::Raster { rows: 5, cols: 5, step: 8.0 },
            poisson_noise: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scan: ScanData,
    pub truth: GroundTruth,
    /// Largest aberration displacement of the true pixel map, reference pixels.
    pub peak_displacement: f64,
}

fn render_whitefield(model: &WhitefieldModel, shape: (usize, usize)) -> Array2<f64> {
    match *model {
        WhitefieldModel::Flat { counts } => Array2::from_elem(shape, counts),
        WhitefieldModel::Gaussian { peak, width_ss, width_fs } => {
            let c = ((shape.0 as f64 - 1.0) / 2.0, (shape.1 as f64 - 1.0) / 2.0);
            let s = (width_ss * shape.0 as f64, width_fs * shape.1 as f64);
            Array2::from_shape_fn(shape, |(i, j)| {
                let a = (i as f64 - c.0) / s.0;
                let b = (j as f64 - c.1) / s.1;
                peak * (-0.5 * (a * a + b * b)).exp()
            })
        }
    }
}

fn normalise(a: &mut Array2<f64>) {
    let n = a.len() as f64;
    let mean = a.sum() / n;
    let std = (a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let std = if std > 0.0 { std } else { 1.0 };
    a.mapv_inplace(|v| (v - mean) / std);
}

fn render_texture(
    texture: &Texture,
    shape: (usize, usize),
    rng: &mut ChaCha8Rng,
    sampling: (f64, f64),
    wavelength: f64,
    zbar: (f64, f64),
) -> Array2<f64> {
    match texture {
        Texture::Blobs { sigma, contrast } => {
            let noise = Array2::from_shape_fn(shape, |_| rng.random::<f64>());
            let mut s = gaussian_filter(&noise, *sigma);
            normalise(&mut s);
            s.mapv(|v| (1.0 + contrast * v).max(0.05))
        }
        Texture::Spokes { count, contrast } => {
            let c = ((shape.0 as f64 - 1.0) / 2.0, (shape.1 as f64 - 1.0) / 2.0);
            Array2::from_shape_fn(shape, |(i, j)| {
                let t = (j as f64 - c.1).atan2(i as f64 - c.0);
                if (t * *count as f64).sin() >= 0.0 {
                    1.0
                } else {
                    1.0 - contrast
                }
            })
        }
        Texture::Hologram { sigma, amplitude } => {
            let noise = Array2::from_shape_fn(shape, |_| rng.random::<f64>());
            let mut phase = gaussian_filter(&noise, *sigma);
            normalise(&mut phase);
            let mut field = phase.mapv(|p| Complex64::from_polar(1.0, amplitude * p));
            fft2_inplace(&mut field, false);
            let q = FrequencyGrid::new(shape, sampling.0, sampling.1);
            for ((a, b), v) in field.indexed_iter_mut() {
                let chi = std::f64::consts::PI * wavelength * (zbar.0 * q.q_ss[a].powi(2) + zbar.1 * q.q_fs[b].powi(2));
                *v *= Complex64::from_polar(1.0, -chi);
            }
            fft2_inplace(&mut field, true);
            field.mapv(|v| v.norm_sqr())
        }
        Texture::Image(img) => {
            let (r, c) = img.dim();
            Array2::from_shape_fn(shape, |(i, j)| img[[i % r, j % c]])
        }
    }
}

/// Renders a scan and its ground truth.
pub fn simulate_scan(spec: &SimSpec) -> Result<Simulation> {
    let shape = spec.shape;
    if shape.0 < 2 || shape.1 < 2 {
        return Err(Error::invalid("detector must be at least 2x2 pixels"));
    }
    let positions = spec.positions.generate();
    let n = positions.len();
    if n == 0 {
        return Err(Error::invalid("scan has no positions"));
    }
    // Geometry only needs the constants, not the frames.
    let mut scan = ScanData {
        frames: Array3::zeros((0, shape.0, shape.1)),
        wavelength: spec.wavelength,
        distance: spec.distance,
        x_pixel_size: spec.x_pixel_size,
        y_pixel_size: spec.y_pixel_size,
        basis_vectors: ScanData::aligned_basis(n, spec.x_pixel_size, spec.y_pixel_size),
        translations: Array2::zeros((n, 3)),
        good_frames: vec![true; n],
    };
    let geom = make_geometry(spec.z1_ss, spec.z1_fs, &scan)?;

    let pupil = Pupil::full(shape)?;
    let phase = zernike_phase(&spec.zernike, &pupil, shape);
    let full = Array2::from_elem(shape, true);
    let (g0, g1) = gradient(&phase, &full);
    let (c0, c1) = displacement_to_gradient(&geom, spec.wavelength, spec.x_pixel_size, spec.y_pixel_size);
    let pixel_map = PixelMap::from_displacement(&g0.mapv(|v| v / c0), &g1.mapv(|v| v / c1));
    let (d0, d1) = pixel_map.displacement();
    let peak_displacement = d0.iter().zip(d1.iter()).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);

    let mut translations = PixelTranslations::zeros(n);
    for (k, &(a, b)) in positions.iter().enumerate() {
        translations.di[k] = a;
        translations.dj[k] = b;
        scan.translations[[k, 0]] = a * geom.du;
        scan.translations[[k, 1]] = b * geom.dv;
    }

    // Reference grid with a margin around every sampled point.
    let margin = 2.0;
    let lo = |c: usize, d: &ndarray::Array1<f64>| {
        pixel_map.u.index_axis(Axis(0), c).iter().cloned().fold(f64::INFINITY, f64::min)
            - d.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let hi = |c: usize, d: &ndarray::Array1<f64>| {
        pixel_map.u.index_axis(Axis(0), c).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - d.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let origin = ((lo(0, &translations.di) - margin).floor(), (lo(1, &translations.dj) - margin).floor());
    let grid = (
        (hi(0, &translations.di) + margin - origin.0).ceil() as usize + 1,
        (hi(1, &translations.dj) + margin - origin.1).ceil() as usize + 1,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let i_ref = render_texture(
        &spec.texture,
        grid,
        &mut rng,
        (geom.du, geom.dv),
        spec.wavelength,
        (geom.zbar_ss, geom.zbar_fs),
    );
    let valid = Array2::from_elem(grid, true);
    let w = render_whitefield(&spec.whitefield, shape);

    let sampler = Sampler::from_slices(
        i_ref.as_slice().expect("standard layout"),
        Some(valid.as_slice().expect("standard layout")),
        grid.0,
        grid.1,
    );
    let frames: Vec<Result<Array2<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut f = Array2::zeros(shape);
            for ((i, j), v) in f.indexed_iter_mut() {
                let x = reference_coordinate(pixel_map.u[[0, i, j]], translations.di[k], origin.0);
                let y = reference_coordinate(pixel_map.u[[1, i, j]], translations.dj[k], origin.1);
                let r = sampler
                    .sample(x, y)
                    .ok_or_else(|| Error::invalid("displacement exceeds the reference extent"))?;
                *v = w[[i, j]] * r;
            }
            if spec.poisson_noise {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(k as u64 + 1);
                for v in f.iter_mut() {
                    if *v > 0.0 {
                        *v = Poisson::new(*v).expect("positive rate").sample(&mut rng);
                    }
                }
            }
            Ok(f)
        })
        .collect();
    let mut stack = Array3::zeros((n, shape.0, shape.1));
    for (k, f) in frames.into_iter().enumerate() {
        stack.index_axis_mut(Axis(0), k).assign(&f?);
    }
    scan.frames = stack;

    let truth = GroundTruth {
        phase,
        pixel_map,
        reference: ReferenceImage {
            i_ref,
            wsum: Array2::ones(grid),
            valid,
            origin,
            du: geom.du,
            dv: geom.dv,
        },
        translations,
        whitefield: Whitefield { w },
        geometry: geom,
        zernike_coeffs: spec.zernike.clone(),
    };
    Ok(Simulation { scan, truth, peak_displacement })
}
