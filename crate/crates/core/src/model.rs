//! Shared domain types.
//!
//! Array axes are always `[slow-scan, fast-scan]`. The slow-scan axis is the
//! `x` / `u[0]` direction, sampled by `x_pixel_size` on the detector and by
//! `du` on the reference grid; the fast-scan axis is `y` / `u[1]` with
//! `y_pixel_size` and `dv`.

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Relative tolerance on basis-vector norms against the pixel sizes.
const BASIS_NORM_RTOL: f64 = 1e-6;
/// Largest allowed change of a basis vector between frames, in meters.
const BASIS_FRAME_ATOL: f64 = 1e-9;

/// A stack of projection images together with the scan geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    /// Photon counts `[N, SS, FS]`.
    pub frames: Array3<f64>,
    pub wavelength: f64,
    /// Sample to detector distance.
    pub distance: f64,
    pub x_pixel_size: f64,
    pub y_pixel_size: f64,
    /// Detector step vectors `[N, 2, 3]` (slow, fast) in the lab frame.
    pub basis_vectors: Array3<f64>,
    /// Sample positions `[N, 3]` in the lab frame, origin at the focus.
    pub translations: Array2<f64>,
    pub good_frames: Vec<bool>,
}

impl ScanData {
    pub fn n_frames(&self) -> usize {
        self.frames.len_of(Axis(0))
    }

    pub fn frame_shape(&self) -> (usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2])
    }

    pub fn frame(&self, n: usize) -> ArrayView2<'_, f64> {
        self.frames.index_axis(Axis(0), n)
    }

    pub fn good_frame_indices(&self) -> Vec<usize> {
        self.good_frames
            .iter()
            .enumerate()
            .filter_map(|(n, &g)| g.then_some(n))
            .collect()
    }

    /// Basis vectors with `x_pixel_size` along lab x (slow) and
    /// `y_pixel_size` along lab y (fast) for every frame.
    pub fn aligned_basis(n: usize, x_pixel_size: f64, y_pixel_size: f64) -> Array3<f64> {
        let mut b = Array3::zeros((n, 2, 3));
        for k in 0..n {
            b[[k, 0, 0]] = x_pixel_size;
            b[[k, 1, 1]] = y_pixel_size;
        }
        b
    }

    /// Unit vectors of the slow and fast detector axes (taken from frame 0).
    pub fn detector_axes(&self) -> ([f64; 3], [f64; 3]) {
        let unit = |a: usize| {
            let v = [
                self.basis_vectors[[0, a, 0]],
                self.basis_vectors[[0, a, 1]],
                self.basis_vectors[[0, a, 2]],
            ];
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                [v[0] / norm, v[1] / norm, v[2] / norm]
            } else if a == 0 {
                [1.0, 0.0, 0.0]
            } else {
                [0.0, 1.0, 0.0]
            }
        };
        (unit(0), unit(1))
    }

    /// Lists every violated invariant. Never fails.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let n = self.n_frames();
        if n == 0 {
            v.push("frames must contain at least one frame".to_string());
        }
        let (ss, fs) = self.frame_shape();
        if ss == 0 || fs == 0 {
            v.push("frames must have a non-empty detector shape".to_string());
        }
        for (name, value) in [
            ("wavelength", self.wavelength),
            ("distance", self.distance),
            ("x_pixel_size", self.x_pixel_size),
            ("y_pixel_size", self.y_pixel_size),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                v.push(format!("{name} must be > 0"));
            }
        }
        if self.basis_vectors.shape() != [n, 2, 3] {
            v.push(format!(
                "basis_vectors shape {:?} does not match [{n}, 2, 3]",
                self.basis_vectors.shape()
            ));
        } else if n > 0 {
            let mut norm_bad = false;
            let mut vary = false;
            for k in 0..n {
                for (axis, expected) in [(0, self.x_pixel_size), (1, self.y_pixel_size)] {
                    let norm = (0..3)
                        .map(|c| self.basis_vectors[[k, axis, c]].powi(2))
                        .sum::<f64>()
                        .sqrt();
                    if (norm - expected).abs() > BASIS_NORM_RTOL * expected.abs() {
                        norm_bad = true;
                    }
                    for c in 0..3 {
                        let d = self.basis_vectors[[k, axis, c]] - self.basis_vectors[[0, axis, c]];
                        if d.abs() > BASIS_FRAME_ATOL {
                            vary = true;
                        }
                    }
                }
            }
            if norm_bad {
                v.push("basis_vectors row norm mismatch".to_string());
            }
            if vary {
                v.push("basis_vectors vary across frames".to_string());
            }
        }
        if self.translations.shape() != [n, 3] {
            v.push(format!(
                "translations shape {:?} does not match [{n}, 3]",
                self.translations.shape()
            ));
        } else if self.translations.iter().any(|x| !x.is_finite()) {
            v.push("translations must be finite".to_string());
        }
        if self.good_frames.len() != n {
            v.push(format!(
                "good_frames length {} does not match {n} frames",
                self.good_frames.len()
            ));
        }
        if self.frames.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            v.push("frames must be finite and non-negative".to_string());
        }
        v
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(v.join("; ")))
        }
    }
}

/// Detector pixel mask, `true` marks a good pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub mask: Array2<bool>,
}

impl PixelMask {
    pub fn all_good(shape: (usize, usize)) -> Self {
        Self { mask: Array2::from_elem(shape, true) }
    }

    /// The mask restricted to a region of interest.
    pub fn within(&self, roi: &Roi) -> Array2<bool> {
        let mut m = self.mask.clone();
        for ((i, j), v) in m.indexed_iter_mut() {
            if !roi.contains(i, j) {
                *v = false;
            }
        }
        m
    }

    pub fn count_good(&self) -> usize {
        self.mask.iter().filter(|&&g| g).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Whitefield {
    pub w: Array2<f64>,
}

/// Half-open rectangle of detector pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub ss_min: usize,
    pub ss_max: usize,
    pub fs_min: usize,
    pub fs_max: usize,
}

impl Roi {
    pub fn new(ss_min: usize, ss_max: usize, fs_min: usize, fs_max: usize, shape: (usize, usize)) -> Result<Self> {
        if ss_min >= ss_max || fs_min >= fs_max || ss_max > shape.0 || fs_max > shape.1 {
            return Err(Error::invalid(format!(
                "roi [{ss_min}, {ss_max}) x [{fs_min}, {fs_max}) is empty or outside {shape:?}"
            )));
        }
        Ok(Self { ss_min, ss_max, fs_min, fs_max })
    }

    pub fn full(shape: (usize, usize)) -> Self {
        Self { ss_min: 0, ss_max: shape.0, fs_min: 0, fs_max: shape.1 }
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.ss_min && i < self.ss_max && j >= self.fs_min && j < self.fs_max
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ss_max - self.ss_min, self.fs_max - self.fs_min)
    }

    pub fn area(&self) -> usize {
        let (a, b) = self.shape();
        a * b
    }
}

/// Magnification and reference-grid sampling for a given defocus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub z1_ss: f64,
    pub z1_fs: f64,
    pub distance: f64,
    pub mag_ss: f64,
    pub mag_fs: f64,
    pub du: f64,
    pub dv: f64,
    pub zbar_ss: f64,
    pub zbar_fs: f64,
}

/// Per-pixel coordinates into the reference grid, `u[2, SS, FS]`, in units of
/// `du` (component 0) and `dv` (component 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub u: Array3<f64>,
}

impl PixelMap {
    pub fn identity(shape: (usize, usize)) -> Self {
        let mut u = Array3::zeros((2, shape.0, shape.1));
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                u[[0, i, j]] = i as f64;
                u[[1, i, j]] = j as f64;
            }
        }
        Self { u }
    }

    pub fn shape(&self) -> (usize, usize) {
        let s = self.u.shape();
        (s[1], s[2])
    }

    /// `u - identity` for both components.
    pub fn displacement(&self) -> (Array2<f64>, Array2<f64>) {
        let (ss, fs) = self.shape();
        let d0 = Array2::from_shape_fn((ss, fs), |(i, j)| self.u[[0, i, j]] - i as f64);
        let d1 = Array2::from_shape_fn((ss, fs), |(i, j)| self.u[[1, i, j]] - j as f64);
        (d0, d1)
    }

    pub fn from_displacement(d0: &Array2<f64>, d1: &Array2<f64>) -> Self {
        let (ss, fs) = d0.dim();
        let mut u = Array3::zeros((2, ss, fs));
        for i in 0..ss {
            for j in 0..fs {
                u[[0, i, j]] = i as f64 + d0[[i, j]];
                u[[1, i, j]] = j as f64 + d1[[i, j]];
            }
        }
        Self { u }
    }
}

/// Sample translations in reference-grid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTranslations {
    pub di: Array1<f64>,
    pub dj: Array1<f64>,
}

impl PixelTranslations {
    pub fn zeros(n: usize) -> Self {
        Self { di: Array1::zeros(n), dj: Array1::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.di.len()
    }

    pub fn is_empty(&self) -> bool {
        self.di.is_empty()
    }

    /// `[N, 2]` array form used for storage.
    pub fn to_array(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.len(), 2));
        for n in 0..self.len() {
            a[[n, 0]] = self.di[n];
            a[[n, 1]] = self.dj[n];
        }
        a
    }

    pub fn from_array(a: &Array2<f64>) -> Result<Self> {
        if a.ncols() != 2 {
            return Err(Error::shape("pixel translations", "[N, 2]", a.shape()));
        }
        Ok(Self { di: a.column(0).to_owned(), dj: a.column(1).to_owned() })
    }
}

/// The merged, distortion-corrected reference image.
///
/// Grid cell `[a, b]` sits at reference coordinate `(origin.0 + a, origin.1 + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImage {
    pub i_ref: Array2<f64>,
    pub wsum: Array2<f64>,
    pub valid: Array2<bool>,
    pub origin: (f64, f64),
    pub du: f64,
    pub dv: f64,
}

impl ReferenceImage {
    pub fn shape(&self) -> (usize, usize) {
        self.i_ref.dim()
    }

    pub fn valid_fraction(&self) -> f64 {
        let n = self.valid.iter().filter(|&&v| v).count();
        n as f64 / self.valid.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMetrics {
    pub total: f64,
    pub per_frame: Array1<f64>,
    pub per_pixel: Array2<f64>,
    pub reference_plane: Array2<f64>,
    pub variance: Array2<f64>,
}

/// Simulator-side record of the quantities that produced a scan.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Aberration phase at the detector plane (ideal defocus excluded).
    pub phase: Array2<f64>,
    pub pixel_map: PixelMap,
    pub reference: ReferenceImage,
    pub translations: PixelTranslations,
    pub whitefield: Whitefield,
    pub geometry: Geometry,
    /// Injected Zernike terms as (Noll index, radians).
    pub zernike_coeffs: Vec<(usize, f64)>,
}

/// Restricts `mask` to `roi`, returning a fresh boolean array.
pub fn roi_mask(mask: &PixelMask, roi: &Roi) -> Array2<bool> {
    mask.within(roi)
}
