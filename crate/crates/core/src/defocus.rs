//! Defocus estimates for the initial geometry.
//!
//! Two grid searches over the focus-to-sample distance: fitting the Fresnel
//! fringes ("Thon rings") of the frames' power spectrum, and maximising the
//! contrast of references formed at each candidate magnification.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{fft2_inplace, FrequencyGrid};
use crate::geometry::{make_geometry, translations_to_pixels};
use crate::model::{PixelMap, ScanData};
use crate::recon::{make_reference, ReconInput};

/// Correlation below which a Thon fit is reported as unreliable.
pub const THON_SCORE_THRESHOLD: f64 = 0.2;

/// Candidate focus-to-sample distances. With `astigmatic` every `(ss, fs)`
/// pair is tried, otherwise only equal pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Z1Grid {
    pub values: Vec<f64>,
    pub astigmatic: bool,
}

impl Z1Grid {
    pub fn new(values: Vec<f64>, astigmatic: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("z1 grid is empty"));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("z1 grid values must be finite and > 0"));
        }
        let mut values = values;
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(Self { values, astigmatic })
    }

    /// `n` values spaced evenly over `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize, astigmatic: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("z1 grid is empty"));
        }
        let v = if n == 1 { vec![lo] } else { (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect() };
        Self::new(v, astigmatic)
    }

    /// Candidate pairs in ascending order, ss major.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        if self.astigmatic {
            self.values.iter().flat_map(|&a| self.values.iter().map(move |&b| (a, b))).collect()
        } else {
            self.values.iter().map(|&v| (v, v)).collect()
        }
    }
}

/// First index of the largest score; earlier candidates win ties.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] || (scores[best].is_nan() && !s.is_nan()) {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct ThonFit {
    pub z1_ss: f64,
    pub z1_fs: f64,
    /// Correlation of the fringe model with the flattened log-spectrum.
    pub score: f64,
    pub reliable: bool,
    /// Score of every candidate in [`Z1Grid::candidates`] order.
    pub scores: Vec<f64>,
    /// Mean power spectrum of the flat-field-corrected frames, DC at index 0.
    pub power_spectrum: Array2<f64>,
}

/// Mean over good frames of `|FFT(M (I/W - 1))|^2`.
pub fn power_spectrum(scan: &ScanData, whitefield: &Array2<f64>, mask: &Array2<bool>) -> Result<Array2<f64>> {
    let shape = scan.frame_shape();
    if whitefield.dim() != shape {
        return Err(Error::shape("whitefield", shape, whitefield.dim()));
    }
    if mask.dim() != shape {
        return Err(Error::shape("mask", shape, mask.dim()));
    }
    let good: Vec<usize> = scan.good_frame_indices();
    if good.is_empty() {
        return Err(Error::invalid("no good frames"));
    }
    let usable = Zip::from(mask).and(whitefield).fold(0usize, |c, &m, &w| c + (m && w > 0.0) as usize);
    if usable == 0 {
        return Err(Error::invalid("no unmasked pixels with a positive whitefield"));
    }
    let spectra: Vec<Array2<f64>> = good
        .par_iter()
        .map(|&n| {
            let frame = scan.frame(n);
            let mut f = Array2::from_shape_fn(shape, |(i, j)| {
                let w = whitefield[[i, j]];
                let v = if mask[[i, j]] && w > 0.0 { frame[[i, j]] / w - 1.0 } else { 0.0 };
                rustfft::num_complex::Complex64::new(v, 0.0)
            });
            fft2_inplace(&mut f, false);
            f.mapv(|c| c.norm_sqr())
        })
        .collect();
    let mut out = Array2::zeros(shape);
    for s in &spectra {
        out += s;
    }
    Ok(out / good.len() as f64)
}

/// Fits `sin^2(pi lambda (z_ss q_ss^2 + z_fs q_fs^2))` to the power spectrum,
/// with detector-plane frequencies `q` and effective distances
/// `z_axis = z (z1 + z) / z1`.
///
/// The log-spectrum is flattened by subtracting a running median, over
/// [`BACKGROUND_RINGS`] rings, of its per-ring medians; the score is its
/// Pearson correlation with the model over all non-DC frequencies.
pub fn fit_thon_rings(scan: &ScanData, whitefield: &Array2<f64>, mask: &Array2<bool>, grid: &Z1Grid) -> Result<ThonFit> {
    let ps = power_spectrum(scan, whitefield, mask)?;
    let shape = ps.dim();
    let fg = FrequencyGrid::new(shape, scan.x_pixel_size, scan.y_pixel_size);
    let flat = flattened_log_spectrum(&ps);

    // Frequencies taking part in the fit, flattened for the inner loops.
    let mut q_ss2 = Vec::new();
    let mut q_fs2 = Vec::new();
    let mut data = Vec::new();
    for ((i, j), &v) in flat.indexed_iter() {
        if (i, j) != (0, 0) {
            q_ss2.push(fg.q_ss[i].powi(2));
            q_fs2.push(fg.q_fs[j].powi(2));
            data.push(v);
        }
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let centred: Vec<f64> = data.iter().map(|v| v - mean).collect();
    let data_norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();

    let lambda = scan.wavelength;
    let z = scan.distance;
    let candidates = grid.candidates();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&(z1_ss, z1_fs)| {
            let (a, b) = (z * (z1_ss + z) / z1_ss, z * (z1_fs + z) / z1_fs);
            let model: Vec<f64> = q_ss2
                .iter()
                .zip(&q_fs2)
                .map(|(qs, qf)| (std::f64::consts::PI * lambda * (a * qs + b * qf)).sin().powi(2))
                .collect();
            let m_mean = model.iter().sum::<f64>() / model.len() as f64;
            let (mut dot, mut nn) = (0.0, 0.0);
            for (m, d) in model.iter().zip(&centred) {
                let mc = m - m_mean;
                dot += mc * d;
                nn += mc * mc;
            }
            let den = nn.sqrt() * data_norm;
            if den > 0.0 {
                dot / den
            } else {
                0.0
            }
        })
        .collect();
    let k = argmax(&scores);
    let (z1_ss, z1_fs) = candidates[k];
    let score = scores[k];
    Ok(ThonFit { z1_ss, z1_fs, score, reliable: score >= THON_SCORE_THRESHOLD, scores, power_spectrum: ps })
}

/// `ln(P)` minus a slowly varying radial background. The radial profile is
/// the median of each one-bin ring (frequencies normalised to each axis'
/// Nyquist limit); the background is its running median over
/// [`BACKGROUND_RINGS`] rings, wide enough to keep the fringes themselves.
fn flattened_log_spectrum(ps: &Array2<f64>) -> Array2<f64> {
    let (n, m) = ps.dim();
    let tiny = ps.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    let tiny = if tiny.is_finite() { tiny } else { 1.0 };
    let logp = ps.mapv(|v| v.max(tiny).ln());
    let fi = crate::fft::fftfreq(n, 1.0);
    let fj = crate::fft::fftfreq(m, 1.0);
    let size = n.max(m) as f64;
    let ring = |i: usize, j: usize| ((fi[i].powi(2) + fj[j].powi(2)).sqrt() * size).round() as usize;
    let rings = ring(n / 2, m / 2) + 1;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); rings];
    for ((i, j), &v) in logp.indexed_iter() {
        members[ring(i, j)].push(v);
    }
    let profile: Vec<Option<f64>> =
        members.iter_mut().map(|v| (!v.is_empty()).then(|| crate::preprocess::lower_median(v))).collect();
    let half = BACKGROUND_RINGS / 2;
    let background: Vec<f64> = (0..rings)
        .map(|k| {
            let mut window: Vec<f64> =
                profile[k.saturating_sub(half)..(k + half + 1).min(rings)].iter().flatten().copied().collect();
            if window.is_empty() {
                0.0
            } else {
                crate::preprocess::lower_median(&mut window)
            }
        })
        .collect();
    Array2::from_shape_fn((n, m), |(i, j)| logp[[i, j]] - background[ring(i, j)])
}

/// Width of the running median that forms the spectral background.
pub const BACKGROUND_RINGS: usize = 15;

#[derive(Debug, Clone)]
pub struct RegistrationFit {
    pub z1_ss: f64,
    pub z1_fs: f64,
    /// `var(I_ref) / mean(I_ref)^2` over valid cells, per candidate.
    pub contrast: Vec<f64>,
    pub candidates: Vec<(f64, f64)>,
}

/// Forms a reference at every candidate defocus from `u` (usually the
/// identity) and the nominal translations, and keeps the sharpest one.
pub fn fit_defocus_registration(input: &ReconInput, u: &PixelMap, grid: &Z1Grid) -> Result<RegistrationFit> {
    let candidates = grid.candidates();
    let contrast: Vec<f64> = candidates
        .par_iter()
        .map(|&(z1_ss, z1_fs)| -> Result<f64> {
            let geom = make_geometry(z1_ss, z1_fs, input.scan)?;
            let t = translations_to_pixels(input.scan, &geom);
            let sampled = input.clone().with_sampling(geom.du, geom.dv);
            let r = make_reference(&sampled, u, &t)?;
            let vals: Vec<f64> = r.i_ref.iter().zip(r.valid.iter()).filter(|(_, &v)| v).map(|(x, _)| *x).collect();
            if vals.is_empty() {
                return Ok(0.0);
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            Ok(if mean != 0.0 { var / (mean * mean) } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    let (z1_ss, z1_fs) = candidates[argmax(&contrast)];
    Ok(RegistrationFit { z1_ss, z1_fs, contrast, candidates })
}
