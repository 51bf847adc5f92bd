//! Zernike polynomials in Noll's single-index ordering, sampled on an
//! elliptical pupil and orthonormalised over an arbitrary pixel support.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Radial order `n` and signed azimuthal order `m` of Noll index `j >= 1`.
/// Positive `m` is a cosine term, negative a sine term.
pub fn noll_to_nm(j: usize) -> (usize, i64) {
    assert!(j >= 1, "Noll indices start at 1");
    let mut n = 0usize;
    let mut j1 = j - 1;
    while j1 > n {
        n += 1;
        j1 -= n;
    }
    let mag = (n % 2) + 2 * ((j1 + (n + 1) % 2) / 2);
    let sign = if j.is_multiple_of(2) { 1 } else { -1 };
    (n, sign * mag as i64)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn radial(n: usize, m: usize, rho: f64) -> f64 {
    (0..=(n - m) / 2)
        .map(|k| {
            let c = factorial(n - k) / (factorial(k) * factorial((n + m) / 2 - k) * factorial((n - m) / 2 - k));
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sign * c * rho.powi((n - 2 * k) as i32)
        })
        .sum()
}

/// Noll-normalised Zernike polynomial `Z_j` at polar pupil coordinates.
/// `theta` is measured from the slow-scan axis.
pub fn zernike(j: usize, rho: f64, theta: f64) -> f64 {
    let (n, m) = noll_to_nm(j);
    let ma = m.unsigned_abs() as usize;
    let r = radial(n, ma, rho);
    if m == 0 {
        ((n + 1) as f64).sqrt() * r
    } else {
        let norm = (2.0 * (n + 1) as f64).sqrt();
        if m > 0 {
            norm * r * (ma as f64 * theta).cos()
        } else {
            norm * r * (ma as f64 * theta).sin()
        }
    }
}

/// Elliptical pupil in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pupil {
    pub centre: (f64, f64),
    pub semi_axes: (f64, f64),
}

impl Pupil {
    /// Ellipse circumscribing the bounding box of the good pixels with the
    /// box's aspect ratio.
    pub fn bounding(mask: &Array2<bool>) -> Result<Self> {
        let mut lo = (usize::MAX, usize::MAX);
        let mut hi = (0usize, 0usize);
        for ((i, j), &m) in mask.indexed_iter() {
            if m {
                lo = (lo.0.min(i), lo.1.min(j));
                hi = (hi.0.max(i), hi.1.max(j));
            }
        }
        if lo.0 == usize::MAX {
            return Err(Error::invalid("aperture has no good pixels"));
        }
        let half = ((hi.0 - lo.0) as f64 / 2.0, (hi.1 - lo.1) as f64 / 2.0);
        if half.0 == 0.0 || half.1 == 0.0 {
            return Err(Error::invalid("aperture must span more than one pixel along each axis"));
        }
        Ok(Self {
            centre: ((hi.0 + lo.0) as f64 / 2.0, (hi.1 + lo.1) as f64 / 2.0),
            semi_axes: (std::f64::consts::SQRT_2 * half.0, std::f64::consts::SQRT_2 * half.1),
        })
    }

    /// Pupil of a fully good frame of this shape.
    pub fn full(shape: (usize, usize)) -> Result<Self> {
        Self::bounding(&Array2::from_elem(shape, true))
    }

    /// `(rho, theta)` of pixel `(i, j)`.
    pub fn polar(&self, i: f64, j: f64) -> (f64, f64) {
        let x = (i - self.centre.0) / self.semi_axes.0;
        let y = (j - self.centre.1) / self.semi_axes.1;
        (x.hypot(y), y.atan2(x))
    }

    /// `Z_j` sampled on every pixel of `shape`.
    pub fn sample(&self, j: usize, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |(a, b)| {
            let (rho, theta) = self.polar(a as f64, b as f64);
            zernike(j, rho, theta)
        })
    }
}

/// Phase map built from `(Noll index, radians)` terms.
pub fn zernike_phase(terms: &[(usize, f64)], pupil: &Pupil, shape: (usize, usize)) -> Array2<f64> {
    let mut phi = Array2::zeros(shape);
    for &(j, a) in terms {
        phi.scaled_add(a, &pupil.sample(j, shape));
    }
    phi
}

#[derive(Debug, Clone)]
pub struct ZernikeFit {
    /// Coefficients on the orthonormalised basis, `(Noll index, radians)`.
    pub coefficients: Vec<(usize, f64)>,
    /// Coefficients on the raw Noll polynomials over the same support.
    pub raw_coefficients: Vec<(usize, f64)>,
    /// Orthonormal basis samples; zero outside the support.
    pub basis: Vec<Array2<f64>>,
    pub support: Array2<bool>,
    pub pupil: Pupil,
    pub residual_rms: f64,
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Least-squares Zernike decomposition of `phase` over `support`, for Noll
/// indices `1..=max_noll`. The inner product is the mean over the support.
/// `pupil` defaults to the ellipse bounding the support.
#[allow(clippy::needless_range_loop)]
pub fn zernike_fit(phase: &Array2<f64>, support: &Array2<bool>, max_noll: usize, pupil: Option<Pupil>) -> Result<ZernikeFit> {
    if phase.dim() != support.dim() {
        return Err(Error::shape("aperture", phase.dim(), support.dim()));
    }
    if max_noll == 0 {
        return Err(Error::invalid("max Noll index must be >= 1"));
    }
    let pixels: Vec<(usize, usize)> = support.indexed_iter().filter(|(_, &m)| m).map(|(p, _)| p).collect();
    if pixels.len() < max_noll {
        return Err(Error::invalid(format!(
            "{} aperture pixels cannot determine {max_noll} coefficients",
            pixels.len()
        )));
    }
    let pupil = match pupil {
        Some(p) => p,
        None => Pupil::bounding(support)?,
    };
    let values: Vec<f64> = pixels.iter().map(|&p| phase[p]).collect();

    // Modified Gram-Schmidt with one reorthogonalisation pass.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(max_noll);
    let mut r = vec![vec![0.0; max_noll]; max_noll];
    for k in 0..max_noll {
        let mut v: Vec<f64> = pixels
            .iter()
            .map(|&(a, b)| {
                let (rho, theta) = pupil.polar(a as f64, b as f64);
                zernike(k + 1, rho, theta)
            })
            .collect();
        let norm0 = inner(&v, &v).sqrt();
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = inner(qi, &v);
                r[i][k] += c;
                for (x, y) in v.iter_mut().zip(qi) {
                    *x -= c * y;
                }
            }
        }
        let norm = inner(&v, &v).sqrt();
        if !(norm > 1e-9 * norm0.max(1e-300)) {
            return Err(Error::invalid(format!(
                "Zernike basis is rank deficient on this aperture at Noll index {}",
                k + 1
            )));
        }
        r[k][k] = norm;
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }

    let coeffs: Vec<f64> = q.iter().map(|qk| inner(qk, &values)).collect();
    // Back-substitution R a = c.
    let mut raw = vec![0.0; max_noll];
    for k in (0..max_noll).rev() {
        let s: f64 = ((k + 1)..max_noll).map(|i| r[k][i] * raw[i]).sum();
        raw[k] = (coeffs[k] - s) / r[k][k];
    }
    let mut resid = values.clone();
    for (c, qk) in coeffs.iter().zip(&q) {
        for (x, y) in resid.iter_mut().zip(qk) {
            *x -= c * y;
        }
    }
    let residual_rms = inner(&resid, &resid).sqrt();

    let basis = q
        .iter()
        .map(|qk| {
            let mut a = Array2::zeros(phase.dim());
            for (&p, &v) in pixels.iter().zip(qk) {
                a[p] = v;
            }
            a
        })
        .collect();
    Ok(ZernikeFit {
        coefficients: coeffs.iter().enumerate().map(|(k, &c)| (k + 1, c)).collect(),
        raw_coefficients: raw.iter().enumerate().map(|(k, &c)| (k + 1, c)).collect(),
        basis,
        support: support.clone(),
        pupil,
        residual_rms,
    })
}
