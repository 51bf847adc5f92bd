use ndarray::{Array2, Axis, Zip};
use rayon::prelude::*;

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as usize;
    let k: Vec<f64> = (0..=2 * r)
        .map(|t| {
            let x = t as f64 - r as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Zero-padded 1-D convolution along `axis`.
fn convolve_axis(a: &Array2<f64>, k: &[f64], axis: usize) -> Array2<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = Array2::zeros(a.dim());
    let lanes_in = a.lanes(Axis(axis));
    let lanes: Vec<_> = lanes_in.into_iter().collect();
    let mut out_lanes: Vec<_> = out.lanes_mut(Axis(axis)).into_iter().collect();
    out_lanes.par_iter_mut().zip(lanes.par_iter()).for_each(|(o, l)| {
        let n = l.len() as isize;
        for p in 0..n {
            let mut s = 0.0;
            for (t, &kv) in k.iter().enumerate() {
                let q = p + t as isize - r;
                if q >= 0 && q < n {
                    s += kv * l[q as usize];
                }
            }
            o[p as usize] = s;
        }
    });
    out
}

fn convolve(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let k = kernel(sigma);
    convolve_axis(&convolve_axis(a, &k, 0), &k, 1)
}

/// Gaussian smoothing of the good pixels of `values`, renormalised by the
/// smoothed mask so that masked pixels neither contribute nor pull values
/// towards zero. Pixels outside the mask keep their input value.
pub fn masked_gaussian_filter(values: &Array2<f64>, mask: &Array2<bool>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return values.clone();
    }
    let weight = mask.mapv(|m| if m { 1.0 } else { 0.0 });
    let num = convolve(&(values * &weight), sigma);
    let den = convolve(&weight, sigma);
    let mut out = values.clone();
    Zip::from(&mut out).and(mask).and(&num).and(&den).for_each(|o, &m, &n, &d| {
        if m && d > 0.0 {
            *o = n / d;
        }
    });
    out
}

/// Gaussian smoothing with the kernel renormalised at the array edges.
pub fn gaussian_filter(values: &Array2<f64>, sigma: f64) -> Array2<f64> {
    masked_gaussian_filter(values, &Array2::from_elem(values.dim(), true), sigma)
}
