//! Pixel-map uncertainty from two independent halves of the data.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{PixelMap, PixelTranslations, ReferenceImage};
use crate::recon::{update_pixel_map_with, ReconInput, SearchWindow, UpdateOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` bin edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Symmetric histogram over `[-r, r]` with `r` the largest magnitude.
    pub fn symmetric(values: &[f64], bins: usize) -> Self {
        let r = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let r = if r > 0.0 { r } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| -r + 2.0 * r * k as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let k = (((v + r) / (2.0 * r)) * bins as f64).floor() as isize;
            counts[k.clamp(0, bins as isize - 1) as usize] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone)]
pub struct SplitHalf {
    pub map_a: PixelMap,
    pub map_b: PixelMap,
    /// Pixels where both halves had samples.
    pub compared: Array2<bool>,
    /// Histograms of `u_a - u_b` for the ss and fs components.
    pub histogram: [Histogram; 2],
    /// Per-component `1.4826 MAD / sqrt(2)` of the differences.
    pub sigma_components: [f64; 2],
    /// Same statistic over both components pooled.
    pub sigma: f64,
}

pub const HISTOGRAM_BINS: usize = 101;

/// Assigns every `(frame, ss, fs)` sample to half A or B. Frame `n` draws
/// from ChaCha8 stream `n` in row-major pixel order, so the split depends only
/// on the seed and the sample's indices.
pub fn split_assignment(seed: u64, n_frames: usize, shape: (usize, usize)) -> Vec<Array2<bool>> {
    (0..n_frames)
        .map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            Array2::from_shape_simple_fn(shape, || rng.next_u64() >> 63 == 1)
        })
        .collect()
}

/// Updates `u` once from each half against the shared full-data reference
/// and summarises the differences.
pub fn split_half_recon(
    input: &ReconInput,
    reference: &ReferenceImage,
    u: &PixelMap,
    t: &PixelTranslations,
    window: &SearchWindow,
    opts: &UpdateOptions,
    seed: u64,
) -> Result<SplitHalf> {
    let shape = input.shape();
    if u.shape() != shape {
        return Err(Error::shape("pixel map", shape, u.shape()));
    }
    let in_a = split_assignment(seed, input.scan.n_frames(), shape);
    let half_a = |n: usize, i: usize, j: usize| in_a[n][[i, j]];
    let half_b = |n: usize, i: usize, j: usize| !in_a[n][[i, j]];
    let map_a = update_pixel_map_with(input, reference, u, t, window, opts, Some(&half_a))?.pixel_map;
    let map_b = update_pixel_map_with(input, reference, u, t, window, opts, Some(&half_b))?.pixel_map;

    let compared = Array2::from_shape_fn(shape, |(i, j)| {
        input.mask[[i, j]] && {
            let na = input.good_frames.iter().filter(|&&n| in_a[n][[i, j]]).count();
            na > 0 && na < input.good_frames.len()
        }
    });
    let mut diffs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for ((i, j), &c) in compared.indexed_iter() {
        if c {
            for (k, d) in diffs.iter_mut().enumerate() {
                d.push(map_a.u[[k, i, j]] - map_b.u[[k, i, j]]);
            }
        }
    }
    if diffs[0].is_empty() {
        return Err(Error::invalid("no pixel has samples in both halves"));
    }
    let pooled: Vec<f64> = diffs[0].iter().chain(diffs[1].iter()).copied().collect();
    let sigma_components = [robust_sigma(&diffs[0]), robust_sigma(&diffs[1])];
    let histogram = [Histogram::symmetric(&diffs[0], HISTOGRAM_BINS), Histogram::symmetric(&diffs[1], HISTOGRAM_BINS)];
    Ok(SplitHalf { map_a, map_b, compared, histogram, sigma_components, sigma: robust_sigma(&pooled) })
}

/// `1.4826 * MAD / sqrt(2)`.
fn robust_sigma(values: &[f64]) -> f64 {
    let med = median(values.to_vec());
    let mad = median(values.iter().map(|v| (v - med).abs()).collect());
    1.4826 * mad / std::f64::consts::SQRT_2
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_is_seeded_and_balanced() {
        let a = split_assignment(7, 3, (20, 30));
        assert_eq!(a, split_assignment(7, 3, (20, 30)));
        assert_ne!(a, split_assignment(8, 3, (20, 30)));
        assert_ne!(a[0], a[1]);
        let ones = a.iter().flat_map(|m| m.iter()).filter(|&&b| b).count();
        assert!((ones as f64 / 1800.0 - 0.5).abs() < 0.05);
        // Independent of how many frames are requested.
        assert_eq!(split_assignment(7, 1, (20, 30))[0], a[0]);
    }

    #[test]
    fn robust_sigma_of_gaussian_like_sample() {
        assert_eq!(robust_sigma(&[0.0; 5]), 0.0);
        let v = [-2.0, -1.0, 0.0, 1.0, 2.0];
        assert!((robust_sigma(&v) - 1.4826 / std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::symmetric(&[-1.0, 0.0, 0.2, 1.0], 4);
        assert_eq!(h.edges, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(h.counts, vec![1, 0, 2, 1]);
    }
}
