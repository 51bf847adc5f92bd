//! Binary payloads shared with the frontend.
//!
//! Arrays travel as little-endian bytes: `u32` rank, one `u32` per
//! dimension, `f32` minimum, `f32` maximum, then the `f32` values in
//! row-major order. Minimum and maximum ignore non-finite values and are both
//! zero when there are none.
//!
//! Masks travel as `u32` rows, `u32` columns, then one bit per pixel in
//! row-major order, least significant bit first, 1 meaning good.

use ndarray::{Array2, ArrayD};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedArray {
    pub shape: Vec<usize>,
    pub min: f32,
    pub max: f32,
    pub values: Vec<f32>,
}

pub fn encode_array(a: &ArrayD<f64>) -> Vec<u8> {
    let values: Vec<f32> = a.iter().map(|&v| v as f32).collect();
    let (min, max) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<(f32, f32)>, &v| Some(acc.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v)))))
        .unwrap_or((0.0, 0.0));
    let mut out = Vec::with_capacity(4 * (3 + a.ndim() + values.len()));
    out.extend((a.ndim() as u32).to_le_bytes());
    for &d in a.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    out.extend(min.to_le_bytes());
    out.extend(max.to_le_bytes());
    for v in values {
        out.extend(v.to_le_bytes());
    }
    out
}

fn words(bytes: &[u8]) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(|c| c.try_into().expect("4 bytes"))
}

pub fn decode_array(bytes: &[u8]) -> Option<DecodedArray> {
    let mut w = words(bytes);
    let rank = u32::from_le_bytes(w.next()?) as usize;
    let shape: Vec<usize> = (0..rank).map(|_| w.next().map(|b| u32::from_le_bytes(b) as usize)).collect::<Option<_>>()?;
    let min = f32::from_le_bytes(w.next()?);
    let max = f32::from_le_bytes(w.next()?);
    let values: Vec<f32> = w.map(f32::from_le_bytes).collect();
    (bytes.len().is_multiple_of(4) && values.len() == shape.iter().product::<usize>()).then_some(DecodedArray {
        shape,
        min,
        max,
        values,
    })
}

pub fn encode_mask(mask: &Array2<bool>) -> Vec<u8> {
    let (ss, fs) = mask.dim();
    let mut out = Vec::with_capacity(8 + (ss * fs).div_ceil(8));
    out.extend((ss as u32).to_le_bytes());
    out.extend((fs as u32).to_le_bytes());
    let mut bits = vec![0u8; (ss * fs).div_ceil(8)];
    for (p, &good) in mask.iter().enumerate() {
        if good {
            bits[p / 8] |= 1 << (p % 8);
        }
    }
    out.extend(bits);
    out
}

/// Inverse of [`encode_mask`]; `Err` describes the malformed part.
pub fn decode_mask(bytes: &[u8]) -> Result<Array2<bool>, String> {
    if bytes.len() < 8 {
        return Err(format!("mask payload has {} bytes, header needs 8", bytes.len()));
    }
    let ss = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let fs = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let bits = &bytes[8..];
    if bits.len() != (ss * fs).div_ceil(8) {
        return Err(format!("mask of {ss}x{fs} needs {} bytes of bits, found {}", (ss * fs).div_ceil(8), bits.len()));
    }
    Ok(Array2::from_shape_fn((ss, fs), |(i, j)| {
        let p = i * fs + j;
        bits[p / 8] >> (p % 8) & 1 == 1
    }))
}
