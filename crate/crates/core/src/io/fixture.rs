//! Portable fixture directories.
//!
//! A fixture holds a `meta` text file of `key = value` lines (SI units) and
//! one raw little-endian binary per array. Array lines read
//! `name = <file> <f64|u8> <dim> <dim> ...`:
//!
//! ```text
//! wavelength = 1e-10
//! distance = 1
//! x_pixel_size = 5.5e-5
//! y_pixel_size = 5.5e-5
//! frames = frames.bin f64 25 128 128
//! basis_vectors = basis_vectors.bin f64 25 2 3
//! translations = translations.bin f64 25 3
//! good_frames = good_frames.bin u8 25
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::model::ScanData;

const META: &str = "meta";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F64,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

struct ArrayEntry {
    file: String,
    dtype: Dtype,
    dims: Vec<usize>,
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::Fixture(msg.into())
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| malformed(format!("meta line {}: expected key = value", k + 1)))?;
        if out.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
            return Err(malformed(format!("meta line {}: duplicate key {}", k + 1, key.trim())));
        }
    }
    Ok(out)
}

fn scalar(meta: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    let v = meta.get(key).ok_or_else(|| malformed(format!("meta is missing {key}")))?;
    v.parse().map_err(|_| malformed(format!("{key} = {v} is not a number")))
}

fn array_entry(meta: &BTreeMap<String, String>, key: &str) -> Result<ArrayEntry> {
    let v = meta.get(key).ok_or_else(|| malformed(format!("meta is missing {key}")))?;
    let mut parts = v.split_whitespace();
    let file = parts.next().ok_or_else(|| malformed(format!("{key}: no file name")))?.to_string();
    if file.contains('/') || file.contains('\\') || file == META {
        return Err(malformed(format!("{key}: file {file:?} must be a plain name")));
    }
    let dtype = match parts.next() {
        Some("f64") => Dtype::F64,
        Some("u8") => Dtype::U8,
        other => return Err(malformed(format!("{key}: unknown dtype {other:?}"))),
    };
    let dims = parts
        .map(|d| d.parse::<usize>().map_err(|_| malformed(format!("{key}: bad dimension {d:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArrayEntry { file, dtype, dims })
}

fn read_payload(dir: &Path, key: &str, e: &ArrayEntry, expected: Dtype, ndim: usize) -> Result<Vec<u8>> {
    if e.dtype != expected || e.dims.len() != ndim {
        return Err(malformed(format!("{key}: expected {ndim}-d {expected:?}, found {}-d {:?}", e.dims.len(), e.dtype)));
    }
    let bytes = fs::read(dir.join(&e.file))?;
    let want = e.dims.iter().product::<usize>() * e.dtype.size();
    if bytes.len() != want {
        return Err(malformed(format!("{}: payload has {} bytes, expected {want}", e.file, bytes.len())));
    }
    Ok(bytes)
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
}

fn f64_bytes<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|v| v.to_le_bytes()).collect()
}

fn dims_line(file: &str, dtype: &str, dims: &[usize]) -> String {
    let d: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    format!("{file} {dtype} {}", d.join(" "))
}

pub fn save_fixture(scan: &ScanData, dir: &Path) -> Result<()> {
    scan.ensure_valid()?;
    fs::create_dir_all(dir)?;
    let n = scan.n_frames();
    let (ss, fs_) = scan.frame_shape();
    // `{:?}` prints the shortest representation that parses back exactly.
    let meta = [
        format!("wavelength = {:?}", scan.wavelength),
        format!("distance = {:?}", scan.distance),
        format!("x_pixel_size = {:?}", scan.x_pixel_size),
        format!("y_pixel_size = {:?}", scan.y_pixel_size),
        format!("frames = {}", dims_line("frames.bin", "f64", &[n, ss, fs_])),
        format!("basis_vectors = {}", dims_line("basis_vectors.bin", "f64", &[n, 2, 3])),
        format!("translations = {}", dims_line("translations.bin", "f64", &[n, 3])),
        format!("good_frames = {}", dims_line("good_frames.bin", "u8", &[n])),
    ];
    fs::write(dir.join("frames.bin"), f64_bytes(scan.frames.iter()))?;
    fs::write(dir.join("basis_vectors.bin"), f64_bytes(scan.basis_vectors.iter()))?;
    fs::write(dir.join("translations.bin"), f64_bytes(scan.translations.iter()))?;
    fs::write(dir.join("good_frames.bin"), scan.good_frames.iter().map(|&g| u8::from(g)).collect::<Vec<u8>>())?;
    fs::write(dir.join(META), meta.join("\n") + "\n")?;
    Ok(())
}

pub fn load_fixture(dir: &Path) -> Result<ScanData> {
    let meta_path = dir.join(META);
    if !meta_path.exists() {
        return Err(Error::NotFound(meta_path));
    }
    let meta = parse_meta(&fs::read_to_string(&meta_path)?)?;

    let e = array_entry(&meta, "frames")?;
    let payload = read_payload(dir, "frames", &e, Dtype::F64, 3)?;
    let n = e.dims[0];
    let frames = Array3::from_shape_vec((n, e.dims[1], e.dims[2]), f64s(&payload)).expect("checked size");

    let e = array_entry(&meta, "basis_vectors")?;
    let basis = read_payload(dir, "basis_vectors", &e, Dtype::F64, 3)?;
    if e.dims != [n, 2, 3] {
        return Err(Error::shape("basis_vectors", [n, 2, 3], &e.dims));
    }
    let basis_vectors = Array3::from_shape_vec((n, 2, 3), f64s(&basis)).expect("checked size");

    let e = array_entry(&meta, "translations")?;
    let t = read_payload(dir, "translations", &e, Dtype::F64, 2)?;
    if e.dims != [n, 3] {
        return Err(Error::shape("translations", [n, 3], &e.dims));
    }
    let translations = Array2::from_shape_vec((n, 3), f64s(&t)).expect("checked size");

    let good_frames = if meta.contains_key("good_frames") {
        let e = array_entry(&meta, "good_frames")?;
        let g = read_payload(dir, "good_frames", &e, Dtype::U8, 1)?;
        if e.dims != [n] {
            return Err(Error::shape("good_frames", [n], &e.dims));
        }
        g.iter().map(|&b| b != 0).collect()
    } else {
        vec![true; n]
    };

    let scan = ScanData {
        frames,
        wavelength: scalar(&meta, "wavelength")?,
        distance: scalar(&meta, "distance")?,
        x_pixel_size: scalar(&meta, "x_pixel_size")?,
        y_pixel_size: scalar(&meta, "y_pixel_size")?,
        basis_vectors,
        translations,
        good_frames,
    };
    scan.ensure_valid()?;
    Ok(scan)
}
