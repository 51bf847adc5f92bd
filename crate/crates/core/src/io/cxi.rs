//! CXI (HDF5) scan files.

use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use hdf5::{File, Group, H5Type};
use ndarray::{s, Array1, Array2, Array3, ArrayD, IxDyn};

use crate::error::{Error, Result};
use crate::model::{Roi, ScanData};

/// Planck constant times the speed of light, J m.
const HC: f64 = 1.986_445_857_148_928_6e-25;
const ELECTRON_VOLT: f64 = 1.602_176_634e-19;

/// Dataset locations inside a scan file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CxiPaths {
    pub data: String,
    pub translation: String,
    pub basis_vectors: String,
    pub distance: String,
    pub x_pixel_size: String,
    pub y_pixel_size: String,
    pub wavelength: String,
    /// Photon energy, read only when the wavelength is absent.
    pub energy: String,
    pub good_frames: String,
    pub mask: String,
    pub whitefield: String,
    pub output_group: String,
}

impl Default for CxiPaths {
    fn default() -> Self {
        let det = "/entry_1/instrument_1/detector_1";
        Self {
            data: "/entry_1/data_1/data".into(),
            translation: "/entry_1/sample_1/geometry/translation".into(),
            basis_vectors: format!("{det}/basis_vectors"),
            distance: format!("{det}/distance"),
            x_pixel_size: format!("{det}/x_pixel_size"),
            y_pixel_size: format!("{det}/y_pixel_size"),
            wavelength: "/entry_1/instrument_1/source_1/wavelength".into(),
            energy: "/entry_1/instrument_1/source_1/energy".into(),
            good_frames: "/speckle_tracking/good_frames".into(),
            mask: "/speckle_tracking/mask".into(),
            whitefield: "/speckle_tracking/whitefield".into(),
            output_group: "/speckle_tracking".into(),
        }
    }
}

impl CxiPaths {
    /// Defaults with the speckle-tracking datasets moved under `group`.
    pub fn with_output_group(group: &str) -> Result<Self> {
        let group = group.trim_end_matches('/');
        if !group.starts_with('/') || group.len() < 2 {
            return Err(Error::invalid(format!("output group {group:?} must be an absolute path")));
        }
        Ok(Self {
            good_frames: format!("{group}/good_frames"),
            mask: format!("{group}/mask"),
            whitefield: format!("{group}/whitefield"),
            output_group: group.to_string(),
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            &self.data,
            &self.translation,
            &self.basis_vectors,
            &self.distance,
            &self.x_pixel_size,
            &self.y_pixel_size,
            &self.wavelength,
            &self.energy,
            &self.good_frames,
            &self.mask,
            &self.whitefield,
            &self.output_group,
        ];
        match all.iter().find(|p| !p.starts_with('/')) {
            Some(p) => Err(Error::invalid(format!("dataset path {p:?} is not absolute"))),
            None => Ok(()),
        }
    }
}

/// A stored dataset: floats, integers or flags (flags are stored as `u8`).
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(ArrayD<f64>),
    Int(ArrayD<i64>),
    Bool(ArrayD<bool>),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Float(a) => a.shape(),
            Value::Int(a) => a.shape(),
            Value::Bool(a) => a.shape(),
        }
    }

    /// Values as floats (flags become 0/1).
    pub fn to_f64(&self) -> ArrayD<f64> {
        match self {
            Value::Float(a) => a.clone(),
            Value::Int(a) => a.mapv(|v| v as f64),
            Value::Bool(a) => a.mapv(|v| if v { 1.0 } else { 0.0 }),
        }
    }
}

macro_rules! value_from {
    ($variant:ident, $t:ty, $($d:ty),*) => {$(
        impl From<ndarray::Array<$t, $d>> for Value {
            fn from(a: ndarray::Array<$t, $d>) -> Self {
                Value::$variant(a.into_dyn())
            }
        }
    )*};
}
value_from!(Float, f64, ndarray::Ix0, ndarray::Ix1, ndarray::Ix2, ndarray::Ix3, IxDyn);
value_from!(Int, i64, ndarray::Ix1, ndarray::Ix2, IxDyn);
value_from!(Bool, bool, ndarray::Ix1, ndarray::Ix2, IxDyn);

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(ndarray::arr0(v).into_dyn())
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Float(Array1::from(v).into_dyn())
    }
}

impl From<Vec<bool>> for Value {
    fn from(v: Vec<bool>) -> Self {
        Value::Bool(Array1::from(v).into_dyn())
    }
}

/// Everything about a scan except the frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanHeader {
    pub n_frames: usize,
    pub frame_shape: (usize, usize),
    pub wavelength: f64,
    pub distance: f64,
    pub x_pixel_size: f64,
    pub y_pixel_size: f64,
    pub basis_vectors: Array3<f64>,
    pub translations: Array2<f64>,
    pub good_frames: Vec<bool>,
}

/// HDF5 refuses to open a file read-write while a read-only handle to it is
/// open in the same process, so handles are taken under a process-wide lock:
/// shared for reading, exclusive for writing.
static ACCESS: RwLock<()> = RwLock::new(());

/// An open file plus its share of [`ACCESS`]; the file closes first.
struct Handle<G> {
    file: File,
    _lock: G,
}

impl<G> std::ops::Deref for Handle<G> {
    type Target = File;
    fn deref(&self) -> &File {
        &self.file
    }
}

fn open_read(path: &Path) -> Result<Handle<RwLockReadGuard<'static, ()>>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let lock = ACCESS.read().unwrap_or_else(|e| e.into_inner());
    Ok(Handle { file: File::open(path)?, _lock: lock })
}

fn open_write(path: &Path) -> Result<Handle<RwLockWriteGuard<'static, ()>>> {
    let lock = ACCESS.write().unwrap_or_else(|e| e.into_inner());
    Ok(Handle { file: open_rw(path)?, _lock: lock })
}

fn open_rw(path: &Path) -> Result<File> {
    let meta = std::fs::metadata(path).map_err(|_| Error::NotFound(path.to_path_buf()))?;
    // Permission bits are checked explicitly so that privileged users get the
    // same answer as everyone else.
    if meta.permissions().readonly() {
        return Err(Error::ReadOnlyFile(path.to_path_buf()));
    }
    File::open_rw(path).map_err(|e| match std::fs::OpenOptions::new().write(true).open(path) {
        Err(_) => Error::ReadOnlyFile(path.to_path_buf()),
        Ok(_) => Error::Hdf5(e),
    })
}

fn exists(file: &File, path: &str) -> bool {
    let mut prefix = String::new();
    for part in path.split('/').filter(|p| !p.is_empty()) {
        prefix.push('/');
        prefix.push_str(part);
        if !file.link_exists(&prefix) {
            return false;
        }
    }
    !prefix.is_empty()
}

fn read_f64(file: &File, path: &str) -> Result<Option<ArrayD<f64>>> {
    if !exists(file, path) {
        return Ok(None);
    }
    Ok(Some(file.dataset(path)?.read_dyn::<f64>()?))
}

fn require_f64(file: &File, path: &str) -> Result<ArrayD<f64>> {
    read_f64(file, path)?.ok_or_else(|| Error::MissingDataset(path.to_string()))
}

/// First element of a scalar-like dataset; warns when a per-frame series varies.
fn first(a: &ArrayD<f64>, path: &str) -> Result<f64> {
    let v = *a.iter().next().ok_or_else(|| Error::shape(path, "at least one value", a.shape()))?;
    if a.iter().any(|&x| x != v) {
        log::warn!("{path} varies across frames, using the first value");
    }
    Ok(v)
}

fn frame_count(shape: &[usize], path: &str) -> Result<(usize, (usize, usize))> {
    match *shape {
        [n, ss, fs] => Ok((n, (ss, fs))),
        [ss, fs] => Ok((1, (ss, fs))),
        _ => Err(Error::shape(path, "[N, SS, FS]", shape)),
    }
}

/// Reads all scan metadata without touching the frames.
pub fn read_header(path: &Path, paths: &CxiPaths) -> Result<ScanHeader> {
    paths.validate()?;
    let file = open_read(path)?;
    header_from(&file, paths)
}

fn header_from(file: &File, paths: &CxiPaths) -> Result<ScanHeader> {
    if !exists(file, &paths.data) {
        return Err(Error::MissingDataset(paths.data.clone()));
    }
    let (n, frame_shape) = frame_count(&file.dataset(&paths.data)?.shape(), &paths.data)?;

    let translations = require_f64(file, &paths.translation)?;
    let translations = match translations.shape() {
        [m, 3] if *m == n => translations.into_dimensionality::<ndarray::Ix2>().expect("2-d"),
        [m, 2] if *m == n => {
            let t = translations.into_dimensionality::<ndarray::Ix2>().expect("2-d");
            let mut out = Array2::zeros((n, 3));
            out.slice_mut(s![.., ..2]).assign(&t);
            out
        }
        [3] if n == 1 => translations.into_shape((1, 3)).expect("3 values"),
        other => return Err(Error::shape(&paths.translation, [n, 3], other)),
    };

    let distance = first(&require_f64(file, &paths.distance)?, &paths.distance)?;
    if !(1e-3..=100.0).contains(&distance) {
        log::warn!("detector distance {distance} m is outside [1e-3, 100] m; check the units");
    }
    let x_pixel_size = first(&require_f64(file, &paths.x_pixel_size)?, &paths.x_pixel_size)?;
    let y_pixel_size = first(&require_f64(file, &paths.y_pixel_size)?, &paths.y_pixel_size)?;

    let wavelength = match read_f64(file, &paths.wavelength)? {
        Some(w) => first(&w, &paths.wavelength)?,
        None => match read_f64(file, &paths.energy)? {
            Some(e) => wavelength_from_energy(first(&e, &paths.energy)?)?,
            None => return Err(Error::MissingDataset(paths.wavelength.clone())),
        },
    };

    let basis_vectors = match read_f64(file, &paths.basis_vectors)? {
        None => ScanData::aligned_basis(n, x_pixel_size, y_pixel_size),
        Some(b) => match b.shape() {
            [m, 2, 3] if *m == n => b.into_dimensionality().expect("3-d"),
            [2, 3] => {
                let b = b.into_dimensionality::<ndarray::Ix2>().expect("2-d");
                Array3::from_shape_fn((n, 2, 3), |(_, a, c)| b[[a, c]])
            }
            other => return Err(Error::shape(&paths.basis_vectors, [n, 2, 3], other)),
        },
    };

    let good_frames = match read_f64(file, &paths.good_frames)? {
        None => vec![true; n],
        Some(g) => good_frames_from(&g, n, &paths.good_frames)?,
    };

    Ok(ScanHeader {
        n_frames: n,
        frame_shape,
        wavelength,
        distance,
        x_pixel_size,
        y_pixel_size,
        basis_vectors,
        translations,
        good_frames,
    })
}

/// `lambda = h c / E`. Energies above 1 are taken as eV, otherwise as joules.
pub fn wavelength_from_energy(energy: f64) -> Result<f64> {
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::invalid(format!("photon energy {energy} must be > 0")));
    }
    let joules = if energy > 1.0 { energy * ELECTRON_VOLT } else { energy };
    Ok(HC / joules)
}

/// A length-`n` flag array, or a list of good frame indices.
fn good_frames_from(g: &ArrayD<f64>, n: usize, path: &str) -> Result<Vec<bool>> {
    let flags = g.len() == n && g.iter().all(|&v| v == 0.0 || v == 1.0);
    if flags {
        return Ok(g.iter().map(|&v| v != 0.0).collect());
    }
    let mut out = vec![false; n];
    for &v in g.iter() {
        if !(v >= 0.0 && v.fract() == 0.0 && (v as usize) < n) {
            return Err(Error::shape(path, format!("{n} flags or frame indices below {n}"), g.shape()));
        }
        out[v as usize] = true;
    }
    Ok(out)
}

/// Loads a scan, optionally cropped to `roi`.
pub fn load_scan(path: &Path, paths: &CxiPaths, roi: Option<&Roi>) -> Result<ScanData> {
    paths.validate()?;
    let file = open_read(path)?;
    let h = header_from(&file, paths)?;
    let dset = file.dataset(&paths.data)?;
    let frames: Array3<f64> = match (roi, dset.ndim()) {
        (None, 3) => dset.read()?,
        (None, _) => dset.read_2d::<f64>()?.insert_axis(ndarray::Axis(0)),
        (Some(r), nd) => {
            Roi::new(r.ss_min, r.ss_max, r.fs_min, r.fs_max, h.frame_shape)?;
            if nd == 3 {
                dset.read_slice(s![.., r.ss_min..r.ss_max, r.fs_min..r.fs_max])?
            } else {
                dset.read_slice_2d::<f64, _>(s![r.ss_min..r.ss_max, r.fs_min..r.fs_max])?
                    .insert_axis(ndarray::Axis(0))
            }
        }
    };
    Ok(ScanData {
        frames,
        wavelength: h.wavelength,
        distance: h.distance,
        x_pixel_size: h.x_pixel_size,
        y_pixel_size: h.y_pixel_size,
        basis_vectors: h.basis_vectors,
        translations: h.translations,
        good_frames: h.good_frames,
    })
}

/// Reads one frame without loading the stack.
pub fn read_frame(path: &Path, paths: &CxiPaths, n: usize) -> Result<Array2<f64>> {
    let file = open_read(path)?;
    if !exists(&file, &paths.data) {
        return Err(Error::MissingDataset(paths.data.clone()));
    }
    let dset = file.dataset(&paths.data)?;
    let (count, _) = frame_count(&dset.shape(), &paths.data)?;
    if n >= count {
        return Err(Error::invalid(format!("frame {n} out of range for {count} frames")));
    }
    Ok(if dset.ndim() == 3 { dset.read_slice_2d(s![n, .., ..])? } else { dset.read_2d()? })
}

/// Reads `dataset` if present.
pub fn read_dataset(path: &Path, dataset: &str) -> Result<Option<Value>> {
    let file = open_read(path)?;
    if !exists(&file, dataset) {
        return Ok(None);
    }
    let d = file.dataset(dataset)?;
    use hdf5::types::TypeDescriptor as T;
    Ok(Some(match d.dtype()?.to_descriptor()? {
        T::Float(_) => Value::Float(d.read_dyn()?),
        T::Boolean => Value::Bool(d.read_dyn()?),
        T::Integer(_) | T::Unsigned(_) => Value::Int(d.read_dyn()?),
        other => return Err(Error::invalid(format!("{dataset} has unsupported type {other:?}"))),
    }))
}

pub fn read_f64_dataset(path: &Path, dataset: &str) -> Result<Option<ArrayD<f64>>> {
    Ok(read_dataset(path, dataset)?.map(|v| v.to_f64()))
}

fn ensure_group(file: &File, group: &str) -> Result<Group> {
    let mut g = file.group("/")?;
    for part in group.split('/').filter(|p| !p.is_empty()) {
        g = if g.link_exists(part) {
            g.group(part).map_err(|_| Error::invalid(format!("{part:?} in {group} is not a group")))?
        } else {
            g.create_group(part)?
        };
    }
    Ok(g)
}

fn put<T: H5Type>(g: &Group, name: &str, a: &ArrayD<T>) -> Result<()> {
    if g.link_exists(name) {
        g.unlink(name)?;
    }
    g.new_dataset_builder().with_data(a.view()).create(name)?;
    Ok(())
}

fn write_into(file: &File, group: &str, name: &str, value: &Value) -> Result<()> {
    if name.is_empty() || name.contains('/') {
        return Err(Error::invalid(format!("dataset name {name:?} must be a plain name")));
    }
    let g = ensure_group(file, group)?;
    match value {
        Value::Float(a) => put(&g, name, a),
        Value::Int(a) => put(&g, name, a),
        Value::Bool(a) => put(&g, name, &a.mapv(u8::from)),
    }
}

/// Creates or replaces `group/name`.
pub fn write_result(path: &Path, group: &str, name: &str, value: impl Into<Value>) -> Result<()> {
    let file = open_write(path)?;
    write_into(&file, group, name, &value.into())
}

/// Writes several datasets of one group with a single open.
pub fn write_results(path: &Path, group: &str, values: &[(&str, Value)]) -> Result<()> {
    let file = open_write(path)?;
    for (name, v) in values {
        write_into(&file, group, name, v)?;
    }
    Ok(())
}

/// Writes a complete scan file, replacing any existing file.
pub fn save_scan(path: &Path, scan: &ScanData, paths: &CxiPaths) -> Result<()> {
    paths.validate()?;
    scan.ensure_valid()?;
    let _lock = ACCESS.write().unwrap_or_else(|e| e.into_inner());
    let file = File::create(path)?;
    let write = |p: &str, v: Value| {
        let (g, n) = split_dataset_path(p);
        write_into(&file, &g, &n, &v)
    };
    write(&paths.data, scan.frames.clone().into())?;
    write(&paths.translation, scan.translations.clone().into())?;
    write(&paths.basis_vectors, scan.basis_vectors.clone().into())?;
    write(&paths.distance, scan.distance.into())?;
    write(&paths.x_pixel_size, scan.x_pixel_size.into())?;
    write(&paths.y_pixel_size, scan.y_pixel_size.into())?;
    write(&paths.wavelength, scan.wavelength.into())?;
    write(&paths.good_frames, scan.good_frames.clone().into())?;
    Ok(())
}

/// Splits `/a/b/c` into `("/a/b", "c")`.
pub fn split_dataset_path(p: &str) -> (String, String) {
    match p.rsplit_once('/') {
        Some(("", n)) => ("/".into(), n.into()),
        Some((g, n)) => (g.into(), n.into()),
        None => ("/".into(), p.into()),
    }
}
