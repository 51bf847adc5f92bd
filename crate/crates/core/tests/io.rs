use std::path::Path;

use ndarray::{arr1, Array2, Array3};
use pxst::io::{
    load_fixture, load_scan, parse_config, read_dataset, read_frame, read_header, save_fixture, save_scan, write_result,
    CxiPaths, ParamValue, Value,
};
use pxst::{Error, Roi, ScanData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_scan(n: usize, ss: usize, fs: usize, seed: u64) -> ScanData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScanData {
        frames: Array3::from_shape_simple_fn((n, ss, fs), || rng.random_range(0.0..1000.0)),
        wavelength: 1.3e-10,
        distance: 0.8,
        x_pixel_size: 7.5e-5,
        y_pixel_size: 5.5e-5,
        basis_vectors: ScanData::aligned_basis(n, 7.5e-5, 5.5e-5),
        translations: Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1e-6..1e-6)),
        good_frames: (0..n).map(|k| k % 3 != 1).collect(),
    }
}

/// Minimal scan file written with the HDF5 API directly.
fn write_minimal(path: &Path, with_translation: bool, wavelength: Option<f64>, energy: Option<f64>) {
    let f = hdf5::File::create(path).unwrap();
    let put = |name: &str, data: ndarray::ArrayD<f64>| {
        let (g, n) = name.rsplit_once('/').unwrap();
        let mut group = f.group("/").unwrap();
        for part in g.split('/').filter(|p| !p.is_empty()) {
            group = if group.link_exists(part) { group.group(part) } else { group.create_group(part) }.unwrap();
        }
        group.new_dataset_builder().with_data(data.view()).create(n).unwrap();
    };
    put("/entry_1/data_1/data", Array3::<f64>::from_elem((2, 4, 5), 3.0).into_dyn());
    if with_translation {
        put("/entry_1/sample_1/geometry/translation", Array2::<f64>::zeros((2, 3)).into_dyn());
    }
    put("/entry_1/instrument_1/detector_1/distance", arr1(&[0.5]).into_dyn());
    put("/entry_1/instrument_1/detector_1/x_pixel_size", arr1(&[1e-6]).into_dyn());
    put("/entry_1/instrument_1/detector_1/y_pixel_size", arr1(&[1e-6]).into_dyn());
    if let Some(w) = wavelength {
        put("/entry_1/instrument_1/source_1/wavelength", arr1(&[w]).into_dyn());
    }
    if let Some(e) = energy {
        put("/entry_1/instrument_1/source_1/energy", arr1(&[e]).into_dyn());
    }
}

#[test]
fn missing_translation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.cxi");
    write_minimal(&p, false, Some(1e-10), None);
    match load_scan(&p, &CxiPaths::default(), None) {
        Err(Error::MissingDataset(d)) => assert_eq!(d, "/entry_1/sample_1/geometry/translation"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wavelength_from_photon_energy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.cxi");
    write_minimal(&p, true, None, Some(8000.0));
    let s = load_scan(&p, &CxiPaths::default(), None).unwrap();
    // CODATA exact constants.
    let expected = 6.626_070_15e-34 * 299_792_458.0 / (8000.0 * 1.602_176_634e-19);
    assert!((s.wavelength - expected).abs() < 1e-6 * expected);
    assert!((s.wavelength - 1.5498e-10).abs() < 1e-14);
    // Defaults for the optional datasets.
    assert_eq!(s.good_frames, vec![true, true]);
    assert_eq!(s.basis_vectors, ScanData::aligned_basis(2, 1e-6, 1e-6));
}

#[test]
fn missing_wavelength_and_energy() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.cxi");
    write_minimal(&p, true, None, None);
    assert!(matches!(load_scan(&p, &CxiPaths::default(), None), Err(Error::MissingDataset(_))));
    assert!(matches!(load_scan(&dir.path().join("nope.cxi"), &CxiPaths::default(), None), Err(Error::NotFound(_))));
}

#[test]
fn translation_shape_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.cxi");
    write_minimal(&p, true, Some(1e-10), None);
    write_result(&p, "/entry_1/sample_1/geometry", "translation", Array2::<f64>::zeros((3, 3))).unwrap();
    assert!(matches!(load_scan(&p, &CxiPaths::default(), None), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn detector_layout_with_121_frames_of_516x1556() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("big.cxi");
    write_minimal(&p, true, Some(1e-10), None);
    {
        let f = hdf5::File::open_rw(&p).unwrap();
        let g = f.group("/entry_1/data_1").unwrap();
        g.unlink("data").unwrap();
        // Chunked and never written, so nothing is allocated on disk.
        g.new_dataset::<u16>().chunk((1, 516, 1556)).shape((121, 516, 1556)).create("data").unwrap();
        let s = f.group("/entry_1/sample_1/geometry").unwrap();
        s.unlink("translation").unwrap();
        s.new_dataset_builder().with_data(Array2::<f64>::zeros((121, 3)).view()).create("translation").unwrap();
    }
    let h = read_header(&p, &CxiPaths::default()).unwrap();
    assert_eq!((h.n_frames, h.frame_shape), (121, (516, 1556)));
    assert_eq!(read_frame(&p, &CxiPaths::default(), 120).unwrap().dim(), (516, 1556));
}

#[test]
fn scan_file_round_trip_and_roi() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.cxi");
    let scan = random_scan(4, 6, 7, 1);
    let paths = CxiPaths::default();
    save_scan(&p, &scan, &paths).unwrap();
    let a = load_scan(&p, &paths, None).unwrap();
    assert_eq!(a, scan);
    assert_eq!(load_scan(&p, &paths, None).unwrap(), a);
    assert_eq!(read_frame(&p, &paths, 2).unwrap(), scan.frame(2));

    let roi = Roi::new(1, 4, 2, 7, (6, 7)).unwrap();
    let c = load_scan(&p, &paths, Some(&roi)).unwrap();
    assert_eq!(c.frames, scan.frames.slice(ndarray::s![.., 1..4, 2..7]));
}

#[test]
fn results_are_written_and_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.cxi");
    save_scan(&p, &random_scan(2, 5, 6, 2), &CxiPaths::default()).unwrap();

    let e = Array2::from_shape_fn((5, 6), |(i, j)| (i * 6 + j) as f64);
    write_result(&p, "/speckle_tracking", "error_pixel", e.clone()).unwrap();
    assert_eq!(read_dataset(&p, "/speckle_tracking/error_pixel").unwrap(), Some(Value::from(e)));

    let u1 = Array3::<f64>::zeros((2, 5, 6));
    let u2 = Array3::<f64>::ones((2, 5, 6));
    write_result(&p, "/speckle_tracking", "pixel_map", u1).unwrap();
    write_result(&p, "/speckle_tracking", "pixel_map", u2.clone()).unwrap();
    assert_eq!(read_dataset(&p, "/speckle_tracking/pixel_map").unwrap(), Some(Value::from(u2)));

    // Nested groups are created on demand; flags come back as integers.
    write_result(&p, "/a/b/c", "flags", arr1(&[true, false])).unwrap();
    assert_eq!(read_dataset(&p, "/a/b/c/flags").unwrap().unwrap().to_f64().into_raw_vec(), vec![1.0, 0.0]);
    assert_eq!(read_dataset(&p, "/a/b/c/none").unwrap(), None);
}

#[test]
fn read_only_file_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("s.cxi");
    save_scan(&p, &random_scan(1, 3, 3, 3), &CxiPaths::default()).unwrap();
    let mut perm = std::fs::metadata(&p).unwrap().permissions();
    perm.set_readonly(true);
    std::fs::set_permissions(&p, perm).unwrap();
    let r = write_result(&p, "/speckle_tracking", "x", 1.0);
    assert!(matches!(r, Err(Error::ReadOnlyFile(_))), "{r:?}");
    // Reading still works.
    load_scan(&p, &CxiPaths::default(), None).unwrap();
}

#[test]
fn fixture_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let scan = random_scan(5, 8, 9, 4);
    save_fixture(&scan, dir.path()).unwrap();
    let back = load_fixture(dir.path()).unwrap();
    assert_eq!(back, scan);
    // Bitwise, not just numerically equal.
    assert!(back.frames.iter().zip(scan.frames.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn fixture_with_one_frame() {
    let dir = tempfile::tempdir().unwrap();
    let scan = random_scan(1, 2, 3, 5);
    save_fixture(&scan, dir.path()).unwrap();
    let back = load_fixture(dir.path()).unwrap();
    assert_eq!(back.n_frames(), 1);
    assert!(back.validate().is_empty());
}

#[test]
fn fixture_errors() {
    let dir = tempfile::tempdir().unwrap();
    save_fixture(&random_scan(2, 3, 3, 6), dir.path()).unwrap();
    let meta = std::fs::read_to_string(dir.path().join("meta")).unwrap();

    let no_pixel: String = meta.lines().filter(|l| !l.starts_with("x_pixel_size")).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.path().join("meta"), no_pixel).unwrap();
    assert!(matches!(load_fixture(dir.path()), Err(Error::Fixture(m)) if m.contains("x_pixel_size")));

    std::fs::write(dir.path().join("meta"), &meta).unwrap();
    let bytes = std::fs::read(dir.path().join("frames.bin")).unwrap();
    std::fs::write(dir.path().join("frames.bin"), &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_fixture(dir.path()), Err(Error::Fixture(m)) if m.contains("bytes")));
}

#[test]
fn config_examples() {
    let c = parse_config("[update_pixel_map]\nsigma = 5").unwrap();
    assert_eq!(c.get("update_pixel_map", "sigma"), Some(&ParamValue::Float(5.0)));

    let c = parse_config("integrate = True").unwrap();
    assert_eq!(c.get("update_pixel_map", "integrate"), Some(&ParamValue::Bool(true)));

    let e = parse_config("[update_pixel_map]\nsigma = abc").unwrap_err();
    assert!(e.to_string().contains("sigma"), "{e}");

    let c = parse_config("[run]\nsigma = 5, 3\nfoo = 1\n[nonsense]\n").unwrap();
    assert_eq!(c.get("run", "sigma"), Some(&ParamValue::Floats(vec![5.0, 3.0])));
    assert_eq!(c.unknown, vec!["run.foo".to_string(), "nonsense".to_string()]);
}
