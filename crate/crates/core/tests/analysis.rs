use ndarray::Array2;
use pxst::analysis::split_half::split_half_recon;
use pxst::analysis::{calculate_phase, calculate_sample_thickness, remove_tilt, zernike_fit, ThicknessParams};
use pxst::geometry::translations_to_pixels;
use pxst::recon::{make_reference, ReconInput, SearchWindow, UpdateOptions};
use pxst::sim::{simulate_scan, SimSpec, WhitefieldModel};
use pxst::{PixelMask, ReferenceImage, Roi};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma).powi(2);
        bb += (y - mb).powi(2);
    }
    ab / (aa * bb).sqrt()
}

#[test]
fn paganin_inverts_a_transport_of_intensity_disk() {
    // Homogeneous disk with a soft edge; contact image exp(-mu T), then the
    // transport-of-intensity contrast -(z delta / mu) lap(exp(-mu T)) with a
    // five-point Laplacian.
    let (n, dx) = (128usize, 1e-7);
    let (delta, mu, z) = (1e-6, 1e4, 2e-4);
    let t0 = 5e-6;
    let truth = Array2::from_shape_fn((n, n), |(i, j)| {
        let r = ((i as f64 - 64.0).powi(2) + (j as f64 - 64.0).powi(2)).sqrt();
        0.5 * t0 * (1.0 - ((r - 25.0) / 2.0).tanh())
    });
    let contact = truth.mapv(|t| (-mu * t).exp());
    let i_ref = Array2::from_shape_fn((n, n), |(i, j)| {
        let c = contact[[i, j]];
        let lap = if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
            0.0
        } else {
            (contact[[i - 1, j]] + contact[[i + 1, j]] + contact[[i, j - 1]] + contact[[i, j + 1]] - 4.0 * c) / (dx * dx)
        };
        2.0 * (c - z * delta / mu * lap)
    });
    let reference = ReferenceImage {
        i_ref,
        wsum: Array2::ones((n, n)),
        valid: Array2::from_elem((n, n), true),
        origin: (0.0, 0.0),
        du: dx,
        dv: dx,
    };
    let params = ThicknessParams::for_reference(&reference, delta, mu, z);
    let t = calculate_sample_thickness(&reference, &params).unwrap();
    assert_eq!(t.clipped, 0);
    let a: Vec<f64> = t.thickness.iter().copied().collect();
    let b: Vec<f64> = truth.iter().copied().collect();
    let r = pearson(&a, &b);
    assert!(r > 0.95, "correlation {r}");
    let scale = a.iter().sum::<f64>() / b.iter().sum::<f64>();
    assert!((scale - 1.0).abs() < 0.1, "scale {scale}");
}

fn split_half_sigma(counts: Option<f64>) -> (f64, pxst::analysis::SplitHalf) {
    let spec = SimSpec {
        whitefield: WhitefieldModel::Flat { counts: counts.unwrap_or(1000.0) },
        poisson_noise: counts.is_some(),
        shape: (64, 64),
        ..SimSpec::default()
    };
    let sim = simulate_scan(&spec).unwrap();
    let shape = sim.scan.frame_shape();
    let mask = PixelMask::all_good(shape);
    let g = sim.truth.geometry;
    let input = ReconInput::new(&sim.scan, &sim.truth.whitefield, &mask, &Roi::full(shape)).unwrap().with_sampling(g.du, g.dv);
    let t = translations_to_pixels(&sim.scan, &g);
    let reference = if counts.is_some() {
        make_reference(&input, &sim.truth.pixel_map, &t).unwrap()
    } else {
        sim.truth.reference.clone()
    };
    let opts = UpdateOptions { quadratic_refinement: true, integrate: false, sigma: 0.0 };
    let s = split_half_recon(&input, &reference, &sim.truth.pixel_map, &t, &SearchWindow::square(1), &opts, 5).unwrap();
    (s.sigma, s)
}

#[test]
fn split_half_spread_grows_with_noise() {
    let (clean, s) = split_half_sigma(None);
    // Exact data and reference: both halves keep the true map.
    assert_eq!(clean, 0.0);
    assert!(s.map_a.u.iter().zip(s.map_b.u.iter()).all(|(a, b)| a == b));
    let (high, _) = split_half_sigma(Some(1000.0));
    let (low, _) = split_half_sigma(Some(100.0));
    assert!(clean < high && high < low, "{clean} {high} {low}");
}

#[test]
fn split_half_is_deterministic() {
    let (a, sa) = split_half_sigma(Some(100.0));
    let (b, sb) = split_half_sigma(Some(100.0));
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(sa.map_a, sb.map_a);
    assert_eq!(sa.histogram, sb.histogram);
}

#[test]
fn simulated_phase_round_trips() {
    let spec = SimSpec { zernike: vec![(4, 1.0), (5, -0.5)], shape: (48, 56), ..SimSpec::default() };
    let sim = simulate_scan(&spec).unwrap();
    let s = &sim.scan;
    let mask = Array2::from_elem((48, 56), true);
    let p = calculate_phase(&sim.truth.pixel_map, &sim.truth.geometry, s.wavelength, s.x_pixel_size, s.y_pixel_size, &mask)
        .unwrap();
    let a = remove_tilt(&p.phi, &mask);
    let b = remove_tilt(&sim.truth.phase, &mask);
    let rms = ((&a - &b).mapv(|v| v * v).mean().unwrap()).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
    let fit = zernike_fit(&p.phi, &mask, 11, None).unwrap();
    let raw = |j: usize| fit.raw_coefficients.iter().find(|c| c.0 == j).unwrap().1;
    assert!((raw(4) - 1.0).abs() < 1e-3 && (raw(5) + 0.5).abs() < 1e-3);
}
