use ndarray::Array2;
use proptest::prelude::*;
use pxst::geometry::translations_to_pixels;
use pxst::integrate::{gradient, project_gradient, CgOptions};
use pxst::interp::WeightedAccumulator;
use pxst::recon::{make_reference, update_pixel_map, update_translations, ReconInput, SearchWindow, UpdateOptions};
use pxst::sim::{simulate_scan, Positions, SimSpec, Texture, WhitefieldModel};
use pxst::{PixelMap, PixelMask, PixelTranslations, Roi};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(seed: u64) -> pxst::sim::Simulation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zernike = (4..=8).map(|j| (j, rng.random_range(-0.5..0.5))).collect();
    let spec = SimSpec {
        shape: (48, 48),
        zernike,
        texture: Texture::Blobs { sigma: 2.0, contrast: 0.4 },
        positions: Positions::Raster { rows: 4, cols: 4, step: 6.0 },
        whitefield: WhitefieldModel::Gaussian { peak: 1000.0, width_ss: 0.6, width_fs: 0.6 },
        poisson_noise: seed.is_multiple_of(2),
        seed,
        ..SimSpec::default()
    };
    simulate_scan(&spec).unwrap()
}

#[test]
fn pixel_map_update_never_increases_a_pixel_error() {
    for seed in 0..10 {
        let sim = random_instance(seed);
        let shape = sim.scan.frame_shape();
        let mask = PixelMask::all_good(shape);
        let g = sim.truth.geometry;
        let input = ReconInput::new(&sim.scan, &sim.truth.whitefield, &mask, &Roi::full(shape))
            .unwrap()
            .with_sampling(g.du, g.dv);
        let t = translations_to_pixels(&sim.scan, &g);
        let u = PixelMap::identity(shape);
        let reference = make_reference(&input, &u, &t).unwrap();
        let raw = UpdateOptions { quadratic_refinement: false, integrate: false, sigma: 0.0 };
        let before = update_pixel_map(&input, &reference, &u, &t, &SearchWindow::square(0), &raw).unwrap().error;
        let opts = UpdateOptions { quadratic_refinement: true, integrate: false, sigma: 0.0 };
        let after = update_pixel_map(&input, &reference, &u, &t, &SearchWindow::square(3), &opts).unwrap();
        let mut improved = 0;
        for ((p, &a), &b) in after.error.indexed_iter().zip(before.iter()) {
            assert!(a <= b, "seed {seed} pixel {p:?}: {a} > {b}");
            improved += usize::from(a < b);
        }
        assert!(improved > 0, "seed {seed}");
        // The stored error is the one of the stored map.
        let again = update_pixel_map(&input, &reference, &after.pixel_map, &t, &SearchWindow::square(0), &raw).unwrap();
        assert_eq!(again.error, after.error, "seed {seed}");
    }
}

#[test]
fn translation_refinement_recovers_perturbations() {
    let spec = SimSpec {
        texture: Texture::Blobs { sigma: 3.0, contrast: 0.5 },
        positions: Positions::Raster { rows: 5, cols: 5, step: 12.0 },
        zernike: vec![(4, 1.0), (6, 0.5)],
        ..SimSpec::default()
    };
    let sim = simulate_scan(&spec).unwrap();
    let shape = sim.scan.frame_shape();
    let mask = PixelMask::all_good(shape);
    let g = sim.truth.geometry;
    let input =
        ReconInput::new(&sim.scan, &sim.truth.whitefield, &mask, &Roi::full(shape)).unwrap().with_sampling(g.du, g.dv);
    let truth = translations_to_pixels(&sim.scan, &g);
    let u = &sim.truth.pixel_map;
    let reference = make_reference(&input, u, &truth).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut start = truth.clone();
    for n in 0..start.len() {
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        start.di[n] += 0.4 * a.cos();
        start.dj[n] += 0.4 * a.sin();
    }
    let t = update_translations(&input, &reference, u, &start, &SearchWindow::square(1)).unwrap();
    for n in 0..t.len() {
        let e = (t.di[n] - truth.di[n]).hypot(t.dj[n] - truth.dj[n]);
        assert!(e < 0.2, "frame {n}: error {e} px");
    }
}

fn rms(a: &Array2<f64>, b: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for ((x, y), &m) in a.iter().zip(b.iter()).zip(mask.iter()) {
        if m {
            s += (x - y).powi(2);
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}

fn field(seed: u64, shape: (usize, usize)) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

/// A mask with a few holes that keeps the good region connected.
fn holed_mask(seed: u64, shape: (usize, usize)) -> Array2<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut m = Array2::from_elem(shape, true);
    for _ in 0..4 {
        let (i, j) = (rng.random_range(2..shape.0 - 2), rng.random_range(2..shape.1 - 2));
        m[[i, j]] = false;
    }
    m
}

fn tight() -> CgOptions {
    CgOptions { tol: 1e-14, max_iter: Some(20_000) }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradient_fields_are_fixed_points(seed in any::<u64>(), rows in 6usize..20, cols in 6usize..20) {
        let mask = holed_mask(seed, (rows, cols));
        let (g0, g1) = gradient(&field(seed, (rows, cols)), &mask);
        let (p0, p1, _) = project_gradient(&g0, &g1, &mask, tight());
        prop_assert!(rms(&p0, &g0, &mask) < 1e-8);
        prop_assert!(rms(&p1, &g1, &mask) < 1e-8);
    }

    #[test]
    fn projection_is_idempotent(seed in any::<u64>(), rows in 6usize..20, cols in 6usize..20) {
        let mask = holed_mask(seed, (rows, cols));
        let d0 = field(seed, (rows, cols));
        let d1 = field(seed.wrapping_add(1), (rows, cols));
        let (p0, p1, _) = project_gradient(&d0, &d1, &mask, tight());
        let (q0, q1, _) = project_gradient(&p0, &p1, &mask, tight());
        prop_assert!(rms(&q0, &p0, &mask) < 1e-8);
        prop_assert!(rms(&q1, &p1, &mask) < 1e-8);
    }

    #[test]
    fn curl_part_is_removed(seed in any::<u64>(), rows in 6usize..16, cols in 6usize..16) {
        // With (c0, c1) = (D1' psi, -D0' psi) the divergence D0' c0 + D1' c1
        // vanishes for separable operators, so the projection keeps only g.
        let shape = (rows, cols);
        let mask = Array2::from_elem(shape, true);
        let (g0, g1) = gradient(&field(seed, shape), &mask);
        let psi = field(seed.wrapping_add(9), shape);
        let mut c0 = Array2::zeros(shape);
        let mut c1 = Array2::zeros(shape);
        for q in ndarray::indices(shape) {
            let mut e = Array2::zeros(shape);
            e[q] = 1.0;
            let (e0, e1) = gradient(&e, &mask);
            c0[q] = (&e1 * &psi).sum();
            c1[q] = -(&e0 * &psi).sum();
        }
        let (p0, p1, _) = project_gradient(&(&g0 + &c0), &(&g1 + &c1), &mask, tight());
        let scale = (c0.mapv(|v| v * v).sum() + c1.mapv(|v| v * v).sum()).sqrt();
        let err = ((&p0 - &g0).mapv(|v| v * v).sum() + (&p1 - &g1).mapv(|v| v * v).sum()).sqrt();
        prop_assert!(err < 1e-6 * scale, "{err} vs {scale}");
    }

    #[test]
    fn scatter_matches_a_dense_oracle(
        points in prop::collection::vec((-1.0f64..8.0, -1.0f64..10.0, -5.0f64..5.0, 0.0f64..2.0), 1..40)
    ) {
        let (rows, cols) = (7usize, 9usize);
        let mut acc = WeightedAccumulator::new((rows, cols));
        for &(x, y, v, w) in &points {
            acc.scatter(x, y, v, w);
        }
        // Oracle: tent kernel evaluated for every cell and point.
        let tent = |d: f64| (1.0 - d.abs()).max(0.0);
        let inside = |x: f64, y: f64| x >= 0.0 && y >= 0.0 && x <= (rows - 1) as f64 && y <= (cols - 1) as f64;
        let mut num = Array2::<f64>::zeros((rows, cols));
        let mut den = Array2::<f64>::zeros((rows, cols));
        for &(x, y, v, w) in points.iter().filter(|p| inside(p.0, p.1)) {
            for ((i, j), n) in num.indexed_iter_mut() {
                let k = tent(x - i as f64) * tent(y - j as f64);
                *n += v * w * k;
                den[[i, j]] += w * k;
            }
        }
        let (norm, valid) = acc.normalize();
        for ((i, j), &d) in den.indexed_iter() {
            prop_assert!((acc.values[[i, j]] - num[[i, j]]).abs() < 1e-10);
            prop_assert!((acc.weights[[i, j]] - d).abs() < 1e-10);
            if d > 1e-9 {
                prop_assert!(valid[[i, j]]);
                prop_assert!((norm[[i, j]] - num[[i, j]] / d).abs() < 1e-10 * (1.0 + (num[[i, j]] / d).abs()));
            }
        }
        prop_assert_eq!(acc.dropped(), points.iter().filter(|p| !inside(p.0, p.1)).count());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn reference_follows_integer_shifts(a in -5i32..5, b in -5i32..5, c in -5i32..5, d in -5i32..5) {
        let sim = random_instance(3);
        let shape = sim.scan.frame_shape();
        let mask = PixelMask::all_good(shape);
        let input = ReconInput::new(&sim.scan, &sim.truth.whitefield, &mask, &Roi::full(shape)).unwrap();
        let u = sim.truth.pixel_map.clone();
        let t = translations_to_pixels(&sim.scan, &sim.truth.geometry);
        let r0 = make_reference(&input, &u, &t).unwrap();

        // Shifting the map by (a, b) and every translation by (c, d) moves the
        // sample coordinates u - d by (a - c, b - d); cell values are unchanged.
        let mut u2 = u.clone();
        u2.u.index_axis_mut(ndarray::Axis(0), 0).mapv_inplace(|v| v + a as f64);
        u2.u.index_axis_mut(ndarray::Axis(0), 1).mapv_inplace(|v| v + b as f64);
        let t2 = PixelTranslations {
            di: t.di.mapv(|v| v + c as f64),
            dj: t.dj.mapv(|v| v + d as f64),
        };
        let r1 = make_reference(&input, &u2, &t2).unwrap();
        prop_assert_eq!(r1.origin, (r0.origin.0 + (a - c) as f64, r0.origin.1 + (b - d) as f64));
        prop_assert_eq!(r1.shape(), r0.shape());
        for (x, y) in r1.i_ref.iter().zip(r0.i_ref.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
        prop_assert_eq!(&r1.valid, &r0.valid);
    }
}
