/// Minimum of the least-squares paraboloid through a 3x3 error patch.
///
/// `patch[[a, b]]` is the error at offset `(a - 1, b - 1)`. Returns the offset
/// of the paraboloid minimum clamped to `[-1, 1]`, or `(0, 0)` when the fitted
/// Hessian is not positive definite.
pub fn quadratic_subpixel_refine(patch: &[[f64; 3]; 3]) -> (f64, f64) {
    // The monomials 1, x, y, x^2 - 2/3, y^2 - 2/3, xy are orthogonal on the
    // 3x3 grid, so each coefficient is an independent projection.
    let (mut b, mut c, mut e, mut d, mut f) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, row) in patch.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            let x = a as f64 - 1.0;
            let y = k as f64 - 1.0;
            b += x * v;
            c += y * v;
            e += x * y * v;
            d += (x * x - 2.0 / 3.0) * v;
            f += (y * y - 2.0 / 3.0) * v;
        }
    }
    if !patch.iter().flatten().all(|v| v.is_finite()) {
        return (0.0, 0.0);
    }
    let (b, c, e, d, f) = (b / 6.0, c / 6.0, e / 4.0, d / 2.0, f / 2.0);
    let det = 4.0 * d * f - e * e;
    if !(d > 0.0 && det > 0.0) {
        return (0.0, 0.0);
    }
    // Solve [[2d, e], [e, 2f]] s = -[b, c].
    let sx = (-2.0 * f * b + e * c) / det;
    let sy = (-2.0 * d * c + e * b) / det;
    (sx.clamp(-1.0, 1.0), sy.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(f: impl Fn(f64, f64) -> f64) -> [[f64; 3]; 3] {
        let mut p = [[0.0; 3]; 3];
        for (a, row) in p.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = f(a as f64 - 1.0, b as f64 - 1.0);
            }
        }
        p
    }

    #[test]
    fn symmetric_bowl_is_centred() {
        assert_eq!(quadratic_subpixel_refine(&sample(|x, y| x * x + y * y)), (0.0, 0.0));
    }

    #[test]
    fn offset_bowl_is_located() {
        let (sx, sy) = quadratic_subpixel_refine(&sample(|x, y| (x - 0.3).powi(2) + 2.0 * (y + 0.2).powi(2) + 5.0));
        assert!((sx - 0.3).abs() < 1e-10 && (sy + 0.2).abs() < 1e-10);
    }

    #[test]
    fn saddle_falls_back_to_centre() {
        assert_eq!(quadratic_subpixel_refine(&sample(|x, y| x * x - y * y)), (0.0, 0.0));
        assert_eq!(quadratic_subpixel_refine(&sample(|_, _| 1.0)), (0.0, 0.0));
    }

    #[test]
    fn far_minimum_is_clamped() {
        let (sx, _) = quadratic_subpixel_refine(&sample(|x, y| (x - 3.0).powi(2) + y * y));
        assert_eq!(sx, 1.0);
    }

    proptest! {
        #[test]
        fn exact_for_any_positive_definite_paraboloid(
            x0 in -0.9f64..0.9, y0 in -0.9f64..0.9,
            a in 0.5f64..4.0, c in 0.5f64..4.0, r in -0.9f64..0.9, k in -10.0f64..10.0,
        ) {
            let bxy = r * (a * c).sqrt();
            let (sx, sy) = quadratic_subpixel_refine(&sample(|x, y| {
                let (dx, dy) = (x - x0, y - y0);
                a * dx * dx + 2.0 * bxy * dx * dy + c * dy * dy + k
            }));
            prop_assert!((sx - x0).abs() < 1e-9 && (sy - y0).abs() < 1e-9);
        }
    }
}
