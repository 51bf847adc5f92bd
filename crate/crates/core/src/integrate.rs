//! Least-squares integration of a sampled gradient field.
//!
//! The gradient operator `G` lives on the good pixels of a mask. Along each
//! axis a pixel uses the central difference when both neighbours are good and
//! a one-sided difference otherwise (second order when two good pixels are
//! available on that side). Central and second-order one-sided differences are
//! exact for quadratics, so a sampled quadratic potential is reproduced
//! exactly.
//!
//! `integrate_gradient` solves the normal equations `G^T G phi = G^T g` with
//! conjugate gradients from a zero start, then anchors `phi` to zero at the
//! first good pixel. `G (G^T G)^+ G^T` is an orthogonal projection onto the
//! gradient fields, which makes [`project_gradient`] idempotent.

use ndarray::{Array2, Zip};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Stop when `|r| <= tol * max(|G^T g|, |g|)`. Scaling by the data as
    /// well keeps a right-hand side that is pure round-off (a curl-only field)
    /// from being fitted.
    pub tol: f64,
    /// Iteration cap; `None` derives one from the grid size.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: None }
    }
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub phi: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

type Stencil = smallvec_like::Stencil;

mod smallvec_like {
    /// Up to three (flat index, coefficient) taps.
    #[derive(Debug, Clone, Copy)]
    pub struct Stencil {
        pub taps: [(usize, f64); 3],
        pub len: usize,
    }

    impl Stencil {
        pub fn new(taps: &[(usize, f64)]) -> Self {
            let mut t = [(0, 0.0); 3];
            t[..taps.len()].copy_from_slice(taps);
            Self { taps: t, len: taps.len() }
        }

        #[inline]
        pub fn iter(&self) -> impl Iterator<Item = &(usize, f64)> {
            self.taps[..self.len].iter()
        }
    }
}

/// Masked pixel-centred gradient operator.
pub struct GradientOperator {
    shape: (usize, usize),
    /// One row per (good pixel, axis) that has a stencil.
    rows: Vec<(usize, usize, Stencil)>,
    /// For every flat pixel, the (row, coefficient) pairs that touch it.
    transpose: Vec<Vec<(usize, f64)>>,
    first_good: Option<usize>,
}

impl GradientOperator {
    pub fn new(mask: &Array2<bool>) -> Self {
        let (ss, fs) = mask.dim();
        let good = |i: i64, j: i64| i >= 0 && j >= 0 && (i as usize) < ss && (j as usize) < fs && mask[[i as usize, j as usize]];
        let flat = |i: i64, j: i64| i as usize * fs + j as usize;
        let mut rows = Vec::new();
        let mut first_good = None;
        for i in 0..ss as i64 {
            for j in 0..fs as i64 {
                if !good(i, j) {
                    continue;
                }
                if first_good.is_none() {
                    first_good = Some(flat(i, j));
                }
                for axis in 0..2 {
                    let at = |k: i64| if axis == 0 { (i + k, j) } else { (i, j + k) };
                    let ok = |k: i64| {
                        let (a, b) = at(k);
                        good(a, b)
                    };
                    let idx = |k: i64| {
                        let (a, b) = at(k);
                        flat(a, b)
                    };
                    let st = if ok(-1) && ok(1) {
                        Some(Stencil::new(&[(idx(-1), -0.5), (idx(1), 0.5)]))
                    } else if ok(1) {
                        if ok(2) {
                            Some(Stencil::new(&[(idx(0), -1.5), (idx(1), 2.0), (idx(2), -0.5)]))
                        } else {
                            Some(Stencil::new(&[(idx(0), -1.0), (idx(1), 1.0)]))
                        }
                    } else if ok(-1) {
                        if ok(-2) {
                            Some(Stencil::new(&[(idx(0), 1.5), (idx(-1), -2.0), (idx(-2), 0.5)]))
                        } else {
                            Some(Stencil::new(&[(idx(0), 1.0), (idx(-1), -1.0)]))
                        }
                    } else {
                        None
                    };
                    if let Some(st) = st {
                        rows.push((flat(i, j), axis, st));
                    }
                }
            }
        }
        let mut transpose = vec![Vec::new(); ss * fs];
        for (r, (_, _, st)) in rows.iter().enumerate() {
            for &(q, c) in st.iter() {
                transpose[q].push((r, c));
            }
        }
        Self { shape: (ss, fs), rows, transpose, first_good }
    }

    fn apply_rows(&self, phi: &[f64], out: &mut [f64]) {
        out.par_iter_mut().zip(self.rows.par_iter()).for_each(|(o, (_, _, st))| {
            *o = st.iter().map(|&(q, c)| c * phi[q]).sum();
        });
    }

    fn apply_transpose(&self, g: &[f64], out: &mut [f64]) {
        out.par_iter_mut().zip(self.transpose.par_iter()).for_each(|(o, taps)| {
            *o = taps.iter().map(|&(r, c)| c * g[r]).sum();
        });
    }

    /// `G phi` as two pixel arrays; pixels without a stencil are zero.
    pub fn gradient(&self, phi: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        assert_eq!(phi.dim(), self.shape);
        let phi_s = phi.as_standard_layout();
        let phi_s = phi_s.as_slice().expect("standard layout");
        let mut g = vec![0.0; self.rows.len()];
        self.apply_rows(phi_s, &mut g);
        let mut g0 = Array2::zeros(self.shape);
        let mut g1 = Array2::zeros(self.shape);
        let fs = self.shape.1;
        for (v, (p, axis, _)) in g.iter().zip(&self.rows) {
            let target = if *axis == 0 { &mut g0 } else { &mut g1 };
            target[[p / fs, p % fs]] = *v;
        }
        (g0, g1)
    }

    /// Least-squares potential of `(g0, g1)`.
    pub fn integrate(&self, g0: &Array2<f64>, g1: &Array2<f64>, opts: CgOptions) -> Integration {
        let (ss, fs) = self.shape;
        let n = ss * fs;
        let rhs_rows: Vec<f64> = self
            .rows
            .iter()
            .map(|(p, axis, _)| if *axis == 0 { g0[[p / fs, p % fs]] } else { g1[[p / fs, p % fs]] })
            .collect();
        let mut b = vec![0.0; n];
        self.apply_transpose(&rhs_rows, &mut b);

        let max_iter = opts.max_iter.unwrap_or(100 * (ss + fs) + 200);
        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut tmp = vec![0.0; self.rows.len()];
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let bnorm = dot(&b, &b).sqrt();
        let scale = bnorm.max(dot(&rhs_rows, &rhs_rows).sqrt());
        let mut rr = dot(&r, &r);
        let mut iterations = 0;
        let mut converged = bnorm <= opts.tol * scale;
        while !converged && iterations < max_iter {
            self.apply_rows(&p, &mut tmp);
            self.apply_transpose(&tmp, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rr / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new = dot(&r, &r);
            iterations += 1;
            if rr_new.sqrt() <= opts.tol * scale {
                converged = true;
                rr = rr_new;
                break;
            }
            let beta = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
        }
        let relative_residual = if scale > 0.0 { rr.sqrt() / scale } else { 0.0 };

        let mut phi = Array2::from_shape_vec((ss, fs), x).expect("shape");
        if let Some(a) = self.first_good {
            let anchor = phi[[a / fs, a % fs]];
            let touched: Vec<bool> = self.transpose.iter().map(|t| !t.is_empty()).collect();
            for (k, v) in phi.iter_mut().enumerate() {
                *v = if touched[k] { *v - anchor } else { 0.0 };
            }
        }
        Integration { phi, iterations, converged, relative_residual }
    }
}

/// Least-squares potential of the gradient field `(g0, g1)` on `mask`.
pub fn integrate_gradient(g0: &Array2<f64>, g1: &Array2<f64>, mask: &Array2<bool>, opts: CgOptions) -> Integration {
    GradientOperator::new(mask).integrate(g0, g1, opts)
}

/// `G phi` on `mask`.
pub fn gradient(phi: &Array2<f64>, mask: &Array2<bool>) -> (Array2<f64>, Array2<f64>) {
    GradientOperator::new(mask).gradient(phi)
}

/// Closest gradient field to `(d0, d1)` on the good pixels; other pixels keep
/// their input values. Also returns the solver report.
pub fn project_gradient(
    d0: &Array2<f64>,
    d1: &Array2<f64>,
    mask: &Array2<bool>,
    opts: CgOptions,
) -> (Array2<f64>, Array2<f64>, Integration) {
    let op = GradientOperator::new(mask);
    let sol = op.integrate(d0, d1, opts);
    let (g0, g1) = op.gradient(&sol.phi);
    let mut o0 = d0.clone();
    let mut o1 = d1.clone();
    Zip::from(&mut o0).and(&mut o1).and(mask).and(&g0).and(&g1).for_each(|a, b, &m, &x, &y| {
        if m {
            *a = x;
            *b = y;
        }
    });
    (o0, o1, sol)
}
