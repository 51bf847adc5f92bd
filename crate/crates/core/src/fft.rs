//! Two-dimensional FFTs on `ndarray` arrays and the matching frequency grid.

use ndarray::{Array1, Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Spatial frequencies in cycles per meter, laid out like the FFT output
/// (DC at index 0, negative frequencies in the upper half).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub q_ss: Array1<f64>,
    pub q_fs: Array1<f64>,
}

/// `numpy.fft.fftfreq` equivalent.
pub fn fftfreq(n: usize, d: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |k| {
        let k = if k <= (n - 1) / 2 { k as f64 } else { k as f64 - n as f64 };
        k / (n as f64 * d)
    })
}

impl FrequencyGrid {
    pub fn new(shape: (usize, usize), d_ss: f64, d_fs: f64) -> Self {
        Self { q_ss: fftfreq(shape.0, d_ss), q_fs: fftfreq(shape.1, d_fs) }
    }

    /// `|q|^2` at every grid point.
    pub fn q2(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.q_ss.len(), self.q_fs.len()), |(i, j)| self.q_ss[i].powi(2) + self.q_fs[j].powi(2))
    }
}

/// In-place unnormalised 2-D transform. The inverse is scaled by `1/(n m)`
/// so that `fft2(ifft2(a)) == a`.
pub fn fft2_inplace(a: &mut Array2<Complex64>, inverse: bool) {
    let (rows, cols) = a.dim();
    if rows == 0 || cols == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); rows.max(cols)];
    for mut row in a.axis_iter_mut(Axis(0)) {
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        row_fft.process(&mut buf[..cols]);
        for (v, b) in row.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
    for mut col in a.axis_iter_mut(Axis(1)) {
        for (b, v) in buf.iter_mut().zip(col.iter()) {
            *b = *v;
        }
        col_fft.process(&mut buf[..rows]);
        for (v, b) in col.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
    if inverse {
        let s = 1.0 / (rows * cols) as f64;
        a.mapv_inplace(|v| v * s);
    }
}

pub fn fft2_real(a: &Array2<f64>) -> Array2<Complex64> {
    let mut c = a.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut c, false);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fftfreq_layout() {
        let f = fftfreq(4, 0.5);
        assert_eq!(f.to_vec(), vec![0.0, 0.5, -1.0, -0.5]);
        let f = fftfreq(5, 1.0);
        assert_eq!(f.to_vec(), vec![0.0, 0.2, 0.4, -0.4, -0.2]);
    }

    #[test]
    fn round_trip_and_parseval() {
        let a = Array2::from_shape_fn((6, 10), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 1.5);
        let mut c = fft2_real(&a);
        let energy_k: f64 = c.iter().map(|v| v.norm_sqr()).sum::<f64>() / 60.0;
        let energy_x: f64 = a.iter().map(|v| v * v).sum();
        assert!((energy_k - energy_x).abs() < 1e-10 * energy_x);
        fft2_inplace(&mut c, true);
        for (x, y) in c.iter().zip(a.iter()) {
            assert!((x.re - y).abs() < 1e-12 && x.im.abs() < 1e-12);
        }
    }

    #[test]
    fn single_mode_lands_on_its_bin() {
        let a = Array2::from_shape_fn((8, 8), |(i, j)| {
            (2.0 * std::f64::consts::PI * (i as f64 * 2.0 / 8.0 + j as f64 * 3.0 / 8.0)).cos()
        });
        let c = fft2_real(&a);
        assert!((c[[2, 3]].re - 32.0).abs() < 1e-9);
        assert!((c[[6, 5]].re - 32.0).abs() < 1e-9);
    }
}
