//! Cached unitary 2-D FFT over the first two axes of an H×W complex buffer.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

#[derive(Clone)]
pub struct Fft2 {
    h: usize,
    w: usize,
    fwd_h: Arc<dyn Fft<f64>>,
    inv_h: Arc<dyn Fft<f64>>,
    fwd_w: Arc<dyn Fft<f64>>,
    inv_w: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fft2({}x{})", self.h, self.w)
    }
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Fft2 {
        let mut planner = FftPlanner::new();
        Fft2 {
            h,
            w,
            fwd_h: planner.plan_fft_forward(h),
            inv_h: planner.plan_fft_inverse(h),
            fwd_w: planner.plan_fft_forward(w),
            inv_w: planner.plan_fft_inverse(w),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.h * self.w, "buffer does not match plan");
        let (row_fft, col_fft) = if inverse {
            (&self.inv_w, &self.inv_h)
        } else {
            (&self.fwd_w, &self.fwd_h)
        };
        // Rows are contiguous.
        for row in data.chunks_exact_mut(self.w) {
            row_fft.process(row);
        }
        // Columns via a scratch lane.
        let mut col = vec![Complex64::new(0.0, 0.0); self.h];
        for j in 0..self.w {
            for i in 0..self.h {
                col[i] = data[i * self.w + j];
            }
            col_fft.process(&mut col);
            for i in 0..self.h {
                data[i * self.w + j] = col[i];
            }
        }
        // 1/sqrt(hw) in each direction makes the pair unitary.
        let scale = 1.0 / ((self.h * self.w) as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_unitary(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    pub fn inverse_unitary(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }
}

/// Map a centered line index (DC at `n/2`) to the unshifted frequency index.
pub fn centered_to_freq(c: usize, n: usize) -> usize {
    (c + n - n / 2) % n
}
