//! Orthonormal 2-D DCT-II with soft thresholding of the coefficients.

/// DCT-II matrix C[k][n] = α_k cos(π(2n+1)k / 2N); rows are orthonormal.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let a0 = (1.0 / n as f64).sqrt();
    let ak = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let alpha = if k == 0 { a0 } else { ak };
        for j in 0..n {
            m[k * n + j] =
                alpha * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64 / (2.0 * n as f64)).cos();
        }
    }
    m
}

fn transform_axis(data: &[f64], h: usize, w: usize, matrix: &[f64], n: usize, axis: usize, transpose: bool) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    match axis {
        0 => {
            debug_assert_eq!(n, h);
            for j in 0..w {
                for k in 0..h {
                    let mut acc = 0.0;
                    for i in 0..h {
                        let c = if transpose { matrix[i * n + k] } else { matrix[k * n + i] };
                        acc += c * data[i * w + j];
                    }
                    out[k * w + j] = acc;
                }
            }
        }
        _ => {
            debug_assert_eq!(n, w);
            for i in 0..h {
                for k in 0..w {
                    let mut acc = 0.0;
                    for j in 0..w {
                        let c = if transpose { matrix[j * n + k] } else { matrix[k * n + j] };
                        acc += c * data[i * w + j];
                    }
                    out[i * w + k] = acc;
                }
            }
        }
    }
    out
}

/// Soft-threshold the 2-D DCT coefficients of one plane by `threshold`.
pub fn dct_soft_threshold_plane(v: &[f64], h: usize, w: usize, threshold: f64) -> Vec<f64> {
    let mh = dct_matrix(h);
    let mw = dct_matrix(w);
    let coef = transform_axis(v, h, w, &mh, h, 0, false);
    let mut coef = transform_axis(&coef, h, w, &mw, w, 1, false);
    for c in coef.iter_mut() {
        *c = if *c > threshold {
            *c - threshold
        } else if *c < -threshold {
            *c + threshold
        } else {
            0.0
        };
    }
    // Inverse = transpose of the orthonormal transform.
    let back = transform_axis(&coef, h, w, &mw, w, 1, true);
    transform_axis(&back, h, w, &mh, h, 0, true)
}
