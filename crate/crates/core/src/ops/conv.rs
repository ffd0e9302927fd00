//! Separable 1-D convolution along an axis, with an exact scatter adjoint.
//!
//! The forward map is `y[i] = Σ_t taps[t] · x[map(i + t − r)]` where `map`
//! resolves out-of-range indices per the boundary rule. The adjoint scatters
//! the same weights, so it is the transpose of the forward matrix by
//! construction, for either boundary.

use num_complex::Complex64;

/// Boundary handling for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Circular,
    Reflect,
}

pub trait ConvScalar:
    Copy + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self>
{
    const ZERO: Self;
}

impl ConvScalar for f64 {
    const ZERO: f64 = 0.0;
}

impl ConvScalar for Complex64 {
    const ZERO: Complex64 = Complex64::new(0.0, 0.0);
}

/// Resolve index `k` (possibly out of range) into `[0, n)`.
fn resolve(k: isize, n: usize, boundary: Boundary) -> usize {
    let n = n as isize;
    let mut k = k;
    match boundary {
        Boundary::Circular => (((k % n) + n) % n) as usize,
        Boundary::Reflect => {
            // Whole-sample reflection: x[-1] == x[1], x[n] == x[n-2].
            loop {
                if k < 0 {
                    k = -k;
                } else if k >= n {
                    k = 2 * n - 2 - k;
                } else {
                    return k as usize;
                }
            }
        }
    }
}

fn lane_conv<S: ConvScalar>(lane: &[S], taps: &[f64], boundary: Boundary, out: &mut [S]) {
    let n = lane.len();
    let r = (taps.len() / 2) as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = S::ZERO;
        for (t, &k) in taps.iter().enumerate() {
            let src = resolve(i as isize + t as isize - r, n, boundary);
            acc = acc + lane[src] * k;
        }
        *o = acc;
    }
}

fn lane_conv_adjoint<S: ConvScalar>(lane: &[S], taps: &[f64], boundary: Boundary, out: &mut [S]) {
    let n = lane.len();
    let r = (taps.len() / 2) as isize;
    for o in out.iter_mut() {
        *o = S::ZERO;
    }
    for (i, &v) in lane.iter().enumerate() {
        for (t, &k) in taps.iter().enumerate() {
            let dst = resolve(i as isize + t as isize - r, n, boundary);
            out[dst] = out[dst] + v * k;
        }
    }
}

/// Convolve along `axis` of a row-major tensor with the given `shape`.
/// `adjoint` selects the scatter (transpose) variant.
pub fn convolve_axis<S: ConvScalar>(
    data: &[S],
    shape: &[usize],
    axis: usize,
    taps: &[f64],
    boundary: Boundary,
    adjoint: bool,
) -> Vec<S> {
    let n = shape[axis];
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    let mut out = vec![S::ZERO; data.len()];
    let mut lane = vec![S::ZERO; n];
    let mut lane_out = vec![S::ZERO; n];
    for p in 0..pre {
        for q in 0..post {
            let base = p * n * post + q;
            for i in 0..n {
                lane[i] = data[base + i * post];
            }
            if adjoint {
                lane_conv_adjoint(&lane, taps, boundary, &mut lane_out);
            } else {
                lane_conv(&lane, taps, boundary, &mut lane_out);
            }
            for i in 0..n {
                out[base + i * post] = lane_out[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = convolve_axis(&x, &[4], 0, &[1.0], Boundary::Circular, false);
        assert_eq!(x, y);
    }

    #[test]
    fn circular_wraps() {
        let x = vec![1.0, 0.0, 0.0, 0.0];
        let y = convolve_axis(&x, &[4], 0, &[0.25, 0.5, 0.25], Boundary::Circular, false);
        assert_eq!(y, vec![0.5, 0.25, 0.0, 0.25]);
    }

    #[test]
    fn reflect_folds_back() {
        let x = vec![1.0, 0.0, 0.0, 0.0];
        let y = convolve_axis(&x, &[4], 0, &[0.25, 0.5, 0.25], Boundary::Reflect, false);
        // x[-1] == x[1]: output[0] = 0.5·x0 + 0.25·x1 + 0.25·x1 = 0.5
        assert_eq!(y, vec![0.5, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn scatter_is_transpose_of_gather() {
        // Materialize both matrices on a small lane; they must be transposes.
        let n = 6;
        let taps = [0.1, 0.2, 0.4, 0.2, 0.1];
        for boundary in [Boundary::Circular, Boundary::Reflect] {
            let mut fwd = vec![vec![0.0; n]; n];
            let mut adj = vec![vec![0.0; n]; n];
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                let col_f = convolve_axis(&e, &[n], 0, &taps, boundary, false);
                let col_a = convolve_axis(&e, &[n], 0, &taps, boundary, true);
                for i in 0..n {
                    fwd[i][j] = col_f[i];
                    adj[i][j] = col_a[i];
                }
            }
            for i in 0..n {
                for j in 0..n {
                    assert!(
                        (fwd[i][j] - adj[j][i]).abs() < 1e-15,
                        "{boundary:?} mismatch at ({i},{j})"
                    );
                }
            }
        }
    }
}
