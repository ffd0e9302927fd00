//! Shared test oracles: a dense linear-algebra route to the z-update that
//! never touches the CG code, and synthetic ground-truth images.

use pnpcm::ops::LinearOp;
use pnpcm::tensor::{Complex64, Dtype, Tensor};

/// Solve (AᴴA + ρI) z = rhs by materializing the operator and running
/// partial-pivot Gaussian elimination in complex arithmetic.
pub fn dense_gram_solve(op: &LinearOp, rho: f64, rhs: &Tensor) -> Tensor {
    let a = op.to_dense().expect("operator small enough for the oracle");
    let in_shape = op.input_shape();
    let n: usize = in_shape.iter().product();
    let m: usize = op.output_shape().iter().product();
    let ac: Vec<Complex64> = (0..m * n).map(|i| a.get(i)).collect();

    // G = AᴴA + ρI
    let mut g = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..m {
                acc += ac[k * n + i].conj() * ac[k * n + j];
            }
            if i == j {
                acc += rho;
            }
            g[i * n + j] = acc;
        }
    }
    let b: Vec<Complex64> = (0..n).map(|i| rhs.get(i)).collect();
    let z = solve_dense(&mut g, b, n);

    match rhs.dtype() {
        Dtype::Real64 => {
            Tensor::from_real(&in_shape, z.iter().map(|c| c.re).collect()).expect("sized")
        }
        Dtype::Complex128 => Tensor::from_complex(&in_shape, z).expect("sized"),
    }
}

/// In-place Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &mut [Complex64], mut b: Vec<Complex64>, n: usize) -> Vec<Complex64> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&p, &q| {
                a[p * n + col]
                    .norm()
                    .partial_cmp(&a[q * n + col].norm())
                    .expect("finite")
            })
            .expect("nonempty");
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        assert!(diag.norm() > 1e-14, "singular system in oracle");
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor.norm() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a[col * n + j];
                a[row * n + j] -= factor * v;
            }
            let bv = b[col];
            b[row] -= factor * bv;
        }
    }
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for j in row + 1..n {
            acc -= a[row * n + j] * x[j];
        }
        x[row] = acc / a[row * n + row];
    }
    x
}

/// Deterministic piecewise-smooth test images in [0,1]: a gradient
/// background plus a few constant rectangles and a disk.
pub fn synthetic_image(h: usize, w: usize, variant: u64) -> Tensor {
    let mut data = vec![0.0; h * w];
    let v = variant as f64;
    for i in 0..h {
        for j in 0..w {
            data[i * w + j] = 0.15 + 0.3 * (i as f64 / h as f64) * ((v * 0.37).sin() * 0.5 + 0.5)
                + 0.2 * (j as f64 / w as f64);
        }
    }
    // rectangles
    let rects = [
        (variant % 5, variant % 3, 0.85),
        ((variant * 7) % 4 + 1, (variant * 3) % 5, 0.45),
    ];
    for (k, (ri, rj, val)) in rects.iter().enumerate() {
        let i0 = (h / 6) * (*ri as usize % 4) + 1;
        let j0 = (w / 6) * (*rj as usize % 4) + 1;
        let hh = h / 4 + k;
        let ww = w / 5 + 2 * k;
        for i in i0..(i0 + hh).min(h) {
            for j in j0..(j0 + ww).min(w) {
                data[i * w + j] = *val;
            }
        }
    }
    // disk
    let ci = h as f64 * (0.3 + 0.05 * ((variant * 11) % 7) as f64);
    let cj = w as f64 * (0.6 - 0.04 * ((variant * 5) % 6) as f64);
    let r = (h.min(w) as f64) * 0.18;
    for i in 0..h {
        for j in 0..w {
            let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            if d2 < r * r {
                data[i * w + j] = 0.05 + 0.02 * (variant % 3) as f64;
            }
        }
    }
    for x in data.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    Tensor::from_real(&[h, w], data).expect("sized")
}
