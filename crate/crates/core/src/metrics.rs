//! Reconstruction quality metrics: PSNR and SSIM over real tensors,
//! with magnitude reduction for complex images.

use crate::error::{Error, Result};
use crate::tensor::{norm2, Dtype, Tensor};

/// PSNR is capped at this sentinel when the MSE is exactly zero.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// Mean squared error between two real tensors of identical shape.
pub fn mse(x: &Tensor, reference: &Tensor) -> Result<f64> {
    let d = x.sub(reference)?;
    let _ = d.as_real()?; // metrics are defined on real data
    Ok(norm2(&d).powi(2) / d.len() as f64)
}

/// 10·log₁₀(peak²/MSE), capped at [`PSNR_CAP_DB`] when the MSE vanishes.
pub fn psnr(x: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    if peak <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "psnr peak must be > 0, got {peak}"
        )));
    }
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

/// Parameters of the windowed SSIM: Gaussian window (size 11, σ = 1.5) and
/// stabilizers C₁ = (k₁·peak)², C₂ = (k₂·peak)².
#[derive(Debug, Clone, serde::Serialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl SsimParams {
    pub fn with_peak(peak: f64) -> SsimParams {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak,
        }
    }

    /// Shrink the window (keeping it odd) so it fits an h×w image.
    pub fn fitted_to(mut self, h: usize, w: usize) -> SsimParams {
        let max_win = h.min(w);
        if self.window > max_win {
            self.window = if max_win % 2 == 0 { max_win - 1 } else { max_win };
        }
        self
    }
}

/// Mean local SSIM over all fully-interior window positions. Multi-channel
/// images average the per-channel scores. Errors when the window does not
/// fit or the inputs are complex.
pub fn ssim(x: &Tensor, reference: &Tensor, params: &SsimParams) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let xv = x.as_real()?;
    let rv = reference.as_real()?;
    let shape = x.shape();
    let (h, w, ch) = match shape.len() {
        2 => (shape[0], shape[1], 1),
        3 => (shape[0], shape[1], shape[2..].iter().product()),
        _ => {
            return Err(Error::InvalidParameter(
                "ssim expects an H×W or H×W×C tensor".into(),
            ))
        }
    };
    if params.window > h || params.window > w {
        return Err(Error::InvalidParameter(format!(
            "ssim window {} larger than image {h}x{w}",
            params.window
        )));
    }
    if params.window % 2 == 0 || params.window == 0 {
        return Err(Error::InvalidParameter(format!(
            "ssim window {} must be odd",
            params.window
        )));
    }
    let mut total = 0.0;
    let mut xp = vec![0.0; h * w];
    let mut rp = vec![0.0; h * w];
    for c in 0..ch {
        for p in 0..h * w {
            xp[p] = xv[p * ch + c];
            rp[p] = rv[p * ch + c];
        }
        total += ssim_plane(&xp, &rp, h, w, params);
    }
    Ok(total / ch as f64)
}

fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n / 2) as isize;
    let mut wts: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = wts.iter().sum();
    for v in wts.iter_mut() {
        *v /= s;
    }
    wts
}

/// Separable two-pass implementation: Gaussian-filter the five moment maps
/// horizontally then vertically, evaluating the SSIM formula at each valid
/// center.
fn ssim_plane(x: &[f64], r: &[f64], h: usize, w: usize, params: &SsimParams) -> f64 {
    let win = params.window;
    let wts = gaussian_window(win, params.sigma);
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);

    let vw = w - win + 1; // valid width after the horizontal pass
    let vh = h - win + 1;

    // Horizontal pass over each of the five moment maps.
    let mut maps = [
        vec![0.0; h * vw],
        vec![0.0; h * vw],
        vec![0.0; h * vw],
        vec![0.0; h * vw],
        vec![0.0; h * vw],
    ];
    for i in 0..h {
        for j in 0..vw {
            let mut m = [0.0f64; 5];
            for (k, &wt) in wts.iter().enumerate() {
                let a = x[i * w + j + k];
                let b = r[i * w + j + k];
                m[0] += wt * a;
                m[1] += wt * b;
                m[2] += wt * a * a;
                m[3] += wt * b * b;
                m[4] += wt * a * b;
            }
            for (map, val) in maps.iter_mut().zip(m) {
                map[i * vw + j] = val;
            }
        }
    }

    // Vertical pass and the SSIM formula at each valid center.
    let mut acc = 0.0;
    for i in 0..vh {
        for j in 0..vw {
            let mut m = [0.0f64; 5];
            for (k, &wt) in wts.iter().enumerate() {
                for (slot, map) in m.iter_mut().zip(&maps) {
                    *slot += wt * map[(i + k) * vw + j];
                }
            }
            let (mx, mr, exx, err, exr) = (m[0], m[1], m[2], m[3], m[4]);
            let vx = exx - mx * mx;
            let vr = err - mr * mr;
            let cov = exr - mx * mr;
            let val = ((2.0 * mx * mr + c1) * (2.0 * cov + c2))
                / ((mx * mx + mr * mr + c1) * (vx + vr + c2));
            acc += val;
        }
    }
    acc / (vh * vw) as f64
}

/// Elementwise modulus of a complex tensor. Real input is an error so that
/// an accidental double reduction is caught.
pub fn magnitude(x: &Tensor) -> Result<Tensor> {
    if x.dtype() != Dtype::Complex128 {
        return Err(Error::DtypeMismatch {
            expected: Dtype::Complex128.to_string(),
            got: x.dtype().to_string(),
        });
    }
    let v = x.as_complex()?;
    Tensor::from_real(x.shape(), v.iter().map(|c| c.norm()).collect())
}

/// PSNR + SSIM + MSE against a reference, with the peak convention used
/// throughout: 1.0 for real images (assumed normalized to [0,1]) and the
/// reference's maximum magnitude for complex images. Complex inputs are
/// magnitude-reduced first; the SSIM window shrinks to fit small images.
pub fn compare_to_reference(x: &Tensor, reference: &Tensor) -> Result<MetricReport> {
    let (xr, rr, peak) = if reference.dtype() == Dtype::Complex128 {
        let rm = magnitude(reference)?;
        let xm = magnitude(x)?;
        let peak = rm.as_real()?.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
        (xm, rm, peak)
    } else {
        (x.clone(), reference.clone(), 1.0)
    };
    let shape = rr.shape();
    let (h, w) = (shape[0], shape.get(1).copied().unwrap_or(1));
    let params = SsimParams::with_peak(peak).fitted_to(h, w);
    Ok(MetricReport {
        psnr_db: psnr(&xr, &rr, peak)?,
        ssim: ssim(&xr, &rr, &params)?,
        mse: mse(&xr, &rr)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gaussian_sample_seeded, standard_normal, RngSeed};
    use num_complex::Complex64;

    #[test]
    fn psnr_zero_mse_hits_cap() {
        let x = Tensor::vector(&[0.25, 0.5]);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_direct_formula() {
        // MSE = 0.01 at peak 1 → 20 dB.
        let x = Tensor::from_real(&[4], vec![0.1; 4]).unwrap();
        let r = Tensor::from_real(&[4], vec![0.0; 4]).unwrap();
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_constant_offset() {
        let r = standard_normal(&[16, 16], Dtype::Real64, &mut RngSeed(1).rng());
        let ones = Tensor::from_real(&[16, 16], vec![0.1; 256]).unwrap();
        let x = r.add(&ones).unwrap();
        assert!((psnr(&x, &r, 1.0).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn psnr_is_shift_invariant() {
        let r = standard_normal(&[8, 8], Dtype::Real64, &mut RngSeed(2).rng());
        let x = gaussian_sample_seeded(&r, 0.05, RngSeed(3)).unwrap();
        let shift = Tensor::from_real(&[8, 8], vec![0.37; 64]).unwrap();
        let a = psnr(&x, &r, 1.0).unwrap();
        let b = psnr(&x.add(&shift).unwrap(), &r.add(&shift).unwrap(), 1.0).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn ssim_identical_images_are_one() {
        let x = standard_normal(&[16, 16], Dtype::Real64, &mut RngSeed(4).rng());
        let s = ssim(&x, &x, &SsimParams::with_peak(1.0)).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_anticorrelation_is_negative() {
        // Checkerboard: window means vanish (alternating weights cancel), so
        // the negative covariance of x vs −x drives the score below zero.
        let mut data = vec![0.0; 256];
        for i in 0..16 {
            for j in 0..16 {
                data[i * 16 + j] = if (i + j) % 2 == 0 { 0.5 } else { -0.5 };
            }
        }
        let x = Tensor::from_real(&[16, 16], data).unwrap();
        let neg = x.scale(-1.0);
        let s = ssim(&x, &neg, &SsimParams::with_peak(1.0)).unwrap();
        assert!(s < 0.0, "ssim {s}");
    }

    #[test]
    fn ssim_is_symmetric() {
        let x = standard_normal(&[14, 14], Dtype::Real64, &mut RngSeed(6).rng());
        let y = gaussian_sample_seeded(&x, 0.2, RngSeed(7)).unwrap();
        let p = SsimParams::with_peak(1.0);
        let a = ssim(&x, &y, &p).unwrap();
        let b = ssim(&y, &x, &p).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_undersized_images() {
        let x = standard_normal(&[8, 8], Dtype::Real64, &mut RngSeed(8).rng());
        assert!(ssim(&x, &x, &SsimParams::with_peak(1.0)).is_err());
    }

    #[test]
    fn ssim_matches_scalar_loop_reference() {
        let x = standard_normal(&[32, 32], Dtype::Real64, &mut RngSeed(9).rng());
        let y = gaussian_sample_seeded(&x, 0.3, RngSeed(10)).unwrap();
        let p = SsimParams::with_peak(1.0);
        let fast = ssim(&x, &y, &p).unwrap();
        let slow = reference_ssim(
            x.as_real().unwrap(),
            y.as_real().unwrap(),
            32,
            32,
            &p,
        );
        assert!((fast - slow).abs() < 1e-8, "{fast} vs {slow}");
    }

    /// Independent scalar-loop SSIM: one full window per center, no reuse.
    fn reference_ssim(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
        let win = p.window;
        let wts = gaussian_window(win, p.sigma);
        let c1 = (p.k1 * p.peak).powi(2);
        let c2 = (p.k2 * p.peak).powi(2);
        let mut acc = 0.0;
        let mut count = 0;
        for ci in 0..h - win + 1 {
            for cj in 0..w - win + 1 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..win {
                    for b in 0..win {
                        let wt = wts[a] * wts[b];
                        let xv = x[(ci + a) * w + cj + b];
                        let yv = y[(ci + a) * w + cj + b];
                        mx += wt * xv;
                        my += wt * yv;
                        sxx += wt * xv * xv;
                        syy += wt * yv * yv;
                        sxy += wt * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn psnr_decreases_with_noise_level() {
        let r = standard_normal(&[24, 24], Dtype::Real64, &mut RngSeed(11).rng());
        let mut last = f64::INFINITY;
        for (i, std) in [0.01, 0.03, 0.1, 0.3].iter().enumerate() {
            // Average over 20 trials to make the ordering statistical, not
            // a single-draw fluke.
            let mut acc = 0.0;
            for trial in 0..20 {
                let x = gaussian_sample_seeded(&r, *std, RngSeed(100 + 20 * i as u64 + trial)).unwrap();
                acc += psnr(&x, &r, 1.0).unwrap();
            }
            let mean = acc / 20.0;
            assert!(mean < last, "psnr {mean} did not drop at std {std}");
            last = mean;
        }
    }

    #[test]
    fn magnitude_examples() {
        let x = Tensor::from_complex(&[1], vec![Complex64::new(3.0, 4.0)]).unwrap();
        assert_eq!(magnitude(&x).unwrap().as_real().unwrap(), &[5.0]);
        let z = Tensor::zeros(&[3], Dtype::Complex128);
        assert_eq!(magnitude(&z).unwrap(), Tensor::zeros(&[3], Dtype::Real64));
        // modulus preserves the 2-norm
        let v = standard_normal(&[7, 3], Dtype::Complex128, &mut RngSeed(12).rng());
        assert!((norm2(&magnitude(&v).unwrap()) - norm2(&v)).abs() < 1e-12);
    }

    #[test]
    fn magnitude_rejects_real_input() {
        let x = Tensor::vector(&[1.0]);
        assert!(magnitude(&x).is_err());
    }

    #[test]
    fn compare_handles_complex_with_reference_peak() {
        let r = standard_normal(&[16, 16], Dtype::Complex128, &mut RngSeed(13).rng());
        let x = gaussian_sample_seeded(&r, 0.01, RngSeed(14)).unwrap();
        let rep = compare_to_reference(&x, &r).unwrap();
        assert!(rep.psnr_db.is_finite());
        assert!((-1.0..=1.0).contains(&rep.ssim));
    }
}
