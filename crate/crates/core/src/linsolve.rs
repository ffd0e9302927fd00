//! Solvers for the data-fidelity linear system (AᴴA + ρI)z = Aᴴy + ρ(x̂ − û).
//!
//! The system is Hermitian positive definite for any ρ > 0 regardless of how
//! ill-conditioned A is, so plain conjugate gradient applies. For operator
//! kinds whose gram is diagonal in the pixel or frequency domain there is an
//! exact direct solve used as a cross-check.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::ops::{Boundary, LinearOp};
use crate::tensor::{axpy, inner, norm2, Dtype, Tensor};

/// Conjugate-gradient settings for the z-update.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CgConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            max_iters: 30,
            rel_tol: 1e-8,
            abs_tol: 1e-12,
        }
    }
}

impl CgConfig {
    /// Default for multi-coil Fourier systems, which need more iterations.
    pub fn multi_coil() -> Self {
        CgConfig {
            max_iters: 50,
            ..CgConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("cg max_iters must be ≥ 1".into()));
        }
        if self.rel_tol <= 0.0 || self.abs_tol <= 0.0 {
            return Err(Error::InvalidParameter(
                "cg tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgReport {
    pub iterations_used: usize,
    pub final_residual_norm: f64,
    pub converged: bool,
    /// Residual 2-norm before each iteration, ending with the final one.
    pub residual_history: Vec<f64>,
}

fn gram_plus_rho(op: &LinearOp, rho: f64, v: &Tensor) -> Result<Tensor> {
    axpy(rho, v, &op.gram_apply(v)?)
}

/// Conjugate gradient on (AᴴA + ρI)z = rhs, warm-started from `x0`.
///
/// Converged means the residual dropped below
/// max(rel_tol · min(‖r₀‖, ‖rhs‖), abs_tol), so a converged solution also
/// satisfies the residual bound relative to ‖rhs‖.
pub fn cg_solve(
    op: &LinearOp,
    rho: f64,
    rhs: &Tensor,
    x0: &Tensor,
    cfg: &CgConfig,
) -> Result<(Tensor, CgReport)> {
    cfg.validate()?;
    if rho <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "penalty rho must be > 0, got {rho}"
        )));
    }
    let mut x = x0.clone();
    let mut r = rhs.sub(&gram_plus_rho(op, rho, &x)?)?;
    let mut p = r.clone();
    let mut rs = inner(&r, &r)?.re;
    let rhs_norm = norm2(rhs);
    let r0_norm = rs.sqrt();
    let threshold = (cfg.rel_tol * r0_norm.min(rhs_norm)).max(cfg.abs_tol);

    let mut history = vec![r0_norm];
    let mut iterations = 0;
    while iterations < cfg.max_iters && rs.sqrt() > threshold {
        let mp = gram_plus_rho(op, rho, &p)?;
        let denom = inner(&p, &mp)?.re;
        if !denom.is_finite() || denom <= 0.0 {
            return Err(Error::NonFinite(format!(
                "cg curvature ⟨p, Mp⟩ = {denom}; operator is not positive definite"
            )));
        }
        let alpha = rs / denom;
        x = axpy(alpha, &p, &x)?;
        r = axpy(-alpha, &mp, &r)?;
        let rs_new = inner(&r, &r)?.re;
        if !rs_new.is_finite() {
            return Err(Error::NonFinite("cg residual".into()));
        }
        let beta = rs_new / rs;
        p = axpy(beta, &p, &r)?;
        rs = rs_new;
        iterations += 1;
        history.push(rs.sqrt());
    }

    let final_residual_norm = rs.sqrt();
    Ok((
        x,
        CgReport {
            iterations_used: iterations,
            final_residual_norm,
            converged: final_residual_norm <= threshold,
            residual_history: history,
        },
    ))
}

/// Exact z-update for kinds whose gram diagonalizes: masks (pixel domain),
/// circular blur and single-uniform-coil Fourier subsampling (frequency
/// domain). Errors on any other kind.
pub fn direct_solve_diagonalizable(op: &LinearOp, rho: f64, rhs: &Tensor) -> Result<Tensor> {
    if rho <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "penalty rho must be > 0, got {rho}"
        )));
    }
    match op {
        LinearOp::Mask(m) => {
            // z_i = rhs_i / (m_i + ρ), m_i ∈ {0, 1}
            match rhs.dtype() {
                Dtype::Real64 => {
                    let v = rhs.as_real()?;
                    let out: Vec<f64> = v
                        .iter()
                        .zip(m.keep())
                        .map(|(a, &k)| a / (if k { 1.0 } else { 0.0 } + rho))
                        .collect();
                    Tensor::from_real(rhs.shape(), out)
                }
                Dtype::Complex128 => {
                    let v = rhs.as_complex()?;
                    let out: Vec<Complex64> = v
                        .iter()
                        .zip(m.keep())
                        .map(|(a, &k)| a / (if k { 1.0 } else { 0.0 } + rho))
                        .collect();
                    Tensor::from_complex(rhs.shape(), out)
                }
            }
        }
        LinearOp::Blur(b) if b.boundary() == Boundary::Circular => {
            let shape = op.input_shape();
            if shape.len() != 2 {
                return Err(Error::UnsupportedKind(
                    "direct blur solve supports single-channel images".into(),
                ));
            }
            let (h, w) = (shape[0], shape[1]);
            let fft = crate::ops::Fft2::new(h, w);
            // Frequency response of the separable kernel along each axis.
            let resp_axis = |n: usize| -> Vec<Complex64> {
                let taps = b.taps();
                let r = (taps.len() / 2) as isize;
                (0..n)
                    .map(|f| {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (t, &k) in taps.iter().enumerate() {
                            let off = t as isize - r;
                            let ang =
                                2.0 * std::f64::consts::PI * (f as f64) * (off as f64) / (n as f64);
                            acc += Complex64::from_polar(k, ang);
                        }
                        acc
                    })
                    .collect()
            };
            let rh = resp_axis(h);
            let rw = resp_axis(w);
            let complex_in = rhs.dtype() == Dtype::Complex128;
            let mut data: Vec<Complex64> = if complex_in {
                rhs.as_complex()?.to_vec()
            } else {
                rhs.as_real()?.iter().map(|&x| Complex64::new(x, 0.0)).collect()
            };
            fft.forward_unitary(&mut data);
            for i in 0..h {
                for j in 0..w {
                    let g = (rh[i] * rw[j]).norm_sqr();
                    data[i * w + j] /= g + rho;
                }
            }
            fft.inverse_unitary(&mut data);
            if complex_in {
                Tensor::from_complex(&shape, data)
            } else {
                Tensor::from_real(&shape, data.iter().map(|c| c.re).collect())
            }
        }
        LinearOp::FourierSubsample(f) if f.num_coils() == 1 => {
            let shape = op.input_shape();
            let (h, w) = (shape[0], shape[1]);
            let fft = crate::ops::Fft2::new(h, w);
            let mut data = rhs.as_complex()?.to_vec();
            fft.forward_unitary(&mut data);
            let kept: Vec<bool> = (0..w)
                .map(|j| {
                    // recover the unshifted keep flag for column j
                    let centered = (j + w / 2) % w;
                    f.line_mask_centered()[centered]
                })
                .collect();
            for i in 0..h {
                for j in 0..w {
                    let m = if kept[j] { 1.0 } else { 0.0 };
                    data[i * w + j] /= m + rho;
                }
            }
            fft.inverse_unitary(&mut data);
            Tensor::from_complex(&shape, data)
        }
        other => Err(Error::UnsupportedKind(format!(
            "direct solve not available for {}",
            kind_name(other)
        ))),
    }
}

fn kind_name(op: &LinearOp) -> &'static str {
    match op {
        LinearOp::Mask(_) => "mask",
        LinearOp::Blur(_) => "blur",
        LinearOp::Downsample(_) => "downsample",
        LinearOp::FourierSubsample(_) => "fourier_subsample",
        LinearOp::Dense(_) => "dense",
        LinearOp::Composite(_) => "composite",
    }
}

/// Right-hand side Aᴴy + ρ(x̂ − û) of the z-update.
pub fn build_zupdate_rhs(
    op: &LinearOp,
    y: &Tensor,
    rho: f64,
    xhat: &Tensor,
    uhat: &Tensor,
) -> Result<Tensor> {
    if rho <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "penalty rho must be > 0, got {rho}"
        )));
    }
    let aty = op.adjoint(y)?;
    axpy(rho, &xhat.sub(uhat)?, &aty)
}
