//! The plug-and-play ADMM outer loop with noise injection and Nesterov
//! momentum, iterated in reverse index order from N−1 down to 0:
//!
//! ```text
//! z_n = (AᴴA + ρ_{n+1}I)⁻¹ (Aᴴy + ρ_{n+1}(x̂_{n+1} − û_{n+1}))   data fidelity
//! ν_n ~ N(z_n + û_{n+1}, s²_{n+1} I)                             noise injection
//! x_n = D(ν_n, t_{n+1})                                          denoiser prox
//! u_n = û_{n+1} + z_n − x_n                                      dual update
//! x̂_n = x_n + β_{n+1}(x_n − x_{n+1})                             primal momentum
//! û_n = u_n + β_{n+1}(u_n − u_{n+1})                             dual momentum
//! ```
//!
//! All four state tensors start at zero. With injection and momentum
//! disabled the recursion is exactly textbook PnP-ADMM.

use crate::denoise::Denoiser;
use crate::error::{Error, Result};
use crate::linsolve::{build_zupdate_rhs, cg_solve, CgConfig};
use crate::metrics;
use crate::ops::LinearOp;
use crate::tensor::{axpy, gaussian_sample, norm2, RngSeed, Tensor};

use crate::streams::INJECTION as STREAM_INJECTION;

/// Per-iteration parameter sequences. Entry `i` of `rho`/`beta`/`noise_std`
/// is consumed at loop index `n = i` (the algorithm's index i+1), so the
/// first executed iteration (n = N−1) reads the *last* entries and the final
/// one (n = 0) reads entry 0. `time_points` has N+1 entries with
/// `time_points[N]` the largest.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub time_points: Vec<f64>,
    pub rho: Vec<f64>,
    pub beta: Vec<f64>,
    /// Injected-noise standard deviations; `None` defaults each entry to the
    /// matching time point (the schedule the sampler itself uses).
    pub noise_std: Option<Vec<f64>>,
}

impl Schedule {
    pub fn new(
        time_points: Vec<f64>,
        rho: Vec<f64>,
        beta: Vec<f64>,
        noise_std: Option<Vec<f64>>,
    ) -> Result<Schedule> {
        let s = Schedule {
            time_points,
            rho,
            beta,
            noise_std,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant parameters for all N iterations.
    pub fn constant(n: usize, t: f64, rho: f64, beta: f64) -> Result<Schedule> {
        Schedule::new(vec![t; n + 1], vec![rho; n], vec![beta; n], None)
    }

    /// Values laid out so that execution step j (j = 0 first) sees
    /// `start · ratio^j`.
    pub fn geometric_by_execution(n: usize, start: f64, ratio: f64) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for j in 0..n {
            v[n - 1 - j] = start * ratio.powi(j as i32);
        }
        v
    }

    pub fn n_steps(&self) -> usize {
        self.rho.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rho.len();
        if n == 0 {
            return Err(Error::InvalidParameter("schedule must have N ≥ 1".into()));
        }
        if self.time_points.len() != n + 1 {
            return Err(Error::InvalidParameter(format!(
                "time_points needs N+1 = {} entries, got {}",
                n + 1,
                self.time_points.len()
            )));
        }
        if self.beta.len() != n {
            return Err(Error::InvalidParameter(format!(
                "beta needs N = {n} entries, got {}",
                self.beta.len()
            )));
        }
        if let Some(s) = &self.noise_std {
            if s.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "noise_std needs N = {n} entries, got {}",
                    s.len()
                )));
            }
            if s.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidParameter(
                    "noise_std entries must be ≥ 0".into(),
                ));
            }
        }
        if self.rho.iter().any(|r| *r <= 0.0) {
            return Err(Error::InvalidParameter(
                "all penalty parameters rho must be > 0".into(),
            ));
        }
        if self.beta.iter().any(|b| *b < 0.0) {
            return Err(Error::InvalidParameter(
                "momentum coefficients beta must be ≥ 0".into(),
            ));
        }
        if self.time_points.iter().any(|t| *t < 0.0) {
            return Err(Error::InvalidParameter(
                "time points must be ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Parameters consumed at loop index n (indices n+1 of the recursion).
    pub fn rho_at(&self, n: usize) -> f64 {
        self.rho[n]
    }

    pub fn beta_at(&self, n: usize) -> f64 {
        self.beta[n]
    }

    pub fn time_at(&self, n: usize) -> f64 {
        self.time_points[n + 1]
    }

    pub fn noise_std_at(&self, n: usize) -> f64 {
        match &self.noise_std {
            Some(s) => s[n],
            None => self.time_points[n + 1],
        }
    }

    /// Whether the injected-noise magnitudes never grow over execution order.
    pub fn noise_is_diminishing(&self) -> bool {
        let n = self.n_steps();
        (1..n).all(|i| self.noise_std_at(i - 1) <= self.noise_std_at(i) + 1e-15)
    }

    /// Total injected-noise budget Σ s_n over execution order.
    pub fn noise_budget(&self) -> f64 {
        (0..self.n_steps()).map(|n| self.noise_std_at(n)).sum()
    }
}

/// How much per-iteration state to retain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    /// Scalar records plus full (z, x, u) snapshots per iteration.
    Full,
    /// Scalar records only (low-memory mode).
    ScalarsOnly,
}

/// One outer iteration's scalar record.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterRecord {
    /// Reverse index n of this iteration (N−1 first, 0 last).
    pub n: usize,
    /// ‖z_n − z_prev‖ with z_prev = 0 before the first iteration.
    pub dz: f64,
    /// ‖x_n − x_{n+1}‖.
    pub dx: f64,
    /// ‖u_n − u_{n+1}‖.
    pub du: f64,
    /// Realized injected-noise norm ‖η‖ (0 when injection is off).
    pub eta_norm: f64,
    /// Monitoring quantity ½‖y − A x_n‖² (no monotonicity implied).
    pub objective: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    pub cg_converged: bool,
    /// ‖D(z+û) − x_{n+1}‖ along this trajectory, recorded when the
    /// noise-free shadow evaluation is enabled.
    pub shadow_dx0: Option<f64>,
    /// ‖z − D(z+û)‖ along this trajectory (shadow evaluation).
    pub shadow_du0: Option<f64>,
}

/// Echo of the pieces of a run configuration that paired-run checks compare.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEcho {
    pub schedule: Schedule,
    pub noise_injection: bool,
    pub momentum: bool,
    pub seed: RngSeed,
    pub denoiser_kind: String,
}

/// Full solver state after a run.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Tensor,
    pub z: Tensor,
    pub u: Tensor,
    pub x_hat: Tensor,
    pub u_hat: Tensor,
    pub records: Vec<IterRecord>,
    /// (z, x, u) snapshots per iteration when history is Full.
    pub iterates: Option<Vec<(Tensor, Tensor, Tensor)>>,
    pub denoiser_calls: usize,
    pub linear_solves: usize,
    /// Diagnostic-only denoiser evaluations (noise-free shadow), not counted
    /// as algorithm NFE.
    pub shadow_denoiser_calls: usize,
    /// Total scalar count P of the signal domain.
    pub signal_scalars: usize,
    pub config_echo: ConfigEcho,
}

/// Engine-level run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub operator: LinearOp,
    pub denoiser: Denoiser,
    pub schedule: Schedule,
    pub cg: CgConfig,
    pub seed: RngSeed,
    pub enable_noise_injection: bool,
    pub enable_momentum: bool,
    /// Evaluate the denoiser once more per iteration at the noise-free input
    /// and record the residual decomposition along this trajectory.
    pub record_noise_free_shadow: bool,
    /// If Δ_k > 10·Δ_{k−1}, zero the momentum for the next extrapolation.
    /// Off by default to stay faithful to the plain recursion.
    pub momentum_divergence_guard: bool,
    pub history: HistoryMode,
}

impl RunConfig {
    pub fn new(
        operator: LinearOp,
        denoiser: Denoiser,
        schedule: Schedule,
        seed: RngSeed,
    ) -> RunConfig {
        RunConfig {
            operator,
            denoiser,
            schedule,
            cg: CgConfig::default(),
            seed,
            enable_noise_injection: true,
            enable_momentum: true,
            record_noise_free_shadow: false,
            momentum_divergence_guard: false,
            history: HistoryMode::Full,
        }
    }

    pub fn with_flags(mut self, noise_injection: bool, momentum: bool) -> RunConfig {
        self.enable_noise_injection = noise_injection;
        self.enable_momentum = momentum;
        self
    }

    fn echo(&self) -> ConfigEcho {
        ConfigEcho {
            schedule: self.schedule.clone(),
            noise_injection: self.enable_noise_injection,
            momentum: self.enable_momentum,
            seed: self.seed,
            denoiser_kind: self.denoiser.kind_name().to_string(),
        }
    }
}

fn ensure_finite(t: &Tensor, step: &str, n: usize) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{step} at iteration n={n}")))
    }
}

/// Execute the solver on measurement `y`, returning the final estimate x_0
/// and the full state.
pub fn run(cfg: &RunConfig, y: &Tensor) -> Result<(Tensor, SolverState)> {
    cfg.schedule.validate()?;
    cfg.cg.validate()?;
    let op = &cfg.operator;
    if y.shape() != op.output_shape() {
        return Err(Error::ShapeMismatch {
            expected: op.output_shape(),
            got: y.shape().to_vec(),
        });
    }
    let n_steps = cfg.schedule.n_steps();
    let in_shape = op.input_shape();
    let dtype = op.dtype();

    let mut x = Tensor::zeros(&in_shape, dtype);
    let mut u = Tensor::zeros(&in_shape, dtype);
    let mut x_hat = x.clone();
    let mut u_hat = u.clone();
    let mut z = Tensor::zeros(&in_shape, dtype);

    let mut inj_rng = cfg.seed.stream(STREAM_INJECTION);
    let mut records: Vec<IterRecord> = Vec::with_capacity(n_steps);
    let mut iterates = match cfg.history {
        HistoryMode::Full => Some(Vec::with_capacity(n_steps)),
        HistoryMode::ScalarsOnly => None,
    };
    let mut denoiser_calls = 0;
    let mut linear_solves = 0;
    let mut shadow_calls = 0;
    let mut guard_tripped = false;

    for n in (0..n_steps).rev() {
        let rho = cfg.schedule.rho_at(n);
        let t = cfg.schedule.time_at(n);
        let beta = if cfg.enable_momentum && !guard_tripped {
            cfg.schedule.beta_at(n)
        } else {
            0.0
        };

        // 3: data fidelity
        let rhs = build_zupdate_rhs(op, y, rho, &x_hat, &u_hat)?;
        let (z_new, cg_report) = cg_solve(op, rho, &rhs, &z, &cfg.cg)?;
        linear_solves += 1;
        ensure_finite(&z_new, "data-fidelity update", n)?;

        // 4: noise injection
        let clean_point = z_new.add(&u_hat)?;
        let s = cfg.schedule.noise_std_at(n);
        let (nu, eta_norm) = if cfg.enable_noise_injection && s > 0.0 {
            let eta = gaussian_sample(&Tensor::zeros(&in_shape, dtype), s, &mut inj_rng)?;
            (clean_point.add(&eta)?, norm2(&eta))
        } else {
            (clean_point.clone(), 0.0)
        };
        ensure_finite(&nu, "noise injection", n)?;

        // 5: denoiser proximal step
        let x_new = cfg.denoiser.denoise(&nu, t)?;
        denoiser_calls += 1;
        ensure_finite(&x_new, "denoiser step", n)?;

        // Optional shadow evaluation at the noise-free point, along this
        // same trajectory, for the residual-decomposition diagnostics.
        let (shadow_dx0, shadow_du0) = if cfg.record_noise_free_shadow {
            let x0s = cfg.denoiser.denoise(&clean_point, t)?;
            shadow_calls += 1;
            (
                Some(norm2(&x0s.sub(&x)?)),
                Some(norm2(&z_new.sub(&x0s)?)),
            )
        } else {
            (None, None)
        };

        // 6: dual update
        let u_new = u_hat.add(&z_new.sub(&x_new)?)?;
        ensure_finite(&u_new, "dual update", n)?;

        let dz = norm2(&z_new.sub(&z)?);
        let dx = norm2(&x_new.sub(&x)?);
        let du = norm2(&u_new.sub(&u)?);

        if cfg.momentum_divergence_guard {
            if let Some(prev) = records.last() {
                let prev_delta = prev.dz + prev.dx + prev.du;
                guard_tripped = dz + dx + du > 10.0 * prev_delta;
            }
        }

        // 7–8: momentum extrapolation; β = 0 collapses to plain copies.
        let x_hat_new = if beta == 0.0 {
            x_new.clone()
        } else {
            axpy(beta, &x_new.sub(&x)?, &x_new)?
        };
        let u_hat_new = if beta == 0.0 {
            u_new.clone()
        } else {
            axpy(beta, &u_new.sub(&u)?, &u_new)?
        };
        ensure_finite(&x_hat_new, "primal momentum update", n)?;
        ensure_finite(&u_hat_new, "dual momentum update", n)?;

        let residual = y.sub(&op.apply(&x_new)?)?;
        let objective = 0.5 * norm2(&residual).powi(2);

        records.push(IterRecord {
            n,
            dz,
            dx,
            du,
            eta_norm,
            objective,
            cg_iterations: cg_report.iterations_used,
            cg_residual: cg_report.final_residual_norm,
            cg_converged: cg_report.converged,
            shadow_dx0,
            shadow_du0,
        });
        if let Some(snaps) = iterates.as_mut() {
            snaps.push((z_new.clone(), x_new.clone(), u_new.clone()));
        }

        z = z_new;
        x = x_new;
        u = u_new;
        x_hat = x_hat_new;
        u_hat = u_hat_new;
    }

    let state = SolverState {
        x: x.clone(),
        z,
        u,
        x_hat,
        u_hat,
        records,
        iterates,
        denoiser_calls,
        linear_solves,
        shadow_denoiser_calls: shadow_calls,
        signal_scalars: Tensor::zeros(&in_shape, dtype).scalar_count(),
        config_echo: cfg.echo(),
    };
    Ok((x, state))
}

/// Combined per-iteration residuals Δ_k = (‖Δz‖ + ‖Δx‖ + ‖Δu‖)/√P.
pub fn residual_trace(state: &SolverState) -> Result<Vec<f64>> {
    if state.records.is_empty() {
        return Err(Error::InvalidParameter(
            "run history is empty; nothing to trace".into(),
        ));
    }
    let scale = 1.0 / (state.signal_scalars as f64).sqrt();
    Ok(state
        .records
        .iter()
        .map(|r| (r.dz + r.dx + r.du) * scale)
        .collect())
}

/// Per-step residual-decomposition diagnostics along the noisy trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StrictModeReport {
    /// Steps where ‖Δx‖ ≤ L‖η‖ + ‖Δx⁰‖ failed (with the inflated L).
    pub x_violations: usize,
    /// Steps where ‖Δu‖ ≤ L‖η‖ + ‖Δu⁰‖ failed.
    pub u_violations: usize,
    pub steps_checked: usize,
}

/// Outcome of the noise-injection convergence-bound check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundReport {
    /// ΣΔ^η − ΣΔ^0 the verdict uses: the shared-evaluation-path value when
    /// the noisy run recorded it, otherwise the paired-trajectory value.
    pub lhs: f64,
    /// ΣΔ^η − ΣΔ^0 across the two independent runs. The per-iteration
    /// analysis does not cover diverging trajectories, so this value may
    /// exceed the bound; it is reported for context.
    pub lhs_paired: f64,
    /// ΣΔ^η − ΣΔ^0 with the noise-free decomposition evaluated along the
    /// noisy run's own trajectory (the quantity the analysis bounds).
    pub lhs_strict: Option<f64>,
    /// (2·L/√P)·Σ‖η_k‖ with the effective (inflated) Lipschitz estimate.
    pub rhs: f64,
    pub satisfied: bool,
    pub tolerance: f64,
    /// Raw sampled estimate before inflation.
    pub l_hat: f64,
    /// l_hat after the lower-bound inflation factor.
    pub l_effective: f64,
    pub eta_norm_sum: f64,
    pub noise_schedule_diminishing: bool,
    /// Present when the noisy run recorded the noise-free shadow.
    pub strict: Option<StrictModeReport>,
}

/// Inflation applied to the sampled Lipschitz lower bound before it enters
/// the bound (the estimate can only undershoot the true constant).
pub const DEFAULT_L_INFLATION: f64 = 1.1;

/// Check ΣΔ^η − ΣΔ^0 ≤ (2L/√P)·Σ‖η_k‖ across a paired noisy/noise-free run.
///
/// Both runs must share the schedule, momentum flag, seed, and denoiser;
/// only the injection flag may differ. When the noisy run carried shadow
/// records, the per-step decomposition along its own trajectory is also
/// verified (strict mode) and reported.
pub fn check_noise_injection_bound(
    run_with_noise: &SolverState,
    run_without_noise: &SolverState,
    l_hat: f64,
    l_inflation: f64,
    tolerance: f64,
) -> Result<BoundReport> {
    let a = &run_with_noise.config_echo;
    let b = &run_without_noise.config_echo;
    if a.schedule != b.schedule
        || a.momentum != b.momentum
        || a.seed != b.seed
        || a.denoiser_kind != b.denoiser_kind
    {
        return Err(Error::InvalidParameter(
            "paired runs differ beyond the injection flag".into(),
        ));
    }
    if run_without_noise.records.iter().any(|r| r.eta_norm != 0.0) {
        return Err(Error::InvalidParameter(
            "the reference run has nonzero injected noise".into(),
        ));
    }
    if run_with_noise.records.len() != run_without_noise.records.len() {
        return Err(Error::InvalidParameter(
            "paired runs have different iteration counts".into(),
        ));
    }

    let noisy_trace = residual_trace(run_with_noise)?;
    let clean_trace = residual_trace(run_without_noise)?;
    let lhs_paired: f64 = noisy_trace.iter().sum::<f64>() - clean_trace.iter().sum::<f64>();
    let eta_norm_sum: f64 = run_with_noise.records.iter().map(|r| r.eta_norm).sum();
    let p = run_with_noise.signal_scalars as f64;
    let l_effective = l_hat * l_inflation;
    let rhs = 2.0 * l_effective / p.sqrt() * eta_norm_sum;

    let has_shadow = run_with_noise
        .records
        .iter()
        .all(|r| r.shadow_dx0.is_some() && r.shadow_du0.is_some());
    let (lhs_strict, strict) = if has_shadow {
        let mut x_violations = 0;
        let mut u_violations = 0;
        let mut strict_sum = 0.0;
        for r in &run_with_noise.records {
            let slack = l_effective * r.eta_norm + tolerance;
            let dx0 = r.shadow_dx0.expect("checked");
            let du0 = r.shadow_du0.expect("checked");
            if r.dx > dx0 + slack {
                x_violations += 1;
            }
            if r.du > du0 + slack {
                u_violations += 1;
            }
            strict_sum += (r.dx - dx0) + (r.du - du0);
        }
        (
            Some(strict_sum / p.sqrt()),
            Some(StrictModeReport {
                x_violations,
                u_violations,
                steps_checked: run_with_noise.records.len(),
            }),
        )
    } else {
        (None, None)
    };

    let lhs = lhs_strict.unwrap_or(lhs_paired);
    Ok(BoundReport {
        lhs,
        lhs_paired,
        lhs_strict,
        rhs,
        satisfied: lhs <= rhs + tolerance,
        tolerance,
        l_hat,
        l_effective,
        eta_norm_sum,
        noise_schedule_diminishing: a.schedule.noise_is_diminishing(),
        strict,
    })
}

/// One row of the 2×2 ablation grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub noise_injection: bool,
    pub momentum: bool,
    pub psnr_db: f64,
    pub ssim: f64,
    pub denoiser_calls: usize,
    pub linear_solves: usize,
}

/// Run the four {noise off/on} × {momentum off/on} variants with otherwise
/// identical configuration and seeds. Rows are ordered (✗✗, ✓✗, ✗✓, ✓✓).
pub fn ablation_grid(
    base_cfg: &RunConfig,
    y: &Tensor,
    x_true: &Tensor,
) -> Result<Vec<AblationRow>> {
    let variants = [(false, false), (true, false), (false, true), (true, true)];
    let mut rows = Vec::with_capacity(4);
    for (noise, momentum) in variants {
        let cfg = base_cfg.clone().with_flags(noise, momentum);
        let (x, state) = run(&cfg, y)?;
        let m = metrics::compare_to_reference(&x, x_true)?;
        rows.push(AblationRow {
            noise_injection: noise,
            momentum,
            psnr_db: m.psnr_db,
            ssim: m.ssim,
            denoiser_calls: state.denoiser_calls,
            linear_solves: state.linear_solves,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::MaskOp;
    use crate::tensor::{standard_normal, Dtype};

    fn identity_op(shape: &[usize]) -> LinearOp {
        LinearOp::Mask(MaskOp::all_true(shape, Dtype::Real64))
    }

    #[test]
    fn single_step_hand_trace() {
        // N=1, identity operator/denoiser, β=0, s=0, ρ=1, y=[2]:
        // z = (Aᵀy + ρ·0)/(1+ρ) = [1]; x = denoise(z + 0) = [1].
        let op = identity_op(&[1]);
        let schedule = Schedule::new(vec![0.0, 1.0], vec![1.0], vec![0.0], Some(vec![0.0])).unwrap();
        let cfg = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(1))
            .with_flags(false, false);
        let y = Tensor::vector(&[2.0]);
        let (x, state) = run(&cfg, &y).unwrap();
        assert!((x.as_real().unwrap()[0] - 1.0).abs() < 1e-12);
        assert_eq!(state.denoiser_calls, 1);
        assert_eq!(state.linear_solves, 1);
    }

    #[test]
    fn dual_update_identity_holds_exactly() {
        // u_n − û_{n+1} − z_n + x_n = 0 at every iteration. With momentum on,
        // û_{n+1} must be recomputed from the stored iterates.
        let op = LinearOp::Mask(MaskOp::random(&[8, 8], Dtype::Real64, 0.4, RngSeed(3)).unwrap());
        let y = standard_normal(&[8, 8], Dtype::Real64, &mut RngSeed(4).rng());
        let schedule = Schedule::new(
            vec![0.05, 0.1, 0.2, 0.4, 0.8],
            vec![0.7; 4],
            vec![0.5; 4],
            None,
        )
        .unwrap();
        let cfg = RunConfig::new(
            op,
            Denoiser::TvProx { strength_scale: 0.3 },
            schedule,
            RngSeed(5),
        );
        let (_, state) = run(&cfg, &y).unwrap();
        let snaps = state.iterates.as_ref().unwrap();
        // Reconstruct û going forward: û_N = 0.
        let mut u_prev = Tensor::zeros(&[8, 8], Dtype::Real64);
        let mut u_hat_prev = Tensor::zeros(&[8, 8], Dtype::Real64);
        for (k, (z_n, x_n, u_n)) in snaps.iter().enumerate() {
            // Bit-exact in the form the update computes it...
            let expected = u_hat_prev.add(&z_n.sub(x_n).unwrap()).unwrap();
            assert_eq!(&expected, u_n, "step {k}: dual update identity broken");
            // ...and to machine precision under algebraic rearrangement.
            let rearranged = u_n
                .sub(&u_hat_prev)
                .unwrap()
                .sub(z_n)
                .unwrap()
                .add(x_n)
                .unwrap();
            let scale = norm2(u_n).max(norm2(z_n)).max(1.0);
            assert!(norm2(&rearranged) <= 1e-14 * scale, "step {k}");
            let beta = state.config_echo.schedule.beta_at(state.records[k].n);
            u_hat_prev = if beta == 0.0 {
                u_n.clone()
            } else {
                axpy(beta, &u_n.sub(&u_prev).unwrap(), u_n).unwrap()
            };
            u_prev = u_n.clone();
        }
    }

    #[test]
    fn beta_zero_collapses_hats() {
        let op = identity_op(&[4, 4]);
        let y = standard_normal(&[4, 4], Dtype::Real64, &mut RngSeed(7).rng());
        let schedule = Schedule::constant(3, 0.2, 1.0, 0.0).unwrap();
        let cfg = RunConfig::new(
            op,
            Denoiser::GaussianSmooth { strength_scale: 1.0 },
            schedule,
            RngSeed(8),
        )
        .with_flags(true, true); // momentum enabled but all β = 0
        let (_, state) = run(&cfg, &y).unwrap();
        assert_eq!(state.x, state.x_hat);
        assert_eq!(state.u, state.u_hat);
    }

    #[test]
    fn injection_disabled_consumes_no_noise() {
        let op = identity_op(&[4, 4]);
        let y = standard_normal(&[4, 4], Dtype::Real64, &mut RngSeed(9).rng());
        let schedule = Schedule::constant(2, 0.3, 1.0, 0.0).unwrap();
        let cfg = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(10))
            .with_flags(false, false);
        let (_, state) = run(&cfg, &y).unwrap();
        assert!(state.records.iter().all(|r| r.eta_norm == 0.0));
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let op = LinearOp::Mask(MaskOp::random(&[6, 6], Dtype::Real64, 0.5, RngSeed(11)).unwrap());
        let y = standard_normal(&[6, 6], Dtype::Real64, &mut RngSeed(12).rng());
        let schedule = Schedule::constant(4, 0.25, 0.8, 0.4).unwrap();
        let cfg = RunConfig::new(
            op,
            Denoiser::TvProx { strength_scale: 0.5 },
            schedule,
            RngSeed(13),
        );
        let (x1, _) = run(&cfg, &y).unwrap();
        let (x2, _) = run(&cfg, &y).unwrap();
        assert_eq!(x1, x2);
    }

    #[test]
    fn nfe_accounting_matches_n() {
        for n in [1, 2, 4, 8] {
            let op = identity_op(&[4, 4]);
            let y = standard_normal(&[4, 4], Dtype::Real64, &mut RngSeed(20).rng());
            let schedule = Schedule::constant(n, 0.2, 1.0, 0.1).unwrap();
            let cfg = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(21));
            let (_, state) = run(&cfg, &y).unwrap();
            assert_eq!(state.denoiser_calls, n);
            assert_eq!(state.linear_solves, n);
            assert_eq!(state.records.len(), n);
        }
    }

    #[test]
    fn residual_trace_matches_definition() {
        let op = identity_op(&[5, 5]);
        let y = standard_normal(&[5, 5], Dtype::Real64, &mut RngSeed(30).rng());
        let schedule = Schedule::constant(3, 0.2, 1.0, 0.2).unwrap();
        let cfg = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(31));
        let (_, state) = run(&cfg, &y).unwrap();
        let trace = residual_trace(&state).unwrap();
        let p = state.signal_scalars as f64;
        for (r, d) in state.records.iter().zip(&trace) {
            let expect = (r.dz + r.dx + r.du) / p.sqrt();
            assert!((d - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn residual_trace_recomputes_from_iterates() {
        let op = LinearOp::Mask(MaskOp::random(&[6, 6], Dtype::Real64, 0.5, RngSeed(32)).unwrap());
        let y = standard_normal(&[6, 6], Dtype::Real64, &mut RngSeed(33).rng());
        let schedule = Schedule::constant(4, 0.3, 0.9, 0.3).unwrap();
        let cfg = RunConfig::new(
            op,
            Denoiser::GaussianSmooth { strength_scale: 0.8 },
            schedule,
            RngSeed(34),
        );
        let (_, state) = run(&cfg, &y).unwrap();
        let trace = residual_trace(&state).unwrap();
        let snaps = state.iterates.as_ref().unwrap();
        let scale = 1.0 / (state.signal_scalars as f64).sqrt();
        let zero = Tensor::zeros(&[6, 6], Dtype::Real64);
        let mut prev = (zero.clone(), zero.clone(), zero);
        for (k, snap) in snaps.iter().enumerate() {
            let dz = norm2(&snap.0.sub(&prev.0).unwrap());
            let dx = norm2(&snap.1.sub(&prev.1).unwrap());
            let du = norm2(&snap.2.sub(&prev.2).unwrap());
            let expect = (dz + dx + du) * scale;
            assert!(
                (trace[k] - expect).abs() <= 1e-12 * expect.max(1.0),
                "step {k}: {} vs {expect}",
                trace[k]
            );
            prev = snap.clone();
        }
    }

    #[test]
    fn constant_iterates_have_zero_residual_afterwards() {
        // Zero measurement with identity operator and denoiser: the zero
        // state is already the fixed point, so every Δ is zero.
        let op = identity_op(&[3, 3]);
        let y = Tensor::zeros(&[3, 3], Dtype::Real64);
        let schedule = Schedule::constant(4, 0.0, 1.0, 0.0).unwrap();
        let cfg = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(36))
            .with_flags(false, false);
        let (_, state) = run(&cfg, &y).unwrap();
        let trace = residual_trace(&state).unwrap();
        for d in &trace {
            assert_eq!(*d, 0.0, "trace {trace:?}");
        }
    }

    #[test]
    fn bound_check_zero_noise_trivially_satisfied() {
        let op = identity_op(&[4, 4]);
        let y = standard_normal(&[4, 4], Dtype::Real64, &mut RngSeed(40).rng());
        let schedule = Schedule::new(
            vec![0.1, 0.2, 0.3],
            vec![1.0; 2],
            vec![0.0; 2],
            Some(vec![0.0; 2]),
        )
        .unwrap();
        let base = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(41));
        let noisy_cfg = base.clone().with_flags(true, false);
        let clean_cfg = base.with_flags(false, false);
        let (_, noisy) = run(&noisy_cfg, &y).unwrap();
        let (_, clean) = run(&clean_cfg, &y).unwrap();
        let report = check_noise_injection_bound(&noisy, &clean, 1.0, 1.0, 1e-12).unwrap();
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert!(report.satisfied);
    }

    #[test]
    fn bound_check_identity_denoiser_mask_operator() {
        let op = LinearOp::Mask(MaskOp::random(&[8, 8], Dtype::Real64, 0.3, RngSeed(42)).unwrap());
        let y = standard_normal(&[8, 8], Dtype::Real64, &mut RngSeed(43).rng());
        let n = 8;
        let noise = Schedule::geometric_by_execution(n, 0.5, 0.6);
        let schedule = Schedule::new(
            vec![0.1; n + 1],
            vec![1.0; n],
            vec![0.0; n],
            Some(noise),
        )
        .unwrap();
        let base = RunConfig::new(op, Denoiser::Identity, schedule, RngSeed(44));
        let mut noisy_cfg = base.clone().with_flags(true, false);
        noisy_cfg.record_noise_free_shadow = true;
        let clean_cfg = base.with_flags(false, false);
        let (_, noisy) = run(&noisy_cfg, &y).unwrap();
        let (_, clean) = run(&clean_cfg, &y).unwrap();
        let report =
            check_noise_injection_bound(&noisy, &clean, 1.0, DEFAULT_L_INFLATION, 1e-9).unwrap();
        assert!(report.satisfied, "{report:?}");
        assert!(report.eta_norm_sum.is_finite());
        assert!(report.noise_schedule_diminishing);
        let strict = report.strict.expect("shadow was recorded");
        assert_eq!(strict.x_violations, 0, "{strict:?}");
        assert_eq!(strict.u_violations, 0, "{strict:?}");
    }

    #[test]
    fn constant_noise_schedule_flagged_non_diminishing() {
        let schedule = Schedule::new(
            vec![0.1; 5],
            vec![1.0; 4],
            vec![0.0; 4],
            Some(vec![0.7; 4]),
        )
        .unwrap();
        // Constant is non-increasing, hence diminishing in the weak sense.
        assert!(schedule.noise_is_diminishing());
        // A growing schedule is not.
        let growing = Schedule::new(
            vec![0.1; 5],
            vec![1.0; 4],
            vec![0.0; 4],
            Some(vec![0.4, 0.3, 0.2, 0.1]), // grows over execution order
        )
        .unwrap();
        assert!(!growing.noise_is_diminishing());
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        let op = identity_op(&[4, 4]);
        let y = standard_normal(&[4, 4], Dtype::Real64, &mut RngSeed(50).rng());
        let s1 = Schedule::constant(2, 0.1, 1.0, 0.0).unwrap();
        let s2 = Schedule::constant(2, 0.1, 2.0, 0.0).unwrap();
        let cfg1 = RunConfig::new(op.clone(), Denoiser::Identity, s1, RngSeed(51))
            .with_flags(true, false);
        let cfg2 =
            RunConfig::new(op, Denoiser::Identity, s2, RngSeed(51)).with_flags(false, false);
        let (_, a) = run(&cfg1, &y).unwrap();
        let (_, b) = run(&cfg2, &y).unwrap();
        assert!(check_noise_injection_bound(&a, &b, 1.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn ablation_grid_shape_and_first_z_step() {
        let op = LinearOp::Mask(MaskOp::random(&[8, 8], Dtype::Real64, 0.3, RngSeed(60)).unwrap());
        let x_true = standard_normal(&[8, 8], Dtype::Real64, &mut RngSeed(61).rng());
        let y = op.apply(&x_true).unwrap();
        let schedule = Schedule::constant(2, 0.2, 1.0, 0.5).unwrap();
        let cfg = RunConfig::new(
            op,
            Denoiser::TvProx { strength_scale: 0.4 },
            schedule,
            RngSeed(62),
        );
        let rows = ablation_grid(&cfg, &y, &x_true).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(
            rows.iter().map(|r| (r.noise_injection, r.momentum)).collect::<Vec<_>>(),
            vec![(false, false), (true, false), (false, true), (true, true)]
        );
        for r in &rows {
            assert!(r.psnr_db.is_finite());
            assert!(r.ssim.is_finite());
            assert_eq!(r.denoiser_calls, 2);
        }
        // The very first data-fidelity step precedes any noise or momentum
        // effect given zero initialization, so z₀ must agree across variants.
        let mut first_z = Vec::new();
        for (noise, momentum) in [(false, false), (true, false), (false, true), (true, true)] {
            let c = cfg.clone().with_flags(noise, momentum);
            let (_, state) = run(&c, &y).unwrap();
            first_z.push(state.iterates.as_ref().unwrap()[0].0.clone());
        }
        for z in &first_z[1..] {
            assert_eq!(z, &first_z[0]);
        }
    }
}
