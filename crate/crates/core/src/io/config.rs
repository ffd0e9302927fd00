//! Run configuration: one TOML file describes one experiment. Unknown keys
//! are hard errors; everything a run needs (operator, denoiser, schedule,
//! solver flags, output policy) is in the file, so a config plus a seed is a
//! complete, reproducible description.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::admm::{HistoryMode, RunConfig, Schedule};
use crate::denoise::{Denoiser, Endpoint, ExternalDenoiser, ExternalDenoiserConfig};
use crate::error::{Error, Result};
use crate::linsolve::CgConfig;
use crate::ops::{
    synthetic_coil_maps, BlurOp, Boundary, DownsampleOp, FourierOp, LinearOp, MaskOp,
};
use crate::tensor::{Dtype, RngSeed, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub task: TaskSection,
    pub denoiser: DenoiserSection,
    pub schedule: ScheduleSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Operator kind: mask | blur | downsample | fourier_subsample.
    pub operator: String,
    /// Ground-truth image (PNG or .pnpt tensor).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    /// Directory of ground-truth images (ablation runs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<String>,
    /// Pre-recorded measurement tensor; skips synthesis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<String>,
    /// Signal shape when no image is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<usize>>,
    /// real64 | complex128 (for shape-only tasks).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtype: Option<String>,
    /// Measurement noise level σ_y (default 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    /// Base seed for mask/sampling/measurement/injection randomness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    // mask parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_fraction: Option<f64>,
    /// Explicit mask: 0/1 real tensor (pixel mask, or line mask for the
    /// Fourier operator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,

    // blur parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,

    // downsample parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,

    // fourier-subsample parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceleration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acs_lines: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coils: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserSection {
    /// identity | gaussian_smooth | median | tv_prox | soft_threshold_dct | external
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength_scale: Option<f64>,
    /// External endpoint: `tcp://host:port` or `cmd:prog args…`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub n_steps: usize,
    /// Explicit arrays win over generator rules on conflict.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_points: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg_max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cg_abs_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_injection: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum_divergence_guard: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_shadow: Option<bool>,
    /// full | scalars_only
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<HistoryMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_inflation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_tensor: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub save_image: Option<bool>,
}

impl RunConfigFile {
    pub fn from_str(text: &str) -> Result<RunConfigFile> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<RunConfigFile> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.task.seed.unwrap_or(0)
    }

    pub fn sigma_y(&self) -> f64 {
        self.task.sigma_y.unwrap_or(0.0)
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(
            self.output
                .as_ref()
                .and_then(|o| o.dir.clone())
                .unwrap_or_else(|| "runs".to_string()),
        )
    }

    pub fn label(&self) -> String {
        self.output
            .as_ref()
            .and_then(|o| o.label.clone())
            .unwrap_or_else(|| "run".to_string())
    }

    pub fn save_tensor(&self) -> bool {
        self.output.as_ref().and_then(|o| o.save_tensor).unwrap_or(true)
    }

    pub fn save_image(&self) -> bool {
        self.output.as_ref().and_then(|o| o.save_image).unwrap_or(true)
    }
}

/// `constant(v)` or `geometric(start, ratio)`.
fn parse_rule(rule: &str) -> Result<(String, Vec<f64>)> {
    let rule = rule.trim();
    let open = rule.find('(').ok_or_else(|| {
        Error::Config(format!("rule '{rule}' is not name(args…)"))
    })?;
    if !rule.ends_with(')') {
        return Err(Error::Config(format!("rule '{rule}' is not name(args…)")));
    }
    let name = rule[..open].trim().to_string();
    let args: Vec<f64> = rule[open + 1..rule.len() - 1]
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("rule '{rule}': bad number {s}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok((name, args))
}

/// Expand a rule into an N-entry array laid out in schedule index order
/// (first executed value at index N−1).
fn expand_rule(rule: &str, n: usize) -> Result<Vec<f64>> {
    let (name, args) = parse_rule(rule)?;
    match (name.as_str(), args.as_slice()) {
        ("constant", [v]) => Ok(vec![*v; n]),
        ("geometric", [start, ratio]) => Ok(Schedule::geometric_by_execution(n, *start, *ratio)),
        _ => Err(Error::Config(format!(
            "unknown rule '{rule}' (expected constant(v) or geometric(start, ratio))"
        ))),
    }
}

/// Expand the time rule into N+1 points with the largest value at index N.
fn expand_time_rule(rule: &str, n: usize) -> Result<Vec<f64>> {
    let (name, args) = parse_rule(rule)?;
    match (name.as_str(), args.as_slice()) {
        ("constant", [v]) => Ok(vec![*v; n + 1]),
        ("geometric", [t_max, decay]) => Ok((0..=n)
            .map(|i| t_max * decay.powi((n - i) as i32))
            .collect()),
        _ => Err(Error::Config(format!(
            "unknown time rule '{rule}' (expected constant(v) or geometric(t_max, decay))"
        ))),
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<Schedule> {
        let n = self.n_steps;
        if n == 0 {
            return Err(Error::Config("schedule.n_steps must be ≥ 1".into()));
        }
        let time_points = match (&self.time_points, &self.time_rule) {
            (Some(v), _) => v.clone(),
            (None, Some(rule)) => expand_time_rule(rule, n)?,
            (None, None) => {
                return Err(Error::Config(
                    "schedule needs time_points or time_rule".into(),
                ))
            }
        };
        let rho = match (&self.rho, &self.rho_rule) {
            (Some(v), _) => v.clone(),
            (None, Some(rule)) => expand_rule(rule, n)?,
            (None, None) => vec![1.0; n],
        };
        let beta = match (&self.beta, &self.beta_rule) {
            (Some(v), _) => v.clone(),
            (None, Some(rule)) => expand_rule(rule, n)?,
            (None, None) => vec![0.0; n],
        };
        let noise_std = match (&self.noise_std, &self.noise_rule) {
            (Some(v), _) => Some(v.clone()),
            (None, Some(rule)) => Some(expand_rule(rule, n)?),
            (None, None) => None,
        };
        Schedule::new(time_points, rho, beta, noise_std)
            .map_err(|e| Error::Config(format!("schedule: {e}")))
    }
}

impl DenoiserSection {
    pub fn build(&self) -> Result<Denoiser> {
        let scale = self.strength_scale.unwrap_or(1.0);
        match self.kind.as_str() {
            "identity" => Ok(Denoiser::Identity),
            "gaussian_smooth" => Ok(Denoiser::GaussianSmooth { strength_scale: scale }),
            "median" => Ok(Denoiser::Median),
            "tv_prox" => Ok(Denoiser::TvProx { strength_scale: scale }),
            "soft_threshold_dct" => Ok(Denoiser::SoftThresholdDct { strength_scale: scale }),
            "external" => {
                let spec = self.endpoint.as_ref().ok_or_else(|| {
                    Error::Config("external denoiser needs an endpoint".into())
                })?;
                let mut cfg = ExternalDenoiserConfig::new(Endpoint::parse(spec)?);
                if let Some(t) = self.timeout_secs {
                    cfg.timeout_secs = t;
                }
                Ok(Denoiser::External(ExternalDenoiser::new(cfg)))
            }
            other => Err(Error::Config(format!("unknown denoiser kind '{other}'"))),
        }
    }
}

fn parse_dtype(s: Option<&str>) -> Result<Dtype> {
    match s {
        None | Some("real64") => Ok(Dtype::Real64),
        Some("complex128") => Ok(Dtype::Complex128),
        Some(other) => Err(Error::Config(format!("unknown dtype '{other}'"))),
    }
}

use crate::streams::PHANTOM as STREAM_PHANTOM;

/// Seeded smooth random field in [0,1] (complex: magnitude ≤ 1) used as the
/// ground truth for shape-only tasks.
fn smooth_phantom(shape: &[usize], dtype: Dtype, seed: RngSeed) -> Tensor {
    let noise = crate::tensor::standard_normal(shape, dtype, &mut seed.stream(STREAM_PHANTOM));
    let smooth = Denoiser::GaussianSmooth { strength_scale: 1.0 }
        .denoise(&noise, 1.5)
        .expect("builtin denoiser on finite input");
    match dtype {
        Dtype::Real64 => {
            let v = smooth.as_real().expect("real");
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            Tensor::from_real(shape, v.iter().map(|x| (x - lo) / span).collect())
                .expect("same length")
        }
        Dtype::Complex128 => {
            let v = smooth.as_complex().expect("complex");
            let peak = v.iter().map(|c| c.norm()).fold(0.0f64, f64::max).max(1e-12);
            Tensor::from_complex(shape, v.iter().map(|c| c / peak).collect())
                .expect("same length")
        }
    }
}

impl TaskSection {
    /// Build the forward operator for a signal of the given shape/dtype.
    pub fn build_operator(
        &self,
        shape: &[usize],
        dtype: Dtype,
        seed: RngSeed,
        config_dir: &Path,
    ) -> Result<LinearOp> {
        match self.operator.as_str() {
            "mask" => {
                let mask = if let Some(f) = &self.mask_file {
                    let t = super::tensor_file::load(config_dir.join(f))?;
                    if t.shape() != shape {
                        return Err(Error::Config(format!(
                            "mask shape {:?} does not match signal shape {shape:?}",
                            t.shape()
                        )));
                    }
                    let keep = t.as_real()?.iter().map(|&v| v != 0.0).collect();
                    MaskOp::new(shape, dtype, keep)?
                } else {
                    let frac = self.keep_fraction.unwrap_or(0.3);
                    MaskOp::random(shape, dtype, frac, seed)?
                };
                Ok(LinearOp::Mask(mask))
            }
            "blur" => {
                let boundary = self.boundary.unwrap_or(Boundary::Circular);
                let op = if let Some(taps) = &self.kernel {
                    BlurOp::new(shape, dtype, taps.clone(), boundary)?
                } else {
                    let size = self.kernel_size.unwrap_or(5);
                    let sigma = self.kernel_sigma.unwrap_or(10.0);
                    BlurOp::gaussian(shape, dtype, size, sigma, boundary)?
                };
                Ok(LinearOp::Blur(op))
            }
            "downsample" => {
                let factor = self.factor.unwrap_or(4);
                Ok(LinearOp::Downsample(DownsampleOp::new(shape, dtype, factor)?))
            }
            "fourier_subsample" => {
                if dtype != Dtype::Complex128 {
                    return Err(Error::Config(
                        "fourier_subsample requires complex128 input data".into(),
                    ));
                }
                if shape.len() != 2 {
                    return Err(Error::Config(format!(
                        "fourier_subsample expects an H×W image, got {shape:?}"
                    )));
                }
                let (h, w) = (shape[0], shape[1]);
                let acceleration = self.acceleration.unwrap_or(4);
                let acs = self.acs_lines.unwrap_or(24.min(w));
                let coils = match self.coils.unwrap_or(1) {
                    0 | 1 => None,
                    c => Some(synthetic_coil_maps(h, w, c)),
                };
                let op = if let Some(f) = &self.mask_file {
                    let t = super::tensor_file::load(config_dir.join(f))?;
                    if t.shape() != [w] {
                        return Err(Error::Config(format!(
                            "line mask shape {:?} must be [{w}]",
                            t.shape()
                        )));
                    }
                    let lines = t.as_real()?.iter().map(|&v| v != 0.0).collect();
                    FourierOp::new(h, w, lines, acs, acceleration, coils)?
                } else {
                    FourierOp::random_lines(h, w, acceleration, acs, coils, seed)?
                };
                Ok(LinearOp::FourierSubsample(op))
            }
            other => Err(Error::Config(format!("unknown operator kind '{other}'"))),
        }
    }
}

impl SolverSection {
    pub fn cg_config(&self) -> CgConfig {
        let d = CgConfig::default();
        CgConfig {
            max_iters: self.cg_max_iters.unwrap_or(d.max_iters),
            rel_tol: self.cg_rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.cg_abs_tol.unwrap_or(d.abs_tol),
        }
    }
}

/// Everything a reconstruction needs, assembled from one config file.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfigFile,
    pub engine: RunConfig,
    /// Ground truth when the config names an image.
    pub x_true: Option<Tensor>,
    pub y: Tensor,
}

/// Resolve an experiment: load data, synthesize or load the measurement, and
/// assemble the engine configuration. `seed_override` replaces the config
/// seed (CLI `--seed`).
pub fn build_experiment(
    cfg: &RunConfigFile,
    config_dir: &Path,
    seed_override: Option<u64>,
) -> Result<Experiment> {
    let seed = RngSeed(seed_override.unwrap_or_else(|| cfg.seed()));
    let x_true = match &cfg.task.image {
        Some(p) => Some(super::image::load_signal(config_dir.join(p))?),
        None => None,
    };
    let (shape, dtype) = match (&x_true, &cfg.task.shape) {
        (Some(t), _) => (t.shape().to_vec(), t.dtype()),
        (None, Some(s)) => (s.clone(), parse_dtype(cfg.task.dtype.as_deref())?),
        (None, None) => {
            return Err(Error::Config(
                "task needs either an image or an explicit shape".into(),
            ))
        }
    };
    let operator = cfg.task.build_operator(&shape, dtype, seed, config_dir)?;

    // Shape-only tasks synthesize from a seeded smooth phantom, keeping
    // verification runs self-contained.
    let x_true = match x_true {
        Some(t) => Some(t),
        None if cfg.task.measurement.is_none() => Some(smooth_phantom(&shape, dtype, seed)),
        None => None,
    };

    let y = match &cfg.task.measurement {
        Some(p) => {
            let t = super::tensor_file::load(config_dir.join(p))?;
            if t.shape() != operator.output_shape() {
                return Err(Error::Config(format!(
                    "measurement shape {:?} does not match operator output {:?}",
                    t.shape(),
                    operator.output_shape()
                )));
            }
            t
        }
        None => {
            let x = x_true.as_ref().expect("phantom generated above");
            crate::ops::synthesize_measurement_seeded(&operator, x, cfg.sigma_y(), seed)?
        }
    };

    let denoiser = cfg.denoiser.build()?;
    let schedule = cfg.schedule.build()?;
    let solver = cfg.solver.clone().unwrap_or(SolverSection {
        cg_max_iters: None,
        cg_rel_tol: None,
        cg_abs_tol: None,
        noise_injection: None,
        momentum: None,
        momentum_divergence_guard: None,
        record_shadow: None,
        history: None,
    });
    let mut engine = RunConfig::new(operator, denoiser, schedule, seed);
    engine.cg = solver.cg_config();
    engine.enable_noise_injection = solver.noise_injection.unwrap_or(true);
    engine.enable_momentum = solver.momentum.unwrap_or(true);
    engine.momentum_divergence_guard = solver.momentum_divergence_guard.unwrap_or(false);
    engine.record_noise_free_shadow = solver.record_shadow.unwrap_or(false);
    engine.history = solver.history.unwrap_or(HistoryMode::Full);

    Ok(Experiment {
        config: cfg.clone(),
        engine,
        x_true,
        y,
    })
}
