//! Subcommand implementations behind the `pnpcm` binary. Each returns the
//! run directory it produced so tests can drive the CLI in-process.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::admm::{self, BoundReport};
use crate::denoise::{echo, estimate_lipschitz};
use crate::error::{Error, Result};
use crate::io::{build_experiment, config::RunConfigFile, image, run_record, tensor_file};
use crate::metrics::{self, MetricReport};
use crate::tensor::Dtype;

/// Environment variable capping ablation parallelism.
pub const NUM_THREADS_ENV: &str = "PNP_CM_NUM_THREADS";

fn say(quiet: bool, msg: &str) {
    if !quiet {
        println!("{msg}");
    }
}

fn config_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn resolve_out_dir(cfg: &RunConfigFile, config_path: &Path, out: Option<&Path>) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let d = cfg.output_dir();
            if d.is_absolute() {
                d
            } else {
                config_dir(config_path).join(d)
            }
        }
    }
}

/// Reconstruct a single measurement end to end.
pub fn cmd_reconstruct(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<PathBuf> {
    let cfg = RunConfigFile::from_path(config_path)?;
    let exp = build_experiment(&cfg, &config_dir(config_path), seed_override)?;
    let started = Instant::now();
    let (x, state) = admm::run(&exp.engine, &exp.y)?;
    let wall = started.elapsed().as_secs_f64();

    let report = match &exp.x_true {
        Some(truth) => Some(metrics::compare_to_reference(&x, truth)?),
        None => None,
    };

    let run_dir = run_record::create_run_dir(
        &resolve_out_dir(&cfg, config_path, out),
        &cfg.label(),
    )?;
    if cfg.save_tensor() {
        tensor_file::save(run_dir.join("x.pnpt"), &x)?;
    }
    if cfg.save_image() && x.shape().len() <= 3 {
        image::save_png(run_dir.join("x.png"), &x)?;
    }
    run_record::write_run_record(&run_dir, &cfg, &state, report.as_ref())?;
    run_record::write_meta(&run_dir, wall)?;

    match &report {
        Some(m) => say(
            quiet,
            &format!(
                "reconstruct: N={} NFE={} psnr={:.2} dB ssim={:.4} -> {}",
                state.records.len(),
                state.denoiser_calls,
                m.psnr_db,
                m.ssim,
                run_dir.display()
            ),
        ),
        None => say(
            quiet,
            &format!(
                "reconstruct: N={} NFE={} -> {}",
                state.records.len(),
                state.denoiser_calls,
                run_dir.display()
            ),
        ),
    }
    Ok(run_dir)
}

/// Synthesize and store a measurement without reconstructing.
pub fn cmd_synthesize(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<PathBuf> {
    let cfg = RunConfigFile::from_path(config_path)?;
    let exp = build_experiment(&cfg, &config_dir(config_path), seed_override)?;
    let run_dir = run_record::create_run_dir(
        &resolve_out_dir(&cfg, config_path, out),
        &format!("{}-measurement", cfg.label()),
    )?;
    tensor_file::save(run_dir.join("measurement.pnpt"), &exp.y)?;
    std::fs::write(run_dir.join("config_echo.toml"), cfg.to_toml_string()?)?;
    say(
        quiet,
        &format!(
            "synthesize: {:?} measurement -> {}",
            exp.y.shape(),
            run_dir.display()
        ),
    );
    Ok(run_dir)
}

#[derive(serde::Serialize)]
struct AblationTableRow {
    noise_injection: bool,
    momentum: bool,
    mean_psnr_db: f64,
    mean_ssim: f64,
    images: usize,
    denoiser_calls_per_run: usize,
}

#[derive(serde::Serialize)]
struct AblationTable {
    rows: Vec<AblationTableRow>,
}

/// Run the 2×2 {noise, momentum} grid over a directory of ground-truth
/// images, fanning out across worker threads.
pub fn cmd_ablate(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<PathBuf> {
    let cfg = RunConfigFile::from_path(config_path)?;
    let dir = config_dir(config_path);
    let image_dir = cfg
        .task
        .image_dir
        .as_ref()
        .ok_or_else(|| Error::Config("ablate needs task.image_dir".into()))?;
    let image_dir = dir.join(image_dir);
    let mut images: Vec<PathBuf> = std::fs::read_dir(&image_dir)
        .map_err(|e| Error::Config(format!("{}: {e}", image_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png" | "pnpt")
            )
        })
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::Config(format!(
            "no .png or .pnpt inputs in {}",
            image_dir.display()
        )));
    }
    let base_seed = seed_override.unwrap_or_else(|| cfg.seed());

    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = std::env::var(NUM_THREADS_ENV)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
        {
            builder = builder.num_threads(t.max(1));
        }
        builder
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };

    // One task per image; each builds its own operator/measurement from a
    // per-image seed and runs all four variants.
    let results: Result<Vec<(PathBuf, Vec<admm::AblationRow>)>> = pool.install(|| {
        use rayon::prelude::*;
        images
            .par_iter()
            .enumerate()
            .map(|(i, path)| {
                let mut per_image = cfg.clone();
                per_image.task.image = Some(path.to_string_lossy().into_owned());
                per_image.task.image_dir = None;
                let exp = build_experiment(&per_image, &dir, Some(base_seed + i as u64))?;
                let truth = exp.x_true.as_ref().expect("image was set");
                let rows = admm::ablation_grid(&exp.engine, &exp.y, truth)?;
                Ok((path.clone(), rows))
            })
            .collect()
    });
    let results = results?;

    let variants = [(false, false), (true, false), (false, true), (true, true)];
    let mut table = Vec::new();
    for (vi, (noise, momentum)) in variants.iter().enumerate() {
        let psnr_sum: f64 = results.iter().map(|(_, rows)| rows[vi].psnr_db).sum();
        let ssim_sum: f64 = results.iter().map(|(_, rows)| rows[vi].ssim).sum();
        table.push(AblationTableRow {
            noise_injection: *noise,
            momentum: *momentum,
            mean_psnr_db: psnr_sum / results.len() as f64,
            mean_ssim: ssim_sum / results.len() as f64,
            images: results.len(),
            denoiser_calls_per_run: results[0].1[vi].denoiser_calls,
        });
    }

    let run_dir = run_record::create_run_dir(
        &resolve_out_dir(&cfg, config_path, out),
        &format!("{}-ablation", cfg.label()),
    )?;
    let table_doc = AblationTable { rows: table };
    std::fs::write(
        run_dir.join("ablation_table.toml"),
        toml::to_string_pretty(&table_doc).map_err(|e| Error::Config(e.to_string()))?,
    )?;

    let mut csv = String::from("image,noise_injection,momentum,psnr_db,ssim,denoiser_calls,linear_solves\n");
    for (path, rows) in &results {
        for r in rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                path.file_name().unwrap_or_default().to_string_lossy(),
                r.noise_injection,
                r.momentum,
                r.psnr_db,
                r.ssim,
                r.denoiser_calls,
                r.linear_solves
            ));
        }
    }
    std::fs::write(run_dir.join("results.csv"), csv)?;
    std::fs::write(run_dir.join("config_echo.toml"), cfg.to_toml_string()?)?;

    if !quiet {
        println!("noise  momentum  mean_psnr  mean_ssim  (over {} images)", results.len());
        for row in &table_doc.rows {
            println!(
                "{:<6} {:<9} {:>9.3} {:>10.4}",
                if row.noise_injection { "yes" } else { "no" },
                if row.momentum { "yes" } else { "no" },
                row.mean_psnr_db,
                row.mean_ssim
            );
        }
        println!("-> {}", run_dir.display());
    }
    Ok(run_dir)
}

/// Paired runs plus the Lipschitz estimate and the convergence-bound check.
pub fn cmd_check_theorem(
    config_path: &Path,
    seed_override: Option<u64>,
    out: Option<&Path>,
    quiet: bool,
) -> Result<(PathBuf, BoundReport)> {
    let cfg = RunConfigFile::from_path(config_path)?;
    let exp = build_experiment(&cfg, &config_dir(config_path), seed_override)?;

    let mut noisy_cfg = exp.engine.clone();
    noisy_cfg.enable_noise_injection = true;
    noisy_cfg.record_noise_free_shadow = true;
    let mut clean_cfg = exp.engine.clone();
    clean_cfg.enable_noise_injection = false;

    let (_, noisy) = admm::run(&noisy_cfg, &exp.y)?;
    let (_, clean) = admm::run(&clean_cfg, &exp.y)?;

    let verify = cfg.verify.clone().unwrap_or(crate::io::config::VerifySection {
        lipschitz_pairs: None,
        perturbation_scale: None,
        l_inflation: None,
        tolerance: None,
    });
    let pairs = verify.lipschitz_pairs.unwrap_or(100);
    let scale = verify.perturbation_scale.unwrap_or(0.1);
    let inflation = verify.l_inflation.unwrap_or(admm::DEFAULT_L_INFLATION);
    let tolerance = verify.tolerance.unwrap_or(1e-9);

    // The constant in the bound is the denoiser's Lipschitz constant; probe
    // it at every distinct strength the schedule uses and keep the largest.
    let shape = exp.engine.operator.input_shape();
    let dtype = exp.engine.operator.dtype();
    let mut ts: Vec<f64> = (0..exp.engine.schedule.n_steps())
        .map(|n| exp.engine.schedule.time_at(n))
        .collect();
    ts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    ts.dedup();
    let mut l_hat = 0.0f64;
    for t in ts {
        let est = estimate_lipschitz(
            &exp.engine.denoiser,
            t,
            &shape,
            dtype,
            pairs,
            scale,
            exp.engine.seed,
        )?;
        l_hat = l_hat.max(est.l_hat);
    }

    let report = admm::check_noise_injection_bound(&noisy, &clean, l_hat, inflation, tolerance)?;

    let run_dir = run_record::create_run_dir(
        &resolve_out_dir(&cfg, config_path, out),
        &format!("{}-bound", cfg.label()),
    )?;
    std::fs::write(
        run_dir.join("bound_report.toml"),
        toml::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    run_record::write_run_record(&run_dir, &cfg, &noisy, None)?;

    if !quiet {
        println!("lhs (shared path)   = {:?}", report.lhs_strict);
        println!("lhs (paired runs)   = {:.6e}", report.lhs_paired);
        println!("rhs  2L/sqrt(P)*sum = {:.6e}", report.rhs);
        println!("sum ||eta_k||       = {:.6e}", report.eta_norm_sum);
        println!("l_hat = {:.6} (effective {:.6})", report.l_hat, report.l_effective);
        println!(
            "noise schedule      : {}",
            if report.noise_schedule_diminishing {
                "diminishing"
            } else {
                "NOT diminishing"
            }
        );
        println!(
            "bound               : {}",
            if report.satisfied { "satisfied" } else { "VIOLATED" }
        );
    }
    Ok((run_dir, report))
}

/// Protocol echo server (test double for external denoisers).
pub fn cmd_serve_echo(listen: Option<&str>, stdio: bool, quiet: bool) -> Result<()> {
    if stdio {
        return echo::serve_stdio();
    }
    let addr = listen.unwrap_or("127.0.0.1:0").to_string();
    echo::serve_tcp(addr, |bound| {
        // Always announce the bound address; callers using port 0 need it.
        if !quiet {
            println!("listening on {bound}");
        } else {
            eprintln!("{bound}");
        }
    })
}

/// Ground-truth loader guard used by tests: complex data must come from
/// tensor files, never rasters.
pub fn ensure_dtype(t: &crate::tensor::Tensor, want: Dtype) -> Result<()> {
    if t.dtype() != want {
        return Err(Error::Config(format!(
            "expected {want} data, got {}",
            t.dtype()
        )));
    }
    Ok(())
}

/// Convenience for tests: metric row for an output tensor file against a
/// reference tensor.
pub fn metrics_for_files(x_path: &Path, ref_path: &Path) -> Result<MetricReport> {
    let x = tensor_file::load(x_path)?;
    let r = image::load_signal(ref_path)?;
    metrics::compare_to_reference(&x, &r)
}
