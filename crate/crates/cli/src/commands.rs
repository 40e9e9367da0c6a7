use std::fs;
use std::path::{Path, PathBuf};

use idpdiff::datagen::{generate_dataset, place_anchors, read_dataset, write_dataset, DatagenError};
use idpdiff::diffusion::{fnv1a_hex, train, write_log, Checkpoint, DenoiserParams, TrainError};
use idpdiff::eval::{compare_guidance, compute_similarity_stats, export_histograms, EvalError, PreservationTarget};
use idpdiff::rng;
use idpdiff::sampler::{preservation, sample, SampleError};
use idpdiff::sphere::{normalize, perturb_along, sample_orthogonal, sample_uniform_sphere, SphereError, UnitVector};
use idpdiff::toyworld::{AttributeVector, WorldError};
use idpdiff::verify::{verify_all, write_reports};
use serde::Serialize;

use crate::config::{self, RunConfig};
use crate::{Cli, CliError, Command, ConfigAction, SampleArgs};

macro_rules! say {
    ($($t:tt)*) => {
        emit(&format!("{}\n", format_args!($($t)*)))
    };
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let seed_env = std::env::var(config::SEED_ENV).ok();
    let cfg = config::load(cli.config.as_deref(), &cli.overrides, seed_env.as_deref())?;
    match cli.command {
        Command::Anchors { out } => anchors(&cfg, out),
        Command::Train => train_cmd(&cfg),
        Command::Sample(args) => sample_cmd(&cfg, &args),
        Command::Gendata { workers } => gendata(&cfg, workers),
        Command::Eval { dataset, anchor_relative, compare_guidance } => eval_cmd(&cfg, dataset, anchor_relative, compare_guidance),
        Command::Verify => verify_cmd(&cfg),
        Command::Config { action: ConfigAction::Dump } => {
            let json = serde_json::to_string_pretty(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            say!("{json}");
            Ok(())
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| io_err(p, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn report_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.paths.reports.join(name)
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn sphere_err(e: SphereError) -> CliError {
    match e {
        SphereError::MaxIters { .. } | SphereError::ZeroNorm(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

fn datagen_err(e: DatagenError) -> CliError {
    match e {
        DatagenError::Sphere(s) => sphere_err(s),
        DatagenError::Sample { .. } | DatagenError::PartialResult { .. } => CliError::Runtime(e.to_string()),
        DatagenError::Config(_) | DatagenError::Io { .. } | DatagenError::Format { .. } => CliError::Config(e.to_string()),
    }
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Checkpoint, String), CliError> {
    let path = &cfg.paths.checkpoint;
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes).map_err(|e| io_err(path, e))?;
    log::info!("loaded checkpoint {}", path.display());
    Ok((ckpt, fnv1a_hex(&bytes)))
}

fn anchors(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    let d = cfg.world.d;
    let (anchors, max_cos) = place_anchors(&cfg.datagen, d).map_err(datagen_err)?;
    let shown = max_cos.map_or_else(|| "none".to_string(), |c| format!("{c:.12}"));
    say!("N={} d={d} max_pairwise_cosine={shown}", anchors.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record((0..d).map(|i| format!("w_{i}"))).map_err(csv_err)?;
    for a in &anchors {
        w.write_record(a.as_slice().iter().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = out.unwrap_or_else(|| report_path(cfg, "anchors.csv"));
    write_file(&path, &bytes)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_train_log(cfg: &RunConfig, log_rows: &[idpdiff::diffusion::LogRow]) -> Result<PathBuf, CliError> {
    let mut buf = Vec::new();
    write_log(log_rows, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = report_path(cfg, "train_log.csv");
    write_file(&path, &buf)?;
    Ok(path)
}

fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let bytes = ckpt.to_bytes().map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(path, &bytes)
}

fn train_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let world = cfg.world.build()?;
    let schedule = cfg.schedule.build()?;
    let init = DenoiserParams::init(cfg.architecture(), cfg.train.init_scale, &mut rng::stream(cfg.train.init_seed))
        .map_err(|e| CliError::Config(e.to_string()))?;
    log::info!("training {} parameters for {} steps", init.theta().len(), cfg.train.steps);
    match train(init, &schedule, &world, &cfg.train_config()) {
        Ok(report) => {
            let ckpt = Checkpoint::new(world, schedule, report.params).map_err(|e| CliError::Runtime(e.to_string()))?;
            save_checkpoint(&ckpt, &cfg.paths.checkpoint)?;
            let log_path = write_train_log(cfg, &report.log)?;
            say!("initial_loss={:.6e} final_loss={:.6e} checkpoint={} log={}",
                report.initial.total,
                report.last.total,
                cfg.paths.checkpoint.display(),
                log_path.display()
            );
            let improved = report.last.total.is_finite() && report.last.total < report.initial.total;
            if cfg.train.steps == 0 || improved {
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "final loss {} is not below initial loss {}",
                    report.last.total, report.initial.total
                )))
            }
        }
        Err(TrainError::Numerical { step, reason, last_good, log }) => {
            let path = cfg.paths.checkpoint.with_extension("last_good.ckpt");
            let ckpt = Checkpoint::new(world, schedule, *last_good).map_err(|e| CliError::Runtime(e.to_string()))?;
            save_checkpoint(&ckpt, &path)?;
            write_train_log(cfg, &log)?;
            Err(CliError::Runtime(format!(
                "training diverged at step {step}: {reason}; last good parameters in {}",
                path.display()
            )))
        }
        Err(TrainError::Diffusion(e)) => Err(CliError::Config(e.to_string())),
    }
}

fn parse_list(flag: &str, raw: &str) -> Result<Vec<f64>, CliError> {
    raw.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("--{flag}: {v:?} is not a number"))))
        .collect()
}

#[derive(Serialize)]
struct SampleRecord {
    y: UnitVector,
    nu: Option<f64>,
    attrs: AttributeVector,
    x0: Vec<f64>,
    preservation: f64,
    degenerate_steps: usize,
}

fn sample_cmd(cfg: &RunConfig, args: &SampleArgs) -> Result<(), CliError> {
    let (ckpt, _) = load_checkpoint(cfg)?;
    let world = &ckpt.world;
    let d = world.d();
    let mut r = rng::substream(cfg.sampler.seed, &[0x5a3]);
    let base = match &args.id_vector {
        Some(raw) => {
            let v = parse_list("id-vector", raw)?;
            if v.len() != d {
                return Err(CliError::Config(format!("--id-vector has {} entries, the world has d={d}", v.len())));
            }
            normalize(&v).map_err(|e| CliError::Config(format!("--id-vector: {e}")))?
        }
        None => sample_uniform_sphere(d, &mut r).map_err(sphere_err)?,
    };
    let y = match args.nu {
        Some(nu) => {
            let u = sample_orthogonal(&base, &mut r);
            let v = perturb_along(&base, nu, &u).map_err(|e| CliError::Config(format!("--nu: {e}")))?;
            normalize(&v).map_err(sphere_err)?
        }
        None => base,
    };
    let attrs = match &args.attrs {
        Some(raw) => {
            let v = parse_list("attrs", raw)?;
            if v.len() != 4 {
                return Err(CliError::Config(format!("--attrs expects age,yaw,pitch,roll, got {} values", v.len())));
            }
            AttributeVector::new(v[0], [v[1], v[2], v[3]]).map_err(|e| CliError::Config(format!("--attrs: {e}")))?
        }
        None => AttributeVector::neutral(),
    };
    let sampler = idpdiff::sampler::SamplerConfig { record_trajectory: args.trace.is_some(), ..cfg.sampler };
    let out = match sample(&ckpt.params, &ckpt.schedule, world, y.as_slice(), &attrs, &sampler) {
        Ok(out) => out,
        Err(SampleError::Numerical { t, trajectory }) => {
            let path = args.trace.clone().unwrap_or_else(|| report_path(cfg, "failed_trajectory.csv"));
            let mut buf = Vec::new();
            trajectory.write_csv(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
            write_file(&path, &buf)?;
            return Err(CliError::Runtime(format!("sampling diverged at step {t}; trajectory in {}", path.display())));
        }
        Err(SampleError::Config(m)) => return Err(CliError::Config(m)),
        Err(e) => return Err(CliError::Runtime(e.to_string())),
    };
    if let (Some(path), Some(tr)) = (&args.trace, &out.trajectory) {
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(path, &buf)?;
        log::info!("wrote trajectory {}", path.display());
    }
    let record = SampleRecord {
        preservation: preservation(world, &out.x0, y.as_slice()),
        y,
        nu: args.nu,
        attrs,
        x0: out.x0,
        degenerate_steps: out.degenerate_steps,
    };
    let json = to_json(&record)?;
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    emit(&String::from_utf8_lossy(&json));
    Ok(())
}

fn gendata(cfg: &RunConfig, workers: usize) -> Result<(), CliError> {
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let (ckpt, hash) = load_checkpoint(cfg)?;
    let ds = generate_dataset(&ckpt.params, &ckpt.schedule, &ckpt.world, &cfg.datagen, &cfg.sampler, workers, Some(hash))
        .map_err(datagen_err)?;
    ensure_parent(&cfg.paths.dataset)?;
    write_dataset(&ds, &cfg.paths.dataset).map_err(datagen_err)?;
    say!("records={} dataset={}", ds.records.len(), cfg.paths.dataset.display());
    Ok(())
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Embedding { source: WorldError::DimensionMismatch { .. }, .. }
        | EvalError::EmptyDataset
        | EvalError::MissingAnchors
        | EvalError::Config(_)
        | EvalError::Io(_)
        | EvalError::Csv(_) => CliError::Config(e.to_string()),
        EvalError::Embedding { .. } | EvalError::Sample(_) => CliError::Runtime(e.to_string()),
    }
}

fn eval_cmd(cfg: &RunConfig, dataset: Option<PathBuf>, anchor_relative: bool, compare: bool) -> Result<(), CliError> {
    let path = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
    let ds = read_dataset(&path).map_err(|e| io_err(&path, e))?;
    let (ckpt, _) = load_checkpoint(cfg)?;
    let target = if anchor_relative { PreservationTarget::Anchor } else { PreservationTarget::Embedding };
    let stats = compute_similarity_stats(&ckpt.world, &ds, target).map_err(eval_err)?;
    let summary = report_path(cfg, "eval_summary.json");
    write_file(&summary, &to_json(&stats)?)?;
    let hist = report_path(cfg, "eval_histograms.csv");
    export_histograms(&stats, &hist).map_err(eval_err)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |v| format!("{v:.6}"));
    say!("intra_mean={} inter_mean={} separation={} preservation={:.6}",
        opt(stats.intra.mean),
        opt(stats.inter.mean),
        opt(stats.separation),
        stats.preservation
    );
    if compare {
        let c = compare_guidance(&ckpt.params, &ckpt.schedule, &ckpt.world, &cfg.sampler, &cfg.compare).map_err(eval_err)?;
        write_file(&report_path(cfg, "guidance_comparison.json"), &to_json(&c)?)?;
        say!("guidance w={:.4} vs w={:.4}: {:.6} vs {:.6}, difference {:.6} (95% CI {:.6} .. {:.6}, {} pairs)",
            c.adjusted_weight, c.original_weight, c.mean_adjusted, c.mean_original, c.difference, c.ci_low, c.ci_high, c.samples
        );
    }
    Ok(())
}

fn verify_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let reports = verify_all().map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut buf = Vec::new();
    write_reports(&reports, &mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = report_path(cfg, "verify.jsonl");
    write_file(&path, &buf)?;
    for r in &reports {
        let status = if r.passed { "PASS" } else { "FAIL" };
        say!("{status} {} max_abs_error={:.3e} tolerance={:.1e} {}", r.check_name, r.max_abs_error, r.tolerance, r.details);
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} checks failed", reports.len())));
    }
    Ok(())
}
