//! Two-phase execution: `plan` turns a parsed key-value config into a
//! typed command (every failure here is a config error, exit 1), and
//! `execute` runs it (every failure here is a runtime error, exit 2).

use std::path::{Path, PathBuf};

use denoise_core::correction::{implied_residual, CorrectionKind, CorrectionRule, InferenceMode};
use denoise_core::eval::{evaluate, EvalOptions};
use denoise_core::io::{list_pngs, load_auto, load_png, save_fimg, save_png, save_png16_preview};
use denoise_core::nn::checkpoint::load_checkpoint;
use denoise_core::noise::NoiseModel;
use denoise_core::rng::{StreamKind, StreamRng};
use denoise_core::train::{default_schedule, fine_tune, train, TrainingConfig};
use denoise_core::{Error, Result};

use crate::schema::{parse_schedule, Cmd, RunConfig};

/// Planning-stage result: the message becomes a `config error` on stderr.
type ConfigResult<T> = std::result::Result<T, String>;

pub enum Plan {
    Train(TrainingConfig),
    FineTune {
        base: PathBuf,
        new_alpha: f64,
        config: TrainingConfig,
    },
    Denoise {
        checkpoint: PathBuf,
        input: PathBuf,
        rule: CorrectionRule,
        out_dir: Option<PathBuf>,
        debug_dump: bool,
    },
    Eval {
        checkpoint: PathBuf,
        test_dir: PathBuf,
        noise: NoiseModel,
        rule: CorrectionRule,
        seed: u64,
        report: PathBuf,
        draws: usize,
        figure_dir: Option<PathBuf>,
    },
    Oracle {
        seed: u64,
    },
    MakeNoisy {
        in_dir: PathBuf,
        out_dir: PathBuf,
        noise: NoiseModel,
        seed: u64,
    },
}

fn noise_model(cfg: &RunConfig) -> ConfigResult<NoiseModel> {
    let model = match cfg.string("noise")?.as_str() {
        "gaussian" => NoiseModel::GaussianAdditive {
            sigma: cfg.f64("sigma")?,
        },
        "structured" => NoiseModel::StructuredGaussianAdditive {
            sigma: cfg.f64("sigma")?,
            kernel_size: cfg.usize("kernel_size")?,
            kernel_sigma: cfg.f64("kernel_sigma")?,
        },
        "mask" => NoiseModel::BernoulliMultiplicative {
            drop_prob: cfg.f64("drop_prob")?,
        },
        other => {
            return Err(format!(
                "key `noise` must be gaussian, structured, or mask, got `{other}`"
            ))
        }
    };
    model.validate().map_err(|e| e.to_string())?;
    Ok(model)
}

fn correction_rule(cfg: &RunConfig, noise: &NoiseModel) -> ConfigResult<CorrectionRule> {
    let mode = match cfg.string("mode")?.as_str() {
        "doubly-noisy" => InferenceMode::DoublyNoisy,
        "singly-noisy" => InferenceMode::SinglyNoisy,
        other => {
            return Err(format!(
                "key `mode` must be doubly-noisy or singly-noisy, got `{other}`"
            ))
        }
    };
    let kind = if noise.is_additive() {
        CorrectionKind::AdditiveAlpha {
            alpha: cfg.f64("alpha")?,
        }
    } else {
        CorrectionKind::BernoulliMask {
            p: cfg.f64("drop_prob")?,
            q: cfg
                .f64("q")
                .map_err(|_| "mask noise requires key `q`".to_string())?,
        }
    };
    let rule = CorrectionRule { kind, mode };
    rule.validate().map_err(|e| e.to_string())?;
    Ok(rule)
}

fn training_config(cfg: &RunConfig) -> ConfigResult<TrainingConfig> {
    let noise = noise_model(cfg)?;
    let q = if noise.is_additive() {
        if cfg.get("q").is_some() {
            return Err("key `q` applies to mask noise only".to_string());
        }
        None
    } else {
        Some(
            cfg.f64("q")
                .map_err(|_| "mask noise requires key `q`".to_string())?,
        )
    };
    let total_batches = cfg.u64("total_batches")?;
    let lr_schedule = match cfg.get("lr_schedule") {
        Some(s) => parse_schedule(s)?,
        None => default_schedule(total_batches),
    };
    let data_dir = existing_dir(cfg, "data_dir")?;
    let resume_from = match cfg.get("resume_from") {
        Some(_) => Some(existing_file(cfg, "resume_from")?),
        None => None,
    };
    let tc = TrainingConfig {
        data_dir,
        out_dir: cfg.path("out_dir")?,
        noise,
        alpha: cfg.f64("alpha")?,
        q,
        patch_size: cfg.usize("patch_size")?,
        batch_size: cfg.usize("batch_size")?,
        total_batches,
        lr_schedule,
        seed: cfg.u64("seed")?,
        checkpoint_every: cfg.u64("checkpoint_every")?,
        fine_tune_from: None,
        resume_from,
    };
    tc.validate().map_err(|e| e.to_string())?;
    Ok(tc)
}

fn existing_file(cfg: &RunConfig, key: &str) -> ConfigResult<PathBuf> {
    let path = cfg.path(key)?;
    if !path.is_file() {
        return Err(format!("key `{key}`: no such file: {}", path.display()));
    }
    Ok(path)
}

fn existing_dir(cfg: &RunConfig, key: &str) -> ConfigResult<PathBuf> {
    let path = cfg.path(key)?;
    if !path.is_dir() {
        return Err(format!("key `{key}`: no such directory: {}", path.display()));
    }
    Ok(path)
}

fn dir_with_pngs(cfg: &RunConfig, key: &str) -> ConfigResult<PathBuf> {
    let path = existing_dir(cfg, key)?;
    let n = list_pngs(&path).map_err(|e| e.to_string())?.len();
    if n == 0 {
        return Err(format!("key `{key}`: no PNG images in {}", path.display()));
    }
    Ok(path)
}

pub fn plan(cfg: &RunConfig) -> ConfigResult<Plan> {
    match cfg.cmd {
        Cmd::Train => Ok(Plan::Train(training_config(cfg)?)),
        Cmd::FineTune => {
            let config = training_config(cfg)?;
            if !config.noise.is_additive() {
                return Err(
                    "fine-tune rescales alpha, which mask noise does not have".to_string()
                );
            }
            Ok(Plan::FineTune {
                base: existing_file(cfg, "checkpoint")?,
                new_alpha: cfg.f64("new_alpha")?,
                config,
            })
        }
        Cmd::Denoise => {
            let noise = noise_model(cfg)?;
            Ok(Plan::Denoise {
                checkpoint: existing_file(cfg, "checkpoint")?,
                input: existing_file(cfg, "input")?,
                rule: correction_rule(cfg, &noise)?,
                out_dir: cfg.get("out_dir").map(PathBuf::from),
                debug_dump: cfg.bool("debug_dump")?,
            })
        }
        Cmd::Eval => {
            let noise = noise_model(cfg)?;
            let out_dir = cfg.path("out_dir")?;
            Ok(Plan::Eval {
                checkpoint: existing_file(cfg, "checkpoint")?,
                test_dir: dir_with_pngs(cfg, "test_dir")?,
                rule: correction_rule(cfg, &noise)?,
                noise,
                seed: cfg.u64("seed")?,
                report: match cfg.get("report") {
                    Some(p) => PathBuf::from(p),
                    None => out_dir.join("eval.csv"),
                },
                draws: cfg.usize("draws")?,
                figure_dir: cfg.bool("figures")?.then(|| out_dir.join("figures")),
            })
        }
        Cmd::Oracle => Ok(Plan::Oracle {
            seed: cfg.u64("seed")?,
        }),
        Cmd::MakeNoisy => Ok(Plan::MakeNoisy {
            in_dir: dir_with_pngs(cfg, "in_dir")?,
            out_dir: cfg.path("out_dir")?,
            noise: noise_model(cfg)?,
            seed: cfg.u64("seed")?,
        }),
    }
}

pub fn execute(plan: Plan) -> Result<()> {
    match plan {
        Plan::Train(config) => {
            let outcome = train(&config)?;
            print_outcome("trained", &outcome);
            Ok(())
        }
        Plan::FineTune {
            base,
            new_alpha,
            config,
        } => {
            let outcome = fine_tune(&base, new_alpha, &config)?;
            print_outcome("fine-tuned", &outcome);
            Ok(())
        }
        Plan::Denoise {
            checkpoint,
            input,
            rule,
            out_dir,
            debug_dump,
        } => cmd_denoise(&checkpoint, &input, &rule, out_dir.as_deref(), debug_dump),
        Plan::Eval {
            checkpoint,
            test_dir,
            noise,
            rule,
            seed,
            report,
            draws,
            figure_dir,
        } => cmd_eval(
            &checkpoint, &test_dir, &noise, &rule, seed, &report, draws, figure_dir,
        ),
        Plan::Oracle { seed } => cmd_oracle(seed),
        Plan::MakeNoisy {
            in_dir,
            out_dir,
            noise,
            seed,
        } => cmd_make_noisy(&in_dir, &out_dir, &noise, seed),
    }
}

fn print_outcome(verb: &str, outcome: &denoise_core::train::TrainOutcome) {
    println!(
        "{verb} {} steps | final loss {:.6e}",
        outcome.step_count, outcome.final_loss
    );
    println!(
        "checkpoint: {} (sha256 {})",
        outcome.checkpoint_path.display(),
        outcome.checkpoint_hash
    );
    println!("loss csv:   {}", outcome.loss_csv_path.display());
}

/// Output naming: `<stem>_raw.png` is the clipped network output,
/// `<stem>_residual.png` is input minus raw shifted by +0.5 so zero shows
/// as mid-gray, `<stem>_corrected.png` is the corrected estimate. With
/// `debug_dump`, the same tensors (and the input) are also written
/// unclipped as `.fimg` floats, residual unshifted.
fn cmd_denoise(
    checkpoint: &Path,
    input_path: &Path,
    rule: &CorrectionRule,
    out_dir: Option<&Path>,
    debug_dump: bool,
) -> Result<()> {
    let (ckpt, hash) = load_checkpoint::<f64>(checkpoint)?;
    let input = load_auto(input_path)?;
    let raw = ckpt.net.infer(&input)?;
    let corrected = rule.apply(&raw, &input)?;
    let residual = implied_residual(&input, &raw)?;

    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => input_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&dir)?;
    let stem = input_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArg(format!("bad input name {}", input_path.display())))?;

    println!("checkpoint sha256 {hash}");
    let raw_png = dir.join(format!("{stem}_raw.png"));
    save_png(&raw_png, &raw)?;
    let residual_png = dir.join(format!("{stem}_residual.png"));
    save_png(&residual_png, &residual.map(|v| v + 0.5))?;
    let corrected_png = dir.join(format!("{stem}_corrected.png"));
    save_png(&corrected_png, &corrected)?;
    for path in [&raw_png, &residual_png, &corrected_png] {
        println!("wrote {}", path.display());
    }
    if debug_dump {
        for (name, tensor) in [
            ("input", &input),
            ("raw", &raw),
            ("residual", &residual),
            ("corrected", &corrected),
        ] {
            let path = dir.join(format!("{stem}_{name}.fimg"));
            save_fimg(&path, tensor)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    test_dir: &Path,
    noise: &NoiseModel,
    rule: &CorrectionRule,
    seed: u64,
    report_path: &Path,
    draws: usize,
    figure_dir: Option<PathBuf>,
) -> Result<()> {
    let (ckpt, hash) = load_checkpoint::<f64>(checkpoint)?;
    let figure_note = figure_dir.clone();
    let opts = EvalOptions {
        draws_per_image: draws,
        size_multiple: ckpt.net.arch().size_multiple(),
        figure_dir,
    };
    let report = evaluate(&ckpt.net, &hash, test_dir, noise, rule, seed, opts)?;
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    report.write_csv(report_path)?;
    println!("{}", report.summary());
    println!("report: {}", report_path.display());
    if let Some(dir) = figure_note {
        println!("figures: {}", dir.display());
    }
    Ok(())
}

fn cmd_oracle(seed: u64) -> Result<()> {
    let checks = denoise_core::oracle::run_suite(seed);
    let name_w = checks.iter().map(|c| c.name.len()).max().unwrap_or(4);
    let target_w = checks.iter().map(|c| c.target.len()).max().unwrap_or(6);
    let measured_w = checks.iter().map(|c| c.measured.len()).max().unwrap_or(8);
    println!(
        "{:<name_w$}  {:<target_w$}  {:<measured_w$}  {:<12}  result",
        "check", "target", "measured", "tolerance"
    );
    let mut failures = 0;
    for c in &checks {
        println!(
            "{:<name_w$}  {:<target_w$}  {:<measured_w$}  {:<12}  {}",
            c.name,
            c.target,
            c.measured,
            c.tolerance,
            if c.pass { "PASS" } else { "FAIL" }
        );
        if !c.pass {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::InvalidArg(format!(
            "{failures} of {} oracle checks failed",
            checks.len()
        )));
    }
    Ok(())
}

fn cmd_make_noisy(in_dir: &Path, out_dir: &Path, noise: &NoiseModel, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let paths = list_pngs(in_dir)?;
    for (i, path) in paths.iter().enumerate() {
        let clean = load_png(path)?;
        let mut rng = StreamRng::substream(seed, StreamKind::MakeNoisy, i as u64);
        let (noisy, _) = noise.apply_noise(&clean, &mut rng)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidArg(format!("bad input name {}", path.display())))?;
        // PNG cannot hold unclipped values; the 16-bit file is a windowed
        // preview and the .fimg sidecar carries the exact floats.
        save_png16_preview(&out_dir.join(format!("{stem}_noisy.png")), &noisy)?;
        save_fimg(&out_dir.join(format!("{stem}_noisy.fimg")), &noisy)?;
    }
    println!(
        "corrupted {} images -> {} (PNG previews + .fimg exact floats)",
        paths.len(),
        out_dir.display()
    );
    Ok(())
}
