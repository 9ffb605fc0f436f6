//! Training loop for the double-corruption objective.
//!
//! Every batch draws fresh crops, corrupts them once to build the target Y,
//! corrupts Y again to build the input Z, and regresses f(Z) onto Y. The
//! clean crop is dropped the moment Y exists; nothing downstream of noising
//! can see it (see `TrainHooks::tamper_clean_after_noising` for the test
//! that proves it).
//!
//! Determinism: all randomness is derived per sample from
//! (seed, stream kind, global sample index), where the global index of
//! sample i in batch b is b * batch_size + i. Batches are computed in
//! parallel but reduced in index order, so results are bit-identical
//! across runs and across worker-thread counts, and a resumed run replays
//! exactly the stream an uninterrupted run would have used.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::io::list_pngs;
use crate::nn::checkpoint::hex_sha256;
use crate::nn::{
    l2_loss, AdamState, Architecture, Checkpoint, Feature, Gradients, Network,
    load_checkpoint, save_checkpoint,
};
use crate::noise::NoiseModel;
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Everything that defines a training run. Two runs with equal configs
/// (and equal data under `data_dir`) produce bit-identical artifacts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Directory of training PNGs; loaded sorted by file name.
    pub data_dir: PathBuf,
    /// Where checkpoints and the loss CSV are written.
    pub out_dir: PathBuf,
    /// Primary corruption applied to clean crops.
    pub noise: NoiseModel,
    /// Secondary-noise scale for additive kinds (ignored by mask noise).
    pub alpha: f64,
    /// Secondary drop probability for mask noise (required there, and
    /// rejected for additive kinds).
    pub q: Option<f64>,
    pub patch_size: usize,
    pub batch_size: usize,
    pub total_batches: u64,
    /// (first batch index, learning rate) pairs; the rate of a batch is the
    /// last entry at or before it. Must start at index 0.
    pub lr_schedule: Vec<(u64, f64)>,
    pub seed: u64,
    /// Save a checkpoint every this many batches; 0 saves only the final one.
    pub checkpoint_every: u64,
    /// Warm-start parameters from this checkpoint, with a fresh optimizer
    /// and fresh batch indices. The base run's step count carries into the
    /// new checkpoints' metadata.
    pub fine_tune_from: Option<PathBuf>,
    /// Continue an interrupted run bit-exactly: parameters, optimizer state,
    /// and position all come from the checkpoint, which must have been
    /// written by this same config. Takes precedence over `fine_tune_from`,
    /// so an interrupted fine-tune resumes as itself; the config-hash check
    /// still pins the checkpoint to this exact trajectory.
    pub resume_from: Option<PathBuf>,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.noise.is_additive() {
            if self.alpha <= 0.0 || !self.alpha.is_finite() {
                return Err(Error::invalid(format!(
                    "alpha must be positive and finite, got {}",
                    self.alpha
                )));
            }
            if self.q.is_some() {
                return Err(Error::invalid("q applies to mask noise only"));
            }
        } else {
            match self.q {
                Some(q) if q > 0.0 && q < 1.0 => {}
                Some(q) => {
                    return Err(Error::invalid(format!("q must be in (0, 1), got {q}")))
                }
                None => return Err(Error::invalid("mask noise requires q")),
            }
        }
        if self.patch_size == 0 {
            return Err(Error::invalid("patch_size must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.lr_schedule.is_empty() {
            return Err(Error::invalid("lr_schedule must not be empty"));
        }
        if self.lr_schedule[0].0 != 0 {
            return Err(Error::invalid("lr_schedule must start at batch 0"));
        }
        for pair in self.lr_schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::invalid(
                    "lr_schedule batch indices must be strictly increasing",
                ));
            }
        }
        if let Some(&(_, bad)) = self
            .lr_schedule
            .iter()
            .find(|(_, lr)| *lr <= 0.0 || !lr.is_finite())
        {
            return Err(Error::invalid(format!("learning rate must be positive, got {bad}")));
        }
        Ok(())
    }

    /// The model that produces the second corruption, derived from the
    /// primary model and alpha (additive) or q (mask).
    pub fn secondary_model(&self) -> Result<NoiseModel> {
        if self.noise.is_additive() {
            self.noise.scaled_additive(self.alpha)
        } else {
            let q = self.q.ok_or_else(|| Error::invalid("mask noise requires q"))?;
            self.noise.secondary_bernoulli(q)
        }
    }

    /// Canonical text form of every field that affects the training
    /// trajectory. Excludes out_dir (artifact plumbing) and resume_from
    /// (a resumed run is the same run).
    fn canonical_string(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("data_dir={}\n", self.data_dir.display()));
        s.push_str(&format!("noise={:?}\n", self.noise));
        s.push_str(&format!("alpha={}\n", self.alpha));
        s.push_str(&format!("q={:?}\n", self.q));
        s.push_str(&format!("patch_size={}\n", self.patch_size));
        s.push_str(&format!("batch_size={}\n", self.batch_size));
        s.push_str(&format!("total_batches={}\n", self.total_batches));
        s.push_str("lr_schedule=");
        for (i, (b, lr)) in self.lr_schedule.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push_str(&format!("{b}:{lr}"));
        }
        s.push('\n');
        s.push_str(&format!("seed={}\n", self.seed));
        s.push_str(&format!("checkpoint_every={}\n", self.checkpoint_every));
        if let Some(p) = &self.fine_tune_from {
            s.push_str(&format!("fine_tune_from={}\n", p.display()));
        }
        s
    }

    /// 32-byte fingerprint stored in checkpoints and checked on resume.
    pub fn hash32(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.canonical_string().as_bytes()).into()
    }

    /// Hex form of `hash32`, usable as a cache directory name.
    pub fn hash_hex(&self) -> String {
        hex_sha256(self.canonical_string().as_bytes())
    }
}

/// Learning rate for a batch: the last schedule entry at or before it.
pub fn lr_at(schedule: &[(u64, f64)], batch: u64) -> f64 {
    let mut lr = schedule[0].1;
    for &(start, rate) in schedule {
        if start <= batch {
            lr = rate;
        } else {
            break;
        }
    }
    lr
}

/// 1e-3 for the first 90% of batches, then 1e-4.
pub fn default_schedule(total_batches: u64) -> Vec<(u64, f64)> {
    let cut = total_batches - total_batches / 10;
    if cut == 0 || cut >= total_batches {
        vec![(0, 1e-3)]
    } else {
        vec![(0, 1e-3), (cut, 1e-4)]
    }
}

/// Loads every PNG in `dir` (sorted by name) and checks each is large
/// enough to crop.
pub fn load_dataset(dir: &Path, min_size: usize) -> Result<Vec<ImageTensor>> {
    let paths = list_pngs(dir)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!("no PNG images in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    for path in &paths {
        let img = crate::io::load_png(path)?;
        if img.height() < min_size || img.width() < min_size {
            return Err(Error::invalid(format!(
                "{} is {}x{}, smaller than patch size {min_size}",
                path.display(),
                img.height(),
                img.width()
            )));
        }
        images.push(img);
    }
    Ok(images)
}

/// One training pair: the doubly-corrupted input Z and the target Y, for
/// global sample index g. Only the three per-sample streams are consumed,
/// so pairs can be built in any order or in parallel.
pub fn make_training_pair(
    images: &[ImageTensor],
    config: &TrainingConfig,
    secondary: &NoiseModel,
    g: u64,
) -> Result<(ImageTensor, ImageTensor)> {
    pair_with_tamper(images, config, secondary, g, None)
}

fn pair_with_tamper(
    images: &[ImageTensor],
    config: &TrainingConfig,
    secondary: &NoiseModel,
    g: u64,
    tamper: Option<&(dyn Fn(&mut ImageTensor) + Sync)>,
) -> Result<(ImageTensor, ImageTensor)> {
    let mut crop_rng = StreamRng::substream(config.seed, StreamKind::Crop, g);
    let img = &images[crop_rng.index(images.len())];
    let mut x = img.random_crop(config.patch_size, &mut crop_rng)?;

    let mut rng_n = StreamRng::substream(config.seed, StreamKind::NoiseN, g);
    let (y, _) = config.noise.apply_noise(&x, &mut rng_n)?;
    if let Some(f) = tamper {
        // The clean crop is dead here; corrupting it must change nothing.
        f(&mut x);
    }
    drop(x);

    let mut rng_m = StreamRng::substream(config.seed, StreamKind::NoiseM, g);
    let z = config.noise.make_doubly_noisy(&y, secondary, &mut rng_m)?;
    Ok((z, y))
}

/// Test and progress instrumentation; all fields default to off.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Mutates the clean crop immediately after the target is built.
    /// Training output must be identical with or without it.
    pub tamper_clean_after_noising: Option<&'a (dyn Fn(&mut ImageTensor) + Sync)>,
    /// Called after every batch with (batch index, batch loss, lr).
    pub on_batch: Option<&'a (dyn Fn(u64, f64, f64) + Sync)>,
}

/// Artifacts of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network<f32>,
    pub checkpoint_path: PathBuf,
    /// Hex SHA-256 of the final checkpoint file.
    pub checkpoint_hash: String,
    pub loss_csv_path: PathBuf,
    /// Loss of the last batch, or NaN if no batches ran.
    pub final_loss: f64,
    /// Cumulative steps recorded in the final checkpoint.
    pub step_count: u64,
}

/// Trains the standard architecture from scratch (or from the checkpoint
/// named by the config) and writes `final.ckpt` plus `loss.csv` to
/// `out_dir`.
pub fn train(config: &TrainingConfig) -> Result<TrainOutcome> {
    train_with_hooks(config, Architecture::default(), &TrainHooks::default())
}

/// `train` with an explicit architecture, for small-scale tests.
pub fn train_with_arch(config: &TrainingConfig, arch: Architecture) -> Result<TrainOutcome> {
    train_with_hooks(config, arch, &TrainHooks::default())
}

/// Warm-starts from `base`, keeping its parameters but replacing the
/// secondary scale with `new_alpha`, with a fresh optimizer and fresh batch
/// indices. Choose a seed different from the base run's unless replaying
/// the base run's exact sample stream is intended.
pub fn fine_tune(base: &Path, new_alpha: f64, config: &TrainingConfig) -> Result<TrainOutcome> {
    if !config.noise.is_additive() {
        return Err(Error::invalid("fine_tune rescales alpha; mask noise has none"));
    }
    let mut cfg = config.clone();
    cfg.alpha = new_alpha;
    cfg.fine_tune_from = Some(base.to_path_buf());
    cfg.resume_from = None;
    train(&cfg)
}

pub fn train_with_hooks(
    config: &TrainingConfig,
    arch: Architecture,
    hooks: &TrainHooks,
) -> Result<TrainOutcome> {
    config.validate()?;
    arch.validate()?;
    if !config.patch_size.is_multiple_of(arch.size_multiple()) {
        return Err(Error::invalid(format!(
            "patch_size {} is not a multiple of {}",
            config.patch_size,
            arch.size_multiple()
        )));
    }
    let images = load_dataset(&config.data_dir, config.patch_size)?;
    for img in &images {
        if img.channels() != arch.in_channels {
            return Err(Error::invalid(format!(
                "dataset has {}-channel images, network expects {}",
                img.channels(),
                arch.in_channels
            )));
        }
    }
    let secondary = config.secondary_model()?;
    let config_hash = config.hash32();

    // Resolve the starting state.
    let (mut net, mut adam, base_step, start_batch) = if let Some(path) = &config.resume_from {
        let (ckpt, _) = load_checkpoint::<f32>(path)?;
        if ckpt.net.arch() != &arch {
            return Err(Error::invalid(format!(
                "resume checkpoint architecture {:?} does not match {:?}",
                ckpt.net.arch(),
                arch
            )));
        }
        if ckpt.config_hash != config_hash {
            return Err(Error::invalid(
                "resume checkpoint was written by a different config",
            ));
        }
        let adam = ckpt
            .adam
            .ok_or_else(|| Error::invalid("resume checkpoint has no optimizer state"))?;
        let done = ckpt.step_count - ckpt.base_step;
        if done > config.total_batches {
            return Err(Error::invalid(format!(
                "checkpoint is at batch {done}, past total_batches {}",
                config.total_batches
            )));
        }
        (ckpt.net, adam, ckpt.base_step, done)
    } else if let Some(path) = &config.fine_tune_from {
        let (ckpt, _) = load_checkpoint::<f32>(path)?;
        if ckpt.net.arch() != &arch {
            return Err(Error::invalid(format!(
                "fine-tune checkpoint architecture {:?} does not match {:?}",
                ckpt.net.arch(),
                arch
            )));
        }
        let adam = AdamState::new(&ckpt.net);
        (ckpt.net, adam, ckpt.step_count, 0)
    } else {
        let mut rng = StreamRng::substream(config.seed, StreamKind::Init, 0);
        let net = Network::<f32>::init(arch, &mut rng)?;
        let adam = AdamState::new(&net);
        (net, adam, 0, 0)
    };

    std::fs::create_dir_all(&config.out_dir)?;
    let loss_csv_path = config.out_dir.join("loss.csv");

    // A resumed run keeps the loss rows it already wrote and regenerates
    // the rest, so the finished CSV matches an uninterrupted run's.
    let mut loss_lines: Vec<String> = Vec::new();
    if config.resume_from.is_some() && loss_csv_path.exists() {
        let text = std::fs::read_to_string(&loss_csv_path)?;
        for line in text.lines().skip(1) {
            let batch: u64 = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad loss.csv line: {line}")))?;
            if batch < start_batch {
                loss_lines.push(line.to_string());
            }
        }
    }

    let batch_size = config.batch_size as u64;
    let mut final_loss = f64::NAN;

    for batch in start_batch..config.total_batches {
        let lr = lr_at(&config.lr_schedule, batch);
        let contributions: Vec<(Gradients<f32>, f64)> = (0..batch_size)
            .into_par_iter()
            .map(|i| {
                let g = batch * batch_size + i;
                let (z, y) = pair_with_tamper(
                    &images,
                    config,
                    &secondary,
                    g,
                    hooks.tamper_clean_after_noising,
                )?;
                let input = Feature::<f32>::from_tensor(&z);
                let target = Feature::<f32>::from_tensor(&y);
                let (out, cache) = net.forward_cached(&input)?;
                let (loss, d_out) = l2_loss(&out, &target)?;
                let (grads, _) = net.backward(&cache, &d_out)?;
                Ok((grads, loss))
            })
            .collect::<Result<_>>()?;

        // Fixed-order reduction keeps results independent of thread count.
        let mut grads = Gradients::zeros_like(&net);
        let mut loss_sum = 0.0f64;
        for (g, l) in &contributions {
            grads.add_assign(g);
            loss_sum += l;
        }
        grads.scale(1.0 / batch_size as f64);
        let batch_loss = loss_sum / batch_size as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch {batch} loss is {batch_loss}"
            )));
        }
        adam.step(&mut net, &grads, lr)?;

        loss_lines.push(format!("{batch},{batch_loss:.9e},{lr}"));
        final_loss = batch_loss;
        if let Some(f) = hooks.on_batch {
            f(batch, batch_loss, lr);
        }

        let done = batch + 1;
        if config.checkpoint_every > 0
            && done % config.checkpoint_every == 0
            && done < config.total_batches
        {
            let ckpt = Checkpoint {
                net: net.clone(),
                step_count: base_step + done,
                base_step,
                config_hash,
                adam: Some(adam.clone()),
            };
            save_checkpoint(&config.out_dir.join(format!("ckpt_{done:07}.ckpt")), &ckpt)?;
            write_loss_csv(&loss_csv_path, &loss_lines)?;
        }
    }

    let ckpt = Checkpoint {
        net: net.clone(),
        step_count: base_step + config.total_batches,
        base_step,
        config_hash,
        adam: Some(adam),
    };
    let checkpoint_path = config.out_dir.join("final.ckpt");
    let checkpoint_hash = save_checkpoint(&checkpoint_path, &ckpt)?;
    write_loss_csv(&loss_csv_path, &loss_lines)?;

    Ok(TrainOutcome {
        net,
        checkpoint_path,
        checkpoint_hash,
        loss_csv_path,
        final_loss,
        step_count: ckpt.step_count,
    })
}

fn write_loss_csv(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = String::from("batch,loss,lr\n");
    for line in lines {
        text.push_str(line);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Scalar sanity model: predict y from z = y + m with f(z) = w z, where
/// y = x + n, x ~ N(0, sigma_x^2), n ~ N(0, sigma^2), m ~ N(0, (alpha
/// sigma)^2). Adam on mean squared error over 64-sample batches. The
/// population optimum is w* = (sigma_x^2 + sigma^2) /
/// (sigma_x^2 + (1 + alpha^2) sigma^2); returns the learned w.
pub fn train_toy_linear(
    sigma_x: f64,
    sigma: f64,
    alpha: f64,
    steps: u64,
    lr: f64,
    rng: &mut StreamRng,
) -> f64 {
    const BATCH: usize = 64;
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut w = 0.0f64;
    let (mut m1, mut m2) = (0.0f64, 0.0f64);
    for t in 1..=steps {
        let mut grad = 0.0f64;
        for _ in 0..BATCH {
            let x = rng.normal(sigma_x);
            let n = rng.normal(sigma);
            let m = rng.normal(alpha * sigma);
            let y = x + n;
            let z = y + m;
            grad += 2.0 * (w * z - y) * z;
        }
        grad /= BATCH as f64;
        m1 = BETA1 * m1 + (1.0 - BETA1) * grad;
        m2 = BETA2 * m2 + (1.0 - BETA2) * grad * grad;
        let m1h = m1 / (1.0 - BETA1.powi(t as i32));
        let m2h = m2 / (1.0 - BETA2.powi(t as i32));
        w -= lr * m1h / (m2h.sqrt() + EPS);
    }
    w
}

/// Population optimum of the toy linear problem.
pub fn toy_linear_optimum(sigma_x: f64, sigma: f64, alpha: f64) -> f64 {
    let sx2 = sigma_x * sigma_x;
    let s2 = sigma * sigma;
    (sx2 + s2) / (sx2 + (1.0 + alpha * alpha) * s2)
}
