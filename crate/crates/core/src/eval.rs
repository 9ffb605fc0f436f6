//! PSNR scoring and evaluation reports.
//!
//! Scoring conventions, enforced by construction: the noisy-input score is
//! computed on the unclipped noisy image; raw and corrected outputs are
//! clipped to [0,1] and quantized to 8-bit codes before scoring; the clean
//! reference always stays float.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::correction::{self, CorrectionKind, CorrectionRule, InferenceMode};
use crate::io::{list_pngs, load_png, quantize_u8, save_png};
use crate::nn::Network;
use crate::noise::NoiseModel;
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// 10*log10(peak^2 / MSE) in dB, +inf when the images match exactly.
/// No clipping happens here; callers choose what to feed in.
pub fn psnr(reference: &ImageTensor, test: &ImageTensor, peak: f64) -> Result<f64> {
    if !reference.same_shape(test) {
        return Err(Error::shape(format!(
            "psnr: {:?} vs {:?}",
            reference.shape(),
            test.shape()
        )));
    }
    if peak <= 0.0 || peak.is_nan() {
        return Err(Error::invalid(format!("peak must be > 0, got {peak}")));
    }
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Std and mean of raw_output - clean.
pub fn residual_stats(raw_output: &ImageTensor, clean: &ImageTensor) -> Result<(f64, f64)> {
    let residual = raw_output.sub(clean)?;
    Ok((residual.std(), residual.mean()))
}

/// Clips to [0,1] and snaps every value to its 8-bit code, mirroring what
/// an image viewer would load back from the saved PNG.
pub fn quantize_for_scoring(img: &ImageTensor) -> ImageTensor {
    img.map(|v| quantize_u8(v) as f64 / 255.0)
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub noisy_psnr: f64,
    pub raw_psnr: f64,
    pub corrected_psnr: f64,
    /// Corrected estimate with observed pixels written back at surviving
    /// positions; only produced for mask noise.
    pub retained_psnr: Option<f64>,
    pub residual_std: f64,
}

/// Full evaluation result: per-image rows in input order plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mode: InferenceMode,
    pub noise_desc: String,
    pub rule_desc: String,
    pub checkpoint_hash: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn mean_noisy_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.noisy_psnr))
    }

    pub fn mean_raw_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.raw_psnr))
    }

    pub fn mean_corrected_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.corrected_psnr))
    }

    pub fn mean_retained_psnr(&self) -> Option<f64> {
        if self.rows.iter().all(|r| r.retained_psnr.is_some()) && !self.rows.is_empty() {
            Some(mean(self.rows.iter().map(|r| r.retained_psnr.unwrap())))
        } else {
            None
        }
    }

    pub fn mean_residual_std(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.residual_std))
    }

    /// Deterministic CSV: `#` metadata lines, a header, one row per image,
    /// and a final aggregate_mean row. Identical reports serialize to
    /// identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# checkpoint_hash={}", self.checkpoint_hash);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# noise={}", self.noise_desc);
        let _ = writeln!(out, "# rule={}", self.rule_desc);
        let _ = writeln!(out, "# mode={}", mode_name(self.mode));
        let _ = writeln!(
            out,
            "image,noisy_psnr,raw_psnr,corrected_psnr,retained_psnr,residual_std"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                row.image,
                db(row.noisy_psnr),
                db(row.raw_psnr),
                db(row.corrected_psnr),
                row.retained_psnr.map(db).unwrap_or_default(),
                fmt6(row.residual_std)
            );
        }
        let _ = writeln!(
            out,
            "aggregate_mean,{},{},{},{},{}",
            db(self.mean_noisy_psnr()),
            db(self.mean_raw_psnr()),
            db(self.mean_corrected_psnr()),
            self.mean_retained_psnr().map(db).unwrap_or_default(),
            fmt6(self.mean_residual_std())
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Short human-readable summary for standard output.
    pub fn summary(&self) -> String {
        let retained = self
            .mean_retained_psnr()
            .map(|v| format!(", retained {}", db(v)))
            .unwrap_or_default();
        format!(
            "{} images | mean PSNR dB: noisy {}, raw {}, corrected {}{} | residual std {}",
            self.rows.len(),
            db(self.mean_noisy_psnr()),
            db(self.mean_raw_psnr()),
            db(self.mean_corrected_psnr()),
            retained,
            fmt6(self.mean_residual_std())
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

fn db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn mode_name(mode: InferenceMode) -> &'static str {
    match mode {
        InferenceMode::DoublyNoisy => "doubly_noisy",
        InferenceMode::SinglyNoisy => "singly_noisy",
    }
}

/// Height of the label band above the tiles in a figure strip.
pub const GRID_LABEL_BAND_PX: usize = 12;
/// Width of the separator column between adjacent tiles.
pub const GRID_SEPARATOR_PX: usize = 4;

/// Writes labeled tiles side by side as one PNG strip for visual comparison.
/// All tiles must share one shape. A band of [`GRID_LABEL_BAND_PX`] rows
/// above the tiles shows each label in a fixed 8x8 pixel font, truncated to
/// the tile width; out-of-range pixel values are clipped by the PNG
/// quantizer, so the strip is display-safe for unclipped tensors.
pub fn figure_grid(tiles: &[(&str, &ImageTensor)], path: &Path) -> Result<()> {
    let Some(((_, first), rest)) = tiles.split_first() else {
        return Err(Error::invalid("figure grid needs at least one tile"));
    };
    let (h, w, c) = first.shape();
    for (label, img) in rest {
        if !img.same_shape(first) {
            return Err(Error::shape(format!(
                "tile {label}: {:?}, expected {:?}",
                img.shape(),
                first.shape()
            )));
        }
    }
    let count = tiles.len();
    let out_w = count * w + (count - 1) * GRID_SEPARATOR_PX;
    let out_h = h + GRID_LABEL_BAND_PX;
    // White canvas doubles as band background and separators.
    let mut data = vec![1.0; out_h * out_w * c];
    for (t, (label, img)) in tiles.iter().enumerate() {
        let x0 = t * (w + GRID_SEPARATOR_PX);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[((y + GRID_LABEL_BAND_PX) * out_w + x0 + x) * c + ch] =
                        img.get(y, x, ch);
                }
            }
        }
        for (j, glyph_char) in label.chars().enumerate() {
            let gx = x0 + 2 + j * 8;
            if gx + 8 > x0 + w || !glyph_char.is_ascii() {
                break;
            }
            let glyph = font8x8::legacy::BASIC_LEGACY[glyph_char as usize];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..8 {
                    if bits & (1 << col) != 0 {
                        let px = ((2 + row) * out_w + gx + col) * c;
                        data[px..px + c].fill(0.0);
                    }
                }
            }
        }
    }
    let strip = ImageTensor::from_data(out_h, out_w, c, data)?;
    save_png(path, &strip)
}

/// Options for [`evaluate`] beyond the core protocol.
#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Average this many independent noise draws per image (default 1, the
    /// single-realization protocol).
    pub draws_per_image: usize,
    /// Center-crop inputs so height and width are multiples of this.
    pub size_multiple: usize,
    /// When set, write a clean/input/raw/corrected [`figure_grid`] strip per
    /// image (first draw only) into this directory.
    pub figure_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            draws_per_image: 1,
            size_multiple: 1,
            figure_dir: None,
        }
    }
}

/// Scores a trained network over every PNG in `test_dir`.
///
/// Per image and draw: corrupt the clean image once with the primary model
/// (noise stream), optionally stack the second hit (mask stream), run the
/// network on Z (DoublyNoisy) or Y (SinglyNoisy), correct, and score under
/// the clipping conventions. Draw d of image i uses substream index
/// i * draws + d on the evaluation streams, so reports are independent of
/// iteration order and thread count.
pub fn evaluate(
    net: &Network<f64>,
    checkpoint_hash: &str,
    test_dir: &Path,
    noise: &NoiseModel,
    rule: &CorrectionRule,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvalReport> {
    noise.validate()?;
    rule.validate()?;
    if opts.draws_per_image == 0 {
        return Err(Error::invalid("draws_per_image must be at least 1"));
    }
    let paths = list_pngs(test_dir)?;
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no PNG images in {}",
            test_dir.display()
        )));
    }
    let secondary = secondary_model(noise, rule)?;

    let mut rows = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let clean_full = load_png(path)?;
        let clean = if opts.size_multiple > 1 {
            let cropped = clean_full.center_crop_to_multiple(opts.size_multiple);
            if cropped.shape() != clean_full.shape() {
                eprintln!(
                    "{name}: center-cropped {:?} to {:?} for the network",
                    clean_full.shape(),
                    cropped.shape()
                );
            }
            cropped
        } else {
            clean_full
        };
        if clean.channels() != net.arch().in_channels {
            return Err(Error::shape(format!(
                "{name}: {} channels, network expects {}",
                clean.channels(),
                net.arch().in_channels
            )));
        }

        let (mut s_noisy, mut s_raw, mut s_corr, mut s_ret, mut s_res) =
            (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut any_retained = false;
        for d in 0..opts.draws_per_image {
            let g = (i * opts.draws_per_image + d) as u64;
            let mut rng_n = StreamRng::substream(seed, StreamKind::EvalNoiseN, g);
            let mut rng_m = StreamRng::substream(seed, StreamKind::EvalNoiseM, g);
            let (y, _first) = noise.apply_noise(&clean, &mut rng_n)?;

            let (net_in, z_mask) = match rule.mode {
                InferenceMode::DoublyNoisy => {
                    let m = secondary.sample_noise(y.shape(), &mut rng_m)?;
                    (secondary.compose(&y, &m)?, Some(m))
                }
                InferenceMode::SinglyNoisy => (y.clone(), None),
            };
            let net_out = net.infer(&net_in)?;
            let corrected = rule.apply(&net_out, &net_in)?;

            if d == 0 {
                if let Some(dir) = &opts.figure_dir {
                    std::fs::create_dir_all(dir)?;
                    figure_grid(
                        &[
                            ("clean", &clean),
                            ("input", &net_in),
                            ("raw", &net_out),
                            ("corrected", &corrected),
                        ],
                        &dir.join(format!("{name}_grid.png")),
                    )?;
                }
            }

            s_noisy += psnr(&clean, &y, 1.0)?;
            s_raw += psnr(&clean, &quantize_for_scoring(&net_out), 1.0)?;
            s_corr += psnr(&clean, &quantize_for_scoring(&corrected), 1.0)?;
            let (res_std, _) = residual_stats(&net_out, &clean)?;
            s_res += res_std;

            if let CorrectionKind::BernoulliMask { .. } = rule.kind {
                // The mask that actually zeroed pixels in the network input:
                // the product of both masks when the second hit was applied.
                let mask = match (&z_mask, rule.mode) {
                    (Some(m), InferenceMode::DoublyNoisy) => _first.mul_elem(m)?,
                    _ => _first.clone(),
                };
                let retained = correction::retain_unmasked(&corrected, &net_in, &mask)?;
                s_ret += psnr(&clean, &quantize_for_scoring(&retained), 1.0)?;
                any_retained = true;
            }
        }
        let n = opts.draws_per_image as f64;
        rows.push(EvalRow {
            image: name,
            noisy_psnr: s_noisy / n,
            raw_psnr: s_raw / n,
            corrected_psnr: s_corr / n,
            retained_psnr: any_retained.then_some(s_ret / n),
            residual_std: s_res / n,
        });
    }

    Ok(EvalReport {
        rows,
        mode: rule.mode,
        noise_desc: format!("{noise:?}"),
        rule_desc: format!("{:?}", rule.kind),
        checkpoint_hash: checkpoint_hash.to_string(),
        seed,
    })
}

/// The second-hit model implied by the correction rule, validated against
/// the primary model's kind.
pub fn secondary_model(noise: &NoiseModel, rule: &CorrectionRule) -> Result<NoiseModel> {
    match rule.kind {
        CorrectionKind::AdditiveAlpha { alpha } => noise.scaled_additive(alpha),
        CorrectionKind::BernoulliMask { p, q } => {
            if let NoiseModel::BernoulliMultiplicative { drop_prob } = noise {
                if (drop_prob - p).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "rule assumes first-mask drop probability {p}, noise model has {drop_prob}"
                    )));
                }
            }
            noise.secondary_bernoulli(q)
        }
    }
}
