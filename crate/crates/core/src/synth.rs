//! Deterministic synthetic clean images: gradients, gratings, smoothed
//! texture, and flat shapes, normalized into [0.05, 0.95].
//!
//! Used to build training and evaluation corpora in environments with no
//! photo collection available. Image `id` fully determines the pixels for
//! a given seed.

use std::path::Path;

use crate::io::save_png;
use crate::noise::NoiseModel;
use crate::rng::{StreamKind, StreamRng};
use crate::tensor::ImageTensor;
use crate::Result;

/// Renders one synthetic RGB image. Same (seed, id, size) gives identical
/// pixels on every platform.
pub fn synthetic_image(seed: u64, id: u64, size: usize) -> ImageTensor {
    let mut rng = StreamRng::substream(seed, StreamKind::Synth, id);
    let (h, w, c) = (size, size, 3usize);
    let mut data = vec![0.0f64; h * w * c];

    // Linear gradient with a random direction, shared across channels with
    // per-channel gain.
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (gy, gx) = (angle.sin(), angle.cos());
    let ggain: Vec<f64> = (0..3).map(|_| rng.uniform(0.3, 1.0)).collect();
    for y in 0..h {
        for x in 0..w {
            let t = (gy * y as f64 + gx * x as f64) / size as f64;
            let base = (y * w + x) * c;
            for ch in 0..c {
                data[base + ch] += ggain[ch] * t;
            }
        }
    }

    // Two sinusoid gratings at random orientation, frequency and phase.
    for _ in 0..2 {
        let angle = rng.uniform(0.0, std::f64::consts::TAU);
        let freq = rng.uniform(2.0, 12.0) / size as f64;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let amp: Vec<f64> = (0..3).map(|_| rng.uniform(0.05, 0.3)).collect();
        let (ky, kx) = (angle.sin() * freq, angle.cos() * freq);
        for y in 0..h {
            for x in 0..w {
                let v = (std::f64::consts::TAU * (ky * y as f64 + kx * x as f64) + phase).sin();
                let base = (y * w + x) * c;
                for ch in 0..c {
                    data[base + ch] += amp[ch] * v;
                }
            }
        }
    }

    // Smooth cloud texture: one structured-noise draw per image.
    let cloud_sigma = rng.uniform(0.1, 0.3);
    let ksigma = rng.uniform(2.0, 6.0);
    let cloud = NoiseModel::StructuredGaussianAdditive {
        sigma: cloud_sigma,
        kernel_size: 2 * (3.0 * ksigma) as usize + 1,
        kernel_sigma: ksigma,
    }
    .sample_noise((h, w, 1), &mut rng)
    .expect("valid model");
    for y in 0..h {
        for x in 0..w {
            let v = cloud.get(y, x, 0);
            let base = (y * w + x) * c;
            for ch in 0..c {
                data[base + ch] += v;
            }
        }
    }

    // A few flat rectangles and disks for sharp edges.
    let n_shapes = 2 + rng.index(4);
    for _ in 0..n_shapes {
        let cy = rng.index(h) as f64;
        let cx = rng.index(w) as f64;
        let extent = rng.uniform(0.06, 0.25) * size as f64;
        let value: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let disk = rng.uniform01() < 0.5;
        let y_lo = (cy - extent).max(0.0) as usize;
        let y_hi = ((cy + extent) as usize).min(h - 1);
        let x_lo = (cx - extent).max(0.0) as usize;
        let x_hi = ((cx + extent) as usize).min(w - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if disk {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if d2 > extent * extent {
                        continue;
                    }
                }
                let base = (y * w + x) * c;
                for ch in 0..c {
                    data[base + ch] += value[ch];
                }
            }
        }
    }

    // Global affine rescale into [0.05, 0.95], keeping channel correlation.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi - lo < 1e-9 {
        data.fill(0.5);
    } else {
        let scale = 0.9 / (hi - lo);
        for v in &mut data {
            *v = 0.05 + (*v - lo) * scale;
        }
    }
    ImageTensor::from_data(h, w, c, data).expect("finite by construction")
}

/// Writes `count` synthetic images into `dir` as img_0000.png and so on.
pub fn write_corpus(dir: &Path, seed: u64, count: usize, size: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for id in 0..count {
        let img = synthetic_image(seed, id as u64, size);
        save_png(&dir.join(format!("img_{id:04}.png")), &img)?;
    }
    Ok(())
}
