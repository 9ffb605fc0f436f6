//! Inference-time corrections that turn the network's conditional-mean
//! estimate of the singly-noisy image into an estimate of the clean image.
//!
//! All transforms here are pure element-wise algebra and never clamp;
//! clamping happens only at the save and scoring boundaries.

use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Which correction algebra applies, with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionKind {
    /// Additive noise stacked at ratio alpha = std(second hit)/std(first).
    AdditiveAlpha { alpha: f64 },
    /// Multiplicative masks with drop probabilities p (first) and q (second).
    BernoulliMask { p: f64, q: f64 },
}

/// What the network sees at inference: the doubly-noisy Z it was trained
/// on, or the singly-noisy Y fed directly without the second hit.
///
/// The mode never changes the correction formula, only which tensor the
/// caller passes as `net_in`; the training-time parameters are reused
/// either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMode {
    DoublyNoisy,
    SinglyNoisy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionRule {
    pub kind: CorrectionKind,
    pub mode: InferenceMode,
}

impl CorrectionRule {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CorrectionKind::AdditiveAlpha { alpha } => {
                if alpha <= 0.0 || !alpha.is_finite() {
                    return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
                }
            }
            CorrectionKind::BernoulliMask { p, q } => {
                bernoulli_k(p, q)?;
            }
        }
        Ok(())
    }

    /// Applies the correction for this rule's kind.
    pub fn apply(&self, net_out: &ImageTensor, net_in: &ImageTensor) -> Result<ImageTensor> {
        match self.kind {
            CorrectionKind::AdditiveAlpha { alpha } => correct_additive(net_out, net_in, alpha),
            CorrectionKind::BernoulliMask { p, q } => correct_bernoulli(net_out, net_in, p, q),
        }
    }
}

/// Probability that the first mask dropped a pixel given that the combined
/// mask did: k = p / (p + q - p*q). Always derived from (p, q), never
/// cached, so it cannot go stale.
pub fn bernoulli_k(p: f64, q: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p must be in (0,1), got {p}")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("q must be in (0,1), got {q}")));
    }
    Ok(p / (p + q - p * q))
}

/// Clean estimate from additive stacking: ((1 + alpha^2) * net_out - net_in)
/// / alpha^2. Kept in this literal form so alpha = 1 is computed bit-for-bit
/// as doubling the output and subtracting the input.
pub fn correct_additive(
    net_out: &ImageTensor,
    net_in: &ImageTensor,
    alpha: f64,
) -> Result<ImageTensor> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if !net_out.same_shape(net_in) {
        return Err(Error::shape(format!(
            "correct_additive: {:?} vs {:?}",
            net_out.shape(),
            net_in.shape()
        )));
    }
    let a2 = alpha * alpha;
    let gain = 1.0 + a2;
    let data = net_out
        .data()
        .iter()
        .zip(net_in.data())
        .map(|(&f, &z)| (gain * f - z) / a2)
        .collect();
    ImageTensor::from_data(net_out.height(), net_out.width(), net_out.channels(), data)
}

/// Clean estimate from mask stacking: (net_out - k*net_in) / (1 - k) with
/// k = p/(p+q-pq). Computed as net_in + (net_out - net_in)/(1 - k), which
/// is the same algebra but passes an ideal prediction (net_out == net_in at
/// a surviving pixel) through unchanged.
pub fn correct_bernoulli(
    net_out: &ImageTensor,
    net_in: &ImageTensor,
    p: f64,
    q: f64,
) -> Result<ImageTensor> {
    let k = bernoulli_k(p, q)?;
    if !net_out.same_shape(net_in) {
        return Err(Error::shape(format!(
            "correct_bernoulli: {:?} vs {:?}",
            net_out.shape(),
            net_in.shape()
        )));
    }
    let inv = 1.0 / (1.0 - k);
    let data = net_out
        .data()
        .iter()
        .zip(net_in.data())
        .map(|(&f, &z)| z + (f - z) * inv)
        .collect();
    ImageTensor::from_data(net_out.height(), net_out.width(), net_out.channels(), data)
}

/// Keeps the observed value wherever the mask left the pixel intact and
/// uses the corrected estimate only at dropped pixels. `mask` is the binary
/// realization (1 = kept, 0 = dropped) and must contain only those values.
pub fn retain_unmasked(
    corrected: &ImageTensor,
    net_in: &ImageTensor,
    mask: &ImageTensor,
) -> Result<ImageTensor> {
    if !corrected.same_shape(net_in) || !corrected.same_shape(mask) {
        return Err(Error::shape(format!(
            "retain_unmasked: {:?} / {:?} / {:?}",
            corrected.shape(),
            net_in.shape(),
            mask.shape()
        )));
    }
    if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("mask must be binary 0/1"));
    }
    let data = corrected
        .data()
        .iter()
        .zip(net_in.data())
        .zip(mask.data())
        .map(|((&c, &z), &m)| if m == 1.0 { z } else { c })
        .collect();
    ImageTensor::from_data(corrected.height(), corrected.width(), corrected.channels(), data)
}

/// Noise the network believes is still present in its raw output:
/// net_in - net_out.
pub fn implied_residual(net_in: &ImageTensor, net_out: &ImageTensor) -> Result<ImageTensor> {
    net_in.sub(net_out)
}
