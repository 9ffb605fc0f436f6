//! Noise distributions and the rules that build the singly- and
//! doubly-noisy observations from a clean image.
//!
//! Additive kinds never clip: a noisy image keeps values outside [0,1].
//! Multiplicative masks are binary and shared across channels at each pixel.

use crate::rng::StreamRng;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// One noise distribution, either the primary corruption on clean data or
/// the synthetic second hit applied on top of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// I.i.d. zero-mean Gaussian per channel element, std `sigma`.
    GaussianAdditive { sigma: f64 },
    /// White Gaussian noise smoothed by a Gaussian kernel (unit L2 norm, so
    /// the per-pixel marginal std is still `sigma`), giving spatially
    /// correlated noise.
    StructuredGaussianAdditive {
        sigma: f64,
        kernel_size: usize,
        kernel_sigma: f64,
    },
    /// Binary mask that zeroes a pixel (all channels together) with
    /// probability `drop_prob`.
    BernoulliMultiplicative { drop_prob: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::GaussianAdditive { sigma } => {
                if sigma <= 0.0 || !sigma.is_finite() {
                    return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
                }
            }
            NoiseModel::StructuredGaussianAdditive {
                sigma,
                kernel_size,
                kernel_sigma,
            } => {
                if sigma <= 0.0 || !sigma.is_finite() {
                    return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
                }
                if kernel_size % 2 == 0 || kernel_size == 0 {
                    return Err(Error::invalid(format!(
                        "kernel_size must be odd, got {kernel_size}"
                    )));
                }
                if kernel_sigma <= 0.0 || !kernel_sigma.is_finite() {
                    return Err(Error::invalid(format!(
                        "kernel_sigma must be > 0, got {kernel_sigma}"
                    )));
                }
            }
            NoiseModel::BernoulliMultiplicative { drop_prob } => {
                if !(drop_prob > 0.0 && drop_prob < 1.0) {
                    return Err(Error::invalid(format!(
                        "drop_prob must be in (0,1), got {drop_prob}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_additive(&self) -> bool {
        !matches!(self, NoiseModel::BernoulliMultiplicative { .. })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseModel::GaussianAdditive { .. } => "gaussian",
            NoiseModel::StructuredGaussianAdditive { .. } => "structured",
            NoiseModel::BernoulliMultiplicative { .. } => "bernoulli",
        }
    }

    /// Scaled copy for the second corruption of an additive model:
    /// same family, std alpha times the primary std.
    pub fn scaled_additive(&self, alpha: f64) -> Result<NoiseModel> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be > 0, got {alpha}")));
        }
        match *self {
            NoiseModel::GaussianAdditive { sigma } => Ok(NoiseModel::GaussianAdditive {
                sigma: alpha * sigma,
            }),
            NoiseModel::StructuredGaussianAdditive {
                sigma,
                kernel_size,
                kernel_sigma,
            } => Ok(NoiseModel::StructuredGaussianAdditive {
                sigma: alpha * sigma,
                kernel_size,
                kernel_sigma,
            }),
            NoiseModel::BernoulliMultiplicative { .. } => Err(Error::KindMismatch(
                "alpha scaling applies to additive models only".into(),
            )),
        }
    }

    /// Second mask for a multiplicative model, dropping with probability q.
    pub fn secondary_bernoulli(&self, q: f64) -> Result<NoiseModel> {
        match self {
            NoiseModel::BernoulliMultiplicative { .. } => {
                let m = NoiseModel::BernoulliMultiplicative { drop_prob: q };
                m.validate()?;
                Ok(m)
            }
            _ => Err(Error::KindMismatch(
                "secondary mask applies to the multiplicative model only".into(),
            )),
        }
    }

    /// Draws one noise realization. For additive kinds this is the additive
    /// field; for the multiplicative kind it is the binary mask.
    pub fn sample_noise(
        &self,
        shape: (usize, usize, usize),
        rng: &mut StreamRng,
    ) -> Result<ImageTensor> {
        self.validate()?;
        let (h, w, c) = shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::invalid(format!("zero-sized shape {shape:?}")));
        }
        match *self {
            NoiseModel::GaussianAdditive { sigma } => {
                let data = (0..h * w * c).map(|_| rng.normal(sigma)).collect();
                ImageTensor::from_data(h, w, c, data)
            }
            NoiseModel::StructuredGaussianAdditive {
                sigma,
                kernel_size,
                kernel_sigma,
            } => Ok(sample_structured(shape, sigma, kernel_size, kernel_sigma, rng)),
            NoiseModel::BernoulliMultiplicative { drop_prob } => {
                let mut data = vec![0.0; h * w * c];
                for px in 0..h * w {
                    let keep = if rng.uniform01() < drop_prob { 0.0 } else { 1.0 };
                    data[px * c..(px + 1) * c].fill(keep);
                }
                ImageTensor::from_data(h, w, c, data)
            }
        }
    }

    /// Combines a signal with an already-sampled noise realization:
    /// addition for additive kinds, element-wise product for masks.
    pub fn compose(&self, x: &ImageTensor, noise: &ImageTensor) -> Result<ImageTensor> {
        if self.is_additive() {
            x.add(noise)
        } else {
            x.mul_elem(noise)
        }
    }

    /// Samples noise and applies it, returning the corrupted image and the
    /// realization that produced it (the additive field or the mask).
    pub fn apply_noise(
        &self,
        x: &ImageTensor,
        rng: &mut StreamRng,
    ) -> Result<(ImageTensor, ImageTensor)> {
        let noise = self.sample_noise(x.shape(), rng)?;
        let noisy = self.compose(x, &noise)?;
        Ok((noisy, noise))
    }

    /// Applies the second corruption on top of an already-noisy image.
    /// `self` is the primary model; its class must match `model_b`
    /// (additive with additive, multiplicative with multiplicative).
    pub fn make_doubly_noisy(
        &self,
        y: &ImageTensor,
        model_b: &NoiseModel,
        rng: &mut StreamRng,
    ) -> Result<ImageTensor> {
        if self.is_additive() != model_b.is_additive() {
            return Err(Error::KindMismatch(format!(
                "primary {} cannot be stacked with secondary {}",
                self.kind_name(),
                model_b.kind_name()
            )));
        }
        let (z, _) = model_b.apply_noise(y, rng)?;
        Ok(z)
    }
}

/// Valid-mode separable smoothing of an expanded white-noise field. Every
/// output pixel sums independent draws through the same unit-L2 taps, so
/// the marginal std is exactly sigma everywhere, including borders.
fn sample_structured(
    shape: (usize, usize, usize),
    sigma: f64,
    kernel_size: usize,
    kernel_sigma: f64,
    rng: &mut StreamRng,
) -> ImageTensor {
    let (h, w, c) = shape;
    let r = kernel_size / 2;
    let taps = gaussian_taps_l2(kernel_size, kernel_sigma);

    let (he, we) = (h + 2 * r, w + 2 * r);
    let mut white = vec![0.0f64; he * we * c];
    for v in &mut white {
        *v = rng.normal(1.0);
    }

    // Horizontal pass: he x w x c.
    let mut tmp = vec![0.0f64; he * w * c];
    for y in 0..he {
        for x in 0..w {
            for (k, &t) in taps.iter().enumerate() {
                let src = (y * we + x + k) * c;
                let dst = (y * w + x) * c;
                for ch in 0..c {
                    tmp[dst + ch] += t * white[src + ch];
                }
            }
        }
    }

    // Vertical pass: h x w x c, scaled to the target marginal std.
    let mut out = vec![0.0f64; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let dst = (y * w + x) * c;
            for (k, &t) in taps.iter().enumerate() {
                let src = ((y + k) * w + x) * c;
                for ch in 0..c {
                    out[dst + ch] += t * tmp[src + ch];
                }
            }
        }
    }
    for v in &mut out {
        *v *= sigma;
    }
    ImageTensor::from_data(h, w, c, out).expect("finite by construction")
}

/// 1-D Gaussian taps with unit L2 norm. The separable product of two such
/// vectors equals the unit-L2 2-D Gaussian kernel.
fn gaussian_taps_l2(size: usize, sigma_px: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let mut taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let norm = taps.iter().map(|v| v * v).sum::<f64>().sqrt();
    for t in &mut taps {
        *t /= norm;
    }
    taps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKind;
    use crate::tensor::Kernel2d;

    fn rng(idx: u64) -> StreamRng {
        StreamRng::substream(7, StreamKind::NoiseN, idx)
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(NoiseModel::GaussianAdditive { sigma: 0.0 }.validate().is_err());
        assert!(NoiseModel::GaussianAdditive { sigma: -0.1 }.validate().is_err());
        assert!(NoiseModel::BernoulliMultiplicative { drop_prob: 0.0 }
            .validate()
            .is_err());
        assert!(NoiseModel::BernoulliMultiplicative { drop_prob: 1.0 }
            .validate()
            .is_err());
        assert!(NoiseModel::StructuredGaussianAdditive {
            sigma: 0.1,
            kernel_size: 20,
            kernel_sigma: 10.0
        }
        .validate()
        .is_err());
        let m = NoiseModel::GaussianAdditive { sigma: 0.1 };
        assert!(m.sample_noise((0, 4, 1), &mut rng(0)).is_err());
    }

    #[test]
    fn gaussian_sample_moments() {
        let m = NoiseModel::GaussianAdditive { sigma: 0.1 };
        let n = m.sample_noise((1000, 1000, 1), &mut rng(1)).unwrap();
        let mean = n.mean();
        let std = n.std();
        assert!(mean.abs() < 4.0 * 0.1 / 1000.0, "mean = {mean}");
        assert!((std - 0.1).abs() / 0.1 < 0.01, "std = {std}");
    }

    #[test]
    fn bernoulli_zero_fraction_and_channel_sharing() {
        let m = NoiseModel::BernoulliMultiplicative { drop_prob: 0.5 };
        let mask = m.sample_noise((1000, 1000, 3), &mut rng(2)).unwrap();
        let mut zeros = 0usize;
        for px in 0..1000 * 1000 {
            let v = mask.data()[px * 3];
            assert!(v == 0.0 || v == 1.0);
            assert_eq!(mask.data()[px * 3 + 1], v);
            assert_eq!(mask.data()[px * 3 + 2], v);
            if v == 0.0 {
                zeros += 1;
            }
        }
        let frac = zeros as f64 / 1e6;
        assert!((frac - 0.5).abs() < 0.002, "zero fraction = {frac}");
    }

    #[test]
    fn structured_marginal_std_matches_sigma() {
        let m = NoiseModel::StructuredGaussianAdditive {
            sigma: 0.2,
            kernel_size: 21,
            kernel_sigma: 10.0,
        };
        let n = m.sample_noise((512, 512, 1), &mut rng(3)).unwrap();
        let std = n.std();
        // Correlation length ~kernel_sigma shrinks the effective sample
        // count, so the band is wider than the white-noise case.
        assert!((std - 0.2).abs() / 0.2 < 0.05, "std = {std}");
        let mean = n.mean();
        assert!(mean.abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn structured_lag1_autocorrelation_matches_kernel() {
        let (size, ksigma) = (21usize, 10.0);
        let m = NoiseModel::StructuredGaussianAdditive {
            sigma: 0.1,
            kernel_size: size,
            kernel_sigma: ksigma,
        };
        let n = m.sample_noise((512, 512, 1), &mut rng(4)).unwrap();

        // Empirical lag-(0,1) correlation over all horizontal neighbor pairs.
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..512 {
            for x in 0..512 {
                let v = n.get(y, x, 0);
                den += v * v;
                if x + 1 < 512 {
                    num += v * n.get(y, x + 1, 0);
                }
            }
        }
        let empirical = num / den;

        let reference = Kernel2d::gaussian(size, ksigma)
            .unwrap()
            .normalized_l2()
            .autocorrelation(0, 1);
        assert!(
            (empirical - reference).abs() / reference < 0.02,
            "empirical = {empirical}, reference = {reference}"
        );
    }

    #[test]
    fn compose_with_zero_noise_or_identity_mask_is_identity() {
        let x = ImageTensor::from_data(2, 2, 1, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let zeros = ImageTensor::zeros(2, 2, 1);
        let gauss = NoiseModel::GaussianAdditive { sigma: 0.1 };
        assert_eq!(gauss.compose(&x, &zeros).unwrap(), x);

        let ones = zeros.map(|_| 1.0);
        let bern = NoiseModel::BernoulliMultiplicative { drop_prob: 0.5 };
        assert_eq!(bern.compose(&x, &ones).unwrap(), x);
        assert_eq!(bern.compose(&x, &zeros).unwrap(), zeros);
    }

    #[test]
    fn double_hit_variance_adds() {
        // Var(Z - X) = (1 + alpha^2) sigma^2 when both hits are independent.
        let sigma = 0.1;
        let x = ImageTensor::zeros(1000, 1000, 1);
        let a = NoiseModel::GaussianAdditive { sigma };
        for (alpha, idx) in [(1.0, 10u64), (0.5, 11u64)] {
            let b = a.scaled_additive(alpha).unwrap();
            let (y, _) = a.apply_noise(&x, &mut rng(idx)).unwrap();
            let z = a
                .make_doubly_noisy(&y, &b, &mut StreamRng::substream(7, StreamKind::NoiseM, idx))
                .unwrap();
            let total = z.sub(&x).unwrap().std();
            let expect = sigma * (1.0 + alpha * alpha).sqrt();
            assert!(
                (total - expect).abs() / expect < 0.02,
                "alpha = {alpha}: std = {total}, expect = {expect}"
            );
        }
    }

    #[test]
    fn double_mask_zero_fraction() {
        // A pixel survives both masks with probability (1-p)(1-q).
        let x = ImageTensor::zeros(1000, 1000, 1).map(|_| 1.0);
        let a = NoiseModel::BernoulliMultiplicative { drop_prob: 0.5 };
        let b = a.secondary_bernoulli(0.5).unwrap();
        let (y, _) = a.apply_noise(&x, &mut rng(20)).unwrap();
        let z = a
            .make_doubly_noisy(&y, &b, &mut StreamRng::substream(7, StreamKind::NoiseM, 20))
            .unwrap();
        let zeros = z.data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / 1e6;
        assert!((frac - 0.75).abs() < 0.002, "zero fraction = {frac}");
    }

    #[test]
    fn mixed_kinds_are_rejected() {
        let a = NoiseModel::GaussianAdditive { sigma: 0.1 };
        let b = NoiseModel::BernoulliMultiplicative { drop_prob: 0.5 };
        let y = ImageTensor::zeros(4, 4, 1);
        assert!(a.make_doubly_noisy(&y, &b, &mut rng(30)).is_err());
        assert!(b.make_doubly_noisy(&y, &a, &mut rng(31)).is_err());
        assert!(b.scaled_additive(1.0).is_err());
        assert!(a.secondary_bernoulli(0.5).is_err());
    }
}
