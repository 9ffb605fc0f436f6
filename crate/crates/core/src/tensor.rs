//! Dense H×W×C image tensors and the spatial operations built on them.
//!
//! Values are referenced to a [0,1] intensity scale but are deliberately NOT
//! clamped: noisy images keep their out-of-range excursions, and clipping
//! only ever happens through the explicitly named [`ImageTensor::clip01`]
//! (or at the save/display boundary in [`crate::io`]).

use crate::rng::StreamRng;
use crate::{Error, Result};

/// Row-major (height, width, channels) floating-point image buffer.
///
/// Invariants: `data.len() == h*w*c` and every value is finite. Instances
/// are immutable once constructed and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    data: Vec<f64>,
    height: usize,
    width: usize,
    channels: usize,
}

impl ImageTensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ImageTensor {
            data: vec![0.0; height * width * channels],
            height,
            width,
            channels,
        }
    }

    /// Builds a tensor from raw row-major data, rejecting length mismatches
    /// and non-finite values.
    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "element {pos} is {} in a {height}x{width}x{channels} tensor",
                data[pos]
            )));
        }
        Ok(ImageTensor {
            data,
            height,
            width,
            channels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.shape() == other.shape()
    }

    fn require_same_shape(&self, other: &ImageTensor, op: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.require_same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(ImageTensor { data, ..*self })
    }

    pub fn sub(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.require_same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(ImageTensor { data, ..*self })
    }

    /// Element-wise product (used for multiplicative masks).
    pub fn mul_elem(&self, other: &ImageTensor) -> Result<ImageTensor> {
        self.require_same_shape(other, "mul_elem")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(ImageTensor { data, ..*self })
    }

    pub fn scale(&self, s: f64) -> ImageTensor {
        self.map(|v| v * s)
    }

    /// The one explicit clipping operation: clamps every value into [0,1].
    pub fn clip01(&self) -> ImageTensor {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation over all elements.
    pub fn std(&self) -> f64 {
        let mean = self.mean();
        let var = self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    /// Contiguous size×size crop at an offset sampled uniformly over all
    /// valid positions. Row offset is drawn before column offset.
    pub fn random_crop(&self, size: usize, rng: &mut StreamRng) -> Result<ImageTensor> {
        if size == 0 {
            return Err(Error::invalid("crop size must be positive"));
        }
        if size > self.height || size > self.width {
            return Err(Error::invalid(format!(
                "crop size {size} exceeds image {}x{}",
                self.height, self.width
            )));
        }
        let y0 = rng.index(self.height - size + 1);
        let x0 = rng.index(self.width - size + 1);
        Ok(self.crop(y0, x0, size, size))
    }

    /// Crop with explicit top-left corner. Caller guarantees bounds.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImageTensor {
        assert!(y0 + h <= self.height && x0 + w <= self.width);
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let row = &self.data[(y * self.width + x0) * c..(y * self.width + x0 + w) * c];
            data.extend_from_slice(row);
        }
        ImageTensor {
            data,
            height: h,
            width: w,
            channels: c,
        }
    }

    /// Largest centered crop whose sides are multiples of `factor`.
    pub fn center_crop_to_multiple(&self, factor: usize) -> ImageTensor {
        let h = (self.height / factor) * factor;
        let w = (self.width / factor) * factor;
        let y0 = (self.height - h) / 2;
        let x0 = (self.width - w) / 2;
        self.crop(y0, x0, h, w)
    }

    /// Per-channel 2-D correlation with symmetric reflect padding at the
    /// borders (index -1 maps back to 0, index n to n-1). Output shape equals
    /// input shape. Kernel side lengths must be odd.
    pub fn convolve2d(&self, kernel: &Kernel2d) -> Result<ImageTensor> {
        if kernel.rows.is_multiple_of(2) || kernel.cols.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "kernel dimensions must be odd, got {}x{}",
                kernel.rows, kernel.cols
            )));
        }
        let (h, w, c) = self.shape();
        let ry = (kernel.rows / 2) as isize;
        let rx = (kernel.cols / 2) as isize;
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for ky in 0..kernel.rows {
                let yy = reflect(y as isize + ky as isize - ry, h);
                let krow = &kernel.data[ky * kernel.cols..(ky + 1) * kernel.cols];
                for x in 0..w {
                    let base = (y * w + x) * c;
                    for (kx, &kv) in krow.iter().enumerate() {
                        let xx = reflect(x as isize + kx as isize - rx, w);
                        let src = (yy * w + xx) * c;
                        for ch in 0..c {
                            out[base + ch] += kv * self.data[src + ch];
                        }
                    }
                }
            }
        }
        Ok(ImageTensor {
            data: out,
            ..*self
        })
    }
}

/// Folds an index into [0, n) by mirroring at the edges (edge-inclusive:
/// -1 -> 0, n -> n-1). Handles offsets larger than the image.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Small dense 2-D coefficient grid for [`ImageTensor::convolve2d`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Kernel2d {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "kernel data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Kernel2d { rows, cols, data })
    }

    /// Square grid with coefficients proportional to a 2-D Gaussian of the
    /// given standard deviation (in pixels), centered on the middle tap.
    /// Coefficients are unnormalized; pick a normalization explicitly.
    pub fn gaussian(size: usize, sigma_px: f64) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::invalid(format!("kernel size {size} must be odd")));
        }
        if sigma_px <= 0.0 {
            return Err(Error::invalid(format!(
                "kernel sigma must be positive, got {sigma_px}"
            )));
        }
        let r = (size / 2) as isize;
        let mut data = Vec::with_capacity(size * size);
        for ky in -r..=r {
            for kx in -r..=r {
                let d2 = (ky * ky + kx * kx) as f64;
                data.push((-d2 / (2.0 * sigma_px * sigma_px)).exp());
            }
        }
        Ok(Kernel2d {
            rows: size,
            cols: size,
            data,
        })
    }

    /// Rescaled so coefficients sum to one (preserves constants).
    pub fn normalized_l1(mut self) -> Self {
        let s: f64 = self.data.iter().sum();
        for v in &mut self.data {
            *v /= s;
        }
        self
    }

    /// Rescaled to unit L2 norm (preserves the variance of white noise).
    pub fn normalized_l2(mut self) -> Self {
        let s: f64 = self.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut self.data {
            *v /= s;
        }
        self
    }

    /// Autocorrelation of the kernel at integer lag (dy, dx), normalized by
    /// the kernel energy. Used as the reference statistic for structured
    /// noise.
    pub fn autocorrelation(&self, dy: isize, dx: isize) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for y in 0..self.rows as isize {
            for x in 0..self.cols as isize {
                let v = self.data[(y * self.cols as isize + x) as usize];
                den += v * v;
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && yy < self.rows as isize && xx >= 0 && xx < self.cols as isize {
                    num += v * self.data[(yy * self.cols as isize + xx) as usize];
                }
            }
        }
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamKind, StreamRng};

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        let data = (0..h * w * c).map(|i| i as f64 * 0.01).collect();
        ImageTensor::from_data(h, w, c, data).unwrap()
    }

    #[test]
    fn from_data_validates_length_and_finiteness() {
        assert!(ImageTensor::from_data(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageTensor::from_data(2, 2, 1, vec![0.0, 1.0, f64::NAN, 0.5]).is_err());
        assert!(ImageTensor::from_data(2, 2, 1, vec![0.0, 1.3, -0.2, 0.5]).is_ok());
    }

    #[test]
    fn full_size_crop_is_identity() {
        let img = ramp(64, 64, 3);
        let mut rng = StreamRng::substream(0, StreamKind::Crop, 0);
        let crop = img.random_crop(64, &mut rng).unwrap();
        assert_eq!(crop, img);
    }

    #[test]
    fn crop_size_zero_and_oversized_are_errors() {
        let img = ramp(4, 4, 1);
        let mut rng = StreamRng::substream(0, StreamKind::Crop, 1);
        assert!(img.random_crop(0, &mut rng).is_err());
        assert!(img.random_crop(5, &mut rng).is_err());
    }

    #[test]
    fn unit_crop_offsets_are_uniform() {
        // Chi-square over the four possible 1x1 crops of a 2x2 image.
        let img = ImageTensor::from_data(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let draws = 40_000usize;
        let mut counts = [0usize; 4];
        for i in 0..draws {
            let mut rng = StreamRng::substream(11, StreamKind::Crop, i as u64);
            let v = img.random_crop(1, &mut rng).unwrap().data()[0];
            counts[v as usize] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% critical value for 3 degrees of freedom.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn identity_kernel_is_identity() {
        let img = ramp(8, 6, 3);
        let k = Kernel2d::new(1, 1, vec![1.0]).unwrap();
        let out = img.convolve2d(&k).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn averaging_kernel_preserves_constants() {
        let img = ImageTensor::from_data(5, 5, 2, vec![0.37; 50]).unwrap();
        let k = Kernel2d::new(3, 3, vec![1.0 / 9.0; 9]).unwrap();
        let out = img.convolve2d(&k).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn even_kernel_dimension_is_an_error() {
        let img = ramp(4, 4, 1);
        let k = Kernel2d::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(img.convolve2d(&k).is_err());
    }

    #[test]
    fn delta_image_reproduces_kernel_in_interior() {
        // Correlation of a centered delta with K places K around the delta,
        // mirrored: out[cy+dy][cx+dx] = K[center-dy][center-dx]. Checked
        // against a direct summation oracle over the full image.
        let (h, w) = (9, 9);
        let mut data = vec![0.0; h * w];
        data[4 * w + 4] = 1.0;
        let img = ImageTensor::from_data(h, w, 1, data).unwrap();
        let kdata: Vec<f64> = (0..9).map(|i| (i + 1) as f64 * 0.1).collect();
        let k = Kernel2d::new(3, 3, kdata.clone()).unwrap();
        let out = img.convolve2d(&k).unwrap();

        // Direct summation oracle with the same reflect convention.
        let naive = |y: isize, x: isize| -> f64 {
            let mut acc = 0.0;
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let yy = reflect(y + ky - 1, h);
                    let xx = reflect(x + kx - 1, w);
                    acc += kdata[(ky * 3 + kx) as usize] * img.get(yy, xx, 0);
                }
            }
            acc
        };
        for y in 0..h {
            for x in 0..w {
                let expect = naive(y as isize, x as isize);
                assert!((out.get(y, x, 0) - expect).abs() < 1e-15);
            }
        }
        // Interior response is the 180-degree rotated kernel around the delta.
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let got = out.get((4 + dy) as usize, (4 + dx) as usize, 0);
                let expect = kdata[((1 - dy) * 3 + (1 - dx)) as usize];
                assert!((got - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn convolution_is_linear() {
        let a = ramp(10, 10, 1);
        let b = a.map(|v| (v * 3.7).sin() * 0.5 + 0.5);
        let k = Kernel2d::gaussian(5, 1.3).unwrap().normalized_l1();
        let lhs = a
            .scale(2.0)
            .add(&b.scale(-0.7))
            .unwrap()
            .convolve2d(&k)
            .unwrap();
        let rhs = a
            .convolve2d(&k)
            .unwrap()
            .scale(2.0)
            .add(&b.convolve2d(&k).unwrap().scale(-0.7))
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            let scale = r.abs().max(1.0);
            assert!((l - r).abs() / scale < 1e-12);
        }
    }

    #[test]
    fn reflect_folds_far_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(-1, 1), 0);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn gaussian_kernel_l1_sums_to_one_and_peaks_at_center() {
        let k = Kernel2d::gaussian(21, 10.0).unwrap().normalized_l1();
        let sum: f64 = k.data.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let center = k.data[10 * 21 + 10];
        assert!(k.data.iter().all(|&v| v <= center));
    }
}
