//! A small residual convolutional denoiser with hand-written reverse-mode
//! gradients.
//!
//! The whole stack is generic over the float width: f32 for training speed,
//! f64 for inference determinism and for finite-difference validation of
//! the same code path. Convolutions are im2col plus GEMM; weights are laid
//! out [out][ky][kx][in] so the im2col column index maps straight onto the
//! weight buffer.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::rng::StreamRng;
use crate::tensor::ImageTensor;
use crate::{Error, Result};

/// Float width the network runs in. The GEMM hook dispatches to the
/// matching matrixmultiply kernel; everything else is ordinary arithmetic.
pub trait Scalar:
    Copy
    + Send
    + Sync
    + PartialOrd
    + std::fmt::Debug
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::AddAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn finite(self) -> bool;
    /// C = alpha*A*B + beta*C over raw pointers with explicit strides.
    ///
    /// # Safety
    ///
    /// Pointers must cover m*k, k*n and m*n elements under the
    /// given strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Shape of the network. Determines every parameter block; two networks
/// with equal descriptors are layout-compatible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub in_channels: usize,
    pub hidden_channels: usize,
    /// Hidden convolutions between the input and output convolutions.
    pub hidden_layers: usize,
    pub kernel_size: usize,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            in_channels: 3,
            hidden_channels: 32,
            hidden_layers: 4,
            kernel_size: 3,
            leaky_slope: 0.1,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) || self.kernel_size == 0 {
            return Err(Error::invalid(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if !self.leaky_slope.is_finite() {
            return Err(Error::invalid("leaky_slope must be finite"));
        }
        Ok(())
    }

    pub fn n_convs(&self) -> usize {
        self.hidden_layers + 2
    }

    /// Spatial size must divide this (no downsampling in this net).
    pub fn size_multiple(&self) -> usize {
        1
    }

    fn conv_shape(&self, layer: usize) -> (usize, usize) {
        let last = self.n_convs() - 1;
        let ci = if layer == 0 { self.in_channels } else { self.hidden_channels };
        let co = if layer == last { self.in_channels } else { self.hidden_channels };
        (co, ci)
    }
}

/// Dense H x W x C activation buffer in the network's float width.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Feature<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Feature {
            height,
            width,
            channels,
            data: vec![T::ZERO; height * width * channels],
        }
    }

    pub fn from_tensor(img: &ImageTensor) -> Self {
        Feature {
            height: img.height(),
            width: img.width(),
            channels: img.channels(),
            data: img.data().iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<ImageTensor> {
        ImageTensor::from_data(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| v.to_f64()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn same_shape(&self, other: &Feature<T>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// One convolution: weights [co][ky][kx][ci], bias [co], same-size output
/// via zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub co: usize,
    pub ci: usize,
    pub k: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(co: usize, ci: usize, k: usize) -> Self {
        ConvLayer {
            co,
            ci,
            k,
            weights: vec![T::ZERO; co * k * k * ci],
            bias: vec![T::ZERO; co],
        }
    }

    fn cols_width(&self) -> usize {
        self.k * self.k * self.ci
    }

    /// Pre-activation output plus the im2col buffer for backward.
    fn forward_cached(&self, input: &Feature<T>) -> (Feature<T>, Vec<T>) {
        let cols = im2col(input, self.k, 0, input.height);
        let preact = self.gemm_forward(&cols, input.height, input.width);
        (preact, cols)
    }

    /// Pre-activation output without retaining cols; works in bounded row
    /// tiles so large images stay within memory.
    fn forward_tiled(&self, input: &Feature<T>) -> Feature<T> {
        let (h, w) = (input.height, input.width);
        let tile_rows = (16_384 / w.max(1)).clamp(1, h);
        let mut out = Feature::zeros(h, w, self.co);
        let mut y = 0;
        while y < h {
            let rows = tile_rows.min(h - y);
            let cols = im2col(input, self.k, y, rows);
            let part = self.gemm_forward(&cols, rows, w);
            let dst = y * w * self.co;
            out.data[dst..dst + part.data.len()].copy_from_slice(&part.data);
            y += rows;
        }
        out
    }

    fn gemm_forward(&self, cols: &[T], rows: usize, w: usize) -> Feature<T> {
        let px = rows * w;
        let kw = self.cols_width();
        let mut out = Feature::zeros(rows, w, self.co);
        unsafe {
            T::gemm(
                px,
                kw,
                self.co,
                T::ONE,
                cols.as_ptr(),
                kw as isize,
                1,
                self.weights.as_ptr(),
                1,
                kw as isize,
                T::ZERO,
                out.data.as_mut_ptr(),
                self.co as isize,
                1,
            );
        }
        for p in 0..px {
            let base = p * self.co;
            for o in 0..self.co {
                out.data[base + o] += self.bias[o];
            }
        }
        out
    }

    /// Gradients for this layer and for its input, given the gradient at
    /// the pre-activation output.
    fn backward(
        &self,
        cols: &[T],
        d_preact: &Feature<T>,
        in_h: usize,
        in_w: usize,
    ) -> (LayerGrad<T>, Feature<T>) {
        let px = d_preact.height * d_preact.width;
        let kw = self.cols_width();
        let mut grad = LayerGrad {
            d_weights: vec![T::ZERO; self.weights.len()],
            d_bias: vec![T::ZERO; self.co],
        };
        // dW[o][r] = sum_px dZ[px][o] * cols[px][r]
        unsafe {
            T::gemm(
                self.co,
                px,
                kw,
                T::ONE,
                d_preact.data.as_ptr(),
                1,
                self.co as isize,
                cols.as_ptr(),
                kw as isize,
                1,
                T::ZERO,
                grad.d_weights.as_mut_ptr(),
                kw as isize,
                1,
            );
        }
        for p in 0..px {
            let base = p * self.co;
            for o in 0..self.co {
                grad.d_bias[o] += d_preact.data[base + o];
            }
        }
        // d_cols[px][r] = sum_o dZ[px][o] * W[o][r]
        let mut d_cols = vec![T::ZERO; px * kw];
        unsafe {
            T::gemm(
                px,
                self.co,
                kw,
                T::ONE,
                d_preact.data.as_ptr(),
                self.co as isize,
                1,
                self.weights.as_ptr(),
                kw as isize,
                1,
                T::ZERO,
                d_cols.as_mut_ptr(),
                kw as isize,
                1,
            );
        }
        let d_input = col2im(&d_cols, in_h, in_w, self.ci, self.k);
        (grad, d_input)
    }
}

/// Writes (rows x w) x (k*k*ci) patch rows starting at image row y0.
/// Out-of-image taps stay zero (zero padding).
fn im2col<T: Scalar>(input: &Feature<T>, k: usize, y0: usize, rows: usize) -> Vec<T> {
    let (h, w, ci) = (input.height, input.width, input.channels);
    let pad = k / 2;
    let kw = k * k * ci;
    let mut cols = vec![T::ZERO; rows * w * kw];
    for dy in 0..rows {
        let y = y0 + dy;
        for ky in 0..k {
            let yy = y + ky;
            if yy < pad || yy >= h + pad {
                continue;
            }
            let yy = yy - pad;
            for kx in 0..k {
                let tap = ky * k + kx;
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for x in x_lo..x_hi {
                    let xx = x + kx - pad;
                    let src = (yy * w + xx) * ci;
                    let dst = (dy * w + x) * kw + tap * ci;
                    cols[dst..dst + ci].copy_from_slice(&input.data[src..src + ci]);
                }
            }
        }
    }
    cols
}

/// Reverse of [`im2col`]: scatter-adds column gradients back onto the
/// input grid.
fn col2im<T: Scalar>(d_cols: &[T], h: usize, w: usize, ci: usize, k: usize) -> Feature<T> {
    let pad = k / 2;
    let kw = k * k * ci;
    let mut out = Feature::zeros(h, w, ci);
    for y in 0..h {
        for ky in 0..k {
            let yy = y + ky;
            if yy < pad || yy >= h + pad {
                continue;
            }
            let yy = yy - pad;
            for kx in 0..k {
                let tap = ky * k + kx;
                let x_lo = pad.saturating_sub(kx);
                let x_hi = (w + pad).saturating_sub(kx).min(w);
                for x in x_lo..x_hi {
                    let xx = x + kx - pad;
                    let dst = (yy * w + xx) * ci;
                    let src = (y * w + x) * kw + tap * ci;
                    for c in 0..ci {
                        out.data[dst + c] += d_cols[src + c];
                    }
                }
            }
        }
    }
    out
}

/// Per-layer parameter gradients, shaped like the layer's buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub d_weights: Vec<T>,
    pub d_bias: Vec<T>,
}

/// Gradients for every layer, in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    d_weights: vec![T::ZERO; l.weights.len()],
                    d_bias: vec![T::ZERO; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.d_weights.iter_mut().zip(&b.d_weights) {
                *x += *y;
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for layer in &mut self.layers {
            for v in &mut layer.d_weights {
                *v = *v * f;
            }
            for v in &mut layer.d_bias {
                *v = *v * f;
            }
        }
    }
}

/// Activations retained by the cached forward pass for exact backward.
pub struct ForwardCache<T> {
    input: Feature<T>,
    /// Per conv layer: (im2col buffer, pre-activation output).
    layers: Vec<(Vec<T>, Feature<T>)>,
}

/// The residual denoiser: output = input + conv_stack(input).
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: Architecture,
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> Network<T> {
    /// All-zero parameters in the given shape.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = (0..arch.n_convs())
            .map(|i| {
                let (co, ci) = arch.conv_shape(i);
                ConvLayer::zeros(co, ci, arch.kernel_size)
            })
            .collect();
        Ok(Network { arch, layers })
    }

    /// He-uniform weights for all but the last convolution; the last
    /// convolution and every bias start at zero, so the freshly initialized
    /// network is the identity map. Draws happen in f64 in buffer order and
    /// are cast, so f32 and f64 networks from the same stream agree.
    pub fn init(arch: Architecture, rng: &mut StreamRng) -> Result<Self> {
        let mut net = Network::zeros(arch)?;
        let last = net.layers.len() - 1;
        for layer in &mut net.layers[..last] {
            let fan_in = (layer.ci * layer.k * layer.k) as f64;
            let limit = (6.0 / fan_in).sqrt();
            for w in &mut layer.weights {
                *w = T::from_f64(rng.uniform(-limit, limit));
            }
        }
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.finite()) {
                return Err(Error::NonFinite(format!("parameters of conv {i}")));
            }
        }
        Ok(())
    }

    /// Converts the parameter set to another float width (f64 round trip
    /// of f32 parameters is exact).
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    co: l.co,
                    ci: l.ci,
                    k: l.k,
                    weights: l.weights.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                    bias: l.bias.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &Feature<T>) -> Result<()> {
        if input.channels != self.arch.in_channels {
            return Err(Error::shape(format!(
                "input has {} channels, network expects {}",
                input.channels, self.arch.in_channels
            )));
        }
        if input.height == 0 || input.width == 0 {
            return Err(Error::shape("empty input"));
        }
        Ok(())
    }

    fn slope(&self) -> T {
        T::from_f64(self.arch.leaky_slope)
    }

    /// Memory-bounded forward pass for inference.
    pub fn forward(&self, input: &Feature<T>) -> Result<Feature<T>> {
        self.check_input(input)?;
        let slope = self.slope();
        let last = self.layers.len() - 1;
        let mut act = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.forward_tiled(&act);
            if i != last {
                leaky_relu_inplace(&mut pre.data, slope);
            }
            act = pre;
        }
        for (o, i) in act.data.iter_mut().zip(&input.data) {
            *o += *i;
        }
        Ok(act)
    }

    /// Forward pass retaining everything backward needs.
    pub fn forward_cached(&self, input: &Feature<T>) -> Result<(Feature<T>, ForwardCache<T>)> {
        self.check_input(input)?;
        let slope = self.slope();
        let last = self.layers.len() - 1;
        let mut act = input.clone();
        let mut cache_layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (pre, cols) = layer.forward_cached(&act);
            let mut next = pre.clone();
            if i != last {
                leaky_relu_inplace(&mut next.data, slope);
            }
            cache_layers.push((cols, pre));
            act = next;
        }
        for (o, i) in act.data.iter_mut().zip(&input.data) {
            *o += *i;
        }
        Ok((
            act,
            ForwardCache {
                input: input.clone(),
                layers: cache_layers,
            },
        ))
    }

    /// Exact reverse-mode gradients of the cached forward pass. Returns
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        d_output: &Feature<T>,
    ) -> Result<(Gradients<T>, Feature<T>)> {
        let last = self.layers.len() - 1;
        let expected_co = self.layers[last].co;
        if d_output.channels != expected_co
            || d_output.height != cache.input.height
            || d_output.width != cache.input.width
        {
            return Err(Error::shape(format!(
                "grad output {}x{}x{} does not match forward output",
                d_output.height, d_output.width, d_output.channels
            )));
        }
        let slope = self.slope();
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d_act = d_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (cols, pre) = &cache.layers[i];
            if i != last {
                for (g, z) in d_act.data.iter_mut().zip(&pre.data) {
                    if *z < T::ZERO {
                        *g = *g * slope;
                    }
                }
            }
            let (in_h, in_w) = (cache.input.height, cache.input.width);
            let (grad, d_prev) = layer.backward(cols, &d_act, in_h, in_w);
            grads.push(grad);
            d_act = d_prev;
        }
        grads.reverse();
        // Global skip: the output adds the input directly.
        for (g, d) in d_act.data.iter_mut().zip(&d_output.data) {
            *g += *d;
        }
        Ok((Gradients { layers: grads }, d_act))
    }

    /// f64 image in, f64 image out; the working precision is T.
    pub fn infer(&self, img: &ImageTensor) -> Result<ImageTensor> {
        let input = Feature::<T>::from_tensor(img);
        self.forward(&input)?.to_tensor()
    }
}

fn leaky_relu_inplace<T: Scalar>(data: &mut [T], slope: T) {
    for v in data {
        if *v < T::ZERO {
            *v = *v * slope;
        }
    }
}

/// Mean squared error and its gradient with respect to `pred`:
/// loss = mean((pred - target)^2), grad = 2 (pred - target) / n.
pub fn l2_loss<T: Scalar>(pred: &Feature<T>, target: &Feature<T>) -> Result<(f64, Feature<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::shape(format!(
            "l2_loss: {}x{}x{} vs {}x{}x{}",
            pred.height, pred.width, pred.channels, target.height, target.width, target.channels
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Feature::zeros(pred.height, pred.width, pred.channels);
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p.to_f64() - t.to_f64();
        loss += d * d;
        *g = T::from_f64(2.0 * d / n);
    }
    Ok((loss / n, grad))
}
