//! Dense raster types, same-padded 2-D convolution with its analytic
//! backward pass, and a central-difference gradient checker.
//!
//! Grids are stored row-major with channels interleaved per pixel, so the
//! value at `(y, x, c)` lives at `(y * width + x) * channels + c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `height × width × channels` array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid2D {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Config(format!(
                "grid data has {} values, expected {height}×{width}×{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
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

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copy of a single channel as a one-channel grid.
    pub fn channel(&self, c: usize) -> Grid2D {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Grid2D {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Per-channel mean over the pixels where `select` is true.
    pub fn masked_channel_means(&self, mask: &MaskGrid, select: bool) -> Option<Vec<f64>> {
        let mut sums = vec![0.0; self.channels];
        let mut count = 0usize;
        for (px, &m) in self.data.chunks_exact(self.channels).zip(mask.data()) {
            if (m == 1) == select {
                count += 1;
                for (s, v) in sums.iter_mut().zip(px) {
                    *s += v;
                }
            }
        }
        if count == 0 {
            return None;
        }
        Some(sums.into_iter().map(|s| s / count as f64).collect())
    }
}

/// Binary raster; every value is 0 (background) or 1 (foreground).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskGrid {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl MaskGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "mask data has {} values, expected {height}×{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Config(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_shape(&self, other: &MaskGrid) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Square convolution kernel. Weights are laid out `[out][ky][kx][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    kernel_size: usize,
    in_channels: usize,
    out_channels: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvKernel {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        let weight_count = kernel_size * kernel_size * in_channels * out_channels;
        Self::new(
            kernel_size,
            in_channels,
            out_channels,
            vec![0.0; weight_count],
            vec![0.0; out_channels],
        )
    }

    pub fn new(
        kernel_size: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size must be odd, got {kernel_size}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("kernel needs at least one channel".into()));
        }
        let expected = kernel_size * kernel_size * in_channels * out_channels;
        if weights.len() != expected {
            return Err(Error::Config(format!(
                "kernel has {} weights, expected {expected}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Config(format!(
                "kernel has {} biases, expected {out_channels}",
                bias.len()
            )));
        }
        Ok(Self {
            kernel_size,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    #[inline]
    pub fn weight_index(&self, o: usize, ky: usize, kx: usize, c: usize) -> usize {
        ((o * self.kernel_size + ky) * self.kernel_size + kx) * self.in_channels + c
    }

    /// Total number of parameters, weights followed by biases.
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Flattened parameter vector: all weights, then all biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.weights);
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Config(format!(
                "parameter vector has length {}, kernel has {}",
                params.len(),
                self.param_count()
            )));
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Gradients returned by [`conv2d_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    /// Same shape as the kernel; holds ∂loss/∂weights and ∂loss/∂bias.
    pub kernel: ConvKernel,
    pub input: Grid2D,
}

fn check_input(input: &Grid2D, kernel: &ConvKernel) -> Result<()> {
    if input.channels() != kernel.in_channels() {
        return Err(Error::Config(format!(
            "input has {} channels, kernel expects {}",
            input.channels(),
            kernel.in_channels()
        )));
    }
    Ok(())
}

fn check_upstream(input: &Grid2D, kernel: &ConvKernel, upstream: &Grid2D) -> Result<()> {
    check_input(input, kernel)?;
    if upstream.height() != input.height()
        || upstream.width() != input.width()
        || upstream.channels() != kernel.out_channels()
    {
        return Err(Error::Config(format!(
            "upstream gradient is {}×{}×{}, expected {}×{}×{}",
            upstream.height(),
            upstream.width(),
            upstream.channels(),
            input.height(),
            input.width(),
            kernel.out_channels()
        )));
    }
    Ok(())
}

/// Clipped kernel-offset range for output coordinate `pos` along an axis of
/// length `len`, so that `pos + k - radius` stays in bounds.
#[inline]
fn tap_range(pos: usize, len: usize, radius: usize, size: usize) -> (usize, usize) {
    let lo = radius.saturating_sub(pos);
    let hi = (len + radius - pos).min(size);
    (lo, hi)
}

/// Same-padded cross-correlation. Output spatial size equals the input's.
pub fn conv2d_forward(input: &Grid2D, kernel: &ConvKernel) -> Result<Grid2D> {
    check_input(input, kernel)?;
    let (h, w) = (input.height(), input.width());
    let (ks, cin, cout) = (
        kernel.kernel_size(),
        kernel.in_channels(),
        kernel.out_channels(),
    );
    let r = ks / 2;
    let mut out = Grid2D::zeros(h, w, cout);
    for y in 0..h {
        let (ky0, ky1) = tap_range(y, h, r, ks);
        for x in 0..w {
            let (kx0, kx1) = tap_range(x, w, r, ks);
            for o in 0..cout {
                let mut acc = kernel.bias[o];
                for ky in ky0..ky1 {
                    let iy = y + ky - r;
                    for kx in kx0..kx1 {
                        let ix = x + kx - r;
                        let px = input.pixel(iy, ix);
                        let wi = kernel.weight_index(o, ky, kx, 0);
                        let ws = &kernel.weights[wi..wi + cin];
                        acc += px.iter().zip(ws).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let oi = out.index(y, x, o);
                out.data[oi] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to the kernel only, given
/// `upstream = ∂loss/∂output`. Cheaper than [`conv2d_backward`] when the
/// input gradient is not needed.
pub fn conv2d_kernel_gradient(
    input: &Grid2D,
    kernel: &ConvKernel,
    upstream: &Grid2D,
) -> Result<ConvKernel> {
    check_upstream(input, kernel, upstream)?;
    let (h, w) = (input.height(), input.width());
    let (ks, cin, cout) = (
        kernel.kernel_size(),
        kernel.in_channels(),
        kernel.out_channels(),
    );
    let r = ks / 2;
    let mut grad = ConvKernel::zeros(ks, cin, cout)?;
    for y in 0..h {
        let (ky0, ky1) = tap_range(y, h, r, ks);
        for x in 0..w {
            let (kx0, kx1) = tap_range(x, w, r, ks);
            for o in 0..cout {
                let g = upstream.get(y, x, o);
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                for ky in ky0..ky1 {
                    let iy = y + ky - r;
                    for kx in kx0..kx1 {
                        let ix = x + kx - r;
                        let px = input.pixel(iy, ix);
                        let wi = grad.weight_index(o, ky, kx, 0);
                        for (gw, v) in grad.weights[wi..wi + cin].iter_mut().zip(px) {
                            *gw += g * v;
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Gradients with respect to kernel parameters and the input.
pub fn conv2d_backward(
    input: &Grid2D,
    kernel: &ConvKernel,
    upstream: &Grid2D,
) -> Result<ConvGradients> {
    let kernel_grad = conv2d_kernel_gradient(input, kernel, upstream)?;
    let (h, w) = (input.height(), input.width());
    let (ks, cin, cout) = (
        kernel.kernel_size(),
        kernel.in_channels(),
        kernel.out_channels(),
    );
    let r = ks / 2;
    let mut input_grad = Grid2D::zeros(h, w, cin);
    for y in 0..h {
        let (ky0, ky1) = tap_range(y, h, r, ks);
        for x in 0..w {
            let (kx0, kx1) = tap_range(x, w, r, ks);
            for o in 0..cout {
                let g = upstream.get(y, x, o);
                if g == 0.0 {
                    continue;
                }
                for ky in ky0..ky1 {
                    let iy = y + ky - r;
                    for kx in kx0..kx1 {
                        let ix = x + kx - r;
                        let wi = kernel.weight_index(o, ky, kx, 0);
                        let ii = input_grad.index(iy, ix, 0);
                        for (gi, wv) in input_grad.data[ii..ii + cin]
                            .iter_mut()
                            .zip(&kernel.weights[wi..wi + cin])
                        {
                            *gi += g * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGradients {
        kernel: kernel_grad,
        input: input_grad,
    })
}

/// Compares an analytic gradient against central differences of `f` and
/// returns `max_k |analytic_k − numeric_k| / max(1, |analytic_k|)`.
pub fn finite_difference_check<F>(
    f: F,
    params: &[f64],
    analytic: &[f64],
    epsilon: f64,
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::Config(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        probe[k] = params[k] + epsilon;
        let up = f(&probe);
        probe[k] = params[k] - epsilon;
        let down = f(&probe);
        probe[k] = params[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "objective is not finite near coordinate {k}"
            )));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic[k] - numeric).abs() / analytic[k].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
