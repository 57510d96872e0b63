//! 2-D convolution over square feature maps via im2col, with backprop.

use super::scalar::Real;

/// Kernel size, stride and zero padding shared by all four encoder layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// `⌊(n + 2p − k)/s⌋ + 1`, or `None` if the kernel does not fit.
    pub fn output_size(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Geometry used for an input of side `k`.
    pub fn for_input_size(k: usize) -> ConvGeometry {
        match k {
            4096 => ConvGeometry { kernel: 48, stride: 4, padding: 22 },
            k if k >= 16 => ConvGeometry { kernel: 6, stride: 2, padding: 2 },
            _ => ConvGeometry { kernel: 3, stride: 2, padding: 1 },
        }
    }
}

/// One convolution layer. Weights are `out × (in·k·k)` row-major, matching
/// the im2col row order `(channel, ky, kx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Memory order of a batch of feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `batch × channels × n × n`.
    SampleMajor,
    /// `channels × batch × n × n`; what every layer emits.
    ChannelMajor,
}

impl Layout {
    fn plane(self, c: usize, b: usize, channels: usize, batch: usize) -> usize {
        match self {
            Layout::SampleMajor => b * channels + c,
            Layout::ChannelMajor => c * batch + b,
        }
    }
}

/// Values kept from the forward pass for backprop.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub batch: usize,
    pub in_size: usize,
    pub out_size: usize,
    pub cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        Conv2d {
            in_channels,
            out_channels,
            geometry,
            weight: vec![T::zero(); out_channels * in_channels * k * k],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    /// Patch matrix `(in·k·k) × (batch·n'·n')`, columns sample-major.
    fn im2col(&self, input: &[T], batch: usize, n: usize, on: usize, layout: Layout) -> Vec<T> {
        let ConvGeometry { kernel: k, stride: s, padding: p } = self.geometry;
        let per = on * on;
        let cols_n = batch * per;
        let mut cols = vec![T::zero(); self.patch_len() * cols_n];
        for c in 0..self.in_channels {
            for b in 0..batch {
                let off = layout.plane(c, b, self.in_channels, batch) * n * n;
                let plane = &input[off..off + n * n];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let dst = &mut cols[row * cols_n + b * per..row * cols_n + (b + 1) * per];
                        for oy in 0..on {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= n as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * n..(iy as usize + 1) * n];
                            for ox in 0..on {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < n as isize {
                                    dst[oy * on + ox] = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Scatter-adds a patch-matrix gradient back to a channel-major batch.
    fn col2im(&self, cols: &[T], batch: usize, n: usize, on: usize) -> Vec<T> {
        let ConvGeometry { kernel: k, stride: s, padding: p } = self.geometry;
        let per = on * on;
        let cols_n = batch * per;
        let mut out = vec![T::zero(); self.in_channels * batch * n * n];
        for c in 0..self.in_channels {
            for b in 0..batch {
                let off = (c * batch + b) * n * n;
                let plane = &mut out[off..off + n * n];
                for ky in 0..k {
                    for kx in 0..k {
                        let row = (c * k + ky) * k + kx;
                        let src = &cols[row * cols_n + b * per..row * cols_n + (b + 1) * per];
                        for oy in 0..on {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= n as isize {
                                continue;
                            }
                            for ox in 0..on {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < n as isize {
                                    let d = &mut plane[iy as usize * n + ix as usize];
                                    *d = *d + src[oy * on + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Convolves `batch` inputs of side `n`; the output is channel-major.
    pub fn forward(&self, input: &[T], batch: usize, n: usize, layout: Layout) -> (Vec<T>, ConvCache<T>) {
        assert_eq!(input.len(), batch * self.in_channels * n * n, "conv input size");
        let on = self.geometry.output_size(n).expect("kernel fits input");
        let cols = self.im2col(input, batch, n, on, layout);
        let cols_n = batch * on * on;
        let mut out = vec![T::zero(); self.out_channels * cols_n];
        for (o, &b) in self.bias.iter().enumerate() {
            out[o * cols_n..(o + 1) * cols_n].fill(b);
        }
        T::gemm(self.out_channels, self.patch_len(), cols_n, &self.weight, false, &cols, false, &mut out, true);
        (out, ConvCache { batch, in_size: n, out_size: on, cols })
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient (channel-major) when `need_input` is set.
    pub fn backward(&self, cache: &ConvCache<T>, d_out: &[T], grad: &mut Conv2d<T>, need_input: bool) -> Option<Vec<T>> {
        let cols_n = cache.batch * cache.out_size * cache.out_size;
        assert_eq!(d_out.len(), self.out_channels * cols_n, "conv output gradient size");
        let pl = self.patch_len();
        T::gemm(self.out_channels, cols_n, pl, d_out, false, &cache.cols, true, &mut grad.weight, true);
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb = *gb + d_out[o * cols_n..(o + 1) * cols_n].iter().copied().sum();
        }
        need_input.then(|| {
            let mut d_cols = vec![T::zero(); pl * cols_n];
            T::gemm(pl, self.out_channels, cols_n, &self.weight, true, d_out, false, &mut d_cols, false);
            self.col2im(&d_cols, cache.batch, cache.in_size, cache.out_size)
        })
    }
}
