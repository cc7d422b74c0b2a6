//! Valid (unpadded) 2-D convolution followed by a rectifier.
//!
//! Activations use a channel-major batch layout `[C][B][H][W]`, so one GEMM
//! over the unfolded input covers the whole batch and its result is already
//! in the layout of the next layer.

use rand::Rng;

use super::{gemm, relu_backward, relu_inplace, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Side of the square input.
    pub in_size: usize,
}

impl Conv2d {
    pub fn out_size(&self) -> usize {
        (self.in_size - self.kernel) / self.stride + 1
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    /// Uniform in ±1/√fan_in for weights and biases.
    pub fn init(&self, rng: &mut impl Rng, params: &mut [f32]) {
        let bound = 1.0 / (self.patch_len() as f64).sqrt();
        for p in &mut params[..self.param_len()] {
            *p = rng.random_range(-bound..bound) as f32;
        }
    }

    /// Unfolds `input` into `[C·k·k][B·oh·ow]` patches.
    fn im2col<T: Real>(&self, input: &[T], batch: usize) -> Vec<T> {
        let (k, s, h) = (self.kernel, self.stride, self.in_size);
        let o = self.out_size();
        let n = batch * o * o;
        let mut cols = vec![T::zero(); self.patch_len() * n];
        let mut row = 0;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for b in 0..batch {
                        let plane = &input[(c * batch + b) * h * h..(c * batch + b + 1) * h * h];
                        for oy in 0..o {
                            let src_row = &plane[(oy * s + ky) * h..];
                            let out = &mut dst[(b * o + oy) * o..(b * o + oy + 1) * o];
                            for (ox, v) in out.iter_mut().enumerate() {
                                *v = src_row[ox * s + kx];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    /// Folds patch gradients back onto the input grid (summing overlaps).
    fn col2im<T: Real>(&self, cols: &[T], batch: usize) -> Vec<T> {
        let (k, s, h) = (self.kernel, self.stride, self.in_size);
        let o = self.out_size();
        let n = batch * o * o;
        let mut input = vec![T::zero(); self.in_channels * batch * h * h];
        let mut row = 0;
        for c in 0..self.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * n..(row + 1) * n];
                    for b in 0..batch {
                        let plane = &mut input[(c * batch + b) * h * h..(c * batch + b + 1) * h * h];
                        for oy in 0..o {
                            let dst_row = &mut plane[(oy * s + ky) * h..];
                            let g = &src[(b * o + oy) * o..(b * o + oy + 1) * o];
                            for (ox, v) in g.iter().enumerate() {
                                dst_row[ox * s + kx] = dst_row[ox * s + kx] + *v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        input
    }

    /// Returns the rectified output and the unfolded input for backward.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T], batch: usize) -> (Vec<T>, Vec<T>) {
        debug_assert_eq!(input.len(), self.in_channels * batch * self.in_size * self.in_size);
        let cols = self.im2col(input, batch);
        let n = batch * self.out_size() * self.out_size();
        let (weights, bias) = params[..self.param_len()].split_at(self.weight_len());
        let mut out = vec![T::zero(); self.out_channels * n];
        for (o, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(Mat::new(weights, self.out_channels, self.patch_len()), Mat::new(&cols, self.patch_len(), n), T::one(), &mut out);
        relu_inplace(&mut out);
        (out, cols)
    }

    /// Accumulates parameter gradients into `grads` and, when asked, returns
    /// the input gradient. `d_out` is the gradient at the rectified output
    /// and is consumed.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        cols: &[T],
        output: &[T],
        mut d_out: Vec<T>,
        grads: &mut [T],
        batch: usize,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        relu_backward(output, &mut d_out);
        let n = batch * self.out_size() * self.out_size();
        let k = self.patch_len();
        let (dw, db) = grads[..self.param_len()].split_at_mut(self.weight_len());
        gemm(Mat::new(&d_out, self.out_channels, n), Mat::new(cols, k, n).t(), T::one(), dw);
        for (o, g) in d_out.chunks(n).enumerate() {
            db[o] = db[o] + g.iter().copied().sum();
        }
        if !want_input_grad {
            return None;
        }
        let weights = &params[..self.weight_len()];
        let mut d_cols = vec![T::zero(); k * n];
        gemm(Mat::new(weights, self.out_channels, k).t(), Mat::new(&d_out, self.out_channels, n), T::zero(), &mut d_cols);
        Some(self.col2im(&d_cols, batch))
    }
}
