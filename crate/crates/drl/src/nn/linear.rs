//! Fully connected layer over row-major `[B][in]` activations.

use rand::Rng;

use super::{gemm, Mat, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn param_len(&self) -> usize {
        self.weight_len() + self.outputs
    }

    /// Uniform in ±1/√fan_in for weights and biases.
    pub fn init(&self, rng: &mut impl Rng, params: &mut [f32]) {
        let bound = 1.0 / (self.inputs as f64).sqrt();
        for p in &mut params[..self.param_len()] {
            *p = rng.random_range(-bound..bound) as f32;
        }
    }

    /// `y = x Wᵀ + b` with `W` stored `[out][in]`.
    pub fn forward<T: Real>(&self, params: &[T], x: &[T], batch: usize) -> Vec<T> {
        let (w, bias) = params[..self.param_len()].split_at(self.weight_len());
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(bias);
        }
        gemm(Mat::new(x, batch, self.inputs), Mat::new(w, self.outputs, self.inputs).t(), T::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Real>(&self, params: &[T], x: &[T], dy: &[T], grads: &mut [T], batch: usize) -> Vec<T> {
        let (dw, db) = grads[..self.param_len()].split_at_mut(self.weight_len());
        gemm(Mat::new(dy, batch, self.outputs).t(), Mat::new(x, batch, self.inputs), T::one(), dw);
        for row in dy.chunks(self.outputs) {
            for (g, v) in db.iter_mut().zip(row) {
                *g = *g + *v;
            }
        }
        let w = &params[..self.weight_len()];
        let mut dx = vec![T::zero(); batch * self.inputs];
        gemm(Mat::new(dy, batch, self.outputs), Mat::new(w, self.outputs, self.inputs), T::zero(), &mut dx);
        dx
    }
}
