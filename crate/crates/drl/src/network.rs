//! Convolutional actor and critic networks.
//!
//! Both share one shape: a rectified conv trunk over the stacked frames,
//! flattened, then `fc(features + extra) → hidden → outputs`. The critic
//! feeds the action in as the single extra input; the actor has none and
//! outputs (mean, log std).

use rand::Rng;

use crate::nn::{relu_backward, relu_inplace, Conv2d, Linear, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub in_channels: usize,
    pub in_size: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub extra_inputs: usize,
    pub outputs: usize,
}

impl NetSpec {
    fn visual(extra_inputs: usize, outputs: usize) -> Self {
        Self {
            in_channels: 4,
            in_size: 84,
            convs: vec![
                ConvSpec { filters: 32, kernel: 8, stride: 4 },
                ConvSpec { filters: 64, kernel: 4, stride: 2 },
                ConvSpec { filters: 64, kernel: 3, stride: 1 },
            ],
            hidden: 512,
            extra_inputs,
            outputs,
        }
    }

    /// 4×84×84 input, outputs (mean, log std).
    pub fn actor() -> Self {
        Self::visual(0, 2)
    }

    /// 4×84×84 input plus the action, outputs Q.
    pub fn critic() -> Self {
        Self::visual(1, 1)
    }

    fn miniature(extra_inputs: usize, outputs: usize) -> Self {
        Self {
            in_channels: 4,
            in_size: 8,
            convs: vec![
                ConvSpec { filters: 8, kernel: 3, stride: 1 },
                ConvSpec { filters: 8, kernel: 2, stride: 2 },
                ConvSpec { filters: 8, kernel: 2, stride: 1 },
            ],
            hidden: 16,
            extra_inputs,
            outputs,
        }
    }

    /// Same topology on 4×8×8 inputs, for finite-difference checks.
    pub fn miniature_actor() -> Self {
        Self::miniature(0, 2)
    }

    pub fn miniature_critic() -> Self {
        Self::miniature(1, 1)
    }
}

/// Intermediate values of a trunk pass, kept for backward.
pub struct TrunkCache<T> {
    batch: usize,
    cols: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
    /// Flattened features, `[B][F]`.
    pub features: Vec<T>,
}

pub struct HeadCache<T> {
    batch: usize,
    x: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    spec: NetSpec,
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
    /// Start of each layer's parameters: convs, fc1, fc2, end.
    offsets: Vec<usize>,
}

impl ConvNet {
    pub fn new(spec: NetSpec) -> Self {
        let mut convs = Vec::with_capacity(spec.convs.len());
        let (mut channels, mut size) = (spec.in_channels, spec.in_size);
        for c in &spec.convs {
            let conv = Conv2d { in_channels: channels, out_channels: c.filters, kernel: c.kernel, stride: c.stride, in_size: size };
            assert!(c.kernel <= size, "kernel larger than its input");
            channels = c.filters;
            size = conv.out_size();
            convs.push(conv);
        }
        let features = channels * size * size;
        let fc1 = Linear { inputs: features + spec.extra_inputs, outputs: spec.hidden };
        let fc2 = Linear { inputs: spec.hidden, outputs: spec.outputs };
        let mut offsets = vec![0];
        for c in &convs {
            offsets.push(offsets.last().unwrap() + c.param_len());
        }
        offsets.push(offsets.last().unwrap() + fc1.param_len());
        offsets.push(offsets.last().unwrap() + fc2.param_len());
        Self { spec, convs, fc1, fc2, offsets }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn param_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn feature_len(&self) -> usize {
        self.fc1.inputs - self.spec.extra_inputs
    }

    pub fn input_len(&self) -> usize {
        self.spec.in_channels * self.spec.in_size * self.spec.in_size
    }

    /// Names and lengths of the parameter tensors, in storage order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![c.out_channels, c.in_channels, c.kernel, c.kernel]));
            out.push((format!("conv{i}.bias"), vec![c.out_channels]));
        }
        for (name, l) in [("fc1", &self.fc1), ("fc2", &self.fc2)] {
            out.push((format!("{name}.weight"), vec![l.outputs, l.inputs]));
            out.push((format!("{name}.bias"), vec![l.outputs]));
        }
        out
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f32> {
        let mut params = vec![0.0; self.param_len()];
        for (i, c) in self.convs.iter().enumerate() {
            c.init(rng, &mut params[self.offsets[i]..]);
        }
        let n = self.convs.len();
        self.fc1.init(rng, &mut params[self.offsets[n]..]);
        self.fc2.init(rng, &mut params[self.offsets[n + 1]..]);
        params
    }

    fn layer<'a, T>(&self, params: &'a [T], i: usize) -> &'a [T] {
        &params[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Conv trunk over `input` laid out `[C][B][H][W]`.
    pub fn trunk_forward<T: Real>(&self, params: &[T], input: &[T], batch: usize) -> TrunkCache<T> {
        assert_eq!(input.len(), self.input_len() * batch, "input size");
        let mut cols = Vec::with_capacity(self.convs.len());
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.convs.len());
        for (i, conv) in self.convs.iter().enumerate() {
            let src = if i == 0 { input } else { &outputs[i - 1] };
            let (out, c) = conv.forward(self.layer(params, i), src, batch);
            cols.push(c);
            outputs.push(out);
        }
        let last = outputs.last().expect("at least one conv");
        let channels = self.convs.last().unwrap().out_channels;
        let plane = last.len() / (channels * batch);
        let mut features = vec![T::zero(); last.len()];
        for c in 0..channels {
            for b in 0..batch {
                let src = &last[(c * batch + b) * plane..(c * batch + b + 1) * plane];
                features[b * channels * plane + c * plane..b * channels * plane + (c + 1) * plane].copy_from_slice(src);
            }
        }
        TrunkCache { batch, cols, outputs, features }
    }

    /// Accumulates trunk parameter gradients given `d_features` (`[B][F]`).
    pub fn trunk_backward<T: Real>(&self, params: &[T], cache: &TrunkCache<T>, d_features: &[T], grads: &mut [T]) {
        let batch = cache.batch;
        let channels = self.convs.last().unwrap().out_channels;
        let plane = d_features.len() / (channels * batch);
        let mut d = vec![T::zero(); d_features.len()];
        for c in 0..channels {
            for b in 0..batch {
                let src = &d_features[b * channels * plane + c * plane..b * channels * plane + (c + 1) * plane];
                d[(c * batch + b) * plane..(c * batch + b + 1) * plane].copy_from_slice(src);
            }
        }
        for i in (0..self.convs.len()).rev() {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            let next = self.convs[i].backward(
                &params[lo..hi],
                &cache.cols[i],
                &cache.outputs[i],
                d,
                &mut grads[lo..hi],
                batch,
                i > 0,
            );
            match next {
                Some(g) => d = g,
                None => break,
            }
        }
    }

    /// Fully connected head over trunk features and `extra` (`[B][E]`).
    pub fn head_forward<T: Real>(&self, params: &[T], features: &[T], extra: &[T], batch: usize) -> (Vec<T>, HeadCache<T>) {
        let f = self.feature_len();
        let e = self.spec.extra_inputs;
        assert_eq!(features.len(), f * batch);
        assert_eq!(extra.len(), e * batch);
        let x = if e == 0 {
            features.to_vec()
        } else {
            let mut x = Vec::with_capacity((f + e) * batch);
            for b in 0..batch {
                x.extend_from_slice(&features[b * f..(b + 1) * f]);
                x.extend_from_slice(&extra[b * e..(b + 1) * e]);
            }
            x
        };
        let n = self.convs.len();
        let mut hidden = self.fc1.forward(self.layer(params, n), &x, batch);
        relu_inplace(&mut hidden);
        let out = self.fc2.forward(self.layer(params, n + 1), &hidden, batch);
        (out, HeadCache { batch, x, hidden })
    }

    /// Accumulates head gradients; returns (d_features, d_extra).
    pub fn head_backward<T: Real>(&self, params: &[T], cache: &HeadCache<T>, d_out: &[T], grads: &mut [T]) -> (Vec<T>, Vec<T>) {
        let n = self.convs.len();
        let batch = cache.batch;
        let (lo2, hi2) = (self.offsets[n + 1], self.offsets[n + 2]);
        let mut d_hidden = self.fc2.backward(&params[lo2..hi2], &cache.hidden, d_out, &mut grads[lo2..hi2], batch);
        relu_backward(&cache.hidden, &mut d_hidden);
        let (lo1, hi1) = (self.offsets[n], self.offsets[n + 1]);
        let dx = self.fc1.backward(&params[lo1..hi1], &cache.x, &d_hidden, &mut grads[lo1..hi1], batch);
        let (f, e) = (self.feature_len(), self.spec.extra_inputs);
        if e == 0 {
            return (dx, Vec::new());
        }
        let mut d_features = Vec::with_capacity(f * batch);
        let mut d_extra = Vec::with_capacity(e * batch);
        for row in dx.chunks(f + e) {
            d_features.extend_from_slice(&row[..f]);
            d_extra.extend_from_slice(&row[f..]);
        }
        (d_features, d_extra)
    }

    /// Full forward pass without keeping intermediates.
    pub fn forward<T: Real>(&self, params: &[T], input: &[T], extra: &[T], batch: usize) -> Vec<T> {
        let trunk = self.trunk_forward(params, input, batch);
        self.head_forward(params, &trunk.features, extra, batch).0
    }
}

/// Reorders a batch of `[B][C][H][W]` inputs into `[C][B][H][W]`.
pub fn channel_major<T: Copy>(batch_major: &[T], batch: usize, channels: usize) -> Vec<T> {
    let plane = batch_major.len() / (batch * channels);
    let mut out = Vec::with_capacity(batch_major.len());
    for c in 0..channels {
        for b in 0..batch {
            out.extend_from_slice(&batch_major[(b * channels + c) * plane..(b * channels + c + 1) * plane]);
        }
    }
    out
}
