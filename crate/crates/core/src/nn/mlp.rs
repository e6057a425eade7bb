//! Dense ReLU network with exact manual backprop.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Batched
//! inputs and outputs are flat row-major buffers of shape `(rows, dim)`.

use std::ops::Deref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::config("hidden_dims", "must list at least one hidden layer"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden_dims", "every width must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        Ok(())
    }

    /// `(in, out)` for every linear layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParameters {
    spec: MlpSpec,
    layers: Vec<Dense>,
}

/// Gradients of a scalar loss, shaped like [`MlpParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

impl ParamGrads {
    pub fn zeros_like(params: &MlpParameters) -> Self {
        ParamGrads {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weight);
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Pre- and post-activation values of one forward pass.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    /// `inputs[l]` is the input to layer `l` (so `inputs[0]` is `x`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer; the last is the logits.
    pre: Vec<Vec<f64>>,
}

impl ActivationCache {
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

/// Pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Deref for Logits {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl MlpParameters {
    /// Fan-in scaled uniform weights `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero biases.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for w in &mut layer.weight {
                    *w = rng.random_range(-bound..bound);
                }
                layer
            })
            .collect();
        Ok(MlpParameters {
            spec: spec.clone(),
            layers,
        })
    }

    /// Assembles parameters from explicit layers. Unlike [`MlpSpec::new`] this
    /// accepts a single linear layer with no hidden activation.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::config("layers", "at least one layer is required"))?;
        let input_dim = first.in_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::config(
                    format!("layers[{i}]"),
                    "weight/bias lengths disagree with the declared shape",
                ));
            }
            if l.weight.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::config(
                    format!("layers[{}]", i + 1),
                    format!(
                        "input width {} does not match previous output {}",
                        pair[1].in_dim, pair[0].out_dim
                    ),
                ));
            }
        }
        let num_classes = layers.last().map(|l| l.out_dim).unwrap_or(0);
        let hidden_dims = layers[..layers.len() - 1].iter().map(|l| l.out_dim).collect();
        Ok(MlpParameters {
            spec: MlpSpec {
                input_dim,
                hidden_dims,
                num_classes,
            },
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All weights and biases, layer by layer (weights row-major, then bias).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Mutable view of the `index`-th entry in [`Self::flatten`] order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            if index < l.weight.len() {
                return &mut l.weight[index];
            }
            index -= l.weight.len();
            if index < l.bias.len() {
                return &mut l.bias[index];
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Logits, ActivationCache)> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward input",
                expected: self.spec.input_dim,
                actual: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.out_dim];
            layer.apply(&current, &mut z);
            let next = if i < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok((Logits(current), ActivationCache { inputs, pre }))
    }

    pub fn backprop(&self, cache: &ActivationCache, dlogits: &[f64]) -> Result<ParamGrads> {
        let stale = cache.inputs.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(&cache.inputs)
                .any(|(l, a)| a.len() != l.in_dim);
        if stale {
            return Err(Error::config("activation cache", "does not match these parameters"));
        }
        if dlogits.len() != self.spec.num_classes {
            return Err(Error::DimensionMismatch {
                context: "logit gradient",
                expected: self.spec.num_classes,
                actual: dlogits.len(),
            });
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta = dlogits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] = d;
                for (gw, &a) in g.weight[o * layer.in_dim..(o + 1) * layer.in_dim]
                    .iter_mut()
                    .zip(input)
                {
                    *gw = d * a;
                }
            }
            if i > 0 {
                let prev_pre = &cache.pre[i - 1];
                let mut next = vec![0.0; layer.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                for (n, &z) in next.iter_mut().zip(prev_pre) {
                    if z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    /// Logits for `rows` inputs packed row-major in `inputs`.
    pub fn predict_logits(&self, inputs: &[f64], rows: usize) -> Result<Vec<f64>> {
        if inputs.len() != rows * self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "batched inputs",
                expected: rows * self.spec.input_dim,
                actual: inputs.len(),
            });
        }
        const CHUNK: usize = 512;
        let mut ws = BatchWorkspace::new(self, CHUNK.min(rows.max(1)));
        let mut out = Vec::with_capacity(rows * self.spec.num_classes);
        for chunk in inputs.chunks(CHUNK * self.spec.input_dim) {
            let n = chunk.len() / self.spec.input_dim;
            out.extend_from_slice(self.forward_batch(chunk, n, &mut ws));
        }
        Ok(out)
    }

    /// Batched forward pass; returns the `(rows, num_classes)` logits held in `ws`.
    pub fn forward_batch<'w>(
        &self,
        inputs: &[f64],
        rows: usize,
        ws: &'w mut BatchWorkspace,
    ) -> &'w [f64] {
        assert_eq!(inputs.len(), rows * self.spec.input_dim);
        assert!(rows <= ws.capacity, "batch larger than workspace");
        ws.rows = rows;
        ws.input.clear();
        ws.input.extend_from_slice(inputs);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(i);
            let src: &[f64] = if i == 0 { &ws.input } else { &before[i - 1] };
            let dst = &mut after[0][..rows * layer.out_dim];
            for row in dst.chunks_exact_mut(layer.out_dim) {
                row.copy_from_slice(&layer.bias);
            }
            // dst (rows x out) += src (rows x in) * W^T (in x out)
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    layer.in_dim,
                    layer.out_dim,
                    1.0,
                    src.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    layer.weight.as_ptr(),
                    1,
                    layer.in_dim as isize,
                    1.0,
                    dst.as_mut_ptr(),
                    layer.out_dim as isize,
                    1,
                );
            }
            if i < last {
                for v in dst.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        let out_dim = self.spec.num_classes;
        &ws.acts[last][..rows * out_dim]
    }

    /// Batched backprop of `dlogits` (shape `(rows, num_classes)`) through the
    /// activations stored by the last [`Self::forward_batch`] on `ws`.
    /// Gradients are written (not accumulated) into `grads`.
    pub fn backward_batch(&self, ws: &mut BatchWorkspace, dlogits: &[f64], grads: &mut ParamGrads) {
        let rows = ws.rows;
        let n_layers = self.layers.len();
        assert_eq!(dlogits.len(), rows * self.spec.num_classes);
        ws.delta[..dlogits.len()].copy_from_slice(dlogits);
        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 { &ws.input } else { &ws.acts[i - 1] };
            let delta = &ws.delta[..rows * layer.out_dim];
            let g = &mut grads.layers[i];
            // dW (out x in) = delta^T (out x rows) * input (rows x in)
            unsafe {
                matrixmultiply::dgemm(
                    layer.out_dim,
                    rows,
                    layer.in_dim,
                    1.0,
                    delta.as_ptr(),
                    1,
                    layer.out_dim as isize,
                    input.as_ptr(),
                    layer.in_dim as isize,
                    1,
                    0.0,
                    g.weight.as_mut_ptr(),
                    layer.in_dim as isize,
                    1,
                );
            }
            g.bias.fill(0.0);
            for row in delta.chunks_exact(layer.out_dim) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if i > 0 {
                let next = &mut ws.delta_prev[..rows * layer.in_dim];
                // next (rows x in) = delta (rows x out) * W (out x in)
                unsafe {
                    matrixmultiply::dgemm(
                        rows,
                        layer.out_dim,
                        layer.in_dim,
                        1.0,
                        delta.as_ptr(),
                        layer.out_dim as isize,
                        1,
                        layer.weight.as_ptr(),
                        layer.in_dim as isize,
                        1,
                        0.0,
                        next.as_mut_ptr(),
                        layer.in_dim as isize,
                        1,
                    );
                }
                // post-ReLU activation is zero exactly where the unit was inactive
                for (n, &a) in next.iter_mut().zip(&ws.acts[i - 1][..rows * layer.in_dim]) {
                    if a <= 0.0 {
                        *n = 0.0;
                    }
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
    }
}

/// Reusable buffers for batched passes.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    capacity: usize,
    rows: usize,
    input: Vec<f64>,
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl BatchWorkspace {
    pub fn new(params: &MlpParameters, capacity: usize) -> Self {
        let widest = params
            .layers
            .iter()
            .map(|l| l.out_dim.max(l.in_dim))
            .max()
            .unwrap_or(0);
        BatchWorkspace {
            capacity,
            rows: 0,
            input: Vec::with_capacity(capacity * params.spec.input_dim),
            acts: params
                .layers
                .iter()
                .map(|l| vec![0.0; capacity * l.out_dim])
                .collect(),
            delta: vec![0.0; capacity * widest],
            delta_prev: vec![0.0; capacity * widest],
        }
    }
}
