//! A small sequential network stack: convolution, max-pooling, ReLU, dense
//! and softmax layers with exact reverse-mode gradients, SGD, parameter and
//! FLOP counting, and a binary checkpoint format.

mod arch;
mod checkpoint;
mod layers;
mod scalar;

use std::ops::Range;

use rand::Rng;

pub use arch::{full_network, l_model, s_model, Architecture, SplitPoint};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Dense batch-major tensor; `shape[0]` is the batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::shape(format!("tensor rank {} not in 1..=4", shape.len())));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} does not hold {} elements",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One layer of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    Relu,
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    SoftmaxCrossEntropy {
        classes: usize,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_ch, out_ch, kernel, ..
            } => out_ch * (in_ch * kernel * kernel + 1),
            LayerSpec::Dense { inputs, outputs } => outputs * (inputs + 1),
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = three(input)?;
                if c != in_ch {
                    return Err(Error::shape(format!("conv expects {in_ch} channels, got {c}")));
                }
                if stride == 0 || kernel == 0 || h + 2 * padding < kernel || w + 2 * padding < kernel {
                    return Err(Error::shape("conv kernel does not fit its input"));
                }
                Ok(vec![
                    out_ch,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::MaxPool { size } => {
                let [c, h, w] = three(input)?;
                if size == 0 || h < size || w < size {
                    return Err(Error::shape("pool window does not fit its input"));
                }
                Ok(vec![c, h / size, w / size])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { inputs, .. } | LayerSpec::SoftmaxCrossEntropy { classes: inputs }
                if input.len() != 1 || input[0] != inputs =>
            {
                Err(Error::shape(format!("layer {self:?} cannot take input {input:?}")))
            }
            LayerSpec::Dense { outputs, .. } => Ok(vec![outputs]),
            LayerSpec::SoftmaxCrossEntropy { classes } => Ok(vec![classes]),
        }
    }

    /// Forward FLOPs per sample: multiply-adds count 2, pooling, ReLU and
    /// softmax count 1 per input element.
    pub fn flops(&self, input: &[usize], output: &[usize]) -> u64 {
        let n_in: usize = input.iter().product();
        match *self {
            LayerSpec::Conv2d {
                in_ch, out_ch, kernel, ..
            } => 2 * (kernel * kernel * in_ch * out_ch * output[1] * output[2]) as u64,
            LayerSpec::Dense { inputs, outputs } => 2 * (inputs * outputs) as u64,
            LayerSpec::MaxPool { .. } | LayerSpec::Relu | LayerSpec::SoftmaxCrossEntropy { .. } => n_in as u64,
            LayerSpec::Flatten => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

fn three(shape: &[usize]) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::shape(format!("expected a c x h x w input, got {shape:?}"))),
    }
}

/// Scale of the logit layer's init range relative to He-uniform.
pub const LOGIT_INIT_GAIN: f64 = 0.1;

/// Flat view of all trainable parameters of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T>(pub Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![T::ZERO; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &ParamVector<T>) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.0 {
            *a *= s;
        }
    }
}

/// `w - lr * g`, element-wise.
pub fn sgd_step<T: Scalar>(params: &ParamVector<T>, grads: &ParamVector<T>, lr: T) -> Result<ParamVector<T>> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    Ok(ParamVector(
        params.0.iter().zip(&grads.0).map(|(&w, &g)| w - lr * g).collect(),
    ))
}

/// Intermediate state of one layer kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    /// im2col buffers, one per batch entry.
    Conv { cols: Vec<T> },
    Pool { argmax: Vec<u32> },
    Relu { output: Vec<T> },
    Dense { input: Vec<T> },
    Softmax { probs: Vec<T> },
    None,
}

/// Activations recorded by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    version: u64,
    batch: usize,
    layers: Vec<LayerCache<T>>,
}

impl<T> Cache<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Gradients produced by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: ParamVector<T>,
    /// Gradient with respect to the network input, when requested.
    pub input: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    ranges: Vec<Range<usize>>,
    params: ParamVector<T>,
    version: u64,
}

impl<T: Scalar> Network<T> {
    /// Builds a network with zero parameters after checking that every layer
    /// accepts its predecessor's output.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = vec![input_shape.clone()];
        let mut ranges = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (i, layer) in layers.iter().enumerate() {
            if matches!(layer, LayerSpec::SoftmaxCrossEntropy { .. }) && i + 1 != layers.len() {
                return Err(Error::shape("softmax cross-entropy must be the last layer"));
            }
            let out = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(out);
            let n = layer.param_count();
            ranges.push(offset..offset + n);
            offset += n;
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
            ranges,
            params: ParamVector::zeros(offset),
            version: 0,
        })
    }

    /// He-uniform initialization: weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
    /// biases zero.
    ///
    /// The dense layer feeding a softmax head draws from a range shrunk by
    /// `LOGIT_INIT_GAIN` so the untrained network predicts near-uniformly.
    pub fn init_he_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (i, (layer, range)) in self.layers.iter().zip(&self.ranges).enumerate() {
            if range.is_empty() {
                continue;
            }
            let fan_in = layer.fan_in();
            let feeds_softmax = matches!(self.layers.get(i + 1), Some(LayerSpec::SoftmaxCrossEntropy { .. }));
            let gain = if feeds_softmax { LOGIT_INIT_GAIN } else { 1.0 };
            let limit = gain * (6.0 / fan_in as f64).sqrt();
            let n_bias = match *layer {
                LayerSpec::Conv2d { out_ch, .. } => out_ch,
                LayerSpec::Dense { outputs, .. } => outputs,
                _ => 0,
            };
            let weights = range.start..range.end - n_bias;
            for w in &mut self.params.0[weights] {
                *w = T::from_f64(rng.gen_range(-limit..limit));
            }
            for b in &mut self.params.0[range.end - n_bias..range.end] {
                *b = T::ZERO;
            }
        }
        self.version += 1;
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(format!(
                "network has {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        self.version += 1;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Forward FLOPs for one sample.
    pub fn flops_per_sample(&self) -> u64 {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| l.flops(&self.shapes[i], &self.shapes[i + 1]))
            .sum()
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::SoftmaxCrossEntropy { .. }))
    }

    /// Runs the network and records what the backward pass needs.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "network input {:?} but tensor {:?}",
                self.input_shape, x.shape
            )));
        }
        let batch = x.batch();
        let mut act = x.data.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let params = &self.params.0[self.ranges[i].clone()];
            let (out, cache) = layers::forward(layer, &self.shapes[i], &self.shapes[i + 1], params, batch, act);
            act = out;
            caches.push(cache);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(self.output_shape());
        Ok((
            Tensor { shape, data: act },
            Cache {
                version: self.version,
                batch,
                layers: caches,
            },
        ))
    }

    fn check_cache(&self, cache: &Cache<T>) -> Result<()> {
        if cache.version != self.version || cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache from parameter version {} used with version {}",
                cache.version, self.version
            )));
        }
        Ok(())
    }

    /// Backpropagates `upstream`, the gradient with respect to the network
    /// output.
    pub fn backward(&self, cache: &Cache<T>, upstream: &Tensor<T>, want_input: bool) -> Result<Gradients<T>> {
        self.check_cache(cache)?;
        let mut shape = vec![cache.batch];
        shape.extend_from_slice(self.output_shape());
        if upstream.shape != shape {
            return Err(Error::shape(format!(
                "upstream gradient {:?}, expected {shape:?}",
                upstream.shape
            )));
        }
        self.backward_from(cache, self.layers.len(), upstream.data.clone(), want_input)
    }

    /// Mean cross-entropy loss and its gradients for a network ending in
    /// [`LayerSpec::SoftmaxCrossEntropy`]. The softmax Jacobian is fused:
    /// the logit gradient is `(p - onehot) / batch`.
    pub fn backward_with_labels(
        &self,
        cache: &Cache<T>,
        labels: &[u8],
        want_input: bool,
    ) -> Result<(T, Gradients<T>)> {
        self.check_cache(cache)?;
        let classes = match self.layers.last() {
            Some(LayerSpec::SoftmaxCrossEntropy { classes }) => *classes,
            _ => return Err(Error::shape("network does not end with softmax cross-entropy")),
        };
        let probs = match cache.layers.last() {
            Some(LayerCache::Softmax { probs }) => probs,
            _ => return Err(Error::StaleCache("missing softmax cache".into())),
        };
        let (loss, grad) = softmax_xent_grad(probs, labels, classes, cache.batch)?;
        let grads = self.backward_from(cache, self.layers.len() - 1, grad, want_input)?;
        Ok((loss, grads))
    }

    fn backward_from(&self, cache: &Cache<T>, top: usize, mut grad: Vec<T>, want_input: bool) -> Result<Gradients<T>> {
        let mut pgrads = ParamVector::zeros(self.params.len());
        for i in (0..top).rev() {
            let need_dx = want_input || i > 0;
            let params = &self.params.0[self.ranges[i].clone()];
            let pg = &mut pgrads.0[self.ranges[i].clone()];
            grad = layers::backward(
                &self.layers[i],
                &self.shapes[i],
                &self.shapes[i + 1],
                params,
                cache.batch,
                &cache.layers[i],
                grad,
                pg,
                need_dx,
            );
        }
        let input = if want_input {
            let mut shape = vec![cache.batch];
            shape.extend_from_slice(&self.input_shape);
            Some(Tensor { shape, data: grad })
        } else {
            None
        };
        Ok(Gradients { params: pgrads, input })
    }

    /// In-place SGD update.
    pub fn apply_sgd(&mut self, grads: &ParamVector<T>, lr: T) -> Result<()> {
        let next = sgd_step(&self.params, grads, lr)?;
        self.set_params(next)
    }
}

/// Mean cross-entropy of `probs` (batch x classes) against `labels`.
pub fn cross_entropy<T: Scalar>(probs: &[T], labels: &[u8], classes: usize) -> Result<T> {
    softmax_xent_grad(probs, labels, classes, labels.len()).map(|(l, _)| l)
}

fn softmax_xent_grad<T: Scalar>(probs: &[T], labels: &[u8], classes: usize, batch: usize) -> Result<(T, Vec<T>)> {
    if labels.len() != batch || probs.len() != batch * classes {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let inv = T::ONE / T::from_f64(batch as f64);
    let tiny = T::from_f64(1e-30);
    let mut loss = T::ZERO;
    let mut grad = probs.to_vec();
    for (b, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y >= classes {
            return Err(Error::invalid(format!("label {y} out of {classes} classes")));
        }
        let p = probs[b * classes + y];
        loss -= if p > tiny { p.ln() } else { tiny.ln() };
        grad[b * classes + y] -= T::ONE;
    }
    for g in &mut grad {
        *g *= inv;
    }
    Ok((loss * inv, grad))
}

/// Index of the largest entry of every row.
pub fn argmax_rows<T: Scalar>(data: &[T], cols: usize) -> Vec<usize> {
    data.chunks_exact(cols)
        .map(|row| {
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
