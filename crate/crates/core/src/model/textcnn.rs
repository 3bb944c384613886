//! TextCNN classifier with hand-written forward and backward passes.
//!
//! Architecture: parallel 1-D convolution branches (one per kernel length)
//! over the embedded sequence, ReLU, global max-pooling over the windows
//! that start inside the real tokens, concatenation, dropout, dense head,
//! softmax cross-entropy.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::model::embedding::{embed, EmbeddingBatch, EmbeddingLayer};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TextCnnConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub kernel_sizes: Vec<usize>,
    /// Filters per kernel length.
    pub filters: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for TextCnnConfig {
    /// Desk-scale default; the 10/20/30 kernel lengths follow the original
    /// TextCNN experiment, the widths are much smaller.
    fn default() -> Self {
        Self {
            vocab_size: 20_000,
            embed_dim: 64,
            kernel_sizes: vec![10, 20, 30],
            filters: 32,
            num_classes: 2,
            dropout: 0.1,
            max_len: 64,
        }
    }
}

impl TextCnnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.embed_dim == 0 || self.filters == 0 {
            return fail("embed_dim and filters must be positive".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.contains(&0) {
            return fail("kernel_sizes must be non-empty and positive".into());
        }
        if let Some(&k) = self.kernel_sizes.iter().find(|&&k| k > self.max_len) {
            return fail(format!("kernel length {k} exceeds max_len {}", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Width of the pooled feature vector.
    pub fn hidden(&self) -> usize {
        self.filters * self.kernel_sizes.len()
    }

    pub fn num_parameters(&self) -> usize {
        let d = self.embed_dim;
        let conv: usize = self
            .kernel_sizes
            .iter()
            .map(|&k| self.filters * k * d + self.filters)
            .sum();
        self.vocab_size * d + conv + self.num_classes * self.hidden() + self.num_classes
    }
}

/// All trainable tensors. Also used, with identical shapes, for gradients
/// and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCnnParams {
    pub embedding: DenseTensor,
    /// `filters × (k · dim)` per branch.
    pub conv_weight: Vec<DenseTensor>,
    pub conv_bias: Vec<DenseTensor>,
    /// `classes × hidden`.
    pub head_weight: DenseTensor,
    pub head_bias: DenseTensor,
}

impl TextCnnParams {
    pub fn zeros_like(other: &TextCnnParams) -> Self {
        let z = |t: &DenseTensor| DenseTensor::zeros(t.shape()).expect("valid shape");
        Self {
            embedding: z(&other.embedding),
            conv_weight: other.conv_weight.iter().map(z).collect(),
            conv_bias: other.conv_bias.iter().map(z).collect(),
            head_weight: z(&other.head_weight),
            head_bias: z(&other.head_bias),
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &DenseTensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (i, (w, b)) in self.conv_weight.iter().zip(&self.conv_bias).enumerate() {
            out.push((format!("conv{i}.weight"), w));
            out.push((format!("conv{i}.bias"), b));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut DenseTensor> {
        let mut out = vec![&mut self.embedding];
        for (w, b) in self.conv_weight.iter_mut().zip(self.conv_bias.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn axpy(&mut self, factor: f64, other: &TextCnnParams) -> Result<()> {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(factor, b)?;
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Gradients of the loss with respect to every parameter and to the
/// embedding output fed into the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// The embedding slot stays zero until the caller scatters `d_input`
    /// back through the lookup.
    pub params: TextCnnParams,
    pub d_input: DenseTensor,
}

impl GradientSet {
    pub fn scale(&mut self, factor: f64) {
        self.params.scale_in_place(factor);
        self.d_input.data_mut().iter_mut().for_each(|v| *v *= factor);
    }
}

#[derive(Debug)]
pub struct TextCnn {
    config: TextCnnConfig,
    params: TextCnnParams,
    version: u64,
    backward_calls: AtomicU64,
}

impl Clone for TextCnn {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            params: self.params.clone(),
            version: self.version,
            backward_calls: AtomicU64::new(self.backward_calls.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for TextCnn {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    input: DenseTensor,
    lengths: Vec<usize>,
    /// Per branch, `batch × filters` window index of the max.
    argmax: Vec<Vec<usize>>,
    /// `batch × hidden`, after ReLU.
    pooled: Vec<f64>,
    /// `batch × hidden` inverted-dropout factors, if dropout was active.
    dropout: Option<Vec<f64>>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub loss: f64,
    /// `batch × classes`.
    pub logits: DenseTensor,
    pub cache: ForwardCache,
}

/// Windows of length `k` pooled for a sample with `len` real tokens in a
/// padded sequence of length `n`: those lying entirely inside the real
/// tokens, or just the first window when the sample is shorter than `k`.
pub fn pooled_windows(len: usize, n: usize, k: usize) -> usize {
    (len.min(n).saturating_sub(k) + 1).min(n + 1 - k)
}

impl TextCnn {
    pub fn new(config: TextCnnConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let embedding = EmbeddingLayer::init(config.vocab_size, d, rng)?.weights().clone();
        let mut conv_weight = Vec::new();
        let mut conv_bias = Vec::new();
        for &k in &config.kernel_sizes {
            let bound = 1.0 / ((k * d) as f64).sqrt();
            conv_weight.push(DenseTensor::uniform(&[config.filters, k * d], -bound, bound, rng)?);
            conv_bias.push(DenseTensor::uniform(&[config.filters], -bound, bound, rng)?);
        }
        let h = config.hidden();
        let bound = 1.0 / (h as f64).sqrt();
        let head_weight = DenseTensor::uniform(&[config.num_classes, h], -bound, bound, rng)?;
        let head_bias = DenseTensor::uniform(&[config.num_classes], -bound, bound, rng)?;
        Ok(Self::from_parts(
            config,
            TextCnnParams {
                embedding,
                conv_weight,
                conv_bias,
                head_weight,
                head_bias,
            },
        ))
    }

    fn from_parts(config: TextCnnConfig, params: TextCnnParams) -> Self {
        Self {
            config,
            params,
            version: 0,
            backward_calls: AtomicU64::new(0),
        }
    }

    /// Rebuilds a model from explicit parameters, checking every shape.
    pub fn from_params(config: TextCnnConfig, params: TextCnnParams) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let mut expected = vec![vec![config.vocab_size, d]];
        for &k in &config.kernel_sizes {
            expected.push(vec![config.filters, k * d]);
            expected.push(vec![config.filters]);
        }
        expected.push(vec![config.num_classes, config.hidden()]);
        expected.push(vec![config.num_classes]);
        let actual = params.tensors();
        if actual.len() != expected.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((name, t), want) in actual.iter().zip(&expected) {
            if t.shape() != want.as_slice() {
                return Err(Error::Dimension {
                    op: "TextCnn::from_params",
                    left: want.clone(),
                    right: t.shape().to_vec(),
                })
                .map_err(|e| Error::Contract(format!("{name}: {e}")));
            }
        }
        EmbeddingLayer::from_weights(params.embedding.clone())?;
        Ok(Self::from_parts(config, params))
    }

    pub fn config(&self) -> &TextCnnConfig {
        &self.config
    }

    pub fn params(&self) -> &TextCnnParams {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut TextCnnParams {
        self.version += 1;
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    pub fn embedding(&self) -> EmbeddingLayer {
        EmbeddingLayer::from_weights(self.params.embedding.clone()).expect("padding row kept zero")
    }

    /// Row lookup without cloning the weight matrix.
    pub fn embed(&self, batch: &[&TokenSequence]) -> Result<EmbeddingBatch> {
        embed(&self.params.embedding, batch, self.config.max_len)
    }

    /// Zeroes the classification head so every input yields uniform logits.
    pub fn zero_head(&mut self) {
        let p = self.params_mut();
        p.head_weight.data_mut().fill(0.0);
        p.head_bias.data_mut().fill(0.0);
    }

    /// Number of backward passes run on this instance.
    pub fn backward_calls(&self) -> u64 {
        self.backward_calls.load(Ordering::Relaxed)
    }

    pub fn forward(
        &self,
        x: &EmbeddingBatch,
        labels: &[usize],
        dropout_rng: Option<&mut RngStream>,
    ) -> Result<ForwardOutput> {
        self.forward_weighted(x, labels, &vec![1.0; labels.len()], dropout_rng)
    }

    /// Loss is `Σ_i w_i · CE_i / batch`.
    pub fn forward_weighted(
        &self,
        x: &EmbeddingBatch,
        labels: &[usize],
        weights: &[f64],
        dropout_rng: Option<&mut RngStream>,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let (b, n, d) = (x.batch_size(), x.seq_len(), x.dim());
        if labels.len() != b || weights.len() != b {
            return Err(Error::Contract(format!(
                "batch of {b} with {} labels and {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if d != cfg.embed_dim {
            return Err(Error::Dimension {
                op: "forward",
                left: x.values.shape().to_vec(),
                right: vec![b, n, cfg.embed_dim],
            });
        }
        if let Some(&k) = cfg.kernel_sizes.iter().find(|&&k| k > n) {
            return Err(Error::Contract(format!(
                "kernel length {k} exceeds sequence extent {n}"
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= cfg.num_classes) {
            return Err(Error::Index {
                what: "label",
                index: y,
                size: cfg.num_classes,
            });
        }

        // Padding positions never reach the convolutions.
        let mut input = x.values.clone();
        {
            let data = input.data_mut();
            for (s, &len) in x.lengths.iter().enumerate() {
                data[(s * n + len) * d..(s + 1) * n * d].fill(0.0);
            }
        }
        let xin = input.data();

        let h = cfg.hidden();
        let f = cfg.filters;
        let mut pooled = vec![0.0; b * h];
        let mut argmax = Vec::with_capacity(cfg.kernel_sizes.len());
        for (branch, &k) in cfg.kernel_sizes.iter().enumerate() {
            let w = self.params.conv_weight[branch].data();
            let bias = self.params.conv_bias[branch].data();
            let width = k * d;
            let mut arg = vec![0usize; b * f];
            for s in 0..b {
                let windows = pooled_windows(x.lengths[s], n, k);
                for filt in 0..f {
                    let wf = &w[filt * width..(filt + 1) * width];
                    let mut best = f64::NEG_INFINITY;
                    let mut best_p = 0;
                    for p in 0..windows {
                        let start = (s * n + p) * d;
                        let win = &xin[start..start + width];
                        let z = bias[filt] + dot(wf, win);
                        if z > best {
                            best = z;
                            best_p = p;
                        }
                    }
                    if !best.is_finite() {
                        return Err(Error::NonFinite(format!("conv branch {branch} (k={k})")));
                    }
                    arg[s * f + filt] = best_p;
                    pooled[s * h + branch * f + filt] = best.max(0.0);
                }
            }
            argmax.push(arg);
        }

        let (dropout, hidden) = match dropout_rng {
            Some(rng) if cfg.dropout > 0.0 => {
                let keep = 1.0 - cfg.dropout;
                let mask: Vec<f64> = (0..b * h)
                    .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                    .collect();
                let hidden = pooled.iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Some(mask), hidden)
            }
            _ => (None, pooled.clone()),
        };

        let c = cfg.num_classes;
        let hw = self.params.head_weight.data();
        let hb = self.params.head_bias.data();
        let mut logits = vec![0.0; b * c];
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for s in 0..b {
            let hs = &hidden[s * h..(s + 1) * h];
            let z = &mut logits[s * c..(s + 1) * c];
            for (class, zc) in z.iter_mut().enumerate() {
                *zc = hb[class] + dot(&hw[class * h..(class + 1) * h], hs);
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("classification head".into()));
            }
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let log_norm = m + sum.ln();
            for class in 0..c {
                probs[s * c + class] = (z[class] - log_norm).exp();
            }
            loss += weights[s] * (log_norm - z[labels[s]]);
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross-entropy loss".into()));
        }

        Ok(ForwardOutput {
            loss,
            logits: DenseTensor::new(&[b, c], logits)?,
            cache: ForwardCache {
                version: self.version,
                input,
                lengths: x.lengths.clone(),
                argmax,
                pooled,
                dropout,
                hidden,
                probs,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
            },
        })
    }

    pub fn backward(&self, cache: &ForwardCache) -> Result<GradientSet> {
        if cache.version != self.version {
            return Err(Error::Contract(
                "forward cache is stale: parameters changed since the forward pass".into(),
            ));
        }
        self.backward_calls.fetch_add(1, Ordering::Relaxed);
        let cfg = &self.config;
        let shape = cache.input.shape();
        let (b, n, d) = (shape[0], shape[1], shape[2]);
        let (c, h, f) = (cfg.num_classes, cfg.hidden(), cfg.filters);
        let mut grads = TextCnnParams::zeros_like(&self.params);

        // head
        let hw = self.params.head_weight.data();
        let mut d_hidden = vec![0.0; b * h];
        {
            let gw = grads.head_weight.data_mut();
            for s in 0..b {
                let hs = &cache.hidden[s * h..(s + 1) * h];
                for class in 0..c {
                    let target = if class == cache.labels[s] { 1.0 } else { 0.0 };
                    let dz = cache.weights[s] * (cache.probs[s * c + class] - target) / b as f64;
                    if dz == 0.0 {
                        continue;
                    }
                    for (g, &hv) in gw[class * h..(class + 1) * h].iter_mut().zip(hs) {
                        *g += dz * hv;
                    }
                    for (dh, &wv) in d_hidden[s * h..(s + 1) * h]
                        .iter_mut()
                        .zip(&hw[class * h..(class + 1) * h])
                    {
                        *dh += dz * wv;
                    }
                }
            }
        }
        {
            let gb = grads.head_bias.data_mut();
            for s in 0..b {
                for (class, g) in gb.iter_mut().enumerate() {
                    let target = if class == cache.labels[s] { 1.0 } else { 0.0 };
                    *g += cache.weights[s] * (cache.probs[s * c + class] - target) / b as f64;
                }
            }
        }

        // dropout and ReLU
        let mut d_pooled = d_hidden;
        if let Some(mask) = &cache.dropout {
            d_pooled.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        for (g, &p) in d_pooled.iter_mut().zip(&cache.pooled) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }

        // convolutions
        let xin = cache.input.data();
        let mut d_input = vec![0.0; b * n * d];
        for (branch, &k) in cfg.kernel_sizes.iter().enumerate() {
            let width = k * d;
            let w = self.params.conv_weight[branch].data();
            let gw = grads.conv_weight[branch].data_mut();
            let mut gb = vec![0.0; f];
            for s in 0..b {
                for filt in 0..f {
                    let g = d_pooled[s * h + branch * f + filt];
                    if g == 0.0 {
                        continue;
                    }
                    let p = cache.argmax[branch][s * f + filt];
                    let start = (s * n + p) * d;
                    gb[filt] += g;
                    for (gwv, &xv) in gw[filt * width..(filt + 1) * width]
                        .iter_mut()
                        .zip(&xin[start..start + width])
                    {
                        *gwv += g * xv;
                    }
                    for (dx, &wv) in d_input[start..start + width]
                        .iter_mut()
                        .zip(&w[filt * width..(filt + 1) * width])
                    {
                        *dx += g * wv;
                    }
                }
            }
            grads.conv_bias[branch].data_mut().copy_from_slice(&gb);
        }

        // the input was masked, so padding positions get no gradient
        for (s, &len) in cache.lengths.iter().enumerate() {
            d_input[(s * n + len) * d..(s + 1) * n * d].fill(0.0);
        }

        if !grads.all_finite() || d_input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("backward pass".into()));
        }
        Ok(GradientSet {
            params: grads,
            d_input: DenseTensor::new(shape, d_input)?,
        })
    }

    /// Predicted class per sample (lowest index wins ties) and mean loss,
    /// with dropout off.
    pub fn predict(&self, x: &EmbeddingBatch, labels: &[usize]) -> Result<(Vec<usize>, f64)> {
        let out = self.forward(x, labels, None)?;
        Ok((argmax_rows(&out.logits), out.loss))
    }
}

/// Index of the largest entry per row; the lowest index wins ties.
pub fn argmax_rows(logits: &DenseTensor) -> Vec<usize> {
    (0..logits.num_rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
