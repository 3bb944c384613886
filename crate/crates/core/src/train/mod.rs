//! Training loops, evaluation and metrics.
//!
//! Every mode shares one epoch/batch schedule and one set of random streams,
//! so modes that degenerate to plain training (RPN with `K = 0`, FreeLB with
//! a single zero-initialized step, token expansion with no copies) reproduce
//! the baseline bit for bit.

mod config;
mod expand;
mod metrics;

use std::time::Instant;

pub use config::{
    BenchConfig, DataSource, EmbeddingFlow, GridConfig, Mode, ModelOptions, Preset, RunConfig, TokenAugConfig,
    TrainConfig, UpdateRule,
};
pub use expand::{expand_dataset, TokenAugment};
pub use metrics::{MetricRecord, MetricsLog};

use crate::augment::{freelb_init, freelb_update, rpn::step_stream, rpn_step, RpnStep};
use crate::data::{
    synth_splits, DatasetSplits, LabeledDataset, Split, SynthSpec, TokenSequence, Vocabulary, AEDA_PUNCTUATION,
};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, EmbeddingBatch, EmbeddingLayer, Sgd, TextCnn, TextCnnConfig, TextCnnParams};
use crate::rng::RngStream;
use crate::tensor::{frobenius_norm, DenseTensor};

/// Splits plus the vocabulary they were encoded with.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub vocab: Vocabulary,
    pub train: LabeledDataset,
    pub dev: Option<LabeledDataset>,
    pub test: Option<LabeledDataset>,
}

impl From<DatasetSplits> for TrainData {
    fn from(s: DatasetSplits) -> Self {
        Self {
            vocab: s.vocab,
            train: s.train,
            dev: s.dev,
            test: s.test,
        }
    }
}

impl TrainData {
    /// Synthetic separable splits. Punctuation marks are appended to the
    /// vocabulary so punctuation insertion produces known tokens.
    pub fn synthetic(sizes: [usize; 3], spec: SynthSpec, seed: u64) -> Result<Self> {
        let mut data: TrainData = synth_splits(sizes, spec, &RngStream::from_seed(seed).derive("synth", 0))?.into();
        for p in AEDA_PUNCTUATION {
            data.vocab.insert(p);
        }
        Ok(data)
    }

    pub fn from_source(source: &DataSource, seed: u64) -> Result<Self> {
        match source {
            DataSource::Manifest(p) => Ok(crate::data::DatasetManifest::read(p)?.load()?.into()),
            &DataSource::Synthetic {
                train,
                dev,
                test,
                vocab_size,
                seq_len,
                num_classes,
            } => Self::synthetic(
                [train, dev, test],
                SynthSpec {
                    vocab_size,
                    seq_len,
                    num_classes,
                },
                seed,
            ),
        }
    }

    pub fn model_config(&self, opts: &ModelOptions) -> TextCnnConfig {
        TextCnnConfig {
            vocab_size: self.vocab.len(),
            embed_dim: opts.embed_dim,
            kernel_sizes: opts.kernel_sizes.clone(),
            filters: opts.filters,
            num_classes: self.train.num_classes,
            dropout: opts.dropout,
            max_len: self.train.max_len,
        }
    }
}

/// Freshly initialized model for a run; the init stream depends on the seed only.
pub fn build_model(config: TextCnnConfig, seed: u64) -> Result<TextCnn> {
    TextCnn::new(config, &mut RngStream::from_seed(seed).derive("model-init", 0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_BATCH: usize = 256;

/// Logits of every example, in dataset order, with dropout off.
pub fn predict_logits(model: &TextCnn, data: &LabeledDataset) -> Result<DenseTensor> {
    if data.is_empty() {
        return Err(Error::config(format!("cannot evaluate the empty {} split", data.split)));
    }
    let mut out = Vec::with_capacity(data.len() * model.config().num_classes);
    for chunk in data.sequences.chunks(EVAL_BATCH) {
        let seqs: Vec<&TokenSequence> = chunk.iter().collect();
        let x = model.embed(&seqs)?;
        let fwd = model.forward(&x, &labels(&seqs), None)?;
        out.extend_from_slice(fwd.logits.data());
    }
    DenseTensor::new(&[data.len(), model.config().num_classes], out)
}

/// Mean cross-entropy and argmax accuracy (ties go to the lowest class).
pub fn evaluate(model: &TextCnn, data: &LabeledDataset) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::config(format!("cannot evaluate the empty {} split", data.split)));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in data.sequences.chunks(EVAL_BATCH) {
        let seqs: Vec<&TokenSequence> = chunk.iter().collect();
        let y = labels(&seqs);
        let x = model.embed(&seqs)?;
        let fwd = model.forward(&x, &y, None)?;
        loss_sum += fwd.loss * seqs.len() as f64;
        correct += argmax_rows(&fwd.logits).iter().zip(&y).filter(|(p, l)| p == l).count();
    }
    Ok(EvalResult {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

fn labels(seqs: &[&TokenSequence]) -> Vec<usize> {
    seqs.iter().map(|s| s.label).collect()
}

/// What a training run reports while it goes. Batch indices count from 0
/// across epochs.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    /// One forward pass. `step` is the RPN sample index, `inner` the FreeLB
    /// ascent step.
    Forward {
        batch: usize,
        step: usize,
        inner: usize,
        loss: f64,
    },
    /// Unscaled parameter gradient of one forward/backward pass, embedding
    /// slot included.
    Gradient {
        batch: usize,
        step: usize,
        inner: usize,
        grads: &'a TextCnnParams,
    },
    /// Norm of the FreeLB perturbation after an update.
    Delta {
        batch: usize,
        step: usize,
        inner: usize,
        norm: f64,
    },
    /// One RPN step produced virtual sample `step`.
    Noise {
        batch: usize,
        step: usize,
        mask_density: f64,
        backward_calls_before: u64,
        backward_calls_after: u64,
    },
    /// Gradient handed to the optimizer, and the model after the update.
    Update {
        batch: usize,
        step: usize,
        grads: &'a TextCnnParams,
        model: &'a TextCnn,
    },
    /// The loss logged for a batch.
    BatchLoss {
        batch: usize,
        loss: f64,
    },
    Eval(&'a MetricRecord),
}

pub trait Observer {
    fn event(&mut self, _event: &TrainEvent<'_>) {}
}

impl Observer for () {}

impl<F: FnMut(&TrainEvent<'_>)> Observer for F {
    fn event(&mut self, event: &TrainEvent<'_>) {
        self(event)
    }
}

/// Loss weight of each pass in the combined FreeLB + RPN objective with `n`
/// virtual samples and `k` ascent steps.
pub fn combo_loss_scale(n: usize, k: usize) -> f64 {
    1.0 / ((n + 1) * k) as f64
}

/// Example order of `epoch` (1-based): a shuffle keyed by the run seed.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    RngStream::from_seed(seed)
        .derive("epoch-shuffle", epoch as u64)
        .shuffle(&mut order);
    order
}

/// Trains `model` in place according to `cfg.mode`.
pub fn train(
    model: &mut TextCnn,
    data: &TrainData,
    cfg: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let expanded;
    let train_set = match cfg.mode {
        Mode::Aeda | Mode::EdaLite => {
            let how = TokenAugment::from_config(cfg.mode, &cfg.aug)?;
            expanded = expand_dataset(
                &data.train,
                &data.vocab,
                &how,
                cfg.aug.copies,
                &RngStream::from_seed(cfg.seed).derive("token-aug", 0),
            )?;
            &expanded
        }
        _ => &data.train,
    };
    let mut runner = Runner {
        model,
        sgd: Sgd::new(cfg.lr, cfg.momentum)?,
        cfg,
        obs: observer,
        root: RngStream::from_seed(cfg.seed),
    };
    let start = Instant::now();
    let mut log = MetricsLog::default();
    let per_epoch = train_set.len().div_ceil(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train_set.len(), cfg.seed, epoch);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let gb = (epoch - 1) * per_epoch + b;
            let seqs: Vec<&TokenSequence> = chunk.iter().map(|&i| &train_set.sequences[i]).collect();
            let loss = match cfg.mode {
                Mode::Baseline | Mode::Aeda | Mode::EdaLite => runner.plain_batch(gb, &seqs)?,
                Mode::Rpn => runner.rpn_batch(gb, &seqs)?,
                Mode::FreeLb => runner.freelb_batch(gb, &seqs)?,
                Mode::FreeLbRpn => runner.combo_batch(gb, &seqs)?,
            };
            runner.obs.event(&TrainEvent::BatchLoss { batch: gb, loss });
        }
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            runner.evaluate_all(data, epoch, epoch == cfg.epochs, &start, &mut log)?;
        }
    }
    if cfg.epochs == 0 {
        runner.evaluate_all(data, 0, true, &start, &mut log)?;
    }
    Ok(log)
}

struct Runner<'a> {
    model: &'a mut TextCnn,
    sgd: Sgd,
    cfg: &'a TrainConfig,
    obs: &'a mut dyn Observer,
    root: RngStream,
}

impl Runner<'_> {
    fn dropout_stream(&self, batch: usize, step: usize) -> RngStream {
        self.root.derive("dropout", batch as u64).derive("step", step as u64)
    }

    fn evaluate_all(
        &mut self,
        data: &TrainData,
        epoch: usize,
        last: bool,
        start: &Instant,
        log: &mut MetricsLog,
    ) -> Result<()> {
        let mut splits = vec![(Split::Train, &data.train)];
        splits.extend(data.dev.iter().map(|d| (Split::Dev, d)));
        if last {
            splits.extend(data.test.iter().map(|d| (Split::Test, d)));
        }
        for (split, ds) in splits {
            let r = evaluate(self.model, ds)?;
            let wall_time_s = if self.cfg.wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            let rec = MetricRecord {
                epoch,
                split,
                loss: r.loss,
                accuracy: r.accuracy,
                wall_time_s,
            };
            log.push(rec.clone())?;
            self.obs.event(&TrainEvent::Eval(&rec));
        }
        Ok(())
    }

    /// Forward and backward on `x`. Returns the loss, the unscaled parameter
    /// gradient without the embedding part, and `d loss / d x`.
    fn pass(
        &mut self,
        x: &EmbeddingBatch,
        labels: &[usize],
        batch: usize,
        step: usize,
        inner: usize,
        dropout_step: usize,
    ) -> Result<(f64, TextCnnParams, DenseTensor)> {
        let mut drop = self.dropout_stream(batch, dropout_step);
        let at = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at batch {batch}, step {step}, ascent step {inner}")),
            other => other,
        };
        let out = self.model.forward(x, labels, Some(&mut drop)).map_err(at)?;
        if !out.loss.is_finite() {
            return Err(at(Error::NonFinite(format!("loss {}", out.loss))));
        }
        self.obs.event(&TrainEvent::Forward {
            batch,
            step,
            inner,
            loss: out.loss,
        });
        let g = self.model.backward(&out.cache).map_err(at)?;
        Ok((out.loss, g.params, g.d_input))
    }

    fn update(&mut self, batch: usize, step: usize, grads: &TextCnnParams) -> Result<()> {
        self.sgd.step(self.model, grads)?;
        self.obs.event(&TrainEvent::Update {
            batch,
            step,
            grads,
            model: self.model,
        });
        Ok(())
    }

    fn noise(&mut self, x: &EmbeddingBatch, noise_rng: &RngStream, batch: usize, step: usize) -> Result<RpnStep> {
        let before = self.model.backward_calls();
        let s = rpn_step(x, &self.cfg.rpn, &step_stream(noise_rng, step))?;
        self.obs.event(&TrainEvent::Noise {
            batch,
            step,
            mask_density: s.mask.density(),
            backward_calls_before: before,
            backward_calls_after: self.model.backward_calls(),
        });
        Ok(s)
    }

    fn plain_batch(&mut self, batch: usize, seqs: &[&TokenSequence]) -> Result<f64> {
        let x = self.model.embed(seqs)?;
        let y = labels(seqs);
        let (loss, mut g, d_x) = self.pass(&x, &y, batch, 0, 0, 0)?;
        EmbeddingLayer::accumulate_grad(&mut g.embedding, seqs, &d_x, 1.0)?;
        self.obs.event(&TrainEvent::Gradient {
            batch,
            step: 0,
            inner: 0,
            grads: &g,
        });
        self.update(batch, 0, &g)?;
        Ok(loss)
    }

    fn rpn_batch(&mut self, batch: usize, seqs: &[&TokenSequence]) -> Result<f64> {
        let k = self.cfg.rpn.steps;
        let scale = 1.0 / (k + 1) as f64;
        let noise_rng = self.root.derive("rpn", batch as u64);
        let y = labels(seqs);
        let mut x = self.model.embed(seqs)?;
        let mut origin = CellOrigin::new(&x, self.cfg.embedding_flow);
        let mut acc: Option<TextCnnParams> = None;
        let mut loss_sum = 0.0;
        for t in 0..=k {
            let (loss, mut g, d_x) = self.pass(&x, &y, batch, t, 0, t)?;
            loss_sum += loss;
            origin.scatter(&mut g.embedding, seqs, &d_x, t)?;
            self.obs.event(&TrainEvent::Gradient {
                batch,
                step: t,
                inner: 0,
                grads: &g,
            });
            g.scale_in_place(scale);
            match &mut acc {
                None => acc = Some(g),
                Some(a) => a.axpy(1.0, &g)?,
            }
            if self.cfg.update_rule == UpdateRule::Interleaved {
                self.update(batch, t, acc.as_ref().expect("set above"))?;
            }
            if t < k {
                let s = self.noise(&x, &noise_rng, batch, t + 1)?;
                origin.advance(&s);
                x = s.next;
            }
        }
        if self.cfg.update_rule == UpdateRule::Averaged {
            self.update(batch, k, acc.as_ref().expect("at least one pass"))?;
        }
        Ok(loss_sum / (k + 1) as f64)
    }

    /// FreeLB ascent on `x`, adding `scale`-weighted gradients into `acc`.
    #[allow(clippy::too_many_arguments)]
    fn ascend(
        &mut self,
        batch: usize,
        step: usize,
        x: &EmbeddingBatch,
        y: &[usize],
        seqs: &[&TokenSequence],
        origin: &CellOrigin,
        scale: f64,
        acc: &mut Option<TextCnnParams>,
    ) -> Result<f64> {
        let cfg = &self.cfg.freelb;
        let steps = cfg.ascent_steps;
        let mut init_rng = self.root.derive("freelb-init", batch as u64);
        let mut delta = freelb_init(x.values.shape(), cfg, &mut init_rng)?;
        let mut loss_sum = 0.0;
        for s in 0..steps {
            let xs = x.with_values(x.values.add(&delta)?)?;
            let (loss, mut g, d_x) = self.pass(&xs, y, batch, step, s, s)?;
            loss_sum += loss;
            // the last update would never be used
            if s + 1 < steps {
                delta = freelb_update(&delta, &d_x, &self.cfg.freelb)?;
                self.obs.event(&TrainEvent::Delta {
                    batch,
                    step,
                    inner: s,
                    norm: frobenius_norm(&delta),
                });
            }
            origin.scatter(&mut g.embedding, seqs, &d_x, step)?;
            self.obs.event(&TrainEvent::Gradient {
                batch,
                step,
                inner: s,
                grads: &g,
            });
            g.scale_in_place(scale);
            match acc {
                None => *acc = Some(g),
                Some(a) => a.axpy(1.0, &g)?,
            }
        }
        Ok(loss_sum)
    }

    fn freelb_batch(&mut self, batch: usize, seqs: &[&TokenSequence]) -> Result<f64> {
        let k = self.cfg.freelb.ascent_steps;
        let y = labels(seqs);
        let x = self.model.embed(seqs)?;
        let origin = CellOrigin::new(&x, EmbeddingFlow::Detached);
        let mut acc = None;
        let loss_sum = self.ascend(batch, 0, &x, &y, seqs, &origin, 1.0 / k as f64, &mut acc)?;
        self.update(batch, 0, acc.as_ref().expect("at least one ascent step"))?;
        Ok(loss_sum / k as f64)
    }

    fn combo_batch(&mut self, batch: usize, seqs: &[&TokenSequence]) -> Result<f64> {
        let n_steps = self.cfg.rpn.steps;
        let k = self.cfg.freelb.ascent_steps;
        let scale = combo_loss_scale(n_steps, k);
        let noise_rng = self.root.derive("rpn", batch as u64);
        let y = labels(seqs);
        let mut x = self.model.embed(seqs)?;
        let mut origin = CellOrigin::new(&x, self.cfg.embedding_flow);
        let mut acc = None;
        let mut loss_sum = 0.0;
        for n in 0..=n_steps {
            loss_sum += self.ascend(batch, n, &x, &y, seqs, &origin, scale, &mut acc)?;
            if n < n_steps {
                let s = self.noise(&x, &noise_rng, batch, n + 1)?;
                origin.advance(&s);
                x = s.next;
            }
        }
        self.update(batch, n_steps, acc.as_ref().expect("at least one pass"))?;
        Ok(loss_sum / ((n_steps + 1) * k) as f64)
    }
}

/// For every cell of the current virtual sample, the flat cell of the
/// original embedding it was copied from. Only tracked under full flow.
struct CellOrigin {
    cells: Option<Vec<usize>>,
    dim: usize,
}

impl CellOrigin {
    fn new(x: &EmbeddingBatch, flow: EmbeddingFlow) -> Self {
        Self {
            cells: (flow == EmbeddingFlow::Full).then(|| (0..x.values.len()).collect()),
            dim: x.dim(),
        }
    }

    fn advance(&mut self, step: &RpnStep) {
        let d = self.dim;
        if let Some(cells) = &mut self.cells {
            let prev = cells.clone();
            for (e, c) in cells.iter_mut().enumerate() {
                if step.mask.is_set(e) {
                    *c = prev[step.perm.get(e / d) * d + e % d];
                }
            }
        }
    }

    /// Adds the embedding gradient of a pass over sample `step`. The original
    /// sample always reaches the embeddings; virtual samples only under full
    /// flow.
    fn scatter(&self, grad: &mut DenseTensor, seqs: &[&TokenSequence], d_x: &DenseTensor, step: usize) -> Result<()> {
        if step == 0 {
            return EmbeddingLayer::accumulate_grad(grad, seqs, d_x, 1.0);
        }
        match &self.cells {
            None => Ok(()),
            Some(cells) => {
                let mut routed = vec![0.0; d_x.len()];
                for (&c, &v) in cells.iter().zip(d_x.data()) {
                    routed[c] += v;
                }
                let routed = DenseTensor::new(d_x.shape(), routed)?;
                EmbeddingLayer::accumulate_grad(grad, seqs, &routed, 1.0)
            }
        }
    }
}
