//! Augmentation cost measurements.
//!
//! For each dataset size the harness times two things:
//!
//! * preprocessing, the work done before the first epoch: the offline
//!   expansion for token-level methods, configuration checks and stream setup
//!   for RPN and FreeLB;
//! * in-loop augmentation over one epoch: RPN noise steps, or FreeLB ascent
//!   steps (which need forward and backward passes). Token-level methods do no
//!   in-loop work, so their epoch time is zero.
//!
//! Every figure is the median over trials after discarding the first one.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::augment::{freelb_init, freelb_update, rpn::step_stream, rpn_step, EdaOp, FreeLbConfig, Method, RpnConfig};
use crate::data::{synth_dataset, LabeledDataset, SynthSpec, TokenSequence, Vocabulary, AEDA_PUNCTUATION};
use crate::error::{Error, Result};
use crate::model::{embed, TextCnn, TextCnnConfig};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;
use crate::train::{expand_dataset, TokenAugment};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSetup {
    pub seq_len: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub batch_size: usize,
    /// Augmented copies per sample for token-level methods.
    pub copies: usize,
    pub rpn: RpnConfig,
    pub freelb: FreeLbConfig,
    pub aeda_ratio: f64,
    pub eda_op: EdaOp,
    pub eda_strength: f64,
    pub seed: u64,
}

impl Default for BenchSetup {
    fn default() -> Self {
        Self {
            seq_len: 32,
            vocab_size: 2000,
            embed_dim: 32,
            batch_size: 32,
            copies: 3,
            rpn: RpnConfig::default(),
            freelb: FreeLbConfig::default(),
            aeda_ratio: 0.3,
            eda_op: EdaOp::RandomSwap,
            eda_strength: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeTiming {
    pub size: usize,
    pub preprocess_time_s: f64,
    pub per_epoch_time_s: f64,
    pub per_batch_augment_time_us: f64,
}

/// Least-squares line with a 95% confidence interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_ci95: (f64, f64),
    pub r_squared: f64,
}

impl LinearFit {
    pub fn ci_contains_zero(&self) -> bool {
        self.slope_ci95.0 <= 0.0 && 0.0 <= self.slope_ci95.1
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::config("a linear fit needs at least three (x, y) pairs"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::config("a linear fit needs at least two distinct x values"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let se = (ss_res / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| Error::config(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    Ok(LinearFit {
        slope,
        intercept,
        slope_ci95: (slope - t * se, slope + t * se),
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub method: Method,
    pub sizes: Vec<usize>,
    pub rows: Vec<SizeTiming>,
    /// Preprocessing time against dataset size.
    pub preprocess_fit: LinearFit,
    /// In-loop epoch time against dataset size.
    pub epoch_fit: LinearFit,
}

pub const CSV_HEADER: &str = "method,size,preprocess_time_s,per_epoch_time_s,per_batch_augment_time_us";

impl BenchReport {
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.9},{:.9},{:.3}",
                self.method, r.size, r.preprocess_time_s, r.per_epoch_time_s, r.per_batch_augment_time_us
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "{:<9} {:>7} {:>16} {:>16} {:>14}\n",
            "method", "size", "preprocess_s", "epoch_s", "batch_us"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<9} {:>7} {:>16.6} {:>16.6} {:>14.2}",
                self.method.to_string(),
                r.size,
                r.preprocess_time_s,
                r.per_epoch_time_s,
                r.per_batch_augment_time_us
            );
        }
        let f = &self.preprocess_fit;
        let _ = writeln!(
            out,
            "{} preprocess slope {:.3e} s/sample, 95% CI [{:.3e}, {:.3e}], R^2 {:.4}",
            self.method, f.slope, f.slope_ci95.0, f.slope_ci95.1, f.r_squared
        );
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `f` `trials` times and returns the median elapsed seconds, ignoring
/// the first run.
pub fn time_median(trials: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut samples = Vec::with_capacity(trials);
    for i in 0..trials {
        let t = Instant::now();
        f()?;
        let s = t.elapsed().as_secs_f64();
        if i > 0 {
            samples.push(s);
        }
    }
    Ok(median(samples))
}

struct Fixture {
    data: LabeledDataset,
    vocab: Vocabulary,
    weights: DenseTensor,
}

fn fixture(size: usize, setup: &BenchSetup) -> Result<Fixture> {
    let rng = RngStream::from_seed(setup.seed);
    let spec = SynthSpec {
        vocab_size: setup.vocab_size,
        seq_len: setup.seq_len,
        num_classes: 2,
    };
    let data = synth_dataset(size, setup.vocab_size, setup.seq_len, 2, &rng.derive("bench-data", 0))?;
    let mut vocab = spec.vocabulary();
    for p in AEDA_PUNCTUATION {
        vocab.insert(p);
    }
    let weights = DenseTensor::uniform(
        &[vocab.len(), setup.embed_dim],
        -0.1,
        0.1,
        &mut rng.derive("bench-embedding", 0),
    )?;
    Ok(Fixture { data, vocab, weights })
}

fn token_augment(method: Method, setup: &BenchSetup) -> Option<TokenAugment> {
    match method {
        Method::Aeda => Some(TokenAugment::Aeda {
            ratio: setup.aeda_ratio,
        }),
        Method::EdaLite => Some(TokenAugment::EdaLite {
            op: setup.eda_op,
            strength: setup.eda_strength,
        }),
        Method::Rpn | Method::FreeLb => None,
    }
}

fn preprocess(method: Method, fx: &Fixture, setup: &BenchSetup) -> Result<()> {
    let rng = RngStream::from_seed(setup.seed);
    match token_augment(method, setup) {
        Some(how) => {
            let out = expand_dataset(&fx.data, &fx.vocab, &how, setup.copies, &rng.derive("token-aug", 0))?;
            black_box(out);
        }
        None => {
            // everything the in-loop methods need before training starts
            match method {
                Method::Rpn => setup.rpn.validate()?,
                _ => setup.freelb.validate()?,
            }
            black_box(rng.derive("rpn", 0));
        }
    }
    Ok(())
}

fn batches(data: &LabeledDataset, batch_size: usize, count: Option<usize>) -> Vec<Vec<&TokenSequence>> {
    let all: Vec<Vec<&TokenSequence>> = data.sequences.chunks(batch_size).map(|c| c.iter().collect()).collect();
    match count {
        None => all,
        Some(n) => all.into_iter().cycle().take(n).collect(),
    }
}

/// Seconds of in-loop augmentation work for `batches` batches, excluding
/// the embedding lookup.
fn epoch_augment_time(
    method: Method,
    fx: &Fixture,
    setup: &BenchSetup,
    model: Option<&TextCnn>,
    count: Option<usize>,
) -> Result<f64> {
    if method.is_token_level() {
        return Ok(0.0);
    }
    let root = RngStream::from_seed(setup.seed);
    let mut total = 0.0;
    for (b, seqs) in batches(&fx.data, setup.batch_size, count).iter().enumerate() {
        let x = embed(&fx.weights, seqs, setup.seq_len)?;
        let labels: Vec<usize> = seqs.iter().map(|s| s.label).collect();
        let t = Instant::now();
        match method {
            Method::Rpn => {
                let noise = root.derive("rpn", b as u64);
                let mut cur = x;
                for k in 1..=setup.rpn.steps {
                    cur = rpn_step(&cur, &setup.rpn, &step_stream(&noise, k))?.next;
                }
                black_box(cur);
            }
            Method::FreeLb => {
                let model = model.expect("FreeLB timing needs a model");
                let mut delta = freelb_init(
                    x.values.shape(),
                    &setup.freelb,
                    &mut root.derive("freelb-init", b as u64),
                )?;
                for _ in 0..setup.freelb.ascent_steps {
                    let xs = x.with_values(x.values.add(&delta)?)?;
                    let out = model.forward(&xs, &labels, None)?;
                    let g = model.backward(&out.cache)?;
                    delta = freelb_update(&delta, &g.d_input, &setup.freelb)?;
                }
                black_box(delta);
            }
            Method::Aeda | Method::EdaLite => unreachable!("token-level methods return early"),
        }
        total += t.elapsed().as_secs_f64();
    }
    Ok(total)
}

fn bench_model(fx: &Fixture, setup: &BenchSetup) -> Result<TextCnn> {
    TextCnn::new(
        TextCnnConfig {
            vocab_size: fx.vocab.len(),
            embed_dim: setup.embed_dim,
            kernel_sizes: vec![3],
            filters: 16,
            num_classes: 2,
            dropout: 0.0,
            max_len: setup.seq_len,
        },
        &mut RngStream::from_seed(setup.seed).derive("bench-model", 0),
    )
}

/// Median in-loop augmentation time for `batches` batches of the setup's
/// batch size, cycling over a fixed dataset of `size` samples.
pub fn time_augment_batches(
    method: Method,
    size: usize,
    batches: usize,
    trials: usize,
    setup: &BenchSetup,
) -> Result<f64> {
    let fx = fixture(size, setup)?;
    let model = (method == Method::FreeLb)
        .then(|| bench_model(&fx, setup))
        .transpose()?;
    let mut samples = Vec::with_capacity(trials);
    for i in 0..trials {
        let s = epoch_augment_time(method, &fx, setup, model.as_ref(), Some(batches))?;
        if i > 0 {
            samples.push(s);
        }
    }
    Ok(median(samples))
}

pub fn bench_augment(method: Method, sizes: &[usize], trials: usize) -> Result<BenchReport> {
    bench_augment_with(method, sizes, trials, &BenchSetup::default())
}

pub fn bench_augment_with(method: Method, sizes: &[usize], trials: usize, setup: &BenchSetup) -> Result<BenchReport> {
    if sizes.is_empty() {
        return Err(Error::config("bench needs at least one dataset size"));
    }
    if sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::config("bench sizes must be positive and strictly increasing"));
    }
    if trials < 3 {
        return Err(Error::config(format!("bench needs at least 3 trials, got {trials}")));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let fx = fixture(size, setup)?;
        let model = (method == Method::FreeLb)
            .then(|| bench_model(&fx, setup))
            .transpose()?;
        let pre = time_median(trials, || preprocess(method, &fx, setup))?;
        let mut epoch = Vec::with_capacity(trials);
        for i in 0..trials {
            let s = epoch_augment_time(method, &fx, setup, model.as_ref(), None)?;
            if i > 0 {
                epoch.push(s);
            }
        }
        let epoch = median(epoch);
        let nb = size.div_ceil(setup.batch_size);
        rows.push(SizeTiming {
            size,
            preprocess_time_s: pre,
            per_epoch_time_s: epoch,
            per_batch_augment_time_us: epoch / nb as f64 * 1e6,
        });
    }
    let x: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let (preprocess_fit, epoch_fit) = if sizes.len() >= 3 {
        let pre: Vec<f64> = rows.iter().map(|r| r.preprocess_time_s).collect();
        let ep: Vec<f64> = rows.iter().map(|r| r.per_epoch_time_s).collect();
        (linear_fit(&x, &pre)?, linear_fit(&x, &ep)?)
    } else {
        let nan = LinearFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            slope_ci95: (f64::NAN, f64::NAN),
            r_squared: f64::NAN,
        };
        (nan, nan)
    };
    Ok(BenchReport {
        method,
        sizes: sizes.to_vec(),
        rows,
        preprocess_fit,
        epoch_fit,
    })
}
