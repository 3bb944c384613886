//! Subcommand bodies.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use rpn_core::augment::rpn::rpn_trajectory;
use rpn_core::data::{LabeledDataset, Split, TokenSequence};
use rpn_core::dump::{load_checkpoint, load_tensor, save_checkpoint, save_tensor};
use rpn_core::kv::{self, KvFile};
use rpn_core::throughput::{bench_augment_with, BenchSetup};
use rpn_core::train::{
    build_model, evaluate, predict_logits, train as train_model, DataSource, MetricsLog, Mode, RunConfig, TrainData,
};
use rpn_core::{EmbeddingBatch, Error, Method, RngStream, TextCnn};
use serde_json::json;

use crate::{resolve_with, Failure};

type CmdResult = Result<(), Failure>;

fn create_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

/// Rewrites a manifest path to an absolute one so the resolved config still
/// points at the data when read from another directory.
fn absolute_source(cfg: &RunConfig) -> anyhow::Result<RunConfig> {
    let mut cfg = cfg.clone();
    if let DataSource::Manifest(p) = &cfg.data {
        let abs = fs::canonicalize(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        cfg.data = DataSource::Manifest(abs);
    }
    Ok(cfg)
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> anyhow::Result<String> {
    let text = kv::render(cfg.pairs());
    let path = out.join("config.resolved");
    fs::write(&path, &text).map_err(|e| Error::Io { path, source: e })?;
    Ok(text)
}

fn run_one(cfg: &RunConfig, data: &TrainData) -> rpn_core::Result<(TextCnn, MetricsLog)> {
    let mut model = build_model(data.model_config(&cfg.model), cfg.train.seed)?;
    let log = train_model(&mut model, data, &cfg.train, &mut ())?;
    Ok((model, log))
}

pub fn train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let cfg = absolute_source(cfg)?;
    create_out(out)?;
    let resolved = write_resolved(&cfg, out)?;
    let data = TrainData::from_source(&cfg.data, cfg.train.seed)?;
    let (model, log) = run_one(&cfg, &data)?;
    log.write_csv(&out.join("metrics.csv"))?;
    save_checkpoint(&out.join("model.ckpt"), &model, &resolved)?;
    for split in [Split::Train, Split::Dev, Split::Test] {
        if let Some(r) = log.last(split) {
            println!("{split}\tloss {:.6}\taccuracy {:.4}", r.loss, r.accuracy);
        }
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub overrides: Vec<String>,
    pub split: Option<Split>,
    pub dump_logits: Option<PathBuf>,
    pub dump_embeddings: Option<PathBuf>,
    pub limit: usize,
}

fn split_of(data: &TrainData, split: Split) -> Option<&LabeledDataset> {
    match split {
        Split::Train => Some(&data.train),
        Split::Dev => data.dev.as_ref(),
        Split::Test => data.test.as_ref(),
    }
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let mut kv = KvFile::parse(&ckpt.run_config, None).map_err(Failure::config)?;
    let cfg = resolve_with(&mut kv, &args.overrides)?;
    let data = TrainData::from_source(&cfg.data, cfg.train.seed)?;
    let model = ckpt.model;
    if data.vocab.len() != model.config().vocab_size {
        return Err(Failure::config(Error::Config(format!(
            "checkpoint vocabulary has {} entries but the data yields {}",
            model.config().vocab_size,
            data.vocab.len()
        ))));
    }
    let splits: Vec<(Split, &LabeledDataset)> = match args.split {
        Some(s) => {
            let d = split_of(&data, s)
                .ok_or_else(|| Failure::config(Error::Config(format!("the data has no {s} split"))))?;
            vec![(s, d)]
        }
        None => [Split::Train, Split::Dev, Split::Test]
            .into_iter()
            .filter_map(|s| split_of(&data, s).map(|d| (s, d)))
            .collect(),
    };
    println!("split,examples,loss,accuracy");
    for (s, d) in &splits {
        let r = evaluate(&model, d)?;
        println!("{s},{},{:.10},{:.6}", d.len(), r.loss, r.accuracy);
    }
    let (_, first) = splits[0];
    if let Some(path) = &args.dump_logits {
        save_tensor(path, &predict_logits(&model, first)?)?;
    }
    if let Some(path) = &args.dump_embeddings {
        let seqs: Vec<&TokenSequence> = first.sequences.iter().take(args.limit).collect();
        if seqs.is_empty() {
            return Err(Failure::config(Error::Config("--limit selects no examples".into())));
        }
        save_tensor(path, &model.embed(&seqs)?.values)?;
    }
    Ok(())
}

pub fn augment(cfg: &RunConfig, input: &Path, output: &Path, trace: &Path) -> CmdResult {
    let x0 = EmbeddingBatch::dense(load_tensor(input)?.tensor)?;
    let rng = RngStream::from_seed(cfg.train.seed).derive("augment", 0);
    let steps = rpn_trajectory(&x0, &cfg.train.rpn, &rng)?;
    let mut lines = String::new();
    for (t, s) in steps.iter().enumerate() {
        let record = json!({
            "step": t + 1,
            "mask_density": s.sampled.density(),
            "masked_cells": s.sampled.count(),
            "cells": s.sampled.values().len(),
            "permutation": s.perm.as_slice(),
        });
        writeln!(lines, "{record}").expect("writing to a String");
    }
    let last = steps.last().map_or(&x0, |s| &s.next);
    save_tensor(output, &last.values)?;
    fs::write(trace, lines).map_err(|e| Error::Io {
        path: trace.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

#[derive(Debug, Clone)]
struct GridCell {
    epsilon: f64,
    steps: usize,
    seed: u64,
    dev_loss: f64,
    dev_accuracy: f64,
}

fn dev_result(log: &MetricsLog) -> (f64, f64) {
    let r = log.last(Split::Dev).expect("dev split checked before training");
    (r.loss, r.accuracy)
}

/// Index of the best cell: highest dev accuracy, then smaller epsilon, then fewer steps.
fn best_cell(cells: &[GridCell]) -> Option<usize> {
    (0..cells.len()).min_by(|&a, &b| {
        let (x, y) = (&cells[a], &cells[b]);
        y.dev_accuracy
            .total_cmp(&x.dev_accuracy)
            .then(x.epsilon.total_cmp(&y.epsilon))
            .then(x.steps.cmp(&y.steps))
    })
}

pub fn grid(cfg: &RunConfig, out: &Path) -> CmdResult {
    let cfg = absolute_source(cfg)?;
    if cfg.grid.epsilon.is_empty() || cfg.grid.steps.is_empty() {
        return Err(Failure::config(Error::Config(
            "grid.epsilon and grid.steps must be non-empty".into(),
        )));
    }
    create_out(out)?;
    write_resolved(&cfg, out)?;
    let data = TrainData::from_source(&cfg.data, cfg.train.seed)?;
    if data.dev.as_ref().is_none_or(|d| d.is_empty()) {
        return Err(Failure::config(Error::Config(
            "grid search needs a non-empty dev split".into(),
        )));
    }
    let root = RngStream::from_seed(cfg.train.seed);
    let specs: Vec<RunConfig> = cfg
        .grid
        .epsilon
        .iter()
        .flat_map(|&e| cfg.grid.steps.iter().map(move |&k| (e, k)))
        .enumerate()
        .map(|(i, (e, k))| {
            let mut c = cfg.clone();
            c.train.mode = Mode::Rpn;
            c.train.rpn.epsilon = e;
            c.train.rpn.steps = k;
            c.train.seed = root.derive_seed("grid", i as u64);
            c.train.validate().map(|()| c)
        })
        .collect::<rpn_core::Result<_>>()
        .map_err(Failure::config)?;
    let mut base = cfg.clone();
    base.train.mode = Mode::Baseline;

    let run = |c: &RunConfig| -> rpn_core::Result<GridCell> {
        let (_, log) = run_one(c, &data)?;
        let (dev_loss, dev_accuracy) = dev_result(&log);
        Ok(GridCell {
            epsilon: c.train.rpn.epsilon,
            steps: c.train.rpn.steps,
            seed: c.train.seed,
            dev_loss,
            dev_accuracy,
        })
    };
    let cells: Vec<GridCell> = if cfg.grid.parallel {
        specs.par_iter().map(run).collect::<rpn_core::Result<_>>()?
    } else {
        specs.iter().map(run).collect::<rpn_core::Result<_>>()?
    };
    let baseline = run(&base)?.dev_accuracy;
    let best = best_cell(&cells);

    let mut csv = String::from("epsilon,steps,seed,dev_loss,dev_accuracy,best,baseline_dev_accuracy\n");
    for (i, c) in cells.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{:.10},{:.6},{},{:.6}",
            c.epsilon,
            c.steps,
            c.seed,
            c.dev_loss,
            c.dev_accuracy,
            u8::from(best == Some(i)),
            baseline
        );
    }
    let path = out.join("grid.csv");
    fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;

    let mut table = String::from("dev accuracy (rows: epsilon, columns: steps)\n");
    let _ = write!(table, "{:>8}", "eps\\K");
    for k in &cfg.grid.steps {
        let _ = write!(table, " {k:>8}");
    }
    table.push('\n');
    for (r, e) in cfg.grid.epsilon.iter().enumerate() {
        let _ = write!(table, "{e:>8}");
        for c in &cells[r * cfg.grid.steps.len()..(r + 1) * cfg.grid.steps.len()] {
            let _ = write!(table, " {:>8.4}", c.dev_accuracy);
        }
        table.push('\n');
    }
    let _ = writeln!(table, "baseline {baseline:.4}");
    if let Some(b) = best {
        let _ = writeln!(table, "best epsilon={} K={}", cells[b].epsilon, cells[b].steps);
    }
    std::io::stdout().write_all(table.as_bytes())?;
    Ok(())
}

pub fn bench(cfg: &RunConfig, out: &Path, methods: &[Method]) -> CmdResult {
    if methods.is_empty() {
        return Err(Failure::config(Error::Config("no methods selected".into())));
    }
    let setup = BenchSetup {
        embed_dim: cfg.model.embed_dim,
        copies: cfg.train.aug.copies,
        rpn: cfg.train.rpn.clone(),
        freelb: cfg.train.freelb.clone(),
        aeda_ratio: cfg.train.aug.aeda_ratio,
        eda_op: cfg.train.aug.eda_op,
        eda_strength: cfg.train.aug.eda_strength,
        seed: cfg.train.seed,
        ..BenchSetup::default()
    };
    create_out(out)?;
    let mut csv = String::from(rpn_core::throughput::CSV_HEADER);
    csv.push('\n');
    for &m in methods {
        let report = bench_augment_with(m, &cfg.bench.sizes, cfg.bench.trials, &setup)?;
        print!("{}", report.summary());
        csv.push_str(&report.csv_rows());
    }
    let path = out.join("bench.csv");
    fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}
