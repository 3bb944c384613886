//! Offline dataset expansion for the token-level baselines.

use crate::augment::{aeda, eda_lite, EdaOp};
use crate::data::{LabeledDataset, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::train::{Mode, TokenAugConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenAugment {
    Aeda { ratio: f64 },
    EdaLite { op: EdaOp, strength: f64 },
}

impl TokenAugment {
    pub fn from_config(mode: Mode, cfg: &TokenAugConfig) -> Result<Self> {
        match mode {
            Mode::Aeda => Ok(TokenAugment::Aeda { ratio: cfg.aeda_ratio }),
            Mode::EdaLite => Ok(TokenAugment::EdaLite {
                op: cfg.eda_op,
                strength: cfg.eda_strength,
            }),
            other => Err(Error::config(format!("mode {other} has no token-level augmentation"))),
        }
    }

    pub fn apply(&self, tokens: &[String], rng: &mut RngStream) -> Result<Vec<String>> {
        match *self {
            TokenAugment::Aeda { ratio } => aeda(tokens, ratio, rng),
            TokenAugment::EdaLite { op, strength } => eda_lite(tokens, op, strength, rng),
        }
    }
}

/// The original examples followed by `copies` augmented versions of each.
/// Copy `c` of example `i` gets id `base + (c - 1) * len + i`, where `base`
/// is one past the largest original id, and a random stream keyed by the
/// original id and `c`.
pub fn expand_dataset(
    data: &LabeledDataset,
    vocab: &Vocabulary,
    how: &TokenAugment,
    copies: usize,
    rng: &RngStream,
) -> Result<LabeledDataset> {
    let n = data.len();
    let base = data.sequences.iter().map(|s| s.id + 1).max().unwrap_or(0);
    let mut sequences = data.sequences.clone();
    sequences.reserve(n * copies);
    for c in 1..=copies {
        for (i, s) in data.sequences.iter().enumerate() {
            let mut r = rng.derive("copy", c as u64).derive("sample", s.id);
            let tokens = how.apply(&vocab.decode(&s.token_ids), &mut r)?;
            let mut ids = vocab.encode(&tokens);
            ids.truncate(data.max_len);
            sequences.push(TokenSequence {
                id: base + ((c - 1) * n + i) as u64,
                token_ids: ids,
                label: s.label,
                raw_text: tokens.join(" "),
            });
        }
    }
    LabeledDataset::new(sequences, data.num_classes, data.split, data.max_len, vocab.len())
}
