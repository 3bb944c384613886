//! Shared inputs for the criterion benches in `benches/`.

use rpn_core::data::{synth_dataset, LabeledDataset, TokenSequence};
use rpn_core::{DenseTensor, EmbeddingBatch, RngStream, TextCnn, TextCnnConfig};

/// A dense `batch × seq × dim` embedding batch with uniform values.
pub fn embedding_batch(batch: usize, seq: usize, dim: usize, seed: u64) -> EmbeddingBatch {
    let values =
        DenseTensor::uniform(&[batch, seq, dim], -1.0, 1.0, &mut RngStream::from_seed(seed)).expect("positive extents");
    EmbeddingBatch::dense(values).expect("rank-3 tensor")
}

/// Whitespace tokens of a synthetic sentence of `len` words.
pub fn sentence(len: usize) -> Vec<String> {
    (0..len).map(|i| format!("w{}", i % 97)).collect()
}

pub fn model_config(embed_dim: usize, max_len: usize) -> TextCnnConfig {
    TextCnnConfig {
        vocab_size: 500,
        embed_dim,
        kernel_sizes: vec![3, 4, 5],
        filters: 32,
        num_classes: 2,
        dropout: 0.1,
        max_len,
    }
}

pub fn model(embed_dim: usize, max_len: usize) -> TextCnn {
    TextCnn::new(model_config(embed_dim, max_len), &mut RngStream::from_seed(1)).expect("valid config")
}

/// `n` synthetic examples over the model's 500-token vocabulary.
pub fn dataset(n: usize, max_len: usize) -> LabeledDataset {
    synth_dataset(n, 500, max_len, 2, &RngStream::from_seed(2)).expect("feasible spec")
}

pub fn batch_refs(data: &LabeledDataset, size: usize) -> Vec<&TokenSequence> {
    data.sequences.iter().take(size).collect()
}
