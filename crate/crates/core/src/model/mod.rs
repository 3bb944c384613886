//! Embedding layer, TextCNN classifier and optimizer.

mod embedding;
mod sgd;
mod textcnn;

pub use embedding::{embed, EmbeddingBatch, EmbeddingLayer};
pub use sgd::Sgd;
pub use textcnn::{
    argmax_rows, pooled_windows, ForwardCache, ForwardOutput, GradientSet, TextCnn, TextCnnConfig, TextCnnParams,
};
