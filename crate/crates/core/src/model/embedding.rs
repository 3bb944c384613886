//! Word embedding lookup and its gradient.

use crate::data::{TokenSequence, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::DenseTensor;

/// Output of the embedding layer for one mini-batch: a `batch × seq × dim`
/// tensor plus the bookkeeping needed downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub values: DenseTensor,
    /// Number of real (non-padding) positions per sample.
    pub lengths: Vec<usize>,
    /// Per-sample identity used to key random streams.
    pub sample_ids: Vec<u64>,
}

impl EmbeddingBatch {
    pub fn new(values: DenseTensor, lengths: Vec<usize>, sample_ids: Vec<u64>) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::Shape {
                shape: values.shape().to_vec(),
                reason: "embedding batch must be batch x seq x dim".into(),
            });
        }
        let (b, n) = (values.shape()[0], values.shape()[1]);
        if lengths.len() != b || sample_ids.len() != b {
            return Err(Error::Contract(format!(
                "batch of {b} samples with {} lengths and {} ids",
                lengths.len(),
                sample_ids.len()
            )));
        }
        if let Some(&l) = lengths.iter().find(|&&l| l > n) {
            return Err(Error::Contract(format!("length {l} exceeds sequence extent {n}")));
        }
        Ok(Self {
            values,
            lengths,
            sample_ids,
        })
    }

    /// A batch with every position real; used for raw tensor dumps.
    pub fn dense(values: DenseTensor) -> Result<Self> {
        let (b, n) = (values.shape().first().copied(), values.shape().get(1).copied());
        let (b, n) = (b.unwrap_or(0), n.unwrap_or(0));
        Self::new(values, vec![n; b], (0..b as u64).collect())
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }

    /// Same bookkeeping, new values of identical shape.
    pub fn with_values(&self, values: DenseTensor) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::Dimension {
                op: "EmbeddingBatch::with_values",
                left: self.values.shape().to_vec(),
                right: values.shape().to_vec(),
            });
        }
        Ok(Self {
            values,
            lengths: self.lengths.clone(),
            sample_ids: self.sample_ids.clone(),
        })
    }

    /// Whether flat row `r` (over `batch * seq`) is a padding position.
    pub fn is_padding_row(&self, r: usize) -> bool {
        let n = self.seq_len();
        r % n >= self.lengths[r / n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayer {
    weights: DenseTensor,
}

impl EmbeddingLayer {
    /// Weights drawn from `U(-0.1, 0.1)`; the padding row is zero.
    pub fn init(vocab_size: usize, embed_dim: usize, rng: &mut RngStream) -> Result<Self> {
        let mut weights = DenseTensor::uniform(&[vocab_size, embed_dim], -0.1, 0.1, rng)?;
        weights.data_mut()[..embed_dim].fill(0.0);
        Ok(Self { weights })
    }

    pub fn from_weights(weights: DenseTensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(Error::Shape {
                shape: weights.shape().to_vec(),
                reason: "embedding weights must be vocab x dim".into(),
            });
        }
        if weights.row(PAD_ID).iter().any(|&v| v != 0.0) {
            return Err(Error::Contract("padding embedding row must be zero".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &DenseTensor {
        &self.weights
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    /// Row lookup of every token, right-padded with zero rows to `seq_len`.
    pub fn embed(&self, batch: &[&TokenSequence], seq_len: usize) -> Result<EmbeddingBatch> {
        embed(&self.weights, batch, seq_len)
    }

    /// Scatter-adds `factor * d_x` into `grad` at the rows of the looked-up
    /// tokens. Padding positions and the padding row receive nothing.
    pub fn accumulate_grad(
        grad: &mut DenseTensor,
        batch: &[&TokenSequence],
        d_x: &DenseTensor,
        factor: f64,
    ) -> Result<()> {
        let (seq_len, d) = (d_x.shape()[1], d_x.shape()[2]);
        let g = grad.data_mut();
        for (b, seq) in batch.iter().enumerate() {
            let len = seq.token_ids.len().min(seq_len);
            for (i, &tok) in seq.token_ids[..len].iter().enumerate() {
                if tok == PAD_ID {
                    continue;
                }
                let src = d_x.row(b * seq_len + i);
                for (gv, &s) in g[tok * d..(tok + 1) * d].iter_mut().zip(src) {
                    *gv += factor * s;
                }
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding gradient".into()));
        }
        Ok(())
    }
}

/// Looks up `weights` rows for every token of the batch, right-padding with
/// zero rows to `seq_len`.
pub fn embed(weights: &DenseTensor, batch: &[&TokenSequence], seq_len: usize) -> Result<EmbeddingBatch> {
    if batch.is_empty() {
        return Err(Error::Contract("cannot embed an empty batch".into()));
    }
    let d = weights.shape()[1];
    let vocab = weights.shape()[0];
    let mut data = vec![0.0; batch.len() * seq_len * d];
    let mut lengths = Vec::with_capacity(batch.len());
    for (b, seq) in batch.iter().enumerate() {
        let len = seq.token_ids.len().min(seq_len);
        for (i, &tok) in seq.token_ids[..len].iter().enumerate() {
            if tok >= vocab {
                return Err(Error::Index {
                    what: "embedding row",
                    index: tok,
                    size: vocab,
                });
            }
            let at = (b * seq_len + i) * d;
            data[at..at + d].copy_from_slice(weights.row(tok));
        }
        lengths.push(len);
    }
    EmbeddingBatch::new(
        DenseTensor::new(&[batch.len(), seq_len, d], data)?,
        lengths,
        batch.iter().map(|s| s.id).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::matmul;

    fn seq(id: u64, ids: &[usize]) -> TokenSequence {
        TokenSequence {
            id,
            token_ids: ids.to_vec(),
            label: 0,
            raw_text: String::new(),
        }
    }

    #[test]
    fn lookup_returns_rows() {
        let layer = EmbeddingLayer::init(6, 4, &mut RngStream::from_seed(1)).unwrap();
        let s = seq(0, &[3]);
        let x = layer.embed(&[&s], 1).unwrap();
        assert_eq!(x.values.data(), layer.weights().row(3));
        assert!(layer.weights().row(PAD_ID).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_padding_is_zero() {
        let layer = EmbeddingLayer::init(6, 4, &mut RngStream::from_seed(1)).unwrap();
        let s = seq(0, &[]);
        let x = layer.embed(&[&s], 5).unwrap();
        assert!(x.values.is_all_zero());
        assert_eq!(x.lengths, vec![0]);
    }

    #[test]
    fn out_of_range_id() {
        let layer = EmbeddingLayer::init(6, 4, &mut RngStream::from_seed(1)).unwrap();
        let s = seq(0, &[6]);
        assert!(matches!(layer.embed(&[&s], 3), Err(Error::Index { .. })));
    }

    /// The lookup equals the literal one-hot product Z V.
    #[test]
    fn lookup_equals_one_hot_product() {
        let (vocab, dim, n) = (9, 5, 6);
        let layer = EmbeddingLayer::init(vocab, dim, &mut RngStream::from_seed(4)).unwrap();
        let s = seq(0, &[4, 2, 8, 1]);
        let x = layer.embed(&[&s], n).unwrap();
        let mut z = vec![0.0; n * vocab];
        for (i, &t) in s.token_ids.iter().enumerate() {
            z[i * vocab + t] = 1.0;
        }
        // padding positions are one-hot on the zero padding row
        for i in s.token_ids.len()..n {
            z[i * vocab + PAD_ID] = 1.0;
        }
        let z = DenseTensor::new(&[n, vocab], z).unwrap();
        let zv = matmul(&z, layer.weights()).unwrap();
        assert_eq!(zv.data(), x.values.data());
    }

    #[test]
    fn scatter_skips_padding() {
        let mut grad = DenseTensor::zeros(&[4, 2]).unwrap();
        let s = seq(0, &[2, 2]);
        let d_x = DenseTensor::new(&[1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 9.0, 9.0]).unwrap();
        EmbeddingLayer::accumulate_grad(&mut grad, &[&s], &d_x, 0.5).unwrap();
        assert_eq!(grad.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0]);
    }
}
