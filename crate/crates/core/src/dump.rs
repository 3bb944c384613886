//! Binary tensor dumps and model checkpoints.
//!
//! Tensor dump, all integers little-endian:
//!
//! ```text
//! b"RPNTENSR"  u32 version  u64 unix-seconds  u32 rank  rank × u64 dims  f64 data (row-major)
//! ```
//!
//! Checkpoint:
//!
//! ```text
//! b"RPNCKPT\0"  u32 version
//! u64 len + model config text      (key=value lines)
//! u64 len + run config text
//! u32 count, then per tensor: u32 len + name, u32 rank, rank × u64 dims, f64 data
//! ```

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::kv::{render, KvFile};
use crate::model::{TextCnn, TextCnnConfig, TextCnnParams};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"RPNTENSR";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RPNCKPT\0";
pub const VERSION: u32 = 1;
/// Byte range of the timestamp inside a tensor dump.
pub const TIMESTAMP_RANGE: std::ops::Range<usize> = 12..20;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorDump {
    pub timestamp: u64,
    pub tensor: DenseTensor,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn put_tensor_body(out: &mut Vec<u8>, t: &DenseTensor) {
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &DenseTensor, timestamp: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * (t.rank() + t.len()));
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&timestamp.to_le_bytes());
    put_tensor_body(&mut out, t);
    out
}

/// The dump without its timestamp, for content comparison.
pub fn payload(bytes: &[u8]) -> Vec<u8> {
    if bytes.len() < TIMESTAMP_RANGE.end {
        return bytes.to_vec();
    }
    let mut out = bytes[..TIMESTAMP_RANGE.start].to_vec();
    out.extend_from_slice(&bytes[TIMESTAMP_RANGE.end..]);
    out
}

/// Cursor that reports failures with their byte offset.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Dump {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos.saturating_add(n)) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, want: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != want {
            self.pos -= 8;
            return self.fail(format!("bad magic {:?}", String::from_utf8_lossy(got)));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != VERSION {
            self.pos = at;
            return self.fail(format!("unsupported version {v}"));
        }
        Ok(())
    }

    fn text(&mut self, len: usize, what: &str) -> Result<String> {
        let at = self.pos;
        let raw = self.take(len, what)?;
        match std::str::from_utf8(raw) {
            Ok(s) => Ok(s.to_string()),
            Err(e) => {
                self.pos = at + e.valid_up_to();
                self.fail(format!("{what} is not UTF-8"))
            }
        }
    }

    fn tensor(&mut self) -> Result<DenseTensor> {
        let at = self.pos;
        let rank = self.u32("rank")? as usize;
        if !(1..=3).contains(&rank) {
            self.pos = at;
            return self.fail(format!("rank {rank} outside 1..=3"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u64("dimension")?;
            if d == 0 || d > (1 << 32) {
                self.pos = at;
                return self.fail(format!("dimension {d} out of range"));
            }
            shape.push(d as usize);
        }
        let count: usize = shape.iter().product();
        let at = self.pos;
        let raw = self.take(count.saturating_mul(8), "tensor data")?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            self.pos = at + 8 * i;
            return self.fail("non-finite tensor entry");
        }
        DenseTensor::new(&shape, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<TensorDump> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(TENSOR_MAGIC)?;
    let timestamp = r.u64("timestamp")?;
    let tensor = r.tensor()?;
    r.finish()?;
    Ok(TensorDump { timestamp, tensor })
}

pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    std::fs::write(path, encode_tensor(t, now())).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<TensorDump> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

fn model_config_text(c: &TextCnnConfig) -> String {
    let kernels = c
        .kernel_sizes
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",");
    render([
        ("vocab_size", c.vocab_size.to_string()),
        ("embed_dim", c.embed_dim.to_string()),
        ("kernel_sizes", kernels),
        ("filters", c.filters.to_string()),
        ("num_classes", c.num_classes.to_string()),
        ("dropout", c.dropout.to_string()),
        ("max_len", c.max_len.to_string()),
    ])
}

fn parse_model_config(text: &str) -> Result<TextCnnConfig> {
    let mut kv = KvFile::parse(text, None)?;
    let c = TextCnnConfig {
        vocab_size: kv.require("vocab_size")?,
        embed_dim: kv.require("embed_dim")?,
        kernel_sizes: kv
            .get_list("kernel_sizes")?
            .ok_or_else(|| Error::config("checkpoint model config lacks kernel_sizes"))?,
        filters: kv.require("filters")?,
        num_classes: kv.require("num_classes")?,
        dropout: kv.require("dropout")?,
        max_len: kv.require("max_len")?,
    };
    kv.reject_unused()?;
    Ok(c)
}

/// A model plus the run configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TextCnn,
    pub run_config: String,
}

pub fn encode_checkpoint(model: &TextCnn, run_config: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for text in [model_config_text(model.config()), run_config.to_string()] {
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
    }
    let tensors = model.params().tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_tensor_body(&mut out, t);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    r.magic(CHECKPOINT_MAGIC)?;
    let n = r.u64("model config length")? as usize;
    let at = r.pos;
    let model_text = r.text(n, "model config")?;
    let config = parse_model_config(&model_text).or_else(|e| {
        r.pos = at;
        r.fail(format!("model config: {e}"))
    })?;
    let n = r.u64("run config length")? as usize;
    let run_config = r.text(n, "run config")?;
    let count = r.u32("tensor count")? as usize;
    let mut named = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = r.text(len, "tensor name")?;
        let t = r.tensor()?;
        named.push((name, t));
    }
    r.finish()?;
    let params = params_from_named(named, config.kernel_sizes.len()).map_err(|m| Error::Dump {
        path: PathBuf::from(path),
        offset: bytes.len() as u64,
        message: m,
    })?;
    Ok(Checkpoint {
        model: TextCnn::from_params(config, params)?,
        run_config,
    })
}

fn params_from_named(named: Vec<(String, DenseTensor)>, branches: usize) -> std::result::Result<TextCnnParams, String> {
    let mut it = named.into_iter();
    let mut next = |want: String| -> std::result::Result<DenseTensor, String> {
        match it.next() {
            Some((name, t)) if name == want => Ok(t),
            Some((name, _)) => Err(format!("expected tensor {want:?}, found {name:?}")),
            None => Err(format!("missing tensor {want:?}")),
        }
    };
    let embedding = next("embedding".into())?;
    let mut conv_weight = Vec::with_capacity(branches);
    let mut conv_bias = Vec::with_capacity(branches);
    for i in 0..branches {
        conv_weight.push(next(format!("conv{i}.weight"))?);
        conv_bias.push(next(format!("conv{i}.bias"))?);
    }
    let head_weight = next("head.weight".into())?;
    let head_bias = next("head.bias".into())?;
    if let Some((name, _)) = it.next() {
        return Err(format!("unexpected tensor {name:?}"));
    }
    Ok(TextCnnParams {
        embedding,
        conv_weight,
        conv_bias,
        head_weight,
        head_bias,
    })
}

pub fn save_checkpoint(path: &Path, model: &TextCnn, run_config: &str) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, run_config)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    fn offset(e: Error) -> u64 {
        match e {
            Error::Dump { offset, .. } => offset,
            other => panic!("expected a dump error, got {other}"),
        }
    }

    #[test]
    fn layout_is_fixed() {
        let t = DenseTensor::new(&[2], vec![1.0, -2.5]).unwrap();
        let bytes = encode_tensor(&t, 7);
        assert_eq!(&bytes[..8], b"RPNTENSR");
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &7u64.to_le_bytes());
        assert_eq!(&bytes[20..24], &1u32.to_le_bytes());
        assert_eq!(&bytes[24..32], &2u64.to_le_bytes());
        assert_eq!(&bytes[32..40], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 48);
    }

    #[test]
    fn payload_ignores_timestamp() {
        let t = DenseTensor::filled(&[2, 2], 0.5).unwrap();
        assert_eq!(payload(&encode_tensor(&t, 1)), payload(&encode_tensor(&t, 99)));
        assert_ne!(encode_tensor(&t, 1), encode_tensor(&t, 99));
    }

    #[test]
    fn malformed_dumps_report_offsets() {
        let t = DenseTensor::filled(&[2, 3], 1.0).unwrap();
        let good = encode_tensor(&t, 0);
        assert_eq!(offset(decode_tensor(b"RPNTENSX", p()).unwrap_err()), 0);
        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert_eq!(offset(decode_tensor(&bad_version, p()).unwrap_err()), 8);
        let mut bad_rank = good.clone();
        bad_rank[20] = 7;
        assert_eq!(offset(decode_tensor(&bad_rank, p()).unwrap_err()), 20);
        assert_eq!(offset(decode_tensor(&good[..good.len() - 3], p()).unwrap_err()), 40);
        let mut nan = good.clone();
        nan[48..56].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(offset(decode_tensor(&nan, p()).unwrap_err()), 48);
        let mut trailing = good;
        trailing.push(0);
        assert_eq!(offset(decode_tensor(&trailing, p()).unwrap_err()), 88);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let model = TextCnn::new(
            TextCnnConfig {
                vocab_size: 30,
                embed_dim: 5,
                kernel_sizes: vec![2, 3],
                filters: 4,
                max_len: 8,
                ..TextCnnConfig::default()
            },
            &mut RngStream::from_seed(3),
        )
        .unwrap();
        let bytes = encode_checkpoint(&model, "seed=3\nmode=rpn\n");
        let back = decode_checkpoint(&bytes, p()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.run_config, "seed=3\nmode=rpn\n");
        assert_eq!(encode_checkpoint(&back.model, &back.run_config), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &model, "").unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().model, model);
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() / 2], p()),
            Err(Error::Dump { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_tensor(Path::new("/nonexistent/x.bin")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn tensor_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>(), ts in any::<u64>()) {
            let t = DenseTensor::uniform(&[rows, cols], -1e3, 1e3, &mut RngStream::from_seed(seed)).unwrap();
            let back = decode_tensor(&encode_tensor(&t, ts), p()).unwrap();
            prop_assert_eq!(back.timestamp, ts);
            prop_assert_eq!(back.tensor, t);
        }
    }
}
