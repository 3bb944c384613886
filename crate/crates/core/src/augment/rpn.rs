//! Random position noise.
//!
//! One step samples a Bernoulli(ε) position mask `P` over every
//! (word, dimension) cell, extracts `δ = X ∘ P`, applies one row permutation
//! `π` to both `δ` and `P`, and writes the shuffled values back:
//!
//! ```text
//! X' = X − X ∘ P′ + δ′      with δ′ = π(δ), P′ = π(P)
//! ```
//!
//! so a cell selected by `P′` in row `i` receives the same-dimension value of
//! row `π(i)`, and every other cell keeps its value.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::EmbeddingBatch;
use crate::rng::RngStream;
use crate::tensor::{bernoulli_mask, hadamard, permute_rows, DenseTensor, Permutation};

/// Which rows a step's permutation may exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShuffleScope {
    /// Rows move only within their own sentence.
    #[default]
    PerSample,
    /// Rows move across the whole flattened `batch × seq` axis.
    CrossBatch,
}

/// How the shuffled values are written back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RpnVariant {
    /// Select `δ′` where `P′` is set, keep `X` elsewhere.
    #[default]
    Shuffled,
    /// `X − P′ ∘ X + X ∘ P` evaluated literally, with the unshuffled `X ∘ P`
    /// added back. Kept only for comparison; it does not move values
    /// between words.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpnConfig {
    /// Per-cell probability that a mask entry is set.
    pub epsilon: f64,
    /// Number of virtual samples generated after the original.
    pub steps: usize,
    pub shuffle_scope: ShuffleScope,
    pub variant: RpnVariant,
    /// Keep padding rows out of the permutation.
    pub mask_padding: bool,
}

impl Default for RpnConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.3,
            steps: 3,
            shuffle_scope: ShuffleScope::PerSample,
            variant: RpnVariant::Shuffled,
            mask_padding: false,
        }
    }
}

impl RpnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("rpn.epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// A `batch × seq × dim` tensor of zeros and ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMask(DenseTensor);

impl PositionMask {
    pub fn new(values: DenseTensor) -> Result<Self> {
        if values.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("position mask entries must be 0 or 1".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DenseTensor {
        &self.0
    }

    pub fn is_set(&self, flat: usize) -> bool {
        self.0.data()[flat] == 1.0
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn density(&self) -> f64 {
        self.count() as f64 / self.0.len() as f64
    }
}

/// Result of one noise step.
#[derive(Debug, Clone)]
pub struct RpnStep {
    pub next: EmbeddingBatch,
    /// The sampled mask `P`.
    pub sampled: PositionMask,
    /// The shuffled mask `P′`; its set cells are exactly the cells that
    /// received a value from another row.
    pub mask: PositionMask,
    /// Permutation over flattened `batch × seq` rows: row `i` of `δ′` is row
    /// `perm(i)` of `δ`.
    pub perm: Permutation,
}

fn step_permutation(x: &EmbeddingBatch, cfg: &RpnConfig, rng: &RngStream) -> Permutation {
    let (b, n) = (x.batch_size(), x.seq_len());
    let movable = |s: usize| if cfg.mask_padding { x.lengths[s] } else { n };
    let mut images: Vec<usize> = (0..b * n).collect();
    match cfg.shuffle_scope {
        ShuffleScope::PerSample => {
            for (s, &id) in x.sample_ids.iter().enumerate() {
                let mut r = rng.derive("rpn-perm", id);
                r.shuffle(&mut images[s * n..s * n + movable(s)]);
            }
        }
        ShuffleScope::CrossBatch => {
            let mut rows: Vec<usize> = (0..b)
                .flat_map(|s| (s * n..s * n + movable(s)).collect::<Vec<_>>())
                .collect();
            let slots = rows.clone();
            rng.derive("rpn-perm-batch", 0).shuffle(&mut rows);
            for (slot, src) in slots.into_iter().zip(rows) {
                images[slot] = src;
            }
        }
    }
    Permutation::new(images).expect("shuffled identity is a bijection")
}

fn step_mask(x: &EmbeddingBatch, epsilon: f64, rng: &RngStream) -> Result<DenseTensor> {
    let (n, d) = (x.seq_len(), x.dim());
    let mut data = Vec::with_capacity(x.values.len());
    for &id in &x.sample_ids {
        let m = bernoulli_mask(&[n, d], epsilon, &mut rng.derive("rpn-mask", id))?;
        data.extend_from_slice(m.data());
    }
    DenseTensor::new(x.values.shape(), data)
}

/// One noise step. The mask of each sample and, for per-sample scope, its
/// permutation come from streams keyed by the sample id, so the result does
/// not depend on where the sample sits in the batch.
///
/// Takes no model and no gradient: producing a virtual sample is pure
/// tensor manipulation.
pub fn rpn_step(x: &EmbeddingBatch, cfg: &RpnConfig, rng: &RngStream) -> Result<RpnStep> {
    cfg.validate()?;
    let p = step_mask(x, cfg.epsilon, rng)?;
    let perm = step_permutation(x, cfg, rng);
    let delta = hadamard(&x.values, &p)?;
    let p_shuffled = permute_rows(&p, &perm)?;
    let values = match cfg.variant {
        RpnVariant::Shuffled => {
            let delta_shuffled = permute_rows(&delta, &perm)?;
            // X − X∘P′ + δ′, evaluated cell by cell so untouched cells keep
            // their exact bits.
            let data = x
                .values
                .data()
                .iter()
                .zip(p_shuffled.data())
                .zip(delta_shuffled.data())
                .map(|((&xv, &pv), &dv)| if pv == 1.0 { dv } else { xv })
                .collect();
            DenseTensor::new(x.values.shape(), data)?
        }
        RpnVariant::Literal => x.values.sub(&hadamard(&p_shuffled, &x.values)?)?.add(&delta)?,
    };
    Ok(RpnStep {
        next: x.with_values(values)?,
        sampled: PositionMask(p),
        mask: PositionMask(p_shuffled),
        perm,
    })
}

/// Stream used for step `t` (1-based) of a chain rooted at `rng`.
pub fn step_stream(rng: &RngStream, t: usize) -> RngStream {
    rng.derive("rpn-step", t as u64)
}

/// `K` chained steps `X_1 … X_K`, each applied to the previous output.
pub fn rpn_trajectory(x0: &EmbeddingBatch, cfg: &RpnConfig, rng: &RngStream) -> Result<Vec<RpnStep>> {
    cfg.validate()?;
    let mut steps: Vec<RpnStep> = Vec::with_capacity(cfg.steps);
    for t in 1..=cfg.steps {
        let prev = steps.last().map_or(x0, |s| &s.next);
        let step = rpn_step(prev, cfg, &step_stream(rng, t))?;
        steps.push(step);
    }
    Ok(steps)
}

pub fn rpn_augment(x0: &EmbeddingBatch, cfg: &RpnConfig, rng: &RngStream) -> Result<Vec<EmbeddingBatch>> {
    Ok(rpn_trajectory(x0, cfg, rng)?.into_iter().map(|s| s.next).collect())
}

impl fmt::Display for ShuffleScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleScope::PerSample => "per_sample",
            ShuffleScope::CrossBatch => "cross_batch",
        })
    }
}

impl FromStr for ShuffleScope {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per_sample" => Ok(ShuffleScope::PerSample),
            "cross_batch" => Ok(ShuffleScope::CrossBatch),
            other => Err(format!("expected per_sample or cross_batch, got {other:?}")),
        }
    }
}

impl fmt::Display for RpnVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RpnVariant::Shuffled => "shuffled",
            RpnVariant::Literal => "literal",
        })
    }
}

impl FromStr for RpnVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "shuffled" => Ok(RpnVariant::Shuffled),
            "literal" => Ok(RpnVariant::Literal),
            other => Err(format!("expected shuffled or literal, got {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(b: usize, n: usize, d: usize, seed: u64) -> EmbeddingBatch {
        let values = DenseTensor::uniform(&[b, n, d], -1.0, 1.0, &mut RngStream::from_seed(seed)).unwrap();
        EmbeddingBatch::dense(values).unwrap()
    }

    fn cfg(epsilon: f64) -> RpnConfig {
        RpnConfig {
            epsilon,
            ..RpnConfig::default()
        }
    }

    /// Direct statement of the step contract, checked cell by cell.
    fn assert_contract(x: &EmbeddingBatch, step: &RpnStep) {
        let d = x.dim();
        for (e, &v) in step.next.values.data().iter().enumerate() {
            let (row, col) = (e / d, e % d);
            let expected = if step.mask.is_set(e) {
                x.values.data()[step.perm.get(row) * d + col]
            } else {
                x.values.data()[e]
            };
            assert_eq!(v.to_bits(), expected.to_bits(), "cell {e}");
        }
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let x = batch(3, 5, 4, 1);
        let s = rpn_step(&x, &cfg(0.0), &RngStream::from_seed(2)).unwrap();
        assert_eq!(s.next.values, x.values);
        assert_eq!(s.mask.count(), 0);
    }

    #[test]
    fn full_mask_is_row_permutation() {
        let x = batch(2, 6, 3, 3);
        let s = rpn_step(&x, &cfg(1.0), &RngStream::from_seed(4)).unwrap();
        assert_eq!(s.next.values, permute_rows(&x.values, &s.perm).unwrap());
    }

    #[test]
    fn contract_holds() {
        for &eps in &[0.1, 0.3, 0.5, 0.9] {
            let x = batch(4, 7, 5, 5);
            let s = rpn_step(&x, &cfg(eps), &RngStream::from_seed(6)).unwrap();
            assert_contract(&x, &s);
            assert_eq!(s.mask.count(), s.sampled.count());
        }
    }

    #[test]
    fn per_sample_scope_keeps_rows_in_their_sentence() {
        let x = batch(4, 6, 2, 7);
        let s = rpn_step(&x, &cfg(0.5), &RngStream::from_seed(8)).unwrap();
        for r in 0..24 {
            assert_eq!(s.perm.get(r) / 6, r / 6);
        }
        let c = RpnConfig {
            shuffle_scope: ShuffleScope::CrossBatch,
            ..cfg(0.5)
        };
        let s = rpn_step(&x, &c, &RngStream::from_seed(8)).unwrap();
        assert!((0..24).any(|r| s.perm.get(r) / 6 != r / 6));
        assert_contract(&x, &s);
    }

    #[test]
    fn mask_padding_pins_padding_rows() {
        let values = DenseTensor::uniform(&[2, 5, 3], -1.0, 1.0, &mut RngStream::from_seed(9)).unwrap();
        let x = EmbeddingBatch::new(values, vec![2, 4], vec![10, 11]).unwrap();
        for scope in [ShuffleScope::PerSample, ShuffleScope::CrossBatch] {
            let c = RpnConfig {
                mask_padding: true,
                shuffle_scope: scope,
                ..cfg(1.0)
            };
            let s = rpn_step(&x, &c, &RngStream::from_seed(1)).unwrap();
            for r in 0..10 {
                if x.is_padding_row(r) {
                    assert_eq!(s.perm.get(r), r);
                } else {
                    assert!(!x.is_padding_row(s.perm.get(r)));
                }
            }
        }
    }

    /// The scenario of a three-word sentence where the first and third word
    /// exchange their third dimension.
    #[test]
    fn three_word_example() {
        let x = DenseTensor::new(&[1, 3, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]).unwrap();
        let p = DenseTensor::new(&[1, 3, 3], vec![0., 0., 1., 0., 0., 0., 0., 0., 1.]).unwrap();
        let perm = Permutation::new(vec![2, 1, 0]).unwrap();
        let delta = hadamard(&x, &p).unwrap();
        let delta_s = permute_rows(&delta, &perm).unwrap();
        let p_s = permute_rows(&p, &perm).unwrap();
        let next = x.sub(&hadamard(&x, &p_s).unwrap()).unwrap().add(&delta_s).unwrap();
        assert_eq!(next.data(), &[0.1, 0.2, 0.9, 0.4, 0.5, 0.6, 0.7, 0.8, 0.3]);
    }

    #[test]
    fn literal_variant_differs_from_shuffled() {
        let x = batch(1, 4, 4, 12);
        let lit = RpnConfig {
            variant: RpnVariant::Literal,
            ..cfg(0.5)
        };
        let a = rpn_step(&x, &lit, &RngStream::from_seed(3)).unwrap();
        let b = rpn_step(&x, &cfg(0.5), &RngStream::from_seed(3)).unwrap();
        assert_eq!(a.perm, b.perm);
        assert_ne!(a.next.values, b.next.values);
        // cells masked in P but not in P′ are doubled by the literal form
        let d = x.dim();
        for e in 0..x.values.len() {
            let (set, set_s) = (a.sampled.is_set(e), a.mask.is_set(e));
            let xv = x.values.data()[e];
            let got = a.next.values.data()[e];
            let want = match (set_s, set) {
                (true, true) | (false, false) => xv,
                (true, false) => 0.0,
                (false, true) => 2.0 * xv,
            };
            assert!((got - want).abs() <= 1e-15, "cell {e} row {}", e / d);
        }
    }

    #[test]
    fn chaining_and_counts() {
        let x = batch(2, 4, 3, 13);
        assert!(
            rpn_augment(&x, &RpnConfig { steps: 0, ..cfg(0.3) }, &RngStream::from_seed(1))
                .unwrap()
                .is_empty()
        );
        let out = rpn_augment(&x, &RpnConfig { steps: 3, ..cfg(0.0) }, &RngStream::from_seed(1)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.values == x.values));
        let traj = rpn_trajectory(&x, &RpnConfig { steps: 4, ..cfg(0.4) }, &RngStream::from_seed(2)).unwrap();
        let mut prev = &x;
        for s in &traj {
            assert_contract(prev, s);
            prev = &s.next;
        }
    }

    #[test]
    fn batch_position_does_not_matter() {
        let a = batch(1, 5, 3, 20);
        let b = batch(1, 5, 3, 21);
        let mut ab = a.values.data().to_vec();
        ab.extend_from_slice(b.values.data());
        let mut ba = b.values.data().to_vec();
        ba.extend_from_slice(a.values.data());
        let xab = EmbeddingBatch::new(DenseTensor::new(&[2, 5, 3], ab).unwrap(), vec![5, 5], vec![0, 1]).unwrap();
        let xba = EmbeddingBatch::new(DenseTensor::new(&[2, 5, 3], ba).unwrap(), vec![5, 5], vec![1, 0]).unwrap();
        let rng = RngStream::from_seed(22);
        let sab = rpn_step(&xab, &cfg(0.5), &rng).unwrap();
        let sba = rpn_step(&xba, &cfg(0.5), &rng).unwrap();
        assert_eq!(&sab.next.values.data()[..15], &sba.next.values.data()[15..]);
        assert_eq!(&sab.next.values.data()[15..], &sba.next.values.data()[..15]);
    }

    #[test]
    fn invalid_epsilon() {
        let x = batch(1, 2, 2, 1);
        assert!(matches!(
            rpn_step(&x, &cfg(1.2), &RngStream::from_seed(1)),
            Err(Error::Config(_))
        ));
    }
}
