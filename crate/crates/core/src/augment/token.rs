//! Token-level baselines: punctuation insertion and a reduced EDA.

use std::fmt;
use std::str::FromStr;

use crate::data::AEDA_PUNCTUATION;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Inserts `floor(ratio * len)` punctuation marks into interior gaps.
///
/// Gap `g` (1..len-1) sits before original token `g`, so neither the first
/// nor the last position of the sentence receives a mark. Sequences shorter
/// than two tokens have no interior gap and come back unchanged.
pub fn aeda(tokens: &[String], ratio: f64, rng: &mut RngStream) -> Result<Vec<String>> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::config(format!("aeda ratio {ratio} must be >= 0")));
    }
    let len = tokens.len();
    if len < 2 {
        return Ok(tokens.to_vec());
    }
    let count = (ratio * len as f64).floor() as usize;
    let mut inserts: Vec<Vec<&str>> = vec![Vec::new(); len];
    for _ in 0..count {
        let gap = 1 + rng.below(len - 1);
        let mark = AEDA_PUNCTUATION[rng.below(AEDA_PUNCTUATION.len())];
        inserts[gap].push(mark);
    }
    let mut out = Vec::with_capacity(len + count);
    for (tok, marks) in tokens.iter().zip(inserts) {
        out.extend(marks.into_iter().map(str::to_string));
        out.push(tok.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdaOp {
    #[default]
    RandomSwap,
    RandomDelete,
}

/// `strength` is the swap fraction for `RandomSwap` and the drop
/// probability for `RandomDelete`.
pub fn eda_lite(tokens: &[String], op: EdaOp, strength: f64, rng: &mut RngStream) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::config(format!("eda strength {strength} outside [0, 1]")));
    }
    let len = tokens.len();
    let mut out = tokens.to_vec();
    if len == 0 || strength == 0.0 {
        return Ok(out);
    }
    match op {
        EdaOp::RandomSwap => {
            let swaps = (strength * len as f64).ceil() as usize;
            for _ in 0..swaps {
                let (i, j) = (rng.below(len), rng.below(len));
                out.swap(i, j);
            }
        }
        EdaOp::RandomDelete => {
            out = tokens.iter().filter(|_| !rng.bernoulli(strength)).cloned().collect();
            if out.is_empty() {
                out.push(tokens[rng.below(len)].clone());
            }
        }
    }
    Ok(out)
}

impl fmt::Display for EdaOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdaOp::RandomSwap => "random_swap",
            EdaOp::RandomDelete => "random_delete",
        })
    }
}

impl FromStr for EdaOp {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random_swap" | "swap" => Ok(EdaOp::RandomSwap),
            "random_delete" | "delete" => Ok(EdaOp::RandomDelete),
            other => Err(format!("expected random_swap or random_delete, got {other:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    fn is_mark(t: &str) -> bool {
        AEDA_PUNCTUATION.contains(&t)
    }

    #[test]
    fn aeda_zero_ratio_and_short_input() {
        let mut rng = RngStream::from_seed(1);
        assert_eq!(aeda(&words(7), 0.0, &mut rng).unwrap(), words(7));
        assert!(aeda(&[], 0.5, &mut rng).unwrap().is_empty());
        assert_eq!(aeda(&words(1), 3.0, &mut rng).unwrap(), words(1));
    }

    #[test]
    fn aeda_keeps_ends() {
        let mut rng = RngStream::from_seed(2);
        for _ in 0..50 {
            let out = aeda(&words(5), 2.0, &mut rng).unwrap();
            assert_eq!(out.first().unwrap(), "w0");
            assert_eq!(out.last().unwrap(), "w4");
        }
    }

    #[test]
    fn swap_preserves_multiset() {
        let toks: Vec<String> = ["a", "b", "a", "c", "d", "d"].iter().map(|s| s.to_string()).collect();
        let out = eda_lite(&toks, EdaOp::RandomSwap, 0.7, &mut RngStream::from_seed(3)).unwrap();
        let (mut x, mut y) = (toks.clone(), out);
        x.sort();
        y.sort();
        assert_eq!(x, y);
    }

    #[test]
    fn zero_strength_is_identity() {
        for op in [EdaOp::RandomSwap, EdaOp::RandomDelete] {
            assert_eq!(
                eda_lite(&words(9), op, 0.0, &mut RngStream::from_seed(4)).unwrap(),
                words(9)
            );
        }
    }

    #[test]
    fn delete_rate_within_binomial_bound() {
        let n = 10_000;
        let out = eda_lite(&words(n), EdaOp::RandomDelete, 0.3, &mut RngStream::from_seed(5)).unwrap();
        let dropped = (n - out.len()) as f64;
        let sigma = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((dropped - 3000.0).abs() <= 3.0 * sigma, "dropped {dropped}");
    }

    #[test]
    fn delete_never_empties() {
        let mut rng = RngStream::from_seed(6);
        for _ in 0..20 {
            assert_eq!(
                eda_lite(&words(3), EdaOp::RandomDelete, 1.0, &mut rng).unwrap().len(),
                1
            );
        }
    }

    #[test]
    fn bad_strength() {
        assert!(eda_lite(&words(2), EdaOp::RandomSwap, 1.5, &mut RngStream::from_seed(1)).is_err());
        assert!(aeda(&words(2), -0.1, &mut RngStream::from_seed(1)).is_err());
    }

    proptest! {
        #[test]
        fn aeda_count_and_recovery(len in 0usize..40, ratio in 0.0f64..2.0, seed in any::<u64>()) {
            let toks = words(len);
            let out = aeda(&toks, ratio, &mut RngStream::from_seed(seed)).unwrap();
            let expected = if len < 2 { 0 } else { (ratio * len as f64).floor() as usize };
            prop_assert_eq!(out.len(), len + expected);
            let recovered: Vec<String> = out.iter().filter(|t| !is_mark(t)).cloned().collect();
            prop_assert_eq!(recovered, toks);
        }

        #[test]
        fn deterministic_under_fixed_stream(len in 0usize..30, seed in any::<u64>()) {
            let toks = words(len);
            for op in [EdaOp::RandomSwap, EdaOp::RandomDelete] {
                let a = eda_lite(&toks, op, 0.4, &mut RngStream::from_seed(seed)).unwrap();
                let b = eda_lite(&toks, op, 0.4, &mut RngStream::from_seed(seed)).unwrap();
                prop_assert_eq!(a, b);
            }
            let a = aeda(&toks, 0.3, &mut RngStream::from_seed(seed)).unwrap();
            let b = aeda(&toks, 0.3, &mut RngStream::from_seed(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
