//! Dense row-major tensors of rank 1 to 3 and the kernels built on them.
//!
//! Every kernel that produces values checks them for finiteness, so a
//! published [`DenseTensor`] never holds NaN or infinity.

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "rank must be 1, 2 or 3".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::Shape {
            shape: shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    Ok(shape.iter().product())
}

fn ensure_finite(op: &str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{op} (flat index {i})"))),
        None => Ok(()),
    }
}

impl DenseTensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::Shape {
                shape: shape.to_vec(),
                reason: format!("expects {len} values, got {}", data.len()),
            });
        }
        ensure_finite("DenseTensor::new", &data)?;
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        ensure_finite("DenseTensor::filled", &t.data)?;
        Ok(t)
    }

    /// Builds a rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    /// Entries drawn from `U(lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = (0..len).map(|_| rng.uniform(lo, hi)).collect();
        Self::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for kernels inside the crate. Callers re-check finiteness.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows when viewed as a matrix whose rows are the last axis.
    pub fn num_rows(&self) -> usize {
        self.data.len() / self.row_len()
    }

    /// Length of the last axis.
    pub fn row_len(&self) -> usize {
        *self.shape.last().expect("rank >= 1")
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        ensure_finite(op, &data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|v| v * factor).collect();
        ensure_finite("scale", &data)?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// `self += factor * other`.
    pub fn axpy(&mut self, factor: f64, other: &Self) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        ensure_finite("axpy", &self.data)
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (n, k, m) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    ensure_finite("matmul", &out)?;
    Ok(DenseTensor {
        shape: vec![n, m],
        data: out,
    })
}

/// Elementwise product of two tensors of identical shape.
pub fn hadamard(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}

pub fn frobenius_norm(a: &DenseTensor) -> f64 {
    a.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Tensor of the given shape whose entries are independently 1 with
/// probability `epsilon` and 0 otherwise.
pub fn bernoulli_mask(shape: &[usize], epsilon: f64, rng: &mut RngStream) -> Result<DenseTensor> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::config(format!("mask probability {epsilon} outside [0, 1]")));
    }
    let len = check_shape(shape)?;
    let data = (0..len)
        .map(|_| if rng.bernoulli(epsilon) { 1.0 } else { 0.0 })
        .collect();
    Ok(DenseTensor {
        shape: shape.to_vec(),
        data,
    })
}

/// A bijection on `0..len`, stored as the image of each index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; images.len()];
        for (i, &p) in images.iter().enumerate() {
            if p >= images.len() {
                return Err(Error::Permutation(format!(
                    "image {p} of index {i} outside 0..{}",
                    images.len()
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::Permutation(format!("index {p} appears twice")));
            }
        }
        Ok(Self(images))
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len).collect())
    }

    pub fn random(len: usize, rng: &mut RngStream) -> Self {
        let mut images: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut images);
        Self(images)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Output row `i` is input row `perm(i)`.
///
/// Rank-3 tensors are treated as a stack of rows over their last axis.
pub fn permute_rows(a: &DenseTensor, perm: &Permutation) -> Result<DenseTensor> {
    let rows = a.num_rows();
    if perm.len() != rows {
        return Err(Error::Permutation(format!(
            "permutation of length {} applied to {rows} rows",
            perm.len()
        )));
    }
    let w = a.row_len();
    let mut data = Vec::with_capacity(a.len());
    for &src in perm.as_slice() {
        data.extend_from_slice(&a.data[src * w..(src + 1) * w]);
    }
    Ok(DenseTensor {
        shape: a.shape.clone(),
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: &[&[f64]]) -> DenseTensor {
        DenseTensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_matmul(a: &DenseTensor, b: &DenseTensor) -> Vec<f64> {
        let (n, k, m) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.data()[i * k + p] * b.data()[p * m + j];
                }
                out[i * m + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_dot() {
        let id = t2(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = t2(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&id, &b).unwrap(), b);
        let row = t2(&[&[1.0, 1.0]]);
        let col = t2(&[&[2.0], &[3.0]]);
        assert_eq!(matmul(&row, &col).unwrap().data(), &[5.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngStream::from_seed(1);
        for &(n, k, m) in &[(4, 5, 3), (1, 1, 1), (32, 32, 32), (7, 13, 2)] {
            let a = DenseTensor::uniform(&[n, k], -1.0, 1.0, &mut rng).unwrap();
            let b = DenseTensor::uniform(&[k, m], -1.0, 1.0, &mut rng).unwrap();
            let fast = matmul(&a, &b).unwrap();
            for (x, y) in fast.data().iter().zip(naive_matmul(&a, &b)) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = DenseTensor::zeros(&[2, 3]).unwrap();
        let b = DenseTensor::zeros(&[2, 3]).unwrap();
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] vs [2, 3]"), "{err}");
    }

    #[test]
    fn hadamard_cases() {
        let x = DenseTensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let m = DenseTensor::new(&[3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(hadamard(&x, &m).unwrap().data(), &[0.0, 2.0, 0.0]);
        let ones = DenseTensor::filled(&[3], 1.0).unwrap();
        assert_eq!(hadamard(&x, &ones).unwrap(), x);
        let zeros = DenseTensor::zeros(&[3]).unwrap();
        assert!(hadamard(&x, &zeros).unwrap().is_all_zero());
        assert!(matches!(
            hadamard(&x, &DenseTensor::zeros(&[2]).unwrap()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn norm_cases() {
        assert_eq!(frobenius_norm(&DenseTensor::zeros(&[4, 4]).unwrap()), 0.0);
        assert_eq!(frobenius_norm(&DenseTensor::new(&[2], vec![3.0, 4.0]).unwrap()), 5.0);
        let mut rng = RngStream::from_seed(2);
        let a = DenseTensor::uniform(&[8, 8], -2.0, 2.0, &mut rng).unwrap();
        let mut ss = 0.0;
        for r in 0..8 {
            for c in 0..8 {
                ss += a.data()[r * 8 + c].powi(2);
            }
        }
        assert!((frobenius_norm(&a) - ss.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn mask_extremes_and_errors() {
        let mut rng = RngStream::from_seed(3);
        assert!(bernoulli_mask(&[10, 10], 0.0, &mut rng).unwrap().is_all_zero());
        assert!(bernoulli_mask(&[10, 10], 1.0, &mut rng)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(matches!(bernoulli_mask(&[2], 1.5, &mut rng), Err(Error::Config(_))));
        assert!(matches!(bernoulli_mask(&[2], -0.1, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn mask_density_within_binomial_bound() {
        let mut rng = RngStream::from_seed(4);
        let m = bernoulli_mask(&[100, 100], 0.3, &mut rng).unwrap();
        let frac = m.data().iter().sum::<f64>() / 10_000.0;
        let sigma = (0.3f64 * 0.7 / 10_000.0).sqrt();
        assert!((frac - 0.3).abs() <= 3.0 * sigma, "{frac}");
    }

    #[test]
    fn mask_deterministic() {
        let a = bernoulli_mask(&[5, 5], 0.5, &mut RngStream::new(1, 2)).unwrap();
        let b = bernoulli_mask(&[5, 5], 0.5, &mut RngStream::new(1, 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permute_rows_cases() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(permute_rows(&a, &Permutation::identity(3)).unwrap(), a);
        let rev = Permutation::new(vec![2, 1, 0]).unwrap();
        assert_eq!(
            permute_rows(&a, &rev).unwrap(),
            t2(&[&[5.0, 6.0], &[3.0, 4.0], &[1.0, 2.0]])
        );
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
        assert!(permute_rows(&a, &Permutation::identity(2)).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            DenseTensor::new(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        let big = DenseTensor::filled(&[1], f64::MAX).unwrap();
        assert!(matches!(big.add(&big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn shape_validation() {
        assert!(DenseTensor::zeros(&[]).is_err());
        assert!(DenseTensor::zeros(&[1, 2, 3, 4]).is_err());
        assert!(DenseTensor::zeros(&[2, 0]).is_err());
        assert!(DenseTensor::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn perm_then_inverse_is_identity(rows in 1usize..20, cols in 1usize..6, seed in any::<u64>()) {
                let mut rng = RngStream::from_seed(seed);
                let a = DenseTensor::uniform(&[rows, cols], -1.0, 1.0, &mut rng).unwrap();
                let p = Permutation::random(rows, &mut rng);
                let there = permute_rows(&a, &p).unwrap();
                let back = permute_rows(&there, &p.inverse()).unwrap();
                prop_assert_eq!(back, a);
            }

            #[test]
            fn kernels_are_deterministic(seed in any::<u64>(), eps in 0.0f64..=1.0) {
                let m1 = bernoulli_mask(&[4, 6], eps, &mut RngStream::new(seed, 1)).unwrap();
                let m2 = bernoulli_mask(&[4, 6], eps, &mut RngStream::new(seed, 1)).unwrap();
                prop_assert_eq!(&m1, &m2);
                prop_assert!(m1.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
        }
    }
}
