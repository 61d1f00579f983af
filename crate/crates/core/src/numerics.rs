//! Dense vectors, seeded random streams and small numeric helpers.

use std::ops::Deref;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default central-difference step for unit-scale inputs.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A non-empty vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension("vector must have dim >= 1".into()));
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "zero-dimensional vector");
        Self(vec![0.0; dim])
    }

    /// Wraps values already known to be finite and non-empty.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty() && values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NumericDomain(format!(
            "non-finite entry {} at index {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}

pub(crate) fn check_same_dim(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "{what}: dimension mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Euclidean norm.
pub fn l2_norm(v: &[f64]) -> Result<f64> {
    check_finite(v)?;
    Ok(norm_unchecked(v))
}

pub(crate) fn norm_unchecked(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded, reproducible random stream.
///
/// Backed by ChaCha8 with the stream id selecting an independent keystream,
/// so a `(seed, stream_id)` pair always yields the same sequence no matter
/// how many other streams exist or which thread draws from it.
#[derive(Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Derives a child stream from `(seed, stream_id, label)`.
    ///
    /// The child depends only on those three values, never on how much of
    /// the parent has been consumed.
    pub fn fork(&self, label: u64) -> RngStream {
        RngStream::new(self.seed, mix_stream(self.stream_id, label))
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1)
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_stream(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ label.rotate_left(32) ^ 0xA076_1D64_78BD_642F)
}

/// Uniform draw from the unit sphere S^{m-1} (normalized Gaussian).
pub fn sample_unit_sphere(m: usize, rng: &mut RngStream) -> Result<Vector> {
    if m == 0 {
        return Err(Error::InvalidDimension("sphere dimension must be >= 1".into()));
    }
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
        let n = norm_unchecked(&v);
        if n > 1e-150 {
            return Ok(Vector::from_finite(v.into_iter().map(|x| x / n).collect()));
        }
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("step must be > 0, got {h}")));
    }
    if x.is_empty() {
        return Err(Error::InvalidDimension("empty point".into()));
    }
    check_finite(x)?;
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NumericDomain(format!(
                "non-finite function value probing coordinate {i}"
            )));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(Vector::from_finite(grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l2_norm(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(l2_norm(&[3.0, 4.0]).unwrap(), 5.0);
        assert!(matches!(
            l2_norm(&[1.0, f64::NAN]),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn vector_rejects_bad_values() {
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![1.0, f64::INFINITY]).is_err());
        let v: std::result::Result<Vector, _> = serde_json_like(&[1.0, 2.0]);
        assert_eq!(v.unwrap().as_slice(), &[1.0, 2.0]);
    }

    fn serde_json_like(v: &[f64]) -> Result<Vector> {
        Vector::try_from(v.to_vec())
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut c = RngStream::new(42, 8);
        let xa: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn fork_ignores_parent_consumption() {
        let mut a = RngStream::new(1, 2);
        let before = a.fork(5).next_u64();
        for _ in 0..100 {
            a.next_u64();
        }
        assert_eq!(before, a.fork(5).next_u64());
        assert_ne!(a.fork(5).next_u64(), a.fork(6).next_u64());
    }

    #[test]
    fn sphere_zero_dim_rejected() {
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            sample_unit_sphere(0, &mut rng),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn sphere_one_dim_is_sign() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            let v = sample_unit_sphere(1, &mut rng).unwrap();
            assert!(v[0] == 1.0 || v[0] == -1.0);
        }
    }

    #[test]
    fn sphere_draws_are_unit_norm() {
        let mut rng = RngStream::new(11, 0);
        for m in [1usize, 2, 8, 64] {
            for _ in 0..10_000 {
                let v = sample_unit_sphere(m, &mut rng).unwrap();
                assert!((norm_unchecked(&v) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sphere_mean_is_centered() {
        // symmetry oracle: every coordinate has mean 0 and variance 1/m
        let mut rng = RngStream::new(2024, 1);
        let n = 100_000;
        let mut sum = [0.0f64; 3];
        for _ in 0..n {
            let v = sample_unit_sphere(3, &mut rng).unwrap();
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        let band = 3.0 / ((3 * n) as f64).sqrt();
        for s in sum {
            assert!((s / n as f64).abs() < band, "mean {} outside {band}", s / n as f64);
        }
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|_| Ok(3.5), &[0.3, -1.0, 2.0], DEFAULT_FD_STEP).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));

        let g = finite_diff_grad(
            |x| Ok(x.iter().map(|v| v * v).sum()),
            &[1.0, 2.0],
            1e-5,
        )
        .unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6);
        assert!((g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_rejects_nonfinite_values() {
        let r = finite_diff_grad(|x| Ok(1.0 / x[0]), &[0.0], 1e-5);
        assert!(r.is_ok());
        let r = finite_diff_grad(|x| Ok(x[0].ln()), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NumericDomain(_))));
        assert!(finite_diff_grad(|_| Ok(0.0), &[0.0], 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triangle_inequality(
                a in proptest::collection::vec(-1e3f64..1e3, 5),
                b in proptest::collection::vec(-1e3f64..1e3, 5),
                c in proptest::collection::vec(-1e3f64..1e3, 5),
            ) {
                let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x - y).collect();
                let ac: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x - y).collect();
                let lhs = l2_norm(&ac).unwrap();
                let rhs = l2_norm(&ab).unwrap() + l2_norm(&bc).unwrap();
                prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0));
            }

            #[test]
            fn same_stream_same_draws(seed: u64, id: u64) {
                let mut a = RngStream::new(seed, id);
                let mut b = RngStream::new(seed, id);
                for _ in 0..16 {
                    prop_assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
                }
            }
        }
    }
}
