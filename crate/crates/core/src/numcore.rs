//! Numerical substrate: dense f64 tensors, lp norms, and the seeded
//! splitmix64 stream that every stochastic step in the crate draws from.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Perturbation norm tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::Linf, Norm::L2, Norm::L1];
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L1 => write!(f, "l1"),
            Norm::L2 => write!(f, "l2"),
            Norm::Linf => write!(f, "linf"),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            other => Err(Error::usage(format!(
                "unknown norm '{other}' (expected linf, l2, or l1)"
            ))),
        }
    }
}

/// Dense row-major tensor of 64-bit floats.
///
/// Values are immutable once constructed; every public constructor rejects
/// non-finite entries so downstream code can assume finiteness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::usage("tensor extents must be positive"));
        }
        if expected != data.len() {
            return Err(Error::usage(format!(
                "shape {:?} implies {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite tensor value {v}")));
        }
        Ok(Tensor { shape, data })
    }

    /// 1-D tensor from a value list.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (first extent).
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Row width for a 2-D tensor.
    pub fn cols(&self) -> Result<usize> {
        if self.shape.len() != 2 {
            return Err(Error::usage(format!(
                "expected a 2-D tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.shape[1])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[self.shape.len() - 1];
        &self.data[i * w..(i + 1) * w]
    }

    /// Rebuild from raw parts, re-checking the finiteness invariant.
    pub fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Tensor::new(shape, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::usage(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map(|v| c * v)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::usage("dot: shape mismatch".to_string()));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }
}

/// lp norm of a tensor viewed as one flat vector.
pub fn lp_norm(v: &Tensor, p: Norm) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::usage("lp_norm: empty tensor"));
    }
    Ok(match p {
        Norm::L1 => v.data().iter().map(|x| x.abs()).sum(),
        Norm::L2 => v.data().iter().map(|x| x * x).sum::<f64>().sqrt(),
        Norm::Linf => v.data().iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    })
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output mixing function.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic splitmix64 stream.
///
/// Identical seeds yield bit-identical sequences on every platform. Parallel
/// tasks take private streams via [`RngStream::derive`] so that no two tasks
/// share state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { state: seed }
    }

    /// Private stream for a task: state = mix(master_seed XOR task_index).
    pub fn derive(master_seed: u64, task_index: u64) -> Self {
        RngStream {
            state: mix(master_seed ^ task_index),
        }
    }

    /// Next raw 64-bit word; advances state exactly once.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform draw in [0,1) from the top 53 bits of the next word.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound).
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Standard normal pair via Box-Muller.
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        // 1 - u1 is in (0, 1], keeping the log finite.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Uniform draw in [0,1); the free-function spelling of [`RngStream::next_f64`].
pub fn rng_uniform(stream: &mut RngStream) -> f64 {
    stream.next_f64()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference splitmix64, written independently from the published constants.
    fn reference_splitmix64(seed: u64, n: usize) -> Vec<u64> {
        let mut state = seed;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            state = state.wrapping_add(0x9E3779B97F4A7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
            out.push(z ^ (z >> 31));
        }
        out
    }

    #[test]
    fn lp_norm_examples() {
        let v = Tensor::from_vec(vec![3.0, -4.0]).unwrap();
        assert_eq!(lp_norm(&v, Norm::L1).unwrap(), 7.0);
        assert_eq!(lp_norm(&v, Norm::L2).unwrap(), 5.0);
        assert_eq!(lp_norm(&v, Norm::Linf).unwrap(), 4.0);
    }

    #[test]
    fn lp_norm_rejects_empty() {
        let v = Tensor {
            shape: vec![0],
            data: vec![],
        };
        assert!(lp_norm(&v, Norm::L2).is_err());
    }

    #[test]
    fn tensor_rejects_nonfinite_and_bad_shape() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn rng_matches_published_splitmix64_vector() {
        // First three words for seed 0, frozen from the reference algorithm.
        let mut s = RngStream::new(0);
        assert_eq!(s.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(s.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(s.next_u64(), 0x06C45D188009454F);

        for seed in [0u64, 1, 42, u64::MAX] {
            let mut s = RngStream::new(seed);
            let got: Vec<u64> = (0..64).map(|_| s.next_u64()).collect();
            assert_eq!(got, reference_splitmix64(seed, 64));
        }
    }

    #[test]
    fn identical_seeds_replay_identical_sequences() {
        let mut a = RngStream::new(123456789);
        let mut b = RngStream::new(123456789);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        for seed in [0u64, 7, 0xDEADBEEF] {
            let mut s = RngStream::new(seed);
            for _ in 0..1000 {
                let u = s.next_f64();
                assert!((0.0..1.0).contains(&u));
            }
        }
    }

    #[test]
    fn derived_streams_differ_from_master_and_each_other() {
        let mut master = RngStream::new(9);
        let mut d0 = RngStream::derive(9, 0);
        let mut d1 = RngStream::derive(9, 1);
        let a = master.next_u64();
        let b = d0.next_u64();
        let c = d1.next_u64();
        assert_ne!(b, c);
        assert_ne!(a, b);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut s = RngStream::new(3);
        let mut v: Vec<usize> = (0..100).collect();
        s.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn l2_norm_squared_equals_dot(v in proptest::collection::vec(-1e3_f64..1e3, 1..32)) {
            let t = Tensor::from_vec(v).unwrap();
            let n2 = lp_norm(&t, Norm::L2).unwrap();
            let d = t.dot(&t).unwrap();
            let scale = d.abs().max(1e-300);
            prop_assert!(((n2 * n2 - d) / scale).abs() < 1e-12);
        }

        #[test]
        fn lp_norm_is_absolutely_homogeneous(
            v in proptest::collection::vec(-1e3_f64..1e3, 1..32),
            c in -100.0_f64..100.0,
        ) {
            let t = Tensor::from_vec(v).unwrap();
            let scaled = t.scale(c).unwrap();
            for p in [Norm::L1, Norm::L2, Norm::Linf] {
                let lhs = lp_norm(&scaled, p).unwrap();
                let rhs = c.abs() * lp_norm(&t, p).unwrap();
                let denom = rhs.abs().max(1e-300);
                prop_assert!(((lhs - rhs) / denom).abs() < 1e-12);
            }
        }
    }
}
