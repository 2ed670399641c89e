//! Vector arithmetic, seeded Gaussian sampling and small statistical helpers
//! shared by every other module.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A point in the d-dimensional latent space.
#[derive(Clone, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    /// Builds a vector, rejecting empty input and non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidDimension("latent vector must have d >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("entry {i} = {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self(vec![value; d])
    }

    /// Wraps values produced by arithmetic on already-validated vectors.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
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

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &LatentVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn l1_distance(&self, other: &LatentVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn scale(&self, s: f64) -> LatentVector {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &LatentVector) -> LatentVector {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    /// `a * self + b * other`
    pub fn lincomb(a: f64, x: &LatentVector, b: f64, y: &LatentVector) -> LatentVector {
        Self(x.0.iter().zip(&y.0).map(|(u, v)| a * u + b * v).collect())
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        if self.dim() != d {
            return Err(Error::InvalidDimension(format!(
                "expected dimension {d}, got {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for LatentVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("LatentVector").field(&self.0).finish()
    }
}

impl Index<usize> for LatentVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl Add for &LatentVector {
    type Output = LatentVector;
    fn add(self, rhs: &LatentVector) -> LatentVector {
        LatentVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &LatentVector {
    type Output = LatentVector;
    fn sub(self, rhs: &LatentVector) -> LatentVector {
        LatentVector(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &LatentVector {
    type Output = LatentVector;
    fn mul(self, rhs: f64) -> LatentVector {
        self.scale(rhs)
    }
}

impl TryFrom<Vec<f64>> for LatentVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

/// A time in `[0, 1]`; `t = 0` is pure noise and `t = 1` is a clean sample.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Timestep(f64);

impl Timestep {
    pub const NOISE: Timestep = Timestep(0.0);
    pub const CLEAN: Timestep = Timestep(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("timestep {t} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Seeded, explicitly threaded random stream (ChaCha8, counter based).
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent stream derived from this state's seed; does not advance `self`.
    pub fn substream(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self { seed: self.seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// d independent standard-normal draws.
pub fn sample_standard_normal(rng: &mut RngState, d: usize) -> Result<LatentVector> {
    if d == 0 {
        return Err(Error::InvalidDimension("cannot sample a 0-dimensional vector".into()));
    }
    Ok(LatentVector((0..d).map(|_| rng.normal()).collect()))
}

/// `(sin x, cos x)` as two separate libm calls. Whether the compiler fuses
/// the pair into `sincos` depends on inlining, and the fused call can differ
/// in the last ulp, which breaks bit-reproducibility across build profiles.
pub fn sin_cos(x: f64) -> (f64, f64) {
    (x.sin(), std::hint::black_box(x).cos())
}

pub fn cosine_similarity(a: &LatentVector, b: &LatentVector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidDimension(format!("{} vs {}", a.len(), b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedDirection("cosine of a zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Sample mean and unbiased (N-1) covariance.
pub fn gaussian_fit(samples: &[LatentVector]) -> Result<(LatentVector, DMatrix<f64>)> {
    let d = samples.first().map(LatentVector::dim).unwrap_or(0);
    if samples.len() < d + 1 || samples.is_empty() {
        return Err(Error::InsufficientData { needed: d.max(1) + 1, got: samples.len() });
    }
    for s in samples {
        s.check_dim(d)?;
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for s in samples {
        for (c, (v, m)) in centered.iter_mut().zip(s.as_slice().iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((LatentVector(mean), cov))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut rng = RngState::new(7);
        let a = sample_standard_normal(&mut rng, 2).unwrap();
        let b = sample_standard_normal(&mut rng, 2).unwrap();
        assert_ne!(a, b);
        let mut again = RngState::new(7);
        assert_eq!(sample_standard_normal(&mut again, 2).unwrap(), a);
        assert_eq!(sample_standard_normal(&mut again, 2).unwrap(), b);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let mut rng = RngState::new(1);
        assert!(matches!(
            sample_standard_normal(&mut rng, 0),
            Err(Error::InvalidDimension(_))
        ));
    }

    #[test]
    fn normal_moments() {
        let n = 100_000;
        let mut rng = RngState::new(11);
        let draws: Vec<_> = (0..n).map(|_| sample_standard_normal(&mut rng, 2).unwrap()).collect();
        for k in 0..2 {
            let mean = draws.iter().map(|v| v[k]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let root = RngState::new(3);
        let mut a = root.substream(1);
        let mut b = root.substream(2);
        let mut a2 = root.substream(1);
        let x = a.normal();
        assert_ne!(x, b.normal());
        assert_eq!(x, a2.normal());
    }

    #[test]
    fn sin_cos_matches_separate_calls() {
        assert_eq!(sin_cos(0.0), (0.0, 1.0));
        for x in [0.3, 1.0, 2.5, -7.25, 100.0] {
            assert_eq!(sin_cos(x), (x.sin(), x.cos()));
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&lv(&[1.0, 0.0]), &lv(&[2.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&lv(&[1.0, 0.0]), &lv(&[0.0, 3.0])).unwrap(), 0.0);
        let c = cosine_similarity(&lv(&[1.0, 0.0]), &lv(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&lv(&[0.0, 0.0]), &lv(&[1.0, 1.0])),
            Err(Error::UndefinedDirection(_))
        ));
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert!(matches!(LatentVector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(LatentVector::new(vec![]).is_err());
    }

    #[test]
    fn fit_symmetric_square() {
        let s = [lv(&[0.0, 0.0]), lv(&[2.0, 0.0]), lv(&[0.0, 2.0]), lv(&[2.0, 2.0])];
        let (mean, cov) = gaussian_fit(&s).unwrap();
        assert_eq!(mean.as_slice(), &[1.0, 1.0]);
        // unbiased: sum of squared deviations 4 over n-1 = 3
        assert!((cov[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(cov[(0, 1)], 0.0);
    }

    #[test]
    fn fit_degenerate_and_too_few() {
        let s = vec![lv(&[1.5, -2.0]); 5];
        let (_, cov) = gaussian_fit(&s).unwrap();
        assert!(cov.iter().all(|&c| c == 0.0));
        let few = vec![lv(&[1.0, 2.0]); 2];
        assert!(matches!(gaussian_fit(&few), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn fit_standard_normal_covariance() {
        let mut rng = RngState::new(5);
        let draws: Vec<_> =
            (0..100_000).map(|_| sample_standard_normal(&mut rng, 2).unwrap()).collect();
        let (_, cov) = gaussian_fit(&draws).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - want).abs() < 0.03, "cov[{i},{j}] = {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn timestep_range() {
        assert!(Timestep::new(0.0).is_ok());
        assert!(Timestep::new(1.0).is_ok());
        assert!(Timestep::new(1.0 + 1e-12).is_err());
        assert!(Timestep::new(-0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-100.0f64..100.0, 1..8)
                .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        }

        proptest! {
            #[test]
            fn self_cosine_is_one(v in nonzero_vec()) {
                let a = LatentVector::new(v).unwrap();
                prop_assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
                let neg = a.scale(-1.0);
                prop_assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
            }
        }
    }
}
