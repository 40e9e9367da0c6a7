//! A small, fully known data world.
//!
//! Data vectors live in `ℝⁿ` and are produced from an identity embedding
//! `y ∈ S^{d-1}` and an attribute vector `s` by an affine map plus noise:
//!
//! ```text
//! x₀ = A·y + B·ŝ + σ·ε          ŝ = normalized(s)
//! ```
//!
//! The identity embedder is `f(x) = norm(W·x)` and the attribute predictor is
//! `F(x) = V·x`. Both have exact gradients, which is what the guided sampler
//! needs for the reversed-likelihood score.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, dot, norm, Matrix};
use crate::rng::{self, standard_normal_vec};
use crate::sphere::{normalize, SphereError, UnitVector, ZERO_NORM};

/// Smallest singular value `W` must have.
pub const MIN_EMBEDDER_SINGULAR_VALUE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid world configuration: {0}")]
    Config(String),
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("embedder input maps to a vector of norm {0:e}")]
    ZeroNorm(f64),
    #[error("attribute out of range: {0}")]
    AttributeRange(String),
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

/// Identity-irrelevant conditioning: age in years and three head-pose angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector {
    age: f64,
    pose: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra: Vec<f64>,
}

impl AttributeVector {
    pub const AGE_RANGE: (f64, f64) = (0.0, 100.0);
    pub const POSE_LIMIT: f64 = 90.0;

    /// `pose` is `[yaw, pitch, roll]`.
    pub fn new(age: f64, pose: [f64; 3]) -> Result<Self, WorldError> {
        if !(Self::AGE_RANGE.0..=Self::AGE_RANGE.1).contains(&age) {
            return Err(WorldError::AttributeRange(format!("age {age} not in [0, 100]")));
        }
        for (name, angle) in ["yaw", "pitch", "roll"].iter().zip(pose) {
            if !(angle.abs() <= Self::POSE_LIMIT) {
                return Err(WorldError::AttributeRange(format!("{name} {angle} not in [-90, 90]")));
            }
        }
        Ok(AttributeVector { age, pose, extra: Vec::new() })
    }

    /// Age 50, frontal pose. Normalizes to the zero vector.
    pub fn neutral() -> Self {
        AttributeVector { age: 50.0, pose: [0.0; 3], extra: Vec::new() }
    }

    /// Appends already-normalized extension slots, each in `[-1, 1]`.
    pub fn with_extra(mut self, extra: Vec<f64>) -> Result<Self, WorldError> {
        if let Some(v) = extra.iter().find(|v| !(v.abs() <= 1.0)) {
            return Err(WorldError::AttributeRange(format!("extra slot {v} not in [-1, 1]")));
        }
        self.extra = extra;
        Ok(self)
    }

    pub fn age(&self) -> f64 {
        self.age
    }

    pub fn pose(&self) -> [f64; 3] {
        self.pose
    }

    pub fn extra(&self) -> &[f64] {
        &self.extra
    }

    /// Length of [`normalized`](Self::normalized).
    pub fn len(&self) -> usize {
        4 + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[(age − 50)/50, yaw/90, pitch/90, roll/90, extra…]`, every entry in `[-1, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push((self.age - 50.0) / 50.0);
        out.extend(self.pose.iter().map(|a| a / Self::POSE_LIMIT));
        out.extend_from_slice(&self.extra);
        out
    }
}

/// Box from which attributes are drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeRanges {
    pub age: (f64, f64),
    /// `[yaw, pitch, roll]` bounds in degrees.
    pub pose: [(f64, f64); 3],
}

impl Default for AttributeRanges {
    fn default() -> Self {
        AttributeRanges { age: (0.0, 100.0), pose: [(-60.0, 60.0); 3] }
    }
}

impl AttributeRanges {
    pub fn validate(&self) -> Result<(), WorldError> {
        let (lo, hi) = self.age;
        if !(lo <= hi && lo >= AttributeVector::AGE_RANGE.0 && hi <= AttributeVector::AGE_RANGE.1) {
            return Err(WorldError::AttributeRange(format!("age range [{lo}, {hi}] outside [0, 100]")));
        }
        for (lo, hi) in self.pose {
            if !(lo <= hi && lo >= -AttributeVector::POSE_LIMIT && hi <= AttributeVector::POSE_LIMIT) {
                return Err(WorldError::AttributeRange(format!("pose range [{lo}, {hi}] outside [-90, 90]")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, s: &AttributeVector) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        within(s.age, self.age) && s.pose.iter().zip(self.pose).all(|(&a, r)| within(a, r))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AttributeVector {
        let mut draw = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
        let age = draw(self.age);
        let pose = [draw(self.pose[0]), draw(self.pose[1]), draw(self.pose[2])];
        AttributeVector { age, pose, extra: Vec::new() }
    }
}

/// The data-generating process plus the analytic embedder and attribute map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyWorld {
    n: usize,
    d: usize,
    m_a: usize,
    /// identity decoder, `n × d`
    a: Matrix,
    /// attribute decoder, `n × m_a`
    b: Matrix,
    /// embedder weights, `d × n`
    w: Matrix,
    /// attribute predictor, `m_a × n`
    v: Matrix,
    noise_sigma: f64,
    seed: u64,
}

fn check_dims(n: usize, d: usize, m_a: usize) -> Result<(), WorldError> {
    if d < 2 || n < d {
        return Err(WorldError::Config(format!("need n >= d >= 2, got n={n}, d={d}")));
    }
    if m_a < 1 {
        return Err(WorldError::Config("m_a must be at least 1".into()));
    }
    Ok(())
}

impl ToyWorld {
    /// Draws all four matrices from a seeded Gaussian scaled by `1/√fan_in`.
    ///
    /// `W` is redrawn until its smallest singular value exceeds
    /// [`MIN_EMBEDDER_SINGULAR_VALUE`].
    pub fn build(n: usize, d: usize, m_a: usize, noise_sigma: f64, seed: u64) -> Result<Self, WorldError> {
        check_dims(n, d, m_a)?;
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(WorldError::Config(format!("noise_sigma must be finite and >= 0, got {noise_sigma}")));
        }
        let mut rng = rng::stream(seed);
        let a = Matrix::gaussian(n, d, 1.0 / (d as f64).sqrt(), &mut rng);
        let b = Matrix::gaussian(n, m_a, 1.0 / (m_a as f64).sqrt(), &mut rng);
        let mut w = Matrix::gaussian(d, n, 1.0 / (n as f64).sqrt(), &mut rng);
        let mut attempts = 1;
        while w.min_singular_value() <= MIN_EMBEDDER_SINGULAR_VALUE {
            if attempts == 100 {
                return Err(WorldError::Config("could not draw a full-rank embedder".into()));
            }
            w = Matrix::gaussian(d, n, 1.0 / (n as f64).sqrt(), &mut rng);
            attempts += 1;
        }
        let v = Matrix::gaussian(m_a, n, 1.0 / (n as f64).sqrt(), &mut rng);
        Ok(ToyWorld { n, d, m_a, a, b, w, v, noise_sigma, seed })
    }

    /// Assembles a world from explicit matrices, checking every shape and
    /// the rank of `W`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: Matrix,
        b: Matrix,
        w: Matrix,
        v: Matrix,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self, WorldError> {
        let (n, d, m_a) = (a.rows(), a.cols(), b.cols());
        check_dims(n, d, m_a)?;
        let shape_ok = b.rows() == n && w.rows() == d && w.cols() == n && v.rows() == m_a && v.cols() == n;
        if !shape_ok {
            return Err(WorldError::Config(format!(
                "inconsistent shapes: A {}x{}, B {}x{}, W {}x{}, V {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                w.rows(),
                w.cols(),
                v.rows(),
                v.cols()
            )));
        }
        if !(a.is_finite() && b.is_finite() && w.is_finite() && v.is_finite()) {
            return Err(WorldError::Config("matrices must be finite".into()));
        }
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(WorldError::Config(format!("noise_sigma must be finite and >= 0, got {noise_sigma}")));
        }
        if w.min_singular_value() <= MIN_EMBEDDER_SINGULAR_VALUE {
            return Err(WorldError::Config("embedder W is rank deficient".into()));
        }
        Ok(ToyWorld { n, d, m_a, a, b, w, v, noise_sigma, seed })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m_a(&self) -> usize {
        self.m_a
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn identity_decoder(&self) -> &Matrix {
        &self.a
    }

    pub fn attribute_decoder(&self) -> &Matrix {
        &self.b
    }

    pub fn embedder(&self) -> &Matrix {
        &self.w
    }

    pub fn attribute_predictor(&self) -> &Matrix {
        &self.v
    }

    /// Same world with a different embedder matrix.
    pub fn with_embedder(&self, w: Matrix) -> Result<Self, WorldError> {
        ToyWorld::from_parts(self.a.clone(), self.b.clone(), w, self.v.clone(), self.noise_sigma, self.seed)
    }

    fn expect_len(&self, what: &'static str, expected: usize, got: usize) -> Result<(), WorldError> {
        if expected == got {
            Ok(())
        } else {
            Err(WorldError::DimensionMismatch { what, expected, got })
        }
    }

    pub fn check_data(&self, x: &[f64]) -> Result<(), WorldError> {
        self.expect_len("data vector", self.n, x.len())
    }

    pub fn check_identity(&self, y: &[f64]) -> Result<(), WorldError> {
        self.expect_len("identity embedding", self.d, y.len())
    }

    pub fn check_attributes(&self, s_norm: &[f64]) -> Result<(), WorldError> {
        self.expect_len("normalized attributes", self.m_a, s_norm.len())
    }

    /// `x₀ = A·y + B·normalized(s) + σ·ε`.
    pub fn generate_sample<R: Rng + ?Sized>(
        &self,
        y: &UnitVector,
        s: &AttributeVector,
        rng: &mut R,
    ) -> Result<Vec<f64>, WorldError> {
        self.check_identity(y.as_slice())?;
        let s_norm = s.normalized();
        self.check_attributes(&s_norm)?;
        let mut x = self.a.mul_vec(y.as_slice());
        for (xi, bi) in x.iter_mut().zip(self.b.mul_vec(&s_norm)) {
            *xi += bi;
        }
        if self.noise_sigma > 0.0 {
            for (xi, e) in x.iter_mut().zip(standard_normal_vec(rng, self.n)) {
                *xi += self.noise_sigma * e;
            }
        }
        Ok(x)
    }

    /// The identity embedder `f(x) = norm(W·x)`.
    pub fn embed(&self, x: &[f64]) -> Result<UnitVector, WorldError> {
        self.check_data(x)?;
        let z = self.w.mul_vec(x);
        let len = norm(&z);
        if !(len > ZERO_NORM) {
            return Err(WorldError::ZeroNorm(len));
        }
        Ok(normalize(&z)?)
    }

    /// `∇ₓ (yᵀ f(x)) = Wᵀ (I − u uᵀ) y / ‖W x‖` with `u = f(x)`.
    pub fn embed_jacobian_vector(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, WorldError> {
        self.check_data(x)?;
        self.check_identity(y)?;
        let z = self.w.mul_vec(x);
        let len = norm(&z);
        if !(len > ZERO_NORM) {
            return Err(WorldError::ZeroNorm(len));
        }
        let u: Vec<f64> = z.iter().map(|v| v / len).collect();
        let along = dot(&u, y);
        let tangent: Vec<f64> = y.iter().zip(&u).map(|(yi, ui)| (yi - along * ui) / len).collect();
        Ok(self.w.tr_mul_vec(&tangent))
    }

    /// `F(x) = V·x`.
    pub fn predict_attributes(&self, x: &[f64]) -> Result<Vec<f64>, WorldError> {
        self.check_data(x)?;
        Ok(self.v.mul_vec(x))
    }

    /// `∇ₓ (ŝᵀ V x) = Vᵀ ŝ`; independent of `x` because `F` is linear.
    pub fn attribute_score(&self, x: &[f64], s: &AttributeVector) -> Result<Vec<f64>, WorldError> {
        self.attribute_score_normalized(x, &s.normalized())
    }

    /// [`attribute_score`](Self::attribute_score) for an already-normalized attribute vector.
    pub fn attribute_score_normalized(&self, x: &[f64], s_norm: &[f64]) -> Result<Vec<f64>, WorldError> {
        self.check_data(x)?;
        self.check_attributes(s_norm)?;
        Ok(self.v.tr_mul_vec(s_norm))
    }

    /// Identity alignment `yᵀ f(x)`; the cosine between target and embedding.
    pub fn identity_alignment(&self, x: &[f64], y: &[f64]) -> Result<f64, WorldError> {
        Ok(dot(self.embed(x)?.as_slice(), y))
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.w.is_finite() && self.v.is_finite() && all_finite(&[self.noise_sigma])
    }
}
