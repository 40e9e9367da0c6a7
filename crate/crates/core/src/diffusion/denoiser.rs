use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffusionError, DiffusionSchedule};
use crate::rng::standard_normal_vec;

/// Anything that maps `(x_t, t, y, ŝ)` to an estimate of `x₀`.
pub trait Denoiser: Sync {
    fn denoise(
        &self,
        schedule: &DiffusionSchedule,
        x_t: &[f64],
        t: usize,
        y: &[f64],
        s_norm: &[f64],
    ) -> Result<Vec<f64>, DiffusionError>;
}

/// Layer sizes of the conditional MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub n: usize,
    pub d: usize,
    pub m_a: usize,
    /// Count of time features; even, split into sin/cos pairs.
    pub k_time: usize,
    pub hidden: [usize; 2],
}

impl Architecture {
    pub fn new(n: usize, d: usize, m_a: usize, hidden: [usize; 2]) -> Self {
        Architecture { n, d, m_a, k_time: 8, hidden }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.n == 0 || self.d == 0 || self.m_a == 0 || self.hidden.contains(&0) {
            return Err(DiffusionError::Config(format!("all layer sizes must be positive: {self:?}")));
        }
        if self.k_time == 0 || !self.k_time.is_multiple_of(2) {
            return Err(DiffusionError::Config(format!("k_time must be even and positive, got {}", self.k_time)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.n + self.k_time + self.d + self.m_a
    }

    /// `(in, out)` for each of the three dense layers.
    pub fn layers(&self) -> [(usize, usize); 3] {
        [(self.input_dim(), self.hidden[0]), (self.hidden[0], self.hidden[1]), (self.hidden[1], self.n)]
    }

    /// Σ (in + 1)·out.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// `[sin(π·2ᵏ·τ), cos(π·2ᵏ·τ)]` for `k = 0..k_time/2`.
pub fn time_features(tau: f64, k_time: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_time);
    for k in 0..k_time / 2 {
        let phase = std::f64::consts::PI * (1u64 << k) as f64 * tau;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    out
}

/// Two tanh hidden layers and a linear output, stored as one flat vector.
///
/// Each layer is laid out as its `out × in` weight matrix (row-major) followed
/// by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    arch: Architecture,
    theta: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

fn dense(theta: &[f64], offset: usize, (ins, outs): (usize, usize), x: &[f64], out: &mut Vec<f64>) {
    let w = &theta[offset..offset + ins * outs];
    let b = &theta[offset + ins * outs..offset + (ins + 1) * outs];
    out.clear();
    for o in 0..outs {
        out.push(b[o] + crate::linalg::dot(&w[o * ins..(o + 1) * ins], x));
    }
}

/// Accumulates parameter gradients of one dense layer and returns `∂L/∂x`.
fn dense_backward(
    theta: &[f64],
    grad: &mut [f64],
    offset: usize,
    (ins, outs): (usize, usize),
    x: &[f64],
    dout: &[f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; ins];
    for o in 0..outs {
        let g = dout[o];
        if g == 0.0 {
            continue;
        }
        let row = offset + o * ins;
        for i in 0..ins {
            grad[row + i] += g * x[i];
            dx[i] += g * theta[row + i];
        }
        grad[offset + ins * outs + o] += g;
    }
    dx
}

impl DenoiserParams {
    pub fn zeros(arch: Architecture) -> Result<Self, DiffusionError> {
        arch.validate()?;
        Ok(DenoiserParams { arch, theta: vec![0.0; arch.param_count()] })
    }

    /// Weights `N(0, 1/fan_in)`, output layer shrunk by `output_scale`; zero biases.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, output_scale: f64, rng: &mut R) -> Result<Self, DiffusionError> {
        let mut p = Self::zeros(arch)?;
        let mut offset = 0;
        for (layer, (ins, outs)) in arch.layers().into_iter().enumerate() {
            let scale = if layer == 2 { output_scale } else { 1.0 } / (ins as f64).sqrt();
            for (w, z) in p.theta[offset..offset + ins * outs].iter_mut().zip(standard_normal_vec(rng, ins * outs)) {
                *w = scale * z;
            }
            offset += (ins + 1) * outs;
        }
        Ok(p)
    }

    pub fn from_theta(arch: Architecture, theta: Vec<f64>) -> Result<Self, DiffusionError> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(DiffusionError::DimensionMismatch {
                what: "parameter vector",
                expected: arch.param_count(),
                got: theta.len(),
            });
        }
        Ok(DenoiserParams { arch, theta })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn is_finite(&self) -> bool {
        crate::linalg::all_finite(&self.theta)
    }

    /// Concatenated network input `[x_t ; time features ; y ; ŝ]`.
    pub fn input(
        &self,
        schedule: &DiffusionSchedule,
        x_t: &[f64],
        t: usize,
        y: &[f64],
        s_norm: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        schedule.check_t(t)?;
        let a = &self.arch;
        for (what, expected, got) in
            [("noisy sample", a.n, x_t.len()), ("identity embedding", a.d, y.len()), ("attributes", a.m_a, s_norm.len())]
        {
            if expected != got {
                return Err(DiffusionError::DimensionMismatch { what, expected, got });
            }
        }
        let mut input = Vec::with_capacity(a.input_dim());
        input.extend_from_slice(x_t);
        input.extend(time_features(t as f64 / schedule.steps() as f64, a.k_time));
        input.extend_from_slice(y);
        input.extend_from_slice(s_norm);
        Ok(input)
    }

    pub fn forward(&self, input: Vec<f64>) -> (Vec<f64>, ForwardCache) {
        let [l1, l2, l3] = self.arch.layers();
        let o2 = (l1.0 + 1) * l1.1;
        let o3 = o2 + (l2.0 + 1) * l2.1;
        let mut h1 = Vec::new();
        dense(&self.theta, 0, l1, &input, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::new();
        dense(&self.theta, o2, l2, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = Vec::new();
        dense(&self.theta, o3, l3, &h2, &mut out);
        (out, ForwardCache { input, h1, h2 })
    }

    /// Adds `∂L/∂θ` into `grad` given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grad: &mut [f64]) {
        let [l1, l2, l3] = self.arch.layers();
        let o2 = (l1.0 + 1) * l1.1;
        let o3 = o2 + (l2.0 + 1) * l2.1;
        let mut dh2 = dense_backward(&self.theta, grad, o3, l3, &cache.h2, dout);
        dh2.iter_mut().zip(&cache.h2).for_each(|(g, h)| *g *= 1.0 - h * h);
        let mut dh1 = dense_backward(&self.theta, grad, o2, l2, &cache.h1, &dh2);
        dh1.iter_mut().zip(&cache.h1).for_each(|(g, h)| *g *= 1.0 - h * h);
        dense_backward(&self.theta, grad, 0, l1, &cache.input, &dh1);
    }
}

impl Denoiser for DenoiserParams {
    fn denoise(
        &self,
        schedule: &DiffusionSchedule,
        x_t: &[f64],
        t: usize,
        y: &[f64],
        s_norm: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        let input = self.input(schedule, x_t, t, y, s_norm)?;
        Ok(self.forward(input).0)
    }
}

/// Wraps a closure `(x_t, t) -> x̂₀`; used to force denoiser outputs.
pub struct FnDenoiser<F>(pub F);

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Sync,
{
    fn denoise(
        &self,
        schedule: &DiffusionSchedule,
        x_t: &[f64],
        t: usize,
        _y: &[f64],
        _s_norm: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        schedule.check_t(t)?;
        Ok((self.0)(x_t, t))
    }
}

/// Exact `E[x₀ | x_t]` when `x₀ ~ N(mean, var·I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMeanDenoiser {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl Denoiser for PosteriorMeanDenoiser {
    fn denoise(
        &self,
        schedule: &DiffusionSchedule,
        x_t: &[f64],
        t: usize,
        _y: &[f64],
        _s_norm: &[f64],
    ) -> Result<Vec<f64>, DiffusionError> {
        schedule.check_t(t)?;
        let ab = schedule.alpha_bar(t);
        let gain = self.var * ab.sqrt() / (ab * self.var + 1.0 - ab);
        Ok(self.mean.iter().zip(x_t).map(|(m, x)| m + gain * (x - ab.sqrt() * m)).collect())
    }
}
