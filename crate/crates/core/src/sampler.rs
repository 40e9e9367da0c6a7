//! Identity-preserving Langevin sampling.
//!
//! The field followed at step `t` is the adjusted score
//!
//! ```text
//! ∇log p̃(x_t | y, s) = ∇log p(x_t | y, s) + w · κ · ∇ₓ(yᵀ f(x_t) [+ ŝᵀ F(x_t)])
//! ```
//!
//! where the first term comes from the denoiser through Tweedie's formula and
//! `w` defaults to the schedule's guidance weight.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{Denoiser, DiffusionError, DiffusionSchedule};
use crate::linalg::{all_finite, axpy, norm};
use crate::rng::{self, standard_normal_vec};
use crate::toyworld::{AttributeVector, ToyWorld, WorldError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// The same `γ` at every step.
    Constant,
    /// `γ_t = γ·(1 − ᾱ_t)`.
    SnrScaled,
}

/// How the denoiser output is turned into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScaling {
    /// Tweedie's formula, `(√ᾱ_t·x̂₀ − x_t)/(1 − ᾱ_t)`.
    Exact,
    /// `(√ᾱ_t/√(1 − ᾱ_t))·(x̂₀ − x_t/√ᾱ_t)`: the exact score times `√(1 − ᾱ_t)`.
    NoiseScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub gamma: f64,
    pub gamma_mode: GammaMode,
    /// Replaces the schedule's guidance weight when set.
    pub guidance_weight_override: Option<f64>,
    /// Adds the attribute term to the reversed score.
    pub attr_guidance: bool,
    pub kappa: f64,
    pub seed: u64,
    pub record_trajectory: bool,
    pub score_scaling: ScoreScaling,
    /// Evaluates the reversed score at `x̂₀` instead of `x_t`.
    pub guide_at_denoised: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            gamma: 0.01,
            gamma_mode: GammaMode::Constant,
            guidance_weight_override: None,
            attr_guidance: false,
            kappa: 1.0,
            seed: 0,
            record_trajectory: false,
            score_scaling: ScoreScaling::Exact,
            guide_at_denoised: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(SampleError::Config(format!("gamma must be finite and > 0, got {}", self.gamma)));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(SampleError::Config(format!("kappa must be finite and > 0, got {}", self.kappa)));
        }
        if let Some(w) = self.guidance_weight_override {
            if !(w.is_finite() && w >= 0.0) {
                return Err(SampleError::Config(format!("guidance weight must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }

    /// Weight on the reversed score at a given schedule.
    pub fn guidance_weight(&self, schedule: &DiffusionSchedule) -> f64 {
        self.guidance_weight_override.unwrap_or(schedule.guidance_weight())
    }

    /// Step size at diffusion step `t`.
    pub fn step_size(&self, schedule: &DiffusionSchedule, t: usize) -> f64 {
        match self.gamma_mode {
            GammaMode::Constant => self.gamma,
            GammaMode::SnrScaled => self.gamma * (1.0 - schedule.alpha_bar(t)),
        }
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("non-finite state at step {t}")]
    Numerical { t: usize, trajectory: Box<Trajectory> },
}

impl From<WorldError> for SampleError {
    fn from(e: WorldError) -> Self {
        SampleError::Diffusion(e.into())
    }
}

/// Score of the noisy marginal from a denoised estimate.
pub fn tweedie_score(schedule: &DiffusionSchedule, x_t: &[f64], x_hat: &[f64], t: usize, scaling: ScoreScaling) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let root = ab.sqrt();
    match scaling {
        ScoreScaling::Exact => x_hat.iter().zip(x_t).map(|(h, x)| (root * h - x) / (1.0 - ab)).collect(),
        ScoreScaling::NoiseScaled => {
            let c = root / (1.0 - ab).sqrt();
            x_hat.iter().zip(x_t).map(|(h, x)| c * (h - x / root)).collect()
        }
    }
}

/// `∇log p(x_t | y, s)` through the denoiser. Also returns `x̂₀`.
pub fn conditional_score(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    x_t: &[f64],
    t: usize,
    y: &[f64],
    s_norm: &[f64],
    scaling: ScoreScaling,
) -> Result<(Vec<f64>, Vec<f64>), DiffusionError> {
    schedule.check_t(t)?;
    let x_hat = denoiser.denoise(schedule, x_t, t, y, s_norm)?;
    Ok((tweedie_score(schedule, x_t, &x_hat, t, scaling), x_hat))
}

/// `κ·∇ₓ(yᵀ f(x)) [+ κ·Vᵀŝ]`. A degenerate embedding yields zeros and `true`.
pub fn reversed_score(
    world: &ToyWorld,
    x: &[f64],
    y: &[f64],
    s_norm: &[f64],
    kappa: f64,
    attr_guidance: bool,
) -> Result<(Vec<f64>, bool), WorldError> {
    let mut g = match world.embed_jacobian_vector(x, y) {
        Ok(g) => g,
        Err(WorldError::ZeroNorm(_)) => return Ok((vec![0.0; x.len()], true)),
        Err(e) => return Err(e),
    };
    if attr_guidance {
        axpy(1.0, &world.attribute_score_normalized(x, s_norm)?, &mut g);
    }
    g.iter_mut().for_each(|v| *v *= kappa);
    Ok((g, false))
}

/// The adjusted score and the pieces it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedScore {
    pub conditional: Vec<f64>,
    pub reversed: Vec<f64>,
    pub weight: f64,
    pub adjusted: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub degenerate: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn adjusted_score(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    x_t: &[f64],
    t: usize,
    y: &[f64],
    s_norm: &[f64],
    cfg: &SamplerConfig,
) -> Result<AdjustedScore, SampleError> {
    let (conditional, x_hat) = conditional_score(denoiser, schedule, x_t, t, y, s_norm, cfg.score_scaling)?;
    let weight = cfg.guidance_weight(schedule);
    let at = if cfg.guide_at_denoised { &x_hat } else { x_t };
    let (reversed, degenerate) = reversed_score(world, at, y, s_norm, cfg.kappa, cfg.attr_guidance)?;
    let mut adjusted = conditional.clone();
    if weight != 0.0 {
        axpy(weight, &reversed, &mut adjusted);
    }
    Ok(AdjustedScore { conditional, reversed, weight, adjusted, x_hat, degenerate })
}

/// `x + γ·score + √(2γ)·ε`.
pub fn langevin_step(x: &[f64], score: &[f64], gamma: f64, eps: &[f64]) -> Vec<f64> {
    let noise = (2.0 * gamma).sqrt();
    x.iter().zip(score).zip(eps).map(|((x, s), e)| x + gamma * s + noise * e).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    pub t: usize,
    pub x: Vec<f64>,
    /// Norm of the score used to leave this state; 0 for the final state.
    pub score_norm: f64,
    pub cosine_to_target: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<TrajectoryState>,
}

impl Trajectory {
    /// Columns `t, x_0..x_{n-1}, score_norm, cosine_to_target`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |s| s.x.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend(["score_norm".to_string(), "cosine_to_target".to_string()]);
        w.write_record(&header)?;
        for s in &self.states {
            let mut row = vec![s.t.to_string()];
            row.extend(s.x.iter().map(|v| format!("{v:.16e}")));
            row.push(format!("{:.16e}", s.score_norm));
            row.push(format!("{:.16e}", s.cosine_to_target));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub x0: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    /// Steps at which the embedder was degenerate and guidance was dropped.
    pub degenerate_steps: usize,
}

fn cosine_to_target(world: &ToyWorld, x: &[f64], y: &[f64]) -> f64 {
    match world.identity_alignment(x, y) {
        Ok(c) if c.is_finite() => c.clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

/// Runs the chain `t = T..1` from `x_T ~ N(0, I)`, one update per step.
///
/// The chain's randomness comes only from `cfg.seed`.
pub fn sample(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    y: &[f64],
    s: &AttributeVector,
    cfg: &SamplerConfig,
) -> Result<SampleOutput, SampleError> {
    sample_normalized(denoiser, schedule, world, y, &s.normalized(), cfg)
}

/// [`sample`] with already-normalized attributes.
pub fn sample_normalized(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    y: &[f64],
    s_norm: &[f64],
    cfg: &SamplerConfig,
) -> Result<SampleOutput, SampleError> {
    cfg.validate()?;
    world.check_identity(y)?;
    world.check_attributes(s_norm)?;
    let mut r = rng::stream(cfg.seed);
    let mut x = standard_normal_vec(&mut r, world.n());
    let mut trajectory = cfg.record_trajectory.then(Trajectory::default);
    let mut degenerate_steps = 0;
    for t in (1..=schedule.steps()).rev() {
        let score = adjusted_score(denoiser, schedule, world, &x, t, y, s_norm, cfg)?;
        degenerate_steps += score.degenerate as usize;
        if let Some(tr) = trajectory.as_mut() {
            tr.states.push(TrajectoryState {
                t,
                x: x.clone(),
                score_norm: norm(&score.adjusted),
                cosine_to_target: cosine_to_target(world, &x, y),
            });
        }
        let eps = standard_normal_vec(&mut r, x.len());
        x = langevin_step(&x, &score.adjusted, cfg.step_size(schedule, t), &eps);
        if !all_finite(&x) {
            let mut tr = trajectory.unwrap_or_default();
            tr.states.push(TrajectoryState { t: t - 1, x, score_norm: 0.0, cosine_to_target: 0.0 });
            return Err(SampleError::Numerical { t: t - 1, trajectory: Box::new(tr) });
        }
    }
    if let Some(tr) = trajectory.as_mut() {
        tr.states.push(TrajectoryState { t: 0, x: x.clone(), score_norm: 0.0, cosine_to_target: cosine_to_target(world, &x, y) });
    }
    Ok(SampleOutput { x0: x, trajectory, degenerate_steps })
}

/// Cosine between a target identity and the embedding of a generated sample.
pub fn preservation(world: &ToyWorld, x0: &[f64], y: &[f64]) -> f64 {
    cosine_to_target(world, x0, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{Architecture, DenoiserParams, FnDenoiser, PosteriorMeanDenoiser};
    use crate::linalg::Matrix;
    use crate::linalg::dot;
    use crate::sphere::normalize;
    use rand::Rng;

    fn identity_world() -> ToyWorld {
        ToyWorld::from_parts(Matrix::eye(2, 2), Matrix::zeros(2, 4), Matrix::eye(2, 2), Matrix::eye(4, 2), 0.0, 0).unwrap()
    }

    fn schedule() -> DiffusionSchedule {
        DiffusionSchedule::build(30, 0.85, 0.99).unwrap()
    }

    fn quarter_schedule() -> DiffusionSchedule {
        // ᾱ_1 = 0.25
        DiffusionSchedule::from_alphas(vec![0.25, 0.5]).unwrap()
    }

    #[test]
    fn tweedie_fixed_point_and_printed_scaling() {
        let s = quarter_schedule();
        assert_eq!(tweedie_score(&s, &[1.0], &[2.0], 1, ScoreScaling::Exact), vec![0.0]);
        assert_eq!(tweedie_score(&s, &[1.0], &[2.0], 1, ScoreScaling::NoiseScaled), vec![0.0]);
        let printed = tweedie_score(&s, &[1.0], &[3.0], 1, ScoreScaling::NoiseScaled)[0];
        assert!((printed - 0.5 / 0.75f64.sqrt()).abs() < 1e-9);
        let exact = tweedie_score(&s, &[1.0], &[3.0], 1, ScoreScaling::Exact)[0];
        assert!((exact - 0.5 / 0.75).abs() < 1e-12);
        assert!((printed - exact * 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn exact_scaling_recovers_gaussian_score() {
        let s = schedule();
        let mu0 = 0.7;
        let d = PosteriorMeanDenoiser { mean: vec![mu0], var: 1.0 };
        for t in 1..=s.steps() {
            for i in 0..20 {
                let x = -3.0 + 0.3 * i as f64;
                let (score, _) = conditional_score(&d, &s, &[x], t, &[], &[], ScoreScaling::Exact).unwrap();
                assert!((score[0] + (x - s.alpha_bar(t).sqrt() * mu0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reversed_score_examples() {
        let world = identity_world();
        let x = [0.3, -1.1];
        let y = world.embed(&x).unwrap();
        let (g, degenerate) = reversed_score(&world, &x, y.as_slice(), &[0.0; 4], 1.0, false).unwrap();
        assert!(norm(&g) < 1e-15 && !degenerate);

        let y = normalize(&[1.0, 1.0]).unwrap();
        let s = [0.5, -0.2, 0.1, 0.0];
        let (one, _) = reversed_score(&world, &x, y.as_slice(), &s, 1.0, true).unwrap();
        let (two, _) = reversed_score(&world, &x, y.as_slice(), &s, 2.0, true).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a, *b);
        }
        let (zero, degenerate) = reversed_score(&world, &[0.0, 0.0], y.as_slice(), &s, 1.0, true).unwrap();
        assert!(degenerate && zero == vec![0.0, 0.0]);
    }

    #[test]
    fn reversed_score_matches_finite_differences() {
        let world = ToyWorld::build(4, 2, 4, 0.0, 8).unwrap();
        let mut r = rng::stream(4);
        let kappa = 1.7;
        for _ in 0..50 {
            let x = standard_normal_vec(&mut r, 4);
            let y = crate::sphere::sample_uniform_sphere(2, &mut r).unwrap();
            let s = AttributeVector::new(r.random_range(0.0..100.0), [10.0, -20.0, 30.0]).unwrap().normalized();
            let potential = |p: &[f64]| {
                kappa * (world.identity_alignment(p, y.as_slice()).unwrap() + dot(&s, &world.predict_attributes(p).unwrap()))
            };
            let (g, _) = reversed_score(&world, &x, y.as_slice(), &s, kappa, true).unwrap();
            let h = 1e-6;
            let fd: Vec<f64> = (0..4)
                .map(|i| {
                    let (mut a, mut b) = (x.clone(), x.clone());
                    a[i] += h;
                    b[i] -= h;
                    (potential(&a) - potential(&b)) / (2.0 * h)
                })
                .collect();
            let err = norm(&crate::linalg::sub(&g, &fd)) / norm(&g);
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn adjusted_score_decomposes() {
        let s = schedule();
        let world = ToyWorld::build(3, 2, 4, 0.0, 2).unwrap();
        let params = DenoiserParams::init(Architecture::new(3, 2, 4, [8, 8]), 1.0, &mut rng::stream(1)).unwrap();
        let y = normalize(&[0.3, 0.9]).unwrap();
        let sn = [0.1, 0.2, -0.3, 0.0];
        let mut r = rng::stream(2);
        for t in [1, 7, 30] {
            let x = standard_normal_vec(&mut r, 3);
            let cfg = SamplerConfig { attr_guidance: true, ..SamplerConfig::default() };
            let a = adjusted_score(&params, &s, &world, &x, t, y.as_slice(), &sn, &cfg).unwrap();
            for i in 0..3 {
                let lhs = a.adjusted[i] - a.conditional[i];
                let rhs = a.weight * a.reversed[i];
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + a.adjusted[i].abs()));
            }
            let off = SamplerConfig { guidance_weight_override: Some(0.0), ..cfg };
            let b = adjusted_score(&params, &s, &world, &x, t, y.as_slice(), &sn, &off).unwrap();
            assert_eq!(b.adjusted, b.conditional);

            let aligned = world.embed(&x).unwrap();
            let c = adjusted_score(&params, &s, &world, &x, t, aligned.as_slice(), &sn, &SamplerConfig::default()).unwrap();
            for (p, q) in c.adjusted.iter().zip(&c.conditional) {
                assert!((p - q).abs() < 1e-12 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn adjusted_score_matches_quadrature_density_score() {
        // x_t-marginal N(√ᾱ m, I) tilted by exp(w κ yᵀ x/‖x‖), normalized on a grid.
        let s = schedule();
        let world = identity_world();
        let m = [0.8, -0.4];
        let d = PosteriorMeanDenoiser { mean: m.to_vec(), var: 1.0 };
        let y = normalize(&[0.6, 0.8]).unwrap();
        let t = 12;
        let cfg = SamplerConfig::default();
        let w = cfg.guidance_weight(&s);
        let root = s.alpha_bar(t).sqrt();
        let log_unnorm = |p: &[f64]| {
            let q = -0.5 * ((p[0] - root * m[0]).powi(2) + (p[1] - root * m[1]).powi(2));
            let r = norm(p);
            q + if r > 0.0 { w * dot(y.as_slice(), p) / r } else { 0.0 }
        };
        let (lo, hi, k) = (-9.0, 9.0, 601);
        let hstep = (hi - lo) / (k - 1) as f64;
        let mut z = 0.0;
        for i in 0..k {
            for j in 0..k {
                let wt = if i == 0 || i == k - 1 { 0.5 } else { 1.0 } * if j == 0 || j == k - 1 { 0.5 } else { 1.0 };
                z += wt * log_unnorm(&[lo + i as f64 * hstep, lo + j as f64 * hstep]).exp();
            }
        }
        let log_z = (z * hstep * hstep).ln();
        let log_p = |p: &[f64]| log_unnorm(p) - log_z;
        let mut r = rng::stream(6);
        for _ in 0..20 {
            let x = standard_normal_vec(&mut r, 2);
            let a = adjusted_score(&d, &s, &world, &x, t, y.as_slice(), &[0.0; 4], &cfg).unwrap();
            let h = 1e-5;
            for i in 0..2 {
                let (mut p, mut q) = (x.clone(), x.clone());
                p[i] += h;
                q[i] -= h;
                let fd = (log_p(&p) - log_p(&q)) / (2.0 * h);
                assert!((fd - a.adjusted[i]).abs() < 1e-5, "{fd} vs {}", a.adjusted[i]);
            }
        }
    }

    #[test]
    fn single_deterministic_update() {
        let x = langevin_step(&[0.0, 0.0], &[1.0, -1.0], 0.01, &[0.0, 0.0]);
        assert_eq!(x, vec![0.01, -0.01]);
    }

    #[test]
    fn sampling_is_seeded_and_traced() {
        let s = schedule();
        let world = ToyWorld::build(2, 2, 4, 0.0, 3).unwrap();
        let params = DenoiserParams::init(Architecture::new(2, 2, 4, [8, 8]), 0.5, &mut rng::stream(1)).unwrap();
        let y = normalize(&[1.0, 0.0]).unwrap();
        let attrs = AttributeVector::neutral();
        let cfg = SamplerConfig { seed: 9, record_trajectory: true, ..SamplerConfig::default() };
        let a = sample(&params, &s, &world, y.as_slice(), &attrs, &cfg).unwrap();
        let b = sample(&params, &s, &world, y.as_slice(), &attrs, &cfg).unwrap();
        assert_eq!(a, b);
        let tr = a.trajectory.unwrap();
        assert_eq!(tr.states.len(), s.steps() + 1);
        assert_eq!(tr.states.last().unwrap().x, a.x0);
        assert!(tr.states.iter().all(|st| st.cosine_to_target.abs() <= 1.0 && st.cosine_to_target.is_finite()));
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), s.steps() + 2);
        assert!(text.starts_with("t,x_0,x_1,score_norm,cosine_to_target"));
    }

    #[test]
    fn exploding_chain_reports_trajectory() {
        let s = schedule();
        let world = identity_world();
        let blowup = FnDenoiser(|x: &[f64], _| x.iter().map(|v| v * 1e300).collect());
        let cfg = SamplerConfig { gamma: 1.0, ..SamplerConfig::default() };
        let err = sample(&blowup, &s, &world, &[1.0, 0.0], &AttributeVector::neutral(), &cfg).unwrap_err();
        match err {
            SampleError::Numerical { trajectory, .. } => assert!(!trajectory.states.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig { gamma: 0.0, ..SamplerConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig { kappa: -1.0, ..SamplerConfig::default() };
        assert!(bad.validate().is_err());
        let s = schedule();
        let snr = SamplerConfig { gamma_mode: GammaMode::SnrScaled, gamma: 2.0, ..SamplerConfig::default() };
        assert!((snr.step_size(&s, 5) - 2.0 * (1.0 - s.alpha_bar(5))).abs() < 1e-15);
    }

    #[test]
    fn frozen_quadratic_score_has_unit_stationary_variance() {
        // 200 independent chains, 10⁵ steps at γ = 1e-3, time-averaged after burn-in.
        let mut r = rng::stream(17);
        let (gamma, steps, burn) = (1e-3, 100_000, 10_000);
        let mut x = vec![0.0; 200];
        let (mut acc, mut count) = (0.0, 0usize);
        for step in 0..steps {
            let score: Vec<f64> = x.iter().map(|v| -v).collect();
            let eps = standard_normal_vec(&mut r, x.len());
            x = langevin_step(&x, &score, gamma, &eps);
            if step >= burn {
                acc += x.iter().map(|v| v * v).sum::<f64>();
                count += x.len();
            }
        }
        let var = acc / count as f64;
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }
}
