use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserParams, DiffusionError, DiffusionSchedule};
use crate::linalg::{dot, sq_dist};
use crate::rng::standard_normal_vec;
use crate::toyworld::{ToyWorld, WorldError};

/// Term weights. Every scale defaults to 1; zeroing one isolates the others.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the attribute alignment inside the inner-product term.
    pub w_attr: f64,
    pub denoising_scale: f64,
    pub inner_scale: f64,
    pub one_step_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { w_attr: 0.0, denoising_scale: 1.0, inner_scale: 1.0, one_step_scale: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let all = [self.w_attr, self.denoising_scale, self.inner_scale, self.one_step_scale];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DiffusionError::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Per-sample loss terms. `constant_c` is always 0; it does not depend on θ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub denoising: f64,
    pub inner_product: f64,
    pub one_step: f64,
    pub constant_c: f64,
    pub total: f64,
    /// Set when `x̂₀` fell in the embedder's null space and the inner term was dropped.
    #[serde(default)]
    pub degenerate_embedding: bool,
}

impl LossBreakdown {
    fn new(denoising: f64, inner_product: f64, one_step: f64, degenerate_embedding: bool) -> Self {
        LossBreakdown {
            denoising,
            inner_product,
            one_step,
            constant_c: 0.0,
            total: denoising + inner_product + one_step,
            degenerate_embedding,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.denoising.is_finite() && self.inner_product.is_finite() && self.one_step.is_finite()
    }

    /// Term-wise mean; `degenerate_embedding` is set if any input had it.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let k = items.len().max(1) as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / k;
        LossBreakdown::new(
            sum(|b| b.denoising),
            sum(|b| b.inner_product),
            sum(|b| b.one_step),
            items.iter().any(|b| b.degenerate_embedding),
        )
    }
}

/// One training example: clean sample, identity target, normalized attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub x0: Vec<f64>,
    pub y: Vec<f64>,
    pub s_norm: Vec<f64>,
}

/// The Monte Carlo draws behind one loss evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossDraw {
    /// Diffusion step, uniform on `2..=T`.
    pub t: usize,
    /// Noise producing `x_t`.
    pub eps_t: Vec<f64>,
    /// Independent noise producing `x₁`.
    pub eps_1: Vec<f64>,
}

impl LossDraw {
    pub fn sample<R: Rng + ?Sized>(schedule: &DiffusionSchedule, n: usize, rng: &mut R) -> Self {
        let t = rng.random_range(2..=schedule.steps());
        let eps_t = standard_normal_vec(rng, n);
        let eps_1 = standard_normal_vec(rng, n);
        LossDraw { t, eps_t, eps_1 }
    }
}

fn check_step(schedule: &DiffusionSchedule, t: usize) -> Result<(), DiffusionError> {
    if (2..=schedule.steps()).contains(&t) {
        Ok(())
    } else {
        Err(DiffusionError::Index { t, min: 2, max: schedule.steps() })
    }
}

/// Inner-product term value and its gradient with respect to `x̂₀`.
fn inner_term(
    world: &ToyWorld,
    coeff: f64,
    w_attr: f64,
    x_hat: &[f64],
    y: &[f64],
    s_norm: &[f64],
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>, bool), DiffusionError> {
    if coeff == 0.0 {
        return Ok((0.0, want_grad.then(|| vec![0.0; x_hat.len()]), false));
    }
    let cos = match world.identity_alignment(x_hat, y) {
        Ok(c) => c,
        Err(WorldError::ZeroNorm(_)) => return Ok((0.0, want_grad.then(|| vec![0.0; x_hat.len()]), true)),
        Err(e) => return Err(e.into()),
    };
    let mut value = cos;
    if w_attr != 0.0 {
        value += w_attr * dot(s_norm, &world.predict_attributes(x_hat)?);
    }
    let grad = if want_grad {
        let mut g = world.embed_jacobian_vector(x_hat, y)?;
        if w_attr != 0.0 {
            crate::linalg::axpy(w_attr, &world.attribute_score_normalized(x_hat, s_norm)?, &mut g);
        }
        g.iter_mut().for_each(|v| *v *= -coeff);
        Some(g)
    } else {
        None
    };
    Ok((-coeff * value, grad, false))
}

/// Loss of one example under fixed draws, for any denoiser.
pub fn loss_at(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    cfg: &LossConfig,
    ex: &TrainingExample,
    draw: &LossDraw,
) -> Result<LossBreakdown, DiffusionError> {
    check_step(schedule, draw.t)?;
    let t = draw.t;
    let x_t = schedule.noise_with(&ex.x0, t, &draw.eps_t)?;
    let x_1 = schedule.noise_with(&ex.x0, 1, &draw.eps_1)?;
    let hat_t = denoiser.denoise(schedule, &x_t, t, &ex.y, &ex.s_norm)?;
    let hat_1 = denoiser.denoise(schedule, &x_1, 1, &ex.y, &ex.s_norm)?;
    let denoising = cfg.denoising_scale * schedule.mu(t) * sq_dist(&ex.x0, &hat_t);
    let coeff = cfg.inner_scale * schedule.lambda_kappa(t);
    let (inner, _, degenerate) = inner_term(world, coeff, cfg.w_attr, &hat_t, &ex.y, &ex.s_norm, false)?;
    let one_step = cfg.one_step_scale * 0.5 * sq_dist(&ex.x0, &hat_1);
    Ok(LossBreakdown::new(denoising, inner, one_step, degenerate))
}

/// Loss of one example and its exact gradient with respect to θ, added into `grad`.
pub fn loss_and_gradient_at(
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    cfg: &LossConfig,
    ex: &TrainingExample,
    draw: &LossDraw,
    grad: &mut [f64],
) -> Result<LossBreakdown, DiffusionError> {
    check_step(schedule, draw.t)?;
    let t = draw.t;
    let x_t = schedule.noise_with(&ex.x0, t, &draw.eps_t)?;
    let x_1 = schedule.noise_with(&ex.x0, 1, &draw.eps_1)?;
    let (hat_t, cache_t) = params.forward(params.input(schedule, &x_t, t, &ex.y, &ex.s_norm)?);
    let (hat_1, cache_1) = params.forward(params.input(schedule, &x_1, 1, &ex.y, &ex.s_norm)?);

    let mu = cfg.denoising_scale * schedule.mu(t);
    let denoising = mu * sq_dist(&ex.x0, &hat_t);
    let coeff = cfg.inner_scale * schedule.lambda_kappa(t);
    let (inner, inner_grad, degenerate) = inner_term(world, coeff, cfg.w_attr, &hat_t, &ex.y, &ex.s_norm, true)?;
    let one_step = cfg.one_step_scale * 0.5 * sq_dist(&ex.x0, &hat_1);

    let mut d_hat_t = inner_grad.unwrap_or_else(|| vec![0.0; hat_t.len()]);
    for ((g, h), x) in d_hat_t.iter_mut().zip(&hat_t).zip(&ex.x0) {
        *g += 2.0 * mu * (h - x);
    }
    let d_hat_1: Vec<f64> = hat_1.iter().zip(&ex.x0).map(|(h, x)| cfg.one_step_scale * (h - x)).collect();
    params.backward(&cache_t, &d_hat_t, grad);
    params.backward(&cache_1, &d_hat_1, grad);
    Ok(LossBreakdown::new(denoising, inner, one_step, degenerate))
}

/// Mean loss and mean gradient over a batch under the given draws.
pub fn batch_loss_gradient(
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    cfg: &LossConfig,
    batch: &[TrainingExample],
    draws: &[LossDraw],
) -> Result<(LossBreakdown, Vec<f64>), DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::Config("batch must not be empty".into()));
    }
    if draws.len() != batch.len() {
        return Err(DiffusionError::DimensionMismatch { what: "draw list", expected: batch.len(), got: draws.len() });
    }
    let mut grad = vec![0.0; params.theta().len()];
    let mut parts = Vec::with_capacity(batch.len());
    for (ex, draw) in batch.iter().zip(draws) {
        parts.push(loss_and_gradient_at(params, schedule, world, cfg, ex, draw, &mut grad)?);
    }
    let k = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(DiffusionError::Numerical(format!("gradient component {i} is {}", grad[i])));
    }
    Ok((LossBreakdown::mean(&parts), grad))
}

/// [`batch_loss_gradient`] with one fresh [`LossDraw`] per example taken from `rng`.
pub fn loss_gradient<R: Rng + ?Sized>(
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    cfg: &LossConfig,
    batch: &[TrainingExample],
    rng: &mut R,
) -> Result<(LossBreakdown, Vec<f64>), DiffusionError> {
    let n = params.arch().n;
    let draws: Vec<LossDraw> = batch.iter().map(|_| LossDraw::sample(schedule, n, rng)).collect();
    batch_loss_gradient(params, schedule, world, cfg, batch, &draws)
}
