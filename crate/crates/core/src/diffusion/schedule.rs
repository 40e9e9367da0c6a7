use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::rng::standard_normal_vec;

/// Variance schedule and every per-step coefficient of the training objective.
///
/// All accessors take the diffusion step `t` in `1..=T`. Coefficients that only
/// exist from `t = 2` (`σ_q²`, `μ`) panic below that; public operations check
/// `t` first and report [`DiffusionError::Index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct DiffusionSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_q_sq: Vec<f64>,
    mu: Vec<f64>,
    lambda_kappa: Vec<f64>,
    kappa: f64,
    guidance_weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    alpha: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for DiffusionSchedule {
    type Error = DiffusionError;
    fn try_from(r: ScheduleRepr) -> Result<Self, Self::Error> {
        DiffusionSchedule::from_alphas(r.alpha)
    }
}

impl From<DiffusionSchedule> for ScheduleRepr {
    fn from(s: DiffusionSchedule) -> Self {
        ScheduleRepr { alpha: s.alpha }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(λκ)_t = ½·(1 − sigmoid(t/T))`.
pub fn lambda_kappa_at(t: f64, steps: usize) -> f64 {
    0.5 * (1.0 - sigmoid(t / steps as f64))
}

impl DiffusionSchedule {
    /// `α_t` linear from `alpha_max` at `t = 1` down to `alpha_min` at `t = T`.
    pub fn build(steps: usize, alpha_min: f64, alpha_max: f64) -> Result<Self, DiffusionError> {
        if steps < 2 {
            return Err(DiffusionError::Config(format!("T must be at least 2, got {steps}")));
        }
        if !(alpha_min > 0.0 && alpha_min <= alpha_max && alpha_max < 1.0) {
            return Err(DiffusionError::Config(format!(
                "need 0 < alpha_min <= alpha_max < 1, got [{alpha_min}, {alpha_max}]"
            )));
        }
        let span = (steps - 1) as f64;
        let alpha = (0..steps).map(|i| alpha_max + (alpha_min - alpha_max) * i as f64 / span).collect();
        Self::from_alphas(alpha)
    }

    /// Derives all coefficients from an explicit `α_1..α_T`.
    pub fn from_alphas(alpha: Vec<f64>) -> Result<Self, DiffusionError> {
        let steps = alpha.len();
        if steps < 2 {
            return Err(DiffusionError::Config(format!("T must be at least 2, got {steps}")));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(DiffusionError::Config(format!("every alpha must lie in (0, 1), got {a}")));
        }
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        if !(alpha_bar[steps - 1] > 0.0) {
            return Err(DiffusionError::Config("cumulative alpha underflows to zero".into()));
        }
        let mut sigma_q_sq = Vec::with_capacity(steps - 1);
        let mut mu = Vec::with_capacity(steps - 1);
        let scale = (steps - 1) as f64 / 2.0;
        for i in 1..steps {
            let (a, ab, ab_prev) = (alpha[i], alpha_bar[i], alpha_bar[i - 1]);
            let s = (1.0 - a) * (1.0 - ab_prev) / (1.0 - ab);
            sigma_q_sq.push(s);
            mu.push(scale / s * ab_prev * (1.0 - a).powi(2) / (1.0 - ab).powi(2));
        }
        let lambda_kappa: Vec<f64> = (1..=steps).map(|t| lambda_kappa_at(t as f64, steps)).collect();
        let kappa = 1.0;
        let guidance_weight = lambda_kappa[1..].iter().map(|lk| lk / kappa).sum::<f64>() / (steps - 1) as f64;
        Ok(DiffusionSchedule { alpha, alpha_bar, sigma_q_sq, mu, lambda_kappa, kappa, guidance_weight })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn check_t(&self, t: usize) -> Result<(), DiffusionError> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(DiffusionError::Index { t, min: 1, max: self.steps() })
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `σ_q²(t) = (1 − α_t)(1 − ᾱ_{t−1})/(1 − ᾱ_t)`, defined for `t ≥ 2`.
    pub fn sigma_q_sq(&self, t: usize) -> f64 {
        assert!(t >= 2, "sigma_q_sq is defined for t >= 2");
        self.sigma_q_sq[t - 2]
    }

    /// `μ_t = (T−1)/(2σ_q²(t)) · ᾱ_{t−1}(1 − α_t)²/(1 − ᾱ_t)²`, defined for `t ≥ 2`.
    pub fn mu(&self, t: usize) -> f64 {
        assert!(t >= 2, "mu is defined for t >= 2");
        self.mu[t - 2]
    }

    pub fn lambda_kappa(&self, t: usize) -> f64 {
        self.lambda_kappa[t - 1]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Mean of `λ_t` over `t = 2..T`; the exponent on the reversed likelihood.
    pub fn guidance_weight(&self) -> f64 {
        self.guidance_weight
    }

    /// `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε` for a given `ε`.
    pub fn noise_with(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, DiffusionError> {
        self.check_t(t)?;
        if eps.len() != x0.len() {
            return Err(DiffusionError::DimensionMismatch { what: "noise", expected: x0.len(), got: eps.len() });
        }
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Draws `ε` and returns `(x_t, ε)`.
    pub fn forward_noise<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        t: usize,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>), DiffusionError> {
        self.check_t(t)?;
        let eps = standard_normal_vec(rng, x0.len());
        let xt = self.noise_with(x0, t, &eps)?;
        Ok((xt, eps))
    }
}

/// `KL(N(√ᾱ_T x₀, (1−ᾱ_T)I) ‖ N(0, I))`.
pub fn prior_kl(schedule: &DiffusionSchedule, x0: &[f64]) -> f64 {
    prior_kl_at(schedule.alpha_bar(schedule.steps()), x0)
}

fn prior_kl_at(alpha_bar: f64, x0: &[f64]) -> f64 {
    let v = 1.0 - alpha_bar;
    0.5 * x0.iter().map(|x| alpha_bar * x * x + v - 1.0 - v.ln()).sum::<f64>()
}
