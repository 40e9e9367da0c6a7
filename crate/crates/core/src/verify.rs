//! Numerical oracles for the adjusted-density construction, the score
//! decomposition, Tweedie's identity and the loss bound, on 1D densities
//! where quadrature and closed forms are available.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{prior_kl, Denoiser, DiffusionError, DiffusionSchedule, PosteriorMeanDenoiser};
use crate::rng;
use crate::sampler::{conditional_score, ScoreScaling};

/// Largest change of a normalized integral allowed when the grid spacing is halved.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
const MIN_POINTS: usize = 1024;
const COVERAGE_SD: f64 = 8.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("invalid toy specification: {0}")]
    Config(String),
    #[error("{check}: halving the grid spacing changed the integral by {change:e}")]
    GridTooCoarse { check: String, change: f64 },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub details: String,
}

impl VerificationReport {
    pub fn new(check_name: impl Into<String>, max_abs_error: f64, tolerance: f64, details: String) -> Self {
        VerificationReport {
            check_name: check_name.into(),
            max_abs_error,
            tolerance,
            // NaN fails.
            passed: max_abs_error <= tolerance,
            details,
        }
    }
}

/// One JSON object per line.
pub fn write_reports<W: Write>(reports: &[VerificationReport], mut out: W) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (x - mean).powi(2) / var - 0.5 * (2.0 * PI * var).ln()
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let inner: f64 = values.iter().sum();
    h * (inner - 0.5 * (values[0] + values[values.len() - 1]))
}

fn grid(lo: f64, hi: f64, points: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    ((0..points).map(|i| lo + i as f64 * h).collect(), h)
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    m + terms.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `p(a|b)` and `p(b|a)` of a 1D toy. `p(b|a) = N(b; a, var_ba)` in both cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density_id", rename_all = "snake_case")]
pub enum ToyDensity {
    /// `p(a|b) = N(a; b, var_ab)`.
    GaussianPair { b: f64, var_ab: f64, var_ba: f64 },
    /// `p(a|b) = Σ_k weights_k N(a; b + offsets_k, variances_k)`.
    GaussianMixture { b: f64, offsets: Vec<f64>, variances: Vec<f64>, weights: Vec<f64>, var_ba: f64 },
}

impl ToyDensity {
    pub fn b(&self) -> f64 {
        match self {
            ToyDensity::GaussianPair { b, .. } | ToyDensity::GaussianMixture { b, .. } => *b,
        }
    }

    fn var_ba(&self) -> f64 {
        match self {
            ToyDensity::GaussianPair { var_ba, .. } | ToyDensity::GaussianMixture { var_ba, .. } => *var_ba,
        }
    }

    pub fn log_p_ab(&self, a: f64) -> f64 {
        match self {
            ToyDensity::GaussianPair { b, var_ab, .. } => log_normal_pdf(a, *b, *var_ab),
            ToyDensity::GaussianMixture { b, offsets, variances, weights, .. } => log_sum_exp(
                offsets.iter().zip(variances).zip(weights).map(|((m, v), p)| p.ln() + log_normal_pdf(a, b + m, *v)),
            ),
        }
    }

    pub fn log_p_ba(&self, a: f64) -> f64 {
        log_normal_pdf(self.b(), a, self.var_ba())
    }

    /// `∂ₐ log p(a|b)`.
    pub fn score_ab(&self, a: f64) -> f64 {
        match self {
            ToyDensity::GaussianPair { b, var_ab, .. } => (b - a) / var_ab,
            ToyDensity::GaussianMixture { b, offsets, variances, weights, .. } => {
                let logs: Vec<f64> = offsets
                    .iter()
                    .zip(variances)
                    .zip(weights)
                    .map(|((m, v), p)| p.ln() + log_normal_pdf(a, b + m, *v))
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for ((l, m), v) in logs.iter().zip(offsets).zip(variances) {
                    let r = (l - top).exp();
                    num += r * (b + m - a) / v;
                    den += r;
                }
                num / den
            }
        }
    }

    /// `∂ₐ log p(b|a)`.
    pub fn score_ba(&self, a: f64) -> f64 {
        (self.b() - a) / self.var_ba()
    }

    fn components(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(self.b(), self.var_ba().sqrt())];
        match self {
            ToyDensity::GaussianPair { b, var_ab, .. } => out.push((*b, var_ab.sqrt())),
            ToyDensity::GaussianMixture { b, offsets, variances, .. } => {
                out.extend(offsets.iter().zip(variances).map(|(m, v)| (b + m, v.sqrt())))
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticToy {
    pub density: ToyDensity,
    /// Exponent on `p(b|a)`.
    pub w: f64,
    pub grid: (f64, f64),
    pub points: usize,
}

struct Normalized {
    a: Vec<f64>,
    density: Vec<f64>,
    h: f64,
}

impl AnalyticToy {
    /// Unit variances on a wide grid.
    pub fn gaussian_pair(b: f64, w: f64) -> Self {
        AnalyticToy {
            density: ToyDensity::GaussianPair { b, var_ab: 1.0, var_ba: 1.0 },
            w,
            grid: (b - 16.0, b + 16.0),
            points: 8193,
        }
    }

    /// A bimodal `p(a|b)`.
    pub fn gaussian_mixture(b: f64, w: f64) -> Self {
        AnalyticToy {
            density: ToyDensity::GaussianMixture {
                b,
                offsets: vec![-1.5, 1.0],
                variances: vec![0.5, 1.0],
                weights: vec![0.4, 0.6],
                var_ba: 2.0,
            },
            w,
            grid: (b - 16.0, b + 16.0),
            points: 16385,
        }
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        let bad = |m: String| Err(VerifyError::Config(m));
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad(format!("w must be finite and non-negative, got {}", self.w));
        }
        if self.points < MIN_POINTS {
            return bad(format!("need at least {MIN_POINTS} grid points, got {}", self.points));
        }
        let (lo, hi) = self.grid;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return bad(format!("grid [{lo}, {hi}] is empty or non-finite"));
        }
        if !self.density.b().is_finite() || !(self.density.var_ba() > 0.0 && self.density.var_ba().is_finite()) {
            return bad("b must be finite and var_ba positive".into());
        }
        match &self.density {
            ToyDensity::GaussianPair { var_ab, .. } => {
                if !(*var_ab > 0.0 && var_ab.is_finite()) {
                    return bad("var_ab must be positive".into());
                }
            }
            ToyDensity::GaussianMixture { offsets, variances, weights, .. } => {
                if offsets.is_empty() || offsets.len() != variances.len() || offsets.len() != weights.len() {
                    return bad("mixture parameter lists must be non-empty and of equal length".into());
                }
                if offsets.iter().any(|m| !m.is_finite()) || variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("mixture offsets must be finite and variances positive".into());
                }
                if weights.iter().any(|p| !(*p > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return bad("mixture weights must be positive and sum to 1".into());
                }
            }
        }
        for (c, sd) in self.density.components() {
            if lo > c - COVERAGE_SD * sd || hi < c + COVERAGE_SD * sd {
                return bad(format!("grid [{lo}, {hi}] does not cover {COVERAGE_SD} sd around {c} (sd {sd})"));
            }
        }
        Ok(())
    }

    /// `log p(a|b) + w·log p(b|a)`.
    pub fn log_unnormalized(&self, a: f64) -> f64 {
        self.density.log_p_ab(a) + self.w * self.density.log_p_ba(a)
    }

    /// Closed form of the normalized density where one exists.
    pub fn closed_form(&self, a: f64) -> Option<f64> {
        match &self.density {
            ToyDensity::GaussianPair { b, var_ab, var_ba } => {
                Some(log_normal_pdf(a, *b, 1.0 / (1.0 / var_ab + self.w / var_ba)).exp())
            }
            _ if self.w == 0.0 => Some(self.density.log_p_ab(a).exp()),
            _ => None,
        }
    }

    fn normalize(&self, check: &str) -> Result<Normalized, VerifyError> {
        self.validate()?;
        let (a, h) = grid(self.grid.0, self.grid.1, self.points);
        let logs: Vec<f64> = a.iter().map(|&x| self.log_unnormalized(x)).collect();
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = trapezoid(&logs.iter().map(|l| (l - shift).exp()).collect::<Vec<_>>(), h);
        let (fine, hf) = grid(self.grid.0, self.grid.1, 2 * self.points - 1);
        let z_fine = trapezoid(&fine.iter().map(|&x| (self.log_unnormalized(x) - shift).exp()).collect::<Vec<_>>(), hf);
        let change = (z_fine / z - 1.0).abs();
        if !(change < QUADRATURE_TOLERANCE) {
            return Err(VerifyError::GridTooCoarse { check: check.into(), change });
        }
        let density = logs.iter().map(|l| (l - shift).exp() / z).collect();
        Ok(Normalized { a, density, h })
    }
}

/// Normalizes `p(a|b)·p(b|a)^w` by quadrature and compares with the closed form.
pub fn verify_lemma_a1(toy: &AnalyticToy) -> Result<VerificationReport, VerifyError> {
    let name = "adjusted_density_normalizable";
    let n = toy.normalize(name)?;
    let integral_error = (trapezoid(&n.density, n.h) - 1.0).abs();
    let pointwise = n
        .a
        .iter()
        .zip(&n.density)
        .map(|(&a, &p)| toy.closed_form(a).map(|q| (p - q).abs()))
        .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)));
    let (err, tol, what) = match pointwise {
        Some(p) => (p.max(integral_error), 1e-6, "pointwise against closed form"),
        None => (integral_error, QUADRATURE_TOLERANCE, "integral only"),
    };
    let details = format!(
        "w={}, b={}, {} points, integral error {integral_error:.3e}, {what}",
        toy.w,
        toy.density.b(),
        toy.points
    );
    Ok(VerificationReport::new(name, err, tol, details))
}

/// Central differences of the quadrature-normalized log-density against
/// `∂ log p(a|b) + w·∂ log p(b|a)` at 100 grid points.
pub fn verify_score_decomposition(toy: &AnalyticToy) -> Result<VerificationReport, VerifyError> {
    let name = "score_decomposition";
    let n = toy.normalize(name)?;
    let top = n.density.iter().cloned().fold(0.0, f64::max);
    let candidates: Vec<usize> = (1..n.a.len() - 1).filter(|&i| n.density[i] >= 1e-6 * top).collect();
    if candidates.len() < 100 {
        return Err(VerifyError::GridTooCoarse { check: name.into(), change: f64::NAN });
    }
    let mut err = 0.0f64;
    for k in 0..100 {
        let i = candidates[k * (candidates.len() - 1) / 99];
        let fd = (n.density[i + 1].ln() - n.density[i - 1].ln()) / (2.0 * n.h);
        let a = n.a[i];
        let analytic = toy.density.score_ab(a) + toy.w * toy.density.score_ba(a);
        err = err.max((fd - analytic).abs());
    }
    Ok(VerificationReport::new(name, err, 1e-5, format!("w={}, b={}, h={:.3e}", toy.w, toy.density.b(), n.h)))
}

/// For `x₀ ~ N(mu0, 1)` the marginal of `x_t` is `N(√ᾱ_t·mu0, 1)`; the
/// posterior-mean denoiser through the exact score map must reproduce its score.
pub fn verify_tweedie(schedule: &DiffusionSchedule, mu0: f64, t: usize) -> Result<VerificationReport, VerifyError> {
    schedule.check_t(t)?;
    let denoiser = PosteriorMeanDenoiser { mean: vec![mu0], var: 1.0 };
    let center = schedule.alpha_bar(t).sqrt() * mu0;
    let mut err = 0.0f64;
    for k in 0..100 {
        let x = center - 5.0 + 10.0 * k as f64 / 99.0;
        let (score, _) = conditional_score(&denoiser, schedule, &[x], t, &[], &[], ScoreScaling::Exact)?;
        err = err.max((score[0] + (x - center)).abs());
    }
    Ok(VerificationReport::new("tweedie", err, 1e-9, format!("mu0={mu0}, t={t}")))
}

/// A 1D world with Gaussian `p(x|y,s)` and a two-factor vMF-style reversed
/// likelihood `r(x) = J²·exp(κ(y·g(x) + s·x))`, `g(x) = x/√(1+x²)`, `y = ±1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossBoundWorld {
    /// `p(x|y,s) = N(offset + coef_y·y + coef_s·s, var)`.
    pub offset: f64,
    pub coef_y: f64,
    pub coef_s: f64,
    pub var: f64,
    pub kappa: f64,
    pub steps: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub draws: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub hermite_nodes: usize,
}

impl Default for LossBoundWorld {
    fn default() -> Self {
        LossBoundWorld {
            offset: 0.2,
            coef_y: 0.8,
            coef_s: 0.5,
            var: 0.3,
            kappa: 2.0,
            steps: 50,
            alpha_min: 0.8,
            alpha_max: 0.99,
            draws: 50,
            seed: 0,
            grid_points: 8193,
            hermite_nodes: 24,
        }
    }
}

/// Loss and adjusted negative log-likelihood at one `(x, y, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundDraw {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub loss: f64,
    pub adjusted_nll: f64,
}

impl BoundDraw {
    pub fn gap(&self) -> f64 {
        self.loss - self.adjusted_nll
    }
}

fn embed_1d(x: f64) -> f64 {
    x / (1.0 + x * x).sqrt()
}

/// Probabilists' Gauss–Hermite rule by Golub–Welsch; weights sum to one.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect()
}

impl LossBoundWorld {
    pub fn validate(&self) -> Result<(), VerifyError> {
        let ok = self.var > 0.0
            && self.kappa >= 0.0
            && [self.offset, self.coef_y, self.coef_s, self.var, self.kappa].iter().all(|v| v.is_finite())
            && self.draws > 0
            && self.grid_points >= MIN_POINTS
            && self.hermite_nodes >= 2;
        if ok {
            Ok(())
        } else {
            Err(VerifyError::Config(format!("invalid loss-bound world {self:?}")))
        }
    }

    fn mean(&self, y: f64, s: f64) -> f64 {
        self.offset + self.coef_y * y + self.coef_s * s
    }

    /// `log J²` of the scalar normalizer `J = 1/(2 cosh κ)`.
    fn log_j_sq(&self) -> f64 {
        -2.0 * (2.0 * self.kappa.cosh()).ln()
    }

    fn log_r(&self, x: f64, y: f64, s: f64) -> f64 {
        self.log_j_sq() + self.kappa * (y * embed_1d(x) + s * x)
    }
}

/// Mean and variance of `x₀` under the reverse chain driven by the linear
/// posterior-mean denoiser of `N(m, v)` data, unit-variance decoder at `t = 1`.
fn model_marginal(alpha: &[f64], m: f64, v: f64) -> (f64, f64) {
    let steps = alpha.len();
    let mut ab = Vec::with_capacity(steps + 1);
    ab.push(1.0);
    for a in alpha {
        ab.push(ab.last().unwrap() * a);
    }
    let affine = |t: usize| {
        let gain = v * ab[t].sqrt() / (ab[t] * v + 1.0 - ab[t]);
        (m * (1.0 - gain * ab[t].sqrt()), gain)
    };
    let (mut mean, mut var) = (0.0, 1.0);
    for t in (2..=steps).rev() {
        let (at, ab_t, ab_prev) = (alpha[t - 1], ab[t], ab[t - 1]);
        let c_hat = ab_prev.sqrt() * (1.0 - at) / (1.0 - ab_t);
        let c_x = at.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let sq = (1.0 - at) * (1.0 - ab_prev) / (1.0 - ab_t);
        let (shift, gain) = affine(t);
        let slope = c_hat * gain + c_x;
        mean = c_hat * shift + slope * mean;
        var = slope * slope * var + sq;
    }
    let (shift, gain) = affine(1);
    (shift + gain * mean, gain * gain * var + 1.0)
}

fn lambda_oracle(t: usize, steps: usize) -> f64 {
    0.5 * (1.0 - 1.0 / (1.0 + (-(t as f64) / steps as f64).exp()))
}

/// Evaluates the full loss, constant included, and `−log p̃` at seeded draws.
pub fn loss_bound_draws(world: &LossBoundWorld) -> Result<Vec<BoundDraw>, VerifyError> {
    world.validate()?;
    let schedule = DiffusionSchedule::build(world.steps, world.alpha_min, world.alpha_max)?;
    let steps = schedule.steps();
    let nodes = gauss_hermite(world.hermite_nodes);
    let w_oracle = (2..=steps).map(|t| lambda_oracle(t, steps)).sum::<f64>() / (steps - 1) as f64;
    let mut r = rng::stream(world.seed);
    let mut out = Vec::with_capacity(world.draws);
    for draw in 0..world.draws {
        let y = if r.random::<bool>() { 1.0 } else { -1.0 };
        let s = r.random_range(-1.0..=1.0);
        let m = world.mean(y, s);
        let x = m + world.var.sqrt() * rng::standard_normal_vec(&mut r, 1)[0];
        let denoiser = PosteriorMeanDenoiser { mean: vec![m], var: world.var };

        // log Z of p_θ(x)·r(x)^W by trapezoid with a halving check.
        let (pm, pv) = model_marginal(schedule.alphas(), m, world.var);
        let log_tilted = |x: f64| log_normal_pdf(x, pm, pv) + w_oracle * world.log_r(x, y, s);
        let half = 14.0 * pv.sqrt() + w_oracle * world.kappa * pv;
        let (lo, hi) = (pm - half, pm + half);
        let z_at = |points: usize| {
            let (g, h) = grid(lo, hi, points);
            trapezoid(&g.iter().map(|&v| log_tilted(v).exp()).collect::<Vec<_>>(), h)
        };
        let (z, z_fine) = (z_at(world.grid_points), z_at(2 * world.grid_points - 1));
        let change = (z_fine / z - 1.0).abs();
        if !(change < QUADRATURE_TOLERANCE) {
            return Err(VerifyError::GridTooCoarse { check: format!("loss_bound draw {draw}"), change });
        }
        let log_z = z.ln();
        let adjusted_nll = -(log_tilted(x) - log_z);

        let sq_err = |t: usize| -> Result<f64, VerifyError> {
            let mut e = 0.0;
            for &(node, weight) in &nodes {
                let xt = schedule.noise_with(&[x], t, &[node])?;
                let hat = denoiser.denoise(&schedule, &xt, t, &[y], &[s])?;
                e += weight * (x - hat[0]).powi(2);
            }
            Ok(e)
        };
        let mut denoising = 0.0;
        let mut inner = 0.0;
        let mut c_guidance = 0.0;
        for t in 2..=steps {
            let lambda = schedule.lambda_kappa(t) / schedule.kappa();
            denoising += schedule.mu(t) * sq_err(t)?;
            // The inner term sees x̂₀ = x₀, as in the bound's derivation.
            inner -= lambda * world.kappa * y * embed_1d(x);
            c_guidance -= lambda * (world.log_j_sq() + world.kappa * s * x);
        }
        let per_t = (steps - 1) as f64;
        let one_step = 0.5 * sq_err(1)?;
        let constant = c_guidance / per_t + 0.5 * (2.0 * PI).ln() + prior_kl(&schedule, &[x]) + log_z;
        let loss = denoising / per_t + inner / per_t + one_step + constant;
        out.push(BoundDraw { x, y, s, loss, adjusted_nll });
    }
    Ok(out)
}

/// `L ≥ −log p̃ − 1e−6` at every draw.
pub fn verify_loss_bound(world: &LossBoundWorld) -> Result<VerificationReport, VerifyError> {
    let draws = loss_bound_draws(world)?;
    let violation = draws.iter().map(|d| (-d.gap()).max(0.0)).fold(0.0, f64::max);
    let min_gap = draws.iter().map(BoundDraw::gap).fold(f64::INFINITY, f64::min);
    let mean_gap = draws.iter().map(BoundDraw::gap).sum::<f64>() / draws.len() as f64;
    let details = format!(
        "T={}, kappa={}, {} draws, min gap {min_gap:.6e}, mean gap {mean_gap:.6e}",
        world.steps,
        world.kappa,
        draws.len()
    );
    Ok(VerificationReport::new("loss_bound", violation, 1e-6, details))
}

/// Mean gap `L − (−log p̃)` per step count.
pub fn loss_bound_gap_sweep(world: &LossBoundWorld, steps: &[usize]) -> Result<Vec<(usize, f64)>, VerifyError> {
    steps
        .iter()
        .map(|&t| {
            let d = loss_bound_draws(&LossBoundWorld { steps: t, ..world.clone() })?;
            Ok((t, d.iter().map(BoundDraw::gap).sum::<f64>() / d.len() as f64))
        })
        .collect()
}

/// The mean gap must shrink strictly as the step count grows.
pub fn verify_gap_shrinks(world: &LossBoundWorld, steps: &[usize]) -> Result<VerificationReport, VerifyError> {
    let sweep = loss_bound_gap_sweep(world, steps)?;
    let worst = sweep.windows(2).map(|p| p[1].1 - p[0].1).fold(f64::NEG_INFINITY, f64::max);
    let details = sweep.iter().map(|(t, g)| format!("T={t}: {g:.6e}")).collect::<Vec<_>>().join(", ");
    // Equal gaps count as a failure.
    let err = if worst < 0.0 { 0.0 } else { worst.max(f64::MIN_POSITIVE) };
    Ok(VerificationReport::new("loss_bound_gap_shrinks", err, 0.0, details))
}

/// The standard battery.
pub fn verify_all() -> Result<Vec<VerificationReport>, VerifyError> {
    let mut reports = Vec::new();
    for toy in [
        AnalyticToy::gaussian_pair(0.0, 1.0),
        AnalyticToy::gaussian_pair(0.7, 0.0),
        AnalyticToy::gaussian_pair(-1.3, 2.0),
        AnalyticToy::gaussian_mixture(0.4, 1.0),
    ] {
        reports.push(verify_lemma_a1(&toy)?);
    }
    for toy in [
        AnalyticToy::gaussian_pair(0.0, 1.0),
        AnalyticToy::gaussian_pair(0.5, 0.0),
        AnalyticToy::gaussian_mixture(0.4, 1.5),
    ] {
        reports.push(verify_score_decomposition(&toy)?);
    }
    let schedule = DiffusionSchedule::build(50, 0.8, 0.99)?;
    for mu0 in [0.0, 1.3] {
        let per_t = (1..=schedule.steps()).map(|t| verify_tweedie(&schedule, mu0, t)).collect::<Result<Vec<_>, _>>()?;
        let worst = per_t.iter().map(|r| r.max_abs_error).fold(0.0, f64::max);
        reports.push(VerificationReport::new("tweedie", worst, 1e-9, format!("mu0={mu0}, all t in 1..={}", schedule.steps())));
    }
    let world = LossBoundWorld::default();
    reports.push(verify_loss_bound(&world)?);
    reports.push(verify_loss_bound(&LossBoundWorld { kappa: 0.0, ..world.clone() })?);
    reports.push(verify_gap_shrinks(&world, &[10, 50, 250])?);
    Ok(reports)
}
