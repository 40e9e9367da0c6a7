use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    batch_loss_gradient, loss_at, DenoiserParams, DiffusionError, DiffusionSchedule, LossBreakdown, LossConfig,
    LossDraw, TrainingExample,
};
use crate::rng::{self, StreamRng};
use crate::sphere::sample_uniform_sphere;
use crate::toyworld::{AttributeRanges, ToyWorld, WorldError};

/// Adam settings and run length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { steps: 2000, batch: 16, lr: 1e-3, betas: (0.9, 0.999), eps: 1e-8, seed: 0 }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.batch == 0 {
            return Err(DiffusionError::Config("batch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(DiffusionError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(DiffusionError::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(DiffusionError::Config(format!("eps must be finite and > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Bias-corrected first/second moment optimizer.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(cfg: OptimConfig, dim: usize) -> Self {
        Adam { cfg, m: vec![0.0; dim], v: vec![0.0; dim], step: 0 }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        let (b1, b2) = self.cfg.betas;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
    }
}

/// Everything that shapes the training data and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub attr_ranges: AttributeRanges,
    /// Size of the fixed held-out set used for the before/after comparison.
    pub eval_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optim: OptimConfig::default(),
            loss: LossConfig::default(),
            attr_ranges: AttributeRanges::default(),
            eval_size: 256,
        }
    }
}

/// One row of the training log: the batch-mean loss terms at a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub denoising: f64,
    pub inner_product: f64,
    pub one_step: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub params: DenoiserParams,
    pub log: Vec<LogRow>,
    /// Held-out mean loss before the first step.
    pub initial: LossBreakdown,
    /// Held-out mean loss after the last step.
    pub last: LossBreakdown,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("non-finite values at step {step}: {reason}")]
    Numerical {
        step: usize,
        reason: String,
        last_good: Box<DenoiserParams>,
        log: Vec<LogRow>,
    },
}

/// Draws one `(x₀, f(x₀), ŝ)` example: a uniform identity, uniform attributes.
pub fn draw_example<R: Rng + ?Sized>(
    world: &ToyWorld,
    ranges: &AttributeRanges,
    rng: &mut R,
) -> Result<TrainingExample, DiffusionError> {
    loop {
        let y_true = sample_uniform_sphere(world.d(), rng)?;
        let s = ranges.sample(rng);
        let x0 = world.generate_sample(&y_true, &s, rng)?;
        match world.embed(&x0) {
            Ok(y) => return Ok(TrainingExample { x0, y: y.into_inner(), s_norm: s.normalized() }),
            Err(WorldError::ZeroNorm(_)) => continue,
            Err(e) => return Err(e.into()),
        }
    }
}

/// Fixed held-out examples and draws, derived from the training seed.
pub fn eval_set(
    world: &ToyWorld,
    schedule: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<Vec<(TrainingExample, LossDraw)>, DiffusionError> {
    let mut r = rng::substream(cfg.optim.seed, &[0xe7a1]);
    (0..cfg.eval_size)
        .map(|_| {
            let ex = draw_example(world, &cfg.attr_ranges, &mut r)?;
            let draw = LossDraw::sample(schedule, world.n(), &mut r);
            Ok((ex, draw))
        })
        .collect()
}

/// Mean loss of `params` over a fixed evaluation set.
pub fn evaluate(
    params: &DenoiserParams,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    loss: &LossConfig,
    set: &[(TrainingExample, LossDraw)],
) -> Result<LossBreakdown, DiffusionError> {
    let parts = set
        .iter()
        .map(|(ex, draw)| loss_at(params, schedule, world, loss, ex, draw))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LossBreakdown::mean(&parts))
}

/// Draws fresh examples each step and runs Adam on the batch-mean loss.
///
/// Single-threaded; identical inputs give bit-identical parameters and logs.
pub fn train(
    init: DenoiserParams,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.optim.validate()?;
    cfg.loss.validate()?;
    cfg.attr_ranges.validate().map_err(DiffusionError::from)?;
    let arch = init.arch();
    if (arch.n, arch.d, arch.m_a) != (world.n(), world.d(), world.m_a()) {
        return Err(DiffusionError::Config(format!(
            "denoiser dims (n={}, d={}, m_a={}) do not match world (n={}, d={}, m_a={})",
            arch.n,
            arch.d,
            arch.m_a,
            world.n(),
            world.d(),
            world.m_a()
        ))
        .into());
    }
    let held_out = eval_set(world, schedule, cfg)?;
    let initial = evaluate(&init, schedule, world, &cfg.loss, &held_out)?;

    let mut params = init;
    let mut adam = Adam::new(cfg.optim, params.theta().len());
    let mut r: StreamRng = rng::substream(cfg.optim.seed, &[0x7a1]);
    let mut log = Vec::with_capacity(cfg.optim.steps);
    for step in 0..cfg.optim.steps {
        let batch = (0..cfg.optim.batch)
            .map(|_| draw_example(world, &cfg.attr_ranges, &mut r))
            .collect::<Result<Vec<_>, _>>()?;
        let draws: Vec<LossDraw> = batch.iter().map(|_| LossDraw::sample(schedule, world.n(), &mut r)).collect();
        let numerical = |reason: String, params: &DenoiserParams, log: &[LogRow]| TrainError::Numerical {
            step,
            reason,
            last_good: Box::new(params.clone()),
            log: log.to_vec(),
        };
        let (loss, grad) = match batch_loss_gradient(&params, schedule, world, &cfg.loss, &batch, &draws) {
            Ok(v) => v,
            Err(DiffusionError::Numerical(reason)) => return Err(numerical(reason, &params, &log)),
            Err(e) => return Err(e.into()),
        };
        if !loss.is_finite() {
            return Err(numerical(format!("loss {}", loss.total), &params, &log));
        }
        let before = params.clone();
        adam.update(params.theta_mut(), &grad);
        if !params.is_finite() {
            return Err(numerical("parameters".into(), &before, &log));
        }
        log.push(LogRow {
            step,
            denoising: loss.denoising,
            inner_product: loss.inner_product,
            one_step: loss.one_step,
            total: loss.total,
        });
    }
    let last = evaluate(&params, schedule, world, &cfg.loss, &held_out)?;
    Ok(TrainReport { params, log, initial, last })
}

/// CSV with header `step,denoising,inner_product,one_step,total`.
pub fn write_log<W: Write>(log: &[LogRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    if log.is_empty() {
        w.write_record(["step", "denoising", "inner_product", "one_step", "total"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Architecture;

    fn setup(steps: usize, lr: f64) -> (ToyWorld, DiffusionSchedule, DenoiserParams, TrainConfig) {
        let world = ToyWorld::build(2, 2, 4, 0.05, 1).unwrap();
        let sched = DiffusionSchedule::build(20, 0.85, 0.99).unwrap();
        let params = DenoiserParams::init(Architecture::new(2, 2, 4, [16, 16]), 0.1, &mut rng::stream(3)).unwrap();
        let cfg = TrainConfig { optim: OptimConfig { steps, lr, ..OptimConfig::default() }, eval_size: 32, ..TrainConfig::default() };
        (world, sched, params, cfg)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (world, sched, params, cfg) = setup(5, 0.0);
        let report = train(params.clone(), &sched, &world, &cfg).unwrap();
        assert_eq!(report.params, params);
        assert_eq!(report.log.len(), 5);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (world, sched, params, cfg) = setup(300, 3e-3);
        let a = train(params.clone(), &sched, &world, &cfg).unwrap();
        let b = train(params, &sched, &world, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert!(a.last.total < a.initial.total);
    }

    #[test]
    fn non_finite_parameters_abort_with_last_good() {
        let (world, sched, mut params, cfg) = setup(3, 1e-3);
        params.theta_mut()[0] = f64::NAN;
        let err = train(params, &sched, &world, &cfg);
        match err {
            Err(TrainError::Numerical { step, log, .. }) => {
                assert_eq!(step, 0);
                assert!(log.is_empty());
            }
            Err(TrainError::Diffusion(_)) => {}
            other => panic!("expected a numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_optimizer_settings() {
        let (world, sched, params, mut cfg) = setup(3, f64::NAN);
        assert!(matches!(train(params.clone(), &sched, &world, &cfg), Err(TrainError::Diffusion(DiffusionError::Config(_)))));
        cfg.optim.lr = 1e-3;
        cfg.optim.batch = 0;
        assert!(train(params, &sched, &world, &cfg).is_err());
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let rows = vec![LogRow { step: 0, denoising: 1.0, inner_product: -0.1, one_step: 0.5, total: 1.4 }];
        let mut buf = Vec::new();
        write_log(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("step,denoising,inner_product,one_step,total"));
        assert_eq!(text.lines().count(), 2);
        let mut empty = Vec::new();
        write_log(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }
}
