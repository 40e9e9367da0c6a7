//! Hypersphere geometry.
//!
//! Two problems live here. The first places `N` identity anchors on
//! `S^{d-1}` as far apart as possible (the Tammes problem), by projected
//! subgradient descent on the largest pairwise cosine. The second produces, for one anchor `w`, a set of
//! embeddings whose cosines with `w` hit prescribed targets `ν_j`:
//!
//! ```text
//! min_Y ‖ wᵀ norm(Y) − ν ‖²
//! ```
//!
//! where `norm` normalizes each column. Its global optimum has a closed form,
//! `y_j = ν_j w + √(1−ν_j²) u_j` with `u_j ⟂ w`, which is what the dataset
//! generator uses. The iterative solver descends the same objective directly
//! and serves as a cross-check.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{axpy, dot, norm};
use crate::rng::{self, standard_normal_vec};

/// Norms at or below this are treated as zero.
pub const ZERO_NORM: f64 = 1e-12;

const STEP_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SphereError {
    #[error("cannot normalize a vector of norm {0:e}")]
    ZeroNorm(f64),
    #[error("dimension {0} is too small; the sphere needs d >= 2")]
    Dimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("target similarity {value} at position {index} is outside [-1, 1]")]
    Domain { index: usize, value: f64 },
    #[error("no convergence after {iters} iterations (residual {:e})", best.residual)]
    MaxIters { iters: usize, best: Box<PerturbationResult> },
}

/// A point on the unit sphere `S^{d-1}`, `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Canonical basis vector `e_axis`.
    pub fn basis(d: usize, axis: usize) -> Result<Self, SphereError> {
        if d < 2 {
            return Err(SphereError::Dimension(d));
        }
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        Ok(UnitVector(v))
    }
}

/// Keeps vectors already unit to within `1e-12` bit-for-bit, so stored
/// embeddings survive a round trip; normalizes anything else.
impl TryFrom<Vec<f64>> for UnitVector {
    type Error = SphereError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        if v.len() >= 2 && (norm(&v) - 1.0).abs() <= 1e-12 {
            return Ok(UnitVector(v));
        }
        normalize(&v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Returns `v / ‖v‖`.
pub fn normalize(v: &[f64]) -> Result<UnitVector, SphereError> {
    if v.len() < 2 {
        return Err(SphereError::Dimension(v.len()));
    }
    let n = norm(v);
    if !(n > ZERO_NORM) || !n.is_finite() {
        return Err(SphereError::ZeroNorm(n));
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Uniform direction on `S^{d-1}` (a normalized standard Gaussian draw).
pub fn sample_uniform_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector, SphereError> {
    if d < 2 {
        return Err(SphereError::Dimension(d));
    }
    loop {
        let g = standard_normal_vec(rng, d);
        if let Ok(u) = normalize(&g) {
            return Ok(u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TammesConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TammesConfig {
    fn default() -> Self {
        TammesConfig { max_iters: 3000, step_size: 0.2, restarts: 4, seed: 0 }
    }
}

impl TammesConfig {
    pub fn validate(&self) -> Result<(), SphereError> {
        if self.max_iters == 0 {
            return Err(SphereError::Config("max_iters must be positive".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(SphereError::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        if self.restarts == 0 {
            return Err(SphereError::Config("restarts must be positive".into()));
        }
        Ok(())
    }
}

/// Anchors from [`solve_tammes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<UnitVector>,
    pub max_pairwise_cosine: f64,
    /// `(iteration, max pairwise cosine)` for the initial point and every
    /// accepted improvement of the winning restart.
    pub optimizer_trace: Vec<(usize, f64)>,
}

/// Largest `w_iᵀ w_j` over `i != j`.
pub fn max_pairwise_cosine(points: &[UnitVector]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.max(points[i].dot(&points[j]));
        }
    }
    best
}

/// Largest pairwise cosine and the pair attaining it (lowest indices on ties).
fn worst_pair(points: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 1);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let c = dot(&points[i], &points[j]);
            if c > best.0 {
                best = (c, i, j);
            }
        }
    }
    best
}

/// Unit tangent at `at` pointing towards `towards`, or `None` if they are (anti)parallel.
fn tangent_towards(at: &[f64], towards: &[f64]) -> Option<Vec<f64>> {
    let mut t = towards.to_vec();
    axpy(-dot(towards, at), at, &mut t);
    let len = norm(&t);
    (len > ZERO_NORM).then(|| t.into_iter().map(|v| v / len).collect())
}

fn step_away(point: &[f64], from: &[f64], step: f64) -> Vec<f64> {
    match tangent_towards(point, from) {
        Some(t) => {
            let mut moved = point.to_vec();
            axpy(-step, &t, &mut moved);
            normalize(&moved).map(UnitVector::into_inner).unwrap_or_else(|_| point.to_vec())
        }
        None => point.to_vec(),
    }
}

/// Places `count` maximally separated anchors on `S^{dim-1}`.
///
/// Minimizes the largest pairwise cosine by projected subgradient descent:
/// each iteration moves the two points of the closest pair apart along the
/// great circle through them, with a step that decays geometrically from
/// `step_size` to `1e-4 · step_size`, then re-projects onto the sphere. The
/// iterate itself is not monotone, so the best point seen so far is kept as
/// the incumbent; `optimizer_trace` records every incumbent improvement and is
/// therefore non-increasing. The restart with the smallest final maximum
/// cosine wins.
pub fn solve_tammes(count: usize, dim: usize, config: &TammesConfig) -> Result<AnchorSet, SphereError> {
    if count < 2 {
        return Err(SphereError::Config(format!("need at least two anchors, got {count}")));
    }
    if dim < 2 {
        return Err(SphereError::Dimension(dim));
    }
    config.validate()?;

    let mut best: Option<AnchorSet> = None;
    for restart in 0..config.restarts {
        let mut rng = rng::substream(config.seed, &[restart as u64]);
        let mut points: Vec<Vec<f64>> = (0..count)
            .map(|_| sample_uniform_sphere(dim, &mut rng).map(UnitVector::into_inner))
            .collect::<Result<_, _>>()?;
        let (mut worst, mut i, mut j) = worst_pair(&points);
        let mut incumbent = (points.clone(), worst);
        let mut trace = vec![(0, worst)];

        for iter in 1..=config.max_iters {
            let step = config.step_size * STEP_FLOOR.powf(iter as f64 / config.max_iters as f64);
            let moved_i = step_away(&points[i], &points[j], step);
            let moved_j = step_away(&points[j], &points[i], step);
            points[i] = moved_i;
            points[j] = moved_j;
            (worst, i, j) = worst_pair(&points);
            if worst < incumbent.1 {
                incumbent = (points.clone(), worst);
                trace.push((iter, worst));
            }
        }

        let anchors: Vec<UnitVector> = incumbent.0.into_iter().map(UnitVector).collect();
        let candidate = AnchorSet { max_pairwise_cosine: max_pairwise_cosine(&anchors), anchors, optimizer_trace: trace };
        let better = match &best {
            None => true,
            Some(b) => candidate.max_pairwise_cosine < b.max_pairwise_cosine,
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Embeddings placed around one anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub embeddings: Vec<UnitVector>,
    pub raw: Vec<Vec<f64>>,
    pub target_similarities: Vec<f64>,
    pub achieved_similarities: Vec<f64>,
    /// Objective value at the returned point. The closed-form solver reports
    /// the exact optimum, 0.
    pub residual: f64,
}

impl PerturbationResult {
    /// `Σ_j (achieved_j − ν_j)²` recomputed from the stored similarities.
    pub fn recomputed_residual(&self) -> f64 {
        self.achieved_similarities
            .iter()
            .zip(&self.target_similarities)
            .map(|(a, t)| (a - t) * (a - t))
            .sum()
    }
}

fn check_targets(nus: &[f64]) -> Result<(), SphereError> {
    for (index, &value) in nus.iter().enumerate() {
        if !(value.abs() <= 1.0) {
            return Err(SphereError::Domain { index, value });
        }
    }
    Ok(())
}

/// Uniform unit vector in the orthogonal complement of `w`.
///
/// For `d = 2` the complement is a line and the sign is a fair coin.
pub fn sample_orthogonal<R: Rng + ?Sized>(w: &UnitVector, rng: &mut R) -> UnitVector {
    let w = w.as_slice();
    if w.len() == 2 {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return UnitVector(vec![-w[1] * sign, w[0] * sign]);
    }
    loop {
        let mut g = standard_normal_vec(rng, w.len());
        let along = dot(&g, w);
        axpy(-along, w, &mut g);
        if let Ok(u) = normalize(&g) {
            return u;
        }
    }
}

/// `ν w + √(1−ν²) u` for a unit `u ⟂ w`.
pub fn perturb_along(w: &UnitVector, nu: f64, u: &UnitVector) -> Result<Vec<f64>, SphereError> {
    if u.dim() != w.dim() {
        return Err(SphereError::DimensionMismatch { expected: w.dim(), got: u.dim() });
    }
    check_targets(&[nu])?;
    let perp = (1.0 - nu * nu).max(0.0).sqrt();
    Ok(w.as_slice().iter().zip(u.as_slice()).map(|(a, b)| nu * a + perp * b).collect())
}

/// Global optimum of the per-anchor perturbation problem.
pub fn solve_perturbation_closed_form<R: Rng + ?Sized>(
    w: &UnitVector,
    nus: &[f64],
    rng: &mut R,
) -> Result<PerturbationResult, SphereError> {
    check_targets(nus)?;
    let mut raw = Vec::with_capacity(nus.len());
    let mut embeddings = Vec::with_capacity(nus.len());
    let mut achieved = Vec::with_capacity(nus.len());
    for &nu in nus {
        let u = sample_orthogonal(w, rng);
        let y = perturb_along(w, nu, &u)?;
        let e = normalize(&y)?;
        achieved.push(w.dot(&e));
        raw.push(y);
        embeddings.push(e);
    }
    Ok(PerturbationResult {
        embeddings,
        raw,
        target_similarities: nus.to_vec(),
        achieved_similarities: achieved,
        residual: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterativeConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        IterativeConfig { max_iters: 500_000, step_size: 0.3, tol: 1e-10, seed: 0 }
    }
}

fn perturbation_snapshot(w: &UnitVector, cols: &[Vec<f64>], nus: &[f64]) -> Result<PerturbationResult, SphereError> {
    let embeddings: Vec<UnitVector> = cols.iter().map(|c| normalize(c)).collect::<Result<_, _>>()?;
    let achieved: Vec<f64> = embeddings.iter().map(|e| w.dot(e)).collect();
    let residual = achieved.iter().zip(nus).map(|(a, t)| (a - t) * (a - t)).sum();
    Ok(PerturbationResult {
        embeddings,
        raw: cols.to_vec(),
        target_similarities: nus.to_vec(),
        achieved_similarities: achieved,
        residual,
    })
}

/// Gradient descent on the perturbation objective over unnormalized columns.
///
/// Columns are rescaled to unit length after every step; the objective is
/// scale invariant per column so this only conditions the step size.
/// Convergence is tested after each step, so `max_iters = 0` always reports
/// [`SphereError::MaxIters`] with the initial point attached.
pub fn solve_perturbation_iterative(
    w: &UnitVector,
    nus: &[f64],
    config: &IterativeConfig,
) -> Result<PerturbationResult, SphereError> {
    check_targets(nus)?;
    if !(config.step_size > 0.0) || !(config.tol >= 0.0) {
        return Err(SphereError::Config("step_size must be positive and tol non-negative".into()));
    }
    let mut rng = rng::substream(config.seed, &[0x5eed]);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(nus.len());
    for &nu in nus {
        let mut col = sample_uniform_sphere(w.dim(), &mut rng)?.into_inner();
        // c = ±1 is a stationary point of the objective; start off it unless it is the target.
        let c = dot(&col, w.as_slice());
        if c.abs() > 1.0 - 1e-9 && (c - nu).abs() > 1e-12 {
            col = perturb_along(w, 0.0, &sample_orthogonal(w, &mut rng))?;
        }
        cols.push(col);
    }

    let mut best = perturbation_snapshot(w, &cols, nus)?;
    for _ in 0..config.max_iters {
        for (col, &nu) in cols.iter_mut().zip(nus) {
            let len = norm(col);
            let c = dot(col, w.as_slice()) / len;
            // d/dy (c − ν)² with c = wᵀy/‖y‖
            let coef = 2.0 * (c - nu) / len;
            let grad: Vec<f64> = w.as_slice().iter().zip(col.iter()).map(|(wi, yi)| coef * (wi - c * yi / len)).collect();
            axpy(-config.step_size, &grad, col);
            let len = norm(col);
            if len > ZERO_NORM {
                col.iter_mut().for_each(|v| *v /= len);
            }
        }
        let snap = perturbation_snapshot(w, &cols, nus)?;
        if snap.residual < best.residual {
            best = snap;
        }
        if best.residual <= config.tol {
            return Ok(best);
        }
    }
    Err(SphereError::MaxIters { iters: config.max_iters, best: Box::new(best) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn uv(v: &[f64]) -> UnitVector {
        normalize(v).unwrap()
    }

    #[test]
    fn normalize_three_four() {
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-15);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_rejects_zero_and_short_vectors() {
        assert!(matches!(normalize(&[0.0, 0.0]), Err(SphereError::ZeroNorm(_))));
        assert!(matches!(normalize(&[1.0]), Err(SphereError::Dimension(1))));
    }

    #[test]
    fn uniform_sphere_draws() {
        let mut rng = rng::stream(11);
        let u = sample_uniform_sphere(2, &mut rng).unwrap();
        assert!((norm(u.as_slice()) - 1.0).abs() < 1e-9);
        assert!(matches!(sample_uniform_sphere(1, &mut rng), Err(SphereError::Dimension(1))));

        let mut mean = [0.0; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let u = sample_uniform_sphere(3, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(u.as_slice()) {
                *m += v / draws as f64;
            }
        }
        for m in mean {
            assert!(m.abs() < 0.05, "coordinate mean {m}");
        }
    }

    #[test]
    fn tammes_two_points_are_antipodal() {
        for d in [2, 3, 5] {
            let set = solve_tammes(2, d, &TammesConfig::default()).unwrap();
            assert!(set.max_pairwise_cosine <= -1.0 + 1e-6, "d={d}: {}", set.max_pairwise_cosine);
        }
    }

    #[test]
    fn tammes_triangle_and_tetrahedron() {
        let tri = solve_tammes(3, 2, &TammesConfig::default()).unwrap();
        assert!((tri.max_pairwise_cosine + 0.5).abs() < 1e-3, "{}", tri.max_pairwise_cosine);
        let tet = solve_tammes(4, 3, &TammesConfig::default()).unwrap();
        assert!((tet.max_pairwise_cosine + 1.0 / 3.0).abs() < 1e-3, "{}", tet.max_pairwise_cosine);
    }

    #[test]
    fn tammes_trace_is_monotone_and_max_cos_is_consistent() {
        let set = solve_tammes(6, 3, &TammesConfig { seed: 5, ..Default::default() }).unwrap();
        assert_eq!(set.optimizer_trace.last().unwrap().1, set.max_pairwise_cosine);
        for pair in set.optimizer_trace.windows(2) {
            assert!(pair[1].1 <= pair[0].1);
            assert!(pair[1].0 > pair[0].0);
        }
        assert!((set.max_pairwise_cosine - max_pairwise_cosine(&set.anchors)).abs() <= 1e-12);
        // Octahedron optimum.
        assert!(set.max_pairwise_cosine < 1e-3, "{}", set.max_pairwise_cosine);
    }

    #[test]
    fn tammes_octagon_on_the_circle() {
        let set = solve_tammes(8, 2, &TammesConfig::default()).unwrap();
        assert!((set.max_pairwise_cosine - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{}", set.max_pairwise_cosine);
    }

    #[test]
    fn tammes_rejects_bad_config() {
        let bad = |c: TammesConfig| matches!(solve_tammes(3, 2, &c), Err(SphereError::Config(_)));
        assert!(bad(TammesConfig { max_iters: 0, ..Default::default() }));
        assert!(bad(TammesConfig { step_size: 0.0, ..Default::default() }));
        assert!(bad(TammesConfig { restarts: 0, ..Default::default() }));
        assert!(matches!(solve_tammes(1, 2, &TammesConfig::default()), Err(SphereError::Config(_))));
    }

    #[test]
    fn closed_form_forced_direction() {
        let w = uv(&[1.0, 0.0, 0.0]);
        let u = uv(&[0.0, 1.0, 0.0]);
        let y = perturb_along(&w, 0.6, &u).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15 && y[2] == 0.0);
        assert!((dot(&y, w.as_slice()) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn closed_form_edge_targets() {
        let mut rng = rng::stream(2);
        let w = uv(&[0.3, -0.2, 0.9]);
        let r = solve_perturbation_closed_form(&w, &[1.0], &mut rng).unwrap();
        for (a, b) in r.embeddings[0].as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        let w2 = uv(&[1.0, 0.0]);
        let r = solve_perturbation_closed_form(&w2, &[0.0], &mut rng).unwrap();
        assert!(r.achieved_similarities[0].abs() <= 1e-12);
        assert!(matches!(
            solve_perturbation_closed_form(&w2, &[0.5, 1.2], &mut rng),
            Err(SphereError::Domain { index: 1, .. })
        ));
    }

    #[test]
    fn closed_form_two_dimensional_uses_both_signs() {
        let mut rng = rng::stream(9);
        let w = uv(&[1.0, 0.0]);
        let r = solve_perturbation_closed_form(&w, &vec![0.5; 64], &mut rng).unwrap();
        let pos = r.embeddings.iter().filter(|e| e.as_slice()[1] > 0.0).count();
        assert!(pos > 0 && pos < 64);
    }

    #[test]
    fn iterative_matches_closed_form_targets() {
        let w = uv(&[1.0, 0.0, 0.0]);
        let cfg = IterativeConfig { tol: 1e-10, ..Default::default() };
        let r = solve_perturbation_iterative(&w, &[0.6, 0.8], &cfg).unwrap();
        assert!(r.residual <= 1e-10);
        assert!((r.achieved_similarities[0] - 0.6).abs() < 1e-5);
        assert!((r.achieved_similarities[1] - 0.8).abs() < 1e-5);
        assert!((r.residual - r.recomputed_residual()).abs() <= 1e-12);
    }

    #[test]
    fn iterative_unit_target_converges_to_anchor() {
        let w = uv(&[0.0, 1.0, 1.0]);
        let r = solve_perturbation_iterative(&w, &[1.0], &IterativeConfig::default()).unwrap();
        assert!(r.residual <= 1e-10);
        assert!(r.embeddings[0].dot(&w) > 1.0 - 1e-5);
    }

    #[test]
    fn iterative_zero_budget_reports_max_iters() {
        let w = uv(&[1.0, 0.0]);
        let cfg = IterativeConfig { max_iters: 0, ..Default::default() };
        match solve_perturbation_iterative(&w, &[0.5], &cfg) {
            Err(SphereError::MaxIters { iters: 0, best }) => assert_eq!(best.embeddings.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn normalize_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 2..8)) {
            prop_assume!(norm(&v) > 1e-6);
            let once = normalize(&v).unwrap();
            let twice = normalize(once.as_slice()).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn closed_form_hits_every_target(
            seed in any::<u64>(),
            d in 2usize..7,
            nus in prop::collection::vec(0.0f64..0.999, 1..10),
        ) {
            let mut rng = rng::stream(seed);
            let w = sample_uniform_sphere(d, &mut rng).unwrap();
            let r = solve_perturbation_closed_form(&w, &nus, &mut rng).unwrap();
            prop_assert_eq!(r.residual, 0.0);
            prop_assert!(r.recomputed_residual() <= 1e-24);
            for (e, &nu) in r.embeddings.iter().zip(&nus) {
                prop_assert!((w.dot(e) - nu).abs() <= 1e-12);
            }
        }

        #[test]
        fn iterative_converges_on_uniform_targets(
            seed in 0u64..1000,
            lb in 0.0f64..0.5,
            width in 0.05f64..0.45,
        ) {
            let mut rng = rng::stream(seed);
            let w = sample_uniform_sphere(4, &mut rng).unwrap();
            let nus: Vec<f64> = (0..4).map(|_| lb + width * rng.random::<f64>()).collect();
            let cfg = IterativeConfig { seed, ..Default::default() };
            let r = solve_perturbation_iterative(&w, &nus, &cfg).unwrap();
            prop_assert!(r.residual <= cfg.tol);
        }

        #[test]
        fn simplex_floor_is_respected(seed in 0u64..50, n in 2usize..5) {
            let d = 3;
            let cfg = TammesConfig { seed, max_iters: 300, restarts: 1, ..Default::default() };
            let set = solve_tammes(n, d, &cfg).unwrap();
            prop_assert!(set.max_pairwise_cosine >= -1.0 / (n as f64 - 1.0) - 1e-9);
        }
    }
}
