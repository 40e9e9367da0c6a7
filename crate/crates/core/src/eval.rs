//! Similarity statistics over generated datasets and guidance comparisons.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::SyntheticDataset;
use crate::diffusion::{Denoiser, DiffusionSchedule};
use crate::linalg::dot;
use crate::rng;
use crate::sampler::{preservation, sample, SampleError, SamplerConfig};
use crate::sphere::{sample_uniform_sphere, UnitVector};
use crate::toyworld::{AttributeRanges, ToyWorld, WorldError};

pub const BINS: usize = 40;
/// Above this many records, pairs are subsampled instead of enumerated.
pub const EXACT_PAIR_LIMIT: usize = 10_000;
/// Pair draws used when subsampling.
pub const SUBSAMPLED_PAIRS: usize = 2_000_000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("record {index}: {source}")]
    Embedding {
        index: usize,
        #[source]
        source: WorldError,
    },
    #[error("anchor-relative preservation needs dataset provenance with anchors")]
    MissingAnchors,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("invalid comparison configuration: {0}")]
    Config(String),
    #[error("histogram i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("histogram csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub pairs: u64,
    /// `None` when there are no pairs.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// [`BINS`] equal bins over `[-1, 1]`.
    pub histogram: Vec<u64>,
}

#[derive(Default)]
struct Accumulator {
    pairs: u64,
    sum: f64,
    sum_sq: f64,
    histogram: Vec<u64>,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { histogram: vec![0; BINS], ..Default::default() }
    }

    fn push(&mut self, c: f64) {
        self.pairs += 1;
        self.sum += c;
        self.sum_sq += c * c;
        self.histogram[bin_of(c)] += 1;
    }

    fn merge(mut self, other: Accumulator) -> Self {
        self.pairs += other.pairs;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.histogram.iter_mut().zip(other.histogram).for_each(|(a, b)| *a += b);
        self
    }

    fn finish(self) -> PairStats {
        let (mean, std) = if self.pairs == 0 {
            (None, None)
        } else {
            let k = self.pairs as f64;
            let mean = self.sum / k;
            (Some(mean), Some((self.sum_sq / k - mean * mean).max(0.0).sqrt()))
        };
        PairStats { pairs: self.pairs, mean, std, histogram: self.histogram }
    }
}

/// Index of the histogram bin containing cosine `c`.
pub fn bin_of(c: f64) -> usize {
    let b = ((c.clamp(-1.0, 1.0) + 1.0) / 2.0 * BINS as f64).floor() as usize;
    b.min(BINS - 1)
}

/// Which identity vector the preservation score is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreservationTarget {
    /// The per-sample embedding the chain was conditioned on.
    #[default]
    Embedding,
    /// The identity's anchor.
    Anchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub intra: PairStats,
    pub inter: PairStats,
    /// `intra.mean − inter.mean`; `None` without inter-class pairs.
    pub separation: Option<f64>,
    pub preservation: f64,
    pub preservation_target: PreservationTarget,
    /// True when pairs were subsampled rather than enumerated.
    pub subsampled: bool,
}

fn cosine(a: &UnitVector, b: &UnitVector) -> f64 {
    dot(a.as_slice(), b.as_slice()).clamp(-1.0, 1.0)
}

/// Embeds every sample and collects intra- and inter-class cosine statistics.
pub fn compute_similarity_stats(
    world: &ToyWorld,
    dataset: &SyntheticDataset,
    target: PreservationTarget,
) -> Result<SimilarityStats, EvalError> {
    let records = &dataset.records;
    if records.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let embedded = records
        .iter()
        .enumerate()
        .map(|(index, r)| world.embed(&r.x0).map_err(|source| EvalError::Embedding { index, source }))
        .collect::<Result<Vec<_>, _>>()?;

    let preservation = match target {
        PreservationTarget::Embedding => {
            records.iter().zip(&embedded).map(|(r, e)| cosine(&r.y, e)).sum::<f64>() / records.len() as f64
        }
        PreservationTarget::Anchor => {
            let anchors = dataset.provenance.as_ref().map(|p| &p.anchors).ok_or(EvalError::MissingAnchors)?;
            let mut total = 0.0;
            for (r, e) in records.iter().zip(&embedded) {
                total += cosine(anchors.get(r.identity).ok_or(EvalError::MissingAnchors)?, e);
            }
            total / records.len() as f64
        }
    };

    let k = records.len();
    let subsampled = k > EXACT_PAIR_LIMIT;
    let visit = |(mut intra, mut inter): (Accumulator, Accumulator), (i, j): (usize, usize)| {
        let c = cosine(&embedded[i], &embedded[j]);
        if records[i].identity == records[j].identity {
            intra.push(c);
        } else {
            inter.push(c);
        }
        (intra, inter)
    };
    let fresh = || (Accumulator::new(), Accumulator::new());
    let merge = |a: (Accumulator, Accumulator), b: (Accumulator, Accumulator)| (a.0.merge(b.0), a.1.merge(b.1));
    let (intra, inter) = if subsampled {
        let mut r = rng::substream(0x5a3e, &[k as u64]);
        let pairs: Vec<(usize, usize)> = (0..SUBSAMPLED_PAIRS)
            .map(|_| loop {
                let (i, j) = (r.random_range(0..k), r.random_range(0..k));
                if i != j {
                    break (i.min(j), i.max(j));
                }
            })
            .collect();
        pairs.into_iter().fold(fresh(), visit)
    } else {
        (0..k)
            .into_par_iter()
            .map(|i| ((i + 1)..k).map(|j| (i, j)).fold(fresh(), visit))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(fresh(), merge)
    };
    let (intra, inter) = (intra.finish(), inter.finish());
    let separation = match (intra.mean, inter.mean) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    };
    Ok(SimilarityStats { intra, inter, separation, preservation, preservation_target: target, subsampled })
}

/// CSV `bin_lo,bin_hi,intra_count,inter_count`, one row per bin.
pub fn write_histograms<W: Write>(stats: &SimilarityStats, out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "intra_count", "inter_count"])?;
    for b in 0..BINS {
        let lo = -1.0 + 2.0 * b as f64 / BINS as f64;
        let hi = -1.0 + 2.0 * (b + 1) as f64 / BINS as f64;
        w.write_record([lo.to_string(), hi.to_string(), stats.intra.histogram[b].to_string(), stats.inter.histogram[b].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_histograms(stats: &SimilarityStats, path: &Path) -> Result<(), EvalError> {
    let mut buf = Vec::new();
    write_histograms(stats, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub intra_count: u64,
    pub inter_count: u64,
}

pub fn read_histograms(path: &Path) -> Result<Vec<HistogramRow>, EvalError> {
    let mut rd = csv::Reader::from_path(path)?;
    Ok(rd.deserialize().collect::<Result<Vec<HistogramRow>, _>>()?)
}

/// Settings of a paired guidance comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparisonConfig {
    pub samples: usize,
    pub seed: u64,
    /// Guidance weight of the reference arm.
    pub original_weight: f64,
    /// Guidance weight of the guided arm; the schedule default when `None`.
    pub adjusted_weight: Option<f64>,
    pub bootstrap_resamples: usize,
    pub attr_ranges: AttributeRanges,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            samples: 200,
            seed: 0,
            original_weight: 0.0,
            adjusted_weight: None,
            bootstrap_resamples: 10_000,
            attr_ranges: AttributeRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceComparison {
    pub samples: usize,
    pub original_weight: f64,
    pub adjusted_weight: f64,
    pub mean_original: f64,
    pub mean_adjusted: f64,
    /// Mean of per-pair `adjusted − original`.
    pub difference: f64,
    /// Percentile bootstrap 95% interval for `difference`.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Samples each `(y, s)` twice with the same chain seed, once per arm.
pub fn compare_guidance(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    base: &SamplerConfig,
    cfg: &ComparisonConfig,
) -> Result<GuidanceComparison, EvalError> {
    if cfg.samples == 0 || cfg.bootstrap_resamples == 0 {
        return Err(EvalError::Config("samples and bootstrap_resamples must be positive".into()));
    }
    let adjusted_weight = cfg.adjusted_weight.unwrap_or(schedule.guidance_weight());
    let pairs = (0..cfg.samples)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::substream(cfg.seed, &[k as u64]);
            let y = sample_uniform_sphere(world.d(), &mut r).map_err(|e| SampleError::from(WorldError::from(e)))?;
            let s = cfg.attr_ranges.sample(&mut r);
            let chain = rng::derive_seed(cfg.seed, &[k as u64, 1]);
            let score = |w: f64| -> Result<f64, EvalError> {
                let arm = SamplerConfig { guidance_weight_override: Some(w), seed: chain, record_trajectory: false, ..*base };
                let out = sample(denoiser, schedule, world, y.as_slice(), &s, &arm)?;
                Ok(preservation(world, &out.x0, y.as_slice()))
            };
            Ok((score(cfg.original_weight)?, score(adjusted_weight)?))
        })
        .collect::<Result<Vec<(f64, f64)>, EvalError>>()?;
    let k = pairs.len() as f64;
    let mean_original = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let mean_adjusted = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    let difference = diffs.iter().sum::<f64>() / k;
    let (ci_low, ci_high) = bootstrap_ci(&diffs, cfg.bootstrap_resamples, rng::derive_seed(cfg.seed, &[u64::MAX]));
    Ok(GuidanceComparison {
        samples: cfg.samples,
        original_weight: cfg.original_weight,
        adjusted_weight,
        mean_original,
        mean_adjusted,
        difference,
        ci_low,
        ci_high,
    })
}

/// Percentile bootstrap 95% interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut r = rng::stream(seed);
    let k = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..k).map(|_| values[r.random_range(0..k)]).sum::<f64>() / k as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}
