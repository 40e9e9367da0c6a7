//! Synthetic dataset generation.
//!
//! Anchors are spread over the sphere, each anchor is perturbed into `m`
//! identity embeddings with cosines `ν ~ U[lb, ub)`, every embedding gets an
//! independent attribute draw, and one guided chain is run per pair.
//!
//! Identity `i` draws from `substream(master_seed, [i])` and its `j`-th chain
//! from `derive_seed(master_seed, [i, j, CHAIN])`, so the output does not
//! depend on how identities are scheduled across workers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{Denoiser, DiffusionSchedule};
use crate::rng;
use crate::sampler::{sample, SampleError, SamplerConfig};
use crate::sphere::{
    max_pairwise_cosine, sample_uniform_sphere, solve_perturbation_closed_form, solve_tammes, SphereError,
    TammesConfig, UnitVector,
};
use crate::toyworld::{AttributeRanges, AttributeVector, ToyWorld};

const ANCHOR_STREAM: u64 = 0xa2c4;
const CHAIN_STREAM: u64 = 0xc4a1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Identity count.
    #[serde(rename = "N")]
    pub identities: usize,
    /// Samples per identity.
    #[serde(rename = "m")]
    pub per_identity: usize,
    pub lb: f64,
    pub ub: f64,
    pub attr_ranges: AttributeRanges,
    pub master_seed: u64,
    pub tammes: TammesConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            identities: 8,
            per_identity: 25,
            lb: 0.5,
            ub: 0.7,
            attr_ranges: AttributeRanges::default(),
            master_seed: 0,
            tammes: TammesConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.identities == 0 || self.per_identity == 0 {
            return Err(DatagenError::Config("N and m must both be at least 1".into()));
        }
        if !(0.0 <= self.lb && self.lb < self.ub && self.ub <= 1.0) {
            return Err(DatagenError::Config(format!("need 0 <= lb < ub <= 1, got [{}, {}]", self.lb, self.ub)));
        }
        self.attr_ranges.validate().map_err(|e| DatagenError::Config(e.to_string()))?;
        self.tammes.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub identity: usize,
    pub sample: usize,
    /// Target cosine between `y` and the identity's anchor.
    pub nu: f64,
    pub attrs: AttributeVector,
    pub y: UnitVector,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: DatasetConfig,
    pub sampler: SamplerConfig,
    pub anchors: Vec<UnitVector>,
    pub anchor_max_pairwise_cosine: Option<f64>,
    pub checkpoint_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<Record>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sphere(#[from] SphereError),
    #[error("sampling identity {identity}, sample {sample}: {source}")]
    Sample {
        identity: usize,
        sample: usize,
        #[source]
        source: SampleError,
    },
    #[error("generation stopped at identity {failed_identity}: {source}")]
    PartialResult {
        completed: Box<SyntheticDataset>,
        failed_identity: usize,
        source: Box<DatagenError>,
    },
    #[error("dataset i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Anchors for `N` identities: the Tammes solution, or one uniform point when `N = 1`.
pub fn place_anchors(config: &DatasetConfig, d: usize) -> Result<(Vec<UnitVector>, Option<f64>), DatagenError> {
    if config.identities == 1 {
        let mut r = rng::substream(config.master_seed, &[ANCHOR_STREAM]);
        return Ok((vec![sample_uniform_sphere(d, &mut r)?], None));
    }
    let tammes = TammesConfig { seed: rng::derive_seed(config.master_seed, &[ANCHOR_STREAM]), ..config.tammes };
    let set = solve_tammes(config.identities, d, &tammes)?;
    let max = max_pairwise_cosine(&set.anchors);
    Ok((set.anchors, Some(max)))
}

#[allow(clippy::too_many_arguments)]
fn generate_identity(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    config: &DatasetConfig,
    sampler: &SamplerConfig,
    anchor: &UnitVector,
    identity: usize,
) -> Result<Vec<Record>, DatagenError> {
    let mut r = rng::substream(config.master_seed, &[identity as u64]);
    let nus: Vec<f64> =
        (0..config.per_identity).map(|_| config.lb + (config.ub - config.lb) * r.random::<f64>()).collect();
    let placed = solve_perturbation_closed_form(anchor, &nus, &mut r)?;
    let mut records = Vec::with_capacity(config.per_identity);
    for (j, (y, nu)) in placed.embeddings.into_iter().zip(nus).enumerate() {
        let attrs = config.attr_ranges.sample(&mut r);
        let chain = SamplerConfig {
            seed: rng::derive_seed(config.master_seed, &[identity as u64, j as u64, CHAIN_STREAM]),
            record_trajectory: false,
            ..*sampler
        };
        let out = sample(denoiser, schedule, world, y.as_slice(), &attrs, &chain)
            .map_err(|source| DatagenError::Sample { identity, sample: j, source })?;
        records.push(Record { identity, sample: j, nu, attrs, y, x0: out.x0 });
    }
    Ok(records)
}

/// Generates `N·m` records with `workers` threads.
///
/// Output order is `(identity, sample)` and the records are identical for
/// any worker count.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset(
    denoiser: &dyn Denoiser,
    schedule: &DiffusionSchedule,
    world: &ToyWorld,
    config: &DatasetConfig,
    sampler: &SamplerConfig,
    workers: usize,
    checkpoint_hash: Option<String>,
) -> Result<SyntheticDataset, DatagenError> {
    config.validate()?;
    sampler.validate().map_err(|source| DatagenError::Sample { identity: 0, sample: 0, source })?;
    let (anchors, anchor_max) = place_anchors(config, world.d())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DatagenError::Config(format!("thread pool: {e}")))?;
    let per_identity: Vec<Result<Vec<Record>, DatagenError>> = pool.install(|| {
        anchors
            .par_iter()
            .enumerate()
            .map(|(i, anchor)| generate_identity(denoiser, schedule, world, config, sampler, anchor, i))
            .collect()
    });
    let provenance = Provenance {
        config: config.clone(),
        sampler: *sampler,
        anchors: anchors.clone(),
        anchor_max_pairwise_cosine: anchor_max,
        checkpoint_hash,
    };
    let mut records = Vec::with_capacity(config.identities * config.per_identity);
    for (i, result) in per_identity.into_iter().enumerate() {
        match result {
            Ok(rs) => records.extend(rs),
            Err(e) => {
                return Err(DatagenError::PartialResult {
                    completed: Box::new(SyntheticDataset { records, provenance: Some(provenance) }),
                    failed_identity: i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(SyntheticDataset { records, provenance: Some(provenance) })
}

fn header(d: usize, n: usize) -> Vec<String> {
    let mut h: Vec<String> =
        ["id", "sample", "age", "pose_yaw", "pose_pitch", "pose_roll", "nu"].iter().map(|s| s.to_string()).collect();
    h.extend((0..d).map(|i| format!("y_{i}")));
    h.extend((0..n).map(|i| format!("x_{i}")));
    h
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

impl SyntheticDataset {
    /// `(d, n)` taken from the first record, or from the provenance anchors.
    fn dims(&self) -> (usize, usize) {
        match self.records.first() {
            Some(r) => (r.y.dim(), r.x0.len()),
            None => (self.provenance.as_ref().and_then(|p| p.anchors.first()).map_or(0, |a| a.dim()), 0),
        }
    }

    /// CSV with the fixed header; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let (d, n) = self.dims();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header(d, n))?;
        for r in &self.records {
            let pose = r.attrs.pose();
            let mut row = vec![r.identity.to_string(), r.sample.to_string(), fmt(r.attrs.age())];
            row.extend(pose.iter().map(|v| fmt(*v)));
            row.push(fmt(r.nu));
            row.extend(r.y.as_slice().iter().map(|v| fmt(*v)));
            row.extend(r.x0.iter().map(|v| fmt(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Vec<Record>, DatagenError> {
        let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
        let mut rows = rd.records();
        let format = |line: usize, message: String| DatagenError::Format { line, message };
        let head = match rows.next() {
            Some(Ok(h)) => h,
            Some(Err(e)) => return Err(format(1, e.to_string())),
            None => return Err(format(1, "missing header".into())),
        };
        let d = head.iter().filter(|c| c.starts_with("y_")).count();
        let n = head.iter().filter(|c| c.starts_with("x_")).count();
        let expected = header(d, n);
        if head.iter().ne(expected.iter().map(String::as_str)) {
            return Err(format(1, format!("unexpected header; expected {}", expected.join(","))));
        }
        let mut records = Vec::new();
        for (k, row) in rows.enumerate() {
            let line = k + 2;
            let row = row.map_err(|e| format(line, e.to_string()))?;
            if row.len() != expected.len() {
                return Err(format(line, format!("expected {} fields, found {}", expected.len(), row.len())));
            }
            let float = |i: usize| -> Result<f64, DatagenError> {
                row[i].trim().parse::<f64>().map_err(|e| format(line, format!("column {}: {e}", expected[i])))
            };
            let int = |i: usize| -> Result<usize, DatagenError> {
                row[i].trim().parse::<usize>().map_err(|e| format(line, format!("column {}: {e}", expected[i])))
            };
            let attrs = AttributeVector::new(float(2)?, [float(3)?, float(4)?, float(5)?])
                .map_err(|e| format(line, e.to_string()))?;
            let y: Vec<f64> = (7..7 + d).map(float).collect::<Result<_, _>>()?;
            let y = UnitVector::try_from(y).map_err(|e| format(line, e.to_string()))?;
            let x0 = (7 + d..7 + d + n).map(float).collect::<Result<_, _>>()?;
            records.push(Record { identity: int(0)?, sample: int(1)?, nu: float(6)?, attrs, y, x0 });
        }
        Ok(records)
    }
}

/// Sidecar path `<path>.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the CSV and, when provenance is present, the JSON sidecar.
pub fn write_dataset(dataset: &SyntheticDataset, path: &Path) -> Result<(), DatagenError> {
    let io = |source: std::io::Error, p: &Path| DatagenError::Io { path: p.to_path_buf(), source };
    let mut buf = Vec::new();
    dataset.write_csv(&mut buf).map_err(|e| io(e.into(), path))?;
    fs::write(path, buf).map_err(|e| io(e, path))?;
    if let Some(p) = &dataset.provenance {
        let meta = meta_path(path);
        let json = serde_json::to_string_pretty(p).map_err(|e| io(e.into(), &meta))?;
        fs::write(&meta, json + "\n").map_err(|e| io(e, &meta))?;
    }
    Ok(())
}

/// Reads the CSV and the sidecar if one exists.
pub fn read_dataset(path: &Path) -> Result<SyntheticDataset, DatagenError> {
    let io = |source: std::io::Error, p: &Path| DatagenError::Io { path: p.to_path_buf(), source };
    let text = fs::read_to_string(path).map_err(|e| io(e, path))?;
    let records = SyntheticDataset::read_csv(&text)?;
    let meta = meta_path(path);
    let provenance = if meta.exists() {
        let raw = fs::read_to_string(&meta).map_err(|e| io(e, &meta))?;
        let p = serde_json::from_str(&raw).map_err(|e| DatagenError::Format { line: e.line(), message: format!("{}: {e}", meta.display()) })?;
        Some(p)
    } else {
        None
    };
    Ok(SyntheticDataset { records, provenance })
}
