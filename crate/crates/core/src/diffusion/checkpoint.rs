//! Binary checkpoint: world, schedule and denoiser parameters in one file.
//!
//! Little-endian layout:
//!
//! ```text
//! "ID3W"  u32 version
//! u32 × 7 n, d, m_a, k_time, hidden[0], hidden[1], T
//! f64 × T           α_1..α_T
//! f64 × n·d         A
//! f64 × n·m_a       B
//! f64 × d·n         W
//! f64 × m_a·n       V
//! f64 × P           θ
//! f64 noise_sigma   u64 world seed
//! ```

use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{Architecture, DenoiserParams, DiffusionSchedule};
use crate::linalg::Matrix;
use crate::toyworld::ToyWorld;

pub const MAGIC: &[u8; 4] = b"ID3W";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub world: ToyWorld,
    pub schedule: DiffusionSchedule,
    pub params: DenoiserParams,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), CheckpointError> {
    let v = u32::try_from(v).map_err(|_| CheckpointError::Format(format!("dimension {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            CheckpointError::Format(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let len = count.checked_mul(8).ok_or_else(|| CheckpointError::Format(format!("{what} too large")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix, CheckpointError> {
        let data = self.f64s(rows * cols, what)?;
        Ok(Matrix::from_row_major(rows, cols, data).expect("length matches by construction"))
    }
}

impl Checkpoint {
    pub fn new(world: ToyWorld, schedule: DiffusionSchedule, params: DenoiserParams) -> Result<Self, CheckpointError> {
        let a = params.arch();
        if (a.n, a.d, a.m_a) != (world.n(), world.d(), world.m_a()) {
            return Err(CheckpointError::Format("denoiser and world dimensions differ".into()));
        }
        Ok(Checkpoint { world, schedule, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let a = self.params.arch();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [a.n, a.d, a.m_a, a.k_time, a.hidden[0], a.hidden[1], self.schedule.steps()] {
            put_u32(&mut out, v)?;
        }
        put_f64s(&mut out, self.schedule.alphas());
        put_f64s(&mut out, self.world.identity_decoder().as_slice());
        put_f64s(&mut out, self.world.attribute_decoder().as_slice());
        put_f64s(&mut out, self.world.embedder().as_slice());
        put_f64s(&mut out, self.world.attribute_predictor().as_slice());
        put_f64s(&mut out, self.params.theta());
        put_f64s(&mut out, &[self.world.noise_sigma()]);
        out.extend_from_slice(&self.world.seed().to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::Format("bad magic bytes".into()));
        }
        let version = c.u32("version")?;
        if version != VERSION as usize {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for (slot, name) in dims.iter_mut().zip(["n", "d", "m_a", "k_time", "hidden0", "hidden1", "T"]) {
            *slot = c.u32(name)?;
        }
        let [n, d, m_a, k_time, h1, h2, steps] = dims;
        let arch = Architecture { n, d, m_a, k_time, hidden: [h1, h2] };
        arch.validate().map_err(|e| CheckpointError::Format(e.to_string()))?;
        let alpha = c.f64s(steps, "alpha")?;
        let schedule = DiffusionSchedule::from_alphas(alpha).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let a = c.matrix(n, d, "A")?;
        let b = c.matrix(n, m_a, "B")?;
        let w = c.matrix(d, n, "W")?;
        let v = c.matrix(m_a, n, "V")?;
        let theta = c.f64s(arch.param_count(), "theta")?;
        let noise_sigma = c.f64s(1, "noise_sigma")?[0];
        let seed = c.u64("seed")?;
        if c.pos != bytes.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
        }
        let world =
            ToyWorld::from_parts(a, b, w, v, noise_sigma, seed).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let params = DenoiserParams::from_theta(arch, theta).map_err(|e| CheckpointError::Format(e.to_string()))?;
        Ok(Checkpoint { world, schedule, params })
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        out.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// 64-bit FNV-1a of `bytes`, as 16 lowercase hex digits.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    format!("{:016x}", h.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample() -> Checkpoint {
        let world = ToyWorld::build(3, 2, 4, 0.1, 17).unwrap();
        let schedule = DiffusionSchedule::build(12, 0.8, 0.99).unwrap();
        let params = DenoiserParams::init(Architecture::new(3, 2, 4, [5, 6]), 1.0, &mut rng::stream(2)).unwrap();
        Checkpoint::new(world, schedule, params).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"ID3W");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(CheckpointError::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Format(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn fnv_known_vectors() {
        assert_eq!(fnv1a_hex(b""), "cbf29ce484222325");
        assert_eq!(fnv1a_hex(b"a"), "af63dc4c8601ec8c");
    }
}
