//! Binary checkpoints, little-endian throughout:
//!
//! ```text
//! magic     8 bytes  "HDNSCKPT"
//! version   u32
//! n         u32      points per axis
//! step      u64
//! time      f64
//! coeffs    n^3 * 3 * (re f64, im f64), row-major by wavevector index
//! rng       seed [u8; 32], stream u64, word_pos u128
//! psi_int   f64      accumulated dissipation integral
//! checksum  32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::dynamics::RunState;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::spectral::{make_grid, SpectralField};

pub const MAGIC: &[u8; 8] = b"HDNSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub time: f64,
    pub field: SpectralField,
    pub rng: RngState,
    pub dissipation_integral: f64,
}

impl Checkpoint {
    pub fn new(state: &RunState, dt: f64, rng: RngState) -> Self {
        Self {
            step: state.step,
            time: state.step as f64 * dt,
            field: state.u.clone(),
            rng,
            dissipation_integral: state.dissipation_integral,
        }
    }

    pub fn run_state(&self) -> RunState {
        RunState {
            step: self.step,
            u: self.field.clone(),
            dissipation_integral: self.dissipation_integral,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.field.grid().n_per_axis();
        let mut out = Vec::with_capacity(96 + 48 * self.field.coeffs().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        for c in self.field.coeffs() {
            for z in c {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&self.dissipation_integral.to_le_bytes());
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 32 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let n = r.u32()? as usize;
        let grid = make_grid(n).map_err(|e| Error::Checkpoint(format!("grid descriptor: {e}")))?;
        let step = r.u64()?;
        let time = r.f64()?;
        let mut coeffs = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            let mut c = [Complex64::new(0.0, 0.0); 3];
            for z in c.iter_mut() {
                *z = Complex64::new(r.f64()?, r.f64()?);
            }
            coeffs.push(c);
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(r.take(32)?);
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let dissipation_integral = r.f64()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                body.len().saturating_sub(r.pos)
            )));
        }
        Ok(Self {
            step,
            time,
            field: SpectralField::from_coeffs(&grid, coeffs)?,
            rng: RngState { seed, stream, word_pos },
            dissipation_integral,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        // Write-then-rename so a crash never leaves a torn checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos + k;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
