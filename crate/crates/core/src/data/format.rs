//! Binary `ONOD` container for datasets.
//!
//! Little-endian: magic | u32 version | u32 N | u32 M | u32 d0 | u32 d_f |
//! u32 d_u | u8 has_grid | [u32 nx | u32 ny | f64 spacing] | payload | u32 CRC32.
//! The payload holds the mesh points, then `f` and `u` for each pair in turn,
//! all f64 row-major. The checksum covers the payload only.

use super::{Dataset, GridMeta, Mesh, Sample};
use crate::binio::{to_u32, Reader};
use crate::linalg::DenseMatrix;
use crate::{Error, Result};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"ONOD";
pub const FORMAT_VERSION: u32 = 1;

fn matrix(payload: &[u8], rows: usize, cols: usize) -> Result<DenseMatrix> {
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DenseMatrix::from_vec(rows, cols, data)?)
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = self.mesh.len();
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (v, what) in [
            (self.len(), "N"),
            (m, "M"),
            (self.mesh.dim(), "d0"),
            (self.f_channels, "d_f"),
            (self.u_channels, "d_u"),
        ] {
            out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
        }
        match self.mesh.grid {
            Some(g) => {
                out.push(1);
                out.extend_from_slice(&to_u32(g.nx, "nx")?.to_le_bytes());
                out.extend_from_slice(&to_u32(g.ny, "ny")?.to_le_bytes());
                out.extend_from_slice(&g.spacing.to_le_bytes());
            }
            None => out.push(0),
        }
        let start = out.len();
        let mut put = |mat: &DenseMatrix| {
            for v in mat.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&self.mesh.points);
        for s in &self.samples {
            put(&s.f);
            put(&s.u);
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n = r.u32("N")? as usize;
        let m = r.u32("M")? as usize;
        let d0 = r.u32("d0")? as usize;
        let df = r.u32("d_f")? as usize;
        let du = r.u32("d_u")? as usize;
        let grid = match r.u8("has_grid")? {
            0 => None,
            1 => {
                let nx = r.u32("nx")? as usize;
                let ny = r.u32("ny")? as usize;
                let spacing = r.f64("spacing")?;
                if nx.checked_mul(ny) != Some(m) {
                    return Err(Error::Malformed(format!("grid {nx} x {ny} but M = {m}")));
                }
                if !(spacing.is_finite() && spacing > 0.0) {
                    return Err(Error::Malformed(format!("grid spacing {spacing}")));
                }
                Some(GridMeta { nx, ny, spacing })
            }
            b => return Err(Error::Malformed(format!("has_grid flag {b}"))),
        };
        let per_pair = m.checked_mul(df.checked_add(du).ok_or_else(overflow)?).ok_or_else(overflow)?;
        let floats = n
            .checked_mul(per_pair)
            .and_then(|p| p.checked_add(m.checked_mul(d0)?))
            .ok_or_else(overflow)?;
        let payload_len = floats.checked_mul(8).ok_or_else(overflow)?;
        let payload = r.take(payload_len, "payload")?;
        let stored = r.u32("checksum")?;
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
        }
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let mut off = 0;
        let mut next = |rows: usize, cols: usize| {
            let len = rows * cols * 8;
            let mat = matrix(&payload[off..off + len], rows, cols);
            off += len;
            mat
        };
        let points = next(m, d0)?;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let f = next(m, df)?;
            let u = next(m, du)?;
            samples.push(Sample { f, u });
        }
        if !points.is_finite() {
            return Err(Error::Malformed("non-finite mesh coordinates".into()));
        }
        Dataset::new(Mesh { points, grid }, samples, df, du)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        Dataset::from_bytes(&std::fs::read(path)?)
    }
}

fn overflow() -> Error {
    Error::Malformed("declared sizes overflow".into())
}

/// Free-function spelling of [`Dataset::save`].
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.save(path)
}

/// Free-function spelling of [`Dataset::load`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path)
}
