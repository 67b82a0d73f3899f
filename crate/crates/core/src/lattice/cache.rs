//! On-disk cache of assembled and factored covariance models.
//!
//! Files are named `<key>.gmcf`, where `key` is the hex SHA-256 of a canonical
//! description of the bulk region, boundary interval, cell counts, kernel and
//! assembly options. Models with a user-supplied correction are never cached.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `GMCLABCV` |
//! | 4     | format version (u32, currently 1) |
//! | 4     | factor kind (u32: 0 packed lower Cholesky, 1 dense eigen factor) |
//! | 32    | SHA-256 key |
//! | 8 x 2 | `n_bulk`, `n_boundary` (u64) |
//! | 8     | clipped eigenvalue count (u64) |
//! | 8 x 5 | Frobenius change, relative change, diagonal constant, bulk spacing, boundary spacing (f64) |
//! | 8 n^2 | repaired matrix, row-major f64 |
//! | ...   | factor: `n(n+1)/2` packed lower rows or `n^2` dense row-major f64 |

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::{
    assemble_covariance, AssemblyOptions, CovarianceModel, Factor, FactorKind, Lattice,
    RepairReport, SiteLayout,
};
use crate::error::{Error, Result};
use crate::kernels::{Correction, KernelSpec};

const MAGIC: &[u8; 8] = b"GMCLABCV";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct CovarianceCache {
    dir: PathBuf,
}

impl CovarianceCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Content key, or `None` when the configuration is not cacheable.
    pub fn key(
        bulk: Option<&Lattice>,
        boundary: Option<&Lattice>,
        spec: &KernelSpec,
        opts: &AssemblyOptions,
    ) -> Option<[u8; 32]> {
        if matches!(spec.correction(), Correction::Custom { .. }) {
            return None;
        }
        let mut h = Sha256::new();
        h.update(b"gmclab-covariance-v1\n");
        for l in [bulk, boundary] {
            match l {
                Some(l) => {
                    h.update(serde_json::to_vec(&(l.region, l.n_cells)).expect("region serializes"))
                }
                None => h.update(b"none"),
            }
            h.update(b"\n");
        }
        h.update(spec.key().as_bytes());
        for v in [opts.diag_constant, opts.repair_budget] {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update((opts.max_sites as u64).to_le_bytes());
        Some(h.finalize().into())
    }

    pub fn path_for(&self, key: &[u8; 32]) -> PathBuf {
        self.dir.join(format!("{}.gmcf", hex::encode(key)))
    }

    /// Loads a cached model or assembles and stores a fresh one.
    pub fn load_or_assemble(
        &self,
        bulk: Option<&Lattice>,
        boundary: Option<&Lattice>,
        spec: &KernelSpec,
        opts: &AssemblyOptions,
    ) -> Result<CovarianceModel> {
        let Some(key) = Self::key(bulk, boundary, spec, opts) else {
            return assemble_covariance(bulk, boundary, spec, opts);
        };
        let path = self.path_for(&key);
        if path.exists() {
            if let Ok(m) = read_model(&path, &key) {
                return Ok(m);
            }
        }
        let model = assemble_covariance(bulk, boundary, spec, opts)?;
        fs::create_dir_all(&self.dir).map_err(io_err)?;
        let tmp = path.with_extension("tmp");
        write_model(&tmp, &key, &model)?;
        fs::rename(&tmp, &path).map_err(io_err)?;
        Ok(model)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Cache(e.to_string())
}

pub fn write_model(path: &Path, key: &[u8; 32], m: &CovarianceModel) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let layout = m.layout();
    let rep = m.repair_report();
    let kind: u32 = match m.factor() {
        Factor::Lower(_) => 0,
        Factor::Dense(_) => 1,
    };
    let mut put = |b: &[u8]| w.write_all(b).map_err(io_err);
    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    put(&kind.to_le_bytes())?;
    put(key)?;
    put(&(layout.n_bulk as u64).to_le_bytes())?;
    put(&(layout.n_boundary as u64).to_le_bytes())?;
    put(&(rep.clipped_eigenvalue_count as u64).to_le_bytes())?;
    for v in [
        rep.frobenius_change,
        rep.relative_change,
        m.diag_constant(),
        m.bulk_spacing(),
        m.boundary_spacing(),
    ] {
        put(&v.to_le_bytes())?;
    }
    let n = m.dim();
    for i in 0..n {
        for j in 0..n {
            put(&m.entry(i, j).to_le_bytes())?;
        }
    }
    let data = match m.factor() {
        Factor::Lower(p) | Factor::Dense(p) => p,
    };
    for v in data {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(io_err)
}

pub fn read_model(path: &Path, key: &[u8; 32]) -> Result<CovarianceModel> {
    let mut r = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let kind = read_u32(&mut r)?;
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored).map_err(io_err)?;
    if &stored != key {
        return Err(Error::Cache("key mismatch".into()));
    }
    let n_bulk = read_u64(&mut r)? as usize;
    let n_boundary = read_u64(&mut r)? as usize;
    let clipped = read_u64(&mut r)? as usize;
    let frob = read_f64(&mut r)?;
    let rel = read_f64(&mut r)?;
    let c = read_f64(&mut r)?;
    let bulk_h = read_f64(&mut r)?;
    let boundary_h = read_f64(&mut r)?;
    let n = n_bulk + n_boundary;
    let flat = read_f64s(&mut r, n * n)?;
    let matrix = DMatrix::from_row_slice(n, n, &flat);
    let (factor, fk) = match kind {
        0 => (
            Factor::Lower(read_f64s(&mut r, n * (n + 1) / 2)?),
            FactorKind::Cholesky,
        ),
        1 => (
            Factor::Dense(read_f64s(&mut r, n * n)?),
            FactorKind::EigenClip,
        ),
        k => return Err(Error::Cache(format!("unknown factor kind {k}"))),
    };
    let report = RepairReport {
        clipped_eigenvalue_count: clipped,
        frobenius_change: frob,
        relative_change: rel,
        factor: fk,
    };
    Ok(CovarianceModel::from_parts(
        matrix,
        factor,
        SiteLayout { n_bulk, n_boundary },
        c,
        bulk_h,
        boundary_h,
        report,
    ))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(io_err)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
