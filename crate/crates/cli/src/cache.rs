//! Self-describing binary cache for sampled fields and transfer grids.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MCPLGRID" | version u32 | kind u32 | ndims u32 | dims u64 × ndims
//! | meta_len u64 | meta (JSON) | n_values u64 | values f64 × n_values
//! | SHA-256 of everything above
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use mcpl_core::nonlinear::{AudioTransferGrid, ObsPoint, TransferProvenance};
use mcpl_core::ultrasound::{CylGrid, UltraFieldGrid};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CacheFault, CliError, CliResult};

pub const MAGIC: [u8; 8] = *b"MCPLGRID";
pub const VERSION: u32 = 1;
pub const KIND_ULTRASOUND: u32 = 1;
pub const KIND_TRANSFER: u32 = 2;
pub const EXTENSION: &str = "mcpl";

#[derive(Debug, Clone, PartialEq)]
struct Payload {
    kind: u32,
    dims: Vec<u64>,
    meta: Vec<u8>,
    values: Vec<f64>,
}

fn encode(p: &Payload) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + p.meta.len() + 8 * p.values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&p.kind.to_le_bytes());
    out.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
    for d in &p.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(p.meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&p.meta);
    out.extend_from_slice(&(p.values.len() as u64).to_le_bytes());
    for v in &p.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheFault> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CacheFault::Corrupt("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CacheFault> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CacheFault> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, elem: usize) -> Result<usize, CacheFault> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| CacheFault::Corrupt("length overflow".into()))?;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(CacheFault::Corrupt("length exceeds file".into()));
        }
        Ok(n)
    }
}

fn decode(bytes: &[u8], expected_kind: Option<u32>) -> Result<Payload, CacheFault> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CacheFault::BadMagic);
    }
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CacheFault::Corrupt("truncated".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CacheFault::Version {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < 12 + 32 {
        return Err(CacheFault::Corrupt("truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CacheFault::Corrupt("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let kind = r.u32()?;
    if let Some(k) = expected_kind {
        if k != kind {
            return Err(CacheFault::Kind { found: kind, expected: k });
        }
    }
    let ndims = r.u32()? as usize;
    if ndims > 8 {
        return Err(CacheFault::Corrupt(format!("{ndims} dimensions")));
    }
    let dims = (0..ndims).map(|_| r.u64()).collect::<Result<Vec<_>, _>>()?;
    let meta_len = r.len(1)?;
    let meta = r.take(meta_len)?.to_vec();
    let n = r.len(8)?;
    let values = r
        .take(8 * n)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != body.len() {
        return Err(CacheFault::Corrupt("trailing bytes".into()));
    }
    Ok(Payload { kind, dims, meta, values })
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path, kind: u32) -> CliResult<Payload> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode(&bytes, Some(kind)).map_err(|reason| CliError::Cache {
        path: path.to_path_buf(),
        reason,
    })
}

fn corrupt(path: &Path, msg: &str) -> CliError {
    CliError::Cache {
        path: path.to_path_buf(),
        reason: CacheFault::Corrupt(msg.into()),
    }
}

fn push_complex(values: &mut Vec<f64>, zs: &[Complex64]) {
    for z in zs {
        values.push(z.re);
        values.push(z.im);
    }
}

fn complex_from(values: &[f64]) -> Vec<Complex64> {
    values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub fn store_ultrasound(grid: &UltraFieldGrid, path: &Path) -> CliResult<()> {
    let (nr, nz) = (grid.grid.radial.len(), grid.grid.axial.len());
    let mut values = Vec::with_capacity(1 + nr + nz + 2 * grid.pressures.len());
    values.push(grid.frequency);
    values.extend(&grid.grid.radial);
    values.extend(&grid.grid.axial);
    push_complex(&mut values, &grid.pressures);
    let p = Payload {
        kind: KIND_ULTRASOUND,
        dims: vec![nr as u64, nz as u64],
        meta: b"{}".to_vec(),
        values,
    };
    write_atomic(path, &encode(&p))
}

pub fn load_ultrasound(path: &Path) -> CliResult<UltraFieldGrid> {
    let p = read(path, KIND_ULTRASOUND)?;
    let [nr, nz] = p.dims[..] else {
        return Err(corrupt(path, "expected two dimensions"));
    };
    let (nr, nz) = (nr as usize, nz as usize);
    if p.values.len() != 1 + nr + nz + 2 * nr * nz {
        return Err(corrupt(path, "value count does not match dimensions"));
    }
    let v = &p.values;
    let grid = CylGrid::new(v[1..1 + nr].to_vec(), v[1 + nr..1 + nr + nz].to_vec())?;
    let field = UltraFieldGrid {
        grid,
        frequency: v[0],
        pressures: complex_from(&v[1 + nr + nz..]),
    };
    field.validate()?;
    Ok(field)
}

pub fn store_transfer(grid: &AudioTransferGrid, path: &Path) -> CliResult<()> {
    let (np, nc) = (grid.points.len(), grid.carriers.len());
    let mut values = Vec::with_capacity(1 + 2 * np + nc + 2 * grid.values.len());
    values.push(grid.audio_frequency);
    for p in &grid.points {
        values.push(p.x);
        values.push(p.z);
    }
    values.extend(&grid.carriers);
    push_complex(&mut values, &grid.values);
    let p = Payload {
        kind: KIND_TRANSFER,
        dims: vec![np as u64, nc as u64],
        meta: serde_json::to_vec(&grid.provenance)?,
        values,
    };
    write_atomic(path, &encode(&p))
}

pub fn load_transfer(path: &Path) -> CliResult<AudioTransferGrid> {
    let p = read(path, KIND_TRANSFER)?;
    let [np, nc] = p.dims[..] else {
        return Err(corrupt(path, "expected two dimensions"));
    };
    let (np, nc) = (np as usize, nc as usize);
    if p.values.len() != 1 + 2 * np + nc + 2 * np * nc {
        return Err(corrupt(path, "value count does not match dimensions"));
    }
    let provenance: TransferProvenance =
        serde_json::from_slice(&p.meta).map_err(|e| corrupt(path, &format!("metadata: {e}")))?;
    let v = &p.values;
    let points = v[1..1 + 2 * np].chunks_exact(2).map(|c| ObsPoint::new(c[0], c[1])).collect();
    let grid = AudioTransferGrid {
        points,
        audio_frequency: v[0],
        carriers: v[1 + 2 * np..1 + 2 * np + nc].to_vec(),
        values: complex_from(&v[1 + 2 * np + nc..]),
        provenance,
    };
    grid.validate()?;
    Ok(grid)
}

/// What `cache gc` did.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct GcReport {
    pub kept: usize,
    pub removed: Vec<PathBuf>,
}

/// Remove unreadable, stale-version and leftover temporary files; with
/// `all`, empty the cache.
pub fn gc(dir: &Path, all: bool) -> CliResult<GcReport> {
    let mut report = GcReport::default();
    if !dir.exists() {
        return Ok(report);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    for path in entries {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let remove = if ext.starts_with("tmp") {
            true
        } else if ext == EXTENSION {
            all || fs::read(&path).map(|b| decode(&b, None).is_err()).unwrap_or(true)
        } else {
            false
        };
        if remove {
            fs::remove_file(&path).map_err(io_err(&path))?;
            report.removed.push(path);
        } else if ext == EXTENSION {
            report.kept += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Payload {
        Payload {
            kind: KIND_TRANSFER,
            dims: vec![2, 3],
            meta: b"{\"a\":1}".to_vec(),
            values: vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let q = decode(&encode(&p), Some(KIND_TRANSFER)).unwrap();
        assert_eq!(q.dims, p.dims);
        assert_eq!(q.meta, p.meta);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&q.values), bits(&p.values));
    }

    #[test]
    fn faults_are_reported() {
        let bytes = encode(&sample());
        assert_eq!(decode(b"garbage!", None), Err(CacheFault::BadMagic));
        let mut v = bytes.clone();
        v[8] = 9;
        assert_eq!(decode(&v, None), Err(CacheFault::Version { found: 9, expected: VERSION }));
        assert!(matches!(decode(&bytes[..bytes.len() - 5], None), Err(CacheFault::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(decode(&flipped, None), Err(CacheFault::Corrupt(_))));
        assert_eq!(
            decode(&bytes, Some(KIND_ULTRASOUND)),
            Err(CacheFault::Kind { found: KIND_TRANSFER, expected: KIND_ULTRASOUND })
        );
    }
}
