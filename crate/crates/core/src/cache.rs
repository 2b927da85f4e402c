//! Content-addressed spectrum files.
//!
//! Layout, all integers and floats little-endian:
//! `"DCKS"`, `u32` version, 32-byte parameter digest, `u64` dim,
//! `u64` n_converged, `dim` eigenvalues, `dim * dim` eigenvector entries in
//! column-major order, then a SHA-256 checksum of everything before it.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use faer::Mat;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::spectrum::{compute_spectrum, params_digest, ConvergenceSettings, SpectralData};
use crate::model::{ModelParams, Parity};

pub const MAGIC: &[u8; 4] = b"DCKS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8 + 8;

pub fn digest_hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a spectrum into the cache layout.
pub fn encode(spec: &SpectralData<f64>) -> Vec<u8> {
    let dim = spec.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * dim * (dim + 1) + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&spec.digest);
    buf.extend_from_slice(&(dim as u64).to_le_bytes());
    buf.extend_from_slice(&(spec.n_converged as u64).to_le_bytes());
    for v in &spec.eigenvalues {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in 0..dim {
        for v in spec.eigenvectors.col(c).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&sum);
    buf
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::CacheCorrupt { path: path.to_path_buf(), reason: reason.into() }
}

/// Parses a cache file, checking it against the expected digest.
pub fn decode(bytes: &[u8], expected: &[u8; 32], params: &ModelParams<f64>, parity: Parity, path: &Path) -> Result<SpectralData<f64>> {
    if bytes.len() < HEADER_LEN + 32 {
        return Err(corrupt(path, format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(path, format!("unsupported version {version}")));
    }
    if &bytes[8..40] != expected {
        return Err(corrupt(path, "digest does not match the requested parameters"));
    }
    let dim = u64::from_le_bytes(bytes[40..48].try_into().unwrap()) as usize;
    let n_converged = u64::from_le_bytes(bytes[48..56].try_into().unwrap()) as usize;
    let body = dim.checked_mul(dim + 1).and_then(|n| n.checked_mul(8));
    if body.and_then(|b| b.checked_add(HEADER_LEN + 32)) != Some(bytes.len()) {
        return Err(corrupt(path, format!("length {} inconsistent with dim {dim}", bytes.len())));
    }
    let split = bytes.len() - 32;
    let sum: [u8; 32] = Sha256::digest(&bytes[..split]).into();
    if sum[..] != bytes[split..] {
        return Err(corrupt(path, "checksum mismatch"));
    }
    if n_converged > dim {
        return Err(corrupt(path, "n_converged exceeds dim"));
    }
    let mut floats = bytes[HEADER_LEN..split].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let eigenvalues: Vec<f64> = floats.by_ref().take(dim).collect();
    let data: Vec<f64> = floats.collect();
    if eigenvalues.iter().chain(&data).any(|v| !v.is_finite()) {
        return Err(corrupt(path, "non-finite entries"));
    }
    if eigenvalues.windows(2).any(|w| w[0] > w[1]) {
        return Err(corrupt(path, "eigenvalues not ascending"));
    }
    let eigenvectors = Mat::from_fn(dim, dim, |i, c| data[c * dim + i]);
    Ok(SpectralData { params: *params, parity, eigenvalues, eigenvectors, n_converged, digest: *expected })
}

/// Writes through a temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("spectrum"),
        std::process::id()
    ));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Spectrum provider backed by an optional on-disk cache.
#[derive(Debug, Default)]
pub struct SpectrumStore {
    dir: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl SpectrumStore {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir, ..Default::default() }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn path_for(&self, digest: &[u8; 32]) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.dcks", digest_hex(digest))))
    }

    /// Loads the spectrum from the cache or computes and stores it.
    /// A corrupt cache entry is an error, not a silent recomputation.
    pub fn get(&self, params: &ModelParams<f64>, parity: Parity, conv: Option<&ConvergenceSettings>) -> Result<SpectralData<f64>> {
        let digest = params_digest(params, parity, conv);
        let path = self.path_for(&digest);
        if let Some(path) = &path {
            if path.exists() {
                let mut bytes = Vec::new();
                fs::File::open(path)?.read_to_end(&mut bytes)?;
                let spec = decode(&bytes, &digest, params, parity, path)?;
                self.hits.fetch_add(1, Ordering::Relaxed);
                log::debug!("cache hit {}", path.display());
                return Ok(spec);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let spec = compute_spectrum(params, parity, conv)?;
        if let Some(path) = &path {
            write_atomic(path, &encode(&spec))?;
            log::debug!("cached {}", path.display());
        }
        Ok(spec)
    }

    /// Both parity blocks.
    pub fn get_pair(&self, params: &ModelParams<f64>, conv: Option<&ConvergenceSettings>) -> Result<[SpectralData<f64>; 2]> {
        Ok([self.get(params, Parity::Positive, conv)?, self.get(params, Parity::Negative, conv)?])
    }
}
