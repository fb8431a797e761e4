//! Kernel functions over sparse count vectors and Gram matrices.
//!
//! Conventions:
//! - `Rbf { gamma }` is `exp(-gamma * ||a - b||^2)`.
//! - `TanimotoRbf { gamma }` is `exp(-|T(a,a) + T(b,b) - 2 T(a,b)| / gamma)`,
//!   so here `gamma` is a width (it divides), unlike plain RBF.
//! - Tanimoto of two empty vectors is 0.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Dataset, SparseVector};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("unknown kernel {0:?} (expected linear, rbf, tanimoto or tanimoto-rbf)")]
    UnknownKernel(String),
    #[error("{kind} kernel requires a gamma parameter")]
    MissingGamma { kind: &'static str },
    #[error("Gram matrix {rows}x{cols} needs {required} bytes, limit is {limit}")]
    MemoryLimit {
        rows: usize,
        cols: usize,
        required: usize,
        limit: usize,
    },
    #[error("Gram cache I/O error: {0}")]
    Cache(#[from] io::Error),
    #[error("Gram cache file {0} is corrupt")]
    CorruptCache(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
    Tanimoto,
    TanimotoRbf { gamma: f64 },
}

impl KernelSpec {
    /// Builds a spec from a kernel name and optional gamma, enforcing that
    /// gamma is given (and positive) exactly for the RBF variants.
    pub fn from_parts(kind: &str, gamma: Option<f64>) -> Result<Self, KernelError> {
        let need = |kind: &'static str| -> Result<f64, KernelError> {
            let g = gamma.ok_or(KernelError::MissingGamma { kind })?;
            if g.is_finite() && g > 0.0 {
                Ok(g)
            } else {
                Err(KernelError::InvalidGamma(g))
            }
        };
        match kind {
            "linear" => Ok(KernelSpec::Linear),
            "tanimoto" => Ok(KernelSpec::Tanimoto),
            "rbf" => Ok(KernelSpec::Rbf { gamma: need("rbf")? }),
            "tanimoto-rbf" => Ok(KernelSpec::TanimotoRbf {
                gamma: need("tanimoto-rbf")?,
            }),
            other => Err(KernelError::UnknownKernel(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Rbf { .. } => "rbf",
            KernelSpec::Tanimoto => "tanimoto",
            KernelSpec::TanimotoRbf { .. } => "tanimoto-rbf",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            KernelSpec::Rbf { gamma } | KernelSpec::TanimotoRbf { gamma } => Some(gamma),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        match self.gamma() {
            Some(g) if !(g.is_finite() && g > 0.0) => Err(KernelError::InvalidGamma(g)),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: &SparseVector, b: &SparseVector) -> f64 {
        kernel_eval(self, a, b)
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gamma() {
            Some(g) => write!(f, "{} {}", self.name(), g),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = KernelError;

    /// Parses the `Display` form, e.g. `tanimoto-rbf 0.5`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        let kind = parts.next().unwrap_or("");
        let gamma = match parts.next() {
            Some(g) => Some(
                g.parse::<f64>()
                    .map_err(|_| KernelError::UnknownKernel(s.to_string()))?,
            ),
            None => None,
        };
        Self::from_parts(kind, gamma)
    }
}

/// Sparse dot product (merge over sorted indices).
pub fn dot(a: &SparseVector, b: &SparseVector) -> f64 {
    let (ai, av) = (a.indices(), a.values());
    let (bi, bv) = (b.indices(), b.values());
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < ai.len() && j < bi.len() {
        match ai[i].cmp(&bi[j]) {
            std::cmp::Ordering::Equal => {
                sum += av[i] * bv[j];
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    sum
}

/// Sum over shared indices of `min(a_i, b_i)`.
pub fn min_sum(a: &SparseVector, b: &SparseVector) -> f64 {
    let (ai, av) = (a.indices(), a.values());
    let (bi, bv) = (b.indices(), b.values());
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < ai.len() && j < bi.len() {
        match ai[i].cmp(&bi[j]) {
            std::cmp::Ordering::Equal => {
                sum += av[i].min(bv[j]);
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    sum
}

/// Count-aware Tanimoto similarity `sum min / (sum a + sum b - sum min)`.
pub fn tanimoto(a: &SparseVector, b: &SparseVector) -> f64 {
    let shared = min_sum(a, b);
    let denom = a.total() + b.total() - shared;
    if denom <= 0.0 {
        // Both empty.
        return 0.0;
    }
    (shared / denom).clamp(0.0, 1.0)
}

/// `||a - b||^2` without densifying.
pub fn squared_distance(a: &SparseVector, b: &SparseVector) -> f64 {
    (a.squared_norm() + b.squared_norm() - 2.0 * dot(a, b)).max(0.0)
}

fn self_tanimoto(a: &SparseVector) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        1.0
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &SparseVector, b: &SparseVector) -> f64 {
    match *spec {
        KernelSpec::Linear => dot(a, b),
        KernelSpec::Rbf { gamma } => (-gamma * squared_distance(a, b)).exp(),
        KernelSpec::Tanimoto => tanimoto(a, b),
        KernelSpec::TanimotoRbf { gamma } => {
            let spread = (self_tanimoto(a) + self_tanimoto(b) - 2.0 * tanimoto(a, b)).abs();
            (-spread / gamma).exp()
        }
    }
}

/// Dense row-major kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "Gram buffer size mismatch");
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Options for [`gram_matrix_with`].
#[derive(Debug, Clone, Copy)]
pub struct GramOptions {
    /// Rows evaluated per parallel task.
    pub chunk_rows: usize,
    /// Upper bound on the matrix buffer, in bytes.
    pub max_bytes: usize,
}

impl Default for GramOptions {
    fn default() -> Self {
        Self {
            chunk_rows: 256,
            max_bytes: 4 << 30,
        }
    }
}

pub fn gram_matrix(spec: &KernelSpec, rows: &[SparseVector], cols: &[SparseVector]) -> Result<GramMatrix, KernelError> {
    gram_matrix_with(spec, rows, cols, GramOptions::default())
}

/// Gram matrix between two vector sets, evaluated in parallel row chunks.
/// When `rows` and `cols` are the same slice only the lower triangle is
/// computed and mirrored, so the result is exactly symmetric.
pub fn gram_matrix_with(
    spec: &KernelSpec,
    rows: &[SparseVector],
    cols: &[SparseVector],
    opts: GramOptions,
) -> Result<GramMatrix, KernelError> {
    spec.validate()?;
    let (n, m) = (rows.len(), cols.len());
    let required = n
        .checked_mul(m)
        .and_then(|c| c.checked_mul(std::mem::size_of::<f64>()))
        .unwrap_or(usize::MAX);
    if required > opts.max_bytes {
        return Err(KernelError::MemoryLimit {
            rows: n,
            cols: m,
            required,
            limit: opts.max_bytes,
        });
    }
    let same = std::ptr::eq(rows, cols);
    let chunk = opts.chunk_rows.max(1);
    let mut values = vec![0.0; n * m];
    if m > 0 {
        values
            .par_chunks_mut(chunk * m)
            .enumerate()
            .for_each(|(c, block)| {
                for (r, out) in block.chunks_mut(m).enumerate() {
                    let i = c * chunk + r;
                    let upto = if same { i + 1 } else { m };
                    for j in 0..upto {
                        out[j] = kernel_eval(spec, &rows[i], &cols[j]);
                    }
                }
            });
    }
    if same {
        for i in 0..n {
            for j in (i + 1)..n {
                values[i * n + j] = values[j * n + i];
            }
        }
    }
    Ok(GramMatrix {
        rows: n,
        cols: m,
        values,
    })
}

/// Square Gram matrix of a dataset against itself.
pub fn dataset_gram(spec: &KernelSpec, ds: &Dataset) -> Result<GramMatrix, KernelError> {
    gram_matrix(spec, ds.vectors(), ds.vectors())
}

const CACHE_MAGIC: &[u8; 8] = b"ICPGRAM1";

/// On-disk cache of square Gram matrices keyed by dataset content and kernel.
///
/// File layout: magic `ICPGRAM1`, rows and cols as little-endian u64, then
/// `rows * cols` little-endian f64 values, then a SHA-256 of everything
/// before it.
#[derive(Debug, Clone)]
pub struct GramCache {
    dir: PathBuf,
}

impl GramCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn key(spec: &KernelSpec, ds: &Dataset) -> String {
        let mut h = Sha256::new();
        h.update(ds.content_hash().as_bytes());
        h.update(spec.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.gram"))
    }

    pub fn get_or_compute(&self, spec: &KernelSpec, ds: &Dataset) -> Result<GramMatrix, KernelError> {
        let path = self.path(&Self::key(spec, ds));
        if path.exists() {
            return read_gram(&path);
        }
        let gram = dataset_gram(spec, ds)?;
        fs::create_dir_all(&self.dir)?;
        write_gram(&path, &gram)?;
        Ok(gram)
    }
}

pub fn write_gram(path: &Path, gram: &GramMatrix) -> Result<(), KernelError> {
    let mut buf = Vec::with_capacity(24 + gram.values.len() * 8 + 32);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(gram.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(gram.cols as u64).to_le_bytes());
    for v in &gram.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_gram(path: &Path) -> Result<GramMatrix, KernelError> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let corrupt = || KernelError::CorruptCache(path.to_path_buf());
    if buf.len() < 24 + 32 || &buf[..8] != CACHE_MAGIC {
        return Err(corrupt());
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt());
    }
    let rows = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(body[16..24].try_into().unwrap()) as usize;
    let data = &body[24..];
    if data.len() != rows.checked_mul(cols).and_then(|c| c.checked_mul(8)).ok_or_else(corrupt)? {
        return Err(corrupt());
    }
    let values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GramMatrix { rows, cols, values })
}
