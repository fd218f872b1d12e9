use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 160;
const CODEBOOK_MAGIC: &[u8; 4] = b"BDWC";
const CODEBOOK_VERSION: u32 = 1;
const ARCH_FIELD: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

/// Bag-of-distortion-words codebook: `k` centroids of dimension `dim`, row-major.
///
/// Centroid values are representable as f32 so a saved codebook reloads bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    k: usize,
    dim: usize,
    arch_id: String,
    seed: u64,
    centroids: Vec<f64>,
}

/// Diagnostics of a codebook fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    /// Inertia after each Lloyd assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    /// Final assignment of every input against the stored centroids.
    pub assignments: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest row of `centroids`; ties go to the lowest index.
fn nearest(v: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(v, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &[f64], dim: usize, centroids: &[f64]) -> Vec<(usize, f64)> {
    points
        .par_chunks_exact(dim)
        .map(|p| nearest(p, centroids, dim))
        .collect()
}

fn count_distinct(points: &[f64], dim: usize, cap: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points.chunks_exact(dim) {
        seen.insert(p.iter().map(|v| v.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

/// k-means++ seeding: first centre uniform, later ones drawn with probability ∝ D².
fn seed_centroids(points: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points.chunks_exact(dim).map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("distinct points remain");
        let c = points[pick * dim..(pick + 1) * dim].to_vec();
        for (w, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.extend(c);
    }
    centroids
}

fn quantize(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = f64::from(*x as f32));
}

/// Lloyd k-means with k-means++ seeding over `points` (row-major, `dim` columns).
pub fn build_codebook(
    points: &[f64],
    dim: usize,
    config: &KMeansConfig,
    arch_id: &str,
) -> Result<(Codebook, FitReport)> {
    if dim == 0 || !points.len().is_multiple_of(dim) {
        return Err(Error::DimMismatch(format!(
            "{} values do not form rows of {dim}",
            points.len()
        )));
    }
    if config.k < 2 {
        return Err(Error::InvalidParam(format!("K must be at least 2, got {}", config.k)));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParam("non-finite feature value".into()));
    }
    let n = points.len() / dim;
    let distinct = count_distinct(points, dim, config.k);
    if n < config.k || distinct < config.k {
        return Err(Error::TooFewSamples {
            needed: config.k,
            got: distinct,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_centroids(points, dim, config.k, &mut rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..config.max_iters {
        iterations += 1;
        let assigned = assign_all(points, dim, &centroids);
        history.push(assigned.iter().map(|a| a.1).sum());
        let mut sums = vec![0.0; config.k * dim];
        let mut counts = vec![0usize; config.k];
        for (p, &(j, _)) in points.chunks_exact(dim).zip(&assigned) {
            counts[j] += 1;
            sums[j * dim..(j + 1) * dim].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift = 0.0f64;
        let mut taken = HashSet::new();
        for j in 0..config.k {
            let next: Vec<f64> = if counts[j] > 0 {
                sums[j * dim..(j + 1) * dim].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                // empty cluster: move it onto the worst-served point not already used
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .expect("n >= k");
                taken.insert(far);
                points[far * dim..(far + 1) * dim].to_vec()
            };
            shift = shift.max(sq_dist(&next, &centroids[j * dim..(j + 1) * dim]).sqrt());
            centroids[j * dim..(j + 1) * dim].copy_from_slice(&next);
        }
        if shift < config.tol {
            break;
        }
    }
    quantize(&mut centroids);
    let assignments = assign_all(points, dim, &centroids).into_iter().map(|a| a.0).collect();
    let cb = Codebook {
        k: config.k,
        dim,
        arch_id: arch_id.to_string(),
        seed: config.seed,
        centroids,
    };
    Ok((
        cb,
        FitReport {
            inertia_history: history,
            iterations,
            assignments,
        },
    ))
}

impl Codebook {
    /// Builds a codebook from explicit centroids (rounded to f32 precision).
    pub fn from_centroids(k: usize, dim: usize, centroids: Vec<f64>, arch_id: &str, seed: u64) -> Result<Self> {
        if k < 2 || dim == 0 || centroids.len() != k * dim {
            return Err(Error::DimMismatch(format!(
                "{} centroid values for K={k}, dim={dim}",
                centroids.len()
            )));
        }
        if arch_id.len() > ARCH_FIELD || !arch_id.is_ascii() {
            return Err(Error::InvalidParam(format!("arch id `{arch_id}` too long")));
        }
        let mut centroids = centroids;
        quantize(&mut centroids);
        Ok(Self {
            k,
            dim,
            arch_id: arch_id.to_string(),
            seed,
            centroids,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arch_id(&self) -> &str {
        &self.arch_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// Nearest centroid by Euclidean distance, lowest index on ties.
    pub fn assign(&self, v: &[f64]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch(format!(
                "feature of length {} against codebook dim {}",
                v.len(),
                self.dim
            )));
        }
        Ok(nearest(v, &self.centroids, self.dim).0)
    }

    /// Sum of squared distances of `points` to their nearest centroid.
    pub fn inertia(&self, points: &[f64]) -> f64 {
        assign_all(points, self.dim, &self.centroids).iter().map(|a| a.1).sum()
    }

    /// Binary layout: `BDWC`, version u32, K u32, dim u32, seed u64, arch id
    /// (8 ASCII bytes, zero padded), then K·dim f32 values; all little-endian.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(CODEBOOK_MAGIC)?;
        out.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
        out.write_all(&(self.k as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        let mut arch = [0u8; ARCH_FIELD];
        arch[..self.arch_id.len()].copy_from_slice(self.arch_id.as_bytes());
        out.write_all(&arch)?;
        let mut buf = Vec::with_capacity(self.centroids.len() * 4);
        for &v in &self.centroids {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(inp: &mut impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated codebook".into()),
            _ => Error::Io(e),
        };
        let mut head = [0u8; 32];
        inp.read_exact(&mut head).map_err(fmt)?;
        if &head[..4] != CODEBOOK_MAGIC {
            return Err(Error::Format("not a codebook file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != CODEBOOK_VERSION {
            return Err(Error::Format(format!("unsupported codebook version {version}")));
        }
        let (k, dim) = (u32_at(8) as usize, u32_at(12) as usize);
        let seed = u64::from_le_bytes(head[16..24].try_into().expect("8 bytes"));
        let arch_id = String::from_utf8(head[24..32].iter().copied().take_while(|&b| b != 0).collect())
            .map_err(|_| Error::Format("arch id is not UTF-8".into()))?;
        let mut raw = vec![0u8; k * dim * 4];
        inp.read_exact(&mut raw).map_err(fmt)?;
        let centroids = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Self::from_centroids(k, dim, centroids, &arch_id, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
