//! Patch gridding, discriminator embeddings, logit normalisation, the
//! bag-of-distortion-words codebook and histogram encoding.

mod kmeans;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::DiscriminatorModel;
use crate::image::ImageRGB;
use crate::nn::{sigmoid, Tensor};

pub use kmeans::{build_codebook, Codebook, FitReport, KMeansConfig, DEFAULT_K};

/// Default selection threshold on normalised logits.
pub const DEFAULT_EPSILON: f64 = 0.7;

/// Patches per discriminator batch during feature extraction.
const PROBE_BATCH: usize = 16;

/// Square patch anchors at `stride` steps, plus one flush to the far border when
/// the step grid leaves a remainder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub anchors: Vec<(usize, usize)>,
}

fn axis_anchors(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if !last.is_multiple_of(stride) {
        out.push(last);
    }
    out
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, stride: usize) -> Result<Self> {
        if patch_size == 0 || stride == 0 {
            return Err(Error::InvalidParam("patch size and stride must be positive".into()));
        }
        if height < patch_size || width < patch_size {
            return Err(Error::ImageTooSmall {
                height,
                width,
                patch: patch_size,
            });
        }
        let rows = axis_anchors(height, patch_size, stride);
        let cols = axis_anchors(width, patch_size, stride);
        let anchors = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self {
            patch_size,
            stride,
            anchors,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.anchors.len()
    }
}

/// Cuts `img` into overlapping patches, returned as an `n_p×3×P×P` tensor in anchor order.
pub fn extract_patches(img: &ImageRGB, patch_size: usize, stride: usize) -> Result<(PatchGrid, Tensor)> {
    let grid = PatchGrid::new(img.height(), img.width(), patch_size, stride)?;
    let mut t = Tensor::zeros(grid.n_patches(), 3, patch_size, patch_size);
    for (i, &(r, c)) in grid.anchors.iter().enumerate() {
        img.crop_chw(r, c, patch_size, t.sample_mut(i));
    }
    Ok((grid, t))
}

/// Discriminator view of a patch set: penultimate features and head logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchProbe {
    pub dim: usize,
    /// Row-major, one `dim`-long row per patch.
    pub features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl PatchProbe {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Runs every patch through `d` in fixed-size batches. Batch norm is in inference
/// mode, so each row depends on its own patch only.
pub fn probe_patches(d: &DiscriminatorModel, patches: &Tensor) -> Result<PatchProbe> {
    if patches.c != 3 || patches.h != d.input_size() || patches.w != d.input_size() {
        return Err(Error::Shape(format!(
            "patches {:?} do not match the {}px discriminator input",
            patches.shape(),
            d.input_size()
        )));
    }
    let len = patches.sample_len();
    let parts: Vec<(Vec<f64>, Vec<f64>)> = patches
        .data
        .par_chunks(PROBE_BATCH * len)
        .map(|chunk| {
            let x = Tensor::from_vec(chunk.len() / len, 3, patches.h, patches.w, chunk.to_vec());
            let (f, l) = d.features_and_logits(&x)?;
            Ok((f.data, l))
        })
        .collect::<Result<_>>()?;
    let mut probe = PatchProbe {
        dim: d.feature_dim(),
        features: Vec::with_capacity(patches.n * d.feature_dim()),
        logits: Vec::with_capacity(patches.n),
    };
    for (f, l) in parts {
        probe.features.extend(f);
        probe.logits.extend(l);
    }
    if probe.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Shape("non-finite discriminator feature".into()));
    }
    Ok(probe)
}

/// Flattened penultimate activation of a single `3×P×P` patch.
pub fn features(d: &DiscriminatorModel, patch: &Tensor) -> Result<Vec<f64>> {
    if patch.n != 1 {
        return Err(Error::Shape(format!("expected one patch, got {}", patch.n)));
    }
    Ok(d.features(patch)?.data)
}

/// 1 when the discriminator calls the logit real (probability ≥ 0.5), else 0.
pub fn boolean_from_logit(logit: f64) -> u8 {
    u8::from(sigmoid(logit) >= 0.5)
}

pub fn disc_boolean(d: &DiscriminatorModel, patch: &Tensor) -> Result<u8> {
    if patch.n != 1 {
        return Err(Error::Shape(format!("expected one patch, got {}", patch.n)));
    }
    Ok(boolean_from_logit(d.logits(patch)?[0]))
}

/// Affine map of the fitted logit range onto [0,1], clamped outside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitNorm {
    pub min_logit: f64,
    pub max_logit: f64,
}

impl LogitNorm {
    pub fn fit(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite logit".into()));
        }
        let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if logits.is_empty() {
            return Err(Error::TooFewSamples { needed: 2, got: 0 });
        }
        if max <= min {
            return Err(Error::DegenerateRange(min));
        }
        Ok(Self {
            min_logit: min,
            max_logit: max,
        })
    }

    pub fn normalize(&self, logit: f64) -> f64 {
        ((logit - self.min_logit) / (self.max_logit - self.min_logit)).clamp(0.0, 1.0)
    }
}

/// Which patches contribute to the histogram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Selector {
    All,
    /// Patches the discriminator labels as generated.
    Boolean,
    /// Patches whose normalised logit is below `epsilon`.
    Threshold { epsilon: f64 },
}

impl Default for Selector {
    fn default() -> Self {
        Selector::Threshold {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::All => write!(f, "all"),
            Selector::Boolean => write!(f, "boolean"),
            Selector::Threshold { epsilon } => write!(f, "threshold:{epsilon}"),
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    /// Accepts `all`, `boolean`, `threshold` (default ε) or `threshold:<ε>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Selector::All),
            "boolean" => Ok(Selector::Boolean),
            "threshold" => Ok(Selector::default()),
            _ => s
                .strip_prefix("threshold:")
                .and_then(|e| e.parse::<f64>().ok())
                .filter(|e| e.is_finite())
                .map(|epsilon| Selector::Threshold { epsilon })
                .ok_or_else(|| Error::InvalidParam(format!("unknown selector `{s}`"))),
        }
    }
}

impl Selector {
    pub fn selects(&self, logit: f64, norm: Option<&LogitNorm>) -> Result<bool> {
        match *self {
            Selector::All => Ok(true),
            Selector::Boolean => Ok(boolean_from_logit(logit) == 0),
            Selector::Threshold { epsilon } => {
                let norm = norm.ok_or_else(|| {
                    Error::InvalidParam("threshold selector needs a fitted logit norm".into())
                })?;
                Ok(norm.normalize(logit) < epsilon)
            }
        }
    }
}

/// Per-image word histogram: `mu[k]` is the share of all patches that were
/// selected and assigned to word `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub mu: Vec<f64>,
    pub n_patches: usize,
    pub selected: usize,
}

/// Histogram from precomputed word assignments and head logits.
pub fn encode_assigned(
    assignments: &[usize],
    logits: &[f64],
    k: usize,
    norm: Option<&LogitNorm>,
    selector: Selector,
) -> Result<Histogram> {
    if assignments.len() != logits.len() {
        return Err(Error::LengthMismatch(assignments.len(), logits.len()));
    }
    if assignments.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let mut counts = vec![0usize; k];
    for (&a, &l) in assignments.iter().zip(logits) {
        if a >= k {
            return Err(Error::DimMismatch(format!("word {a} outside codebook of {k}")));
        }
        if selector.selects(l, norm)? {
            counts[a] += 1;
        }
    }
    let n = assignments.len();
    Ok(Histogram {
        mu: counts.iter().map(|&c| c as f64 / n as f64).collect(),
        n_patches: n,
        selected: counts.iter().sum(),
    })
}

/// Quantises a probed patch set against `cb` and histograms the selected patches.
pub fn encode_histogram(
    probe: &PatchProbe,
    cb: &Codebook,
    norm: Option<&LogitNorm>,
    selector: Selector,
) -> Result<Histogram> {
    if probe.is_empty() {
        return Err(Error::EmptyPatchSet);
    }
    let assignments = (0..probe.len())
        .map(|i| cb.assign(probe.feature(i)))
        .collect::<Result<Vec<_>>>()?;
    encode_assigned(&assignments, &probe.logits, cb.k(), norm, selector)
}

/// Tab-separated export: `key` then the K histogram entries, one row per image.
pub fn write_histograms(out: &mut impl Write, rows: &[(String, Histogram)]) -> Result<()> {
    for (key, h) in rows {
        write!(out, "{key}")?;
        for v in &h.mu {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
