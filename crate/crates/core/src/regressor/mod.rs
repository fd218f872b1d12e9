//! Linear support vector regression over word histograms, and the
//! [`TrainedMetric`] bundle that scores images end to end.

mod svr;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{
    build_codebook, encode_histogram, extract_patches, probe_patches, Codebook, FitReport, Histogram,
    KMeansConfig, LogitNorm, PatchProbe, Selector, DEFAULT_K,
};
use crate::container::{read_container, write_container, TensorMap};
use crate::dataset::{make_folds, RecordKey};
use crate::error::{Error, Result};
use crate::gan::{ArchSpec, DiscriminatorModel};
use crate::image::{augment_rotations, ImageRGB};

pub use svr::{default_grid, select_params, train_svr, GridPoint, SvrModel, SvrParams};

const METRIC_MAGIC: &[u8; 8] = b"VQALMETR";
const METRIC_VERSION: u32 = 1;

/// Settings for building a metric from a trained discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub k: usize,
    /// Patch stride; half the patch size when unset.
    pub stride: Option<usize>,
    pub selector: Selector,
    pub kmeans_max_iters: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Fixed SVR hyper-parameters; grid search on a held-out part of the pool when unset.
    pub svr: Option<SvrParams>,
    /// Add the 90°, 180° and 270° rotations of every image to the codebook pool.
    pub augment_rotations: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        Self {
            k: DEFAULT_K,
            stride: None,
            selector: Selector::default(),
            kmeans_max_iters: km.max_iters,
            kmeans_tol: km.tol,
            seed: 0,
            svr: None,
            augment_rotations: false,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParam(format!("K must be at least 2, got {}", self.k)));
        }
        if self.stride == Some(0) {
            return Err(Error::InvalidParam("stride must be positive".into()));
        }
        if let Selector::Threshold { epsilon } = self.selector {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::InvalidParam(format!("epsilon {epsilon} outside [0,1]")));
            }
        }
        if let Some(p) = self.svr {
            p.validate()?;
        }
        Ok(())
    }

    fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            seed: self.seed,
            max_iters: self.kmeans_max_iters,
            tol: self.kmeans_tol,
        }
    }
}

/// Provenance of the discriminator weights inside a bundle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub sha256: String,
}

impl CheckpointRef {
    pub fn of_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(Self {
            path: path.display().to_string(),
            sha256: sha256_hex(&std::fs::read(path)?),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to score an image: discriminator, logit norm, codebook and SVR.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedMetric {
    pub config: MetricConfig,
    pub arch_id: String,
    pub checkpoint: CheckpointRef,
    pub discriminator: DiscriminatorModel,
    pub norm: LogitNorm,
    pub codebook: Codebook,
    pub svr: SvrModel,
    /// Snapshot of the run configuration that produced the bundle.
    pub run_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct MetricMeta {
    schema: String,
    config: MetricConfig,
    arch_id: String,
    checkpoint: CheckpointRef,
    spec: ArchSpec,
    norm: LogitNorm,
    codebook_k: usize,
    codebook_dim: usize,
    codebook_seed: u64,
    svr_params: SvrParams,
    svr_bias: f64,
    run_config: serde_json::Value,
}

impl TrainedMetric {
    pub fn patch_size(&self) -> usize {
        self.discriminator.input_size()
    }

    pub fn stride(&self) -> usize {
        self.config.stride.unwrap_or(self.patch_size() / 2)
    }

    pub fn probe(&self, img: &ImageRGB) -> Result<PatchProbe> {
        let (_, patches) = extract_patches(img, self.patch_size(), self.stride())?;
        probe_patches(&self.discriminator, &patches)
    }

    pub fn histogram(&self, img: &ImageRGB) -> Result<Histogram> {
        encode_histogram(&self.probe(img)?, &self.codebook, Some(&self.norm), self.config.selector)
    }

    /// Predicted quality of `img`; a pure function of the bundle and the pixels.
    pub fn score_image(&self, img: &ImageRGB) -> Result<f64> {
        self.svr.predict(&self.histogram(img)?.mu)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = TensorMap::new();
        self.discriminator.to_tensors("discriminator.", &mut tensors);
        tensors.insert("codebook.centroids", self.codebook.centroids().to_vec());
        tensors.insert("svr.weights", self.svr.weights.clone());
        let meta = MetricMeta {
            schema: "viewqual/metric".into(),
            config: self.config.clone(),
            arch_id: self.arch_id.clone(),
            checkpoint: self.checkpoint.clone(),
            spec: self.discriminator.spec.clone(),
            norm: self.norm,
            codebook_k: self.codebook.k(),
            codebook_dim: self.codebook.dim(),
            codebook_seed: self.codebook.seed(),
            svr_params: self.svr.params,
            svr_bias: self.svr.bias,
            run_config: self.run_config.clone(),
        };
        write_container(path, METRIC_MAGIC, METRIC_VERSION, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut tensors): (MetricMeta, _) = read_container(path, METRIC_MAGIC, METRIC_VERSION)?;
        let discriminator = DiscriminatorModel::from_tensors(meta.spec, "discriminator.", &mut tensors)?;
        let (k, dim) = (meta.codebook_k, meta.codebook_dim);
        if dim != discriminator.feature_dim() {
            return Err(Error::Format(format!(
                "codebook dim {dim} does not match feature dim {}",
                discriminator.feature_dim()
            )));
        }
        let centroids = tensors.take("codebook.centroids", Some(k * dim))?;
        let codebook = Codebook::from_centroids(k, dim, centroids, &meta.arch_id, meta.codebook_seed)?;
        let weights = tensors.take("svr.weights", Some(k))?;
        if !tensors.is_empty() {
            return Err(Error::Format(format!("unexpected tensors {:?}", tensors.names())));
        }
        Ok(Self {
            config: meta.config,
            arch_id: meta.arch_id,
            checkpoint: meta.checkpoint,
            discriminator,
            norm: meta.norm,
            codebook,
            svr: SvrModel {
                weights,
                bias: meta.svr_bias,
                params: meta.svr_params,
            },
            run_config: meta.run_config,
        })
    }
}

/// Images with subjective scores used to fit the metric. `keys` drive the
/// held-out split for hyper-parameter selection.
#[derive(Clone, Copy, Debug)]
pub struct MetricTrainingSet<'a> {
    pub images: &'a [ImageRGB],
    pub targets: &'a [f64],
    pub keys: &'a [RecordKey],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildReport {
    pub codebook_fit: FitReport,
    pub n_pool_patches: usize,
    pub histograms: Vec<Histogram>,
    pub grid: Vec<GridPoint>,
    pub svr_params: SvrParams,
}

/// Fits the logit norm and codebook on the patches of `data`, encodes every
/// image and trains the SVR on the resulting histograms.
pub fn build_metric(
    discriminator: DiscriminatorModel,
    arch_id: &str,
    checkpoint: CheckpointRef,
    data: MetricTrainingSet<'_>,
    config: &MetricConfig,
    run_config: serde_json::Value,
) -> Result<(TrainedMetric, BuildReport)> {
    config.validate()?;
    let n = data.images.len();
    if n != data.targets.len() {
        return Err(Error::LengthMismatch(n, data.targets.len()));
    }
    if n != data.keys.len() {
        return Err(Error::LengthMismatch(n, data.keys.len()));
    }
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let patch = discriminator.input_size();
    let stride = config.stride.unwrap_or(patch / 2);
    let probe_of = |img: &ImageRGB| -> Result<PatchProbe> {
        let (_, patches) = extract_patches(img, patch, stride)?;
        probe_patches(&discriminator, &patches)
    };
    let probes = data.images.iter().map(probe_of).collect::<Result<Vec<_>>>()?;
    let mut pool_features: Vec<f64> = Vec::new();
    let mut pool_logits: Vec<f64> = Vec::new();
    for p in &probes {
        pool_features.extend_from_slice(&p.features);
        pool_logits.extend_from_slice(&p.logits);
    }
    if config.augment_rotations {
        for img in data.images {
            for rotated in augment_rotations(img) {
                let p = probe_of(&rotated)?;
                pool_features.extend(p.features);
                pool_logits.extend(p.logits);
            }
        }
    }
    let norm = LogitNorm::fit(&pool_logits)?;
    let dim = discriminator.feature_dim();
    let (codebook, codebook_fit) = build_codebook(&pool_features, dim, &config.kmeans(), arch_id)?;
    info!(
        "codebook: K={} over {} patches, {} Lloyd iterations",
        config.k,
        pool_logits.len(),
        codebook_fit.iterations
    );
    let histograms = probes
        .iter()
        .map(|p| encode_histogram(p, &codebook, Some(&norm), config.selector))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = histograms.iter().map(|h| h.mu.clone()).collect();

    let (svr_params, grid) = match config.svr {
        Some(p) => (p, Vec::new()),
        None => {
            let index: BTreeMap<&RecordKey, usize> = data.keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
            if index.len() != n {
                return Err(Error::Manifest("duplicate record keys in metric training set".into()));
            }
            let ids: BTreeSet<RecordKey> = data.keys.iter().cloned().collect();
            let fold = make_folds(&ids, 1, config.seed)?.remove(0);
            let pick = |keys: &[RecordKey]| -> (Vec<Vec<f64>>, Vec<f64>) {
                keys.iter().map(|k| (rows[index[k]].clone(), data.targets[index[k]])).unzip()
            };
            let (tx, ty) = pick(&fold.train);
            let (hx, hy) = pick(&fold.test);
            select_params(&tx, &ty, &hx, &hy, &default_grid())?
        }
    };
    let svr = train_svr(&rows, data.targets, svr_params)?;
    let metric = TrainedMetric {
        config: config.clone(),
        arch_id: arch_id.to_string(),
        checkpoint,
        discriminator,
        norm,
        codebook,
        svr,
        run_config,
    };
    let report = BuildReport {
        codebook_fit,
        n_pool_patches: pool_logits.len(),
        histograms,
        grid,
        svr_params,
    };
    Ok((metric, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::scene;

    fn keys(n: usize) -> Vec<RecordKey> {
        (0..n)
            .map(|i| RecordKey {
                content_id: format!("c{}", i / 2),
                viewpoint_id: format!("v{}", i % 2),
                algorithm_id: "A1".into(),
                rotation: 0,
            })
            .collect()
    }

    fn toy_metric(svr: Option<SvrParams>) -> (TrainedMetric, BuildReport, Vec<ImageRGB>) {
        let spec = ArchSpec::new(vec![2, 4], true).unwrap();
        let d = DiscriminatorModel::new(spec, 4);
        let images: Vec<ImageRGB> = (0..12).map(|i| scene(32, i).0).collect();
        let targets: Vec<f64> = (0..12).map(|i| 1.0 + i as f64 / 4.0).collect();
        let keys = keys(12);
        let cfg = MetricConfig {
            k: 4,
            svr,
            ..MetricConfig::default()
        };
        let ck = CheckpointRef {
            path: "none".into(),
            sha256: sha256_hex(b""),
        };
        let data = MetricTrainingSet {
            images: &images,
            targets: &targets,
            keys: &keys,
        };
        let (m, r) = build_metric(d, "D1", ck, data, &cfg, serde_json::json!({"note": "test"})).unwrap();
        (m, r, images)
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn built_metric_scores_and_round_trips() {
        let (m, report, images) = toy_metric(None);
        assert_eq!(report.grid.len(), 18);
        assert_eq!(report.histograms.len(), 12);
        assert_eq!(report.n_pool_patches, 12 * 9);
        let s = m.score_image(&images[0]).unwrap();
        assert!(s.is_finite());
        assert_eq!(m.score_image(&images[0]).unwrap(), s);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metric.bin");
        m.save(&path).unwrap();
        let back = TrainedMetric::load(&path).unwrap();
        assert_eq!(back, m);
        for img in &images {
            assert_eq!(back.score_image(img).unwrap(), m.score_image(img).unwrap());
        }
        let rotated = images[3].rotate(180).unwrap();
        assert!(m.score_image(&rotated).unwrap().is_finite());
    }

    #[test]
    fn fixed_params_skip_the_grid() {
        let p = SvrParams {
            c: 10.0,
            tube_epsilon: 0.01,
        };
        let (m, report, _) = toy_metric(Some(p));
        assert!(report.grid.is_empty());
        assert_eq!(m.svr.params, p);
    }

    #[test]
    fn too_small_images_are_rejected() {
        let (m, _, _) = toy_metric(Some(SvrParams::default()));
        assert!(matches!(
            m.score_image(&ImageRGB::filled(8, 8, 0.5)),
            Err(Error::ImageTooSmall { .. })
        ));
    }
}
