use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use viewqual::codec::{write_histograms, Selector};
use viewqual::dataset::{Manifest, ManifestRecord, RecordKey};
use viewqual::eval::{
    cross_validate, external_fold_pcc, format_scores, kendall_tau, median, normalized_time, rank_algorithms,
    read_scores, significance_matrix, ScoreRow, TTest,
};
use viewqual::gan::{psnr, train_inpainter as fit_inpainter, ArchId, Checkpoint};
use viewqual::image::{load_image, ImageRGB};
use viewqual::maskgen::{mask_type1, mask_type2, mask_type3, slic_segment, BinaryMask, SegmentationMap};
use viewqual::regressor::{build_metric as fit_metric, CheckpointRef, MetricTrainingSet, SvrParams, TrainedMetric};

use crate::config::RunConfig;
use crate::{
    BenchmarkArgs, BuildMetricArgs, EvaluateArgs, MaskKind, PrepareMasksArgs, ScoreArgs, TTestArg, TrainArgs,
    UsageError,
};

const METRIC_NAME: &str = "viewqual";
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
const SEG_SUFFIX: &str = ".seg.png";

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

/// `target` relative to `base`, so manifests stay valid when their tree moves.
fn relative_to(target: &Path, base: &Path) -> Result<PathBuf> {
    let t = fs::canonicalize(target)?;
    let b = fs::canonicalize(base)?;
    Ok(pathdiff::diff_paths(&t, &b).unwrap_or(t))
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn corpus_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("corpus directory {} does not exist", dir.display());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
            p.is_file() && !name.ends_with(SEG_SUFFIX) && IMAGE_EXTENSIONS.contains(&ext.as_str())
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn prepare_masks(mut cfg: RunConfig, a: PrepareMasksArgs) -> Result<()> {
    if let Some(r) = a.dilation_radius {
        cfg.masks.dilation_radius = r;
    }
    if let Some(f) = a.superpixel_fraction {
        cfg.masks.superpixel_fraction = f;
    }
    let cfg = validated(cfg)?;
    let mc = &cfg.masks;
    let mut kinds = a.mask_types.clone();
    kinds.sort();
    kinds.dedup();
    let images = corpus_images(&a.corpus)?;
    if images.is_empty() {
        bail!("corpus {} contains no images", a.corpus.display());
    }
    let out_dir = parent_dir(&a.out);
    fs::create_dir_all(&out_dir)?;
    let mask_dir = a.mask_dir.clone().unwrap_or_else(|| out_dir.join("masks"));
    fs::create_dir_all(&mask_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut missing_seg = 0usize;
    for path in &images {
        let image_seed: u64 = rng.random();
        let stem = path.file_stem().and_then(|s| s.to_str()).context("non UTF-8 file name")?.to_string();
        let img = load_image(path)?;
        let seg_path = path.with_file_name(format!("{stem}{SEG_SUFFIX}"));
        let seg = if seg_path.exists() {
            let s = SegmentationMap::load_png(&seg_path)?;
            if s.height() != img.height() || s.width() != img.width() {
                bail!("label map {} does not match its image size", seg_path.display());
            }
            Some(s)
        } else {
            None
        };
        let mut made: Vec<(MaskKind, BinaryMask)> = Vec::new();
        for &kind in &kinds {
            let mask = match (kind, &seg) {
                (MaskKind::I, Some(s)) => mask_type1(s, mc.dilation_radius),
                (MaskKind::II, Some(s)) => mask_type2(&mask_type1(s, mc.dilation_radius), mc.shift_dx, mc.shift_dy),
                (MaskKind::I | MaskKind::II, None) => {
                    missing_seg += 1;
                    continue;
                }
                (MaskKind::III, _) => {
                    let n_seg = mc
                        .slic_segments
                        .unwrap_or_else(|| (img.height() * img.width()).div_ceil(300));
                    let labels = slic_segment(&img, n_seg, mc.slic_compactness, mc.slic_iters)?;
                    match mask_type3(&labels, mc.superpixel_class, mc.superpixel_fraction, image_seed) {
                        Ok(m) => m,
                        Err(viewqual::Error::NoEligibleSegments(class)) => {
                            warn!("{}: no {class} superpixels, skipping type III", path.display());
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            };
            made.push((kind, mask));
        }
        for (kind, mask) in made {
            let mask_path = mask_dir.join(format!("{stem}_{}.png", kind.label()));
            mask.save_png(&mask_path)?;
            records.push(ManifestRecord {
                image_path: relative_to(path, &out_dir)?,
                content_id: stem.clone(),
                viewpoint_id: "v0".into(),
                algorithm_id: format!("mask-{}", kind.label()),
                dmos: 0.0,
                rotation: 0,
                mask_path: Some(relative_to(&mask_path, &out_dir)?),
            });
        }
    }
    if missing_seg > 0 {
        warn!("{missing_seg} type I/II masks skipped: no `{SEG_SUFFIX}` label map");
    }
    if records.is_empty() {
        bail!("no masks could be generated from {}", a.corpus.display());
    }
    let manifest = Manifest::new(&out_dir, records)?;
    manifest.write(&a.out, &cfg.header("prepare-masks"))?;
    info!("wrote {} (image, mask) pairs to {}", manifest.records.len(), a.out.display());
    Ok(())
}

fn center_crop(img: &ImageRGB, size: usize) -> Result<ImageRGB> {
    let (h, w) = (img.height(), img.width());
    if h < size || w < size {
        bail!("image {h}x{w} is smaller than the {size}px model input");
    }
    let (r0, c0) = ((h - size) / 2, (w - size) / 2);
    Ok(ImageRGB::from_fn(size, size, |r, c| img.pixel(r0 + r, c0 + c)))
}

fn crop_mask(m: &BinaryMask, size: usize) -> BinaryMask {
    let (r0, c0) = ((m.height() - size) / 2, (m.width() - size) / 2);
    BinaryMask::from_fn(size, size, |r, c| m.get(r0 + r, c0 + c))
}

pub fn train_inpainter(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(arch) = &a.arch {
        t.arch = arch.parse::<ArchId>().map_err(usage)?;
    }
    if let Some(v) = a.width_divisor {
        t.width_divisor = v;
    }
    if let Some(v) = a.bottleneck {
        t.bottleneck = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.lambda {
        t.lambda = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    let cfg = validated(cfg)?;
    let manifest = Manifest::read(&a.manifest)?;
    let size = cfg.train.arch.input_size();
    let mut images = Vec::with_capacity(manifest.records.len());
    let mut masks = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        images.push(center_crop(&manifest.load_image(rec)?, size)?);
        masks.push(crop_mask(&manifest.load_mask(rec)?, size));
    }
    info!(
        "training {} on {} pairs for {} epochs",
        cfg.train.arch,
        images.len(),
        cfg.train.epochs
    );
    let mut ck = fit_inpainter(&images, &masks, &cfg.train)?;
    ck.run_config = cfg.snapshot();
    ck.save(&a.out)?;
    let log_path = a.loss_log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".losses.tsv");
        PathBuf::from(p)
    });
    let mut log = comment_block(&cfg.header("train-inpainter"));
    log.push_str("epoch\tjoint\trec\tadv_g\tadv_d\n");
    for e in &ck.history {
        let _ = writeln!(log, "{}\t{}\t{}\t{}\t{}", e.epoch, e.joint, e.rec, e.adv_g, e.adv_d);
    }
    fs::write(&log_path, log)?;
    info!("checkpoint written to {}", a.out.display());
    Ok(())
}

struct LoadedSet {
    manifest: Manifest,
    images: Vec<ImageRGB>,
}

impl LoadedSet {
    fn read(path: &Path) -> Result<Self> {
        let manifest = Manifest::read(path)?;
        if manifest.records.is_empty() {
            bail!("manifest {} has no records", path.display());
        }
        let images = manifest
            .records
            .par_iter()
            .map(|r| manifest.load_image(r))
            .collect::<viewqual::Result<Vec<_>>>()?;
        Ok(Self { manifest, images })
    }

    fn keys(&self) -> Vec<RecordKey> {
        self.manifest.records.iter().map(ManifestRecord::key).collect()
    }

    fn targets(&self) -> Vec<f64> {
        self.manifest.records.iter().map(|r| r.dmos).collect()
    }
}

pub fn build_metric(mut cfg: RunConfig, a: BuildMetricArgs) -> Result<()> {
    let m = &mut cfg.metric;
    if let Some(k) = a.k {
        m.k = k;
    }
    if let Some(s) = &a.selector {
        m.selector = s.parse::<Selector>().map_err(usage)?;
    }
    if a.stride.is_some() {
        m.stride = a.stride;
    }
    if let (Some(c), Some(tube)) = (a.svr_c, a.svr_tube) {
        m.svr = Some(SvrParams { c, tube_epsilon: tube });
    }
    if a.augment_rotations {
        m.augment_rotations = true;
    }
    let ck = Checkpoint::load(&a.checkpoint)?;
    cfg.train = ck.config.clone();
    let cfg = validated(cfg)?;
    let set = LoadedSet::read(&a.manifest)?;
    let (keys, targets) = (set.keys(), set.targets());
    let data = MetricTrainingSet {
        images: &set.images,
        targets: &targets,
        keys: &keys,
    };
    let (metric, report) = fit_metric(
        ck.discriminator,
        &ck.config.arch.to_string(),
        CheckpointRef::of_file(&a.checkpoint)?,
        data,
        &cfg.metric,
        cfg.snapshot(),
    )?;
    metric.save(&a.out)?;
    info!(
        "metric: K={}, {} pool patches, {} Lloyd iterations, SVR C={} tube={}",
        metric.codebook.k(),
        report.n_pool_patches,
        report.codebook_fit.iterations,
        report.svr_params.c,
        report.svr_params.tube_epsilon
    );
    if let Some(p) = &a.codebook_out {
        metric.codebook.save(p)?;
    }
    if let Some(p) = &a.histograms_out {
        let rows: Vec<(String, _)> = keys.iter().map(|k| k.to_string()).zip(report.histograms).collect();
        let mut buf = comment_block(&cfg.header("build-metric")).into_bytes();
        write_histograms(&mut buf, &rows)?;
        fs::write(p, buf)?;
    }
    Ok(())
}

fn bundle_header(tm: &TrainedMetric, command: &str) -> Vec<String> {
    vec![
        format!("viewqual {command}, schema {}", crate::config::SCHEMA_VERSION),
        format!("config: {}", tm.run_config),
    ]
}

fn record_label(rec: &ManifestRecord) -> String {
    if rec.rotation == 0 {
        rec.image_path.display().to_string()
    } else {
        format!("{}@{}", rec.image_path.display(), rec.rotation)
    }
}

fn score_all(tm: &TrainedMetric, images: &[ImageRGB]) -> Result<Vec<f64>> {
    Ok(images
        .par_iter()
        .map(|img| tm.score_image(img))
        .collect::<viewqual::Result<Vec<_>>>()?)
}

pub fn score(_cfg: RunConfig, a: ScoreArgs) -> Result<()> {
    let tm = TrainedMetric::load(&a.bundle)?;
    let mut text = comment_block(&bundle_header(&tm, "score"));
    if let Some(path) = &a.image {
        let s = tm.score_image(&load_image(path)?)?;
        let _ = writeln!(text, "{} {s}", path.display());
    } else {
        let set = LoadedSet::read(a.manifest.as_deref().expect("clap enforces one input"))?;
        let scores = score_all(&tm, &set.images)?;
        for (rec, s) in set.manifest.records.iter().zip(scores) {
            let _ = writeln!(text, "{} {s}", record_label(rec));
        }
    }
    write_output(a.out.as_deref(), &text)
}

pub fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(n) = a.n_folds {
        cfg.eval.n_folds = n;
    }
    if let Some(alpha) = a.alpha {
        cfg.eval.alpha = alpha;
    }
    if let Some(t) = a.t_test {
        cfg.eval.t_test = match t {
            TTestArg::Welch => TTest::Welch,
            TTestArg::Pooled => TTest::Pooled,
        };
    }
    let cfg = validated(cfg)?;
    let tm = TrainedMetric::load(&a.bundle)?;
    let set = LoadedSet::read(&a.manifest)?;
    let (keys, targets) = (set.keys(), set.targets());
    let rows: Vec<Vec<f64>> = set
        .images
        .par_iter()
        .map(|img| tm.histogram(img).map(|h| h.mu))
        .collect::<viewqual::Result<_>>()?;
    let (n_folds, seed) = (cfg.eval.n_folds, cfg.seed);
    let report = cross_validate(&rows, &targets, &keys, n_folds, seed, tm.svr.params)?;

    let mut header = cfg.header("evaluate");
    header.push(format!("bundle_config: {}", tm.run_config));
    let predicted = rows.iter().map(|h| tm.svr.predict(h)).collect::<viewqual::Result<Vec<_>>>()?;
    let mut by_pred: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_dmos: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((rec, p), t) in set.manifest.records.iter().zip(&predicted).zip(&targets) {
        by_pred.entry(rec.algorithm_id.clone()).or_default().push(*p);
        by_dmos.entry(rec.algorithm_id.clone()).or_default().push(*t);
    }
    let ascending = !cfg.eval.higher_is_better;
    let names = |r: Vec<(String, f64)>| r.into_iter().map(|x| x.0).collect::<Vec<_>>();
    let rank_truth = names(rank_algorithms(&by_dmos, ascending)?);
    let rank_pred = names(rank_algorithms(&by_pred, ascending)?);
    header.push(format!("ranking_subjective: {}", rank_truth.join(" ")));
    header.push(format!("ranking_predicted: {}", rank_pred.join(" ")));
    if rank_truth.len() >= 2 {
        header.push(format!("kendall_tau: {}", kendall_tau(&rank_truth, &rank_pred)?));
    }

    if let Some(path) = &a.external_scores {
        let mut by_metric: BTreeMap<String, BTreeMap<RecordKey, f64>> = BTreeMap::new();
        for ScoreRow { metric, key, score } in read_scores(path)? {
            by_metric.entry(metric).or_default().insert(key, score);
        }
        let mut metric_names = vec![METRIC_NAME.to_string()];
        let mut samples = vec![report.folds.iter().map(|f| f.pcc).collect::<Vec<_>>()];
        for (name, scores) in &by_metric {
            let aligned = keys
                .iter()
                .map(|k| scores.get(k).copied().with_context(|| format!("{name} has no score for {k}")))
                .collect::<Result<Vec<_>>>()?;
            let pccs = external_fold_pcc(&aligned, &targets, &keys, n_folds, seed)?;
            header.push(format!("external {name} median_pcc: {}", median(&pccs)));
            metric_names.push(name.clone());
            samples.push(pccs);
        }
        let sig = significance_matrix(&metric_names, &samples, cfg.eval.alpha, cfg.eval.t_test)?;
        header.push(format!("significance_order: {}", sig.names.join(" ")));
        for (name, row) in sig.names.iter().zip(&sig.entries) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            header.push(format!("significance {name}: {}", cells.join(" ")));
        }
    }
    fs::write(&a.out, report.to_text(&header))?;
    if let Some(p) = &a.scores_out {
        let rows: Vec<ScoreRow> = keys
            .iter()
            .zip(&predicted)
            .map(|(k, s)| ScoreRow {
                metric: METRIC_NAME.into(),
                key: k.clone(),
                score: *s,
            })
            .collect();
        fs::write(p, format_scores(&rows, &cfg.header("evaluate")))?;
    }
    info!(
        "median PCC {:.4}, SCC {:.4}, RMSE {:.4} over {n_folds} folds",
        report.median_pcc, report.median_scc, report.median_rmse
    );
    Ok(())
}

pub fn benchmark(cfg: RunConfig, a: BenchmarkArgs) -> Result<()> {
    if a.repeats == 0 {
        return Err(usage("repeats must be at least 1"));
    }
    let tm = TrainedMetric::load(&a.bundle)?;
    let set = LoadedSet::read(&a.manifest)?;
    let n = set.images.len() as f64;
    let baselines: Vec<ImageRGB> = set
        .images
        .iter()
        .map(|img| ImageRGB::filled(img.height(), img.width(), 0.5))
        .collect();
    let mut text = comment_block(&cfg.header("benchmark"));
    let mut table = String::from("repeat\tt_metric_s\tt_psnr_s\tt_norm\n");
    let mut norms = Vec::with_capacity(a.repeats);
    let (mut sum_metric, mut sum_psnr) = (0.0, 0.0);
    for rep in 0..a.repeats {
        let start = Instant::now();
        for img in &set.images {
            std::hint::black_box(tm.score_image(img)?);
        }
        let t_metric = start.elapsed().as_secs_f64() / n;
        let start = Instant::now();
        for (img, base) in set.images.iter().zip(&baselines) {
            std::hint::black_box(psnr(base, img)?);
        }
        let t_psnr = start.elapsed().as_secs_f64().max(1e-9) / n;
        let t_norm = normalized_time(t_metric, t_psnr)?;
        let _ = writeln!(table, "{rep}\t{t_metric}\t{t_psnr}\t{t_norm}");
        norms.push(t_norm);
        sum_metric += t_metric;
        sum_psnr += t_psnr;
    }
    let reps = a.repeats as f64;
    let mean_psnr = sum_psnr / reps;
    let _ = writeln!(text, "# images: {}", set.images.len());
    let _ = writeln!(text, "# mean_t_metric_s: {}", sum_metric / reps);
    let _ = writeln!(text, "# mean_t_psnr_s: {mean_psnr}");
    let _ = writeln!(text, "# psnr_t_norm: {}", normalized_time(mean_psnr, mean_psnr)?);
    let _ = writeln!(text, "# median_t_norm: {}", median(&norms));
    text.push_str(&table);
    write_output(a.out.as_deref(), &text)
}
