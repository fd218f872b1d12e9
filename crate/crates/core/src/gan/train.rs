use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{
    adv_loss_d, adv_loss_d_grad, adv_loss_g, adv_loss_g_grad, joint_loss, prob_to_logit_grad,
    rec_loss, rec_loss_grad,
};
use super::model::{ArchId, ArchSpec, DiscriminatorModel, GeneratorModel, DEFAULT_BOTTLENECK};
use crate::container::{read_container, write_container, TensorMap};
use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::maskgen::BinaryMask;
use crate::nn::{sigmoid, Adam, AdamConfig, Tensor, Trace};

const CHECKPOINT_MAGIC: &[u8; 8] = b"VQALCKPT";
const CHECKPOINT_VERSION: u32 = 1;
/// Samples of the last batch kept in a checkpoint for reload verification.
const PROBE_SAMPLES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: ArchId,
    /// Divides every channel count of the architecture; 1 is the full model.
    pub width_divisor: usize,
    pub bottleneck: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Feed the discriminator `(1−M)·x + M·G(x)` instead of the raw generator output.
    pub composite_fake: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            arch: ArchId::D1,
            width_divisor: 1,
            bottleneck: DEFAULT_BOTTLENECK,
            learning_rate: adam.lr,
            lambda: 0.9,
            beta1: adam.beta1,
            beta2: adam.beta2,
            batch_size: 64,
            epochs: 25,
            seed: 0,
            composite_fake: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0,1], got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment decays must lie in [0,1)".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.bottleneck == 0 {
            return bad("batch size, epochs and bottleneck must be positive".into());
        }
        self.spec().map(|_| ())
    }

    pub fn spec(&self) -> Result<ArchSpec> {
        ArchSpec::scaled(self.arch, self.width_divisor)
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }
}

/// Epoch-averaged losses (sample-weighted across batches).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub joint: f64,
    pub rec: f64,
    pub adv_g: f64,
    /// Discriminator objective (to be maximised).
    pub adv_d: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLosses {
    pub joint: f64,
    pub rec: f64,
    pub adv_g: f64,
    pub adv_d: f64,
}

pub fn images_to_tensor(images: &[&ImageRGB]) -> Result<Tensor> {
    let first = images.first().ok_or(Error::DataEmpty)?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::DimMismatch(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height(),
                img.width()
            )));
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(images.len(), 3, h, w, data))
}

pub fn masks_to_tensor(masks: &[&BinaryMask]) -> Result<Tensor> {
    let first = masks.first().ok_or(Error::DataEmpty)?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.height() != h || m.width() != w {
            return Err(Error::DimMismatch("batch mixes mask sizes".into()));
        }
        data.extend(m.data().iter().map(|&v| f64::from(v)));
    }
    Ok(Tensor::from_vec(masks.len(), 1, h, w, data))
}

/// `(1 − M) ⊙ x`.
pub fn masked_input(x: &Tensor, m: &Tensor) -> Tensor {
    blend(x, m, None)
}

/// `(1 − M) ⊙ x + M ⊙ g`.
pub fn composite(x: &Tensor, m: &Tensor, g: &Tensor) -> Tensor {
    blend(x, m, Some(g))
}

fn blend(x: &Tensor, m: &Tensor, g: Option<&Tensor>) -> Tensor {
    let plane = x.h * x.w;
    let data = (0..x.data.len())
        .map(|i| {
            let mv = m.data[(i / x.sample_len()) * plane + i % plane];
            let fill = g.map_or(0.0, |g| g.data[i]);
            (1.0 - mv) * x.data[i] + mv * fill
        })
        .collect();
    Tensor { data, ..*x }
}

fn probs_of(trace: &Trace) -> Vec<f64> {
    trace.output().data.iter().map(|&z| sigmoid(z)).collect()
}

fn logit_tensor(grad: Vec<f64>) -> Tensor {
    Tensor::from_vec(grad.len(), 1, 1, 1, grad)
}

/// Discriminator objective on (real, fake) and the gradients of its negation
/// with respect to the discriminator parameters.
pub fn discriminator_grads(
    d: &DiscriminatorModel,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, Vec<Vec<f64>>)> {
    discriminator_grads_traced(d, real, fake).map(|(o, g, _)| (o, g))
}

/// Real and fake batches pass through the discriminator separately; the two
/// traces are returned so their batch statistics can be absorbed.
fn discriminator_grads_traced(
    d: &DiscriminatorModel,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, Vec<Vec<f64>>, [Trace; 2])> {
    let tr = d.forward_trace(real)?;
    let tf = d.forward_trace(fake)?;
    let (pr, pf) = (probs_of(&tr), probs_of(&tf));
    let objective = adv_loss_d(&pr, &pf);
    let (gr, gf) = adv_loss_d_grad(&pr, &pf);
    let mut grads = d.net.zero_grads();
    d.net.backward(&tr, logit_tensor(prob_to_logit_grad(&pr, &gr)), &mut grads);
    d.net.backward(&tf, logit_tensor(prob_to_logit_grad(&pf, &gf)), &mut grads);
    Ok((objective, grads, [tr, tf]))
}

/// Joint generator loss and its gradients with respect to the generator parameters.
pub fn generator_grads(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    x: &Tensor,
    m: &Tensor,
    lambda: f64,
    composite_fake: bool,
) -> Result<(BatchLosses, Vec<Vec<f64>>)> {
    let tg = g.forward_trace(&masked_input(x, m))?;
    generator_grads_traced(g, d, &tg, x, m, lambda, composite_fake)
}

fn generator_grads_traced(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    tg: &Trace,
    x: &Tensor,
    m: &Tensor,
    lambda: f64,
    composite_fake: bool,
) -> Result<(BatchLosses, Vec<Vec<f64>>)> {
    let out = tg.output();
    let fake = if composite_fake { composite(x, m, out) } else { out.clone() };
    let td = d.forward_trace(&fake)?;
    let pf = probs_of(&td);
    let rec = rec_loss(x, m, out)?;
    let adv_g = adv_loss_g(&pf);
    let dlogit = prob_to_logit_grad(&pf, &adv_loss_g_grad(&pf));
    let mut scratch = d.net.zero_grads();
    let dfake = d.net.backward(&td, logit_tensor(dlogit), &mut scratch);
    let drec = rec_loss_grad(x, m, out)?;
    let plane = x.h * x.w;
    let dout: Vec<f64> = (0..drec.data.len())
        .map(|i| {
            let gate = if composite_fake {
                m.data[(i / x.sample_len()) * plane + i % plane]
            } else {
                1.0
            };
            lambda * drec.data[i] + (1.0 - lambda) * gate * dfake.data[i]
        })
        .collect();
    let mut grads = g.net.zero_grads();
    g.net.backward(tg, Tensor { data: dout, ..*out }, &mut grads);
    let losses = BatchLosses {
        joint: joint_loss(rec, adv_g, lambda),
        rec,
        adv_g,
        adv_d: f64::NAN,
    };
    Ok((losses, grads))
}

/// Batch-norm behaviour for loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, as during a training step.
    Train,
    /// Running statistics, as at inference.
    Eval,
}

/// All four losses on a batch, without touching any parameters.
pub fn evaluate_losses(
    g: &GeneratorModel,
    d: &DiscriminatorModel,
    x: &Tensor,
    m: &Tensor,
    lambda: f64,
    composite_fake: bool,
    mode: Mode,
) -> Result<BatchLosses> {
    let input = masked_input(x, m);
    let out = match mode {
        Mode::Train => g.forward_train(&input)?,
        Mode::Eval => g.forward(&input)?,
    };
    let fake = if composite_fake { composite(x, m, &out) } else { out.clone() };
    let probs = |t: &Tensor| match mode {
        Mode::Train => d.forward_train(t),
        Mode::Eval => d.forward(t),
    };
    let pr = probs(x)?;
    let pf = probs(&fake)?;
    let rec = rec_loss(x, m, &out)?;
    let adv_g = adv_loss_g(&pf);
    Ok(BatchLosses {
        joint: joint_loss(rec, adv_g, lambda),
        rec,
        adv_g,
        adv_d: adv_loss_d(&pr, &pf),
    })
}

/// A small batch saved with the checkpoint together with its losses under the final weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeBatch {
    pub x: Tensor,
    pub m: Tensor,
    pub losses: BatchLosses,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochLoss>,
    pub probe: Option<ProbeBatch>,
    /// Caller-supplied configuration snapshot stored alongside the weights.
    pub run_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    schema: String,
    config: TrainConfig,
    spec: ArchSpec,
    epoch: usize,
    history: Vec<EpochLoss>,
    probe: Option<ProbeMeta>,
    #[serde(default)]
    run_config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ProbeMeta {
    n: usize,
    size: usize,
    losses: BatchLosses,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = TensorMap::new();
        self.generator.to_tensors("generator.", &mut tensors);
        self.discriminator.to_tensors("discriminator.", &mut tensors);
        let probe = self.probe.as_ref().map(|p| {
            tensors.insert("probe.x", p.x.data.clone());
            tensors.insert("probe.m", p.m.data.clone());
            ProbeMeta {
                n: p.x.n,
                size: p.x.h,
                losses: p.losses,
            }
        });
        let meta = CheckpointMeta {
            schema: "viewqual/checkpoint".into(),
            config: self.config.clone(),
            spec: self.generator.spec.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            probe,
            run_config: self.run_config.clone(),
        };
        write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, mut tensors): (CheckpointMeta, _) =
            read_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let generator = GeneratorModel::from_tensors(
            meta.spec.clone(),
            meta.config.bottleneck,
            "generator.",
            &mut tensors,
        )?;
        let discriminator = DiscriminatorModel::from_tensors(meta.spec, "discriminator.", &mut tensors)?;
        let probe = match meta.probe {
            Some(p) => {
                let s = p.size;
                Some(ProbeBatch {
                    x: Tensor::from_vec(p.n, 3, s, s, tensors.take("probe.x", Some(p.n * 3 * s * s))?),
                    m: Tensor::from_vec(p.n, 1, s, s, tensors.take("probe.m", Some(p.n * s * s))?),
                    losses: p.losses,
                })
            }
            None => None,
        };
        if !tensors.is_empty() {
            return Err(Error::Format(format!("unexpected tensors {:?}", tensors.names())));
        }
        Ok(Self {
            config: meta.config,
            generator,
            discriminator,
            epoch: meta.epoch,
            history: meta.history,
            probe,
            run_config: meta.run_config,
        })
    }

    /// Recomputes the probe-batch losses under the stored weights.
    pub fn evaluate_probe(&self) -> Option<Result<BatchLosses>> {
        self.probe.as_ref().map(|p| {
            evaluate_losses(
                &self.generator,
                &self.discriminator,
                &p.x,
                &p.m,
                self.config.lambda,
                self.config.composite_fake,
                Mode::Eval,
            )
        })
    }

    pub fn inpaint(&self, img: &ImageRGB, m: &BinaryMask) -> Result<ImageRGB> {
        inpaint(&self.generator, img, m)
    }
}

/// Adversarial context-encoder training: per batch, one discriminator update
/// followed by one generator update.
pub fn train_inpainter(
    images: &[ImageRGB],
    masks: &[BinaryMask],
    config: &TrainConfig,
) -> Result<Checkpoint> {
    train_inpainter_with(images, masks, config, |_| {})
}

/// [`train_inpainter`] with a callback invoked after every epoch.
pub fn train_inpainter_with(
    images: &[ImageRGB],
    masks: &[BinaryMask],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Checkpoint> {
    config.validate()?;
    if images.is_empty() {
        return Err(Error::DataEmpty);
    }
    if images.len() != masks.len() {
        return Err(Error::DimMismatch(format!(
            "{} images but {} masks",
            images.len(),
            masks.len()
        )));
    }
    let spec = config.spec()?;
    let size = spec.input_size();
    for (i, (img, m)) in images.iter().zip(masks).enumerate() {
        if img.height() != size || img.width() != size || m.height() != size || m.width() != size {
            return Err(Error::DimMismatch(format!(
                "pair {i}: image {}x{}, mask {}x{}, model expects {size}x{size}",
                img.height(),
                img.width(),
                m.height(),
                m.width()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut generator = GeneratorModel::new(spec.clone(), config.bottleneck, rng.random());
    let mut discriminator = DiscriminatorModel::new(spec, rng.random());
    let sizes = |net: &crate::nn::Sequential| net.params().iter().map(|p| p.len()).collect::<Vec<_>>();
    let mut adam_g = Adam::new(config.adam(), &sizes(&generator.net));
    let mut adam_d = Adam::new(config.adam(), &sizes(&discriminator.net));

    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut last_batch = Vec::new();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = images_to_tensor(&chunk.iter().map(|&i| &images[i]).collect::<Vec<_>>())?;
            let m = masks_to_tensor(&chunk.iter().map(|&i| &masks[i]).collect::<Vec<_>>())?;

            let tg = generator.forward_trace(&masked_input(&x, &m))?;
            let fake = if config.composite_fake {
                composite(&x, &m, tg.output())
            } else {
                tg.output().clone()
            };
            let (adv_d, gd, stats) = discriminator_grads_traced(&discriminator, &x, &fake)?;
            adam_d.step(discriminator.net.params_mut(), &gd);
            for t in &stats {
                discriminator.net.absorb_stats(t);
            }

            let (losses, gg) = generator_grads_traced(
                &generator,
                &discriminator,
                &tg,
                &x,
                &m,
                config.lambda,
                config.composite_fake,
            )?;
            let values = [losses.joint, losses.rec, losses.adv_g, adv_d];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "joint={} rec={} adv_g={} adv_d={adv_d}",
                        losses.joint, losses.rec, losses.adv_g
                    ),
                });
            }
            adam_g.step(generator.net.params_mut(), &gg);
            generator.net.absorb_stats(&tg);
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v * chunk.len() as f64;
            }
            last_batch = chunk.to_vec();
        }
        let n = images.len() as f64;
        let record = EpochLoss {
            epoch,
            joint: sums[0] / n,
            rec: sums[1] / n,
            adv_g: sums[2] / n,
            adv_d: sums[3] / n,
        };
        log::info!(
            "epoch {epoch}: joint {:.6} rec {:.6} adv_g {:.6} adv_d {:.6}",
            record.joint,
            record.rec,
            record.adv_g,
            record.adv_d
        );
        on_epoch(&record);
        history.push(record);
    }

    last_batch.truncate(PROBE_SAMPLES);
    let x = images_to_tensor(&last_batch.iter().map(|&i| &images[i]).collect::<Vec<_>>())?;
    let m = masks_to_tensor(&last_batch.iter().map(|&i| &masks[i]).collect::<Vec<_>>())?;
    let losses = evaluate_losses(
        &generator,
        &discriminator,
        &x,
        &m,
        config.lambda,
        config.composite_fake,
        Mode::Eval,
    )?;
    Ok(Checkpoint {
        config: config.clone(),
        generator,
        discriminator,
        epoch: config.epochs,
        history,
        probe: Some(ProbeBatch { x, m, losses }),
        run_config: serde_json::Value::Null,
    })
}

/// Fills masked pixels with the generator's prediction; unmasked pixels are copied verbatim.
pub fn inpaint(g: &GeneratorModel, img: &ImageRGB, m: &BinaryMask) -> Result<ImageRGB> {
    let size = g.input_size();
    if img.height() != m.height() || img.width() != m.width() {
        return Err(Error::DimMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.height(),
            img.width(),
            m.height(),
            m.width()
        )));
    }
    if img.height() != size || img.width() != size {
        return Err(Error::DimMismatch(format!(
            "generator expects {size}x{size}, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    let x = images_to_tensor(&[img])?;
    let mt = masks_to_tensor(&[m])?;
    let out = g.forward(&masked_input(&x, &mt))?;
    let plane = size * size;
    let mut result = img.clone();
    for r in 0..size {
        for c in 0..size {
            if m.get(r, c) {
                let p = r * size + c;
                result.set_pixel(r, c, [out.data[p], out.data[plane + p], out.data[2 * plane + p]]);
            }
        }
    }
    Ok(result)
}

/// Peak signal-to-noise ratio in dB for images in [0,1]; identical inputs give +∞.
pub fn psnr(reference: &ImageRGB, test: &ImageRGB) -> Result<f64> {
    if reference.height() != test.height() || reference.width() != test.width() {
        return Err(Error::DimMismatch(format!(
            "{}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            test.height(),
            test.width()
        )));
    }
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
