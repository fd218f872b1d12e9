use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-7;

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// d/dp of log(clamp(p)); zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    if p > PROB_FLOOR && p < 1.0 - PROB_FLOOR {
        1.0 / p
    } else {
        0.0
    }
}

fn check_rec_shapes(x: &Tensor, m: &Tensor, g: &Tensor) -> Result<()> {
    if !x.same_shape(g) || m.n != x.n || m.c != 1 || m.h != x.h || m.w != x.w {
        return Err(Error::DimMismatch(format!(
            "image {:?}, mask {:?}, output {:?}",
            x.shape(),
            m.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// Masked squared error: per-sample ‖M ⊙ (x − g)‖², averaged over the batch.
/// The single-channel mask broadcasts over colour channels.
pub fn rec_loss(x: &Tensor, m: &Tensor, g: &Tensor) -> Result<f64> {
    check_rec_shapes(x, m, g)?;
    let plane = x.h * x.w;
    let mut total = 0.0;
    for (i, (xv, gv)) in x.data.iter().zip(&g.data).enumerate() {
        let n = i / x.sample_len();
        let mv = m.data[n * plane + i % plane];
        total += (mv * (xv - gv)).powi(2);
    }
    Ok(total / x.n as f64)
}

/// Gradient of [`rec_loss`] with respect to the generator output.
pub fn rec_loss_grad(x: &Tensor, m: &Tensor, g: &Tensor) -> Result<Tensor> {
    check_rec_shapes(x, m, g)?;
    let plane = x.h * x.w;
    let scale = 2.0 / x.n as f64;
    let data = x
        .data
        .iter()
        .zip(&g.data)
        .enumerate()
        .map(|(i, (xv, gv))| {
            let n = i / x.sample_len();
            let mv = m.data[n * plane + i % plane];
            -scale * mv * mv * (xv - gv)
        })
        .collect();
    Ok(Tensor { data, ..*g })
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        v.sum::<f64>() / n as f64
    }
}

/// Discriminator objective mean[log D(real)] + mean[log(1 − D(fake))], to be maximised.
pub fn adv_loss_d(d_real: &[f64], d_fake: &[f64]) -> f64 {
    mean(d_real.iter().map(|&p| clamp_prob(p).ln()), d_real.len())
        + mean(d_fake.iter().map(|&p| (1.0 - clamp_prob(p)).ln()), d_fake.len())
}

/// Gradients of the negated discriminator objective with respect to the probabilities.
pub fn adv_loss_d_grad(d_real: &[f64], d_fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nr = d_real.len() as f64;
    let nf = d_fake.len() as f64;
    let real = d_real.iter().map(|&p| -dlog(p) / nr).collect();
    let fake = d_fake.iter().map(|&p| dlog(1.0 - p) / nf).collect();
    (real, fake)
}

/// Non-saturating generator term mean[−log D(fake)].
pub fn adv_loss_g(d_fake: &[f64]) -> f64 {
    mean(d_fake.iter().map(|&p| -clamp_prob(p).ln()), d_fake.len())
}

pub fn adv_loss_g_grad(d_fake: &[f64]) -> Vec<f64> {
    let n = d_fake.len() as f64;
    d_fake.iter().map(|&p| -dlog(p) / n).collect()
}

pub fn joint_loss(rec: f64, adv_g: f64, lambda: f64) -> f64 {
    lambda * rec + (1.0 - lambda) * adv_g
}

/// Chains a probability gradient through the sigmoid to the logit.
pub(crate) fn prob_to_logit_grad(probs: &[f64], dprob: &[f64]) -> Vec<f64> {
    probs.iter().zip(dprob).map(|(p, g)| g * p * (1.0 - p)).collect()
}
