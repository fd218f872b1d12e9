//! Context-encoder GAN: discriminator architectures, generator, losses and training.

mod loss;
mod model;
mod train;

pub use loss::{
    adv_loss_d, adv_loss_d_grad, adv_loss_g, adv_loss_g_grad, joint_loss, rec_loss, rec_loss_grad,
    PROB_FLOOR,
};
pub use model::{
    build_discriminator, ArchId, ArchSpec, DiscriminatorModel, GeneratorModel, DEFAULT_BOTTLENECK,
    INIT_STD,
};
pub use train::{
    composite, discriminator_grads, evaluate_losses, generator_grads, images_to_tensor, inpaint,
    masked_input, masks_to_tensor, psnr, Mode, train_inpainter, train_inpainter_with, BatchLosses,
    Checkpoint, EpochLoss, ProbeBatch, TrainConfig,
};

/// Central-difference gradient check shared by unit and acceptance tests.
pub mod gradcheck {
    use crate::nn::Sequential;

    /// Relative error ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖) over every parameter.
    pub fn relative_error(
        net: &Sequential,
        analytic: &[Vec<f64>],
        h: f64,
        mut loss: impl FnMut(&Sequential) -> f64,
    ) -> f64 {
        let mut diff = 0.0;
        let mut na = 0.0;
        let mut nn = 0.0;
        let mut probe = net.clone();
        for (t, grad) in analytic.iter().enumerate() {
            for (j, &a) in grad.iter().enumerate() {
                let orig = probe.params()[t][j];
                probe.params_mut()[t][j] = orig + h;
                let up = loss(&probe);
                probe.params_mut()[t][j] = orig - h;
                let down = loss(&probe);
                probe.params_mut()[t][j] = orig;
                let num = (up - down) / (2.0 * h);
                diff += (a - num).powi(2);
                na += a * a;
                nn += num * num;
            }
        }
        diff.sqrt() / na.sqrt().max(nn.sqrt()).max(f64::MIN_POSITIVE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        g: GeneratorModel,
        d: DiscriminatorModel,
        x: Tensor,
        m: Tensor,
    }

    /// Networks with a 16px input and a few thousand parameters; weights are
    /// widened beyond the 0.02 init so the gradients are not vanishingly small.
    fn toy(seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ArchSpec::new(vec![2, 4], true).unwrap();
        let mut g = GeneratorModel::new(spec.clone(), 6, seed);
        let mut d = DiscriminatorModel::new(spec, seed + 1);
        for p in g.net.params_mut().into_iter().chain(d.net.params_mut()) {
            p.iter_mut().for_each(|v| *v = rng.random_range(-0.4..0.4));
        }
        let x = Tensor::from_vec(2, 3, 16, 16, (0..1536).map(|_| rng.random()).collect());
        let m = Tensor::from_vec(
            2,
            1,
            16,
            16,
            (0..512).map(|i| f64::from(u8::from((i / 16) % 16 > 5 && i % 16 < 9))).collect(),
        );
        Toy { g, d, x, m }
    }

    #[test]
    fn toy_networks_are_small() {
        let t = toy(0);
        assert!(t.g.net.n_params() + t.d.net.n_params() <= 10_000);
    }

    #[test]
    fn discriminator_gradient_matches_differences() {
        let t = toy(1);
        let fake = composite(&t.x, &t.m, &t.g.forward_train(&masked_input(&t.x, &t.m)).unwrap());
        let (_, grads) = discriminator_grads(&t.d, &t.x, &fake).unwrap();
        let err = gradcheck::relative_error(&t.d.net, &grads, 1e-6, |net| {
            let d = DiscriminatorModel {
                spec: t.d.spec.clone(),
                net: net.clone(),
            };
            -adv_loss_d(&d.forward_train(&t.x).unwrap(), &d.forward_train(&fake).unwrap())
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    fn generator_check(lambda: f64, composite_fake: bool) -> f64 {
        let t = toy(2);
        let (_, grads) = generator_grads(&t.g, &t.d, &t.x, &t.m, lambda, composite_fake).unwrap();
        gradcheck::relative_error(&t.g.net, &grads, 1e-6, |net| {
            let g = GeneratorModel {
                spec: t.g.spec.clone(),
                bottleneck: t.g.bottleneck,
                net: net.clone(),
            };
            evaluate_losses(&g, &t.d, &t.x, &t.m, lambda, composite_fake, Mode::Train)
                .unwrap()
                .joint
        })
    }

    #[test]
    fn reconstruction_gradient_matches_differences() {
        let err = generator_check(1.0, true);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn generator_adversarial_gradient_matches_differences() {
        for composite_fake in [true, false] {
            let err = generator_check(0.0, composite_fake);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn joint_gradient_matches_differences() {
        let err = generator_check(0.9, true);
        assert!(err < 1e-4, "relative error {err}");
    }
}
