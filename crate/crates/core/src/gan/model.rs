use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::TensorMap;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, BatchNorm2d, Conv2d, ConvTranspose2d, Layer, Sequential, Tensor, Trace, LEAKY_SLOPE};

pub const INIT_STD: f64 = 0.02;
pub const DEFAULT_BOTTLENECK: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArchId {
    D1,
    D2,
    D3,
}

impl ArchId {
    pub const ALL: [ArchId; 3] = [ArchId::D1, ArchId::D2, ArchId::D3];

    /// Hidden conv channels, input side first.
    pub fn hidden_channels(self) -> &'static [usize] {
        match self {
            ArchId::D1 => &[64, 128, 256, 512],
            ArchId::D2 => &[32, 64, 128, 256, 512],
            ArchId::D3 => &[16, 32, 64, 128, 256],
        }
    }

    pub fn input_size(self) -> usize {
        4 << self.hidden_channels().len()
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ArchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" => Ok(ArchId::D1),
            "D2" => Ok(ArchId::D2),
            "D3" => Ok(ArchId::D3),
            _ => Err(Error::UnknownArch(s.to_string())),
        }
    }
}

/// Channel plan of a discriminator-shaped conv stack.
///
/// Each hidden layer is a 4×4 stride-2 pad-1 convolution (halving the side);
/// the head is a 4×4 valid convolution from a 4×4 map down to one logit.
/// With `batch_norm`, every hidden conv except the first is batch-normalised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
}

impl ArchSpec {
    pub fn new(hidden: Vec<usize>, batch_norm: bool) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParam(format!("bad channel plan {hidden:?}")));
        }
        Ok(Self { hidden, batch_norm })
    }

    pub fn standard(arch: ArchId) -> Self {
        Self {
            hidden: arch.hidden_channels().to_vec(),
            batch_norm: true,
        }
    }

    /// Standard plan with every channel count divided by `divisor`.
    pub fn scaled(arch: ArchId, divisor: usize) -> Result<Self> {
        let base = arch.hidden_channels();
        if divisor == 0 || base.iter().any(|c| c % divisor != 0) {
            return Err(Error::InvalidParam(format!(
                "width divisor {divisor} does not divide the {arch} channels {base:?}"
            )));
        }
        Ok(Self {
            hidden: base.iter().map(|c| c / divisor).collect(),
            batch_norm: true,
        })
    }

    pub fn input_size(&self) -> usize {
        4 << self.hidden.len()
    }

    /// Length of the flattened penultimate activation.
    pub fn feature_dim(&self) -> usize {
        self.hidden.last().expect("non-empty plan") * 16
    }

    fn encoder_layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for (i, &c) in self.hidden.iter().enumerate() {
            layers.push(Layer::Conv(Conv2d::new(c_in, c, 4, 2, 1)));
            if self.batch_norm && i > 0 {
                layers.push(Layer::BatchNorm(BatchNorm2d::new(c)));
            }
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            c_in = c;
        }
        layers
    }

    fn norm(&self, c: usize) -> Option<Layer> {
        self.batch_norm.then(|| Layer::BatchNorm(BatchNorm2d::new(c)))
    }
}

fn check_input(x: &Tensor, size: usize) -> Result<()> {
    if x.c != 3 || x.h != size || x.w != size {
        return Err(Error::Shape(format!(
            "expected N×3×{size}×{size} input, got {}×{}×{}×{}",
            x.n, x.c, x.h, x.w
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    pub spec: ArchSpec,
    /// Hidden stack plus the head conv; the net emits logits.
    pub net: Sequential,
}

impl DiscriminatorModel {
    pub fn new(spec: ArchSpec, seed: u64) -> Self {
        let mut layers = spec.encoder_layers();
        let last = *spec.hidden.last().expect("non-empty plan");
        layers.push(Layer::Conv(Conv2d::new(last, 1, 4, 1, 0)));
        let mut net = Sequential::new(layers);
        net.init_normal(INIT_STD, &mut ChaCha8Rng::seed_from_u64(seed));
        Self { spec, net }
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim()
    }

    /// Index of the head conv; everything before it produces the features.
    fn feature_layer(&self) -> usize {
        self.net.layers.len() - 1
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        check_input(x, self.input_size())?;
        Ok(self.net.forward(x).data)
    }

    /// Real-image probabilities, strictly inside (0,1) up to floating-point saturation.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.into_iter().map(sigmoid).collect())
    }

    /// Probabilities with batch norm in training mode.
    pub fn forward_train(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output().data.iter().map(|&z| sigmoid(z)).collect())
    }

    /// Flattened penultimate activations, one row per sample.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.input_size())?;
        Ok(self.net.forward_prefix(x, self.feature_layer()))
    }

    /// Penultimate features and head logits from a single pass.
    pub fn features_and_logits(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        check_input(x, self.input_size())?;
        let feats = self.net.forward_prefix(x, self.feature_layer());
        let head = Sequential::new(self.net.layers[self.feature_layer()..].to_vec());
        let logits = head.forward(&feats).data;
        Ok((feats, logits))
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        check_input(x, self.input_size())?;
        Ok(self.net.forward_trace(x))
    }

    /// `(channels, side)` after each conv layer (post-activation for hidden layers).
    pub fn activation_shapes(&self) -> Vec<(usize, usize)> {
        let s = self.input_size();
        self.net
            .shapes(3, s, s)
            .expect("consistent plan")
            .into_iter()
            .zip(&self.net.layers)
            .filter(|(_, l)| matches!(l, Layer::Conv(_)))
            .map(|((c, h, _), _)| (c, h))
            .collect()
    }

    pub fn to_tensors(&self, prefix: &str, out: &mut TensorMap) {
        save_state(&self.net, prefix, out);
    }

    pub fn from_tensors(spec: ArchSpec, prefix: &str, tensors: &mut TensorMap) -> Result<Self> {
        let mut model = Self::new(spec, 0);
        load_params(&mut model.net, prefix, tensors)?;
        Ok(model)
    }
}

/// Context-encoder generator: the discriminator's hidden stack as encoder, a
/// fully connected bottleneck (4×4 valid conv to `bottleneck` units), and a
/// mirrored transposed-conv decoder ending in a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub spec: ArchSpec,
    pub bottleneck: usize,
    pub net: Sequential,
}

impl GeneratorModel {
    pub fn new(spec: ArchSpec, bottleneck: usize, seed: u64) -> Self {
        let mut layers = spec.encoder_layers();
        let last = *spec.hidden.last().expect("non-empty plan");
        layers.push(Layer::Conv(Conv2d::new(last, bottleneck, 4, 1, 0)));
        layers.extend(spec.norm(bottleneck));
        layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
        layers.push(Layer::Deconv(ConvTranspose2d::new(bottleneck, last, 4, 1, 0)));
        layers.extend(spec.norm(last));
        layers.push(Layer::Relu);
        let mut rev: Vec<usize> = spec.hidden.iter().rev().copied().collect();
        rev.push(3);
        for i in 1..rev.len() {
            layers.push(Layer::Deconv(ConvTranspose2d::new(rev[i - 1], rev[i], 4, 2, 1)));
            if i + 1 == rev.len() {
                layers.push(Layer::Sigmoid);
            } else {
                layers.extend(spec.norm(rev[i]));
                layers.push(Layer::Relu);
            }
        }
        let mut net = Sequential::new(layers);
        net.init_normal(INIT_STD, &mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            spec,
            bottleneck,
            net,
        }
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_size()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.input_size())?;
        Ok(self.net.forward(x))
    }

    /// Output with batch norm in training mode.
    pub fn forward_train(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.acts.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<Trace> {
        check_input(x, self.input_size())?;
        Ok(self.net.forward_trace(x))
    }

    pub fn to_tensors(&self, prefix: &str, out: &mut TensorMap) {
        save_state(&self.net, prefix, out);
    }

    pub fn from_tensors(
        spec: ArchSpec,
        bottleneck: usize,
        prefix: &str,
        tensors: &mut TensorMap,
    ) -> Result<Self> {
        let mut model = Self::new(spec, bottleneck, 0);
        load_params(&mut model.net, prefix, tensors)?;
        Ok(model)
    }
}

fn save_state(net: &Sequential, prefix: &str, out: &mut TensorMap) {
    for (name, t) in net.state() {
        out.insert(format!("{prefix}{name}"), t.to_vec());
    }
}

fn load_params(net: &mut Sequential, prefix: &str, tensors: &mut TensorMap) -> Result<()> {
    for (name, t) in net.state_mut() {
        *t = tensors.take(&format!("{prefix}{name}"), Some(t.len()))?;
    }
    Ok(())
}

/// Builds a freshly initialised discriminator from an architecture name.
pub fn build_discriminator(arch_id: &str, seed: u64) -> Result<DiscriminatorModel> {
    let arch: ArchId = arch_id.parse()?;
    Ok(DiscriminatorModel::new(ArchSpec::standard(arch), seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d1_shapes_follow_the_table() {
        let d = build_discriminator("D1", 0).unwrap();
        assert_eq!(
            d.activation_shapes(),
            vec![(64, 32), (128, 16), (256, 8), (512, 4), (1, 1)]
        );
        assert_eq!(d.feature_dim(), 8192);
    }

    #[test]
    fn d2_and_d3_shapes_follow_the_table() {
        let d2 = build_discriminator("d2", 0).unwrap();
        assert_eq!(d2.input_size(), 128);
        assert_eq!(
            d2.activation_shapes(),
            vec![(32, 64), (64, 32), (128, 16), (256, 8), (512, 4), (1, 1)]
        );
        let d3 = build_discriminator("D3", 0).unwrap();
        assert_eq!(
            d3.activation_shapes(),
            vec![(16, 64), (32, 32), (64, 16), (128, 8), (256, 4), (1, 1)]
        );
        assert_eq!(d3.feature_dim(), 4096);
    }

    #[test]
    fn unknown_arch_and_wrong_input() {
        assert!(matches!(build_discriminator("D4", 0), Err(Error::UnknownArch(_))));
        let d = DiscriminatorModel::new(ArchSpec::scaled(ArchId::D1, 16).unwrap(), 0);
        let x = Tensor::zeros(1, 3, 32, 32);
        assert!(matches!(d.forward(&x), Err(Error::Shape(_))));
        assert!(matches!(d.features(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn outputs_are_probabilities() {
        let d = DiscriminatorModel::new(ArchSpec::new(vec![4, 8], true).unwrap(), 3);
        let x = Tensor::from_vec(2, 3, 16, 16, (0..1536).map(|i| (i % 7) as f64 / 7.0).collect());
        let p = d.forward(&x).unwrap();
        assert_eq!(p.len(), 2);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        let (f, l) = d.features_and_logits(&x).unwrap();
        assert_eq!(f.sample_len(), d.feature_dim());
        assert_eq!(l, d.logits(&x).unwrap());
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let g = GeneratorModel::new(ArchSpec::new(vec![2, 4], true).unwrap(), 8, 1);
        let x = Tensor::from_vec(1, 3, 16, 16, vec![0.3; 768]);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 3, 16, 16]);
        assert!(y.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(matches!(g.net.layers.last(), Some(Layer::Sigmoid)));
        assert_eq!(g.net.layers.iter().filter(|l| matches!(l, Layer::Sigmoid)).count(), 1);
    }

    #[test]
    fn scaled_spec_validation() {
        assert_eq!(ArchSpec::scaled(ArchId::D1, 8).unwrap().hidden, vec![8, 16, 32, 64]);
        assert!(ArchSpec::scaled(ArchId::D3, 32).is_err());
        assert!(ArchSpec::new(vec![], false).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let spec = ArchSpec::new(vec![2, 4], true).unwrap();
        let mut d = DiscriminatorModel::new(spec.clone(), 9);
        if let Some(Layer::BatchNorm(b)) = d.net.layers.get_mut(3) {
            b.running_var[0] = 2.5;
        } else {
            panic!("expected batch norm after the second conv");
        }
        let g = GeneratorModel::new(spec.clone(), 5, 9);
        let mut t = TensorMap::new();
        d.to_tensors("d.", &mut t);
        g.to_tensors("g.", &mut t);
        assert_eq!(DiscriminatorModel::from_tensors(spec.clone(), "d.", &mut t).unwrap(), d);
        assert_eq!(GeneratorModel::from_tensors(spec, 5, "g.", &mut t).unwrap(), g);
        assert!(t.is_empty());
    }
}
