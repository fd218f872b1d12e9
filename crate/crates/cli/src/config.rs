use std::path::Path;

use anyhow::{Context, Result};
use viewqual::eval::{TTest, DEFAULT_ALPHA, DEFAULT_FOLDS};
use viewqual::gan::TrainConfig;
use viewqual::maskgen::SizeClass;
use viewqual::regressor::MetricConfig;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskConfig {
    pub dilation_radius: usize,
    pub shift_dx: isize,
    pub shift_dy: isize,
    /// SLIC segment count; ⌈H·W/300⌉ when unset.
    pub slic_segments: Option<usize>,
    pub slic_compactness: f64,
    pub slic_iters: usize,
    pub superpixel_class: SizeClass,
    pub superpixel_fraction: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            dilation_radius: 7,
            shift_dx: 10,
            shift_dy: 0,
            slic_segments: None,
            slic_compactness: 10.0,
            slic_iters: 10,
            superpixel_class: SizeClass::Medium,
            superpixel_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_folds: usize,
    pub alpha: f64,
    pub t_test: TTest,
    /// Rank algorithms by descending score; targets are DMOS-like (lower is better) otherwise.
    pub higher_is_better: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_folds: DEFAULT_FOLDS,
            alpha: DEFAULT_ALPHA,
            t_test: TTest::Welch,
            higher_is_better: false,
        }
    }
}

/// Every tunable of the pipeline. Serialised verbatim into each artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Single source of randomness; copied into every stage.
    pub seed: u64,
    pub masks: MaskConfig,
    pub train: TrainConfig,
    pub metric: MetricConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            masks: MaskConfig::default(),
            train: TrainConfig::default(),
            metric: MetricConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    /// Propagates the global seed into the per-stage configurations.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.train.seed = self.seed;
        self.metric.seed = self.seed;
        self
    }

    pub fn validate(&self) -> viewqual::Result<()> {
        self.train.validate()?;
        self.metric.validate()?;
        let bad = |m: String| Err(viewqual::Error::InvalidParam(m));
        if self.masks.dilation_radius == 0 {
            return bad("dilation radius must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.masks.superpixel_fraction) {
            return bad(format!("superpixel fraction {} outside [0,1]", self.masks.superpixel_fraction));
        }
        if self.eval.n_folds == 0 {
            return bad("n_folds must be at least 1".into());
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return bad(format!("alpha {} outside (0,1)", self.eval.alpha));
        }
        Ok(())
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Comment lines that open every text artifact.
    pub fn header(&self, command: &str) -> Vec<String> {
        vec![
            format!("viewqual {command}, schema {SCHEMA_VERSION}"),
            format!("config: {}", serde_json::to_string(self).expect("config serialises")),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.metric.k, 160);
        assert_eq!(c.train.lambda, 0.9);
        assert_eq!(c.train.learning_rate, 0.0002);
        assert_eq!(c.train.bottleneck, 4000);
        assert_eq!(c.masks.dilation_radius, 7);
        assert_eq!((c.masks.shift_dx, c.masks.shift_dy), (10, 0));
        assert_eq!(c.eval.n_folds, 1000);
        assert_eq!(
            c.metric.selector,
            viewqual::codec::Selector::Threshold { epsilon: 0.7 }
        );
    }

    #[test]
    fn toml_overrides_and_seed_propagation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "seed = 4\n[metric]\nk = 3\n[train]\nepochs = 2\n").unwrap();
        let c = RunConfig::load(Some(&p)).unwrap().with_seed(None);
        assert_eq!((c.metric.k, c.train.epochs, c.train.seed, c.metric.seed), (3, 2, 4, 4));
        let c = c.with_seed(Some(9));
        assert_eq!((c.seed, c.train.seed), (9, 9));
        let back: RunConfig = serde_json::from_value(c.snapshot()).unwrap();
        assert_eq!(back, c);
        std::fs::write(&p, "sead = 4\n").unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }
}
