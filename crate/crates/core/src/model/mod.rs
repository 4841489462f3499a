//! The student landmark network: backbone, heatmap generator and decoding.

pub mod backbone;
pub mod config;
pub mod decode;
pub mod generator;
pub mod plan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use backbone::{backbone_forward, mobilevit_v2_block, mv2_block, separable_attention, BackboneOutput};
pub use config::{Activation, BackboneNorm, DecodeMode, LandmarkScheme, ModelConfig};
pub use decode::{soft_argmax, DecodeGrid, Decoded, LandmarkSet};
pub use generator::{e2p_transform, heatmap_generator_forward, GeneratorOutput, HeatmapSet, Incidence};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::weights::{self, ValidationReport, WeightStore};

/// Lists missing, extra and mis-shaped tensors relative to `cfg`'s canonical names.
pub fn validate_against_config(store: &WeightStore, cfg: &ModelConfig) -> ValidationReport {
    weights::validate(store, &plan::param_specs(cfg))
}

/// He-uniform initialization (variance `2 / fan_in`), unit norm scales,
/// zero biases. The gain keeps activations near unit scale through the
/// un-normalized folded-norm stages.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in plan::param_specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let data = if spec.name.ends_with(".bias") {
            vec![0.0; n]
        } else if spec.shape.len() == 1 {
            vec![1.0; n]
        } else {
            let fan_in: usize = spec.shape[1..].iter().product();
            let bound = (6.0 / fan_in as f32).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        store.insert(spec.name, Tensor::new(&spec.shape, data).expect("planned shape")).expect("unique planned names");
    }
    store
}

/// A validated configuration/weights pair ready for inference.
#[derive(Debug, Clone)]
pub struct Student {
    config: ModelConfig,
    weights: WeightStore,
    incidence: Incidence,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub landmarks: LandmarkSet,
    pub fallback_channels: Vec<usize>,
    pub generator: GeneratorOutput,
}

impl Student {
    pub fn new(config: ModelConfig, weights: WeightStore) -> Result<Self> {
        config.validate()?;
        let report = validate_against_config(&weights, &config);
        if let Some(issue) = report.issues.first() {
            return Err(match issue {
                weights::ValidationIssue::Missing { name } => Error::MissingWeight(name.clone()),
                weights::ValidationIssue::ShapeMismatch { name, expected, found } => {
                    Error::WeightShape { name: name.clone(), expected: expected.clone(), found: found.clone() }
                }
                weights::ValidationIssue::Extra { name } => {
                    Error::invalid("student", format!("unexpected tensor `{name}` in weight store"))
                }
            });
        }
        let incidence = Incidence::from_matrix(&config.scheme.incidence)?;
        Ok(Student { config, weights, incidence })
    }

    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        let w = init_weights(&config, seed);
        Student::new(config, w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn decode_grid(&self) -> DecodeGrid {
        let (sx, sy) = self.config.heatmap_stride();
        DecodeGrid::new(sx, sy)
    }

    pub fn backbone(&self, image: &Tensor) -> Result<BackboneOutput> {
        backbone_forward(image, &self.weights, &self.config)
    }

    pub fn generator(&self, features: &Tensor) -> Result<GeneratorOutput> {
        let p = generator::GeneratorParams::from_store(&self.weights)?;
        heatmap_generator_forward(features, &p, &self.incidence, self.config.norm_eps)
    }

    /// Full image-to-landmarks pass; coordinates are in input-crop pixels.
    pub fn predict_full(&self, image: &Tensor) -> Result<Prediction> {
        let feats = self.backbone(image)?;
        let generator = self.generator(&feats.features)?;
        let decoded = soft_argmax(&generator.refined, self.decode_grid(), self.config.decode)?;
        Ok(Prediction { landmarks: decoded.landmarks, fallback_channels: decoded.fallback_channels, generator })
    }

    pub fn predict(&self, image: &Tensor) -> Result<LandmarkSet> {
        Ok(self.predict_full(image)?.landmarks)
    }
}

/// Convenience wrapper over [`Student`] for one-off calls.
pub fn predict(image: &Tensor, weights: &WeightStore, config: &ModelConfig) -> Result<LandmarkSet> {
    Student::new(config.clone(), weights.clone())?.predict(image)
}
