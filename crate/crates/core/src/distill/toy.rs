//! Desk-scale distillation: a frozen random backbone, a trainable head and
//! synthetic teacher heatmaps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{adamw_step, AdamWConfig, OptimizerState};
use super::head::{batch_loss, HeadParams, HeadSample, LossSpec};
use crate::data::sample_rng;
use crate::error::{Error, Result};
use crate::loss::{KdMode, LossReport, LossWeights};
use crate::model::{backbone_forward, init_weights, Incidence, ModelConfig};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub steps: usize,
    pub batch: usize,
    pub samples: usize,
    pub seed: u64,
    pub num_landmarks: usize,
    pub num_edges: usize,
    /// Teacher Gaussian width in heatmap cells.
    pub sigma_cells: f64,
    pub loss: LossWeights,
    pub kd_mode: KdMode,
    pub optimizer: AdamWConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            steps: 200,
            batch: 16,
            samples: 32,
            seed: 0,
            num_landmarks: 5,
            num_edges: 3,
            sigma_cells: 1.5,
            loss: LossWeights::default(),
            kd_mode: KdMode::PerLandmarkL2,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Fixed training set and the untrained model it was built from.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub model: ModelConfig,
    pub weights: WeightStore,
    pub incidence: Incidence,
    pub samples: Vec<HeadSample<f32>>,
    /// Source images, `[3, S, S]`.
    pub images: Vec<Tensor>,
}

/// Gaussian bumps of peak 1 centred on `points` (input pixels).
pub fn render_gaussians(points: &[[f32; 2]], grid: (usize, usize), stride: (f32, f32), sigma_cells: f64) -> Tensor {
    let (h, w) = grid;
    Tensor::from_fn(&[points.len(), h, w], |i| {
        let p = points[i[0]];
        let u = p[0] as f64 / stride.0 as f64 - 0.5;
        let v = p[1] as f64 / stride.1 as f64 - 0.5;
        let d2 = (i[2] as f64 - u).powi(2) + (i[1] as f64 - v).powi(2);
        (-d2 / (2.0 * sigma_cells * sigma_cells)).exp() as f32
    })
    .expect("rank 3")
}

/// Noise background with one coloured disc per landmark.
fn synthetic_image(points: &[[f32; 2]], size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut v: Vec<f32> = (0..3 * size * size).map(|_| 0.2 * rng.gen::<f32>()).collect();
    for (k, p) in points.iter().enumerate() {
        let colour = [(k % 3 == 0) as u8, (k % 3 == 1) as u8, (k % 3 == 2 || k >= 3) as u8];
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f32 + 0.5 - p[0]).powi(2) + (y as f32 + 0.5 - p[1]).powi(2);
                if d2 <= 9.0 {
                    for c in 0..3 {
                        if colour[c] == 1 {
                            v[(c * size + y) * size + x] = 1.0;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[3, size, size], v).expect("sized")
}

pub fn toy_dataset(cfg: &ToyConfig) -> Result<ToyDataset> {
    let model = ModelConfig::miniature(cfg.num_landmarks, cfg.num_edges);
    let weights = init_weights(&model, cfg.seed);
    let incidence = Incidence::from_matrix(&model.scheme.incidence)?;
    let (size, _) = model.input_size;
    let stride = model.heatmap_stride();
    let margin = size as f32 * 0.2;
    let mut samples = Vec::with_capacity(cfg.samples);
    let mut images = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let mut rng = sample_rng(cfg.seed, i as u64);
        let points: Vec<[f32; 2]> = (0..cfg.num_landmarks)
            .map(|_| [rng.gen_range(margin..size as f32 - margin), rng.gen_range(margin..size as f32 - margin)])
            .collect();
        let image = synthetic_image(&points, size, &mut rng);
        let features = backbone_forward(&image, &weights, &model)?.features;
        let teacher = render_gaussians(&points, model.heatmap_size, stride, cfg.sigma_cells);
        samples.push(HeadSample { features, teacher, landmarks: points });
        images.push(image);
    }
    Ok(ToyDataset { model, weights, incidence, samples, images })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub loss: LossReport,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    /// Loss of each step's batch, before that step's update.
    pub trajectory: Vec<StepRecord>,
    pub head: HeadParams<f32>,
    pub dataset: ToyDataset,
}

impl ToyRun {
    /// Trained weights: frozen backbone plus the updated head.
    pub fn weights(&self) -> Result<WeightStore> {
        let mut w = self.dataset.weights.clone();
        self.head.write_into(&mut w)?;
        Ok(w)
    }
}

pub fn loss_spec(cfg: &ToyConfig, model: &ModelConfig) -> LossSpec {
    let (sx, sy) = model.heatmap_stride();
    let eps = match model.decode {
        crate::model::DecodeMode::Sum { eps } => eps as f64,
        crate::model::DecodeMode::Softmax { .. } => 1e-6,
    };
    LossSpec { weights: cfg.loss, kd_mode: cfg.kd_mode, stride: (sx as f64, sy as f64), decode_eps: eps, norm_eps: model.norm_eps as f64 }
}

pub fn toy_distill_run(cfg: &ToyConfig) -> Result<ToyRun> {
    toy_distill_run_with(cfg, |_| {})
}

/// As [`toy_distill_run`], calling `on_step` after each step's loss is known.
pub fn toy_distill_run_with(cfg: &ToyConfig, mut on_step: impl FnMut(&StepRecord)) -> Result<ToyRun> {
    if cfg.batch == 0 || cfg.batch > cfg.samples {
        return Err(Error::invalid("toy_distill_run", format!("batch {} with {} samples", cfg.batch, cfg.samples)));
    }
    if !matches!(ModelConfig::miniature(1, 1).decode, crate::model::DecodeMode::Sum { .. }) {
        return Err(Error::invalid("toy_distill_run", "only sum-mode decoding is differentiable here"));
    }
    let dataset = toy_dataset(cfg)?;
    let spec = loss_spec(cfg, &dataset.model);
    let mut head = HeadParams::<f32>::from_store(&dataset.weights)?;
    let mut state = OptimizerState::new(&head.values);
    let mut order: Vec<usize> = (0..cfg.samples).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_5a3b1e5);
    let per_epoch = cfg.samples / cfg.batch;
    let mut trajectory = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if step % per_epoch == 0 {
            order.shuffle(&mut shuffle_rng);
        }
        let start = (step % per_epoch) * cfg.batch;
        let batch: Vec<&HeadSample<f32>> = order[start..start + cfg.batch].iter().map(|&i| &dataset.samples[i]).collect();
        let (report, grads) = match batch_loss(&head, &batch, &dataset.incidence, &spec, true) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        let record = StepRecord { step, loss: report };
        on_step(&record);
        trajectory.push(record);
        let grads = grads.expect("requested");
        adamw_step(&mut head.values, &grads, &mut state, cfg.optimizer.lr_head, &cfg.optimizer).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { step, loss: report.total as f64 },
            other => other,
        })?;
    }
    Ok(ToyRun { trajectory, head, dataset })
}
