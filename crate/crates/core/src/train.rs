//! Optimization loop over a ray dataset.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::diff::AdamState;
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::objective::{batch_loss, EntropyDraws, LossBreakdown, LossConfig, TrainBatch};
use crate::render::{midpoint_samples, stratified_samples, Latents, Ray, RayBatch};
use crate::rng::{self, stream, Rng};
use crate::scenes::{Aabb, RayDataset};

/// Every pixel of the training views as a supervised ray.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRays {
    pub rays: Vec<Ray>,
    pub colors: Vec<[f64; 3]>,
    pub depths: Vec<f64>,
    pub background: [f64; 3],
}

impl TrainingRays {
    pub fn from_dataset(ds: &RayDataset) -> Result<Self> {
        let (near, far) = (ds.scene.near, ds.scene.far);
        let mut out = Self {
            rays: Vec::new(),
            colors: Vec::new(),
            depths: Vec::new(),
            background: ds.scene.background,
        };
        for view in ds.train_views() {
            let rays = view.camera.rays(near, far)?;
            for (i, ray) in rays.into_iter().enumerate() {
                let c = view.image.pixel(i);
                out.rays.push(ray);
                out.colors.push([c[0], c[1], c[2]]);
                out.depths.push(view.depth.data[i]);
            }
        }
        if out.rays.is_empty() {
            return Err(Error::invalid("training split has no pixels"));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub nll: f64,
    pub neg_entropy: f64,
    pub depth_reg: f64,
    pub total: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

pub struct Trainer {
    model: FieldModel,
    adam: AdamState,
    cfg: TrainConfig,
    total_steps: usize,
    data: TrainingRays,
    bounds: Aabb,
    batch_rng: Rng,
    entropy_rng: Rng,
    step: usize,
    started: Instant,
}

impl Trainer {
    /// `seed` is the run's root seed; batches and entropy draws use their
    /// own substreams of it.
    pub fn new(
        model: FieldModel,
        cfg: TrainConfig,
        total_steps: usize,
        data: TrainingRays,
        bounds: Aabb,
        seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("no training rays"));
        }
        let adam = AdamState::new(model.params(), cfg.lr);
        Ok(Self {
            model,
            adam,
            cfg,
            total_steps,
            data,
            bounds,
            batch_rng: rng::substream(seed, stream::TRAINING),
            entropy_rng: rng::substream(seed, stream::ENTROPY),
            step: 0,
            started: Instant::now(),
        })
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn into_model(self) -> FieldModel {
        self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    fn loss_config(&self) -> LossConfig {
        LossConfig {
            entropy_weight: self.cfg.entropy_weight,
            depth_weight: self.cfg.depth_weight,
            bandwidth: self.cfg.bandwidth,
        }
    }

    /// Draw the next batch: rays with replacement, nodes, latents and
    /// entropy points.
    pub fn next_batch(&mut self) -> Result<(TrainBatch, EntropyDraws)> {
        let n = self.cfg.batch_rays;
        let mut rays = Vec::with_capacity(n);
        let mut nodes = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut depths = Vec::with_capacity(n);
        for _ in 0..n {
            let i = self.batch_rng.random_range(0..self.data.len());
            let ray = self.data.rays[i];
            nodes.push(if self.cfg.stratified {
                stratified_samples(&ray, self.cfg.nodes, &mut self.batch_rng)?
            } else {
                midpoint_samples(&ray, self.cfg.nodes)?
            });
            rays.push(ray);
            colors.push(self.data.colors[i]);
            depths.push(self.data.depths[i]);
        }
        let latents = Latents::draw(self.model.mode(), self.cfg.samples, &mut self.batch_rng);
        let entropy = if self.cfg.entropy_weight > 0.0 {
            EntropyDraws::sample(
                &self.bounds,
                self.cfg.entropy_samples,
                &mut self.entropy_rng,
            )?
        } else {
            EntropyDraws::sample(&self.bounds, 1, &mut self.entropy_rng)?
        };
        let batch = TrainBatch {
            rays: RayBatch::new(rays, nodes, (0..n as u64).collect())?,
            colors,
            depths: (self.cfg.depth_weight > 0.0).then_some(depths),
            latents,
            background: self.data.background,
        };
        Ok((batch, entropy))
    }

    /// Loss of a batch without updating.
    pub fn evaluate(&self, batch: &TrainBatch, entropy: &EntropyDraws) -> Result<LossBreakdown> {
        Ok(batch_loss(&self.model, batch, entropy, &self.loss_config())?.0)
    }

    /// One optimizer update. On a numeric failure the parameters are left
    /// untouched.
    pub fn step(&mut self) -> Result<StepRecord> {
        let (batch, entropy) = self.next_batch()?;
        let (loss, grads) = batch_loss(&self.model, &batch, &entropy, &self.loss_config())?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                op: "batch_loss",
                node: 0,
            });
        }
        let lr = self.cfg.lr_at(self.step, self.total_steps);
        self.adam.lr = lr;
        let mut next = self.model.params().clone();
        self.adam.step(&mut next, &grads)?;
        if next
            .iter()
            .any(|(_, _, t)| t.data().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                op: "adam_step",
                node: 0,
            });
        }
        *self.model.params_mut() = next;
        self.step += 1;
        Ok(StepRecord {
            step: self.step,
            nll: loss.nll,
            neg_entropy: loss.neg_entropy,
            depth_reg: loss.depth_reg,
            total: loss.total,
            lr,
            wall_ms: self.started.elapsed().as_millis() as u64,
        })
    }
}
