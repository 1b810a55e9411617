//! SGD training loop: momentum + weight decay, linear warm-up, milestone
//! decay, batch-averaged gradients, deterministic under a fixed seed.

use super::boxes::GroundTruthBox;
use super::matching::{build_targets, match_anchors};
use super::model::Model;
use crate::error::{NetError, Result};
use crate::tape::Tape;
use crate::tensor::{ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pos_thresh: f64,
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.002,
            warmup_epochs: 5,
            momentum: 0.9,
            weight_decay: 0.0005,
            milestones: vec![20, 26],
            decay_factor: 0.1,
            epochs: 30,
            batch_size: 8,
            pos_thresh: 0.5,
            neg_ratio: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 < 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 || self.decay_factor <= 0.0 {
            return Err(NetError::Config("training hyperparameters must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NetError::Config("epochs and batch_size must be positive".into()));
        }
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(NetError::Config("milestones must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Epoch learning rate: linear warm-up from lr0/10, then step decay.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            let t = epoch as f64 / self.warmup_epochs as f64;
            return self.lr0 / 10.0 + (self.lr0 - self.lr0 / 10.0) * t;
        }
        let decays = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr0 * self.decay_factor.powi(decays as i32)
    }
}

pub type Example = (Tensor, Vec<GroundTruthBox>);

/// Train in place; returns the per-epoch mean loss log.
pub fn train(model: &Model, store: &mut ParamStore, dataset: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(NetError::Config("empty training dataset".into()));
    }
    // anchor assignments depend only on geometry; compute once per image
    let targets: Vec<_> = dataset
        .iter()
        .map(|(_, gts)| {
            let assignment = match_anchors(&model.anchors, gts, cfg.pos_thresh);
            build_targets(&model.anchors, gts, &assignment, model.config.num_classes, cfg.neg_ratio)
        })
        .collect();

    let mut velocity: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grad();
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let (cls, loc) = model.forward(&mut tape, store, &dataset[i].0)?;
                let loss = tape.multibox_loss(cls, loc, targets[i].clone())?;
                let v = tape.value(loss).item();
                if !v.is_finite() {
                    return Err(NetError::Diverged { epoch });
                }
                epoch_loss += v;
                let scaled = tape.scale(loss, inv);
                tape.backward(scaled, store)?;
            }
            for (idx, p) in store.iter_mut().enumerate() {
                let v = velocity[idx].data_mut();
                let w = p.value.data().to_vec();
                for ((vi, gi), wi) in v.iter_mut().zip(p.grad.data()).zip(&w) {
                    *vi = cfg.momentum * *vi - lr * (gi + cfg.weight_decay * wi);
                }
                for (wi, vi) in p.value.data_mut().iter_mut().zip(velocity[idx].data()) {
                    *wi += vi;
                }
            }
        }
        log.push(epoch_loss / dataset.len() as f64);
    }
    Ok(log)
}
