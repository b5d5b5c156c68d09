use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::dice_loss;
use super::MiniFusionNet;
use crate::autograd::Tape;
use crate::error::{contract_err, Result};
use crate::param::poly_lr;
use crate::synth::{AugmentOp, Sample};

/// Initial learning rate for the 200-iteration toy runs. The default of 0.01
/// assumes a pretrained, batch-normalized backbone; the small bias-free net
/// trained from scratch barely leaves its starting plateau at that rate.
pub const TOY_BASE_LR: f64 = 0.1;

/// Iterations averaged at each end of a loss history when comparing the
/// start and the end of training.
pub const LOSS_SMOOTHING_WINDOW: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iters: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Drives shuffling and augmentation draws.
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            batch: 4,
            base_lr: 0.01,
            lr_power: 0.9,
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub lr: f64,
    /// Batch-mean Dice loss before the update of this iteration.
    pub loss: f64,
}

/// Endless epoch-wise shuffled index stream.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Mini-batch SGD with momentum, weight decay and a poly learning-rate decay.
pub fn train(net: &mut MiniFusionNet, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<HistoryEntry>> {
    if data.is_empty() {
        return contract_err("training needs at least one sample");
    }
    if cfg.batch == 0 {
        return contract_err("batch size must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = Sampler {
        order: (0..data.len()).collect(),
        pos: data.len(),
    };
    let mut history = Vec::with_capacity(cfg.iters);
    net.store_mut().zero_grad();
    for iter in 0..cfg.iters {
        let lr = poly_lr(cfg.base_lr, iter, cfg.iters, cfg.lr_power)?;
        let mut tape = Tape::new();
        let mut total = None;
        for _ in 0..cfg.batch {
            let sample = &data[sampler.next(&mut rng)];
            let op = if cfg.augment {
                AugmentOp::ALL[rng.random_range(0..AugmentOp::ALL.len())]
            } else {
                AugmentOp::Identity
            };
            let x = tape.leaf(op.apply(&sample.image)?);
            let g = tape.leaf(op.apply(&sample.masks)?);
            let logits = net.forward(&mut tape, x)?;
            let probs = tape.sigmoid(logits);
            let l = dice_loss(&mut tape, probs, g)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let loss = tape.scale(total.expect("batch is non-empty"), 1.0 / cfg.batch as f64);
        history.push(HistoryEntry {
            iter,
            lr,
            loss: tape.value(loss).data()[0],
        });
        tape.backward_into(loss, net.store_mut())?;
        net.store_mut().sgd_update(lr, cfg.momentum, cfg.weight_decay);
    }
    Ok(history)
}

pub fn history_csv(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iter,lr,loss\n");
    for h in history {
        out.push_str(&format!("{},{:e},{:e}\n", h.iter, h.lr, h.loss));
    }
    out
}

/// Mean loss over the first and the last `window` iterations.
pub fn smoothed_endpoints(history: &[HistoryEntry], window: usize) -> Option<(f64, f64)> {
    if window == 0 || history.len() < window {
        return None;
    }
    let mean = |s: &[HistoryEntry]| s.iter().map(|h| h.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&history[..window]), mean(&history[history.len() - window..])))
}
