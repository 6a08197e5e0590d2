use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Denoiser, Model};
use super::sample::TrainingExample;
use super::schedule::{add_noise, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{Adam, AdamConfig, Element, Graph, Tensor};

/// One noised item of a training step: its timestep and the noise to predict.
#[derive(Clone, Debug)]
pub struct NoiseDraw<T> {
    pub t: usize,
    pub eps: Tensor<T>,
}

pub fn draw_noise<T: Element, R: Rng + ?Sized>(shape: &[usize], s: &NoiseSchedule, rng: &mut R) -> NoiseDraw<T> {
    let t = s.sample_t(rng);
    NoiseDraw {
        t,
        eps: Tensor::randn(shape, 1.0, rng),
    }
}

/// Mean over the batch of the per-element squared error between predicted and
/// true noise. Gradients (scaled by `1/B`) are added to the model's trainable
/// parameters; the caller zeroes them and applies the optimiser.
pub fn training_step<T: Element, D: Denoiser<T>, R: Rng + ?Sized>(
    batch: &[TrainingExample<T>],
    model: &mut D,
    s: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (i, item) in batch.iter().enumerate() {
        let draw = draw_noise::<T, R>(item.gt.shape(), s, rng);
        let noisy = add_noise(&item.gt, draw.t, &draw.eps, s)?;
        let input = item.input(noisy);
        let mut g = Graph::new();
        let pred = model.predict(&mut g, &input, draw.t)?;
        let target = g.constant(draw.eps);
        let loss = g.mse(pred, target)?;
        let value = g.value(loss).data()[0].to_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at batch item {i}, t = {}",
                draw.t
            )));
        }
        total += value;
        if let Some(store) = model.params_mut() {
            let grads = g.backward(loss)?;
            grads.accumulate_into(store, T::from_f64(scale))?;
        }
    }
    Ok(total * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 2,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub variant: String,
    pub wall_time: f64,
}

/// Runs `cfg.steps` optimiser steps over uniformly drawn minibatches.
pub fn train<T: Element>(
    model: &mut Model<T>,
    data: &[TrainingExample<T>],
    s: &NoiseSchedule,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(data[rng.gen_range(0..data.len())].clone());
        }
        model.store.zero_grad();
        let loss = training_step(&batch, model, s, &mut rng)?;
        opt.step(&mut model.store);
        let rec = LossRecord {
            step,
            loss,
            variant: model.variant().name().to_string(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_step(&rec)?;
        log.push(rec);
    }
    Ok(log)
}

/// Trailing moving average: entry `k` averages `values[k+1-window ..= k]`
/// (fewer at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}
