//! Training loops for both stages.
//!
//! Both stages share one [`ParameterStore`]: the forecaster's parameters live
//! under `giraffe.*` and are frozen while the `rhino.*` parameters train.

use std::path::Path;

use rhino_core::encoder::GumbelNoise;
use rhino_core::generator::LatentSource;
use rhino_core::giraffe;
use rhino_core::rhino::{self, Preliminary, Sampling};
use rhino_core::scenario::{Minibatch, ScenarioBatch};
use rhino_kernel::{load_checkpoint, save_checkpoint, Adam, DenseArray, ParameterStore, SeededRng, StepDecay, Tape};
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Giraffe,
    Rhino,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub settings: Settings,
    pub steps: usize,
}

pub fn save(path: &Path, store: &ParameterStore, meta: &CheckpointMeta) -> Result<()> {
    let value = serde_json::to_value(meta).map_err(|e| HarnessError::json(path, e))?;
    Ok(save_checkpoint(path, store, value)?)
}

pub fn load(path: &Path) -> Result<(ParameterStore, CheckpointMeta)> {
    let (store, value) = load_checkpoint(path)?;
    let meta = serde_json::from_value(value).map_err(|e| HarnessError::json(path, e))?;
    Ok((store, meta))
}

/// Loss components logged once per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    /// `(pred, int, fut)` for the forecaster, `(elbo, recon, var)` for the generator.
    pub parts: [f64; 3],
}

/// Minibatch indices: the whole set when it fits one batch, otherwise a
/// reshuffled pass per epoch.
pub struct BatchSampler {
    n: usize,
    size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        BatchSampler {
            n,
            size: size.max(1),
            order: Vec::new(),
            pos: usize::MAX,
            rng: SeededRng::new(seed),
        }
    }

    pub fn full_batch(&self) -> bool {
        self.size >= self.n
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.full_batch() {
            return (0..self.n).collect();
        }
        if self.pos >= self.order.len() {
            self.order = (0..self.n).collect();
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}

fn minibatch(scenarios: &[&ScenarioBatch], idx: &[usize]) -> Result<Minibatch> {
    let picked: Vec<&ScenarioBatch> = idx.iter().map(|&i| scenarios[i]).collect();
    Ok(Minibatch::new(&picked)?)
}

fn optimizer(settings: &Settings) -> (Adam, StepDecay) {
    (
        Adam::new().with_clip(settings.clip),
        StepDecay {
            base_lr: settings.lr,
            factor: settings.decay,
            every: settings.epoch_steps,
        },
    )
}

/// Trains the forecaster from `store` (fresh when `None`).
pub fn train_giraffe(
    settings: &Settings,
    scenarios: &[&ScenarioBatch],
    store: Option<ParameterStore>,
    mut log: impl FnMut(&StepLog),
) -> Result<ParameterStore> {
    if scenarios.is_empty() {
        return Err(HarnessError::Config("no training scenarios".into()));
    }
    let cfg = settings.giraffe();
    cfg.validate()?;
    let mut store = store.unwrap_or_else(|| ParameterStore::new(settings.seed));
    let mut sampler = BatchSampler::new(scenarios.len(), settings.batch_size, settings.seed ^ 0xb47c);
    let (mut adam, schedule) = optimizer(settings);
    let mut cached: Option<(Minibatch, DenseArray)> = None;
    for step in 0..settings.steps {
        if cached.is_none() || !sampler.full_batch() {
            let batch = minibatch(scenarios, &sampler.next_batch())?;
            let hf = giraffe::hf_target(&mut store, &cfg, &batch)?;
            cached = Some((batch, hf));
        }
        let (batch, hf) = cached.as_ref().expect("batch prepared above");
        let mut tape = Tape::new();
        let out = giraffe::forward(&mut tape, &mut store, &cfg, batch)?;
        let loss = giraffe::batch_loss(&mut tape, &cfg, &out, batch, hf)?;
        let grads = tape.backward(loss.total);
        tape.accumulate_param_grads(&grads, &mut store);
        let lr = schedule.lr(step);
        adam.step(&mut store, lr);
        log(&StepLog {
            step,
            lr,
            total: tape.value(loss.total).item(),
            parts: [loss.pred, loss.int, loss.fut],
        });
    }
    Ok(store)
}

/// Forecaster outputs per scenario, computed once and reused every step.
pub fn preliminaries(store: &mut ParameterStore, settings: &Settings, scenarios: &[&ScenarioBatch]) -> Result<Vec<Preliminary>> {
    let cfg = settings.giraffe();
    scenarios
        .iter()
        .map(|s| Ok(rhino::preliminary(store, &cfg, &Minibatch::new(&[*s])?)?))
        .collect()
}

fn stack_rows(parts: &[&DenseArray]) -> DenseArray {
    let w = parts[0].shape()[1];
    let mut data = Vec::new();
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let rows = data.len() / w.max(1);
    DenseArray::new(vec![rows, w], data).expect("row widths agree")
}

/// Concatenates per-scenario forecasts in minibatch row order.
pub fn stack_preliminaries(parts: &[&Preliminary]) -> Preliminary {
    Preliminary {
        modes: stack_rows(&parts.iter().map(|p| &p.modes).collect::<Vec<_>>()),
        probs: stack_rows(&parts.iter().map(|p| &p.probs).collect::<Vec<_>>()),
        fused: stack_rows(&parts.iter().map(|p| &p.fused).collect::<Vec<_>>()),
    }
}

/// Trains the generator on top of a trained forecaster held in `store`.
pub fn train_rhino(
    settings: &Settings,
    scenarios: &[&ScenarioBatch],
    mut store: ParameterStore,
    mut log: impl FnMut(&StepLog),
) -> Result<ParameterStore> {
    if scenarios.is_empty() {
        return Err(HarnessError::Config("no training scenarios".into()));
    }
    let cfg = settings.rhino();
    cfg.validate()?;
    let prelims = preliminaries(&mut store, settings, scenarios)?;
    let mut sampler = BatchSampler::new(scenarios.len(), settings.batch_size, settings.seed ^ 0x7a11);
    let mut gumbel_rng = SeededRng::new(settings.seed ^ 0x6a3b);
    let mut latent_rng = SeededRng::new(settings.seed ^ 0x1a7e);
    let (mut adam, schedule) = optimizer(settings);
    let mut cached: Option<(Minibatch, Preliminary)> = None;
    for step in 0..settings.steps {
        if cached.is_none() || !sampler.full_batch() {
            let idx = sampler.next_batch();
            let batch = minibatch(scenarios, &idx)?;
            let prelim = stack_preliminaries(&idx.iter().map(|&i| &prelims[i]).collect::<Vec<_>>());
            cached = Some((batch, prelim));
        }
        let (batch, prelim) = cached.as_ref().expect("batch prepared above");
        let mut tape = Tape::new();
        let mut sampling = Sampling {
            noise: GumbelNoise::Sampled(&mut gumbel_rng),
            tau: settings.tau_at(step),
            latent: LatentSource::Posterior,
            k: cfg.train_samples(),
            rng: &mut latent_rng,
        };
        let out = rhino::forward(&mut tape, &mut store, &cfg, batch, prelim, &mut sampling)?;
        let loss = rhino::batch_loss(&mut tape, &cfg, &out, batch)?;
        let grads = tape.backward(loss.total);
        tape.accumulate_param_grads(&grads, &mut store);
        let lr = schedule.lr(step);
        adam.step(&mut store, lr);
        log(&StepLog {
            step,
            lr,
            total: tape.value(loss.total).item(),
            parts: [loss.elbo, loss.recon, loss.var],
        });
    }
    Ok(store)
}
