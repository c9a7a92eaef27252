//! Prediction, sampling and the RMSE metric.

use rhino_core::encoder::GumbelNoise;
use rhino_core::generator::LatentSource;
use rhino_core::giraffe;
use rhino_core::graph::MODES;
use rhino_core::rhino::{self, Sampling};
use rhino_core::scenario::{Minibatch, ScenarioBatch};
use rhino_kernel::{DenseArray, ParameterStore, SeededRng, Tape};
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{HarnessError, Result};
use crate::train::{preliminaries, stack_preliminaries};

pub const HORIZONS: [usize; 5] = [10, 20, 30, 40, 50];
/// Scenarios per forward pass during evaluation.
const EVAL_CHUNK: usize = 16;

/// Root mean squared point distance over all samples and frames `1..=h`,
/// one value per horizon `h`. Inputs are `[F × L × 2]`.
pub fn rmse(pred: &DenseArray, truth: &DenseArray, horizons: &[usize]) -> Result<Vec<f64>> {
    let s = pred.shape();
    if s != truth.shape() || s.len() != 3 || s[2] != 2 {
        return Err(HarnessError::Dimension(format!(
            "rmse needs equal [F, L, 2] arrays, got {:?} and {:?}",
            s,
            truth.shape()
        )));
    }
    let (f, l) = (s[0], s[1]);
    let mut cumulative = Vec::with_capacity(f);
    let mut acc = 0.0;
    for k in 0..f {
        for j in 0..l {
            let dx = pred.get(&[k, j, 0]) - truth.get(&[k, j, 0]);
            let dy = pred.get(&[k, j, 1]) - truth.get(&[k, j, 1]);
            acc += dx * dx + dy * dy;
        }
        cumulative.push(acc);
    }
    horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > f || l == 0 {
                return Err(HarnessError::Dimension(format!("horizon {h} outside 1..={f} (L = {l})")));
            }
            Ok((cumulative[h - 1] / (l * h) as f64).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `giraffe` or the generator variant name.
    pub model: String,
    pub horizons: Vec<usize>,
    pub rmse: Vec<f64>,
    pub samples: usize,
    pub k: usize,
    pub fingerprint: String,
    /// Whether RMSE does not decrease with the horizon (reported, not enforced).
    pub nondecreasing: bool,
}

impl EvalReport {
    pub fn new(model: &str, horizons: &[usize], rmse: Vec<f64>, samples: usize, k: usize, fingerprint: String) -> Self {
        let nondecreasing = rmse.windows(2).all(|w| w[1] >= w[0]);
        EvalReport {
            model: model.to_string(),
            horizons: horizons.to_vec(),
            rmse,
            samples,
            k,
            fingerprint,
            nondecreasing,
        }
    }

    pub fn at(&self, horizon: usize) -> Option<f64> {
        self.horizons.iter().position(|&h| h == horizon).map(|i| self.rmse[i])
    }
}

/// Per-mode forecasts `[F × N × 3 × 2]` and intention probabilities `[N × 3]`
/// of one scenario, in absolute coordinates.
pub fn predict_giraffe(store: &mut ParameterStore, settings: &Settings, scenario: &ScenarioBatch) -> Result<(DenseArray, DenseArray)> {
    let cfg = settings.giraffe();
    let batch = Minibatch::new(&[scenario])?;
    let mut tape = Tape::new();
    let out = giraffe::forward(&mut tape, store, &cfg, &batch)?;
    let modes = giraffe::modes_to_tensor(tape.value(out.modes), cfg.f);
    let modes = DenseArray::from_fn(modes.shape(), |ix| modes.get(ix) + scenario.origin[ix[3]]);
    Ok((modes, tape.value(out.probs).clone()))
}

/// `K` futures per scenario, `[F × N × K × 2]` in coordinates relative to the
/// target. Categories use the noise-free relaxation at the final training
/// temperature.
pub fn generate_k(
    store: &mut ParameterStore,
    settings: &Settings,
    scenarios: &[&ScenarioBatch],
    k: usize,
    seed: u64,
    latent: LatentSource,
) -> Result<Vec<DenseArray>> {
    let cfg = settings.rhino();
    let prelims = preliminaries(store, settings, scenarios)?;
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::with_capacity(scenarios.len());
    for (chunk_idx, chunk) in scenarios.chunks(EVAL_CHUNK).enumerate() {
        let base = chunk_idx * EVAL_CHUNK;
        let batch = Minibatch::new(chunk)?;
        let prelim = stack_preliminaries(&(0..chunk.len()).map(|i| &prelims[base + i]).collect::<Vec<_>>());
        let mut tape = Tape::new();
        let mut sampling = Sampling {
            noise: GumbelNoise::Off,
            tau: settings.tau_at(settings.steps.saturating_sub(1)),
            latent,
            k: k.max(1),
            rng: &mut rng,
        };
        let o = rhino::forward(&mut tape, store, &cfg, &batch, &prelim, &mut sampling)?;
        let fut = tape.value(o.future);
        let rows = batch.rows();
        let f = batch.f;
        for g in &batch.groups {
            // Without sampling every draw is the same single output.
            out.push(DenseArray::from_fn(&[f, g.len(), k.max(1), 2], |ix| {
                let s = if o.k == 1 { 0 } else { ix[2] };
                fut.get(&[s * rows + g.start + ix[1], ix[0] * 2 + ix[3]])
            }));
        }
    }
    Ok(out)
}

/// Sample of the target vehicle with the lowest full-horizon squared error.
pub fn best_sample(futures: &DenseArray, scenario: &ScenarioBatch) -> usize {
    let (f, k) = (futures.shape()[0], futures.shape()[2]);
    let t = scenario.target_index;
    let err = |s: usize| -> f64 {
        (0..f)
            .map(|i| {
                let dx = futures.get(&[i, t, s, 0]) - scenario.future.get(&[i, t, 0]);
                let dy = futures.get(&[i, t, s, 1]) - scenario.future.get(&[i, t, 1]);
                dx * dx + dy * dy
            })
            .sum()
    };
    (0..k).fold(0, |best, s| if err(s) < err(best) { s } else { best })
}

/// Min-of-K RMSE of the target vehicles, using posterior latents.
pub fn evaluate_rhino(
    store: &mut ParameterStore,
    settings: &Settings,
    scenarios: &[&ScenarioBatch],
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    let futures = generate_k(store, settings, scenarios, k, seed, LatentSource::Posterior)?;
    let f = settings.f;
    let l = scenarios.len();
    let mut pred = DenseArray::zeros(&[f, l, 2]);
    let mut truth = DenseArray::zeros(&[f, l, 2]);
    for (j, (s, y)) in scenarios.iter().zip(&futures).enumerate() {
        let best = best_sample(y, s);
        for i in 0..f {
            for c in 0..2 {
                pred.set(&[i, j, c], y.get(&[i, s.target_index, best, c]) + s.origin[c]);
                truth.set(&[i, j, c], s.future.get(&[i, s.target_index, c]) + s.origin[c]);
            }
        }
    }
    let horizons: Vec<usize> = HORIZONS.iter().copied().filter(|&h| h <= f).collect();
    let values = rmse(&pred, &truth, &horizons)?;
    Ok(EvalReport::new(settings.variant.name(), &horizons, values, l, k, settings.fingerprint()))
}

/// RMSE of the forecaster's fused trajectory for the target vehicles.
pub fn evaluate_giraffe(store: &mut ParameterStore, settings: &Settings, scenarios: &[&ScenarioBatch]) -> Result<EvalReport> {
    let f = settings.f;
    let l = scenarios.len();
    let mut pred = DenseArray::zeros(&[f, l, 2]);
    let mut truth = DenseArray::zeros(&[f, l, 2]);
    for (j, s) in scenarios.iter().enumerate() {
        let (modes, probs) = predict_giraffe(store, settings, s)?;
        let t = s.target_index;
        for i in 0..f {
            for c in 0..2 {
                let fused: f64 = (0..MODES).map(|m| probs.get(&[t, m]) * modes.get(&[i, t, m, c])).sum();
                pred.set(&[i, j, c], fused);
                truth.set(&[i, j, c], s.future.get(&[i, t, c]) + s.origin[c]);
            }
        }
    }
    let horizons: Vec<usize> = HORIZONS.iter().copied().filter(|&h| h <= f).collect();
    let values = rmse(&pred, &truth, &horizons)?;
    Ok(EvalReport::new("giraffe", &horizons, values, l, 1, settings.fingerprint()))
}
