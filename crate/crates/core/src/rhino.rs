//! The relational generator end to end: frozen multi-modal forecasts in,
//! K sampled futures and a past reconstruction out.

use std::fmt;
use std::str::FromStr;

use rhino_kernel::{DenseArray, ParameterStore, SeededRng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_groups, EncoderConfig, Encoded, GumbelNoise};
use crate::error::{CoreError, Result};
use crate::generator::{
    generate, posterior, repeat_rows, rhino_loss, sample_latent, sample_prior, GeneratorConfig, GeneratorInputs,
    LatentSource, LossWeights, PosteriorParams, RhinoLoss,
};
use crate::giraffe::{self, GiraffeConfig};
use crate::graph::MODES;
use crate::hypergraph::NodeKind;
use crate::scenario::Minibatch;

pub const PREFIX: &str = "rhino";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Pairwise (scale-0) graph only.
    NoHg,
    /// Encode the single fused forecast instead of one node per mode.
    NoMm,
    /// Feed the future embedding to the generator directly, no latent sampling.
    NoPdl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoHg, Variant::NoMm, Variant::NoPdl];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHg => "no_hg",
            Variant::NoMm => "no_mm",
            Variant::NoPdl => "no_pdl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant `{s}` (full, no_hg, no_mm, no_pdl)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhinoConfig {
    pub encoder: EncoderConfig,
    pub generator: GeneratorConfig,
    pub weights: LossWeights,
    pub variant: Variant,
}

impl Default for RhinoConfig {
    fn default() -> Self {
        RhinoConfig {
            encoder: EncoderConfig::default(),
            generator: GeneratorConfig::default(),
            weights: LossWeights::default(),
            variant: Variant::Full,
        }
    }
}

impl RhinoConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        RhinoConfig {
            variant,
            ..self.clone()
        }
    }

    /// Encoder configuration after the variant's restrictions.
    pub fn effective_encoder(&self) -> EncoderConfig {
        let mut e = self.encoder.clone();
        if self.variant == Variant::NoHg {
            e.scales.clear();
        }
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.weights.validate()?;
        let g = &self.generator;
        if g.t == 0 || g.f == 0 || g.dz == 0 || g.hidden == 0 || g.gru_hidden == 0 {
            return Err(CoreError::Config("generator horizons and widths must be positive".into()));
        }
        Ok(())
    }

    /// Samples per forward pass during training.
    pub fn train_samples(&self) -> usize {
        if self.variant == Variant::NoPdl {
            1
        } else {
            self.weights.k_samples
        }
    }
}

/// Detached forecasts of the first stage.
#[derive(Debug, Clone)]
pub struct Preliminary {
    /// `[R·3 × F·2]`, row `i·3 + m`.
    pub modes: DenseArray,
    /// `[R × 3]`.
    pub probs: DenseArray,
    /// `[R × F·2]`.
    pub fused: DenseArray,
}

/// Runs the first stage on its own tape; nothing here receives gradients.
pub fn preliminary(store: &mut ParameterStore, cfg: &GiraffeConfig, batch: &Minibatch) -> Result<Preliminary> {
    let mut tape = Tape::new();
    let out = giraffe::forward(&mut tape, store, cfg, batch)?;
    Ok(Preliminary {
        modes: tape.value(out.modes).clone(),
        probs: tape.value(out.probs).clone(),
        fused: tape.value(out.fused).clone(),
    })
}

#[derive(Debug, Clone)]
pub struct RhinoOutput {
    /// `[K·R × F·2]`.
    pub future: Var,
    /// `[K·R × T·2]`.
    pub past: Var,
    pub posterior: Option<PosteriorParams>,
    pub k: usize,
    pub v_t: Var,
    pub v_f: Var,
    pub enc_t: Encoded,
    pub enc_f: Encoded,
}

/// Sampling controls for one forward pass.
pub struct Sampling<'a> {
    pub noise: GumbelNoise<'a>,
    pub tau: f64,
    pub latent: LatentSource,
    pub k: usize,
    pub rng: &'a mut SeededRng,
}

/// Forward pass over a minibatch.
pub fn forward(
    tape: &mut Tape,
    store: &mut ParameterStore,
    cfg: &RhinoConfig,
    batch: &Minibatch,
    prelim: &Preliminary,
    sampling: &mut Sampling,
) -> Result<RhinoOutput> {
    let enc = cfg.effective_encoder();
    let scale = cfg.generator.input_scale;
    let rows = batch.rows();

    let x_t = tape.constant(batch.history_flat(scale));
    let enc_t = encode_groups(
        tape,
        store,
        &format!("{PREFIX}.enc_t"),
        &enc,
        x_t,
        &batch.groups,
        &mut sampling.noise,
        sampling.tau,
        NodeKind::Agent,
        1,
    )?;
    let v_t = enc_t.output;

    let (enc_f, v_f) = if cfg.variant == Variant::NoMm {
        let x_f = tape.constant(prelim.fused.scale(scale));
        let e = encode_groups(
            tape,
            store,
            &format!("{PREFIX}.enc_f"),
            &enc,
            x_f,
            &batch.groups,
            &mut sampling.noise,
            sampling.tau,
            NodeKind::Agent,
            1,
        )?;
        let v = e.output;
        (e, v)
    } else {
        let x_f = tape.constant(prelim.modes.scale(scale));
        let groups: Vec<_> = batch.groups.iter().map(|g| g.start * MODES..g.end * MODES).collect();
        let e = encode_groups(
            tape,
            store,
            &format!("{PREFIX}.enc_f"),
            &enc,
            x_f,
            &groups,
            &mut sampling.noise,
            sampling.tau,
            NodeKind::AgentBehavior,
            MODES,
        )?;
        let probs = tape.constant(prelim.probs.clone());
        let v = giraffe::fuse(tape, e.output, probs)?;
        (e, v)
    };

    let (v_p, post, k) = if cfg.variant == Variant::NoPdl {
        let v_p = tape.concat(&[v_f, v_t], 1)?;
        (v_p, None, 1)
    } else {
        let k = sampling.k.max(1);
        let post = posterior(tape, store, &format!("{PREFIX}.post"), &cfg.generator, v_f, v_t)?;
        let z = match sampling.latent {
            LatentSource::Posterior => sample_latent(tape, &post, k, sampling.rng)?,
            LatentSource::Prior => {
                let z = sample_prior(rows, cfg.generator.dz, k, cfg.weights.prior_scale, sampling.rng);
                tape.constant(z)
            }
        };
        let v_t_rep = tape.gather_rows(v_t, &repeat_rows(rows, k))?;
        let v_p = tape.concat(&[z, v_t_rep], 1)?;
        (v_p, Some(post), k)
    };

    let inputs = GeneratorInputs {
        history: batch.history.clone(),
        cv_future: batch.cv_future(),
        cv_past: batch.cv_past(),
    };
    let g = generate(tape, store, &format!("{PREFIX}.gen"), &cfg.generator, v_p, &inputs)?;
    Ok(RhinoOutput {
        future: g.future,
        past: g.past,
        posterior: post,
        k,
        v_t,
        v_f,
        enc_t,
        enc_f,
    })
}

/// Generation loss of a forward pass against the batch's ground truth.
pub fn batch_loss(tape: &mut Tape, cfg: &RhinoConfig, out: &RhinoOutput, batch: &Minibatch) -> Result<RhinoLoss> {
    rhino_loss(
        tape,
        out.future,
        out.past,
        out.posterior.as_ref(),
        &batch.future,
        &batch.past_positions(),
        &batch.row_groups(),
        &cfg.weights,
    )
}

/// Splits `[K·R × W]` sample-major rows into `K` arrays of `[R × W]`.
pub fn split_samples(rows: &DenseArray, r: usize) -> Vec<DenseArray> {
    let w = rows.shape()[1];
    let k = rows.shape()[0] / r.max(1);
    (0..k)
        .map(|s| DenseArray::from_fn(&[r, w], |ix| rows.get(&[s * r + ix[0], ix[1]])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn no_hg_differs_only_in_scales() {
        let full = RhinoConfig::default();
        let no_hg = full.with_variant(Variant::NoHg);
        let (a, b) = (full.effective_encoder(), no_hg.effective_encoder());
        assert!(b.scales.is_empty());
        assert_eq!(
            EncoderConfig {
                scales: a.scales.clone(),
                ..b
            },
            a
        );
    }
}
