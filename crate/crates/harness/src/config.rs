//! Flat `key = value` configuration shared by every CLI command.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use rhino_core::encoder::EncoderConfig;
use rhino_core::generator::{GeneratorConfig, LossWeights};
use rhino_core::giraffe::{DgcnConfig, GiraffeConfig};
use rhino_core::rhino::{RhinoConfig, Variant};
use rhino_core::selection::SelectionMode;
use rhino_kernel::Activation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub t: usize,
    pub f: usize,
    /// Width of every MLP, DGCN layer and GRU unless overridden below.
    pub hidden: usize,
    pub d_embed: Option<usize>,
    pub gru_hidden: Option<usize>,
    pub dz: usize,
    pub cheb_order: usize,
    pub layers: usize,
    pub slots: usize,
    pub lr: f64,
    /// Learning-rate and temperature decay factor per epoch.
    pub decay: f64,
    /// Optimizer steps per epoch.
    pub epoch_steps: usize,
    pub clip: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub prior_scale: f64,
    pub scales: Vec<usize>,
    pub categories: usize,
    pub passes: usize,
    pub selection: SelectionMode,
    pub tau: f64,
    pub tau_min: f64,
    pub k_samples: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub input_scale: f64,
    pub out_scale: f64,
    pub lateral_threshold: f64,
    pub activation: Activation,
    pub per_mode_supervision: bool,
    pub variant: Variant,
    pub train_fraction: f64,
    /// Seeds the train/test shuffle, kept apart from `seed` so that changing
    /// the model seed never moves scenarios across the split.
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            t: 30,
            f: 50,
            hidden: 128,
            d_embed: None,
            gru_hidden: None,
            dz: 32,
            cheb_order: 2,
            layers: 2,
            slots: 2,
            lr: 1e-3,
            decay: 0.6,
            epoch_steps: 1000,
            clip: 10.0,
            alpha: 1.0,
            beta: 0.8,
            lambda: 0.5,
            prior_scale: 0.5,
            scales: vec![3, 5],
            categories: 4,
            passes: 2,
            selection: SelectionMode::Auto,
            tau: 1.0,
            tau_min: 0.1,
            k_samples: 10,
            steps: 2000,
            batch_size: 16,
            seed: 0,
            input_scale: 0.1,
            out_scale: 1.0,
            lateral_threshold: 1.5,
            activation: Activation::Relu,
            per_mode_supervision: false,
            variant: Variant::Full,
            train_fraction: 0.7,
            split_seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("cannot parse `{value}` for key `{key}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl Settings {
    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "T" | "t" => self.t = parse(key, v)?,
            "F" | "f" => self.f = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "d_embed" => self.d_embed = Some(parse(key, v)?),
            "gru_hidden" => self.gru_hidden = Some(parse(key, v)?),
            "dz" => self.dz = parse(key, v)?,
            "cheb_order" => self.cheb_order = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "slots" => self.slots = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "decay" => self.decay = parse(key, v)?,
            "epoch_steps" => self.epoch_steps = parse(key, v)?,
            "clip" => self.clip = parse(key, v)?,
            "alpha" => self.alpha = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "prior_scale" => self.prior_scale = parse(key, v)?,
            "scales" => self.scales = parse_list(key, v)?,
            "categories" => self.categories = parse(key, v)?,
            "passes" => self.passes = parse(key, v)?,
            "selection" => self.selection = v.parse().map_err(|e| HarnessError::Config(format!("{e}")))?,
            "tau" => self.tau = parse(key, v)?,
            "tau_min" => self.tau_min = parse(key, v)?,
            "k_samples" => self.k_samples = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "input_scale" => self.input_scale = parse(key, v)?,
            "out_scale" => self.out_scale = parse(key, v)?,
            "lateral_threshold" => self.lateral_threshold = parse(key, v)?,
            "activation" => self.activation = v.parse().map_err(|e| HarnessError::Config(format!("{e}")))?,
            "per_mode_supervision" => self.per_mode_supervision = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            other => return Err(HarnessError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Renders the settings back into the flat format.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        let scales: Vec<String> = self.scales.iter().map(|s| s.to_string()).collect();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("T", self.t.to_string());
        kv("F", self.f.to_string());
        kv("hidden", self.hidden.to_string());
        if let Some(d) = self.d_embed {
            kv("d_embed", d.to_string());
        }
        if let Some(g) = self.gru_hidden {
            kv("gru_hidden", g.to_string());
        }
        kv("dz", self.dz.to_string());
        kv("cheb_order", self.cheb_order.to_string());
        kv("layers", self.layers.to_string());
        kv("slots", self.slots.to_string());
        kv("lr", self.lr.to_string());
        kv("decay", self.decay.to_string());
        kv("epoch_steps", self.epoch_steps.to_string());
        kv("clip", self.clip.to_string());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("lambda", self.lambda.to_string());
        kv("prior_scale", self.prior_scale.to_string());
        kv("scales", scales.join(","));
        kv("categories", self.categories.to_string());
        kv("passes", self.passes.to_string());
        kv("selection", self.selection.to_string());
        kv("tau", self.tau.to_string());
        kv("tau_min", self.tau_min.to_string());
        kv("k_samples", self.k_samples.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("input_scale", self.input_scale.to_string());
        kv("out_scale", self.out_scale.to_string());
        kv("lateral_threshold", self.lateral_threshold.to_string());
        kv("activation", self.activation.to_string());
        kv("per_mode_supervision", self.per_mode_supervision.to_string());
        kv("variant", self.variant.to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("split_seed", self.split_seed.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.decay > 0.0 && self.decay <= 1.0) || self.epoch_steps == 0 {
            return Err(HarnessError::Config("lr must be > 0, decay in (0, 1], epoch_steps > 0".into()));
        }
        if !(self.tau > 0.0) || !(self.tau_min > 0.0) {
            return Err(HarnessError::Config("tau and tau_min must be > 0".into()));
        }
        if self.batch_size == 0 || !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(HarnessError::Config("batch_size > 0 and train_fraction in (0, 1) required".into()));
        }
        self.giraffe().validate()?;
        self.rhino().validate()?;
        Ok(())
    }

    pub fn giraffe(&self) -> GiraffeConfig {
        GiraffeConfig {
            t: self.t,
            f: self.f,
            dgcn: DgcnConfig {
                cheb_order: self.cheb_order,
                layers: self.layers,
                hidden: self.hidden,
            },
            intent_hidden: self.hidden,
            dec_hidden: self.gru_hidden.unwrap_or(self.hidden),
            slots: self.slots,
            input_scale: self.input_scale,
            out_scale: self.out_scale,
            lateral_threshold: self.lateral_threshold,
            per_mode_supervision: self.per_mode_supervision,
            activation: self.activation,
        }
    }

    pub fn rhino(&self) -> RhinoConfig {
        RhinoConfig {
            encoder: EncoderConfig {
                scales: self.scales.clone(),
                d_embed: self.d_embed.unwrap_or(self.hidden),
                hidden: self.hidden,
                categories: self.categories,
                passes: self.passes,
                selection: self.selection,
                activation: self.activation,
            },
            generator: GeneratorConfig {
                t: self.t,
                f: self.f,
                dz: self.dz,
                hidden: self.hidden,
                gru_hidden: self.gru_hidden.unwrap_or(self.hidden),
                input_scale: self.input_scale,
                out_scale: self.out_scale,
                activation: self.activation,
            },
            weights: LossWeights {
                alpha: self.alpha,
                beta: self.beta,
                lambda_recon: self.lambda,
                prior_scale: self.prior_scale,
                k_samples: self.k_samples,
            },
            variant: self.variant,
        }
    }

    /// Temperature after `step` optimizer steps.
    pub fn tau_at(&self, step: usize) -> f64 {
        (self.tau * self.decay.powi((step / self.epoch_steps) as i32)).max(self.tau_min)
    }

    /// Short content hash of the settings.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_flat().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_text_round_trips() {
        let text = "# desk\nT = 30\nhidden=16\nscales = 2,3\nvariant = no_hg\nselection = greedy\n";
        let s = Settings::parse_str(text).unwrap();
        assert_eq!(s.hidden, 16);
        assert_eq!(s.scales, vec![2, 3]);
        assert_eq!(s.variant, Variant::NoHg);
        assert_eq!(Settings::parse_str(&s.to_flat()).unwrap(), s);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(Settings::parse_str("widht = 3").is_err());
        assert!(Settings::parse_str("scales = 3,2").is_err());
    }

    #[test]
    fn tau_decays_per_epoch_to_floor() {
        let s = Settings {
            epoch_steps: 10,
            ..Settings::default()
        };
        assert_eq!(s.tau_at(9), 1.0);
        assert!((s.tau_at(10) - 0.6).abs() < 1e-12);
        assert_eq!(s.tau_at(1000), 0.1);
    }
}
