//! Variant comparisons: each variant trains its own generator on the same
//! frozen forecaster, split and seeds, then reports min-of-K RMSE.

use rhino_core::rhino::Variant;
use rhino_core::scenario::ScenarioBatch;
use rhino_kernel::ParameterStore;

use crate::config::Settings;
use crate::error::Result;
use crate::eval::{evaluate_rhino, EvalReport};
use crate::train::{train_rhino, StepLog};

/// Settings for `variant`, everything else unchanged.
pub fn variant_settings(settings: &Settings, variant: Variant) -> Settings {
    Settings {
        variant,
        ..settings.clone()
    }
}

/// Trains and evaluates one variant.
pub fn run_ablation(
    settings: &Settings,
    variant: Variant,
    giraffe_store: &ParameterStore,
    train: &[&ScenarioBatch],
    test: &[&ScenarioBatch],
    eval_seed: u64,
    log: impl FnMut(&StepLog),
) -> Result<(EvalReport, ParameterStore)> {
    let s = variant_settings(settings, variant);
    let mut store = train_rhino(&s, train, giraffe_store.clone(), log)?;
    let report = evaluate_rhino(&mut store, &s, test, s.k_samples, eval_seed)?;
    Ok((report, store))
}
