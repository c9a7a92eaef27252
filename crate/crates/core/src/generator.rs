//! Posterior learner, residual motion generator and the generation loss.
//!
//! Rows of every multi-sample output are sample-major: sample `k` of agent
//! row `r` sits at row `k·R + r`.

use rhino_kernel::nn::{gru_forward, kl_diag_gaussians, mlp_forward, Activation};
use rhino_kernel::{DenseArray, ParameterStore, SeededRng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::giraffe::point_mse;
use crate::scenario::{FUTURE_FRAMES, HISTORY_FRAMES, STATE_CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub t: usize,
    pub f: usize,
    pub dz: usize,
    /// Width of the posterior MLPs and output heads.
    pub hidden: usize,
    pub gru_hidden: usize,
    pub input_scale: f64,
    pub out_scale: f64,
    pub activation: Activation,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            t: HISTORY_FRAMES,
            f: FUTURE_FRAMES,
            dz: 32,
            hidden: 128,
            gru_hidden: 128,
            input_scale: 0.1,
            out_scale: 1.0,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_recon: f64,
    /// Variance of the isotropic Gaussian prior.
    pub prior_scale: f64,
    pub k_samples: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.8,
            lambda_recon: 0.5,
            prior_scale: 0.5,
            k_samples: 10,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha, self.beta, self.lambda_recon, self.prior_scale]
            .iter()
            .all(|x| x.is_finite() && *x > 0.0);
        if !ok || self.k_samples == 0 {
            return Err(CoreError::Config(format!("loss weights must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PosteriorParams {
    /// `[R × dz]`.
    pub mu: Var,
    /// `[R × dz]`, strictly positive.
    pub sigma: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentSource {
    Posterior,
    Prior,
}

/// `μ = F_μ([V_F, V_T])`, `σ = softplus(F_σ([V_F, V_T])) + 1e-6`.
pub fn posterior(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &GeneratorConfig,
    v_future: Var,
    v_past: Var,
) -> Result<PosteriorParams> {
    if tape.shape(v_future) != tape.shape(v_past) {
        return Err(CoreError::Dimension(format!(
            "posterior inputs differ: {:?} vs {:?}",
            tape.shape(v_future),
            tape.shape(v_past)
        )));
    }
    let width = 2 * tape.shape(v_past)[1];
    let x = tape.concat(&[v_future, v_past], 1)?;
    let sizes = [width, cfg.hidden, cfg.dz];
    let mu = mlp_forward(tape, store, &format!("{prefix}.mu"), x, &sizes, cfg.activation)?;
    let s = mlp_forward(tape, store, &format!("{prefix}.sigma"), x, &sizes, cfg.activation)?;
    let s = tape.softplus(s);
    let sigma = tape.add_scalar(s, 1e-6);
    Ok(PosteriorParams { mu, sigma })
}

/// `k` reparameterized draws `μ + σ ⊙ ε`, stacked sample-major.
pub fn sample_latent(tape: &mut Tape, p: &PosteriorParams, k: usize, rng: &mut SeededRng) -> Result<Var> {
    let rows = tape.shape(p.mu)[0];
    let dz = tape.shape(p.mu)[1];
    let idx: Vec<usize> = (0..k).flat_map(|_| 0..rows).collect();
    let mu = tape.gather_rows(p.mu, &idx)?;
    let sigma = tape.gather_rows(p.sigma, &idx)?;
    let eps = tape.constant(rng.normal_array(&[k * rows, dz]));
    let noise = tape.mul(sigma, eps)?;
    Ok(tape.add(mu, noise)?)
}

/// `k·rows` draws from `N(0, prior_scale·I)`.
pub fn sample_prior(rows: usize, dz: usize, k: usize, prior_scale: f64, rng: &mut SeededRng) -> DenseArray {
    rng.normal_array(&[k * rows, dz]).scale(prior_scale.sqrt())
}

/// Row indices repeating `rows` rows `k` times, sample-major.
pub fn repeat_rows(rows: usize, k: usize) -> Vec<usize> {
    (0..k).flat_map(|_| 0..rows).collect()
}

/// Inputs of the generator that do not depend on the latent code.
#[derive(Debug, Clone)]
pub struct GeneratorInputs {
    /// `[T × R × 4]`.
    pub history: DenseArray,
    /// `[R × F·2]`.
    pub cv_future: DenseArray,
    /// `[R × T·2]`.
    pub cv_past: DenseArray,
}

#[derive(Debug, Clone, Copy)]
pub struct Generated {
    /// `[K·R × F·2]`.
    pub future: Var,
    /// `[K·R × T·2]`.
    pub past: Var,
    pub block1_future: Var,
    pub block1_past: Var,
}

fn heads(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &GeneratorConfig,
    v_p: Var,
    h_last: Var,
) -> Result<(Var, Var)> {
    let x = tape.concat(&[v_p, h_last], 1)?;
    let w = tape.shape(x)[1];
    let fut = mlp_forward(tape, store, &format!("{prefix}.fut"), x, &[w, cfg.hidden, cfg.f * 2], cfg.activation)?;
    let past = mlp_forward(tape, store, &format!("{prefix}.past"), x, &[w, cfg.hidden, cfg.t * 2], cfg.activation)?;
    Ok((tape.scale(fut, cfg.out_scale), tape.scale(past, cfg.out_scale)))
}

fn last_state(tape: &mut Tape, states: Var) -> Result<Var> {
    let steps = tape.shape(states)[0];
    Ok(tape.index_axis0(states, steps - 1)?)
}

/// Two residual blocks on `V^p` (`[K·R × D']`). Block 1 reads the scaled
/// history and adds constant-velocity anchors; block 2 reads the residual
/// between observed positions and block 1's past reconstruction.
pub fn generate(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &GeneratorConfig,
    v_p: Var,
    inputs: &GeneratorInputs,
) -> Result<Generated> {
    let hs = inputs.history.shape();
    if hs.len() != 3 || hs[0] != cfg.t || hs[2] != STATE_CHANNELS {
        return Err(CoreError::Dimension(format!("generator history must be [{}, R, 4], got {hs:?}", cfg.t)));
    }
    let rows = hs[1];
    let kr = tape.shape(v_p)[0];
    if rows == 0 || kr % rows != 0 {
        return Err(CoreError::Dimension(format!("{kr} latent rows are not a multiple of {rows} agents")));
    }
    let rep = repeat_rows(rows, kr / rows);

    // Block 1: the history encoding is shared by all samples.
    let x_t = tape.constant(inputs.history.scale(cfg.input_scale));
    let states = gru_forward(tape, store, &format!("{prefix}.res1.gru"), x_t, cfg.gru_hidden)?;
    let h1 = last_state(tape, states)?;
    let h1 = tape.gather_rows(h1, &rep)?;
    let (f1, p1) = heads(tape, store, &format!("{prefix}.res1"), cfg, v_p, h1)?;
    let cvf = tape.constant(inputs.cv_future.clone());
    let cvf = tape.gather_rows(cvf, &rep)?;
    let cvp = tape.constant(inputs.cv_past.clone());
    let cvp = tape.gather_rows(cvp, &rep)?;
    let block1_future = tape.add(cvf, f1)?;
    let block1_past = tape.add(cvp, p1)?;

    // Block 2 on X_T − X̂_{T,1}.
    let observed = DenseArray::from_fn(&[cfg.t, rows, 2], |ix| inputs.history.get(&[ix[0], ix[1], ix[2]]));
    let observed = tape.constant(observed);
    let observed = tape.permute(observed, &[1, 0, 2])?;
    let observed = tape.reshape(observed, &[rows, cfg.t * 2])?;
    let observed = tape.gather_rows(observed, &rep)?;
    let resid = tape.sub(observed, block1_past)?;
    let resid = tape.reshape(resid, &[kr, cfg.t, 2])?;
    let resid = tape.permute(resid, &[1, 0, 2])?;
    let states = gru_forward(tape, store, &format!("{prefix}.res2.gru"), resid, cfg.gru_hidden)?;
    let h2 = last_state(tape, states)?;
    let (f2, p2) = heads(tape, store, &format!("{prefix}.res2"), cfg, v_p, h2)?;
    let future = tape.add(block1_future, f2)?;
    let past = tape.add(block1_past, p2)?;
    Ok(Generated {
        future,
        past,
        block1_future,
        block1_past,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RhinoLoss {
    pub total: Var,
    pub elbo: f64,
    pub recon: f64,
    pub var: f64,
    pub kl: f64,
}

/// `L_elbo + L_recon + L_var`.
///
/// * `L_elbo = α·d(sample 0) + β·KL / (R·dz)` against `N(0, prior_scale·I)`;
///   the KL term is skipped when `posterior` is `None`.
/// * `L_recon = λ·d(past of sample 0)`.
/// * `L_var = Σ_scenarios min_k SSE_k / (R·F)`, the best sample per scenario.
///
/// `d` is the squared point distance averaged over points.
#[allow(clippy::too_many_arguments)]
pub fn rhino_loss(
    tape: &mut Tape,
    future: Var,
    past: Var,
    posterior: Option<&PosteriorParams>,
    truth_future: &DenseArray,
    truth_past: &DenseArray,
    row_groups: &[usize],
    w: &LossWeights,
) -> Result<RhinoLoss> {
    let rows = truth_future.shape()[0];
    let kr = tape.shape(future)[0];
    if rows == 0 || kr % rows != 0 || row_groups.len() != rows {
        return Err(CoreError::Dimension(format!(
            "{kr} sample rows, {rows} truth rows, {} group labels",
            row_groups.len()
        )));
    }
    let k = kr / rows;
    let n_groups = row_groups.iter().max().map_or(0, |g| g + 1);

    let truth = tape.constant(truth_future.clone());
    let first = tape.slice(future, 0, 0, rows)?;
    let rec = point_mse(tape, first, truth)?;
    let mut elbo = tape.scale(rec, w.alpha);
    let mut kl_value = 0.0;
    if let Some(p) = posterior {
        let shape = tape.shape(p.mu).to_vec();
        let mu_p = tape.constant(DenseArray::zeros(&shape));
        let sd_p = tape.constant(DenseArray::full(&shape, w.prior_scale.sqrt()));
        let kl = kl_diag_gaussians(tape, p.mu, p.sigma, mu_p, sd_p)?;
        let kl = tape.scale(kl, 1.0 / shape.iter().product::<usize>().max(1) as f64);
        kl_value = tape.value(kl).item();
        let weighted = tape.scale(kl, w.beta);
        elbo = tape.add(elbo, weighted)?;
    }

    let truth_past_v = tape.constant(truth_past.clone());
    let past0 = tape.slice(past, 0, 0, rows)?;
    let recon = point_mse(tape, past0, truth_past_v)?;
    let recon = tape.scale(recon, w.lambda_recon);

    let rep = repeat_rows(rows, k);
    let truth_rep = tape.gather_rows(truth, &rep)?;
    let d = tape.sub(future, truth_rep)?;
    let d2 = tape.square(d);
    let sse = tape.sum_axis(d2, 1)?;
    let sse = tape.reshape(sse, &[kr, 1])?;
    let seg: Vec<usize> = (0..kr).map(|i| (i / rows) * n_groups + row_groups[i % rows]).collect();
    let per = tape.segment_sum(sse, &seg, k * n_groups)?;
    let pv = tape.value(per).clone();
    let best: Vec<usize> = (0..n_groups)
        .map(|g| {
            (0..k)
                .map(|s| s * n_groups + g)
                .fold(None::<usize>, |b, i| match b {
                    Some(j) if pv.data()[j] <= pv.data()[i] => Some(j),
                    _ => Some(i),
                })
                .unwrap_or(g)
        })
        .collect();
    let chosen = tape.gather_rows(per, &best)?;
    let var = tape.sum(chosen);
    let points = (rows * tape.shape(future)[1] / 2).max(1) as f64;
    let var = tape.scale(var, 1.0 / points);

    let total = tape.add(elbo, recon)?;
    let total = tape.add(total, var)?;
    Ok(RhinoLoss {
        total,
        elbo: tape.value(elbo).item(),
        recon: tape.value(recon).item(),
        var: tape.value(var).item(),
        kl: kl_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig {
            t: 4,
            f: 3,
            dz: 2,
            hidden: 5,
            gru_hidden: 3,
            input_scale: 0.1,
            out_scale: 1.0,
            activation: Activation::Tanh,
        }
    }

    fn inputs(rows: usize, seed: u64) -> GeneratorInputs {
        let mut rng = SeededRng::new(seed);
        GeneratorInputs {
            history: rng.normal_array(&[4, rows, 4]),
            cv_future: rng.normal_array(&[rows, 6]),
            cv_past: rng.normal_array(&[rows, 8]),
        }
    }

    #[test]
    fn sigma_is_positive() {
        let c = cfg();
        let mut store = ParameterStore::new(3);
        let mut tape = Tape::new();
        let a = tape.constant(DenseArray::full(&[3, 4], -50.0));
        let b = tape.constant(DenseArray::full(&[3, 4], 50.0));
        let p = posterior(&mut tape, &mut store, "g", &c, a, b).unwrap();
        assert!(tape.value(p.sigma).data().iter().all(|&s| s > 0.0));
    }

    #[test]
    fn zero_second_block_leaves_first_block_output() {
        let c = cfg();
        let mut store = ParameterStore::new(3);
        let inp = inputs(2, 4);
        let mut tape = Tape::new();
        let v = tape.constant(SeededRng::new(1).normal_array(&[4, 3]));
        generate(&mut tape, &mut store, "g", &c, v, &inp).unwrap();
        let names: Vec<String> = store.names().filter(|n| n.starts_with("g.res2.fut") || n.starts_with("g.res2.past")).map(String::from).collect();
        for n in names {
            let shape = store.get(&n).unwrap().shape().to_vec();
            store.insert(&n, DenseArray::zeros(&shape));
        }
        let mut tape = Tape::new();
        let v = tape.constant(SeededRng::new(1).normal_array(&[4, 3]));
        let g = generate(&mut tape, &mut store, "g", &c, v, &inp).unwrap();
        assert_eq!(tape.value(g.future), tape.value(g.block1_future));
        assert_eq!(tape.value(g.past), tape.value(g.block1_past));
        assert_eq!(tape.shape(g.future), &[4, 6]);
        assert_eq!(tape.shape(g.past), &[4, 8]);
    }

    #[test]
    fn perfect_outputs_at_prior_give_zero_loss() {
        let w = LossWeights {
            k_samples: 2,
            ..LossWeights::default()
        };
        let truth_f = SeededRng::new(2).normal_array(&[3, 6]);
        let truth_p = SeededRng::new(3).normal_array(&[3, 8]);
        let mut tape = Tape::new();
        let fut = tape.constant(DenseArray::from_fn(&[6, 6], |ix| truth_f.get(&[ix[0] % 3, ix[1]])));
        let past = tape.constant(DenseArray::from_fn(&[6, 8], |ix| truth_p.get(&[ix[0] % 3, ix[1]])));
        let mu = tape.constant(DenseArray::zeros(&[3, 2]));
        let sigma = tape.constant(DenseArray::full(&[3, 2], 0.5f64.sqrt()));
        let p = PosteriorParams { mu, sigma };
        let l = rhino_loss(&mut tape, fut, past, Some(&p), &truth_f, &truth_p, &[0, 0, 1], &w).unwrap();
        assert!(tape.value(l.total).item().abs() < 1e-12);
    }
}
