//! Graph-based multi-modal predictor.
//!
//! History → two diffusion-graph-convolution stacks (historical and
//! future-guided embeddings) → lateral intention classifier → intention-gated
//! GRU decoder emitting one trajectory per mode and agent. Every predicted
//! trajectory is a learned residual on top of a constant-velocity
//! continuation of the agent's last observed state.

use rhino_kernel::nn::{gru_unroll, mlp_forward, Activation};
use rhino_kernel::{DenseArray, Init, KernelError, ParameterStore, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::MODES;
use crate::scenario::{Minibatch, FUTURE_FRAMES, HISTORY_FRAMES, STATE_CHANNELS};

pub const PREFIX: &str = "giraffe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgcnConfig {
    /// Chebyshev order `K`.
    pub cheb_order: usize,
    pub layers: usize,
    pub hidden: usize,
}

impl DgcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cheb_order == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(CoreError::Config(format!("invalid DGCN config {self:?}")));
        }
        Ok(())
    }
}

/// `T_1..T_K` of the forward and backward transition matrices.
#[derive(Debug, Clone)]
pub struct DiffusionSupports {
    pub forward: Vec<DenseArray>,
    pub backward: Vec<DenseArray>,
}

fn row_normalize(a: &DenseArray, what: &str) -> Result<DenseArray> {
    let n = a.shape()[0];
    let mut out = a.clone();
    for i in 0..n {
        let s: f64 = a.row(i).iter().sum();
        if !(s > 0.0) {
            return Err(KernelError::Normalization(format!("{what} row {i} sums to {s}")).into());
        }
        for v in &mut out.data_mut()[i * n..(i + 1) * n] {
            *v /= s;
        }
    }
    Ok(out)
}

/// `T_0 = I`, `T_1 = X`, `T_k = 2X·T_{k-1} - T_{k-2}`; returns `T_1..T_K`.
pub fn chebyshev(x: &DenseArray, order: usize) -> Result<Vec<DenseArray>> {
    let n = x.shape()[0];
    let mut out: Vec<DenseArray> = Vec::with_capacity(order);
    let mut prev = DenseArray::identity(n);
    let mut cur = x.clone();
    for _ in 0..order {
        out.push(cur.clone());
        let next = x.matmul(&cur)?.scale(2.0).zip_map(&prev, |a, b| a - b)?;
        prev = std::mem::replace(&mut cur, next);
    }
    Ok(out)
}

impl DiffusionSupports {
    pub fn new(adjacency: &DenseArray, order: usize) -> Result<Self> {
        let s = adjacency.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(CoreError::Dimension(format!("adjacency must be square, got {s:?}")));
        }
        let fwd = row_normalize(adjacency, "adjacency")?;
        let bwd = row_normalize(&adjacency.transpose(), "transposed adjacency")?;
        Ok(DiffusionSupports {
            forward: chebyshev(&fwd, order)?,
            backward: chebyshev(&bwd, order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.forward.len()
    }
}

/// One diffusion convolution: `Σ_k T_k(Ā_f)·h·Θ_f^k + T_k(Ā_b)·h·Θ_b^k`.
pub fn dgcn_layer_with(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    h: Var,
    supports: &DiffusionSupports,
    d_out: usize,
) -> Result<Var> {
    let d_in = *tape
        .shape(h)
        .last()
        .ok_or_else(|| CoreError::Dimension(format!("{prefix}: scalar input")))?;
    let mut acc: Option<Var> = None;
    for k in 0..supports.order() {
        for (dir, t_k) in [("f", &supports.forward[k]), ("b", &supports.backward[k])] {
            let theta = tape.param(store, &format!("{prefix}.theta_{dir}{}", k + 1), &[d_in, d_out], Init::Glorot)?;
            let t = tape.constant(t_k.clone());
            let th = tape.matmul(t, h)?;
            let term = tape.matmul(th, theta)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
    }
    acc.ok_or_else(|| CoreError::Config("Chebyshev order must be at least 1".into()))
}

/// Single layer computed from a raw adjacency matrix.
pub fn dgcn_layer(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    h: Var,
    adjacency: &DenseArray,
    cfg: &DgcnConfig,
) -> Result<Var> {
    let supports = DiffusionSupports::new(adjacency, cfg.cheb_order)?;
    dgcn_layer_with(tape, store, prefix, h, &supports, cfg.hidden)
}

/// `cfg.layers` diffusion layers with relu between them.
pub fn dgcn_stack(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    x: Var,
    supports: &DiffusionSupports,
    cfg: &DgcnConfig,
) -> Result<Var> {
    let mut h = x;
    for l in 0..cfg.layers {
        if l > 0 {
            h = tape.relu(h);
        }
        h = dgcn_layer_with(tape, store, &format!("{prefix}.l{l}"), h, supports, cfg.hidden)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GiraffeConfig {
    pub t: usize,
    pub f: usize,
    pub dgcn: DgcnConfig,
    /// Width of the two intention MLP layers.
    pub intent_hidden: usize,
    /// GRU state size and width of the decoder MLPs.
    pub dec_hidden: usize,
    /// Number of equal-width chunks of `[H̃_T, H̃_F]` mixed by `W_hid`.
    pub slots: usize,
    /// Multiplier applied to raw meters before they enter a network.
    pub input_scale: f64,
    /// Multiplier applied to the decoder's residual output.
    pub out_scale: f64,
    pub lateral_threshold: f64,
    /// Supervise the labeled mode's trajectory instead of the fused one.
    pub per_mode_supervision: bool,
    pub activation: Activation,
}

impl Default for GiraffeConfig {
    fn default() -> Self {
        GiraffeConfig {
            t: HISTORY_FRAMES,
            f: FUTURE_FRAMES,
            dgcn: DgcnConfig {
                cheb_order: 2,
                layers: 2,
                hidden: 128,
            },
            intent_hidden: 128,
            dec_hidden: 128,
            slots: 2,
            input_scale: 0.1,
            out_scale: 1.0,
            lateral_threshold: 1.5,
            per_mode_supervision: false,
            activation: Activation::Relu,
        }
    }
}

impl GiraffeConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgcn.validate()?;
        if self.slots == 0 || (2 * self.dgcn.hidden) % self.slots != 0 {
            return Err(CoreError::Config(format!(
                "slots={} must divide the embedding width {}",
                self.slots,
                2 * self.dgcn.hidden
            )));
        }
        if self.t == 0 || self.f == 0 || self.intent_hidden == 0 || self.dec_hidden == 0 {
            return Err(CoreError::Config("horizons and widths must be positive".into()));
        }
        Ok(())
    }

    /// Width of `H_dec`.
    pub fn slot_width(&self) -> usize {
        2 * self.dgcn.hidden / self.slots
    }
}

/// Everything one forward pass produces, as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct GiraffeOutput {
    /// `[R × d]` historical embedding.
    pub h_t: Var,
    /// `[R × d]` future-guided embedding.
    pub h_f: Var,
    /// `[R × 3]` intention scores before the softmax.
    pub logits: Var,
    /// `[R × 3]`.
    pub probs: Var,
    /// `[R·3 × F·2]`, row `i·3 + m`.
    pub modes: Var,
    /// `[R·3 × F·3]`: σx, σy, ρ per frame.
    pub spread: Var,
    /// `[R × F·2]` probability-weighted mix of the mode trajectories.
    pub fused: Var,
}

/// `[H̃_T, H̃_F]` for a flattened, scaled history `x` (`[R × T·4]`).
pub fn encode_interactions(
    tape: &mut Tape,
    store: &mut ParameterStore,
    cfg: &GiraffeConfig,
    x: Var,
    supports: &DiffusionSupports,
) -> Result<(Var, Var)> {
    let h_t = dgcn_stack(tape, store, &format!("{PREFIX}.dgcn_h"), x, supports, &cfg.dgcn)?;
    let h_f = dgcn_stack(tape, store, &format!("{PREFIX}.dgcn_f"), x, supports, &cfg.dgcn)?;
    Ok((h_t, h_f))
}

/// Returns `(logits, probs)` for an `[R × 2d]` embedding.
pub fn predict_intentions(tape: &mut Tape, store: &mut ParameterStore, cfg: &GiraffeConfig, h: Var) -> Result<(Var, Var)> {
    let w = 2 * cfg.dgcn.hidden;
    let ih = cfg.intent_hidden;
    let ip = mlp_forward(tape, store, &format!("{PREFIX}.ip"), h, &[w, ih, ih], cfg.activation)?;
    let ip = cfg.activation.apply(tape, ip);
    let logits = mlp_forward(tape, store, &format!("{PREFIX}.lat"), ip, &[ih, MODES], Activation::Identity)?;
    let probs = tape.softmax(logits, 1)?;
    Ok((logits, probs))
}

/// `W_hid = softmax(M̂·W_map)` over slots; `H_dec = Σ_s W_hid[:, s] · chunk_s(H̃)`.
pub fn mix_slots(tape: &mut Tape, store: &mut ParameterStore, cfg: &GiraffeConfig, h: Var, probs: Var) -> Result<Var> {
    let w_map = tape.param(store, &format!("{PREFIX}.w_map"), &[MODES, cfg.slots], Init::Glorot)?;
    let scores = tape.matmul(probs, w_map)?;
    let w_hid = tape.softmax(scores, 1)?;
    let cw = cfg.slot_width();
    let mut acc: Option<Var> = None;
    for s in 0..cfg.slots {
        let chunk = tape.slice(h, 1, s * cw, cw)?;
        let ws = tape.slice(w_hid, 1, s, 1)?;
        let term = tape.mul(chunk, ws)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| CoreError::Config("at least one slot is required".into()))
}

/// Per-mode decoding. `anchor` is the `[R × F·2]` constant-velocity
/// continuation; returns `(modes [R·3 × F·2], spread [R·3 × F·3])`.
pub fn decode_multimodal(
    tape: &mut Tape,
    store: &mut ParameterStore,
    cfg: &GiraffeConfig,
    h: Var,
    probs: Var,
    anchor: &DenseArray,
) -> Result<(Var, Var)> {
    let rows = tape.shape(h)[0];
    let f = cfg.f;
    let dh = cfg.dec_hidden;
    let h_dec = mix_slots(tape, store, cfg, h, probs)?;
    let rep: Vec<usize> = (0..rows).flat_map(|i| [i; MODES]).collect();
    let h_rep = tape.gather_rows(h_dec, &rep)?;
    let p_rep = tape.gather_rows(probs, &rep)?;
    let onehot = tape.constant(DenseArray::from_fn(&[rows * MODES, MODES], |ix| {
        if ix[0] % MODES == ix[1] {
            1.0
        } else {
            0.0
        }
    }));
    let inp = tape.concat(&[h_rep, p_rep, onehot], 1)?;
    let width = cfg.slot_width() + 2 * MODES;
    let e = mlp_forward(tape, store, &format!("{PREFIX}.dec_in"), inp, &[width, dh, dh], cfg.activation)?;
    let e = cfg.activation.apply(tape, e);
    let states = gru_unroll(tape, store, &format!("{PREFIX}.dec_gru"), e, f, dh)?;
    let flat = tape.reshape(states, &[f * rows * MODES, dh])?;
    let out = mlp_forward(tape, store, &format!("{PREFIX}.dec_out"), flat, &[dh, dh, 5], cfg.activation)?;
    let out = tape.reshape(out, &[f, rows * MODES, 5])?;
    let out = tape.permute(out, &[1, 0, 2])?;
    let mu = tape.slice(out, 2, 0, 2)?;
    let mu = tape.reshape(mu, &[rows * MODES, f * 2])?;
    let mu = tape.scale(mu, cfg.out_scale);
    let anchor_rows: Vec<usize> = rep.clone();
    let anchor = tape.constant(anchor.clone());
    let anchor = tape.gather_rows(anchor, &anchor_rows)?;
    let modes = tape.add(anchor, mu)?;
    let sig = tape.slice(out, 2, 2, 2)?;
    let sig = tape.softplus(sig);
    let sig = tape.add_scalar(sig, 1e-6);
    let rho = tape.slice(out, 2, 4, 1)?;
    let rho = tape.tanh(rho);
    let spread = tape.concat(&[sig, rho], 2)?;
    let spread = tape.reshape(spread, &[rows * MODES, f * 3])?;
    Ok((modes, spread))
}

/// `Σ_m probs[i, m] · modes[i·3 + m]`.
pub fn fuse(tape: &mut Tape, modes: Var, probs: Var) -> Result<Var> {
    let rows = tape.shape(probs)[0];
    let width = tape.shape(modes)[1];
    let m3 = tape.reshape(modes, &[rows, MODES, width])?;
    let p3 = tape.reshape(probs, &[rows, MODES, 1])?;
    let w = tape.mul(m3, p3)?;
    Ok(tape.sum_axis(w, 1)?)
}

/// Full forward pass over a minibatch.
pub fn forward(tape: &mut Tape, store: &mut ParameterStore, cfg: &GiraffeConfig, batch: &Minibatch) -> Result<GiraffeOutput> {
    let supports = DiffusionSupports::new(&batch.adjacency(), cfg.dgcn.cheb_order)?;
    let x = tape.constant(batch.history_flat(cfg.input_scale));
    let (h_t, h_f) = encode_interactions(tape, store, cfg, x, &supports)?;
    let h = tape.concat(&[h_t, h_f], 1)?;
    let (logits, probs) = predict_intentions(tape, store, cfg, h)?;
    let (modes, spread) = decode_multimodal(tape, store, cfg, h, probs, &batch.cv_future())?;
    let fused = fuse(tape, modes, probs)?;
    Ok(GiraffeOutput {
        h_t,
        h_f,
        logits,
        probs,
        modes,
        spread,
        fused,
    })
}

/// `H_F` target: a network with the historical encoder's architecture and its
/// own parameters applied to the true future positions. Never trained.
pub fn hf_target(store: &mut ParameterStore, cfg: &GiraffeConfig, batch: &Minibatch) -> Result<DenseArray> {
    let supports = DiffusionSupports::new(&batch.adjacency(), cfg.dgcn.cheb_order)?;
    let mut tape = Tape::new();
    let x = tape.constant(batch.future.scale(cfg.input_scale));
    let h = dgcn_stack(&mut tape, store, &format!("{PREFIX}.dgcn_target"), x, &supports, &cfg.dgcn)?;
    Ok(tape.value(h).clone())
}

/// Squared Euclidean distance averaged over points, for `[R × K·2]` layouts
/// whose columns alternate x, y.
pub fn point_mse(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let d = tape.sub(pred, truth)?;
    let d2 = tape.square(d);
    let points = (tape.shape(d2).iter().product::<usize>() / 2).max(1) as f64;
    let s = tape.sum(d2);
    Ok(tape.scale(s, 1.0 / points))
}

#[derive(Debug, Clone, Copy)]
pub struct GiraffeLoss {
    pub total: Var,
    pub pred: f64,
    pub int: f64,
    pub fut: f64,
}

/// `L_pred + L_int + L_fut` with mean reductions: `L_pred` averages squared
/// point distances, `L_int` averages the per-agent negative log-likelihood,
/// `L_fut` averages squared embedding differences.
#[allow(clippy::too_many_arguments)]
pub fn giraffe_loss(
    tape: &mut Tape,
    trajectory: Var,
    log_probs: Var,
    truth_future: &DenseArray,
    truth_onehot: &DenseArray,
    hf_pred: Var,
    hf_target: &DenseArray,
) -> Result<GiraffeLoss> {
    let truth = tape.constant(truth_future.clone());
    let pred = point_mse(tape, trajectory, truth)?;
    let onehot = tape.constant(truth_onehot.clone());
    let rows = truth_onehot.shape()[0].max(1) as f64;
    let ll = tape.mul(log_probs, onehot)?;
    let ll = tape.sum(ll);
    let int = tape.scale(ll, -1.0 / rows);
    let target = tape.constant(hf_target.clone());
    let diff = tape.sub(hf_pred, target)?;
    let diff = tape.square(diff);
    let fut = tape.mean(diff);
    let total = tape.add(pred, int)?;
    let total = tape.add(total, fut)?;
    Ok(GiraffeLoss {
        total,
        pred: tape.value(pred).item(),
        int: tape.value(int).item(),
        fut: tape.value(fut).item(),
    })
}

/// Loss of a forward pass against the batch's ground truth.
pub fn batch_loss(
    tape: &mut Tape,
    cfg: &GiraffeConfig,
    out: &GiraffeOutput,
    batch: &Minibatch,
    hf: &DenseArray,
) -> Result<GiraffeLoss> {
    let trajectory = if cfg.per_mode_supervision {
        let idx: Vec<usize> = batch.labels.iter().enumerate().map(|(i, m)| i * MODES + m).collect();
        tape.gather_rows(out.modes, &idx)?
    } else {
        out.fused
    };
    let log_probs = tape.log_softmax(out.logits, 1)?;
    giraffe_loss(tape, trajectory, log_probs, &batch.future, &batch.label_onehot(), out.h_f, hf)
}

/// Reorders `[R·3 × F·2]` rows into `[F × R × 3 × 2]`.
pub fn modes_to_tensor(modes: &DenseArray, f: usize) -> DenseArray {
    let rows = modes.shape()[0] / MODES;
    DenseArray::from_fn(&[f, rows, MODES, 2], |ix| modes.get(&[ix[1] * MODES + ix[2], ix[0] * 2 + ix[3]]))
}

/// Input width of the historical encoder.
pub fn history_width(cfg: &GiraffeConfig) -> usize {
    cfg.t * STATE_CHANNELS
}
