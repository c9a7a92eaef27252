//! Layer-level building blocks composed from tape primitives.

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{KernelError, Result};
use crate::params::{Init, ParameterStore};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(KernelError::Parameter(format!("unknown activation `{other}`"))),
        }
    }
}

/// Multi-layer perceptron over the last axis of `input`.
///
/// `layer_sizes` lists every width including the input, so `[in, h, out]`
/// is a two-layer net. Parameters `{prefix}.w{l}` (`[in_l, out_l]`, Glorot)
/// and `{prefix}.b{l}` (zeros) are created on first use. `activation` is
/// applied after every layer except the last, which stays affine.
pub fn mlp_forward(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    input: Var,
    layer_sizes: &[usize],
    activation: Activation,
) -> Result<Var> {
    if layer_sizes.len() < 2 {
        return Err(KernelError::dim(prefix, "an MLP needs at least input and output sizes"));
    }
    let shape = tape.shape(input).to_vec();
    let last = *shape.last().unwrap_or(&1);
    if shape.is_empty() || last != layer_sizes[0] {
        return Err(KernelError::dim(
            format!("{prefix} layer 0"),
            format!("input last dimension {last} (shape {:?}) but layer expects {}", shape, layer_sizes[0]),
        ));
    }
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let mut h = tape.reshape(input, &[rows, last])?;
    let n_layers = layer_sizes.len() - 1;
    for l in 0..n_layers {
        let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
        let w = tape
            .param(store, &format!("{prefix}.w{l}"), &[fan_in, fan_out], Init::Glorot)
            .map_err(|e| relabel(e, prefix, l))?;
        let b = tape
            .param(store, &format!("{prefix}.b{l}"), &[fan_out], Init::Zeros)
            .map_err(|e| relabel(e, prefix, l))?;
        h = tape.matmul(h, w).map_err(|e| relabel(e, prefix, l))?;
        h = tape.add(h, b)?;
        if l + 1 < n_layers {
            h = activation.apply(tape, h);
        }
    }
    let mut out_shape = shape[..shape.len() - 1].to_vec();
    out_shape.push(layer_sizes[n_layers]);
    tape.reshape(h, &out_shape)
}

fn relabel(e: KernelError, prefix: &str, layer: usize) -> KernelError {
    match e {
        KernelError::Dimension { detail, .. } => KernelError::dim(format!("{prefix} layer {layer}"), detail),
        other => other,
    }
}

/// Weights of one GRU layer, gates ordered (reset, update, candidate).
///
/// ```text
/// r  = σ(x·Wi_r + bi_r + h·Wh_r + bh_r)
/// z  = σ(x·Wi_z + bi_z + h·Wh_z + bh_z)
/// n  = tanh(x·Wi_n + bi_n + r ⊙ (h·Wh_n + bh_n))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    w_in: Var,
    w_hid: Var,
    b_in: Var,
    b_hid: Var,
    hidden: usize,
}

impl GruCell {
    pub fn load(
        tape: &mut Tape,
        store: &mut ParameterStore,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(GruCell {
            w_in: tape.param(store, &format!("{prefix}.w_in"), &[input, 3 * hidden], Init::Glorot)?,
            w_hid: tape.param(store, &format!("{prefix}.w_hid"), &[hidden, 3 * hidden], Init::Glorot)?,
            b_in: tape.param(store, &format!("{prefix}.b_in"), &[3 * hidden], Init::Zeros)?,
            b_hid: tape.param(store, &format!("{prefix}.b_hid"), &[3 * hidden], Init::Zeros)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x·W_in + b_in` for a `[rows × input]` block.
    pub fn project_input(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = tape.matmul(x, self.w_in)?;
        tape.add(p, self.b_in)
    }

    /// One recurrence step from a pre-projected input `[batch × 3H]`.
    pub fn step(&self, tape: &mut Tape, x_proj: Var, h: Var) -> Result<Var> {
        let hp = tape.matmul(h, self.w_hid)?;
        let hp = tape.add(hp, self.b_hid)?;
        tape.gru_gates(x_proj, hp, h)
    }
}

/// Runs a GRU over `sequence` (`[time × batch × in]`) from a zero initial
/// state and returns every hidden state, `[time × batch × hidden]`.
pub fn gru_forward(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    sequence: Var,
    hidden_size: usize,
) -> Result<Var> {
    let shape = tape.shape(sequence).to_vec();
    if shape.len() != 3 {
        return Err(KernelError::dim(
            format!("{prefix} (gru)"),
            format!("expected [time, batch, in], got {:?}", shape),
        ));
    }
    let (steps, batch, input) = (shape[0], shape[1], shape[2]);
    let cell = GruCell::load(tape, store, prefix, input, hidden_size)?;
    let flat = tape.reshape(sequence, &[steps * batch, input])?;
    let proj = cell.project_input(tape, flat)?;
    let proj = tape.reshape(proj, &[steps, batch, 3 * hidden_size])?;
    let mut h = tape.constant(DenseArray::zeros(&[batch, hidden_size]));
    let mut states = Vec::with_capacity(steps);
    for t in 0..steps {
        let xp = tape.index_axis0(proj, t)?;
        h = cell.step(tape, xp, h)?;
        states.push(h);
    }
    tape.stack0(&states)
}

/// Runs a GRU for `steps` steps with the same input `x` (`[batch × in]`) at
/// every step; returns `[steps × batch × hidden]`.
pub fn gru_unroll(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    x: Var,
    steps: usize,
    hidden_size: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(KernelError::dim(format!("{prefix} (gru)"), format!("expected [batch, in], got {:?}", shape)));
    }
    let cell = GruCell::load(tape, store, prefix, shape[1], hidden_size)?;
    let xp = cell.project_input(tape, x)?;
    let mut h = tape.constant(DenseArray::zeros(&[shape[0], hidden_size]));
    let mut states = Vec::with_capacity(steps);
    for _ in 0..steps {
        h = cell.step(tape, xp, h)?;
        states.push(h);
    }
    tape.stack0(&states)
}

/// Gumbel-softmax relaxation over the last axis of `logits`.
///
/// The logits are unnormalized scores; they are turned into log-probabilities
/// with a log-softmax before the noise is added:
/// `softmax((log_softmax(logits) + g) / tau)`.
pub fn gumbel_softmax_sample(tape: &mut Tape, logits: Var, tau: f64, rng: &mut SeededRng) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(KernelError::Parameter(format!("gumbel-softmax temperature must be > 0, got {tau}")));
    }
    let noise = rng.gumbel_array(tape.shape(logits));
    gumbel_softmax_with_noise(tape, logits, tau, &noise)
}

/// Same relaxation with caller-supplied (frozen) Gumbel noise.
pub fn gumbel_softmax_with_noise(tape: &mut Tape, logits: Var, tau: f64, noise: &DenseArray) -> Result<Var> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(KernelError::Parameter(format!("gumbel-softmax temperature must be > 0, got {tau}")));
    }
    let axis = tape
        .shape(logits)
        .len()
        .checked_sub(1)
        .ok_or_else(|| KernelError::dim("gumbel_softmax", "scalar logits"))?;
    let logp = tape.log_softmax(logits, axis)?;
    let g = tape.constant(noise.clone());
    let perturbed = tape.add(logp, g)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    tape.softmax(scaled, axis)
}

/// Closed-form `KL(N(mu_q, diag sigma_q²) ‖ N(mu_p, diag sigma_p²))`, summed
/// over every coordinate.
pub fn kl_diag_gaussians(tape: &mut Tape, mu_q: Var, sigma_q: Var, mu_p: Var, sigma_p: Var) -> Result<Var> {
    let s = tape.shape(mu_q).to_vec();
    for v in [sigma_q, mu_p, sigma_p] {
        if tape.shape(v) != s.as_slice() {
            return Err(KernelError::dim("kl_diag_gaussians", format!("{:?} vs {:?}", tape.shape(v), s)));
        }
    }
    for (label, v) in [("sigma_q", sigma_q), ("sigma_p", sigma_p)] {
        if let Some(bad) = tape.value(v).data().iter().find(|x| !(**x > 0.0)) {
            return Err(KernelError::Parameter(format!("{label} must be positive, found {bad}")));
        }
    }
    // ln(sp/sq) + (sq² + (mq - mp)²) / (2 sp²) - 1/2
    let ln_sp = tape.ln(sigma_p);
    let ln_sq = tape.ln(sigma_q);
    let log_ratio = tape.sub(ln_sp, ln_sq)?;
    let sq2 = tape.square(sigma_q);
    let dmu = tape.sub(mu_q, mu_p)?;
    let dmu2 = tape.square(dmu);
    let num = tape.add(sq2, dmu2)?;
    let sp2 = tape.square(sigma_p);
    let den = tape.scale(sp2, 2.0);
    let frac = tape.div(num, den)?;
    let per = tape.add(log_ratio, frac)?;
    let per = tape.add_scalar(per, -0.5);
    Ok(tape.sum(per))
}

/// Mean of squared differences over all elements.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let d2 = tape.square(d);
    Ok(tape.mean(d2))
}
