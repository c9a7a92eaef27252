//! Hypergraph relational encoder.
//!
//! Node states are embedded by `f_q`, grouped into a multi-scale hypergraph
//! from their cosine affinities (selection sees detached values only), and
//! refined by rounds of node→hyperedge and hyperedge→node message passing.
//! The output concatenates the final node embeddings of every scale.

use std::ops::Range;

use rhino_kernel::nn::{gumbel_softmax_sample, gumbel_softmax_with_noise, mlp_forward, Activation};
use rhino_kernel::{DenseArray, ParameterStore, SeededRng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hypergraph::{Hypergraph, MultiScaleHypergraph, NodeKind, ScaleHypergraph};
use crate::selection::{affinity, pairwise_groups, select_groups, AffinityMatrix, SelectionMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Group sizes `J^(1..S)`; scale 0 (pairs) is always present.
    pub scales: Vec<usize>,
    pub d_embed: usize,
    /// Hidden width of every MLP in the encoder.
    pub hidden: usize,
    pub categories: usize,
    pub passes: usize,
    pub selection: SelectionMode,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            scales: vec![3, 5],
            d_embed: 128,
            hidden: 128,
            categories: 4,
            passes: 2,
            selection: SelectionMode::Auto,
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|&j| j < 2) || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config(format!(
                "group sizes {:?} must be ≥ 2 and strictly increasing",
                self.scales
            )));
        }
        if self.d_embed == 0 || self.hidden == 0 || self.categories == 0 || self.passes == 0 {
            return Err(CoreError::Config("encoder widths, categories and passes must be positive".into()));
        }
        Ok(())
    }

    /// `S + 1`.
    pub fn n_scales(&self) -> usize {
        self.scales.len() + 1
    }

    /// `d·(S + 1)`.
    pub fn output_width(&self) -> usize {
        self.d_embed * self.n_scales()
    }
}

/// Source of the Gumbel noise in the category coefficients.
pub enum GumbelNoise<'a> {
    /// Noise-free relaxation `softmax(scores / τ)` (evaluation).
    Off,
    Sampled(&'a mut SeededRng),
    /// Noise row for a hyperedge, keyed by encoder prefix, scale and sorted members.
    Provided(&'a dyn Fn(&str, usize, &[usize]) -> Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperedgeAnnotation {
    pub members: Vec<usize>,
    /// `r ∈ (0, 1)`.
    pub strength: f64,
    /// `c`, a point on the simplex.
    pub category_probs: Vec<f64>,
    /// `z`.
    pub collective: Vec<f64>,
}

/// Incidence pairs of one scale, ordered by hyperedge.
#[derive(Debug, Clone, Default)]
pub struct EdgeIndex {
    pub node: Vec<usize>,
    pub edge: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    pub n_nodes: usize,
}

impl EdgeIndex {
    pub fn new(n_nodes: usize, members: Vec<Vec<usize>>) -> Self {
        let mut node = Vec::new();
        let mut edge = Vec::new();
        for (e, m) in members.iter().enumerate() {
            for &v in m {
                node.push(v);
                edge.push(e);
            }
        }
        EdgeIndex {
            node,
            edge,
            members,
            n_nodes,
        }
    }

    pub fn from_hypergraph(h: &Hypergraph) -> Self {
        Self::new(h.n_nodes(), h.hyperedges())
    }

    pub fn n_edges(&self) -> usize {
        self.members.len()
    }
}

/// `q_i = f_q(X^i)` on flattened per-node states (`[n × w]` or `[n × T' × C]`).
pub fn embed_trajectories(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    states: Var,
) -> Result<Var> {
    let s = tape.shape(states).to_vec();
    let states = match s.len() {
        2 => states,
        3 => tape.reshape(states, &[s[0], s[1] * s[2]])?,
        _ => return Err(CoreError::Dimension(format!("node states must be 2-D or 3-D, got {s:?}"))),
    };
    let w = tape.shape(states)[1];
    Ok(mlp_forward(
        tape,
        store,
        &format!("{prefix}.fq"),
        states,
        &[w, cfg.hidden, cfg.d_embed],
        cfg.activation,
    )?)
}

fn mlp(tape: &mut Tape, store: &mut ParameterStore, name: &str, x: Var, sizes: &[usize], act: Activation) -> Result<Var> {
    Ok(mlp_forward(tape, store, name, x, sizes, act)?)
}

/// Node→hyperedge step. Returns `None` for the embedding when there are no hyperedges.
#[allow(clippy::too_many_arguments)]
pub fn node_to_hyperedge(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    v: Var,
    edges: &EdgeIndex,
    noise: &mut GumbelNoise,
    scale: usize,
    tau: f64,
) -> Result<(Option<Var>, Vec<HyperedgeAnnotation>)> {
    let e = edges.n_edges();
    if e == 0 {
        return Ok((None, Vec::new()));
    }
    let (d, h, act) = (cfg.d_embed, cfg.hidden, cfg.activation);
    let v_pairs = tape.gather_rows(v, &edges.node)?;
    let sums = tape.segment_sum(v_pairs, &edges.edge, e)?;
    let s_pairs = tape.gather_rows(sums, &edges.edge)?;
    let ws_in = tape.concat(&[v_pairs, s_pairs], 1)?;
    let w = mlp(tape, store, &format!("{prefix}.fw"), ws_in, &[2 * d, h, 1], act)?;
    let wv = tape.mul(v_pairs, w)?;
    let z = tape.segment_sum(wv, &edges.edge, e)?;
    let r = mlp(tape, store, &format!("{prefix}.fr"), z, &[d, h, 1], act)?;
    let r = tape.sigmoid(r);
    let scores = mlp(tape, store, &format!("{prefix}.fc"), z, &[d, h, cfg.categories], act)?;
    let c = match noise {
        GumbelNoise::Off => {
            let s = tape.scale(scores, 1.0 / tau);
            tape.softmax(s, 1)?
        }
        GumbelNoise::Sampled(rng) => gumbel_softmax_sample(tape, scores, tau, rng)?,
        GumbelNoise::Provided(f) => {
            let mut data = Vec::with_capacity(e * cfg.categories);
            for m in &edges.members {
                let row = f(prefix, scale, m);
                if row.len() != cfg.categories {
                    return Err(CoreError::Dimension(format!(
                        "provided noise has {} entries for {} categories",
                        row.len(),
                        cfg.categories
                    )));
                }
                data.extend(row);
            }
            let g = DenseArray::new(vec![e, cfg.categories], data)?;
            gumbel_softmax_with_noise(tape, scores, tau, &g)?
        }
    };
    let mut acc: Option<Var> = None;
    for l in 0..cfg.categories {
        let fl = mlp(tape, store, &format!("{prefix}.f{l}"), sums, &[d, h, d], act)?;
        let cl = tape.slice(c, 1, l, 1)?;
        let term = tape.mul(fl, cl)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let mixed = acc.ok_or_else(|| CoreError::Config("at least one category is required".into()))?;
    let u = tape.mul(mixed, r)?;

    let (rv, cv, zv) = (tape.value(r), tape.value(c), tape.value(z));
    let annotations = edges
        .members
        .iter()
        .enumerate()
        .map(|(j, m)| HyperedgeAnnotation {
            members: m.clone(),
            strength: rv.row(j)[0],
            category_probs: cv.row(j).to_vec(),
            collective: zv.row(j).to_vec(),
        })
        .collect();
    Ok((Some(u), annotations))
}

/// `ṽ_i = F_v([v_i, Σ_{u ∋ i} u])`; nodes outside every hyperedge see a zero sum.
pub fn hyperedge_to_node(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    v: Var,
    u: Option<Var>,
    edges: &EdgeIndex,
) -> Result<Var> {
    let d = cfg.d_embed;
    let agg = match u {
        Some(u) => {
            let u_pairs = tape.gather_rows(u, &edges.edge)?;
            tape.segment_sum(u_pairs, &edges.node, edges.n_nodes)?
        }
        None => tape.constant(DenseArray::zeros(&[edges.n_nodes, d])),
    };
    let x = tape.concat(&[v, agg], 1)?;
    mlp(tape, store, &format!("{prefix}.fv"), x, &[2 * d, cfg.hidden, d], cfg.activation)
}

/// Result of [`encode`].
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[n × d(S+1)]`.
    pub output: Var,
    /// `[n × d]` trajectory embeddings.
    pub q: Var,
    /// Per group: the inferred hypergraph in group-local node numbering.
    pub hypergraphs: Vec<MultiScaleHypergraph>,
    pub affinities: Vec<AffinityMatrix>,
    /// Per scale, annotations from the last message-passing round.
    pub annotations: Vec<Vec<HyperedgeAnnotation>>,
}

/// Hyperedges of one group at every scale, local numbering. Group sizes
/// larger than the group are clamped to it; sizes below 2 give no hyperedges.
pub fn group_hyperedges(aff: &AffinityMatrix, cfg: &EncoderConfig) -> Result<Vec<Vec<Vec<usize>>>> {
    let n = aff.n();
    let mut out = vec![pairwise_groups(aff)];
    for &j in &cfg.scales {
        let j = j.min(n);
        out.push(if j < 2 { Vec::new() } else { select_groups(aff, j, cfg.selection)? });
    }
    Ok(out)
}

/// Encodes several independent node groups at once (one hypergraph per
/// group, no hyperedge crosses groups).
#[allow(clippy::too_many_arguments)]
pub fn encode_groups(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    states: Var,
    groups: &[Range<usize>],
    noise: &mut GumbelNoise,
    tau: f64,
    kind: NodeKind,
    modes: usize,
) -> Result<Encoded> {
    cfg.validate()?;
    let q = embed_trajectories(tape, store, prefix, cfg, states)?;
    let qv = tape.value(q).clone();
    let n_total = qv.shape()[0];
    let d = cfg.d_embed;
    let mut per_scale: Vec<Vec<Vec<usize>>> = vec![Vec::new(); cfg.n_scales()];
    let mut hypergraphs = Vec::with_capacity(groups.len());
    let mut affinities = Vec::with_capacity(groups.len());
    for g in groups {
        let local = DenseArray::from_fn(&[g.len(), d], |ix| qv.get(&[g.start + ix[0], ix[1]]));
        let aff = affinity(&local)?;
        let scales = group_hyperedges(&aff, cfg)?;
        let feats = DenseArray::zeros(&[g.len(), 0]);
        let mut ms = Vec::with_capacity(scales.len());
        for (s, edges) in scales.into_iter().enumerate() {
            let group_size = if s == 0 { 2 } else { cfg.scales[s - 1].min(g.len()) };
            ms.push(ScaleHypergraph {
                scale: s,
                group_size,
                hypergraph: Hypergraph::new(&edges, feats.clone(), kind, modes)?,
            });
            per_scale[s].extend(edges.into_iter().map(|m| m.into_iter().map(|v| v + g.start).collect()));
        }
        hypergraphs.push(MultiScaleHypergraph { scales: ms });
        affinities.push(aff);
    }
    let mut outputs = Vec::with_capacity(cfg.n_scales());
    let mut annotations = Vec::with_capacity(cfg.n_scales());
    for (s, members) in per_scale.into_iter().enumerate() {
        let edges = EdgeIndex::new(n_total, members);
        let scale_prefix = format!("{prefix}.s{s}");
        let mut v = q;
        let mut last = Vec::new();
        for _ in 0..cfg.passes {
            let (u, ann) = node_to_hyperedge(tape, store, &scale_prefix, cfg, v, &edges, noise, s, tau)?;
            v = hyperedge_to_node(tape, store, &scale_prefix, cfg, v, u, &edges)?;
            last = ann;
        }
        outputs.push(v);
        annotations.push(last);
    }
    let output = tape.concat(&outputs, 1)?;
    Ok(Encoded {
        output,
        q,
        hypergraphs,
        affinities,
        annotations,
    })
}

/// Single-group encode of agent nodes.
pub fn encode(
    tape: &mut Tape,
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &EncoderConfig,
    states: Var,
    noise: &mut GumbelNoise,
    tau: f64,
) -> Result<Encoded> {
    let n = tape.shape(states)[0];
    #[allow(clippy::single_range_in_vec_init)]
    let groups = [0..n];
    encode_groups(tape, store, prefix, cfg, states, &groups, noise, tau, NodeKind::Agent, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(scales: Vec<usize>) -> EncoderConfig {
        EncoderConfig {
            scales,
            d_embed: 4,
            hidden: 6,
            categories: 3,
            passes: 2,
            selection: SelectionMode::Exact,
            activation: Activation::Tanh,
        }
    }

    fn states(n: usize, seed: u64) -> DenseArray {
        SeededRng::new(seed).normal_array(&[n, 5])
    }

    #[test]
    fn output_width_grows_with_scales() {
        for (scales, width) in [(vec![], 4), (vec![2, 3], 12)] {
            let cfg = small_cfg(scales);
            let mut store = ParameterStore::new(1);
            let mut tape = Tape::new();
            let x = tape.constant(states(5, 2));
            let enc = encode(&mut tape, &mut store, "e", &cfg, x, &mut GumbelNoise::Off, 1.0).unwrap();
            assert_eq!(tape.shape(enc.output), &[5, width]);
        }
    }

    #[test]
    fn identical_states_embed_identically() {
        let cfg = small_cfg(vec![]);
        let mut store = ParameterStore::new(1);
        let mut tape = Tape::new();
        let row = states(1, 3);
        let x = tape.constant(DenseArray::from_fn(&[3, 5], |ix| row.get(&[0, ix[1]])));
        let q = embed_trajectories(&mut tape, &mut store, "e", &cfg, x).unwrap();
        let qv = tape.value(q);
        assert_eq!(qv.row(0), qv.row(2));
    }

    #[test]
    fn zero_category_nets_give_zero_hyperedges() {
        let cfg = small_cfg(vec![]);
        let mut store = ParameterStore::new(1);
        for l in 0..cfg.categories {
            store.insert(&format!("e.f{l}.w0"), DenseArray::zeros(&[4, 6]));
            store.insert(&format!("e.f{l}.b0"), DenseArray::zeros(&[6]));
            store.insert(&format!("e.f{l}.w1"), DenseArray::zeros(&[6, 4]));
            store.insert(&format!("e.f{l}.b1"), DenseArray::zeros(&[4]));
        }
        let mut tape = Tape::new();
        let v = tape.constant(states(3, 4).map(|x| x).reshape(&[3, 5]).unwrap());
        let v = tape.slice(v, 1, 0, 4).unwrap();
        let edges = EdgeIndex::new(3, vec![vec![0, 2]]);
        let mut rng = SeededRng::new(5);
        let (u, ann) =
            node_to_hyperedge(&mut tape, &mut store, "e", &cfg, v, &edges, &mut GumbelNoise::Sampled(&mut rng), 0, 1.0)
                .unwrap();
        assert!(tape.value(u.unwrap()).max_abs() == 0.0);
        let a = &ann[0];
        assert!(a.strength > 0.0 && a.strength < 1.0);
        assert!((a.category_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_sees_zero_sum() {
        let cfg = small_cfg(vec![]);
        let mut store = ParameterStore::new(1);
        // F_v = [I 0; 0 I] first layer then identity-like second layer.
        store.insert("e.fv.w0", DenseArray::from_fn(&[8, 6], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 }));
        store.insert("e.fv.b0", DenseArray::zeros(&[6]));
        store.insert("e.fv.w1", DenseArray::from_fn(&[6, 4], |ix| if ix[0] == ix[1] { 1.0 } else { 0.0 }));
        store.insert("e.fv.b1", DenseArray::zeros(&[4]));
        let mut tape = Tape::new();
        let v = tape.constant(DenseArray::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![0.5; 4], vec![0.7; 4]]).unwrap());
        let u = tape.constant(DenseArray::full(&[1, 4], 9.0));
        let edges = EdgeIndex::new(3, vec![vec![1, 2]]);
        let out = hyperedge_to_node(&mut tape, &mut store, "e", &cfg, v, Some(u), &edges).unwrap();
        let expected: Vec<f64> = [0.1f64, 0.2, 0.3, 0.4].iter().map(|x| x.tanh()).collect();
        for (a, b) in tape.value(out).row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_group_has_no_hyperedges() {
        let cfg = small_cfg(vec![2, 3]);
        let mut store = ParameterStore::new(1);
        let mut tape = Tape::new();
        let x = tape.constant(states(1, 6));
        let enc = encode(&mut tape, &mut store, "e", &cfg, x, &mut GumbelNoise::Off, 1.0).unwrap();
        assert!(enc.hypergraphs[0].scales.iter().all(|s| s.hypergraph.n_hyperedges() == 0));
        assert!(tape.value(enc.output).all_finite());
    }
}
