//! Hypergraphs over agents or (agent, mode) behavior nodes.
//!
//! A [`Hypergraph`] stores a binary `n_nodes × n_hyperedges` incidence matrix
//! together with the node features. [`transform_graph`] replaces pairwise
//! edges by caller-supplied groups, [`expand_hypergraph`] splits each agent
//! into its behavior modes.

use std::io::Write;

use rhino_kernel::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{AgentBehaviorGraph, AgentGraph, BehaviorCorrelation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Agent,
    AgentBehavior,
}

/// How an agent hyperedge turns into behavior hyperedges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionRule {
    /// One column per agent hyperedge holding every active mode of every member.
    #[default]
    SingleColumn,
    /// One column per agent hyperedge and mode pair `m ≤ n` with `Λ[m,n] ≠ 0`,
    /// holding modes `m` and `n` of every member.
    ModePairs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    incidence: DenseArray,
    features: DenseArray,
    kind: NodeKind,
    modes: usize,
}

impl Hypergraph {
    /// Builds the incidence matrix from member lists. Every hyperedge needs
    /// at least two distinct in-range members.
    pub fn new(hyperedges: &[Vec<usize>], features: DenseArray, kind: NodeKind, modes: usize) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(CoreError::Dimension(format!("node features must be 2-D, got {:?}", features.shape())));
        }
        let n = features.shape()[0];
        let l = hyperedges.len();
        let mut incidence = DenseArray::zeros(&[n, l]);
        for (j, members) in hyperedges.iter().enumerate() {
            for &v in members {
                if v >= n {
                    return Err(CoreError::Structural(format!("hyperedge {j} names node {v} but there are {n} nodes")));
                }
                incidence.set(&[v, j], 1.0);
            }
            let size = (0..n).filter(|&v| incidence.get(&[v, j]) != 0.0).count();
            if size < 2 {
                return Err(CoreError::Structural(format!(
                    "hyperedge {j} has {size} distinct member(s); at least 2 are required"
                )));
            }
        }
        if kind == NodeKind::Agent && modes != 1 {
            return Err(CoreError::Structural("agent hypergraphs carry a single mode".into()));
        }
        Ok(Hypergraph {
            incidence,
            features,
            kind,
            modes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.incidence.shape()[0]
    }

    pub fn n_hyperedges(&self) -> usize {
        self.incidence.shape()[1]
    }

    pub fn incidence(&self) -> &DenseArray {
        &self.incidence
    }

    pub fn features(&self) -> &DenseArray {
        &self.features
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Sorted member list of hyperedge `j`.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&v| self.incidence.get(&[v, j]) != 0.0).collect()
    }

    pub fn hyperedges(&self) -> Vec<Vec<usize>> {
        (0..self.n_hyperedges()).map(|j| self.members(j)).collect()
    }

    pub fn with_features(mut self, features: DenseArray) -> Result<Self> {
        if features.ndim() != 2 || features.shape()[0] != self.n_nodes() {
            return Err(CoreError::Dimension(format!(
                "features {:?} do not match {} nodes",
                features.shape(),
                self.n_nodes()
            )));
        }
        self.features = features;
        Ok(self)
    }
}

/// Anything a hypergraph can be built on top of.
pub trait NodeSet {
    fn node_features(&self) -> &DenseArray;
    fn node_kind(&self) -> NodeKind;
    fn node_modes(&self) -> usize;
}

impl NodeSet for AgentGraph {
    fn node_features(&self) -> &DenseArray {
        self.features()
    }
    fn node_kind(&self) -> NodeKind {
        NodeKind::Agent
    }
    fn node_modes(&self) -> usize {
        1
    }
}

impl NodeSet for AgentBehaviorGraph {
    fn node_features(&self) -> &DenseArray {
        self.features()
    }
    fn node_kind(&self) -> NodeKind {
        NodeKind::AgentBehavior
    }
    fn node_modes(&self) -> usize {
        self.modes()
    }
}

/// Replaces the pairwise edges of `g` by `hyperedges`; features are kept.
pub fn transform_graph<G: NodeSet>(g: &G, hyperedges: &[Vec<usize>]) -> Result<Hypergraph> {
    Hypergraph::new(hyperedges, g.node_features().clone(), g.node_kind(), g.node_modes())
}

/// Behavior-node member lists induced by agent hyperedges (node `(i, m)` is
/// row `i·M + m`).
pub fn induce_behavior_hyperedges(
    hyperedges: &[Vec<usize>],
    corr: &BehaviorCorrelation,
    rule: ExpansionRule,
) -> Vec<Vec<usize>> {
    let m = corr.modes();
    let active: Vec<usize> = (0..m).filter(|&k| corr.is_active(k)).collect();
    let mut out = Vec::new();
    for members in hyperedges {
        match rule {
            ExpansionRule::SingleColumn => {
                let mut col: Vec<usize> = members.iter().flat_map(|&i| active.iter().map(move |&k| i * m + k)).collect();
                col.sort_unstable();
                out.push(col);
            }
            ExpansionRule::ModePairs => {
                for a in 0..m {
                    for b in a..m {
                        if corr.get(a, b) == 0.0 {
                            continue;
                        }
                        let mut col: Vec<usize> = members.iter().flat_map(|&i| [i * m + a, i * m + b]).collect();
                        col.sort_unstable();
                        col.dedup();
                        out.push(col);
                    }
                }
            }
        }
    }
    out
}

/// Splits every agent of `h` into `M` behavior nodes.
///
/// `per_mode_features` is `[N × M × C]`.
pub fn expand_hypergraph(
    h: &Hypergraph,
    corr: &BehaviorCorrelation,
    per_mode_features: &DenseArray,
    rule: ExpansionRule,
) -> Result<Hypergraph> {
    if h.kind() != NodeKind::Agent {
        return Err(CoreError::Structural("only agent hypergraphs can be expanded".into()));
    }
    let n = h.n_nodes();
    let m = corr.modes();
    let s = per_mode_features.shape();
    if s.len() != 3 || s[0] != n || s[1] != m {
        return Err(CoreError::Dimension(format!(
            "per-mode features {s:?} do not match N={n}, M={m} (expected [N, M, C])"
        )));
    }
    if !(0..m).any(|k| corr.is_active(k)) {
        return Err(CoreError::Structural("Λ has no active mode".into()));
    }
    let features = per_mode_features.reshape(&[n * m, s[2]])?;
    let edges = induce_behavior_hyperedges(&h.hyperedges(), corr, rule);
    Hypergraph::new(&edges, features, NodeKind::AgentBehavior, m)
}

/// Row sums of the incidence matrix.
pub fn node_degree(h: &Hypergraph) -> DenseArray {
    let inc = h.incidence();
    DenseArray::from_vec((0..h.n_nodes()).map(|v| inc.row(v).iter().sum()).collect())
}

/// One scale of a multi-scale hypergraph. Scale 0 holds pairwise links.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHypergraph {
    pub scale: usize,
    pub group_size: usize,
    pub hypergraph: Hypergraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleHypergraph {
    pub scales: Vec<ScaleHypergraph>,
}

impl MultiScaleHypergraph {
    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    /// Checks binarity and that every column at scale ≥ 1 has exactly
    /// `group_size` members.
    pub fn check(&self) -> Result<()> {
        for s in &self.scales {
            let h = &s.hypergraph;
            if h.incidence().data().iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(CoreError::Structural(format!("scale {} incidence is not binary", s.scale)));
            }
            if s.scale >= 1 {
                for j in 0..h.n_hyperedges() {
                    let size = h.members(j).len();
                    if size != s.group_size {
                        return Err(CoreError::Structural(format!(
                            "scale {} hyperedge {j} has {size} members, expected {}",
                            s.scale, s.group_size
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Writes `node_id,edge_id,member` rows for every incidence entry.
pub fn write_incidence_csv<W: Write>(h: &Hypergraph, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node_id", "edge_id", "member"])?;
    for v in 0..h.n_nodes() {
        for e in 0..h.n_hyperedges() {
            let member = h.incidence().get(&[v, e]) as u8;
            w.write_record([v.to_string(), e.to_string(), member.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `i,j,affinity` rows for a square matrix.
pub fn write_affinity_csv<W: Write>(values: &DenseArray, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "affinity"])?;
    let n = values.shape()[0];
    for i in 0..n {
        for j in 0..n {
            w.write_record([i.to_string(), j.to_string(), values.get(&[i, j]).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
