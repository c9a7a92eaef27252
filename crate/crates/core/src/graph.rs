//! Agent graphs and their behavior-mode expansion.
//!
//! An [`AgentGraph`] has one node per vehicle. Expanding it with a behavior
//! correlation matrix `Λ` yields an [`AgentBehaviorGraph`] with one node per
//! (vehicle, mode) pair and adjacency `A^b = A^a ⊗ Λ`.

use rhino_kernel::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Number of lateral behavior modes.
pub const MODES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Left,
    Keep,
    Right,
}

impl Mode {
    pub const ALL: [Mode; MODES] = [Mode::Left, Mode::Keep, Mode::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(m: usize) -> Option<Mode> {
        Self::ALL.get(m).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Left => "left",
            Mode::Keep => "keep",
            Mode::Right => "right",
        }
    }
}

fn check_matrix(a: &DenseArray, what: &str) -> Result<usize> {
    let s = a.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(CoreError::Dimension(format!("{what} must be square, got {s:?}")));
    }
    if let Some(v) = a.data().iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(CoreError::Structural(format!("{what} entries must be finite and nonnegative, found {v}")));
    }
    Ok(s[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    features: DenseArray,
    adjacency: DenseArray,
}

impl AgentGraph {
    /// Validates shapes and nonnegativity. Self-loops are not forced here so
    /// that arbitrary adjacency patterns can be expressed; use
    /// [`AgentGraph::fully_connected`] for scenario graphs.
    pub fn new(features: DenseArray, adjacency: DenseArray) -> Result<Self> {
        let n = check_matrix(&adjacency, "agent adjacency")?;
        if features.ndim() != 2 || features.shape()[0] != n {
            return Err(CoreError::Dimension(format!(
                "features {:?} do not match N={n} agents",
                features.shape()
            )));
        }
        Ok(AgentGraph { features, adjacency })
    }

    /// Every agent interacts with every other, weight 1, self-loops kept.
    pub fn fully_connected(features: DenseArray) -> Result<Self> {
        let n = features.shape().first().copied().unwrap_or(0);
        Self::new(features, DenseArray::ones(&[n, n]))
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.shape()[0]
    }

    pub fn features(&self) -> &DenseArray {
        &self.features
    }

    pub fn adjacency(&self) -> &DenseArray {
        &self.adjacency
    }
}

/// `Λ[m, n]`: how strongly mode `m` of one agent relates to mode `n` of another.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorCorrelation {
    lambda: DenseArray,
}

impl BehaviorCorrelation {
    pub fn new(lambda: DenseArray) -> Result<Self> {
        let m = check_matrix(&lambda, "behavior correlation")?;
        for a in 0..m {
            for b in 0..m {
                let v = lambda.get(&[a, b]);
                if v > 1.0 {
                    return Err(CoreError::Structural(format!("Λ[{a},{b}] = {v} is outside [0, 1]")));
                }
                if (v - lambda.get(&[b, a])).abs() > 1e-12 {
                    return Err(CoreError::Structural(format!("Λ is not symmetric at ({a},{b})")));
                }
            }
        }
        Ok(BehaviorCorrelation { lambda })
    }

    pub fn all_ones(modes: usize) -> Self {
        BehaviorCorrelation {
            lambda: DenseArray::ones(&[modes, modes]),
        }
    }

    pub fn identity(modes: usize) -> Self {
        BehaviorCorrelation {
            lambda: DenseArray::identity(modes),
        }
    }

    pub fn modes(&self) -> usize {
        self.lambda.shape()[0]
    }

    pub fn lambda(&self) -> &DenseArray {
        &self.lambda
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.lambda.get(&[m, n])
    }

    /// A mode takes part in expanded structures iff its row of `Λ` is nonzero.
    pub fn is_active(&self, m: usize) -> bool {
        self.lambda.row(m).iter().any(|v| *v != 0.0)
    }
}

impl Default for BehaviorCorrelation {
    fn default() -> Self {
        Self::all_ones(MODES)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentBehaviorGraph {
    n_agents: usize,
    modes: usize,
    features: DenseArray,
    adjacency: DenseArray,
}

impl AgentBehaviorGraph {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn n_nodes(&self) -> usize {
        self.n_agents * self.modes
    }

    pub fn features(&self) -> &DenseArray {
        &self.features
    }

    pub fn adjacency(&self) -> &DenseArray {
        &self.adjacency
    }

    /// Row index of behavior node `(agent, mode)`.
    pub fn node_index(&self, agent: usize, mode: usize) -> usize {
        agent * self.modes + mode
    }

    /// Inverse of [`node_index`](Self::node_index).
    pub fn node_of(&self, row: usize) -> (usize, usize) {
        (row / self.modes, row % self.modes)
    }
}

/// Expands every agent into `M` behavior nodes.
///
/// `per_mode_features` is `[N × M × C]`; row `(i, m)` of the result's
/// features is `per_mode_features[i, m, :]`.
pub fn expand_graph(
    g: &AgentGraph,
    corr: &BehaviorCorrelation,
    per_mode_features: &DenseArray,
) -> Result<AgentBehaviorGraph> {
    let n = g.n_agents();
    let m = corr.modes();
    let s = per_mode_features.shape();
    if s.len() != 3 || s[0] != n || s[1] != m {
        return Err(CoreError::Dimension(format!(
            "per-mode features {s:?} do not match N={n}, M={m} (expected [N, M, C])"
        )));
    }
    let c = s[2];
    let features = per_mode_features.reshape(&[n * m, c]).map_err(CoreError::from)?;
    Ok(AgentBehaviorGraph {
        n_agents: n,
        modes: m,
        features,
        adjacency: g.adjacency().kron(corr.lambda()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviorEdge {
    /// `(agent, mode)` of the source node.
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub weight: f64,
}

/// Every pair of behavior nodes with a nonzero adjacency entry, in row-major order.
pub fn edge_list(g: &AgentBehaviorGraph) -> Vec<BehaviorEdge> {
    let n = g.n_nodes();
    let mut edges = Vec::new();
    for r in 0..n {
        for (c, &w) in g.adjacency().row(r).iter().enumerate() {
            if w != 0.0 {
                edges.push(BehaviorEdge {
                    from: g.node_of(r),
                    to: g.node_of(c),
                    weight: w,
                });
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_agents_three_modes_give_fifteen_nodes() {
        let g = AgentGraph::fully_connected(DenseArray::zeros(&[5, 4])).unwrap();
        let b = expand_graph(&g, &BehaviorCorrelation::default(), &DenseArray::zeros(&[5, 3, 4])).unwrap();
        assert_eq!(b.n_nodes(), 15);
        assert_eq!(b.adjacency().shape(), &[15, 15]);
    }

    #[test]
    fn identity_inputs_expand_to_identity() {
        let g = AgentGraph::new(DenseArray::zeros(&[4, 2]), DenseArray::identity(4)).unwrap();
        let b = expand_graph(&g, &BehaviorCorrelation::identity(3), &DenseArray::zeros(&[4, 3, 2])).unwrap();
        assert_eq!(b.adjacency(), &DenseArray::identity(12));
    }

    #[test]
    fn node_index_is_a_bijection() {
        let g = AgentGraph::fully_connected(DenseArray::zeros(&[4, 1])).unwrap();
        let b = expand_graph(&g, &BehaviorCorrelation::default(), &DenseArray::zeros(&[4, 3, 1])).unwrap();
        let mut seen = vec![false; 12];
        for i in 0..4 {
            for m in 0..3 {
                let r = b.node_index(i, m);
                assert!(!seen[r]);
                seen[r] = true;
                assert_eq!(b.node_of(r), (i, m));
            }
        }
    }

    #[test]
    fn single_link_with_full_correlation_gives_four_edges() {
        let mut a = DenseArray::zeros(&[3, 3]);
        a.set(&[0, 1], 1.0);
        let g = AgentGraph::new(DenseArray::zeros(&[3, 1]), a).unwrap();
        let b = expand_graph(&g, &BehaviorCorrelation::all_ones(2), &DenseArray::zeros(&[3, 2, 1])).unwrap();
        let edges = edge_list(&b);
        assert_eq!(edges.len(), 4);
        assert!(edges.iter().all(|e| e.from.0 == 0 && e.to.0 == 1 && e.weight == 1.0));
    }

    #[test]
    fn zero_adjacency_has_no_edges() {
        let g = AgentGraph::new(DenseArray::zeros(&[3, 1]), DenseArray::zeros(&[3, 3])).unwrap();
        let b = expand_graph(&g, &BehaviorCorrelation::default(), &DenseArray::zeros(&[3, 3, 1])).unwrap();
        assert!(edge_list(&b).is_empty());
    }

    #[test]
    fn mismatched_features_name_the_sizes() {
        let g = AgentGraph::fully_connected(DenseArray::zeros(&[3, 2])).unwrap();
        let err = expand_graph(&g, &BehaviorCorrelation::default(), &DenseArray::zeros(&[3, 2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("N=3") && msg.contains("M=3"), "{msg}");
    }

    #[test]
    fn correlation_must_be_symmetric_and_bounded() {
        assert!(BehaviorCorrelation::new(DenseArray::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]).unwrap()).is_err());
        assert!(BehaviorCorrelation::new(DenseArray::from_rows(&[vec![1.5, 0.0], vec![0.0, 1.0]]).unwrap()).is_err());
    }
}
