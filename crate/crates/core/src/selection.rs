//! Cosine affinity between node embeddings and multi-scale hyperedge selection.
//!
//! Scale 0 links each node to its most affine partner. At scale `s ≥ 1` every
//! seed node `i` gets the `J^(s)`-subset `Γ ∋ i` maximizing the entrywise
//! absolute sum of the induced affinity block, found by exhaustive
//! enumeration or by greedy growth.

use rhino_kernel::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hypergraph::{Hypergraph, MultiScaleHypergraph, NodeKind, ScaleHypergraph};

/// Largest node count accepted by exact enumeration.
pub const EXACT_MAX_NODES: usize = 12;
/// Largest group size `Auto` still sends to exact enumeration.
pub const EXACT_MAX_GROUP: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    values: DenseArray,
}

impl AffinityMatrix {
    /// Wraps a precomputed matrix after checking symmetry and the unit diagonal.
    pub fn new(values: DenseArray) -> Result<Self> {
        let s = values.shape();
        if s.len() != 2 || s[0] != s[1] {
            return Err(CoreError::Dimension(format!("affinity must be square, got {s:?}")));
        }
        let n = s[0];
        for i in 0..n {
            if (values.get(&[i, i]) - 1.0).abs() > 1e-12 {
                return Err(CoreError::Structural(format!("affinity diagonal at {i} is not 1")));
            }
            for j in 0..i {
                if (values.get(&[i, j]) - values.get(&[j, i])).abs() > 1e-12 {
                    return Err(CoreError::Structural(format!("affinity is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(AffinityMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn values(&self) -> &DenseArray {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(&[i, j])
    }
}

/// Cosine similarity of every pair of rows of `q` (`[N × d]`).
pub fn affinity(q: &DenseArray) -> Result<AffinityMatrix> {
    if q.ndim() != 2 {
        return Err(CoreError::Dimension(format!("embeddings must be [N, d], got {:?}", q.shape())));
    }
    let n = q.shape()[0];
    let norms: Vec<f64> = (0..n).map(|i| q.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    if let Some(i) = norms.iter().position(|v| !(*v > 0.0)) {
        return Err(CoreError::Degenerate(format!("embedding row {i} has zero norm")));
    }
    let mut a = DenseArray::zeros(&[n, n]);
    for i in 0..n {
        a.set(&[i, i], 1.0);
        for j in 0..i {
            let dot: f64 = q.row(i).iter().zip(q.row(j)).map(|(x, y)| x * y).sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            a.set(&[i, j], c);
            a.set(&[j, i], c);
        }
    }
    Ok(AffinityMatrix { values: a })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Exact,
    Greedy,
    /// Exact when `N ≤ EXACT_MAX_NODES` and `J ≤ EXACT_MAX_GROUP`, greedy otherwise.
    #[default]
    Auto,
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMode::Exact => "exact",
            SelectionMode::Greedy => "greedy",
            SelectionMode::Auto => "auto",
        })
    }
}

impl std::str::FromStr for SelectionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SelectionMode::Exact),
            "greedy" => Ok(SelectionMode::Greedy),
            "auto" => Ok(SelectionMode::Auto),
            other => Err(CoreError::Config(format!("unknown selection mode `{other}`"))),
        }
    }
}

/// `Σ_{a,b ∈ set} |A[a,b]|`, summed in the order of `set`.
pub fn group_objective(aff: &AffinityMatrix, set: &[usize]) -> f64 {
    let mut total = 0.0;
    for &a in set {
        for &b in set {
            total += aff.get(a, b).abs();
        }
    }
    total
}

/// The other node with the highest affinity to `i`; lowest index on ties.
pub fn best_partner(aff: &AffinityMatrix, i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..aff.n() {
        if j == i {
            continue;
        }
        let v = aff.get(i, j);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Visits every `k`-combination of `items` in lexicographic order.
fn for_each_combination(items: &[usize], k: usize, mut f: impl FnMut(&[usize])) {
    let n = items.len();
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut buf = vec![0; k];
    loop {
        for (b, &i) in buf.iter_mut().zip(&idx) {
            *b = items[i];
        }
        f(&buf);
        let Some(pos) = (0..k).rev().find(|&p| idx[p] != p + n - k) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Exhaustive search over `J`-subsets containing `seed`. Returns the sorted
/// member list; among equal objectives the lexicographically first set wins.
pub fn exact_hyperedge(aff: &AffinityMatrix, seed: usize, j: usize) -> Vec<usize> {
    let others: Vec<usize> = (0..aff.n()).filter(|&v| v != seed).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut set = Vec::with_capacity(j);
    for_each_combination(&others, j - 1, |comb| {
        set.clear();
        set.extend_from_slice(comb);
        set.push(seed);
        set.sort_unstable();
        let v = group_objective(aff, &set);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((set.clone(), v));
        }
    });
    best.map(|(s, _)| s).unwrap_or_default()
}

/// Grows `{seed}` one node at a time, adding the node with the largest
/// objective gain (lowest index on ties).
pub fn greedy_hyperedge(aff: &AffinityMatrix, seed: usize, j: usize) -> Vec<usize> {
    let n = aff.n();
    let mut set = vec![seed];
    let mut inside = vec![false; n];
    inside[seed] = true;
    while set.len() < j {
        let mut best: Option<(usize, f64)> = None;
        for k in (0..n).filter(|&k| !inside[k]) {
            let gain = aff.get(k, k).abs() + 2.0 * set.iter().map(|&a| aff.get(a, k).abs()).sum::<f64>();
            if best.is_none_or(|(_, b)| gain > b) {
                best = Some((k, gain));
            }
        }
        let Some((k, _)) = best else { break };
        inside[k] = true;
        set.push(k);
    }
    set.sort_unstable();
    set
}

/// Member lists for one scale `J ≥ 2`, one per seed node.
pub fn select_groups(aff: &AffinityMatrix, j: usize, mode: SelectionMode) -> Result<Vec<Vec<usize>>> {
    let n = aff.n();
    if j < 2 || j > n {
        return Err(CoreError::Config(format!("group size {j} is infeasible for {n} nodes")));
    }
    let exact = match mode {
        SelectionMode::Exact => {
            if n > EXACT_MAX_NODES {
                return Err(CoreError::Config(format!(
                    "exact selection supports at most {EXACT_MAX_NODES} nodes, got {n}"
                )));
            }
            true
        }
        SelectionMode::Greedy => false,
        SelectionMode::Auto => n <= EXACT_MAX_NODES && j <= EXACT_MAX_GROUP,
    };
    Ok((0..n)
        .map(|i| if exact { exact_hyperedge(aff, i, j) } else { greedy_hyperedge(aff, i, j) })
        .collect())
}

/// Scale-0 pairs `{i, partner(i)}` with duplicates removed (first occurrence kept).
pub fn pairwise_groups(aff: &AffinityMatrix) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..aff.n() {
        if let Some(p) = best_partner(aff, i) {
            let pair = vec![i.min(p), i.max(p)];
            if !out.contains(&pair) {
                out.push(pair);
            }
        }
    }
    out
}

/// Scale 0 plus one scale per entry of `group_sizes` (which must be strictly
/// increasing, each within `[2, N]`). Node features are left empty (`[N × 0]`).
pub fn infer_hyperedges(aff: &AffinityMatrix, group_sizes: &[usize], mode: SelectionMode) -> Result<MultiScaleHypergraph> {
    if group_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CoreError::Config(format!("group sizes {group_sizes:?} must strictly increase")));
    }
    let n = aff.n();
    let empty = DenseArray::zeros(&[n, 0]);
    let mut scales = vec![ScaleHypergraph {
        scale: 0,
        group_size: 2,
        hypergraph: Hypergraph::new(&pairwise_groups(aff), empty.clone(), NodeKind::Agent, 1)?,
    }];
    for (s, &j) in group_sizes.iter().enumerate() {
        let groups = select_groups(aff, j, mode)?;
        scales.push(ScaleHypergraph {
            scale: s + 1,
            group_size: j,
            hypergraph: Hypergraph::new(&groups, empty.clone(), NodeKind::Agent, 1)?,
        });
    }
    Ok(MultiScaleHypergraph { scales })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_affinity() -> AffinityMatrix {
        AffinityMatrix::new(DenseArray::from_fn(&[6, 6], |ix| {
            if ix[0] == ix[1] {
                1.0
            } else if ix[0] / 3 == ix[1] / 3 {
                0.9
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn cosine_of_equal_and_orthogonal_rows() {
        let q = DenseArray::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let a = affinity(&q).unwrap();
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(0, 2), 0.0);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let q = DenseArray::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(affinity(&q), Err(CoreError::Degenerate(_))));
    }

    #[test]
    fn equal_affinities_pick_lowest_index() {
        let a = AffinityMatrix::new(DenseArray::ones(&[3, 3])).unwrap();
        assert_eq!(best_partner(&a, 0), Some(1));
        assert_eq!(best_partner(&a, 1), Some(0));
        assert_eq!(best_partner(&a, 2), Some(0));
        assert_eq!(pairwise_groups(&a), vec![vec![0, 1], vec![0, 2]]);
    }

    #[test]
    fn cliques_are_recovered() {
        let a = block_affinity();
        for mode in [SelectionMode::Exact, SelectionMode::Greedy] {
            let groups = select_groups(&a, 3, mode).unwrap();
            for (i, g) in groups.iter().enumerate() {
                let base = i / 3 * 3;
                assert_eq!(g, &vec![base, base + 1, base + 2]);
            }
        }
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut seen = Vec::new();
        for_each_combination(&[1, 3, 5, 7], 2, |c| seen.push(c.to_vec()));
        assert_eq!(
            seen,
            vec![vec![1, 3], vec![1, 5], vec![1, 7], vec![3, 5], vec![3, 7], vec![5, 7]]
        );
    }

    #[test]
    fn infeasible_sizes_are_config_errors() {
        let a = block_affinity();
        assert!(matches!(select_groups(&a, 7, SelectionMode::Exact), Err(CoreError::Config(_))));
        assert!(matches!(select_groups(&a, 1, SelectionMode::Exact), Err(CoreError::Config(_))));
        assert!(matches!(infer_hyperedges(&a, &[3, 3], SelectionMode::Exact), Err(CoreError::Config(_))));
        let big = AffinityMatrix::new(DenseArray::identity(13)).unwrap();
        assert!(select_groups(&big, 3, SelectionMode::Exact).is_err());
        assert!(select_groups(&big, 3, SelectionMode::Auto).is_ok());
    }

    #[test]
    fn multi_scale_column_sums() {
        let ms = infer_hyperedges(&block_affinity(), &[3, 4], SelectionMode::Exact).unwrap();
        ms.check().unwrap();
        assert_eq!(ms.n_scales(), 3);
        assert_eq!(ms.scales[2].hypergraph.n_hyperedges(), 6);
    }
}
