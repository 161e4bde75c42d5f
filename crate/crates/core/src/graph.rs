//! Latent causal graphs over sequence positions.
//!
//! Positions are 0-indexed in the API (`0..T`); the JSON format is 1-indexed.
//! A single-parent graph is a forest whose edges point forward in time, and
//! the last position `T−1` is always a root because its token is resampled
//! uniformly by the task.

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Undirected path length, or `Infinite` between different trees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Distance {
    Finite(usize),
    Infinite,
}

impl Distance {
    pub fn finite(self) -> Option<usize> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Infinite => None,
        }
    }

    /// `λ^d` with `λ^∞ = 0`.
    pub fn power(self, lambda: f64) -> f64 {
        match self {
            Distance::Finite(d) => lambda.powi(d as i32),
            Distance::Infinite => 0.0,
        }
    }
}

/// Single-parent causal DAG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CausalGraph {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    tree: Vec<usize>,
    depth: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    #[serde(rename = "T")]
    length: usize,
    parents: Vec<Option<usize>>,
}

impl CausalGraph {
    pub fn new(parents: Vec<Option<usize>>) -> Result<Self> {
        let t = parents.len();
        if t < 3 {
            return Err(Error::Construction(format!("sequence length must be at least 3, got {t}")));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= i {
                    return Err(Error::Construction(format!(
                        "position {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        if parents[t - 1].is_some() {
            return Err(Error::Construction("the last position must be a root".into()));
        }
        let mut children = vec![Vec::new(); t];
        let mut tree = vec![0; t];
        let mut depth = vec![0; t];
        for i in 0..t {
            match parents[i] {
                Some(p) => {
                    children[p].push(i);
                    tree[i] = tree[p];
                    depth[i] = depth[p] + 1;
                }
                None => tree[i] = i,
            }
        }
        Ok(Self {
            parents,
            children,
            tree,
            depth,
        })
    }

    /// `p(i) = i−1` for `i < T−1`.
    pub fn chain(t: usize) -> Result<Self> {
        Self::new((0..t).map(|i| (i > 0 && i + 1 < t).then(|| i - 1)).collect())
    }

    /// Odd (1-indexed) positions are roots and each even position copies its predecessor.
    pub fn icl(t: usize) -> Result<Self> {
        Self::new((0..t).map(|i| (i % 2 == 1 && i + 1 < t).then(|| i - 1)).collect())
    }

    /// Every position is a root.
    pub fn all_roots(t: usize) -> Result<Self> {
        Self::new(vec![None; t])
    }

    /// Positions `1..T−1` are all children of position 0.
    pub fn star(t: usize) -> Result<Self> {
        Self::new((0..t).map(|i| (i > 0 && i + 1 < t).then_some(0)).collect())
    }

    /// The six-position example with `p = [∅, 1, 1, 2, 3, ∅]` (1-indexed).
    pub fn figure_one() -> Self {
        Self::new(vec![None, Some(0), Some(0), Some(1), Some(2), None]).expect("valid graph")
    }

    /// Each position after the first is a root with probability `root_prob`,
    /// otherwise its parent is uniform over earlier positions. The last
    /// position is always made a root.
    pub fn random(t: usize, root_prob: f64, rng: &mut Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&root_prob) {
            return Err(Error::Construction(format!("root probability {root_prob} outside [0,1]")));
        }
        if t < 3 {
            return Err(Error::Construction(format!("sequence length must be at least 3, got {t}")));
        }
        let mut parents = vec![None; t];
        for (i, slot) in parents.iter_mut().enumerate().skip(1) {
            let is_root = rng.random_bool(root_prob);
            let parent = rng.random_range(0..i);
            if !is_root && i + 1 < t {
                *slot = Some(parent);
            }
        }
        Self::new(parents)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    #[inline]
    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parents[i].is_none()).collect()
    }

    pub fn non_roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parents[i].is_some()).collect()
    }

    /// `(parent, child)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.len()).filter_map(|i| self.parents[i].map(|p| (p, i))).collect()
    }

    /// Root of the tree containing `i`.
    pub fn tree_of(&self, i: usize) -> usize {
        self.tree[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// Trees as sorted node lists, ordered by root.
    pub fn trees(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut index = vec![usize::MAX; self.len()];
        for i in 0..self.len() {
            let r = self.tree[i];
            if index[r] == usize::MAX {
                index[r] = out.len();
                out.push(Vec::new());
            }
            out[index[r]].push(i);
        }
        out
    }

    /// Fraction of root positions `|R| / T`.
    pub fn root_fraction(&self) -> f64 {
        self.roots().len() as f64 / self.len() as f64
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Closest common ancestor of `i` and `j` (a node counts as its own ancestor).
    pub fn least_common_ancestor(&self, i: usize, j: usize) -> Result<Option<usize>> {
        self.check_index(i)?;
        self.check_index(j)?;
        if self.tree[i] != self.tree[j] {
            return Ok(None);
        }
        let (mut a, mut b) = (i, j);
        while self.depth[a] > self.depth[b] {
            a = self.parents[a].expect("non-root above depth 0");
        }
        while self.depth[b] > self.depth[a] {
            b = self.parents[b].expect("non-root above depth 0");
        }
        while a != b {
            a = self.parents[a].expect("same tree");
            b = self.parents[b].expect("same tree");
        }
        Ok(Some(a))
    }

    pub fn distance(&self, i: usize, j: usize) -> Result<Distance> {
        Ok(match self.least_common_ancestor(i, j)? {
            Some(k) => Distance::Finite(self.depth[i] + self.depth[j] - 2 * self.depth[k]),
            None => Distance::Infinite,
        })
    }

    /// All-pairs distance table.
    pub fn distance_table(&self) -> Vec<Vec<Distance>> {
        let t = self.len();
        (0..t)
            .map(|i| (0..t).map(|j| self.distance(i, j).expect("in range")).collect())
            .collect()
    }

    /// Childless nodes per tree, in the order of [`CausalGraph::trees`].
    pub fn leaves_per_tree(&self) -> Vec<usize> {
        self.trees()
            .iter()
            .map(|nodes| nodes.iter().filter(|&&i| self.children[i].is_empty()).count())
            .collect()
    }

    /// Nodes of undirected degree at most one per tree (an isolated root counts once).
    pub fn undirected_leaves_per_tree(&self) -> Vec<usize> {
        self.trees()
            .iter()
            .map(|nodes| {
                nodes
                    .iter()
                    .filter(|&&i| self.children[i].len() + usize::from(self.parents[i].is_some()) <= 1)
                    .count()
            })
            .collect()
    }

    /// `T / max_i L'_i` with undirected leaf counts; `T_eff(λ) ≥ (1−λ)` times this always holds.
    pub fn t_eff_undirected(&self) -> f64 {
        let max = self.undirected_leaves_per_tree().into_iter().max().expect("at least one tree");
        self.len() as f64 / max as f64
    }

    pub fn stats(&self) -> GraphStats {
        let leaves = self.leaves_per_tree();
        let max_leaves = *leaves.iter().max().expect("at least one tree");
        GraphStats {
            tree_count: leaves.len(),
            t_eff: self.len() as f64 / max_leaves as f64,
            root_fraction: self.root_fraction(),
            leaves_per_tree: leaves,
        }
    }

    /// `T² / Σ_{i,j} λ^{d(i,j)}`.
    pub fn effective_length_lambda(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Domain(format!("λ must lie in (0,1), got {lambda}")));
        }
        let t = self.len();
        let mut total = 0.0;
        for i in 0..t {
            for j in 0..t {
                total += self.distance(i, j)?.power(lambda);
            }
        }
        Ok((t * t) as f64 / total)
    }

    /// Parent map as a BFS over the undirected forest, used as an independent
    /// distance route.
    pub fn bfs_distances(&self, source: usize) -> Vec<Distance> {
        let t = self.len();
        let mut dist = vec![Distance::Infinite; t];
        let mut queue = VecDeque::from([source]);
        dist[source] = Distance::Finite(0);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].finite().unwrap();
            let nbrs = self.children[u].iter().copied().chain(self.parents[u]);
            for v in nbrs {
                if dist[v] == Distance::Infinite {
                    dist[v] = Distance::Finite(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&GraphJson {
            length: self.len(),
            parents: self.parents.iter().map(|p| p.map(|p| p + 1)).collect(),
        })
        .expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: GraphJson = serde_json::from_str(text)?;
        if parsed.parents.len() != parsed.length {
            return Err(Error::Format("graph parent list length differs from T".into()));
        }
        let parents = parsed
            .parents
            .into_iter()
            .map(|p| match p {
                Some(0) => Err(Error::Format("positions are 1-indexed".into())),
                Some(p) => Ok(Some(p - 1)),
                None => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parents)
    }
}

/// Tree decomposition summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub tree_count: usize,
    pub leaves_per_tree: Vec<usize>,
    /// `T / max_i L_i`.
    pub t_eff: f64,
    /// `|R| / T`.
    pub root_fraction: f64,
}

/// Graph over positions `0..=T` where each position has either no parents or
/// exactly `k` strictly increasing parents, and the target position `T` has parents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiParentGraph {
    arity: usize,
    parents: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MultiGraphJson {
    #[serde(rename = "T")]
    length: usize,
    k: usize,
    parents: Vec<Vec<usize>>,
}

impl MultiParentGraph {
    /// `parents` has length `T+1`; the last entry belongs to the target.
    pub fn new(arity: usize, parents: Vec<Vec<usize>>) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Construction("arity must be positive".into()));
        }
        if parents.len() < 4 {
            return Err(Error::Construction("need at least T=3 positions plus the target".into()));
        }
        for (i, p) in parents.iter().enumerate() {
            if !(p.is_empty() || p.len() == arity) {
                return Err(Error::Construction(format!(
                    "position {i} has {} parents; expected 0 or {arity}",
                    p.len()
                )));
            }
            if p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Construction(format!("parents of {i} are not strictly increasing")));
            }
            if p.last().is_some_and(|&q| q >= i) {
                return Err(Error::Construction(format!("position {i} has a parent not before it")));
            }
        }
        if parents.last().unwrap().is_empty() {
            return Err(Error::Construction("the target position must have parents".into()));
        }
        Ok(Self { arity, parents })
    }

    /// `n`-gram graph: position `i ≥ n−1` depends on the previous `n−1` positions.
    pub fn ngram(t: usize, n: usize) -> Result<Self> {
        if n < 2 || t + 1 <= n {
            return Err(Error::Construction(format!("n-gram needs n >= 2 and T+1 > n (T={t}, n={n})")));
        }
        let k = n - 1;
        let parents = (0..=t)
            .map(|i| if i >= k { (i - k..i).collect() } else { Vec::new() })
            .collect();
        Self::new(k, parents)
    }

    /// Arity-1 view of a single-parent graph with the target attached to `T−1`.
    pub fn from_single(graph: &CausalGraph) -> Self {
        let t = graph.len();
        let mut parents: Vec<Vec<usize>> = graph.parents().iter().map(|p| p.iter().copied().collect()).collect();
        parents.push(vec![t - 1]);
        Self { arity: 1, parents }
    }

    /// Sequence length `T` (the target position excluded).
    pub fn seq_len(&self) -> usize {
        self.parents.len() - 1
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn target_parents(&self) -> &[usize] {
        self.parents.last().unwrap()
    }

    pub fn is_root(&self, i: usize) -> bool {
        self.parents[i].is_empty()
    }

    /// Non-root positions among `0..T`.
    pub fn non_roots(&self) -> Vec<usize> {
        (0..self.seq_len()).filter(|&i| !self.is_root(i)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&MultiGraphJson {
            length: self.seq_len(),
            k: self.arity,
            parents: self
                .parents
                .iter()
                .map(|p| p.iter().map(|q| q + 1).collect())
                .collect(),
        })
        .expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: MultiGraphJson = serde_json::from_str(text)?;
        if parsed.parents.len() != parsed.length + 1 {
            return Err(Error::Format("multi-parent graph needs T+1 parent lists".into()));
        }
        let parents = parsed
            .parents
            .into_iter()
            .map(|p| {
                p.into_iter()
                    .map(|q| q.checked_sub(1).ok_or_else(|| Error::Format("positions are 1-indexed".into())))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed.k, parents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn named_families() {
        let c = CausalGraph::chain(5).unwrap();
        assert_eq!(c.parents(), &[None, Some(0), Some(1), Some(2), None]);
        let icl = CausalGraph::icl(6).unwrap();
        assert_eq!(icl.parents(), &[None, Some(0), None, Some(2), None, None]);
        let ng = MultiParentGraph::ngram(6, 3).unwrap();
        assert_eq!(ng.arity(), 2);
        assert!(ng.parents(0).is_empty() && ng.parents(1).is_empty());
        for i in 2..=6 {
            assert_eq!(ng.parents(i), &[i - 2, i - 1]);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(CausalGraph::chain(2).is_err());
        assert!(MultiParentGraph::ngram(2, 3).is_err());
        assert!(MultiParentGraph::ngram(6, 1).is_err());
        assert!(CausalGraph::new(vec![None, Some(1), None]).is_err());
        assert!(CausalGraph::new(vec![None, Some(0), Some(1)]).is_err());
        assert!(MultiParentGraph::new(2, vec![vec![], vec![], vec![0, 1], vec![]]).is_err());
        assert!(MultiParentGraph::new(2, vec![vec![], vec![], vec![1, 0], vec![1, 2]]).is_err());
    }

    #[test]
    fn distances_and_ancestors() {
        let icl = CausalGraph::icl(6).unwrap();
        assert_eq!(icl.distance(0, 1).unwrap(), Distance::Finite(1));
        assert_eq!(icl.distance(0, 2).unwrap(), Distance::Infinite);
        assert_eq!(icl.distance(3, 3).unwrap(), Distance::Finite(0));
        let fig = CausalGraph::figure_one();
        assert_eq!(fig.least_common_ancestor(3, 4).unwrap(), Some(0));
        assert_eq!(fig.distance(3, 4).unwrap(), Distance::Finite(4));
        let chain = CausalGraph::chain(6).unwrap();
        assert_eq!(chain.least_common_ancestor(1, 4).unwrap(), Some(1));
        assert!(chain.distance(9, 0).is_err());
    }

    #[test]
    fn effective_lengths() {
        assert_eq!(CausalGraph::chain(20).unwrap().stats().t_eff, 20.0);
        assert_eq!(CausalGraph::icl(20).unwrap().stats().t_eff, 20.0);
        let stats = CausalGraph::all_roots(7).unwrap().stats();
        assert_eq!(stats.tree_count, 7);
        assert_eq!(stats.root_fraction, 1.0);
    }

    #[test]
    fn childless_leaf_bound_fails_on_a_path() {
        // a path has one sink but two ends; the middle sees two nodes at each distance
        let g = CausalGraph::chain(5).unwrap();
        assert_eq!(g.undirected_leaves_per_tree(), vec![2, 1]);
        let lam = 0.1;
        let te = g.effective_length_lambda(lam).unwrap();
        assert!(te < (1.0 - lam) * g.stats().t_eff);
        assert!(te >= (1.0 - lam) * g.t_eff_undirected());
    }

    #[test]
    fn json_is_one_indexed() {
        let g = CausalGraph::figure_one();
        let text = g.to_json();
        assert_eq!(text, r#"{"T":6,"parents":[null,1,1,2,3,null]}"#);
        assert_eq!(CausalGraph::from_json(&text).unwrap(), g);
        let ng = MultiParentGraph::ngram(5, 3).unwrap();
        assert_eq!(MultiParentGraph::from_json(&ng.to_json()).unwrap(), ng);
    }

    #[test]
    fn random_graph_last_position_is_root() {
        let mut rng = seeded(4);
        for _ in 0..50 {
            let g = CausalGraph::random(12, 0.1, &mut rng).unwrap();
            assert!(g.parent(11).is_none());
            assert_eq!(g.edges().len(), 12 - g.roots().len());
        }
    }
}
