//! DAGs over integer-labeled nodes, permutations of those nodes, and the
//! transposition moves the sampler uses.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A directed acyclic graph over nodes `0..p`.
///
/// Edges are kept both as a sorted `(parent, child)` set and as per-node
/// parent sets so scoring gets O(log) parent access; the two views are kept
/// consistent by construction. Iteration order is deterministic everywhere.
#[derive(Clone, PartialEq, Eq)]
pub struct Dag {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
    parents: Vec<BTreeSet<usize>>,
}

impl Dag {
    /// The empty graph on `p` nodes.
    pub fn empty(p: usize) -> Self {
        Dag {
            p,
            edges: BTreeSet::new(),
            parents: vec![BTreeSet::new(); p],
        }
    }

    /// Builds a DAG from an edge list, validating ranges, simplicity, and
    /// acyclicity.
    pub fn from_edges(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut dag = Dag::empty(p);
        for (u, v) in edges {
            if u >= p || v >= p {
                return Err(Error::invalid(
                    "dag",
                    format!("edge ({u},{v}) out of range for p = {p}"),
                ));
            }
            if u == v {
                return Err(Error::invalid("dag", format!("self-loop at node {u}")));
            }
            if !dag.edges.insert((u, v)) {
                return Err(Error::invalid("dag", format!("duplicate edge ({u},{v})")));
            }
            dag.parents[v].insert(u);
        }
        if dag.kahn_order().is_none() {
            return Err(Error::invalid("dag", "edge set contains a cycle"));
        }
        Ok(dag)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as sorted `(parent, child)` pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_vec(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u, v))
    }

    /// Adjacent in either direction.
    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.has_edge(u, v) || self.has_edge(v, u)
    }

    pub fn parents(&self, v: usize) -> &BTreeSet<usize> {
        &self.parents[v]
    }

    pub fn parents_sorted(&self, v: usize) -> Vec<usize> {
        self.parents[v].iter().copied().collect()
    }

    /// Children of `u`, ascending.
    pub fn children(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .range((u, 0)..=(u, usize::MAX))
            .map(|&(_, v)| v)
    }

    /// Inserts an edge. The caller is responsible for acyclicity; the
    /// I-MAP builders only ever add edges that point forward in a fixed
    /// permutation, which cannot create a cycle.
    pub(crate) fn insert_edge(&mut self, u: usize, v: usize) {
        debug_assert!(u < self.p && v < self.p && u != v);
        if self.edges.insert((u, v)) {
            self.parents[v].insert(u);
        }
    }

    pub(crate) fn remove_edge(&mut self, u: usize, v: usize) {
        if self.edges.remove(&(u, v)) {
            self.parents[v].remove(&u);
        }
    }

    /// A topological order of the nodes, smallest-index-first among ties.
    pub fn topological_order(&self) -> Vec<usize> {
        self.kahn_order().expect("a Dag is acyclic by construction")
    }

    /// Kahn's algorithm; `None` if the edge set has a cycle. Used during
    /// construction, before acyclicity is established.
    fn kahn_order(&self) -> Option<Vec<usize>> {
        let mut indeg: Vec<usize> = (0..self.p).map(|v| self.parents[v].len()).collect();
        let mut queue: BTreeSet<usize> = (0..self.p).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(self.p);
        while let Some(&v) = queue.iter().next() {
            queue.remove(&v);
            order.push(v);
            for c in self.children(v) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.insert(c);
                }
            }
        }
        (order.len() == self.p).then_some(order)
    }

    /// Nodes reachable from `v` by a directed path of length ≥ 1.
    pub fn descendants(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.children(v).collect();
        while let Some(u) = stack.pop() {
            if seen.insert(u) {
                stack.extend(self.children(u));
            }
        }
        seen
    }

    /// Nodes with a directed path of length ≥ 1 into `v`.
    pub fn ancestors(&self, v: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.parents[v].iter().copied().collect();
        while let Some(u) = stack.pop() {
            if seen.insert(u) {
                stack.extend(self.parents[u].iter().copied());
            }
        }
        seen
    }

    /// Canonical one-line form, e.g. `"0->2 1->2"`; empty graphs print `"-"`.
    pub fn canonical_string(&self) -> String {
        if self.edges.is_empty() {
            return "-".to_string();
        }
        let parts: Vec<String> = self
            .edges
            .iter()
            .map(|&(u, v)| format!("{u}->{v}"))
            .collect();
        parts.join(" ")
    }

    /// Asserts the redundant edge/parent views agree and the graph is
    /// acyclic. Debug builds only; used by sampler spot checks.
    #[cfg(debug_assertions)]
    pub(crate) fn debug_validate(&self) {
        for &(u, v) in &self.edges {
            assert!(self.parents[v].contains(&u));
        }
        let parent_edges: usize = self.parents.iter().map(|s| s.len()).sum();
        assert_eq!(parent_edges, self.edges.len());
        assert!(self.kahn_order().is_some(), "cycle in dag");
    }
}

impl fmt::Debug for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dag(p={}, {})", self.p, self.canonical_string())
    }
}

/// A total order on `0..p`; the state of the sampler.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    order: Vec<usize>,
    pos: Vec<usize>,
}

impl Permutation {
    pub fn identity(p: usize) -> Self {
        Permutation {
            order: (0..p).collect(),
            pos: (0..p).collect(),
        }
    }

    /// Validates that `order` is a bijection on `0..p`.
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let p = order.len();
        let mut pos = vec![usize::MAX; p];
        for (i, &v) in order.iter().enumerate() {
            if v >= p {
                return Err(Error::invalid(
                    "permutation",
                    format!("entry {v} out of range for p = {p}"),
                ));
            }
            if pos[v] != usize::MAX {
                return Err(Error::invalid("permutation", format!("node {v} repeated")));
            }
            pos[v] = i;
        }
        Ok(Permutation { order, pos })
    }

    pub fn random<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(rng);
        Permutation::from_order(order).expect("shuffled identity is a bijection")
    }

    pub fn p(&self) -> usize {
        self.order.len()
    }

    /// Node at position `i`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of node `v`.
    pub fn position(&self, v: usize) -> usize {
        self.pos[v]
    }

    fn swap_positions(&mut self, a: usize, b: usize) {
        self.order.swap(a, b);
        self.pos[self.order[a]] = a;
        self.pos[self.order[b]] = b;
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Permutation({:?})", self.order)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;
    fn try_from(order: Vec<usize>) -> Result<Self> {
        Permutation::from_order(order)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(perm: Permutation) -> Vec<usize> {
        perm.order
    }
}

/// A sampler move on permutations.
///
/// `Adjacent(k)` swaps the nodes at positions `k` and `k + 1` (0-based,
/// `k <= p − 2`). `FirstLast` swaps the first and last positions; it is
/// counted as one more "adjacent" move so every node can cross the order
/// boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transposition {
    Adjacent(usize),
    FirstLast,
}

/// Returns the permutation with `t` applied; applying the same move twice
/// gives back the original.
pub fn apply_transposition(perm: &Permutation, t: Transposition) -> Permutation {
    let p = perm.p();
    let mut out = perm.clone();
    match t {
        Transposition::Adjacent(k) => {
            assert!(k + 1 < p, "adjacent swap position {k} out of range");
            out.swap_positions(k, k + 1);
        }
        Transposition::FirstLast => {
            assert!(p >= 2);
            out.swap_positions(0, p - 1);
        }
    }
    out
}

/// Classifies how `new` differs from `old`: `None` when they are equal,
/// the transposition when they differ by exactly one move, and
/// `Err(NotAdjacent)` otherwise. For p = 2 the swap is reported as
/// `Adjacent(0)`.
pub fn transposition_between(old: &Permutation, new: &Permutation) -> Result<Transposition> {
    let p = old.p();
    if new.p() != p {
        return Err(Error::NotAdjacent);
    }
    let diff: Vec<usize> = (0..p).filter(|&i| old.order[i] != new.order[i]).collect();
    match diff.as_slice() {
        [a, b] if *b == a + 1 && old.order[*a] == new.order[*b] && old.order[*b] == new.order[*a] => {
            Ok(Transposition::Adjacent(*a))
        }
        [a, b]
            if *a == 0
                && *b == p - 1
                && old.order[0] == new.order[p - 1]
                && old.order[p - 1] == new.order[0] =>
        {
            Ok(Transposition::FirstLast)
        }
        _ => Err(Error::NotAdjacent),
    }
}
