//! Posterior summaries of a chain trace: edge-feature probabilities,
//! CPDAGs, cross-run agreement, and ROC evaluation against a known truth.
//!
//! A CPDAG (completed partially directed acyclic graph) represents a
//! Markov equivalence class: its directed edges are compelled, shared by
//! every member of the class, and its undirected edges are reversible.
//! [`cpdag_of`] computes it from a single DAG with Chickering's
//! edge-ordering and labeling procedure, which the test suite checks
//! against brute-force enumeration of equivalence classes.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::graph::Dag;
use crate::sampler::Trace;
use crate::{Error, Result};

/// Which edge feature a posterior estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// Directed edge u → v present in the sampled DAG.
    Directed,
    /// Adjacency between u and v, either orientation.
    Undirected,
    /// Directed edge u → v compelled in the sampled DAG's CPDAG.
    Compelled,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Directed => "directed",
            FeatureKind::Undirected => "undirected",
            FeatureKind::Compelled => "compelled",
        })
    }
}

/// Posterior probability of an edge feature for every node pair.
///
/// `values[(u, v)]` is the estimated probability for the ordered pair
/// (u, v); undirected estimates are symmetric, and the diagonal is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEstimate {
    pub kind: FeatureKind,
    pub values: DMatrix<f64>,
}

impl FeatureEstimate {
    pub fn p(&self) -> usize {
        self.values.nrows()
    }
}

/// A Markov equivalence class: compelled edges stay directed, reversible
/// edges are recorded undirected with endpoints in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cpdag {
    p: usize,
    directed: BTreeSet<(usize, usize)>,
    undirected: BTreeSet<(usize, usize)>,
}

impl Cpdag {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn directed(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.directed.iter().copied()
    }

    pub fn undirected(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.undirected.iter().copied()
    }

    pub fn has_directed(&self, u: usize, v: usize) -> bool {
        self.directed.contains(&(u, v))
    }

    pub fn has_undirected(&self, u: usize, v: usize) -> bool {
        let key = (u.min(v), u.max(v));
        self.undirected.contains(&key)
    }

    pub fn edge_count(&self) -> usize {
        self.directed.len() + self.undirected.len()
    }

    /// "0->2 1--2" style listing, directed edges first.
    pub fn canonical_string(&self) -> String {
        let mut parts: Vec<String> =
            self.directed.iter().map(|(u, v)| format!("{u}->{v}")).collect();
        parts.extend(self.undirected.iter().map(|(u, v)| format!("{u}--{v}")));
        if parts.is_empty() {
            "-".to_string()
        } else {
            parts.join(" ")
        }
    }
}

/// Compute the CPDAG of a DAG.
///
/// Edges are first totally ordered (children by topological position,
/// ties broken by the parent's position, latest first) and then labeled
/// compelled or reversible by a single sweep that inspects compelled
/// in-edges of the tail and extra parents of the head.
pub fn cpdag_of(dag: &Dag) -> Cpdag {
    let topo = dag.topological_order();
    let mut pos = vec![0usize; dag.p()];
    for (idx, &v) in topo.iter().enumerate() {
        pos[v] = idx;
    }
    let mut edges: Vec<(usize, usize)> = dag.edge_vec();
    edges.sort_by_key(|&(x, y)| (pos[y], usize::MAX - pos[x]));

    #[derive(Clone, Copy, PartialEq)]
    enum Label {
        Unknown,
        Compelled,
        Reversible,
    }
    use Label::*;

    let mut label = vec![Unknown; edges.len()];
    let index_of = |x: usize, y: usize| edges.iter().position(|&e| e == (x, y));

    loop {
        let Some(lowest) = label.iter().position(|&l| l == Unknown) else {
            break;
        };
        let (x, y) = edges[lowest];
        let mut resolved = false;
        for &w in dag.parents(x) {
            let w_to_x = index_of(w, x).expect("edge list covers all edges");
            if label[w_to_x] != Compelled {
                continue;
            }
            if !dag.has_edge(w, y) {
                // w → x compelled and w is no parent of y: everything into
                // y is compelled.
                for (i, &(_, head)) in edges.iter().enumerate() {
                    if head == y {
                        debug_assert!(label[i] != Reversible);
                        label[i] = Compelled;
                    }
                }
                resolved = true;
                break;
            }
            let w_to_y = index_of(w, y).expect("w is a parent of y");
            label[w_to_y] = Compelled;
        }
        if resolved {
            continue;
        }
        // is there z → y with z ≠ x and z not a parent of x?
        let outside_parent = dag
            .parents(y)
            .iter()
            .any(|&z| z != x && !dag.has_edge(z, x));
        let new_label = if outside_parent { Compelled } else { Reversible };
        for (i, &(_, head)) in edges.iter().enumerate() {
            if head == y && label[i] == Unknown {
                label[i] = new_label;
            }
        }
    }

    let mut directed = BTreeSet::new();
    let mut undirected = BTreeSet::new();
    for (i, &(u, v)) in edges.iter().enumerate() {
        match label[i] {
            Compelled => {
                directed.insert((u, v));
            }
            Reversible => {
                undirected.insert((u.min(v), u.max(v)));
            }
            Unknown => unreachable!("labeling sweep terminates only when done"),
        }
    }
    Cpdag { p: dag.p(), directed, undirected }
}

fn counts_for(dag: &Dag, kind: FeatureKind, counts: &mut [u64], p: usize) {
    match kind {
        FeatureKind::Directed => {
            for (u, v) in dag.edges() {
                counts[u * p + v] += 1;
            }
        }
        FeatureKind::Undirected => {
            for (u, v) in dag.edges() {
                counts[u * p + v] += 1;
                counts[v * p + u] += 1;
            }
        }
        FeatureKind::Compelled => {
            for (u, v) in cpdag_of(dag).directed() {
                counts[u * p + v] += 1;
            }
        }
    }
}

/// Monte Carlo posterior probability of an edge feature, averaged over the
/// stored samples of a trace.
pub fn feature_posterior(trace: &Trace, kind: FeatureKind) -> Result<FeatureEstimate> {
    feature_posterior_with_threads(trace, kind, 1)
}

/// Same as [`feature_posterior`], counting samples in parallel chunks.
///
/// Results are bit-for-bit identical for every thread count: each chunk
/// accumulates integer counts and chunks are merged in order.
pub fn feature_posterior_with_threads(
    trace: &Trace,
    kind: FeatureKind,
    threads: usize,
) -> Result<FeatureEstimate> {
    if trace.samples.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let p = trace.p;
    let threads = threads.max(1).min(trace.samples.len());
    let chunk_len = trace.samples.len().div_ceil(threads);

    let mut totals = vec![0u64; p * p];
    if threads == 1 {
        for sample in &trace.samples {
            counts_for(&sample.dag(p), kind, &mut totals, p);
        }
    } else {
        let chunks: Vec<Vec<u64>> = std::thread::scope(|scope| {
            let handles: Vec<_> = trace
                .samples
                .chunks(chunk_len)
                .map(|chunk| {
                    scope.spawn(move || {
                        let mut counts = vec![0u64; p * p];
                        for sample in chunk {
                            counts_for(&sample.dag(p), kind, &mut counts, p);
                        }
                        counts
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("counting panicked")).collect()
        });
        for chunk in chunks {
            for (t, c) in totals.iter_mut().zip(chunk) {
                *t += c;
            }
        }
    }

    let n = trace.samples.len() as f64;
    let values = DMatrix::from_fn(p, p, |u, v| totals[u * p + v] as f64 / n);
    Ok(FeatureEstimate { kind, values })
}

/// Node pairs a feature kind is defined on: ordered pairs for directed
/// and compelled features, unordered (u < v) pairs for undirected ones.
pub fn feature_pairs(kind: FeatureKind, p: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for u in 0..p {
        for v in 0..p {
            if u == v {
                continue;
            }
            if kind == FeatureKind::Undirected && u > v {
                continue;
            }
            pairs.push((u, v));
        }
    }
    pairs
}

/// Pearson correlation between two estimates of the same feature kind,
/// taken over the relevant node pairs (ordered pairs, or unordered ones
/// for undirected features).
pub fn cross_run_correlation(a: &FeatureEstimate, b: &FeatureEstimate) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::invalid("feature comparison", "estimates have different kinds"));
    }
    if a.p() != b.p() {
        return Err(Error::invalid("feature comparison", "estimates have different sizes"));
    }
    let pairs = feature_pairs(a.kind, a.p());
    let xs: Vec<f64> = pairs.iter().map(|&(u, v)| a.values[(u, v)]).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(u, v)| b.values[(u, v)]).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Ground truth for ROC evaluation: a DAG works for every feature kind,
/// a CPDAG only for undirected and compelled features.
#[derive(Debug, Clone)]
pub enum Truth<'a> {
    Dag(&'a Dag),
    Cpdag(&'a Cpdag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// ROC curve of a feature estimate against a known truth, sweeping the
/// probability threshold. Ties are grouped, so the trapezoid area equals
/// the Mann–Whitney statistic with half-credit for ties.
pub fn roc_curve(est: &FeatureEstimate, truth: &Truth) -> Result<RocCurve> {
    let p = est.p();
    let truth_p = match truth {
        Truth::Dag(d) => d.p(),
        Truth::Cpdag(c) => c.p(),
    };
    if truth_p != p {
        return Err(Error::invalid("roc truth", "truth and estimate sizes differ"));
    }
    let label = |u: usize, v: usize| -> Result<bool> {
        Ok(match (est.kind, truth) {
            (FeatureKind::Directed, Truth::Dag(d)) => d.has_edge(u, v),
            (FeatureKind::Undirected, Truth::Dag(d)) => d.adjacent(u, v),
            (FeatureKind::Compelled, Truth::Dag(d)) => cpdag_of(d).has_directed(u, v),
            (FeatureKind::Undirected, Truth::Cpdag(c)) => {
                c.has_undirected(u, v) || c.has_directed(u, v) || c.has_directed(v, u)
            }
            (FeatureKind::Compelled, Truth::Cpdag(c)) => c.has_directed(u, v),
            (FeatureKind::Directed, Truth::Cpdag(_)) => {
                return Err(Error::invalid(
                    "roc truth",
                    "a CPDAG does not define directed-edge ground truth",
                ))
            }
        })
    };
    let mut scored = Vec::new();
    for (u, v) in feature_pairs(est.kind, p) {
        scored.push((est.values[(u, v)], label(u, v)?));
    }

    let pos = scored.iter().filter(|&&(_, l)| l).count();
    let neg = scored.len() - pos;
    if pos == 0 {
        return Err(Error::DegenerateTruth("positive"));
    }
    if neg == 0 {
        return Err(Error::DegenerateTruth("negative"));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auroc = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = points.last().copied().unwrap();
        let point = RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        };
        auroc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auroc })
}
