//! Brute-force exact computations on small instances.
//!
//! These are the reference answers the sampler and the CPDAG code are
//! validated against: the exact minimal I-MAP posterior by enumeration of
//! all p! permutations, the exact posterior over all labeled DAGs for tiny
//! p, and Markov equivalence classes by exhaustive orientation search.
//!
//! On weighting: the minimal I-MAP posterior here gives each distinct DAG
//! in the image of the I-MAP construction mass proportional to its own
//! score, with deduplication across the permutations that map to it. The
//! chain, which walks on permutations, has a stationary marginal over DAGs
//! that additionally weights each DAG by the number of permutations
//! mapping to it; [`ExactPosterior::permutation_marginal`] computes that
//! variant so the two laws can be compared directly. They coincide when
//! the posterior concentrates, which is the regime the sampler is checked
//! in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::ci::CiCache;
use crate::data::{compute_suffstats, Dataset};
use crate::estimate::{FeatureEstimate, FeatureKind};
use crate::graph::{Dag, Permutation};
use crate::imap::build_min_imap;
use crate::score::{BgeHyper, PriorSpec, ScoreCache};
use crate::{Error, Result};

/// One DAG of an exact posterior support.
#[derive(Debug, Clone)]
pub struct PosteriorEntry {
    pub dag: Dag,
    /// Unnormalized log posterior (log marginal likelihood + log prior).
    pub log_score: f64,
    /// Normalized probability, each DAG counted once.
    pub prob: f64,
    /// Number of permutations mapping to this DAG (1 in full-DAG
    /// enumerations).
    pub mult: u64,
}

/// An exhaustively enumerated posterior over DAGs.
///
/// Entries are sorted by canonical edge-list string; probabilities sum to
/// one by construction via log-sum-exp.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    p: usize,
    entries: Vec<PosteriorEntry>,
    log_normalizer: f64,
}

impl ExactPosterior {
    /// Normalize a set of scored DAGs into a posterior. Every DAG must
    /// appear once and share the same node count.
    pub fn from_log_scored(p: usize, scored: Vec<(Dag, f64, u64)>) -> Result<Self> {
        if scored.is_empty() {
            return Err(Error::invalid("exact posterior", "support must be nonempty"));
        }
        let mut entries: Vec<PosteriorEntry> = scored
            .into_iter()
            .map(|(dag, log_score, mult)| {
                if dag.p() != p {
                    return Err(Error::invalid("exact posterior", "mixed node counts"));
                }
                Ok(PosteriorEntry { dag, log_score, prob: 0.0, mult })
            })
            .collect::<Result<_>>()?;
        entries.sort_by(|a, b| a.dag.canonical_string().cmp(&b.dag.canonical_string()));
        for pair in entries.windows(2) {
            if pair[0].dag.canonical_string() == pair[1].dag.canonical_string() {
                return Err(Error::invalid("exact posterior", "duplicate DAG in support"));
            }
        }
        let log_normalizer = log_sum_exp(entries.iter().map(|e| e.log_score));
        for e in &mut entries {
            e.prob = (e.log_score - log_normalizer).exp();
        }
        Ok(ExactPosterior { p, entries, log_normalizer })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PosteriorEntry] {
        &self.entries
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    fn entry_of(&self, dag: &Dag) -> Option<&PosteriorEntry> {
        let key = dag.canonical_string();
        self.entries
            .binary_search_by(|e| e.dag.canonical_string().cmp(&key))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Probability of a DAG, zero when it lies outside the support.
    pub fn prob_of(&self, dag: &Dag) -> f64 {
        self.entry_of(dag).map_or(0.0, |e| e.prob)
    }

    pub fn log_score_of(&self, dag: &Dag) -> Option<f64> {
        self.entry_of(dag).map(|e| e.log_score)
    }

    /// Canonical-edge-string → probability view, the JSON dump layout.
    pub fn canonical_map(&self) -> BTreeMap<String, f64> {
        self.entries
            .iter()
            .map(|e| (e.dag.canonical_string(), e.prob))
            .collect()
    }

    /// The DAG marginal of the permutation-space law: each DAG weighted by
    /// score times the number of permutations mapping to it. See the
    /// module docs for when this differs from `prob`.
    pub fn permutation_marginal(&self) -> BTreeMap<String, f64> {
        let log_norm = log_sum_exp(
            self.entries
                .iter()
                .map(|e| e.log_score + (e.mult as f64).ln()),
        );
        self.entries
            .iter()
            .map(|e| {
                let lw = e.log_score + (e.mult as f64).ln() - log_norm;
                (e.dag.canonical_string(), lw.exp())
            })
            .collect()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.canonical_map())?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn log_sum_exp(terms: impl IntoIterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
}

/// Exact minimal I-MAP posterior: build the I-MAP of every permutation,
/// deduplicate, score each distinct DAG once, and normalize.
pub fn exact_min_imap_posterior(
    data: &Dataset,
    alpha: f64,
    hyper: &BgeHyper,
    prior: &PriorSpec,
) -> Result<ExactPosterior> {
    let p = data.p();
    if p > 8 {
        return Err(Error::TooLarge { what: "exact minimal I-MAP posterior", p, limit: 8 });
    }
    prior.validate_for(p)?;
    let stats = compute_suffstats(data)?;
    let mut cache = CiCache::new(alpha);

    let mut support: HashMap<String, (Dag, u64)> = HashMap::new();
    for order in (0..p).permutations(p) {
        let perm = Permutation::from_order(order)?;
        let dag = build_min_imap(&perm, &mut cache, &stats)?;
        support
            .entry(dag.canonical_string())
            .and_modify(|(_, mult)| *mult += 1)
            .or_insert((dag, 1));
    }

    let mut scores = ScoreCache::new();
    let scored = support
        .into_values()
        .map(|(dag, mult)| {
            let s = scores.log_posterior(&dag, &stats, hyper, prior)?;
            Ok((dag, s, mult))
        })
        .collect::<Result<Vec<_>>>()?;
    ExactPosterior::from_log_scored(p, scored)
}

/// Exact posterior over every labeled DAG, tractable for p ≤ 4 only
/// (543 DAGs at p = 4).
pub fn exact_full_dag_posterior(
    data: &Dataset,
    hyper: &BgeHyper,
    prior: &PriorSpec,
) -> Result<ExactPosterior> {
    let p = data.p();
    if p > 4 {
        return Err(Error::TooLarge { what: "exact full-DAG posterior", p, limit: 4 });
    }
    prior.validate_for(p)?;
    let stats = compute_suffstats(data)?;
    let mut scores = ScoreCache::new();
    let scored = all_dags(p)?
        .into_iter()
        .map(|dag| {
            let s = scores.log_posterior(&dag, &stats, hyper, prior)?;
            Ok((dag, s, 1))
        })
        .collect::<Result<Vec<_>>>()?;
    ExactPosterior::from_log_scored(p, scored)
}

/// Every labeled DAG on p nodes, by assigning each unordered node pair one
/// of {absent, forward, backward} and keeping the acyclic results. Counts
/// grow super-exponentially (543 at p = 4, 29281 at p = 5), hence the
/// guard.
pub fn all_dags(p: usize) -> Result<Vec<Dag>> {
    if p > 5 {
        return Err(Error::TooLarge { what: "DAG enumeration", p, limit: 5 });
    }
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|u| ((u + 1)..p).map(move |v| (u, v)))
        .collect();
    let mut dags = Vec::new();
    let mut choice = vec![0u8; pairs.len()];
    loop {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .zip(&choice)
            .filter_map(|(&(u, v), &c)| match c {
                0 => None,
                1 => Some((u, v)),
                _ => Some((v, u)),
            })
            .collect();
        if let Ok(dag) = Dag::from_edges(p, edges) {
            dags.push(dag);
        }
        // advance the base-3 counter
        let mut i = 0;
        loop {
            if i == choice.len() {
                return Ok(dags);
            }
            choice[i] += 1;
            if choice[i] < 3 {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

/// Unordered adjacency pairs of a DAG.
pub fn skeleton(dag: &Dag) -> BTreeSet<(usize, usize)> {
    dag.edges().map(|(u, v)| (u.min(v), u.max(v))).collect()
}

/// V-structures u → v ← w with u, w nonadjacent, reported as
/// (min(u, w), max(u, w), v).
pub fn v_structures(dag: &Dag) -> BTreeSet<(usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for v in 0..dag.p() {
        let parents: Vec<usize> = dag.parents(v).iter().copied().collect();
        for (a, &u) in parents.iter().enumerate() {
            for &w in &parents[a + 1..] {
                if !dag.adjacent(u, w) {
                    out.insert((u.min(w), u.max(w), v));
                }
            }
        }
    }
    out
}

/// The Markov equivalence class of a DAG, by trying every orientation of
/// its skeleton and keeping the acyclic ones with identical v-structures.
/// Exponential in the edge count, hence the guard.
pub fn markov_equivalence_class(dag: &Dag) -> Result<Vec<Dag>> {
    let pairs: Vec<(usize, usize)> = skeleton(dag).into_iter().collect();
    if pairs.len() > 16 {
        return Err(Error::TooLarge {
            what: "equivalence-class enumeration",
            p: pairs.len(),
            limit: 16,
        });
    }
    let target = v_structures(dag);
    let mut class = Vec::new();
    for mask in 0u32..(1 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| if mask >> i & 1 == 0 { (u, v) } else { (v, u) })
            .collect();
        let Ok(candidate) = Dag::from_edges(dag.p(), edges) else {
            continue;
        };
        if v_structures(&candidate) == target {
            class.push(candidate);
        }
    }
    debug_assert!(class.iter().any(|g| g.canonical_string() == dag.canonical_string()));
    Ok(class)
}

/// Exact directed-edge posterior probabilities under an enumerated
/// posterior.
pub fn edge_probs_of(post: &ExactPosterior) -> FeatureEstimate {
    let p = post.p();
    let mut values = DMatrix::zeros(p, p);
    for entry in post.entries() {
        for (u, v) in entry.dag.edges() {
            values[(u, v)] += entry.prob;
        }
    }
    FeatureEstimate { kind: FeatureKind::Directed, values }
}
