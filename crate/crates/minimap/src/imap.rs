//! Minimal I-MAP construction from CI outcomes, and the incremental update
//! that makes adjacent-transposition moves cheap.

use crate::ci::{CiCache, CiKey, CiTester, SampleCi};
use crate::data::SuffStats;
use crate::graph::{transposition_between, Dag, Permutation, Transposition};
use crate::Result;

pub use crate::graph::apply_transposition;

/// Builds the minimal I-MAP of `perm` from the Fisher-z outcomes in `cache`.
///
/// See [`build_min_imap_with`] for the construction; this is the everyday
/// entry point over sample statistics.
pub fn build_min_imap(perm: &Permutation, cache: &mut CiCache, stats: &SuffStats) -> Result<Dag> {
    build_min_imap_with(perm, &mut SampleCi { stats, cache })
}

/// Builds the minimal I-MAP of `perm` against an arbitrary CI tester.
///
/// For every pair of positions i < j the edge perm[i] → perm[j] is present
/// iff the tester declares the two nodes dependent given all other nodes
/// before position j. Exactly p(p−1)/2 queries are issued, and the result
/// is topologically consistent with `perm` by construction.
pub fn build_min_imap_with(perm: &Permutation, ci: &mut impl CiTester) -> Result<Dag> {
    let p = perm.p();
    debug_assert_eq!(p, ci.p());
    let order = perm.order();
    let mut dag = Dag::empty(p);
    for j in 1..p {
        let v = order[j];
        for i in 0..j {
            let u = order[i];
            let s = order[..j].iter().copied().filter(|&w| w != u);
            if ci.dependent(&CiKey::new(u, v, s))? {
                dag.insert_edge(u, v);
            }
        }
    }
    #[cfg(debug_assertions)]
    dag.debug_validate();
    Ok(dag)
}

/// Updates a minimal I-MAP across one transposition, against sample
/// statistics. See [`umi_update_with`].
pub fn umi_update(
    new: &Permutation,
    old: &Permutation,
    old_dag: &Dag,
    cache: &mut CiCache,
    stats: &SuffStats,
) -> Result<Dag> {
    umi_update_with(new, old, old_dag, &mut SampleCi { stats, cache })
}

/// Updates `old_dag` = minimal I-MAP of `old` into the minimal I-MAP of
/// `new`, where the permutations differ by exactly one transposition.
///
/// A first/last wrap changes conditioning sets everywhere, so it falls back
/// to a full rebuild. For an adjacent swap at positions (k, k+1) only the
/// local neighborhood changes:
///
/// 1. the edge between the two swapped nodes, if present, is reversed
///    (its defining conditioning set is the same in both orders), and
/// 2. for each of the k predecessor nodes w, the edges w → (node now at k)
///    and w → (node now at k+1) are re-decided, because those two nodes'
///    prefix sets gained or lost the other swapped node.
///
/// Everything else keeps its defining query: prefixes before the swap are
/// untouched and prefixes after it change order but not membership. Costs
/// at most 2k CI queries; returns exactly `build_min_imap(new, ..)`.
///
/// Errors with [`crate::Error::NotAdjacent`] when the permutations are
/// equal or differ by more than one transposition.
pub fn umi_update_with(
    new: &Permutation,
    old: &Permutation,
    old_dag: &Dag,
    ci: &mut impl CiTester,
) -> Result<Dag> {
    let t = transposition_between(old, new)?;
    let k = match t {
        Transposition::FirstLast => return build_min_imap_with(new, ci),
        Transposition::Adjacent(k) => k,
    };

    let order = new.order();
    let hi = order[k]; // was at k+1
    let lo = order[k + 1]; // was at k
    let mut dag = old_dag.clone();
    if dag.has_edge(lo, hi) {
        dag.remove_edge(lo, hi);
        dag.insert_edge(hi, lo);
    }
    for &w in &order[..k] {
        for j in [k, k + 1] {
            let v = order[j];
            let s = order[..j].iter().copied().filter(|&x| x != w);
            if ci.dependent(&CiKey::new(w, v, s))? {
                dag.insert_edge(w, v);
            } else {
                dag.remove_edge(w, v);
            }
        }
    }
    #[cfg(debug_assertions)]
    dag.debug_validate();
    Ok(dag)
}
