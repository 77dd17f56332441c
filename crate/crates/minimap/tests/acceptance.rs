//! Acceptance gate: end-to-end statistical and structural criteria, each
//! with a fixed tolerance. Every test prints one PASS line with its
//! measured numbers (visible under --nocapture) or panics with the same
//! numbers on failure.
//!
//! The tests share a process-wide mutex so the timing-sensitive criterion
//! is never measured while other chains hog the cores, and so memory-heavy
//! enumerations do not overlap.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use minimap::ci::{fisher_z_test, CiCache};
use minimap::data::{compute_suffstats, Dataset};
use minimap::estimate::{
    cpdag_of, cross_run_correlation, feature_posterior, roc_curve, FeatureKind, Truth,
};
use minimap::graph::{apply_transposition, Dag, Permutation, Transposition};
use minimap::imap::{build_min_imap, umi_update};
use minimap::oracle::{
    all_dags, edge_probs_of, exact_full_dag_posterior, exact_min_imap_posterior,
    markov_equivalence_class,
};
use minimap::sampler::{propose, run_chain, ChainConfig, Proposal};
use minimap::score::{bge_log_marginal, BgeHyper, PriorSpec};
use minimap::synth::{random_dag, random_weights, sample_sem, SemSpec};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static GATE: Mutex<()> = Mutex::new(());

fn report(name: &str, pass: bool, detail: String) {
    if pass {
        println!("acceptance {name}: PASS ({detail})");
    } else {
        panic!("acceptance {name}: FAIL ({detail})");
    }
}

fn sem_dataset(p: usize, edge_prob: f64, max_indegree: Option<usize>, n: usize, seed: u64) -> (Dag, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dag = random_dag(p, edge_prob, max_indegree, &mut rng).unwrap();
    let sem = random_weights(&dag, &mut rng);
    let data = sample_sem(&sem, n, &mut rng).unwrap();
    (dag, data)
}

#[test]
fn umi_matches_rebuild_on_a_thousand_random_moves() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let p = 10;
    let (_, data) = sem_dataset(p, 0.35, Some(3), 500, 9001);
    let stats = compute_suffstats(&data).unwrap();
    let mut cache = CiCache::new(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(9002);

    let mut checked = 0;
    for _ in 0..1000 {
        let perm = Permutation::random(p, &mut rng);
        let mv = match rng.gen_range(0..p) {
            k if k < p - 1 => Transposition::Adjacent(k),
            _ => Transposition::FirstLast,
        };
        let base = build_min_imap(&perm, &mut cache, &stats).unwrap();
        let moved = apply_transposition(&perm, mv);
        let updated = umi_update(&moved, &perm, &base, &mut cache, &stats).unwrap();
        let rebuilt = build_min_imap(&moved, &mut cache, &stats).unwrap();
        assert_eq!(
            updated.edge_vec(),
            rebuilt.edge_vec(),
            "incremental update diverged for {perm:?} under {mv:?}"
        );
        checked += 1;
    }
    report(
        "incremental-update-vs-rebuild",
        checked == 1000,
        format!("{checked}/1000 random moves identical edge-for-edge"),
    );
}

#[test]
fn chain_visit_frequencies_match_the_exact_posterior() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    // A five-node SEM whose equivalence class is a single DAG (both edge
    // pairs collide), with strong weights: the posterior concentrates, so
    // the enumeration target and the chain's permutation-space marginal
    // coincide to well within the tolerance.
    let dag = Dag::from_edges(5, [(0, 2), (1, 2), (2, 4), (3, 4)]).unwrap();
    let weights: BTreeMap<(usize, usize), f64> =
        [((0, 2), 1.0), ((1, 2), -0.9), ((2, 4), 1.1), ((3, 4), 0.8)].into();
    let sem = SemSpec::new(dag, weights, vec![1.0; 5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9010);
    let data = sample_sem(&sem, 200, &mut rng).unwrap();

    let alpha = 0.05;
    let hyper = BgeHyper::default_for(5);
    let prior = PriorSpec::sparsity(0.5);
    let exact = exact_min_imap_posterior(&data, alpha, &hyper, &prior).unwrap();

    let config = ChainConfig {
        alpha,
        ..ChainConfig::new(200_000, 20_000, 1.0, 9011)
    };
    let trace = run_chain(&data, &config, &hyper, &prior).unwrap();

    let mut freq: HashMap<String, f64> = HashMap::new();
    let weight = 1.0 / trace.samples.len() as f64;
    for sample in &trace.samples {
        *freq.entry(sample.dag(5).canonical_string()).or_insert(0.0) += weight;
    }

    let exact_map = exact.canonical_map();
    let mut union: Vec<&String> = exact_map.keys().chain(freq.keys()).collect();
    union.sort();
    union.dedup();
    let tv = 0.5
        * union
            .iter()
            .map(|k| {
                (exact_map.get(*k).copied().unwrap_or(0.0)
                    - freq.get(*k).copied().unwrap_or(0.0))
                .abs()
            })
            .sum::<f64>();

    let chain_probs = feature_posterior(&trace, FeatureKind::Directed).unwrap();
    let exact_probs = edge_probs_of(&exact);
    let mut max_edge_gap: f64 = 0.0;
    for u in 0..5 {
        for v in 0..5 {
            max_edge_gap = max_edge_gap
                .max((chain_probs.values[(u, v)] - exact_probs.values[(u, v)]).abs());
        }
    }

    report(
        "chain-vs-exact-posterior",
        tv < 0.02 && max_edge_gap < 0.03,
        format!(
            "TV {tv:.4} (< 0.02), max directed-edge gap {max_edge_gap:.4} (< 0.03), support {} DAGs",
            exact.len()
        ),
    );
}

#[test]
fn markov_equivalent_dags_score_identically() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let mut rng = ChaCha8Rng::seed_from_u64(9020);
    let mut pairs = 0;
    let mut worst: f64 = 0.0;
    // spread the 200 pairs over the three sizes
    for (p, quota) in [(3usize, 60), (4, 70), (5, 70)] {
        let (_, data) = sem_dataset(p, 0.5, None, 150, 9021 + p as u64);
        let stats = compute_suffstats(&data).unwrap();
        let hyper = BgeHyper::default_for(p);
        let mut taken = 0;
        while taken < quota {
            let dag = random_dag(p, 0.5, None, &mut rng).unwrap();
            let class = markov_equivalence_class(&dag).unwrap();
            for pair in class.windows(2).take(quota - taken) {
                let a = bge_log_marginal(&pair[0], &stats, &hyper).unwrap();
                let b = bge_log_marginal(&pair[1], &stats, &hyper).unwrap();
                let rel = (a - b).abs() / a.abs().max(b.abs());
                worst = worst.max(rel);
                assert!(
                    rel < 1e-8,
                    "equivalent DAGs {:?} and {:?} scored {a} vs {b}",
                    pair[0],
                    pair[1]
                );
                taken += 1;
            }
        }
        pairs += taken;
    }
    report(
        "score-equivalence",
        pairs == 200,
        format!("200 equivalent pairs, worst relative difference {worst:.2e} (< 1e-8)"),
    );
}

#[test]
fn structure_recovery_auroc_clears_the_bar() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let mut und = Vec::new();
    let mut comp = Vec::new();
    for seed in 1..=10u64 {
        let (truth, data) = sem_dataset(10, 0.35, Some(3), 1000, 9030 + seed);
        let cpdag = cpdag_of(&truth);
        assert!(
            cpdag.directed().count() > 0 && truth.edge_count() < 45,
            "instance {seed} has a degenerate truth for ROC purposes"
        );
        let hyper = BgeHyper::default_for(10);
        let prior = PriorSpec::sparsity(0.5);
        let config = ChainConfig::defaults(9040 + seed);
        let trace = run_chain(&data, &config, &hyper, &prior).unwrap();

        let u = feature_posterior(&trace, FeatureKind::Undirected).unwrap();
        und.push(roc_curve(&u, &Truth::Dag(&truth)).unwrap().auroc);
        let c = feature_posterior(&trace, FeatureKind::Compelled).unwrap();
        comp.push(roc_curve(&c, &Truth::Dag(&truth)).unwrap().auroc);
    }
    let und_mean = und.iter().sum::<f64>() / und.len() as f64;
    let comp_mean = comp.iter().sum::<f64>() / comp.len() as f64;
    report(
        "structure-recovery-auroc",
        und_mean >= 0.95 && comp_mean >= 0.80,
        format!(
            "10-seed mean AUROC: undirected {und_mean:.3} (>= 0.95), compelled {comp_mean:.3} (>= 0.80)"
        ),
    );
}

#[test]
fn independent_chains_agree_on_directed_features() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let (_, data) = sem_dataset(10, 0.3, Some(3), 100, 9050);
    let hyper = BgeHyper::default_for(10);
    let prior = PriorSpec::sparsity(0.5);
    let run = |seed| {
        let trace = run_chain(&data, &ChainConfig::defaults(seed), &hyper, &prior).unwrap();
        feature_posterior(&trace, FeatureKind::Directed).unwrap()
    };
    let a = run(9051);
    let b = run(9052);
    let corr = cross_run_correlation(&a, &b).unwrap();
    report(
        "cross-chain-agreement",
        corr >= 0.90,
        format!("directed-feature Pearson correlation {corr:.4} (>= 0.90)"),
    );
}

#[test]
fn iteration_time_scales_subquartically() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let sizes = [20usize, 40, 80];
    let iters = [4000u64, 1200, 300];
    let mut times = Vec::new();
    for (&p, &iters) in sizes.iter().zip(&iters) {
        let (_, data) = sem_dataset(p, 6.0 / p as f64, Some(3), 300, 9060 + p as u64);
        let hyper = BgeHyper { alpha_mu: 1.0, alpha_w: p as f64 + 2.0, t_scale: 0.5 };
        let prior = PriorSpec::sparsity(0.5);
        let config = ChainConfig::new(iters, 0, 0.01, 9061);
        let trace = run_chain(&data, &config, &hyper, &prior).unwrap();
        times.push(trace.mean_iter_secs());
    }
    // least-squares slope of ln(time) on ln(p)
    let xs: Vec<f64> = sizes.iter().map(|&p| (p as f64).ln()).collect();
    let ys: Vec<f64> = times.iter().map(|&t| t.ln()).collect();
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xm) * (y - ym))
        .sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
    report(
        "iteration-time-scaling",
        slope <= 4.0,
        format!(
            "log-log slope {slope:.2} (<= 4.0) over p = 20/40/80 with per-iteration times {:.2e}/{:.2e}/{:.2e}s",
            times[0], times[1], times[2]
        ),
    );
}

#[test]
fn proposal_frequencies_match_their_design() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let p = 6;
    let s = 0.1;
    // stay mass plus p equal move masses must normalize
    let analytic = s + p as f64 * ((1.0 - s) / p as f64);
    assert!((analytic - 1.0).abs() < 1e-12);

    let draws = 100_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(9070);
    let mut stays = 0u64;
    let mut moves = vec![0u64; p];
    for _ in 0..draws {
        match propose(p, s, &mut rng) {
            Proposal::Stay => stays += 1,
            Proposal::Move(Transposition::Adjacent(k)) => moves[k] += 1,
            Proposal::Move(Transposition::FirstLast) => moves[p - 1] += 1,
        }
    }
    let within = |prob: f64, count: u64| {
        let mean = prob * draws as f64;
        let sd = (draws as f64 * prob * (1.0 - prob)).sqrt();
        (count as f64 - mean).abs() <= 3.0 * sd
    };
    let mut pass = within(s, stays);
    let move_prob = (1.0 - s) / p as f64;
    for &count in &moves {
        pass &= within(move_prob, count);
    }
    report(
        "proposal-frequencies",
        pass,
        format!(
            "stay {stays} of {draws} (expect {:.0}), moves {:?} (expect {:.0} each), 3-sigma bands",
            s * draws as f64,
            moves,
            move_prob * draws as f64
        ),
    );
}

#[test]
fn ci_test_rejects_at_its_nominal_rate() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let alpha = 0.05;
    let trials = 2000;
    let n = 150;
    let sem = SemSpec::new(Dag::empty(2), BTreeMap::new(), vec![1.0, 1.0]).unwrap();
    let key = minimap::ci::CiKey::new(0, 1, []);
    let mut rejections = 0u64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(9080 + t);
        let data = sample_sem(&sem, n, &mut rng).unwrap();
        let stats = compute_suffstats(&data).unwrap();
        if fisher_z_test(&stats, &key, alpha).unwrap() {
            rejections += 1;
        }
    }
    let mean = alpha * trials as f64;
    let sd = (trials as f64 * alpha * (1.0 - alpha)).sqrt();
    let pass = (rejections as f64 - mean).abs() <= 3.0 * sd;
    report(
        "ci-test-calibration",
        pass,
        format!(
            "{rejections} rejections in {trials} independent datasets (expect {mean:.0} +/- {:.0})",
            3.0 * sd
        ),
    );
}

#[test]
fn cpdag_labels_agree_with_exhaustive_enumeration() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let mut dags_checked = 0;
    let mut edges_checked = 0;
    for p in 1..=4 {
        for dag in all_dags(p).unwrap() {
            let class = markov_equivalence_class(&dag).unwrap();
            let cpdag = cpdag_of(&dag);
            for (u, v) in dag.edges() {
                let consensus = class.iter().all(|g| g.has_edge(u, v));
                assert_eq!(
                    cpdag.has_directed(u, v),
                    consensus,
                    "edge {u}->{v} of {dag:?}: class says compelled={consensus}"
                );
                assert_eq!(cpdag.has_undirected(u, v), !consensus);
                edges_checked += 1;
            }
            assert_eq!(cpdag.edge_count(), dag.edge_count());
            dags_checked += 1;
        }
    }
    report(
        "cpdag-exhaustive",
        dags_checked == 1 + 3 + 25 + 543,
        format!("{dags_checked} DAGs, {edges_checked} edge labels, all exact"),
    );
}

#[test]
fn posterior_approximation_gap_shrinks_with_sample_size() {
    let _gate = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let alpha = 0.05;
    let hyper = BgeHyper::default_for(4);
    let prior = PriorSpec::uniform();
    let mut monotone = 0;
    let mut gaps_log = Vec::new();
    let mut instances = 0;
    let mut inst_seed = 9090u64;
    while instances < 10 {
        let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
        inst_seed += 1;
        let dag = random_dag(4, 0.5, None, &mut rng).unwrap();
        if dag.edge_count() < 2 {
            // near-empty truths make the gap pure noise; skip them before
            // looking at any posterior
            continue;
        }
        instances += 1;
        let sem = random_weights(&dag, &mut rng);
        let full_data = sample_sem(&sem, 5000, &mut rng).unwrap();

        let mut gaps = Vec::new();
        for &n in &[50usize, 500, 5000] {
            let slice = full_data.values().rows(0, n).into_owned();
            let data = Dataset::with_default_names(slice).unwrap();
            let exact_full = exact_full_dag_posterior(&data, &hyper, &prior).unwrap();
            let exact_imap = exact_min_imap_posterior(&data, alpha, &hyper, &prior).unwrap();
            let a: DMatrix<f64> = edge_probs_of(&exact_full).values;
            let b: DMatrix<f64> = edge_probs_of(&exact_imap).values;
            let gap = (a - b).abs().max();
            gaps.push(gap);
        }
        if gaps[0] >= gaps[1] - 1e-12 && gaps[1] >= gaps[2] - 1e-12 {
            monotone += 1;
        }
        gaps_log.push(format!(
            "[{:.3} {:.3} {:.3}]",
            gaps[0], gaps[1], gaps[2]
        ));
    }
    report(
        "approximation-gap-monotone",
        monotone >= 8,
        format!("{monotone}/10 instances nonincreasing across n = 50/500/5000: {}", gaps_log.join(" ")),
    );
}
