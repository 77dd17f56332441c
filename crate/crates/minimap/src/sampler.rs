//! Metropolis–Hastings over node permutations.
//!
//! The chain walks on permutations of the p nodes. Each visited permutation
//! is deterministically mapped to its minimal I-MAP given the cached CI
//! test outcomes, and the move is accepted with the usual ratio of
//! unnormalized posteriors. Proposals are adjacent transpositions plus a
//! first/last swap, mixed with a self-loop, which makes the proposal
//! symmetric; stationarity therefore holds for the induced distribution
//! over DAGs in the image of the I-MAP construction.
//!
//! Because an adjacent transposition changes the I-MAP only around the
//! swapped positions, a step costs O(p) CI lookups on average instead of
//! the O(p²) of a fresh rebuild.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ci::CiCache;
use crate::data::{compute_suffstats, Dataset, SuffStats};
use crate::graph::{Dag, Permutation, Transposition};
use crate::imap::{apply_transposition, build_min_imap, umi_update};
use crate::score::{BgeHyper, PriorSpec, ScoreCache};
use crate::{Error, Result};

/// How the chain picks its starting permutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum InitStrategy {
    /// Uniformly random permutation.
    Random,
    /// A fixed, caller-supplied permutation.
    Given(Permutation),
    /// Draw m random permutations and start from the highest-scoring
    /// minimal I-MAP among them.
    BestOfM(usize),
}

/// Chain parameters.
///
/// `kappa` is the thinning fraction: iteration i (1-based) is stored when
/// it is past `burn_in` and divisible by ceil(1/kappa).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total MCMC iterations.
    pub iters: u64,
    /// Iterations discarded before any sample is stored.
    pub burn_in: u64,
    /// Fraction of post-burn-in iterations to keep, in (0, 1].
    pub kappa: f64,
    /// Probability of proposing to stay put.
    pub self_loop_prob: f64,
    /// Level of the Fisher z CI tests behind the I-MAP construction.
    pub alpha: f64,
    pub init: InitStrategy,
    pub rng_seed: u64,
}

impl ChainConfig {
    /// Config with the given loop counts, thinning fraction, and seed;
    /// proposal and test parameters keep their defaults (self-loop 0.1,
    /// alpha 0.05, random init).
    pub fn new(iters: u64, burn_in: u64, kappa: f64, rng_seed: u64) -> Self {
        ChainConfig {
            iters,
            burn_in,
            kappa,
            self_loop_prob: 0.1,
            alpha: 0.05,
            init: InitStrategy::Random,
            rng_seed,
        }
    }

    /// The conventional run length: 10⁵ iterations, 2×10⁴ burn-in, one
    /// sample kept per hundred.
    pub fn defaults(rng_seed: u64) -> Self {
        ChainConfig::new(100_000, 20_000, 0.01, rng_seed)
    }

    /// Iterations between stored samples, ceil(1/kappa).
    pub fn thin_interval(&self) -> u64 {
        (1.0 / self.kappa).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters > 0 && self.burn_in >= self.iters {
            return Err(Error::invalid("chain config", "burn_in must be smaller than iters"));
        }
        if !(self.kappa.is_finite() && 0.0 < self.kappa && self.kappa <= 1.0) {
            return Err(Error::invalid("chain config", "kappa must lie in (0, 1]"));
        }
        if !(self.self_loop_prob.is_finite()
            && 0.0 < self.self_loop_prob
            && self.self_loop_prob < 1.0)
        {
            // a positive self-loop keeps the chain aperiodic
            return Err(Error::invalid("chain config", "self_loop_prob must lie in (0, 1)"));
        }
        if !(self.alpha.is_finite() && 0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::invalid("chain config", "alpha must lie in (0, 1)"));
        }
        if let InitStrategy::BestOfM(m) = self.init {
            if m == 0 {
                return Err(Error::invalid("chain config", "best-of-m needs m >= 1"));
            }
        }
        Ok(())
    }
}

/// A proposed move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    Stay,
    Move(Transposition),
}

/// Draw one proposal: stay with probability `self_loop_prob`, otherwise
/// uniform over the p candidate moves (p − 1 adjacent swaps plus the
/// first/last swap). For p = 2 the two coincide, so there is a single move.
pub fn propose(p: usize, self_loop_prob: f64, rng: &mut impl Rng) -> Proposal {
    assert!(p >= 2);
    if self_loop_prob > 0.0 && rng.gen::<f64>() < self_loop_prob {
        return Proposal::Stay;
    }
    if p == 2 {
        return Proposal::Move(Transposition::Adjacent(0));
    }
    let m = rng.gen_range(0..p);
    if m < p - 1 {
        Proposal::Move(Transposition::Adjacent(m))
    } else {
        Proposal::Move(Transposition::FirstLast)
    }
}

/// What a single step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// The self-loop fired; the state is unchanged by construction.
    Stayed,
    Accepted,
    Rejected,
}

/// One stored posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub iter: u64,
    pub log_score: f64,
    pub edges: Vec<(usize, usize)>,
}

impl TraceSample {
    pub fn dag(&self, p: usize) -> Dag {
        Dag::from_edges(p, self.edges.iter().copied())
            .expect("trace samples hold valid DAGs")
    }
}

/// Output of a chain run: thinned samples plus run accounting.
#[derive(Debug, Clone)]
pub struct Trace {
    pub p: usize,
    pub names: Vec<String>,
    pub config: ChainConfig,
    pub samples: Vec<TraceSample>,
    /// Accepted non-self-loop moves.
    pub accept_count: u64,
    /// Self-loop proposals (counted separately from accepts).
    pub stay_count: u64,
    /// CI test lookups issued over the whole run, cache hits included.
    pub ci_queries: u64,
    /// Distinct CI tests actually evaluated.
    pub ci_unique: usize,
    /// Seconds spent on setup (statistics, init, first I-MAP build).
    pub setup_secs: f64,
    /// Seconds spent in the sampling loop proper.
    pub sampling_secs: f64,
}

impl Trace {
    /// Mean wall-clock seconds per sampling iteration, setup excluded.
    pub fn mean_iter_secs(&self) -> f64 {
        if self.config.iters == 0 {
            0.0
        } else {
            self.sampling_secs / self.config.iters as f64
        }
    }

    /// Acceptance rate over all iterations. A self-loop proposal trivially
    /// keeps the state and counts as accepted here; `stay_count` tracks
    /// those separately.
    pub fn accept_rate(&self) -> f64 {
        if self.config.iters == 0 {
            0.0
        } else {
            (self.accept_count + self.stay_count) as f64 / self.config.iters as f64
        }
    }

    /// Rewraps samples loaded from storage for feature estimation. Run
    /// accounting is zeroed and the config is a placeholder; only `p`,
    /// `names`, and the samples themselves are meaningful.
    pub fn from_samples(p: usize, names: Vec<String>, samples: Vec<TraceSample>) -> Self {
        Trace {
            p,
            names,
            config: ChainConfig::new(0, 0, 1.0, 0),
            samples,
            accept_count: 0,
            stay_count: 0,
            ci_queries: 0,
            ci_unique: 0,
            setup_secs: 0.0,
            sampling_secs: 0.0,
        }
    }
}

struct ChainState {
    perm: Permutation,
    dag: Dag,
    log_post: f64,
}

/// One Metropolis–Hastings step. The proposal is symmetric, so the accept
/// probability is exp(Δ log posterior) capped at one. A uniform variate is
/// drawn on every non-stay proposal, accepted or not, which keeps the
/// random stream independent of the acceptance pattern.
fn mh_step(
    state: &mut ChainState,
    stats: &SuffStats,
    cache: &mut CiCache,
    scores: &mut ScoreCache,
    hyper: &BgeHyper,
    prior: &PriorSpec,
    self_loop_prob: f64,
    rng: &mut impl Rng,
) -> Result<StepKind> {
    let mv = match propose(state.perm.p(), self_loop_prob, rng) {
        Proposal::Stay => return Ok(StepKind::Stayed),
        Proposal::Move(mv) => mv,
    };
    let cand_perm = apply_transposition(&state.perm, mv);
    let cand_dag = umi_update(&cand_perm, &state.perm, &state.dag, cache, stats)?;
    let cand_post = scores.log_posterior(&cand_dag, stats, hyper, prior)?;
    let u: f64 = rng.gen();
    if u < (cand_post - state.log_post).exp() {
        state.perm = cand_perm;
        state.dag = cand_dag;
        state.log_post = cand_post;
        Ok(StepKind::Accepted)
    } else {
        Ok(StepKind::Rejected)
    }
}

fn best_of_m(
    stats: &SuffStats,
    m: usize,
    cache: &mut CiCache,
    scores: &mut ScoreCache,
    hyper: &BgeHyper,
    prior: &PriorSpec,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    let mut best: Option<(f64, Permutation)> = None;
    for _ in 0..m {
        let perm = Permutation::random(stats.p(), rng);
        let dag = build_min_imap(&perm, cache, stats)?;
        let post = scores.log_posterior(&dag, stats, hyper, prior)?;
        if best.as_ref().map_or(true, |(b, _)| post > *b) {
            best = Some((post, perm));
        }
    }
    Ok(best.expect("m >= 1").1)
}

/// Score m random permutations and return the best one. Useful for warm
/// starts; `run_chain` does the same internally for
/// [`InitStrategy::BestOfM`].
pub fn seed_best_of_m(
    data: &Dataset,
    m: usize,
    alpha: f64,
    hyper: &BgeHyper,
    prior: &PriorSpec,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    if m == 0 {
        return Err(Error::invalid("best-of-m", "m must be at least 1"));
    }
    let stats = compute_suffstats(data)?;
    let mut cache = CiCache::new(alpha);
    let mut scores = ScoreCache::new();
    best_of_m(&stats, m, &mut cache, &mut scores, hyper, prior, rng)
}

/// Run the full chain on a dataset.
///
/// Everything is deterministic given `config.rng_seed`. Setup (sufficient
/// statistics, initialization, the first I-MAP build) is timed separately
/// from the sampling loop so per-iteration cost can be read off the trace.
pub fn run_chain(
    data: &Dataset,
    config: &ChainConfig,
    hyper: &BgeHyper,
    prior: &PriorSpec,
) -> Result<Trace> {
    config.validate()?;
    hyper.validate_for(data.p())?;
    prior.validate_for(data.p())?;

    let setup_start = Instant::now();
    let stats = compute_suffstats(data)?;
    let p = stats.p();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut cache = CiCache::new(config.alpha);
    let mut scores = ScoreCache::new();

    let perm = match &config.init {
        InitStrategy::Random => Permutation::random(p, &mut rng),
        InitStrategy::Given(perm) => {
            if perm.p() != p {
                return Err(Error::invalid(
                    "chain config",
                    format!("init permutation has {} nodes, data has {p}", perm.p()),
                ));
            }
            perm.clone()
        }
        InitStrategy::BestOfM(m) => {
            best_of_m(&stats, *m, &mut cache, &mut scores, hyper, prior, &mut rng)?
        }
    };
    let dag = build_min_imap(&perm, &mut cache, &stats)?;
    let log_post = scores.log_posterior(&dag, &stats, hyper, prior)?;
    let mut state = ChainState { perm, dag, log_post };
    let setup_secs = setup_start.elapsed().as_secs_f64();

    let thin = config.thin_interval();
    let mut samples = Vec::new();
    let mut accept_count = 0;
    let mut stay_count = 0;

    let sampling_start = Instant::now();
    for i in 1..=config.iters {
        match mh_step(
            &mut state,
            &stats,
            &mut cache,
            &mut scores,
            hyper,
            prior,
            config.self_loop_prob,
            &mut rng,
        )? {
            StepKind::Stayed => stay_count += 1,
            StepKind::Accepted => accept_count += 1,
            StepKind::Rejected => {}
        }

        #[cfg(debug_assertions)]
        if i % 1000 == 0 {
            let rebuilt = build_min_imap(&state.perm, &mut cache, &stats)?;
            debug_assert_eq!(
                rebuilt.canonical_string(),
                state.dag.canonical_string(),
                "incrementally maintained I-MAP diverged from a fresh rebuild"
            );
        }

        if i > config.burn_in && i % thin == 0 {
            samples.push(TraceSample {
                iter: i,
                log_score: state.log_post,
                edges: state.dag.edge_vec(),
            });
        }
    }
    let sampling_secs = sampling_start.elapsed().as_secs_f64();

    Ok(Trace {
        p,
        names: data.names().to_vec(),
        config: config.clone(),
        samples,
        accept_count,
        stay_count,
        ci_queries: cache.query_count(),
        ci_unique: cache.len(),
        setup_secs,
        sampling_secs,
    })
}
