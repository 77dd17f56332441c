//! Random DAGs, linear Gaussian structural equation models, and the exact
//! population quantities they imply.
//!
//! The population covariance doubles as a CI oracle: a partial correlation
//! of an exactly faithful linear Gaussian SEM is zero precisely on the
//! d-separations of its graph, so thresholding at ~1e−9 gives noise-free
//! test outcomes for small experiments.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ci::{partial_correlation_of, CiKey, CiTester};
use crate::data::{default_names, Dataset};
use crate::graph::{Dag, Permutation};
use crate::{Error, Result};

/// Linear SEM: X_v = Σ_{u ∈ Pa(v)} w_uv X_u + ε_v with independent
/// Gaussian noise ε_v ~ N(0, noise_var[v]).
#[derive(Debug, Clone, PartialEq)]
pub struct SemSpec {
    dag: Dag,
    weights: BTreeMap<(usize, usize), f64>,
    noise_var: Vec<f64>,
}

impl SemSpec {
    /// Validates that weights are keyed exactly by the DAG's edges and all
    /// noise variances are positive and finite.
    pub fn new(
        dag: Dag,
        weights: BTreeMap<(usize, usize), f64>,
        noise_var: Vec<f64>,
    ) -> Result<Self> {
        if noise_var.len() != dag.p() {
            return Err(Error::invalid(
                "sem",
                format!("{} noise variances for p = {}", noise_var.len(), dag.p()),
            ));
        }
        if noise_var.iter().any(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::invalid("sem", "noise variances must be positive"));
        }
        if weights.len() != dag.edge_count()
            || !dag.edges().all(|e| weights.get(&e).is_some_and(|w| w.is_finite()))
        {
            return Err(Error::invalid(
                "sem",
                "weights must be keyed exactly by the DAG's edges",
            ));
        }
        Ok(SemSpec { dag, weights, noise_var })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn p(&self) -> usize {
        self.dag.p()
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.weights.get(&(u, v)).copied()
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: SemSpecFile = serde_json::from_reader(std::fs::File::open(path)?)?;
        file.into_spec()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = SemSpecFile::from_spec(self);
        let mut out = serde_json::to_string_pretty(&file)?;
        out.push('\n');
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Serialized form: `{"p": .., "edges": [[u, v, w], ..], "noise_var": [..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemSpecFile {
    pub p: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub noise_var: Vec<f64>,
}

impl SemSpecFile {
    pub fn from_spec(spec: &SemSpec) -> Self {
        SemSpecFile {
            p: spec.p(),
            edges: spec
                .dag
                .edges()
                .map(|(u, v)| (u, v, spec.weights[&(u, v)]))
                .collect(),
            noise_var: spec.noise_var.clone(),
        }
    }

    pub fn into_spec(self) -> Result<SemSpec> {
        let dag = Dag::from_edges(self.p, self.edges.iter().map(|&(u, v, _)| (u, v)))?;
        let weights = self.edges.iter().map(|&(u, v, w)| ((u, v), w)).collect();
        SemSpec::new(dag, weights, self.noise_var)
    }
}

/// Draws a random DAG: a uniform permutation fixes a topological order,
/// each forward pair becomes an edge with probability `edge_prob`, and
/// nodes whose indegree exceeds `max_indegree` keep a uniform subset of
/// parents.
pub fn random_dag<R: Rng + ?Sized>(
    p: usize,
    edge_prob: f64,
    max_indegree: Option<usize>,
    rng: &mut R,
) -> Result<Dag> {
    if p < 2 {
        return Err(Error::invalid("random_dag", "need p >= 2"));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::invalid("random_dag", "edge_prob must be in [0, 1]"));
    }
    if max_indegree == Some(0) {
        return Err(Error::invalid("random_dag", "max_indegree must be >= 1"));
    }
    let order = Permutation::random(p, rng);
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); p];
    for j in 1..p {
        let v = order.order()[j];
        for &u in &order.order()[..j] {
            if rng.gen_bool(edge_prob) {
                parents[v].push(u);
            }
        }
    }
    if let Some(k) = max_indegree {
        for pa in parents.iter_mut() {
            while pa.len() > k {
                let drop = rng.gen_range(0..pa.len());
                pa.swap_remove(drop);
            }
        }
    }
    let edges = parents
        .into_iter()
        .enumerate()
        .flat_map(|(v, pa)| pa.into_iter().map(move |u| (u, v)));
    Dag::from_edges(p, edges)
}

/// Assigns each edge a weight drawn uniformly from [−1, −0.25] ∪ [0.25, 1]
/// (fair-coin sign, uniform magnitude) and unit noise everywhere.
pub fn random_weights<R: Rng + ?Sized>(dag: &Dag, rng: &mut R) -> SemSpec {
    let weights = dag
        .edges()
        .map(|e| {
            let magnitude = rng.gen_range(0.25..=1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (e, sign * magnitude)
        })
        .collect();
    let p = dag.p();
    SemSpec::new(dag.clone(), weights, vec![1.0; p])
        .expect("weights were keyed by the dag's own edges")
}

/// Draws `n` i.i.d. rows from the SEM, filling nodes in topological order.
pub fn sample_sem<R: Rng + ?Sized>(spec: &SemSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("sample_sem", "need n >= 2 rows"));
    }
    let p = spec.p();
    let order = spec.dag.topological_order();
    let mut values = DMatrix::zeros(n, p);
    for i in 0..n {
        for &v in &order {
            let mut x = gaussian(rng) * spec.noise_var[v].sqrt();
            for &u in spec.dag.parents(v) {
                x += spec.weights[&(u, v)] * values[(i, u)];
            }
            values[(i, v)] = x;
        }
    }
    Dataset::new(values, default_names(p))
}

/// Standard normal via Box–Muller; keeps the crate's RNG usage down to
/// `gen_range`/`gen_bool` so seeds stay portable across `rand` versions.
fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>();
        if u > 0.0 {
            let v: f64 = rng.gen::<f64>();
            return (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
        }
    }
}

/// Exact covariance (I − W)⁻ᵀ Σ_ε (I − W)⁻¹ of the SEM, where W holds
/// w_uv at (row u, column v).
pub fn population_covariance(spec: &SemSpec) -> DMatrix<f64> {
    let p = spec.p();
    let mut i_minus_w: DMatrix<f64> = DMatrix::identity(p, p);
    for ((u, v), w) in &spec.weights {
        i_minus_w[(*u, *v)] -= *w;
    }
    let inv = i_minus_w
        .try_inverse()
        .expect("I − W is unitriangular under a topological order");
    let mut sigma_eps = DMatrix::zeros(p, p);
    for v in 0..p {
        sigma_eps[(v, v)] = spec.noise_var[v];
    }
    inv.transpose() * sigma_eps * inv
}

/// Population correlation matrix of the SEM.
pub fn population_correlation(spec: &SemSpec) -> DMatrix<f64> {
    let cov = population_covariance(spec);
    let p = cov.nrows();
    let mut corr = DMatrix::identity(p, p);
    for i in 0..p {
        for j in 0..p {
            corr[(i, j)] = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
        }
    }
    corr
}

/// Noise-free CI oracle: dependent iff the population partial correlation
/// exceeds `tol` in absolute value.
#[derive(Debug, Clone)]
pub struct PopulationCi {
    corr: DMatrix<f64>,
    tol: f64,
    queries: u64,
}

/// Builds the oracle for a SEM; `tol` around 1e−9 separates exact zeros
/// from genuine dependence for weights bounded away from zero.
pub fn population_ci(spec: &SemSpec, tol: f64) -> Result<PopulationCi> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::invalid("population_ci", "tol must be in (0, 1)"));
    }
    Ok(PopulationCi {
        corr: population_correlation(spec),
        tol,
        queries: 0,
    })
}

impl CiTester for PopulationCi {
    fn p(&self) -> usize {
        self.corr.nrows()
    }

    fn dependent(&mut self, key: &CiKey) -> Result<bool> {
        self.queries += 1;
        Ok(partial_correlation_of(&self.corr, key)?.abs() > self.tol)
    }

    fn query_count(&self) -> u64 {
        self.queries
    }
}
