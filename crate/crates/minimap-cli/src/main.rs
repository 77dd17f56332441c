//! Command-line pipeline for minimal I-MAP MCMC: synthetic data
//! generation, chain runs, feature evaluation, and scaling benchmarks.
//!
//! Every command is deterministic given --seed; only recorded wall-clock
//! timings vary between runs. `run` writes a manifest.json next to its
//! outputs, and `run --manifest <file>` replays it, reproducing
//! trace.jsonl byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use minimap::data::Dataset;
use minimap::estimate::{
    cpdag_of, feature_pairs, feature_posterior_with_threads, roc_curve, Cpdag, FeatureKind,
    Truth,
};
use minimap::graph::{Dag, Permutation};
use minimap::sampler::{run_chain, ChainConfig, InitStrategy, Trace, TraceSample};
use minimap::score::{BgeHyper, PriorSpecFile};
use minimap::synth::{random_dag, random_weights, sample_sem, SemSpec, SemSpecFile};
use minimap::Error as LibError;

#[derive(Parser)]
#[command(
    name = "minimap",
    version,
    about = "Bayesian structure discovery for Gaussian DAG models via minimal I-MAP MCMC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic linear-SEM dataset with known ground truth
    Generate(GenerateArgs),
    /// Run the Markov chain on a dataset
    Run(Box<RunArgs>),
    /// Score a stored trace against a known truth
    Evaluate(EvaluateArgs),
    /// Time short chains across problem sizes and fit the scaling slope
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of variables
    #[arg(long)]
    p: usize,
    /// Number of observations
    #[arg(long)]
    n: usize,
    /// Probability of each forward pair becoming an edge
    #[arg(long, default_value_t = 0.3)]
    edge_prob: f64,
    /// Cap on parents per node
    #[arg(long)]
    max_indegree: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Input dataset: CSV with a header row of column names
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    /// Level of the conditional-independence test
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Sparsity strength of the default structural prior
    #[arg(long, default_value_t = 0.5, conflicts_with = "prior")]
    gamma: f64,
    /// Total iterations
    #[arg(long, default_value_t = 100_000)]
    iters: u64,
    /// Burn-in iterations, never stored
    #[arg(long, default_value_t = 20_000)]
    burnin: u64,
    /// Store every thin-th state after burn-in
    #[arg(long, default_value_t = 100)]
    thin: u64,
    /// Self-loop probability of the proposal
    #[arg(long, default_value_t = 0.1)]
    self_loop: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial permutation: random, file:<json array>, or best-of:<m>
    #[arg(long, default_value = "random")]
    init: String,
    /// Structural prior as name-based JSON
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Output directory, created if missing
    #[arg(long)]
    out_dir: PathBuf,
    /// Replay a stored manifest instead of reading chain flags
    #[arg(
        long,
        conflicts_with_all = ["data", "alpha", "gamma", "iters", "burnin", "thin",
                              "self_loop", "seed", "init", "prior"]
    )]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// trace.jsonl written by `run`
    #[arg(long)]
    trace: PathBuf,
    /// Truth file: SEM JSON, DAG JSON, or an edge-list CSV of names
    #[arg(long)]
    truth: PathBuf,
    /// Feature kind to estimate and score
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Output directory, created if missing
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated problem sizes, e.g. 20,40,80
    #[arg(long, value_delimiter = ',', required = true)]
    p_list: Vec<usize>,
    /// Chain length at each size
    #[arg(long, default_value_t = 500)]
    iters_per_p: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Directed,
    Undirected,
    Compelled,
}

impl From<KindArg> for FeatureKind {
    fn from(kind: KindArg) -> FeatureKind {
        match kind {
            KindArg::Directed => FeatureKind::Directed,
            KindArg::Undirected => FeatureKind::Undirected,
            KindArg::Compelled => FeatureKind::Compelled,
        }
    }
}

/// CLI failure classified by exit code: 2 usage, 3 data, 4 numerical.
enum AppError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numeric(m) => m,
        }
    }

    /// Prefixes the message with the file the failure came from.
    fn with_path(self, path: &Path) -> AppError {
        let tag = |m: String| format!("{}: {m}", path.display());
        match self {
            AppError::Usage(m) => AppError::Usage(tag(m)),
            AppError::Data(m) => AppError::Data(tag(m)),
            AppError::Numeric(m) => AppError::Numeric(tag(m)),
        }
    }
}

/// Opens a file for reading, naming it in the error message.
fn open(path: &Path) -> AppResult<File> {
    File::open(path).map_err(|e| AppError::Data(format!("{}: {e}", path.display())))
}

impl From<LibError> for AppError {
    fn from(e: LibError) -> AppError {
        match &e {
            LibError::SingularSubmatrix(_)
            | LibError::ZeroVariance
            | LibError::ZeroVarianceColumn(_) => AppError::Numeric(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> AppError {
        AppError::Data(e.to_string())
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> AppError {
        AppError::Data(e.to_string())
    }
}

type AppResult<T> = Result<T, AppError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Run(args) => cmd_run(*args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// Everything needed to replay a run exactly, written next to its outputs.
#[derive(Serialize, Deserialize)]
struct RunManifest {
    tool_version: String,
    data: PathBuf,
    out_dir: PathBuf,
    config: ChainConfig,
    hyper: BgeHyper,
    prior: PriorSpecFile,
}

/// Run accounting written next to the trace; `evaluate` reads the column
/// names back from here when the truth is an edge-list CSV.
#[derive(Serialize, Deserialize)]
struct RunSummary {
    p: usize,
    names: Vec<String>,
    iters: u64,
    burn_in: u64,
    thin_interval: u64,
    stored_samples: usize,
    accept_rate: f64,
    accept_count: u64,
    stay_count: u64,
    ci_queries: u64,
    ci_unique: usize,
    setup_secs: f64,
    sampling_secs: f64,
    mean_iter_secs: f64,
    final_log_score: Option<f64>,
}

impl RunSummary {
    fn from_trace(trace: &Trace) -> Self {
        RunSummary {
            p: trace.p,
            names: trace.names.clone(),
            iters: trace.config.iters,
            burn_in: trace.config.burn_in,
            thin_interval: trace.config.thin_interval(),
            stored_samples: trace.samples.len(),
            accept_rate: trace.accept_rate(),
            accept_count: trace.accept_count,
            stay_count: trace.stay_count,
            ci_queries: trace.ci_queries,
            ci_unique: trace.ci_unique,
            setup_secs: trace.setup_secs,
            sampling_secs: trace.sampling_secs,
            mean_iter_secs: trace.mean_iter_secs(),
            final_log_score: trace.samples.last().map(|s| s.log_score),
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> AppResult<()> {
    use rand::SeedableRng;
    if !(0.0..=1.0).contains(&args.edge_prob) {
        return Err(AppError::Usage("--edge-prob must lie in [0, 1]".into()));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let dag = random_dag(args.p, args.edge_prob, args.max_indegree, &mut rng)
        .map_err(usage_if_invalid)?;
    let sem = random_weights(&dag, &mut rng);
    let data = sample_sem(&sem, args.n, &mut rng).map_err(usage_if_invalid)?;

    data.write_csv(args.out_dir.join("data.csv"))?;
    sem.write_json(args.out_dir.join("truth.json"))?;
    write_edges_csv(&args.out_dir.join("truth_edges.csv"), &dag, data.names())?;
    write_cpdag_csv(&args.out_dir.join("truth_cpdag.csv"), &cpdag_of(&dag), data.names())?;

    println!(
        "generated p = {}, n = {}, {} true edges -> {}",
        args.p,
        args.n,
        dag.edge_count(),
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> AppResult<()> {
    let replay: Option<RunManifest> = match &args.manifest {
        Some(path) => Some(serde_json::from_reader(open(path)?)?),
        None => None,
    };

    let (data_path, config, prior_file) = match replay {
        Some(m) => (m.data, m.config, m.prior),
        None => {
            let data_path = args.data.clone().expect("clap enforces --data without --manifest");
            if args.thin == 0 {
                return Err(AppError::Usage("--thin must be at least 1".into()));
            }
            // a zero-length run stores nothing, so burn-in is moot
            let burnin = if args.iters == 0 { 0 } else { args.burnin };
            let mut config =
                ChainConfig::new(args.iters, burnin, 1.0 / args.thin as f64, args.seed);
            config.alpha = args.alpha;
            config.self_loop_prob = args.self_loop;
            config.init = parse_init(&args.init)?;
            let prior_file = match &args.prior {
                Some(path) => PriorSpecFile::read_json(path)
                    .map_err(|e| AppError::from(e).with_path(path))?,
                None => PriorSpecFile { gamma: args.gamma, ..Default::default() },
            };
            (data_path, config, prior_file)
        }
    };

    // surface bad flag combinations as usage errors before touching data
    config.validate().map_err(|e| AppError::Usage(e.to_string()))?;

    let data = Dataset::read_csv(&data_path)
        .map_err(|e| AppError::from(e).with_path(&data_path))?;
    let hyper = BgeHyper::default_for(data.p());
    let prior = prior_file.resolve(data.names())?;

    let trace = run_chain(&data, &config, &hyper, &prior)?;

    std::fs::create_dir_all(&args.out_dir)?;
    write_trace_jsonl(&args.out_dir.join("trace.jsonl"), &trace.samples)?;
    write_json_pretty(&args.out_dir.join("summary.json"), &RunSummary::from_trace(&trace))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        data: data_path,
        out_dir: args.out_dir.clone(),
        config,
        hyper,
        prior: prior_file,
    };
    write_json_pretty(&args.out_dir.join("manifest.json"), &manifest)?;

    println!(
        "ran {} iterations on p = {}: {} samples stored, acceptance rate {:.3}, {:.1}s sampling -> {}",
        trace.config.iters,
        trace.p,
        trace.samples.len(),
        trace.accept_rate(),
        trace.sampling_secs,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> AppResult<()> {
    let samples = read_trace_jsonl(&args.trace)?;
    let summary_names = sibling_summary_names(&args.trace);
    let truth = read_truth(&args.truth, summary_names.as_deref())?;
    let p = truth.p();

    let names = match summary_names {
        Some(n) if n.len() == p => n,
        _ => minimap::data::default_names(p),
    };
    for sample in &samples {
        if let Some(&(u, v)) = sample.edges.iter().find(|&&(u, v)| u >= p || v >= p) {
            return Err(AppError::Data(format!(
                "trace edge ({u}, {v}) is out of range for the truth's p = {p}"
            )));
        }
    }

    let kind = FeatureKind::from(args.kind);
    let trace = Trace::from_samples(p, names.clone(), samples);
    let features = feature_posterior_with_threads(&trace, kind, worker_threads())?;
    let roc = roc_curve(&features, &Truth::Dag(&truth))?;

    std::fs::create_dir_all(&args.out_dir)?;
    let mut writer = csv::Writer::from_path(args.out_dir.join("features.csv"))?;
    writer.write_record(["from", "to", "probability"])?;
    for (u, v) in feature_pairs(kind, p) {
        writer.write_record([
            names[u].as_str(),
            names[v].as_str(),
            &features.values[(u, v)].to_string(),
        ])?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(args.out_dir.join("roc.csv"))?;
    writer.write_record(["threshold", "fpr", "tpr"])?;
    for point in &roc.points {
        writer.write_record([
            point.threshold.to_string(),
            point.fpr.to_string(),
            point.tpr.to_string(),
        ])?;
    }
    writer.flush()?;

    write_json_pretty(&args.out_dir.join("metrics.json"), &serde_json::json!({ "auroc": roc.auroc }))?;

    println!("{} auroc {:.4} -> {}", kind, roc.auroc, args.out_dir.display());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> AppResult<()> {
    use rand::SeedableRng;
    if args.iters_per_p == 0 {
        return Err(AppError::Usage("--iters-per-p must be at least 1".into()));
    }
    let mut sizes = args.p_list.clone();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.iter().any(|&p| p < 2) {
        return Err(AppError::Usage("--p-list entries must be at least 2".into()));
    }

    let mut times = Vec::new();
    for &p in &sizes {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(p as u64));
        let dag = random_dag(p, (6.0 / p as f64).min(0.5), Some(3), &mut rng)?;
        let sem = random_weights(&dag, &mut rng);
        let n = 300.max(3 * p);
        let data = sample_sem(&sem, n, &mut rng)?;

        let config = ChainConfig::new(args.iters_per_p, 0, 0.01, args.seed.wrapping_add(p as u64));
        let hyper = BgeHyper::default_for(p);
        let prior = minimap::score::PriorSpec::sparsity(0.5);
        let trace = run_chain(&data, &config, &hyper, &prior)?;
        times.push(trace.mean_iter_secs());
        println!("p = {p}: {:.3e} s/iteration", trace.mean_iter_secs());
    }

    std::fs::create_dir_all(&args.out_dir)?;
    let mut writer = csv::Writer::from_path(args.out_dir.join("bench.csv"))?;
    writer.write_record(["p", "mean_iter_secs", "relative"])?;
    for (&p, &t) in sizes.iter().zip(&times) {
        writer.write_record([p.to_string(), t.to_string(), (t / times[0]).to_string()])?;
    }
    writer.flush()?;

    // least-squares slope of ln(time) on ln(p); the fitted c of an O(p^c)
    // per-iteration cost
    let slope = if sizes.len() >= 2 && times.iter().all(|&t| t > 0.0) {
        let xs: Vec<f64> = sizes.iter().map(|&p| (p as f64).ln()).collect();
        let ys: Vec<f64> = times.iter().map(|&t| t.ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    write_json_pretty(&args.out_dir.join("bench.json"), &serde_json::json!({ "slope_c": slope }))?;

    match slope {
        Some(c) => println!("fitted log-log slope c = {c:.2} -> {}", args.out_dir.display()),
        None => println!("slope needs at least two sizes -> {}", args.out_dir.display()),
    }
    Ok(())
}

/// Demotes a library `Invalid` to a usage error: when generation flags are
/// structurally bad (p too small, rows too few) the fault is the flag value.
fn usage_if_invalid(e: LibError) -> AppError {
    match &e {
        LibError::Invalid { .. } => AppError::Usage(e.to_string()),
        _ => e.into(),
    }
}

fn parse_init(spec: &str) -> AppResult<InitStrategy> {
    if spec == "random" {
        return Ok(InitStrategy::Random);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let order: Vec<usize> = serde_json::from_reader(open(Path::new(path))?)?;
        let perm = Permutation::from_order(order).map_err(|e| AppError::Data(e.to_string()))?;
        return Ok(InitStrategy::Given(perm));
    }
    if let Some(m) = spec.strip_prefix("best-of:") {
        let m: usize = m
            .parse()
            .map_err(|_| AppError::Usage(format!("bad --init best-of count {m:?}")))?;
        return Ok(InitStrategy::BestOfM(m));
    }
    Err(AppError::Usage(format!(
        "unrecognized --init {spec:?}; expected random, file:<path>, or best-of:<m>"
    )))
}

/// MINIMAP_THREADS caps feature-counting parallelism; default is the
/// machine's core count.
fn worker_threads() -> usize {
    if let Ok(raw) = std::env::var("MINIMAP_THREADS") {
        match raw.parse::<usize>() {
            Ok(t) if t >= 1 => return t,
            _ => eprintln!("warning: ignoring MINIMAP_THREADS={raw:?}; expected a positive integer"),
        }
    }
    std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1)
}

fn write_trace_jsonl(path: &Path, samples: &[TraceSample]) -> AppResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for sample in samples {
        serde_json::to_writer(&mut out, sample)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_trace_jsonl(path: &Path) -> AppResult<Vec<TraceSample>> {
    let reader = BufReader::new(open(path)?);
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line)?);
    }
    Ok(samples)
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_edges_csv(path: &Path, dag: &Dag, names: &[String]) -> AppResult<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["from", "to"])?;
    for (u, v) in dag.edges() {
        writer.write_record([names[u].as_str(), names[v].as_str()])?;
    }
    writer.flush()?;
    Ok(())
}

fn write_cpdag_csv(path: &Path, cpdag: &Cpdag, names: &[String]) -> AppResult<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["from", "to", "kind"])?;
    for (u, v) in cpdag.directed() {
        writer.write_record([names[u].as_str(), names[v].as_str(), "directed"])?;
    }
    for (u, v) in cpdag.undirected() {
        writer.write_record([names[u].as_str(), names[v].as_str(), "undirected"])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads the `names` array from the summary.json next to a trace, if any.
fn sibling_summary_names(trace_path: &Path) -> Option<Vec<String>> {
    let path = trace_path.parent()?.join("summary.json");
    let summary: RunSummary = serde_json::from_reader(File::open(path).ok()?).ok()?;
    Some(summary.names)
}

/// A truth DAG from any of the accepted formats. JSON files holding a SEM
/// (3-tuple edges with weights) or a bare DAG (2-tuple edges) are told
/// apart by their fields; anything else is an edge-list CSV of names,
/// resolved against the trace's column names.
fn read_truth(path: &Path, names: Option<&[String]>) -> AppResult<Dag> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value = serde_json::from_reader(open(path)?)?;
        if value.get("noise_var").is_some() {
            let file: SemSpecFile = serde_json::from_value(value)?;
            let spec: SemSpec = file.into_spec()?;
            return Ok(spec.dag().clone());
        }
        #[derive(Deserialize)]
        struct DagFile {
            p: usize,
            edges: Vec<(usize, usize)>,
        }
        let file: DagFile = serde_json::from_value(value)?;
        return Ok(Dag::from_edges(file.p, file.edges)?);
    }

    let names = names.ok_or_else(|| {
        AppError::Data(
            "an edge-list CSV truth needs column names from the trace's sibling summary.json"
                .into(),
        )
    })?;
    let lookup = |name: &str| {
        names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| AppError::Data(format!("unknown column name {name:?} in truth file")))
    };
    let mut reader = csv::Reader::from_path(path)?;
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 2 {
            return Err(AppError::Data("truth CSV rows need from and to columns".into()));
        }
        edges.push((lookup(record[0].trim())?, lookup(record[1].trim())?));
    }
    Ok(Dag::from_edges(names.len(), edges)?)
}
