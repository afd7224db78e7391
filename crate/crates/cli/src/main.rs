//! `nmfcomm`: community detection, planted-partition benchmarks and partition
//! metrics from the command line.
//!
//! Exit status is 0 on success, 2 when the solver fails numerically and 1 for
//! every other error. Errors are reported on standard error as a single line
//! `nmfcomm: error[<kind>]: <message>`.

use std::env;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nmfcomm::bench::{self, RunRecord, BENCH_K_MAX};
use nmfcomm::graph::{InteractionMatrix, NgParams, NodeIds};
use nmfcomm::membership::{compact, entropy_bits};
use nmfcomm::metrics::{modularity, nmi};
use nmfcomm::nmf::{SolverConfig, DEFAULT_SEED};
use nmfcomm::{Error, Result};

const OUTPUT_DIR_VAR: &str = "NMFCOMM_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "nmfcomm", version, about = "Overlapping community detection with Bayesian NMF")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a graph and write its soft and hard community assignment.
    Detect(DetectArgs),
    /// Run benchmark experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Compute a partition metric and print it with six decimals.
    #[command(subcommand)]
    Metrics(MetricsCommand),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Cohesion sweep over planted-partition graphs.
    Ng(NgArgs),
    /// Seeded restarts on an edge-list file, optionally scored against a reference partition.
    Dataset(DatasetArgs),
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Normalized mutual information between two partition files.
    Nmi {
        a: PathBuf,
        b: PathBuf,
        /// Accepted for interface uniformity; metrics are deterministic.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Modularity of a partition on a graph, keyed by the graph's node ids.
    Modularity {
        graph: PathBuf,
        partition: PathBuf,
        /// Accepted for interface uniformity; metrics are deterministic.
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Upper bound on the number of components (capped at the node count).
    #[arg(long)]
    k_max: Option<usize>,
    /// Shape of the gamma prior on each precision.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Rate of the gamma prior on each precision.
    #[arg(long, default_value_t = 2.0)]
    b: f64,
    /// Relative energy change below which a fit stops.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Numerical floor for factor entries and divisions.
    #[arg(long, default_value_t = 1e-12)]
    eps: f64,
    /// Base seed; run r uses seed + r.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

impl SolverArgs {
    fn config(&self, default_k_max: Option<usize>) -> SolverConfig {
        SolverConfig {
            k_max: self.k_max.or(default_k_max),
            a: self.a,
            b: self.b,
            max_iters: self.max_iters,
            tol: self.tol,
            eps: self.eps,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Output file, or `-` for standard output. Defaults to a file in
    /// $NMFCOMM_OUTPUT_DIR (or the working directory).
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Include wall-clock timings, which makes reports differ between runs.
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct DetectArgs {
    graph: PathBuf,
    /// Number of seeded fits; the one with the highest modularity is reported.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Also write `node community` lines for the reported assignment.
    #[arg(long)]
    partition_out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct NgArgs {
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    c: usize,
    #[arg(long, default_value_t = 16.0)]
    k_mean: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0, 4.0, 6.0, 8.0])]
    kout: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    realizations: usize,
    /// Fits per realization; the lowest-energy fit is scored.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Use K = N instead of the benchmark cap of 64 components.
    #[arg(long, conflicts_with = "k_max")]
    full_k: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct DatasetArgs {
    graph: PathBuf,
    /// Reference partition keyed by the graph's node ids.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    /// Use K = N instead of the benchmark cap of 64 components.
    #[arg(long, conflicts_with = "k_max")]
    full_k: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Serialize)]
struct Meta<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config: &'a SolverConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<String>,
}

impl<'a> Meta<'a> {
    fn new(command: &'static str, config: &'a SolverConfig, dataset: Option<String>) -> Self {
        Meta {
            tool: "nmfcomm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: config.seed,
            config,
            dataset,
        }
    }
}

#[derive(Serialize)]
struct GraphSummary {
    nodes: usize,
    edges: usize,
    merged_duplicates: usize,
    components: usize,
}

#[derive(Serialize)]
struct NodeAssignment {
    id: u64,
    /// Index into the compacted community list; `null` for unassigned nodes.
    community: Option<usize>,
    entropy_bits: Option<f64>,
    membership: Vec<f64>,
}

#[derive(Serialize)]
struct EnergySummary {
    initial: f64,
    #[serde(rename = "final")]
    last: f64,
    iterations: usize,
    converged: bool,
}

#[derive(Serialize)]
struct Detection {
    seed: u64,
    k_effective: usize,
    q: f64,
    mean_entropy_bits: f64,
    energy: EnergySummary,
    /// Original component index of each compacted community.
    components: Vec<usize>,
    nodes: Vec<NodeAssignment>,
}

#[derive(Serialize)]
struct DetectDocument<'a> {
    meta: Meta<'a>,
    graph: GraphSummary,
    runs: &'a [RunRecord],
    aggregates: &'a bench::RestartAggregates,
    result: Detection,
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    meta: Meta<'a>,
    params: NgParams,
    kout: &'a [f64],
    realizations: usize,
    restarts: usize,
    cells: &'a [bench::SweepCell],
    rows: &'a [bench::SweepRow],
}

#[derive(Serialize)]
struct DatasetDocument<'a> {
    meta: Meta<'a>,
    graph: GraphSummary,
    runs: &'a [RunRecord],
    aggregates: &'a bench::RestartAggregates,
    best_run: BestSummary,
}

#[derive(Serialize)]
struct BestSummary {
    index: usize,
    seed: u64,
    q: f64,
    k_effective: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn report(kind: &str, message: &str) {
    let message = message.replace(['\n', '\r'], " ");
    eprintln!("nmfcomm: error[{kind}]: {message}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Detect(args) => detect(args),
        Command::Bench(BenchCommand::Ng(args)) => bench_ng(args),
        Command::Bench(BenchCommand::Dataset(args)) => bench_dataset(args),
        Command::Metrics(MetricsCommand::Nmi { a, b, .. }) => {
            let a = bench::load_partition_file(&a, NodeIds::Inferred)?;
            let b = bench::load_partition_file(&b, NodeIds::Inferred)?;
            print_metric(nmi(&a, &b)?)
        }
        Command::Metrics(MetricsCommand::Modularity { graph, partition, .. }) => {
            let (g, load) = bench::load_graph_file(&graph)?;
            let p = bench::load_partition_file(&partition, NodeIds::Remapped(&load))?;
            print_metric(modularity(&g, &p)?)
        }
    }
}

fn print_metric(value: f64) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{value:.6}")?;
    out.flush()?;
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "graph".to_owned(), |s| s.to_string_lossy().into_owned())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn output_path(explicit: Option<PathBuf>, default_name: String) -> PathBuf {
    explicit.unwrap_or_else(|| {
        env::var_os(OUTPUT_DIR_VAR)
            .map_or_else(|| PathBuf::from("."), PathBuf::from)
            .join(default_name)
    })
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str() == "-" {
        let mut out = io::stdout().lock();
        out.write_all(bytes)?;
        out.flush()?;
        return Ok(());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| file_error(path, e))?;
    }
    fs::write(path, bytes).map_err(|e| file_error(path, e))
}

fn file_error(path: &Path, e: io::Error) -> Error {
    Error::File {
        path: path.to_owned(),
        source: Box::new(Error::Io(e)),
    }
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn component_count(g: &nmfcomm::Graph) -> usize {
    let mut roots = g.components();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

fn detect(args: DetectArgs) -> Result<()> {
    let config = args.solver.config(None);
    let (g, load) = bench::load_graph_file(&args.graph)?;
    let v = InteractionMatrix::from_graph(&g);
    let mut report = bench::restart_experiment(&v, &g, &config, args.restarts, config.seed)?;
    if !args.out.timings {
        report.strip_timings();
    }
    let best = &report.best_run;
    let record = &report.runs[best.index];
    let compacted = compact(&best.membership);
    let entropy = entropy_bits(&compacted);
    let nodes = load
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| NodeAssignment {
            id,
            community: compacted.labels[i],
            entropy_bits: entropy.per_node[i],
            membership: compacted.pi.row(i).to_vec(),
        })
        .collect();
    let result = Detection {
        seed: best.seed,
        k_effective: best.k_effective,
        q: best.q,
        mean_entropy_bits: entropy.mean_bits,
        energy: EnergySummary {
            initial: record.initial_energy,
            last: record.final_energy,
            iterations: record.iterations,
            converged: record.converged,
        },
        components: compacted.remap.keys().copied().collect(),
        nodes,
    };

    if let Some(path) = &args.partition_out {
        let mut text = String::new();
        let mut next = compacted.k_effective;
        for (id, label) in load.node_ids.iter().zip(&compacted.labels) {
            let community = label.unwrap_or_else(|| {
                next += 1;
                next - 1
            });
            text.push_str(&format!("{id} {community}\n"));
        }
        write_output(path, text.as_bytes())?;
    }

    let doc = DetectDocument {
        meta: Meta::new("detect", &config, Some(file_name(&args.graph))),
        graph: GraphSummary {
            nodes: g.n(),
            edges: g.edge_count(),
            merged_duplicates: load.merged_duplicates,
            components: component_count(&g),
        },
        runs: &report.runs,
        aggregates: &report.aggregates,
        result,
    };
    let path = output_path(args.out.output, format!("{}.detect.json", file_stem(&args.graph)));
    write_output(&path, &to_json(&doc)?)
}

fn bench_k_max(explicit: Option<usize>, full_k: bool) -> Option<usize> {
    match (explicit, full_k) {
        (Some(k), _) => Some(k),
        (None, true) => None,
        (None, false) => Some(BENCH_K_MAX),
    }
}

fn bench_ng(args: NgArgs) -> Result<()> {
    let config = args.solver.config(bench_k_max(args.solver.k_max, args.full_k));
    let params = NgParams {
        n: args.n,
        c: args.c,
        k_mean: args.k_mean,
        k_out: 0.0,
    };
    let mut report = bench::ng_sweep_with_restarts(
        &params,
        &args.kout,
        args.realizations,
        args.restarts,
        &config,
        config.seed,
    )?;
    if !args.out.timings {
        report.strip_timings();
    }
    let (bytes, extension) = match args.format {
        Format::Json => {
            let doc = SweepDocument {
                meta: Meta::new("bench ng", &config, None),
                params,
                kout: &args.kout,
                realizations: args.realizations,
                restarts: args.restarts,
                cells: &report.cells,
                rows: &report.rows,
            };
            (to_json(&doc)?, "json")
        }
        Format::Csv => (sweep_csv(&report.rows)?, "csv"),
    };
    let path = output_path(args.out.output, format!("ng_sweep.{extension}"));
    write_output(&path, &bytes)
}

fn sweep_csv(rows: &[bench::SweepRow]) -> Result<Vec<u8>> {
    let csv_error = |e: csv::Error| Error::Validation(format!("cannot write csv: {e}"));
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(csv_error)?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Validation(format!("cannot write csv: {e}")))
}

fn bench_dataset(args: DatasetArgs) -> Result<()> {
    let config = args.solver.config(bench_k_max(args.solver.k_max, args.full_k));
    let mut ingest = bench::ingest_and_score(
        &args.graph,
        args.reference.as_deref(),
        &config,
        args.restarts,
        config.seed,
    )?;
    if !args.out.timings {
        ingest.report.strip_timings();
    }
    let best = &ingest.report.best_run;
    let doc = DatasetDocument {
        meta: Meta::new("bench dataset", &config, Some(ingest.dataset.clone())),
        graph: GraphSummary {
            nodes: ingest.nodes,
            edges: ingest.edges,
            merged_duplicates: ingest.merged_duplicates,
            components: ingest.components,
        },
        runs: &ingest.report.runs,
        aggregates: &ingest.report.aggregates,
        best_run: BestSummary {
            index: best.index,
            seed: best.seed,
            q: best.q,
            k_effective: best.k_effective,
        },
    };
    let path = output_path(args.out.output, format!("{}.bench.json", file_stem(&args.graph)));
    write_output(&path, &to_json(&doc)?)
}
