use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use egoagg::construct::{build_overlay, Algorithm, ConstructionParams};
use egoagg::dataflow::{annotate_with, decide_with, split_nodes, Method};
use egoagg::engine::{AggSpec, WriteModel};
use egoagg::graph::{derive_bipartite, load_graph, Activity, DataGraph, LoadOptions, NodeId, QuerySpec, Window};
use egoagg::overlay::{depth_profile, from_text, sharing_index, to_text, trivial_overlay, validate, OverlayGraph};
use egoagg::workload::{
    compare, gen_shift, gen_zipf, holme_kim, http_workload, observed_activity, parse_http_trace, prepare, prepare_decided,
    random_graph, read_trace, render, run_benchmark, write_trace, BenchConfig, OverlayChoice, ReportFormat, ZipfParams,
};

type AnyError = Box<dyn std::error::Error>;

/// Ego-centric neighborhood aggregates over streaming graphs.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an overlay for a graph and query.
    Build(BuildArgs),
    /// Choose push/pull decisions for an overlay.
    Decide(DecideArgs),
    /// Replay a trace and report metrics.
    Run(RunArgs),
    /// Run every overlay, plan and ratio combination.
    Compare(CompareArgs),
    /// Check an overlay against a graph and query.
    Validate(ValidateArgs),
    /// Generate synthetic graphs and traces.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Args)]
struct GraphArgs {
    /// Edge list: one `u v` pair per line.
    #[arg(long)]
    graph: PathBuf,
    /// Treat every line as a symmetric edge.
    #[arg(long)]
    undirected: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long, default_value = "sum")]
    agg: AggSpec,
    #[arg(long, default_value = "count:1")]
    window: Window,
    #[arg(long, default_value_t = 1)]
    hops: u32,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, default_value = "vnma")]
    algo: OverlayChoice,
    #[arg(long, default_value_t = 0x5EED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ActivitySource {
    /// JSON map from node id to `{"write": w, "read": r}`.
    #[arg(long, conflicts_with = "trace")]
    activity: Option<PathBuf>,
    /// Estimate rates from a trace instead.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DecideArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    overlay: PathBuf,
    #[command(flatten)]
    source: ActivitySource,
    #[arg(long, default_value = "optimal")]
    plan: Method,
    /// Split pull nodes after planning.
    #[arg(long)]
    split: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WriteModelArg {
    Queueing,
    Unithread,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, value_enum, default_value = "unithread")]
    write_model: WriteModelArg,
    /// Replay events one at a time on one injector.
    #[arg(long)]
    isolated: bool,
    #[arg(long, default_value = "text")]
    report: ReportFormat,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    trace: PathBuf,
    /// A decided overlay; otherwise one is built with `--algo` and `--plan`
    /// using rates observed in the trace.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long, default_value = "vnma")]
    algo: OverlayChoice,
    #[arg(long, default_value = "optimal")]
    plan: Method,
    #[arg(long, default_value_t = 0x5EED)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
    /// Write final per-reader aggregates as CSV.
    #[arg(long)]
    reads: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long, value_delimiter = ',', default_value = "trivial,vnma,iob")]
    algo: Vec<OverlayChoice>,
    #[arg(long, value_delimiter = ',', default_value = "optimal,all-push,all-pull")]
    plan: Vec<Method>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.2,1,5,20")]
    ratio: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    skew: f64,
    #[arg(long, default_value_t = 10_000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    query: QueryArgs,
    #[arg(long)]
    overlay: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphModel {
    /// Preferential attachment.
    Pa,
    /// Preferential attachment with triad closure.
    Hk,
    /// Uniform random arcs.
    Random,
}

#[derive(Subcommand)]
enum GenCommand {
    /// A synthetic edge list.
    Graph {
        #[arg(long, value_enum, default_value = "pa")]
        model: GraphModel,
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        /// Edges per new node, or mean out-degree for `random`.
        #[arg(long, default_value_t = 2.0)]
        degree: f64,
        /// Triad-closure probability for `hk`.
        #[arg(long, default_value_t = 0.5)]
        triad: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// A read/write trace over a graph's nodes.
    Trace {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 1.0)]
        ratio: f64,
        #[arg(long, default_value_t = 1.0)]
        skew: f64,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Rank nodes by degree instead of a seeded shuffle.
        #[arg(long)]
        degree_correlated: bool,
        /// Switch popularity and use this ratio for the second half.
        #[arg(long)]
        shift_ratio: Option<f64>,
        /// Derive events from an HTTP access log instead of Zipf draws.
        #[arg(long, conflicts_with_all = ["shift_ratio", "degree_correlated"])]
        http: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the expected per-node rates as JSON.
        #[arg(long)]
        activity_out: Option<PathBuf>,
    },
}

fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>, AnyError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load(args: &GraphArgs) -> Result<DataGraph, AnyError> {
    let f = File::open(&args.graph).map_err(|e| format!("{}: {e}", args.graph.display()))?;
    Ok(load_graph(BufReader::new(f), LoadOptions { directed: !args.undirected })?)
}

fn load_overlay(path: &Path) -> Result<OverlayGraph, AnyError> {
    Ok(from_text(&fs::read_to_string(path)?)?)
}

fn query(q: &QueryArgs) -> Result<QuerySpec, AnyError> {
    Ok(QuerySpec::new(q.agg, q.window, q.hops)?)
}

/// Rejects algorithm/aggregate pairs the overlay semantics forbid.
fn check_capabilities(algo: OverlayChoice, agg: AggSpec) {
    let caps = agg.caps();
    let rule = match algo {
        OverlayChoice::Built(Algorithm::VnmN) if !caps.subtractable => {
            "vnmn adds negative edges, which need a subtractable aggregate (sum, count)"
        }
        OverlayChoice::Built(Algorithm::VnmD) if !caps.duplicate_insensitive => {
            "vnmd lets a writer reach a reader along several paths, which needs a duplicate-insensitive aggregate (min, max)"
        }
        _ => return,
    };
    Cli::command()
        .error(ErrorKind::ArgumentConflict, format!("--algo {algo} cannot be used with --agg {agg}: {rule}"))
        .exit()
}

fn bench_config(q: &QueryArgs, algo: OverlayChoice, method: Method, seed: u64, e: &EngineArgs) -> BenchConfig {
    let mut cfg = BenchConfig::new(q.agg, q.window, q.hops);
    cfg.overlay = algo;
    cfg.method = method;
    cfg.threads = e.threads;
    cfg.isolated = e.isolated;
    cfg.write_model = match e.write_model {
        WriteModelArg::Queueing => WriteModel::Queueing,
        WriteModelArg::Unithread => WriteModel::UniThread,
    };
    cfg.construction = ConstructionParams { seed, ..ConstructionParams::default() };
    cfg
}

fn build(args: BuildArgs) -> Result<(), AnyError> {
    check_capabilities(args.algo, args.query.agg);
    let g = load(&args.graph)?;
    let q = query(&args.query)?;
    let a = derive_bipartite(&g, &q);
    let o = match args.algo {
        OverlayChoice::Trivial => trivial_overlay(&a),
        OverlayChoice::Built(algo) => {
            let params = ConstructionParams { seed: args.seed, ..ConstructionParams::default() };
            let out = build_overlay(&a, algo, q.aggregate.caps(), &params)?;
            for it in &out.iterations {
                eprintln!("iteration {} chunk {} changes {} SI {:.4}", it.iteration, it.chunk_size, it.changes, it.sharing_index);
            }
            out.overlay
        }
    };
    let si = sharing_index(&o, &a).unwrap_or(0.0);
    let depth = depth_profile(&o)?.mean;
    eprintln!("nodes {} edges {} SI {si:.4} mean depth {depth:.2}", o.node_count(), o.edge_count());
    sink(&args.out)?.write_all(to_text(&o).as_bytes())?;
    Ok(())
}

fn read_activity(src: &ActivitySource) -> Result<BTreeMap<NodeId, Activity>, AnyError> {
    match (&src.activity, &src.trace) {
        (Some(p), _) => Ok(serde_json::from_reader(BufReader::new(File::open(p)?))?),
        (None, Some(t)) => Ok(observed_activity(&read_trace(File::open(t)?)?)),
        (None, None) => Err("one of --activity or --trace is required".into()),
    }
}

fn decide(args: DecideArgs) -> Result<(), AnyError> {
    let g = load(&args.graph)?;
    let q = query(&args.query)?;
    let mut o = load_overlay(&args.overlay)?;
    let activity = read_activity(&args.source)?;
    let cfg = BenchConfig::new(q.aggregate, q.window, q.hops);
    let cm = cfg.cost_model();
    let mut freq = annotate_with(&o, |v| Some(activity.get(&v).copied().unwrap_or_default()))?;
    let plan = decide_with(&o, &freq, &cm, args.plan)?;
    plan.apply(&mut o);
    eprintln!("plan {} cost {:.4} push {} pull {}", args.plan, plan.cost(), plan.count(egoagg::Decision::Push), plan.count(egoagg::Decision::Pull));
    if args.split {
        let splits = split_nodes(&mut o, &mut freq, &cm)?;
        eprintln!("split {} nodes", splits.len());
    }
    let problems = validate(&o, &derive_bipartite(&g, &q), q.aggregate.caps());
    if !problems.is_empty() {
        return Err(format!("planned overlay is invalid: {problems:?}").into());
    }
    sink(&args.out)?.write_all(to_text(&o).as_bytes())?;
    Ok(())
}

fn run(args: RunArgs) -> Result<(), AnyError> {
    check_capabilities(args.algo, args.query.agg);
    let g = load(&args.graph)?;
    let events = read_trace(File::open(&args.trace)?)?;
    let activity = observed_activity(&events);
    let cfg = bench_config(&args.query, args.algo, args.plan, args.seed, &args.engine);
    let prepared = match &args.overlay {
        Some(p) => prepare_decided(&g, &activity, &cfg, load_overlay(p)?)?,
        None => prepare(&g, &activity, &cfg)?,
    };
    let out = run_benchmark(&prepared, &events, &cfg)?;
    if let Some(p) = &args.reads {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["reader", "value"])?;
        for (r, v) in &out.final_reads {
            w.write_record([r.to_string(), v.to_string()])?;
        }
        w.flush()?;
    }
    sink(&args.out)?.write_all(render(&[out.report], args.engine.report)?.as_bytes())?;
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> Result<(), AnyError> {
    for &algo in &args.algo {
        check_capabilities(algo, args.query.agg);
    }
    let g = load(&args.graph)?;
    let nodes: Vec<NodeId> = g.nodes().collect();
    let base = bench_config(&args.query, OverlayChoice::Trivial, Method::Optimal, args.seed, &args.engine);
    let mut reports = Vec::new();
    for &ratio in &args.ratio {
        let w = gen_zipf(&g, &nodes, &ZipfParams::new(args.skew, ratio, args.count, args.seed))?;
        for mut r in compare(&g, &w.activity, &w.events, &base, &args.algo, &args.plan)? {
            r.ratio = Some(ratio);
            reports.push(r);
        }
    }
    sink(&args.out)?.write_all(render(&reports, args.engine.report)?.as_bytes())?;
    Ok(())
}

fn validate_cmd(args: ValidateArgs) -> Result<bool, AnyError> {
    let g = load(&args.graph)?;
    let q = query(&args.query)?;
    let a = derive_bipartite(&g, &q);
    let o = load_overlay(&args.overlay)?;
    let problems = validate(&o, &a, q.aggregate.caps());
    for p in &problems {
        println!("violation: {p:?}");
    }
    if problems.is_empty() {
        println!(
            "ok: {} nodes, {} edges, SI {:.4}",
            o.node_count(),
            o.edge_count(),
            sharing_index(&o, &a).unwrap_or(0.0)
        );
    }
    Ok(problems.is_empty())
}

fn gen(cmd: GenCommand) -> Result<(), AnyError> {
    match cmd {
        GenCommand::Graph { model, nodes, degree, triad, seed, out } => {
            let m = degree.round().max(1.0) as usize;
            let g = match model {
                GraphModel::Pa => holme_kim(nodes, m, 0.0, seed),
                GraphModel::Hk => holme_kim(nodes, m, triad, seed),
                GraphModel::Random => random_graph(nodes, degree, seed),
            };
            let mut w = sink(&out)?;
            for (u, v) in g.edges() {
                writeln!(w, "{}\t{}", g.label(u), g.label(v))?;
            }
            w.flush()?;
        }
        GenCommand::Trace {
            graph,
            ratio,
            skew,
            count,
            seed,
            degree_correlated,
            shift_ratio,
            http,
            out,
            activity_out,
        } => {
            let g = load(&graph)?;
            let nodes: Vec<NodeId> = g.nodes().collect();
            let mut params = ZipfParams::new(skew, ratio, count, seed);
            params.degree_correlated = degree_correlated;
            let (events, activity) = if let Some(log) = http {
                let trace = parse_http_trace(BufReader::new(File::open(log)?))?;
                if trace.malformed > 0 {
                    eprintln!("skipped {} malformed lines", trace.malformed);
                }
                let events = http_workload(&trace, &nodes, ratio, seed)?;
                let activity = observed_activity(&events);
                (events, activity)
            } else if let Some(after) = shift_ratio {
                let s = gen_shift(&g, &nodes, &params, after)?;
                eprintln!("shift at event {}", s.shift_at);
                (s.events, s.before)
            } else {
                let w = gen_zipf(&g, &nodes, &params)?;
                (w.events, w.activity)
            };
            write_trace(&events, sink(&out)?)?;
            if let Some(p) = activity_out {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &activity)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => build(a),
        Command::Decide(a) => decide(a),
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Validate(a) => match validate_cmd(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Gen(c) => gen(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
