use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use passgym::agents::{
    a2c_train, dqn_train, evaluate_policy, ppo_train, AgentError, Checkpoint, CheckpointError, EnvFactory,
    GreedyPolicy, Policy, TrainFailure, TrainOutcome, ValueInputMode,
};
use passgym::bench::{
    compare_reports, generate_suite, random_bindings, read_suite, run_evaluation, tensors_close, write_report,
    write_suite, BenchError, EvalReport, MANIFEST_FILE,
};
use passgym::config::{ConfigError, RunConfig};
use passgym::env::{EnvConfig, PassEnv};
use passgym::graph::{cost_analysis, emit_text, evaluate, parse_text, CostAnalysis, OpKind};
use passgym::passes::Catalog;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::InvalidRange(_) => CliError::Usage(e.to_string()),
            BenchError::Agent(AgentError::Numeric(_)) | BenchError::MetricUndefined(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Numeric(_) => CliError::Numeric(e.to_string()),
            AgentError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Parser)]
#[command(
    name = "passgym",
    version,
    about = "Learn compiler pass orderings on a miniature tensor IR"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test benchmark suites.
    Gen(GenArgs),
    /// Train an agent on the train suite.
    Train(TrainArgs),
    /// Score a checkpoint or baseline on the test suite.
    Eval(EvalArgs),
    /// Run a trained policy on one graph file.
    Optimize(OptimizeArgs),
    /// Print a graph and its cost analysis.
    Show { graph: PathBuf },
    /// Inspect the pass catalog.
    Catalog {
        #[command(subcommand)]
        action: CatalogCommand,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// List pass ids, names and descriptions.
    List,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    test_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving `train/` and `test/`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgoArg {
    Ppo,
    Dqn,
    A2c,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "ppo")]
    algo: AlgoArg,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Potential-based reward shaping on flop and transcendental counts.
    #[arg(long)]
    shaping: bool,
    /// Feed cost-analysis features to the value network.
    #[arg(long)]
    value_features: bool,
    /// Train suite directory.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Greedy,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "baseline")]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Test suite directory.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Report path stem; `.csv` and `.json` are written.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print per-benchmark ratio deltas between two JSON reports.
    #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with_all = ["checkpoint", "baseline", "suite", "out"])]
    compare: Option<Vec<PathBuf>>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    graph: PathBuf,
    /// Output graph; defaults to `<input>.opt.mg`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check the result against the input on random bindings.
    #[arg(long)]
    verify: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let catalog = Arc::new(Catalog::standard());
    match cli.command {
        Command::Gen(args) => cmd_gen(config, &catalog, args),
        Command::Train(args) => cmd_train(config, catalog, args),
        Command::Eval(args) => cmd_eval(config, catalog, args),
        Command::Optimize(args) => cmd_optimize(config, catalog, args),
        Command::Show { graph } => cmd_show(&graph),
        Command::Catalog {
            action: CatalogCommand::List,
        } => emit(&catalog.listing()),
    }
}

/// Flag, then config file, then `PASSGYM_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> Result<u64> {
    if let Some(s) = flag.or(config.seed) {
        return Ok(s);
    }
    match std::env::var("PASSGYM_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("PASSGYM_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn cmd_gen(mut config: RunConfig, catalog: &Catalog, args: GenArgs) -> Result<()> {
    if let Some(c) = args.count {
        config.suite.count = c;
    }
    if let Some(c) = args.test_count {
        config.suite.test_count = c;
    }
    config.validate(catalog)?;
    let seed = resolve_seed(args.seed, &config)?;
    let s = &config.suite;
    let train_start = s.train_seed_range.block_start(seed, s.count)?;
    let test_start = s.test_seed_range.block_start(seed, s.test_count)?;
    let (train_dir, test_dir) = match &args.out {
        Some(out) => (out.join("train"), out.join("test")),
        None => (config.output.train_suite_dir(), config.output.test_suite_dir()),
    };
    let train = generate_suite(s.count, s.size_range, train_start)?;
    let test = generate_suite(s.test_count, s.size_range, test_start)?;
    for (dir, suite) in [(&train_dir, &train), (&test_dir, &test)] {
        clear_suite_dir(dir)?;
        write_suite(dir, suite)?;
    }
    println!("train: {} graphs in {}", train.len(), train_dir.display());
    println!("test: {} graphs in {}", test.len(), test_dir.display());
    Ok(())
}

/// Removes a previous suite so stale graphs never outlive the manifest.
fn clear_suite_dir(dir: &Path) -> Result<()> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(());
    };
    for entry in entries.flatten() {
        let path = entry.path();
        let stale = path.extension().is_some_and(|e| e == "mg") || path.file_name().is_some_and(|n| n == MANIFEST_FILE);
        if stale {
            std::fs::remove_file(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

fn cmd_train(mut config: RunConfig, catalog: Arc<Catalog>, args: TrainArgs) -> Result<()> {
    if args.shaping {
        config.env.shaping.enabled = true;
    }
    if args.value_features {
        config.ppo.value_input_mode = ValueInputMode::ObsPlusCostFeatures;
        config.a2c.value_input_mode = ValueInputMode::ObsPlusCostFeatures;
    }
    if let Some(steps) = args.steps {
        config.ppo.total_steps = steps;
        config.dqn.total_steps = steps;
        config.a2c.total_steps = steps;
    }
    config.validate(&catalog)?;
    if args.value_features && matches!(args.algo, AlgoArg::Dqn) {
        return Err(CliError::Usage(
            "--value-features needs an actor-critic algorithm".into(),
        ));
    }
    let seed = resolve_seed(args.seed, &config)?;
    let suite_dir = args.suite.unwrap_or_else(|| config.output.train_suite_dir());
    let suite = read_suite(&suite_dir)?;
    let factory = EnvFactory::new(
        config.env.clone(),
        catalog,
        suite.into_iter().map(|b| b.graph).collect(),
    );
    let result = match args.algo {
        AlgoArg::Ppo => ppo_train(&factory, &config.ppo, seed),
        AlgoArg::Dqn => dqn_train(&factory, &config.dqn, seed),
        AlgoArg::A2c => a2c_train(&factory, &config.a2c, seed),
    };
    let ckpt_path = args.checkpoint.unwrap_or_else(|| config.output.checkpoint_path());
    let log_path = args.log.unwrap_or_else(|| config.output.log_path());
    let save = |outcome: &TrainOutcome| -> Result<()> {
        outcome.checkpoint.save(&ckpt_path)?;
        outcome.log.save(&log_path)?;
        Ok(())
    };
    match result {
        Ok(outcome) => {
            save(&outcome)?;
            println!("checkpoint: {}", ckpt_path.display());
            println!("log: {}", log_path.display());
            match outcome.log.final_mean_episode_return() {
                Some(r) => println!("final mean episode return: {r}"),
                None => println!("final mean episode return: n/a (no finished episodes)"),
            }
            Ok(())
        }
        Err(TrainFailure { error, last_good }) => {
            if let Some(outcome) = last_good {
                save(&outcome)?;
                eprintln!("last good checkpoint kept at {}", ckpt_path.display());
            }
            Err(error.into())
        }
    }
}

fn load_checkpoint(path: &Path, catalog: &Catalog) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.check_catalog(catalog)?;
    Ok(ckpt)
}

fn cmd_eval(config: RunConfig, catalog: Arc<Catalog>, args: EvalArgs) -> Result<()> {
    if let Some(paths) = args.compare {
        return cmd_compare(&paths[0], &paths[1]);
    }
    config.validate(&catalog)?;
    let (policy, env): (Box<dyn Policy>, EnvConfig) = match (args.baseline, &args.checkpoint) {
        (Some(BaselineArg::Greedy), _) => (Box::new(GreedyPolicy), config.env.clone()),
        (None, path) => {
            let path = path.clone().unwrap_or_else(|| config.output.checkpoint_path());
            let ckpt = load_checkpoint(&path, &catalog)?;
            (ckpt.policy()?, ckpt.training_meta.env.clone())
        }
    };
    let suite_dir = args.suite.unwrap_or_else(|| config.output.test_suite_dir());
    let suite = read_suite(&suite_dir)?;
    let report = run_evaluation(policy.as_ref(), &suite, &env, catalog)?;
    let stem = args.out.unwrap_or_else(|| config.output.directory.join("report"));
    write_report(&report, &stem)?;
    println!("report: {} (.csv, .json)", stem.display());
    match report.geometric_mean {
        Some(g) => println!("geometric mean: {g}"),
        None => println!("geometric mean: undefined (all rows excluded or failed)"),
    }
    if let Some(w) = report.worst_improvement() {
        println!(
            "worst improvement: {} {:.3}%",
            w.name,
            w.improvement_percent.expect("filtered on presence")
        );
    }
    if !report.excluded.is_empty() {
        println!("excluded: {}", report.excluded.join(", "));
    }
    if !report.failed.is_empty() {
        println!("failed: {}", report.failed.join(", "));
    }
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    EvalReport::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_compare(a: &Path, b: &Path) -> Result<()> {
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    let mut out = String::from("name\tratio_a\tratio_b\tdelta\n");
    for d in compare_reports(&ra, &rb) {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", d.name, fmt(d.a), fmt(d.b), fmt(d.delta));
    }
    let _ = writeln!(
        out,
        "geometric_mean\t{}\t{}\t{}",
        fmt(ra.geometric_mean),
        fmt(rb.geometric_mean),
        fmt(ra.geometric_mean.zip(rb.geometric_mean).map(|(x, y)| y - x))
    );
    emit(&out)
}

#[derive(Serialize)]
struct CostSummary {
    op_count: u64,
    flop_count: u64,
    transcendental_count: u64,
}

impl From<&CostAnalysis> for CostSummary {
    fn from(c: &CostAnalysis) -> Self {
        Self {
            op_count: c.op_count,
            flop_count: c.flop_count,
            transcendental_count: c.transcendental_count,
        }
    }
}

#[derive(Serialize)]
struct Sidecar {
    input: PathBuf,
    output: PathBuf,
    passes: Vec<String>,
    changed: Vec<bool>,
    before: CostSummary,
    after: CostSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    verified_bindings: Option<usize>,
}

fn parse_graph_file(path: &Path) -> Result<passgym::graph::Graph> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut graph = parse_text(&text).map_err(|e| CliError::Data(format!("{}:{e}", path.display())))?;
    graph.name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(graph)
}

const VERIFY_BINDINGS: usize = 5;
const VERIFY_TOLERANCE: f64 = 1e-9;

fn cmd_optimize(config: RunConfig, catalog: Arc<Catalog>, args: OptimizeArgs) -> Result<()> {
    let ckpt_path = args.checkpoint.unwrap_or_else(|| config.output.checkpoint_path());
    let ckpt = load_checkpoint(&ckpt_path, &catalog)?;
    let policy = ckpt.policy()?;
    let graph = parse_graph_file(&args.graph)?;
    let mut env = PassEnv::new(ckpt.training_meta.env.clone(), catalog.clone()).map_err(AgentError::from)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outcome = evaluate_policy(policy.as_ref(), &mut env, &graph, true, &mut rng)?;
    let mut changed = vec![];
    let mut g = graph.clone();
    for &p in &outcome.passes {
        let (next, c) = catalog.apply_pass(&g, p).map_err(AgentError::from)?;
        changed.push(c);
        g = next;
    }
    let verified = if args.verify {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut checked = 0;
        for _ in 0..VERIFY_BINDINGS {
            let b = random_bindings(&graph, &mut rng);
            let eval = |g| evaluate(g, &b).map_err(|e| CliError::Data(e.to_string()));
            let (x, y) = (eval(&graph)?, eval(&outcome.final_graph)?);
            if !x.is_finite() {
                continue;
            }
            if !tensors_close(&x, &y, VERIFY_TOLERANCE) {
                return Err(CliError::Data(
                    "optimized graph disagrees with the input on random bindings".into(),
                ));
            }
            checked += 1;
        }
        println!("verified on {checked} random bindings");
        Some(checked)
    } else {
        None
    };
    let out = args.out.unwrap_or_else(|| args.graph.with_extension("opt.mg"));
    if out == args.graph {
        return Err(CliError::Usage("refusing to overwrite the input graph".into()));
    }
    std::fs::write(&out, emit_text(&outcome.final_graph))
        .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    let sidecar = Sidecar {
        input: args.graph.clone(),
        output: out.clone(),
        passes: outcome.passes.iter().map(|&p| catalog.name(p).to_string()).collect(),
        changed,
        before: (&cost_analysis(&graph)).into(),
        after: (&cost_analysis(&outcome.final_graph)).into(),
        verified_bindings: verified,
    };
    let side_path = out.with_extension("json");
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(&side_path, text).map_err(|e| CliError::Data(format!("{}: {e}", side_path.display())))?;
    println!("{} -> {} ops", sidecar.before.op_count, sidecar.after.op_count);
    println!("passes: {}", sidecar.passes.join(" "));
    println!("wrote {} and {}", out.display(), side_path.display());
    Ok(())
}

fn cmd_show(path: &Path) -> Result<()> {
    let graph = parse_graph_file(path)?;
    let cost = cost_analysis(&graph);
    let mut out = emit_text(&graph);
    out.push('\n');
    let _ = writeln!(out, "op_count\t{}", cost.op_count);
    let _ = writeln!(out, "flop_count\t{}", cost.flop_count);
    let _ = writeln!(out, "transcendental_count\t{}", cost.transcendental_count);
    for kind in OpKind::ALL {
        let n = cost.per_kind[kind.index()];
        if n > 0 {
            let _ = writeln!(out, "{}\t{n}", kind.mnemonic());
        }
    }
    emit(&out)
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}
