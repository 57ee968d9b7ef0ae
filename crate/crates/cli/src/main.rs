use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use l2c::bnb::{
    solve_mpe, BoundFirst, BranchPolicy, MaxDegreeBranching, NodePolicy, SolverOptions,
    StrongBranching,
};
use l2c::bounds::{elimination_order, OrderHeuristic, DEFAULT_I_BOUND};
use l2c::conditioning::{
    solve_with_conditioning, ConditioningConfig, HeadMode, NetworkScorer, NnBranching,
    NnNodePolicy, Strategy,
};
use l2c::data::{collect, load_dataset, save_dataset, CollectionConfig, Split};
use l2c::eval::{build_scorer, run_grid, ExperimentGrid, ScorerKind};
use l2c::generate::{random_chain, random_grid, random_model, RandomModelConfig};
use l2c::sampling::{gibbs_sample_conditioned, GibbsConfig};
use l2c::scorer::{load_checkpoint, save_checkpoint, train, Hyper, ScorerNetwork, TrainConfig};
use l2c::uai::{load_evidence, load_uai, serialize_uai};
use l2c::{Assignment, Error, GraphicalModel, Result};

#[derive(Parser)]
#[command(
    name = "l2c",
    version,
    about = "Learning to condition for MPE inference on binary graphical models"
)]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file overriding library defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random binary model in UAI format.
    Generate(GenerateArgs),
    /// Parse a UAI model and print a JSON summary.
    Parse(ModelArgs),
    /// Draw Gibbs samples, one assignment per line.
    Sample(SampleArgs),
    /// Collect a training dataset.
    Collect(CollectArgs),
    /// Train a scorer on a dataset.
    Train(TrainArgs),
    /// Condition with a scoring function and solve the residual.
    Condition(ConditionArgs),
    /// Solve an MPE query with branch and bound.
    Solve(SolveArgs),
    /// Run the experiment grid and write metric tables.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Mixed,
    Chain,
    Grid,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    shape: ShapeArg,
    /// Variable count (mixed and chain).
    #[arg(long, default_value_t = 12)]
    vars: usize,
    /// Grid rows and columns.
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 4)]
    cols: usize,
    /// Probability of a zero entry (mixed only).
    #[arg(long, default_value_t = 0.0)]
    zero_prob: f64,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// UAI model file.
    model: PathBuf,
    /// UAI evidence file.
    #[arg(long)]
    evidence: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    input: ModelArgs,
    #[arg(long, short)]
    n: usize,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
}

#[derive(Args)]
struct CollectArgs {
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    query_ratio: Option<f64>,
    /// Absolute candidate count.
    #[arg(long, conflicts_with = "c_max_fraction")]
    c_max: Option<usize>,
    /// Candidate count as a fraction of the variables.
    #[arg(long)]
    c_max_fraction: Option<f64>,
    #[arg(long)]
    budget_ms: Option<u64>,
    #[arg(long)]
    num_samples: Option<usize>,
    /// Weights of time, nodes and objective regret, comma separated.
    #[arg(long, value_delimiter = ',')]
    stat_weights: Option<Vec<f64>>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    i_bound: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint to continue from instead of a fresh network.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lambda_opt: Option<f64>,
    #[arg(long)]
    no_dropout: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    attn_layers: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Beam,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    L2cOpt,
    L2cRank,
    Strong,
    MaxDegree,
}

#[derive(Args)]
struct ConditionArgs {
    #[command(flatten)]
    input: ModelArgs,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    #[arg(long, value_enum)]
    scorer: Option<ScorerArg>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    final_budget_ms: Option<u64>,
    #[arg(long)]
    i_bound: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Strong,
    StrongLite,
    MaxDegree,
    NnOpt,
    NnRank,
}

#[derive(Clone, Copy, ValueEnum)]
enum NodeArg {
    Dfs,
    Nn,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    MinFill,
    MinDegree,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    input: ModelArgs,
    /// Time limit; unlimited when absent.
    #[arg(long)]
    budget_ms: Option<u64>,
    #[arg(long)]
    i_bound: Option<usize>,
    #[arg(long, value_enum)]
    order: Option<OrderArg>,
    #[arg(long, value_enum, default_value = "strong-lite")]
    branch: BranchArg,
    #[arg(long, value_enum, default_value = "dfs")]
    node_sel: NodeArg,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Optimality threshold of the network branching rule.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Split whose evidence sets are evaluated.
    #[arg(long, default_value = "test")]
    split: String,
    /// Conditioning depths as fractions of the query variables.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    budgets_ms: Option<Vec<u64>>,
    /// Scorers: l2c-opt, l2c-rank, strong, max-degree, oracle.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long, value_enum)]
    search: Option<StrategyArg>,
    /// CSV table path; stdout when absent.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Full JSON report path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    gibbs: GibbsSection,
    solver: SolverSection,
    collect: CollectionConfig,
    hyper: Hyper,
    train: TrainConfig,
    conditioning: ConditioningSection,
    grid: ExperimentGrid,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GibbsSection {
    burn_in: Option<usize>,
    thinning: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolverSection {
    budget_ms: Option<u64>,
    i_bound: usize,
    order: OrderHeuristic,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            budget_ms: None,
            i_bound: DEFAULT_I_BOUND,
            order: OrderHeuristic::MinFill,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConditioningSection {
    #[serde(flatten)]
    cfg: ConditioningConfig,
    strategy: Strategy,
    scorer: ScorerKind,
}

impl Default for ConditioningSection {
    fn default() -> Self {
        Self {
            cfg: ConditioningConfig::default(),
            strategy: Strategy::Greedy,
            scorer: ScorerKind::L2cRank,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => e.into(),
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_input(args: &ModelArgs) -> Result<(GraphicalModel, Assignment)> {
    let model = load_uai(&args.model)?;
    let evidence = match &args.evidence {
        Some(p) => load_evidence(p, model.num_vars())?,
        None => Assignment::new(),
    };
    Ok((model, evidence))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn require_checkpoint(path: Option<&PathBuf>, num_vars: usize) -> Result<ScorerNetwork> {
    let path = path.ok_or_else(|| Error::MissingArtifact("--checkpoint".into()))?;
    load_checkpoint(path, Some(num_vars))
}

struct Context {
    seed: u64,
    file: FileConfig,
}

impl Context {
    fn gibbs(&self, burn_in: Option<usize>, thinning: Option<usize>) -> GibbsConfig {
        let d = GibbsConfig::default();
        GibbsConfig {
            burn_in: burn_in.or(self.file.gibbs.burn_in).unwrap_or(d.burn_in),
            thinning: thinning.or(self.file.gibbs.thinning).unwrap_or(d.thinning),
            seed: self.seed,
        }
    }
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    name: &'a str,
    num_vars: usize,
    num_factors: usize,
    max_arity: usize,
    num_edges: usize,
    induced_width: usize,
    evidence: &'a Assignment,
}

fn cmd_generate(ctx: &Context, args: &GenerateArgs) -> Result<()> {
    if !(0.0..1.0).contains(&args.zero_prob) {
        return Err(Error::Config(format!(
            "zero probability {} outside [0, 1)",
            args.zero_prob
        )));
    }
    let model = match args.shape {
        ShapeArg::Mixed => random_model(
            &RandomModelConfig {
                zero_prob: args.zero_prob,
                ..RandomModelConfig::mixed(args.vars)
            },
            ctx.seed,
        ),
        ShapeArg::Chain => random_chain(args.vars, ctx.seed),
        ShapeArg::Grid => random_grid(args.rows, args.cols, ctx.seed),
    };
    let text = serialize_uai(&model);
    match &args.out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_parse(args: &ModelArgs) -> Result<()> {
    let (model, evidence) = load_input(args)?;
    let order = elimination_order(&model, &evidence, OrderHeuristic::MinFill);
    print_json(&ModelSummary {
        name: model.name(),
        num_vars: model.num_vars(),
        num_factors: model.factors().len(),
        max_arity: model.factors().iter().map(|f| f.arity()).max().unwrap_or(0),
        num_edges: model.primal_graph().num_edges(),
        induced_width: order.induced_width,
        evidence: &evidence,
    })
}

fn cmd_sample(ctx: &Context, args: &SampleArgs) -> Result<()> {
    let (model, evidence) = load_input(&args.input)?;
    let gibbs = ctx.gibbs(args.burn_in, args.thinning);
    let samples = gibbs_sample_conditioned(&model, &evidence, args.n, &gibbs)?;
    let mut out = io::BufWriter::new(io::stdout().lock());
    for x in samples {
        let bits: Vec<String> = x
            .to_full(model.num_vars())?
            .iter()
            .map(u8::to_string)
            .collect();
        writeln!(out, "{}", bits.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_collect(ctx: &Context, args: &CollectArgs) -> Result<()> {
    let model = load_uai(&args.model)?;
    let mut cfg = ctx.file.collect.clone();
    cfg.seed = ctx.seed;
    if let Some(g) = ctx.file.gibbs.burn_in {
        cfg.burn_in = g;
    }
    if let Some(g) = ctx.file.gibbs.thinning {
        cfg.thinning = g;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field.clone() { cfg.$field = v; })*};
    }
    set!(
        query_ratio,
        c_max,
        budget_ms,
        num_samples,
        temperature,
        i_bound,
        burn_in,
        thinning
    );
    if let Some(f) = args.c_max_fraction {
        cfg.c_max = l2c::data::resolve_c_max(f, model.num_vars());
    }
    if let Some(w) = &args.stat_weights {
        cfg.stat_weights = w
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config(format!("expected 3 statistic weights, got {}", w.len())))?;
    }
    let ds = collect(&model, &cfg)?;
    save_dataset(&ds, &args.out)?;
    eprintln!(
        "wrote {} records to {}",
        ds.records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset)?;
    let mut cfg = ctx.file.train.clone();
    cfg.seed = ctx.seed;
    macro_rules! set {
        ($target:ident: $($field:ident),*) => {$(if let Some(v) = args.$field { $target.$field = v; })*};
    }
    set!(cfg: lr, lr_decay, batch_size, max_epochs, patience, lambda_opt);
    if args.no_dropout {
        cfg.dropout_enabled = false;
    }
    let init = match &args.init {
        Some(p) => load_checkpoint(p, Some(ds.num_vars))?,
        None => {
            let mut hyper = ctx.file.hyper.clone();
            set!(hyper: d, heads, attn_layers, blocks, hidden, dropout);
            ScorerNetwork::new(ds.num_vars, hyper, ctx.seed)?
        }
    };
    let (net, report) = train(&ds, init, &cfg)?;
    save_checkpoint(&net, &args.out)?;
    print_json(&report)
}

fn cmd_condition(ctx: &Context, args: &ConditionArgs) -> Result<()> {
    let (model, evidence) = load_input(&args.input)?;
    let section = &ctx.file.conditioning;
    let mut cfg = section.cfg.clone();
    if let Some(v) = args.tau {
        cfg.tau = v;
    }
    if let Some(v) = args.dmax {
        cfg.d_max = v;
    }
    if let Some(v) = args.beam_width {
        cfg.beam_width = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.final_budget_ms {
        cfg.final_budget_ms = v;
    }
    let strategy = match args.strategy {
        Some(StrategyArg::Greedy) => Strategy::Greedy,
        Some(StrategyArg::Beam) => Strategy::Beam,
        None => section.strategy,
    };
    let kind = match args.scorer {
        Some(ScorerArg::L2cOpt) => ScorerKind::L2cOpt,
        Some(ScorerArg::L2cRank) => ScorerKind::L2cRank,
        Some(ScorerArg::Strong) => ScorerKind::Strong,
        Some(ScorerArg::MaxDegree) => ScorerKind::MaxDegree,
        None => section.scorer,
    };
    let i_bound = args.i_bound.unwrap_or(ctx.file.solver.i_bound);
    let net = if kind.needs_network() {
        Some(require_checkpoint(
            args.checkpoint.as_ref(),
            model.num_vars(),
        )?)
    } else {
        None
    };
    let scorer = build_scorer(kind, net.as_ref(), &model, &evidence, i_bound)?;
    let opts = SolverOptions {
        i_bound,
        order: ctx.file.solver.order,
        ..SolverOptions::default()
    };
    let sol = solve_with_conditioning(&model, scorer.as_ref(), &evidence, &cfg, strategy, &opts)?;
    print_json(&sol)
}

fn cmd_solve(ctx: &Context, args: &SolveArgs) -> Result<()> {
    let (model, evidence) = load_input(&args.input)?;
    let solver = &ctx.file.solver;
    let opts = SolverOptions {
        budget: args
            .budget_ms
            .or(solver.budget_ms)
            .map(Duration::from_millis),
        i_bound: args.i_bound.unwrap_or(solver.i_bound),
        order: match args.order {
            Some(OrderArg::MinFill) => OrderHeuristic::MinFill,
            Some(OrderArg::MinDegree) => OrderHeuristic::MinDegree,
            None => solver.order,
        },
        ..SolverOptions::default()
    };
    let tau = args.tau.unwrap_or(ctx.file.conditioning.cfg.tau);
    let needs_net = matches!(args.branch, BranchArg::NnOpt | BranchArg::NnRank)
        || matches!(args.node_sel, NodeArg::Nn);
    let net = if needs_net {
        Some(require_checkpoint(
            args.checkpoint.as_ref(),
            model.num_vars(),
        )?)
    } else {
        None
    };
    let network = |mode| NetworkScorer::new(net.clone().expect("checkpoint loaded"), mode);
    let branch: Box<dyn BranchPolicy> = match args.branch {
        BranchArg::Strong => Box::new(StrongBranching::full(&model)),
        BranchArg::StrongLite => Box::new(StrongBranching::lite(&model)),
        BranchArg::MaxDegree => Box::new(MaxDegreeBranching::new(
            &model,
            &evidence,
            &ctx.gibbs(None, None),
        )?),
        BranchArg::NnOpt => Box::new(NnBranching::new(network(HeadMode::L2cOpt), tau, &model)?),
        BranchArg::NnRank => Box::new(NnBranching::new(network(HeadMode::L2cRank), tau, &model)?),
    };
    let node: Box<dyn NodePolicy> = match args.node_sel {
        NodeArg::Dfs => Box::new(BoundFirst),
        NodeArg::Nn => Box::new(NnNodePolicy::new(network(HeadMode::L2cOpt), &model)?),
    };
    let rec = solve_mpe(&model, &evidence, &opts, branch.as_ref(), node.as_ref())?;
    print_json(&rec)
}

fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let model = load_uai(&args.model)?;
    let ds = load_dataset(&args.dataset)?;
    if ds.num_vars != model.num_vars() {
        return Err(Error::Shape(format!(
            "dataset has {} variables, the model has {}",
            ds.num_vars,
            model.num_vars()
        )));
    }
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => return Err(Error::Config(format!("unknown split {other:?}"))),
    };
    let instances: Vec<Assignment> = ds.split(split).map(|r| r.evidence.clone()).collect();
    if instances.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", args.split)));
    }
    let mut grid = ctx.file.grid.clone();
    if let Some(d) = &args.depths {
        grid.depths = d.clone();
    }
    if let Some(b) = &args.budgets_ms {
        grid.budgets_ms = b.clone();
    }
    if let Some(s) = &args.strategies {
        grid.strategies = s.iter().map(|k| k.parse()).collect::<Result<_>>()?;
    }
    match args.search {
        Some(StrategyArg::Greedy) => grid.search = Strategy::Greedy,
        Some(StrategyArg::Beam) => grid.search = Strategy::Beam,
        None => {}
    }
    grid.validate()?;
    let net = match &args.checkpoint {
        Some(p) => Some(load_checkpoint(p, Some(model.num_vars()))?),
        None => None,
    };
    let report = run_grid(&model, &instances, &grid, net.as_ref())?;
    match &args.csv {
        Some(p) => report.write_csv(fs::File::create(p)?)?,
        None => report.write_csv(io::stdout().lock())?,
    }
    if let Some(p) = &args.json {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a),
        Command::Parse(a) => cmd_parse(a),
        Command::Sample(a) => cmd_sample(&ctx, a),
        Command::Collect(a) => cmd_collect(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Condition(a) => cmd_condition(&ctx, a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) => 3,
        Error::Io(io) if io.kind() == io::ErrorKind::NotFound => 3,
        Error::Io(_) | Error::Csv(_) | Error::NoSolution | Error::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
