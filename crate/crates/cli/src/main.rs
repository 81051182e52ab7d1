use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use neurogranger::eval::{dataset_lambda_max, fit_all, lambda_sweep, log_grid, score_sweep};
use neurogranger::granger::{extract_graph, standardize_graph, AnyNet};
use neurogranger::io::{self, ModelSet, RunConfig};
use neurogranger::panel::{Scaling, TimeSeriesPanel};
use neurogranger::simulate::{
    make_sparse_var, simulate_lorenz96, simulate_var_replicates, LorenzSpec,
};
use neurogranger::{Error, RngSeed};

type Failure = Box<dyn std::error::Error>;

const THREADS_ENV: &str = "NGC_THREADS";

#[derive(Parser)]
#[command(
    name = "neurogranger",
    version,
    about = "Nonlinear Granger causality with sparse componentwise networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a panel and its ground-truth graph.
    Simulate(SimulateArgs),
    /// Fit all componentwise models at one penalty strength.
    Fit(FitArgs),
    /// Fit along a grid of penalty strengths.
    Sweep(SweepArgs),
    /// Score a sweep against a ground-truth graph.
    Eval(EvalArgs),
    /// Convert a stored graph to row-standardized (optionally merged) weights.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lorenz96,
    Var,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lorenz-96 forcing constant.
    #[arg(long, default_value_t = 10.0)]
    f: f64,
    #[arg(long, default_value_t = 0.05)]
    delta_t: f64,
    /// Observation noise (Lorenz-96) or innovation noise (VAR) std.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// VAR lag order.
    #[arg(long, default_value_t = 3)]
    lag_order: usize,
    #[arg(long, default_value_t = 2)]
    edges_per_row: usize,
    #[arg(long, default_value_t = 0.096)]
    coef: f64,
    /// Independent VAR replicates.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long)]
    out_panel: PathBuf,
    #[arg(long)]
    out_truth: PathBuf,
}

#[derive(Args)]
struct PanelArgs {
    /// Panel CSV (or DREAM3-style TSV with --dream3).
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    dream3: bool,
    /// Flat `key = value` run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// One flag per run-configuration key.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    lag: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    forget_bias: Option<String>,
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    mixed_alpha: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Comma-separated, strictly decreasing.
    #[arg(long)]
    lambdas: Option<String>,
    #[arg(long)]
    grid_points: Option<String>,
    #[arg(long)]
    grid_ratio: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    initial_step: Option<String>,
    #[arg(long)]
    backtrack_factor: Option<String>,
    #[arg(long)]
    growth_factor: Option<String>,
    #[arg(long)]
    tolerance: Option<String>,
    #[arg(long)]
    window: Option<String>,
    #[arg(long)]
    max_halvings: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    segment_len: Option<String>,
    #[arg(long)]
    include_diagonal: Option<String>,
    #[arg(long)]
    standardize: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("family", &self.family),
            ("hidden", &self.hidden),
            ("lag", &self.lag),
            ("layers", &self.layers),
            ("activation", &self.activation),
            ("forget_bias", &self.forget_bias),
            ("penalty", &self.penalty),
            ("mixed_alpha", &self.mixed_alpha),
            ("lambda", &self.lambda),
            ("lambdas", &self.lambdas),
            ("grid_points", &self.grid_points),
            ("grid_ratio", &self.grid_ratio),
            ("max_iters", &self.max_iters),
            ("initial_step", &self.initial_step),
            ("backtrack_factor", &self.backtrack_factor),
            ("growth_factor", &self.growth_factor),
            ("tolerance", &self.tolerance),
            ("window", &self.window),
            ("max_halvings", &self.max_halvings),
            ("seed", &self.seed),
            ("segment_len", &self.segment_len),
            ("include_diagonal", &self.include_diagonal),
            ("standardize", &self.standardize),
        ]
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: PanelArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    #[arg(long)]
    out_models: PathBuf,
    #[arg(long)]
    out_graph: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: PanelArgs,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Ground-truth graph stored alongside the sweep.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    sweep: PathBuf,
    /// Replaces any ground truth stored in the sweep.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    include_diagonal: Option<bool>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Merge groups as `label=0,1;label2=2,3` (series indices).
    #[arg(long)]
    groups: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn run_config(input: &PanelArgs, flags: &ConfigFlags) -> Result<RunConfig, Failure> {
    let mut cfg = match &input.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_panel(input: &PanelArgs) -> Result<TimeSeriesPanel<f64>, Failure> {
    if input.dream3 {
        let (panel, warnings) = io::load_dream3_tsv(&input.panel)?;
        for w in warnings {
            eprintln!("warning: {}: {w}", input.panel.display());
        }
        Ok(panel)
    } else {
        Ok(io::load_panel_csv(&input.panel)?)
    }
}

fn prepared_panel(
    panel: TimeSeriesPanel<f64>,
    cfg: &RunConfig,
) -> (TimeSeriesPanel<f64>, Option<Scaling<f64>>) {
    if cfg.standardize {
        let (scaled, scaling) = panel.standardize();
        (scaled, Some(scaling))
    } else {
        (panel, None)
    }
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let seed = RngSeed(args.seed);
    let (panel, truth) = match args.kind {
        Kind::Lorenz96 => {
            let mut spec = LorenzSpec::new(args.p, args.f, args.t, seed);
            spec.delta_t = args.delta_t;
            if let Some(noise) = args.noise {
                spec.noise_std = noise;
            }
            if let Some(b) = args.burn_in {
                spec.burn_in = b;
            }
            simulate_lorenz96(&spec)?
        }
        Kind::Var => {
            let mut spec = make_sparse_var(
                args.p,
                args.lag_order,
                args.edges_per_row,
                args.coef,
                args.t,
                seed,
            )?;
            if let Some(noise) = args.noise {
                spec.noise_std = noise;
            }
            if let Some(b) = args.burn_in {
                spec.burn_in = b;
            }
            simulate_var_replicates(&spec, args.replicates)?
        }
    };
    io::save_panel_csv(&panel, &args.out_panel)?;
    io::export_graph(&truth, &args.out_truth)?;
    Ok(())
}

fn fit(args: &FitArgs) -> Result<(), Failure> {
    let cfg = run_config(&args.input, &args.flags)?;
    let lambda = cfg
        .lambda
        .ok_or_else(|| Error::InvalidArgument("fit needs --lambda".into()))?;
    let (panel, scaling) = prepared_panel(load_panel(&args.input)?, &cfg);
    let fits = fit_all(
        &panel,
        &cfg.template(),
        &cfg.penalty_spec(lambda)?,
        &cfg.fit,
    )?;
    let models: Vec<AnyNet<f64>> = fits.into_iter().map(|(m, _)| m).collect();
    let graph = extract_graph(&models, Some(panel.names()))?;
    let set = ModelSet {
        names: panel.names().to_vec(),
        penalty: cfg.penalty,
        lambda,
        scaling,
        models,
    };
    io::export_models(&set, &args.out_models)?;
    io::export_graph(&graph, &args.out_graph)?;
    println!("{} edges", graph.num_edges());
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let cfg = run_config(&args.input, &args.flags)?;
    let (panel, _) = prepared_panel(load_panel(&args.input)?, &cfg);
    let template = cfg.template();
    let spec = cfg.penalty_spec(0.0)?;
    let grid = match &cfg.lambdas {
        Some(grid) => grid.clone(),
        None => {
            let max = dataset_lambda_max(&panel, &template, &spec, &cfg.fit)?;
            log_grid(max, cfg.grid_ratio, cfg.grid_points)?
        }
    };
    let mut result = lambda_sweep(&panel, &template, &spec, &grid, &cfg.fit)?;
    result.include_diagonal = cfg.include_diagonal;
    if let Some(path) = &args.truth {
        result.ground_truth = Some(io::import_graph(path)?);
    }
    io::export_sweep(&result, &args.out)?;
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let mut result = io::import_sweep(&args.sweep)?;
    if let Some(path) = &args.truth {
        result.ground_truth = Some(io::import_graph(path)?);
    }
    if let Some(diag) = args.include_diagonal {
        result.include_diagonal = diag;
    }
    let curve = score_sweep(&result)?;
    io::export_curve(&curve, &args.out)?;
    println!("auroc={} aupr={}", curve.auroc, curve.aupr);
    Ok(())
}

fn parse_groups(text: &str) -> Result<Vec<(String, Vec<usize>)>, Failure> {
    text.split(';')
        .filter(|g| !g.trim().is_empty())
        .map(|g| {
            let (label, members) = g
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("group `{g}` is not `label=i,j`")))?;
            let members = members
                .split(',')
                .map(|m| {
                    m.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad series index `{m}`")))
                })
                .collect::<Result<Vec<usize>, Error>>()?;
            Ok((label.trim().to_string(), members))
        })
        .collect()
}

fn export(args: &ExportArgs) -> Result<(), Failure> {
    let graph = io::import_graph(&args.graph)?;
    let groups = args.groups.as_deref().map(parse_groups).transpose()?;
    let standardized = standardize_graph(&graph, groups.as_deref())?;
    io::export_standardized_graph(&standardized, &args.out)?;
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value.trim().parse().map_err(|_| {
            Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer"))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!(
                "neurogranger: {}",
                msg.lines().next().unwrap_or("invalid arguments")
            );
            return ExitCode::from(2);
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Sweep(a) => sweep(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("neurogranger: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
