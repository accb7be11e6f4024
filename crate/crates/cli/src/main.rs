//! `phimdp` command line: run the online agent, evaluate costs on recorded
//! traces, and search for low-cost feature maps.
//!
//! All randomness flows from `--seed`; identical flags and seeds produce
//! byte-identical output files. Files are written to a temp path and renamed,
//! so interrupted runs never leave partial CSVs. `PHIMDP_LOG=debug` (or
//! `info`, `error`) controls logging.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use phimdp::agent::{run_episode, AgentConfig, GammaSchedule};
use phimdp::coding::cost;
use phimdp::env::{Environment, TabularEnv, TinyExampleEnv};
use phimdp::feature::{parse_suffix_set, ContextTreeMap, FeatureMap};
use phimdp::history::{parse_trace, TraceData};
use phimdp::icost::{icost, PenaltyMode};
use phimdp::search::{anneal, SearchConfig, SearchCriterion};

#[derive(Parser)]
#[command(name = "phimdp", version, about = "Feature reinforcement learning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the online agent against an environment.
    Run(RunArgs),
    /// Evaluate the two-part code length of a feature map on a trace.
    Cost(CostArgs),
    /// Evaluate the marginalized reward-code criterion on a trace.
    Icost(IcostArgs),
    /// Stochastic split/merge search for a low-cost suffix set.
    Search(SearchArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Environment: `tiny` or `file:<path>`.
    #[arg(long)]
    env: Option<String>,
    /// Number of agent actions to take.
    #[arg(long)]
    steps: Option<usize>,
    /// Master seed (environment and agent).
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seed list; runs one episode per seed in parallel and
    /// inserts `.seed<k>` before the output extensions.
    #[arg(long)]
    seeds: Option<String>,
    /// Map-improvement proposals per step.
    #[arg(long)]
    improve_iters: Option<usize>,
    /// `default` (1 - 1/(n+1)) or `fixed:<g>`.
    #[arg(long)]
    gamma_schedule: Option<String>,
    /// Exploration bonus coefficient; 0 disables optimism.
    #[arg(long)]
    rmax_coeff: Option<f64>,
    /// Search objective: `cost` or `icost`.
    #[arg(long)]
    criterion: Option<String>,
    /// Trace CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics CSV output path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Flat key=value defaults for any flag above (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Suffix set file, one context per line (ε as `-`).
    #[arg(long)]
    phi_file: Option<PathBuf>,
    /// Fixed-order map of the given order instead of a suffix set.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args, Debug)]
struct IcostArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    phi_file: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Parameter-count mode for the penalty.
    #[arg(long, default_value = "observed")]
    penalty: String,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    criterion: Option<String>,
    /// Starting suffix set; the root map when absent.
    #[arg(long)]
    phi_file: Option<PathBuf>,
    /// Incumbent suffix set output.
    #[arg(long, default_value = "phi_out.txt")]
    out_phi: PathBuf,
    /// Per-iteration `iter,cost,accepted` log output.
    #[arg(long, default_value = "search_log.csv")]
    out_log: PathBuf,
    /// Keep every k-th log row.
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PHIMDP_LOG", "error")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Cost(args) => cmd_cost(args),
        Command::Icost(args) => cmd_icost(args),
        Command::Search(args) => cmd_search(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

/// Flat key=value config files; `#` starts a comment.
fn load_config(path: &Path) -> Result<HashMap<String, String>, String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot open config {}: {e}", path.display()))?;
    let mut map = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => return Err(format!("{}:{}: expected key=value", path.display(), i + 1)),
        }
    }
    Ok(map)
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

/// Writes via a temp file in the same directory, then renames into place.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

fn open_env(spec: &str, seed: u64) -> Result<Box<dyn Environment>, String> {
    if spec == "tiny" {
        return Ok(Box::new(TinyExampleEnv::new(seed)));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let env = TabularEnv::from_file(Path::new(path), seed)
            .map_err(|e| format!("cannot open environment {path}: {e}"))?;
        return Ok(Box::new(env));
    }
    Err(format!("unknown environment {spec:?} (use tiny or file:<path>)"))
}

/// Inserts `.seed<k>` before the extension for multi-seed sweeps.
fn seed_path(path: &Path, seed: u64) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}.seed{seed}.{ext}"))
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, String> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => HashMap::new(),
    };
    let pick = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());
    let env_spec = pick(args.env, "env").unwrap_or_else(|| "tiny".into());
    let steps = match pick(args.steps.map(|s| s.to_string()), "steps") {
        Some(s) => s.parse::<usize>().map_err(|_| format!("bad steps {s:?}"))?,
        None => 1000,
    };
    let improve_iters = match pick(args.improve_iters.map(|s| s.to_string()), "improve-iters") {
        Some(s) => s.parse::<usize>().map_err(|_| format!("bad improve-iters {s:?}"))?,
        None => 10,
    };
    let gamma_schedule: GammaSchedule =
        pick(args.gamma_schedule, "gamma-schedule").unwrap_or_else(|| "default".into()).parse()?;
    let rmax_coeff = match pick(args.rmax_coeff.map(|s| s.to_string()), "rmax-coeff") {
        Some(s) => s.parse::<f64>().map_err(|_| format!("bad rmax-coeff {s:?}"))?,
        None => 1.0,
    };
    let criterion: SearchCriterion =
        pick(args.criterion, "criterion").unwrap_or_else(|| "cost".into()).parse()?;
    let out = pick(args.out.map(|p| p.display().to_string()), "out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("trace.csv"));
    let metrics_path = pick(args.metrics.map(|p| p.display().to_string()), "metrics")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("metrics.csv"));

    let seeds: Vec<u64> = match pick(args.seeds, "seeds") {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse::<u64>().map_err(|_| format!("bad seed {s:?}")))
            .collect::<Result<_, _>>()?,
        None => vec![match pick(args.seed.map(|s| s.to_string()), "seed") {
            Some(s) => s.parse::<u64>().map_err(|_| format!("bad seed {s:?}"))?,
            None => 0,
        }],
    };
    let multi = seeds.len() > 1;

    let run_one = |&seed: &u64| -> Result<(), String> {
        let mut env = open_env(&env_spec, seed)?;
        let config = AgentConfig {
            improve_iters_per_step: improve_iters,
            gamma_schedule,
            rmax_poly_coeff: rmax_coeff,
            seed,
            criterion,
        };
        let record =
            run_episode(env.as_mut(), steps, &config).map_err(|e| format!("run failed: {e}"))?;
        let (trace_path, met_path) = if multi {
            (seed_path(&out, seed), seed_path(&metrics_path, seed))
        } else {
            (out.clone(), metrics_path.clone())
        };
        write_atomic(&trace_path, &record.trace_csv())
            .map_err(|e| format!("cannot write {}: {e}", trace_path.display()))?;
        write_atomic(&met_path, &record.metrics_csv())
            .map_err(|e| format!("cannot write {}: {e}", met_path.display()))?;
        info!(
            "seed {seed}: {} steps, avg reward {:.4}, final |S| = {}",
            steps,
            record.average_reward(1, steps),
            record.final_state_count
        );
        Ok(())
    };
    let failures: Vec<String> =
        seeds.par_iter().map(run_one).filter_map(Result::err).collect();
    if let Some(first) = failures.first() {
        return Err(first.clone());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_trace(path: &Path) -> Result<TraceData, String> {
    let file =
        fs::File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    parse_trace(BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_phi(
    trace: &TraceData,
    phi_file: &Option<PathBuf>,
    k: &Option<usize>,
) -> Result<FeatureMap, ExitCode> {
    match (phi_file, k) {
        (Some(path), None) => {
            let text = match fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => {
                    return Err(usage_error(&format!("cannot open {}: {e}", path.display())))
                }
            };
            match parse_suffix_set(&text, &trace.observations) {
                Ok(map) => Ok(FeatureMap::context_tree(map)),
                Err(e) => Err(usage_error(&format!("{}: {e}", path.display()))),
            }
        }
        (None, Some(k)) => Ok(FeatureMap::k_order(*k)),
        _ => Err(usage_error("exactly one of --phi-file and --k is required")),
    }
}

fn cmd_cost(args: CostArgs) -> Result<ExitCode, String> {
    let trace = match load_trace(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let phi = match load_phi(&trace, &args.phi_file, &args.k) {
        Ok(phi) => phi,
        Err(code) => return Ok(code),
    };
    let breakdown = cost(&phi, &trace.history);
    println!("{},{},{}", breakdown.state_bits, breakdown.reward_bits, breakdown.total());
    Ok(ExitCode::SUCCESS)
}

fn cmd_icost(args: IcostArgs) -> Result<ExitCode, String> {
    let trace = match load_trace(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let phi = match load_phi(&trace, &args.phi_file, &args.k) {
        Ok(phi) => phi,
        Err(code) => return Ok(code),
    };
    let mode = match args.penalty.as_str() {
        "full" => PenaltyMode::Full,
        "observed" => PenaltyMode::Observed,
        other => return Ok(usage_error(&format!("unknown penalty mode {other:?}"))),
    };
    let result = icost(&phi, &trace.history, mode).map_err(|e| e.to_string())?;
    println!(
        "{},{},{},{}",
        result.neg_log_likelihood,
        result.parameter_penalty,
        result.total(),
        result.m_params
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_search(args: SearchArgs) -> Result<ExitCode, String> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => HashMap::new(),
    };
    let pick = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());
    let iters = match pick(args.iters.map(|s| s.to_string()), "iters") {
        Some(s) => s.parse::<usize>().map_err(|_| format!("bad iters {s:?}"))?,
        None => 1000,
    };
    let seed = match pick(args.seed.map(|s| s.to_string()), "seed") {
        Some(s) => s.parse::<u64>().map_err(|_| format!("bad seed {s:?}"))?,
        None => 0,
    };
    let criterion: SearchCriterion =
        pick(args.criterion, "criterion").unwrap_or_else(|| "cost".into()).parse()?;
    let log_every = match pick(args.log_every.map(|s| s.to_string()), "log-every") {
        Some(s) => s.parse::<usize>().map_err(|_| format!("bad log-every {s:?}"))?.max(1),
        None => 1,
    };

    let trace = match load_trace(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(2));
        }
    };
    let phi0 = match &args.phi_file {
        Some(path) => {
            let text = match fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => return Ok(usage_error(&format!("cannot open {}: {e}", path.display()))),
            };
            match parse_suffix_set(&text, &trace.observations) {
                Ok(map) => map,
                Err(e) => return Ok(usage_error(&format!("{}: {e}", path.display()))),
            }
        }
        None => ContextTreeMap::root(trace.observations.size()),
    };

    let cfg = SearchConfig { iterations: iters, criterion, seed, log_every };
    let outcome = anneal(&phi0, &trace.history, &cfg).map_err(|e| e.to_string())?;

    let mut log = String::from("iter,cost,accepted\n");
    for step in outcome.log.iter().filter(|s| s.iter % log_every == 0) {
        log.push_str(&format!("{},{},{}\n", step.iter, step.cost, step.accepted));
    }
    write_atomic(&args.out_log, &log)
        .map_err(|e| format!("cannot write {}: {e}", args.out_log.display()))?;
    write_atomic(&args.out_phi, &outcome.incumbent.render(&trace.observations))
        .map_err(|e| format!("cannot write {}: {e}", args.out_phi.display()))?;
    println!("{},{}", outcome.incumbent_cost, outcome.incumbent.len());
    Ok(ExitCode::SUCCESS)
}
