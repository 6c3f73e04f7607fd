use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use paclab::harness::{self, RunConfig, RunResult, SweepTable, TraceWriter};
use paclab::mdp::{greedy_policy, optimal_values, TabularMdp};
use paclab::schedule::{build_schedule, ScheduleParams, Variant};
use paclab::{EnvSpec, Error};

#[derive(Parser)]
#[command(name = "paclab", version, about = "Multi-stage optimistic Q-learning experiments")]
struct Cli {
    /// Progress messages on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one agent on one environment and write the summary JSON.
    Run(RunCmd),
    /// Run an epsilon-by-seed grid.
    Sweep(SweepCmd),
    /// Print the stage schedule for a set of constants.
    Schedule(ScheduleCmd),
    /// Solve an MDP exactly and print V*, Q* and an optimal policy.
    Oracle(OracleCmd),
    /// Collect run and sweep JSON files into one CSV.
    PlotData(PlotDataCmd),
}

#[derive(Args, Default)]
struct RunFlags {
    /// Flat JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// multistage, advantage, model-based or vanilla-q.
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    steps: Option<u64>,
    /// Falls back to PACLAB_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bonus_scale: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c10: Option<f64>,
    /// Integer or `none`.
    #[arg(long)]
    cap_n0: Option<String>,
    /// Integer or `none`.
    #[arg(long)]
    cap_n1: Option<String>,
    #[arg(long)]
    tail_coeff: Option<f64>,
    #[arg(long)]
    optimism: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    oracle_tol: Option<f64>,
    #[arg(long)]
    window: Option<u64>,
    #[arg(long)]
    clipped_pseudo_regret: bool,
    #[arg(long)]
    check_invariants: bool,
    #[arg(long)]
    recompute_every_step: bool,
}

#[derive(Args)]
struct RunCmd {
    #[command(flatten)]
    flags: RunFlags,
    /// Summary JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV record path, one row per window unless --trace.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// One CSV row per step.
    #[arg(long, requires = "csv")]
    trace: bool,
    /// Write the effective config JSON here.
    #[arg(long)]
    emit_config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    flags: RunFlags,
    /// Comma-separated epsilons.
    #[arg(long, value_delimiter = ',', required = true)]
    epsilons: Vec<f64>,
    /// Comma-separated seeds, or a range `a..b` (end exclusive).
    #[arg(long, default_value = "0")]
    seeds: String,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Sweep table JSON path. Rows always stream to stdout as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every run summary into this directory.
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ScheduleCmd {
    #[arg(long)]
    gamma: f64,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    p: f64,
    #[arg(long = "S")]
    states: usize,
    #[arg(long = "A")]
    actions: usize,
    #[arg(long, default_value = "multistage")]
    variant: String,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c10: f64,
    /// Integer or `none`.
    #[arg(long)]
    cap_n0: Option<String>,
    /// Integer or `none`.
    #[arg(long)]
    cap_n1: Option<String>,
}

#[derive(Args)]
struct OracleCmd {
    #[arg(long, conflicts_with = "mdp", required_unless_present = "mdp")]
    env: Option<String>,
    /// MDP JSON document.
    #[arg(long)]
    mdp: Option<PathBuf>,
    /// Required with --env; overrides the stored discount with --mdp.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataCmd {
    /// Directory of run summaries and sweep tables.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure tagged with its exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Errors caused by the inputs are usage errors; the rest are runtime errors.
fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) | Error::Parse(_) | Error::Json(_) => usage(e),
        other => Failure::Runtime(other.into()),
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let outcome = match cli.command {
        Command::Run(cmd) => cmd_run(cmd, verbose),
        Command::Sweep(cmd) => cmd_sweep(cmd, verbose),
        Command::Schedule(cmd) => cmd_schedule(cmd),
        Command::Oracle(cmd) => cmd_oracle(cmd),
        Command::PlotData(cmd) => cmd_plot_data(cmd),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cap_value(text: &str) -> std::result::Result<Value, Failure> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(Value::Null);
    }
    text.parse::<u64>()
        .map(Value::from)
        .map_err(|_| usage(anyhow!("cap must be a non-negative integer or `none`, got `{text}`")))
}

fn parse_cap(text: Option<&str>, default: u64) -> std::result::Result<Option<u64>, Failure> {
    match text {
        None => Ok(Some(default)),
        Some(t) => Ok(cap_value(t)?.as_u64()),
    }
}

/// Reads the config file, overlays the flags, and validates the result.
fn resolve_config(flags: &RunFlags) -> std::result::Result<RunConfig, Failure> {
    let mut map = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            match serde_json::from_str::<Value>(&text).map_err(usage)? {
                Value::Object(map) => map,
                _ => return Err(usage(anyhow!("config must be a JSON object"))),
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    set("env", flags.env.clone().map(Value::from));
    set("agent", flags.agent.clone().map(Value::from));
    set("gamma", flags.gamma.map(Value::from));
    set("epsilon", flags.epsilon.map(Value::from));
    set("p", flags.p.map(Value::from));
    set("steps", flags.steps.map(Value::from));
    set("seed", flags.seed.map(Value::from));
    set("bonus_scale", flags.bonus_scale.map(Value::from));
    set("c1", flags.c1.map(Value::from));
    set("c10", flags.c10.map(Value::from));
    set("tail_coeff", flags.tail_coeff.map(Value::from));
    set("optimism", flags.optimism.map(Value::from));
    set("learning_rate", flags.learning_rate.map(Value::from));
    set("oracle_tol", flags.oracle_tol.map(Value::from));
    set("window", flags.window.map(Value::from));
    set("clipped_pseudo_regret", flags.clipped_pseudo_regret.then_some(Value::Bool(true)));
    set("check_invariants", flags.check_invariants.then_some(Value::Bool(true)));
    set("recompute_every_step", flags.recompute_every_step.then_some(Value::Bool(true)));
    if let Some(cap) = &flags.cap_n0 {
        map.insert("cap_n0".into(), cap_value(cap)?);
    }
    if let Some(cap) = &flags.cap_n1 {
        map.insert("cap_n1".into(), cap_value(cap)?);
    }
    if !map.contains_key("seed") {
        let seed = match std::env::var("PACLAB_SEED") {
            Ok(text) => text
                .trim()
                .parse::<u64>()
                .map_err(|_| usage(anyhow!("PACLAB_SEED must be an integer, got `{text}`")))?,
            Err(_) => 0,
        };
        map.insert("seed".into(), Value::from(seed));
    }
    let config: RunConfig = serde_json::from_value(Value::Object(map)).map_err(usage)?;
    config.validate().map_err(classify)?;
    config.env_spec().map_err(classify)?;
    Ok(config)
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_run(cmd: RunCmd, verbose: u8) -> Outcome {
    let config = resolve_config(&cmd.flags)?;
    if let Some(path) = &cmd.emit_config {
        write_json(Some(path), &config)?;
    }
    let result = match &cmd.csv {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let out = BufWriter::new(file);
            let mut writer = if cmd.trace {
                TraceWriter::per_step(out)
            } else {
                TraceWriter::per_window(out, config.window)
            }
            .map_err(|e| Failure::Runtime(e.into()))?;
            let result = harness::run_with(&config, &mut |r| writer.record(r))
                .map_err(|e| Failure::Runtime(e.into()))?;
            writer.finish().map_err(|e| Failure::Runtime(e.into()))?;
            result
        }
        None => harness::run(&config).map_err(|e| Failure::Runtime(e.into()))?,
    };
    if verbose > 0 {
        eprintln!(
            "{} on {}: {} suboptimal steps of {}, final window clean: {}",
            config.agent.as_str(),
            config.env,
            result.sample_complexity,
            result.steps,
            result.final_window_clean
        );
    }
    write_json(cmd.out.as_deref(), &result)?;
    Ok(())
}

fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, Failure> {
    let bad = || usage(anyhow!("seeds must be `a,b,c` or `a..b`, got `{text}`"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if lo >= hi {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
        .collect()
}

fn cmd_sweep(cmd: SweepCmd, verbose: u8) -> Outcome {
    let seeds = parse_seeds(&cmd.seeds)?;
    let mut base_flags = cmd.flags;
    if base_flags.epsilon.is_none() {
        base_flags.epsilon = cmd.epsilons.iter().copied().reduce(f64::min);
    }
    let base = resolve_config(&base_flags)?;
    for eps in &cmd.epsilons {
        RunConfig { epsilon: *eps, ..base.clone() }
            .validate()
            .map_err(classify)?;
    }
    if let Some(dir) = &cmd.runs_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let runs_dir = cmd.runs_dir.clone();
    let on_row = move |row: &harness::SweepRow| {
        println!(
            "{}",
            json!({
                "epsilon": row.epsilon,
                "seed": row.seed,
                "sample_complexity": row.result.sample_complexity,
            })
        );
        if let Some(dir) = &runs_dir {
            let path = dir.join(format!("run_eps{}_seed{}.json", row.epsilon, row.seed));
            if let Err(e) = write_json(Some(&path), &row.result) {
                eprintln!("warning: {e:#}");
            }
        }
        if verbose > 0 {
            eprintln!("finished epsilon={} seed={}", row.epsilon, row.seed);
        }
    };
    let table = harness::sweep(&base, &cmd.epsilons, &seeds, cmd.jobs, &on_row)
        .map_err(|e| Failure::Runtime(e.into()))?;
    match table.slope() {
        Ok(slope) => eprintln!("scaling slope: {slope:.4}"),
        Err(e) if verbose > 0 => eprintln!("{e}"),
        Err(_) => {}
    }
    if let Some(path) = &cmd.out {
        write_json(Some(path), &table)?;
    }
    Ok(())
}

fn cmd_schedule(cmd: ScheduleCmd) -> Outcome {
    let variant: Variant = cmd.variant.parse().map_err(classify)?;
    let params = ScheduleParams {
        discount: cmd.gamma,
        epsilon: cmd.epsilon,
        p: cmd.p,
        num_states: cmd.states,
        num_actions: cmd.actions,
        variant,
        c1: cmd.c1,
        c10: cmd.c10,
        cap_n0: parse_cap(cmd.cap_n0.as_deref(), paclab::schedule::DEFAULT_CAP_N0)?,
        cap_n1: parse_cap(cmd.cap_n1.as_deref(), paclab::schedule::DEFAULT_CAP_N1)?,
    };
    let schedule = build_schedule(&params).map_err(classify)?;
    write_json(None, &schedule.dump())?;
    Ok(())
}

fn cmd_oracle(cmd: OracleCmd) -> Outcome {
    let mdp = match (&cmd.env, &cmd.mdp) {
        (Some(env), _) => {
            let spec: EnvSpec = env.parse().map_err(classify)?;
            let gamma = cmd
                .gamma
                .ok_or_else(|| usage(anyhow!("--gamma is required with --env")))?;
            spec.build(gamma).map_err(classify)?
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(usage)?;
            let mdp = TabularMdp::from_json(&text).map_err(classify)?;
            match cmd.gamma {
                Some(gamma) => mdp.with_discount(gamma).map_err(classify)?,
                None => mdp,
            }
        }
        (None, None) => return Err(usage(anyhow!("one of --env or --mdp is required"))),
    };
    if !(cmd.tol > 0.0) {
        return Err(usage(anyhow!("--tol must be positive")));
    }
    let (v, q) = optimal_values(&mdp, cmd.tol).map_err(classify)?;
    let policy = greedy_policy(&q);
    let doc = json!({
        "schema": harness::SCHEMA,
        "discount": mdp.discount(),
        "V": v.0,
        "Q": q.rows(),
        "policy": policy.0,
    });
    write_json(cmd.out.as_deref(), &doc)?;
    Ok(())
}

/// Rows of `(epsilon, seed, sample_complexity)` found in one JSON document.
fn records_in(value: Value, path: &Path) -> anyhow::Result<Vec<(f64, u64, u64)>> {
    if value.get("rows").is_some() {
        let table: SweepTable =
            serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(table
            .rows
            .iter()
            .map(|r| (r.epsilon, r.seed, r.result.sample_complexity))
            .collect());
    }
    let run: RunResult =
        serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
    Ok(vec![(run.config.epsilon, run.config.seed, run.sample_complexity)])
}

fn cmd_plot_data(cmd: PlotDataCmd) -> Outcome {
    let entries = fs::read_dir(&cmd.input)
        .with_context(|| format!("reading {}", cmd.input.display()))
        .map_err(usage)?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(anyhow!("no JSON files in {}", cmd.input.display())));
    }
    let mut records = Vec::new();
    for path in &paths {
        let text = fs::read_to_string(path).map_err(anyhow::Error::from)?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(usage)?;
        records.extend(records_in(value, path).map_err(usage)?);
    }
    records.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    records.dedup();

    let mut csv = String::from("record,epsilon,seed,sample_complexity,slope\n");
    for (eps, seed, count) in &records {
        csv.push_str(&format!("run,{eps},{seed},{count},\n"));
    }
    let epsilons: BTreeSet<u64> = records.iter().map(|r| r.0.to_bits()).collect();
    let means: Vec<(f64, f64)> = epsilons
        .iter()
        .map(|bits| {
            let eps = f64::from_bits(*bits);
            let counts: Vec<f64> = records
                .iter()
                .filter(|r| r.0 == eps)
                .map(|r| r.2 as f64)
                .collect();
            (eps, counts.iter().sum::<f64>() / counts.len() as f64)
        })
        .collect();
    if let Ok(slope) = harness::scaling_slope(&means) {
        csv.push_str(&format!("slope,,,,{slope}\n"));
    }
    match &cmd.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(csv.as_bytes()).map_err(anyhow::Error::from)?,
    }
    Ok(())
}
