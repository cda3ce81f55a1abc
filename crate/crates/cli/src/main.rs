//! `rb-engine`: solve, simulate and diagnose restless-bandit instances.
//!
//! Exit codes: 0 success, 1 input error, 2 assumption failure, 3 numerical
//! failure. CSV outputs start with a `# schema=1` line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rb_core::instances::{self, BUILTIN_NAMES};
use rb_core::lyapunov::LyapunovKit;
use rb_core::simulator::{self, RunOptions, TraceRow};
use rb_core::{
    solve_lp, ArmConfig, Error, InitialStates, PolicyKind, RbInstance, Result, SolveOptions,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "rb-engine", version, about = "Restless-bandit policy engine")]
struct Cli {
    /// Worker threads for replications and scans.
    #[arg(long, global = true, env = "RB_ENGINE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the LP relaxation and print the solution as JSON.
    Solve {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate one policy and write per-batch results.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        policy: String,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        n_arms: usize,
        /// Trace CSV for replication 0.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimality ratios over a grid of policies and arm counts.
    Compare {
        #[command(flatten)]
        source: Source,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        n_arms: Vec<usize>,
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random Dirichlet instances: slem against the local-instability radius.
    Scan {
        #[arg(long, default_value_t = 10)]
        states: usize,
        #[arg(long, default_value_t = 0.05)]
        dirichlet: f64,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0.95)]
        cutoff: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Focus-set condition diagnostics and persistence for one policy.
    Diagnose {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        n_arms: usize,
        #[arg(long, default_value_t = 200)]
        window: usize,
        #[command(flatten)]
        sim: SimArgs,
        /// Trace CSV for replication 0.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lyapunov constants and theoretical gap bounds.
    Bounds {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        n_arms: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List builtin instances, or write them as JSON files.
    Examples {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(skip)]
struct Source {
    #[arg(
        long,
        required_unless_present = "instance",
        conflicts_with = "instance"
    )]
    builtin: Option<String>,
    /// Instance JSON file.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Rescale rows of an instance file that are off by rounding.
    #[arg(long, conflicts_with = "builtin")]
    renormalize: bool,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 20_000)]
    horizon: usize,
    #[arg(long, default_value_t = 5)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    batches: usize,
    /// Batch the whole path with no burn-in.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "uniform-random")]
    initial: String,
}

impl SimArgs {
    fn options(&self) -> RunOptions {
        let opts = RunOptions {
            horizon: self.horizon,
            replications: self.replications,
            seed: self.seed,
            n_batches: self.batches,
            ..Default::default()
        };
        if self.strict {
            opts.strict()
        } else {
            opts
        }
    }
}

fn load(src: &Source) -> Result<RbInstance> {
    let mut inst = match (&src.builtin, &src.instance) {
        (Some(name), _) => instances::builtin(name)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
            RbInstance::from_json(&text)?
        }
        (None, None) => {
            return Err(Error::Input(
                "one of --builtin or --instance is required".into(),
            ))
        }
    };
    if src.renormalize {
        inst.renormalize();
    }
    inst.ensure_valid()?;
    Ok(inst)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::Input(format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::Input(format!("stdout: {e}"))),
    }
}

/// Serialises rows as CSV behind the schema line.
fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(b"# schema=1\n".to_vec());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Numerical(format!("csv: {e}")))
}

fn csv_records(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(b"# schema=1\n".to_vec());
    let map = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
    w.write_record(header).map_err(map)?;
    for r in rows {
        w.write_record(r).map_err(map)?;
    }
    w.into_inner()
        .map_err(|e| Error::Numerical(format!("csv: {e}")))
}

fn trace_csv(trace: &[TraceRow]) -> Result<Vec<u8>> {
    let header = [
        "t",
        "m_D",
        "delta",
        "conformity_deficit",
        "shrinkage",
        "coverage_residual",
        "persistence",
    ];
    let fmt = |x: f64| {
        if x.is_nan() {
            String::new()
        } else {
            x.to_string()
        }
    };
    let rows: Vec<Vec<String>> = trace
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                fmt(r.m_d),
                fmt(r.delta),
                fmt(r.conformity_deficit),
                fmt(r.shrinkage),
                fmt(r.coverage_residual),
                r.persistence.map(|p| p.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    csv_records(&header, &rows)
}

fn simulate_one(
    inst: &RbInstance,
    kind: PolicyKind,
    n: usize,
    sim: &SimArgs,
    opts: &RunOptions,
) -> Result<simulator::RunResult> {
    let sol = solve_lp(inst, SolveOptions::default())?;
    let cfg = ArmConfig::new(inst, n, sim.initial.parse::<InitialStates>()?)?;
    simulator::run(inst, &sol, &cfg, kind, opts)
}

fn run(cli: Cli) -> Result<i32> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Input("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Solve { source, out } => {
            let inst = load(&source)?;
            let sol = solve_lp(&inst, SolveOptions::default())?;
            let chain = sol.chain();
            let doc = json!({
                "instance": inst.name,
                "r_rel": sol.r_rel,
                "y": sol.y,
                "pibs": sol.pibs,
                "mu_star": sol.mu_star,
                "classes": {
                    "plus": sol.s_plus,
                    "zero": sol.s_zero,
                    "minus": sol.s_minus,
                    "null": sol.s_null,
                },
                "unique": sol.unique,
                "chain": chain,
            });
            let mut text =
                serde_json::to_string_pretty(&doc).map_err(|e| Error::Numerical(e.to_string()))?;
            text.push('\n');
            emit(out.as_deref(), text.as_bytes())?;
            if !chain.satisfies_assumption() {
                eprintln!("optimal single-armed policy does not induce an aperiodic unichain");
                return Ok(2);
            }
            Ok(0)
        }
        Command::Simulate {
            source,
            policy,
            sim,
            n_arms,
            traces,
            out,
        } => {
            let inst = load(&source)?;
            let kind: PolicyKind = policy.parse()?;
            let mut opts = sim.options();
            opts.traces = traces.is_some();
            let res = simulate_one(&inst, kind, n_arms, &sim, &opts)?;
            emit(out.as_deref(), &csv_bytes(&res.rows())?)?;
            if let Some(path) = traces {
                let rep = &res.replications[0];
                emit(Some(&path), &trace_csv(&rep.trace)?)?;
            }
            Ok(0)
        }
        Command::Compare {
            source,
            policies,
            n_arms,
            sim,
            out,
        } => {
            let inst = load(&source)?;
            let kinds: Vec<PolicyKind> =
                policies.iter().map(|p| p.parse()).collect::<Result<_>>()?;
            if kinds.is_empty() || n_arms.is_empty() {
                return Err(Error::Input(
                    "compare needs at least one policy and one N".into(),
                ));
            }
            // Validate every cell before any simulation starts.
            for &n in &n_arms {
                ArmConfig::new(&inst, n, sim.initial.parse::<InitialStates>()?)?;
            }
            let opts = sim.options();
            let mut rows = Vec::new();
            for &kind in &kinds {
                for &n in &n_arms {
                    let res = simulate_one(&inst, kind, n, &sim, &opts)?;
                    rows.push(res.rows().pop().expect("summary row"));
                }
            }
            emit(out.as_deref(), &csv_bytes(&rows)?)?;
            Ok(0)
        }
        Command::Scan {
            states,
            dirichlet,
            count,
            cutoff,
            seed,
            out,
        } => {
            if states < 2 || !(dirichlet > 0.0) {
                return Err(Error::Input(
                    "scan needs --states >= 2 and --dirichlet > 0".into(),
                ));
            }
            let summary = instances::scan(count, states, dirichlet, cutoff, seed)?;
            emit(out.as_deref(), &csv_bytes(&summary.rows)?)?;
            eprintln!(
                "well-defined {} of {} attempts; slem < {cutoff}: {}; locally unstable: {} ({:.4})",
                summary.rows.len(),
                summary.attempts,
                summary.below_cutoff,
                summary.unstable_below_cutoff,
                summary.unstable_fraction
            );
            Ok(0)
        }
        Command::Diagnose {
            source,
            policy,
            n_arms,
            window,
            sim,
            out,
        } => {
            let inst = load(&source)?;
            let kind: PolicyKind = policy.parse()?;
            let mut opts = sim.options();
            opts.traces = true;
            opts.persistence_window = Some(window);
            let res = simulate_one(&inst, kind, n_arms, &sim, &opts)?;
            emit(out.as_deref(), &trace_csv(&res.replications[0].trace)?)?;
            let report = json!({
                "policy": kind.name(),
                "N": n_arms,
                "avg_reward": res.avg_reward(),
                "ci_half": res.ci_half_width(),
                "optimality_ratio": res.optimality_ratio,
                "mean_persistence": res.mean_persistence(),
                "conditions": res.conditions,
            });
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&report)
                    .map_err(|e| Error::Numerical(e.to_string()))?
            );
            Ok(0)
        }
        Command::Bounds {
            source,
            n_arms,
            out,
        } => {
            let inst = load(&source)?;
            let sol = solve_lp(&inst, SolveOptions::default())?;
            let chain = sol.chain();
            if !chain.satisfies_assumption() {
                return Err(Error::Assumption(format!(
                    "{}: W requires an aperiodic unichain",
                    inst.name
                )));
            }
            let kit = LyapunovKit::build(&sol)?;
            let rep = kit.gap_bounds(inst.r_max(), &n_arms);
            let header = [
                "N", "lambda_w", "kappa", "slem", "c_se", "c_id", "c_so", "bound_se", "bound_id",
                "bound_so",
            ];
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.n_arms.to_string(),
                        kit.lambda_w.to_string(),
                        kit.kappa.to_string(),
                        chain.slem.to_string(),
                        rep.c_se.to_string(),
                        rep.c_id.to_string(),
                        rep.c_so.to_string(),
                        r.set_expansion.to_string(),
                        r.id.to_string(),
                        r.set_optimization.to_string(),
                    ]
                })
                .collect();
            emit(out.as_deref(), &csv_records(&header, &rows)?)?;
            Ok(0)
        }
        Command::Examples { out_dir } => {
            match out_dir {
                Some(dir) => {
                    fs::create_dir_all(&dir)
                        .map_err(|e| Error::Input(format!("{}: {e}", dir.display())))?;
                    for name in BUILTIN_NAMES {
                        let inst = instances::builtin(name)?;
                        emit(
                            Some(&dir.join(format!("{name}.json"))),
                            inst.to_json().as_bytes(),
                        )?;
                    }
                }
                None => BUILTIN_NAMES.iter().for_each(|n| println!("{n}")),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
