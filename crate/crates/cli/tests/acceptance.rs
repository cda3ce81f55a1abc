//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails.

use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rb_core::checks;
use rb_core::instances::{builtin, gen_dirichlet, scan, BUILTIN_NAMES};
use rb_core::oracle::exact_average;
use rb_core::rng::stream;
use rb_core::{
    run, setopt, solve_lp, ArmConfig, InitialStates, LpSolution, LyapunovKit, PolicyKind,
    RbInstance, RunOptions, RunResult, SolveOptions,
};

type Outcome = Result<String, String>;

fn setup(name: &str) -> (RbInstance, LpSolution) {
    let inst = builtin(name).expect("builtin");
    let sol = solve_lp(&inst, SolveOptions::default()).expect("lp");
    (inst, sol)
}

fn simulate(
    inst: &RbInstance,
    sol: &LpSolution,
    n: usize,
    kind: PolicyKind,
    initial: InitialStates,
    opts: &RunOptions,
) -> RunResult {
    let cfg = ArmConfig::new(inst, n, initial).expect("arm config");
    run(inst, sol, &cfg, kind, opts).expect("run")
}

/// LP value bounds every policy on every builtin.
fn ac1() -> Outcome {
    let opts = RunOptions::default();
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    for name in BUILTIN_NAMES {
        let (inst, sol) = setup(name);
        for kind in PolicyKind::ALL {
            let r = simulate(&inst, &sol, 100, kind, InitialStates::UniformRandom, &opts);
            let excess = r.avg_reward() - (sol.r_rel + 3.0 * r.ci_half_width());
            worst = worst.max(excess);
            if excess > 0.0 {
                bad.push(format!(
                    "{name}/{kind}: {:.6} > {:.6}",
                    r.avg_reward(),
                    sol.r_rel
                ));
            }
        }
    }
    let msg = format!(
        "{} runs, max(avg - r_rel - 3hw) = {worst:.3e}",
        BUILTIN_NAMES.len() * PolicyKind::ALL.len()
    );
    if bad.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; {}", bad.join(", ")))
    }
}

/// Periodic instance: relaxation 1, every policy earns exactly 1/2.
fn ac2() -> Outcome {
    let (inst, sol) = setup("periodic-two-state");
    if (sol.r_rel - 1.0).abs() > 1e-9 {
        return Err(format!("r_rel = {}", sol.r_rel));
    }
    let opts = RunOptions {
        horizon: 2000,
        replications: 2,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for n in [2, 10, 100] {
        for kind in PolicyKind::ALL {
            let r = simulate(&inst, &sol, n, kind, InitialStates::AllState(0), &opts);
            worst = worst.max((r.avg_reward() - 0.5).abs());
        }
    }
    let msg = format!(
        "r_rel = {:.12}, max |avg - 0.5| = {worst:.1e} over N in {{2, 10, 100}}",
        sol.r_rel
    );
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Gap shrinks like 1/sqrt(N) for set-expansion and ID.
fn ac3() -> Outcome {
    let (inst, sol) = setup("three-state-nongap");
    let kit = LyapunovKit::build(&sol).expect("kit");
    let grid = [100, 400, 1600];
    let bounds = kit.gap_bounds(inst.r_max(), &grid);
    let opts = RunOptions::default();
    let mut notes = Vec::new();
    let mut ok = true;
    for (kind, constant) in [
        (PolicyKind::SetExpansion, bounds.c_se),
        (PolicyKind::Id, bounds.c_id),
    ] {
        let runs: Vec<RunResult> = grid
            .iter()
            .map(|&n| simulate(&inst, &sol, n, kind, InitialStates::UniformRandom, &opts))
            .collect();
        let gaps: Vec<f64> = runs.iter().map(|r| sol.r_rel - r.avg_reward()).collect();
        let scaled: Vec<f64> = gaps
            .iter()
            .zip(grid)
            .map(|(g, n)| g * (n as f64).sqrt())
            .collect();
        let (lo, hi) = scaled
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                (a.min(x), b.max(x))
            });
        let spread_ok = lo > 0.0 && hi / lo <= 3.0;
        let bound_ok = hi <= constant;
        let mono_ok = (1..grid.len())
            .all(|i| gaps[i - 1] - gaps[i] > runs[i - 1].ci_half_width() + runs[i].ci_half_width());
        ok &= spread_ok && bound_ok && mono_ok;
        notes.push(format!(
            "{kind}: gap*sqrt(N) = [{}] (spread {:.2}, constant {constant:.1}), monotone {mono_ok}",
            scaled
                .iter()
                .map(|x| format!("{x:.4}"))
                .collect::<Vec<_>>()
                .join(", "),
            hi / lo
        ));
    }
    let msg = notes.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// ID beats LP-priority on the non-GAP three-state instance.
fn ac4() -> Outcome {
    let (inst, sol) = setup("three-state-nongap");
    let opts = RunOptions::default();
    let id = simulate(
        &inst,
        &sol,
        10_000,
        PolicyKind::Id,
        InitialStates::UniformRandom,
        &opts,
    );
    let pr = simulate(
        &inst,
        &sol,
        10_000,
        PolicyKind::LpPriority,
        InitialStates::UniformRandom,
        &opts,
    );
    let margin = id.optimality_ratio - pr.optimality_ratio;
    let hw = (id.ci_half_width() + pr.ci_half_width()) / sol.r_rel;
    let msg = format!(
        "ratio id {:.5} vs lp-priority {:.5}, margin {margin:.5} vs half-widths {hw:.2e}",
        id.optimality_ratio, pr.optimality_ratio
    );
    if margin > hw {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// ID beats FTVA without synchronization; leader and follower never meet.
fn ac5() -> Outcome {
    let (inst, sol) = setup("non-sa-8");
    let id = simulate(
        &inst,
        &sol,
        1000,
        PolicyKind::Id,
        InitialStates::UniformRandom,
        &RunOptions::default(),
    );
    let ftva_opts = RunOptions {
        horizon: 160_000,
        ..Default::default()
    };
    let ftva = simulate(
        &inst,
        &sol,
        1000,
        PolicyKind::Ftva,
        InitialStates::UniformRandom,
        &ftva_opts,
    );
    let margin = id.optimality_ratio - ftva.optimality_ratio;
    let hw = (id.ci_half_width() + ftva.ci_half_width()) / sol.r_rel;
    let meet = checks::leader_follower(&inst, &sol, 7, 0, 10_000, &mut stream(0, 0));
    let msg = format!(
        "ratio id {:.5} vs ftva {:.5}, margin {margin:.5} vs half-widths {hw:.2e}; leader 7 / follower 0 meet at {meet:?}",
        id.optimality_ratio, ftva.optimality_ratio
    );
    if margin > hw && meet.is_none() {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Lyapunov inequalities on random aperiodic-unichain instances.
fn ac6() -> Outcome {
    let mut rng = stream(6, 0);
    let mut failures = Vec::new();
    let mut found = 0;
    let mut drawn = 0;
    while found < 20 && drawn < 2000 {
        drawn += 1;
        let ns = rng.random_range(3..=8);
        let inst = gen_dirichlet(ns, 1.0, &mut rng).expect("instance");
        let Ok(sol) = solve_lp(&inst, SolveOptions::default()) else {
            continue;
        };
        if !sol.chain().satisfies_assumption() {
            continue;
        }
        let Ok(kit) = LyapunovKit::build(&sol) else {
            continue;
        };
        found += 1;
        let mut all = vec![
            checks::pseudo_contraction(&kit, &sol, 300, &mut rng),
            checks::l1_nonexpansive(&sol, 300, &mut rng),
            checks::distance_domination(&kit, 100, 200, &mut rng),
            checks::l1_drift(&inst, &sol, 100, 2000, &mut rng),
        ];
        all.extend(checks::lipschitz(&kit, 100, 200, &mut rng));
        all.extend(checks::drift(&inst, &sol, &kit, 100, 2000, &mut rng));
        for c in all.into_iter().filter(|c| !c.holds()) {
            failures.push(format!(
                "instance {found} (|S|={ns}) {}: {:.3e}",
                c.name, c.worst
            ));
        }
    }
    let msg = format!(
        "{found} instances from {drawn} draws, {} failed checks",
        failures.len()
    );
    if found == 20 && failures.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; {}", failures.join(", ")))
    }
}

/// Per-step conformity deficit stays under its bound.
fn ac7() -> Outcome {
    let (inst, sol) = setup("three-state-nongap");
    let opts = RunOptions {
        traces: true,
        ..Default::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [PolicyKind::SetExpansion, PolicyKind::Id] {
        for n in [100, 1000] {
            let r = simulate(&inst, &sol, n, kind, InitialStates::UniformRandom, &opts);
            let c = r.conditions.expect("condition report");
            let lhs = c.conformity_deficit.mean + 3.0 * c.conformity_deficit.se;
            ok &= lhs <= c.conformity_bound;
            notes.push(format!(
                "{kind} N={n}: {:.2e} (+3se {lhs:.2e}) <= {:.2e}",
                c.conformity_deficit.mean, c.conformity_bound
            ));
        }
    }
    let msg = notes.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Local-instability frequency of random instances.
fn ac8() -> Outcome {
    let sparse = scan(500, 10, 0.05, 0.95, 0).map_err(|e| e.to_string())?;
    let dense = scan(500, 10, 1.0, 0.95, 0).map_err(|e| e.to_string())?;
    let dense_unstable = dense.rows.iter().filter(|r| r.locally_unstable).count();
    let msg = format!(
        "Dirichlet(0.05): {}/{} rows, unstable {}/{} below cutoff = {:.3}; Dirichlet(1): {}/{} rows, {dense_unstable} unstable",
        sparse.rows.len(),
        sparse.attempts,
        sparse.unstable_below_cutoff,
        sparse.below_cutoff,
        sparse.unstable_fraction,
        dense.rows.len(),
        dense.attempts,
    );
    let ok = sparse.rows.len() == 500
        && dense.rows.len() == 500
        && (0.10..=0.32).contains(&sparse.unstable_fraction)
        && dense_unstable == 0;
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Exact joint-chain values agree with simulation; set optimization agrees
/// with subset enumeration.
fn ac9() -> Outcome {
    let opts = RunOptions {
        horizon: 1_000_000,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for (name, initial) in [
        ("two-state-cycle", InitialStates::UniformRandom),
        ("periodic-two-state", InitialStates::AllState(0)),
    ] {
        let (inst, sol) = setup(name);
        for kind in [PolicyKind::Id, PolicyKind::LpPriority] {
            let exact = exact_average(&inst, &sol, 2, kind, &initial).map_err(|e| e.to_string())?;
            let sim = simulate(&inst, &sol, 2, kind, initial.clone(), &opts).avg_reward();
            worst = worst.max((exact - sim).abs());
            notes.push(format!("{name}/{kind} {exact:.5}~{sim:.5}"));
        }
    }
    let (_, sol) = setup("two-state-cycle");
    let kit = LyapunovKit::build_or_discounted(&sol).expect("kit");
    let mut rng = stream(9, 0);
    let mut opt_err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let states: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut all = vec![0; 2];
        states.iter().for_each(|&s| all[s] += 1);
        let solved = setopt::solve(&kit, &all).objective;
        let brute = (0u32..1 << n)
            .filter_map(|mask| {
                let mut counts = vec![0; 2];
                (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .for_each(|i| counts[states[i]] += 1);
                setopt::objective(&kit, &counts, n)
            })
            .fold(f64::INFINITY, f64::min);
        opt_err = opt_err.max((solved - brute).abs());
    }
    let msg = format!(
        "{}; max |exact - sim| = {worst:.2e}; set-optimization max error {opt_err:.1e}",
        notes.join(", ")
    );
    if worst <= 1e-2 && opt_err <= 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Repeated CLI invocations produce identical bytes.
fn ac10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_rb-engine");
    let dir = std::env::temp_dir().join(format!("rb-engine-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let invocations: Vec<Vec<String>> = vec![
        "simulate --builtin three-state-nongap --policy set-expansion --n-arms 50 --horizon 2000 --seed 3 --traces {dir}/traces.csv --out {dir}/out.csv".into(),
        "simulate --builtin non-sa-8 --policy ftva --n-arms 20 --horizon 2000 --seed 4 --out {dir}/out.csv".into(),
        "compare --builtin eight-state-nongap --policies id,set-optimization,lp-priority,random --n-arms 20,40 --horizon 2000 --out {dir}/out.csv".into(),
        "scan --states 6 --dirichlet 0.1 --count 40 --seed 2 --out {dir}/out.csv".into(),
        "diagnose --builtin three-state-nongap --policy id --n-arms 40 --horizon 8000 --window 200 --out {dir}/out.csv".into(),
        "bounds --builtin three-state-nongap --n-arms 100,1000 --out {dir}/out.csv".into(),
    ]
    .into_iter()
    .map(|s: String| s.replace("{dir}", &dir.display().to_string()).split(' ').map(String::from).collect())
    .collect();
    let mut compared = 0;
    for args in &invocations {
        let mut outputs = Vec::new();
        for jobs in ["1", "2"] {
            let status = Command::new(bin)
                .args(["--jobs", jobs])
                .args(args)
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "{} failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            let mut files = vec![std::fs::read(dir.join("out.csv")).map_err(|e| e.to_string())?];
            if let Ok(t) = std::fs::read(dir.join("traces.csv")) {
                files.push(t);
            }
            outputs.push(files);
            let _ = std::fs::remove_file(dir.join("out.csv"));
            let _ = std::fs::remove_file(dir.join("traces.csv"));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("outputs differ for `{}`", args.join(" ")));
        }
        compared += outputs[0].len();
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "{} invocations run twice (1 and 2 threads), {compared} files byte-identical",
        invocations.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("AC1 LP upper bound", ac1),
        ("AC2 periodic counterexample", ac2),
        ("AC3 1/sqrt(N) scaling", ac3),
        ("AC4 non-GAP ordering", ac4),
        ("AC5 non-SA ordering", ac5),
        ("AC6 Lyapunov properties", ac6),
        ("AC7 condition bounds", ac7),
        ("AC8 Dirichlet scan", ac8),
        ("AC9 oracle equivalence", ac9),
        ("AC10 determinism", ac10),
    ];
    let only: Option<String> = std::env::var("RB_ACCEPTANCE_ONLY").ok();
    let mut failed = 0;
    for (name, f) in criteria {
        if let Some(sel) = &only {
            if !sel
                .split(',')
                .any(|s| name.split(' ').next() == Some(s.trim()))
            {
                continue;
            }
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("[PASS] {name} ({secs:.1}s): {msg}"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.1}s): {msg}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
