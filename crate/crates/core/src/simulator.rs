//! N-armed simulation with reward accounting, focus-set traces and
//! batch-means summaries.
//!
//! Replication `r` draws everything from `rng::stream(seed, r)`: initial
//! states first, then per step the policy's draws and the transitions in
//! arm order. Replications run on the rayon pool and are merged in index
//! order, so results do not depend on the number of threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::LpSolution;
use crate::lyapunov::{conditions, slack, LyapunovKit};
use crate::mdp::{ArmConfig, Kernel, RbInstance};
use crate::policies::{Policy, PolicyKind};
use crate::rng::stream;
use crate::stats::{self, Summary};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub n_batches: usize,
    /// Leading fraction of each replication dropped before batching.
    pub burn_in: f64,
    /// Record focus-set traces and condition diagnostics.
    pub traces: bool,
    /// Look-ahead window for persistence; `None` disables it.
    pub persistence_window: Option<usize>,
    /// Steps skipped before persistence is recorded.
    pub persistence_burn_in: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            horizon: 20_000,
            replications: 5,
            seed: 0,
            n_batches: 4,
            burn_in: 0.25,
            traces: false,
            persistence_window: None,
            persistence_burn_in: 5000,
        }
    }
}

impl RunOptions {
    /// Batches the whole path, without burn-in.
    pub fn strict(mut self) -> Self {
        self.burn_in = 0.0;
        self
    }

    /// First step included in the batch means.
    pub fn batch_start(&self) -> usize {
        let burn = (self.horizon as f64 * self.burn_in).floor() as usize;
        let usable = self.horizon - burn.min(self.horizon);
        self.horizon - (usable - usable % self.n_batches.max(1))
    }
}

/// Per-step focus-set diagnostics. For the ID policy the focus set is the
/// prefix `[N m_d(X_t)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: usize,
    #[serde(rename = "m_D")]
    pub m_d: f64,
    pub delta: f64,
    /// `m(D_t \ D_t')` for focus-set policies, `(N m_d - N_pibs)^+ / N` for ID.
    pub conformity_deficit: f64,
    /// `(m(D_t) - m(D_{t+1}))^+`; zero on the last step.
    pub shrinkage: f64,
    /// `(1 - m(D_t)) - (L_cov h + K_cov)`.
    pub coverage_residual: f64,
    /// Fraction of arms conforming over the window starting at `t`.
    pub persistence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub conformity_deficit: Summary,
    pub conformity_bound: f64,
    pub shrinkage: Summary,
    pub shrinkage_bound: f64,
    pub coverage_residual: Summary,
    pub coverage_residual_max: f64,
    /// W came from the exact series rather than the discounted fallback.
    pub exact_w: bool,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    /// Mean reward per arm at each step.
    pub reward_trace: Vec<f64>,
    pub batch_means: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub final_states: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub instance: String,
    pub policy: PolicyKind,
    pub n_arms: usize,
    pub seed: u64,
    pub horizon: usize,
    pub r_rel: f64,
    pub replications: Vec<Replication>,
    pub summary: Summary,
    pub optimality_ratio: f64,
    pub conditions: Option<ConditionReport>,
}

impl RunResult {
    pub fn avg_reward(&self) -> f64 {
        self.summary.mean
    }

    pub fn ci_half_width(&self) -> f64 {
        self.summary.half_width
    }

    /// Mean of the per-window persistence fractions over all replications.
    pub fn mean_persistence(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .replications
            .iter()
            .flat_map(|r| r.trace.iter().filter_map(|t| t.persistence))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// One row per (replication, batch) and a final summary row.
    pub fn rows(&self) -> Vec<ResultRow> {
        let mut out = Vec::new();
        for rep in &self.replications {
            for (b, &m) in rep.batch_means.iter().enumerate() {
                out.push(ResultRow {
                    instance: self.instance.clone(),
                    policy: self.policy.name().to_string(),
                    n: self.n_arms,
                    seed: self.seed,
                    replication: rep.index.to_string(),
                    batch: b.to_string(),
                    avg_reward: m,
                    ci_half: None,
                    optimality_ratio: ratio(m, self.r_rel),
                });
            }
        }
        out.push(ResultRow {
            instance: self.instance.clone(),
            policy: self.policy.name().to_string(),
            n: self.n_arms,
            seed: self.seed,
            replication: "all".into(),
            batch: "all".into(),
            avg_reward: self.summary.mean,
            ci_half: Some(self.summary.half_width),
            optimality_ratio: self.optimality_ratio,
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub instance: String,
    pub policy: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub replication: String,
    pub batch: String,
    pub avg_reward: f64,
    pub ci_half: Option<f64>,
    pub optimality_ratio: f64,
}

fn ratio(x: f64, r_rel: f64) -> f64 {
    if r_rel != 0.0 {
        x / r_rel
    } else {
        f64::NAN
    }
}

/// Diagnostic constants shared by all replications of a run.
struct Diag {
    kit: LyapunovKit,
    l_cov: f64,
    k_cov: f64,
}

pub fn run(
    inst: &RbInstance,
    sol: &LpSolution,
    config: &ArmConfig,
    kind: PolicyKind,
    opts: &RunOptions,
) -> Result<RunResult> {
    if opts.horizon == 0 || opts.replications == 0 {
        return Err(Error::Input(
            "horizon and replications must be positive".into(),
        ));
    }
    if opts.n_batches == 0 || opts.horizon - opts.batch_start() < opts.n_batches {
        return Err(Error::Input(format!(
            "horizon {} too short for {} batches after burn-in",
            opts.horizon, opts.n_batches
        )));
    }
    if let Some(w) = opts.persistence_window {
        if w == 0 || opts.persistence_burn_in + w > opts.horizon {
            return Err(Error::Input(format!(
                "persistence window {w} exceeds the horizon remaining after {} burn-in steps",
                opts.persistence_burn_in
            )));
        }
    }
    let policy = Policy::new(kind, inst, sol, config.budget)?;
    let n = config.n_arms;
    let diag = if opts.traces && (kind.has_focus_set() || kind == PolicyKind::Id) {
        let kit = match &policy.kit {
            Some(k) => k.clone(),
            None => LyapunovKit::build_or_discounted(sol)?,
        };
        let beta = inst.beta();
        let (l_cov, k_cov) = if kind == PolicyKind::Id {
            conditions::id_coverage(kit.kappa, kit.lambda_w, beta, n)
        } else {
            conditions::se_coverage(inst.n_states, beta, n)
        };
        Some(Diag { kit, l_cov, k_cov })
    } else {
        None
    };
    let kernel = Kernel::new(inst);
    let reps: Vec<Result<Replication>> = (0..opts.replications)
        .into_par_iter()
        .map(|r| replicate(inst, config, &policy, &kernel, diag.as_ref(), opts, r))
        .collect();
    let reps: Vec<Replication> = reps.into_iter().collect::<Result<_>>()?;
    let all_means: Vec<f64> = reps
        .iter()
        .flat_map(|r| r.batch_means.iter().copied())
        .collect();
    let summary = if all_means.len() >= 2 {
        stats::summarize(&all_means)?
    } else {
        Summary {
            mean: all_means[0],
            half_width: f64::NAN,
            se: f64::NAN,
            k: 1,
        }
    };
    let conditions = match &diag {
        Some(d) => Some(condition_report(&reps, kind, inst, d, n, opts)?),
        None => None,
    };
    Ok(RunResult {
        instance: inst.name.clone(),
        policy: kind,
        n_arms: n,
        seed: opts.seed,
        horizon: opts.horizon,
        r_rel: sol.r_rel,
        optimality_ratio: ratio(summary.mean, sol.r_rel),
        replications: reps,
        summary,
        conditions,
    })
}

fn replicate(
    inst: &RbInstance,
    config: &ArmConfig,
    policy: &Policy,
    kernel: &Kernel,
    diag: Option<&Diag>,
    opts: &RunOptions,
    index: usize,
) -> Result<Replication> {
    let mut rng = stream(opts.seed, index as u64);
    let mut states = config.initial_states(inst.n_states, &mut rng);
    if states.iter().any(|&s| s >= inst.n_states) || states.len() != config.n_arms {
        return Err(Error::Input(
            "initial states do not match the instance".into(),
        ));
    }
    let n = config.n_arms;
    let nf = n as f64;
    let mut pst = policy.init_state(&states);
    let mut rewards = Vec::with_capacity(opts.horizon);
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut run_len = vec![0usize; n];
    let window = opts.persistence_window;
    let track_persistence = window.is_some()
        && policy.kind != PolicyKind::LpPriority
        && policy.kind != PolicyKind::Random;
    let mut persistence: Vec<f64> = Vec::new();
    for t in 0..opts.horizon {
        let step = policy.step(&mut pst, &states, &mut rng);
        if step.active() != config.budget {
            return Err(Error::Numerical(format!(
                "budget violated at t={t}: {} active, {} required",
                step.active(),
                config.budget
            )));
        }
        let reward: f64 = states
            .iter()
            .zip(&step.actions)
            .map(|(&s, &a)| inst.r(s, a))
            .sum();
        rewards.push(reward / nf);
        if let Some(d) = diag {
            trace.push(trace_row(t, &states, &step, policy, d, n));
        }
        if track_persistence {
            let ideal = step.ideal.as_ref().expect("policy samples ideal actions");
            for i in 0..n {
                run_len[i] = if step.actions[i] == ideal[i] {
                    run_len[i] + 1
                } else {
                    0
                };
            }
            let w = window.unwrap();
            if t + 1 >= w && t + 1 - w >= opts.persistence_burn_in {
                let ok = run_len.iter().filter(|&&l| l >= w).count();
                persistence.push(ok as f64 / nf);
            }
        }
        for (s, &a) in states.iter_mut().zip(&step.actions) {
            *s = kernel.sample(*s, a, &mut rng);
        }
        policy.advance(&mut pst, &step, &states, &mut rng);
    }
    for k in 1..trace.len() {
        trace[k - 1].shrinkage = (trace[k - 1].m_d - trace[k].m_d).max(0.0);
    }
    if track_persistence {
        if trace.is_empty() {
            trace = (0..opts.horizon)
                .map(|t| TraceRow {
                    t,
                    m_d: f64::NAN,
                    delta: f64::NAN,
                    conformity_deficit: f64::NAN,
                    shrinkage: f64::NAN,
                    coverage_residual: f64::NAN,
                    persistence: None,
                })
                .collect();
        }
        let start = opts.persistence_burn_in;
        for (j, p) in persistence.into_iter().enumerate() {
            trace[start + j].persistence = Some(p);
        }
    }
    let start = opts.batch_start();
    let batch_means = stats::batch_averages(&rewards[start..], opts.n_batches)?;
    Ok(Replication {
        index,
        reward_trace: rewards,
        batch_means,
        trace,
        final_states: states,
    })
}

fn trace_row(
    t: usize,
    states: &[usize],
    step: &crate::policies::PolicyStep,
    policy: &Policy,
    d: &Diag,
    n: usize,
) -> TraceRow {
    let nf = n as f64;
    let ns = policy.n_states;
    let mu = &d.kit.mu_star;
    let beta = d.kit.beta;
    let (m, x, deficit, h) = if let Some(focus) = &step.focus {
        let mut x = vec![0.0; ns];
        let mut size = 0usize;
        let mut conform = 0usize;
        let conf = step.conformity.as_ref().unwrap();
        for i in 0..n {
            if focus[i] {
                x[states[i]] += 1.0 / nf;
                size += 1;
                conform += conf[i] as usize;
            }
        }
        let m = size as f64 / nf;
        let h = d.kit.h_w_unchecked(&x, m);
        (m, x, (size - conform) as f64 / nf, h)
    } else {
        let prof = d.kit.h_id_profile(states);
        let k = d.kit.m_d_from_profile(&prof);
        let mut x = vec![0.0; ns];
        states[..k].iter().for_each(|&s| x[s] += 1.0 / nf);
        let n_follow = step.n_follow.unwrap_or(n);
        (
            k as f64 / nf,
            x,
            k.saturating_sub(n_follow) as f64 / nf,
            prof[k],
        )
    };
    TraceRow {
        t,
        m_d: m,
        delta: slack(beta, mu, &x, m),
        conformity_deficit: deficit,
        shrinkage: 0.0,
        coverage_residual: (1.0 - m) - (d.l_cov * h + d.k_cov),
        persistence: None,
    }
}

fn condition_report(
    reps: &[Replication],
    kind: PolicyKind,
    inst: &RbInstance,
    d: &Diag,
    n: usize,
    opts: &RunOptions,
) -> Result<ConditionReport> {
    let start = opts.batch_start();
    let collect = |f: fn(&TraceRow) -> f64| -> Result<Summary> {
        let mut means = Vec::new();
        for r in reps {
            let vals: Vec<f64> = r.trace[start..].iter().map(f).collect();
            means.extend(stats::batch_averages(&vals, opts.n_batches)?);
        }
        if means.len() < 2 {
            return Ok(Summary {
                mean: means[0],
                half_width: f64::NAN,
                se: f64::NAN,
                k: 1,
            });
        }
        stats::summarize(&means)
    };
    let beta = inst.beta();
    let (conformity_bound, shrinkage_bound) = if kind == PolicyKind::Id {
        (
            conditions::id_conformity(beta, n),
            conditions::id_shrinkage(d.kit.kappa, d.kit.lambda_w, beta, n),
        )
    } else {
        (
            conditions::se_conformity(n),
            conditions::se_shrinkage(inst.n_states, beta, n),
        )
    };
    let coverage_residual_max = reps
        .iter()
        .flat_map(|r| r.trace[start..].iter().map(|t| t.coverage_residual))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(ConditionReport {
        conformity_deficit: collect(|t| t.conformity_deficit)?,
        conformity_bound,
        shrinkage: collect(|t| t.shrinkage)?,
        shrinkage_bound,
        coverage_residual: collect(|t| t.coverage_residual)?,
        coverage_residual_max,
        exact_w: d.kit.is_exact(),
    })
}
