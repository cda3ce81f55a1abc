//! Built-in instances, Dirichlet random instances and the local-instability
//! check for LP-priority mean-field dynamics.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain;
use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpSolution, SolveOptions};
use crate::mdp::RbInstance;
use crate::rng;

pub const BUILTIN_NAMES: [&str; 6] = [
    "two-state-cycle",
    "three-state-nongap",
    "eight-state-nongap",
    "non-sa-8",
    "non-sa-12",
    "periodic-two-state",
];

pub fn builtin(name: &str) -> Result<RbInstance> {
    match name {
        "two-state-cycle" => Ok(two_state_cycle()),
        "three-state-nongap" => Ok(repair_rows(three_state_nongap())),
        "eight-state-nongap" => Ok(eight_state_nongap()),
        "non-sa-8" => Ok(non_sa_8()),
        "non-sa-12" => Ok(non_sa_12()),
        "periodic-two-state" => Ok(periodic_two_state()),
        other => Err(Error::Input(format!(
            "unknown builtin '{other}' (known: {})",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

/// Two states; one unit of reward per state change. A passive arm in state
/// 0 and an active arm in state 1 flip with probability 0.8; the other
/// state-action pairs stay put.
fn two_state_cycle() -> RbInstance {
    RbInstance {
        name: "two-state-cycle".into(),
        n_states: 2,
        p0: vec![vec![0.2, 0.8], vec![0.0, 1.0]],
        p1: vec![vec![1.0, 0.0], vec![0.8, 0.2]],
        r0: vec![0.8, 0.0],
        r1: vec![0.0, 0.8],
        alpha: 0.5,
    }
}

fn three_state_nongap() -> RbInstance {
    RbInstance {
        name: "three-state-nongap".into(),
        n_states: 3,
        p0: vec![
            vec![0.02232142, 0.10229283, 0.87538575],
            vec![0.03426605, 0.17175704, 0.79397691],
            vec![0.52324756, 0.45523298, 0.02151947],
        ],
        p1: vec![
            vec![0.14874601, 0.30435809, 0.54689589],
            vec![0.56845754, 0.41117331, 0.02036915],
            vec![0.25265570, 0.27310439, 0.4742399],
        ],
        r0: vec![0.0, 0.0, 0.0],
        r1: vec![0.37401552, 0.11740814, 0.07866135],
        alpha: 0.4,
    }
}

/// Preferred action is 1 on 0..=3 and 0 on 4..=7. Preferred: right to
/// `(s+1) mod 8` w.p. 0.1. Otherwise: left to `(s-1)+` w.p. `p_L[s]`.
fn eight_state_nongap() -> RbInstance {
    let n = 8;
    let p_r = 0.1;
    let p_l = [1.0, 1.0, 0.48, 0.47, 0.46, 0.45, 0.44, 0.43];
    let mut p = [vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]];
    for s in 0..n {
        let pref = if s < 4 { 1 } else { 0 };
        let right = (s + 1) % n;
        p[pref][s][right] += p_r;
        p[pref][s][s] += 1.0 - p_r;
        let left = s.saturating_sub(1);
        p[1 - pref][s][left] += p_l[s];
        p[1 - pref][s][s] += 1.0 - p_l[s];
    }
    let mut r0 = vec![0.0; n];
    let mut r1 = vec![0.0; n];
    r0[7] = 0.1;
    r1[0] = 1.0 / 300.0;
    let [p0, p1] = p;
    RbInstance {
        name: "eight-state-nongap".into(),
        n_states: n,
        p0,
        p1,
        r0,
        r1,
        alpha: 0.5,
    }
}

/// Required-action graph: `edges[s] = (action, successors)`. The required
/// action moves uniformly over the successors; the other action jumps to
/// state 0. Reward 1 for the required action on `rewarded` states.
fn required_action_instance(
    name: &str,
    edges: &[(u8, &[usize])],
    rewarded: std::ops::RangeInclusive<usize>,
    alpha: f64,
) -> RbInstance {
    let n = edges.len();
    let mut p = [vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]];
    let mut r = [vec![0.0; n], vec![0.0; n]];
    for (s, &(act, succ)) in edges.iter().enumerate() {
        let a = act as usize;
        for &t in succ {
            p[a][s][t] += 1.0 / succ.len() as f64;
        }
        p[1 - a][s][0] = 1.0;
        if rewarded.contains(&s) {
            r[a][s] = 1.0;
        }
    }
    let [p0, p1] = p;
    let [r0, r1] = r;
    RbInstance {
        name: name.into(),
        n_states: n,
        p0,
        p1,
        r0,
        r1,
        alpha,
    }
}

/// Transient path 0-1-2-3-4 under action 1; recurrent class {4,5,6,7}.
/// Leader action strings never hold three consecutive 1s, so a follower
/// started at 0 never reaches state 3.
fn non_sa_8() -> RbInstance {
    required_action_instance(
        "non-sa-8",
        &[
            (1, &[1]),    // 0
            (1, &[2]),    // 1
            (1, &[3]),    // 2
            (1, &[4]),    // 3
            (1, &[5]),    // 4
            (1, &[6]),    // 5
            (0, &[7, 4]), // 6
            (1, &[6]),    // 7
        ],
        4..=7,
        0.6,
    )
}

/// Transient states {0..=4}: four consecutive 0s lead from 0 to 5 through
/// 1 or 4, then 2 and 3. Recurrent class {5..=11} with cycles 5-6-7 and
/// 5-8-9-10-11; both activate twice, mean cycle length is 4, and no leader
/// string holds three consecutive 0s.
fn non_sa_12() -> RbInstance {
    required_action_instance(
        "non-sa-12",
        &[
            (0, &[1, 4]), // 0
            (0, &[2]),    // 1
            (0, &[3]),    // 2
            (0, &[5]),    // 3
            (0, &[2]),    // 4
            (1, &[6, 8]), // 5
            (0, &[7]),    // 6
            (1, &[5]),    // 7
            (0, &[9]),    // 8
            (1, &[10]),   // 9
            (0, &[11]),   // 10
            (0, &[5]),    // 11
        ],
        5..=11,
        0.5,
    )
}

/// States A = 0 and B = 1 swap every step under either action.
fn periodic_two_state() -> RbInstance {
    RbInstance {
        name: "periodic-two-state".into(),
        n_states: 2,
        p0: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        p1: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        r0: vec![1.0, 0.0],
        r1: vec![0.0, 1.0],
        alpha: 0.5,
    }
}

/// The published three-state matrices are rounded to eight decimals and
/// three rows miss 1 by 1e-8. Only those rows are rescaled; rows that
/// already sum to 1 within 1e-9 keep their literal values.
fn repair_rows(mut inst: RbInstance) -> RbInstance {
    for row in inst.p0.iter_mut().chain(inst.p1.iter_mut()) {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            row.iter_mut().for_each(|x| *x /= sum);
        }
    }
    inst
}

/// Literal published parameters, without row repair.
pub fn builtin_raw(name: &str) -> Result<RbInstance> {
    match name {
        "three-state-nongap" => Ok(three_state_nongap()),
        other => builtin(other),
    }
}

/// Dirichlet(param) draw. Gamma variates are formed in log space as
/// `ln G(param+1) + ln(U)/param` so tiny parameters do not underflow.
pub fn dirichlet<R: Rng>(n: usize, param: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(param + 1.0, 1.0).expect("positive shape");
    let logs: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = gamma.sample(rng);
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            g.ln() + u.ln() / param
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn gen_dirichlet<R: Rng>(n_states: usize, param: f64, rng: &mut R) -> Result<RbInstance> {
    if n_states < 2 || !(param > 0.0) {
        return Err(Error::Input(format!(
            "Dirichlet instance needs n_states >= 2 and param > 0 (got {n_states}, {param})"
        )));
    }
    let mut p0 = Vec::with_capacity(n_states);
    let mut p1 = Vec::with_capacity(n_states);
    for _ in 0..n_states {
        p0.push(dirichlet(n_states, param, rng));
        p1.push(dirichlet(n_states, param, rng));
    }
    let r0 = dirichlet(n_states, param, rng);
    let r1 = dirichlet(n_states, param, rng);
    let u: f64 = rng.random_range(0.1..0.9);
    let alpha = ((u * 100.0).floor() / 100.0).max(0.01);
    Ok(RbInstance {
        name: format!("dirichlet-{n_states}-{param}"),
        n_states,
        p0,
        p1,
        r0,
        r1,
        alpha,
    })
}

#[derive(Debug, Clone)]
pub struct PhiReport {
    pub phi: Option<DMatrix<f64>>,
    pub spectral_radius: Option<f64>,
    pub locally_unstable: bool,
    pub well_defined: bool,
    pub s_tilde: Option<usize>,
}

/// `Phi = P_pibs - 1^T mu* - (c - alpha 1)^T (P1(s~) - P0(s~))`.
pub fn phi_matrix(inst: &RbInstance, sol: &LpSolution, s_tilde: usize) -> DMatrix<f64> {
    let n = inst.n_states;
    DMatrix::from_fn(n, n, |i, j| {
        sol.p_pibs[(i, j)]
            - sol.mu_star[j]
            - (sol.c_pibs[i] - inst.alpha) * (inst.p1[s_tilde][j] - inst.p0[s_tilde][j])
    })
}

pub fn phi_report(inst: &RbInstance, sol: &LpSolution) -> PhiReport {
    const POS: f64 = 1e-10;
    let no_transient = sol.mu_star.iter().all(|&m| m > POS);
    let s_tilde = (0..inst.n_states).find(|&s| sol.y[s][0] > POS && sol.y[s][1] > POS);
    let well_defined = sol.unique && no_transient && s_tilde.is_some();
    if !well_defined {
        return PhiReport {
            phi: None,
            spectral_radius: None,
            locally_unstable: false,
            well_defined,
            s_tilde,
        };
    }
    let phi = phi_matrix(inst, sol, s_tilde.unwrap());
    let radius = chain::spectral_radius(&phi);
    PhiReport {
        phi: Some(phi),
        spectral_radius: Some(radius),
        locally_unstable: radius > 1.0,
        well_defined,
        s_tilde,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRow {
    pub instance_id: u64,
    pub slem: f64,
    pub phi_radius: f64,
    pub well_defined: bool,
    pub locally_unstable: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSummary {
    pub rows: Vec<ScanRow>,
    pub attempts: u64,
    pub below_cutoff: usize,
    pub unstable_below_cutoff: usize,
    /// Unstable fraction among rows with `slem < cutoff`; 0 when none qualify.
    pub unstable_fraction: f64,
}

fn scan_attempt(id: u64, n_states: usize, param: f64, seed: u64) -> Result<Option<ScanRow>> {
    let mut r = rng::stream(seed, id);
    let inst = gen_dirichlet(n_states, param, &mut r)?;
    let Ok(sol) = solve_lp(&inst, SolveOptions::default()) else {
        return Ok(None);
    };
    let rep = phi_report(&inst, &sol);
    if !rep.well_defined {
        return Ok(None);
    }
    Ok(Some(ScanRow {
        instance_id: id,
        slem: chain::slem(&sol.p_pibs),
        phi_radius: rep.spectral_radius.unwrap(),
        well_defined: true,
        locally_unstable: rep.locally_unstable,
        alpha: inst.alpha,
    }))
}

/// Draws attempts `0, 1, 2, ...` until `count` well-defined instances are
/// found or `10 * count + 100` attempts are spent. Attempt `j` uses stream
/// `j`, so results do not depend on the thread count.
pub fn scan(
    count: usize,
    n_states: usize,
    param: f64,
    cutoff: f64,
    seed: u64,
) -> Result<ScanSummary> {
    let cap = 10 * count as u64 + 100;
    let mut rows = Vec::with_capacity(count);
    let mut next = 0u64;
    const BLOCK: u64 = 64;
    while rows.len() < count && next < cap {
        let end = (next + BLOCK).min(cap);
        let block: Vec<Option<ScanRow>> = (next..end)
            .into_par_iter()
            .map(|id| scan_attempt(id, n_states, param, seed))
            .collect::<Result<_>>()?;
        rows.extend(block.into_iter().flatten().take(count - rows.len()));
        next = end;
    }
    let attempts = match rows.last() {
        Some(r) if rows.len() == count => r.instance_id + 1,
        _ => next,
    };
    let below: Vec<&ScanRow> = rows.iter().filter(|r| r.slem < cutoff).collect();
    let unstable = below.iter().filter(|r| r.locally_unstable).count();
    Ok(ScanSummary {
        unstable_fraction: if below.is_empty() {
            0.0
        } else {
            unstable as f64 / below.len() as f64
        },
        below_cutoff: below.len(),
        unstable_below_cutoff: unstable,
        attempts,
        rows,
    })
}
