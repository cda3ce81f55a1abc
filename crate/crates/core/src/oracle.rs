//! Exact long-run average reward of tiny N-armed systems.
//!
//! Builds the Markov chain on joint states `S^N`, summing over every ideal
//! action vector and every tie-break outcome, and returns the Cesàro limit
//! from an initial distribution: stationary rewards of the closed classes
//! weighted by absorption probabilities.

use nalgebra::{DMatrix, DVector};

use crate::chain;
use crate::error::{Error, Result};
use crate::lp::LpSolution;
use crate::mdp::{InitialStates, RbInstance};
use crate::policies::{self, PolicyKind};

pub const MAX_ARMS: usize = 4;
pub const MAX_JOINT: usize = 10_000;

fn decode(mut idx: usize, n_states: usize, n_arms: usize) -> Vec<usize> {
    (0..n_arms)
        .map(|_| {
            let s = idx % n_states;
            idx /= n_states;
            s
        })
        .collect()
}

fn encode(states: &[usize], n_states: usize) -> usize {
    states.iter().rev().fold(0, |acc, &s| acc * n_states + s)
}

/// Distribution over action vectors chosen in joint state `states`.
fn action_law(
    kind: PolicyKind,
    sol: &LpSolution,
    rank: &[usize],
    states: &[usize],
    budget: usize,
) -> Result<Vec<(f64, Vec<u8>)>> {
    let n = states.len();
    match kind {
        PolicyKind::Id => {
            let mut out = Vec::new();
            for mask in 0..(1usize << n) {
                let ideal: Vec<u8> = (0..n).map(|i| (mask >> i & 1) as u8).collect();
                let p: f64 = (0..n)
                    .map(|i| {
                        let c = sol.c_pibs[states[i]];
                        if ideal[i] == 1 {
                            c
                        } else {
                            1.0 - c
                        }
                    })
                    .product();
                if p > 0.0 {
                    out.push((p, policies::rectify_id(&ideal, budget).0));
                }
            }
            Ok(out)
        }
        PolicyKind::LpPriority => Ok(vec![(1.0, policies::lp_priority(states, rank, budget))]),
        PolicyKind::Random => {
            let subsets: Vec<Vec<u8>> = (0..(1usize << n))
                .filter(|m| m.count_ones() as usize == budget)
                .map(|m| (0..n).map(|i| (m >> i & 1) as u8).collect())
                .collect();
            let p = 1.0 / subsets.len() as f64;
            Ok(subsets.into_iter().map(|a| (p, a)).collect())
        }
        other => Err(Error::Input(format!(
            "policy {other} is not Markovian in the joint state"
        ))),
    }
}

/// Joint transition matrix and per-state expected reward.
pub fn joint_chain(
    inst: &RbInstance,
    sol: &LpSolution,
    n_arms: usize,
    budget: usize,
    kind: PolicyKind,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let ns = inst.n_states;
    if n_arms == 0 || n_arms > MAX_ARMS {
        return Err(Error::Input(format!(
            "exact oracle supports 1..={MAX_ARMS} arms, got {n_arms}"
        )));
    }
    let size = ns
        .checked_pow(n_arms as u32)
        .filter(|&s| s <= MAX_JOINT)
        .ok_or_else(|| {
            Error::Input(format!(
                "joint state space {ns}^{n_arms} exceeds {MAX_JOINT}"
            ))
        })?;
    let rank = if kind == PolicyKind::LpPriority {
        let order = sol.priority_order()?;
        let mut rank = vec![0; ns];
        order
            .iter()
            .enumerate()
            .for_each(|(pos, &s)| rank[s] = ns - pos);
        rank
    } else {
        vec![0; ns]
    };
    let mut t = DMatrix::<f64>::zeros(size, size);
    let mut r = vec![0.0; size];
    for x in 0..size {
        let states = decode(x, ns, n_arms);
        for (p, actions) in action_law(kind, sol, &rank, &states, budget)? {
            r[x] += p * states
                .iter()
                .zip(&actions)
                .map(|(&s, &a)| inst.r(s, a))
                .sum::<f64>()
                / n_arms as f64;
            // Product law of the next joint state, built arm by arm.
            let mut law: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), p)];
            for i in 0..n_arms {
                let row = inst.row(states[i], actions[i]);
                law = law
                    .into_iter()
                    .flat_map(|(prefix, q)| {
                        row.iter()
                            .enumerate()
                            .filter(|(_, &w)| w > 0.0)
                            .map(move |(s2, &w)| {
                                let mut v = prefix.clone();
                                v.push(s2);
                                (v, q * w)
                            })
                    })
                    .collect();
            }
            for (next, q) in law {
                t[(x, encode(&next, ns))] += q;
            }
        }
    }
    Ok((t, r))
}

/// Cesàro-limit average reward per arm from the given initial law.
pub fn exact_average(
    inst: &RbInstance,
    sol: &LpSolution,
    n_arms: usize,
    kind: PolicyKind,
    initial: &InitialStates,
) -> Result<f64> {
    let budget = inst.alpha * n_arms as f64;
    if (budget - budget.round()).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "alpha N = {budget} is not an integer"
        )));
    }
    let budget = budget.round() as usize;
    let (t, r) = joint_chain(inst, sol, n_arms, budget, kind)?;
    let size = r.len();
    let ns = inst.n_states;
    let nu: Vec<f64> = match initial {
        InitialStates::UniformRandom => vec![1.0 / size as f64; size],
        InitialStates::AllState(k) => {
            let mut v = vec![0.0; size];
            v[encode(&vec![*k; n_arms], ns)] = 1.0;
            v
        }
        InitialStates::Explicit(s) => {
            if s.len() != n_arms {
                return Err(Error::Input(
                    "explicit initial states have the wrong length".into(),
                ));
            }
            let mut v = vec![0.0; size];
            v[encode(s, ns)] = 1.0;
            v
        }
    };
    let classes = chain::recurrent_classes(&t);
    let mut class_of = vec![usize::MAX; size];
    let mut gains = Vec::with_capacity(classes.len());
    for (c, members) in classes.iter().enumerate() {
        members.iter().for_each(|&x| class_of[x] = c);
        let sub = DMatrix::from_fn(members.len(), members.len(), |i, j| {
            t[(members[i], members[j])]
        });
        let pi = chain::stationary_distribution(&sub)?;
        gains.push(pi.iter().zip(members).map(|(p, &x)| p * r[x]).sum::<f64>());
    }
    let transient: Vec<usize> = (0..size).filter(|&x| class_of[x] == usize::MAX).collect();
    // Expected eventual gain from transient states: (I - Q) v = R g.
    let mut value = vec![0.0; size];
    (0..size)
        .filter(|&x| class_of[x] != usize::MAX)
        .for_each(|x| value[x] = gains[class_of[x]]);
    if !transient.is_empty() {
        let m = transient.len();
        let a = DMatrix::from_fn(m, m, |i, j| {
            (i == j) as u8 as f64 - t[(transient[i], transient[j])]
        });
        let b = DVector::from_fn(m, |i, _| {
            (0..size)
                .filter(|&y| class_of[y] != usize::MAX)
                .map(|y| t[(transient[i], y)] * gains[class_of[y]])
                .sum()
        });
        let v = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("singular absorption system".into()))?;
        transient
            .iter()
            .zip(v.iter())
            .for_each(|(&x, &g)| value[x] = g);
    }
    Ok(nu.iter().zip(&value).map(|(p, v)| p * v).sum())
}
