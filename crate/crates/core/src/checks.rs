//! Randomised checks of the Lyapunov inequalities and of the leader-follower
//! behaviour on instances without synchronisation.
//!
//! Each check returns the worst observed `lhs - rhs`; it holds when that is
//! at most zero.

use nalgebra::DVector;
use rand::Rng;
use serde::Serialize;

use crate::instances::dirichlet;
use crate::lp::LpSolution;
use crate::lyapunov::LyapunovKit;
use crate::mdp::{Kernel, RbInstance};
use crate::policies::sample_ideal_actions;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
}

impl Check {
    pub fn holds(&self) -> bool {
        self.worst <= 0.0
    }
}

fn row_times(v: &[f64], p: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (DVector::from_column_slice(v).transpose() * p)
        .iter()
        .copied()
        .collect()
}

/// `||v P - mu||_W <= (1 - 1/(2 lambda_W)) ||v - mu||_W + 1e-10`.
pub fn pseudo_contraction<R: Rng>(
    kit: &LyapunovKit,
    sol: &LpSolution,
    trials: usize,
    rng: &mut R,
) -> Check {
    let mu = &sol.mu_star;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v = dirichlet(sol.n_states, 1.0, rng);
        let vp = row_times(&v, &sol.p_pibs);
        let lhs = kit.norm_w(&sub(&vp, mu));
        let rhs = kit.contraction * kit.norm_w(&sub(&v, mu)) + 1e-10;
        worst = worst.max(lhs - rhs);
    }
    Check {
        name: "pseudo-contraction",
        worst,
    }
}

/// `||(v - mu) P||_1 <= ||v - mu||_1 + 1e-12`.
pub fn l1_nonexpansive<R: Rng>(sol: &LpSolution, trials: usize, rng: &mut R) -> Check {
    let mu = &sol.mu_star;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let v = dirichlet(sol.n_states, 1.0, rng);
        let d = sub(&v, mu);
        let lhs: f64 = row_times(&d, &sol.p_pibs).iter().map(|x| x.abs()).sum();
        let rhs: f64 = d.iter().map(|x| x.abs()).sum::<f64>() + 1e-12;
        worst = worst.max(lhs - rhs);
    }
    Check {
        name: "l1-nonexpansive",
        worst,
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scaled(states: &[usize], member: &[bool], n_states: usize) -> (Vec<f64>, f64) {
    let nf = states.len() as f64;
    let mut x = vec![0.0; n_states];
    let mut m = 0.0;
    for (i, &s) in states.iter().enumerate() {
        if member[i] {
            x[s] += 1.0 / nf;
            m += 1.0 / nf;
        }
    }
    (x, m)
}

fn random_states<R: Rng>(n_arms: usize, n_states: usize, rng: &mut R) -> Vec<usize> {
    // A skewed law so that far-from-mu configurations are exercised.
    let law = dirichlet(n_states, 0.5, rng);
    (0..n_arms)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            law.iter()
                .position(|p| {
                    acc += p;
                    u < acc
                })
                .unwrap_or(n_states - 1)
        })
        .collect()
}

/// `h_W(x, D) >= |S|^{-1/2} ||x(D) - m mu||_1`.
pub fn distance_domination<R: Rng>(
    kit: &LyapunovKit,
    n_arms: usize,
    trials: usize,
    rng: &mut R,
) -> Check {
    let ns = kit.n_states;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let states = random_states(n_arms, ns, rng);
        let member: Vec<bool> = (0..n_arms).map(|_| rng.random()).collect();
        let (x, m) = scaled(&states, &member, ns);
        let l1: f64 = x
            .iter()
            .zip(&kit.mu_star)
            .map(|(a, b)| (a - m * b).abs())
            .sum();
        worst = worst.max(l1 / (ns as f64).sqrt() - kit.h_w_unchecked(&x, m) - 1e-12);
    }
    Check {
        name: "distance-domination",
        worst,
    }
}

/// `|h(x, D') - h(x, D)| <= 2 lambda_W^{1/2} (m(D') - m(D))` for nested
/// sets, for both `h_W` and the prefix envelope `h_ID`.
pub fn lipschitz<R: Rng>(
    kit: &LyapunovKit,
    n_arms: usize,
    trials: usize,
    rng: &mut R,
) -> [Check; 2] {
    let ns = kit.n_states;
    let (mut w_worst, mut id_worst) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..trials {
        let states = random_states(n_arms, ns, rng);
        let small: Vec<bool> = (0..n_arms).map(|_| rng.random_bool(0.4)).collect();
        let big: Vec<bool> = small.iter().map(|&b| b || rng.random_bool(0.5)).collect();
        let (x1, m1) = scaled(&states, &small, ns);
        let (x2, m2) = scaled(&states, &big, ns);
        let diff = (kit.h_w_unchecked(&x2, m2) - kit.h_w_unchecked(&x1, m1)).abs();
        w_worst = w_worst.max(diff - kit.l_w * (m2 - m1) - 1e-12);
        let prof = kit.h_id_profile(&states);
        let a = rng.random_range(0..=n_arms);
        let b = rng.random_range(a..=n_arms);
        let diff = (prof[b] - prof[a]).abs();
        id_worst = id_worst.max(diff - kit.l_w * (b - a) as f64 / n_arms as f64 - 1e-12);
    }
    [
        Check {
            name: "lipschitz-h-w",
            worst: w_worst,
        },
        Check {
            name: "lipschitz-h-id",
            worst: id_worst,
        },
    ]
}

/// One step with every arm following `pibar*`.
fn follow_step<R: Rng>(
    kernel: &Kernel,
    c_pibs: &[f64],
    states: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let ideal = sample_ideal_actions(c_pibs, states, rng);
    states
        .iter()
        .zip(&ideal)
        .map(|(&s, &a)| kernel.sample(s, a, rng))
        .collect()
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo drift of `h_W(., D)` and `h_ID(., m)` from a random start:
/// mean next value must sit below `rho h + C / sqrt(N)` plus 4 standard
/// errors, with `C = 2 lambda^{1/2}` and `4 lambda^{1/2}` respectively.
pub fn drift<R: Rng>(
    inst: &RbInstance,
    sol: &LpSolution,
    kit: &LyapunovKit,
    n_arms: usize,
    reps: usize,
    rng: &mut R,
) -> [Check; 2] {
    let ns = inst.n_states;
    let kernel = Kernel::new(inst);
    let nf = n_arms as f64;
    let states = random_states(n_arms, ns, rng);
    let member: Vec<bool> = (0..n_arms).map(|_| rng.random()).collect();
    let k = rng.random_range(1..=n_arms);
    let (x0, m0) = scaled(&states, &member, ns);
    let h0 = kit.h_w_unchecked(&x0, m0);
    let id0 = kit.h_id_profile(&states)[k];
    let mut hw = Vec::with_capacity(reps);
    let mut hid = Vec::with_capacity(reps);
    for _ in 0..reps {
        let next = follow_step(&kernel, &sol.c_pibs, &states, rng);
        let (x1, m1) = scaled(&next, &member, ns);
        hw.push(kit.h_w_unchecked(&x1, m1));
        hid.push(kit.h_id_profile(&next)[k]);
    }
    let root = kit.lambda_w.sqrt();
    let (mw, sw) = mean_se(&hw);
    let (mi, si) = mean_se(&hid);
    [
        Check {
            name: "drift-h-w",
            worst: mw - (kit.contraction * h0 + 2.0 * root / nf.sqrt() + 4.0 * sw),
        },
        Check {
            name: "drift-h-id",
            worst: mi - (kit.contraction * id0 + 4.0 * root / nf.sqrt() + 4.0 * si),
        },
    ]
}

/// `E (||X_1(D) - m mu||_1 - ||x(D) - m mu||_1)^+ <= 2 |S|^{1/2} / sqrt(N)`
/// plus 3 standard errors.
pub fn l1_drift<R: Rng>(
    inst: &RbInstance,
    sol: &LpSolution,
    n_arms: usize,
    reps: usize,
    rng: &mut R,
) -> Check {
    let ns = inst.n_states;
    let kernel = Kernel::new(inst);
    let states = random_states(n_arms, ns, rng);
    let member: Vec<bool> = (0..n_arms).map(|_| rng.random()).collect();
    let (x0, m) = scaled(&states, &member, ns);
    let dist = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&sol.mu_star)
            .map(|(a, b)| (a - m * b).abs())
            .sum()
    };
    let d0 = dist(&x0);
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let next = follow_step(&kernel, &sol.c_pibs, &states, rng);
            (dist(&scaled(&next, &member, ns).0) - d0).max(0.0)
        })
        .collect();
    let (mean, se) = mean_se(&samples);
    Check {
        name: "l1-drift",
        worst: mean - (2.0 * (ns as f64).sqrt() / (n_arms as f64).sqrt() + 3.0 * se),
    }
}

/// A leader following `pibar*` and a follower copying its actions. Returns
/// the first step at which they share a state, if any within `steps`.
pub fn leader_follower<R: Rng>(
    inst: &RbInstance,
    sol: &LpSolution,
    leader: usize,
    follower: usize,
    steps: usize,
    rng: &mut R,
) -> Option<usize> {
    let kernel = Kernel::new(inst);
    let (mut l, mut f) = (leader, follower);
    for t in 0..=steps {
        if l == f {
            return Some(t);
        }
        if t == steps {
            break;
        }
        let a = sample_ideal_actions(&sol.c_pibs, &[l], rng)[0];
        l = kernel.sample(l, a, rng);
        f = kernel.sample(f, a, rng);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::builtin;
    use crate::lp::{solve_lp, SolveOptions};
    use crate::rng::stream;

    fn setup(name: &str) -> (RbInstance, LpSolution, LyapunovKit) {
        let inst = builtin(name).unwrap();
        let sol = solve_lp(&inst, SolveOptions::default()).unwrap();
        let kit = LyapunovKit::build(&sol).unwrap();
        (inst, sol, kit)
    }

    #[test]
    fn inequalities_hold_on_three_state() {
        let (inst, sol, kit) = setup("three-state-nongap");
        let mut rng = stream(1, 0);
        assert!(pseudo_contraction(&kit, &sol, 500, &mut rng).holds());
        assert!(l1_nonexpansive(&sol, 500, &mut rng).holds());
        assert!(distance_domination(&kit, 50, 200, &mut rng).holds());
        for c in lipschitz(&kit, 50, 200, &mut rng) {
            assert!(c.holds(), "{c:?}");
        }
        for c in drift(&inst, &sol, &kit, 100, 2000, &mut rng) {
            assert!(c.holds(), "{c:?}");
        }
        assert!(l1_drift(&inst, &sol, 100, 2000, &mut rng).holds());
    }

    #[test]
    fn non_sa_pairs_never_meet() {
        for (name, leader) in [("non-sa-8", 7), ("non-sa-12", 5)] {
            let inst = builtin(name).unwrap();
            let sol = solve_lp(&inst, SolveOptions::default()).unwrap();
            let mut rng = stream(8, 0);
            assert_eq!(
                leader_follower(&inst, &sol, leader, 0, 10_000, &mut rng),
                None,
                "{name}"
            );
        }
    }

    #[test]
    fn synchronising_pair_meets() {
        let inst = builtin("three-state-nongap").unwrap();
        let sol = solve_lp(&inst, SolveOptions::default()).unwrap();
        let mut rng = stream(8, 1);
        assert!(leader_follower(&inst, &sol, 0, 2, 10_000, &mut rng).is_some());
    }
}
