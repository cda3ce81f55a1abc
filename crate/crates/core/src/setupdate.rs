//! Focus-set update for the set-expansion policy.
//!
//! Finds the largest `m` such that some `z` with `lower <= z <= upper`,
//! `sum z = m` satisfies `0.5 ||z - m mu||_1 <= beta (1 - m)`.
//!
//! For fixed `m` the smallest reachable L1 distance is `2 max(A, B)` with
//! `A = sum (lower - m mu)^+` and `B = sum (m mu - upper)^+`, as long as
//! `sum lower <= m <= sum upper`. Both terms are convex in `m`, so the
//! feasible `m` form an interval and bisection finds its right end.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::simplex::{self, Program};

#[derive(Debug, Clone, PartialEq)]
pub struct SetTarget {
    pub m: f64,
    pub z: Vec<f64>,
}

fn excess(lower: &[f64], upper: &[f64], mu: &[f64], m: f64) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    for s in 0..mu.len() {
        a += (lower[s] - m * mu[s]).max(0.0);
        b += (m * mu[s] - upper[s]).max(0.0);
    }
    (a, b)
}

fn gap(lower: &[f64], upper: &[f64], mu: &[f64], beta: f64, m: f64) -> f64 {
    let (a, b) = excess(lower, upper, mu, m);
    a.max(b) - beta * (1.0 - m)
}

/// Closed-form solution. `m = sum lower` must be feasible.
pub fn max_focus(lower: &[f64], upper: &[f64], mu: &[f64], beta: f64) -> SetTarget {
    let lo: f64 = lower.iter().sum();
    let hi: f64 = upper.iter().sum();
    let m = if gap(lower, upper, mu, beta, hi) <= 0.0 {
        hi
    } else {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if gap(lower, upper, mu, beta, mid) <= 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        a
    };
    SetTarget {
        m,
        z: realize(lower, upper, mu, m),
    }
}

/// A minimiser of `||z - m mu||_1` over the box and the slice `sum z = m`:
/// clamp, then spread the sum correction in proportion to the room left.
pub(crate) fn realize(lower: &[f64], upper: &[f64], mu: &[f64], m: f64) -> Vec<f64> {
    let mut z: Vec<f64> = (0..mu.len())
        .map(|s| (m * mu[s]).clamp(lower[s], upper[s]))
        .collect();
    let diff = m - z.iter().sum::<f64>();
    if diff > 0.0 {
        let room: Vec<f64> = z.iter().zip(upper).map(|(z, u)| u - z).collect();
        let total: f64 = room.iter().sum();
        if total > 0.0 {
            let f = (diff / total).min(1.0);
            z.iter_mut().zip(&room).for_each(|(z, r)| *z += f * r);
        }
    } else if diff < 0.0 {
        let room: Vec<f64> = z.iter().zip(lower).map(|(z, l)| z - l).collect();
        let total: f64 = room.iter().sum();
        if total > 0.0 {
            let f = (-diff / total).min(1.0);
            z.iter_mut().zip(&room).for_each(|(z, r)| *z -= f * r);
        }
    }
    z
}

/// The same problem as an explicit LP. Columns: `w = z - lower`, box slack
/// `t`, `d`, `p`, `q` (absolute-value slacks), `m`, budget slack `r`.
pub fn max_focus_lp(lower: &[f64], upper: &[f64], mu: &[f64], beta: f64) -> Result<SetTarget> {
    let n = mu.len();
    let (cw, ct, cd, cp, cq, cm, cr) = (0, n, 2 * n, 3 * n, 4 * n, 5 * n, 5 * n + 1);
    let nv = 5 * n + 2;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for s in 0..n {
        let mut row = vec![0.0; nv];
        row[cw + s] = 1.0;
        row[ct + s] = 1.0;
        a.push(row);
        b.push(upper[s] - lower[s]);
    }
    let mut row = vec![0.0; nv];
    (0..n).for_each(|s| row[cw + s] = 1.0);
    row[cm] = -1.0;
    a.push(row);
    b.push(-lower.iter().sum::<f64>());
    for s in 0..n {
        // z - mu m - d + p = 0
        let mut row = vec![0.0; nv];
        row[cw + s] = 1.0;
        row[cm] = -mu[s];
        row[cd + s] = -1.0;
        row[cp + s] = 1.0;
        a.push(row);
        b.push(-lower[s]);
        // -z + mu m - d + q = 0
        let mut row = vec![0.0; nv];
        row[cw + s] = -1.0;
        row[cm] = mu[s];
        row[cd + s] = -1.0;
        row[cq + s] = 1.0;
        a.push(row);
        b.push(lower[s]);
    }
    let mut row = vec![0.0; nv];
    (0..n).for_each(|s| row[cd + s] = 0.5);
    row[cm] = beta;
    row[cr] = 1.0;
    a.push(row);
    b.push(beta);
    let mut c = vec![0.0; nv];
    c[cm] = 1.0;
    let sol = simplex::solve(&Program { a, b, c })
        .map_err(|e| Error::Numerical(format!("set update: {e}")))?;
    let z = (0..n).map(|s| lower[s] + sol.x[cw + s]).collect();
    Ok(SetTarget { m: sol.x[cm], z })
}

/// Per-state arm counts `floor(N z(s))`, kept inside `[lo, hi]`.
pub fn target_counts(z: &[f64], lo: &[usize], hi: &[usize], n_arms: usize) -> Vec<usize> {
    z.iter()
        .enumerate()
        .map(|(s, &zs)| {
            let k = (zs * n_arms as f64 + 1e-9).floor().max(0.0) as usize;
            k.clamp(lo[s], hi[s])
        })
        .collect()
}

/// Picks `want` of `pool` uniformly at random, keeping pool order stable.
pub fn choose<R: Rng>(pool: &[usize], want: usize, rng: &mut R) -> Vec<usize> {
    if want >= pool.len() {
        return pool.to_vec();
    }
    let mut idx = index::sample(rng, pool.len(), want).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// One set-expansion update. `in_prev[i]` marks membership of `D_{t-1}`.
/// Returns the new membership vector.
pub fn update<R: Rng>(
    states: &[usize],
    in_prev: &[bool],
    n_states: usize,
    mu: &[f64],
    beta: f64,
    rng: &mut R,
) -> Vec<bool> {
    let n_arms = states.len();
    let nf = n_arms as f64;
    let mut all = vec![0usize; n_states];
    let mut prev = vec![0usize; n_states];
    for (i, &s) in states.iter().enumerate() {
        all[s] += 1;
        if in_prev[i] {
            prev[s] += 1;
        }
    }
    let prev_frac: Vec<f64> = prev.iter().map(|&c| c as f64 / nf).collect();
    let m_prev: f64 = prev_frac.iter().sum();
    let delta = crate::lyapunov::slack(beta, mu, &prev_frac, m_prev);
    // Arms per state, split by previous membership.
    let mut inside = vec![Vec::new(); n_states];
    let mut outside = vec![Vec::new(); n_states];
    for (i, &s) in states.iter().enumerate() {
        if in_prev[i] {
            inside[s].push(i)
        } else {
            outside[s].push(i)
        }
    }
    let mut next = vec![false; n_arms];
    if delta > 0.0 {
        let upper: Vec<f64> = all.iter().map(|&c| c as f64 / nf).collect();
        let t = max_focus(&prev_frac, &upper, mu, beta);
        let k = target_counts(&t.z, &prev, &all, n_arms);
        for s in 0..n_states {
            inside[s].iter().for_each(|&i| next[i] = true);
            for i in choose(&outside[s], k[s] - prev[s], rng) {
                next[i] = true;
            }
        }
    } else {
        let zero = vec![0.0; n_states];
        let t = max_focus(&zero, &prev_frac, mu, beta);
        let k = target_counts(&t.z, &vec![0; n_states], &prev, n_arms);
        for s in 0..n_states {
            for i in choose(&inside[s], k[s], rng) {
                next[i] = true;
            }
        }
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::slack;
    use crate::rng::stream;
    use proptest::prelude::*;

    #[test]
    fn proportional_counts_fill_everything() {
        let mu = [0.5, 0.5];
        let t = max_focus(&[0.0, 0.0], &[0.5, 0.5], &mu, 0.5);
        assert!((t.m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_in_one_state_two_state_cycle() {
        // All arms in state 0, mu = (1/2, 1/2), beta = 1/2:
        // 0.5 * (m - m/2 + m/2) = m/2 <= (1 - m)/2 gives m = 1/2.
        let t = max_focus(&[0.0, 0.0], &[1.0, 0.0], &[0.5, 0.5], 0.5);
        assert!((t.m - 0.5).abs() < 1e-12, "{}", t.m);
        assert!((t.z[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn update_keeps_previous_members_on_expansion() {
        let mut rng = stream(3, 0);
        let states = vec![0, 1, 0, 1, 0, 1, 0, 1];
        let prev = vec![true, true, false, false, false, false, false, false];
        let next = update(&states, &prev, 2, &[0.5, 0.5], 0.5, &mut rng);
        assert!(next[0] && next[1]);
        assert_eq!(next.iter().filter(|&&b| b).count(), 8);
    }

    #[test]
    fn update_shrinks_inside_previous_set() {
        let mut rng = stream(3, 1);
        let states = vec![0; 10];
        let prev = vec![true; 10];
        let next = update(&states, &prev, 2, &[0.5, 0.5], 0.5, &mut rng);
        assert!(next.iter().zip(&prev).all(|(n, p)| !*n || *p));
        assert_eq!(next.iter().filter(|&&b| b).count(), 5);
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64, bool)> {
        (2usize..6)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.0f64..1.0, n),
                    proptest::collection::vec(0.01f64..1.0, n),
                    proptest::collection::vec(0.0f64..1.0, n),
                    0.05f64..0.5,
                    any::<bool>(),
                )
            })
            .prop_map(|(counts, mu_raw, keep, beta, shrink)| {
                let total: f64 = counts.iter().sum::<f64>().max(1e-9);
                let upper: Vec<f64> = counts.iter().map(|c| c / total).collect();
                let ms: f64 = mu_raw.iter().sum();
                let mu: Vec<f64> = mu_raw.iter().map(|x| x / ms).collect();
                let lower: Vec<f64> = upper.iter().zip(&keep).map(|(u, k)| u * k).collect();
                (lower, upper, mu, beta, shrink)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn closed_form_matches_simplex((lower, upper, mu, beta, shrink) in arb_case()) {
            let lower = if shrink { vec![0.0; mu.len()] } else { lower };
            let lo_m: f64 = lower.iter().sum();
            prop_assume!(slack(beta, &mu, &lower, lo_m) >= 0.0);
            let cf = max_focus(&lower, &upper, &mu, beta);
            let lp = max_focus_lp(&lower, &upper, &mu, beta).unwrap();
            prop_assert!((cf.m - lp.m).abs() < 1e-7, "closed {} lp {}", cf.m, lp.m);
            let sum: f64 = cf.z.iter().sum();
            prop_assert!((sum - cf.m).abs() < 1e-9);
            for s in 0..mu.len() {
                prop_assert!(cf.z[s] >= lower[s] - 1e-12 && cf.z[s] <= upper[s] + 1e-12);
            }
            prop_assert!(slack(beta, &mu, &cf.z, cf.m) >= -1e-9);
        }
    }
}
