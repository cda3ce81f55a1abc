//! Finite Markov chain structure: recurrent classes, period, spectrum.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use crate::error::{Error, Result};

/// Entries at or below this are treated as absent edges.
const SUPPORT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub recurrent_classes: Vec<Vec<usize>>,
    pub transient_states: Vec<usize>,
    pub is_unichain: bool,
    pub is_aperiodic: bool,
    /// Period of each recurrent class, same order as `recurrent_classes`.
    pub periods: Vec<usize>,
    pub slem: f64,
}

impl ChainReport {
    pub fn satisfies_assumption(&self) -> bool {
        self.is_unichain && self.is_aperiodic
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Closed strongly connected components of the support graph, each sorted.
pub fn recurrent_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] > SUPPORT_TOL {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            v.sort_unstable();
            v
        })
        .filter(|c| {
            let mut member = vec![false; n];
            c.iter().for_each(|&s| member[s] = true);
            c.iter()
                .all(|&i| (0..n).all(|j| p[(i, j)] <= SUPPORT_TOL || member[j]))
        })
        .collect();
    classes.sort();
    classes
}

/// Period of an irreducible class: gcd over class edges of
/// `level(u) + 1 - level(v)` for BFS levels from the class minimum.
pub fn period(p: &DMatrix<f64>, class: &[usize]) -> usize {
    let n = p.nrows();
    let mut member = vec![false; n];
    class.iter().for_each(|&s| member[s] = true);
    let mut level = vec![usize::MAX; n];
    let root = class[0];
    level[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if member[v] && p[(u, v)] > SUPPORT_TOL && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for &u in class {
        for &v in class {
            if p[(u, v)] > SUPPORT_TOL {
                let d = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, d);
            }
        }
    }
    g.max(1)
}

/// Second-largest eigenvalue modulus: the eigenvalue nearest to 1 is
/// removed once and the largest remaining modulus is returned.
pub fn slem(p: &DMatrix<f64>) -> f64 {
    let n = p.nrows();
    if n < 2 {
        return 0.0;
    }
    let eig = p.complex_eigenvalues();
    let perron = (0..n)
        .min_by(|&a, &b| {
            let da = (eig[a] - nalgebra::Complex::new(1.0, 0.0)).norm();
            let db = (eig[b] - nalgebra::Complex::new(1.0, 0.0)).norm();
            da.total_cmp(&db)
        })
        .unwrap();
    (0..n)
        .filter(|&i| i != perron)
        .map(|i| eig[i].norm())
        .fold(0.0, f64::max)
        .min(1.0)
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn analyze(p: &DMatrix<f64>) -> ChainReport {
    let n = p.nrows();
    let classes = recurrent_classes(p);
    let mut recurrent = vec![false; n];
    classes.iter().flatten().for_each(|&s| recurrent[s] = true);
    let transient: Vec<usize> = (0..n).filter(|&s| !recurrent[s]).collect();
    let periods: Vec<usize> = classes.iter().map(|c| period(p, c)).collect();
    let is_unichain = classes.len() == 1;
    let is_aperiodic = is_unichain && periods[0] == 1;
    ChainReport {
        recurrent_classes: classes,
        transient_states: transient,
        is_unichain,
        is_aperiodic,
        periods,
        slem: slem(p),
    }
}

/// Unique stationary distribution of a unichain: solves `mu (P - I) = 0`
/// with one balance equation replaced by `sum(mu) = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    if recurrent_classes(p).len() != 1 {
        return Err(Error::Numerical(
            "stationary distribution not unique".into(),
        ));
    }
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular balance system".into()))?;
    let mut mu: Vec<f64> = mu
        .iter()
        .map(|&x| if x.abs() < 1e-15 { 0.0 } else { x })
        .collect();
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|x| *x /= s);
    let row = DVector::from_vec(mu.clone()).transpose() * p;
    let resid: f64 = row.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
    if resid >= 1e-10 {
        return Err(Error::Numerical(format!("stationary residual {resid:.3e}")));
    }
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j])
    }

    #[test]
    fn fig2_chain_is_aperiodic_unichain() {
        // Activate iff in state 1: 0 stays passive and flips w.p. 0.8,
        // 1 is activated and flips w.p. 0.8.
        let p = m(&[&[0.2, 0.8], &[0.8, 0.2]]);
        let rep = analyze(&p);
        assert!(rep.is_unichain && rep.is_aperiodic);
        assert_abs_diff_eq!(rep.slem, 0.6, epsilon = 1e-12);
        let mu = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(mu[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn swap_chain_has_period_two() {
        let p = m(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let rep = analyze(&p);
        assert!(rep.is_unichain);
        assert!(!rep.is_aperiodic);
        assert_eq!(rep.periods, vec![2]);
        assert_abs_diff_eq!(rep.slem, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_has_two_classes() {
        let p = DMatrix::<f64>::identity(2, 2);
        let rep = analyze(&p);
        assert_eq!(rep.recurrent_classes, vec![vec![0], vec![1]]);
        assert!(!rep.is_unichain);
        assert!(stationary_distribution(&p).is_err());
    }

    #[test]
    fn rank_one_chain_returns_its_row() {
        let v = [0.1, 0.2, 0.3, 0.4];
        let p = DMatrix::from_fn(4, 4, |_, j| v[j]);
        let mu = stationary_distribution(&p).unwrap();
        for (a, b) in mu.iter().zip(v) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
        assert!(analyze(&p).slem < 1e-12);
    }

    #[test]
    fn transient_states_are_reported() {
        let p = m(&[&[0.5, 0.5, 0.0], &[0.0, 0.3, 0.7], &[0.0, 0.6, 0.4]]);
        let rep = analyze(&p);
        assert_eq!(rep.transient_states, vec![0]);
        assert_eq!(rep.recurrent_classes, vec![vec![1, 2]]);
        let mu = stationary_distribution(&p).unwrap();
        assert_eq!(mu[0], 0.0);
    }

    /// Recurrent classes by exhaustive reachability: `i` is recurrent iff
    /// every state reachable from `i` can reach `i` back.
    fn brute_classes(p: &DMatrix<f64>) -> Vec<Vec<usize>> {
        let n = p.nrows();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            reach[i][i] = true;
            for j in 0..n {
                if p[(i, j)] > SUPPORT_TOL {
                    reach[i][j] = true;
                }
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        let rec: Vec<bool> = (0..n)
            .map(|i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
            .collect();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if rec[i] && !out.iter().any(|c| c.contains(&i)) {
                out.push((0..n).filter(|&j| reach[i][j] && reach[j][i]).collect());
            }
        }
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn classes_match_reachability(n in 1usize..6, bits in proptest::collection::vec(0u8..3, 25)) {
            // Sparse random stochastic matrices with forced self-loop fallback.
            let mut p = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                let mut any = false;
                for j in 0..n {
                    if bits[i * 5 + j] == 0 { p[(i, j)] = 1.0; any = true; }
                }
                if !any { p[(i, i)] = 1.0; }
                let s: f64 = p.row(i).sum();
                for j in 0..n { p[(i, j)] /= s; }
            }
            prop_assert_eq!(recurrent_classes(&p), brute_classes(&p));
        }

        #[test]
        fn stationary_matches_power_iteration(vals in proptest::collection::vec(0.05f64..1.0, 16)) {
            let mut p = DMatrix::from_fn(4, 4, |i, j| vals[i * 4 + j]);
            for i in 0..4 {
                let s: f64 = p.row(i).sum();
                for j in 0..4 { p[(i, j)] /= s; }
            }
            let mu = stationary_distribution(&p).unwrap();
            let mut q = p.clone();
            for _ in 0..10 { q = &q * &q; } // P^1024
            for j in 0..4 {
                prop_assert!((q[(0, j)] - mu[j]).abs() < 1e-9);
            }
        }
    }
}
