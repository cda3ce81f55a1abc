//! W-weighted Lyapunov machinery around the optimal single-armed policy.
//!
//! `W = sum_k (P - Xi)^k ((P - Xi)^T)^k` where `Xi` repeats `mu*` in every
//! row. Norms are `||v||_W = sqrt(v W v^T)` on row vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::LpSolution;

const MAX_TERMS: usize = 100_000;
const TERM_TOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LyapunovKit {
    pub n_states: usize,
    pub w: DMatrix<f64>,
    pub lambda_w: f64,
    pub lambda_min: f64,
    /// `2 lambda_W^{1/2}`.
    pub l_w: f64,
    /// `sqrt(c W^{-1} c^T)`.
    pub kappa: f64,
    pub xi: DMatrix<f64>,
    /// `1 - 1/(2 lambda_W)`.
    pub contraction: f64,
    pub mu_star: Vec<f64>,
    pub beta: f64,
    /// Discount applied to the series; 1 for the exact matrix.
    pub discount: f64,
    pub iterations: usize,
    pub residual: f64,
    chol: Cholesky<f64, Dyn>,
    /// `W (e_s - mu*)^T` per state, for prefix scans.
    w_dev: Vec<Vec<f64>>,
}

impl LyapunovKit {
    /// Exact W. Fails with `NonConvergence` when the chain is periodic,
    /// multichain or mixes too slowly for the term budget.
    pub fn build(sol: &LpSolution) -> Result<Self> {
        Self::build_with(sol, 1.0)
    }

    /// Discounted series `sum_k gamma^k M^k (M^T)^k`. Converges for any
    /// stochastic `P` when `gamma < 1`; used only as a policy input on
    /// instances where the exact W does not exist.
    pub fn build_discounted(sol: &LpSolution, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Input(format!(
                "discount must lie in (0,1), got {gamma}"
            )));
        }
        Self::build_with(sol, gamma)
    }

    /// Exact kit if it exists, otherwise the `gamma = 0.99` discounted one.
    pub fn build_or_discounted(sol: &LpSolution) -> Result<Self> {
        match Self::build(sol) {
            Ok(k) => Ok(k),
            Err(Error::NonConvergence { .. }) => Self::build_discounted(sol, 0.99),
            Err(e) => Err(e),
        }
    }

    pub fn is_exact(&self) -> bool {
        self.discount == 1.0
    }

    fn build_with(sol: &LpSolution, gamma: f64) -> Result<Self> {
        let n = sol.n_states;
        let mu = &sol.mu_star;
        let xi = DMatrix::from_fn(n, n, |_, j| mu[j]);
        let m = &sol.p_pibs - &xi;
        let mt = m.transpose();
        let mut w = DMatrix::<f64>::identity(n, n);
        let mut term = DMatrix::<f64>::identity(n, n);
        let mut history = Vec::new();
        let mut iterations = 0;
        loop {
            if iterations >= MAX_TERMS {
                return Err(Error::NonConvergence {
                    iterations,
                    last: term.norm(),
                    history,
                });
            }
            term = (&m * &term * &mt) * gamma;
            w += &term;
            iterations += 1;
            let norm = term.norm();
            if iterations % 1000 == 0 {
                history.push(norm);
            }
            if !norm.is_finite() {
                return Err(Error::NonConvergence {
                    iterations,
                    last: norm,
                    history,
                });
            }
            if norm < TERM_TOL {
                break;
            }
        }
        let w = (&w + w.transpose()) * 0.5;
        let resid = (&m * &w * &mt * gamma - &w + DMatrix::<f64>::identity(n, n)).norm();
        if resid >= RESIDUAL_TOL * w.norm().max(1.0) {
            return Err(Error::Numerical(format!("Lyapunov residual {resid:.3e}")));
        }
        let eig = SymmetricEigen::new(w.clone());
        let lambda_w = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let lambda_min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lambda_min < 1.0 - 1e-10 {
            return Err(Error::Numerical(format!(
                "W has eigenvalue {lambda_min} below 1"
            )));
        }
        let chol = Cholesky::new(w.clone())
            .ok_or_else(|| Error::Numerical("W is not positive definite".into()))?;
        let c = DVector::from_vec(sol.c_pibs.clone());
        let z = chol
            .l()
            .solve_lower_triangular(&c)
            .expect("triangular solve");
        let kappa = z.norm();
        let w_dev = (0..n)
            .map(|s| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| w[(i, j)] * (if j == s { 1.0 } else { 0.0 } - mu[j]))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(LyapunovKit {
            n_states: n,
            lambda_w,
            lambda_min,
            l_w: 2.0 * lambda_w.sqrt(),
            kappa,
            xi,
            contraction: 1.0 - 1.0 / (2.0 * lambda_w),
            mu_star: mu.clone(),
            beta: sol.alpha.min(1.0 - sol.alpha),
            discount: gamma,
            iterations,
            residual: resid,
            chol,
            w_dev,
            w,
        })
    }

    /// `||v||_W` through the cached Cholesky factor: `|| L^T v^T ||_2`.
    pub fn norm_w(&self, v: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        let n = self.n_states;
        let mut total = 0.0;
        for j in 0..n {
            // (L^T v)_j = sum_{i >= j} L[i][j] v_i
            let mut acc = 0.0;
            for i in j..n {
                acc += l[(i, j)] * v[i];
            }
            total += acc * acc;
        }
        total.sqrt()
    }

    /// `h_W(x, D) = ||x(D) - m mu*||_W` for scaled counts `x_d` summing to `m`.
    pub fn h_w(&self, x_d: &[f64], m: f64) -> Result<f64> {
        let total: f64 = x_d.iter().sum();
        if (total - m).abs() > 1e-9 {
            return Err(Error::Input(format!(
                "scaled counts sum to {total}, expected {m}"
            )));
        }
        Ok(self.h_w_unchecked(x_d, m))
    }

    pub fn h_w_unchecked(&self, x_d: &[f64], m: f64) -> f64 {
        let v: Vec<f64> = x_d
            .iter()
            .zip(&self.mu_star)
            .map(|(x, mu)| x - m * mu)
            .collect();
        self.norm_w(&v)
    }

    /// `h_W` of a count vector among `n_arms` arms.
    pub fn h_w_counts(&self, counts: &[usize], n_arms: usize) -> f64 {
        let nf = n_arms as f64;
        let m = counts.iter().sum::<usize>() as f64 / nf;
        let x: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
        self.h_w_unchecked(&x, m)
    }

    /// `h_W` of every prefix `[k]`, `k = 0..=N`, in one pass.
    pub fn prefix_h_w(&self, states: &[usize]) -> Vec<f64> {
        let n = self.n_states;
        let nf = states.len() as f64;
        let mut u = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut out = Vec::with_capacity(states.len() + 1);
        out.push(0.0);
        for &s in states {
            for i in 0..n {
                u[i] -= self.mu_star[i];
                g[i] += self.w_dev[s][i];
            }
            u[s] += 1.0;
            let sq: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
            out.push(sq.max(0.0).sqrt() / nf);
        }
        out
    }

    /// `h_ID(x, k/N)` for `k = 0..=N`: running maximum of the prefix values.
    pub fn h_id_profile(&self, states: &[usize]) -> Vec<f64> {
        let mut p = self.prefix_h_w(states);
        for k in 1..p.len() {
            p[k] = p[k].max(p[k - 1]);
        }
        p
    }

    pub fn h_id(&self, states: &[usize], k: usize) -> f64 {
        self.h_id_profile(states)[k]
    }

    /// Largest `k` with `kappa h_ID(x, k/N) <= beta (1 - k/N)`, as a count.
    pub fn m_d_count(&self, states: &[usize]) -> usize {
        let prof = self.h_id_profile(states);
        self.m_d_from_profile(&prof)
    }

    pub fn m_d_from_profile(&self, prof: &[f64]) -> usize {
        let nf = (prof.len() - 1) as f64;
        (0..prof.len())
            .rev()
            .find(|&k| self.kappa * prof[k] <= self.beta * (1.0 - k as f64 / nf) + 1e-12)
            .unwrap_or(0)
    }

    /// Theoretical gap constants for `N` arms.
    pub fn gap_bounds(&self, r_max: f64, n_arms: &[usize]) -> BoundReport {
        gap_bounds(self.lambda_w, r_max, self.n_states, self.beta, n_arms)
    }
}

/// `beta (1 - m) - 0.5 ||x_d - m mu*||_1`.
pub fn slack(beta: f64, mu_star: &[f64], x_d: &[f64], m: f64) -> f64 {
    let l1: f64 = x_d
        .iter()
        .zip(mu_star)
        .map(|(x, mu)| (x - m * mu).abs())
        .sum();
    beta * (1.0 - m) - 0.5 * l1
}

/// Slack of a count vector among `n_arms` arms.
pub fn slack_counts(beta: f64, mu_star: &[f64], counts: &[usize], n_arms: usize) -> f64 {
    let nf = n_arms as f64;
    let m = counts.iter().sum::<usize>() as f64 / nf;
    let x: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
    slack(beta, mu_star, &x, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub n_arms: usize,
    pub set_expansion: f64,
    pub id: f64,
    pub set_optimization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub c_se: f64,
    pub c_id: f64,
    pub c_so: f64,
    pub rows: Vec<BoundRow>,
}

pub fn gap_bounds(
    lambda_w: f64,
    r_max: f64,
    n_states: usize,
    beta: f64,
    n_arms: &[usize],
) -> BoundReport {
    let s = n_states as f64;
    let c_se = 252.0 * r_max * lambda_w.powi(2) * s.powi(2) / beta.powi(2);
    let c_id = 672.0 * r_max * lambda_w.powf(2.5) * s.powf(1.5) / beta.powi(3);
    let c_so = c_se;
    let rows = n_arms
        .iter()
        .map(|&n| {
            let rt = (n as f64).sqrt();
            BoundRow {
                n_arms: n,
                set_expansion: c_se / rt,
                id: c_id / rt,
                set_optimization: c_so / rt,
            }
        })
        .collect();
    BoundReport {
        c_se,
        c_id,
        c_so,
        rows,
    }
}

/// Per-step bounds on the focus-set conditions, by policy family.
pub mod conditions {
    /// Expected conformity deficit, set-expansion.
    pub fn se_conformity(n: usize) -> f64 {
        let nf = n as f64;
        1.0 / nf.sqrt() + 1.0 / nf
    }

    /// `E (N m_d - N_pibs)^+ / N`, ID policy.
    pub fn id_conformity(beta: f64, n: usize) -> f64 {
        let nf = n as f64;
        2.0 / (beta * nf.sqrt()) + 1.0 / nf
    }

    /// `(L_cov, K_cov)` with `1 - m(D) <= L_cov h + K_cov`, set-expansion.
    pub fn se_coverage(n_states: usize, beta: f64, n: usize) -> (f64, f64) {
        ((n_states as f64).sqrt() / beta, 2.0 / (beta * n as f64))
    }

    /// `(L_cov, K_cov)` for the ID focus set `[N m_d]` and `h_ID`.
    pub fn id_coverage(kappa: f64, lambda_w: f64, beta: f64, n: usize) -> (f64, f64) {
        (
            kappa / beta,
            (2.0 * kappa * lambda_w.sqrt() + beta) / (beta * n as f64),
        )
    }

    /// Expected shrinkage `E (m(D_t) - m(D_{t+1}))^+`, set-expansion.
    pub fn se_shrinkage(n_states: usize, beta: f64, n: usize) -> f64 {
        let s = n_states as f64;
        let nf = n as f64;
        (s.sqrt() + 1.0) / (beta * nf.sqrt()) + (1.0 + (beta + 1.0) * s) / (beta * nf)
    }

    /// Almost-sure shrinkage bound, ID policy.
    pub fn id_shrinkage(kappa: f64, lambda_w: f64, beta: f64, n: usize) -> f64 {
        let nf = n as f64;
        4.0 * kappa * lambda_w.sqrt() * (1.0 + beta) / (beta * beta * nf.sqrt())
            + (2.0 * kappa * lambda_w.sqrt() + beta) / (beta * nf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::builtin;
    use crate::lp::{assemble, solve_lp, SolveOptions};
    use crate::mdp::RbInstance;
    use approx::assert_abs_diff_eq;

    fn kit_for(name: &str) -> (RbInstance, LpSolution, LyapunovKit) {
        let inst = builtin(name).unwrap();
        let sol = solve_lp(&inst, SolveOptions::default()).unwrap();
        let kit = LyapunovKit::build(&sol).unwrap();
        (inst, sol, kit)
    }

    fn rank_one() -> (LpSolution, LyapunovKit) {
        let v = vec![0.2, 0.5, 0.3];
        let inst = RbInstance {
            name: "rank-one".into(),
            n_states: 3,
            p0: vec![v.clone(); 3],
            p1: vec![v.clone(); 3],
            r0: vec![0.0; 3],
            r1: vec![1.0; 3],
            alpha: 0.5,
        };
        let sol = assemble(
            &inst,
            v.iter().map(|m| [m / 2.0, m / 2.0]).collect(),
            0.5,
            false,
            SolveOptions::default(),
        );
        let kit = LyapunovKit::build(&sol).unwrap();
        (sol, kit)
    }

    #[test]
    fn rank_one_chain_gives_identity() {
        let (_, kit) = rank_one();
        assert!((kit.w.clone() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-15);
        assert_eq!(kit.lambda_w, 1.0);
        assert_eq!(kit.iterations, 1);
        // Euclidean norm under identity weight.
        let x = [0.1, 0.1, 0.3];
        let m = 0.5;
        let want =
            ((0.1f64 - 0.1).powi(2) + (0.1f64 - 0.25).powi(2) + (0.3f64 - 0.15).powi(2)).sqrt();
        assert_abs_diff_eq!(kit.h_w(&x, m).unwrap(), want, epsilon = 1e-15);
    }

    #[test]
    fn two_state_w_matches_vectorised_solve() {
        let (_, sol, kit) = kit_for("two-state-cycle");
        // (M kron M - I) vec(W) = -vec(I), column-major vec.
        let xi = DMatrix::from_fn(2, 2, |_, j| sol.mu_star[j]);
        let m = &sol.p_pibs - xi;
        let k = m.kronecker(&m) - DMatrix::<f64>::identity(4, 4);
        let rhs = -DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let vecw = k.lu().solve(&rhs).unwrap();
        for j in 0..2 {
            for i in 0..2 {
                assert_abs_diff_eq!(kit.w[(i, j)], vecw[j * 2 + i], epsilon = 1e-12);
            }
        }
        // M has eigenvalues 0 and -0.6: W = I + v v^T / (1 - 0.36) scaled.
        assert!(kit.lambda_min >= 1.0 - 1e-10);
    }

    #[test]
    fn periodic_chain_does_not_converge() {
        let inst = builtin("periodic-two-state").unwrap();
        let sol = solve_lp(&inst, SolveOptions::default()).unwrap();
        match LyapunovKit::build(&sol) {
            Err(Error::NonConvergence {
                iterations,
                history,
                ..
            }) => {
                assert_eq!(iterations, MAX_TERMS);
                assert!(!history.is_empty());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let fallback = LyapunovKit::build_or_discounted(&sol).unwrap();
        assert!(!fallback.is_exact());
    }

    #[test]
    fn kit_invariants_on_builtins() {
        for name in [
            "two-state-cycle",
            "three-state-nongap",
            "eight-state-nongap",
            "non-sa-8",
            "non-sa-12",
        ] {
            let (_, _, kit) = kit_for(name);
            assert!(kit.lambda_min >= 1.0 - 1e-10, "{name}");
            assert!(kit.kappa <= (kit.n_states as f64).sqrt() + 1e-12, "{name}");
            assert!(kit.residual < 1e-10 * kit.w.norm().max(1.0));
        }
    }

    #[test]
    fn two_lambda_range_on_simulated_examples() {
        // The simulated examples report 2 lambda_W between 2.82 and 84.29.
        for name in [
            "three-state-nongap",
            "eight-state-nongap",
            "non-sa-8",
            "non-sa-12",
        ] {
            let (_, _, kit) = kit_for(name);
            let two_l = 2.0 * kit.lambda_w;
            assert!(
                (2.82 - 0.01..=84.29 + 0.01).contains(&two_l),
                "{name}: 2 lambda = {two_l}"
            );
        }
    }

    #[test]
    fn h_w_edge_cases() {
        let (_, sol, kit) = kit_for("three-state-nongap");
        let m = 0.4;
        let x: Vec<f64> = sol.mu_star.iter().map(|u| u * m).collect();
        assert_abs_diff_eq!(kit.h_w(&x, m).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(kit.h_w(&[0.0, 0.0, 0.0], 0.0).unwrap(), 0.0);
        assert!(kit.h_w(&[0.1, 0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn norm_matches_quadratic_form() {
        let (_, _, kit) = kit_for("eight-state-nongap");
        let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let dv = DVector::from_vec(v.clone());
        let q = (dv.transpose() * &kit.w * &dv)[(0, 0)];
        assert_abs_diff_eq!(kit.norm_w(&v), q.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn prefix_scan_matches_direct_evaluation() {
        let (_, _, kit) = kit_for("three-state-nongap");
        let states = [0, 2, 2, 1, 0, 0, 1, 2, 2, 2];
        let n = states.len();
        let prefix = kit.prefix_h_w(&states);
        for k in 0..=n {
            let mut counts = vec![0usize; 3];
            states[..k].iter().for_each(|&s| counts[s] += 1);
            assert_abs_diff_eq!(prefix[k], kit.h_w_counts(&counts, n), epsilon = 1e-12);
        }
        let prof = kit.h_id_profile(&states);
        assert_eq!(prof[0], 0.0);
        for k in 1..=n {
            assert!(prof[k] >= prof[k - 1]);
            assert!(prof[k] >= prefix[k] - 1e-15);
        }
    }

    #[test]
    fn single_arm_m_d() {
        let (_, _, kit) = kit_for("two-state-cycle");
        // e_s != mu*, so kappa h_W > 0 = beta (1 - 1).
        assert_eq!(kit.m_d_count(&[0]), 0);
        assert_eq!(kit.m_d_count(&[1]), 0);
    }

    #[test]
    fn m_d_is_one_when_all_prefixes_align() {
        let (_, _, kit) = kit_for("two-state-cycle");
        // Alternating states keep every even prefix exact; odd prefixes sit
        // at distance 1/(2N) in W-norm, so use the profile directly.
        let prof = vec![0.0; 11];
        assert_eq!(kit.m_d_from_profile(&prof), 10);
    }

    #[test]
    fn slack_examples() {
        let mu = [0.5, 0.5];
        assert_eq!(slack(0.5, &mu, &[0.0, 0.0], 0.0), 0.5);
        assert_abs_diff_eq!(slack(0.5, &mu, &[1.0, 0.0], 1.0), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            slack(0.3, &mu, &[0.2, 0.2], 0.4),
            0.3 * 0.6,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gap_constants() {
        let rep = gap_bounds(1.0, 1.0, 2, 0.5, &[100, 10_000]);
        assert_abs_diff_eq!(rep.c_se, 4032.0, epsilon = 1e-9);
        let c_id = 672.0 * 2.0f64.powf(1.5) / 0.125;
        assert_abs_diff_eq!(rep.c_id, c_id, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.c_id, 10752.0 * 2.0f64.sqrt(), epsilon = 1e-9);
        assert_eq!(rep.c_so, rep.c_se);
        assert_abs_diff_eq!(rep.rows[0].set_expansion, 403.2, epsilon = 1e-9);
        assert!(rep.rows[1].id < rep.rows[0].id);
    }
}
