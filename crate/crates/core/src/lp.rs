//! LP relaxation of the N-armed problem and the optimal single-armed policy.
//!
//! Variables `y(s, a)` at column `2s + a`. Rows: budget, one flow-balance
//! row per state, normalisation. One flow row is always redundant; the
//! simplex drops it.

use nalgebra::DMatrix;

use crate::chain::{self, ChainReport};
use crate::error::{Error, Result};
use crate::mdp::RbInstance;
use crate::simplex::{self, Program, SimplexError};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// `mu*(s)` at or below this counts as a null state.
    pub null_tol: f64,
    /// Slack used to decide `c(s) == 0` or `c(s) == 1`.
    pub class_tol: f64,
    /// Reduced costs must sit below `-unique_tol` for a unique optimum.
    pub unique_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            null_tol: 1e-10,
            class_tol: 1e-9,
            unique_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub n_states: usize,
    pub alpha: f64,
    pub y: Vec<[f64; 2]>,
    pub r_rel: f64,
    pub pibs: Vec<[f64; 2]>,
    pub p_pibs: DMatrix<f64>,
    pub mu_star: Vec<f64>,
    pub c_pibs: Vec<f64>,
    pub s_plus: Vec<usize>,
    pub s_zero: Vec<usize>,
    pub s_minus: Vec<usize>,
    /// States with `mu*(s) = 0`; they belong to none of the three classes.
    pub s_null: Vec<usize>,
    /// No nonbasic column has a zero reduced cost.
    pub unique: bool,
}

pub fn solve_lp(inst: &RbInstance, opts: SolveOptions) -> Result<LpSolution> {
    inst.ensure_valid()?;
    let n = inst.n_states;
    let nv = 2 * n;
    let mut a = Vec::with_capacity(n + 2);
    let mut b = Vec::with_capacity(n + 2);
    // Expected budget.
    a.push(
        (0..nv)
            .map(|j| if j % 2 == 1 { 1.0 } else { 0.0 })
            .collect::<Vec<_>>(),
    );
    b.push(inst.alpha);
    // Flow balance: inflow(s) - outflow(s) = 0.
    for s in 0..n {
        let mut row = vec![0.0; nv];
        for sp in 0..n {
            row[2 * sp] += inst.p0[sp][s];
            row[2 * sp + 1] += inst.p1[sp][s];
        }
        row[2 * s] -= 1.0;
        row[2 * s + 1] -= 1.0;
        a.push(row);
        b.push(0.0);
    }
    a.push(vec![1.0; nv]);
    b.push(1.0);
    let c: Vec<f64> = (0..n).flat_map(|s| [inst.r0[s], inst.r1[s]]).collect();
    let sol = simplex::solve(&Program { a, b, c }).map_err(|e| match e {
        SimplexError::Infeasible => Error::Numerical("LP relaxation reported infeasible".into()),
        other => Error::Numerical(format!("LP relaxation: {other}")),
    })?;
    let y: Vec<[f64; 2]> = (0..n).map(|s| [sol.x[2 * s], sol.x[2 * s + 1]]).collect();
    Ok(assemble(
        inst,
        y,
        sol.objective,
        sol.is_unique(opts.unique_tol),
        opts,
    ))
}

/// Builds the policy, induced chain and state classes from an occupation
/// measure. Public so that tests can feed hand-made solutions.
pub fn assemble(
    inst: &RbInstance,
    y: Vec<[f64; 2]>,
    r_rel: f64,
    unique: bool,
    opts: SolveOptions,
) -> LpSolution {
    let n = inst.n_states;
    let mu_star: Vec<f64> = y.iter().map(|v| v[0] + v[1]).collect();
    let pibs: Vec<[f64; 2]> = (0..n)
        .map(|s| {
            if mu_star[s] > opts.null_tol {
                [y[s][0] / mu_star[s], y[s][1] / mu_star[s]]
            } else {
                [0.5, 0.5]
            }
        })
        .collect();
    let c_pibs: Vec<f64> = pibs.iter().map(|p| p[1]).collect();
    let p_pibs = DMatrix::from_fn(n, n, |s, t| {
        pibs[s][0] * inst.p0[s][t] + pibs[s][1] * inst.p1[s][t]
    });
    let (mut s_plus, mut s_zero, mut s_minus, mut s_null) = (vec![], vec![], vec![], vec![]);
    for s in 0..n {
        if mu_star[s] <= opts.null_tol {
            s_null.push(s);
        } else if c_pibs[s] >= 1.0 - opts.class_tol {
            s_plus.push(s);
        } else if c_pibs[s] <= opts.class_tol {
            s_minus.push(s);
        } else {
            s_zero.push(s);
        }
    }
    LpSolution {
        n_states: n,
        alpha: inst.alpha,
        y,
        r_rel,
        pibs,
        p_pibs,
        mu_star,
        c_pibs,
        s_plus,
        s_zero,
        s_minus,
        s_null,
        unique,
    }
}

impl LpSolution {
    pub fn chain(&self) -> ChainReport {
        chain::analyze(&self.p_pibs)
    }

    /// States from highest to lowest priority: S+, S0, S-, then null states.
    /// Inside a class: descending `y(s,1)/mu(s)`, then ascending index.
    pub fn priority_order(&self) -> Result<Vec<usize>> {
        if self.s_zero.len() > 1 {
            return Err(Error::Input(format!(
                "degenerate vertex required: |S0| = {}",
                self.s_zero.len()
            )));
        }
        let ratio = |s: usize| {
            if self.mu_star[s] > 0.0 {
                self.y[s][1] / self.mu_star[s]
            } else {
                0.0
            }
        };
        let sorted = |v: &[usize]| {
            let mut v = v.to_vec();
            v.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
            v
        };
        let mut out = sorted(&self.s_plus);
        out.extend(sorted(&self.s_zero));
        out.extend(sorted(&self.s_minus));
        out.extend(self.s_null.iter().copied());
        Ok(out)
    }

    /// Largest `|sum y(s,1) - alpha|`, flow residual and `|mu - y sum|`.
    pub fn residuals(&self, inst: &RbInstance) -> (f64, f64) {
        let n = self.n_states;
        let budget = (self.y.iter().map(|v| v[1]).sum::<f64>() - self.alpha).abs();
        let mut flow = 0.0_f64;
        for s in 0..n {
            let inflow: f64 = (0..n)
                .map(|sp| self.y[sp][0] * inst.p0[sp][s] + self.y[sp][1] * inst.p1[sp][s])
                .sum();
            flow = flow.max((inflow - self.mu_star[s]).abs());
        }
        (budget, flow)
    }
}
