//! Dense revised simplex for small standard-form programs.
//!
//! maximize `c·x` subject to `A x = b`, `x >= 0`.
//!
//! Bland's rule throughout (lowest entering index, lowest leaving basic
//! index on ratio ties), so the pivot sequence is deterministic and cannot
//! cycle. Linearly dependent equality rows are dropped before phase one.

use nalgebra::DMatrix;

const PIVOT_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexError {
    Infeasible,
    Unbounded,
    IterationLimit,
    Singular,
}

impl std::fmt::Display for SimplexError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimplexError::Infeasible => write!(f, "program is infeasible"),
            SimplexError::Unbounded => write!(f, "program is unbounded"),
            SimplexError::IterationLimit => write!(f, "simplex iteration limit reached"),
            SimplexError::Singular => write!(f, "basis matrix became singular"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Program {
    /// Row-major constraint matrix, `m` rows of length `n`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic column per kept row.
    pub basis: Vec<usize>,
    /// `c_j - y·A_j` at the optimum; zero on basic columns, `<= tol` elsewhere.
    pub reduced_costs: Vec<f64>,
    /// Original indices of the rows retained after rank reduction.
    pub kept_rows: Vec<usize>,
    pub iterations: usize,
}

impl Solution {
    /// Every nonbasic reduced cost is strictly negative: the optimum is unique.
    pub fn is_unique(&self, tol: f64) -> bool {
        self.reduced_costs
            .iter()
            .enumerate()
            .filter(|(j, _)| !self.basis.contains(j))
            .all(|(_, d)| *d < -tol)
    }
}

/// Selects a maximal independent subset of rows of `[A | b]`.
/// Returns `Err(Infeasible)` when a dependent row has an inconsistent rhs.
fn independent_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<usize>, SimplexError> {
    let m = a.len();
    let n = if m > 0 { a[0].len() } else { 0 };
    let mut rows: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(r, &bi)| {
            let mut v = r.clone();
            v.push(bi);
            v
        })
        .collect();
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(1.0_f64, |s, x| s.max(x.abs()));
    let mut pending: Vec<usize> = (0..m).collect();
    let mut kept = Vec::new();
    for col in 0..n {
        let best = pending
            .iter()
            .enumerate()
            .max_by(|(_, &p), (_, &q)| rows[p][col].abs().total_cmp(&rows[q][col].abs()));
        let Some((pos, &piv)) = best else { break };
        if rows[piv][col].abs() <= RANK_TOL * scale {
            continue;
        }
        pending.remove(pos);
        let prow = rows[piv].clone();
        for &r in &pending {
            let f = rows[r][col] / prow[col];
            if f != 0.0 {
                for (x, p) in rows[r].iter_mut().zip(&prow) {
                    *x -= f * p;
                }
            }
        }
        kept.push(piv);
    }
    for &r in &pending {
        if rows[r][n].abs() > 1e-8 * scale {
            return Err(SimplexError::Infeasible);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

struct Tableau<'a> {
    a: &'a [Vec<f64>],
    b: &'a [f64],
    m: usize,
    /// Number of columns, including artificials.
    ncols: usize,
    n_orig: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    /// Column `j`; indices `>= n_orig` are artificial unit columns.
    fn column(&self, j: usize) -> Vec<f64> {
        if j < self.n_orig {
            self.a.iter().map(|r| r[j]).collect()
        } else {
            let mut e = vec![0.0; self.m];
            e[j - self.n_orig] = 1.0;
            e
        }
    }

    fn binv_times(&self, v: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| (0..self.m).map(|k| self.binv[(i, k)] * v[k]).sum())
            .collect()
    }

    fn x_basic(&self) -> Vec<f64> {
        self.binv_times(self.b)
    }

    fn refactor(&mut self) -> Result<(), SimplexError> {
        let mut bm = DMatrix::<f64>::zeros(self.m, self.m);
        for (k, &j) in self.basis.iter().enumerate() {
            for (i, v) in self.column(j).into_iter().enumerate() {
                bm[(i, k)] = v;
            }
        }
        self.binv = bm.try_inverse().ok_or(SimplexError::Singular)?;
        Ok(())
    }

    fn duals(&self, cost: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|k| {
                (0..self.m)
                    .map(|i| cost[self.basis[i]] * self.binv[(i, k)])
                    .sum()
            })
            .collect()
    }

    fn reduced_cost(&self, j: usize, cost: &[f64], y: &[f64]) -> f64 {
        let col = self.column(j);
        cost[j] - col.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }

    fn pivot(&mut self, r: usize, j: usize, u: &[f64]) {
        let m = self.m;
        let ur = u[r];
        for k in 0..m {
            self.binv[(r, k)] /= ur;
        }
        for i in 0..m {
            if i != r && u[i] != 0.0 {
                let f = u[i];
                for k in 0..m {
                    let v = self.binv[(r, k)];
                    self.binv[(i, k)] -= f * v;
                }
            }
        }
        self.basis[r] = j;
        self.iterations += 1;
    }

    /// Runs Bland-rule iterations over columns `allowed` until optimal.
    fn optimize(&mut self, cost: &[f64], allowed: usize, limit: usize) -> Result<(), SimplexError> {
        loop {
            if self.iterations > limit {
                return Err(SimplexError::IterationLimit);
            }
            if self.iterations % REFACTOR_EVERY == 0 && self.iterations > 0 {
                self.refactor()?;
            }
            let y = self.duals(cost);
            let entering = (0..allowed)
                .filter(|j| !self.basis.contains(j))
                .find(|&j| self.reduced_cost(j, cost, &y) > PIVOT_TOL);
            let Some(j) = entering else { return Ok(()) };
            let u = self.binv_times(&self.column(j));
            let xb = self.x_basic();
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if u[i] > PIVOT_TOL {
                    let ratio = xb[i].max(0.0) / u[i];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((r, best)) => {
                            if ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[r])
                            {
                                Some((i, ratio))
                            } else {
                                Some((r, best))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(SimplexError::Unbounded);
            };
            self.pivot(r, j, &u);
        }
    }
}

/// Solves `max c·x, A x = b, x >= 0`.
pub fn solve(prog: &Program) -> Result<Solution, SimplexError> {
    let n = prog.c.len();
    // Normalise to b >= 0.
    let mut a: Vec<Vec<f64>> = prog.a.clone();
    let mut b = prog.b.clone();
    for (row, bi) in a.iter_mut().zip(b.iter_mut()) {
        if *bi < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
            *bi = -*bi;
        }
    }
    let kept = independent_rows(&a, &b)?;
    let a: Vec<Vec<f64>> = kept.iter().map(|&i| a[i].clone()).collect();
    let b: Vec<f64> = kept.iter().map(|&i| b[i]).collect();
    let m = a.len();
    let limit = 10_000 + 50 * (m + n);

    let mut tab = Tableau {
        a: &a,
        b: &b,
        m,
        ncols: n + m,
        n_orig: n,
        basis: (n..n + m).collect(),
        binv: DMatrix::identity(m, m),
        iterations: 0,
    };

    // Phase one: drive the artificial sum to zero.
    let mut phase1 = vec![0.0; tab.ncols];
    phase1[n..].iter_mut().for_each(|x| *x = -1.0);
    tab.optimize(&phase1, tab.ncols, limit)?;
    let xb = tab.x_basic();
    let infeas: f64 = tab
        .basis
        .iter()
        .zip(&xb)
        .filter(|(&j, _)| j >= n)
        .map(|(_, &x)| x)
        .sum();
    let bscale = b.iter().fold(1.0_f64, |s, x| s.max(x.abs()));
    if infeas > 1e-8 * bscale {
        return Err(SimplexError::Infeasible);
    }
    // Pivot remaining zero-level artificials out; full row rank guarantees a
    // usable column.
    for r in 0..m {
        if tab.basis[r] >= n {
            let mut chosen = None;
            for j in 0..n {
                if tab.basis.contains(&j) {
                    continue;
                }
                let u = tab.binv_times(&tab.column(j));
                if u[r].abs() > PIVOT_TOL {
                    chosen = Some((j, u));
                    break;
                }
            }
            let (j, u) = chosen.ok_or(SimplexError::Singular)?;
            tab.pivot(r, j, &u);
        }
    }
    tab.refactor()?;

    // Phase two on the original columns.
    let mut cost = prog.c.clone();
    cost.extend(std::iter::repeat(0.0).take(m));
    tab.optimize(&cost, n, limit)?;
    tab.refactor()?;

    let xb = tab.x_basic();
    let mut x = vec![0.0; n];
    for (i, &j) in tab.basis.iter().enumerate() {
        x[j] = xb[i].max(0.0);
    }
    let y = tab.duals(&cost);
    let reduced_costs: Vec<f64> = (0..n)
        .map(|j| {
            if tab.basis.contains(&j) {
                0.0
            } else {
                tab.reduced_cost(j, &cost, &y)
            }
        })
        .collect();
    let objective = prog.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(Solution {
        x,
        objective,
        basis: tab.basis.clone(),
        reduced_costs,
        kept_rows: kept,
        iterations: tab.iterations,
    })
}
