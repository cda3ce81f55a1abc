//! Python bindings: instances, the LP relaxation, simulation, gap bounds
//! and the local-instability scan.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rb_core::instances::{self, BUILTIN_NAMES};
use rb_core::{
    oracle, ArmConfig, InitialStates, LpSolution, LyapunovKit, PolicyKind, RunOptions, SolveOptions,
};

fn err(e: rb_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(frozen, name = "Instance")]
pub struct Instance {
    inner: rb_core::RbInstance,
}

#[pymethods]
impl Instance {
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        instances::builtin(name)
            .map(|inner| Instance { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = rb_core::RbInstance::from_json(text).map_err(err)?;
        inner.ensure_valid().map_err(err)?;
        Ok(Instance { inner })
    }

    /// Random instance with Dirichlet(`param`) transition rows and reward
    /// vectors; alpha is uniform on [0.1, 0.9) rounded down to 0.01.
    #[staticmethod]
    #[pyo3(signature = (n_states, param, seed=0))]
    fn dirichlet(n_states: usize, param: f64, seed: u64) -> PyResult<Self> {
        let mut rng = rb_core::rng::stream(seed, 0);
        instances::gen_dirichlet(n_states, param, &mut rng)
            .map(|inner| Instance { inner })
            .map_err(err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.n_states
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    fn solve(&self) -> PyResult<Solution> {
        rb_core::solve_lp(&self.inner, SolveOptions::default())
            .map(|inner| Solution { inner })
            .map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(name={:?}, n_states={}, alpha={})",
            self.inner.name, self.inner.n_states, self.inner.alpha
        )
    }
}

#[pyclass(frozen, name = "Solution")]
pub struct Solution {
    inner: LpSolution,
}

#[pymethods]
impl Solution {
    #[getter]
    fn r_rel(&self) -> f64 {
        self.inner.r_rel
    }

    #[getter]
    fn mu_star(&self) -> Vec<f64> {
        self.inner.mu_star.clone()
    }

    /// Activation probability of the optimal single-armed policy per state.
    #[getter]
    fn activation(&self) -> Vec<f64> {
        self.inner.c_pibs.clone()
    }

    #[getter]
    fn y(&self) -> Vec<[f64; 2]> {
        self.inner.y.clone()
    }

    #[getter]
    fn unique(&self) -> bool {
        self.inner.unique
    }

    fn classes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        d.set_item("plus", self.inner.s_plus.clone())?;
        d.set_item("zero", self.inner.s_zero.clone())?;
        d.set_item("minus", self.inner.s_minus.clone())?;
        d.set_item("null", self.inner.s_null.clone())?;
        Ok(d)
    }

    fn priority_order(&self) -> PyResult<Vec<usize>> {
        self.inner.priority_order().map_err(err)
    }

    fn chain<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.inner.chain();
        let d = PyDict::new(py);
        d.set_item("recurrent_classes", c.recurrent_classes.clone())?;
        d.set_item("transient_states", c.transient_states.clone())?;
        d.set_item("is_unichain", c.is_unichain)?;
        d.set_item("is_aperiodic", c.is_aperiodic)?;
        d.set_item("slem", c.slem)?;
        Ok(d)
    }
}

fn policy(name: &str) -> PyResult<PolicyKind> {
    name.parse().map_err(err)
}

fn initial(rule: &str) -> PyResult<InitialStates> {
    rule.parse().map_err(err)
}

/// Simulates `n_arms` arms and returns the summary with per-replication
/// batch means.
#[pyfunction]
#[pyo3(signature = (instance, policy_name, n_arms, horizon=20_000, replications=5, seed=0, batches=4, strict=false, initial_rule="uniform-random"))]
#[allow(clippy::too_many_arguments)]
fn simulate<'py>(
    py: Python<'py>,
    instance: &Instance,
    policy_name: &str,
    n_arms: usize,
    horizon: usize,
    replications: usize,
    seed: u64,
    batches: usize,
    strict: bool,
    initial_rule: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = policy(policy_name)?;
    let inst = &instance.inner;
    let sol = rb_core::solve_lp(inst, SolveOptions::default()).map_err(err)?;
    let cfg = ArmConfig::new(inst, n_arms, initial(initial_rule)?).map_err(err)?;
    let mut opts = RunOptions {
        horizon,
        replications,
        seed,
        n_batches: batches,
        ..Default::default()
    };
    if strict {
        opts = opts.strict();
    }
    let res = py
        .detach(|| rb_core::run(inst, &sol, &cfg, kind, &opts))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("policy", kind.name())?;
    d.set_item("n_arms", n_arms)?;
    d.set_item("avg_reward", res.avg_reward())?;
    d.set_item("ci_half", res.ci_half_width())?;
    d.set_item("optimality_ratio", res.optimality_ratio)?;
    d.set_item("r_rel", res.r_rel)?;
    d.set_item(
        "batch_means",
        res.replications
            .iter()
            .map(|r| r.batch_means.clone())
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Exact long-run average reward per arm for tiny systems.
#[pyfunction]
#[pyo3(signature = (instance, policy_name, n_arms, initial_rule="uniform-random"))]
fn exact_average(
    instance: &Instance,
    policy_name: &str,
    n_arms: usize,
    initial_rule: &str,
) -> PyResult<f64> {
    let sol = rb_core::solve_lp(&instance.inner, SolveOptions::default()).map_err(err)?;
    oracle::exact_average(
        &instance.inner,
        &sol,
        n_arms,
        policy(policy_name)?,
        &initial(initial_rule)?,
    )
    .map_err(err)
}

/// Lyapunov constants and the gap bounds `C / sqrt(N)`.
#[pyfunction]
fn bounds<'py>(
    py: Python<'py>,
    instance: &Instance,
    n_arms: Vec<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let inst = &instance.inner;
    let sol = rb_core::solve_lp(inst, SolveOptions::default()).map_err(err)?;
    let kit = LyapunovKit::build(&sol).map_err(err)?;
    let rep = kit.gap_bounds(inst.r_max(), &n_arms);
    let d = PyDict::new(py);
    d.set_item("lambda_w", kit.lambda_w)?;
    d.set_item("kappa", kit.kappa)?;
    d.set_item("c_se", rep.c_se)?;
    d.set_item("c_id", rep.c_id)?;
    d.set_item("c_so", rep.c_so)?;
    d.set_item("n_arms", n_arms)?;
    d.set_item(
        "bound_se",
        rep.rows.iter().map(|r| r.set_expansion).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "bound_id",
        rep.rows.iter().map(|r| r.id).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "bound_so",
        rep.rows
            .iter()
            .map(|r| r.set_optimization)
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Local-instability scan over random Dirichlet instances.
#[pyfunction]
#[pyo3(signature = (count, n_states=10, param=0.05, cutoff=0.95, seed=0))]
fn scan<'py>(
    py: Python<'py>,
    count: usize,
    n_states: usize,
    param: f64,
    cutoff: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let s = py
        .detach(|| instances::scan(count, n_states, param, cutoff, seed))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("rows", s.rows.len())?;
    d.set_item("attempts", s.attempts)?;
    d.set_item("below_cutoff", s.below_cutoff)?;
    d.set_item("unstable_below_cutoff", s.unstable_below_cutoff)?;
    d.set_item("unstable_fraction", s.unstable_fraction)?;
    d.set_item("slem", s.rows.iter().map(|r| r.slem).collect::<Vec<_>>())?;
    d.set_item(
        "phi_radius",
        s.rows.iter().map(|r| r.phi_radius).collect::<Vec<_>>(),
    )?;
    Ok(d)
}

#[pyfunction]
fn builtin_names() -> Vec<&'static str> {
    BUILTIN_NAMES.to_vec()
}

#[pyfunction]
fn policy_names() -> Vec<&'static str> {
    PolicyKind::ALL.iter().map(|k| k.name()).collect()
}

#[pymodule]
fn rb_engine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_class::<Solution>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(exact_average, m)?)?;
    m.add_function(wrap_pyfunction!(bounds, m)?)?;
    m.add_function(wrap_pyfunction!(scan, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_names, m)?)?;
    m.add_function(wrap_pyfunction!(policy_names, m)?)?;
    Ok(())
}
