//! Python bindings: the model types, asymptotic series, Lyapunov
//! evaluations and the main simulation entry points.
//!
//! Aggregate reports (certificates, Monte Carlo results, comparisons) are
//! returned as JSON strings with the same schema as the CLI outputs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use autoresonance::asymptotics::{self, Branch};
use autoresonance::dynamics::{self, ModelParams, PerturbationValues, PhaseState, TransformedState};
use autoresonance::error::Error;
use autoresonance::integrate::IntegratorConfig;
use autoresonance::lyapunov::{self, BranchStability, DomainBox, FlowMode, GridSpec};
use autoresonance::perturbations::{self, DistSpec, JumpTrainSpec, RandomPertSpec};
use autoresonance::simulation::{self, CaptureCriterion, MonteCarloConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_branch(name: &str) -> PyResult<Branch> {
    match name {
        "plus" => Ok(Branch::Plus),
        "minus" => Ok(Branch::Minus),
        other => Err(PyValueError::new_err(format!("unknown branch {other:?} (plus | minus)"))),
    }
}

/// Parameters of the averaged resonance system.
#[pyclass(name = "ModelParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    fn new(lambda: f64, delta: f64, f: f64) -> PyResult<Self> {
        Ok(Self { inner: ModelParams::new(lambda, delta, f).map_err(py_err)? })
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn f(&self) -> f64 {
        self.inner.f
    }

    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    #[getter]
    fn m(&self) -> f64 {
        self.inner.m()
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(lambda={}, delta={}, f={})",
            self.inner.lambda, self.inner.delta, self.inner.f
        )
    }
}

/// Truncated asymptotic series of one resonant branch.
#[pyclass(name = "SeriesCoeffs", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySeriesCoeffs {
    inner: asymptotics::SeriesCoeffs,
}

#[pymethods]
impl PySeriesCoeffs {
    #[getter]
    fn branch(&self) -> &'static str {
        match self.inner.branch {
            Branch::Plus => "plus",
            Branch::Minus => "minus",
        }
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    #[getter]
    fn r_coeffs(&self) -> Vec<f64> {
        self.inner.r_coeffs.clone()
    }

    #[getter]
    fn psi_coeffs(&self) -> Vec<f64> {
        self.inner.psi_coeffs.clone()
    }

    #[getter]
    fn ill_conditioned(&self) -> bool {
        self.inner.ill_conditioned
    }

    /// Reference solution `(r, psi)` at `tau`.
    fn eval(&self, tau: f64) -> PyResult<(f64, f64)> {
        let s = self.inner.eval(tau).map_err(py_err)?;
        Ok((s.r, s.psi))
    }

    /// Defect of the truncated series in the averaged system.
    fn residual(&self, tau: f64) -> PyResult<(f64, f64)> {
        asymptotics::residual(&self.inner, tau).map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        autoresonance::output::to_json(&self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("SeriesCoeffs(branch={:?}, order={})", self.branch(), self.inner.order)
    }
}

/// Closed-form leading coefficients `(psi0, r0, psi1, r1)`.
#[pyfunction]
fn leading_coeffs(params: &PyModelParams, branch: &str) -> PyResult<(f64, f64, f64, f64)> {
    asymptotics::leading_coeffs(&params.inner, parse_branch(branch)?).map_err(py_err)
}

/// Series coefficients through `order` by power matching.
#[pyfunction]
fn extend_coeffs(params: &PyModelParams, branch: &str, order: usize) -> PyResult<PySeriesCoeffs> {
    Ok(PySeriesCoeffs {
        inner: asymptotics::extend_coeffs(&params.inner, parse_branch(branch)?, order)
            .map_err(py_err)?,
    })
}

/// Right-hand side of the unperturbed averaged system.
#[pyfunction]
fn rhs_unperturbed(r: f64, psi: f64, tau: f64, params: &PyModelParams) -> PyResult<(f64, f64)> {
    dynamics::rhs_unperturbed(&PhaseState::new(r, psi), tau, &params.inner).map_err(py_err)
}

/// Right-hand side of the deterministically perturbed system.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn rhs_perturbed(
    r: f64,
    psi: f64,
    tau: f64,
    params: &PyModelParams,
    xi: f64,
    eta: f64,
    zeta: f64,
    mu: f64,
) -> PyResult<(f64, f64)> {
    dynamics::rhs_perturbed(
        &PhaseState::new(r, psi),
        tau,
        &params.inner,
        &PerturbationValues::new(xi, eta, zeta),
        mu,
    )
    .map_err(py_err)
}

/// Change of variables into the reference frame: `(R, Psi)`.
#[pyfunction]
fn to_transformed(
    r: f64,
    psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<(f64, f64)> {
    let t = dynamics::to_transformed(&PhaseState::new(r, psi), tau, &params.inner, &reference.inner)
        .map_err(py_err)?;
    Ok((t.r, t.psi))
}

/// Inverse change of variables: `(r, psi)`.
#[pyfunction]
fn from_transformed(
    big_r: f64,
    big_psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<(f64, f64)> {
    let s = dynamics::from_transformed(
        &TransformedState::new(big_r, big_psi),
        tau,
        &params.inner,
        &reference.inner,
    )
    .map_err(py_err)?;
    Ok((s.r, s.psi))
}

/// Transformed vector field `(dR/dtau, dPsi/dtau)`.
#[pyfunction]
fn rhs_transformed(
    big_r: f64,
    big_psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<(f64, f64)> {
    dynamics::rhs_transformed(
        &TransformedState::new(big_r, big_psi),
        tau,
        &params.inner,
        &reference.inner,
    )
    .map_err(py_err)
}

#[pyfunction]
fn hamiltonian(
    big_r: f64,
    big_psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<f64> {
    lyapunov::hamiltonian(
        &TransformedState::new(big_r, big_psi),
        tau,
        &params.inner,
        &reference.inner,
    )
    .map_err(py_err)
}

#[pyfunction]
fn lyapunov_v(
    big_r: f64,
    big_psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<f64> {
    lyapunov::lyapunov_v(
        &TransformedState::new(big_r, big_psi),
        tau,
        &params.inner,
        &reference.inner,
    )
    .map_err(py_err)
}

/// `dV/dtau` along the unperturbed transformed flow.
#[pyfunction]
fn lyapunov_derivative(
    big_r: f64,
    big_psi: f64,
    tau: f64,
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
) -> PyResult<f64> {
    lyapunov::lyapunov_derivative(
        &TransformedState::new(big_r, big_psi),
        tau,
        &params.inner,
        &reference.inner,
        FlowMode::Unperturbed,
    )
    .map_err(py_err)
}

/// Branch stability: "asymptotically_stable" | "unstable" | "inconclusive".
#[pyfunction]
fn classify_branch(params: &PyModelParams, branch: &str) -> PyResult<&'static str> {
    Ok(
        match lyapunov::classify_branch(&params.inner, parse_branch(branch)?).map_err(py_err)? {
            BranchStability::AsymptoticallyStable => "asymptotically_stable",
            BranchStability::Unstable => "unstable",
            BranchStability::Inconclusive => "inconclusive",
        },
    )
}

/// Sampling-based certification of the Lyapunov inequalities; returns the
/// certificate report as a JSON string.
#[pyfunction]
#[pyo3(signature = (params, reference, rho_max=0.4, tau_min=50.0, tau_max=1e4, angles=64, radii=64, taus=32))]
#[allow(clippy::too_many_arguments)]
fn certify_domain(
    params: &PyModelParams,
    reference: &PySeriesCoeffs,
    rho_max: f64,
    tau_min: f64,
    tau_max: f64,
    angles: usize,
    radii: usize,
    taus: usize,
) -> PyResult<String> {
    let bx = DomainBox::new(rho_max, tau_min, tau_max).map_err(py_err)?;
    let grid = GridSpec { angles, radii, taus };
    let report =
        lyapunov::certify_domain(&params.inner, &reference.inner, &bx, &grid).map_err(py_err)?;
    autoresonance::output::to_json(&report).map_err(py_err)
}

/// Weighted deviation from the reference solution.
#[pyfunction]
fn deviation_norm(
    r: f64,
    psi: f64,
    tau: f64,
    reference: &PySeriesCoeffs,
) -> PyResult<f64> {
    simulation::deviation_norm(&PhaseState::new(r, psi), tau, &reference.inner).map_err(py_err)
}

/// Classifies one initial condition as "captured" | "bounded" | "failed".
#[pyfunction]
#[pyo3(signature = (params, r0, psi0, tau_init=0.01, tau_max=100.0))]
fn basin_classify(
    params: &PyModelParams,
    r0: f64,
    psi0: f64,
    tau_init: f64,
    tau_max: f64,
) -> PyResult<&'static str> {
    let cell = simulation::basin_classify(
        &params.inner,
        r0,
        psi0,
        tau_init,
        tau_max,
        &CaptureCriterion::default(),
        &IntegratorConfig::default(),
    );
    Ok(match cell.class {
        simulation::BasinClass::Captured => "captured",
        simulation::BasinClass::Bounded => "bounded",
        simulation::BasinClass::Failed => "failed",
    })
}

/// Escape time of the constant-plus-ramp perturbation run started on the
/// reference; `None` when the deviation stays below `epsilon`.
#[pyfunction]
#[pyo3(signature = (params, mu, epsilon, tau0=10.0, horizon=3000.0, series_order=3))]
fn example1_escape_time(
    params: &PyModelParams,
    mu: f64,
    epsilon: f64,
    tau0: f64,
    horizon: f64,
    series_order: usize,
) -> PyResult<Option<f64>> {
    let reference = asymptotics::extend_coeffs(&params.inner, Branch::Minus, series_order)
        .map_err(py_err)?;
    let pert = perturbations::make_example1();
    let start = reference.eval(tau0).map_err(py_err)?;
    let rhs = simulation::deterministic_rhs(&params.inner, &pert, mu);
    let traj = simulation::integrate_until_escape(
        rhs,
        start,
        tau0,
        horizon,
        epsilon,
        &reference,
        &IntegratorConfig::default(),
    )
    .map_err(py_err)?;
    Ok(traj.escape_time)
}

/// Monte Carlo escape probability under a jump-train perturbation;
/// returns the full report as a JSON string.
#[pyfunction]
#[pyo3(signature = (params, n_trials, mu, kappa, epsilon, tau0, seed, n_jumps=10, jump_lo=-0.5, jump_hi=0.5, series_order=1))]
#[allow(clippy::too_many_arguments)]
fn monte_carlo_escape(
    params: &PyModelParams,
    n_trials: usize,
    mu: f64,
    kappa: f64,
    epsilon: f64,
    tau0: f64,
    seed: u64,
    n_jumps: usize,
    jump_lo: f64,
    jump_hi: f64,
    series_order: usize,
) -> PyResult<String> {
    let mc = MonteCarloConfig {
        n_trials,
        mu,
        kappa,
        epsilon,
        tau0,
        seed,
        params: params.inner,
        pert: RandomPertSpec::JumpTrain(JumpTrainSpec {
            n: n_jumps,
            jump_dist: DistSpec::Uniform { lo: jump_lo, hi: jump_hi },
            mu,
        }),
        series_order,
        integrator: IntegratorConfig::default(),
    };
    let report = simulation::monte_carlo_escape(&mc).map_err(py_err)?;
    autoresonance::output::to_json(&report).map_err(py_err)
}

/// Envelope factor `sqrt(kappa eps r)` of the averaged Duffing amplitude.
#[pyfunction]
fn duffing_envelope(r: f64, beta: f64, gamma: f64, eps: f64, alpha: f64) -> PyResult<f64> {
    let dp = dynamics::DuffingParams::new(beta, gamma, eps, alpha).map_err(py_err)?;
    dynamics::duffing_envelope(r, &dp).map_err(py_err)
}

#[pymodule]
fn autoresonance_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_class::<PySeriesCoeffs>()?;
    m.add_function(wrap_pyfunction!(leading_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(extend_coeffs, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_unperturbed, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_perturbed, m)?)?;
    m.add_function(wrap_pyfunction!(to_transformed, m)?)?;
    m.add_function(wrap_pyfunction!(from_transformed, m)?)?;
    m.add_function(wrap_pyfunction!(rhs_transformed, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_v, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_derivative, m)?)?;
    m.add_function(wrap_pyfunction!(classify_branch, m)?)?;
    m.add_function(wrap_pyfunction!(certify_domain, m)?)?;
    m.add_function(wrap_pyfunction!(deviation_norm, m)?)?;
    m.add_function(wrap_pyfunction!(basin_classify, m)?)?;
    m.add_function(wrap_pyfunction!(example1_escape_time, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_escape, m)?)?;
    m.add_function(wrap_pyfunction!(duffing_envelope, m)?)?;
    Ok(())
}
