//! Command drivers behind the CLI: each one loads a config section, runs
//! the corresponding experiment and persists reports plus a manifest.

use std::path::{Path, PathBuf};

use crate::asymptotics::{extend_coeffs, Branch};
use crate::config::{
    ExperimentConfig, Manifest, MonteCarloSection, PerturbationSection, SimulateSection,
};
use crate::dynamics::{self, DuffingParams, PhaseState};
use crate::error::{Error, Result};
use crate::integrate::TrajectoryStatus;
use crate::lyapunov::{certify_domain, DomainBox, GridSpec};
use crate::output::{fmt_f64, write_json, CsvFile};
use crate::perturbations::{make_example1, JumpTrainSpec, RandomPertSpec};
use crate::simulation::{
    basin_scan, deviation_norm, duffing_compare, integrate_until_escape, monte_carlo_escape,
    BasinClass, BasinGrid, CaptureCriterion, MonteCarloConfig,
};

type Rhs = Box<dyn Fn(f64, &[f64; 2]) -> [f64; 2]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Asymptotics,
    Certify,
    Basin,
    Montecarlo,
    Duffing,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Asymptotics => "asymptotics",
            Command::Certify => "certify",
            Command::Basin => "basin",
            Command::Montecarlo => "montecarlo",
            Command::Duffing => "duffing",
        }
    }
}

/// Resolves the output directory: CLI flag, then the environment override,
/// then the config value, then a per-command default.
pub fn resolve_out_dir(cli: Option<&Path>, config: &ExperimentConfig, command: Command) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("AUTORESONANCE_OUT") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    if let Some(dir) = &config.out_dir {
        return PathBuf::from(dir);
    }
    PathBuf::from("runs").join(command.name())
}

pub struct RunOptions {
    pub config_path: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Loads the config, applies overrides and dispatches the command inside
/// a thread pool of the requested size (results do not depend on it).
pub fn run(command: Command, opts: &RunOptions) -> Result<PathBuf> {
    let mut config = ExperimentConfig::from_path(&opts.config_path)?;
    if let Some(seed) = opts.seed {
        config.seed = seed;
    }
    let out = resolve_out_dir(opts.out_dir.as_deref(), &config, command);
    std::fs::create_dir_all(&out)?;

    let dispatch = || -> Result<()> {
        match command {
            Command::Simulate => cmd_simulate(&config, &out),
            Command::Asymptotics => cmd_asymptotics(&config, &out),
            Command::Certify => cmd_certify(&config, &out),
            Command::Basin => cmd_basin(&config, &out),
            Command::Montecarlo => cmd_montecarlo(&config, &out),
            Command::Duffing => cmd_duffing(&config, &out),
        }
    };

    match opts.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Configuration(format!("thread pool: {e}")))?;
            pool.install(dispatch)?;
        }
        None => dispatch()?,
    }

    write_json(&out.join("manifest.json"), &Manifest::new(command.name(), &config))?;
    Ok(out)
}

fn status_label(status: TrajectoryStatus) -> &'static str {
    match status {
        TrajectoryStatus::Completed => "completed",
        TrajectoryStatus::Escaped => "escaped",
        TrajectoryStatus::ValidityViolation => "validity_violation",
        TrajectoryStatus::StepLimit => "step_limit",
    }
}

fn simulate_section(config: &ExperimentConfig) -> Result<&SimulateSection> {
    config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [simulate] section".into()))
}

pub fn cmd_simulate(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = config.model()?;
    let sec = simulate_section(config)?;
    let cfg = config.integrator();
    let epsilon = sec.epsilon.unwrap_or(f64::INFINITY);
    if let Some(e) = sec.epsilon {
        if e <= 0.0 {
            return Err(Error::Configuration("epsilon must be positive".into()));
        }
    }

    // reference for the deviation column; absent for delta = 0 where the
    // two phase roots coincide
    let reference = extend_coeffs(&params, Branch::Minus, sec.series_order).ok();
    let initial = PhaseState::new(sec.r0, sec.psi0);

    // build the right-hand side; a random section realizes one path from
    // the master seed and dumps it for audit
    let example1 = make_example1();
    let mut path_dump: Option<crate::perturbations::RandomPertPath> = None;
    let rhs: Rhs = match &sec.perturbation {
        None => Box::new(move |t, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &params)),
        Some(PerturbationSection::Example1 { mu }) => {
            let mu = *mu;
            Box::new(move |t, y: &[f64; 2]| {
                let pv = example1.values(y[0], y[1], t);
                dynamics::rhs_perturbed_raw(y[0], y[1], t, &params, &pv, mu)
            })
        }
        Some(other) => {
            let spec = random_spec(other)?;
            let path = spec.sample(config.seed)?;
            path_dump = Some(path.clone());
            Box::new(move |t, y: &[f64; 2]| {
                let pv = path.values(t);
                dynamics::rhs_perturbed_raw(y[0], y[1], t, &params, &pv, 1.0)
            })
        }
    };

    let traj = match &reference {
        Some(reference) => {
            integrate_until_escape(&rhs, initial, sec.tau0, sec.tau_end, epsilon, reference, &cfg)?
        }
        None => crate::integrate::integrate(&rhs, [sec.r0, sec.psi0], sec.tau0, sec.tau_end, &cfg)?,
    };

    let mut csv = CsvFile::create(&out.join("trajectory.csv"), &[
        "tau",
        "r",
        "psi",
        "deviation_norm",
        "status",
    ])?;
    let n = traj.times.len();
    for (i, (t, y)) in traj.times.iter().zip(&traj.states).enumerate() {
        let dev = match &reference {
            Some(reference) => {
                deviation_norm(&PhaseState::new(y[0], y[1]), *t, reference).unwrap_or(f64::NAN)
            }
            None => f64::NAN,
        };
        let status = if i + 1 == n { status_label(traj.status) } else { "ok" };
        csv.row(&[fmt_f64(*t), fmt_f64(y[0]), fmt_f64(y[1]), fmt_f64(dev), status.into()])?;
    }
    csv.finish()?;

    if let Some(path) = path_dump {
        let mut csv = CsvFile::create(&out.join("path.csv"), &["tau", "xi", "eta", "zeta", "s"])?;
        let step = (path.mu / 10.0).min(0.05);
        let mut tau = step;
        while tau < path.support_end() {
            let v = path.values(tau);
            csv.row(&[
                fmt_f64(tau),
                fmt_f64(v.xi),
                fmt_f64(v.eta),
                fmt_f64(v.zeta),
                fmt_f64(path.envelope(tau)),
            ])?;
            tau += step;
        }
        csv.finish()?;
    }
    Ok(())
}

fn random_spec(section: &PerturbationSection) -> Result<RandomPertSpec> {
    match section {
        PerturbationSection::Example1 { .. } => Err(Error::Configuration(
            "deterministic perturbation given where a random one is required".into(),
        )),
        PerturbationSection::JumpTrain { n, jump_dist, mu } => {
            Ok(RandomPertSpec::JumpTrain(JumpTrainSpec { n: *n, jump_dist: *jump_dist, mu: *mu }))
        }
        PerturbationSection::SingleJump { omega_dist, jump_dist, mu } => {
            Ok(RandomPertSpec::SingleJump {
                omega_dist: *omega_dist,
                jump_dist: *jump_dist,
                mu: *mu,
            })
        }
    }
}

pub fn cmd_asymptotics(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let model = config
        .model
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [model] section".into()))?;
    if model.delta >= 1.0 {
        return Err(Error::DegenerateParameters(format!(
            "delta = {} leaves no expansion: the phase roots coincide at delta = 1",
            model.delta
        )));
    }
    let params = config.model()?;
    let sec = config
        .asymptotics
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [asymptotics] section".into()))?;
    let series = extend_coeffs(&params, sec.branch, sec.order)?;
    write_json(&out.join("series.json"), &series)?;

    let mut csv = CsvFile::create(&out.join("residuals.csv"), &["tau", "res_r", "res_psi"])?;
    for tau in sec.tau_grid.values()? {
        let (res_r, res_psi) = crate::asymptotics::residual(&series, tau)?;
        csv.row(&[fmt_f64(tau), fmt_f64(res_r), fmt_f64(res_psi)])?;
    }
    csv.finish()
}

pub fn cmd_certify(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = config.model()?;
    let sec = config
        .certify
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [certify] section".into()))?;
    let reference = extend_coeffs(&params, Branch::Minus, sec.series_order)?;
    let bx = DomainBox::new(sec.rho_max, sec.tau_min, sec.tau_max)?;
    let grid = GridSpec { angles: sec.angles, radii: sec.radii, taus: sec.taus };
    let report = certify_domain(&params, &reference, &bx, &grid)?;
    write_json(&out.join("certificate.json"), &report)
}

pub fn cmd_basin(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let params = config.model()?;
    let sec = config
        .basin
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [basin] section".into()))?;
    let grid = BasinGrid {
        r_min: sec.r_min,
        r_max: sec.r_max,
        r_steps: sec.r_steps,
        psi_min: sec.psi_min,
        psi_max: sec.psi_max,
        psi_steps: sec.psi_steps,
    };
    let criterion = CaptureCriterion {
        ratio_lo: sec.ratio_lo,
        ratio_hi: sec.ratio_hi,
        phase_window: sec.phase_window,
    };
    let cells = basin_scan(&params, &grid, sec.tau_init, sec.tau_max, &criterion, &config.integrator());
    let mut csv = CsvFile::create(&out.join("basin.csv"), &["r0", "psi0", "class", "r_final"])?;
    for cell in cells {
        let class = match cell.class {
            BasinClass::Captured => "captured",
            BasinClass::Bounded => "bounded",
            BasinClass::Failed => "failed",
        };
        csv.row(&[fmt_f64(cell.r0), fmt_f64(cell.psi0), class.into(), fmt_f64(cell.r_final)])?;
    }
    csv.finish()
}

fn monte_carlo_config(
    config: &ExperimentConfig,
    sec: &MonteCarloSection,
) -> Result<MonteCarloConfig> {
    Ok(MonteCarloConfig {
        n_trials: sec.n_trials,
        mu: sec.mu,
        kappa: sec.kappa,
        epsilon: sec.epsilon,
        tau0: sec.tau0,
        seed: config.seed,
        params: config.model()?,
        pert: random_spec(&sec.perturbation)?,
        series_order: sec.series_order,
        integrator: config.integrator(),
    })
}

pub fn cmd_montecarlo(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let sec = config
        .montecarlo
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [montecarlo] section".into()))?;
    let mc = monte_carlo_config(config, sec)?;
    let report = monte_carlo_escape(&mc)?;

    #[derive(serde::Serialize)]
    struct McOutput<'a> {
        config: &'a MonteCarloConfig,
        report: &'a crate::simulation::MonteCarloReport,
    }
    write_json(&out.join("montecarlo.json"), &McOutput { config: &mc, report: &report })
}

pub fn cmd_duffing(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let sec = config
        .duffing
        .as_ref()
        .ok_or_else(|| Error::Configuration("missing [duffing] section".into()))?;
    let dp = DuffingParams::new(sec.beta, sec.gamma, sec.eps, sec.alpha)?;
    // surfaces the no-branch error for 2 beta / eps >= 1 before any work
    dp.averaged()?;
    let report = duffing_compare(&dp, sec.x0, sec.v0, sec.t_end, &config.integrator())?;

    let mut csv = CsvFile::create(&out.join("envelope.csv"), &["t", "envelope", "predicted"])?;
    for (t, env, pred) in &report.rows {
        csv.row(&[fmt_f64(*t), fmt_f64(*env), fmt_f64(*pred)])?;
    }
    csv.finish()?;

    #[derive(serde::Serialize)]
    struct DuffingOutput<'a> {
        params: &'a DuffingParams,
        averaged: crate::dynamics::ModelParams,
        sup_rel_error: f64,
        growth_captured: bool,
        env_initial: f64,
        env_final: f64,
        r_final: f64,
        compare_from_t: f64,
        compare_to_t: f64,
    }
    write_json(&out.join("duffing.json"), &DuffingOutput {
        params: &dp,
        averaged: dp.averaged()?,
        sup_rel_error: report.sup_rel_error,
        growth_captured: report.growth_captured,
        env_initial: report.env_initial,
        env_final: report.env_final,
        r_final: report.r_final,
        compare_from_t: report.compare_from_t,
        compare_to_t: report.compare_to_t,
    })
}
