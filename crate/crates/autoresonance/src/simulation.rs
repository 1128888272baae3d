//! Experiment engines: escape detection, basin scans, decay-rate fits,
//! Monte Carlo escape probability and the Duffing-versus-averaged
//! comparison.
//!
//! Stability is measured in the weighted deviation norm
//! `|r - R_ref(tau)| tau^-1/2 + |psi - Psi_ref(tau)|`; an escape event is
//! the first time this norm exceeds a threshold `epsilon`. The norm is
//! evaluated at every accepted integrator step and the crossing is located
//! by bisection on the dense output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::SeriesCoeffs;
use crate::dynamics::{self, ModelParams, PhaseState, TransformedState};
use crate::error::{Error, Result};
use crate::integrate::{
    hermite, integrate, integrate_observed, IntegratorConfig, StepControl, Trajectory,
    TrajectoryStatus,
};
use crate::lyapunov::Frame;
use crate::perturbations::{trial_seed, DeterministicPert, RandomPertPath, RandomPertSpec};

/// Weight applied to the amplitude deviation in the stability norm.
/// The two choices differ by the constant `sqrt(lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationWeight {
    /// `tau^-1/2` (the form used by the stability definitions).
    #[default]
    Tau,
    /// `(lambda tau)^-1/2` (the form produced by the change of variables).
    LambdaTau,
}

/// Weighted deviation of a state from the reference solution.
pub fn deviation_norm(state: &PhaseState, tau: f64, reference: &SeriesCoeffs) -> Result<f64> {
    deviation_norm_weighted(state, tau, reference, DeviationWeight::Tau)
}

pub fn deviation_norm_weighted(
    state: &PhaseState,
    tau: f64,
    reference: &SeriesCoeffs,
    weight: DeviationWeight,
) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Domain(format!("deviation norm requires tau > 0, got {tau}")));
    }
    let rf = reference.eval(tau)?;
    let w = match weight {
        DeviationWeight::Tau => tau.sqrt().recip(),
        DeviationWeight::LambdaTau => (reference.params.lambda * tau).sqrt().recip(),
    };
    Ok((state.r - rf.r).abs() * w + (state.psi - rf.psi).abs())
}

/// Integrates a phase-space vector field until the weighted deviation
/// exceeds `epsilon` (escape, with the crossing bisected to a 1e-6
/// bracket), `r` turns negative (model-validity violation), or the
/// horizon is reached.
pub fn integrate_until_escape<F>(
    rhs: F,
    initial: PhaseState,
    tau0: f64,
    horizon: f64,
    epsilon: f64,
    reference: &SeriesCoeffs,
    cfg: &IntegratorConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
{
    if epsilon <= 0.0 {
        return Err(Error::Domain(format!("escape threshold must be positive, got {epsilon}")));
    }
    let dev = |t: f64, y: &[f64; 2]| {
        deviation_norm(&PhaseState::new(y[0], y[1]), t, reference).unwrap_or(f64::INFINITY)
    };
    integrate_observed(&rhs, [initial.r, initial.psi], tau0, horizon, cfg, |rec| {
        if rec.y[0] < 0.0 {
            return StepControl::Stop {
                status: TrajectoryStatus::ValidityViolation,
                time: None,
                state: None,
            };
        }
        if epsilon.is_finite() && dev(rec.t, rec.y) > epsilon {
            let (t_esc, y_esc) = bisect_crossing(
                |t, y| dev(t, y) - epsilon,
                rec.t_prev,
                rec.y_prev,
                rec.f_prev,
                rec.t,
                rec.y,
                rec.f,
            );
            return StepControl::Stop {
                status: TrajectoryStatus::Escaped,
                time: Some(t_esc),
                state: Some(y_esc),
            };
        }
        StepControl::Continue
    })
}

/// Bisects `g(t, y(t)) > 0` on one accepted step down to a 1e-6 bracket,
/// interpolating the state with the cubic Hermite polynomial. Returns the
/// first grid point above the threshold.
fn bisect_crossing<G>(
    g: G,
    t0: f64,
    y0: &[f64; 2],
    f0: &[f64; 2],
    t1: f64,
    y1: &[f64; 2],
    f1: &[f64; 2],
) -> (f64, [f64; 2])
where
    G: Fn(f64, &[f64; 2]) -> f64,
{
    let mut lo = t0;
    let mut hi = t1;
    let mut hi_y = *y1;
    // the step start may already sit above the threshold (e.g. the first
    // step after an instantaneous kick): report the step start then
    if g(t0, y0) > 0.0 {
        return (t0, *y0);
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let y_mid = hermite(t0, y0, f0, t1, y1, f1, mid);
        if g(mid, &y_mid) > 0.0 {
            hi = mid;
            hi_y = y_mid;
        } else {
            lo = mid;
        }
    }
    (hi, hi_y)
}

/// Integrates the transformed system about `reference`, optionally
/// stopping when `rho = sqrt(R^2 + Psi^2)` exceeds `rho_exit`.
pub fn integrate_transformed(
    params: &ModelParams,
    reference: &SeriesCoeffs,
    initial: TransformedState,
    tau0: f64,
    tau1: f64,
    rho_exit: Option<f64>,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let rhs = transformed_rhs(params, reference);
    match rho_exit {
        None => integrate(rhs, [initial.r, initial.psi], tau0, tau1, cfg),
        Some(rho_max) => integrate_observed(
            &rhs,
            [initial.r, initial.psi],
            tau0,
            tau1,
            cfg,
            |rec| {
                if rec.y[0].hypot(rec.y[1]) > rho_max {
                    let (t_esc, y_esc) = bisect_crossing(
                        |_, y: &[f64; 2]| y[0].hypot(y[1]) - rho_max,
                        rec.t_prev,
                        rec.y_prev,
                        rec.f_prev,
                        rec.t,
                        rec.y,
                        rec.f,
                    );
                    StepControl::Stop {
                        status: TrajectoryStatus::Escaped,
                        time: Some(t_esc),
                        state: Some(y_esc),
                    }
                } else {
                    StepControl::Continue
                }
            },
        ),
    }
}

/// Closure evaluating the transformed vector field (frames cached per call).
pub fn transformed_rhs<'a>(
    params: &'a ModelParams,
    reference: &'a SeriesCoeffs,
) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + 'a {
    move |tau, y| match Frame::new(tau, params, reference) {
        Ok(frame) => {
            let (dr, dpsi) = frame.vector_field(y[0], y[1]);
            [dr, dpsi]
        }
        Err(_) => [f64::NAN, f64::NAN],
    }
}

/// How a basin cell behaved by the end of the scan window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinClass {
    /// Amplitude locked onto the resonant ray with the phase near the
    /// stable branch root.
    Captured,
    Bounded,
    Failed,
}

/// Capture test: `r(tau_max) / (lambda tau_max)` inside the ratio window
/// and the final phase within `phase_window` of the stable branch root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureCriterion {
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    pub phase_window: f64,
}

impl Default for CaptureCriterion {
    fn default() -> Self {
        Self { ratio_lo: 0.8, ratio_hi: 1.2, phase_window: std::f64::consts::FRAC_PI_2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinCell {
    pub r0: f64,
    pub psi0: f64,
    pub class: BasinClass,
    pub r_final: f64,
}

/// Rectangular grid of initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinGrid {
    pub r_min: f64,
    pub r_max: f64,
    pub r_steps: usize,
    pub psi_min: f64,
    pub psi_max: f64,
    pub psi_steps: usize,
}

impl BasinGrid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.r_steps * self.psi_steps);
        for i in 0..self.r_steps {
            let r = if self.r_steps == 1 {
                self.r_min
            } else {
                self.r_min + (self.r_max - self.r_min) * i as f64 / (self.r_steps - 1) as f64
            };
            for j in 0..self.psi_steps {
                let psi = if self.psi_steps == 1 {
                    self.psi_min
                } else {
                    self.psi_min
                        + (self.psi_max - self.psi_min) * j as f64 / (self.psi_steps - 1) as f64
                };
                pts.push((r, psi));
            }
        }
        pts
    }
}

/// Classifies a single initial condition.
pub fn basin_classify(
    params: &ModelParams,
    r0: f64,
    psi0: f64,
    tau_init: f64,
    tau_max: f64,
    criterion: &CaptureCriterion,
    cfg: &IntegratorConfig,
) -> BasinCell {
    let rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, params);
    match integrate(rhs, [r0, psi0], tau_init, tau_max, cfg) {
        Ok(traj) if traj.status == TrajectoryStatus::Completed => {
            let [r, psi] = traj.last_state();
            let ratio = r / (params.lambda * tau_max);
            let phase_root = crate::asymptotics::Branch::Minus.phase_root(params.delta);
            let captured = ratio >= criterion.ratio_lo
                && ratio <= criterion.ratio_hi
                && (psi - phase_root).abs() < criterion.phase_window;
            BasinCell {
                r0,
                psi0,
                class: if captured { BasinClass::Captured } else { BasinClass::Bounded },
                r_final: r,
            }
        }
        Ok(traj) => BasinCell { r0, psi0, class: BasinClass::Failed, r_final: traj.last_state()[0] },
        Err(_) => BasinCell { r0, psi0, class: BasinClass::Failed, r_final: f64::NAN },
    }
}

/// Integrates every grid point and classifies it. Cells are independent
/// work items; the output order is the grid order regardless of the
/// worker count.
pub fn basin_scan(
    params: &ModelParams,
    grid: &BasinGrid,
    tau_init: f64,
    tau_max: f64,
    criterion: &CaptureCriterion,
    cfg: &IntegratorConfig,
) -> Vec<BasinCell> {
    grid.points()
        .par_iter()
        .map(|&(r0, psi0)| basin_classify(params, r0, psi0, tau_init, tau_max, criterion, cfg))
        .collect()
}

/// Least-squares exponential decay fit of `rho(tau)` over a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted exponent `l` in `rho ~ exp(-l tau)` (positive for decay).
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the linear fit in log space.
    pub residual: f64,
    pub samples: usize,
}

/// Fits `log rho` linearly in `tau` over `window` for a trajectory in
/// transformed coordinates.
pub fn decay_rate_fit(traj: &Trajectory, window: (f64, f64)) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for (t, y) in traj.times.iter().zip(&traj.states) {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        let rho = y[0].hypot(y[1]);
        if rho <= 0.0 {
            return Err(Error::Numerical(format!("nonpositive rho sample at tau = {t}")));
        }
        ts.push(*t);
        logs.push(rho.ln());
    }
    if ts.len() < 10 {
        return Err(Error::Numerical(format!(
            "decay fit needs at least 10 samples in the window, found {}",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let mean_t = ts.iter().sum::<f64>() / n;
    let mean_l = logs.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        sxx += (t - mean_t) * (t - mean_t);
        sxy += (t - mean_t) * (l - mean_l);
    }
    if sxx == 0.0 {
        return Err(Error::Numerical("degenerate window for decay fit".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_l - slope * mean_t;
    let mut ss = 0.0;
    for (t, l) in ts.iter().zip(&logs) {
        let resid = l - (intercept + slope * t);
        ss += resid * resid;
    }
    Ok(DecayFit {
        rate: -slope,
        intercept,
        residual: (ss / n).sqrt(),
        samples: ts.len(),
    })
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval_95(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // the bounds are exact at the extremes; keep them there despite rounding
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Configuration of a Monte Carlo escape experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub n_trials: usize,
    /// Perturbation size; also the jump-window width of the path spec.
    pub mu: f64,
    /// Horizon exponent; the run covers `(tau0, tau0 + tau0 mu^-kappa)`.
    pub kappa: f64,
    /// Escape threshold for the weighted deviation norm.
    pub epsilon: f64,
    pub tau0: f64,
    pub seed: u64,
    pub params: ModelParams,
    pub pert: RandomPertSpec,
    /// Truncation order of the reference series.
    pub series_order: usize,
    pub integrator: IntegratorConfig,
}

impl MonteCarloConfig {
    pub fn horizon(&self) -> f64 {
        self.tau0 + self.tau0 * self.mu.powf(-self.kappa)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Configuration("n_trials must be at least 1".into()));
        }
        if self.mu <= 0.0 || !self.mu.is_finite() {
            return Err(Error::Configuration("mu must be positive".into()));
        }
        if self.epsilon <= 0.0 || self.epsilon.is_nan() {
            return Err(Error::Configuration("epsilon must be positive".into()));
        }
        if self.tau0 <= 0.0 || !self.tau0.is_finite() {
            return Err(Error::Configuration("tau0 must be positive".into()));
        }
        self.pert.validate()?;
        let (a, b, c) = match &self.pert {
            RandomPertSpec::Zero => (0.0, 0.0, 0.0),
            RandomPertSpec::JumpTrain(_) => (0.0, 0.0, 1.0),
            RandomPertSpec::SingleJump { .. } => (0.0, 1.0, 1.0),
        };
        let theta = (a + 0.5f64).max(b).max(c);
        let kappa0 = if theta > 0.0 { 1.0 / theta } else { f64::INFINITY };
        if !(self.kappa > 0.0 && self.kappa < kappa0) {
            return Err(Error::Configuration(format!(
                "kappa must lie in (0, {kappa0}), got {}",
                self.kappa
            )));
        }
        if !self.horizon().is_finite() {
            return Err(Error::Configuration("horizon is not finite".into()));
        }
        self.integrator.validate()
    }

    /// Perturbation spec with the jump width tied to this run's `mu`.
    fn effective_pert(&self) -> RandomPertSpec {
        match &self.pert {
            RandomPertSpec::Zero => RandomPertSpec::Zero,
            RandomPertSpec::JumpTrain(s) => {
                let mut s = *s;
                s.mu = self.mu;
                RandomPertSpec::JumpTrain(s)
            }
            RandomPertSpec::SingleJump { omega_dist, jump_dist, .. } => RandomPertSpec::SingleJump {
                omega_dist: *omega_dist,
                jump_dist: *jump_dist,
                mu: self.mu,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n_trials: usize,
    pub n_escaped: usize,
    /// Trials that ended in a validity violation or step limit; counted
    /// separately from escapes.
    pub n_failed: usize,
    pub escape_prob: f64,
    pub wilson_ci_95: (f64, f64),
    pub horizon: f64,
    pub trial_seeds: Vec<u64>,
    pub escape_times: Vec<Option<f64>>,
}

/// Runs the Monte Carlo escape experiment: each trial draws a fresh path
/// from a per-trial substream seed, starts on the reference solution at
/// `tau0` and integrates the randomly perturbed system to the horizon.
/// Fully reproducible from the configuration, independent of the worker
/// count.
pub fn monte_carlo_escape(mc: &MonteCarloConfig) -> Result<MonteCarloReport> {
    mc.validate()?;
    let reference = crate::asymptotics::extend_coeffs(
        &mc.params,
        crate::asymptotics::Branch::Minus,
        mc.series_order,
    )?;
    let start = reference.eval(mc.tau0)?;
    let horizon = mc.horizon();
    let pert = mc.effective_pert();

    enum Trial {
        Escaped(f64),
        Completed,
        Failed,
    }

    let outcomes: Vec<(u64, Trial)> = (0..mc.n_trials)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(mc.seed, i as u64);
            let path = match pert.sample(seed) {
                Ok(p) => p,
                Err(_) => return (seed, Trial::Failed),
            };
            let params = mc.params;
            let rhs = move |tau: f64, y: &[f64; 2]| {
                let pv = path.values(tau);
                dynamics::rhs_perturbed_raw(y[0], y[1], tau, &params, &pv, 1.0)
            };
            match integrate_until_escape(
                rhs,
                start,
                mc.tau0,
                horizon,
                mc.epsilon,
                &reference,
                &mc.integrator,
            ) {
                Ok(traj) => match traj.status {
                    TrajectoryStatus::Escaped => (seed, Trial::Escaped(traj.escape_time.unwrap())),
                    TrajectoryStatus::Completed => (seed, Trial::Completed),
                    _ => (seed, Trial::Failed),
                },
                Err(_) => (seed, Trial::Failed),
            }
        })
        .collect();

    let mut n_escaped = 0;
    let mut n_failed = 0;
    let mut trial_seeds = Vec::with_capacity(mc.n_trials);
    let mut escape_times = Vec::with_capacity(mc.n_trials);
    for (seed, outcome) in outcomes {
        trial_seeds.push(seed);
        match outcome {
            Trial::Escaped(t) => {
                n_escaped += 1;
                escape_times.push(Some(t));
            }
            Trial::Completed => escape_times.push(None),
            Trial::Failed => {
                n_failed += 1;
                escape_times.push(None);
            }
        }
    }
    let escape_prob = n_escaped as f64 / mc.n_trials as f64;
    Ok(MonteCarloReport {
        n_trials: mc.n_trials,
        n_escaped,
        n_failed,
        escape_prob,
        wilson_ci_95: wilson_interval_95(n_escaped, mc.n_trials),
        horizon,
        trial_seeds,
        escape_times,
    })
}

/// Result of comparing the Duffing oscillator against its averaged model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuffingComparison {
    /// Supremum of `|envelope - predicted| / predicted` over the window.
    pub sup_rel_error: f64,
    /// Whether the slow amplitude locked onto the resonant ray and the
    /// oscillation energy grew.
    pub growth_captured: bool,
    pub env_initial: f64,
    pub env_final: f64,
    pub r_final: f64,
    pub compare_from_t: f64,
    pub compare_to_t: f64,
    /// Sampled rows `(t, envelope, predicted)` for export.
    pub rows: Vec<(f64, f64, f64)>,
}

/// Integrates the Duffing oscillator and its averaged model from the same
/// (mapped) initial data and compares the oscillation envelope against
/// `sqrt(kappa eps r(tau))`.
///
/// The raw amplitude `sqrt(x^2 + v^2)` is smoothed over one fast period
/// (window `2 pi` in `t`); the averaged model starts at `tau = 0.01` since
/// the slow system is posed for `tau > 0`, so the comparison window is
/// `t in [2 tau_init / eps, horizon]` less one smoothing half-window.
pub fn duffing_compare(
    dp: &crate::dynamics::DuffingParams,
    x0: f64,
    v0: f64,
    horizon_t: f64,
    cfg: &IntegratorConfig,
) -> Result<DuffingComparison> {
    let params = dp.averaged()?;
    if horizon_t <= 0.0 || !horizon_t.is_finite() {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let kappa_eps = dp.kappa() * dp.eps;

    // fast system
    let dp_owned = *dp;
    let duff_rhs = move |t: f64, y: &[f64; 2]| {
        let pump = 1.0 + dp_owned.eps * dp_owned.pump_phase(t).cos();
        [y[1], -dp_owned.beta * y[1] - pump * y[0] - dp_owned.gamma * y[0].powi(3)]
    };
    let fast = integrate(duff_rhs, [x0, v0], 0.0, horizon_t, cfg)?;
    if fast.status != TrajectoryStatus::Completed {
        return Err(Error::Numerical(format!("oscillator run ended with {:?}", fast.status)));
    }

    // averaged system from the mapped initial data
    let tau_init = 0.01f64.min(dp.eps * horizon_t / 20.0);
    let tau_end = dp.eps * horizon_t / 2.0;
    let r0 = (x0 * x0 + v0 * v0) / kappa_eps;
    let theta0 = (-v0).atan2(x0);
    let psi0 = 2.0 * theta0;
    let avg_rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &params);
    let slow = integrate(avg_rhs, [r0, psi0], tau_init, tau_end, cfg)?;
    if slow.status != TrajectoryStatus::Completed {
        return Err(Error::Numerical(format!("averaged run ended with {:?}", slow.status)));
    }

    // sample both on a uniform grid and smooth the raw amplitude over one
    // fast period
    let dt = std::f64::consts::PI / 40.0;
    let n = (horizon_t / dt).floor() as usize;
    let raw: Vec<f64> = (0..=n)
        .map(|i| {
            let t = i as f64 * dt;
            let y = fast.sample(&duff_rhs, t).expect("t inside the run");
            y[0].hypot(y[1])
        })
        .collect();
    let half = (std::f64::consts::PI / dt).round() as usize; // half window = pi
    let smooth = |i: usize| -> f64 {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n);
        raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
    };

    let t_from = 2.0 * tau_init / dp.eps;
    let t_to = horizon_t - 2.0 * std::f64::consts::PI;
    let mut sup_rel = 0.0f64;
    let mut rows = Vec::new();
    let stride = (n / 2000).max(1);
    let mut env_initial = None;
    let mut env_final = 0.0;
    for i in 0..=n {
        let t = i as f64 * dt;
        if t < t_from {
            continue;
        }
        let tau = (dp.eps * t / 2.0).max(tau_init);
        let r = slow.sample(&avg_rhs, tau).map(|y| y[0]).unwrap_or(f64::NAN);
        let predicted = (kappa_eps * r.max(0.0)).sqrt();
        let env = smooth(i);
        if env_initial.is_none() {
            env_initial = Some(env);
        }
        env_final = env;
        if t <= t_to && predicted > 0.0 {
            sup_rel = sup_rel.max((env - predicted).abs() / predicted);
        }
        if i % stride == 0 {
            rows.push((t, env, predicted));
        }
    }
    let r_final = slow.last_state()[0];
    let env_initial = env_initial.unwrap_or(0.0);
    let growth_captured =
        r_final >= 0.5 * params.lambda * tau_end && env_final >= 2.0 * env_initial.max(1e-300);
    Ok(DuffingComparison {
        sup_rel_error: sup_rel,
        growth_captured,
        env_initial,
        env_final,
        r_final,
        compare_from_t: t_from,
        compare_to_t: t_to,
        rows,
    })
}

/// Builds the right-hand side of an Example-class deterministic run.
pub fn deterministic_rhs<'a>(
    params: &'a ModelParams,
    pert: &'a DeterministicPert,
    mu: f64,
) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + 'a {
    move |tau, y| {
        let pv = pert.values(y[0], y[1], tau);
        dynamics::rhs_perturbed_raw(y[0], y[1], tau, params, &pv, mu)
    }
}

/// Builds the right-hand side of a realized random-path run.
pub fn random_rhs<'a>(
    params: &'a ModelParams,
    path: &'a RandomPertPath,
) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + 'a {
    move |tau, y| {
        let pv = path.values(tau);
        dynamics::rhs_perturbed_raw(y[0], y[1], tau, params, &pv, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{extend_coeffs, Branch};
    use crate::perturbations::{DistSpec, JumpTrainSpec};

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.5, 0.2).unwrap()
    }

    #[test]
    fn deviation_norm_values() {
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let rf = reference.eval(100.0).unwrap();
        assert_eq!(deviation_norm(&rf, 100.0, &reference).unwrap(), 0.0);
        let off = PhaseState::new(rf.r + 1.0, rf.psi);
        assert!((deviation_norm(&off, 100.0, &reference).unwrap() - 0.1).abs() < 1e-14);
        assert!(deviation_norm(&off, 0.0, &reference).is_err());

        // the lambda-weighted variant scales the amplitude part by
        // 1/sqrt(lambda)
        let p4 = ModelParams::new(4.0, 0.5, 0.2).unwrap();
        let ref4 = extend_coeffs(&p4, Branch::Minus, 1).unwrap();
        let rf4 = ref4.eval(100.0).unwrap();
        let off4 = PhaseState::new(rf4.r + 1.0, rf4.psi + 0.01);
        let plain = deviation_norm(&off4, 100.0, &ref4).unwrap();
        let scaled =
            deviation_norm_weighted(&off4, 100.0, &ref4, DeviationWeight::LambdaTau).unwrap();
        assert!((plain - 0.11).abs() < 1e-14, "got {plain}");
        assert!((scaled - 0.06).abs() < 1e-14, "got {scaled}");
    }

    #[test]
    fn initial_state_beyond_threshold_escapes_at_start() {
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &p);
        let rf = reference.eval(50.0).unwrap();
        let start = PhaseState::new(rf.r, rf.psi + 1.0);
        let traj = integrate_until_escape(
            rhs,
            start,
            50.0,
            100.0,
            0.5,
            &reference,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Escaped);
        assert_eq!(traj.escape_time, Some(50.0));
        // timestamps stay strictly increasing even for an immediate stop
        for w in traj.times.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn escape_threshold_must_be_positive() {
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &p);
        let err = integrate_until_escape(
            rhs,
            PhaseState::new(1.0, 0.0),
            1.0,
            10.0,
            0.0,
            &reference,
            &IntegratorConfig::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn negative_amplitude_flags_validity_violation() {
        // an aggressive negative amplitude perturbation pushes r below zero;
        // the run stops with the model-validity flag instead of clamping
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let rhs = |_t: f64, y: &[f64; 2]| [-10.0 * y[0].abs() - 1.0, 0.1 * y[1]];
        let traj = integrate_until_escape(
            rhs,
            PhaseState::new(0.5, 2.6),
            1.0,
            50.0,
            f64::INFINITY,
            &reference,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::ValidityViolation);
        assert!(traj.last_state()[0] < 0.0);
    }

    #[test]
    fn unperturbed_run_from_reference_stays() {
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 3).unwrap();
        let start = reference.eval(100.0).unwrap();
        let rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &p);
        let traj = integrate_until_escape(
            rhs,
            start,
            100.0,
            1000.0,
            0.1,
            &reference,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
    }

    #[test]
    fn infinite_threshold_always_completes() {
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let rhs = |t: f64, y: &[f64; 2]| dynamics::rhs_raw(y[0], y[1], t, &p);
        let traj = integrate_until_escape(
            rhs,
            PhaseState::new(5.0, 0.0),
            1.0,
            50.0,
            f64::INFINITY,
            &reference,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Completed);
    }

    #[test]
    fn escape_bisection_brackets_threshold() {
        // the constant-plus-ramp perturbation drifts the amplitude off the
        // reference until the weighted deviation crosses the threshold
        let p = params();
        let reference = extend_coeffs(&p, Branch::Minus, 3).unwrap();
        let pert = crate::perturbations::make_example1();
        let rhs = deterministic_rhs(&p, &pert, 0.1);
        let start = reference.eval(10.0).unwrap();
        let eps = 0.5;
        let traj = integrate_until_escape(
            rhs,
            start,
            10.0,
            1000.0,
            eps,
            &reference,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.status, TrajectoryStatus::Escaped);
        let t_esc = traj.escape_time.unwrap();
        let state = PhaseState::new(traj.last_state()[0], traj.last_state()[1]);
        let dev = deviation_norm(&state, t_esc, &reference).unwrap();
        assert!(dev > eps, "state at escape time must sit above the threshold, dev = {dev}");
        // just before the bracket the deviation was still below
        let before = traj.times[traj.times.len() - 2];
        assert!(t_esc - before <= 1.0, "escape bracketed within the step");
        let y_before = traj.states[traj.states.len() - 2];
        let dev_before =
            deviation_norm(&PhaseState::new(y_before[0], y_before[1]), before, &reference).unwrap();
        assert!(dev_before <= eps, "deviation before the crossing: {dev_before}");
    }

    #[test]
    fn basin_reference_points() {
        // the two phase-plane reference points at f = 0.2, delta = 0.5,
        // lambda = 1: (1.59, 0.59) locks onto the resonant ray, while
        // (0.35, 3.09) stays at bounded amplitude
        let p = params();
        let cfg = IntegratorConfig::default();
        let crit = CaptureCriterion::default();
        let a = basin_classify(&p, 1.59, 0.59, 0.01, 100.0, &crit, &cfg);
        assert_eq!(a.class, BasinClass::Captured, "r_final = {}", a.r_final);
        assert!((a.r_final / 100.0 - 1.0).abs() < 0.2);
        let b = basin_classify(&p, 0.35, 3.09, 0.01, 100.0, &crit, &cfg);
        assert_eq!(b.class, BasinClass::Bounded, "r_final = {}", b.r_final);
        // the invariant r-axis stays bounded
        let c = basin_classify(&p, 0.0, 1.0, 0.01, 100.0, &crit, &cfg);
        assert_eq!(c.class, BasinClass::Bounded);
        assert!(c.r_final.abs() < 1e-6);
    }

    #[test]
    fn basin_scan_preserves_grid_order() {
        let p = params();
        let grid = BasinGrid {
            r_min: 0.5,
            r_max: 2.0,
            r_steps: 2,
            psi_min: 0.0,
            psi_max: 3.0,
            psi_steps: 2,
        };
        let cells = basin_scan(
            &p,
            &grid,
            0.01,
            30.0,
            &CaptureCriterion::default(),
            &IntegratorConfig::default(),
        );
        let pts = grid.points();
        assert_eq!(cells.len(), pts.len());
        for (cell, (r0, psi0)) in cells.iter().zip(pts) {
            assert_eq!((cell.r0, cell.psi0), (r0, psi0));
        }
    }

    #[test]
    fn decay_fit_recovers_synthetic_exponential() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.5).collect();
        let states: Vec<[f64; 2]> =
            times.iter().map(|t| [(-0.05 * t).exp(), 0.0]).collect();
        let traj = Trajectory {
            times,
            states,
            status: TrajectoryStatus::Completed,
            escape_time: None,
        };
        let fit = decay_rate_fit(&traj, (0.0, 100.0)).unwrap();
        assert!((fit.rate - 0.05).abs() < 1e-6, "rate {}", fit.rate);
        assert!(fit.residual < 1e-10);
    }

    #[test]
    fn decay_fit_guards() {
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            states: vec![[1.0, 0.0], [0.5, 0.0], [0.25, 0.0]],
            status: TrajectoryStatus::Completed,
            escape_time: None,
        };
        assert!(decay_rate_fit(&traj, (0.0, 2.0)).is_err()); // too few samples
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut states: Vec<[f64; 2]> = times.iter().map(|t| [(-0.1 * t).exp(), 0.0]).collect();
        states[5] = [0.0, 0.0];
        let bad = Trajectory {
            times,
            states,
            status: TrajectoryStatus::Completed,
            escape_time: None,
        };
        assert!(decay_rate_fit(&bad, (0.0, 20.0)).is_err()); // nonpositive rho
    }

    #[test]
    fn wilson_interval_contains_point_estimate() {
        for (k, n) in [(0usize, 10usize), (1, 10), (5, 10), (10, 10), (25, 500)] {
            let (lo, hi) = wilson_interval_95(k, n);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi, "({k}, {n}): [{lo}, {hi}] vs {p}");
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
    }

    #[test]
    fn zero_perturbation_monte_carlo_never_escapes() {
        let mc = MonteCarloConfig {
            n_trials: 8,
            mu: 0.01,
            kappa: 0.5,
            epsilon: 0.1,
            tau0: 10.0,
            seed: 3,
            params: params(),
            pert: RandomPertSpec::Zero,
            series_order: 1,
            integrator: IntegratorConfig::default(),
        };
        let report = monte_carlo_escape(&mc).unwrap();
        assert_eq!(report.n_escaped, 0);
        assert_eq!(report.escape_prob, 0.0);
        assert_eq!(report.n_failed, 0);
        assert_eq!(report.trial_seeds.len(), 8);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let mc = MonteCarloConfig {
            n_trials: 16,
            mu: 0.5,
            kappa: 0.5,
            epsilon: 0.1,
            tau0: 8.0,
            seed: 42,
            params: params(),
            pert: RandomPertSpec::JumpTrain(JumpTrainSpec {
                n: 10,
                jump_dist: DistSpec::Uniform { lo: -0.5, hi: 0.5 },
                mu: 0.5,
            }),
            series_order: 1,
            integrator: IntegratorConfig::default(),
        };
        let a = monte_carlo_escape(&mc).unwrap();
        let b = monte_carlo_escape(&mc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_validates_kappa() {
        let mut mc = MonteCarloConfig {
            n_trials: 1,
            mu: 0.1,
            kappa: 1.5, // above kappa0 = 1 for the jump train class
            epsilon: 0.1,
            tau0: 10.0,
            seed: 0,
            params: params(),
            pert: RandomPertSpec::JumpTrain(JumpTrainSpec {
                n: 2,
                jump_dist: DistSpec::Constant { value: 0.1 },
                mu: 0.1,
            }),
            series_order: 1,
            integrator: IntegratorConfig::default(),
        };
        assert!(monte_carlo_escape(&mc).is_err());
        mc.kappa = 0.9;
        assert!(monte_carlo_escape(&mc).is_ok());
    }
}
