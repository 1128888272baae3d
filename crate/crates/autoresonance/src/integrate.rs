//! Runge-Kutta integration for the two-dimensional model systems.
//!
//! The default method is the Dormand-Prince 5(4) embedded pair with
//! proportional step-size control; a fixed-step classical RK4 is available
//! for comparison runs. Dense output between accepted steps uses cubic
//! Hermite interpolation on the step endpoints, which is what the
//! escape-time bisection operates on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-size floor; shrinking below this aborts with a stiffness error.
const H_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedRk4,
    EmbeddedRk45,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::EmbeddedRk45,
            abs_tol: 1e-12,
            rel_tol: 1e-9,
            h_init: 1e-3,
            h_max: 1.0,
            max_steps: 20_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Configuration("integrator tolerances must be positive".into()));
        }
        if !(self.h_init > 0.0 && self.h_max > 0.0) {
            return Err(Error::Configuration("integrator step sizes must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Configuration("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    Escaped,
    ValidityViolation,
    StepLimit,
}

/// Time-stamped output of one integration run. States are recorded at
/// every accepted step; `times` is strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
    pub status: TrajectoryStatus,
    pub escape_time: Option<f64>,
}

impl Trajectory {
    pub fn last_state(&self) -> [f64; 2] {
        *self.states.last().expect("trajectory holds the initial state")
    }

    /// Dense evaluation at `t` by cubic Hermite interpolation on the
    /// bracketing accepted step (derivatives recomputed from `rhs`).
    pub fn sample<F>(&self, rhs: &F, t: f64) -> Option<[f64; 2]>
    where
        F: Fn(f64, &[f64; 2]) -> [f64; 2],
    {
        let n = self.times.len();
        if n == 0 || t < self.times[0] || t > self.times[n - 1] {
            return None;
        }
        let idx = match self.times.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => return Some(self.states[i]),
            Err(i) => i - 1,
        };
        let (t0, y0) = (self.times[idx], self.states[idx]);
        let (t1, y1) = (self.times[idx + 1], self.states[idx + 1]);
        let f0 = rhs(t0, &y0);
        let f1 = rhs(t1, &y1);
        Some(hermite(t0, &y0, &f0, t1, &y1, &f1, t))
    }
}

/// Cubic Hermite interpolation on one step.
pub fn hermite(
    t0: f64,
    y0: &[f64; 2],
    f0: &[f64; 2],
    t1: f64,
    y1: &[f64; 2],
    f1: &[f64; 2],
    t: f64,
) -> [f64; 2] {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    [
        h00 * y0[0] + h10 * h * f0[0] + h01 * y1[0] + h11 * h * f1[0],
        h00 * y0[1] + h10 * h * f0[1] + h01 * y1[1] + h11 * h * f1[1],
    ]
}

/// One accepted step handed to the step observer.
pub struct StepRecord<'a> {
    pub t_prev: f64,
    pub y_prev: &'a [f64; 2],
    pub f_prev: &'a [f64; 2],
    pub t: f64,
    pub y: &'a [f64; 2],
    pub f: &'a [f64; 2],
}

/// Observer verdict after an accepted step.
pub enum StepControl {
    Continue,
    /// Terminate with the given status; `time`/`state` override the step
    /// endpoint when the stop point was located inside the step.
    Stop { status: TrajectoryStatus, time: Option<f64>, state: Option<[f64; 2]> },
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1 > t0`.
pub fn integrate<F>(
    rhs: F,
    initial: [f64; 2],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
{
    integrate_observed(rhs, initial, t0, t1, cfg, |_| StepControl::Continue)
}

/// As [`integrate`], invoking `observe` after every accepted step; the
/// observer can terminate the run (escape detection, validity checks).
pub fn integrate_observed<F, C>(
    rhs: F,
    initial: [f64; 2],
    t0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
    mut observe: C,
) -> Result<Trajectory>
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
    C: FnMut(&StepRecord) -> StepControl,
{
    cfg.validate()?;
    if !(t0.is_finite() && t1.is_finite()) || !initial.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("non-finite integration bounds or state".into()));
    }
    if t0 >= t1 {
        return Err(Error::Domain(format!("integration requires t0 < t1, got [{t0}, {t1}]")));
    }

    let mut times = Vec::with_capacity(1024);
    let mut states = Vec::with_capacity(1024);
    let mut t = t0;
    let mut y = initial;
    let mut f = rhs(t, &y);
    times.push(t);
    states.push(y);

    let mut h = cfg.h_init.min(cfg.h_max).min(t1 - t0);
    let mut status = TrajectoryStatus::StepLimit;
    let mut escape_time = None;

    let mut steps = 0usize;
    while steps < cfg.max_steps {
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }

        let (y_new, f_new, h_next, accepted) = match cfg.method {
            Method::FixedRk4 => {
                let y_new = rk4_step(&rhs, t, &y, h);
                let f_new = rhs(t + h, &y_new);
                (y_new, f_new, cfg.h_init, true)
            }
            Method::EmbeddedRk45 => {
                let (y5, err) = dopri5_step(&rhs, t, &y, &f, h);
                let tol0 = cfg.abs_tol + cfg.rel_tol * y[0].abs().max(y5[0].abs());
                let tol1 = cfg.abs_tol + cfg.rel_tol * y[1].abs().max(y5[1].abs());
                let err_norm = (0.5 * ((err[0] / tol0).powi(2) + (err[1] / tol1).powi(2))).sqrt();
                let accepted = err_norm <= 1.0;
                let factor = if err_norm > 0.0 {
                    (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                let h_next = (h * factor).min(cfg.h_max);
                if accepted {
                    let f_new = rhs(t + h, &y5);
                    (y5, f_new, h_next, true)
                } else {
                    ([0.0; 2], [0.0; 2], h_next, false)
                }
            }
        };

        if !accepted {
            h = h_next;
            if h < H_MIN {
                return Err(Error::Numerical(format!(
                    "step size underflow at t = {t}; the problem is too stiff for this method"
                )));
            }
            continue;
        }

        if !y_new.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("state became non-finite at t = {t}")));
        }

        let record = StepRecord {
            t_prev: t,
            y_prev: &y,
            f_prev: &f,
            t: t + h,
            y: &y_new,
            f: &f_new,
        };
        let control = observe(&record);

        t += h;
        y = y_new;
        f = f_new;

        match control {
            StepControl::Continue => {
                times.push(t);
                states.push(y);
            }
            StepControl::Stop { status: s, time, state } => {
                let stop_t = time.unwrap_or(t);
                let stop_y = state.unwrap_or(y);
                // a stop located at the start of the very first step (e.g.
                // an initial state already beyond the threshold) must not
                // duplicate the initial timestamp
                if stop_t > *times.last().expect("initial point present") {
                    times.push(stop_t);
                    states.push(stop_y);
                } else {
                    *states.last_mut().expect("initial point present") = stop_y;
                }
                status = s;
                if s == TrajectoryStatus::Escaped {
                    escape_time = Some(stop_t);
                }
                return Ok(Trajectory { times, states, status, escape_time });
            }
        }

        if last {
            status = TrajectoryStatus::Completed;
            break;
        }
        h = h_next.min(t1 - t).max(H_MIN);
    }

    Ok(Trajectory { times, states, status, escape_time })
}

fn rk4_step<F>(rhs: &F, t: f64, y: &[f64; 2], h: f64) -> [f64; 2]
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &[y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
    let k3 = rhs(t + 0.5 * h, &[y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
    let k4 = rhs(t + h, &[y[0] + h * k3[0], y[1] + h * k3[1]]);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

// Dormand-Prince 5(4) coefficients.
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] =
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0];
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

fn dopri5_step<F>(rhs: &F, t: f64, y: &[f64; 2], f0: &[f64; 2], h: f64) -> ([f64; 2], [f64; 2])
where
    F: Fn(f64, &[f64; 2]) -> [f64; 2],
{
    let k1 = *f0;
    let y2 = [y[0] + h * A2[0] * k1[0], y[1] + h * A2[0] * k1[1]];
    let k2 = rhs(t + h / 5.0, &y2);
    let y3 = [
        y[0] + h * (A3[0] * k1[0] + A3[1] * k2[0]),
        y[1] + h * (A3[0] * k1[1] + A3[1] * k2[1]),
    ];
    let k3 = rhs(t + 3.0 * h / 10.0, &y3);
    let y4 = [
        y[0] + h * (A4[0] * k1[0] + A4[1] * k2[0] + A4[2] * k3[0]),
        y[1] + h * (A4[0] * k1[1] + A4[1] * k2[1] + A4[2] * k3[1]),
    ];
    let k4 = rhs(t + 4.0 * h / 5.0, &y4);
    let y5 = [
        y[0] + h * (A5[0] * k1[0] + A5[1] * k2[0] + A5[2] * k3[0] + A5[3] * k4[0]),
        y[1] + h * (A5[0] * k1[1] + A5[1] * k2[1] + A5[2] * k3[1] + A5[3] * k4[1]),
    ];
    let k5 = rhs(t + 8.0 * h / 9.0, &y5);
    let y6 = [
        y[0] + h * (A6[0] * k1[0] + A6[1] * k2[0] + A6[2] * k3[0] + A6[3] * k4[0] + A6[4] * k5[0]),
        y[1] + h * (A6[0] * k1[1] + A6[1] * k2[1] + A6[2] * k3[1] + A6[3] * k4[1] + A6[4] * k5[1]),
    ];
    let k6 = rhs(t + h, &y6);
    let y_new = [
        y[0] + h * (B[0] * k1[0] + B[2] * k3[0] + B[3] * k4[0] + B[4] * k5[0] + B[5] * k6[0]),
        y[1] + h * (B[0] * k1[1] + B[2] * k3[1] + B[3] * k4[1] + B[4] * k5[1] + B[5] * k6[1]),
    ];
    let k7 = rhs(t + h, &y_new);
    let err = [
        h * (E[0] * k1[0] + E[2] * k3[0] + E[3] * k4[0] + E[4] * k5[0] + E[5] * k6[0] + E[6] * k7[0]),
        h * (E[0] * k1[1] + E[2] * k3[1] + E[3] * k4[1] + E[4] * k5[1] + E[5] * k6[1] + E[6] * k7[1]),
    ];
    (y_new, err)
}
