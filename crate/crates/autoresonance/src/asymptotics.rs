//! Power-series asymptotics of the autoresonant solutions.
//!
//! For `0 < delta < 1` the averaged system has two families of resonant
//! solutions with growing energy,
//!
//! ```text
//! R(tau)   = lambda tau + sum_j r_j tau^-j,
//! Psi(tau) = sum_j psi_j tau^-j,
//! ```
//!
//! one for each root of `sin(psi_0) = delta`. Substituting the series and
//! matching powers of `1/tau` yields the coefficients order by order; every
//! order reduces to a 2x2 linear solve whose matrix is singular only at the
//! `delta = 1` degeneracy. The leading coefficients have closed forms
//! `psi_1 = 1/cos(psi_0)`, `r_0 = -f cos(psi_0)`, `r_1 = f tan(psi_0)`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, PhaseState};
use crate::error::{Error, Result};

/// Beyond this order the composition cost and coefficient conditioning
/// grow without downstream benefit.
pub const MAX_ORDER: usize = 8;

/// Coefficient magnitude that triggers the conditioning flag (signals
/// proximity to the delta -> 1 degeneracy).
const CONDITIONING_LIMIT: f64 = 1e8;

/// Which root of `sin(psi_0) = delta` the series is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `psi_0 = arcsin(delta)`, the unstable family.
    Plus,
    /// `psi_0 = pi - arcsin(delta)`, the family tracked by captured solutions.
    Minus,
}

impl Branch {
    pub fn phase_root(&self, delta: f64) -> f64 {
        match self {
            Branch::Plus => delta.asin(),
            Branch::Minus => std::f64::consts::PI - delta.asin(),
        }
    }
}

/// Truncated coefficient set of one asymptotic branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCoeffs {
    pub branch: Branch,
    /// Truncation order `J`; coefficient lists hold entries `0..=J`.
    pub order: usize,
    pub r_coeffs: Vec<f64>,
    pub psi_coeffs: Vec<f64>,
    pub params: ModelParams,
    /// Set when some coefficient exceeds 1e8 in magnitude.
    pub ill_conditioned: bool,
}

impl SeriesCoeffs {
    /// Evaluates `(R(tau), Psi(tau))` by Horner recursion in `1/tau`.
    pub fn eval(&self, tau: f64) -> Result<PhaseState> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Domain(format!("series evaluation requires tau > 0, got {tau}")));
        }
        let u = 1.0 / tau;
        Ok(PhaseState::new(
            self.params.lambda * tau + horner(&self.r_coeffs, u),
            horner(&self.psi_coeffs, u),
        ))
    }

    /// Evaluates `(R'(tau), Psi'(tau))` of the truncated series.
    pub fn eval_derivative(&self, tau: f64) -> Result<(f64, f64)> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Domain(format!("series evaluation requires tau > 0, got {tau}")));
        }
        let u = 1.0 / tau;
        Ok((
            self.params.lambda - horner_derivative_tail(&self.r_coeffs, u),
            -horner_derivative_tail(&self.psi_coeffs, u),
        ))
    }

    /// Drops coefficients above `order`, yielding the lower-order series
    /// bit-for-bit (the recurrence is triangular).
    pub fn truncated(&self, order: usize) -> SeriesCoeffs {
        let order = order.min(self.order);
        let r_coeffs: Vec<f64> = self.r_coeffs[..=order].to_vec();
        let psi_coeffs: Vec<f64> = self.psi_coeffs[..=order].to_vec();
        let ill_conditioned = r_coeffs
            .iter()
            .chain(psi_coeffs.iter())
            .any(|c| c.abs() > CONDITIONING_LIMIT);
        SeriesCoeffs {
            branch: self.branch,
            order,
            r_coeffs,
            psi_coeffs,
            params: self.params,
            ill_conditioned,
        }
    }
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// `sum_j j c_j u^{j+1}` for the tail `j >= 1`.
fn horner_derivative_tail(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for j in (1..coeffs.len()).rev() {
        acc = acc * u + j as f64 * coeffs[j];
    }
    acc * u * u
}

/// `sum_{j>=1} c_j u^j`, the series with the constant term removed.
fn horner_tail(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for j in (1..coeffs.len()).rev() {
        acc = acc * u + coeffs[j];
    }
    acc * u
}

fn require_open_delta(params: &ModelParams) -> Result<()> {
    if params.delta <= 0.0 || params.delta >= 1.0 {
        return Err(Error::Domain(format!(
            "two distinct phase roots require 0 < delta < 1, got {}",
            params.delta
        )));
    }
    Ok(())
}

/// Closed-form leading coefficients `(psi_0, r_0, psi_1, r_1)` of a branch.
pub fn leading_coeffs(params: &ModelParams, branch: Branch) -> Result<(f64, f64, f64, f64)> {
    require_open_delta(params)?;
    let psi0 = branch.phase_root(params.delta);
    let c0 = psi0.cos();
    Ok((psi0, -params.f * c0, 1.0 / c0, params.f * psi0.tan()))
}

/// Solves `m x = b` for a 2x2 system.
fn solve2(m: [[f64; 2]; 2], b: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return Err(Error::DegenerateParameters(
            "order-matching system is singular (cos(psi_0) = 0, i.e. delta = 1)".into(),
        ));
    }
    Ok([
        (b[0] * m[1][1] - m[0][1] * b[1]) / det,
        (m[0][0] * b[1] - b[0] * m[1][0]) / det,
    ])
}

/// `sin` and `cos` of the correction series `Delta(u) = sum_{j>=1} d_j u^j`,
/// composed through order `n` by the standard derivative recurrence.
fn sin_cos_series(delta_coeffs: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; n + 1];
    let mut c = vec![0.0; n + 1];
    c[0] = 1.0;
    for k in 1..=n {
        let mut ds = 0.0;
        let mut dc = 0.0;
        for i in 1..=k {
            let d = delta_coeffs.get(i).copied().unwrap_or(0.0);
            if d != 0.0 {
                ds += i as f64 * d * c[k - i];
                dc += i as f64 * d * s[k - i];
            }
        }
        s[k] = ds / k as f64;
        c[k] = -dc / k as f64;
    }
    (s, c)
}

/// Computes the branch coefficients through order `J` by power matching.
///
/// Order `j` determines `(r_j, psi_j)` from a 2x2 solve: the amplitude
/// equation at order `j - 1` fixes `psi_j`, the phase equation at order
/// `j` then fixes `r_j`; both right-hand sides involve only lower-order
/// coefficients through the composed `sin`/`cos` series of the phase
/// correction.
pub fn extend_coeffs(params: &ModelParams, branch: Branch, order: usize) -> Result<SeriesCoeffs> {
    require_open_delta(params)?;
    if order > MAX_ORDER {
        return Err(Error::Domain(format!(
            "series order {order} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    let lam = params.lambda;
    let f = params.f;
    let psi0 = branch.phase_root(params.delta);
    let (s0, c0) = psi0.sin_cos();

    let mut r = vec![-f * c0];
    let mut psi = vec![psi0];

    for j in 1..=order {
        // correction series with the unknown psi_j set to zero
        let mut delta_hat = vec![0.0; j + 1];
        delta_hat[1..j].copy_from_slice(&psi[1..j]);
        let (sd, cd) = sin_cos_series(&delta_hat, j);
        // sin(Psi) and cos(Psi) coefficients excluding the psi_j part;
        // psi_j enters s_j as +cos(psi0) psi_j and c_j as -sin(psi0) psi_j
        let s: Vec<f64> = (0..=j).map(|k| s0 * cd[k] + c0 * sd[k]).collect();
        let c_hat_j = c0 * cd[j] - s0 * sd[j];

        // amplitude equation at order j-1
        let mut a = if j == 1 { lam } else { 0.0 };
        if j >= 3 {
            a -= (j - 2) as f64 * r[j - 2];
        }
        a -= lam * s[j];
        for k in 1..j {
            a -= r[j - 1 - k] * s[k];
        }
        // phase equation at order j
        let mut b = -f * c_hat_j;
        if j >= 2 {
            b -= (j - 1) as f64 * psi[j - 1];
        }

        let [r_j, psi_j] = solve2([[0.0, lam * c0], [1.0, -f * s0]], [a, b])?;
        r.push(r_j);
        psi.push(psi_j);
    }

    let ill_conditioned = r.iter().chain(psi.iter()).any(|c| c.abs() > CONDITIONING_LIMIT);
    Ok(SeriesCoeffs {
        branch,
        order,
        r_coeffs: r,
        psi_coeffs: psi,
        params: *params,
        ill_conditioned,
    })
}

/// Evaluates the reference solution; alias for [`SeriesCoeffs::eval`].
pub fn eval_reference(series: &SeriesCoeffs, tau: f64) -> Result<PhaseState> {
    series.eval(tau)
}

/// Defect of the truncated series in the averaged system: the derivative
/// of the series minus the right-hand side evaluated on it, i.e.
/// `(R' - [R sin(Psi) - delta R], Psi' - [R - lambda tau + f cos(Psi)])`.
///
/// The expression is rearranged so that the analytically cancelling parts
/// cancel exactly in floating point (the phase component decays like
/// `tau^-(J+1)` and would otherwise drown in rounding noise of the
/// `r - lambda tau` subtraction at large `tau`).
pub fn residual(series: &SeriesCoeffs, tau: f64) -> Result<(f64, f64)> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::Domain(format!("residual requires tau > 0, got {tau}")));
    }
    let p = &series.params;
    let u = 1.0 / tau;
    let psi0 = series.psi_coeffs[0];
    let r0 = series.r_coeffs[0];
    let (s0, c0) = psi0.sin_cos();

    // phase correction x = Psi - psi_0 and amplitude tail R - lambda tau - r_0
    let x = horner_tail(&series.psi_coeffs, u);
    let r_tail = horner_tail(&series.r_coeffs, u);
    // cos(x) - 1 without cancellation
    let cos_x_m1 = -2.0 * (0.5 * x).sin().powi(2);
    let sin_x = x.sin();

    // sin(Psi) - delta = cos(psi0) sin(x) - sin(psi0) (1 - cos(x)) + (sin(psi0) - delta)
    let sin_psi_minus_delta = c0 * sin_x + s0 * cos_x_m1 + (s0 - p.delta);
    let r_full = p.lambda * tau + r0 + r_tail;
    let res_r = (p.lambda - horner_derivative_tail(&series.r_coeffs, u)) - r_full * sin_psi_minus_delta;

    // R - lambda tau + f cos(Psi)
    //   = r_tail + f [cos(psi0)(cos(x) - 1) - sin(psi0) sin(x)] + (r_0 + f cos(psi0)),
    // and r_0 is stored as -f cos(psi0), so the last bracket vanishes exactly.
    let rhs_psi = r_tail + p.f * (c0 * cos_x_m1 - s0 * sin_x) + (r0 + p.f * c0);
    let res_psi = -horner_derivative_tail(&series.psi_coeffs, u) - rhs_psi;
    Ok((res_r, res_psi))
}
