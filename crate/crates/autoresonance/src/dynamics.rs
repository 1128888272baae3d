//! Model parameters, state types and right-hand sides.
//!
//! The central object is the averaged system of primary parametric
//! resonance for the slow amplitude `r` and phase shift `psi`:
//!
//! ```text
//! dr/dtau   = r sin(psi) - delta r
//! dpsi/dtau = r - lambda tau + f cos(psi),        tau > 0,
//! ```
//!
//! together with its two perturbed variants (deterministic with a small
//! factor `mu`, and random with the smallness carried by the perturbation
//! class itself), the near-Hamiltonian form obtained by moving into a
//! frame attached to a resonant reference solution, and the full Duffing
//! oscillator the averaged system is derived from.

use serde::{Deserialize, Serialize};

use crate::asymptotics::SeriesCoeffs;
use crate::error::{Error, Result};
use crate::lyapunov;

/// Parameters of the averaged resonance system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Sweep-rate factor, `lambda > 0`.
    pub lambda: f64,
    /// Dissipation coefficient, `0 <= delta < 1`.
    pub delta: f64,
    /// Pumping factor, `f != 0`.
    pub f: f64,
}

impl ModelParams {
    pub fn new(lambda: f64, delta: f64, f: f64) -> Result<Self> {
        if !(lambda.is_finite() && delta.is_finite() && f.is_finite()) {
            return Err(Error::InvalidInput("non-finite model parameter".into()));
        }
        if lambda <= 0.0 {
            return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Domain(format!("delta must lie in [0, 1), got {delta}")));
        }
        if f == 0.0 {
            return Err(Error::Domain("pumping factor f must be nonzero".into()));
        }
        Ok(Self { lambda, delta, f })
    }

    /// `sigma = sqrt(1 - delta^2)`; lies in (0, 1] for `delta` in [0, 1).
    pub fn sigma(&self) -> f64 {
        (1.0 - self.delta * self.delta).sqrt()
    }

    /// Dissipative decay factor `m = delta f / sqrt(lambda)`.
    ///
    /// Positive exactly when `f > 0` and `delta > 0`.
    pub fn m(&self) -> f64 {
        self.delta * self.f / self.lambda.sqrt()
    }
}

/// State of the averaged system: slow amplitude (energy) and phase shift.
///
/// The phase is stored unwrapped (no mod-2pi reduction) so that phase
/// deviations from a reference solution are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub r: f64,
    pub psi: f64,
}

impl PhaseState {
    pub fn new(r: f64, psi: f64) -> Self {
        Self { r, psi }
    }

    pub fn is_finite(&self) -> bool {
        self.r.is_finite() && self.psi.is_finite()
    }
}

/// State in the frame attached to a resonant reference solution:
/// `r = R_ref(tau) + sqrt(lambda tau) * R`, `psi = Psi_ref(tau) + Psi`.
///
/// `r` is the rescaled amplitude deviation `R`, `psi` the phase
/// deviation `Psi`; the origin corresponds to exact tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedState {
    pub r: f64,
    pub psi: f64,
}

impl TransformedState {
    pub fn new(r: f64, psi: f64) -> Self {
        Self { r, psi }
    }

    /// Distance from the tracking equilibrium, `rho = sqrt(R^2 + Psi^2)`.
    pub fn rho(&self) -> f64 {
        self.r.hypot(self.psi)
    }
}

/// Parameters of the parametrically driven Duffing oscillator
/// `x'' + beta x' + (1 + eps cos(2t + alpha t^2)) x + gamma x^3 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    /// Damping coefficient, `beta >= 0`.
    pub beta: f64,
    /// Cubic stiffness, `gamma > 0`.
    pub gamma: f64,
    /// Pump amplitude, `0 < eps << 1`.
    pub eps: f64,
    /// Chirp rate of the pump frequency, `alpha > 0`.
    pub alpha: f64,
}

impl DuffingParams {
    pub fn new(beta: f64, gamma: f64, eps: f64, alpha: f64) -> Result<Self> {
        if ![beta, gamma, eps, alpha].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Duffing parameter".into()));
        }
        if beta < 0.0 {
            return Err(Error::Domain("damping beta must be nonnegative".into()));
        }
        if gamma <= 0.0 {
            return Err(Error::Domain("cubic stiffness gamma must be positive".into()));
        }
        if !(0.0 < eps && eps < 1.0) {
            return Err(Error::Domain(format!("pump amplitude eps must lie in (0, 1), got {eps}")));
        }
        if alpha <= 0.0 {
            return Err(Error::Domain("chirp rate alpha must be positive".into()));
        }
        Ok(Self { beta, gamma, eps, alpha })
    }

    /// Averaging map to the slow system: `lambda = 8 alpha / eps^2`,
    /// `delta = 2 beta / eps`, `f = 1`. Fails when the resulting
    /// dissipation leaves [0, 1), i.e. when no autoresonant branch exists.
    pub fn averaged(&self) -> Result<ModelParams> {
        ModelParams::new(8.0 * self.alpha / (self.eps * self.eps), 2.0 * self.beta / self.eps, 1.0)
    }

    /// Envelope factor `kappa = 2 / (3 gamma)`.
    pub fn kappa(&self) -> f64 {
        2.0 / (3.0 * self.gamma)
    }

    /// Pump phase `phi0(t) = 2t + alpha t^2`.
    pub fn pump_phase(&self, t: f64) -> f64 {
        2.0 * t + self.alpha * t * t
    }
}

/// Pointwise values of the perturbation triple `(xi, eta, zeta)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationValues {
    pub xi: f64,
    pub eta: f64,
    pub zeta: f64,
}

impl PerturbationValues {
    pub fn new(xi: f64, eta: f64, zeta: f64) -> Self {
        Self { xi, eta, zeta }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.xi.is_finite() && self.eta.is_finite() && self.zeta.is_finite()
    }
}

#[inline]
pub(crate) fn rhs_raw(r: f64, psi: f64, tau: f64, p: &ModelParams) -> [f64; 2] {
    [r * psi.sin() - p.delta * r, r - p.lambda * tau + p.f * psi.cos()]
}

#[inline]
pub(crate) fn rhs_perturbed_raw(
    r: f64,
    psi: f64,
    tau: f64,
    p: &ModelParams,
    pv: &PerturbationValues,
    mu: f64,
) -> [f64; 2] {
    [
        (1.0 + mu * pv.xi) * r * psi.sin() - p.delta * r,
        r - p.lambda * tau + mu * pv.zeta + (p.f + mu * pv.eta) * psi.cos(),
    ]
}

fn check_eval_inputs(state: &PhaseState, tau: f64) -> Result<()> {
    if !state.is_finite() || !tau.is_finite() {
        return Err(Error::InvalidInput("non-finite state or time".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// Right-hand side of the unperturbed averaged system.
pub fn rhs_unperturbed(state: &PhaseState, tau: f64, params: &ModelParams) -> Result<(f64, f64)> {
    check_eval_inputs(state, tau)?;
    let [dr, dpsi] = rhs_raw(state.r, state.psi, tau, params);
    Ok((dr, dpsi))
}

/// Right-hand side of the deterministically perturbed system
/// `dr = (1 + mu xi) r sin(psi) - delta r`,
/// `dpsi = r - lambda tau + mu zeta + (f + mu eta) cos(psi)`.
///
/// With `mu = 0` this reduces exactly to [`rhs_unperturbed`].
pub fn rhs_perturbed(
    state: &PhaseState,
    tau: f64,
    params: &ModelParams,
    pv: &PerturbationValues,
    mu: f64,
) -> Result<(f64, f64)> {
    check_eval_inputs(state, tau)?;
    if !pv.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidInput("non-finite perturbation values".into()));
    }
    if mu < 0.0 {
        return Err(Error::Domain("perturbation parameter mu must be nonnegative".into()));
    }
    let [dr, dpsi] = rhs_perturbed_raw(state.r, state.psi, tau, params, pv, mu);
    Ok((dr, dpsi))
}

/// Right-hand side of the randomly perturbed system. The perturbations
/// enter without an explicit `mu` factor; smallness is carried by the
/// moving-average bound of the perturbation class.
pub fn rhs_random(
    state: &PhaseState,
    tau: f64,
    params: &ModelParams,
    pv: &PerturbationValues,
) -> Result<(f64, f64)> {
    check_eval_inputs(state, tau)?;
    if !pv.is_finite() {
        return Err(Error::InvalidInput("non-finite perturbation values".into()));
    }
    let [dr, dpsi] = rhs_perturbed_raw(state.r, state.psi, tau, params, pv, 1.0);
    Ok((dr, dpsi))
}

/// Change of variables into the frame of the reference solution:
/// `R = (r - R_ref(tau)) / sqrt(lambda tau)`, `Psi = psi - Psi_ref(tau)`.
pub fn to_transformed(
    state: &PhaseState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<TransformedState> {
    check_eval_inputs(state, tau)?;
    let rf = reference.eval(tau)?;
    let scale = (params.lambda * tau).sqrt();
    Ok(TransformedState::new((state.r - rf.r) / scale, state.psi - rf.psi))
}

/// Inverse of [`to_transformed`].
pub fn from_transformed(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<PhaseState> {
    if !tau.is_finite() || !tstate.r.is_finite() || !tstate.psi.is_finite() {
        return Err(Error::InvalidInput("non-finite state or time".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let rf = reference.eval(tau)?;
    let scale = (params.lambda * tau).sqrt();
    Ok(PhaseState::new(rf.r + scale * tstate.r, rf.psi + tstate.psi))
}

/// Right-hand side of the near-Hamiltonian system in the reference frame:
/// `(dR/dtau, dPsi/dtau) = sqrt(lambda tau) * (-dH/dPsi + F, dH/dR)`.
///
/// Agrees with the pushforward of [`rhs_unperturbed`] through the change
/// of variables up to the truncation error of the reference series.
pub fn rhs_transformed(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<(f64, f64)> {
    if !tau.is_finite() || !tstate.r.is_finite() || !tstate.psi.is_finite() {
        return Err(Error::InvalidInput("non-finite state or time".into()));
    }
    if tau <= 0.0 {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let frame = lyapunov::Frame::new(tau, params, reference)?;
    Ok(frame.vector_field(tstate.r, tstate.psi))
}

/// Right-hand side of the Duffing oscillator, optionally with pump
/// amplitude and phase perturbations `(a(t), phi(t))` of strength `mu`:
/// returns `(v, -beta v - (1 + eps (1 + mu a) cos(phi0 + mu phi)) x - gamma x^3)`.
pub fn duffing_rhs(
    x: f64,
    v: f64,
    t: f64,
    dp: &DuffingParams,
    mu: f64,
    pert: Option<(f64, f64)>,
) -> Result<(f64, f64)> {
    if ![x, v, t, mu].iter().all(|q| q.is_finite()) {
        return Err(Error::InvalidInput("non-finite Duffing input".into()));
    }
    let (a, phi) = pert.unwrap_or((0.0, 0.0));
    if !a.is_finite() || !phi.is_finite() {
        return Err(Error::InvalidInput("non-finite Duffing perturbation".into()));
    }
    let pump = 1.0 + dp.eps * (1.0 + mu * a) * (dp.pump_phase(t) + mu * phi).cos();
    Ok((v, -dp.beta * v - pump * x - dp.gamma * x * x * x))
}

/// Oscillation amplitude predicted by the averaged model,
/// `sqrt(kappa eps r)` with `kappa = 2 / (3 gamma)`.
pub fn duffing_envelope(r: f64, dp: &DuffingParams) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::InvalidInput("non-finite amplitude".into()));
    }
    if r < 0.0 {
        return Err(Error::Domain(format!("slow amplitude must be nonnegative, got {r}")));
    }
    Ok((dp.kappa() * dp.eps * r).sqrt())
}
