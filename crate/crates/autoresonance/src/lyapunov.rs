//! Lyapunov analysis of the autoresonant tracking equilibrium.
//!
//! In the frame of a resonant reference solution the averaged system is
//! near-Hamiltonian,
//!
//! ```text
//! dR/dtau   = sqrt(lambda tau) (-dH/dPsi + F),
//! dPsi/dtau = sqrt(lambda tau)   dH/dR,
//! ```
//!
//! with `H` quadratic near the origin, `H = R^2/2 + sigma Psi^2/2 + ...`,
//! and a non-Hamiltonian part `F` that carries the dissipation. The
//! Lyapunov function `V = H + (m/2) R Psi tau^-1/2`, `m = delta f /
//! sqrt(lambda)`, satisfies a two-sided quadratic sandwich and a decay
//! inequality on domains `{rho < rho*, tau > tau*}`; this module evaluates
//! the closed forms, their analytic partial derivatives, and certifies the
//! inequalities by dense grid sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{Branch, SeriesCoeffs};
use crate::dynamics::{ModelParams, PerturbationValues, TransformedState};
use crate::error::{Error, Result};

/// Cached reference-frame quantities at a fixed time.
///
/// Building one `Frame` per `tau` and reusing it across states avoids
/// re-evaluating the reference series in grid sweeps.
pub struct Frame {
    pub tau: f64,
    pub lambda: f64,
    pub delta: f64,
    pub f: f64,
    pub m: f64,
    /// Reference values R_ref(tau), Psi_ref(tau) and their tau-derivatives.
    pub r_ref: f64,
    pub psi_ref: f64,
    pub r_ref_dot: f64,
    pub psi_ref_dot: f64,
    pub sqrt_lam_tau: f64,
    /// `R_ref / (lambda tau)` (tends to 1 on the resonant ray).
    pub a: f64,
    /// `f / sqrt(lambda tau)`.
    pub b: f64,
}

impl Frame {
    pub fn new(tau: f64, params: &ModelParams, reference: &SeriesCoeffs) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Domain(format!("frame requires tau > 0, got {tau}")));
        }
        let rf = reference.eval(tau)?;
        let (r_ref_dot, psi_ref_dot) = reference.eval_derivative(tau)?;
        let lam_tau = params.lambda * tau;
        Ok(Self {
            tau,
            lambda: params.lambda,
            delta: params.delta,
            f: params.f,
            m: params.m(),
            r_ref: rf.r,
            psi_ref: rf.psi,
            r_ref_dot,
            psi_ref_dot,
            sqrt_lam_tau: lam_tau.sqrt(),
            a: rf.r / lam_tau,
            b: params.f / lam_tau.sqrt(),
        })
    }

    /// Hamiltonian part `H(R, Psi, tau)`.
    pub fn hamiltonian(&self, r: f64, psi: f64) -> f64 {
        let s = psi + self.psi_ref;
        let bracket = s.cos() - self.psi_ref.cos() + psi * self.psi_ref.sin();
        let cross = s.cos() - self.psi_ref.cos();
        0.5 * r * r + self.a * bracket + self.b * r * cross
    }

    pub fn dh_dr(&self, r: f64, psi: f64) -> f64 {
        let s = psi + self.psi_ref;
        r + self.b * (s.cos() - self.psi_ref.cos())
    }

    pub fn dh_dpsi(&self, r: f64, psi: f64) -> f64 {
        let s = psi + self.psi_ref;
        self.a * (-s.sin() + self.psi_ref.sin()) - self.b * r * s.sin()
    }

    pub fn dh_dtau(&self, r: f64, psi: f64) -> f64 {
        let s = psi + self.psi_ref;
        let lam_tau = self.lambda * self.tau;
        let a_dot = self.r_ref_dot / lam_tau - self.r_ref / (lam_tau * self.tau);
        let b_dot = -self.b / (2.0 * self.tau);
        a_dot * (s.cos() - self.psi_ref.cos() + psi * self.psi_ref.sin())
            + self.a
                * self.psi_ref_dot
                * (-s.sin() + self.psi_ref.sin() + psi * self.psi_ref.cos())
            + b_dot * r * (s.cos() - self.psi_ref.cos())
            + self.b * r * self.psi_ref_dot * (-s.sin() + self.psi_ref.sin())
    }

    /// Non-Hamiltonian part
    /// `F = -(R/sqrt(lambda tau)) [delta + (f-1) sin(Psi + Psi_ref)]
    ///    - (R/2) (lambda tau)^-1/2 tau^-1`.
    ///
    /// The final term is the contribution of the time-dependent amplitude
    /// rescaling; it keeps the field the exact pushforward of the original
    /// system through the change of variables.
    pub fn non_hamiltonian(&self, r: f64, psi: f64) -> f64 {
        let s = psi + self.psi_ref;
        -r / self.sqrt_lam_tau * (self.delta + (self.f - 1.0) * s.sin())
            - r / (2.0 * self.tau * self.sqrt_lam_tau)
    }

    /// `(dR/dtau, dPsi/dtau)` of the transformed system.
    pub fn vector_field(&self, r: f64, psi: f64) -> (f64, f64) {
        (
            self.sqrt_lam_tau * (-self.dh_dpsi(r, psi) + self.non_hamiltonian(r, psi)),
            self.sqrt_lam_tau * self.dh_dr(r, psi),
        )
    }

    /// Lyapunov function `V = H + (m/2) R Psi tau^-1/2`.
    pub fn lyapunov(&self, r: f64, psi: f64) -> f64 {
        self.hamiltonian(r, psi) + 0.5 * self.m * r * psi / self.tau.sqrt()
    }

    pub fn dv_dr(&self, r: f64, psi: f64) -> f64 {
        self.dh_dr(r, psi) + 0.5 * self.m * psi / self.tau.sqrt()
    }

    pub fn dv_dpsi(&self, r: f64, psi: f64) -> f64 {
        self.dh_dpsi(r, psi) + 0.5 * self.m * r / self.tau.sqrt()
    }

    pub fn dv_dtau(&self, r: f64, psi: f64) -> f64 {
        self.dh_dtau(r, psi) - 0.25 * self.m * r * psi * self.tau.powf(-1.5)
    }

    /// Derivative of `V` along the flow, optionally with the transformed
    /// perturbation terms `(G, Q)` of strength `mu`.
    pub fn lyapunov_derivative(&self, r: f64, psi: f64, mode: &FlowMode) -> f64 {
        let (mu, g, q) = match mode {
            FlowMode::Unperturbed => (0.0, 0.0, 0.0),
            FlowMode::WithPerturbation { mu, g, q } => (*mu, *g, *q),
        };
        self.dv_dtau(r, psi)
            + self.sqrt_lam_tau
                * (self.dv_dr(r, psi) * (-self.dh_dpsi(r, psi) + self.non_hamiltonian(r, psi) + mu * g)
                    + self.dv_dpsi(r, psi) * (self.dh_dr(r, psi) + mu * q))
    }
}

/// Flow along which the Lyapunov derivative is taken.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowMode {
    Unperturbed,
    /// Perturbed flow with transformed perturbation values `g`, `q`.
    WithPerturbation { mu: f64, g: f64, q: f64 },
}

/// Evaluates `H(R, Psi, tau)`.
pub fn hamiltonian(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<f64> {
    Ok(Frame::new(tau, params, reference)?.hamiltonian(tstate.r, tstate.psi))
}

/// Evaluates the non-Hamiltonian part `F(R, Psi, tau)`.
pub fn non_hamiltonian_f(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<f64> {
    Ok(Frame::new(tau, params, reference)?.non_hamiltonian(tstate.r, tstate.psi))
}

/// Evaluates the Lyapunov function `V(R, Psi, tau)`.
pub fn lyapunov_v(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
) -> Result<f64> {
    Ok(Frame::new(tau, params, reference)?.lyapunov(tstate.r, tstate.psi))
}

/// Evaluates `dV/dtau` along the chosen flow using analytic partials.
pub fn lyapunov_derivative(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
    mode: FlowMode,
) -> Result<f64> {
    Ok(Frame::new(tau, params, reference)?.lyapunov_derivative(tstate.r, tstate.psi, &mode))
}

/// Transformed perturbation terms
/// `G = (R_ref + R sqrt(lambda tau)) sin(Psi + Psi_ref) xi / (lambda tau)`,
/// `Q = (f eta cos(Psi + Psi_ref) + zeta) / sqrt(lambda tau)`,
/// with the triple evaluated at the original coordinates.
pub fn transformed_perturbation(
    tstate: &TransformedState,
    tau: f64,
    params: &ModelParams,
    reference: &SeriesCoeffs,
    pv: &PerturbationValues,
) -> Result<(f64, f64)> {
    let frame = Frame::new(tau, params, reference)?;
    let s = tstate.psi + frame.psi_ref;
    let g = (frame.r_ref + tstate.r * frame.sqrt_lam_tau) * s.sin() * pv.xi
        / (params.lambda * tau);
    let q = (params.f * pv.eta * s.cos() + pv.zeta) / frame.sqrt_lam_tau;
    Ok((g, q))
}

/// Sampling region `{rho < rho_max, tau_min < tau <= tau_max}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub rho_max: f64,
    pub tau_min: f64,
    /// Upper sampling cap standing in for `tau -> infinity`.
    pub tau_max: f64,
}

impl DomainBox {
    pub fn new(rho_max: f64, tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(rho_max > 0.0 && tau_min > 0.0 && tau_min < tau_max) {
            return Err(Error::Domain(format!(
                "domain box requires 0 < tau_min < tau_max and rho_max > 0, got ({rho_max}, {tau_min}, {tau_max})"
            )));
        }
        Ok(Self { rho_max, tau_min, tau_max })
    }
}

/// Grid density for the certification sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub angles: usize,
    pub radii: usize,
    pub taus: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { angles: 64, radii: 64, taus: 32 }
    }
}

/// A sampled point violating the decay inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub r: f64,
    pub psi: f64,
    pub tau: f64,
    pub dv_dtau: f64,
    pub quad_form: f64,
}

/// Outcome of the sampling-based certification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub certified: bool,
    /// Radius and onset time of the certified (or last attempted) box.
    pub rho0: f64,
    pub tau0: f64,
    pub tau_max: f64,
    /// Empirical bound on `|dV/dR| + |dV/dPsi|` over the box (plus 10%).
    pub ell: f64,
    /// Worst slack of `dV/dtau <= -(m sqrt(lambda)/4)(R^2 + sigma Psi^2)`.
    pub decay_margin: f64,
    /// Worst slack of the lower/upper quadratic sandwich bounds on `V`.
    pub sandwich_margins: (f64, f64),
    pub samples: usize,
    pub grid_spec: String,
    pub rounds_used: usize,
    pub witness: Option<Witness>,
    pub note: String,
}

struct RoundStats {
    decay_margin: f64,
    sandwich_lo: f64,
    sandwich_hi: f64,
    ell: f64,
    samples: usize,
    witness: Option<Witness>,
}

fn sweep_box(
    params: &ModelParams,
    reference: &SeriesCoeffs,
    bx: &DomainBox,
    grid: &GridSpec,
) -> Result<RoundStats> {
    let sigma = params.sigma();
    let decay_coef = params.m() * params.lambda.sqrt() / 4.0;
    let log_ratio = (bx.tau_max / bx.tau_min).ln();
    let taus: Vec<f64> = (0..grid.taus)
        .map(|i| bx.tau_min * (log_ratio * i as f64 / (grid.taus - 1).max(1) as f64).exp())
        .collect();

    // one frame per tau slice; slices are independent and merged in a
    // fixed order so the report does not depend on the worker count
    let per_slice: Vec<RoundStats> = taus
        .par_iter()
        .map(|&tau| -> Result<RoundStats> {
            let frame = Frame::new(tau, params, reference)?;
            let mut st = RoundStats {
                decay_margin: f64::INFINITY,
                sandwich_lo: f64::INFINITY,
                sandwich_hi: f64::INFINITY,
                ell: 0.0,
                samples: 0,
                witness: None,
            };
            for ir in 0..grid.radii {
                let rho = bx.rho_max * (ir + 1) as f64 / grid.radii as f64;
                for ia in 0..grid.angles {
                    let theta = std::f64::consts::TAU * ia as f64 / grid.angles as f64;
                    let (r, psi) = (rho * theta.cos(), rho * theta.sin());
                    let quad = r * r + sigma * psi * psi;
                    let v = frame.lyapunov(r, psi);
                    let dv = frame.lyapunov_derivative(r, psi, &FlowMode::Unperturbed);
                    let decay = -decay_coef * quad - dv;
                    if decay < st.decay_margin {
                        st.decay_margin = decay;
                        if decay <= 0.0 {
                            st.witness = Some(Witness { r, psi, tau, dv_dtau: dv, quad_form: quad });
                        }
                    }
                    st.sandwich_lo = st.sandwich_lo.min(v - 0.25 * quad);
                    st.sandwich_hi = st.sandwich_hi.min(0.75 * quad - v);
                    st.ell = st.ell.max(frame.dv_dr(r, psi).abs() + frame.dv_dpsi(r, psi).abs());
                    st.samples += 1;
                }
            }
            Ok(st)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = RoundStats {
        decay_margin: f64::INFINITY,
        sandwich_lo: f64::INFINITY,
        sandwich_hi: f64::INFINITY,
        ell: 0.0,
        samples: 0,
        witness: None,
    };
    for st in per_slice {
        if st.decay_margin < total.decay_margin {
            total.decay_margin = st.decay_margin;
            if st.witness.is_some() {
                total.witness = st.witness;
            }
        }
        total.sandwich_lo = total.sandwich_lo.min(st.sandwich_lo);
        total.sandwich_hi = total.sandwich_hi.min(st.sandwich_hi);
        total.ell = total.ell.max(st.ell);
        total.samples += st.samples;
    }
    Ok(total)
}

/// Searches for a box on which the quadratic sandwich and the decay
/// inequality hold at every sampled point, shrinking `rho_max` and raising
/// `tau_min` geometrically (at most 8 rounds). Sampling-based: a passing
/// report certifies the inequalities on the grid, not rigorously.
pub fn certify_domain(
    params: &ModelParams,
    reference: &SeriesCoeffs,
    initial: &DomainBox,
    grid: &GridSpec,
) -> Result<CertificateReport> {
    const MAX_ROUNDS: usize = 8;
    let mut bx = *initial;
    let mut last: Option<(RoundStats, DomainBox)> = None;
    for round in 0..MAX_ROUNDS {
        let stats = sweep_box(params, reference, &bx, grid)?;
        let ok = stats.decay_margin > 0.0 && stats.sandwich_lo > 0.0 && stats.sandwich_hi > 0.0;
        if ok {
            return Ok(CertificateReport {
                certified: true,
                rho0: bx.rho_max,
                tau0: bx.tau_min,
                tau_max: bx.tau_max,
                ell: stats.ell * 1.1,
                decay_margin: stats.decay_margin,
                sandwich_margins: (stats.sandwich_lo, stats.sandwich_hi),
                samples: stats.samples,
                grid_spec: format!(
                    "{} angles x {} radii x {} log-tau slices",
                    grid.angles, grid.radii, grid.taus
                ),
                rounds_used: round + 1,
                witness: None,
                note: "sampling-based certificate; inequalities verified on the grid only".into(),
            });
        }
        last = Some((stats, bx));
        bx = DomainBox { rho_max: bx.rho_max / 2.0, tau_min: bx.tau_min * 2.0, ..bx };
        if bx.tau_min >= bx.tau_max {
            break;
        }
    }
    let (stats, bx) = last.expect("at least one round runs");
    Ok(CertificateReport {
        certified: false,
        rho0: bx.rho_max,
        tau0: bx.tau_min,
        tau_max: bx.tau_max,
        ell: stats.ell * 1.1,
        decay_margin: stats.decay_margin,
        sandwich_margins: (stats.sandwich_lo, stats.sandwich_hi),
        samples: stats.samples,
        grid_spec: format!(
            "{} angles x {} radii x {} log-tau slices",
            grid.angles, grid.radii, grid.taus
        ),
        rounds_used: MAX_ROUNDS,
        witness: stats.witness,
        note: "certification failed within the search budget".into(),
    })
}

/// Stability classification of an asymptotic branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStability {
    AsymptoticallyStable,
    Unstable,
    Inconclusive,
}

/// Classifies a branch: the plus branch by the spectrum of the frozen-time
/// linearization about its leading asymptotics (one root has positive real
/// part), the minus branch by the dissipative stability result (`f > 0`
/// stable, `f < 0` unstable, `delta = 0` outside its hypotheses).
pub fn classify_branch(params: &ModelParams, branch: Branch) -> Result<BranchStability> {
    match branch {
        Branch::Plus => {
            // linearization at (r, psi) = (lambda tau + r0, psi0), large fixed tau:
            //   [ sin(psi0) - delta   r cos(psi0) ]
            //   [ 1                   -f sin(psi0) ]
            let tau = 1e3;
            let psi0 = branch.phase_root(params.delta);
            let r = params.lambda * tau - params.f * psi0.cos();
            let m = [
                [psi0.sin() - params.delta, r * psi0.cos()],
                [1.0, -params.f * psi0.sin()],
            ];
            let trace = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = trace * trace - 4.0 * det;
            let max_re = if disc >= 0.0 { (trace + disc.sqrt()) / 2.0 } else { trace / 2.0 };
            if max_re > 1e-9 {
                Ok(BranchStability::Unstable)
            } else {
                Ok(BranchStability::Inconclusive)
            }
        }
        Branch::Minus => {
            if params.delta == 0.0 {
                // characteristic roots are purely imaginary; the dissipative
                // argument does not apply
                Ok(BranchStability::Inconclusive)
            } else if params.f > 0.0 {
                Ok(BranchStability::AsymptoticallyStable)
            } else {
                Ok(BranchStability::Unstable)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::extend_coeffs;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::TAU;

    fn setup(delta: f64, f: f64, lambda: f64) -> (ModelParams, SeriesCoeffs) {
        let p = ModelParams::new(lambda, delta, f).unwrap();
        let s = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        (p, s)
    }

    #[test]
    fn hamiltonian_vanishes_at_origin() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        for tau in [3.0, 77.0, 1e4] {
            let h = hamiltonian(&TransformedState::new(0.0, 0.0), tau, &p, &s).unwrap();
            assert_eq!(h, 0.0);
            let v = lyapunov_v(&TransformedState::new(0.0, 0.0), tau, &p, &s).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn hamiltonian_is_quadratic_near_origin() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        let sigma = p.sigma();
        let st = TransformedState::new(1e-3, 1e-3);
        let h = hamiltonian(&st, 1e4, &p, &s).unwrap();
        let quad = 0.5 * (st.r * st.r + sigma * st.psi * st.psi);
        assert!((h / quad - 1.0).abs() < 1e-2, "ratio {}", h / quad);
    }

    #[test]
    fn hamiltonian_shift_identity() {
        // H(R, Psi + 2 pi) - H(R, Psi) = (R_ref / (lambda tau)) 2 pi sin(Psi_ref)
        let (p, s) = setup(0.5, 0.2, 1.0);
        for (r, psi, tau) in [(0.1, 0.2, 30.0), (-0.05, 1.0, 500.0), (0.3, -2.0, 4.0)] {
            let frame = Frame::new(tau, &p, &s).unwrap();
            let lhs = frame.hamiltonian(r, psi + TAU) - frame.hamiltonian(r, psi);
            let rhs = frame.a * TAU * frame.psi_ref.sin();
            assert!((lhs - rhs).abs() < 1e-12 * rhs.abs().max(1.0), "lhs {lhs} rhs {rhs}");
        }
    }

    #[test]
    fn non_hamiltonian_part_leading_term() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        // F is proportional to R
        for tau in [10.0, 1e3] {
            let f0 = non_hamiltonian_f(&TransformedState::new(0.0, 0.7), tau, &p, &s).unwrap();
            assert_eq!(f0, 0.0);
        }
        // leading asymptotics -m R tau^-1/2 at Psi = 0
        let f1 = non_hamiltonian_f(&TransformedState::new(0.1, 0.0), 1e4, &p, &s).unwrap();
        assert!((f1 / -1.0e-4 - 1.0).abs() < 0.15, "got {f1}");
        let f2 = non_hamiltonian_f(&TransformedState::new(0.01, 0.0), 400.0, &p, &s).unwrap();
        assert!((f2 / -5.0e-5 - 1.0).abs() < 0.15, "got {f2}");
        // sign for f in (0, 1], R > 0, Psi near 0, large tau; the validity
        // neighborhood in Psi shrinks with f (the bracket is ~ f delta at
        // Psi = 0), so sample |Psi| well inside it
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let f = rng.gen_range(0.05..1.0);
            let p = ModelParams::new(1.0, 0.5, f).unwrap();
            let s = extend_coeffs(&p, Branch::Minus, 1).unwrap();
            let psi_span = 0.1 * f;
            let st =
                TransformedState::new(rng.gen_range(0.01..0.3), rng.gen_range(-psi_span..psi_span));
            let tau = rng.gen_range(100.0..1e4);
            let val = non_hamiltonian_f(&st, tau, &p, &s).unwrap();
            assert!(val < 0.0, "F should be negative, got {val} (f={f})");
        }
    }

    #[test]
    fn lyapunov_cross_term_magnitude() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        let st = TransformedState::new(0.1, 0.1);
        let v = lyapunov_v(&st, 100.0, &p, &s).unwrap();
        let h = hamiltonian(&st, 100.0, &p, &s).unwrap();
        assert!(((v - h) - 5e-5).abs() < 1e-18, "got {}", v - h);
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        let mut rng = StdRng::seed_from_u64(42);
        let h = 1e-6;
        for _ in 0..1000 {
            let rho = rng.gen_range(1e-3..0.3);
            let theta = rng.gen_range(0.0..TAU);
            let (r, psi) = (rho * theta.cos(), rho * theta.sin());
            let tau = rng.gen_range(10.0..1e4);
            let frame = Frame::new(tau, &p, &s).unwrap();
            // V holds order-one trig differences, so each evaluation carries
            // a few ulp of absolute noise; the tau step is scaled up to keep
            // the quotient above that floor
            let ht = 1e-6 * tau.max(1.0);
            let frame_p = Frame::new(tau + ht, &p, &s).unwrap();
            let frame_m = Frame::new(tau - ht, &p, &s).unwrap();

            let fd_r = (frame.lyapunov(r + h, psi) - frame.lyapunov(r - h, psi)) / (2.0 * h);
            let fd_psi = (frame.lyapunov(r, psi + h) - frame.lyapunov(r, psi - h)) / (2.0 * h);
            let fd_tau = (frame_p.lyapunov(r, psi) - frame_m.lyapunov(r, psi)) / (2.0 * ht);

            let an_r = frame.dv_dr(r, psi);
            let an_psi = frame.dv_dpsi(r, psi);
            let an_tau = frame.dv_dtau(r, psi);
            assert!((fd_r - an_r).abs() <= 1e-6 * an_r.abs().max(1e-3), "dV/dR {fd_r} vs {an_r}");
            assert!(
                (fd_psi - an_psi).abs() <= 1e-6 * an_psi.abs().max(1e-3),
                "dV/dPsi {fd_psi} vs {an_psi}"
            );
            assert!(
                (fd_tau - an_tau).abs() <= 1e-4 * an_tau.abs() + 1e-11,
                "dV/dtau {fd_tau} vs {an_tau} at tau={tau}"
            );

            let fd_hr = (frame.hamiltonian(r + h, psi) - frame.hamiltonian(r - h, psi)) / (2.0 * h);
            let fd_hpsi =
                (frame.hamiltonian(r, psi + h) - frame.hamiltonian(r, psi - h)) / (2.0 * h);
            let an_hr = frame.dh_dr(r, psi);
            let an_hpsi = frame.dh_dpsi(r, psi);
            assert!((fd_hr - an_hr).abs() <= 1e-6 * an_hr.abs().max(1e-3));
            assert!((fd_hpsi - an_hpsi).abs() <= 1e-6 * an_hpsi.abs().max(1e-3));
        }
    }

    #[test]
    fn derivative_vanishes_at_origin() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        for tau in [10.0, 1e3, 1e5] {
            let d = lyapunov_derivative(
                &TransformedState::new(0.0, 0.0),
                tau,
                &p,
                &s,
                FlowMode::Unperturbed,
            )
            .unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn perturbed_derivative_decomposition() {
        // dV/dtau along the perturbed flow equals the unperturbed derivative
        // plus mu sqrt(lambda tau) (G dV/dR + Q dV/dPsi)
        let (p, s) = setup(0.5, 0.2, 1.0);
        let st = TransformedState::new(0.05, -0.08);
        let tau = 250.0;
        let pv = PerturbationValues::new(1.0, 1.0, tau);
        let (g, q) = transformed_perturbation(&st, tau, &p, &s, &pv).unwrap();
        let mu = 0.02;
        let unpert = lyapunov_derivative(&st, tau, &p, &s, FlowMode::Unperturbed).unwrap();
        let pert =
            lyapunov_derivative(&st, tau, &p, &s, FlowMode::WithPerturbation { mu, g, q }).unwrap();
        let frame = Frame::new(tau, &p, &s).unwrap();
        let expect = unpert
            + mu * frame.sqrt_lam_tau * (g * frame.dv_dr(st.r, st.psi) + q * frame.dv_dpsi(st.r, st.psi));
        assert!((pert - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn certification_succeeds_for_dissipative_pumping() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        let bx = DomainBox::new(0.4, 50.0, 1e4).unwrap();
        let grid = GridSpec { angles: 32, radii: 32, taus: 16 };
        let report = certify_domain(&p, &s, &bx, &grid).unwrap();
        assert!(report.certified, "margins {:?}", report);
        assert!(report.rho0 >= 0.05, "rho0 {}", report.rho0);
        assert!(report.tau0 <= 1e3, "tau0 {}", report.tau0);
        assert!(report.decay_margin > 0.0);
        assert!(report.sandwich_margins.0 > 0.0 && report.sandwich_margins.1 > 0.0);
        assert!(report.ell > 0.0);
    }

    #[test]
    fn certification_fails_for_negative_pumping_with_witness() {
        let p = ModelParams::new(1.0, 0.5, -0.2).unwrap();
        let s = extend_coeffs(&p, Branch::Minus, 1).unwrap();
        let bx = DomainBox::new(0.2, 100.0, 1e4).unwrap();
        let grid = GridSpec { angles: 16, radii: 16, taus: 8 };
        let report = certify_domain(&p, &s, &bx, &grid).unwrap();
        assert!(!report.certified);
        let w = report.witness.expect("witness point expected");
        assert!(w.dv_dtau > 0.0, "witness should have positive derivative, got {}", w.dv_dtau);
    }

    #[test]
    fn certification_fails_for_zero_dissipation() {
        // delta = 0 means m = 0 and the decay inequality has no slack
        let p = ModelParams::new(1.0, 0.0, 0.2).unwrap();
        // the minus-branch series needs delta > 0; build the reference at the
        // closed-form limit psi0 = pi by hand
        let s = SeriesCoeffs {
            branch: Branch::Minus,
            order: 1,
            r_coeffs: vec![p.f, 0.0],
            psi_coeffs: vec![std::f64::consts::PI, -1.0],
            params: p,
            ill_conditioned: false,
        };
        let bx = DomainBox::new(0.2, 100.0, 1e4).unwrap();
        let grid = GridSpec { angles: 16, radii: 16, taus: 8 };
        let report = certify_domain(&p, &s, &bx, &grid).unwrap();
        assert!(!report.certified);
        assert!(report.decay_margin <= 1e-12, "margin {}", report.decay_margin);
    }

    #[test]
    fn threshold_separation_inside_certified_box() {
        // sup of V over rho <= eps sqrt(sigma/6) stays below inf over rho = eps
        let (p, s) = setup(0.5, 0.2, 1.0);
        let sigma = p.sigma();
        let eps = 0.05;
        let delta_eps = eps * (sigma / 6.0).sqrt();
        let mut sup_inner = f64::NEG_INFINITY;
        let mut inf_ring = f64::INFINITY;
        for it in 0..16 {
            let tau = 400.0 * (1e4f64 / 400.0).powf(it as f64 / 15.0);
            let frame = Frame::new(tau, &p, &s).unwrap();
            for ir in 0..12 {
                let rho = delta_eps * (ir + 1) as f64 / 12.0;
                for ia in 0..48 {
                    let th = TAU * ia as f64 / 48.0;
                    sup_inner = sup_inner.max(frame.lyapunov(rho * th.cos(), rho * th.sin()));
                }
            }
            for ia in 0..48 {
                let th = TAU * ia as f64 / 48.0;
                inf_ring = inf_ring.min(frame.lyapunov(eps * th.cos(), eps * th.sin()));
            }
        }
        assert!(
            sup_inner < inf_ring,
            "sup over inner ball {sup_inner} must stay below inf on the ring {inf_ring}"
        );
    }

    #[test]
    fn branch_classification() {
        let p = ModelParams::new(1.0, 0.5, 0.2).unwrap();
        assert_eq!(classify_branch(&p, Branch::Minus).unwrap(), BranchStability::AsymptoticallyStable);
        assert_eq!(classify_branch(&p, Branch::Plus).unwrap(), BranchStability::Unstable);
        let neg = ModelParams::new(1.0, 0.5, -0.2).unwrap();
        assert_eq!(classify_branch(&neg, Branch::Minus).unwrap(), BranchStability::Unstable);
        let cons = ModelParams::new(1.0, 0.0, 0.2).unwrap();
        assert_eq!(classify_branch(&cons, Branch::Minus).unwrap(), BranchStability::Inconclusive);
    }

    #[test]
    fn certificate_report_serializes() {
        let (p, s) = setup(0.5, 0.2, 1.0);
        let bx = DomainBox::new(0.1, 400.0, 2e3).unwrap();
        let grid = GridSpec { angles: 8, radii: 8, taus: 4 };
        let report = certify_domain(&p, &s, &bx, &grid).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        let back: CertificateReport = serde_json::from_str(&text).unwrap();
        assert_eq!(report, back);
    }
}
