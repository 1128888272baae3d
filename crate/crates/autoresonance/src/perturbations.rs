//! Persistent perturbation classes and concrete perturbation processes.
//!
//! Deterministic triples `(xi, eta, zeta)` belong to the class with
//! exponents `(a, b, c)` and bound `h` when
//! `sup |xi| tau^-a + |eta| tau^-b + |zeta| tau^-c <= h`. Random triples
//! are admitted through an envelope process `S(tau)` whose unit-window
//! moving average obeys `M_tau S <= mu nu(omega)` with `E nu <= h`. The
//! guaranteed stability horizon scales like `mu^-kappa` for any
//! `kappa < kappa_0 = 1/theta`, `theta = max(a + 1/2, b, c)`; classes with
//! `a <= -1/2, b <= 0, c <= 0` are stable on the infinite interval.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, PerturbationValues};
use crate::error::{Error, Result};

/// Growth exponents and bound of a perturbation class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Class bound `h > 0`.
    pub h: f64,
    pub kind: ClassKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Deterministic,
    Random,
}

impl ClassSpec {
    pub fn new(a: f64, b: f64, c: f64, h: f64, kind: ClassKind) -> Result<Self> {
        if ![a, b, c, h].iter().all(|v| v.is_finite()) || h <= 0.0 {
            return Err(Error::Configuration(format!(
                "class spec requires finite exponents and h > 0, got ({a}, {b}, {c}, {h})"
            )));
        }
        Ok(Self { a, b, c, h, kind })
    }

    /// Interval exponent `theta = max(a + 1/2, b, c)`.
    pub fn theta(&self) -> f64 {
        (self.a + 0.5).max(self.b).max(self.c)
    }

    /// Largest guaranteed horizon exponent `kappa_0 = 1/theta`; infinite
    /// when `theta <= 0` (stability holds on the whole half-line).
    pub fn kappa0(&self) -> f64 {
        let theta = self.theta();
        if theta > 0.0 {
            1.0 / theta
        } else {
            f64::INFINITY
        }
    }

    /// Weighted pointwise expression `|xi| tau^-a + |eta| tau^-b + |zeta| tau^-c`.
    pub fn weighted(&self, pv: &PerturbationValues, tau: f64) -> f64 {
        pv.xi.abs() * tau.powf(-self.a)
            + pv.eta.abs() * tau.powf(-self.b)
            + pv.zeta.abs() * tau.powf(-self.c)
    }
}

/// Distribution descriptor for jump amplitudes; every variant has finite
/// mean absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, sd: f64 },
    Constant { value: f64 },
    TwoPoint { p: f64, v1: f64, v2: f64 },
}

impl DistSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DistSpec::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            DistSpec::Gaussian { mean, sd } => mean.is_finite() && sd.is_finite() && *sd >= 0.0,
            DistSpec::Constant { value } => value.is_finite(),
            DistSpec::TwoPoint { p, v1, v2 } => {
                (0.0..=1.0).contains(p) && v1.is_finite() && v2.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Configuration(format!("invalid distribution descriptor {self:?}")))
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            DistSpec::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            DistSpec::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                mean + sd * z
            }
            DistSpec::Constant { value } => *value,
            DistSpec::TwoPoint { p, v1, v2 } => {
                if rng.gen::<f64>() < *p {
                    *v1
                } else {
                    *v2
                }
            }
        }
    }

    /// Closed-form `E|X|`.
    pub fn mean_abs(&self) -> f64 {
        match self {
            DistSpec::Uniform { lo, hi } => {
                if *lo >= 0.0 {
                    (lo + hi) / 2.0
                } else if *hi <= 0.0 {
                    -(lo + hi) / 2.0
                } else {
                    (lo * lo + hi * hi) / (2.0 * (hi - lo))
                }
            }
            DistSpec::Gaussian { mean, sd } => {
                if *sd == 0.0 {
                    return mean.abs();
                }
                // folded normal mean
                let z = mean / sd;
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
                sd * 2.0 * phi + mean * (2.0 * cdf - 1.0)
            }
            DistSpec::Constant { value } => value.abs(),
            DistSpec::TwoPoint { p, v1, v2 } => p * v1.abs() + (1.0 - p) * v2.abs(),
        }
    }
}

/// Abramowitz-Stegun 7.1.26 rational approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

type PertFn = Box<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// A deterministic perturbation triple of `(r, psi, tau)` with its class.
pub struct DeterministicPert {
    xi: PertFn,
    eta: PertFn,
    zeta: PertFn,
    pub spec: ClassSpec,
}

impl DeterministicPert {
    pub fn new(xi: PertFn, eta: PertFn, zeta: PertFn, spec: ClassSpec) -> Self {
        Self { xi, eta, zeta, spec }
    }

    pub fn values(&self, r: f64, psi: f64, tau: f64) -> PerturbationValues {
        PerturbationValues::new((self.xi)(r, psi, tau), (self.eta)(r, psi, tau), (self.zeta)(r, psi, tau))
    }
}

/// The constant-plus-ramp triple `xi = 1, eta = 1, zeta = tau`, a member
/// of the class with exponents `(0, 0, 1)` and bound `h = 3` (the weighted
/// expression equals 3 identically).
pub fn make_example1() -> DeterministicPert {
    DeterministicPert::new(
        Box::new(|_, _, _| 1.0),
        Box::new(|_, _, _| 1.0),
        Box::new(|_, _, tau| tau),
        ClassSpec::new(0.0, 0.0, 1.0, 3.0, ClassKind::Deterministic).expect("static spec"),
    )
}

/// Leading asymptotics of the resonant solution of the system perturbed by
/// [`make_example1`]: amplitude slope `lambda - mu` and phase limit
/// `pi - arcsin(delta / (1 + mu))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Drift {
    pub mu: f64,
    pub slope: f64,
    pub phase_limit: f64,
}

impl Example1Drift {
    /// Predicted weighted amplitude deviation from the unperturbed
    /// reference, `mu tau^1/2` to leading order.
    pub fn weighted_r_deviation(&self, tau: f64) -> f64 {
        self.mu * tau.sqrt()
    }
}

pub fn example1_drift(params: &ModelParams, mu: f64) -> Result<Example1Drift> {
    if !(mu >= 0.0 && mu < params.lambda) {
        return Err(Error::Domain(format!(
            "drift asymptotics require 0 <= mu < lambda, got mu = {mu}"
        )));
    }
    Ok(Example1Drift {
        mu,
        slope: params.lambda - mu,
        phase_limit: std::f64::consts::PI - (params.delta / (1.0 + mu)).asin(),
    })
}

/// Maps Duffing pump perturbations `a(t)`, `phi(t)` into the averaged
/// triple: `xi(tau) = eta(tau) = a(2 tau / eps)`,
/// `zeta(tau) = -4 phi'(2 tau / eps) / eps`. The phase derivative uses a
/// scaled central difference unless an analytic derivative is supplied.
pub fn duffing_pert_map(
    a_func: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    phi_func: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    phi_derivative: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    eps: f64,
    spec: ClassSpec,
) -> Result<DeterministicPert> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Configuration(format!("eps must be positive, got {eps}")));
    }
    let a_func = std::sync::Arc::new(a_func);
    let a2 = a_func.clone();
    let phi_prime: PertFn = match phi_derivative {
        Some(d) => Box::new(move |_, _, tau| d(2.0 * tau / eps)),
        None => Box::new(move |_, _, tau| {
            let t = 2.0 * tau / eps;
            let h = 1e-6 * t.abs().max(1.0);
            (phi_func(t + h) - phi_func(t - h)) / (2.0 * h)
        }),
    };
    Ok(DeterministicPert::new(
        Box::new(move |_, _, tau| a_func(2.0 * tau / eps)),
        Box::new(move |_, _, tau| a2(2.0 * tau / eps)),
        Box::new(move |r, psi, tau| -4.0 * phi_prime(r, psi, tau) / eps),
        spec,
    ))
}

/// Specification of the jump-train process
/// `J_N(tau) = sum_n j_n 1[n <= tau <= n + mu]`, `n = 1..N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpTrainSpec {
    pub n: usize,
    pub jump_dist: DistSpec,
    pub mu: f64,
}

impl JumpTrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Configuration("jump train needs at least one jump".into()));
        }
        if self.mu <= 0.0 || !self.mu.is_finite() {
            return Err(Error::Configuration(format!("mu must be positive, got {}", self.mu)));
        }
        self.jump_dist.validate()
    }
}

/// One realized random perturbation path (a function of `tau` only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomPertPath {
    pub kind: PathKind,
    /// Class exponents `(a, b, c)` the path is constructed for.
    pub exponents: (f64, f64, f64),
    /// Path bound: `sup_tau M_tau S <= mu * nu`.
    pub nu: f64,
    pub mu: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Zero,
    /// `xi = eta = J_N`, `zeta = tau J_N`.
    JumpTrain { jumps: Vec<f64> },
    /// `xi = J`, `eta = zeta = tau J` with `J = j 1[omega <= tau <= omega + mu]`.
    SingleJump { omega: f64, jump: f64 },
}

impl RandomPertPath {
    /// Indicator-sum value `J(tau)` of the underlying process.
    fn jump_value(&self, tau: f64) -> f64 {
        match &self.kind {
            PathKind::Zero => 0.0,
            PathKind::JumpTrain { jumps } => {
                let mut v = 0.0;
                for (i, j) in jumps.iter().enumerate() {
                    let n = (i + 1) as f64;
                    if tau >= n && tau <= n + self.mu {
                        v += j;
                    }
                }
                v
            }
            PathKind::SingleJump { omega, jump } => {
                if tau >= *omega && tau <= *omega + self.mu {
                    *jump
                } else {
                    0.0
                }
            }
        }
    }

    pub fn values(&self, tau: f64) -> PerturbationValues {
        let j = self.jump_value(tau);
        match self.kind {
            PathKind::Zero => PerturbationValues::zero(),
            PathKind::JumpTrain { .. } => PerturbationValues::new(j, j, tau * j),
            PathKind::SingleJump { .. } => PerturbationValues::new(j, tau * j, tau * j),
        }
    }

    /// Envelope `S(tau) = 3 |J(tau)|` dominating the weighted expression.
    pub fn envelope(&self, tau: f64) -> f64 {
        3.0 * self.jump_value(tau).abs()
    }

    /// `M_tau S = int_tau^{tau+1} S dt`, by exact piecewise integration of
    /// the indicator supports.
    pub fn moving_average_envelope(&self, tau: f64) -> f64 {
        let overlap = |lo: f64, hi: f64| (hi.min(tau + 1.0) - lo.max(tau)).max(0.0);
        match &self.kind {
            PathKind::Zero => 0.0,
            PathKind::JumpTrain { jumps } => {
                if self.mu < 1.0 {
                    // disjoint supports: one indicator active at a time
                    3.0 * jumps
                        .iter()
                        .enumerate()
                        .map(|(i, j)| {
                            let n = (i + 1) as f64;
                            j.abs() * overlap(n, n + self.mu)
                        })
                        .sum::<f64>()
                } else {
                    // overlapping supports: |J| is piecewise constant on the
                    // breakpoint grid, so midpoint sums are exact
                    let mut pts: Vec<f64> = vec![tau, tau + 1.0];
                    for i in 0..jumps.len() {
                        let n = (i + 1) as f64;
                        for p in [n, n + self.mu] {
                            if p > tau && p < tau + 1.0 {
                                pts.push(p);
                            }
                        }
                    }
                    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mut total = 0.0;
                    for w in pts.windows(2) {
                        let mid = 0.5 * (w[0] + w[1]);
                        total += self.envelope(mid) * (w[1] - w[0]);
                    }
                    total
                }
            }
            PathKind::SingleJump { omega, jump } => 3.0 * jump.abs() * overlap(*omega, *omega + self.mu),
        }
    }

    /// Span `[0, hi]` that contains the support of the path.
    pub fn support_end(&self) -> f64 {
        match &self.kind {
            PathKind::Zero => 1.0,
            PathKind::JumpTrain { jumps } => jumps.len() as f64 + self.mu + 1.0,
            PathKind::SingleJump { omega, .. } => omega + self.mu + 1.0,
        }
    }
}

/// Draws a jump-train realization. The envelope is `S = 3 |J_N|` with
/// exponents `(0, 0, 1)`; since `M_tau |J_N| <= mu (|j_n| + |j_{n+1}|)`
/// on `[n, n+1)`, the path bound is `nu = 3 max_n (|j_n| + |j_{n+1}|)`.
/// Bit-identical for identical `(spec, seed)`.
pub fn sample_jump_train(spec: &JumpTrainSpec, seed: u64) -> Result<RandomPertPath> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jumps: Vec<f64> = (0..spec.n).map(|_| spec.jump_dist.sample(&mut rng)).collect();
    let nu = 3.0 * window_max(&jumps);
    Ok(RandomPertPath {
        kind: PathKind::JumpTrain { jumps },
        exponents: (0.0, 0.0, 1.0),
        nu,
        mu: spec.mu,
        seed,
    })
}

/// `max over unit windows of |j_n| + |j_{n+1}|` with zero padding outside.
fn window_max(jumps: &[f64]) -> f64 {
    let at = |i: isize| -> f64 {
        if i < 0 || i as usize >= jumps.len() {
            0.0
        } else {
            jumps[i as usize].abs()
        }
    };
    let mut best: f64 = 0.0;
    for n in -1..=(jumps.len() as isize) {
        best = best.max(at(n) + at(n + 1));
    }
    best
}

/// Draws a single-jump realization `J = j 1[omega <= tau <= omega + mu]`
/// with exponents `(0, 1, 1)`, envelope `S = 3 |J|` and `nu = 3 |j|`.
pub fn sample_single_jump(
    omega_dist: &DistSpec,
    jump_dist: &DistSpec,
    mu: f64,
    seed: u64,
) -> Result<RandomPertPath> {
    omega_dist.validate()?;
    jump_dist.validate()?;
    if mu <= 0.0 || !mu.is_finite() {
        return Err(Error::Configuration(format!("mu must be positive, got {mu}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = omega_dist.sample(&mut rng);
    let jump = jump_dist.sample(&mut rng);
    if omega <= 0.0 || omega.is_nan() {
        return Err(Error::Configuration(format!(
            "jump onset must be positive (omega drawn as {omega}); restrict the descriptor support"
        )));
    }
    Ok(RandomPertPath {
        kind: PathKind::SingleJump { omega, jump },
        exponents: (0.0, 1.0, 1.0),
        nu: 3.0 * jump.abs(),
        mu,
        seed,
    })
}

/// Generator of random perturbation paths; the per-trial seed selects
/// the realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomPertSpec {
    Zero,
    JumpTrain(JumpTrainSpec),
    SingleJump { omega_dist: DistSpec, jump_dist: DistSpec, mu: f64 },
}

impl RandomPertSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            RandomPertSpec::Zero => Ok(()),
            RandomPertSpec::JumpTrain(s) => s.validate(),
            RandomPertSpec::SingleJump { omega_dist, jump_dist, mu } => {
                omega_dist.validate()?;
                jump_dist.validate()?;
                if *mu <= 0.0 || !mu.is_finite() {
                    return Err(Error::Configuration("mu must be positive".into()));
                }
                Ok(())
            }
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            RandomPertSpec::Zero => 0.0,
            RandomPertSpec::JumpTrain(s) => s.mu,
            RandomPertSpec::SingleJump { mu, .. } => *mu,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<RandomPertPath> {
        match self {
            RandomPertSpec::Zero => Ok(RandomPertPath {
                kind: PathKind::Zero,
                exponents: (0.0, 0.0, 0.0),
                nu: 0.0,
                mu: 1.0,
                seed,
            }),
            RandomPertSpec::JumpTrain(s) => sample_jump_train(s, seed),
            RandomPertSpec::SingleJump { omega_dist, jump_dist, mu } => {
                sample_single_jump(omega_dist, jump_dist, *mu, seed)
            }
        }
    }
}

/// Sampling plan for the deterministic sup-norm check. The true supremum
/// over the whole plane is not verifiable numerically; reports carry the
/// plan they were produced with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub r_max: f64,
    pub psi_min: f64,
    pub psi_max: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub r_points: usize,
    pub psi_points: usize,
    pub tau_points: usize,
}

impl SamplePlan {
    /// Default box: `|r| <= 10 lambda tau_max`, `psi in [-2 pi, 4 pi]`,
    /// log grid in `tau` up to `tau_max`.
    pub fn default_for(lambda: f64, tau_max: f64) -> Self {
        Self {
            r_max: 10.0 * lambda * tau_max,
            psi_min: -2.0 * std::f64::consts::PI,
            psi_max: 4.0 * std::f64::consts::PI,
            tau_min: 1e-2,
            tau_max,
            r_points: 7,
            psi_points: 7,
            tau_points: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicMembershipReport {
    pub empirical_sup: f64,
    pub h: f64,
    pub passes: bool,
    /// Set when the weighted expression keeps growing towards the top of
    /// the `tau` grid, indicating an unbounded sup.
    pub unbounded_trend: bool,
    pub plan: SamplePlan,
}

/// Samples the weighted sup over the plan box and compares against `h`.
pub fn verify_deterministic_membership(
    pert: &DeterministicPert,
    spec: &ClassSpec,
    plan: &SamplePlan,
) -> DeterministicMembershipReport {
    let mut sup = 0.0f64;
    let mut sup_low_tau = 0.0f64;
    let mut sup_high_tau = 0.0f64;
    let log_ratio = (plan.tau_max / plan.tau_min).ln();
    for it in 0..plan.tau_points {
        let frac = it as f64 / (plan.tau_points - 1).max(1) as f64;
        let tau = plan.tau_min * (log_ratio * frac).exp();
        for ir in 0..plan.r_points {
            let r = -plan.r_max + 2.0 * plan.r_max * ir as f64 / (plan.r_points - 1).max(1) as f64;
            for ip in 0..plan.psi_points {
                let psi = plan.psi_min
                    + (plan.psi_max - plan.psi_min) * ip as f64 / (plan.psi_points - 1).max(1) as f64;
                let w = spec.weighted(&pert.values(r, psi, tau), tau);
                sup = sup.max(w);
                if frac < 0.5 {
                    sup_low_tau = sup_low_tau.max(w);
                } else {
                    sup_high_tau = sup_high_tau.max(w);
                }
            }
        }
    }
    DeterministicMembershipReport {
        empirical_sup: sup,
        h: spec.h,
        passes: sup <= spec.h * (1.0 + 1e-12),
        unbounded_trend: sup_high_tau > 2.0 * sup_low_tau.max(1e-300),
        plan: *plan,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomMembershipReport {
    /// Pointwise check `weighted(tau) <= S(tau)` on the grid.
    pub envelope_ok: bool,
    pub max_envelope_gap: f64,
    /// Moving-average check `M_tau S <= mu nu` on the grid.
    pub moving_average_ok: bool,
    pub max_moving_average: f64,
    pub nu: f64,
    pub mu_nu: f64,
    pub passes: bool,
}

/// Checks one realized path against its class construction on a sliding
/// grid of step `mu / 10`.
pub fn verify_random_membership(path: &RandomPertPath, spec: &ClassSpec) -> RandomMembershipReport {
    let step = (path.mu / 10.0).min(0.05);
    let end = path.support_end();
    let mut max_gap = f64::NEG_INFINITY;
    let mut max_avg = 0.0f64;
    let mut tau = step; // tau > 0
    while tau < end {
        let w = spec.weighted(&path.values(tau), tau);
        max_gap = max_gap.max(w - path.envelope(tau));
        max_avg = max_avg.max(path.moving_average_envelope(tau));
        tau += step;
    }
    let mu_nu = path.mu * path.nu;
    let envelope_ok = max_gap <= 1e-9;
    let moving_average_ok = max_avg <= mu_nu * (1.0 + 1e-12) + 1e-15;
    RandomMembershipReport {
        envelope_ok,
        max_envelope_gap: max_gap,
        moving_average_ok,
        max_moving_average: max_avg,
        nu: path.nu,
        mu_nu,
        passes: envelope_ok && moving_average_ok,
    }
}

/// Mean and standard error of `nu` over a batch of seeds. Substreams are
/// pre-assigned per seed index and the reduction runs in index order, so
/// the estimate does not depend on the worker count.
pub fn estimate_expected_nu(
    spec: &RandomPertSpec,
    n_seeds: usize,
    master_seed: u64,
) -> Result<(f64, f64)> {
    use rayon::prelude::*;
    if n_seeds == 0 {
        return Err(Error::Configuration("need at least one seed".into()));
    }
    let nus: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|i| spec.sample(trial_seed(master_seed, i as u64)).map(|p| p.nu))
        .collect::<Result<Vec<_>>>()?;
    let n = n_seeds as f64;
    let mean = nus.iter().sum::<f64>() / n;
    let sum_sq: f64 = nus.iter().map(|nu| (nu - mean) * (nu - mean)).sum();
    let var = sum_sq / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// SplitMix64-style per-trial substream seed, independent of evaluation
/// order.
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x2545f4914f6cdd1d);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_triple_and_class() {
        let pert = make_example1();
        let v = pert.values(3.0, -1.0, 2.0);
        assert_eq!((v.xi, v.eta, v.zeta), (1.0, 1.0, 2.0));
        assert_eq!(pert.spec.theta(), 1.0);
        assert_eq!(pert.spec.kappa0(), 1.0);
        // the weighted expression is identically 3
        for tau in [0.1, 1.0, 7.0, 1e4] {
            let w = pert.spec.weighted(&pert.values(0.0, 0.0, tau), tau);
            assert!((w - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn example1_membership_reports() {
        let pert = make_example1();
        let plan = SamplePlan::default_for(1.0, 1e3);
        let ok = verify_deterministic_membership(&pert, &pert.spec, &plan);
        assert!(ok.passes);
        assert!((ok.empirical_sup - 3.0).abs() < 1e-9);
        assert!(!ok.unbounded_trend);

        let tight = ClassSpec::new(0.0, 0.0, 1.0, 2.0, ClassKind::Deterministic).unwrap();
        let fail = verify_deterministic_membership(&pert, &tight, &plan);
        assert!(!fail.passes);

        // zeta = tau^2 against c = 1 keeps growing with tau
        let quad = DeterministicPert::new(
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, _| 0.0),
            Box::new(|_, _, tau| tau * tau),
            tight,
        );
        let trend = verify_deterministic_membership(&quad, &tight, &plan);
        assert!(!trend.passes);
        assert!(trend.unbounded_trend);
    }

    #[test]
    fn example1_drift_values() {
        let p = ModelParams::new(1.0, 0.5, 0.2).unwrap();
        let d0 = example1_drift(&p, 0.0).unwrap();
        assert_eq!(d0.slope, 1.0);
        assert!((d0.phase_limit - (std::f64::consts::PI - 0.5f64.asin())).abs() < 1e-15);

        let d = example1_drift(&p, 0.1).unwrap();
        assert!((d.slope - 0.9).abs() < 1e-15);
        assert!((d.phase_limit - (std::f64::consts::PI - (0.5f64 / 1.1).asin())).abs() < 1e-12);
        assert!((d.phase_limit - 2.6697).abs() < 1e-3, "got {}", d.phase_limit);
        assert!((d.weighted_r_deviation(100.0) - 1.0).abs() < 1e-12);

        assert!(example1_drift(&p, 1.0).is_err());
    }

    #[test]
    fn infinite_horizon_regime() {
        let s = ClassSpec::new(-0.5, 0.0, -1.0, 1.0, ClassKind::Deterministic).unwrap();
        assert!(s.theta() <= 0.0);
        assert_eq!(s.kappa0(), f64::INFINITY);
        let s2 = ClassSpec::new(-0.6, -0.1, -0.2, 1.0, ClassKind::Random).unwrap();
        assert_eq!(s2.kappa0(), f64::INFINITY);
    }

    #[test]
    fn jump_train_two_jump_hand_integral() {
        // j1 = 1, j2 = -1, mu = 0.1: M_tau|J| peaks at 0.1 and is bounded by
        // mu (|j_n| + |j_{n+1}|) = 0.2 on [1, 2); nu = 3 * 2 = 6
        let spec = JumpTrainSpec {
            n: 2,
            jump_dist: DistSpec::Constant { value: 1.0 },
            mu: 0.1,
        };
        let mut path = sample_jump_train(&spec, 1).unwrap();
        if let PathKind::JumpTrain { jumps } = &mut path.kind {
            jumps[0] = 1.0;
            jumps[1] = -1.0;
        }
        path.nu = 6.0;
        for tau in [1.0f64, 1.05, 1.5, 1.95] {
            let m = path.moving_average_envelope(tau);
            assert!(m <= 3.0 * 0.2 + 1e-12, "M at {tau} = {m}");
        }
        // window [1, 2] catches jump 1 in full, jump 2 only at the boundary
        assert!((path.moving_average_envelope(1.0) - 0.3).abs() < 1e-12);
        // window [1.05, 2.05]: tail of jump 1 (0.05) + head of jump 2 (0.05)
        assert!((path.moving_average_envelope(1.05) - 0.3).abs() < 1e-12);
        // no unit window sees more than one full jump width
        let peak = (0..200)
            .map(|i| path.moving_average_envelope(i as f64 * 0.015))
            .fold(0.0f64, f64::max);
        assert!((peak - 0.3).abs() < 1e-12, "peak {peak}");
        let cls = ClassSpec::new(0.0, 0.0, 1.0, 6.0, ClassKind::Random).unwrap();
        let rep = verify_random_membership(&path, &cls);
        assert!(rep.passes, "{rep:?}");
    }

    #[test]
    fn all_zero_jumps_give_zero_path() {
        let spec = JumpTrainSpec {
            n: 5,
            jump_dist: DistSpec::Constant { value: 0.0 },
            mu: 0.2,
        };
        let path = sample_jump_train(&spec, 99).unwrap();
        assert_eq!(path.nu, 0.0);
        for tau in [0.5, 1.1, 3.0] {
            assert_eq!(path.envelope(tau), 0.0);
            assert_eq!(path.values(tau), PerturbationValues::zero());
        }
        let cls = ClassSpec::new(0.0, 0.0, 1.0, 1e-9, ClassKind::Random).unwrap();
        assert!(verify_random_membership(&path, &cls).passes);
    }

    #[test]
    fn single_jump_values_and_nu() {
        let path = RandomPertPath {
            kind: PathKind::SingleJump { omega: 5.0, jump: 0.3 },
            exponents: (0.0, 1.0, 1.0),
            nu: 0.9,
            mu: 0.1,
            seed: 0,
        };
        let v = path.values(5.05);
        assert!((v.xi - 0.3).abs() < 1e-15);
        assert!((v.eta - 1.515).abs() < 1e-15);
        assert!((v.zeta - 1.515).abs() < 1e-15);
        assert_eq!(path.values(4.9), PerturbationValues::zero());
        let cls = ClassSpec::new(0.0, 1.0, 1.0, 1.5, ClassKind::Random).unwrap();
        let rep = verify_random_membership(&path, &cls);
        assert!(rep.passes, "{rep:?}");
        assert!((rep.max_moving_average - 0.3 * 3.0 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_single_jump_is_inert() {
        let path = sample_single_jump(
            &DistSpec::Uniform { lo: 2.0, hi: 5.0 },
            &DistSpec::Constant { value: 0.0 },
            0.1,
            3,
        )
        .unwrap();
        assert_eq!(path.nu, 0.0);
        for tau in [1.0, 3.0, 4.5, 10.0] {
            assert_eq!(path.values(tau), PerturbationValues::zero());
            assert_eq!(path.envelope(tau), 0.0);
        }
    }

    #[test]
    fn sampled_single_jump_is_deterministic() {
        let om = DistSpec::Uniform { lo: 1.0, hi: 20.0 };
        let jd = DistSpec::Uniform { lo: -0.5, hi: 0.5 };
        let a = sample_single_jump(&om, &jd, 0.1, 7).unwrap();
        let b = sample_single_jump(&om, &jd, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_single_jump(&om, &jd, 0.1, 8).unwrap();
        assert_ne!(a, c);
        let jump = match &a.kind {
            PathKind::SingleJump { jump, .. } => *jump,
            _ => unreachable!(),
        };
        assert!((a.nu - 3.0 * jump.abs()).abs() < 1e-12);
    }

    #[test]
    fn jump_train_envelope_is_sound() {
        let spec = JumpTrainSpec {
            n: 10,
            jump_dist: DistSpec::Uniform { lo: -1.0, hi: 1.0 },
            mu: 0.05,
        };
        let cls = ClassSpec::new(0.0, 0.0, 1.0, 10.0, ClassKind::Random).unwrap();
        for seed in 0..50 {
            let path = sample_jump_train(&spec, seed).unwrap();
            let rep = verify_random_membership(&path, &cls);
            assert!(rep.envelope_ok && rep.moving_average_ok, "seed {seed}: {rep:?}");
        }
    }

    #[test]
    fn expected_nu_of_single_jump_matches_closed_form() {
        // nu = 3 |j| with j ~ U(-1, 1): E nu = 1.5
        let spec = RandomPertSpec::SingleJump {
            omega_dist: DistSpec::Uniform { lo: 1.0, hi: 10.0 },
            jump_dist: DistSpec::Uniform { lo: -1.0, hi: 1.0 },
            mu: 0.1,
        };
        let (mean, se) = estimate_expected_nu(&spec, 10_000, 11).unwrap();
        assert!((mean - 1.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn mean_abs_closed_forms() {
        assert!((DistSpec::Uniform { lo: -1.0, hi: 1.0 }.mean_abs() - 0.5).abs() < 1e-12);
        assert!((DistSpec::Uniform { lo: 1.0, hi: 3.0 }.mean_abs() - 2.0).abs() < 1e-12);
        assert!((DistSpec::Constant { value: -2.5 }.mean_abs() - 2.5).abs() < 1e-12);
        assert!(
            (DistSpec::TwoPoint { p: 0.25, v1: -4.0, v2: 2.0 }.mean_abs() - 2.5).abs() < 1e-12
        );
        // zero-mean gaussian: E|X| = sd sqrt(2/pi)
        let g = DistSpec::Gaussian { mean: 0.0, sd: 2.0 };
        assert!((g.mean_abs() - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-6);
        // monte carlo agreement for a shifted gaussian
        let g = DistSpec::Gaussian { mean: 0.7, sd: 1.3 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200_000;
        let emp: f64 = (0..n).map(|_| g.sample(&mut rng).abs()).sum::<f64>() / n as f64;
        assert!((emp - g.mean_abs()).abs() < 0.01, "emp {emp} vs {}", g.mean_abs());
    }

    #[test]
    fn duffing_map_values() {
        let quiet = ClassSpec::new(0.0, 0.0, 1.0, 10.0, ClassKind::Deterministic).unwrap();
        // a = 0, phi = 0 maps to the zero triple
        let zero = duffing_pert_map(
            Box::new(|_| 0.0),
            Box::new(|_| 0.0),
            None,
            0.01,
            quiet,
        )
        .unwrap();
        let v = zero.values(0.0, 0.0, 3.0);
        assert_eq!(v, PerturbationValues::zero());

        // a(t) = sin t at tau = pi eps / 2 means t = pi: xi = eta = 0
        let eps = 0.01;
        let sin_map = duffing_pert_map(
            Box::new(|t: f64| t.sin()),
            Box::new(|_| 0.0),
            None,
            eps,
            quiet,
        )
        .unwrap();
        let v = sin_map.values(0.0, 0.0, std::f64::consts::PI * eps / 2.0);
        assert!(v.xi.abs() < 1e-12 && v.eta.abs() < 1e-12);

        // phi(t) = 1e-6 t^2: zeta(tau) = -8e-4 t = -0.16 tau; finite
        // difference agrees with the analytic derivative to 1e-8
        let fd = duffing_pert_map(
            Box::new(|_| 0.0),
            Box::new(|t: f64| 1e-6 * t * t),
            None,
            eps,
            quiet,
        )
        .unwrap();
        let an = duffing_pert_map(
            Box::new(|_| 0.0),
            Box::new(|t: f64| 1e-6 * t * t),
            Some(Box::new(|t: f64| 2e-6 * t)),
            eps,
            quiet,
        )
        .unwrap();
        for tau in [0.5, 5.0, 50.0] {
            let z_fd = fd.values(0.0, 0.0, tau).zeta;
            let z_an = an.values(0.0, 0.0, tau).zeta;
            assert!((z_an - (-0.16 * tau)).abs() < 1e-12);
            assert!((z_fd - z_an).abs() < 1e-8 * z_an.abs().max(1.0));
        }
    }

    #[test]
    fn trial_seeds_are_spread() {
        let a = trial_seed(42, 0);
        let b = trial_seed(42, 1);
        let c = trial_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, trial_seed(42, 0));
    }
}
