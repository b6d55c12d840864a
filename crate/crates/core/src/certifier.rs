//! Budget planning, the accept/reject rule, robustness gaps, detector
//! inefficiency budgets and a few analytic side bounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::estimation::{settings_gaussian, settings_lo, Family, LinearFunctional, MomentEstimateStore};
use crate::fock::BoundForm;
use crate::state::PreparedState;
use crate::symplectic::{NetworkSpec, TargetClass};

/// Threshold fidelity, failure probability and estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub f_t: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

impl TestConfig {
    pub fn new(f_t: f64, alpha: f64, epsilon: f64) -> Result<Self> {
        let c = TestConfig { f_t, alpha, epsilon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_t < 1.0) || !self.f_t.is_finite() {
            return Err(CertError::InvalidParameter(format!("F_T = {} must be < 1", self.f_t)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(CertError::InvalidParameter(format!("alpha = {} must lie in (0, 1/2]", self.alpha)));
        }
        self.check_epsilon(self.epsilon)
    }

    pub fn check_epsilon(&self, eps: f64) -> Result<()> {
        let max = (1.0 - self.f_t) / 2.0;
        if !(eps > 0.0 && eps <= max + 1e-15) {
            return Err(CertError::InvalidParameter(format!("epsilon = {eps} must lie in (0, (1 - F_T)/2] = (0, {max:.6}]")));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        TestConfig::new(self.f_t, self.alpha, epsilon)
    }

    /// ln(1/(1-alpha)).
    pub fn log_term(&self) -> f64 {
        -(1.0 - self.alpha).ln()
    }
}

/// Variance bounds per estimate family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBounds {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_le: f64,
    /// Set when a class showed (near) zero spread and the floor was applied.
    #[serde(default)]
    pub degenerate: bool,
}

impl VarianceBounds {
    pub fn uniform(sigma: f64) -> Self {
        VarianceBounds { sigma1: sigma, sigma2: sigma, sigma_le: sigma, degenerate: false }
    }

    fn check(&self, which: &[f64]) -> Result<()> {
        if which.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(CertError::InvalidParameter(format!("variance bounds must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Smallest c with c >= sigma^2 (N+1) / (eps^2 ln(1/alpha_bar)).
pub fn chebyshev_count(sigma: f64, epsilon: f64, n: usize, alpha_bar: f64) -> Result<u64> {
    if !(0.5..1.0).contains(&alpha_bar) {
        return Err(CertError::InvalidParameter(format!("alpha_bar = {alpha_bar} must lie in [1/2, 1)")));
    }
    if !(sigma > 0.0 && epsilon > 0.0) || n == 0 {
        return Err(CertError::InvalidParameter("chebyshev_count needs sigma, epsilon > 0 and N >= 1".into()));
    }
    Ok(ceil_count(sigma * sigma * (n + 1) as f64 / (epsilon * epsilon * (1.0 / alpha_bar).ln())))
}

fn ceil_count(x: f64) -> u64 {
    // guard against 92332.99999999 style float noise on exact integers
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub class: TargetClass,
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub kappa: usize,
    /// Copies per first moment (0 when x = 0).
    pub c1: u64,
    /// Copies per second moment.
    pub c2: u64,
    /// Copies per moment of order <= 2(n+1).
    pub c_le: u64,
    /// Relevant-moment count the budget is multiplied by.
    pub n_le: usize,
    /// Pilot copies per first moment used when x = 0 removes C1.
    pub first_pilot: u64,
    pub total_copies: u64,
    pub settings_count: usize,
    pub postselection_p: Option<f64>,
    /// Effective epsilon the counts were computed for (P eps when post-selected).
    pub epsilon_eff: f64,
    /// Simplified asymptotic envelope evaluated with constant lambda.
    pub envelope: f64,
    pub lambda: f64,
    pub form: BoundForm,
}

impl SamplePlan {
    /// Per-observable copy counts by family, as consumed by the measurement design.
    pub fn family_counts(&self) -> (usize, usize, usize) {
        let first = if self.c1 == 0 { self.first_pilot } else { self.c1 };
        (first as usize, self.c2 as usize, self.c_le as usize)
    }
}

pub const DEFAULT_FIRST_PILOT: u64 = 100;

/// Budgets for Gaussian targets.
///
/// C1 >= 2^6 s1^2 (2m+1) m s^4 |x|^2 / (eps^2 ln(1/(1-alpha)))
/// C2 >= 2^5 s2^2 (2 kappa m+1) m^2 s^4 kappa / (eps^2 ln(1/(1-alpha)))
/// C = 2m C1 + 2 kappa m C2
pub fn plan_gaussian(config: &TestConfig, net: &NetworkSpec, bounds: &VarianceBounds) -> Result<SamplePlan> {
    config.validate()?;
    plan_gaussian_eps(config, net, bounds, config.epsilon, None, 1.0)
}

fn plan_gaussian_eps(
    config: &TestConfig,
    net: &NetworkSpec,
    bounds: &VarianceBounds,
    eps: f64,
    p: Option<f64>,
    lambda: f64,
) -> Result<SamplePlan> {
    if net.class() != TargetClass::Gaussian {
        return Err(CertError::ClassMismatch("plan_gaussian needs a Gaussian target".into()));
    }
    bounds.check(&[bounds.sigma1, bounds.sigma2])?;
    let m = net.m as f64;
    let kappa = net.kappa as f64;
    let s4 = net.transform.s_max().powi(4);
    let x2 = net.transform.x.norm_squared();
    let denom = eps * eps * config.log_term();
    let c1 = ceil_count(64.0 * bounds.sigma1.powi(2) * (2.0 * m + 1.0) * m * s4 * x2 / denom);
    let c2 = ceil_count(32.0 * bounds.sigma2.powi(2) * (2.0 * kappa * m + 1.0) * m * m * s4 * kappa / denom);
    let first_pilot = if x2 == 0.0 { DEFAULT_FIRST_PILOT } else { 0 };
    let total = (2 * net.m) as u64 * c1.max(first_pilot) + (2 * net.kappa * net.m) as u64 * c2;
    let envelope = lambda * s4 * (2.0 * bounds.sigma1.powi(2) * x2 * m.powi(3) + bounds.sigma2.powi(2) * kappa.powi(3) * m.powi(4)) / denom;
    Ok(SamplePlan {
        class: TargetClass::Gaussian,
        m: net.m,
        n: 0,
        d: net.d,
        kappa: net.kappa,
        c1,
        c2,
        c_le: 0,
        n_le: 2 * net.m + 2 * net.kappa * net.m,
        first_pilot,
        total_copies: total,
        settings_count: net.m + 3,
        postselection_p: p,
        epsilon_eff: eps,
        envelope,
        lambda,
        form: BoundForm::Normalized,
    })
}

/// (n + 5m/2) for the literal bound; the normalized form has one extra photon-number unit.
pub fn stability_prefactor(m: usize, n: usize, form: BoundForm) -> f64 {
    let base = n as f64 + 2.5 * m as f64;
    match form {
        BoundForm::Literal => base,
        BoundForm::Normalized => base + 1.0,
    }
}

/// (1/2 + 2 d sqrt(2 n m))^n
pub fn stability_growth(m: usize, n: usize, d: usize) -> f64 {
    (0.5 + 2.0 * d as f64 * ((2 * n * m) as f64).sqrt()).powi(n as i32)
}

/// Budgets for |1_n> linear-optical targets:
/// C_le >= s^2 (N+1) (n + 5m/2)^2 (1/2 + 2d sqrt(2nm))^(2n) / (eps^2 ln(1/(1-alpha))), C = N C_le.
pub fn plan_lo(config: &TestConfig, net: &NetworkSpec, bounds: &VarianceBounds, form: BoundForm) -> Result<SamplePlan> {
    config.validate()?;
    plan_lo_eps(config, net, bounds, form, config.epsilon, None, 1.0)
}

fn plan_lo_eps(
    config: &TestConfig,
    net: &NetworkSpec,
    bounds: &VarianceBounds,
    form: BoundForm,
    eps: f64,
    p: Option<f64>,
    lambda: f64,
) -> Result<SamplePlan> {
    match net.class() {
        TargetClass::Gaussian => return plan_gaussian_eps(config, net, bounds, eps, p, lambda),
        TargetClass::LinearOptical => {}
        TargetClass::General => return Err(CertError::ClassMismatch("plan_lo needs a |1_n> target".into())),
    }
    bounds.check(&[bounds.sigma_le])?;
    let (m, n, d) = (net.m, net.photons(), net.d);
    let big_n = crate::estimation::lo_count_formula(m, n, d);
    let factor = stability_prefactor(m, n, form) * stability_growth(m, n, d);
    let denom = eps * eps * config.log_term();
    let c_le = ceil_count(bounds.sigma_le.powi(2) * (big_n + 1) as f64 * factor * factor / denom);
    let envelope =
        bounds.sigma_le.powi(2) * (m as f64).powi(4) * (lambda * (d as f64).powi(6) * n as f64 * m as f64).powi(n as i32) / denom;
    Ok(SamplePlan {
        class: TargetClass::LinearOptical,
        m,
        n,
        d,
        kappa: net.kappa,
        c1: 0,
        c2: 0,
        c_le,
        n_le: big_n,
        first_pilot: 0,
        total_copies: (big_n as u64).saturating_mul(c_le),
        settings_count: settings_lo(m, n).settings.len(),
        postselection_p: p,
        epsilon_eff: eps,
        envelope,
        lambda,
        form,
    })
}

/// Post-selected targets: counts from the unconditioned planners with
/// eps -> P eps and generalized variance bounds.
pub fn plan_postselected(config: &TestConfig, net: &NetworkSpec, prob: f64, bounds: &VarianceBounds, form: BoundForm) -> Result<SamplePlan> {
    config.validate()?;
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(CertError::ZeroProbability(prob));
    }
    plan_lo_eps(config, net, bounds, form, prob * config.epsilon, Some(prob), 1.0)
}

/// Plan for any supported class; `lambda` scales only the reported envelope.
pub fn plan(config: &TestConfig, net: &NetworkSpec, bounds: &VarianceBounds, form: BoundForm, prob: Option<f64>, lambda: f64) -> Result<SamplePlan> {
    config.validate()?;
    let p = prob.unwrap_or(1.0);
    if !(p > 0.0 && p <= 1.0) {
        return Err(CertError::ZeroProbability(p));
    }
    plan_lo_eps(config, net, bounds, form, p * config.epsilon, prob, lambda)
}

/// Settings count for the class, matching the plan.
pub fn settings_count(net: &NetworkSpec) -> usize {
    match net.class() {
        TargetClass::Gaussian => settings_gaussian(net.m).settings.len(),
        _ => settings_lo(net.m, net.photons()).settings.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermDiagnostic {
    pub label: String,
    pub coef: f64,
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
    /// coef * mean
    pub contribution: f64,
}

pub fn diagnostics(functional: &LinearFunctional, store: &MomentEstimateStore) -> Vec<TermDiagnostic> {
    functional
        .terms
        .iter()
        .filter_map(|t| {
            store.get(&t.observable).map(|e| TermDiagnostic {
                label: e.label.clone(),
                coef: t.coef,
                mean: e.mean,
                std_error: e.variance.sqrt(),
                samples: e.samples,
                contribution: t.coef * e.mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub estimate: f64,
    pub accept: bool,
    pub config: TestConfig,
    #[serde(default)]
    pub diagnostics: Vec<TermDiagnostic>,
}

/// Accepts iff F* >= F_T + eps.
pub fn decide(estimate: f64, config: &TestConfig) -> Verdict {
    Verdict { estimate, accept: estimate >= config.f_t + config.epsilon, config: *config, diagnostics: Vec::new() }
}

/// max{(2 eps + (1 - F_T)(n - 1)) / n, 2 eps}; an infinite mismatch gives 1 - F_T.
pub fn fidelity_gap(n_mismatch: f64, config: &TestConfig) -> Result<f64> {
    if n_mismatch.is_nan() || n_mismatch < 0.0 {
        return Err(CertError::InvalidParameter(format!("photon mismatch {n_mismatch} must be >= 0")));
    }
    let two_eps = 2.0 * config.epsilon;
    if n_mismatch.is_infinite() {
        return Ok((1.0 - config.f_t).max(two_eps));
    }
    if n_mismatch == 0.0 {
        return Ok(two_eps);
    }
    Ok(((two_eps + (1.0 - config.f_t) * (n_mismatch - 1.0)) / n_mismatch).max(two_eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystematicBudget {
    /// Added variance per homodyne outcome, (1 - eta)/(4 eta).
    pub variance_shift: f64,
    /// Bound on the Gaussian fidelity-bound deviation, s^2 m (1 - eta)/(2 eta).
    pub fidelity_deviation: f64,
}

pub fn systematic_error_budget(eta: f64, s_max: f64, m: usize) -> Result<SystematicBudget> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(CertError::InvalidParameter(format!("eta = {eta} must lie in (0, 1]")));
    }
    Ok(SystematicBudget {
        variance_shift: (1.0 - eta) / (4.0 * eta),
        fidelity_deviation: s_max * s_max * m as f64 * (1.0 - eta) / (2.0 * eta),
    })
}

/// Smallest efficiency whose deviation stays within eps: s^2 m / (2 eps + s^2 m).
pub fn eta_threshold(s_max: f64, m: usize, epsilon: f64) -> f64 {
    let a = s_max * s_max * m as f64;
    a / (2.0 * epsilon + a)
}

/// Both sides of 1/(1 - e^(-1/x)) <= x + 1/(2+2x) + 1/2.
pub fn pochhammer_planning_bound(x: f64) -> (f64, f64) {
    let lhs = if x == 0.0 { 1.0 } else { 1.0 / -(-1.0 / x).exp_m1() };
    (lhs, x + 1.0 / (2.0 + 2.0 * x) + 0.5)
}

/// (1 - F^2, sqrt(1 - F^2))
pub fn trace_distance_bounds(f: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&f) {
        return Err(CertError::InvalidParameter(format!("fidelity {f} outside [0, 1]")));
    }
    let g = 1.0 - f * f;
    Ok((g, g.sqrt()))
}

pub const PILOT_MIN: usize = 100;
pub const PILOT_SAFETY: f64 = 2.0;
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Pilot samples per family: one vector of single-shot values per observable.
pub type PilotData = BTreeMap<Family, Vec<Vec<f64>>>;

/// Per-family max empirical variance times the safety factor.
pub fn estimate_variance_bounds(pilot: &PilotData) -> Result<VarianceBounds> {
    let mut sig = BTreeMap::new();
    let mut degenerate = false;
    for (fam, obs) in pilot {
        let mut worst: f64 = 0.0;
        for xs in obs {
            if xs.len() < PILOT_MIN {
                return Err(CertError::InsufficientPilot(format!("{fam:?} observable has {} < {PILOT_MIN} samples", xs.len())));
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            worst = worst.max(var);
        }
        let s = (PILOT_SAFETY * worst).sqrt();
        if s < SIGMA_FLOOR {
            degenerate = true;
        }
        sig.insert(*fam, s.max(SIGMA_FLOOR));
    }
    if sig.is_empty() {
        return Err(CertError::InsufficientPilot("no pilot data".into()));
    }
    let get = |f| sig.get(&f).copied().unwrap_or(SIGMA_FLOOR);
    let sigma_le = sig.values().copied().fold(0.0, f64::max);
    Ok(VarianceBounds { sigma1: get(Family::First), sigma2: get(Family::Second), sigma_le, degenerate })
}

/// Variance bounds from the target's own monomial variances, times the safety factor.
pub fn target_variance_bounds(functional: &LinearFunctional, target: &PreparedState) -> Result<VarianceBounds> {
    let mut sig: BTreeMap<Family, f64> = BTreeMap::new();
    for t in &functional.terms {
        let worst = t
            .observable
            .compile()?
            .terms
            .iter()
            .map(|(_, mo)| target.monomial_variance(mo))
            .fold(0.0, f64::max);
        let e = sig.entry(t.family).or_insert(0.0);
        *e = e.max((PILOT_SAFETY * worst).sqrt().max(SIGMA_FLOOR));
    }
    let get = |f| sig.get(&f).copied().unwrap_or(SIGMA_FLOOR);
    let sigma_le = sig.values().copied().fold(SIGMA_FLOOR, f64::max);
    Ok(VarianceBounds { sigma1: get(Family::First), sigma2: get(Family::Second), sigma_le, degenerate: false })
}

pub const MONOMIAL_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCalibration {
    pub family: Family,
    pub observables: usize,
    /// Error per unit standard deviation, sqrt((N+1)/(c ln(1/alpha_bar))).
    pub scale: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedCalibration {
    pub per_monomial: usize,
    pub alpha_bar: f64,
    pub epsilon: f64,
    pub families: Vec<FamilyCalibration>,
}

/// Achievable epsilon for a fixed count c per monomial batch.
///
/// Each family gets confidence alpha_bar = (1-alpha)^(1/#families). Within a
/// family the union bound over its N observables gives
/// |err_i| <= sigma_i sqrt((N+1)/(c ln(1/alpha_bar))), where sigma_i^2 sums
/// w_t^2 sigma_t^2 over the observable's monomials and sigma_t^2 is twice the
/// target monomial variance. The bound error is sum_i |coef_i| |err_i|.
pub fn calibrate_epsilon(functional: &LinearFunctional, target: &PreparedState, per_monomial: usize, config: &TestConfig) -> Result<ReducedCalibration> {
    if per_monomial == 0 {
        return Err(CertError::InvalidParameter("per-moment count must be positive".into()));
    }
    let sizes = functional.family_sizes();
    let alpha_bar = (1.0 - config.alpha).powf(1.0 / sizes.len().max(1) as f64);
    let mut families = Vec::new();
    let mut total = 0.0;
    for (&fam, &count) in &sizes {
        let scale = ((count + 1) as f64 / (per_monomial as f64 * (1.0 / alpha_bar).ln())).sqrt();
        let mut weighted = 0.0;
        for t in functional.terms.iter().filter(|t| t.family == fam) {
            let var: f64 = t
                .observable
                .compile()?
                .terms
                .iter()
                .map(|(w, mo)| w * w * (PILOT_SAFETY * target.monomial_variance(mo)).max(MONOMIAL_VARIANCE_FLOOR))
                .sum();
            weighted += t.coef.abs() * var.sqrt();
        }
        let contribution = scale * weighted;
        total += contribution;
        families.push(FamilyCalibration { family: fam, observables: count, scale, contribution });
    }
    config.check_epsilon(total).map_err(|_| {
        CertError::InvalidParameter(format!(
            "reduced budget of {per_monomial} per moment reaches only epsilon = {total:.4}, above (1 - F_T)/2 = {:.4}",
            (1.0 - config.f_t) / 2.0
        ))
    })?;
    Ok(ReducedCalibration { per_monomial, alpha_bar, epsilon: total, families })
}

/// Wilson score interval for k successes out of n at normal quantile z.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

pub const Z95: f64 = 1.959_963_984_540_054;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::SymplecticTransform;
    use nalgebra::DVector;

    #[test]
    fn config_ranges() {
        assert!(TestConfig::new(0.9, 0.1, 0.05).is_ok());
        assert!(TestConfig::new(0.9, 0.1, 0.6).is_err());
        assert!(TestConfig::new(0.9, 0.6, 0.01).is_err());
        assert!(TestConfig::new(1.0, 0.1, 0.01).is_err());
    }

    #[test]
    fn chebyshev_examples() {
        assert_eq!(chebyshev_count(1.0, 1.0, 1, 0.5).unwrap(), 3);
        let a = chebyshev_count(1.0, 0.01, 7, 0.9).unwrap();
        let b = chebyshev_count(2.0, 0.01, 7, 0.9).unwrap();
        assert!(b.abs_diff(4 * a) <= 4);
        assert!(chebyshev_count(1.0, 1.0, 1, 0.4).is_err());
        assert!(chebyshev_count(1.0, 1.0, 1, 1.0 - 1e-9).unwrap() > 1_000_000_000);
    }

    #[test]
    fn decision_and_gap_examples() {
        let c = TestConfig::new(0.9, 0.1, 0.01).unwrap();
        assert!(decide(1.0, &c).accept);
        assert!(!decide(0.905, &c).accept);
        assert!(decide(0.91, &c).accept);
        assert!((fidelity_gap(2.0, &c).unwrap() - 0.06).abs() < 1e-15);
        let c = TestConfig::new(0.8, 0.1, 0.05).unwrap();
        assert!((fidelity_gap(1.0, &c).unwrap() - 0.1).abs() < 1e-15);
        assert!((fidelity_gap(f64::INFINITY, &c).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(fidelity_gap(0.0, &c).unwrap(), 0.1);
    }

    #[test]
    fn systematic_examples() {
        let b = systematic_error_budget(0.9, 1.0, 1).unwrap();
        assert!((b.variance_shift - 0.027778).abs() < 1e-6);
        assert_eq!(systematic_error_budget(1.0, 2.0, 3).unwrap().fidelity_deviation, 0.0);
        assert!(systematic_error_budget(0.0, 1.0, 1).is_err());
        assert!((eta_threshold(1.0, 10, 0.05) - 0.990099).abs() < 1e-6);
    }

    #[test]
    fn side_bounds() {
        assert_eq!(pochhammer_planning_bound(0.0), (1.0, 1.0));
        let (l, r) = pochhammer_planning_bound(1.0);
        assert!((l - 1.5820).abs() < 1e-4 && r == 1.75);
        let (l, r) = trace_distance_bounds(0.8).unwrap();
        assert!((l - 0.36).abs() < 1e-12 && (r - 0.6).abs() < 1e-12);
        let (lo, hi) = wilson_interval(80, 100, Z95);
        assert!(lo < 0.8 && hi > 0.8 && lo > 0.7);
    }

    #[test]
    fn gaussian_plan_worked_example() {
        let mut t = SymplecticTransform::identity(2);
        t.x = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let net = NetworkSpec::gaussian(t);
        let cfg = TestConfig::new(0.5, 0.5, 0.1).unwrap();
        let p = plan_gaussian(&cfg, &net, &VarianceBounds::uniform(1.0)).unwrap();
        assert_eq!(p.c1, 92_333);
        assert_eq!(p.settings_count, 5);
        assert_eq!(p.total_copies, 4 * p.c1 + 8 * p.c2);
        let vac = NetworkSpec::gaussian(SymplecticTransform::identity(2));
        let p0 = plan_gaussian(&cfg, &vac, &VarianceBounds::uniform(1.0)).unwrap();
        assert_eq!((p0.c1, p0.first_pilot), (0, DEFAULT_FIRST_PILOT));
    }

    #[test]
    fn pilot_bounds() {
        let mut pilot = PilotData::new();
        pilot.insert(Family::First, vec![vec![0.3; 150]]);
        let b = estimate_variance_bounds(&pilot).unwrap();
        assert!(b.degenerate && b.sigma1 == SIGMA_FLOOR);
        pilot.insert(Family::Second, vec![vec![0.0; 20]]);
        assert!(matches!(estimate_variance_bounds(&pilot), Err(CertError::InsufficientPilot(_))));
    }
}
