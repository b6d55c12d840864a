//! The untrusted prover: builds the preparation from a scenario and answers a
//! setting schedule with homodyne records. It never sees thresholds.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::estimation::SettingPlan;
use crate::fock::{self, BoundForm, FockState, PostSelection};
use crate::gaussian::{self, noise_channel, NoiseChannel};
use crate::records::SettingRecords;
use crate::state::PreparedState;
use crate::symplectic::NetworkSpec;

/// SplitMix64 finalizer over (parent, stream); child seeds do not depend on
/// how many siblings exist.
pub fn derive_seed(parent: u64, stream: u64) -> u64 {
    let mut z = parent ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Gaussian,
    Fock,
}

/// Arbitrary outcome distributions for a prover that ignores quantum mechanics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Spoof {
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
    Constant { value: f64 },
    StudentT { dof: f64, scale: f64 },
}

impl Spoof {
    fn draw(&self, count: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<nalgebra::DMatrix<f64>> {
        let bad = |e: String| CertError::InvalidParameter(format!("spoof distribution: {e}"));
        let mut out = nalgebra::DMatrix::zeros(count, m);
        match *self {
            Spoof::Normal { mean, std } => {
                let d = Normal::new(mean, std).map_err(|e| bad(e.to_string()))?;
                out.iter_mut().for_each(|v| *v = d.sample(rng));
            }
            Spoof::Uniform { low, high } => {
                if !(low < high) {
                    return Err(bad("low must be below high".into()));
                }
                let d = Uniform::new(low, high);
                out.iter_mut().for_each(|v| *v = d.sample(rng));
            }
            Spoof::Constant { value } => out.fill(value),
            Spoof::StudentT { dof, scale } => {
                let d = StudentT::new(dof).map_err(|e| bad(e.to_string()))?;
                out.iter_mut().for_each(|v| *v = scale * d.sample(rng));
            }
        }
        Ok(out)
    }
}

/// Choice of the orthogonal component in F rho_t + (1 - F) rho_perp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum OrthogonalStyle {
    /// a_1^dagger applied to the target, with the target component removed.
    PhotonAdded,
    /// U|occ> for the target network's U (the lab basis state when no network is given).
    FockExcitation { occ: Vec<usize> },
    /// A random pure state orthogonal to the target.
    RandomPure { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "recipe", rename_all = "snake_case")]
pub enum Recipe {
    Honest,
    /// Gaussian channels applied in order to the target.
    Noise { channels: Vec<NoiseChannel> },
    Mixture { weight: f64, style: OrthogonalStyle },
    State { state: PreparedState },
    Spoof { distribution: Spoof },
}

fn one() -> f64 {
    1.0
}

fn default_cutoff() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProverScenario {
    pub backend: Backend,
    #[serde(flatten)]
    pub recipe: Recipe,
    /// Detector efficiency.
    #[serde(default = "one")]
    pub eta: f64,
    /// Per-mode photon cutoff of the Fock backend.
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
}

impl ProverScenario {
    pub fn honest(backend: Backend) -> Self {
        ProverScenario { backend, recipe: Recipe::Honest, eta: 1.0, cutoff: default_cutoff() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    State { state: PreparedState },
    Spoof { distribution: Spoof },
}

/// A ready preparation and what the oracles say about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preparation {
    pub source: Source,
    pub modes: usize,
    pub eta: f64,
    pub oracle_fidelity: Option<f64>,
    pub mismatch: Option<f64>,
}

/// The pure state orthogonal to `target` selected by `style`.
pub fn orthogonal_component(target: &FockState, net: Option<&NetworkSpec>, style: &OrthogonalStyle) -> Result<FockState> {
    if !target.is_pure() {
        return Err(CertError::InvalidParameter("target must be pure".into()));
    }
    let sp = target.space();
    let t = &target.components[0].amps;
    let raw = match style {
        OrthogonalStyle::PhotonAdded => {
            if target.max_total_photons() >= sp.cutoff {
                return Err(CertError::Cutoff { cutoff: sp.cutoff, reason: "no room to add a photon".into() });
            }
            sp.raise(t, 0)
        }
        OrthogonalStyle::FockExcitation { occ } => {
            let basis = FockState::basis(sp.m, sp.cutoff, occ)?;
            match net {
                Some(net) => fock::apply_passive(&basis, &fock::passive_unitary(net)?)?.components[0].amps.clone(),
                None => basis.components[0].amps.clone(),
            }
        }
        OrthogonalStyle::RandomPure { seed } => {
            let mut rng = rng_for(*seed);
            let mut v = DVector::from_element(sp.dim, Complex64::new(0.0, 0.0));
            for i in 0..sp.dim {
                if sp.total_photons(i) <= sp.cutoff {
                    v[i] = Complex64::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
                }
            }
            v
        }
    };
    let v = &raw - t * t.dotc(&raw);
    let norm = v.norm();
    if norm < 1e-9 {
        return Err(CertError::InvalidParameter("orthogonal component vanishes for this target".into()));
    }
    FockState::pure(sp.m, sp.cutoff, v / Complex64::new(norm, 0.0))
}

/// F rho_t + (1 - F) rho_perp with its photon mismatch (None at weight 1).
pub fn build_orthogonal_prep(
    target: &FockState,
    net: &NetworkSpec,
    style: &OrthogonalStyle,
    weight: f64,
    form: BoundForm,
) -> Result<(FockState, Option<f64>)> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(CertError::InvalidParameter(format!("mixture weight {weight} outside [0, 1]")));
    }
    if weight == 1.0 {
        return Ok((target.clone(), None));
    }
    let perp = orthogonal_component(target, Some(net), style)?;
    let prep = FockState::mixture(&[(weight, target), (1.0 - weight, &perp)])?;
    Ok((prep, Some(fock::witness_expectation(&perp, net, form)?)))
}

/// Builds the preparation for the (optionally post-selected) target.
pub fn prepare(scenario: &ProverScenario, net: &NetworkSpec, ps: Option<&PostSelection>, form: BoundForm) -> Result<Preparation> {
    if !(scenario.eta > 0.0 && scenario.eta <= 1.0) {
        return Err(CertError::InvalidParameter(format!("detector efficiency {} outside (0, 1]", scenario.eta)));
    }
    let modes = net.m - ps.map_or(0, |p| p.ancillas.len());
    let done = |source: Source, f: Option<f64>, n: Option<f64>| Preparation { source, modes, eta: scenario.eta, oracle_fidelity: f, mismatch: n };
    if let Recipe::Spoof { distribution } = &scenario.recipe {
        return Ok(done(Source::Spoof { distribution: distribution.clone() }, None, None));
    }
    match scenario.backend {
        Backend::Gaussian => {
            if ps.is_some() {
                return Err(CertError::ClassMismatch("post-selection needs the fock backend".into()));
            }
            let target = gaussian::prepare_gaussian_target(net)?;
            let state = match &scenario.recipe {
                Recipe::Honest => target,
                Recipe::Noise { channels } => channels.iter().try_fold(target, |s, c| noise_channel(&s, c))?,
                Recipe::State { state: PreparedState::Gaussian(g) } => g.clone(),
                Recipe::State { .. } => return Err(CertError::ClassMismatch("explicit state does not match the gaussian backend".into())),
                Recipe::Mixture { .. } => return Err(CertError::ClassMismatch("mixtures need the fock backend".into())),
                Recipe::Spoof { .. } => unreachable!(),
            };
            if state.modes() != net.m {
                return Err(CertError::Dimension("preparation and network mode counts differ".into()));
            }
            let f = gaussian::gaussian_fidelity_oracle(net, &state)?;
            Ok(done(Source::State { state: PreparedState::Gaussian(state) }, Some(f), None))
        }
        Backend::Fock => {
            let joint = fock::prepare_lo_target(net, scenario.cutoff)?;
            let target = match ps {
                Some(p) => fock::post_select(&joint, p)?.0,
                None => joint,
            };
            let (state, mismatch) = match &scenario.recipe {
                Recipe::Honest => (target.clone(), None),
                Recipe::Mixture { weight, style } => match ps {
                    None => build_orthogonal_prep(&target, net, style, *weight, form)?,
                    Some(p) => {
                        if !(0.0..=1.0).contains(weight) {
                            return Err(CertError::InvalidParameter(format!("mixture weight {weight} outside [0, 1]")));
                        }
                        let perp = orthogonal_component(&target, None, style)?;
                        let prep = FockState::mixture(&[(*weight, &target), (1.0 - weight, &perp)])?;
                        let n = if *weight < 1.0 {
                            Some(fock::photon_mismatch_postselected(net, p, scenario.cutoff, &prep, form)?.0)
                        } else {
                            None
                        };
                        (prep, n)
                    }
                },
                Recipe::State { state: PreparedState::Fock(f) } => (f.clone(), None),
                Recipe::State { .. } => return Err(CertError::ClassMismatch("explicit state does not match the fock backend".into())),
                Recipe::Noise { .. } => return Err(CertError::ClassMismatch("noise channels need the gaussian backend".into())),
                Recipe::Spoof { .. } => unreachable!(),
            };
            let f = fock::fidelity_oracle_fock(&target, &state)?;
            Ok(done(Source::State { state: PreparedState::Fock(state) }, Some(f), mismatch))
        }
    }
}

/// Draws `budgets[i]` trials for each setting of the schedule.
pub fn respond(prep: &Preparation, plan: &SettingPlan, budgets: &[usize], seed: u64, max_total: Option<u64>) -> Result<Vec<SettingRecords>> {
    if budgets.len() != plan.settings.len() {
        return Err(CertError::Dimension("one budget per setting required".into()));
    }
    if plan.m != prep.modes {
        return Err(CertError::Dimension(format!("schedule for {} modes, preparation has {}", plan.m, prep.modes)));
    }
    let requested: u64 = budgets.iter().map(|&b| b as u64).sum();
    if let Some(limit) = max_total {
        if requested > limit {
            return Err(CertError::BudgetOverflow { requested, limit });
        }
    }
    let noise_sd = ((1.0 - prep.eta) / (4.0 * prep.eta)).sqrt();
    plan.settings
        .par_iter()
        .zip(budgets.par_iter())
        .enumerate()
        .map(|(i, (setting, &count))| {
            let mut rng = rng_for(derive_seed(seed, i as u64));
            let mut outcomes = match &prep.source {
                Source::State { state } => state.sample(&setting.angles_rad, count, &mut rng)?,
                Source::Spoof { distribution } => distribution.draw(count, plan.m, &mut rng)?,
            };
            if noise_sd > 0.0 {
                let d = Normal::new(0.0, noise_sd).expect("finite sd");
                outcomes.iter_mut().for_each(|v| *v += d.sample(&mut rng));
            }
            Ok(SettingRecords { setting_id: i, angles: setting.angles_rad.clone(), outcomes })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certifier::{fidelity_gap, TestConfig};
    use crate::estimation::settings_gaussian;
    use crate::symplectic::SymplecticTransform;

    fn vac(m: usize) -> NetworkSpec {
        NetworkSpec::gaussian(SymplecticTransform::identity(m))
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(7, 4));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn orthogonal_mixture_examples() {
        let net = vac(1);
        let target = fock::prepare_lo_target(&net, 6).unwrap();
        let (p, n) = build_orthogonal_prep(&target, &net, &OrthogonalStyle::FockExcitation { occ: vec![1] }, 0.7, BoundForm::Literal).unwrap();
        assert!((fock::fidelity_oracle_fock(&target, &p).unwrap() - 0.7).abs() < 1e-12);
        assert!((n.unwrap() - 1.0).abs() < 1e-12);
        let (_, n2) = build_orthogonal_prep(&target, &net, &OrthogonalStyle::FockExcitation { occ: vec![2] }, 0.7, BoundForm::Literal).unwrap();
        assert!((n2.unwrap() - 2.0).abs() < 1e-12);
        let c = TestConfig::new(0.8, 0.2, 0.05).unwrap();
        assert!(fidelity_gap(2.0, &c).unwrap() > fidelity_gap(1.0, &c).unwrap());
        let (same, none) = build_orthogonal_prep(&target, &net, &OrthogonalStyle::PhotonAdded, 1.0, BoundForm::Literal).unwrap();
        assert_eq!((same, none), (target.clone(), None));
        let (r, _) = build_orthogonal_prep(&target, &net, &OrthogonalStyle::RandomPure { seed: 3 }, 0.4, BoundForm::Normalized).unwrap();
        assert!((fock::fidelity_oracle_fock(&target, &r).unwrap() - 0.4).abs() < 1e-12);
        assert!(build_orthogonal_prep(&target, &net, &OrthogonalStyle::PhotonAdded, 1.5, BoundForm::Literal).is_err());
    }

    #[test]
    fn detector_noise_shifts_variance() {
        let mut s = ProverScenario::honest(Backend::Gaussian);
        s.eta = 0.9;
        let prep = prepare(&s, &vac(1), None, BoundForm::Normalized).unwrap();
        let plan = settings_gaussian(1);
        let recs = respond(&prep, &plan, &[100_000, 0, 0, 0], 11, None).unwrap();
        let x = recs[0].outcomes.column(0);
        let var = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        let want = 0.25 + 0.1 / 3.6;
        assert!((var - want).abs() < 6.0 * want * (2.0f64 / 1e5).sqrt(), "{var}");
        assert!(matches!(respond(&prep, &plan, &[10, 10, 10, 10], 1, Some(20)), Err(CertError::BudgetOverflow { .. })));
    }

    #[test]
    fn mixture_photon_number() {
        let s = ProverScenario {
            backend: Backend::Fock,
            recipe: Recipe::Mixture { weight: 0.5, style: OrthogonalStyle::FockExcitation { occ: vec![1] } },
            eta: 1.0,
            cutoff: 6,
        };
        let prep = prepare(&s, &vac(1), None, BoundForm::Literal).unwrap();
        let plan = settings_gaussian(1);
        let recs = respond(&prep, &plan, &[20_000, 20_000, 0, 0], 5, None).unwrap();
        let msq = |r: &SettingRecords| r.outcomes.iter().map(|v| v * v).sum::<f64>() / r.trials() as f64;
        let nbar = msq(&recs[0]) + msq(&recs[1]) - 0.5;
        assert!((nbar - 0.5).abs() < 0.05, "{nbar}");
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ProverScenario>(&json).unwrap(), s);
    }
}
