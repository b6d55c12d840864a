//! Experiment configuration and the end-to-end pipeline: plan, prover
//! records, accumulation, recombination, decision. Also Monte Carlo
//! verification, the nullifier report and the fidelity oracle.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::certifier::{
    self, calibrate_epsilon, decide, diagnostics, fidelity_gap, target_variance_bounds, wilson_interval, ReducedCalibration,
    SamplePlan, TestConfig, VarianceBounds, Verdict, Z95,
};
use crate::error::{CertError, Result};
use crate::estimation::{
    self, accumulate, recombine, recombined_std_error, relevant_moments_gaussian, relevant_moments_lo, settings_gaussian, settings_lo,
    BudgetRule, LinearFunctional, MeasurementDesign, MomentEstimateStore, Setting, SettingPlan,
};
use crate::fock::{self, BoundForm, FockSpace, FockState, PostSelection};
use crate::gaussian;
use crate::prover::{self, derive_seed, Backend, Preparation, ProverScenario, Source};
use crate::records::{write_csv, SettingRecords};
use crate::state::PreparedState;
use crate::symplectic::{NetworkFile, NetworkSpec, TargetClass};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_SAMPLES: u64 = 50_000_000;

/// `literal` or `reduced:N` (N copies per moment).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetMode {
    Literal,
    Reduced(usize),
}

impl Default for BudgetMode {
    fn default() -> Self {
        BudgetMode::Reduced(10_000)
    }
}

impl FromStr for BudgetMode {
    type Err = CertError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "literal" {
            return Ok(BudgetMode::Literal);
        }
        match s.strip_prefix("reduced:").map(str::parse::<usize>) {
            Some(Ok(n)) if n > 0 => Ok(BudgetMode::Reduced(n)),
            _ => Err(CertError::InvalidParameter(format!("budget mode '{s}' is not 'literal' or 'reduced:N' with N > 0"))),
        }
    }
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetMode::Literal => write!(f, "literal"),
            BudgetMode::Reduced(n) => write!(f, "reduced:{n}"),
        }
    }
}

impl Serialize for BudgetMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BudgetMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A file path or the object itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FileOr<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> FileOr<T> {
    fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            FileOr::Inline(t) => Ok(t.clone()),
            FileOr::Path(p) => {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                let text = fs::read_to_string(&path)?;
                Ok(serde_json::from_str(&text)?)
            }
        }
    }
}

/// Ancilla modes are 1-based, as in the record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSelectionConfig {
    pub ancillas: Vec<usize>,
    pub occupations: Vec<usize>,
}

fn default_trials() -> usize {
    1
}

fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: FileOr<NetworkFile>,
    pub test: TestConfig,
    pub scenario: FileOr<ProverScenario>,
    #[serde(default)]
    pub budget_mode: BudgetMode,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub form: BoundForm,
    #[serde(default)]
    pub postselection: Option<PostSelectionConfig>,
    #[serde(default)]
    pub max_samples: Option<u64>,
    /// Variance bounds for literal planning; derived from the target when absent.
    #[serde(default)]
    pub bounds: Option<VarianceBounds>,
    /// Constant in the reported asymptotic envelope.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn network(&self) -> Result<NetworkSpec> {
        NetworkSpec::from_file(&self.network.resolve(&self.base_dir)?)
    }

    pub fn scenario(&self) -> Result<ProverScenario> {
        self.scenario.resolve(&self.base_dir)
    }

    pub fn validate(&self) -> Result<()> {
        self.test.validate()?;
        if self.trials == 0 {
            return Err(CertError::InvalidParameter("trials must be >= 1".into()));
        }
        Ok(())
    }

    fn postselection(&self, m: usize, cutoff: usize) -> Result<Option<PostSelection>> {
        let Some(ps) = &self.postselection else { return Ok(None) };
        if ps.ancillas.len() != ps.occupations.len() || ps.ancillas.iter().any(|&a| a == 0 || a > m) {
            return Err(CertError::InvalidParameter("post-selection needs one occupation per 1-based ancilla mode".into()));
        }
        if ps.occupations.iter().any(|&n| n > cutoff) {
            return Err(CertError::Cutoff { cutoff, reason: "ancilla occupation above cutoff".into() });
        }
        Ok(Some(PostSelection::fock(ps.ancillas.iter().map(|a| a - 1).collect(), ps.occupations.clone(), cutoff)))
    }
}

/// The target as seen by the certifier's variance model.
fn target_state(net: &NetworkSpec, backend: Backend, cutoff: usize, ps: Option<&PostSelection>) -> Result<PreparedState> {
    if ps.is_none() && backend == Backend::Gaussian && net.class() == TargetClass::Gaussian {
        return Ok(PreparedState::Gaussian(gaussian::prepare_gaussian_target(net)?));
    }
    let joint = fock::prepare_lo_target(net, cutoff)?;
    Ok(PreparedState::Fock(match ps {
        Some(p) => fock::post_select(&joint, p)?.0,
        None => joint,
    }))
}

fn base_settings(net: &NetworkSpec, system_modes: usize) -> SettingPlan {
    match net.class() {
        TargetClass::Gaussian => settings_gaussian(system_modes),
        _ => settings_lo(system_modes, net.photons().min(system_modes)),
    }
}

/// Everything fixed before the prover is asked for data.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub net: NetworkSpec,
    pub scenario: ProverScenario,
    pub postselection: Option<PostSelection>,
    pub probability: Option<f64>,
    pub functional: LinearFunctional,
    /// Test configuration with the epsilon actually guaranteed.
    pub test: TestConfig,
    pub calibration: Option<ReducedCalibration>,
    pub plan: Option<SamplePlan>,
    pub design: MeasurementDesign,
    pub prep: Preparation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictFile {
    pub schema_version: u32,
    pub seed: u64,
    pub budget_mode: BudgetMode,
    pub form: BoundForm,
    pub epsilon: f64,
    pub std_error: f64,
    pub total_copies: usize,
    pub settings: usize,
    pub supplementary_settings: usize,
    pub postselection_probability: Option<f64>,
    pub oracle_fidelity: Option<f64>,
    pub photon_mismatch: Option<f64>,
    pub verdict: Verdict,
}

pub struct TrialOutcome {
    pub verdict: VerdictFile,
    pub estimates: MomentEstimateStore,
    pub records: Vec<SettingRecords>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate().map_err(|e| e.at("config"))?;
        let net = config.network().map_err(|e| e.at("config"))?;
        let scenario = config.scenario().map_err(|e| e.at("config"))?;
        let ps = config.postselection(net.m, scenario.cutoff).map_err(|e| e.at("config"))?;
        let system_modes = net.m - ps.as_ref().map_or(0, |p| p.ancillas.len());

        let (functional, probability) = match &ps {
            Some(p) => {
                let (f, prob) = estimation::postselected_functional(&net, p, config.form, scenario.cutoff).map_err(|e| e.at("plan"))?;
                (f, Some(prob))
            }
            None => (estimation::fidelity_functional(&net, config.form).map_err(|e| e.at("plan"))?, None),
        };
        let target = target_state(&net, scenario.backend, scenario.cutoff, ps.as_ref()).map_err(|e| e.at("plan"))?;

        let (test, calibration, plan, rule) = match config.budget_mode {
            BudgetMode::Reduced(c) => {
                let cal = calibrate_epsilon(&functional, &target, c, &config.test).map_err(|e| e.at("plan"))?;
                let test = TestConfig { epsilon: cal.epsilon, ..config.test };
                (test, Some(cal), None, BudgetRule::Uniform(c))
            }
            BudgetMode::Literal => {
                let bounds = match config.bounds {
                    Some(b) => b,
                    None => target_variance_bounds(&functional, &target).map_err(|e| e.at("plan"))?,
                };
                let plan = certifier::plan(&config.test, &net, &bounds, config.form, probability, config.lambda).map_err(|e| e.at("plan"))?;
                let (first, second, higher) = plan.family_counts();
                (config.test, None, Some(plan), BudgetRule::PerFamily { first, second, higher })
            }
        };
        let design = MeasurementDesign::new(&functional, base_settings(&net, system_modes), rule).map_err(|e| e.at("plan"))?;
        let limit = config.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES);
        if design.total_copies() as u64 > limit {
            return Err(CertError::BudgetOverflow { requested: design.total_copies() as u64, limit }.at("plan"));
        }
        let prep = prover::prepare(&scenario, &net, ps.as_ref(), config.form).map_err(|e| e.at("prepare"))?;
        Ok(Experiment { config, net, scenario, postselection: ps, probability, functional, test, calibration, plan, design, prep })
    }

    /// One protocol instance with the given seed.
    pub fn run_trial(&self, seed: u64) -> Result<TrialOutcome> {
        let limit = self.config.max_samples.unwrap_or(DEFAULT_MAX_SAMPLES);
        let records =
            prover::respond(&self.prep, &self.design.plan, &self.design.budgets, seed, Some(limit)).map_err(|e| e.at("respond"))?;
        let estimates = accumulate(&records, &self.functional, &self.design).map_err(|e| e.at("accumulate"))?;
        let estimate = recombine(&self.functional, &estimates).map_err(|e| e.at("recombine"))?;
        let mut verdict = decide(estimate, &self.test);
        verdict.diagnostics = diagnostics(&self.functional, &estimates);
        let file = VerdictFile {
            schema_version: SCHEMA_VERSION,
            seed,
            budget_mode: self.config.budget_mode,
            form: self.config.form,
            epsilon: self.test.epsilon,
            std_error: recombined_std_error(&self.functional, &estimates),
            total_copies: self.design.total_copies(),
            settings: self.design.plan.settings.len(),
            supplementary_settings: self.design.plan.supplementary_count(),
            postselection_probability: self.probability,
            oracle_fidelity: self.prep.oracle_fidelity,
            photon_mismatch: self.prep.mismatch,
            verdict,
        };
        Ok(TrialOutcome { verdict: file, estimates, records })
    }

    pub fn expected(&self) -> Result<Expectation> {
        let Some(f) = self.prep.oracle_fidelity else { return Ok(Expectation::Either) };
        if f < self.test.f_t {
            return Ok(Expectation::Reject);
        }
        let gap = fidelity_gap(self.prep.mismatch.unwrap_or(f64::INFINITY), &self.test)?;
        Ok(if f >= self.test.f_t + gap { Expectation::Accept } else { Expectation::Either })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs one instance and writes verdict.json, estimates.json, plan.json and records.csv.
pub fn certify(config: ExperimentConfig, out: Option<&Path>) -> Result<VerdictFile> {
    let out = out.map(Path::to_path_buf).or_else(|| config.out.clone().map(|p| config.base_dir.join(p)));
    let exp = Experiment::new(config)?;
    let outcome = exp.run_trial(exp.config.seed)?;
    if let Some(dir) = out {
        let write = || -> Result<()> {
            fs::create_dir_all(&dir)?;
            write_json(&dir.join("verdict.json"), &outcome.verdict)?;
            write_json(&dir.join("estimates.json"), &outcome.estimates)?;
            write_json(&dir.join("plan.json"), &plan_report_for(&exp)?)?;
            write_csv(&outcome.records, fs::File::create(dir.join("records.csv"))?)
        };
        write().map_err(|e| e.at("write"))?;
    }
    Ok(outcome.verdict)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Accept,
    Reject,
    Either,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub estimate: f64,
    pub accept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub trials: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub acceptance_wilson95: (f64, f64),
    pub rejection_rate: f64,
    pub rejection_wilson95: (f64, f64),
    pub required_rate: f64,
    pub expectation: Expectation,
    /// Whether the expected outcome occurred with rate >= 1 - alpha.
    pub meets_guarantee: Option<bool>,
    pub epsilon: f64,
    pub oracle_fidelity: Option<f64>,
    pub photon_mismatch: Option<f64>,
    pub mean_estimate: f64,
    pub rows: Vec<TrialRow>,
}

/// Repeats the instance with seeds derived from (seed, trial index).
pub fn verify(config: ExperimentConfig, trials: usize) -> Result<VerifyReport> {
    let exp = Experiment::new(config)?;
    verify_experiment(&exp, trials)
}

pub fn verify_experiment(exp: &Experiment, trials: usize) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(CertError::InvalidParameter("trials must be >= 1".into()));
    }
    let rows: Vec<TrialRow> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(exp.config.seed, t as u64);
            let v = exp.run_trial(seed)?.verdict.verdict;
            Ok(TrialRow { trial: t, seed, estimate: v.estimate, accept: v.accept })
        })
        .collect::<Result<_>>()?;
    let accepted = rows.iter().filter(|r| r.accept).count();
    let rejected = trials - accepted;
    let expectation = exp.expected()?;
    let required = 1.0 - exp.test.alpha;
    let acc_rate = accepted as f64 / trials as f64;
    let rej_rate = rejected as f64 / trials as f64;
    Ok(VerifyReport {
        schema_version: SCHEMA_VERSION,
        trials,
        accepted,
        acceptance_rate: acc_rate,
        acceptance_wilson95: wilson_interval(accepted, trials, Z95),
        rejection_rate: rej_rate,
        rejection_wilson95: wilson_interval(rejected, trials, Z95),
        required_rate: required,
        expectation,
        meets_guarantee: match expectation {
            Expectation::Accept => Some(acc_rate >= required),
            Expectation::Reject => Some(rej_rate >= required),
            Expectation::Either => None,
        },
        epsilon: exp.test.epsilon,
        oracle_fidelity: exp.prep.oracle_fidelity,
        photon_mismatch: exp.prep.mismatch,
        mean_estimate: rows.iter().map(|r| r.estimate).sum::<f64>() / trials as f64,
        rows,
    })
}

pub fn write_verify(report: &VerifyReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("verify.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("trials.csv"))?;
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub schema_version: u32,
    pub class: TargetClass,
    pub m: usize,
    pub photons: usize,
    pub d: usize,
    pub kappa: usize,
    pub budget_mode: BudgetMode,
    pub epsilon: f64,
    pub plan: Option<SamplePlan>,
    pub calibration: Option<ReducedCalibration>,
    pub relevant_moments: Vec<String>,
    pub estimated_observables: usize,
    pub settings: Vec<Setting>,
    pub literal_settings: usize,
    pub supplementary_settings: usize,
    pub copies_per_setting: Vec<usize>,
    pub total_copies: usize,
}

fn plan_report_for(exp: &Experiment) -> Result<PlanReport> {
    let keys = match exp.net.class() {
        TargetClass::Gaussian => relevant_moments_gaussian(&exp.net),
        _ => relevant_moments_lo(&exp.net)?.keys,
    };
    let mut settings = exp.design.plan.clone();
    let keys_sys: Vec<_> = if exp.postselection.is_none() { keys.clone() } else { Vec::new() };
    settings.annotate(&keys_sys)?;
    Ok(PlanReport {
        schema_version: SCHEMA_VERSION,
        class: exp.net.class(),
        m: exp.net.m,
        photons: exp.net.photons(),
        d: exp.net.d,
        kappa: exp.net.kappa,
        budget_mode: exp.config.budget_mode,
        epsilon: exp.test.epsilon,
        plan: exp.plan.clone(),
        calibration: exp.calibration.clone(),
        relevant_moments: keys.iter().map(|k| k.to_string()).collect(),
        estimated_observables: exp.functional.terms.len(),
        literal_settings: settings.literal_count(),
        supplementary_settings: settings.supplementary_count(),
        settings: settings.settings,
        copies_per_setting: exp.design.budgets.clone(),
        total_copies: exp.design.total_copies(),
    })
}

/// Plan without running the prover. The literal plan is always included.
pub fn plan_report(config: ExperimentConfig) -> Result<PlanReport> {
    let literal_cfg = ExperimentConfig { budget_mode: BudgetMode::Literal, max_samples: Some(u64::MAX), ..config.clone() };
    let literal = Experiment::new(literal_cfg)?;
    if config.budget_mode == BudgetMode::Literal {
        return plan_report_for(&literal);
    }
    let mut report = plan_report_for(&Experiment::new(ExperimentConfig { max_samples: Some(u64::MAX), ..config })?)?;
    report.plan = literal.plan.clone();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSelectedNull {
    pub probability: f64,
    /// <N_S> on the post-selected target.
    pub expectation: f64,
    /// |N_S psi_S|
    pub annihilation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullifierReport {
    pub cutoff: usize,
    /// Commutators are compared on states with at most this many photons.
    pub safe_limit: usize,
    pub annihilation: Vec<f64>,
    pub commutators: Vec<(usize, usize, f64)>,
    pub max_annihilation: f64,
    pub max_commutator: f64,
    pub postselected: Option<PostSelectedNull>,
}

/// ||N_j psi_t|| for every nullifier and max |[N_i, N_j]| on the safe subspace.
pub fn nullifier_check(net: &NetworkSpec, cutoff: usize, ps: Option<&PostSelection>) -> Result<NullifierReport> {
    let n = net.photons();
    let safe_limit = cutoff.checked_sub(2 * (n + 1)).filter(|&l| l >= n).ok_or_else(|| CertError::Cutoff {
        cutoff,
        reason: format!("need cutoff >= {} for {n} photons", 3 * n + 2),
    })?;
    let target = if net.class() == TargetClass::Gaussian && !net.transform.is_passive() {
        return Err(CertError::ClassMismatch("nullifier check needs a passive network (Fock target)".into()));
    } else {
        fock::prepare_lo_target(net, cutoff)?
    };
    let psi = &target.components[0].amps;
    let ops: Vec<DMatrix<Complex64>> = (1..=net.m).map(|j| fock::nullifier_operator(net, j, cutoff)).collect::<Result<_>>()?;
    let annihilation: Vec<f64> = ops.iter().map(|o| (o * psi).norm()).collect();
    let safe = fock::safe_indices(&target.space(), safe_limit);
    let mut commutators = Vec::new();
    for i in 0..ops.len() {
        for j in i + 1..ops.len() {
            let c = &ops[i] * &ops[j] - &ops[j] * &ops[i];
            commutators.push((i + 1, j + 1, fock::restricted_max(&c, &safe)));
        }
    }
    let postselected = match ps {
        Some(p) => Some(postselected_null(net, cutoff, p)?),
        None => None,
    };
    Ok(NullifierReport {
        cutoff,
        safe_limit,
        max_annihilation: annihilation.iter().cloned().fold(0.0, f64::max),
        max_commutator: commutators.iter().map(|c| c.2).fold(0.0, f64::max),
        annihilation,
        commutators,
        postselected,
    })
}

/// N_S = (<phi|N|phi>_A - (1 - P)) / P with the normalized witness N.
fn postselected_null(net: &NetworkSpec, cutoff: usize, ps: &PostSelection) -> Result<PostSelectedNull> {
    let joint = fock::prepare_lo_target(net, cutoff)?;
    let (target_s, p) = fock::post_select(&joint, ps)?;
    let w = fock::witness_operator(net, cutoff, BoundForm::Normalized)?;
    let full = FockSpace::new(net.m, cutoff)?;
    let sys_modes = ps.system_modes(net.m);
    let ssp = target_s.space();
    let asp = FockSpace::new(ps.ancillas.len(), cutoff)?;
    let amp = |aocc: &[usize]| -> Complex64 { ps.states.iter().zip(aocc).map(|(v, &k)| v[k]).product() };
    let joint_index = |socc: &[usize], aocc: &[usize]| {
        let mut occ = vec![0; net.m];
        for (j, &s) in sys_modes.iter().enumerate() {
            occ[s] = socc[j];
        }
        for (j, &a) in ps.ancillas.iter().enumerate() {
            occ[a] = aocc[j];
        }
        full.index(&occ)
    };
    let mut ns = DMatrix::from_element(ssp.dim, ssp.dim, Complex64::new(0.0, 0.0));
    for r in 0..ssp.dim {
        let ro = ssp.occupation(r);
        for c in 0..ssp.dim {
            let co = ssp.occupation(c);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..asp.dim {
                let ko = asp.occupation(k);
                let ak = amp(&ko);
                if ak == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for l in 0..asp.dim {
                    let lo = asp.occupation(l);
                    let al = amp(&lo);
                    if al != Complex64::new(0.0, 0.0) {
                        acc += ak.conj() * w[(joint_index(&ro, &ko), joint_index(&co, &lo))] * al;
                    }
                }
            }
            ns[(r, c)] = acc;
        }
    }
    for i in 0..ssp.dim {
        ns[(i, i)] -= Complex64::new(1.0 - p, 0.0);
    }
    ns /= Complex64::new(p, 0.0);
    let psi = &target_s.components[0].amps;
    let v = &ns * psi;
    Ok(PostSelectedNull { probability: p, expectation: psi.dotc(&v).re, annihilation: v.norm() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub fidelity: Option<f64>,
    /// Fidelity bound evaluated on exact moments of the preparation.
    pub bound: Option<f64>,
    pub form: BoundForm,
    pub photon_mismatch: Option<f64>,
    pub postselection_probability: Option<f64>,
}

/// Exact fidelity and exact-moment bound for the configured preparation.
pub fn oracle(config: ExperimentConfig) -> Result<OracleReport> {
    let exp = Experiment::new(ExperimentConfig { budget_mode: BudgetMode::Literal, max_samples: Some(u64::MAX), ..config })?;
    let bound = match &exp.prep.source {
        Source::State { state } => Some(exp.functional.exact(state)),
        Source::Spoof { .. } => None,
    };
    Ok(OracleReport {
        fidelity: exp.prep.oracle_fidelity,
        bound,
        form: exp.config.form,
        photon_mismatch: exp.prep.mismatch,
        postselection_probability: exp.probability,
    })
}

/// The heralded-photon style target used by examples: a 50:50 beam splitter on |1,0>.
pub fn beam_splitter_network(n: usize) -> Result<NetworkSpec> {
    let u = crate::symplectic::beam_splitter(2, 0, 1, std::f64::consts::FRAC_PI_4, 0.0);
    NetworkSpec::linear_optical(crate::symplectic::orthogonal_from_unitary(&u), n)
}

/// Fock-space exact state for quick checks.
pub fn fock_target(net: &NetworkSpec, cutoff: usize) -> Result<FockState> {
    fock::prepare_lo_target(net, cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_mode_parsing() {
        assert_eq!("literal".parse::<BudgetMode>().unwrap(), BudgetMode::Literal);
        assert_eq!("reduced:500".parse::<BudgetMode>().unwrap(), BudgetMode::Reduced(500));
        assert!("reduced:0".parse::<BudgetMode>().is_err());
        assert!("fast".parse::<BudgetMode>().is_err());
        assert_eq!(serde_json::to_string(&BudgetMode::Reduced(7)).unwrap(), "\"reduced:7\"");
    }

    #[test]
    fn nullifier_report_examples() {
        let vac = NetworkSpec::gaussian(crate::symplectic::SymplecticTransform::identity(2));
        let r = nullifier_check(&vac, 4, None).unwrap();
        assert!(r.max_annihilation <= 1e-10 && r.max_commutator <= 1e-10);
        let bs = beam_splitter_network(2).unwrap();
        let r = nullifier_check(&bs, 8, None).unwrap();
        assert!(r.max_annihilation <= 1e-9, "{r:?}");
        assert!(r.max_commutator <= 1e-9, "{r:?}");
        assert!(nullifier_check(&bs, 5, None).is_err());
        let herald = beam_splitter_network(1).unwrap();
        let ps = PostSelection::fock(vec![1], vec![0], 6);
        let r = nullifier_check(&herald, 6, Some(&ps)).unwrap();
        let p = r.postselected.unwrap();
        assert!((p.probability - 0.5).abs() < 1e-12);
        assert!(p.expectation.abs() < 1e-10 && p.annihilation < 1e-10, "{p:?}");
    }
}
