//! Relevant moments, the fidelity-bound functionals over them, homodyne
//! setting plans, and accumulation of sample averages into estimates.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::fock::{self, BoundForm, FockState, PostSelection};
use crate::moments::{MomentKey, Observable};
use crate::records::SettingRecords;
use crate::state::PreparedState;
use crate::symplectic::{NetworkSpec, TargetClass, SPARSITY_THRESHOLD};
use crate::weyl::{angle_value, Compiled, HomodyneMonomial, Part, ANGLE_DIAG, ANGLE_P, ANGLE_Q};

/// Estimate families that share one confidence split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    First,
    Second,
    Higher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub observable: Observable,
    pub coef: f64,
    pub family: Family,
}

/// constant + sum_i coef_i <observable_i>
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearFunctional {
    pub constant: f64,
    pub terms: Vec<Term>,
}

#[derive(Default)]
struct Acc {
    constant: f64,
    map: BTreeMap<Observable, (f64, Family)>,
}

impl Acc {
    fn add(&mut self, obs: Observable, coef: f64, family: Family) {
        let e = self.map.entry(obs).or_insert((0.0, family));
        e.0 += coef;
    }

    fn add_key(&mut self, key: &MomentKey, coef: f64, family: Family) {
        self.add(key.observable(), coef, family);
    }

    fn finish(self) -> LinearFunctional {
        let terms = self
            .map
            .into_iter()
            .filter(|(_, (c, _))| c.abs() > SPARSITY_THRESHOLD)
            .map(|(observable, (coef, family))| Term { observable, coef, family })
            .collect();
        LinearFunctional { constant: self.constant, terms }
    }
}

impl LinearFunctional {
    pub fn evaluate(&self, mut value: impl FnMut(&Observable) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|t| t.coef * value(&t.observable)).sum::<f64>()
    }

    pub fn exact(&self, state: &PreparedState) -> f64 {
        self.evaluate(|o| state.observable(o))
    }

    /// Number of estimated observables per family.
    pub fn family_sizes(&self) -> BTreeMap<Family, usize> {
        let mut out = BTreeMap::new();
        for t in &self.terms {
            *out.entry(t.family).or_insert(0) += 1;
        }
        out
    }

    pub fn max_degree(&self) -> usize {
        self.terms.iter().map(|t| t.observable.degree()).max().unwrap_or(0)
    }

    pub fn scaled(mut self, factor: f64) -> LinearFunctional {
        self.constant *= factor;
        self.terms.iter_mut().for_each(|t| t.coef *= factor);
        self
    }
}

/// F0 = 1 + m/2 + x^T W (2 gamma - x) - Tr[W Gamma], W = O D^-2 O^T.
pub fn gaussian_functional(net: &NetworkSpec) -> LinearFunctional {
    let t = &net.transform;
    let w = t.weight_matrix();
    let x = &t.x;
    let wx = &w * x;
    let mut acc = Acc { constant: 1.0 + net.m as f64 / 2.0 - x.dot(&wx), ..Default::default() };
    for l in 0..2 * net.m {
        if wx[l].abs() > SPARSITY_THRESHOLD {
            acc.add_key(&MomentKey::Mean(l), 2.0 * wx[l], Family::First);
        }
        for k in 0..2 * net.m {
            if w[(l, k)].abs() > SPARSITY_THRESHOLD {
                acc.add_key(&MomentKey::pairs([(l, k)]), -w[(l, k)], Family::Second);
            }
        }
    }
    acc.finish()
}

fn photon_modes(net: &NetworkSpec) -> Result<Vec<usize>> {
    match net.class() {
        TargetClass::Gaussian | TargetClass::LinearOptical => {}
        TargetClass::General => {
            return Err(CertError::ClassMismatch("the moment functional needs a Gaussian or |1_n> linear-optical target".into()))
        }
    }
    Ok((0..net.m).filter(|&j| net.nvec[j] == 1).collect())
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in items.iter().enumerate() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Entries of the tensor product of projectors over `subset` as (pairs, weight).
fn projector_entries(proj: &[Vec<(usize, usize, f64)>], subset: &[usize]) -> Vec<(Vec<(usize, usize)>, f64)> {
    subset.iter().fold(vec![(Vec::new(), 1.0)], |acc, &j| {
        let mut out = Vec::with_capacity(acc.len() * proj[j].len());
        for (pairs, w) in &acc {
            for &(a, b, v) in &proj[j] {
                let mut p = pairs.clone();
                p.push((a, b));
                out.push((p, w * v));
            }
        }
        out
    })
}

/// The linear-optical bound as a functional of moment tensors of order <= n+1.
///
/// Literal: 1 - sum_j (-1/2)^(n-j) sum_mu { Tr[(P..) Gamma^(j) (x) 1] - (m+2n)/2 Tr[(P..) Gamma^(j)] }.
/// Normalized: the same sum with (m+2n+2)/2 and no leading 1.
/// For n = 0 both reduce to the Gaussian functional with D = I.
pub fn lo_functional(net: &NetworkSpec, form: BoundForm) -> Result<LinearFunctional> {
    let modes = photon_modes(net)?;
    let n = modes.len();
    if n == 0 {
        return Ok(gaussian_functional(net));
    }
    let m = net.m;
    let proj: Vec<Vec<(usize, usize, f64)>> = net.projectors().iter().map(|p| p.nonzeros()).collect();
    let k_const = match form {
        BoundForm::Literal => (m + 2 * n) as f64 / 2.0,
        BoundForm::Normalized => (m + 2 * n + 2) as f64 / 2.0,
    };
    let mut acc = Acc { constant: if form == BoundForm::Literal { 1.0 } else { 0.0 }, ..Default::default() };
    for j in 0..=n {
        let c = (-0.5f64).powi((n - j) as i32);
        for subset in combinations(&modes, j) {
            for (pairs, w) in projector_entries(&proj, &subset) {
                if j == 0 {
                    acc.constant += c * k_const * w;
                } else {
                    acc.add_key(&MomentKey::pairs(pairs.clone()), c * k_const * w, Family::Higher);
                }
                for k in 0..2 * m {
                    let mut p = pairs.clone();
                    p.push((k, k));
                    acc.add_key(&MomentKey::pairs(p), -c * w, Family::Higher);
                }
            }
        }
    }
    Ok(acc.finish())
}

/// The bound functional appropriate for the network's class.
pub fn fidelity_functional(net: &NetworkSpec, form: BoundForm) -> Result<LinearFunctional> {
    match net.class() {
        TargetClass::Gaussian => Ok(gaussian_functional(net)),
        _ => lo_functional(net, form),
    }
}

/// Rewrites a functional of the joint state rho_S (x) |phi><phi| as a
/// functional of system-mode observables, divided by the success probability.
pub fn postselect_functional(joint: &LinearFunctional, ps: &PostSelection, m: usize, prob: f64) -> Result<LinearFunctional> {
    if !(prob > 0.0) {
        return Err(CertError::ZeroProbability(prob));
    }
    let system = ps.system_modes(m);
    let ancillas: Vec<FockState> = ps
        .states
        .iter()
        .map(|v| FockState::pure(1, v.len() - 1, v.clone()))
        .collect::<Result<_>>()?;
    let mut acc = Acc { constant: joint.constant, ..Default::default() };
    for term in &joint.terms {
        let mut za = num_complex::Complex64::new(1.0, 0.0);
        for (mode, word) in &term.observable.words {
            if let Some(pos) = ps.ancillas.iter().position(|a| a == mode) {
                za *= ancilla_expectation(&ancillas[pos], word)?;
            }
        }
        let sys_words = Observable::restrict(&term.observable.words, &system);
        let c = term.coef;
        if sys_words.is_empty() {
            acc.constant += c * match term.observable.part {
                Part::Re => za.re,
                Part::Im => za.im,
            };
            continue;
        }
        let (obs_re, s_re) = Observable::canonical(sys_words.clone(), Part::Re);
        let (obs_im, s_im) = Observable::canonical(sys_words, Part::Im);
        let (w_re, w_im) = match term.observable.part {
            Part::Re => (c * za.re * s_re, -c * za.im * s_im),
            Part::Im => (c * za.im * s_re, c * za.re * s_im),
        };
        if w_re.abs() > SPARSITY_THRESHOLD {
            acc.add(obs_re, w_re, term.family);
        }
        if w_im.abs() > SPARSITY_THRESHOLD && !obs_im.symbol().terms.is_empty() {
            acc.add(obs_im, w_im, term.family);
        }
    }
    Ok(acc.finish().scaled(1.0 / prob))
}

fn ancilla_expectation(phi: &FockState, word: &[crate::weyl::Block]) -> Result<num_complex::Complex64> {
    let deg: usize = word.iter().map(|b| b.degree()).sum();
    let need = phi.support()[0] + deg.div_ceil(2);
    let phi = if need > phi.cutoff { phi.with_cutoff(need)? } else { phi.clone() };
    Ok(fock::expect_words(&phi, &[(0, word.to_vec())]).value)
}

/// Success probability of the post-selection on the Fock-space target.
pub fn postselection_probability(net: &NetworkSpec, ps: &PostSelection, cutoff: usize) -> Result<f64> {
    let target = fock::prepare_lo_target(net, cutoff)?;
    Ok(fock::post_select(&target, ps)?.1)
}

/// Post-selected bound functional over system-mode observables.
pub fn postselected_functional(net: &NetworkSpec, ps: &PostSelection, form: BoundForm, cutoff: usize) -> Result<(LinearFunctional, f64)> {
    let prob = postselection_probability(net, ps, cutoff)?;
    let joint = fidelity_functional(net, form)?;
    Ok((postselect_functional(&joint, ps, net.m, prob)?, prob))
}

/// Relevant first and second moments of the Gaussian bound.
pub fn relevant_moments_gaussian(net: &NetworkSpec) -> Vec<MomentKey> {
    let w = net.transform.weight_matrix();
    let mut keys: Vec<MomentKey> = (0..2 * net.m).map(MomentKey::Mean).collect();
    for l in 0..2 * net.m {
        for k in l..2 * net.m {
            if w[(l, k)].abs() > SPARSITY_THRESHOLD {
                keys.push(MomentKey::pairs([(l, k)]));
            }
        }
    }
    keys
}

/// Ordered nonzero entries of O D^-2 O^T, as counted by the sparsity bound.
pub fn gaussian_raw_second_count(net: &NetworkSpec) -> usize {
    net.transform.weight_matrix().iter().filter(|v| v.abs() > SPARSITY_THRESHOLD).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoMoments {
    /// Distinct keys after within-pair canonicalization.
    pub keys: Vec<MomentKey>,
    /// Tensor entries counted without symmetry, Gamma^(0) included.
    pub raw: usize,
    /// (1 + 2m)(4d^2 + 1)^n
    pub formula: usize,
}

pub fn lo_count_formula(m: usize, n: usize, d: usize) -> usize {
    (1 + 2 * m) * (4 * d * d + 1).pow(n as u32)
}

pub fn relevant_moments_lo(net: &NetworkSpec) -> Result<LoMoments> {
    let modes = photon_modes(net)?;
    let n = modes.len();
    let formula = lo_count_formula(net.m, n, net.d);
    if n == 0 {
        let keys = relevant_moments_gaussian(net);
        let raw = 1 + gaussian_raw_second_count(net);
        return Ok(LoMoments { keys, raw, formula });
    }
    let proj: Vec<Vec<(usize, usize, f64)>> = net.projectors().iter().map(|p| p.nonzeros()).collect();
    let mut keys = BTreeSet::new();
    let mut raw = 0;
    for j in 0..=n {
        for subset in combinations(&modes, j) {
            for (pairs, _) in projector_entries(&proj, &subset) {
                raw += 1 + 2 * net.m;
                if j > 0 {
                    keys.insert(MomentKey::pairs(pairs.clone()));
                }
                for k in 0..2 * net.m {
                    let mut p = pairs.clone();
                    p.push((k, k));
                    keys.insert(MomentKey::pairs(p));
                }
            }
        }
    }
    Ok(LoMoments { keys: keys.into_iter().collect(), raw, formula })
}

/// One homodyne arrangement: an angle index per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub angles: Vec<u8>,
    pub angles_rad: Vec<f64>,
    /// Added beyond the literal scheme to reach rotated angles it lacks.
    pub supplementary: bool,
    pub serves: Vec<String>,
}

impl Setting {
    fn new(angles: Vec<u8>, supplementary: bool) -> Setting {
        let angles_rad = angles.iter().map(|&a| angle_value(a)).collect();
        Setting { angles, angles_rad, supplementary, serves: Vec::new() }
    }

    pub fn covers(&self, mono: &HomodyneMonomial) -> bool {
        mono.factors.iter().all(|&(mode, a, _)| self.angles[mode] == a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingPlan {
    pub m: usize,
    pub settings: Vec<Setting>,
}

impl SettingPlan {
    fn push_unique(&mut self, angles: Vec<u8>, supplementary: bool) {
        if !self.settings.iter().any(|s| s.angles == angles) {
            self.settings.push(Setting::new(angles, supplementary));
        }
    }

    pub fn literal_count(&self) -> usize {
        self.settings.iter().filter(|s| !s.supplementary).count()
    }

    pub fn supplementary_count(&self) -> usize {
        self.settings.len() - self.literal_count()
    }

    pub fn find(&self, mono: &HomodyneMonomial) -> Option<usize> {
        self.settings.iter().position(|s| s.covers(mono))
    }

    /// Adds supplementary settings until every monomial is covered, packing
    /// compatible monomials greedily into shared settings.
    pub fn complete<'a>(&mut self, monos: impl IntoIterator<Item = &'a HomodyneMonomial>) {
        let missing: BTreeSet<&HomodyneMonomial> = monos.into_iter().filter(|mo| self.find(mo).is_none()).collect();
        let mut partial: Vec<Vec<Option<u8>>> = Vec::new();
        for mono in missing {
            let fits = |p: &Vec<Option<u8>>| mono.factors.iter().all(|&(j, a, _)| p[j].is_none_or(|b| b == a));
            let slot = match partial.iter().position(fits) {
                Some(i) => i,
                None => {
                    partial.push(vec![None; self.m]);
                    partial.len() - 1
                }
            };
            for &(j, a, _) in &mono.factors {
                partial[slot][j] = Some(a);
            }
        }
        for p in partial {
            self.push_unique(p.into_iter().map(|a| a.unwrap_or(ANGLE_Q)).collect(), true);
        }
    }

    /// Labels each setting with the moment keys whose compiled monomials it measures.
    pub fn annotate(&mut self, keys: &[MomentKey]) -> Result<()> {
        for key in keys {
            let compiled = key.observable().compile()?;
            for s in self.settings.iter_mut() {
                if compiled.terms.iter().any(|(_, mo)| s.covers(mo)) {
                    s.serves.push(key.to_string());
                }
            }
        }
        Ok(())
    }
}

/// All-q, all-p, one p per mode with the rest q, and all rotated by pi/4.
pub fn settings_gaussian(m: usize) -> SettingPlan {
    let mut plan = SettingPlan { m, settings: Vec::new() };
    plan.settings.push(Setting::new(vec![ANGLE_Q; m], false));
    plan.settings.push(Setting::new(vec![ANGLE_P; m], false));
    for j in 0..m {
        let mut a = vec![ANGLE_Q; m];
        a[j] = ANGLE_P;
        plan.settings.push(Setting::new(a, false));
    }
    plan.settings.push(Setting::new(vec![ANGLE_DIAG; m], false));
    plan
}

/// For each n-subset S: S at q with the rest at p, S at p with the rest at q,
/// and each of the two with any part of S turned to pi/4. Duplicates removed.
pub fn settings_lo(m: usize, n: usize) -> SettingPlan {
    if n == 0 {
        return settings_gaussian(m);
    }
    let mut plan = SettingPlan { m, settings: Vec::new() };
    let all: Vec<usize> = (0..m).collect();
    for subset in combinations(&all, n.min(m)) {
        for (inside, outside) in [(ANGLE_Q, ANGLE_P), (ANGLE_P, ANGLE_Q)] {
            for mask in 0..(1usize << subset.len()) {
                let mut a = vec![outside; m];
                for (b, &j) in subset.iter().enumerate() {
                    a[j] = if mask >> b & 1 == 1 { ANGLE_DIAG } else { inside };
                }
                plan.push_unique(a, false);
            }
        }
    }
    plan
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Per-monomial sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetRule {
    /// The same count for every (observable, monomial) batch.
    Uniform(usize),
    /// Per-observable counts by family; an observable compiled into several
    /// monomials gets n_t = ceil(C |w_t| sum|w|) so its estimator variance
    /// stays within sigma^2 / C.
    PerFamily { first: usize, second: usize, higher: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub term: usize,
    pub monomial: HomodyneMonomial,
    pub weight: f64,
    pub setting: usize,
    /// First trial index within the setting.
    pub start: usize,
    pub count: usize,
}

/// Which trials of which setting feed which monomial of which observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDesign {
    pub plan: SettingPlan,
    pub compiled: Vec<Compiled>,
    pub batches: Vec<Batch>,
    /// Trials requested per setting.
    pub budgets: Vec<usize>,
}

impl MeasurementDesign {
    pub fn new(functional: &LinearFunctional, mut plan: SettingPlan, rule: BudgetRule) -> Result<Self> {
        let compiled: Vec<Compiled> = functional.terms.iter().map(|t| t.observable.compile()).collect::<Result<_>>()?;
        plan.complete(compiled.iter().flat_map(|c| c.terms.iter().map(|(_, mo)| mo)));
        let mut budgets = vec![0usize; plan.settings.len()];
        let mut batches = Vec::new();
        for (i, (term, comp)) in functional.terms.iter().zip(&compiled).enumerate() {
            let l1: f64 = comp.terms.iter().map(|(w, _)| w.abs()).sum();
            for (w, mono) in &comp.terms {
                let count = match rule {
                    BudgetRule::Uniform(c) => c,
                    BudgetRule::PerFamily { first, second, higher } => {
                        let c = match term.family {
                            Family::First => first,
                            Family::Second => second,
                            Family::Higher => higher,
                        };
                        (c as f64 * w.abs() * l1).ceil() as usize
                    }
                };
                if count == 0 {
                    return Err(CertError::InvalidParameter(format!("zero samples planned for {}", term.observable)));
                }
                let setting = plan.find(mono).expect("plan completed above");
                batches.push(Batch { term: i, monomial: mono.clone(), weight: *w, setting, start: budgets[setting], count });
                budgets[setting] += count;
            }
        }
        Ok(MeasurementDesign { plan, compiled, batches, budgets })
    }

    pub fn total_copies(&self) -> usize {
        self.budgets.iter().sum()
    }

    pub fn angles_rad(&self, setting: usize) -> Vec<f64> {
        self.plan.settings[setting].angles_rad.clone()
    }
}

/// Welford running mean and second central moment; merges associatively.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        RunningStats {
            n,
            mean: self.mean + d * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Per-batch partial sums; combine with [`PartialStore::merge`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialStore {
    pub stats: Vec<RunningStats>,
}

impl PartialStore {
    pub fn empty(design: &MeasurementDesign) -> Self {
        PartialStore { stats: vec![RunningStats::default(); design.batches.len()] }
    }

    pub fn merge(mut self, other: &PartialStore) -> PartialStore {
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            *a = a.merge(b);
        }
        self
    }
}

/// Folds one setting's trials into the batches that use it.
pub fn accumulate_setting(rec: &SettingRecords, design: &MeasurementDesign) -> Result<PartialStore> {
    let mut part = PartialStore::empty(design);
    let expected = design
        .plan
        .settings
        .get(rec.setting_id)
        .ok_or(CertError::IndexOutOfRange { index: rec.setting_id, max: design.plan.settings.len() })?;
    if expected.angles_rad.iter().zip(&rec.angles).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(CertError::Sampling(format!("setting {} recorded at unexpected angles", rec.setting_id)));
    }
    let mut row = vec![0.0; design.plan.m];
    for (b, batch) in design.batches.iter().enumerate().filter(|(_, b)| b.setting == rec.setting_id) {
        let end = (batch.start + batch.count).min(rec.trials());
        for t in batch.start..end {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rec.outcomes[(t, j)];
            }
            part.stats[b].push(batch.monomial.evaluate_row(&row));
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub observable: Observable,
    pub label: String,
    pub mean: f64,
    /// Variance of the estimate, summed over its independent batches.
    pub variance: f64,
    pub samples: u64,
    /// True when the estimate combines several monomials or an offset.
    pub derived: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentEstimateStore {
    pub entries: Vec<MomentEstimate>,
}

impl MomentEstimateStore {
    pub fn get(&self, obs: &Observable) -> Option<&MomentEstimate> {
        self.entries.iter().find(|e| &e.observable == obs)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn finalize(part: &PartialStore, functional: &LinearFunctional, design: &MeasurementDesign) -> Result<MomentEstimateStore> {
    let mut entries: Vec<MomentEstimate> = functional
        .terms
        .iter()
        .zip(&design.compiled)
        .map(|(t, c)| MomentEstimate {
            observable: t.observable.clone(),
            label: t.observable.to_string(),
            mean: c.constant,
            variance: 0.0,
            samples: 0,
            derived: c.terms.len() > 1 || c.constant != 0.0,
        })
        .collect();
    for (batch, st) in design.batches.iter().zip(&part.stats) {
        if st.n == 0 {
            return Err(CertError::MissingMoment(format!("no samples for {} ({})", entries[batch.term].label, batch.monomial)));
        }
        let e = &mut entries[batch.term];
        e.mean += batch.weight * st.mean;
        e.variance += batch.weight * batch.weight * st.variance() / st.n as f64;
        e.samples += st.n;
    }
    Ok(MomentEstimateStore { entries })
}

/// Accumulates all records, one parallel fold per setting.
pub fn accumulate(records: &[SettingRecords], functional: &LinearFunctional, design: &MeasurementDesign) -> Result<MomentEstimateStore> {
    let parts: Vec<PartialStore> = records.par_iter().map(|r| accumulate_setting(r, design)).collect::<Result<_>>()?;
    let total = parts.iter().fold(PartialStore::empty(design), |acc, p| acc.merge(p));
    finalize(&total, functional, design)
}

/// Plugs estimates into the functional.
pub fn recombine(functional: &LinearFunctional, store: &MomentEstimateStore) -> Result<f64> {
    let mut missing = None;
    let v = functional.evaluate(|o| match store.get(o) {
        Some(e) => e.mean,
        None => {
            missing.get_or_insert_with(|| o.to_string());
            0.0
        }
    });
    match missing {
        Some(label) => Err(CertError::MissingMoment(label)),
        None => Ok(v),
    }
}

/// Standard error of the recombined estimate from the propagated variances.
pub fn recombined_std_error(functional: &LinearFunctional, store: &MomentEstimateStore) -> f64 {
    functional
        .terms
        .iter()
        .filter_map(|t| store.get(&t.observable).map(|e| t.coef * t.coef * e.variance))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianState;
    use crate::symplectic::SymplecticTransform;
    use nalgebra::{DMatrix, DVector};

    fn squeezer(s: f64) -> NetworkSpec {
        let t = SymplecticTransform::new(DMatrix::identity(2, 2), vec![s], DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        NetworkSpec::gaussian(t)
    }

    #[test]
    fn gaussian_relevant_moment_examples() {
        let id = NetworkSpec::gaussian(SymplecticTransform::identity(2));
        let keys = relevant_moments_gaussian(&id);
        assert_eq!(keys.iter().filter(|k| k.order() == 0).count(), 4);
        let second: Vec<String> = keys.iter().filter(|k| k.order() == 1).map(|k| k.to_string()).collect();
        assert_eq!(second, ["G(1,1)", "G(2,2)", "G(3,3)", "G(4,4)"]);
        let f = gaussian_functional(&squeezer(2.0));
        let coefs: Vec<f64> = f.terms.iter().map(|t| t.coef).collect();
        assert_eq!(coefs, [-0.25, -4.0]);
    }

    #[test]
    fn f0_examples_from_exact_moments() {
        let vac = PreparedState::Gaussian(GaussianState::vacuum(2));
        let id = NetworkSpec::gaussian(SymplecticTransform::identity(2));
        assert!((gaussian_functional(&id).exact(&vac) - 1.0).abs() < 1e-14);
        let sq = PreparedState::Gaussian(crate::gaussian::prepare_gaussian_target(&squeezer(2.0)).unwrap());
        let vac1 = NetworkSpec::gaussian(SymplecticTransform::identity(1));
        assert!((gaussian_functional(&vac1).exact(&sq) - 0.4375).abs() < 1e-14);
        let mut t = SymplecticTransform::identity(1);
        t.x = DVector::from_vec(vec![1.0, 0.0]);
        let disp = NetworkSpec::gaussian(t);
        let target = PreparedState::Gaussian(crate::gaussian::prepare_gaussian_target(&disp).unwrap());
        assert!((gaussian_functional(&disp).exact(&target) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lo_count_and_plan_examples() {
        assert_eq!(lo_count_formula(3, 1, 1), 35);
        let net = NetworkSpec::linear_optical(DMatrix::identity(6, 6), 1).unwrap();
        let lo = relevant_moments_lo(&net).unwrap();
        assert!(lo.raw <= lo.formula);
        let labels: Vec<String> = lo.keys.iter().map(|k| k.to_string()).collect();
        for want in ["G(1,1)", "G(2,2)", "G(1,1)(1,1)", "G(1,1)(3,3)", "G(2,2)(6,6)"] {
            assert!(labels.contains(&want.to_string()), "{want}");
        }
        assert_eq!(settings_gaussian(1).settings.len(), 4);
        assert_eq!(settings_gaussian(5).settings.len(), 8);
        assert!(settings_lo(3, 1).settings.len() <= 12);
        assert!(settings_lo(4, 2).settings.len() <= 48);
    }

    #[test]
    fn running_stats_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut whole = RunningStats::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (RunningStats::default(), RunningStats::default());
        xs[..17].iter().for_each(|&x| a.push(x));
        xs[17..].iter().for_each(|&x| b.push(x));
        let m = a.merge(&b);
        assert_eq!(m.n, whole.n);
        assert!((m.mean - whole.mean).abs() < 1e-14 && (m.m2 - whole.m2).abs() < 1e-12);
    }

    #[test]
    fn constant_outcomes_give_product_average() {
        let id = NetworkSpec::gaussian(SymplecticTransform::identity(1));
        let f = gaussian_functional(&id);
        let design = MeasurementDesign::new(&f, settings_gaussian(1), BudgetRule::Uniform(5)).unwrap();
        let recs: Vec<SettingRecords> = (0..design.plan.settings.len())
            .map(|s| SettingRecords {
                setting_id: s,
                angles: design.angles_rad(s),
                outcomes: DMatrix::from_element(design.budgets[s].max(1), 1, 0.7),
            })
            .collect();
        let store = accumulate(&recs, &f, &design).unwrap();
        for e in &store.entries {
            assert!((e.mean - 0.49).abs() < 1e-12 && e.variance == 0.0);
        }
    }
}
