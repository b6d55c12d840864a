//! Truncated Fock-space backend. States are ensembles of pure vectors, so
//! mixtures stay positive by construction and sampling picks a component.
//!
//! Basis index: occupation (n_1, ..., n_m) with mode 1 most significant.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::moments::{MomentKey, Observable};
use crate::symplectic::{unitary_from_orthogonal, NetworkSpec};
use crate::weyl::{angle_value, Block, HomodyneMonomial, Part, Quad};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Largest Hilbert-space dimension the dense helpers will build.
pub const MAX_DENSE_DIM: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FockSpace {
    pub m: usize,
    pub cutoff: usize,
    pub dim: usize,
}

impl FockSpace {
    pub fn new(m: usize, cutoff: usize) -> Result<Self> {
        let dim = (cutoff + 1).checked_pow(m as u32).filter(|d| *d <= 50_000_000);
        match dim {
            Some(dim) if m >= 1 => Ok(FockSpace { m, cutoff, dim }),
            _ => Err(CertError::Cutoff { cutoff, reason: format!("space for {m} modes is too large") }),
        }
    }

    pub fn stride(&self, mode: usize) -> usize {
        (self.cutoff + 1).pow((self.m - 1 - mode) as u32)
    }

    pub fn index(&self, occ: &[usize]) -> usize {
        occ.iter().fold(0, |acc, &n| acc * (self.cutoff + 1) + n)
    }

    pub fn occupation(&self, mut idx: usize) -> Vec<usize> {
        let mut occ = vec![0; self.m];
        for j in (0..self.m).rev() {
            occ[j] = idx % (self.cutoff + 1);
            idx /= self.cutoff + 1;
        }
        occ
    }

    pub fn occ_of(&self, idx: usize, mode: usize) -> usize {
        (idx / self.stride(mode)) % (self.cutoff + 1)
    }

    pub fn lower(&self, v: &DVector<Complex64>, mode: usize) -> DVector<Complex64> {
        let st = self.stride(mode);
        let mut out = DVector::from_element(self.dim, ZERO);
        for idx in 0..self.dim {
            let n = self.occ_of(idx, mode);
            if n > 0 && v[idx] != ZERO {
                out[idx - st] += v[idx] * (n as f64).sqrt();
            }
        }
        out
    }

    pub fn raise(&self, v: &DVector<Complex64>, mode: usize) -> DVector<Complex64> {
        let st = self.stride(mode);
        let mut out = DVector::from_element(self.dim, ZERO);
        for idx in 0..self.dim {
            let n = self.occ_of(idx, mode);
            if n < self.cutoff && v[idx] != ZERO {
                out[idx + st] += v[idx] * ((n + 1) as f64).sqrt();
            }
        }
        out
    }

    pub fn quad(&self, v: &DVector<Complex64>, mode: usize, which: Quad) -> DVector<Complex64> {
        let lo = self.lower(v, mode);
        let hi = self.raise(v, mode);
        match which {
            Quad::Q => (lo + hi) * Complex64::new(0.5, 0.0),
            Quad::P => (lo - hi) * Complex64::new(0.0, -0.5),
        }
    }

    /// Dense matrix of a single-mode quadrature acting on the whole space.
    pub fn quad_matrix(&self, mode: usize, which: Quad) -> DMatrix<Complex64> {
        let mut out = DMatrix::from_element(self.dim, self.dim, ZERO);
        let mut e = DVector::from_element(self.dim, ZERO);
        for col in 0..self.dim {
            e[col] = ONE;
            let c = self.quad(&e, mode, which);
            out.set_column(col, &c);
            e[col] = ZERO;
        }
        out
    }

    pub fn total_photons(&self, idx: usize) -> usize {
        self.occupation(idx).iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub amps: DVector<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockState {
    pub m: usize,
    pub cutoff: usize,
    pub components: Vec<Component>,
}

impl FockState {
    pub fn pure(m: usize, cutoff: usize, amps: DVector<Complex64>) -> Result<Self> {
        let sp = FockSpace::new(m, cutoff)?;
        if amps.len() != sp.dim {
            return Err(CertError::Dimension(format!("{} amplitudes for dimension {}", amps.len(), sp.dim)));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(CertError::Unphysical(format!("state norm {norm}")));
        }
        Ok(FockState { m, cutoff, components: vec![Component { weight: 1.0, amps }] })
    }

    pub fn basis(m: usize, cutoff: usize, occ: &[usize]) -> Result<Self> {
        let sp = FockSpace::new(m, cutoff)?;
        if occ.len() != m || occ.iter().any(|&n| n > cutoff) {
            return Err(CertError::Cutoff { cutoff, reason: format!("occupation {occ:?} not representable") });
        }
        let mut amps = DVector::from_element(sp.dim, ZERO);
        amps[sp.index(occ)] = ONE;
        Ok(FockState { m, cutoff, components: vec![Component { weight: 1.0, amps }] })
    }

    pub fn vacuum(m: usize, cutoff: usize) -> Result<Self> {
        Self::basis(m, cutoff, &vec![0; m])
    }

    /// Convex combination; weights must be nonnegative and sum to one.
    pub fn mixture(parts: &[(f64, &FockState)]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| CertError::InvalidParameter("empty mixture".into()))?.1;
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if parts.iter().any(|p| p.0 < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(CertError::InvalidParameter(format!("mixture weights must be >= 0 and sum to 1, got {total}")));
        }
        let mut components = Vec::new();
        for (w, s) in parts {
            if s.m != first.m || s.cutoff != first.cutoff {
                return Err(CertError::Dimension("mixture parts use different spaces".into()));
            }
            if *w > 0.0 {
                components.extend(s.components.iter().map(|c| Component { weight: c.weight * w, amps: c.amps.clone() }));
            }
        }
        Ok(FockState { m: first.m, cutoff: first.cutoff, components })
    }

    pub fn space(&self) -> FockSpace {
        FockSpace::new(self.m, self.cutoff).expect("validated on construction")
    }

    pub fn trace(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.amps.norm_squared()).sum()
    }

    pub fn is_pure(&self) -> bool {
        self.components.len() == 1
    }

    /// Single-mode coherent state with a|alpha> = alpha|alpha>.
    pub fn coherent(alpha: Complex64, cutoff: usize) -> Result<Self> {
        let mut amps = DVector::from_element(cutoff + 1, ZERO);
        let mut term = Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
        for n in 0..=cutoff {
            if n > 0 {
                term = term * alpha / (n as f64).sqrt();
            }
            amps[n] = term;
        }
        Self::truncated(1, cutoff, amps)
    }

    /// Single-mode squeezed vacuum whose q variance is s^2/4.
    pub fn squeezed_vacuum(s: f64, cutoff: usize) -> Result<Self> {
        let r = s.ln();
        let t = r.tanh();
        let mut amps = DVector::from_element(cutoff + 1, ZERO);
        let mut c = 1.0 / r.cosh().sqrt();
        for k in 0..=cutoff / 2 {
            if k > 0 {
                // sqrt((2k)!)/(2^k k!) ratio between consecutive k
                c *= t * ((2 * k - 1) as f64 * (2 * k) as f64).sqrt() / (2.0 * k as f64);
            }
            amps[2 * k] = Complex64::new(c, 0.0);
        }
        Self::truncated(1, cutoff, amps)
    }

    /// Single-mode thermal state, truncated and renormalized.
    pub fn thermal(nbar: f64, cutoff: usize) -> Result<Self> {
        let mut comps = Vec::new();
        let ratio = nbar / (1.0 + nbar);
        let mut w = 1.0 / (1.0 + nbar);
        let mut total = 0.0;
        for n in 0..=cutoff {
            let mut amps = DVector::from_element(cutoff + 1, ZERO);
            amps[n] = ONE;
            comps.push(Component { weight: w, amps });
            total += w;
            w *= ratio;
        }
        if 1.0 - total > 1e-8 {
            return Err(CertError::Cutoff { cutoff, reason: format!("thermal tail mass {:.3e}", 1.0 - total) });
        }
        comps.iter_mut().for_each(|c| c.weight /= total);
        Ok(FockState { m: 1, cutoff, components: comps })
    }

    fn truncated(m: usize, cutoff: usize, amps: DVector<Complex64>) -> Result<Self> {
        let n2 = amps.norm_squared();
        if 1.0 - n2 > 1e-8 {
            return Err(CertError::Cutoff { cutoff, reason: format!("tail mass {:.3e}", 1.0 - n2) });
        }
        let norm = n2.sqrt();
        Self::pure(m, cutoff, amps / Complex64::new(norm, 0.0))
    }

    pub fn tensor(&self, other: &FockState) -> Result<FockState> {
        if self.cutoff != other.cutoff {
            return Err(CertError::Dimension("tensor factors use different cutoffs".into()));
        }
        let mut comps = Vec::new();
        for a in &self.components {
            for b in &other.components {
                comps.push(Component { weight: a.weight * b.weight, amps: a.amps.kronecker(&b.amps) });
            }
        }
        FockSpace::new(self.m + other.m, self.cutoff)?;
        Ok(FockState { m: self.m + other.m, cutoff: self.cutoff, components: comps })
    }

    /// Probability mass on basis states with some mode at the cutoff.
    pub fn top_level_mass(&self) -> f64 {
        let sp = self.space();
        self.components
            .iter()
            .map(|c| {
                c.weight
                    * (0..sp.dim)
                        .filter(|&i| (0..sp.m).any(|j| sp.occ_of(i, j) == sp.cutoff))
                        .map(|i| c.amps[i].norm_sqr())
                        .sum::<f64>()
            })
            .sum()
    }

    /// Largest occupation of each mode carrying amplitude above 1e-14.
    pub fn support(&self) -> Vec<usize> {
        let sp = self.space();
        let mut out = vec![0; sp.m];
        for c in &self.components {
            for i in 0..sp.dim {
                if c.amps[i].norm() > 1e-14 {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = (*o).max(sp.occ_of(i, j));
                    }
                }
            }
        }
        out
    }

    pub fn max_total_photons(&self) -> usize {
        let sp = self.space();
        self.components
            .iter()
            .flat_map(|c| (0..sp.dim).filter(move |&i| c.amps[i].norm() > 1e-14))
            .map(|i| sp.total_photons(i))
            .max()
            .unwrap_or(0)
    }

    /// Dense density matrix; only for small spaces.
    pub fn density(&self) -> Result<DMatrix<Complex64>> {
        let sp = self.space();
        if sp.dim > MAX_DENSE_DIM {
            return Err(CertError::Cutoff { cutoff: self.cutoff, reason: "dense density too large".into() });
        }
        let mut rho = DMatrix::from_element(sp.dim, sp.dim, ZERO);
        for c in &self.components {
            rho += (&c.amps * c.amps.adjoint()) * Complex64::new(c.weight, 0.0);
        }
        Ok(rho)
    }

    /// Same state in a larger truncation.
    pub fn with_cutoff(&self, cutoff: usize) -> Result<FockState> {
        if cutoff < self.cutoff {
            return Err(CertError::Cutoff { cutoff, reason: "can only enlarge the cutoff".into() });
        }
        let old = self.space();
        let new = FockSpace::new(self.m, cutoff)?;
        let comps = self
            .components
            .iter()
            .map(|c| {
                let mut amps = DVector::from_element(new.dim, ZERO);
                for i in 0..old.dim {
                    amps[new.index(&old.occupation(i))] = c.amps[i];
                }
                Component { weight: c.weight, amps }
            })
            .collect();
        Ok(FockState { m: self.m, cutoff, components: comps })
    }
}

/// Value of an exact expectation together with a truncation-safety flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactValue {
    pub value: f64,
    pub truncation_safe: bool,
}

fn expand_word(word: &[Block]) -> Vec<(f64, Vec<Quad>)> {
    word.iter().fold(vec![(1.0, Vec::new())], |acc, b| {
        let mut out = Vec::new();
        for (w, s) in &acc {
            for (bw, bs) in b.expansions() {
                let mut t = s.clone();
                t.extend(bs);
                out.push((w * bw, t));
            }
        }
        out
    })
}

/// <prod_j word_j> on a pure vector, applying half of each mode's factors to
/// the bra and half to the ket so truncation needs only half the degree.
fn expect_words_vec(sp: &FockSpace, v: &DVector<Complex64>, words: &[(usize, Vec<Block>)]) -> Complex64 {
    let per_mode: Vec<(usize, Vec<(f64, Vec<Quad>)>)> =
        words.iter().map(|(m, w)| (*m, expand_word(w))).collect();
    let mut combos: Vec<(f64, Vec<(usize, &Vec<Quad>)>)> = vec![(1.0, Vec::new())];
    for (mode, exps) in &per_mode {
        let mut next = Vec::new();
        for (w, sel) in &combos {
            for (ew, s) in exps {
                let mut t = sel.clone();
                t.push((*mode, s));
                next.push((w * ew, t));
            }
        }
        combos = next;
    }
    let mut total = ZERO;
    for (w, sel) in combos {
        let mut bra = v.clone();
        let mut ket = v.clone();
        for (mode, s) in sel {
            let h = s.len() / 2;
            // A = s[..h]: A^dagger applied to the bra state acts first with s[0]
            for q in &s[..h] {
                bra = sp.quad(&bra, mode, *q);
            }
            for q in s[h..].iter().rev() {
                ket = sp.quad(&ket, mode, *q);
            }
        }
        total += bra.dotc(&ket) * w;
    }
    total
}

/// Complex expectation of a product of per-mode words.
pub fn expect_words(state: &FockState, words: &[(usize, Vec<Block>)]) -> ExactValue2 {
    let sp = state.space();
    let support = state.support();
    let safe = words.iter().all(|(m, w)| {
        let f: usize = w.iter().map(Block::degree).sum();
        support[*m] + f.div_ceil(2) <= sp.cutoff
    });
    let z = state
        .components
        .iter()
        .map(|c| expect_words_vec(&sp, &c.amps, words) * c.weight)
        .fold(ZERO, |a, b| a + b);
    ExactValue2 { value: z, truncation_safe: safe }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactValue2 {
    pub value: Complex64,
    pub truncation_safe: bool,
}

pub fn observable_exact(state: &FockState, obs: &Observable) -> ExactValue {
    let z = expect_words(state, &obs.words);
    let value = match obs.part {
        Part::Re => z.value.re,
        Part::Im => z.value.im,
    };
    if !z.truncation_safe {
        log::warn!("{obs} evaluated near the cutoff {}", state.cutoff);
    }
    ExactValue { value, truncation_safe: z.truncation_safe }
}

pub fn moment_tensor_exact(state: &FockState, key: &MomentKey) -> ExactValue {
    observable_exact(state, &key.observable())
}

/// Applies the passive unitary with a_j -> sum_k u_jk a_k (Heisenberg picture),
/// i.e. maps a_j^dagger to sum_k u_kj a_k^dagger in the Schrodinger picture.
pub fn apply_passive(state: &FockState, u: &DMatrix<Complex64>) -> Result<FockState> {
    let sp = state.space();
    if u.shape() != (sp.m, sp.m) {
        return Err(CertError::Dimension("unitary size does not match the mode count".into()));
    }
    if state.max_total_photons() > sp.cutoff {
        return Err(CertError::Cutoff {
            cutoff: sp.cutoff,
            reason: format!("{} photons do not fit through a passive network", state.max_total_photons()),
        });
    }
    let mut vac = DVector::from_element(sp.dim, ZERO);
    vac[0] = ONE;
    let create = |v: &DVector<Complex64>, j: usize| -> DVector<Complex64> {
        let mut out = DVector::from_element(sp.dim, ZERO);
        for k in 0..sp.m {
            let c = u[(k, j)];
            if c != ZERO {
                out += sp.raise(v, k) * c;
            }
        }
        out
    };
    let mut cache: std::collections::HashMap<Vec<usize>, DVector<Complex64>> = Default::default();
    let mut comps = Vec::with_capacity(state.components.len());
    for c in &state.components {
        let mut out = DVector::from_element(sp.dim, ZERO);
        for i in 0..sp.dim {
            if c.amps[i].norm() <= 1e-15 {
                continue;
            }
            let occ = sp.occupation(i);
            let img = cache.entry(occ.clone()).or_insert_with(|| {
                let mut v = vac.clone();
                let mut fact = 1.0;
                for (j, &n) in occ.iter().enumerate() {
                    for t in 0..n {
                        v = create(&v, j);
                        fact *= (t + 1) as f64;
                    }
                }
                v / Complex64::new(fact.sqrt(), 0.0)
            });
            out += &*img * c.amps[i];
        }
        comps.push(Component { weight: c.weight, amps: out });
    }
    Ok(FockState { m: sp.m, cutoff: sp.cutoff, components: comps })
}

pub fn passive_unitary(net: &NetworkSpec) -> Result<DMatrix<Complex64>> {
    let t = &net.transform;
    if !t.is_passive() || t.x.iter().any(|v| *v != 0.0) {
        return Err(CertError::ClassMismatch("operation requires a passive network with x = 0".into()));
    }
    Ok(unitary_from_orthogonal(&t.coupling_matrix()))
}

/// U|nvec> for a passive network.
pub fn prepare_lo_target(net: &NetworkSpec, cutoff: usize) -> Result<FockState> {
    let u = passive_unitary(net)?;
    let n = net.photons();
    if cutoff < n {
        return Err(CertError::Cutoff { cutoff, reason: format!("target carries {n} photons") });
    }
    let occ: Vec<usize> = net.nvec.iter().map(|&v| v as usize).collect();
    apply_passive(&FockState::basis(net.m, cutoff, &occ)?, &u)
}

/// The preparation seen in the frame of the target network, U^dagger rho U.
pub fn to_frame(state: &FockState, net: &NetworkSpec) -> Result<FockState> {
    let u = passive_unitary(net)?;
    apply_passive(state, &u.adjoint())
}

pub fn fidelity_oracle_fock(target: &FockState, prep: &FockState) -> Result<f64> {
    if !target.is_pure() {
        return Err(CertError::InvalidParameter("target must be pure".into()));
    }
    if target.m != prep.m || target.cutoff != prep.cutoff {
        return Err(CertError::Dimension("target and preparation use different spaces".into()));
    }
    let t = &target.components[0].amps;
    Ok(prep.components.iter().map(|c| c.weight * t.dotc(&c.amps).norm_sqr()).sum())
}

/// Which fidelity witness to evaluate.
///
/// `Literal` is 1 - (1/nvec!) <(n - n_tot) prod_j p_{n_j - 1}(n_j)> on the
/// back-transformed preparation. `Normalized` additionally subtracts
/// 1 - (1/nvec!) <prod_j p_{n_j - 1}(n_j)>, the trace deficit of the
/// photon-subtracted state; it agrees with `Literal` whenever nvec = 0 and
/// is a lower bound on the fidelity for every preparation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundForm {
    Literal,
    #[default]
    Normalized,
}

pub fn pochhammer(n: f64, t: i64) -> f64 {
    (0..=t).map(|i| n - i as f64).product()
}

fn nvec_factorial(nvec: &[u32]) -> f64 {
    nvec.iter().map(|&n| (1..=n).map(|k| k as f64).product::<f64>()).product()
}

/// Witness operator eigenvalue on a back-transformed Fock basis state.
pub fn witness_eigenvalue(occ: &[usize], nvec: &[u32], form: BoundForm) -> f64 {
    let n: f64 = nvec.iter().map(|&v| v as f64).sum();
    let total: f64 = occ.iter().map(|&v| v as f64).sum();
    let prod: f64 = occ.iter().zip(nvec).map(|(&o, &nj)| pochhammer(o as f64, nj as i64 - 1)).product::<f64>()
        / nvec_factorial(nvec);
    match form {
        BoundForm::Literal => (total - n) * prod,
        BoundForm::Normalized => (total - n) * prod + 1.0 - prod,
    }
}

/// <N> evaluated through the frame transformation, without moment tensors.
pub fn witness_expectation(state: &FockState, net: &NetworkSpec, form: BoundForm) -> Result<f64> {
    let frame = to_frame(state, net)?;
    let sp = frame.space();
    let mut acc = 0.0;
    for c in &frame.components {
        for i in 0..sp.dim {
            let p = c.amps[i].norm_sqr();
            if p > 0.0 {
                acc += c.weight * p * witness_eigenvalue(&sp.occupation(i), &net.nvec, form);
            }
        }
    }
    Ok(acc)
}

/// Returns ((photon mismatch), fidelity) for rho_p = F rho_t + (1 - F) rho_perp.
pub fn photon_mismatch(target: &FockState, prep: &FockState, net: &NetworkSpec, form: BoundForm) -> Result<(f64, f64)> {
    let f = fidelity_oracle_fock(target, prep)?;
    if f >= 1.0 - 1e-12 {
        return Err(CertError::PerfectFidelity);
    }
    check_perp_psd(target, prep, f)?;
    let np = witness_expectation(prep, net, form)?;
    let nt = witness_expectation(target, net, form)?;
    Ok(((np - f * nt) / (1.0 - f), f))
}

fn check_perp_psd(target: &FockState, prep: &FockState, f: f64) -> Result<()> {
    if target.space().dim > 1024 {
        return Ok(());
    }
    let diff = prep.density()? - target.density()? * Complex64::new(f, 0.0);
    let lam = diff.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
    if lam < -1e-9 {
        return Err(CertError::Unphysical(format!("rho_p - F rho_t has eigenvalue {lam:.3e}")));
    }
    Ok(())
}

/// Post-selection of the modes `ancillas` onto single-mode pure states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostSelection {
    pub ancillas: Vec<usize>,
    /// Single-mode amplitude vectors (length cutoff + 1 of the full space).
    pub states: Vec<DVector<Complex64>>,
}

impl PostSelection {
    pub fn fock(ancillas: Vec<usize>, occ: Vec<usize>, cutoff: usize) -> PostSelection {
        let states = occ
            .iter()
            .map(|&n| {
                let mut v = DVector::from_element(cutoff + 1, ZERO);
                v[n] = ONE;
                v
            })
            .collect();
        PostSelection { ancillas, states }
    }

    pub fn system_modes(&self, m: usize) -> Vec<usize> {
        (0..m).filter(|j| !self.ancillas.contains(j)).collect()
    }

    /// Ancilla state as a FockState on the ancilla modes in listed order.
    pub fn ancilla_state(&self, cutoff: usize) -> Result<FockState> {
        let mut acc: Option<FockState> = None;
        for v in &self.states {
            let s = FockState::pure(1, cutoff, v.clone())?;
            acc = Some(match acc {
                None => s,
                Some(a) => a.tensor(&s)?,
            });
        }
        acc.ok_or_else(|| CertError::InvalidParameter("no ancilla".into()))
    }
}

pub fn post_select(state: &FockState, ps: &PostSelection) -> Result<(FockState, f64)> {
    let sp = state.space();
    if ps.ancillas.is_empty() || ps.ancillas.len() >= sp.m || ps.ancillas.len() != ps.states.len() {
        return Err(CertError::InvalidParameter("ancillas must be a nonempty proper subset with one state each".into()));
    }
    if ps.states.iter().any(|v| v.len() != sp.cutoff + 1) {
        return Err(CertError::Dimension("ancilla state length must be cutoff + 1".into()));
    }
    let sys = ps.system_modes(sp.m);
    let ssp = FockSpace::new(sys.len(), sp.cutoff)?;
    let mut comps = Vec::new();
    let mut prob = 0.0;
    for c in &state.components {
        let mut out = DVector::from_element(ssp.dim, ZERO);
        for i in 0..sp.dim {
            if c.amps[i] == ZERO {
                continue;
            }
            let occ = sp.occupation(i);
            let mut amp = c.amps[i];
            for (a, v) in ps.ancillas.iter().zip(&ps.states) {
                amp *= v[occ[*a]].conj();
            }
            if amp != ZERO {
                let sys_occ: Vec<usize> = sys.iter().map(|&j| occ[j]).collect();
                out[ssp.index(&sys_occ)] += amp;
            }
        }
        let p = c.weight * out.norm_squared();
        if p > 0.0 {
            prob += p;
            let n = out.norm();
            comps.push(Component { weight: p, amps: out / Complex64::new(n, 0.0) });
        }
    }
    if prob <= 1e-12 {
        return Err(CertError::ZeroProbability(prob));
    }
    comps.iter_mut().for_each(|c| c.weight /= prob);
    Ok((FockState { m: sys.len(), cutoff: sp.cutoff, components: comps }, prob))
}

/// Places the system state back next to the ancilla states, restoring the
/// original mode order.
pub fn embed_with_ancillas(system: &FockState, ps: &PostSelection, m: usize) -> Result<FockState> {
    let anc = ps.ancilla_state(system.cutoff)?;
    let joint = system.tensor(&anc)?;
    let sys = ps.system_modes(m);
    let order: Vec<usize> = sys.iter().chain(ps.ancillas.iter()).cloned().collect();
    permute_modes(&joint, &order)
}

/// Reorders modes: mode i of the input becomes mode order[i] of the output.
pub fn permute_modes(state: &FockState, order: &[usize]) -> Result<FockState> {
    let sp = state.space();
    let comps = state
        .components
        .iter()
        .map(|c| {
            let mut amps = DVector::from_element(sp.dim, ZERO);
            for i in 0..sp.dim {
                let occ = sp.occupation(i);
                let mut new = vec![0; sp.m];
                for (src, &dst) in order.iter().enumerate() {
                    new[dst] = occ[src];
                }
                amps[sp.index(&new)] = c.amps[i];
            }
            Component { weight: c.weight, amps }
        })
        .collect();
    Ok(FockState { m: state.m, cutoff: state.cutoff, components: comps })
}

/// Post-selected photon mismatch: the witness N_S = (P - 1 + <phi|N|phi>)/P
/// evaluated on the orthogonal part of the conditional preparation.
pub fn photon_mismatch_postselected(
    net: &NetworkSpec,
    ps: &PostSelection,
    cutoff: usize,
    prep_s: &FockState,
    form: BoundForm,
) -> Result<(f64, f64)> {
    let target = prepare_lo_target(net, cutoff)?;
    let (target_s, p) = post_select(&target, ps)?;
    let f = fidelity_oracle_fock(&target_s, prep_s)?;
    if f >= 1.0 - 1e-12 {
        return Err(CertError::PerfectFidelity);
    }
    let ns = |s: &FockState| -> Result<f64> {
        let joint = embed_with_ancillas(s, ps, net.m)?;
        Ok((p - 1.0 + witness_expectation(&joint, net, form)?) / p)
    };
    Ok(((ns(prep_s)? - f * ns(&target_s)?) / (1.0 - f), f))
}

fn identity(dim: usize) -> DMatrix<Complex64> {
    DMatrix::identity(dim, dim)
}

/// Back-transformed number operators n~_k = q~_k^2 + p~_k^2 - 1/2 as dense matrices.
fn frame_numbers(net: &NetworkSpec, sp: &FockSpace) -> Result<Vec<DMatrix<Complex64>>> {
    if sp.dim > MAX_DENSE_DIM {
        return Err(CertError::Cutoff { cutoff: sp.cutoff, reason: "dense operator too large".into() });
    }
    let map = net.transform.inverse_map();
    let r: Vec<DMatrix<Complex64>> =
        (0..2 * net.m).map(|l| sp.quad_matrix(l / 2, Quad::of_index(l))).collect();
    let tilde = |row: usize| -> DMatrix<Complex64> {
        let mut acc = DMatrix::from_element(sp.dim, sp.dim, ZERO);
        for (l, rl) in r.iter().enumerate() {
            let c = map.s_inv[(row, l)];
            if c != 0.0 {
                acc += (rl - identity(sp.dim) * Complex64::new(map.x[l], 0.0)) * Complex64::new(c, 0.0);
            }
        }
        acc
    };
    Ok((0..net.m)
        .map(|k| {
            let q = tilde(2 * k);
            let p = tilde(2 * k + 1);
            &q * &q + &p * &p - identity(sp.dim) * Complex64::new(0.5, 0.0)
        })
        .collect())
}

fn poch_matrix(n: &DMatrix<Complex64>, t: i64) -> DMatrix<Complex64> {
    let dim = n.nrows();
    let mut acc = identity(dim);
    for i in 0..=t {
        acc *= n - identity(dim) * Complex64::new(i as f64, 0.0);
    }
    acc
}

/// Dense j-th nullifier (1-based j) built from back-transformed quadratures.
pub fn nullifier_operator(net: &NetworkSpec, j: usize, cutoff: usize) -> Result<DMatrix<Complex64>> {
    if j == 0 || j > net.m {
        return Err(CertError::IndexOutOfRange { index: j, max: net.m });
    }
    let sp = FockSpace::new(net.m, cutoff)?;
    let nums = frame_numbers(net, &sp)?;
    let mut op = &nums[j - 1] - identity(sp.dim) * Complex64::new(net.nvec[j - 1] as f64, 0.0);
    for (k, nk) in nums.iter().enumerate() {
        op *= poch_matrix(nk, net.nvec[k] as i64 - 1);
    }
    Ok(op)
}

/// Dense witness operator N with F_bound = 1 - <N>.
pub fn witness_operator(net: &NetworkSpec, cutoff: usize, form: BoundForm) -> Result<DMatrix<Complex64>> {
    let sp = FockSpace::new(net.m, cutoff)?;
    let nums = frame_numbers(net, &sp)?;
    let mut prod = identity(sp.dim);
    for (k, nk) in nums.iter().enumerate() {
        prod *= poch_matrix(nk, net.nvec[k] as i64 - 1);
    }
    prod /= Complex64::new(nvec_factorial(&net.nvec), 0.0);
    let mut total = identity(sp.dim) * Complex64::new(-(net.photons() as f64), 0.0);
    for nk in &nums {
        total += nk;
    }
    let lit = total * &prod;
    Ok(match form {
        BoundForm::Literal => lit,
        BoundForm::Normalized => lit + identity(sp.dim) - prod,
    })
}

/// Basis indices whose total photon number is at most `limit`.
pub fn safe_indices(sp: &FockSpace, limit: usize) -> Vec<usize> {
    (0..sp.dim).filter(|&i| sp.total_photons(i) <= limit).collect()
}

pub fn restricted_max(a: &DMatrix<Complex64>, idx: &[usize]) -> f64 {
    let mut best = 0.0_f64;
    for &i in idx {
        for &j in idx {
            best = best.max(a[(i, j)].norm());
        }
    }
    best
}

/// Max deviations of (a^dag)^t n a^t = p_t(n) and (a^dag)^nj a^nj = p_{nj-1}(n),
/// relative to max(1, |entry|).
pub fn pochhammer_check(nj: usize, t: usize, cutoff: usize) -> Result<(f64, f64)> {
    if nj + t + 1 > cutoff {
        return Err(CertError::Cutoff { cutoff, reason: format!("need n_j + t + 1 <= cutoff for n_j = {nj}, t = {t}") });
    }
    let d = cutoff + 1;
    // a^k with entries sqrt(n!/(n-k)!) taken from one exact product
    let lower_pow = |k: usize| {
        DMatrix::<f64>::from_fn(d, d, |r, c| {
            if c >= k && r == c - k {
                ((c - k + 1..=c).map(|v| v as f64).product::<f64>()).sqrt()
            } else {
                0.0
            }
        })
    };
    let num = DMatrix::<f64>::from_fn(d, d, |r, c| if r == c { r as f64 } else { 0.0 });
    let poch = |t: i64| DMatrix::<f64>::from_fn(d, d, |r, c| if r == c { pochhammer(r as f64, t) } else { 0.0 });
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
    };
    let at = lower_pow(t);
    let lhs_a = at.transpose() * &num * &at;
    let an = lower_pow(nj);
    let lhs_b = an.transpose() * &an;
    Ok((rel(&lhs_a, &poch(t as i64)), rel(&lhs_b, &poch(nj as i64 - 1))))
}

/// Frame in which measuring q on mode j equals measuring
/// cos(t_j) q_j + sin(t_j) p_j on the original state.
pub fn rotate(state: &FockState, angles: &[f64]) -> FockState {
    let sp = state.space();
    let comps = state
        .components
        .iter()
        .map(|c| {
            let amps = DVector::from_fn(sp.dim, |i, _| {
                let phase: f64 = (0..sp.m).map(|j| angles[j] * sp.occ_of(i, j) as f64).sum();
                c.amps[i] * Complex64::from_polar(1.0, -phase)
            });
            Component { weight: c.weight, amps }
        })
        .collect();
    FockState { m: sp.m, cutoff: sp.cutoff, components: comps }
}

/// Joint moment of homodyne outcomes described by `mono`.
pub fn monomial_moment(state: &FockState, mono: &HomodyneMonomial) -> ExactValue {
    let mut angles = vec![0.0; state.m];
    let mut words = Vec::new();
    for &(mode, a, e) in &mono.factors {
        angles[mode] = angle_value(a);
        words.push((mode, vec![Block::Single(Quad::Q); e as usize]));
    }
    let z = expect_words(&rotate(state, &angles), &words);
    ExactValue { value: z.value.re, truncation_safe: z.truncation_safe }
}

/// Normalized position-space Hermite functions phi_0..phi_nmax at x.
pub fn hermite_functions(x: f64, nmax: usize, out: &mut [f64]) {
    let y = std::f64::consts::SQRT_2 * x;
    let scale = 2f64.powf(0.25);
    let mut h0 = std::f64::consts::PI.powf(-0.25) * (-y * y / 2.0).exp();
    out[0] = scale * h0;
    if nmax == 0 {
        return;
    }
    let mut h1 = std::f64::consts::SQRT_2 * y * h0;
    out[1] = scale * h1;
    for n in 1..nmax {
        let h2 = (2.0 / (n + 1) as f64).sqrt() * y * h1 - (n as f64 / (n + 1) as f64).sqrt() * h0;
        out[n + 1] = scale * h2;
        h0 = h1;
        h1 = h2;
    }
}

pub const GRID_POINTS: usize = 4096;
pub const GRID_WIDTHS: f64 = 8.0;

struct Grid {
    xs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Grid {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = *self.cdf.last().expect("nonempty grid");
        let u = rng.gen::<f64>() * total;
        let i = self.cdf.partition_point(|c| *c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + frac * (self.xs[i] - self.xs[i - 1])
    }
}

/// Marginal of the first remaining mode for a wavefunction tensor of shape
/// (nmax+1) x rest, on an adaptive grid.
fn marginal_grid(psi: &[Complex64], nmax: usize, rest: usize, span: f64) -> Result<Grid> {
    let mut span = span;
    let mut points = GRID_POINTS;
    let mut phi = vec![0.0; nmax + 1];
    for _ in 0..4 {
        let h = 2.0 * span / (points - 1) as f64;
        let mut xs = Vec::with_capacity(points);
        let mut dens = Vec::with_capacity(points);
        for i in 0..points {
            let x = -span + i as f64 * h;
            hermite_functions(x, nmax, &mut phi);
            let mut p = 0.0;
            for r in 0..rest {
                let mut a = ZERO;
                for n in 0..=nmax {
                    a += psi[n * rest + r] * phi[n];
                }
                p += a.norm_sqr();
            }
            xs.push(x);
            dens.push(p);
        }
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if (cdf[points - 1] - norm).abs() <= 1e-6 * norm.max(1e-300) {
            return Ok(Grid { xs, cdf });
        }
        span *= 1.5;
        points *= 2;
    }
    Err(CertError::Sampling("grid mass deficit above 1e-6 after refinement".into()))
}

/// Joint homodyne outcomes at per-mode angles; one row per sample.
pub fn sample_homodyne_fock<R: Rng>(
    state: &FockState,
    angles: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let sp = state.space();
    if sp.m > 4 {
        return Err(CertError::InvalidParameter("Fock sampling is limited to m <= 4".into()));
    }
    if angles.len() != sp.m {
        return Err(CertError::Dimension(format!("{} angles for {} modes", angles.len(), sp.m)));
    }
    let d = sp.cutoff + 1;
    let nmax = *state.support().iter().max().unwrap_or(&0);
    let span = GRID_WIDTHS * 0.5 + (nmax as f64 + 0.5).sqrt();
    // rotated frame: amplitudes pick up exp(-i theta_j n_j)
    let rotated: Vec<Vec<Complex64>> = state
        .components
        .iter()
        .map(|c| {
            (0..sp.dim)
                .map(|i| {
                    let phase: f64 = (0..sp.m).map(|j| angles[j] * sp.occ_of(i, j) as f64).sum();
                    c.amps[i] * Complex64::from_polar(1.0, -phase)
                })
                .collect()
        })
        .collect();
    let first: Vec<Grid> = rotated
        .iter()
        .map(|psi| marginal_grid(psi, d - 1, sp.dim / d, span))
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = state.components.iter().map(|c| c.weight).collect();
    let wsum: f64 = weights.iter().sum();
    let mut out = DMatrix::zeros(count, sp.m);
    let mut phi = vec![0.0; d];
    for row in 0..count {
        let mut u = rng.gen::<f64>() * wsum;
        let mut k = 0;
        while k + 1 < weights.len() && u >= weights[k] {
            u -= weights[k];
            k += 1;
        }
        let mut psi: Vec<Complex64> = rotated[k].clone();
        let mut rest = sp.dim / d;
        for j in 0..sp.m {
            let x = if j == 0 { first[k].sample(rng) } else { marginal_grid(&psi, d - 1, rest, span)?.sample(rng) };
            out[(row, j)] = x;
            if j + 1 < sp.m {
                hermite_functions(x, d - 1, &mut phi);
                let mut cond = vec![ZERO; rest];
                for (r, c) in cond.iter_mut().enumerate() {
                    for n in 0..d {
                        *c += psi[n * rest + r] * phi[n];
                    }
                }
                let norm = cond.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if norm <= 0.0 {
                    return Err(CertError::Sampling("conditional state vanished".into()));
                }
                cond.iter_mut().for_each(|z| *z /= norm);
                psi = cond;
                rest /= d;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{beam_splitter, orthogonal_from_unitary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn bs_network(n: usize) -> NetworkSpec {
        let o = orthogonal_from_unitary(&beam_splitter(2, 0, 1, FRAC_PI_4, 0.0));
        NetworkSpec::linear_optical(o, n).unwrap()
    }

    fn amp(s: &FockState, occ: &[usize]) -> Complex64 {
        s.components[0].amps[s.space().index(occ)]
    }

    #[test]
    fn lo_target_examples() {
        let id = NetworkSpec::linear_optical(DMatrix::identity(4, 4), 1).unwrap();
        let t = prepare_lo_target(&id, 3).unwrap();
        assert_eq!(amp(&t, &[1, 0]), ONE);
        let t = prepare_lo_target(&bs_network(1), 3).unwrap();
        assert!((amp(&t, &[1, 0]).norm() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((amp(&t, &[0, 1]).norm() - 0.5f64.sqrt()).abs() < 1e-12);
        let hom = prepare_lo_target(&bs_network(2), 4).unwrap();
        assert!(amp(&hom, &[1, 1]).norm() < 1e-12);
        assert!((amp(&hom, &[2, 0]).norm_sqr() - 0.5).abs() < 1e-12);
        assert!(prepare_lo_target(&bs_network(2), 1).is_err());
    }

    #[test]
    fn exact_moment_examples() {
        let vac = FockState::vacuum(1, 6).unwrap();
        assert!((moment_tensor_exact(&vac, &MomentKey::pairs([(0, 0)])).value - 0.25).abs() < 1e-15);
        assert!(moment_tensor_exact(&vac, &MomentKey::pairs([(0, 1)])).value.abs() < 1e-15);
        let one = FockState::basis(1, 6, &[1]).unwrap();
        assert!((moment_tensor_exact(&one, &MomentKey::pairs([(0, 0)])).value - 0.75).abs() < 1e-14);
        let tiny = FockState::basis(1, 2, &[2]).unwrap();
        assert!(!moment_tensor_exact(&tiny, &MomentKey::pairs([(0, 0), (0, 0)])).truncation_safe);
    }

    #[test]
    fn fidelity_oracle_examples() {
        let t = prepare_lo_target(&bs_network(1), 3).unwrap();
        assert!((fidelity_oracle_fock(&t, &t).unwrap() - 1.0).abs() < 1e-12);
        let a = FockState::basis(2, 3, &[1, 0]).unwrap();
        let b = FockState::basis(2, 3, &[0, 2]).unwrap();
        assert_eq!(fidelity_oracle_fock(&a, &b).unwrap(), 0.0);
        let mix = FockState::mixture(&[(0.7, &a), (0.3, &b)]).unwrap();
        assert!((fidelity_oracle_fock(&a, &mix).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn nullifier_examples() {
        let vac_net = NetworkSpec::gaussian(crate::symplectic::SymplecticTransform::identity(1));
        let n1 = nullifier_operator(&vac_net, 1, 6).unwrap();
        let vac = FockState::vacuum(1, 6).unwrap();
        assert!((&n1 * &vac.components[0].amps).norm() < 1e-12);
        let id = NetworkSpec::linear_optical(DMatrix::identity(6, 6), 1).unwrap();
        let t = prepare_lo_target(&id, 5).unwrap();
        for j in 1..=3 {
            let nj = nullifier_operator(&id, j, 5).unwrap();
            assert!((&nj * &t.components[0].amps).norm() <= 1e-10);
        }
    }

    #[test]
    fn pochhammer_examples() {
        assert_eq!(pochhammer_check(0, 0, 2).unwrap().1, 0.0);
        let (a, b) = pochhammer_check(1, 1, 8).unwrap();
        assert!(a <= 1e-12 && b <= 1e-12);
        let (a, b) = pochhammer_check(2, 2, 10).unwrap();
        assert!(a <= 1e-12 && b <= 1e-12);
    }

    #[test]
    fn post_selection_examples() {
        let hom = prepare_lo_target(&bs_network(2), 4).unwrap();
        let ps1 = PostSelection::fock(vec![1], vec![1], 4);
        assert!(matches!(post_select(&hom, &ps1), Err(CertError::ZeroProbability(_))));
        let t = prepare_lo_target(&bs_network(1), 3).unwrap();
        let ps0 = PostSelection::fock(vec![1], vec![0], 3);
        let (s, p) = post_select(&t, &ps0).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        let one = FockState::basis(1, 3, &[1]).unwrap();
        assert!((fidelity_oracle_fock(&one, &s).unwrap() - 1.0).abs() < 1e-12);
        let prod = one.tensor(&FockState::basis(1, 3, &[2]).unwrap()).unwrap();
        let (s, p) = post_select(&prod, &PostSelection::fock(vec![1], vec![2], 3)).unwrap();
        assert!((p - 1.0).abs() < 1e-12 && (fidelity_oracle_fock(&one, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn photon_mismatch_examples() {
        let net = NetworkSpec::gaussian(crate::symplectic::SymplecticTransform::identity(1));
        let vac = FockState::vacuum(1, 5).unwrap();
        assert!(matches!(photon_mismatch(&vac, &vac, &net, BoundForm::Literal), Err(CertError::PerfectFidelity)));
        for k in [1usize, 2] {
            let exc = FockState::basis(1, 5, &[k]).unwrap();
            let prep = FockState::mixture(&[(0.9, &vac), (0.1, &exc)]).unwrap();
            let (n, f) = photon_mismatch(&vac, &prep, &net, BoundForm::Literal).unwrap();
            assert!((n - k as f64).abs() < 1e-12 && (f - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn fock_sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let one = FockState::basis(1, 4, &[1]).unwrap();
        let x = sample_homodyne_fock(&one, &[0.0], n, &mut rng).unwrap();
        let m2 = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // Var(q^2) on |1> = 15/16 - 9/16
        let se = (6.0f64 / 16.0 / n as f64).sqrt();
        assert!((m2 - 0.75).abs() < 6.0 * se, "{m2}");
        let near_zero = x.iter().filter(|v| v.abs() < 0.02).count() as f64 / n as f64;
        let near_peak = x.iter().filter(|v| (v.abs() - 0.5).abs() < 0.02).count() as f64 / n as f64;
        assert!(near_zero < 0.05 * near_peak);
        let vac = FockState::vacuum(2, 3).unwrap();
        let y = sample_homodyne_fock(&vac, &[0.0, 1.0], 20_000, &mut rng).unwrap();
        for j in 0..2 {
            let v = y.column(j).iter().map(|v| v * v).sum::<f64>() / 20_000.0;
            assert!((v - 0.25).abs() < 6.0 * 0.25 * (2.0 / 20_000.0f64).sqrt());
        }
    }
}
