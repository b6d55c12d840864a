//! Exact Gaussian backend: means, covariances, channels and homodyne sampling.
//!
//! Convention: [q, p] = i/2, so the vacuum covariance is I/4.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};
use crate::symplectic::{max_abs, omega, NetworkSpec};

pub const VACUUM_VARIANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let s = GaussianState { mean, cov };
        s.validate()?;
        Ok(s)
    }

    pub fn vacuum(m: usize) -> Self {
        GaussianState { mean: DVector::zeros(2 * m), cov: DMatrix::identity(2 * m, 2 * m) * VACUUM_VARIANCE }
    }

    pub fn thermal(m: usize, nbar: f64) -> Self {
        GaussianState {
            mean: DVector::zeros(2 * m),
            cov: DMatrix::identity(2 * m, 2 * m) * (VACUUM_VARIANCE + nbar / 2.0),
        }
    }

    pub fn modes(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        if !n.is_multiple_of(2) || self.cov.shape() != (n, n) {
            return Err(CertError::Dimension("mean/cov shapes disagree".into()));
        }
        if self.mean.iter().any(|v| !v.is_finite()) || self.cov.iter().any(|v| !v.is_finite()) {
            return Err(CertError::Unphysical("non-finite entries".into()));
        }
        let asym = max_abs(&(&self.cov - self.cov.transpose()));
        if asym > 1e-10 {
            return Err(CertError::Unphysical(format!("covariance asymmetric by {asym:.3e}")));
        }
        let lam = self.uncertainty_min_eigenvalue();
        if lam < -1e-9 {
            return Err(CertError::Unphysical(format!("cov + (i/4) Omega has eigenvalue {lam:.3e}")));
        }
        Ok(())
    }

    /// Smallest eigenvalue of the Hermitian matrix cov + (i/4) Omega.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        let w = omega(self.modes());
        let h = DMatrix::from_fn(self.cov.nrows(), self.cov.ncols(), |i, j| {
            Complex64::new(self.cov[(i, j)], 0.25 * w[(i, j)])
        });
        h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Symmetrized second moment <(r_k r_l + r_l r_k)/2>.
    pub fn second_moment(&self, k: usize, l: usize) -> f64 {
        self.cov[(k, l)] + self.mean[k] * self.mean[l]
    }

    /// Moment of the Wigner distribution for a multiset of quadrature
    /// indices, i.e. the expectation of the Weyl-ordered monomial.
    pub fn wigner_moment(&self, indices: &[usize]) -> f64 {
        match indices.split_first() {
            None => 1.0,
            Some((&first, rest)) => {
                let mut acc = self.mean[first] * self.wigner_moment(rest);
                for (pos, &idx) in rest.iter().enumerate() {
                    let c = self.cov[(first, idx)];
                    if c != 0.0 {
                        let mut others = rest.to_vec();
                        others.remove(pos);
                        acc += c * self.wigner_moment(&others);
                    }
                }
                acc
            }
        }
    }

    /// Affine symplectic action r -> S r + x.
    pub fn transform(&self, s: &DMatrix<f64>, x: &DVector<f64>) -> GaussianState {
        GaussianState { mean: s * &self.mean + x, cov: s * &self.cov * s.transpose() }
    }
}

pub fn prepare_gaussian_target(net: &NetworkSpec) -> Result<GaussianState> {
    if net.photons() != 0 {
        return Err(CertError::ClassMismatch("Gaussian target requires nvec = 0".into()));
    }
    let t = &net.transform;
    Ok(GaussianState::vacuum(net.m).transform(&t.matrix(), &t.x))
}

/// The preparation seen through r -> S^{-1}(r - x).
pub fn pullback(state: &GaussianState, net: &NetworkSpec) -> GaussianState {
    let map = net.transform.inverse_map();
    GaussianState {
        mean: map.apply(&state.mean),
        cov: &map.s_inv * &state.cov * map.s_inv.transpose(),
    }
}

/// <n> of the pulled-back preparation; F^(0) = 1 - this value.
pub fn mean_total_photons(state: &GaussianState, net: &NetworkSpec) -> f64 {
    let back = pullback(state, net);
    back.cov.trace() + back.mean.norm_squared() - net.m as f64 / 2.0
}

/// Tr[rho_a rho_b] for two Gaussian states.
pub fn overlap(a: &GaussianState, b: &GaussianState) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(CertError::Dimension("states have different mode counts".into()));
    }
    let sum = &a.cov + &b.cov;
    let det = (sum.clone() * 2.0).determinant();
    if !(det > 1e-300) {
        return Err(CertError::IllConditioned(format!("det 2(Va + Vb) = {det:.3e}")));
    }
    let inv = sum
        .try_inverse()
        .ok_or_else(|| CertError::IllConditioned("covariance sum is singular".into()))?;
    let delta = &a.mean - &b.mean;
    let quad = (delta.transpose() * inv * &delta)[(0, 0)];
    Ok((-0.5 * quad).exp() / det.sqrt())
}

pub fn gaussian_fidelity_oracle(net: &NetworkSpec, prep: &GaussianState) -> Result<f64> {
    overlap(&prepare_gaussian_target(net)?, prep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseChannel {
    /// Pure loss with transmissivity `eta` (1 = no loss).
    Loss { eta: f64 },
    /// Additive classical noise adding `nbar / 2` to every quadrature variance.
    Thermal { nbar: f64 },
    /// Deterministic displacement of the mean by `shift` (length 2m).
    DisplacementDrift { shift: Vec<f64> },
}

pub fn noise_channel(state: &GaussianState, channel: &NoiseChannel) -> Result<GaussianState> {
    let n = state.mean.len();
    match channel {
        NoiseChannel::Loss { eta } => {
            if !(0.0..=1.0).contains(eta) {
                return Err(CertError::InvalidParameter(format!("loss transmissivity {eta} outside [0, 1]")));
            }
            Ok(GaussianState {
                mean: &state.mean * eta.sqrt(),
                cov: &state.cov * *eta + DMatrix::identity(n, n) * ((1.0 - eta) * VACUUM_VARIANCE),
            })
        }
        NoiseChannel::Thermal { nbar } => {
            if !(*nbar >= 0.0 && nbar.is_finite()) {
                return Err(CertError::InvalidParameter(format!("thermal occupation {nbar} must be >= 0")));
            }
            Ok(GaussianState { mean: state.mean.clone(), cov: &state.cov + DMatrix::identity(n, n) * (nbar / 2.0) })
        }
        NoiseChannel::DisplacementDrift { shift } => {
            if shift.len() != n || shift.iter().any(|v| !v.is_finite()) {
                return Err(CertError::InvalidParameter(format!("drift must be {n} finite values")));
            }
            Ok(GaussianState { mean: &state.mean + DVector::from_column_slice(shift), cov: state.cov.clone() })
        }
    }
}

/// Joint outcomes of the quadratures cos(t_j) q_j + sin(t_j) p_j; one row per sample.
pub fn sample_homodyne_gaussian<R: Rng>(
    state: &GaussianState,
    angles: &[f64],
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let m = state.modes();
    if angles.len() != m {
        return Err(CertError::Dimension(format!("{} angles for {m} modes", angles.len())));
    }
    let mut rot = DMatrix::zeros(m, 2 * m);
    for (j, t) in angles.iter().enumerate() {
        rot[(j, 2 * j)] = t.cos();
        rot[(j, 2 * j + 1)] = t.sin();
    }
    let mu = &rot * &state.mean;
    let sigma = &rot * &state.cov * rot.transpose();
    let chol = sigma.clone().cholesky().ok_or_else(|| {
        CertError::Unphysical("restricted quadrature covariance is not positive definite".into())
    })?;
    let l = chol.l();
    let mut out = DMatrix::zeros(count, m);
    let mut z = DVector::zeros(m);
    for row in 0..count {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &mu + &l * &z;
        for j in 0..m {
            out[(row, j)] = x[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symplectic::{random_passive, SymplecticTransform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn squeezer(s: f64) -> NetworkSpec {
        NetworkSpec::gaussian(
            SymplecticTransform::new(DMatrix::identity(2, 2), vec![s], DMatrix::identity(2, 2), DVector::zeros(2))
                .unwrap(),
        )
    }

    #[test]
    fn target_preparation_examples() {
        let vac = prepare_gaussian_target(&NetworkSpec::gaussian(SymplecticTransform::identity(1))).unwrap();
        assert_eq!(vac.cov, DMatrix::identity(2, 2) * 0.25);
        let sq = prepare_gaussian_target(&squeezer(2.0)).unwrap();
        assert!((sq.cov[(0, 0)] - 1.0).abs() < 1e-15 && (sq.cov[(1, 1)] - 1.0 / 16.0).abs() < 1e-15);
        let mut t = SymplecticTransform::identity(1);
        t.x = DVector::from_vec(vec![1.0, 0.0]);
        let disp = prepare_gaussian_target(&NetworkSpec::gaussian(t)).unwrap();
        assert_eq!(disp.mean, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(disp.cov, DMatrix::identity(2, 2) * 0.25);
        let lo = NetworkSpec::linear_optical(DMatrix::identity(2, 2), 1).unwrap();
        assert!(prepare_gaussian_target(&lo).is_err());
    }

    #[test]
    fn photon_number_examples() {
        let net = squeezer(2.0);
        let target = prepare_gaussian_target(&net).unwrap();
        assert!(mean_total_photons(&target, &net).abs() < 1e-14);
        let vac3 = NetworkSpec::gaussian(SymplecticTransform::identity(3));
        assert!((mean_total_photons(&GaussianState::thermal(3, 0.1), &vac3) - 0.3).abs() < 1e-14);
        let vac1 = NetworkSpec::gaussian(SymplecticTransform::identity(1));
        assert!((mean_total_photons(&target, &vac1) - 0.5625).abs() < 1e-14);
    }

    #[test]
    fn fidelity_examples() {
        let vac1 = NetworkSpec::gaussian(SymplecticTransform::identity(1));
        let sq = prepare_gaussian_target(&squeezer(2.0)).unwrap();
        assert!((gaussian_fidelity_oracle(&vac1, &sq).unwrap() - 0.8).abs() < 1e-14);
        assert!((gaussian_fidelity_oracle(&vac1, &GaussianState::thermal(1, 0.5)).unwrap() - 2.0 / 3.0).abs() < 1e-14);
        let net = NetworkSpec::gaussian(random_passive(3, 3, 5));
        let t = prepare_gaussian_target(&net).unwrap();
        assert!((gaussian_fidelity_oracle(&net, &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_overlap_matches_fock() {
        let alpha = num_complex::Complex64::new(0.6, -0.3);
        let coh = crate::fock::FockState::coherent(alpha, 30).unwrap();
        let vac = crate::fock::FockState::vacuum(1, 30).unwrap();
        let want = crate::fock::fidelity_oracle_fock(&vac, &coh).unwrap();
        let g = GaussianState::new(DVector::from_vec(vec![alpha.re, alpha.im]), DMatrix::identity(2, 2) * 0.25).unwrap();
        let vac1 = NetworkSpec::gaussian(SymplecticTransform::identity(1));
        assert!((gaussian_fidelity_oracle(&vac1, &g).unwrap() - want).abs() < 1e-12);
        assert!((want - (-alpha.norm_sqr()).exp()).abs() < 1e-12);
    }

    #[test]
    fn channel_examples() {
        let sq = prepare_gaussian_target(&squeezer(1.7)).unwrap();
        assert_eq!(noise_channel(&sq, &NoiseChannel::Loss { eta: 1.0 }).unwrap(), sq);
        let lost = noise_channel(&sq, &NoiseChannel::Loss { eta: 0.0 }).unwrap();
        assert!(max_abs(&(lost.cov - DMatrix::identity(2, 2) * 0.25)) < 1e-15);
        let th = noise_channel(&GaussianState::vacuum(1), &NoiseChannel::Thermal { nbar: 0.1 }).unwrap();
        assert!(max_abs(&(th.cov - DMatrix::identity(2, 2) * 0.3)) < 1e-15);
        assert!(noise_channel(&sq, &NoiseChannel::Loss { eta: 1.2 }).is_err());
        assert!(noise_channel(&sq, &NoiseChannel::Thermal { nbar: -0.1 }).is_err());
    }

    #[test]
    fn uncertainty_relation_is_enforced() {
        let bad = GaussianState::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.1);
        assert!(matches!(bad, Err(CertError::Unphysical(_))));
        assert!(GaussianState::vacuum(2).validate().is_ok());
    }

    #[test]
    fn wigner_moments_follow_isserlis() {
        let s = GaussianState::thermal(1, 0.0);
        assert!((s.wigner_moment(&[0, 0]) - 0.25).abs() < 1e-15);
        assert!((s.wigner_moment(&[0, 0, 0, 0]) - 3.0 / 16.0).abs() < 1e-15);
        let mut d = s.clone();
        d.mean[0] = 1.0;
        assert!((d.wigner_moment(&[0, 0]) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn homodyne_sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let vac = sample_homodyne_gaussian(&GaussianState::vacuum(1), &[0.0], n, &mut rng).unwrap();
        let mean = vac.mean();
        let var = vac.iter().map(|v| v * v).sum::<f64>() / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!((var - 0.25).abs() < 6.0 * 0.25 * (2.0 / n as f64).sqrt());
        let sq = prepare_gaussian_target(&squeezer(2.0)).unwrap();
        let qs = sample_homodyne_gaussian(&sq, &[0.0], n, &mut rng).unwrap();
        let qvar = qs.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((qvar - 1.0).abs() < 6.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn correlated_two_mode_readout() {
        let mut cov = DMatrix::identity(4, 4) * 0.5;
        cov[(0, 2)] = 0.4;
        cov[(2, 0)] = 0.4;
        cov[(1, 3)] = -0.4;
        cov[(3, 1)] = -0.4;
        let st = GaussianState::new(DVector::zeros(4), cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let x = sample_homodyne_gaussian(&st, &[0.0, 0.0], n, &mut rng).unwrap();
        let c = (0..n).map(|i| x[(i, 0)] * x[(i, 1)]).sum::<f64>() / n as f64;
        // Var(q1 q2) = 0.5*0.5 + 0.4^2
        let se = ((0.25 + 0.16) / n as f64).sqrt();
        assert!((c - 0.4).abs() < 5.0 * se);
    }
}
