//! A preparation simulated by either backend, behind one interface for
//! exact moments and homodyne sampling.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fock::{self, FockState};
use crate::gaussian::{sample_homodyne_gaussian, GaussianState};
use crate::moments::Observable;
use crate::weyl::{angle_value, HomodyneMonomial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum PreparedState {
    Gaussian(GaussianState),
    Fock(FockState),
}

impl PreparedState {
    pub fn modes(&self) -> usize {
        match self {
            PreparedState::Gaussian(g) => g.modes(),
            PreparedState::Fock(f) => f.m,
        }
    }

    pub fn observable(&self, obs: &Observable) -> f64 {
        match self {
            PreparedState::Gaussian(g) => obs.symbol().evaluate(|mono| g.wigner_moment(&wigner_indices(mono))),
            PreparedState::Fock(f) => fock::observable_exact(f, obs).value,
        }
    }

    /// Exact joint moment of homodyne outcomes.
    pub fn monomial(&self, mono: &HomodyneMonomial) -> f64 {
        match self {
            PreparedState::Gaussian(g) => gaussian_monomial(g, mono),
            PreparedState::Fock(f) => fock::monomial_moment(f, mono).value,
        }
    }

    pub fn monomial_variance(&self, mono: &HomodyneMonomial) -> f64 {
        let sq = HomodyneMonomial { factors: mono.factors.iter().map(|&(j, a, e)| (j, a, 2 * e)).collect() };
        let mean = self.monomial(mono);
        (self.monomial(&sq) - mean * mean).max(0.0)
    }

    pub fn sample<R: Rng>(&self, angles: &[f64], count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        match self {
            PreparedState::Gaussian(g) => sample_homodyne_gaussian(g, angles, count, rng),
            PreparedState::Fock(f) => fock::sample_homodyne_fock(f, angles, count, rng),
        }
    }
}

fn wigner_indices(mono: &[(usize, u32, u32)]) -> Vec<usize> {
    let mut idx = Vec::new();
    for &(mode, a, b) in mono {
        idx.extend(std::iter::repeat_n(2 * mode, a as usize));
        idx.extend(std::iter::repeat_n(2 * mode + 1, b as usize));
    }
    idx
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Symmetric functions of one quadrature are their own Weyl symbols, so the
/// homodyne moment is a Wigner moment of prod_j (c_j q_j + s_j p_j)^e_j.
fn gaussian_monomial(g: &GaussianState, mono: &HomodyneMonomial) -> f64 {
    let mut terms: Vec<(f64, Vec<(usize, u32, u32)>)> = vec![(1.0, Vec::new())];
    for &(mode, a, e) in &mono.factors {
        let (s, c) = angle_value(a).sin_cos();
        let mut next = Vec::new();
        for (w, f) in &terms {
            for k in 0..=e {
                let coef = binom(e, k) * c.powi((e - k) as i32) * s.powi(k as i32);
                if coef.abs() < 1e-15 {
                    continue;
                }
                let mut g = f.clone();
                g.push((mode, e - k, k));
                next.push((w * coef, g));
            }
        }
        terms = next;
    }
    terms.iter().map(|(w, f)| w * g.wigner_moment(&wigner_indices(f))).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::MomentKey;
    use crate::weyl::{ANGLE_DIAG, ANGLE_P, ANGLE_Q};

    #[test]
    fn backends_agree_on_vacuum_and_coherent_moments() {
        let g = PreparedState::Gaussian(GaussianState::vacuum(2));
        let f = PreparedState::Fock(FockState::vacuum(2, 8).unwrap());
        for key in [MomentKey::pairs([(0, 0)]), MomentKey::pairs([(0, 1)]), MomentKey::pairs([(0, 0), (2, 2)])] {
            let obs = key.observable();
            assert!((g.observable(&obs) - f.observable(&obs)).abs() < 1e-12, "{key}");
        }
        let mono = HomodyneMonomial { factors: vec![(0, ANGLE_DIAG, 2), (1, ANGLE_P, 2)] };
        assert!((g.monomial(&mono) - f.monomial(&mono)).abs() < 1e-12);
        assert!((g.monomial_variance(&mono) - f.monomial_variance(&mono)).abs() < 1e-12);

        let alpha = num_complex::Complex64::new(0.3, -0.2);
        let fc = PreparedState::Fock(FockState::coherent(alpha, 30).unwrap());
        let mut gs = GaussianState::vacuum(1);
        gs.mean[0] = 0.3;
        gs.mean[1] = -0.2;
        let gc = PreparedState::Gaussian(gs);
        for a in [ANGLE_Q, ANGLE_P, ANGLE_DIAG, 3, 5] {
            let mono = HomodyneMonomial { factors: vec![(0, a, 3)] };
            assert!((gc.monomial(&mono) - fc.monomial(&mono)).abs() < 1e-10);
        }
    }
}
