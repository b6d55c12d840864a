//! Phase-space linear algebra in the interleaved ordering (q1, p1, q2, p2, ...).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};

/// Entries at or below this magnitude count as structural zeros.
pub const SPARSITY_THRESHOLD: f64 = 1e-12;

/// Tolerance for orthogonality and symplecticity checks.
pub const STRUCTURE_TOL: f64 = 1e-10;

pub fn omega(m: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * m, 2 * m);
    for j in 0..m {
        w[(2 * j, 2 * j + 1)] = 1.0;
        w[(2 * j + 1, 2 * j)] = -1.0;
    }
    w
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symplectic_defect(s: &DMatrix<f64>) -> f64 {
    let w = omega(s.nrows() / 2);
    max_abs(&(s.transpose() * &w * s - &w))
}

pub fn orthogonal_defect(o: &DMatrix<f64>) -> f64 {
    let n = o.nrows();
    max_abs(&(o.transpose() * o - DMatrix::identity(n, n)))
}

/// Euler-decomposed Gaussian unitary: r -> S r + x with S = O D O'.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticTransform {
    pub o: DMatrix<f64>,
    /// Squeezing factors s_j >= 1; D = diag(s_1, 1/s_1, s_2, 1/s_2, ...).
    pub squeeze: Vec<f64>,
    pub o_prime: DMatrix<f64>,
    pub x: DVector<f64>,
}

/// The inverse affine action r -> S^{-1}(r - x).
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub s_inv: DMatrix<f64>,
    pub x: DVector<f64>,
}

impl AffineMap {
    pub fn apply(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.s_inv * (r - &self.x)
    }
}

impl SymplecticTransform {
    pub fn new(
        o: DMatrix<f64>,
        squeeze: Vec<f64>,
        o_prime: DMatrix<f64>,
        x: DVector<f64>,
    ) -> Result<Self> {
        let m = squeeze.len();
        let n = 2 * m;
        if o.shape() != (n, n) || o_prime.shape() != (n, n) || x.len() != n {
            return Err(CertError::Dimension(format!(
                "expected {n}x{n} matrices and length-{n} displacement"
            )));
        }
        if let Some(s) = squeeze.iter().find(|s| !(s.is_finite() && **s >= 1.0)) {
            return Err(CertError::InvalidSqueezing(format!("s = {s} must be finite and >= 1")));
        }
        for mat in [&o, &o_prime] {
            let od = orthogonal_defect(mat);
            if od > STRUCTURE_TOL {
                return Err(CertError::NotOrthogonal { norm: od });
            }
            let sd = symplectic_defect(mat);
            if sd > STRUCTURE_TOL {
                return Err(CertError::NotSymplectic { norm: sd });
            }
        }
        let t = SymplecticTransform { o, squeeze, o_prime, x };
        let sd = symplectic_defect(&t.matrix());
        if sd > STRUCTURE_TOL {
            return Err(CertError::NotSymplectic { norm: sd });
        }
        Ok(t)
    }

    pub fn identity(m: usize) -> Self {
        SymplecticTransform {
            o: DMatrix::identity(2 * m, 2 * m),
            squeeze: vec![1.0; m],
            o_prime: DMatrix::identity(2 * m, 2 * m),
            x: DVector::zeros(2 * m),
        }
    }

    pub fn passive(o: DMatrix<f64>) -> Result<Self> {
        let n = o.nrows();
        Self::new(o, vec![1.0; n / 2], DMatrix::identity(n, n), DVector::zeros(n))
    }

    pub fn modes(&self) -> usize {
        self.squeeze.len()
    }

    pub fn d_diag(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.modes(),
            self.squeeze.iter().flat_map(|s| [*s, 1.0 / *s]),
        )
    }

    pub fn s_max(&self) -> f64 {
        self.squeeze.iter().cloned().fold(1.0, f64::max)
    }

    pub fn is_passive(&self) -> bool {
        self.squeeze.iter().all(|s| (s - 1.0).abs() <= SPARSITY_THRESHOLD)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.d_diag());
        &self.o * d * &self.o_prime
    }

    /// Symplectic inverse -Omega S^T Omega, avoiding a numeric inversion.
    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        let w = omega(self.modes());
        -(&w * self.matrix().transpose() * &w)
    }

    pub fn inverse_map(&self) -> AffineMap {
        AffineMap { s_inv: self.inverse_matrix(), x: self.x.clone() }
    }

    /// O D^{-2} O^T, the weight matrix of the Gaussian bound.
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let dinv2 = self.d_diag().map(|v| 1.0 / (v * v));
        &self.o * DMatrix::from_diagonal(&dinv2) * self.o.transpose()
    }

    /// The orthogonal matrix whose sparsity governs the relevant moments:
    /// O for squeezed networks, the full S = O O' for passive ones.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        if self.is_passive() {
            &self.o * &self.o_prime
        } else {
            self.o.clone()
        }
    }
}

/// Maximal number of modes coupled to any single mode, scanning the
/// 2x2 blocks of both paired rows and paired columns.
pub fn mode_range(o: &DMatrix<f64>) -> usize {
    let m = o.nrows() / 2;
    let block_nonzero = |i: usize, j: usize| {
        (0..2).any(|a| (0..2).any(|b| o[(2 * i + a, 2 * j + b)].abs() > SPARSITY_THRESHOLD))
    };
    let mut d = 1;
    for i in 0..m {
        let rows = (0..m).filter(|&j| block_nonzero(i, j)).count();
        let cols = (0..m).filter(|&j| block_nonzero(j, i)).count();
        d = d.max(rows).max(cols);
    }
    d
}

pub fn kappa(d: usize, m: usize) -> usize {
    2 * (d * d).min(m)
}

/// Real orthogonal-symplectic matrix of a passive unitary acting as
/// a_j -> sum_k u_jk a_k in the Heisenberg picture.
pub fn orthogonal_from_unitary(u: &DMatrix<Complex64>) -> DMatrix<f64> {
    let m = u.nrows();
    let mut o = DMatrix::zeros(2 * m, 2 * m);
    for j in 0..m {
        for k in 0..m {
            let z = u[(j, k)];
            o[(2 * j, 2 * k)] = z.re;
            o[(2 * j, 2 * k + 1)] = -z.im;
            o[(2 * j + 1, 2 * k)] = z.im;
            o[(2 * j + 1, 2 * k + 1)] = z.re;
        }
    }
    o
}

/// Inverse of [`orthogonal_from_unitary`] for orthogonal-symplectic input.
pub fn unitary_from_orthogonal(o: &DMatrix<f64>) -> DMatrix<Complex64> {
    let m = o.nrows() / 2;
    DMatrix::from_fn(m, m, |j, k| Complex64::new(o[(2 * j, 2 * k)], o[(2 * j + 1, 2 * k)]))
}

pub fn beam_splitter(m: usize, i: usize, j: usize, theta: f64, phi: f64) -> DMatrix<Complex64> {
    let mut u = DMatrix::<Complex64>::identity(m, m);
    let (c, s) = (theta.cos(), theta.sin());
    let e = Complex64::from_polar(1.0, phi);
    u[(i, i)] = Complex64::new(c, 0.0);
    u[(i, j)] = -e.conj() * s;
    u[(j, i)] = e * s;
    u[(j, j)] = Complex64::new(c, 0.0);
    u
}

/// Layered random interferometer: each layer applies random phases to all
/// modes followed by beam splitters on alternating nearest-neighbour pairs.
pub fn random_passive(m: usize, depth: usize, seed: u64) -> SymplecticTransform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::<Complex64>::identity(m, m);
    for layer in 0..depth {
        let phases = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| {
            Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
        }));
        u = phases * u;
        let mut i = layer % 2;
        while i + 1 < m {
            let theta = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            u = beam_splitter(m, i, i + 1, theta, phi) * u;
            i += 2;
        }
    }
    let mut o = orthogonal_from_unitary(&u);
    o.iter_mut().for_each(|v| {
        if v.abs() <= SPARSITY_THRESHOLD {
            *v = 0.0
        }
    });
    SymplecticTransform::passive(o).expect("products of passive gates are orthogonal-symplectic")
}

/// Rank-2 projector P^(j) onto columns 2j-1, 2j of `o` (1-based `j`).
#[derive(Debug, Clone)]
pub struct ModeProjector {
    pub j: usize,
    pub matrix: DMatrix<f64>,
}

pub fn projector(o: &DMatrix<f64>, j: usize) -> Result<ModeProjector> {
    let m = o.nrows() / 2;
    if j == 0 || j > m {
        return Err(CertError::IndexOutOfRange { index: j, max: m });
    }
    let a = o.column(2 * j - 2);
    let b = o.column(2 * j - 1);
    let mut p = a * a.transpose() + b * b.transpose();
    p.iter_mut().for_each(|v| {
        if v.abs() <= SPARSITY_THRESHOLD {
            *v = 0.0
        }
    });
    Ok(ModeProjector { j, matrix: p })
}

impl ModeProjector {
    pub fn nonzeros(&self) -> Vec<(usize, usize, f64)> {
        let n = self.matrix.nrows();
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let v = self.matrix[(a, b)];
                if v != 0.0 {
                    out.push((a, b, v));
                }
            }
        }
        out
    }
}

/// Serialized layout of a network: matrices are row-major nested lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub m: usize,
    pub nvec: Vec<u32>,
    #[serde(rename = "O")]
    pub o: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<f64>,
    #[serde(rename = "Oprime")]
    pub o_prime: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    #[serde(default)]
    pub d_range: Option<usize>,
    #[serde(default)]
    pub kappa: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetClass {
    Gaussian,
    LinearOptical,
    General,
}

/// Classical description of a target state U|nvec>.
#[derive(Debug, Clone)]
pub struct NetworkSpec {
    pub m: usize,
    pub nvec: Vec<u32>,
    pub transform: SymplecticTransform,
    pub d: usize,
    pub kappa: usize,
}

impl NetworkSpec {
    pub fn new(transform: SymplecticTransform, nvec: Vec<u32>) -> Result<Self> {
        let m = transform.modes();
        if nvec.len() != m {
            return Err(CertError::Dimension(format!("nvec has {} entries, expected {m}", nvec.len())));
        }
        let d = mode_range(&transform.coupling_matrix());
        Ok(NetworkSpec { m, nvec, kappa: kappa(d, m), d, transform })
    }

    pub fn gaussian(transform: SymplecticTransform) -> Self {
        let m = transform.modes();
        Self::new(transform, vec![0; m]).expect("nvec length matches")
    }

    /// Passive network acting on |1_n>.
    pub fn linear_optical(o: DMatrix<f64>, n: usize) -> Result<Self> {
        let t = SymplecticTransform::passive(o)?;
        let m = t.modes();
        if n > m {
            return Err(CertError::InvalidParameter(format!("n = {n} exceeds m = {m}")));
        }
        Self::new(t, (0..m).map(|j| u32::from(j < n)).collect())
    }

    pub fn photons(&self) -> usize {
        self.nvec.iter().map(|&v| v as usize).sum()
    }

    pub fn class(&self) -> TargetClass {
        let passive = self.transform.is_passive() && self.transform.x.iter().all(|v| *v == 0.0);
        let n = self.photons();
        if n == 0 {
            TargetClass::Gaussian
        } else if passive && self.nvec.iter().all(|&v| v <= 1) && self.nvec[..n].iter().all(|&v| v == 1) {
            TargetClass::LinearOptical
        } else {
            TargetClass::General
        }
    }

    /// Projectors P^(j) for a passive network, from the full passive matrix.
    pub fn projectors(&self) -> Vec<ModeProjector> {
        let o = self.transform.coupling_matrix();
        (1..=self.m).map(|j| projector(&o, j).expect("index in range")).collect()
    }

    pub fn to_file(&self) -> NetworkFile {
        let rows = |a: &DMatrix<f64>| (0..a.nrows()).map(|i| a.row(i).iter().cloned().collect()).collect();
        NetworkFile {
            m: self.m,
            nvec: self.nvec.clone(),
            o: rows(&self.transform.o),
            d: self.transform.d_diag().iter().cloned().collect(),
            o_prime: rows(&self.transform.o_prime),
            x: self.transform.x.iter().cloned().collect(),
            d_range: Some(self.d),
            kappa: Some(self.kappa),
        }
    }

    /// Loads a network; the stored `d_range` and `kappa` are ignored and recomputed.
    pub fn from_file(f: &NetworkFile) -> Result<Self> {
        let n = 2 * f.m;
        let mat = |rows: &Vec<Vec<f64>>, name: &str| -> Result<DMatrix<f64>> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(CertError::Dimension(format!("{name} must be {n}x{n}")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        if f.d.len() != n {
            return Err(CertError::Dimension(format!("D must have {n} diagonal entries")));
        }
        let mut squeeze = Vec::with_capacity(f.m);
        for j in 0..f.m {
            let (s, t) = (f.d[2 * j], f.d[2 * j + 1]);
            if (s * t - 1.0).abs() > STRUCTURE_TOL {
                return Err(CertError::InvalidSqueezing(format!("entries {s}, {t} are not reciprocal")));
            }
            squeeze.push(s);
        }
        if f.x.len() != n {
            return Err(CertError::Dimension(format!("x must have length {n}")));
        }
        let t = SymplecticTransform::new(
            mat(&f.o, "O")?,
            squeeze,
            mat(&f.o_prime, "Oprime")?,
            DVector::from_vec(f.x.clone()),
        )?;
        Self::new(t, f.nvec.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_parts_give_identity_map() {
        let t = SymplecticTransform::identity(2);
        assert_eq!(t.matrix(), DMatrix::identity(4, 4));
        let r = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        assert_eq!(t.inverse_map().apply(&r), r);
    }

    #[test]
    fn single_mode_squeezer() {
        let t = SymplecticTransform::new(
            DMatrix::identity(2, 2),
            vec![2.0],
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        assert_eq!(t.matrix(), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])));
        let out = t.inverse_map().apply(&DVector::from_vec(vec![1.0, 1.0]));
        assert!((out[0] - 0.5).abs() < 1e-15 && (out[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_symplectic() {
        let mut o = DMatrix::identity(2, 2);
        o[(1, 1)] = -1.0; // reflection: orthogonal but not symplectic
        let err = SymplecticTransform::new(o, vec![1.0], DMatrix::identity(2, 2), DVector::zeros(2));
        assert!(matches!(err, Err(CertError::NotSymplectic { .. })));
    }

    #[test]
    fn mode_range_examples() {
        assert_eq!(mode_range(&DMatrix::identity(6, 6)), 1);
        // one layer of nearest-neighbour beam splitters on 5 modes
        let mut chain = DMatrix::<Complex64>::identity(5, 5);
        for i in [0, 2] {
            chain = beam_splitter(5, i, i + 1, 0.7, 0.3) * chain;
        }
        assert_eq!(mode_range(&orthogonal_from_unitary(&chain)), 2);
        let dense = random_passive(4, 8, 3);
        assert_eq!(mode_range(&dense.o), 4);
    }

    #[test]
    fn random_passive_contract() {
        assert_eq!(random_passive(3, 0, 1).o, DMatrix::identity(6, 6));
        let a = random_passive(6, 10, 1);
        let b = random_passive(6, 10, 2);
        assert_ne!(a.o, b.o);
        assert_eq!(a.o, random_passive(6, 10, 1).o);
        let bs = orthogonal_from_unitary(&beam_splitter(2, 0, 1, std::f64::consts::FRAC_PI_4, 0.0));
        assert!(orthogonal_defect(&bs) < 1e-12);
        assert_eq!(mode_range(&bs), 2);
    }

    #[test]
    fn projector_examples() {
        let p = projector(&DMatrix::identity(4, 4), 1).unwrap();
        assert_eq!(p.matrix, DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0])));
        assert!(projector(&DMatrix::identity(4, 4), 3).is_err());
        let mut chain = DMatrix::<Complex64>::identity(5, 5);
        for i in [0, 2] {
            chain = beam_splitter(5, i, i + 1, 0.7, 0.3) * chain;
        }
        let o = orthogonal_from_unitary(&chain);
        for j in 1..=5 {
            assert!(projector(&o, j).unwrap().nonzeros().len() <= 16);
        }
    }

    #[test]
    fn json_round_trip_recomputes_derived_fields() {
        let net = NetworkSpec::linear_optical(random_passive(3, 2, 9).o, 1).unwrap();
        let mut file = net.to_file();
        file.d_range = Some(99);
        file.kappa = Some(0);
        let back = NetworkSpec::from_file(&file).unwrap();
        assert_eq!(back.d, net.d);
        assert_eq!(back.kappa, kappa(net.d, 3));
        assert!(max_abs(&(back.transform.o.clone() - net.transform.o.clone())) == 0.0);
    }

    proptest! {
        #[test]
        fn generated_transforms_are_structured(m in 1usize..6, depth in 0usize..8, seed in any::<u64>()) {
            let t = random_passive(m, depth, seed);
            prop_assert!(symplectic_defect(&t.matrix()) <= 1e-10);
            prop_assert!(orthogonal_defect(&t.o) <= 1e-10);
            let s_inv = t.inverse_matrix();
            prop_assert!(max_abs(&(s_inv * t.matrix() - DMatrix::identity(2 * m, 2 * m))) <= 1e-10);
            for j in 1..=m {
                let p = projector(&t.o, j).unwrap().matrix;
                prop_assert!(max_abs(&(&p * &p - &p)) <= 1e-10);
                prop_assert!((p.trace() - 2.0).abs() <= 1e-10);
            }
        }
    }
}
