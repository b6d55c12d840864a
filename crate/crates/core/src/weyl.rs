//! Quadrature words, their Weyl symbols, and compilation into moments of
//! rotated quadratures that a homodyne detector can sample.
//!
//! With [q, p] = i/2 the Moyal product uses hbar = 1/2. The expectation of
//! the Weyl-ordered operator with symbol prod_j (cos t_j q_j + sin t_j p_j)^e_j
//! equals the joint moment of homodyne outcomes at angles t_j, which is what
//! makes the compilation exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CertError, Result};

pub const HBAR: f64 = 0.5;

/// Homodyne angles in the order they are drawn on when a monomial needs
/// more than one: q, p, then the diagonals, then finer rotations.
pub const ANGLES: [f64; 8] = [0.0, PI / 2.0, PI / 4.0, 3.0 * PI / 4.0, PI / 8.0, 3.0 * PI / 8.0, 5.0 * PI / 8.0, 7.0 * PI / 8.0];

pub const ANGLE_Q: u8 = 0;
pub const ANGLE_P: u8 = 1;
pub const ANGLE_DIAG: u8 = 2;

pub fn angle_value(idx: u8) -> f64 {
    ANGLES[idx as usize]
}

pub fn angle_index(theta: f64) -> Option<u8> {
    ANGLES.iter().position(|a| (a - theta).abs() < 1e-12).map(|i| i as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quad {
    Q,
    P,
}

impl Quad {
    pub fn of_index(r: usize) -> Quad {
        if r.is_multiple_of(2) {
            Quad::Q
        } else {
            Quad::P
        }
    }
}

/// A Hermitian factor acting on one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Block {
    Single(Quad),
    /// (a b + b a) / 2 with a <= b.
    Sym(Quad, Quad),
}

impl Block {
    pub fn sym(a: Quad, b: Quad) -> Block {
        if a <= b {
            Block::Sym(a, b)
        } else {
            Block::Sym(b, a)
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            Block::Single(_) => 1,
            Block::Sym(..) => 2,
        }
    }

    /// Some(Q) / Some(P) if the block is a function of one quadrature only.
    fn pure_kind(&self) -> Option<Quad> {
        match *self {
            Block::Single(a) => Some(a),
            Block::Sym(a, b) if a == b => Some(a),
            _ => None,
        }
    }

    pub fn commutes(&self, other: &Block) -> bool {
        match (self.pure_kind(), other.pure_kind()) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }

    fn symbol(&self) -> Poly {
        let lin = |a: Quad| match a {
            Quad::Q => Poly::monomial(1, 0, Complex64::new(1.0, 0.0)),
            Quad::P => Poly::monomial(0, 1, Complex64::new(1.0, 0.0)),
        };
        match *self {
            Block::Single(a) => lin(a),
            Block::Sym(a, b) => lin(a).mul(&lin(b)),
        }
    }

    /// Orderings of bare quadratures with weights, expanding the symmetrization.
    pub fn expansions(&self) -> Vec<(f64, Vec<Quad>)> {
        match *self {
            Block::Single(a) => vec![(1.0, vec![a])],
            Block::Sym(a, b) if a == b => vec![(1.0, vec![a, a])],
            Block::Sym(a, b) => vec![(0.5, vec![a, b]), (0.5, vec![b, a])],
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |a: &Quad| if *a == Quad::Q { "q" } else { "p" };
        match self {
            Block::Single(a) => write!(f, "{}", c(a)),
            Block::Sym(a, b) => write!(f, "{{{}{}}}", c(a), c(b)),
        }
    }
}

/// Lexicographic normal form of a word under commutation of adjacent
/// commuting blocks.
pub fn normal_form(word: &[Block]) -> Vec<Block> {
    let mut rest: Vec<Block> = word.to_vec();
    let mut out = Vec::with_capacity(word.len());
    while !rest.is_empty() {
        let mut best: Option<usize> = None;
        for i in 0..rest.len() {
            if rest[..i].iter().all(|b| b.commutes(&rest[i])) && best.is_none_or(|j| rest[i] < rest[j]) {
                best = Some(i);
            }
        }
        let i = best.expect("the first block is always movable");
        out.push(rest.remove(i));
    }
    out
}

/// Single-mode polynomial in (q, p) with complex coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub terms: BTreeMap<(u32, u32), Complex64>,
}

fn binom(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn falling(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64)
}

impl Poly {
    pub fn constant(c: Complex64) -> Poly {
        Poly::monomial(0, 0, c)
    }

    pub fn monomial(a: u32, b: u32, c: Complex64) -> Poly {
        let mut terms = BTreeMap::new();
        terms.insert((a, b), c);
        Poly { terms }
    }

    fn add_term(&mut self, key: (u32, u32), c: Complex64) {
        let e = self.terms.entry(key).or_insert(Complex64::new(0.0, 0.0));
        *e += c;
    }

    fn prune(mut self) -> Poly {
        self.terms.retain(|_, c| c.norm() > 1e-14);
        self
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (&(a1, b1), c1) in &self.terms {
            for (&(a2, b2), c2) in &other.terms {
                out.add_term((a1 + a2, b1 + b2), c1 * c2);
            }
        }
        out.prune()
    }

    /// Moyal star product for [q, p] = i hbar.
    pub fn star(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (&(a1, b1), c1) in &self.terms {
            for (&(a2, b2), c2) in &other.terms {
                let kmax = (a1 + b1).min(a2 + b2);
                let mut fact = 1.0;
                for k in 0..=kmax {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    let pref = Complex64::new(0.0, HBAR / 2.0).powu(k) / fact;
                    for j in 0..=k {
                        // d_q^{k-j} d_p^j on the left, d_p^{k-j} d_q^j on the right
                        let (lq, lp, rp, rq) = (k - j, j, k - j, j);
                        if lq > a1 || lp > b1 || rp > b2 || rq > a2 {
                            continue;
                        }
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        let coef = binom(k, j)
                            * sign
                            * falling(a1, lq)
                            * falling(b1, lp)
                            * falling(b2, rp)
                            * falling(a2, rq);
                        out.add_term((a1 - lq + a2 - rq, b1 - lp + b2 - rp), pref * coef * c1 * c2);
                    }
                }
            }
        }
        out.prune()
    }

    pub fn re(&self) -> RealPoly1 {
        RealPoly1(self.terms.iter().map(|(k, c)| (*k, c.re)).filter(|(_, v)| v.abs() > 1e-14).collect())
    }

    pub fn im(&self) -> RealPoly1 {
        RealPoly1(self.terms.iter().map(|(k, c)| (*k, c.im)).filter(|(_, v)| v.abs() > 1e-14).collect())
    }
}

/// Weyl symbol of an ordered word of blocks on one mode.
pub fn word_symbol(word: &[Block]) -> Poly {
    word.iter().fold(Poly::constant(Complex64::new(1.0, 0.0)), |acc, b| acc.star(&b.symbol()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RealPoly1(pub Vec<((u32, u32), f64)>);

/// Real polynomial over several modes: monomial = sorted (mode, a, b) with a + b > 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeylPoly {
    pub terms: BTreeMap<Vec<(usize, u32, u32)>, f64>,
}

impl WeylPoly {
    pub fn one() -> WeylPoly {
        let mut terms = BTreeMap::new();
        terms.insert(Vec::new(), 1.0);
        WeylPoly { terms }
    }

    fn times_mode(&self, mode: usize, p: &RealPoly1) -> WeylPoly {
        let mut out = WeylPoly::default();
        for (mono, c) in &self.terms {
            for &((a, b), v) in &p.0 {
                let mut key = mono.clone();
                if a + b > 0 {
                    key.push((mode, a, b));
                    key.sort_unstable();
                }
                *out.terms.entry(key).or_insert(0.0) += c * v;
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &WeylPoly, s: f64) {
        for (k, v) in &other.terms {
            *self.terms.entry(k.clone()).or_insert(0.0) += s * v;
        }
    }

    fn prune(mut self) -> WeylPoly {
        self.terms.retain(|_, v| v.abs() > 1e-14);
        self
    }

    /// Expectation under a function returning Weyl-ordered monomial moments.
    pub fn evaluate(&self, mut moment: impl FnMut(&[(usize, u32, u32)]) -> f64) -> f64 {
        self.terms.iter().map(|(k, c)| if k.is_empty() { *c } else { c * moment(k) }).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    Re,
    Im,
}

/// Real or imaginary part of the Weyl symbol of a multi-mode word.
pub fn multimode_symbol(words: &[(usize, Vec<Block>)], part: Part) -> WeylPoly {
    let syms: Vec<(usize, RealPoly1, RealPoly1)> = words
        .iter()
        .map(|(mode, w)| {
            let s = word_symbol(w);
            (*mode, s.re(), s.im())
        })
        .collect();
    let k = syms.len();
    let mut total = WeylPoly::default();
    for mask in 0u32..(1u32 << k) {
        let odd = mask.count_ones() % 2 == 1;
        if odd != (part == Part::Im) {
            continue;
        }
        let half = (mask.count_ones() / 2) as i32;
        let sign = if half % 2 == 0 { 1.0 } else { -1.0 };
        let mut acc = WeylPoly::one();
        for (i, (mode, re, im)) in syms.iter().enumerate() {
            let factor = if mask & (1 << i) != 0 { im } else { re };
            acc = acc.times_mode(*mode, factor);
            if acc.terms.is_empty() {
                break;
            }
        }
        total.add_scaled(&acc, sign);
    }
    total.prune()
}

/// Product of powers of rotated quadratures, one angle per participating mode.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HomodyneMonomial {
    /// Sorted (mode, angle index, power) with power >= 1.
    pub factors: Vec<(usize, u8, u32)>,
}

impl HomodyneMonomial {
    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|f| f.2).sum()
    }

    pub fn evaluate_row(&self, outcomes: &[f64]) -> f64 {
        self.factors.iter().map(|&(mode, _, e)| outcomes[mode].powi(e as i32)).product()
    }
}

impl fmt::Display for HomodyneMonomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|&(mode, a, e)| format!("x{}[{:.4}]^{}", mode + 1, angle_value(a), e))
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Weights w_t with q^a p^b = sum_t w_t (cos t q + sin t p)^(a+b) as symbols.
pub fn rotated_expansion(a: u32, b: u32) -> Result<Vec<(u8, f64)>> {
    let e = a + b;
    if b == 0 {
        return Ok(vec![(ANGLE_Q, 1.0)]);
    }
    if a == 0 {
        return Ok(vec![(ANGLE_P, 1.0)]);
    }
    if e as usize + 1 > ANGLES.len() {
        return Err(CertError::InvalidParameter(format!("per-mode degree {e} exceeds the angle table")));
    }
    let n = e as usize + 1;
    // rows: coefficient of q^{e-s} p^s; columns: angle t
    let v = DMatrix::from_fn(n, n, |s, t| {
        let th = ANGLES[t];
        binom(e, s as u32) * th.cos().powi((e as usize - s) as i32) * th.sin().powi(s as i32)
    });
    let mut rhs = DVector::zeros(n);
    rhs[b as usize] = 1.0;
    let w = v
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CertError::IllConditioned("rotated-quadrature system is singular".into()))?;
    Ok((0..n).filter(|&t| w[t].abs() > 1e-12).map(|t| (t as u8, w[t])).collect())
}

/// Linear combination of homodyne monomial moments plus a constant.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Compiled {
    pub constant: f64,
    pub terms: Vec<(f64, HomodyneMonomial)>,
}

pub fn compile(poly: &WeylPoly) -> Result<Compiled> {
    let mut acc: BTreeMap<HomodyneMonomial, f64> = BTreeMap::new();
    let mut constant = 0.0;
    for (mono, c) in &poly.terms {
        if mono.is_empty() {
            constant += c;
            continue;
        }
        let mut partial: Vec<(f64, Vec<(usize, u8, u32)>)> = vec![(*c, Vec::new())];
        for &(mode, a, b) in mono {
            let exp = rotated_expansion(a, b)?;
            let mut next = Vec::with_capacity(partial.len() * exp.len());
            for (w, f) in &partial {
                for &(angle, wt) in &exp {
                    let mut g = f.clone();
                    g.push((mode, angle, a + b));
                    next.push((w * wt, g));
                }
            }
            partial = next;
        }
        for (w, f) in partial {
            *acc.entry(HomodyneMonomial { factors: f }).or_insert(0.0) += w;
        }
    }
    Ok(Compiled {
        constant,
        terms: acc.into_iter().filter(|(_, w)| w.abs() > 1e-12).map(|(k, w)| (w, k)).collect(),
    })
}
