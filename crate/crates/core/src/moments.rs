//! Moment-tensor addressing and the canonical observables behind each entry.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::weyl::{self, Block, Compiled, Part, Quad, WeylPoly};

/// An entry of a moment tensor: a first moment gamma_l, or an ordered product
/// of symmetrized pairs (r_k r_l + r_l r_k)/2. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MomentKey {
    Mean(usize),
    Pairs(Vec<(usize, usize)>),
}

impl MomentKey {
    /// Within-pair swap canonicalization; pair order is kept.
    pub fn pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> MomentKey {
        MomentKey::Pairs(pairs.into_iter().map(|(k, l)| (k.min(l), k.max(l))).collect())
    }

    pub fn order(&self) -> usize {
        match self {
            MomentKey::Mean(_) => 0,
            MomentKey::Pairs(p) => p.len(),
        }
    }

    pub fn observable(&self) -> Observable {
        let mut words: Vec<(usize, Vec<Block>)> = Vec::new();
        let mut push = |mode: usize, b: Block| match words.iter_mut().find(|(m, _)| *m == mode) {
            Some((_, w)) => w.push(b),
            None => words.push((mode, vec![b])),
        };
        match self {
            MomentKey::Mean(l) => push(l / 2, Block::Single(Quad::of_index(*l))),
            MomentKey::Pairs(pairs) => {
                for &(k, l) in pairs {
                    if k / 2 == l / 2 {
                        push(k / 2, Block::sym(Quad::of_index(k), Quad::of_index(l)));
                    } else {
                        push(k / 2, Block::Single(Quad::of_index(k)));
                        push(l / 2, Block::Single(Quad::of_index(l)));
                    }
                }
            }
        }
        Observable::canonical(words, Part::Re).0
    }
}

impl fmt::Display for MomentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MomentKey::Mean(l) => write!(f, "g({})", l + 1),
            MomentKey::Pairs(p) => {
                write!(f, "G")?;
                for (k, l) in p {
                    write!(f, "({},{})", k + 1, l + 1)?;
                }
                Ok(())
            }
        }
    }
}

/// Real or imaginary part of the expectation of a product of per-mode words.
/// Two moment-tensor entries map to the same observable exactly when they
/// are the same operator up to commuting factors and adjoints.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observable {
    /// (mode, word) sorted by mode, words nonempty.
    pub words: Vec<(usize, Vec<Block>)>,
    pub part: Part,
}

impl Observable {
    /// Canonical representative and the sign relating it to the input.
    pub fn canonical(mut words: Vec<(usize, Vec<Block>)>, part: Part) -> (Observable, f64) {
        words.retain(|(_, w)| !w.is_empty());
        words.sort_by_key(|(m, _)| *m);
        let norm = |ws: &[(usize, Vec<Block>)]| -> Vec<(usize, Vec<Block>)> {
            ws.iter().map(|(m, w)| (*m, weyl::normal_form(w))).collect()
        };
        let fwd = norm(&words);
        let rev: Vec<(usize, Vec<Block>)> =
            words.iter().map(|(m, w)| (*m, w.iter().rev().cloned().collect())).collect();
        let rev = norm(&rev);
        if rev < fwd {
            let sign = if part == Part::Im { -1.0 } else { 1.0 };
            (Observable { words: rev, part }, sign)
        } else {
            (Observable { words: fwd, part }, 1.0)
        }
    }

    pub fn degree(&self) -> usize {
        self.words.iter().map(|(_, w)| w.iter().map(Block::degree).sum::<usize>()).sum()
    }

    pub fn modes(&self) -> Vec<usize> {
        self.words.iter().map(|(m, _)| *m).collect()
    }

    pub fn symbol(&self) -> WeylPoly {
        weyl::multimode_symbol(&self.words, self.part)
    }

    pub fn compile(&self) -> Result<Compiled> {
        weyl::compile(&self.symbol())
    }

    /// Restriction of the words to `modes`, reindexed by position in `modes`.
    pub fn restrict(words: &[(usize, Vec<Block>)], modes: &[usize]) -> Vec<(usize, Vec<Block>)> {
        words
            .iter()
            .filter_map(|(m, w)| modes.iter().position(|x| x == m).map(|i| (i, w.clone())))
            .collect()
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<", if self.part == Part::Re { "Re" } else { "Im" })?;
        for (i, (m, w)) in self.words.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "m{}:", m + 1)?;
            for b in w {
                write!(f, "{b}")?;
            }
        }
        write!(f, ">")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn within_pair_symmetry() {
        assert_eq!(MomentKey::pairs([(1, 0)]), MomentKey::pairs([(0, 1)]));
        assert_eq!(MomentKey::pairs([(1, 0)]).to_string(), "G(1,2)");
    }

    #[test]
    fn commuting_pairs_share_an_observable() {
        let a = MomentKey::pairs([(0, 0), (2, 2)]).observable();
        let b = MomentKey::pairs([(2, 2), (0, 0)]).observable();
        assert_eq!(a, b);
        // q1^2 and p1^2 do not commute, but Re<AB> = Re<BA> for Hermitian A, B
        let c = MomentKey::pairs([(0, 0), (1, 1)]).observable();
        let d = MomentKey::pairs([(1, 1), (0, 0)]).observable();
        assert_eq!(c, d);
    }

    #[test]
    fn non_commuting_triples_stay_distinct() {
        let a = MomentKey::pairs([(0, 0), (1, 1), (0, 0)]).observable();
        let b = MomentKey::pairs([(0, 0), (0, 0), (1, 1)]).observable();
        assert_ne!(a, b);
    }

    #[test]
    fn mixed_pair_compiles_to_three_settings() {
        let c = MomentKey::pairs([(0, 1)]).observable().compile().unwrap();
        assert_eq!(c.terms.len(), 3);
        assert!(c.constant.abs() < 1e-15);
    }
}
