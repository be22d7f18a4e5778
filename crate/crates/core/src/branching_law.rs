//! Offspring intensities at the source and the combinatorial source terms of
//! the moment hierarchy.
//!
//! A particle at the origin is replaced by `n` particles with intensity
//! `b_n` (`n = 0` is death, `n >= 2` branching) and dies with intensity `b_0`
//! elsewhere. With `b_1 = -sum_{n != 1} b_n` the infinitesimal generating
//! function is `f(u) = sum_n b_n u^n`, and
//!
//! ```text
//! beta*      = sum_{n > 1} (n - 1) b_n
//! beta^(r)   = f^(r)(1) = sum_n n (n - 1) ... (n - r + 1) b_n
//! g_n(m)     = sum_{r=2}^{n} beta^(r) / r!  sum_{i_1 + ... + i_r = n, i_k > 0}
//!                  n! / (i_1! ... i_r!)  m_{i_1} ... m_{i_r}
//! ```

use std::collections::BTreeMap;

use crate::{Error, Result};

/// Largest offspring number accepted by default.
pub const DEFAULT_MAX_OFFSPRING: usize = 10;
/// Highest moment order whose `g_n` coefficient table is precomputed.
pub const DEFAULT_CACHED_ORDER: usize = 6;

#[derive(Debug, Clone, PartialEq)]
struct Term {
    weight: f64,
    parts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    death_rate: f64,
    branching: BTreeMap<usize, f64>,
    b1: f64,
    beta_star: f64,
    factorial_moments: Vec<f64>,
    tables: Vec<Vec<Term>>,
}

impl OffspringLaw {
    /// Law with death rate `b_0` and branching intensities `(n, b_n)`,
    /// `n >= 2`.
    pub fn new(death_rate: f64, branching: &[(usize, f64)]) -> Result<Self> {
        Self::with_limits(death_rate, branching, DEFAULT_MAX_OFFSPRING, DEFAULT_CACHED_ORDER)
    }

    pub fn with_limits(
        death_rate: f64,
        branching: &[(usize, f64)],
        max_offspring: usize,
        cached_order: usize,
    ) -> Result<Self> {
        if !(death_rate.is_finite() && death_rate >= 0.0) {
            return Err(Error::InvalidLaw(format!("death rate {death_rate} must be finite and >= 0")));
        }
        let mut map = BTreeMap::new();
        for &(n, b) in branching {
            if n < 2 {
                return Err(Error::InvalidLaw(format!(
                    "branching into {n} particles; b_0 is the death rate and b_1 is implied"
                )));
            }
            if n > max_offspring {
                return Err(Error::InvalidLaw(format!(
                    "offspring number {n} exceeds the maximum {max_offspring}"
                )));
            }
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidLaw(format!("b_{n} = {b} must be finite and >= 0")));
            }
            *map.entry(n).or_insert(0.0) += b;
        }
        map.retain(|_, b| *b > 0.0);

        let positive_sum = map.values().fold(death_rate, |acc, b| acc + b);
        let b1 = -positive_sum;
        let beta_star = map.iter().map(|(&n, b)| (n - 1) as f64 * b).sum();
        let top = map.keys().next_back().copied().unwrap_or(1);
        let mut factorial_moments = vec![0.0; top.max(1) + 1];
        factorial_moments[0] = 0.0;
        for (r, slot) in factorial_moments.iter_mut().enumerate().skip(1) {
            let mut acc = if r == 1 { b1 } else { 0.0 };
            for (&n, &b) in &map {
                acc += falling_factorial(n, r) * b;
            }
            *slot = acc;
        }

        let mut law = OffspringLaw {
            death_rate,
            branching: map,
            b1,
            beta_star,
            factorial_moments,
            tables: Vec::new(),
        };
        law.tables = (0..=cached_order.max(1)).map(|n| law.table(n)).collect();
        Ok(law)
    }

    /// Pure walk with death: no branching at all.
    pub fn death_only(death_rate: f64) -> Result<Self> {
        Self::new(death_rate, &[])
    }

    /// Binary splitting at rate `b_2` with death rate `b_0`.
    pub fn binary(b2: f64, death_rate: f64) -> Result<Self> {
        Self::new(death_rate, &[(2, b2)])
    }

    /// Same branching intensities with another death rate.
    pub fn with_death_rate(&self, death_rate: f64) -> Result<Self> {
        let branching: Vec<(usize, f64)> = self.branching.iter().map(|(&n, &b)| (n, b)).collect();
        Self::with_limits(
            death_rate,
            &branching,
            self.max_offspring().max(DEFAULT_MAX_OFFSPRING),
            self.cached_order(),
        )
    }

    /// Scales all branching intensities so that `beta*` takes the given value.
    pub fn with_beta_star(&self, beta_star: f64) -> Result<Self> {
        if self.beta_star == 0.0 {
            return Err(Error::InvalidLaw("cannot rescale a law without branching".into()));
        }
        let c = beta_star / self.beta_star;
        let branching: Vec<(usize, f64)> =
            self.branching.iter().map(|(&n, &b)| (n, c * b)).collect();
        Self::with_limits(
            self.death_rate,
            &branching,
            self.max_offspring().max(DEFAULT_MAX_OFFSPRING),
            self.cached_order(),
        )
    }

    pub fn death_rate(&self) -> f64 {
        self.death_rate
    }

    /// `b_n` for every `n >= 0`, with the implied `b_1`.
    pub fn rate(&self, n: usize) -> f64 {
        match n {
            0 => self.death_rate,
            1 => self.b1,
            _ => self.branching.get(&n).copied().unwrap_or(0.0),
        }
    }

    /// `(n, b_n)` for the branching intensities `n >= 2`.
    pub fn branching(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.branching.iter().map(|(&n, &b)| (n, b))
    }

    /// Total branching intensity `sum_{n >= 2} b_n`.
    pub fn branching_rate(&self) -> f64 {
        self.branching.values().sum()
    }

    fn max_offspring(&self) -> usize {
        self.branching.keys().next_back().copied().unwrap_or(0)
    }

    pub fn cached_order(&self) -> usize {
        self.tables.len() - 1
    }

    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }

    /// `beta^(r) = f^(r)(1)`.
    pub fn factorial_moment(&self, r: usize) -> f64 {
        self.factorial_moments.get(r).copied().unwrap_or(0.0)
    }

    /// `f(u) = sum_n b_n u^n`; `f(1) = 0` exactly.
    pub fn generating_function(&self, u: f64) -> f64 {
        let mut acc = self.death_rate;
        for (&n, &b) in &self.branching {
            acc += b * u.powi(n as i32);
        }
        acc + self.b1 * u
    }

    /// `g_n(m_1, ..., m_{n-1})`.
    pub fn g(&self, n: usize, lower: &[f64]) -> Result<f64> {
        if n < 2 || lower.len() != n - 1 {
            return Err(Error::ArityMismatch {
                n,
                expected: n.saturating_sub(1),
                got: lower.len(),
            });
        }
        let eval = |terms: &[Term]| {
            terms
                .iter()
                .map(|t| t.weight * t.parts.iter().map(|&i| lower[i - 1]).product::<f64>())
                .sum()
        };
        Ok(match self.tables.get(n) {
            Some(terms) => eval(terms),
            None => eval(&self.table(n)),
        })
    }

    /// Terms of `g_n` grouped by unordered partitions of `n` into `r >= 2`
    /// parts: weight `beta^(r) n! / (prod i_k! prod c_j!)` where `c_j` are
    /// the multiplicities of equal parts.
    fn table(&self, n: usize) -> Vec<Term> {
        let mut terms = Vec::new();
        if n < 2 {
            return terms;
        }
        let mut parts = Vec::new();
        partitions(n, n, &mut parts, &mut |p| {
            let r = p.len();
            let beta = self.factorial_moment(r);
            if r < 2 || beta == 0.0 {
                return;
            }
            let mut denom = 1.0;
            for &i in p {
                denom *= factorial(i);
            }
            let mut k = 0;
            while k < r {
                let mut c = 1;
                while k + c < r && p[k + c] == p[k] {
                    c += 1;
                }
                denom *= factorial(c);
                k += c;
            }
            terms.push(Term {
                weight: beta * factorial(n) / denom,
                parts: p.to_vec(),
            });
        });
        terms
    }
}

/// Calls `emit` with every partition of `n` into parts `<= max`, in
/// nonincreasing order.
fn partitions(n: usize, max: usize, current: &mut Vec<usize>, emit: &mut impl FnMut(&[usize])) {
    if n == 0 {
        emit(current);
        return;
    }
    for part in (1..=max.min(n)).rev() {
        current.push(part);
        partitions(n - part, part, current, emit);
        current.pop();
    }
}

fn falling_factorial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    (0..r).map(|k| (n - k) as f64).product()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_star_examples() {
        assert_eq!(OffspringLaw::new(0.5, &[(2, 1.0)]).unwrap().beta_star(), 1.0);
        assert_eq!(OffspringLaw::death_only(0.5).unwrap().beta_star(), 0.0);
        let law = OffspringLaw::new(0.1, &[(2, 0.3), (3, 0.2)]).unwrap();
        assert!((law.beta_star() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn factorial_moments_of_binary_splitting() {
        let law = OffspringLaw::new(0.5, &[(2, 1.0)]).unwrap();
        assert_eq!(law.factorial_moment(2), 2.0);
        assert_eq!(law.factorial_moment(3), 0.0);
        // f(u) = 0.5 - 1.5u + u^2, f'(1) = 0.5
        assert_eq!(law.factorial_moment(1), 0.5);
        assert_eq!(law.rate(1), -1.5);
        assert_eq!(law.factorial_moment(1), law.beta_star() - law.death_rate());
    }

    #[test]
    fn generating_function_vanishes_at_one() {
        let law = OffspringLaw::new(0.1, &[(2, 0.3), (3, 0.2), (7, 0.013)]).unwrap();
        assert_eq!(law.generating_function(1.0), 0.0);
        assert!((law.generating_function(0.0) - 0.1).abs() < 1e-16);
    }

    #[test]
    fn low_order_source_terms() {
        let law = OffspringLaw::new(0.2, &[(2, 0.7), (3, 0.4)]).unwrap();
        let (b2, b3) = (law.factorial_moment(2), law.factorial_moment(3));
        let (m1, m2) = (1.3, 2.9);
        assert!((law.g(2, &[m1]).unwrap() - b2 * m1 * m1).abs() < 1e-14);
        let g3 = b3 * m1.powi(3) + 3.0 * b2 * m1 * m2;
        assert!((law.g(3, &[m1, m2]).unwrap() - g3).abs() < 1e-13);
    }

    #[test]
    fn source_terms_vanish_without_branching() {
        let law = OffspringLaw::death_only(0.3).unwrap();
        for n in 2..8 {
            assert_eq!(law.g(n, &vec![1.7; n - 1]).unwrap(), 0.0);
        }
    }

    #[test]
    fn arity_is_checked() {
        let law = OffspringLaw::binary(1.0, 0.0).unwrap();
        assert!(matches!(law.g(3, &[1.0]), Err(Error::ArityMismatch { n: 3, expected: 2, got: 1 })));
        assert!(matches!(law.g(1, &[]), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn invalid_laws_are_rejected() {
        assert!(OffspringLaw::new(-0.1, &[]).is_err());
        assert!(OffspringLaw::new(0.1, &[(1, 0.5)]).is_err());
        assert!(OffspringLaw::new(0.1, &[(2, -0.5)]).is_err());
        assert!(OffspringLaw::new(0.1, &[(11, 0.5)]).is_err());
    }

    #[test]
    fn rescaling_preserves_shape() {
        let law = OffspringLaw::new(0.1, &[(2, 0.3), (3, 0.2)]).unwrap();
        let scaled = law.with_beta_star(1.4).unwrap();
        assert!((scaled.beta_star() - 1.4).abs() < 1e-14);
        assert!((scaled.rate(3) / scaled.rate(2) - 0.2 / 0.3).abs() < 1e-14);
        assert_eq!(law.with_death_rate(0.4).unwrap().rate(0), 0.4);
    }
}
