//! Monomials and posynomials over a shared space of positive variables.
//!
//! Exponent vectors are stored sparsely as sorted `(variable, exponent)`
//! pairs; a variable that does not appear has exponent zero.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// `coeff * prod_k eta_k^{a_k}` with `coeff > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    coeff: f64,
    exps: Vec<(usize, f64)>,
}

impl Monomial {
    /// Builds a monomial, merging repeated variables and dropping zero exponents.
    ///
    /// Panics if `coeff` is not a finite positive number.
    pub fn new(coeff: f64, exps: &[(usize, f64)]) -> Self {
        assert!(
            coeff.is_finite() && coeff > 0.0,
            "monomial coefficient must be finite and positive, got {coeff}"
        );
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(k, a) in exps {
            *merged.entry(k).or_insert(0.0) += a;
        }
        let exps = merged.into_iter().filter(|&(_, a)| a != 0.0).collect();
        Self { coeff, exps }
    }

    pub fn constant(coeff: f64) -> Self {
        Self::new(coeff, &[])
    }

    /// `eta_k^a`.
    pub fn var(k: usize, a: f64) -> Self {
        Self::new(1.0, &[(k, a)])
    }

    /// Builds from a dense exponent vector.
    pub fn from_dense(coeff: f64, exponents: &[f64]) -> Self {
        let pairs: Vec<(usize, f64)> = exponents.iter().copied().enumerate().collect();
        Self::new(coeff, &pairs)
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    /// Nonzero exponents, sorted by variable index.
    pub fn exponents(&self) -> &[(usize, f64)] {
        &self.exps
    }

    pub fn exponent(&self, k: usize) -> f64 {
        self.exps
            .binary_search_by_key(&k, |&(v, _)| v)
            .map(|i| self.exps[i].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(k, a) in &self.exps {
            out[k] = a;
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.exps.is_empty()
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        self.exps.last().map(|&(k, _)| k)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.coeff *= c;
        assert!(out.coeff.is_finite() && out.coeff > 0.0);
        out
    }

    pub fn mul(&self, other: &Monomial) -> Self {
        let mut exps = self.exps.clone();
        exps.extend_from_slice(&other.exps);
        Self::new(self.coeff * other.coeff, &exps)
    }

    pub fn pow(&self, r: f64) -> Self {
        let exps: Vec<_> = self.exps.iter().map(|&(k, a)| (k, a * r)).collect();
        Self::new(self.coeff.powf(r), &exps)
    }

    pub fn inv(&self) -> Self {
        self.pow(-1.0)
    }

    /// Evaluates at `eta > 0` without validation.
    pub(crate) fn eval_unchecked(&self, eta: &[f64]) -> f64 {
        self.exps
            .iter()
            .fold(self.coeff, |acc, &(k, a)| acc * eta[k].powf(a))
    }

    pub fn evaluate(&self, eta: &[f64]) -> Result<f64> {
        check_point(eta, self.max_var())?;
        Ok(self.eval_unchecked(eta))
    }

    /// `log h(exp x) = log d + a . x`.
    pub fn log_eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .fold(self.coeff.ln(), |acc, &(k, a)| acc + a * x[k])
    }

    /// Absorbs fixed variable values into the coefficient and reindexes the
    /// remaining variables through `remap`.
    pub(crate) fn substitute(&self, fixed: &BTreeMap<usize, f64>, remap: &[Option<usize>]) -> Self {
        let mut coeff = self.coeff;
        let mut exps = Vec::with_capacity(self.exps.len());
        for &(k, a) in &self.exps {
            match fixed.get(&k) {
                Some(&v) => coeff *= v.powf(a),
                None => exps.push((remap[k].expect("free variable must be remapped"), a)),
            }
        }
        Self::new(coeff, &exps)
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.coeff)?;
        for &(k, a) in &self.exps {
            if a == 1.0 {
                write!(f, "*x{k}")?;
            } else {
                write!(f, "*x{k}^{a}")?;
            }
        }
        Ok(())
    }
}

/// A nonempty sum of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Posynomial {
    terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Domain("posynomial needs at least one term".into()));
        }
        Ok(Self { terms })
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.iter().filter_map(Monomial::max_var).max()
    }

    pub fn push(&mut self, m: Monomial) {
        self.terms.push(m);
    }

    pub fn add(&self, other: &Posynomial) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self { terms }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Self {
        Self {
            terms: self.terms.iter().map(|t| t.mul(m)).collect(),
        }
    }

    pub fn evaluate(&self, eta: &[f64]) -> Result<f64> {
        check_point(eta, self.max_var())?;
        Ok(self.terms.iter().map(|t| t.eval_unchecked(eta)).sum())
    }

    /// The convex log-scale function `F(x) = log f(exp x)`.
    pub fn log_transform(&self) -> LogPosynomial {
        LogPosynomial::new(self)
    }

    pub(crate) fn substitute(&self, fixed: &BTreeMap<usize, f64>, remap: &[Option<usize>]) -> Self {
        Self {
            terms: self.terms.iter().map(|t| t.substitute(fixed, remap)).collect(),
        }
    }

    /// Sum of the terms that do not depend on any variable.
    pub fn constant_part(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.is_constant())
            .map(Monomial::coeff)
            .sum()
    }
}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Self { terms: vec![m] }
    }
}

impl fmt::Display for Posynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

fn check_point(eta: &[f64], max_var: Option<usize>) -> Result<()> {
    if let Some(k) = max_var {
        if k >= eta.len() {
            return Err(Error::Dimension(format!(
                "point has {} entries but variable {k} is referenced",
                eta.len()
            )));
        }
    }
    if let Some((i, v)) = eta.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("eta[{i}] = {v} is not positive")));
    }
    Ok(())
}

/// `F(x) = log sum_m exp(b_m . x + log c_m)`, with derivatives.
#[derive(Debug, Clone)]
pub struct LogPosynomial {
    pub(crate) log_coeffs: Vec<f64>,
    pub(crate) exps: Vec<Vec<(usize, f64)>>,
    /// Union of the variables referenced by any term, sorted.
    pub(crate) support: Vec<usize>,
}

impl LogPosynomial {
    pub fn new(p: &Posynomial) -> Self {
        let mut support: Vec<usize> = p
            .terms
            .iter()
            .flat_map(|t| t.exps.iter().map(|&(k, _)| k))
            .collect();
        support.sort_unstable();
        support.dedup();
        Self {
            log_coeffs: p.terms.iter().map(|t| t.coeff.ln()).collect(),
            exps: p.terms.iter().map(|t| t.exps.clone()).collect(),
            support,
        }
    }

    fn exponents_at(&self, x: &[f64]) -> Vec<f64> {
        self.log_coeffs
            .iter()
            .zip(&self.exps)
            .map(|(&lc, e)| e.iter().fold(lc, |acc, &(k, a)| acc + a * x[k]))
            .collect()
    }

    /// Returns `F(x)` and the softmax weights of the terms.
    fn value_and_weights(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let z = self.exponents_at(x);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = z.iter().map(|&zi| (zi - zmax).exp()).collect();
        let s: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= s;
        }
        (zmax + s.ln(), w)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_weights(x).0
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (_, w) = self.value_and_weights(x);
        let mut g = vec![0.0; x.len()];
        for (wm, e) in w.iter().zip(&self.exps) {
            for &(k, a) in e {
                g[k] += wm * a;
            }
        }
        g
    }

    /// Dense Hessian `sum_m w_m b_m b_m^T - g g^T`.
    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = x.len();
        let local = self.local_derivatives(x);
        let mut h = vec![vec![0.0; n]; n];
        for (a, &ka) in self.support.iter().enumerate() {
            for (b, &kb) in self.support.iter().enumerate() {
                h[ka][kb] = local.hess[a * self.support.len() + b];
            }
        }
        h
    }

    /// Value, gradient and Hessian restricted to `support` coordinates.
    pub(crate) fn local_derivatives(&self, x: &[f64]) -> LocalDerivatives {
        let (value, w) = self.value_and_weights(x);
        let s = self.support.len();
        let pos = |k: usize| self.support.binary_search(&k).unwrap();
        let mut grad = vec![0.0; s];
        let mut hess = vec![0.0; s * s];
        let mut dense_b = vec![0.0; s];
        for (wm, e) in w.iter().zip(&self.exps) {
            if e.is_empty() {
                continue;
            }
            dense_b.iter_mut().for_each(|v| *v = 0.0);
            let idx: Vec<usize> = e.iter().map(|&(k, _)| pos(k)).collect();
            for (&(_, a), &i) in e.iter().zip(&idx) {
                dense_b[i] = a;
                grad[i] += wm * a;
            }
            for &i in &idx {
                for &j in &idx {
                    hess[i * s + j] += wm * dense_b[i] * dense_b[j];
                }
            }
        }
        for i in 0..s {
            for j in 0..s {
                hess[i * s + j] -= grad[i] * grad[j];
            }
        }
        LocalDerivatives { value, grad, hess }
    }
}

pub(crate) struct LocalDerivatives {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `support.len() x support.len()`.
    pub hess: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_evaluation() {
        let m = Monomial::new(3.0, &[(0, 1.0)]);
        assert_eq!(m.evaluate(&[2.0]).unwrap(), 6.0);
    }

    #[test]
    fn x_plus_inverse() {
        let p = Posynomial::new(vec![Monomial::var(0, 1.0), Monomial::var(0, -1.0)]).unwrap();
        assert_eq!(p.evaluate(&[1.0]).unwrap(), 2.0);
        let f = p.log_transform();
        assert!((f.value(&[0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!(f.gradient(&[0.0])[0].abs() < 1e-15);
    }

    #[test]
    fn nonpositive_point_is_rejected() {
        let m = Monomial::var(1, 2.0);
        assert!(matches!(m.evaluate(&[1.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(m.evaluate(&[1.0, -2.0]), Err(Error::Domain(_))));
        assert!(matches!(m.evaluate(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn empty_posynomial_is_rejected() {
        assert!(Posynomial::new(vec![]).is_err());
    }

    #[test]
    fn monomial_log_transform_is_affine() {
        let m = Monomial::new(2.5, &[(0, 1.5), (1, -0.5)]);
        let f = Posynomial::from(m.clone()).log_transform();
        let x = [0.3, -1.2];
        assert!((f.value(&x) - (2.5f64.ln() + 1.5 * 0.3 + 0.5 * 1.2)).abs() < 1e-14);
        assert!((f.value(&x) - m.log_eval(&x)).abs() < 1e-14);
        let h = f.hessian(&x);
        assert!(h.iter().flatten().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn repeated_variables_merge() {
        let m = Monomial::new(1.0, &[(2, 1.0), (0, 2.0), (2, -1.0)]);
        assert_eq!(m.exponents(), &[(0, 2.0)]);
        assert_eq!(m.exponent(2), 0.0);
        assert_eq!(m.to_dense(3), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn algebra() {
        let a = Monomial::new(2.0, &[(0, 1.0)]);
        let b = Monomial::new(3.0, &[(0, -1.0), (1, 2.0)]);
        let ab = a.mul(&b);
        assert_eq!(ab.coeff(), 6.0);
        assert_eq!(ab.exponents(), &[(1, 2.0)]);
        let r = b.pow(0.5);
        assert!((r.coeff() - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.exponents(), &[(0, -0.5), (1, 1.0)]);
    }
}
