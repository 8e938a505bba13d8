//! Geometric programs in standard form and their log-domain solution.
//!
//! A problem minimizes a posynomial subject to posynomial constraints
//! `f_i(eta) <= 1` and monomial constraints `h_j(eta) = 1` over `eta > 0`.
//! Under `x = log eta` the objective and inequalities become log-sum-exp
//! functions and the equalities become affine, which makes the problem convex.

mod posynomial;
mod solver;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use posynomial::{LogPosynomial, Monomial, Posynomial};
pub use solver::{solve, GpSolution, GpStatus, SolveOptions};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GpProblem {
    var_names: Vec<String>,
    objective: Posynomial,
    ineq: Vec<Posynomial>,
    eq: Vec<Monomial>,
}

impl GpProblem {
    pub fn new(
        var_names: Vec<String>,
        objective: Posynomial,
        ineq: Vec<Posynomial>,
        eq: Vec<Monomial>,
    ) -> Result<Self> {
        let n = var_names.len();
        if n == 0 {
            return Err(Error::Domain("a geometric program needs at least one variable".into()));
        }
        let check = |what: &str, max: Option<usize>| match max {
            Some(k) if k >= n => Err(Error::Dimension(format!(
                "{what} references variable {k} but the problem has {n} variables"
            ))),
            _ => Ok(()),
        };
        check("objective", objective.max_var())?;
        for (i, c) in ineq.iter().enumerate() {
            check(&format!("inequality {i}"), c.max_var())?;
        }
        for (j, c) in eq.iter().enumerate() {
            check(&format!("equality {j}"), c.max_var())?;
        }
        Ok(Self {
            var_names,
            objective,
            ineq,
            eq,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.var_names.iter().position(|v| v == name)
    }

    pub fn objective(&self) -> &Posynomial {
        &self.objective
    }

    pub fn ineq_constraints(&self) -> &[Posynomial] {
        &self.ineq
    }

    pub fn eq_constraints(&self) -> &[Monomial] {
        &self.eq
    }

    /// Largest value of `f_i(eta)` over the inequality constraints and of
    /// `|h_j(eta) - 1|` over the equalities.
    pub fn max_violation(&self, eta: &[f64]) -> Result<(f64, f64)> {
        let mut ineq = f64::NEG_INFINITY;
        for c in &self.ineq {
            ineq = ineq.max(c.evaluate(eta)?);
        }
        let mut eq: f64 = 0.0;
        for c in &self.eq {
            eq = eq.max((c.evaluate(eta)? - 1.0).abs());
        }
        Ok((ineq, eq))
    }

    /// Freezes the variables in `fixed` at the given positive values,
    /// absorbing them into the coefficients. The remaining variables keep
    /// their relative order.
    pub fn substitute(&self, fixed: &BTreeMap<usize, f64>) -> Result<GpProblem> {
        let n = self.n_vars();
        for (&k, &v) in fixed {
            if k >= n {
                return Err(Error::Dimension(format!("cannot fix variable {k} of {n}")));
            }
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("fixed value for variable {k} must be positive, got {v}")));
            }
        }
        if fixed.len() == n {
            return Err(Error::Domain("cannot fix every variable".into()));
        }
        let mut remap = vec![None; n];
        let mut names = Vec::with_capacity(n - fixed.len());
        for k in 0..n {
            if !fixed.contains_key(&k) {
                remap[k] = Some(names.len());
                names.push(self.var_names[k].clone());
            }
        }
        GpProblem::new(
            names,
            self.objective.substitute(fixed, &remap),
            self.ineq.iter().map(|c| c.substitute(fixed, &remap)).collect(),
            self.eq.iter().map(|c| c.substitute(fixed, &remap)).collect(),
        )
    }

    /// Plain-text dump: one line per term with the coefficient followed by
    /// the dense exponent row. Intended for regression fixtures.
    pub fn dump(&self) -> String {
        let n = self.n_vars();
        let mut out = String::new();
        let _ = writeln!(out, "gp n_vars={n} n_ineq={} n_eq={}", self.ineq.len(), self.eq.len());
        let _ = writeln!(out, "vars {}", self.var_names.join(" "));
        let row = |out: &mut String, m: &Monomial| {
            let _ = write!(out, "  {:.12e}", m.coeff());
            for a in m.to_dense(n) {
                let _ = write!(out, " {a}");
            }
            out.push('\n');
        };
        let _ = writeln!(out, "objective terms={}", self.objective.len());
        for t in self.objective.terms() {
            row(&mut out, t);
        }
        for (i, c) in self.ineq.iter().enumerate() {
            let _ = writeln!(out, "ineq {i} terms={}", c.len());
            for t in c.terms() {
                row(&mut out, t);
            }
        }
        for (j, c) in self.eq.iter().enumerate() {
            let _ = writeln!(out, "eq {j}");
            row(&mut out, c);
        }
        out
    }
}
