//! Primal log-barrier interior-point method for geometric programs.
//!
//! Equalities are affine in the log domain and are eliminated by writing
//! `x = x_p + Z y` with `Z` a basis of their null space. Strict feasibility
//! is established by a phase-I problem `min s  s.t.  F_i(x) <= s`; its
//! optimum decides feasibility and gives the starting point of phase II.

use nalgebra::{DMatrix, DVector};

use super::posynomial::LogPosynomial;
use super::GpProblem;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Outer stop: `m / t` below this value (`m` constraints, `t` barrier weight).
    pub gap_tol: f64,
    /// Barrier weight multiplier between centering steps.
    pub mu: f64,
    pub t0: f64,
    /// Centering stop on half the squared Newton decrement.
    pub newton_tol: f64,
    /// Cap on the total number of Newton steps, both phases.
    pub max_newton: usize,
    pub armijo: f64,
    pub shrink: f64,
    /// Phase-I optimum above this value (log domain) means infeasible.
    pub infeasibility_margin: f64,
    /// Gap target for phase I when it has to be solved to optimality.
    pub phase1_gap_tol: f64,
    /// Starting point in the original (positive) variables.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            mu: 10.0,
            t0: 1.0,
            newton_tol: 1e-12,
            max_newton: 20_000,
            armijo: 1e-4,
            shrink: 0.5,
            infeasibility_margin: 1e-9,
            phase1_gap_tol: 1e-11,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct GpSolution {
    pub status: GpStatus,
    /// Final point in the original variables (`eta`, all positive).
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Phase-I optimum `s*` (log domain) when phase I was run.
    pub phase1_value: Option<f64>,
}

impl GpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == GpStatus::Optimal
    }
}

/// Every log variable is confined to `|x_k| < LOG_BOX` by two extra barrier
/// terms. This keeps the central path bounded when the feasible set has
/// recession directions; an optimum pressed against the box is reported as
/// unbounded.
const LOG_BOX: f64 = 100.0;
/// Distance to the box below which a solution counts as pressed against it.
const BOX_ACTIVE: f64 = 1.0;
/// Largest Newton step (infinity norm, log domain).
const MAX_STEP: f64 = 30.0;
/// Squared Newton decrement below which full steps are taken.
const LOCAL_DECREMENT: f64 = 1e-2;
const MAX_LOCAL_STEPS: usize = 30;
const MAX_CENTER_STEPS: usize = 200;
/// KKT residual an optimal solution must meet.
const KKT_TOL: f64 = 1e-7;
/// Barrier stages allowed past the gap target while the KKT check fails.
const EXTRA_STAGES: usize = 3;
/// Phase I stops early once every constraint holds with this slack.
const PHASE1_TARGET: f64 = 1e-3;

pub fn solve(problem: &GpProblem, options: &SolveOptions) -> Result<GpSolution> {
    let compiled = Compiled::new(problem)?;
    let mut ctx = Context {
        c: &compiled,
        opts: options,
        iterations: 0,
    };
    ctx.run()
}

struct Compiled {
    n: usize,
    objective: LogPosynomial,
    constraints: Vec<LogPosynomial>,
    /// Affine parametrization of the equality set; `None` when there are no
    /// equalities.
    param: Option<(DVector<f64>, DMatrix<f64>)>,
    trivially_infeasible: Option<f64>,
    /// Bounds on single variables recognized from one-term constraints.
    boxes: Vec<(f64, f64)>,
}

impl Compiled {
    fn new(p: &GpProblem) -> Result<Self> {
        let n = p.n_vars();
        let mut constraints = Vec::new();
        let mut trivially_infeasible: Option<f64> = None;
        let mut boxes = vec![(f64::NEG_INFINITY, f64::INFINITY); n];
        for c in p.ineq_constraints() {
            let f = c.log_transform();
            if f.support.is_empty() {
                // Constant constraint: either always true or never.
                let v = f.value(&vec![0.0; n]);
                if v > 0.0 {
                    trivially_infeasible = Some(trivially_infeasible.map_or(v, |w| w.max(v)));
                }
                continue;
            }
            if c.len() == 1 && f.exps[0].len() == 1 {
                let (k, a) = f.exps[0][0];
                let bound = -f.log_coeffs[0] / a;
                if a > 0.0 {
                    boxes[k].1 = boxes[k].1.min(bound);
                } else {
                    boxes[k].0 = boxes[k].0.max(bound);
                }
            }
            constraints.push(f);
        }

        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for h in p.eq_constraints() {
            if h.is_constant() {
                let v = h.coeff().ln().abs();
                if v > 1e-12 {
                    trivially_infeasible = Some(trivially_infeasible.map_or(v, |w| w.max(v)));
                }
                continue;
            }
            rows.push((h.to_dense(n), -h.coeff().ln()));
        }
        let param = if rows.is_empty() {
            None
        } else {
            let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].0[j]);
            let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
            match null_space_param(&a, &b) {
                Some(param) => Some(param),
                None => {
                    trivially_infeasible = Some(f64::INFINITY);
                    None
                }
            }
        };
        Ok(Self {
            n,
            objective: p.objective().log_transform(),
            constraints,
            param,
            trivially_infeasible,
            boxes,
        })
    }

    fn dim(&self) -> usize {
        self.param.as_ref().map_or(self.n, |(_, z)| z.ncols())
    }

    fn to_x(&self, y: &[f64]) -> Vec<f64> {
        match &self.param {
            None => y.to_vec(),
            Some((xp, z)) => (xp + z * DVector::from_column_slice(y)).as_slice().to_vec(),
        }
    }

    fn to_y(&self, x: &[f64]) -> Vec<f64> {
        match &self.param {
            None => x.to_vec(),
            Some((xp, z)) => (z.transpose() * (DVector::from_column_slice(x) - xp))
                .as_slice()
                .to_vec(),
        }
    }

    /// Number of logarithmic barrier terms: constraints plus both box sides.
    fn barrier_terms(&self) -> f64 {
        (self.constraints.len() + 2 * self.n) as f64
    }

    fn default_start(&self) -> Vec<f64> {
        self.boxes
            .iter()
            .map(|&(lo, hi)| match (lo.is_finite(), hi.is_finite()) {
                (true, true) if lo < hi => 0.5 * (lo + hi),
                (true, true) => lo,
                (true, false) if lo >= -1e-3 => lo + 1.0,
                (false, true) if hi <= 1e-3 => hi - 1.0,
                _ => 0.0,
            })
            .map(|v: f64| v.clamp(-LOG_BOX + BOX_ACTIVE, LOG_BOX - BOX_ACTIVE))
            .collect()
    }
}

/// Particular solution and null-space basis of `A x = b`, or `None` when the
/// system is inconsistent.
fn null_space_param(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = lmax * 1e-12 * n as f64;
    let atb = a.transpose() * b;
    let mut xp = DVector::zeros(n);
    let mut null_cols = Vec::new();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        if l > tol {
            xp += v * (v.dot(&atb) / l);
        } else {
            null_cols.push(v.into_owned());
        }
    }
    let resid = (a * &xp - b).amax();
    if resid > 1e-9 * (1.0 + b.amax()) {
        return None;
    }
    let z = if null_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    Some((xp, z))
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    /// Feasibility: minimize the extra variable `s`.
    One,
    /// Optimality with constraints `F_i <= tau`.
    Two { tau: f64 },
}

struct Context<'a> {
    c: &'a Compiled,
    opts: &'a SolveOptions,
    iterations: usize,
}

/// Barrier derivatives at a point of the reduced space.
struct Eval {
    /// `t * f(z) + barrier(z)`.
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

enum Centering {
    Done,
    /// Phase I reached its early-exit target.
    Target,
    Exhausted,
}

impl<'a> Context<'a> {
    fn run(&mut self) -> Result<GpSolution> {
        let c = self.c;
        if let Some(v) = c.trivially_infeasible {
            let x0 = c.to_x(&vec![0.0; c.dim()]);
            return Ok(self.finish(GpStatus::Infeasible, &x0, 0.0, Some(v)));
        }
        let x0 = match &self.opts.initial {
            Some(eta) => {
                if eta.len() != c.n || eta.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::Domain("initial point must be positive with one entry per variable".into()));
                }
                eta.iter()
                    .map(|v| v.ln().clamp(-LOG_BOX + BOX_ACTIVE, LOG_BOX - BOX_ACTIVE))
                    .collect()
            }
            None => c.default_start(),
        };
        let mut y = c.to_y(&x0);

        let mut phase1_value = None;
        let mut tau = 0.0;
        let worst = self.max_constraint(&c.to_x(&y));
        if !c.constraints.is_empty() && worst >= -1e-9 {
            let (s, y1, status) = self.phase_one(y)?;
            phase1_value = Some(s.value);
            match status {
                Some(st) => {
                    let x = c.to_x(&y1);
                    return Ok(self.finish(st, &x, 0.0, phase1_value));
                }
                None => {
                    if s.lower_bound > self.opts.infeasibility_margin {
                        let x = c.to_x(&y1);
                        return Ok(self.finish(GpStatus::Infeasible, &x, 0.0, phase1_value));
                    }
                    if s.value >= 0.0 {
                        // Feasible set has no strict interior at the solver's
                        // resolution; relax by the phase-I value.
                        tau = s.value + self.opts.phase1_gap_tol.max(1e-12);
                    }
                    y = y1;
                }
            }
        }
        self.phase_two(y, tau, phase1_value)
    }

    fn max_constraint(&self, x: &[f64]) -> f64 {
        self.c
            .constraints
            .iter()
            .map(|f| f.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn finish(&self, status: GpStatus, x: &[f64], kkt: f64, phase1_value: Option<f64>) -> GpSolution {
        let eta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        GpSolution {
            status,
            objective_value: self.c.objective.value(x).exp(),
            x: eta,
            kkt_residual: kkt,
            iterations: self.iterations,
            phase1_value,
        }
    }

    fn phase_one(&mut self, y: Vec<f64>) -> Result<(PhaseOneValue, Vec<f64>, Option<GpStatus>)> {
        let c = self.c;
        let s0 = self.max_constraint(&c.to_x(&y)) + 1.0;
        let mut z = y;
        z.push(s0);
        let m = c.barrier_terms();
        let mut t = self.opts.t0;
        loop {
            match self.center(&mut z, t, Phase::One)? {
                Centering::Target => {
                    let s = *z.last().unwrap();
                    z.pop();
                    return Ok((PhaseOneValue { value: s, lower_bound: s - m / t }, z, None));
                }
                Centering::Exhausted => {
                    let s = *z.last().unwrap();
                    z.pop();
                    return Ok((
                        PhaseOneValue { value: s, lower_bound: s - m / t },
                        z,
                        Some(GpStatus::MaxIterations),
                    ));
                }
                Centering::Done => {}
            }
            let s = *z.last().unwrap();
            if s < -PHASE1_TARGET || (s < 0.0 && m / t < self.opts.phase1_gap_tol) {
                z.pop();
                return Ok((PhaseOneValue { value: s, lower_bound: s - m / t }, z, None));
            }
            if m / t < self.opts.phase1_gap_tol {
                z.pop();
                return Ok((PhaseOneValue { value: s, lower_bound: s - m / t }, z, None));
            }
            t *= self.opts.mu;
        }
    }

    fn phase_two(&mut self, mut y: Vec<f64>, tau: f64, phase1_value: Option<f64>) -> Result<GpSolution> {
        let c = self.c;
        let m = c.barrier_terms();
        let phase = Phase::Two { tau };
        let mut t = self.opts.t0;
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut extra = 0;
        loop {
            match self.center(&mut y, t, phase)? {
                Centering::Done | Centering::Target => {}
                Centering::Exhausted => {
                    let x = c.to_x(&y);
                    let kkt = self.kkt(&y, t, phase);
                    return Ok(self.finish(GpStatus::MaxIterations, &x, kkt, phase1_value));
                }
            }
            if m / t < self.opts.gap_tol {
                let x = c.to_x(&y);
                if x.iter().any(|v| v.abs() > LOG_BOX - BOX_ACTIVE) {
                    return Ok(self.finish(GpStatus::Unbounded, &x, f64::INFINITY, phase1_value));
                }
                let kkt = self.kkt(&y, t, phase);
                if best.as_ref().is_none_or(|(k, _)| kkt < *k) {
                    best = Some((kkt, x));
                }
                let (kkt, x) = best.as_ref().unwrap();
                if *kkt <= KKT_TOL || extra >= EXTRA_STAGES {
                    let status = if *kkt <= KKT_TOL { GpStatus::Optimal } else { GpStatus::MaxIterations };
                    return Ok(self.finish(status, x, *kkt, phase1_value));
                }
                extra += 1;
            }
            t *= self.opts.mu;
        }
    }

    /// KKT residual of the original problem at `y`: the largest of the
    /// stationarity, complementarity and primal-infeasibility violations for
    /// the better of two multiplier estimates. The barrier estimate
    /// `1 / (t slack)` loses accuracy at large `t`, so a least-squares fit over
    /// the near-active constraints is tried as well.
    fn kkt(&self, y: &[f64], t: f64, phase: Phase) -> f64 {
        let c = self.c;
        if phase == Phase::One {
            return f64::INFINITY;
        }
        let x = c.to_x(y);
        let reduce = |g: DVector<f64>| match &c.param {
            None => g,
            Some((_, z)) => z.transpose() * g,
        };
        let dense = |f: &LogPosynomial| DVector::from_vec(f.gradient(&x));
        let g0 = reduce(dense(&c.objective));
        let values: Vec<f64> = c.constraints.iter().map(|f| f.value(&x)).collect();
        let grads: Vec<DVector<f64>> = c.constraints.iter().map(|f| reduce(dense(f))).collect();
        let shift = match phase {
            Phase::Two { tau } => tau,
            Phase::One => 0.0,
        };

        let residual = |lambda: &[f64]| -> f64 {
            let mut r = g0.clone();
            let mut worst: f64 = 0.0;
            for ((l, g), &f) in lambda.iter().zip(&grads).zip(&values) {
                r.axpy(*l, g, 1.0);
                worst = worst.max(l * (-f).abs()).max(f).max(-l);
            }
            worst.max(r.amax())
        };

        let barrier: Vec<f64> = values.iter().map(|&f| 1.0 / (t * (shift - f))).collect();
        let mut best = residual(&barrier);

        let active: Vec<usize> = (0..values.len()).filter(|&i| barrier[i] > 1e-10).collect();
        if !active.is_empty() {
            // Stationarity rows stacked on complementarity rows `slack_i l_i`.
            let d = g0.len();
            let j = DMatrix::from_fn(d + active.len(), active.len(), |r, k| {
                if r < d {
                    grads[active[k]][r]
                } else if r - d == k {
                    shift - values[active[k]]
                } else {
                    0.0
                }
            });
            let rhs = DVector::from_fn(d + active.len(), |r, _| if r < d { -g0[r] } else { 0.0 });
            let l = nnls(&j, &rhs);
            let mut fit = vec![0.0; values.len()];
            for (k, &i) in active.iter().enumerate() {
                fit[i] = l[k];
            }
            best = best.min(residual(&fit));
        }
        if best.is_finite() {
            best
        } else {
            f64::INFINITY
        }
    }

    /// Damped Newton minimization of the barrier function at weight `t`.
    fn center(&mut self, z: &mut Vec<f64>, t: f64, phase: Phase) -> Result<Centering> {
        let mut fails = 0;
        let mut local_steps = 0;
        let mut steps = 0;
        loop {
            if self.iterations >= self.opts.max_newton {
                return Ok(Centering::Exhausted);
            }
            if steps >= MAX_CENTER_STEPS {
                // Crawling progress on a nearly flat barrier; the outer loop
                // raises `t` and the final KKT check decides optimality.
                return Ok(Centering::Done);
            }
            steps += 1;
            let e = match self.evaluate(z, t, phase, true) {
                Some(e) => e,
                None => return Err(Error::Numerical("iterate left the barrier domain".into())),
            };
            let step = newton_direction(&e.hess, &e.grad)?;
            let dec2 = -e.grad.dot(&step);
            if !dec2.is_finite() {
                return Err(Error::Numerical("non-finite Newton decrement".into()));
            }
            if dec2 / 2.0 <= self.opts.newton_tol {
                return Ok(Centering::Done);
            }
            self.iterations += 1;

            let mut step = step;
            let smax = step.amax();
            if smax > MAX_STEP {
                step *= MAX_STEP / smax;
            }
            let slope = e.grad.dot(&step);
            let mut alpha = 1.0;
            let mut accepted = None;
            if dec2 < LOCAL_DECREMENT && smax <= MAX_STEP {
                // Inside the quadratic-convergence region the full step is
                // taken even when the value change is below rounding.
                local_steps += 1;
                if local_steps > MAX_LOCAL_STEPS {
                    return Ok(Centering::Done);
                }
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                if self.value(&trial, t, phase).is_some() {
                    accepted = Some(trial);
                }
            }
            while accepted.is_none() && alpha > 1e-16 {
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + alpha * b).collect();
                if let Some(v) = self.value(&trial, t, phase) {
                    if v < e.value && v <= e.value + self.opts.armijo * alpha * slope {
                        accepted = Some(trial);
                        break;
                    }
                }
                alpha *= self.opts.shrink;
            }
            if accepted.is_none() {
                // Value changes below rounding: fall back to the damped
                // Newton step, which decreases self-concordant barriers.
                let a = 1.0 / (1.0 + dec2.sqrt());
                let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(p, q)| p + a * q).collect();
                if dec2 > self.opts.newton_tol && self.value(&trial, t, phase).is_some() {
                    let e2 = self.evaluate(&trial, t, phase, false);
                    if e2.is_some_and(|e2| e2.grad.dot(&step) <= 0.0 || dec2 < LOCAL_DECREMENT) {
                        accepted = Some(trial);
                    }
                }
            }
            match accepted {
                Some(trial) => {
                    *z = trial;
                    fails = 0;
                }
                None => {
                    // Rounding limits further progress on this centering step.
                    fails += 1;
                    if fails > 1 || dec2 < 1e-6 * e.value.abs().max(1.0) {
                        return Ok(Centering::Done);
                    }
                }
            }

            if phase == Phase::One && *z.last().unwrap() < -PHASE1_TARGET {
                return Ok(Centering::Target);
            }
        }
    }

    /// Barrier value only; `None` outside the domain.
    fn value(&self, z: &[f64], t: f64, phase: Phase) -> Option<f64> {
        let c = self.c;
        let x = c.to_x(&z[..c.dim()]);
        let (obj, shift) = match phase {
            Phase::One => (z[c.dim()], z[c.dim()]),
            Phase::Two { tau } => (c.objective.value(&x), tau),
        };
        let mut v = t * obj + box_barrier(&x)?;
        for f in &c.constraints {
            let slack = shift - f.value(&x);
            if !(slack > 0.0) {
                return None;
            }
            v -= slack.ln();
        }
        v.is_finite().then_some(v)
    }

    fn evaluate(&self, z: &[f64], t: f64, phase: Phase, _hess: bool) -> Option<Eval> {
        let c = self.c;
        let n = c.n;
        let d = c.dim();
        let x = c.to_x(&z[..d]);
        let p1 = phase == Phase::One;
        // Assemble in x-space, with one extra coordinate for `s` in phase I.
        let nx = if p1 { n + 1 } else { n };
        let mut g = DVector::zeros(nx);
        let mut h = DMatrix::zeros(nx, nx);

        let (obj_value, shift) = match phase {
            Phase::One => {
                g[n] = t;
                (z[d], z[d])
            }
            Phase::Two { tau } => {
                let ld = c.objective.local_derivatives(&x);
                let s = c.objective.support.len();
                for (a, &ka) in c.objective.support.iter().enumerate() {
                    g[ka] += t * ld.grad[a];
                    for (b, &kb) in c.objective.support.iter().enumerate() {
                        h[(ka, kb)] += t * ld.hess[a * s + b];
                    }
                }
                (ld.value, tau)
            }
        };
        let mut value = t * obj_value + box_barrier(&x)?;
        for (k, &xk) in x.iter().enumerate() {
            let (a, b) = (1.0 / (LOG_BOX - xk), 1.0 / (LOG_BOX + xk));
            g[k] += a - b;
            h[(k, k)] += a * a + b * b;
        }

        let mut idx: Vec<usize> = Vec::new();
        let mut gv: Vec<f64> = Vec::new();
        for f in &c.constraints {
            let ld = f.local_derivatives(&x);
            let slack = shift - ld.value;
            if !(slack > 0.0) {
                return None;
            }
            value -= slack.ln();
            let s = f.support.len();
            let inv = 1.0 / slack;
            // grad of -log(slack) is grad F / slack (minus grad shift / slack).
            idx.clear();
            gv.clear();
            idx.extend_from_slice(&f.support);
            gv.extend_from_slice(&ld.grad);
            if p1 {
                idx.push(n);
                gv.push(-1.0);
            }
            for (&k, &gk) in idx.iter().zip(&gv) {
                g[k] += gk * inv;
            }
            for a in 0..s {
                for b in 0..s {
                    h[(f.support[a], f.support[b])] += ld.hess[a * s + b] * inv;
                }
            }
            let inv2 = inv * inv;
            for (&ka, &ga) in idx.iter().zip(&gv) {
                for (&kb, &gb) in idx.iter().zip(&gv) {
                    h[(ka, kb)] += ga * gb * inv2;
                }
            }
        }
        if !value.is_finite() {
            return None;
        }

        match &c.param {
            None => Some(Eval {
                value,
                grad: g,
                hess: h,
            }),
            Some((_, zb)) => {
                // Chain rule through x = x_p + Z y (and s unchanged).
                let dz = if p1 { d + 1 } else { d };
                let mut tmat = DMatrix::zeros(nx, dz);
                tmat.view_mut((0, 0), (n, d)).copy_from(zb);
                if p1 {
                    tmat[(n, d)] = 1.0;
                }
                let tt = tmat.transpose();
                Some(Eval {
                    value,
                    grad: &tt * g,
                    hess: &tt * h * &tmat,
                })
            }
        }
    }
}

/// `-sum log(B - x_k) + log(B + x_k)`, or `None` outside the box.
fn box_barrier(x: &[f64]) -> Option<f64> {
    let mut v = 0.0;
    for &xk in x {
        let (a, b) = (LOG_BOX - xk, LOG_BOX + xk);
        if !(a > 0.0 && b > 0.0) {
            return None;
        }
        v -= a.ln() + b.ln();
    }
    Some(v)
}

/// Nonnegative least squares `min ||A x - b||, x >= 0` (Lawson–Hanson).
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-14 * a.amax().max(1.0) * b.amax().max(1.0);
    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
        let zs = sub.svd(true, true).solve(b, 1e-13).unwrap_or_else(|_| DVector::zeros(idx.len()));
        let mut z = DVector::zeros(n);
        for (c, &k) in idx.iter().enumerate() {
            z[k] = zs[c];
        }
        z
    };
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let Some(k) = (0..n)
            .filter(|&k| !passive[k] && w[k] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            break;
        };
        passive[k] = true;
        loop {
            let z = solve_passive(&passive);
            if (0..n).all(|k| !passive[k] || z[k] > 0.0) {
                x = z;
                break;
            }
            let mut alpha: f64 = 1.0;
            for k in 0..n {
                if passive[k] && z[k] <= 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[k]));
                }
            }
            for k in 0..n {
                x[k] += alpha * (z[k] - x[k]);
                if passive[k] && x[k] <= 1e-15 * (1.0 + x.amax()) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    x
}

struct PhaseOneValue {
    value: f64,
    lower_bound: f64,
}

/// Solves `H d = -g` with a Jacobi-scaled Cholesky factorization, adding a
/// small ridge when `H` is singular (directions the barrier does not see).
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let n = g.len();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = h[(i, i)];
            if d > 1e-300 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * scale[i] * scale[j]);
    // Symmetrize against rounding.
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (hs[(i, j)] + hs[(j, i)]);
            hs[(i, j)] = v;
            hs[(j, i)] = v;
        }
    }
    let gs = DVector::from_fn(n, |i, _| -g[i] * scale[i]);
    let mut ridge = 0.0;
    while ridge < 1e6 {
        let mut m = hs.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let mut ds = ch.solve(&gs);
            // Iterative refinement against the unregularized system recovers
            // accuracy lost to ill-conditioning near the boundary; a
            // correction is kept only while it shrinks the residual, since on
            // a numerically singular system it can diverge.
            let mut res = (&gs - &hs * &ds).norm();
            for _ in 0..3 {
                let next = &ds + ch.solve(&(&gs - &hs * &ds));
                let r = (&gs - &hs * &next).norm();
                if !(r < res) {
                    break;
                }
                ds = next;
                res = r;
            }
            // `gs` is the negated scaled gradient, so a descent direction has
            // a positive inner product with it.
            if ds.iter().all(|v| v.is_finite()) && gs.dot(&ds) >= 0.0 {
                return Ok(DVector::from_fn(n, |i, _| ds[i] * scale[i]));
            }
        }
        ridge = if ridge == 0.0 { 1e-14 } else { ridge * 100.0 };
    }
    Err(Error::Numerical("Newton system could not be factorized".into()))
}
