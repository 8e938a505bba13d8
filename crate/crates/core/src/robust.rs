//! Robust-stability certificates for the perturbed system matrix
//! `M + K Gamma H^-1 E Delta F` and the geometric program that optimizes
//! gains subject to them.
//!
//! Two certificate families are used, each written row by row as
//! posynomial `<= 1` constraints:
//!
//! * **C1** (1-norm): a positive `rho` with
//!   `(M + s1 I)^T rho + sqrt(e1) F^T 1 < 0` and `sqrt(e1) E^T H^-1 Gamma K rho < 1`
//!   certifies `lambda_max(M + B Delta F) < -s1` for every nonnegative
//!   `Delta` with `||Delta||_1 <= e1`, structured or not.
//! * **C2** (2-norm): positive `u, v, xi, zeta` and a block scaling `Pi`
//!   bound the scaled static gain in both the 1- and infinity-norms, which
//!   certifies every structured `Delta` with `||Delta||_2 <= e2` that commutes
//!   with `Pi`.
//!
//! Strict inequalities are imposed as `<= 1`; the margins come from
//! `s1`, `s2` only.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::{system_matrix, FmParams, GainBounds, GainProfile};
use crate::game::CostModel;
use crate::gp::{GpProblem, GpSolution, Monomial, Posynomial};
use crate::spectral::spectral_abscissa;
use crate::topology::matrix_norms;

/// Input/output coupling of the uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// A fixed nonnegative matrix.
    Matrix(DMatrix<f64>),
    /// `diag(g)`, i.e. the interference gains themselves.
    GainDiagonal,
}

impl Coupling {
    pub fn identity(n: usize) -> Self {
        Coupling::Matrix(DMatrix::identity(n, n))
    }

    /// Entry `(i, j)` as a monomial in the layout's variables, or `None`
    /// when it is zero.
    fn entry(&self, i: usize, j: usize, layout: &RobustLayout) -> Option<Monomial> {
        match self {
            Coupling::Matrix(m) => (m[(i, j)] > 0.0).then(|| Monomial::constant(m[(i, j)])),
            Coupling::GainDiagonal => (i == j).then(|| Monomial::var(layout.g(i), 1.0)),
        }
    }

    /// Numeric matrix for a concrete gain profile.
    pub fn resolve(&self, gains: &GainProfile) -> DMatrix<f64> {
        match self {
            Coupling::Matrix(m) => m.clone(),
            Coupling::GainDiagonal => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&gains.g)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyStructure {
    /// Sizes of the full blocks, placed first along the diagonal.
    pub full_blocks: Vec<usize>,
    /// Number of 1x1 scalar blocks following the full blocks.
    pub scalar_blocks: usize,
    pub e: Coupling,
    pub f: Coupling,
    /// 1-norm bound; zero drops the attack terms of C1.
    pub eps1: f64,
    /// 2-norm bound; zero drops the attack terms of C2.
    pub eps2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl UncertaintyStructure {
    /// Fully diagonal structure (`n` scalar blocks).
    pub fn diagonal(n: usize, e: Coupling, f: Coupling, eps1: f64, eps2: f64, sigma1: f64, sigma2: f64) -> Self {
        Self {
            full_blocks: vec![],
            scalar_blocks: n,
            e,
            f,
            eps1,
            eps2,
            sigma1,
            sigma2,
        }
    }

    pub fn n(&self) -> usize {
        self.full_blocks.iter().sum::<usize>() + self.scalar_blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.full_blocks.len() + self.scalar_blocks
    }

    /// Block index of every row.
    pub fn block_map(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n());
        for (b, &m) in self.full_blocks.iter().enumerate() {
            out.extend(std::iter::repeat_n(b, m));
        }
        let first = self.full_blocks.len();
        out.extend(first..first + self.scalar_blocks);
        out
    }

    /// Row ranges of the blocks.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.n_blocks());
        let mut start = 0;
        for &m in &self.full_blocks {
            out.push(start..start + m);
            start += m;
        }
        for _ in 0..self.scalar_blocks {
            out.push(start..start + 1);
            start += 1;
        }
        out
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::Dimension(format!(
                "uncertainty blocks cover {} rows, system has {n}",
                self.n()
            )));
        }
        if self.full_blocks.contains(&0) {
            return Err(Error::Domain("full blocks must be nonempty".into()));
        }
        for (name, c) in [("E", &self.e), ("F", &self.f)] {
            if let Coupling::Matrix(m) = c {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::Dimension(format!("{name} must be {n}x{n}")));
                }
                if m.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(Error::Domain(format!("{name} must be nonnegative")));
                }
            }
        }
        for (name, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
            }
        }
        for (name, v) in [("sigma1", self.sigma1), ("sigma2", self.sigma2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Variable layout of the robust program:
/// `[g (N), h (N), rho (N), pi (blocks), u (N), v (N), xi (N), zeta (N), q2?]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RobustLayout {
    pub n: usize,
    pub n_blocks: usize,
    /// Whether the squared 2-norm bound is itself a variable (last index).
    pub q2_variable: bool,
}

impl RobustLayout {
    pub fn new(n: usize, n_blocks: usize, q2_variable: bool) -> Self {
        Self { n, n_blocks, q2_variable }
    }
    pub fn g(&self, i: usize) -> usize {
        i
    }
    pub fn h(&self, i: usize) -> usize {
        self.n + i
    }
    pub fn rho(&self, i: usize) -> usize {
        2 * self.n + i
    }
    pub fn pi(&self, b: usize) -> usize {
        3 * self.n + b
    }
    pub fn u(&self, i: usize) -> usize {
        3 * self.n + self.n_blocks + i
    }
    pub fn v(&self, i: usize) -> usize {
        4 * self.n + self.n_blocks + i
    }
    pub fn xi(&self, i: usize) -> usize {
        5 * self.n + self.n_blocks + i
    }
    pub fn zeta(&self, i: usize) -> usize {
        6 * self.n + self.n_blocks + i
    }
    pub fn q2(&self) -> Option<usize> {
        self.q2_variable.then_some(7 * self.n + self.n_blocks)
    }
    pub fn n_vars(&self) -> usize {
        7 * self.n + self.n_blocks + usize::from(self.q2_variable)
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_vars());
        for prefix in ["g", "h", "rho"] {
            out.extend((1..=self.n).map(|i| format!("{prefix}{i}")));
        }
        out.extend((1..=self.n_blocks).map(|b| format!("pi{b}")));
        for prefix in ["u", "v", "xi", "zeta"] {
            out.extend((1..=self.n).map(|i| format!("{prefix}{i}")));
        }
        if self.q2_variable {
            out.push("q2".into());
        }
        out
    }

    /// Point with the given gains and all certificate variables at 1.
    pub fn point(&self, gains: &GainProfile) -> Vec<f64> {
        let mut x = vec![1.0; self.n_vars()];
        for i in 0..self.n {
            x[self.g(i)] = gains.g[i];
            x[self.h(i)] = gains.h[i];
        }
        x
    }
}

/// Positive certificate vectors read back from a solved program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub rho: Vec<f64>,
    /// One scaling per block.
    pub pi_scaling: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl Certificate {
    pub fn from_point(layout: &RobustLayout, x: &[f64]) -> Self {
        let read = |f: &dyn Fn(usize) -> usize, len: usize| (0..len).map(|i| x[f(i)]).collect();
        Self {
            rho: read(&|i| layout.rho(i), layout.n),
            pi_scaling: read(&|b| layout.pi(b), layout.n_blocks),
            u: read(&|i| layout.u(i), layout.n),
            v: read(&|i| layout.v(i), layout.n),
            xi: read(&|i| layout.xi(i), layout.n),
            zeta: read(&|i| layout.zeta(i), layout.n),
        }
    }
}

/// Reads gains from a layout point; `bounds` are attached unchecked up to
/// solver tolerance.
pub fn gains_from_point(layout: &RobustLayout, x: &[f64], bounds: GainBounds) -> Result<GainProfile> {
    let clamp = |v: f64, lo: f64, hi: f64| v.clamp(lo, hi);
    GainProfile::new(
        (0..layout.n).map(|i| clamp(x[layout.h(i)], bounds.h_lo, bounds.h_hi)).collect(),
        (0..layout.n).map(|i| clamp(x[layout.g(i)], bounds.g_lo, bounds.g_hi)).collect(),
        bounds,
    )
}

/// Row builder shared by both certificate families.
pub(crate) struct Rows<'a> {
    pub params: &'a FmParams,
    pub adjacency: &'a DMatrix<f64>,
    pub layout: &'a RobustLayout,
    pub e: &'a Coupling,
    pub f: &'a Coupling,
    pub block: Vec<usize>,
}

impl Rows<'_> {
    /// `(K Gamma H^-1 Ã G)_ij = k_i gamma_i a_ij g_j / h_i`.
    fn t(&self, i: usize, j: usize) -> Option<Monomial> {
        let c = self.params.k[i] * self.params.gamma_bar[i] * self.adjacency[(i, j)];
        (i != j && c > 0.0).then(|| Monomial::new(c, &[(self.layout.g(j), 1.0), (self.layout.h(i), -1.0)]))
    }

    /// `(H^-1 Gamma K)_jj` times the variable `w_j`.
    fn hgk(&self, j: usize, w: usize) -> Option<Monomial> {
        let c = self.params.gamma_bar[j] * self.params.k[j];
        (c > 0.0).then(|| Monomial::new(c, &[(w, 1.0), (self.layout.h(j), -1.0)]))
    }

    fn pi_pow(&self, i: usize, a: f64) -> Monomial {
        Monomial::var(self.layout.pi(self.block[i]), a)
    }

    fn finish(terms: Vec<Monomial>) -> Option<Posynomial> {
        Posynomial::new(terms).ok()
    }

    pub fn c1(&self, sigma: f64, scale: Option<&Monomial>) -> Vec<Posynomial> {
        let n = self.layout.n;
        let l = self.layout;
        let mut out = Vec::with_capacity(2 * n);
        for i in 0..n {
            let denom = Monomial::new(1.0 / self.params.k[i], &[(l.rho(i), -1.0)]);
            let mut terms = Vec::new();
            for j in 0..n {
                if let Some(t) = self.t(j, i) {
                    terms.push(t.mul(&Monomial::var(l.rho(j), 1.0)).mul(&denom));
                }
            }
            terms.push(Monomial::constant(sigma / self.params.k[i]));
            if let Some(s) = scale {
                for j in 0..n {
                    if let Some(fji) = self.f.entry(j, i, l) {
                        terms.push(s.mul(&fji).mul(&denom));
                    }
                }
            }
            out.extend(Self::finish(terms));
        }
        if let Some(s) = scale {
            for i in 0..n {
                let mut terms = Vec::new();
                for j in 0..n {
                    if let (Some(eji), Some(w)) = (self.e.entry(j, i, l), self.hgk(j, l.rho(j))) {
                        terms.push(s.mul(&eji).mul(&w));
                    }
                }
                out.extend(Self::finish(terms));
            }
        }
        out
    }

    pub fn c2(&self, sigma: f64, scale: Option<&Monomial>) -> Vec<Posynomial> {
        let n = self.layout.n;
        let l = self.layout;
        let mut out = Vec::with_capacity(4 * n);
        // Family 1: sqrt(e2) D_v^-1 Pi^1/2 F xi <= 1.
        if let Some(s) = scale {
            for i in 0..n {
                let pre = s.mul(&self.pi_pow(i, 0.5)).mul(&Monomial::var(l.v(i), -1.0));
                let mut terms = Vec::new();
                for j in 0..n {
                    if let Some(fij) = self.f.entry(i, j, l) {
                        terms.push(pre.mul(&fij).mul(&Monomial::var(l.xi(j), 1.0)));
                    }
                }
                out.extend(Self::finish(terms));
            }
        }
        // Family 2: D_xi^-1 K^-1 (K Gamma H^-1 G xi + s2 xi
        //           + sqrt(e2) K Gamma H^-1 E Pi^-1/2 u) <= 1.
        for i in 0..n {
            let denom = Monomial::new(1.0 / self.params.k[i], &[(l.xi(i), -1.0)]);
            let mut terms = Vec::new();
            for j in 0..n {
                if let Some(t) = self.t(i, j) {
                    terms.push(t.mul(&Monomial::var(l.xi(j), 1.0)).mul(&denom));
                }
            }
            terms.push(Monomial::constant(sigma / self.params.k[i]));
            if let Some(s) = scale {
                let c = self.params.k[i] * self.params.gamma_bar[i];
                if c > 0.0 {
                    let row = Monomial::new(c, &[(l.h(i), -1.0)]).mul(s).mul(&denom);
                    for j in 0..n {
                        if let Some(eij) = self.e.entry(i, j, l) {
                            terms.push(row.mul(&eij).mul(&self.pi_pow(j, -0.5)).mul(&Monomial::var(l.u(j), 1.0)));
                        }
                    }
                }
            }
            out.extend(Self::finish(terms));
        }
        // Family 3: sqrt(e2) D_u^-1 Pi^-1/2 E^T H^-1 Gamma K zeta <= 1.
        if let Some(s) = scale {
            for i in 0..n {
                let pre = s.mul(&self.pi_pow(i, -0.5)).mul(&Monomial::var(l.u(i), -1.0));
                let mut terms = Vec::new();
                for j in 0..n {
                    if let (Some(eji), Some(w)) = (self.e.entry(j, i, l), self.hgk(j, l.zeta(j))) {
                        terms.push(pre.mul(&eji).mul(&w));
                    }
                }
                out.extend(Self::finish(terms));
            }
        }
        // Family 4: D_zeta^-1 K^-1 ((K Gamma H^-1 G)^T zeta + s2 zeta
        //           + sqrt(e2) F^T Pi^1/2 v) <= 1.
        for i in 0..n {
            let denom = Monomial::new(1.0 / self.params.k[i], &[(l.zeta(i), -1.0)]);
            let mut terms = Vec::new();
            for j in 0..n {
                if let Some(t) = self.t(j, i) {
                    terms.push(t.mul(&Monomial::var(l.zeta(j), 1.0)).mul(&denom));
                }
            }
            terms.push(Monomial::constant(sigma / self.params.k[i]));
            if let Some(s) = scale {
                for j in 0..n {
                    if let Some(fji) = self.f.entry(j, i, l) {
                        terms.push(s.mul(&fji).mul(&self.pi_pow(j, 0.5)).mul(&Monomial::var(l.v(j), 1.0)).mul(&denom));
                    }
                }
            }
            out.extend(Self::finish(terms));
        }
        out
    }
}

fn scale_of(eps: f64) -> Option<Monomial> {
    (eps > 0.0).then(|| Monomial::constant(eps.sqrt()))
}

fn rows<'a>(
    params: &'a FmParams,
    adjacency: &'a DMatrix<f64>,
    unc: &'a UncertaintyStructure,
    layout: &'a RobustLayout,
) -> Result<Rows<'a>> {
    let n = params.n();
    if adjacency.nrows() != n || adjacency.ncols() != n || layout.n != n {
        return Err(Error::Dimension(format!("system data disagree on the node count {n}")));
    }
    if layout.n_blocks != unc.n_blocks() {
        return Err(Error::Dimension("layout and uncertainty disagree on the block count".into()));
    }
    unc.validate(n)?;
    Ok(Rows {
        params,
        adjacency,
        layout,
        e: &unc.e,
        f: &unc.f,
        block: unc.block_map(),
    })
}

/// 1-norm certificate rows over `(g, h, rho)`: first the `N` rows of
/// `D_rho^-1 K^-1 ((K Gamma H^-1 G + s1 I)^T rho + sqrt(e1) F^T 1) <= 1`, then
/// the `N` rows of `sqrt(e1) E^T H^-1 Gamma K rho <= 1`. Rows without any
/// term are trivially satisfied and omitted.
pub fn build_c1(
    params: &FmParams,
    adjacency: &DMatrix<f64>,
    unc: &UncertaintyStructure,
    layout: &RobustLayout,
) -> Result<Vec<Posynomial>> {
    Ok(rows(params, adjacency, unc, layout)?.c1(unc.sigma1, scale_of(unc.eps1).as_ref()))
}

/// 2-norm certificate rows over `(g, h, pi, u, v, xi, zeta)`, four families
/// of `N` rows in order.
pub fn build_c2(
    params: &FmParams,
    adjacency: &DMatrix<f64>,
    unc: &UncertaintyStructure,
    layout: &RobustLayout,
) -> Result<Vec<Posynomial>> {
    Ok(rows(params, adjacency, unc, layout)?.c2(unc.sigma2, scale_of(unc.eps2).as_ref()))
}

/// The gain box as monomials: `g_i / g_hi`, `g_lo / g_i`, `h_i / h_hi`,
/// `h_lo / h_i`, each `<= 1`, for the listed nodes.
pub fn box_constraints(
    layout: &RobustLayout,
    bounds: &GainBounds,
    nodes: impl IntoIterator<Item = usize>,
) -> Vec<Posynomial> {
    let mut out = Vec::new();
    for i in nodes {
        out.push(Monomial::new(1.0 / bounds.g_hi, &[(layout.g(i), 1.0)]).into());
        out.push(Monomial::new(bounds.g_lo, &[(layout.g(i), -1.0)]).into());
        out.push(Monomial::new(1.0 / bounds.h_hi, &[(layout.h(i), 1.0)]).into());
        out.push(Monomial::new(bounds.h_lo, &[(layout.h(i), -1.0)]).into());
    }
    out
}

#[derive(Debug, Clone)]
pub struct RobustProgram {
    pub problem: GpProblem,
    pub layout: RobustLayout,
}

/// Robust stabilization program: minimize the shifted cost subject to both
/// certificate families, the gain box and any extra posynomial constraints
/// (given over the same layout).
pub fn assemble_p2(
    params: &FmParams,
    adjacency: &DMatrix<f64>,
    unc: &UncertaintyStructure,
    cost: &CostModel,
    extra: &[Posynomial],
) -> Result<RobustProgram> {
    cost.validate()?;
    let n = params.n();
    let layout = RobustLayout::new(n, unc.n_blocks(), false);
    let mut ineq = build_c1(params, adjacency, unc, &layout)?;
    ineq.extend(build_c2(params, adjacency, unc, &layout)?);
    ineq.extend(box_constraints(&layout, &cost.bounds, 0..n));
    ineq.extend(extra.iter().cloned());
    let problem = GpProblem::new(layout.names(), cost.objective(&layout, 0..n), ineq, vec![])?;
    Ok(RobustProgram { problem, layout })
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    pub solution: GpSolution,
    pub gains: Option<GainProfile>,
    pub certificate: Option<Certificate>,
}

impl RobustProgram {
    pub fn solve(&self, options: &crate::gp::SolveOptions, bounds: GainBounds) -> Result<RobustSolution> {
        let solution = crate::gp::solve(&self.problem, options)?;
        let (gains, certificate) = if solution.is_optimal() {
            (
                Some(gains_from_point(&self.layout, &solution.x, bounds)?),
                Some(Certificate::from_point(&self.layout, &solution.x)),
            )
        } else {
            (None, None)
        };
        Ok(RobustSolution {
            solution,
            gains,
            certificate,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    One,
    Two,
}

fn norm_of(m: &DMatrix<f64>, kind: NormKind) -> f64 {
    let norms = matrix_norms(m);
    match kind {
        NormKind::One => norms.one_norm,
        NormKind::Two => norms.two_norm,
    }
}

/// Random direction with the block structure; never all zero.
fn structured_direction(unc: &UncertaintyStructure, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = unc.n();
    let ranges = unc.block_ranges();
    let mut d = DMatrix::zeros(n, n);
    match rng.random_range(0..4u8) {
        // Dense nonnegative entries in every block, some blocks dropped.
        0 => {
            for r in &ranges {
                if rng.random::<f64>() < 0.2 {
                    continue;
                }
                for i in r.clone() {
                    for j in r.clone() {
                        d[(i, j)] = rng.random::<f64>();
                    }
                }
            }
        }
        // One column of one block.
        1 => {
            let r = &ranges[rng.random_range(0..ranges.len())];
            let j = rng.random_range(r.clone());
            for i in r.clone() {
                d[(i, j)] = rng.random::<f64>();
            }
        }
        // Rank-one block entries.
        2 => {
            for r in &ranges {
                let x: Vec<f64> = r.clone().map(|_| rng.random::<f64>()).collect();
                let y: Vec<f64> = r.clone().map(|_| rng.random::<f64>()).collect();
                for (a, i) in r.clone().enumerate() {
                    for (b, j) in r.clone().enumerate() {
                        d[(i, j)] = x[a] * y[b];
                    }
                }
            }
        }
        // Every block saturated.
        _ => {
            for r in &ranges {
                for i in r.clone() {
                    for j in r.clone() {
                        d[(i, j)] = 1.0;
                    }
                }
            }
        }
    }
    if d.iter().all(|&v| v == 0.0) {
        let i = rng.random_range(0..n);
        let r = ranges.iter().find(|r| r.contains(&i)).unwrap();
        d[(i, r.start)] = 1.0;
    }
    d
}

fn sample_with(unc: &UncertaintyStructure, kind: NormKind, bound: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let d = structured_direction(unc, rng);
    let radius = bound * (1.0 - rng.random::<f64>());
    let scaled = &d * (radius / norm_of(&d, kind));
    // Guard against rounding pushing the norm past the bound.
    let over = norm_of(&scaled, kind);
    if over > bound {
        scaled * (bound / over)
    } else {
        scaled
    }
}

/// Random nonnegative block-diagonal `Delta` whose `kind` norm is drawn
/// uniformly in `(0, bound]` along a random structured direction.
pub fn sample_delta(unc: &UncertaintyStructure, kind: NormKind, bound: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Domain(format!("bound must be positive, got {bound}")));
    }
    if unc.n() == 0 {
        return Err(Error::Dimension("empty uncertainty structure".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with(unc, kind, bound, &mut rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub samples: usize,
    pub worst_abscissa: f64,
    /// Samples with spectral abscissa `>= 0`.
    pub violations: usize,
}

/// `M + K Gamma H^-1 E Delta F` for concrete gains.
pub fn perturbed_matrix(
    params: &FmParams,
    gains: &GainProfile,
    adjacency: &DMatrix<f64>,
    unc: &UncertaintyStructure,
    delta: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = system_matrix(params, gains, adjacency)?;
    let n = m.nrows();
    let e = unc.e.resolve(gains);
    let f = unc.f.resolve(gains);
    let b = DMatrix::from_fn(n, n, |i, j| params.k[i] * params.gamma_bar[i] / gains.h[i] * e[(i, j)]);
    Ok(m + b * delta * f)
}

/// Samples structured `Delta` inside both norm balls (sample 0 is
/// `Delta = 0`) and records the closed-loop spectral abscissa of each.
/// Sample `s` draws from its own stream of the seeded generator, so the
/// report does not depend on the thread count.
pub fn verify_certificate(
    params: &FmParams,
    gains: &GainProfile,
    adjacency: &DMatrix<f64>,
    unc: &UncertaintyStructure,
    samples: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if samples == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    unc.validate(params.n())?;
    let attackable = unc.eps1 > 0.0 && unc.eps2 > 0.0;
    let results: Result<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let n = params.n();
            let delta = if s == 0 || !attackable {
                DMatrix::zeros(n, n)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let (kind, bound, other, other_bound) = if s % 2 == 1 {
                    (NormKind::One, unc.eps1, NormKind::Two, unc.eps2)
                } else {
                    (NormKind::Two, unc.eps2, NormKind::One, unc.eps1)
                };
                let d = sample_with(unc, kind, bound, &mut rng);
                let o = norm_of(&d, other);
                if o > other_bound {
                    d * (other_bound / o)
                } else {
                    d
                }
            };
            spectral_abscissa(&perturbed_matrix(params, gains, adjacency, unc, &delta)?)
        })
        .collect();
    let values = results?;
    Ok(VerificationReport {
        seed,
        samples,
        worst_abscissa: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        violations: values.iter().filter(|&&v| v >= 0.0).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(n: usize) -> (FmParams, DMatrix<f64>) {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
            a[(i + 1, i)] = 1.0;
        }
        (FmParams::uniform(n, 1.0, 1.0, 1.0).unwrap(), a)
    }

    #[test]
    fn c1_without_interference() {
        let n = 3;
        let p = FmParams::uniform(n, 1.0, 1.0, 1.0).unwrap();
        let a = DMatrix::zeros(n, n);
        let unc = UncertaintyStructure::diagonal(n, Coupling::identity(n), Coupling::identity(n), 0.25, 0.25, 0.1, 0.1);
        let l = RobustLayout::new(n, unc.n_blocks(), false);
        let c = build_c1(&p, &a, &unc, &l).unwrap();
        assert_eq!(c.len(), 2 * n);
        // Row 0 reads (0.1 rho_0 + 0.5) / rho_0 at rho_0 = 2: 0.1 + 0.25.
        let mut x = vec![1.0; l.n_vars()];
        x[l.rho(0)] = 2.0;
        assert!((c[0].evaluate(&x).unwrap() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn constraint_counts() {
        let (p, a) = instance(4);
        let unc = UncertaintyStructure::diagonal(4, Coupling::identity(4), Coupling::GainDiagonal, 1.0, 1.0, 0.01, 0.01);
        let l = RobustLayout::new(4, 4, false);
        assert_eq!(build_c1(&p, &a, &unc, &l).unwrap().len(), 8);
        assert_eq!(build_c2(&p, &a, &unc, &l).unwrap().len(), 16);
        assert_eq!(l.n_vars(), 2 * 4 + 4 + 4 + 4 * 4);
    }

    #[test]
    fn zero_bounds_drop_attack_rows() {
        let (p, a) = instance(3);
        let unc = UncertaintyStructure::diagonal(3, Coupling::identity(3), Coupling::GainDiagonal, 0.0, 0.0, 0.01, 0.01);
        let l = RobustLayout::new(3, 3, false);
        assert_eq!(build_c1(&p, &a, &unc, &l).unwrap().len(), 3);
        assert_eq!(build_c2(&p, &a, &unc, &l).unwrap().len(), 6);
    }

    #[test]
    fn block_bookkeeping() {
        let unc = UncertaintyStructure {
            full_blocks: vec![2, 3],
            scalar_blocks: 2,
            e: Coupling::identity(7),
            f: Coupling::identity(7),
            eps1: 1.0,
            eps2: 1.0,
            sigma1: 0.1,
            sigma2: 0.1,
        };
        assert_eq!(unc.block_map(), vec![0, 0, 1, 1, 1, 2, 3]);
        assert_eq!(unc.n_blocks(), 4);
        assert!(unc.validate(7).is_ok());
        assert!(unc.validate(6).is_err());
    }

    #[test]
    fn scalar_samples_are_diagonal() {
        let unc = UncertaintyStructure::diagonal(5, Coupling::identity(5), Coupling::identity(5), 1.0, 1.0, 0.1, 0.1);
        for seed in 0..50 {
            let d = sample_delta(&unc, NormKind::One, 1.0, seed).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        assert_eq!(d[(i, j)], 0.0);
                    } else {
                        assert!((0.0..=1.0).contains(&d[(i, i)]));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_sample_is_nominal() {
        let (p, a) = instance(3);
        let g = GainProfile::uniform(3, 5.0, 0.5, GainBounds::default()).unwrap();
        let unc = UncertaintyStructure::diagonal(3, Coupling::identity(3), Coupling::GainDiagonal, 1.0, 1.0, 0.01, 0.01);
        let r = verify_certificate(&p, &g, &a, &unc, 1, 3).unwrap();
        let nominal = spectral_abscissa(&system_matrix(&p, &g, &a).unwrap()).unwrap();
        assert_eq!(r.worst_abscissa, nominal);
        assert_eq!(r.violations, 0);
    }
}
