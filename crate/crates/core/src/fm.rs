//! Foschini–Miljanic power control.
//!
//! Node `i` updates `p_i <- p_i + k_i (gamma_bar_i / gamma_i - 1) p_i`, i.e.
//! in vector form `p <- (M + I) p + K Gamma H^-1 nu` with the Metzler system
//! matrix `M = K (-I + Gamma H^-1 Ã G)` where `(Ã G)_ij = a_ij g_j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{spectral_abscissa, spectral_radius};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmParams {
    pub k: Vec<f64>,
    pub gamma_bar: Vec<f64>,
    pub nu: Vec<f64>,
}

impl FmParams {
    pub fn new(k: Vec<f64>, gamma_bar: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        let p = Self { k, gamma_bar, nu };
        p.validate()?;
        Ok(p)
    }

    /// The same constants at every node.
    pub fn uniform(n: usize, k: f64, gamma_bar: f64, nu: f64) -> Result<Self> {
        Self::new(vec![k; n], vec![gamma_bar; n], vec![nu; n])
    }

    pub fn n(&self) -> usize {
        self.k.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.k.len();
        if n == 0 || self.gamma_bar.len() != n || self.nu.len() != n {
            return Err(Error::Dimension(format!(
                "k, gamma_bar and nu must share a nonzero length, got {}, {}, {}",
                n,
                self.gamma_bar.len(),
                self.nu.len()
            )));
        }
        // k_i <= 1 keeps M + I nonnegative.
        if let Some(v) = self.k.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::Domain(format!("k_i must lie in (0, 1], got {v}")));
        }
        if let Some(v) = self.gamma_bar.iter().find(|&&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("gamma_bar_i must be nonnegative, got {v}")));
        }
        if let Some(v) = self.nu.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("nu_i must be positive, got {v}")));
        }
        Ok(())
    }

    /// `c_i = k_i gamma_bar_i g_i / h_i`, the per-node weight of added
    /// interference.
    pub fn coupling(&self, gains: &GainProfile) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.k[i] * self.gamma_bar[i] * gains.g[i] / gains.h[i])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainBounds {
    pub g_lo: f64,
    pub g_hi: f64,
    pub h_lo: f64,
    pub h_hi: f64,
}

impl Default for GainBounds {
    fn default() -> Self {
        Self {
            g_lo: 0.1,
            g_hi: 0.9,
            h_lo: 4.0,
            h_hi: 6.0,
        }
    }
}

impl GainBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_lo > 0.0 && self.g_lo < self.g_hi && self.g_hi.is_finite()) {
            return Err(Error::Domain(format!("need 0 < g_lo < g_hi, got [{}, {}]", self.g_lo, self.g_hi)));
        }
        if !(self.h_lo > 0.0 && self.h_lo < self.h_hi && self.h_hi.is_finite()) {
            return Err(Error::Domain(format!("need 0 < h_lo < h_hi, got [{}, {}]", self.h_lo, self.h_hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub bounds: GainBounds,
}

impl GainProfile {
    pub fn new(h: Vec<f64>, g: Vec<f64>, bounds: GainBounds) -> Result<Self> {
        let p = Self { h, g, bounds };
        p.validate()?;
        Ok(p)
    }

    /// Gains without box checks, for dynamics outside any cost model.
    pub fn unbounded(h: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let bounds = GainBounds {
            g_lo: f64::MIN_POSITIVE,
            g_hi: f64::MAX,
            h_lo: f64::MIN_POSITIVE,
            h_hi: f64::MAX,
        };
        Self::new(h, g, bounds)
    }

    pub fn uniform(n: usize, h: f64, g: f64, bounds: GainBounds) -> Result<Self> {
        Self::new(vec![h; n], vec![g; n], bounds)
    }

    /// Box midpoints at every node.
    pub fn midpoint(n: usize, bounds: GainBounds) -> Result<Self> {
        Self::uniform(n, 0.5 * (bounds.h_lo + bounds.h_hi), 0.5 * (bounds.g_lo + bounds.g_hi), bounds)
    }

    pub fn n(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.len() != self.g.len() || self.h.is_empty() {
            return Err(Error::Dimension(format!(
                "h and g must share a nonzero length, got {} and {}",
                self.h.len(),
                self.g.len()
            )));
        }
        if let Some(v) = self.h.iter().chain(&self.g).find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain(format!("gains must be positive, got {v}")));
        }
        let b = &self.bounds;
        let tol = 1e-9;
        for i in 0..self.n() {
            let (g, h) = (self.g[i], self.h[i]);
            if g < b.g_lo * (1.0 - tol) || g > b.g_hi * (1.0 + tol) || h < b.h_lo * (1.0 - tol) || h > b.h_hi * (1.0 + tol)
            {
                return Err(Error::Domain(format!("gains at node {i} (g = {g}, h = {h}) leave the box")));
            }
        }
        Ok(())
    }
}

fn check_dims(params: &FmParams, gains: &GainProfile, a: &DMatrix<f64>) -> Result<usize> {
    let n = params.n();
    if gains.n() != n || a.nrows() != n || a.ncols() != n {
        return Err(Error::Dimension(format!(
            "params have {n} nodes, gains {}, adjacency {}x{}",
            gains.n(),
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(v) = gains.h.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("h_i must be positive, got {v}")));
    }
    Ok(n)
}

/// `M = K (-I + Gamma H^-1 Ã G)`: diagonal `-k_i`, off-diagonal
/// `k_i gamma_bar_i a_ij g_j / h_i`.
pub fn system_matrix(params: &FmParams, gains: &GainProfile, adjacency: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_dims(params, gains, adjacency)?;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            -params.k[i]
        } else {
            params.k[i] * params.gamma_bar[i] * adjacency[(i, j)] * gains.g[j] / gains.h[i]
        }
    }))
}

/// `gamma_i = h_i p_i / (nu_i + sum_{j != i} a_ij g_j p_j)`.
pub fn sinr(params: &FmParams, gains: &GainProfile, adjacency: &DMatrix<f64>, p: &[f64]) -> Result<Vec<f64>> {
    let n = check_dims(params, gains, adjacency)?;
    if p.len() != n {
        return Err(Error::Dimension(format!("power vector has {} entries, expected {n}", p.len())));
    }
    Ok((0..n)
        .map(|i| {
            let interference: f64 = (0..n).filter(|&j| j != i).map(|j| adjacency[(i, j)] * gains.g[j] * p[j]).sum();
            gains.h[i] * p[i] / (params.nu[i] + interference)
        })
        .collect())
}

fn drive(params: &FmParams, gains: &GainProfile) -> DVector<f64> {
    DVector::from_fn(params.n(), |i, _| params.k[i] * params.gamma_bar[i] * params.nu[i] / gains.h[i])
}

/// One synchronous update `p <- (M + I) p + K Gamma H^-1 nu`.
pub fn fm_step(params: &FmParams, gains: &GainProfile, adjacency: &DMatrix<f64>, p: &[f64]) -> Result<Vec<f64>> {
    let m = system_matrix(params, gains, adjacency)?;
    if p.len() != params.n() {
        return Err(Error::Dimension(format!("power vector has {} entries, expected {}", p.len(), params.n())));
    }
    Ok(step_with(&m, &drive(params, gains), p))
}

fn step_with(m: &DMatrix<f64>, b: &DVector<f64>, p: &[f64]) -> Vec<f64> {
    let pv = DVector::from_column_slice(p);
    let next = m * &pv + pv + b;
    next.iter().map(|&v| v.max(0.0)).collect()
}

/// Equilibrium power `(I - Gamma H^-1 Ã G) p = Gamma H^-1 nu`, at which
/// every SINR equals its target.
pub fn fixed_point(params: &FmParams, gains: &GainProfile, adjacency: &DMatrix<f64>) -> Result<Vec<f64>> {
    let m = system_matrix(params, gains, adjacency)?;
    let abscissa = spectral_abscissa(&m)?;
    if abscissa >= 0.0 {
        return Err(Error::Infeasible(format!(
            "system matrix is not Hurwitz (spectral abscissa {abscissa:.6e}); no positive equilibrium"
        )));
    }
    // M p = -K Gamma H^-1 nu is the same system scaled by K.
    let rhs = -drive(params, gains);
    let p = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular system matrix".into()))?;
    Ok(p.iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Power after every step, starting with the initial vector.
    pub powers: Vec<Vec<f64>>,
    pub steps: usize,
    pub converged: bool,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.powers.last().expect("trajectory holds the initial vector")
    }
}

pub const SIM_TOL: f64 = 1e-10;
pub const SIM_MAX_STEPS: usize = 1_000_000;

/// Iterates the update from `p0` until `||p(k+1) - p(k)||_inf < tol` or
/// `max_steps`. Only every `record_every`-th state is kept (plus the last).
pub fn simulate(
    params: &FmParams,
    gains: &GainProfile,
    adjacency: &DMatrix<f64>,
    p0: &[f64],
    tol: f64,
    max_steps: usize,
    record_every: usize,
) -> Result<Trajectory> {
    let m = system_matrix(params, gains, adjacency)?;
    if p0.len() != params.n() {
        return Err(Error::Dimension(format!("initial power has {} entries, expected {}", p0.len(), params.n())));
    }
    if let Some(v) = p0.iter().find(|&&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("initial power must be nonnegative, got {v}")));
    }
    let b = drive(params, gains);
    let every = record_every.max(1);
    let mut p = p0.to_vec();
    let mut powers = vec![p.clone()];
    for step in 1..=max_steps {
        let next = step_with(&m, &b, &p);
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if !change.is_finite() {
            return Err(Error::Numerical("power iteration diverged".into()));
        }
        if change < tol {
            powers.push(p);
            return Ok(Trajectory { powers, steps: step, converged: true });
        }
        if step % every == 0 {
            powers.push(p.clone());
        }
    }
    if powers.last() != Some(&p) {
        powers.push(p);
    }
    Ok(Trajectory {
        powers,
        steps: max_steps,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Spectral abscissa of `M`.
    pub abscissa: f64,
    /// Spectral radius of `M + I`.
    pub radius: f64,
}

/// Margin check: `lambda_max(M) < -varsigma` and `rho(M + I) < 1`.
pub fn is_robustly_stable(
    params: &FmParams,
    gains: &GainProfile,
    adjacency: &DMatrix<f64>,
    varsigma: f64,
) -> Result<StabilityReport> {
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::Domain(format!("varsigma must lie in (0, 1), got {varsigma}")));
    }
    let m = system_matrix(params, gains, adjacency)?;
    Ok(stability_of(&m, varsigma)?)
}

pub(crate) fn stability_of(m: &DMatrix<f64>, varsigma: f64) -> Result<StabilityReport> {
    let n = m.nrows();
    let abscissa = spectral_abscissa(m)?;
    let radius = spectral_radius(&(m + DMatrix::identity(n, n)))?;
    Ok(StabilityReport {
        stable: abscissa < -varsigma && radius < 1.0,
        abscissa,
        radius,
    })
}
