//! Costs and the round-robin game between the two subnetwork policymakers.
//!
//! Policymaker `pi` owns the gains `theta_pi = (g_i, h_i)` of its nodes and,
//! every `c_pi` rounds, re-solves the robust program over its own gains with
//! the other network frozen. Both minimize the same total cost, so every
//! update starts from a feasible point of the next one and the total cost
//! is nonincreasing along the run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::{FmParams, GainBounds, GainProfile};
use crate::gp::{self, GpProblem, GpSolution, GpStatus, Monomial, Posynomial, SolveOptions};
use crate::robust::{box_constraints, Certificate, Coupling, RobustLayout, Rows};
use crate::topology::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub p_exp: f64,
    pub q_exp: f64,
    pub bounds: GainBounds,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            p_exp: 0.1,
            q_exp: 1.0,
            bounds: GainBounds::default(),
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_exp > 0.0 && self.p_exp.is_finite() && self.q_exp > 0.0 && self.q_exp.is_finite()) {
            return Err(Error::Domain(format!(
                "cost exponents must be positive, got p = {}, q = {}",
                self.p_exp, self.q_exp
            )));
        }
        self.bounds.validate()
    }

    /// `1 / (g_lo^-p - g_hi^-p)`.
    fn g_scale(&self) -> f64 {
        let b = &self.bounds;
        1.0 / (b.g_lo.powf(-self.p_exp) - b.g_hi.powf(-self.p_exp))
    }

    /// `1 / (h_hi^q - h_lo^q)`.
    fn h_scale(&self) -> f64 {
        let b = &self.bounds;
        1.0 / (b.h_hi.powf(self.q_exp) - b.h_lo.powf(self.q_exp))
    }

    fn check(v: f64, lo: f64, hi: f64, what: &str) -> Result<()> {
        let tol = 1e-9 * hi;
        if !(v >= lo - tol && v <= hi + tol) {
            return Err(Error::Domain(format!("{what} = {v} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Interference-suppression cost, 1 at `g_lo` and 0 at `g_hi`.
    pub fn alpha(&self, g: f64) -> Result<f64> {
        Self::check(g, self.bounds.g_lo, self.bounds.g_hi, "g")?;
        Ok((g.powf(-self.p_exp) - self.bounds.g_hi.powf(-self.p_exp)) * self.g_scale())
    }

    /// Transmission cost, 0 at `h_lo` and 1 at `h_hi`.
    pub fn beta(&self, h: f64) -> Result<f64> {
        Self::check(h, self.bounds.h_lo, self.bounds.h_hi, "h")?;
        Ok((h.powf(self.q_exp) - self.bounds.h_lo.powf(self.q_exp)) * self.h_scale())
    }

    /// Shift that turns the total cost of `n` nodes into a posynomial.
    pub fn l0_constant(&self, n: usize) -> f64 {
        let b = &self.bounds;
        n as f64 * (b.g_hi.powf(-self.p_exp) * self.g_scale() + b.h_lo.powf(self.q_exp) * self.h_scale())
    }

    /// Unshifted cost `sum alpha(g_i) + beta(h_i)` over `nodes`.
    pub fn cost(&self, gains: &GainProfile, nodes: impl IntoIterator<Item = usize>) -> Result<f64> {
        let mut total = 0.0;
        for i in nodes {
            total += self.alpha(gains.g[i])? + self.beta(gains.h[i])?;
        }
        Ok(total)
    }

    /// Shifted cost `sum g_i^-p / (g_lo^-p - g_hi^-p) + h_i^q / (h_hi^q - h_lo^q)`
    /// over `nodes`; over all nodes it equals the unshifted cost plus
    /// [`Self::l0_constant`].
    pub fn shifted_cost(&self, gains: &GainProfile, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes
            .into_iter()
            .map(|i| gains.g[i].powf(-self.p_exp) * self.g_scale() + gains.h[i].powf(self.q_exp) * self.h_scale())
            .sum()
    }

    /// The shifted cost over `nodes` as a posynomial in the layout's gains.
    pub fn objective(&self, layout: &RobustLayout, nodes: impl IntoIterator<Item = usize>) -> Posynomial {
        let mut terms = Vec::new();
        for i in nodes {
            terms.push(Monomial::new(self.g_scale(), &[(layout.g(i), -self.p_exp)]));
            terms.push(Monomial::new(self.h_scale(), &[(layout.h(i), self.q_exp)]));
        }
        Posynomial::new(terms).expect("at least one node")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub c1: usize,
    pub c2: usize,
    /// Convergence threshold on `||theta_pi(r) - theta_pi(r - c_pi)||_2`.
    pub tol: f64,
    pub varsigma: f64,
    pub q1_bar: f64,
    pub q2_bar: f64,
    /// Cap in cycles of `lcm(c1, c2)` rounds.
    pub max_cycles: usize,
    /// Duality-gap target of every round's solve.
    pub gap_tol: f64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            c1: 2,
            c2: 3,
            tol: 1e-4,
            varsigma: 0.01,
            q1_bar: 2.25,
            q2_bar: 0.0,
            max_cycles: 200,
            gap_tol: 1e-10,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c1 == 0 || self.c2 == 0 {
            return Err(Error::Domain("update frequencies must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.varsigma > 0.0 && self.varsigma < 1.0) {
            return Err(Error::Domain(format!("varsigma must lie in (0, 1), got {}", self.varsigma)));
        }
        for (name, v) in [("q1_bar", self.q1_bar), ("q2_bar", self.q2_bar)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.max_cycles == 0 {
            return Err(Error::Domain("max_cycles must be positive".into()));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::Domain("gap_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn coprime(&self) -> bool {
        gcd(self.c1, self.c2) == 1
    }

    pub fn cycle_len(&self) -> usize {
        self.c1 / gcd(self.c1, self.c2) * self.c2
    }

    pub fn max_rounds(&self) -> usize {
        self.max_cycles * self.cycle_len()
    }

    fn frequency(&self, owner: u8) -> usize {
        if owner == 1 {
            self.c1
        } else {
            self.c2
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            gap_tol: self.gap_tol,
            ..SolveOptions::default()
        }
    }
}

/// How the 2-norm attack bound enters a round program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackBound {
    Fixed(f64),
    /// A decision variable, maximized through the objective `1 / q2`.
    Variable,
}

/// Round program over the owner's gains and the certificate variables.
#[derive(Debug, Clone)]
pub struct RoundProgram {
    pub owner: u8,
    pub problem: GpProblem,
    /// Layout of the full program before the other network was frozen.
    pub layout: RobustLayout,
    /// Full-layout index of every remaining variable.
    pub kept: Vec<usize>,
    frozen: BTreeMap<usize, f64>,
}

impl RoundProgram {
    /// Full-layout point from a solution of the reduced problem.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.layout.n_vars()];
        for (&k, &v) in &self.frozen {
            full[k] = v;
        }
        for (r, &k) in self.kept.iter().enumerate() {
            full[k] = x[r];
        }
        full
    }

    /// Reduced point from a full-layout point.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.kept.iter().map(|&k| full[k]).collect()
    }
}

fn check_owner(owner: u8) -> Result<()> {
    if owner == 1 || owner == 2 {
        Ok(())
    } else {
        Err(Error::Domain(format!("owner must be 1 or 2, got {owner}")))
    }
}

pub fn round_program(
    owner: u8,
    frozen_theta: &GainProfile,
    params: &FmParams,
    topology: &Topology,
    config: &GameConfig,
    cost: &CostModel,
    bound: AttackBound,
) -> Result<RoundProgram> {
    check_owner(owner)?;
    config.validate()?;
    cost.validate()?;
    params.validate()?;
    let n = topology.n();
    if params.n() != n || frozen_theta.n() != n {
        return Err(Error::Dimension(format!(
            "topology has {n} nodes, parameters {}, gains {}",
            params.n(),
            frozen_theta.n()
        )));
    }
    let other = 3 - owner;
    for i in topology.network_nodes(other) {
        let (g, h, b) = (frozen_theta.g[i], frozen_theta.h[i], &cost.bounds);
        if g < b.g_lo * (1.0 - 1e-9) || g > b.g_hi * (1.0 + 1e-9) || h < b.h_lo * (1.0 - 1e-9) || h > b.h_hi * (1.0 + 1e-9) {
            return Err(Error::Domain(format!("frozen gains at node {} leave the box", i + 1)));
        }
    }
    let layout = RobustLayout::new(n, n, bound == AttackBound::Variable);
    let e = Coupling::identity(n);
    let f = Coupling::GainDiagonal;
    let rows = Rows {
        params,
        adjacency: topology.adjacency(),
        layout: &layout,
        e: &e,
        f: &f,
        block: (0..n).collect(),
    };
    let s1 = (config.q1_bar > 0.0).then(|| Monomial::constant(config.q1_bar.sqrt()));
    let s2 = match bound {
        AttackBound::Fixed(q2) => {
            if !(q2 >= 0.0 && q2.is_finite()) {
                return Err(Error::Domain(format!("q2 must be nonnegative, got {q2}")));
            }
            (q2 > 0.0).then(|| Monomial::constant(q2.sqrt()))
        }
        AttackBound::Variable => Some(Monomial::var(layout.q2().unwrap(), 0.5)),
    };
    let mut ineq = rows.c1(config.varsigma, s1.as_ref());
    ineq.extend(rows.c2(config.varsigma, s2.as_ref()));
    ineq.extend(box_constraints(&layout, &cost.bounds, topology.network_nodes(owner)));
    let objective = match bound {
        AttackBound::Fixed(_) => cost.objective(&layout, 0..n),
        AttackBound::Variable => Monomial::var(layout.q2().unwrap(), -1.0).into(),
    };
    let full = GpProblem::new(layout.names(), objective, ineq, vec![])?;

    let mut frozen = BTreeMap::new();
    for i in topology.network_nodes(other) {
        frozen.insert(layout.g(i), frozen_theta.g[i]);
        frozen.insert(layout.h(i), frozen_theta.h[i]);
    }
    let problem = full.substitute(&frozen)?;
    let kept = (0..layout.n_vars()).filter(|k| !frozen.contains_key(k)).collect();
    Ok(RoundProgram {
        owner,
        problem,
        layout,
        kept,
        frozen,
    })
}

/// Round program of `owner` at the configured attack bound `q2_bar`.
pub fn assemble_q(
    owner: u8,
    frozen_theta: &GainProfile,
    params: &FmParams,
    topology: &Topology,
    config: &GameConfig,
    cost: &CostModel,
) -> Result<RoundProgram> {
    round_program(owner, frozen_theta, params, topology, config, cost, AttackBound::Fixed(config.q2_bar))
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub solution: GpSolution,
    /// Full-layout point (gains and certificate).
    pub point: Vec<f64>,
    pub gains: GainProfile,
}

/// Solves `owner`'s round program, optionally warm-started from a
/// full-layout point.
pub fn best_response(
    owner: u8,
    theta: &GainProfile,
    params: &FmParams,
    topology: &Topology,
    config: &GameConfig,
    cost: &CostModel,
    warm: Option<&[f64]>,
) -> Result<RoundOutcome> {
    let prog = assemble_q(owner, theta, params, topology, config, cost)?;
    solve_round(&prog, theta, config, cost, warm)
}

fn solve_round(
    prog: &RoundProgram,
    theta: &GainProfile,
    config: &GameConfig,
    cost: &CostModel,
    warm: Option<&[f64]>,
) -> Result<RoundOutcome> {
    let mut options = config.solve_options();
    let start = match warm {
        Some(w) => w.to_vec(),
        None => prog.layout.point(theta),
    };
    options.initial = Some(prog.restrict(&start));
    let solution = gp::solve(&prog.problem, &options)?;
    let point = prog.expand(&solution.x);
    let mut gains = theta.clone();
    gains.bounds = cost.bounds;
    let b = &cost.bounds;
    for i in 0..prog.layout.n {
        gains.g[i] = point[prog.layout.g(i)].clamp(b.g_lo, b.g_hi);
        gains.h[i] = point[prog.layout.h(i)].clamp(b.h_lo, b.h_hi);
    }
    Ok(RoundOutcome { solution, point, gains })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub round: usize,
    /// Policymaker that updated in this entry (0 for the initial profile).
    pub owner: u8,
    /// Shifted total cost.
    pub total: f64,
    /// Unshifted per-network costs.
    pub cost_net1: f64,
    pub cost_net2: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub theta_star: GainProfile,
    pub certificate: Option<Certificate>,
    /// Initial profile at round 0, then one entry per update.
    pub cost_trajectory: Vec<CostPoint>,
    pub rounds_used: usize,
    pub converged: bool,
    pub qmax: Option<f64>,
}

impl EquilibriumResult {
    pub fn final_cost(&self) -> &CostPoint {
        self.cost_trajectory.last().expect("trajectory holds the initial profile")
    }
}

fn cost_point(round: usize, owner: u8, theta: &GainProfile, topology: &Topology, cost: &CostModel) -> Result<CostPoint> {
    let total = cost.shifted_cost(theta, 0..topology.n());
    Ok(CostPoint {
        round,
        owner,
        total,
        cost_net1: cost.cost(theta, topology.network_nodes(1))?,
        cost_net2: cost.cost(theta, topology.network_nodes(2))?,
    })
}

fn network_distance(a: &GainProfile, b: &GainProfile, nodes: std::ops::Range<usize>) -> f64 {
    nodes
        .map(|i| (a.g[i] - b.g[i]).powi(2) + (a.h[i] - b.h[i]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Round-robin best responses until both policymakers' last updates moved
/// their gains by at most `tol`.
pub fn run_hig(
    params: &FmParams,
    topology: &Topology,
    config: &GameConfig,
    cost: &CostModel,
    initial_theta: &GainProfile,
) -> Result<EquilibriumResult> {
    config.validate()?;
    cost.validate()?;
    let mut theta = initial_theta.clone();
    theta.bounds = cost.bounds;
    theta.validate()?;
    let mut trajectory = vec![cost_point(0, 0, &theta, topology, cost)?];
    let mut warm: Option<Vec<f64>> = None;
    let mut last_change = [f64::INFINITY; 2];
    let mut certificate = None;
    let start = config.c1.max(config.c2);
    for r in 1..=config.max_rounds() {
        for owner in [1u8, 2] {
            if r % config.frequency(owner) != 0 {
                continue;
            }
            let prog = assemble_q(owner, &theta, params, topology, config, cost)?;
            let out = solve_round(&prog, &theta, config, cost, warm.as_deref())?;
            match out.solution.status {
                GpStatus::Optimal => {}
                _ => {
                    return Err(Error::RoundInfeasible {
                        round: r,
                        phase1_value: out.solution.phase1_value.unwrap_or(f64::NAN),
                    })
                }
            }
            last_change[usize::from(owner - 1)] = network_distance(&out.gains, &theta, topology.network_nodes(owner));
            theta = out.gains;
            certificate = Some(Certificate::from_point(&prog.layout, &out.point));
            warm = Some(out.point);
            trajectory.push(cost_point(r, owner, &theta, topology, cost)?);
        }
        if r > start && last_change.iter().all(|&d| d <= config.tol) {
            return Ok(EquilibriumResult {
                theta_star: theta,
                certificate,
                cost_trajectory: trajectory,
                rounds_used: r,
                converged: true,
                qmax: None,
            });
        }
    }
    Ok(EquilibriumResult {
        theta_star: theta,
        certificate,
        cost_trajectory: trajectory,
        rounds_used: config.max_rounds(),
        converged: false,
        qmax: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmaxResult {
    pub q2_star: f64,
    pub per_network: [f64; 2],
}

/// Largest 2-norm attack bound each policymaker can certify on its own with
/// the other network at `initial_theta`; the game is solvable up to the
/// smaller one.
/// Relative margin kept below the largest admissible 2-norm bound: at the
/// exact supremum the round programs have an empty interior, which the
/// barrier method cannot center in.
pub const QMAX_BACKOFF: f64 = 1e-4;

pub fn find_qmax(
    params: &FmParams,
    topology: &Topology,
    config: &GameConfig,
    cost: &CostModel,
    initial_theta: &GainProfile,
) -> Result<QmaxResult> {
    let mut per_network = [0.0; 2];
    for owner in [1u8, 2] {
        let prog = round_program(owner, initial_theta, params, topology, config, cost, AttackBound::Variable)?;
        let mut options = config.solve_options();
        let mut start = prog.layout.point(initial_theta);
        start[prog.layout.q2().unwrap()] = 1e-6;
        options.initial = Some(prog.restrict(&start));
        let sol = gp::solve(&prog.problem, &options)?;
        match sol.status {
            GpStatus::Optimal => {}
            GpStatus::Infeasible => {
                return Err(Error::Infeasible(format!(
                    "network {owner} cannot be stabilized within the gain box even without 2-norm attacks"
                )))
            }
            s => return Err(Error::Numerical(format!("attack-bound program for network {owner} ended with {s:?}"))),
        }
        let full = prog.expand(&sol.x);
        per_network[usize::from(owner - 1)] = full[prog.layout.q2().unwrap()];
    }
    Ok(QmaxResult {
        q2_star: per_network[0].min(per_network[1]) * (1.0 - QMAX_BACKOFF),
        per_network,
    })
}
