//! Greedy worst-case edge-adding attacker.
//!
//! The attacker adds edges that are absent from the nominal graph, scoring
//! each candidate by a first-order estimate of how much it raises the
//! dominant eigenvalue of the closed-loop matrix. Edges are added at unit
//! weight until the 1-norm or 2-norm budget binds; the last edge is then cut
//! back so the binding norm holds with equality. From the second edge on all
//! edges share one endpoint, so the attack is a star around a single source.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fm::{system_matrix, FmParams, GainProfile};
use crate::spectral::{dominant_vector, perron_vector, spectral_abscissa, PerronPair};
use crate::topology::{candidate_edges, matrix_norms, MatrixNorms, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddedEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackState {
    /// Symmetric, supported on non-edges of the nominal graph.
    pub a_q: DMatrix<f64>,
    /// Nodes an added edge may still attach to, sorted.
    pub sources: Vec<usize>,
    pub added: Vec<AddedEdge>,
    pub last_edge: Option<(usize, usize)>,
    /// The candidate set ran out before either budget was reached.
    pub saturated: bool,
}

impl AttackState {
    fn empty(n: usize) -> Self {
        Self {
            a_q: DMatrix::zeros(n, n),
            sources: (0..n).collect(),
            added: Vec::new(),
            last_edge: None,
            saturated: false,
        }
    }

    pub fn norms(&self) -> MatrixNorms {
        matrix_norms(&self.a_q)
    }

    fn set_weight(&mut self, i: usize, j: usize, w: f64) {
        self.a_q[(i, j)] = w;
        self.a_q[(j, i)] = w;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub one_norm: f64,
    pub two_norm: f64,
    pub abscissa_before: f64,
    pub abscissa_after: f64,
}

/// Closed-loop matrix with the attack edges added to the adjacency.
pub fn compromised_matrix(
    params: &FmParams,
    gains: &GainProfile,
    topology: &Topology,
    a_q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if a_q.shape() != topology.adjacency().shape() {
        return Err(Error::Dimension(format!(
            "attack matrix is {}x{}, topology has {} nodes",
            a_q.nrows(),
            a_q.ncols(),
            topology.n()
        )));
    }
    system_matrix(params, gains, &(topology.adjacency() + a_q))
}

/// `(c_i + c_j) mu_i mu_j` with `c_i = k_i gamma_i g_i / h_i`.
pub fn edge_score(edge: (usize, usize), params: &FmParams, gains: &GainProfile, perron: &PerronPair) -> f64 {
    let (i, j) = edge;
    let ci = params.k[i] * params.gamma_bar[i] * gains.g[i] / gains.h[i];
    let cj = params.k[j] * params.gamma_bar[j] * gains.g[j] / gains.h[j];
    (ci + cj) * perron.vector[i] * perron.vector[j]
}

/// Rayleigh-type estimate of the perturbed dominant eigenvalue:
/// `lambda + sum_{i<j} a_ij (c_i + c_j) mu_i mu_j` with the nominal Perron pair.
pub fn lambda_shift_lower_bound(
    params: &FmParams,
    gains: &GainProfile,
    a_q: &DMatrix<f64>,
    perron_nominal: &PerronPair,
) -> Result<f64> {
    let n = params.n();
    if a_q.shape() != (n, n) || gains.n() != n || perron_nominal.vector.len() != n {
        return Err(Error::Dimension("attack, gains and Perron vector must match the parameter size".into()));
    }
    let mut shift = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = a_q[(i, j)];
            if a != 0.0 {
                shift += a * edge_score((i, j), params, gains, perron_nominal);
            }
        }
    }
    Ok(perron_nominal.value + shift)
}

fn dominant_pair(m: &DMatrix<f64>) -> Result<PerronPair> {
    match perron_vector(m) {
        Err(Error::Reducible(_)) => dominant_vector(m),
        other => other,
    }
}

/// Shared driver: `choose` picks an index into the eligible candidates.
fn grow<F>(topology: &Topology, q1_bar: f64, q2_bar: f64, mut choose: F) -> Result<AttackState>
where
    F: FnMut(&AttackState, &[(usize, usize)]) -> Result<usize>,
{
    // A zero budget is a valid "no attack"; at least one bound must be finite
    // for the loop to stop.
    if !(q1_bar >= 0.0 && q2_bar >= 0.0) || !q1_bar.is_finite() && !q2_bar.is_finite() {
        return Err(Error::Domain(format!("attack budgets must be nonnegative, got q1 = {q1_bar}, q2 = {q2_bar}")));
    }
    let n = topology.n();
    let candidates = candidate_edges(topology);
    let mut state = AttackState::empty(n);
    if candidates.is_empty() {
        return Ok(state);
    }
    loop {
        let norms = state.norms();
        if !(norms.one_norm < q1_bar && norms.two_norm < q2_bar) {
            break;
        }
        let eligible: Vec<(usize, usize)> = candidates
            .iter()
            .copied()
            .filter(|&(i, j)| state.a_q[(i, j)] == 0.0)
            .filter(|(i, j)| state.sources.binary_search(i).is_ok() || state.sources.binary_search(j).is_ok())
            .collect();
        if eligible.is_empty() {
            state.saturated = true;
            break;
        }
        let (i, j) = eligible[choose(&state, &eligible)?];
        state.set_weight(i, j, 1.0);
        state.added.push(AddedEdge { i, j, weight: 1.0 });
        state.sources.retain(|&s| s == i || s == j);
        state.last_edge = Some((i, j));

        let after = state.norms();
        if after.one_norm > q1_bar || after.two_norm > q2_bar {
            let w = truncated_weight(&state, (i, j), q1_bar, q2_bar);
            state.set_weight(i, j, w);
            state.added.last_mut().unwrap().weight = w;
            break;
        }
    }
    Ok(state)
}

/// Largest `w <= 1` on the last edge keeping both norms within budget.
/// Both norms are nondecreasing in `w` for a nonnegative matrix.
fn truncated_weight(state: &AttackState, (i, j): (usize, usize), q1_bar: f64, q2_bar: f64) -> f64 {
    let mut probe = state.a_q.clone();
    let mut fits = |w: f64| {
        probe[(i, j)] = w;
        probe[(j, i)] = w;
        let m = matrix_norms(&probe);
        m.one_norm <= q1_bar && m.two_norm <= q2_bar
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Greedy attack against the gains `theta_star`; the Perron vector is
/// recomputed from the compromised matrix before every addition.
pub fn run_hwa(
    params: &FmParams,
    topology: &Topology,
    theta_star: &GainProfile,
    q1_bar: f64,
    q2_bar: f64,
) -> Result<AttackState> {
    params.validate()?;
    theta_star.validate()?;
    if params.n() != topology.n() || theta_star.n() != topology.n() {
        return Err(Error::Dimension("parameters, gains and topology sizes differ".into()));
    }
    grow(topology, q1_bar, q2_bar, |state, eligible| {
        let m = compromised_matrix(params, theta_star, topology, &state.a_q)?;
        let perron = dominant_pair(&m)?;
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        // Candidates are in lexicographic order, so a strict comparison keeps
        // the smallest pair among ties.
        for (k, &e) in eligible.iter().enumerate() {
            let s = edge_score(e, params, theta_star, &perron);
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        Ok(best)
    })
}

/// Baseline attacker with the same budget rules and star structure that
/// picks each edge uniformly at random among the eligible candidates.
pub fn random_attack(topology: &Topology, q1_bar: f64, q2_bar: f64, seed: u64) -> Result<AttackState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    grow(topology, q1_bar, q2_bar, |_, eligible| Ok(rng.random_range(0..eligible.len())))
}

pub fn summarize(
    params: &FmParams,
    gains: &GainProfile,
    topology: &Topology,
    state: &AttackState,
) -> Result<AttackSummary> {
    let norms = state.norms();
    let before = spectral_abscissa(&system_matrix(params, gains, topology.adjacency())?)?;
    let after = spectral_abscissa(&compromised_matrix(params, gains, topology, &state.a_q)?)?;
    Ok(AttackSummary {
        one_norm: norms.one_norm,
        two_norm: norms.two_norm,
        abscissa_before: before,
        abscissa_after: after,
    })
}
