//! Two-subnetwork communication graphs.
//!
//! Nodes are 0-based here; serialized documents ([`TopologyDoc`]) use
//! 1-based indices and the conversion happens at that boundary only.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_total: usize,
    split_index: usize,
    /// Canonical edge list: `i < j`, sorted, no duplicates.
    edges: Vec<(usize, usize, f64)>,
    adjacency: DMatrix<f64>,
}

impl Topology {
    /// `split_index` is the number of nodes in network 1, which are the nodes
    /// `0..split_index`; the rest form network 2.
    pub fn new(n_total: usize, split_index: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n_total < 2 {
            return Err(Error::Topology(format!("need at least two nodes, got {n_total}")));
        }
        if split_index < 1 || split_index >= n_total {
            return Err(Error::Topology(format!(
                "split index {split_index} must lie in [1, {})",
                n_total
            )));
        }
        let mut adjacency = DMatrix::zeros(n_total, n_total);
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b, w) in edges {
            if a >= n_total || b >= n_total {
                return Err(Error::Topology(format!("edge ({a}, {b}) out of range for {n_total} nodes")));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop at node {a}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Topology(format!("edge ({a}, {b}) has non-positive weight {w}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if adjacency[(i, j)] != 0.0 {
                return Err(Error::Topology(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
            canon.push((i, j, w));
        }
        canon.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        Ok(Self {
            n_total,
            split_index,
            edges: canon,
            adjacency,
        })
    }

    pub fn n(&self) -> usize {
        self.n_total
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }

    /// Network (1 or 2) that node `i` belongs to.
    pub fn network_of(&self, i: usize) -> u8 {
        if i < self.split_index {
            1
        } else {
            2
        }
    }

    pub fn network_nodes(&self, network: u8) -> std::ops::Range<usize> {
        match network {
            1 => 0..self.split_index,
            _ => self.split_index..self.n_total,
        }
    }

    /// A node with at least one edge into the other subnetwork.
    pub fn is_border_node(&self, i: usize) -> bool {
        let me = self.network_of(i);
        (0..self.n_total).any(|j| self.has_edge(i, j) && self.network_of(j) != me)
    }

    pub fn is_connected(&self) -> bool {
        connected(self.n_total, |i, j| self.has_edge(i, j))
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            n_total: self.n_total,
            split_index: self.split_index,
            edges: self.edges.iter().map(|&(i, j, w)| (i + 1, j + 1, w)).collect(),
        }
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        let mut edges = Vec::with_capacity(doc.edges.len());
        for &(i, j, w) in &doc.edges {
            if i == 0 || j == 0 {
                return Err(Error::Topology(format!("node indices are 1-based, got edge ({i}, {j})")));
            }
            edges.push((i - 1, j - 1, w));
        }
        Self::new(doc.n_total, doc.split_index, &edges)
    }
}

/// Serialized form of a [`Topology`] with 1-based node indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDoc {
    pub n_total: usize,
    pub split_index: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

fn connected(n: usize, adj: impl Fn(usize, usize) -> bool) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..n {
            if !seen[j] && adj(i, j) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Unordered node pairs `(i, j)`, `i < j`, that are not edges.
pub fn candidate_edges(topology: &Topology) -> Vec<(usize, usize)> {
    let n = topology.n();
    let mut out = Vec::with_capacity(n * (n - 1) / 2 - topology.edges().len());
    for i in 0..n {
        for j in (i + 1)..n {
            if !topology.has_edge(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    /// Largest absolute column sum.
    pub one_norm: f64,
    /// Largest singular value.
    pub two_norm: f64,
    /// Sum of absolute entries.
    pub l1_norm: f64,
}

pub fn matrix_norms(m: &DMatrix<f64>) -> MatrixNorms {
    let one_norm = m
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let l1_norm = m.iter().map(|v| v.abs()).sum();
    let two_norm = if m.is_empty() || l1_norm == 0.0 {
        0.0
    } else {
        m.singular_values().max()
    };
    MatrixNorms {
        one_norm,
        two_norm,
        l1_norm,
    }
}

const PAGERANK_TOL: f64 = 1e-13;
const PAGERANK_MAX_ITER: usize = 100_000;

/// PageRank over the weighted graph: the walk leaves node `j` along edge
/// `(i, j)` with probability `a_ij / d_j`; isolated nodes teleport uniformly.
pub fn pagerank(topology: &Topology, damping: f64) -> Result<Vec<f64>> {
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Domain(format!("damping must lie in (0, 1), got {damping}")));
    }
    let n = topology.n();
    let a = topology.adjacency();
    let degree: Vec<f64> = a.column_iter().map(|c| c.sum()).collect();
    let nf = n as f64;
    let mut r = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..PAGERANK_MAX_ITER {
        let dangling: f64 = (0..n).filter(|&j| degree[j] == 0.0).map(|j| r[j]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                if degree[j] > 0.0 {
                    s += a[(i, j)] / degree[j] * r[j];
                }
            }
            next[i] = base + damping * s;
        }
        let total: f64 = next.iter().sum();
        let mut change = 0.0;
        for i in 0..n {
            let v = next[i] / total;
            change += (v - r[i]).abs();
            r[i] = v;
        }
        if change < PAGERANK_TOL {
            return Ok(r);
        }
    }
    Err(Error::Numerical("PageRank iteration did not converge".into()))
}

/// Random two-subnetwork topology: a connected Erdős–Rényi graph inside each
/// subnetwork plus `intra_edges` unit-weight edges joining the two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n1: usize,
    pub n2: usize,
    pub p_net1: f64,
    pub p_net2: f64,
    pub intra_edges: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            n1: 11,
            n2: 11,
            p_net1: 0.25,
            p_net2: 0.45,
            intra_edges: 3,
        }
    }
}

const MAX_REGENERATIONS: usize = 100_000;

pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Topology> {
    if spec.n1 == 0 || spec.n2 == 0 {
        return Err(Error::Topology("both subnetworks need at least one node".into()));
    }
    for p in [spec.p_net1, spec.p_net2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("edge probability {p} outside [0, 1]")));
        }
    }
    if spec.intra_edges == 0 || spec.intra_edges > spec.n1 * spec.n2 {
        return Err(Error::Topology(format!(
            "intra-edge count must lie in [1, {}]",
            spec.n1 * spec.n2
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for (offset, size, p) in [(0, spec.n1, spec.p_net1), (spec.n1, spec.n2, spec.p_net2)] {
        edges.extend(connected_er(&mut rng, size, p)?.into_iter().map(|(i, j)| (i + offset, j + offset, 1.0)));
    }
    let mut cross = BTreeSet::new();
    while cross.len() < spec.intra_edges {
        let i = rng.random_range(0..spec.n1);
        let j = spec.n1 + rng.random_range(0..spec.n2);
        cross.insert((i, j));
    }
    edges.extend(cross.into_iter().map(|(i, j)| (i, j, 1.0)));
    Topology::new(spec.n1 + spec.n2, spec.n1, &edges)
}

fn connected_er(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Result<Vec<(usize, usize)>> {
    for _ in 0..MAX_REGENERATIONS {
        let mut e = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    e.push((i, j));
                }
            }
        }
        let set: BTreeSet<_> = e.iter().copied().collect();
        if connected(n, |i, j| set.contains(&(i.min(j), i.max(j)))) {
            return Ok(e);
        }
    }
    Err(Error::Topology(format!(
        "could not draw a connected graph on {n} nodes with edge probability {p}"
    )))
}
