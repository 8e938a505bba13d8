//! Instance generators and independent oracles shared by the integration
//! tests. Oracles deliberately avoid the library's own numerics.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_fm::fm::{FmParams, GainBounds, GainProfile};
use robust_fm::gp::{GpProblem, Monomial, Posynomial};
use robust_fm::topology::{generate, GeneratorSpec, Topology};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest real part of the spectrum via the dense complex eigensolver.
pub fn dense_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `K(-I + Gamma H^-1 A G)` written out entry by entry.
pub fn closed_loop(params: &FmParams, gains: &GainProfile, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = -params.k[i];
        for j in 0..n {
            if i != j {
                m[(i, j)] += params.k[i] * params.gamma_bar[i] / gains.h[i] * a[(i, j)] * gains.g[j];
            }
        }
    }
    m
}

pub fn random_gains(rng: &mut impl Rng, n: usize, b: GainBounds) -> GainProfile {
    let g = (0..n).map(|_| rng.random_range(b.g_lo..=b.g_hi)).collect();
    let h = (0..n).map(|_| rng.random_range(b.h_lo..=b.h_hi)).collect();
    GainProfile::new(h, g, b).unwrap()
}

/// Two-subnetwork topology with `n_total` nodes split as evenly as possible;
/// the first subnetwork is the sparser one.
pub fn two_net(rng: &mut impl Rng, n_total: usize) -> Topology {
    let n1 = n_total / 2;
    let spec = GeneratorSpec {
        n1,
        n2: n_total - n1,
        p_net1: 0.35,
        p_net2: 0.6,
        intra_edges: 1 + rng.random_range(0..2usize).min(n1 * (n_total - n1) - 1),
    };
    generate(&spec, rng.random()).unwrap()
}

/// Connected random graph with weights in `[0.2, 1]`: a random spanning tree
/// plus extra edges.
pub fn weighted_graph(rng: &mut impl Rng, n: usize, extra_p: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for j in 1..n {
        let i = rng.random_range(0..j);
        let w = rng.random_range(0.2..=1.0);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if a[(i, j)] == 0.0 && rng.random::<f64>() < extra_p {
                let w = rng.random_range(0.2..=1.0);
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    a
}

fn random_monomial(rng: &mut impl Rng, n: usize, coeff: f64, spread: f64) -> Monomial {
    let mut exps = Vec::new();
    for k in 0..n {
        if rng.random::<f64>() < 0.7 {
            exps.push((k, rng.random_range(-spread..=spread)));
        }
    }
    if exps.is_empty() {
        exps.push((rng.random_range(0..n), rng.random_range(-spread..=spread)));
    }
    Monomial::new(coeff, &exps)
}

/// Random GP with a coercive objective (every variable appears with
/// exponent `+1` and `-1`) and constraints strictly satisfied at `eta = 1`,
/// so it is feasible with an attained optimum.
pub fn random_gp(rng: &mut impl Rng, n: usize, m: usize) -> GpProblem {
    let mut obj = Vec::new();
    for k in 0..n {
        obj.push(Monomial::new(rng.random_range(0.5..=2.0), &[(k, 1.0)]));
        obj.push(Monomial::new(rng.random_range(0.5..=2.0), &[(k, -1.0)]));
    }
    for _ in 0..rng.random_range(0..=2) {
        let c = rng.random_range(0.1..=1.0);
        obj.push(random_monomial(rng, n, c, 1.0));
    }
    let mut cons = Vec::new();
    for _ in 0..m {
        let terms: Vec<Monomial> = (0..rng.random_range(1..=3))
            .map(|_| {
                let c = rng.random_range(0.1..=1.0);
                random_monomial(rng, n, c, 2.0)
            })
            .collect();
        let at_one: f64 = terms.iter().map(|t| t.coeff()).sum();
        let target = rng.random_range(0.5..=0.95);
        cons.push(Posynomial::new(terms.into_iter().map(|t| t.scale(target / at_one)).collect()).unwrap());
    }
    let names = (0..n).map(|k| format!("x{k}")).collect();
    GpProblem::new(names, Posynomial::new(obj).unwrap(), cons, vec![]).unwrap()
}

fn log_posy(p: &Posynomial, x: &[f64]) -> f64 {
    let z: Vec<f64> = p
        .terms()
        .iter()
        .map(|t| t.exponents().iter().fold(t.coeff().ln(), |acc, &(k, a)| acc + a * x[k]))
        .collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln()
}

/// Brute-force minimum over a log-domain grid refined around the incumbent.
/// Returns the objective value in the original domain.
pub fn grid_minimum(p: &GpProblem) -> f64 {
    let n = p.n_vars();
    let feasible = |x: &[f64]| p.ineq_constraints().iter().all(|c| log_posy(c, x) <= 0.0);
    let value = |x: &[f64]| log_posy(p.objective(), x);

    let mut best_x = vec![0.0; n];
    let mut best = value(&best_x);
    let (mut center, mut half, pts) = (vec![0.0; n], 4.0, [0, 81, 41, 21, 13][n]);
    let mut sub = pts;
    for _ in 0..80 {
        let step = 2.0 * half / (sub - 1) as f64;
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            for k in 0..n {
                x[k] = center[k] - half + step * idx[k] as f64;
            }
            if feasible(&x) {
                let v = value(&x);
                if v < best {
                    best = v;
                    best_x.copy_from_slice(&x);
                }
            }
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < sub {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        center.copy_from_slice(&best_x);
        half = 2.0 * step;
        sub = [0, 21, 15, 11, 9][n];
        if half < 1e-9 {
            break;
        }
    }
    best.exp()
}
