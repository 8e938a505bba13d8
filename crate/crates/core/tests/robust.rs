mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{closed_loop, dense_abscissa, random_gains, rng, weighted_graph};
use robust_fm::fm::{FmParams, GainBounds, GainProfile};
use robust_fm::game::CostModel;
use robust_fm::gp::{Posynomial, SolveOptions};
use robust_fm::robust::{
    assemble_p2, build_c1, build_c2, sample_delta, verify_certificate, Coupling, NormKind, RobustLayout,
    UncertaintyStructure,
};
use robust_fm::topology::matrix_norms;

fn random_params(r: &mut impl Rng, n: usize) -> FmParams {
    let k = (0..n).map(|_| r.random_range(0.2..=1.0)).collect();
    let gm = (0..n).map(|_| r.random_range(0.5..=1.5)).collect();
    FmParams::new(k, gm, vec![1.0; n]).unwrap()
}

fn diag_unc(n: usize, eps1: f64, eps2: f64, sigma: f64) -> UncertaintyStructure {
    UncertaintyStructure::diagonal(n, Coupling::identity(n), Coupling::GainDiagonal, eps1, eps2, sigma, sigma)
}

fn random_point(r: &mut impl Rng, layout: &RobustLayout) -> Vec<f64> {
    (0..layout.n_vars()).map(|_| r.random_range(0.2..3.0)).collect()
}

fn eval_all(cs: &[Posynomial], x: &[f64]) -> Vec<f64> {
    cs.iter().map(|c| c.evaluate(x).unwrap()).collect()
}

/// The certificate inequalities written with dense matrices, for `E = I`,
/// `F = G` and one scaling per node.
struct Oracle {
    t: DMatrix<f64>,
    k: DVector<f64>,
    hgk: DVector<f64>,
    g: DVector<f64>,
    pi: DVector<f64>,
}

impl Oracle {
    fn new(params: &FmParams, a: &DMatrix<f64>, l: &RobustLayout, x: &[f64]) -> Self {
        let n = params.n();
        let g = DVector::from_fn(n, |i, _| x[l.g(i)]);
        let h = DVector::from_fn(n, |i, _| x[l.h(i)]);
        let k = DVector::from_column_slice(&params.k);
        let hgk = DVector::from_fn(n, |i, _| params.gamma_bar[i] * params.k[i] / h[i]);
        let t = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { hgk[i] * a[(i, j)] * g[j] });
        let pi = DVector::from_fn(n, |b, _| x[l.pi(b)]);
        Self { t, k, hgk, g, pi }
    }

    fn c1(&self, l: &RobustLayout, x: &[f64], eps1: f64, sigma: f64) -> Vec<f64> {
        let n = self.k.len();
        let rho = DVector::from_fn(n, |i, _| x[l.rho(i)]);
        let s = eps1.sqrt();
        let lhs = self.t.transpose() * &rho + &rho * sigma + &self.g * s;
        let mut out: Vec<f64> = (0..n).map(|i| lhs[i] / (rho[i] * self.k[i])).collect();
        out.extend((0..n).map(|i| s * self.hgk[i] * rho[i]));
        out
    }

    fn c2(&self, l: &RobustLayout, x: &[f64], eps2: f64, sigma: f64) -> Vec<f64> {
        let n = self.k.len();
        let var = |f: &dyn Fn(usize) -> usize| DVector::from_fn(n, |i, _| x[f(i)]);
        let (u, v, xi, zeta) = (var(&|i| l.u(i)), var(&|i| l.v(i)), var(&|i| l.xi(i)), var(&|i| l.zeta(i)));
        let s = eps2.sqrt();
        let sq = self.pi.map(f64::sqrt);
        let f1 = (0..n).map(|i| s * sq[i] * self.g[i] * xi[i] / v[i]);
        let inner2 = &self.t * &xi + &xi * sigma + self.hgk.component_mul(&u.component_div(&sq)) * s;
        let f2 = (0..n).map(|i| inner2[i] / (xi[i] * self.k[i]));
        let f3 = (0..n).map(|i| s * self.hgk[i] * zeta[i] / (sq[i] * u[i]));
        let inner4 = self.t.transpose() * &zeta + &zeta * sigma + self.g.component_mul(&sq.component_mul(&v)) * s;
        let f4 = (0..n).map(|i| inner4[i] / (zeta[i] * self.k[i]));
        f1.chain(f2.collect::<Vec<_>>()).chain(f3).chain(f4.collect::<Vec<_>>()).collect()
    }
}

#[test]
fn certificate_rows_match_matrix_expressions() {
    let mut r = rng(31);
    for _ in 0..30 {
        let n = r.random_range(2..=7);
        let a = weighted_graph(&mut r, n, 0.4);
        let params = random_params(&mut r, n);
        let (e1, e2, s) = (r.random_range(0.01..2.0), r.random_range(0.01..2.0), r.random_range(0.001..0.2));
        let unc = diag_unc(n, e1, e2, s);
        let l = RobustLayout::new(n, n, false);
        let (c1, c2) = (build_c1(&params, &a, &unc, &l).unwrap(), build_c2(&params, &a, &unc, &l).unwrap());
        assert_eq!(c1.len(), 2 * n);
        assert_eq!(c2.len(), 4 * n);
        let x = random_point(&mut r, &l);
        let o = Oracle::new(&params, &a, &l, &x);
        for (got, want) in eval_all(&c1, &x).iter().zip(o.c1(&l, &x, e1, s)) {
            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        }
        for (got, want) in eval_all(&c2, &x).iter().zip(o.c2(&l, &x, e2, s)) {
            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn zero_bounds_drop_the_attack_rows() {
    let mut r = rng(32);
    let a = weighted_graph(&mut r, 5, 0.4);
    let params = random_params(&mut r, 5);
    let l = RobustLayout::new(5, 5, false);
    let unc = diag_unc(5, 0.0, 0.0, 0.05);
    assert_eq!(build_c1(&params, &a, &unc, &l).unwrap().len(), 5);
    assert_eq!(build_c2(&params, &a, &unc, &l).unwrap().len(), 10);
}

#[test]
fn program_variable_count() {
    let mut r = rng(33);
    let n = 6;
    let a = weighted_graph(&mut r, n, 0.4);
    let params = random_params(&mut r, n);
    let unc = UncertaintyStructure {
        full_blocks: vec![2, 2],
        scalar_blocks: 2,
        ..diag_unc(n, 0.5, 0.5, 0.05)
    };
    let prog = assemble_p2(&params, &a, &unc, &CostModel::default(), &[]).unwrap();
    // g, h, rho, one scaling per block, then u, v, xi, zeta.
    assert_eq!(prog.problem.n_vars(), 2 * n + n + 4 + 4 * n);
    assert_eq!(prog.problem.ineq_constraints().len(), 2 * n + 4 * n + 4 * n);
}

#[test]
fn vanishing_uncertainty_reaches_the_cheapest_corner() {
    let mut r = rng(34);
    let cost = CostModel::default();
    let b = cost.bounds;
    let mut checked = 0;
    while checked < 5 {
        let n = r.random_range(2..=6);
        let a = weighted_graph(&mut r, n, 0.3) * 0.5;
        let params = FmParams::uniform(n, 1.0, 1.0, 1.0).unwrap();
        let corner = GainProfile::uniform(n, b.h_lo, b.g_hi, b).unwrap();
        if dense_abscissa(&closed_loop(&params, &corner, &a)) >= -0.2 {
            continue;
        }
        checked += 1;
        let unc = diag_unc(n, 1e-12, 1e-12, 0.01);
        let sol = assemble_p2(&params, &a, &unc, &cost, &[]).unwrap().solve(&SolveOptions::default(), b).unwrap();
        let g = sol.gains.expect("nominally stable instance is feasible");
        for i in 0..n {
            assert!((g.g[i] - b.g_hi).abs() < 1e-4, "g{i} = {}", g.g[i]);
            assert!((g.h[i] - b.h_lo).abs() < 1e-4, "h{i} = {}", g.h[i]);
        }
        let l0 = cost.l0_constant(n);
        assert!((sol.solution.objective_value - l0).abs() < 1e-6 * l0);
    }
}

#[test]
fn diagonal_samples_stay_in_the_unit_box() {
    let unc = diag_unc(5, 1.0, 1.0, 0.1);
    for seed in 0..200 {
        let d = sample_delta(&unc, NormKind::One, 1.0, seed).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    assert!((0.0..=1.0).contains(&d[(i, j)]));
                } else {
                    assert_eq!(d[(i, j)], 0.0);
                }
            }
        }
    }
}

#[test]
fn sample_norms_fill_the_ball() {
    let unc = UncertaintyStructure {
        full_blocks: vec![3, 2],
        scalar_blocks: 3,
        ..diag_unc(8, 1.0, 1.0, 0.1)
    };
    let ranges = unc.block_ranges();
    for (kind, bound) in [(NormKind::One, 1.7), (NormKind::Two, 0.6)] {
        let mut largest = 0.0f64;
        for seed in 0..10_000 {
            let d = sample_delta(&unc, kind, bound, seed).unwrap();
            assert!(d.iter().all(|&v| v >= 0.0));
            for i in 0..8 {
                for j in 0..8 {
                    let same = ranges.iter().any(|r| r.contains(&i) && r.contains(&j));
                    assert!(same || d[(i, j)] == 0.0);
                }
            }
            let norms = matrix_norms(&d);
            let v = if kind == NormKind::One { norms.one_norm } else { norms.two_norm };
            assert!(v <= bound + 1e-12);
            largest = largest.max(v);
        }
        assert!(largest >= 0.99 * bound);
    }
}

#[test]
fn sampler_rejects_bad_bounds() {
    let unc = diag_unc(3, 1.0, 1.0, 0.1);
    assert!(sample_delta(&unc, NormKind::One, 0.0, 1).is_err());
    assert!(sample_delta(&unc, NormKind::Two, f64::NAN, 1).is_err());
}

#[test]
fn unperturbed_sample_reports_the_nominal_abscissa() {
    let mut r = rng(35);
    let a = weighted_graph(&mut r, 5, 0.4);
    let params = random_params(&mut r, 5);
    let gains = random_gains(&mut r, 5, GainBounds::default());
    let nominal = dense_abscissa(&closed_loop(&params, &gains, &a));
    let rep = verify_certificate(&params, &gains, &a, &diag_unc(5, 0.0, 0.0, 0.1), 1, 9).unwrap();
    assert!((rep.worst_abscissa - nominal).abs() < 1e-9);
    let rep = verify_certificate(&params, &gains, &a, &diag_unc(5, 0.5, 0.5, 0.1), 200, 9).unwrap();
    assert!(rep.worst_abscissa >= nominal - 1e-9);
}

/// Smallest `eps` at which `Delta = eps I` makes the closed loop marginal,
/// found by bisection on the dense spectrum.
fn critical_eps(params: &FmParams, gains: &GainProfile, a: &DMatrix<f64>) -> f64 {
    let n = params.n();
    let m = closed_loop(params, gains, a);
    let bump = DMatrix::from_fn(n, n, |i, j| {
        if i == j { params.k[i] * params.gamma_bar[i] * gains.g[i] / gains.h[i] } else { 0.0 }
    });
    let abscissa = |e: f64| dense_abscissa(&(&m + &bump * e));
    let (mut lo, mut hi) = (0.0, 1.0);
    while abscissa(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if abscissa(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

#[test]
fn certified_gains_fail_past_the_feasible_bound() {
    let mut r = rng(36);
    let cost = CostModel::default();
    let (mut trials, mut detected) = (0, 0);
    while trials < 20 {
        let n = r.random_range(2..=6);
        let a = weighted_graph(&mut r, n, 0.3);
        let params = FmParams::uniform(n, r.random_range(0.5..=1.0), 1.0, 1.0).unwrap();
        let unc = diag_unc(n, 0.3, 0.3, 0.02);
        let sol = assemble_p2(&params, &a, &unc, &cost, &[]).unwrap().solve(&SolveOptions::default(), cost.bounds).unwrap();
        let Some(gains) = sol.gains else { continue };
        trials += 1;
        let eps = 2.0 * critical_eps(&params, &gains, &a);
        let rep = verify_certificate(&params, &gains, &a, &diag_unc(n, eps, eps, 0.02), 1000, r.random()).unwrap();
        if rep.violations > 0 {
            detected += 1;
        }
    }
    assert!(detected >= 18, "violations found on {detected} of 20 trials");
}

fn permuted(a: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b[(perm[i], perm[j])] = a[(i, j)];
        }
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_follow_node_relabeling(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let a = weighted_graph(&mut r, n, 0.4);
        let params = random_params(&mut r, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut moved = params.clone();
        for i in 0..n {
            moved.k[perm[i]] = params.k[i];
            moved.gamma_bar[perm[i]] = params.gamma_bar[i];
            moved.nu[perm[i]] = params.nu[i];
        }
        let b = permuted(&a, &perm);
        let unc = diag_unc(n, 0.4, 0.7, 0.05);
        let l = RobustLayout::new(n, n, false);
        let x = random_point(&mut r, &l);
        // Node i's variables move to node perm[i].
        let mut y = x.clone();
        for i in 0..n {
            for f in [RobustLayout::g, RobustLayout::h, RobustLayout::rho, RobustLayout::pi, RobustLayout::u, RobustLayout::v, RobustLayout::xi, RobustLayout::zeta] {
                y[f(&l, perm[i])] = x[f(&l, i)];
            }
        }
        let (c, d) = (build_c1(&params, &a, &unc, &l).unwrap(), build_c1(&moved, &b, &unc, &l).unwrap());
        let (cx, dy) = (eval_all(&c, &x), eval_all(&d, &y));
        let (c2, d2) = (build_c2(&params, &a, &unc, &l).unwrap(), build_c2(&moved, &b, &unc, &l).unwrap());
        let (c2x, d2y) = (eval_all(&c2, &x), eval_all(&d2, &y));
        for i in 0..n {
            for fam in 0..2 {
                prop_assert!((cx[fam * n + i] - dy[fam * n + perm[i]]).abs() <= 1e-12 * cx[fam * n + i].max(1.0));
            }
            for fam in 0..4 {
                prop_assert!((c2x[fam * n + i] - d2y[fam * n + perm[i]]).abs() <= 1e-12 * c2x[fam * n + i].max(1.0));
            }
        }
    }

    #[test]
    fn every_row_has_positive_coefficients(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let a = weighted_graph(&mut r, n, 0.4);
        let params = random_params(&mut r, n);
        let l = RobustLayout::new(n, n, false);
        let unc = diag_unc(n, 0.4, 0.7, 0.05);
        for c in build_c1(&params, &a, &unc, &l).unwrap().iter().chain(&build_c2(&params, &a, &unc, &l).unwrap()) {
            prop_assert!(c.terms().iter().all(|t| t.coeff() > 0.0 && t.coeff().is_finite()));
        }
    }
}
